//! Trainable state and its initialization.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::ids::{EntityId, RelationId};
use crate::numeric::{ComplexVec, ParamId, ParamStore, RealMat};

/// Which geometry a model uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    /// Complex points, rotation boxes.
    RotateBox,
    /// Complex points, rotations only (zero-width boxes).
    Rotate,
    /// Real points, translated boxes.
    Query2Box,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::RotateBox, ModelKind::Rotate, ModelKind::Query2Box];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::RotateBox => "rotate-box",
            ModelKind::Rotate => "rotate",
            ModelKind::Query2Box => "query2box",
        }
    }

    pub fn is_complex(self) -> bool {
        !matches!(self, ModelKind::Query2Box)
    }

    pub fn has_offsets(self) -> bool {
        !matches!(self, ModelKind::Rotate)
    }

    fn code(self) -> u8 {
        match self {
            ModelKind::RotateBox => 0,
            ModelKind::Rotate => 1,
            ModelKind::Query2Box => 2,
        }
    }

    pub(crate) fn to_code(self) -> u8 {
        self.code()
    }

    pub(crate) fn from_code(c: u8) -> Option<Self> {
        ModelKind::ALL.into_iter().find(|k| k.code() == c)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown model {s:?} (expected rotate-box, rotate or query2box)"))
    }
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Complex dimension for complex models, real dimension for Query2Box.
    pub dim: usize,
    /// Margin in the loss; also sets the initialization scale.
    pub gamma: f64,
    /// Weight of the inside-box distance.
    pub alpha: f64,
    /// Initial raw offset value.
    pub offset_init: f64,
    /// Cap on aggregation branches.
    pub max_branches: usize,
}

impl ModelConfig {
    pub fn new(kind: ModelKind, dim: usize, gamma: f64, alpha: f64) -> Self {
        Self { kind, dim, gamma, alpha, offset_init: 0.1, max_branches: crate::regex::DEFAULT_MAX_BRANCHES }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if self.dim == 0 {
            return bad("dimension must be positive".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if !self.gamma.is_finite() || self.gamma <= 0.0 {
            return bad(format!("gamma must be positive, got {}", self.gamma));
        }
        if !self.offset_init.is_finite() || self.offset_init < 0.0 {
            return bad(format!("offset_init must be non-negative, got {}", self.offset_init));
        }
        if self.max_branches == 0 {
            return bad("max_branches must be positive".into());
        }
        Ok(())
    }

    /// Half-width of the uniform entity initialization.
    pub fn embedding_range(&self) -> f64 {
        (self.gamma + 2.0) / self.dim as f64
    }
}

/// Ids of one relation-box table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoxTable {
    /// Angles (complex kinds) or translations (Query2Box).
    pub center: ParamId,
    pub off_re: Option<ParamId>,
    /// Imaginary offsets; complex boxes only.
    pub off_im: Option<ParamId>,
}

/// Two affine layers with a rectifier in between, then an output matrix
/// applied after pooling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SetEncoder {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub out: ParamId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub entity_re: ParamId,
    /// Imaginary entity parts; complex kinds only.
    pub entity_im: Option<ParamId>,
    pub relation: BoxTable,
    pub plus: BoxTable,
    pub proj_center: ParamId,
    /// Real and imaginary blocks of the offset projection (rotate-box only;
    /// Query2Box reuses `proj_center`).
    pub proj_off: Option<(ParamId, ParamId)>,
    pub set_center: SetEncoder,
    pub set_offset: Option<SetEncoder>,
}

/// Every trainable tensor of a model plus its configuration.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub layout: Layout,
    num_entities: usize,
    num_relations: usize,
}

/// Bias shift that keeps the hidden rectifier inactive at initialization,
/// so the set encoder starts as the identity map.
const CENTER_SHIFT: f64 = 8.0 * PI;
const OFFSET_SHIFT: f64 = 1.0;

fn uniform<R: Rng>(rng: &mut R, rows: usize, cols: usize, lo: f64, hi: f64) -> RealMat {
    let data = (0..rows * cols).map(|_| rng.gen_range(lo..hi)).collect();
    RealMat::new(rows, cols, data).expect("length matches")
}

fn set_encoder(store: &mut ParamStore, prefix: &str, k: usize, shift: f64) -> SetEncoder {
    SetEncoder {
        w1: store.add(&format!("{prefix}.w1"), RealMat::identity(k)),
        b1: store.add(&format!("{prefix}.b1"), RealMat::filled(1, k, shift)),
        w2: store.add(&format!("{prefix}.w2"), RealMat::identity(k)),
        b2: store.add(&format!("{prefix}.b2"), RealMat::filled(1, k, -shift)),
        out: store.add(&format!("{prefix}.out"), RealMat::identity(k)),
    }
}

impl ModelParams {
    /// Random initialization. Entities and Query2Box translations are
    /// uniform in `+-(gamma + 2) / dim`; angles uniform in `[-pi, pi)`;
    /// offsets start at `offset_init`; projections at the identity; the
    /// `r+` table as a copy of the relation table.
    pub fn init<R: Rng>(
        config: ModelConfig,
        num_entities: usize,
        num_relations: usize,
        rng: &mut R,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        let k = config.dim;
        let range = config.embedding_range();
        let mut store = ParamStore::new();
        let complex = config.kind.is_complex();
        let entity_re = store.add(if complex { "entity.re" } else { "entity" }, uniform(rng, num_entities, k, -range, range));
        let entity_im = complex.then(|| store.add("entity.im", uniform(rng, num_entities, k, -range, range)));

        let center = if complex {
            uniform(rng, num_relations, k, -PI, PI)
        } else {
            uniform(rng, num_relations, k, -range, range)
        };
        let offsets = RealMat::filled(num_relations, k, config.offset_init);
        let table = |store: &mut ParamStore, prefix: &str| {
            let c = store.add(&format!("{prefix}.center"), center.clone());
            let (re, im) = match config.kind {
                ModelKind::RotateBox => (
                    Some(store.add(&format!("{prefix}.off_re"), offsets.clone())),
                    Some(store.add(&format!("{prefix}.off_im"), offsets.clone())),
                ),
                ModelKind::Rotate => (None, None),
                ModelKind::Query2Box => (Some(store.add(&format!("{prefix}.offset"), offsets.clone())), None),
            };
            BoxTable { center: c, off_re: re, off_im: im }
        };
        let relation = table(&mut store, "relation");
        let plus = table(&mut store, "plus");

        let proj_center = store.add("proj.center", RealMat::identity(k));
        let proj_off = (config.kind == ModelKind::RotateBox)
            .then(|| (store.add("proj.off_re", RealMat::identity(k)), store.add("proj.off_im", RealMat::zeros(k, k))));
        let set_center = set_encoder(&mut store, "deepsets.center", k, CENTER_SHIFT);
        let set_offset = config.kind.has_offsets().then(|| set_encoder(&mut store, "deepsets.offset", k, OFFSET_SHIFT));

        Ok(Self {
            config,
            store,
            layout: Layout { entity_re, entity_im, relation, plus, proj_center, proj_off, set_center, set_offset },
            num_entities,
            num_relations,
        })
    }

    /// Rebuilds from a store whose tensor names follow [`ModelParams::init`].
    pub(crate) fn from_store(
        config: ModelConfig,
        store: ParamStore,
        num_entities: usize,
        num_relations: usize,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let template = Self::init(config, num_entities, num_relations, &mut rng)?;
        for id in template.store.ids() {
            let name = template.store.name(id);
            let found = store.find(name).ok_or_else(|| ModelError::MissingTensor(name.to_string()))?;
            if found != id || store.get(found).shape() != template.store.get(id).shape() {
                return Err(ModelError::MissingTensor(format!(
                    "{name} (expected shape {:?})",
                    template.store.get(id).shape()
                )));
            }
        }
        if store.len() != template.store.len() {
            return Err(ModelError::InvalidConfig(format!(
                "expected {} tensors, found {}",
                template.store.len(),
                store.len()
            )));
        }
        Ok(Self { store, ..template })
    }

    pub fn kind(&self) -> ModelKind {
        self.config.kind
    }

    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    pub fn num_relations(&self) -> usize {
        self.num_relations
    }

    pub fn check_entity(&self, e: EntityId) -> Result<(), ModelError> {
        if e.index() < self.num_entities {
            Ok(())
        } else {
            Err(ModelError::UnknownEntity(e))
        }
    }

    pub fn check_relation(&self, r: RelationId) -> Result<(), ModelError> {
        if r.index() < self.num_relations {
            Ok(())
        } else {
            Err(ModelError::UnknownRelation(r))
        }
    }

    /// Overwrites the `r+` table with the relation table.
    pub fn copy_relations_to_plus(&mut self) {
        let (rel, plus) = (self.layout.relation, self.layout.plus);
        let pairs = [(Some(rel.center), Some(plus.center)), (rel.off_re, plus.off_re), (rel.off_im, plus.off_im)];
        for (src, dst) in pairs {
            if let (Some(src), Some(dst)) = (src, dst) {
                let value = self.store.get(src).clone();
                *self.store.get_mut(dst) = value;
            }
        }
    }

    /// Entity point of a complex model.
    pub fn entity_point(&self, e: EntityId) -> Result<ComplexVec, ModelError> {
        self.check_entity(e)?;
        let im = self.layout.entity_im.ok_or(ModelError::KindMismatch {
            expected: "a complex model",
            found: self.kind(),
        })?;
        Ok(ComplexVec::new(
            self.store.get(self.layout.entity_re).row(e.index()).to_vec(),
            self.store.get(im).row(e.index()).to_vec(),
        )?)
    }

    /// Entity point of a real model.
    pub fn entity_real(&self, e: EntityId) -> Result<Vec<f64>, ModelError> {
        self.check_entity(e)?;
        if self.kind().is_complex() {
            return Err(ModelError::KindMismatch { expected: "query2box", found: self.kind() });
        }
        Ok(self.store.get(self.layout.entity_re).row(e.index()).to_vec())
    }

    fn table_box(&self, table: BoxTable, r: RelationId) -> Result<super::geometry::RotationBox, ModelError> {
        self.check_relation(r)?;
        if !self.kind().is_complex() {
            return Err(ModelError::KindMismatch { expected: "a complex model", found: self.kind() });
        }
        let row = |id: Option<ParamId>| match id {
            Some(id) => self.store.get(id).row(r.index()).to_vec(),
            None => vec![0.0; self.config.dim],
        };
        Ok(super::geometry::RotationBox::new(row(Some(table.center)), row(table.off_re), row(table.off_im))?)
    }

    /// Relation box of a complex model (zero offsets for rotate).
    pub fn relation_box(&self, r: RelationId) -> Result<super::geometry::RotationBox, ModelError> {
        self.table_box(self.layout.relation, r)
    }

    /// Free-parameter `r+` box of a complex model.
    pub fn kleene_free(&self, r: RelationId) -> Result<super::geometry::RotationBox, ModelError> {
        self.table_box(self.layout.plus, r)
    }
}
