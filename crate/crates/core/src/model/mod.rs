//! Rotation-box models and the point/translation baselines.

pub mod checkpoint;
mod forward;
pub mod geometry;
mod params;

use thiserror::Error;

pub use forward::{BoxVar, EmbeddedQuery, EntityRows, Forward, QueryVar};
pub use params::{BoxTable, Layout, ModelConfig, ModelKind, ModelParams, SetEncoder};

use crate::ids::{EntityId, RelationId};
use crate::numeric::{ComplexVec, NumericError, RealMat, Tape, Var};
use crate::regex::{RegexExpr, Variant};
use geometry::{QueryBox, RealBox, RotationBox};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("operation needs {expected}, model is {found}")]
    KindMismatch { expected: &'static str, found: ModelKind },
    #[error("entity {0} is outside the model's entity table")]
    UnknownEntity(EntityId),
    #[error("relation {0} is outside the model's relation table")]
    UnknownRelation(RelationId),
    #[error("set encoding needs at least two branches")]
    SingleBranchSet,
    #[error("{branches} branches exceed the cap of {max}")]
    TooManyBranches { branches: usize, max: usize },
    #[error("projection cannot act on a list of aggregation branches; project each branch instead")]
    ProjectionOnBranches,
    #[error("expression is not expressible under variant {variant}")]
    NotExpressible { variant: Variant },
    #[error("checkpoint tensor missing or misshapen: {0}")]
    MissingTensor(String),
    #[error(transparent)]
    Checkpoint(#[from] checkpoint::CheckpointError),
}

/// Untaped view of a query box.
#[derive(Debug, Clone, PartialEq)]
pub enum QueryShape {
    Complex(QueryBox),
    Real(RealBox),
}

fn read_row(tape: &Tape, v: Option<Var>, k: usize) -> Vec<f64> {
    match v {
        Some(v) => tape.value(v).data().to_vec(),
        None => vec![0.0; k],
    }
}

fn query_shape(tape: &Tape, q: QueryVar, k: usize) -> Result<QueryShape, ModelError> {
    let re = tape.value(q.re).data().to_vec();
    Ok(match q.im {
        Some(im) => QueryShape::Complex(QueryBox {
            center: ComplexVec::new(re, tape.value(im).data().to_vec())?,
            off_re: read_row(tape, q.off_re, k),
            off_im: read_row(tape, q.off_im, k),
        }),
        None => QueryShape::Real(RealBox { center: re, offset: read_row(tape, q.off_re, k) }),
    })
}

fn box_shape(tape: &Tape, b: BoxVar, k: usize) -> Result<RotationBox, ModelError> {
    Ok(RotationBox::new(tape.value(b.center).data().to_vec(), read_row(tape, b.off_re, k), read_row(tape, b.off_im, k))?)
}

fn box_var(fwd: &mut Forward<'_>, b: &RotationBox) -> BoxVar {
    let kind = fwd.params().kind();
    let t = &mut fwd.tape;
    let center = t.constant(RealMat::row_vector(b.theta.clone()));
    let (off_re, off_im) = match kind {
        ModelKind::RotateBox => (
            Some(t.constant(RealMat::row_vector(b.off_re.clone()))),
            Some(t.constant(RealMat::row_vector(b.off_im.clone()))),
        ),
        _ => (None, None),
    };
    BoxVar { center, off_re, off_im }
}

fn require_complex(params: &ModelParams) -> Result<(), ModelError> {
    if params.kind().is_complex() {
        Ok(())
    } else {
        Err(ModelError::KindMismatch { expected: "a complex model", found: params.kind() })
    }
}

/// Query box for `(head, rel, ?)`.
pub fn single_hop(params: &ModelParams, head: EntityId, rel: RelationId) -> Result<QueryShape, ModelError> {
    let mut fwd = Forward::new(params);
    let b = fwd.relation_box(rel)?;
    let q = fwd.anchor(head, b)?;
    query_shape(&fwd.tape, q, params.config.dim)
}

/// Embeds `(head, expr, ?)` and reads the boxes back off the tape.
pub fn embed_regex(
    params: &ModelParams,
    variant: Variant,
    head: EntityId,
    expr: &RegexExpr,
) -> Result<EmbeddedQuery<QueryShape>, ModelError> {
    let mut fwd = Forward::new(params);
    let k = params.config.dim;
    Ok(match fwd.embed_regex(variant, head, expr)? {
        EmbeddedQuery::Single(q) => EmbeddedQuery::Single(query_shape(&fwd.tape, q, k)?),
        EmbeddedQuery::Branches(b) => EmbeddedQuery::Branches(
            b.into_iter().map(|q| query_shape(&fwd.tape, q, k)).collect::<Result<_, _>>()?,
        ),
        EmbeddedQuery::Unanswerable => EmbeddedQuery::Unanswerable,
    })
}

/// Applies the learned Kleene-plus operator to a relation-level box.
pub fn kleene_projection(params: &ModelParams, b: &RotationBox) -> Result<RotationBox, ModelError> {
    require_complex(params)?;
    let mut fwd = Forward::new(params);
    let v = box_var(&mut fwd, b);
    let out = fwd.kleene_projection(v)?;
    box_shape(&fwd.tape, out, params.config.dim)
}

/// Set-encodes at least two relation-level boxes into one.
pub fn disj_deepsets(params: &ModelParams, branches: &[RotationBox]) -> Result<RotationBox, ModelError> {
    require_complex(params)?;
    let mut fwd = Forward::new(params);
    let vars: Vec<BoxVar> = branches.iter().map(|b| box_var(&mut fwd, b)).collect();
    let out = fwd.disj_deepsets(&vars)?;
    box_shape(&fwd.tape, out, params.config.dim)
}

/// L1 gap between projecting once and projecting twice; a diagnostic of
/// how close the learned operator is to idempotent.
pub fn projection_residual(params: &ModelParams, b: &RotationBox) -> Result<f64, ModelError> {
    let once = kleene_projection(params, b)?;
    let twice = kleene_projection(params, &once)?;
    let l1 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>();
    Ok(l1(&once.theta, &twice.theta) + l1(&once.off_re, &twice.off_re) + l1(&once.off_im, &twice.off_im))
}

/// Distance from every entity to the query; `None` when the variant cannot
/// express it.
pub fn score_all(
    params: &ModelParams,
    variant: Variant,
    head: EntityId,
    expr: &RegexExpr,
) -> Result<Option<Vec<f64>>, ModelError> {
    let mut fwd = Forward::new(params);
    let q = fwd.embed_regex(variant, head, expr)?;
    if !q.is_answerable() {
        return Ok(None);
    }
    let rows = fwd.entity_rows(None)?;
    let d = fwd.score(&q, rows)?.expect("answerable query has a box");
    Ok(Some(fwd.tape.value(d).data().to_vec()))
}
