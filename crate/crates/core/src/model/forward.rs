//! Regex embedding and scoring on the gradient tape.

use super::params::{BoxTable, ModelKind, ModelParams, SetEncoder};
use super::ModelError;
use crate::ids::{EntityId, RelationId};
use crate::numeric::{ParamId, ParamStore, Tape, Var};
use crate::regex::{dnf_decompose, is_answerable, Decomposition, Regex, RegexExpr, Variant};

/// Relation-level box on the tape. `center` holds angles for complex
/// kinds and a translation for Query2Box; offsets are already
/// non-negative.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoxVar {
    pub center: Var,
    pub off_re: Option<Var>,
    pub off_im: Option<Var>,
}

/// Query box anchored at a head entity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueryVar {
    pub re: Var,
    pub im: Option<Var>,
    pub off_re: Option<Var>,
    pub off_im: Option<Var>,
}

/// Candidate entity points, one row each.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EntityRows {
    pub re: Var,
    pub im: Option<Var>,
}

/// A query as one box, several aggregation branches, or nothing.
#[derive(Debug, Clone, PartialEq)]
pub enum EmbeddedQuery<Q> {
    Single(Q),
    Branches(Vec<Q>),
    Unanswerable,
}

impl<Q> EmbeddedQuery<Q> {
    pub fn boxes(&self) -> &[Q] {
        match self {
            EmbeddedQuery::Single(q) => std::slice::from_ref(q),
            EmbeddedQuery::Branches(b) => b,
            EmbeddedQuery::Unanswerable => &[],
        }
    }

    pub fn is_answerable(&self) -> bool {
        !matches!(self, EmbeddedQuery::Unanswerable)
    }
}

/// One forward pass: a tape bound to a parameter set.
pub struct Forward<'p> {
    params: &'p ModelParams,
    store: &'p ParamStore,
    pub tape: Tape,
}

impl<'p> Forward<'p> {
    pub fn new(params: &'p ModelParams) -> Self {
        Self { params, store: &params.store, tape: Tape::new() }
    }

    /// Reads tensor values from `store` instead of `params.store`; the
    /// store must have the same layout (as a perturbed copy does).
    pub fn with_store(params: &'p ModelParams, store: &'p ParamStore) -> Self {
        Self { params, store, tape: Tape::new() }
    }

    pub fn params(&self) -> &'p ModelParams {
        self.params
    }

    fn row(&mut self, id: ParamId, r: usize) -> Result<Var, ModelError> {
        Ok(self.tape.gather(self.store, id, &[r])?)
    }

    fn param(&mut self, id: ParamId) -> Var {
        self.tape.param(self.store, id)
    }

    fn table_box(&mut self, table: BoxTable, r: RelationId) -> Result<BoxVar, ModelError> {
        self.params.check_relation(r)?;
        let center = self.row(table.center, r.index())?;
        let mut read_off = |id: Option<ParamId>| -> Result<Option<Var>, ModelError> {
            Ok(match id {
                Some(id) => {
                    let raw = self.row(id, r.index())?;
                    Some(self.tape.abs(raw))
                }
                None => None,
            })
        };
        let off_re = read_off(table.off_re)?;
        let off_im = read_off(table.off_im)?;
        Ok(BoxVar { center, off_re, off_im })
    }

    pub fn relation_box(&mut self, r: RelationId) -> Result<BoxVar, ModelError> {
        self.table_box(self.params.layout.relation, r)
    }

    /// Free-parameter `r+` box.
    pub fn kleene_free(&mut self, r: RelationId) -> Result<BoxVar, ModelError> {
        self.table_box(self.params.layout.plus, r)
    }

    fn add_opt(&mut self, a: Option<Var>, b: Option<Var>) -> Result<Option<Var>, ModelError> {
        Ok(match (a, b) {
            (Some(a), Some(b)) => Some(self.tape.add(a, b)?),
            _ => None,
        })
    }

    /// Path composition: centers combine (angles or translations add),
    /// offsets add.
    pub fn compose(&mut self, p: BoxVar, r: BoxVar) -> Result<BoxVar, ModelError> {
        Ok(BoxVar {
            center: self.tape.add(p.center, r.center)?,
            off_re: self.add_opt(p.off_re, r.off_re)?,
            off_im: self.add_opt(p.off_im, r.off_im)?,
        })
    }

    /// Learned Kleene-plus operator.
    pub fn kleene_projection(&mut self, b: BoxVar) -> Result<BoxVar, ModelError> {
        let layout = self.params.layout;
        let k = self.param(layout.proj_center);
        let center = self.tape.mat_vec(k, b.center)?;
        match self.params.kind() {
            ModelKind::Rotate => Ok(BoxVar { center, off_re: None, off_im: None }),
            ModelKind::Query2Box => {
                let off = b.off_re.expect("query2box boxes carry an offset");
                let moved = self.tape.mat_vec(k, off)?;
                Ok(BoxVar { center, off_re: Some(self.tape.abs(moved)), off_im: None })
            }
            ModelKind::RotateBox => {
                let (kr, ki) = layout.proj_off.expect("rotate-box has offset projections");
                let (kr, ki) = (self.param(kr), self.param(ki));
                let (or, oi) = (b.off_re.expect("offset"), b.off_im.expect("offset"));
                let (rr, ii) = (self.tape.mat_vec(kr, or)?, self.tape.mat_vec(ki, oi)?);
                let re = self.tape.sub(rr, ii)?;
                let (ri, ir) = (self.tape.mat_vec(kr, oi)?, self.tape.mat_vec(ki, or)?);
                let im = self.tape.add(ri, ir)?;
                Ok(BoxVar { center, off_re: Some(self.tape.abs(re)), off_im: Some(self.tape.abs(im)) })
            }
        }
    }

    fn set_encode(&mut self, enc: SetEncoder, inputs: &[Var]) -> Result<Var, ModelError> {
        let p = |s: &mut Self, id| s.param(id);
        let (w1, b1, w2, b2, out) = (p(self, enc.w1), p(self, enc.b1), p(self, enc.w2), p(self, enc.b2), p(self, enc.out));
        let mut pooled: Option<Var> = None;
        for &x in inputs {
            let h = self.tape.affine(w1, b1, x, true)?;
            let y = self.tape.affine(w2, b2, h, false)?;
            pooled = Some(match pooled {
                Some(acc) => self.tape.min(acc, y)?,
                None => y,
            });
        }
        Ok(self.tape.mat_vec(out, pooled.expect("non-empty input"))?)
    }

    /// Permutation-invariant disjunction of at least two branches.
    pub fn disj_deepsets(&mut self, branches: &[BoxVar]) -> Result<BoxVar, ModelError> {
        let max = self.params.config.max_branches;
        if branches.len() < 2 {
            return Err(ModelError::SingleBranchSet);
        }
        if branches.len() > max {
            return Err(ModelError::TooManyBranches { branches: branches.len(), max });
        }
        let layout = self.params.layout;
        let centers: Vec<Var> = branches.iter().map(|b| b.center).collect();
        let center = self.set_encode(layout.set_center, &centers)?;
        let offset = |s: &mut Self, pick: fn(&BoxVar) -> Option<Var>| -> Result<Option<Var>, ModelError> {
            let enc = match layout.set_offset {
                Some(e) => e,
                None => return Ok(None),
            };
            let parts: Option<Vec<Var>> = branches.iter().map(pick).collect();
            match parts {
                Some(parts) => {
                    let v = s.set_encode(enc, &parts)?;
                    Ok(Some(s.tape.abs(v)))
                }
                None => Ok(None),
            }
        };
        let off_re = offset(self, |b| b.off_re)?;
        let off_im = offset(self, |b| b.off_im)?;
        Ok(BoxVar { center, off_re, off_im })
    }

    /// Embeds a disjunction-free expression (or any expression when the
    /// variant uses DeepSets) as one relation-level box.
    pub fn embed_relation_level(&mut self, expr: &RegexExpr, variant: Variant) -> Result<BoxVar, ModelError> {
        match expr {
            Regex::Rel(r) => self.relation_box(*r),
            Regex::Compose(a, b) => {
                let a = self.embed_relation_level(a, variant)?;
                let b = self.embed_relation_level(b, variant)?;
                self.compose(a, b)
            }
            Regex::Plus(inner) => {
                if variant.uses_projection() {
                    if !variant.uses_deepsets() && inner.contains_disj() {
                        return Err(ModelError::ProjectionOnBranches);
                    }
                    let b = self.embed_relation_level(inner, variant)?;
                    self.kleene_projection(b)
                } else {
                    match inner.as_ref() {
                        Regex::Rel(r) if variant == Variant::Baseline => self.relation_box(*r),
                        Regex::Rel(r) => self.kleene_free(*r),
                        _ => Err(ModelError::NotExpressible { variant }),
                    }
                }
            }
            Regex::Disj(..) => {
                if !variant.uses_deepsets() {
                    return Err(ModelError::NotExpressible { variant });
                }
                let parts = expr.disjuncts();
                let boxes = parts
                    .into_iter()
                    .map(|p| self.embed_relation_level(p, variant))
                    .collect::<Result<Vec<_>, _>>()?;
                self.disj_deepsets(&boxes)
            }
        }
    }

    /// Places the head entity into a relation-level box.
    pub fn anchor(&mut self, head: EntityId, b: BoxVar) -> Result<QueryVar, ModelError> {
        self.params.check_entity(head)?;
        let layout = self.params.layout;
        let e_re = self.row(layout.entity_re, head.index())?;
        match layout.entity_im {
            Some(im) => {
                let e_im = self.row(im, head.index())?;
                let (c, s) = (self.tape.cos(b.center), self.tape.sin(b.center));
                let (rc, is) = (self.tape.mul(e_re, c)?, self.tape.mul(e_im, s)?);
                let re = self.tape.sub(rc, is)?;
                let (rs, ic) = (self.tape.mul(e_re, s)?, self.tape.mul(e_im, c)?);
                let im = self.tape.add(rs, ic)?;
                Ok(QueryVar { re, im: Some(im), off_re: b.off_re, off_im: b.off_im })
            }
            None => {
                let re = self.tape.add(e_re, b.center)?;
                Ok(QueryVar { re, im: None, off_re: b.off_re, off_im: None })
            }
        }
    }

    /// Embeds `(head, expr, ?)` under `variant`.
    pub fn embed_regex(
        &mut self,
        variant: Variant,
        head: EntityId,
        expr: &RegexExpr,
    ) -> Result<EmbeddedQuery<QueryVar>, ModelError> {
        self.params.check_entity(head)?;
        let max = self.params.config.max_branches;
        if !is_answerable(expr, variant, max) {
            return Ok(EmbeddedQuery::Unanswerable);
        }
        if variant.uses_aggregation() {
            let parts = match dnf_decompose(expr, max) {
                Decomposition::Parts(p) => p,
                Decomposition::Undecomposable => return Ok(EmbeddedQuery::Unanswerable),
            };
            let mut out = Vec::with_capacity(parts.len());
            for p in &parts {
                let b = self.embed_relation_level(p, variant)?;
                out.push(self.anchor(head, b)?);
            }
            Ok(if out.len() == 1 { EmbeddedQuery::Single(out.pop().expect("one")) } else { EmbeddedQuery::Branches(out) })
        } else {
            let b = self.embed_relation_level(expr, variant)?;
            Ok(EmbeddedQuery::Single(self.anchor(head, b)?))
        }
    }

    /// Gathers candidate rows; `None` selects every entity.
    pub fn entity_rows(&mut self, ids: Option<&[EntityId]>) -> Result<EntityRows, ModelError> {
        let layout = self.params.layout;
        let read = |s: &mut Self, id: ParamId| -> Result<Var, ModelError> {
            match ids {
                None => Ok(s.param(id)),
                Some(ids) => {
                    let rows: Vec<usize> = ids.iter().map(|e| e.index()).collect();
                    Ok(s.tape.gather(s.store, id, &rows)?)
                }
            }
        };
        let re = read(self, layout.entity_re)?;
        let im = match layout.entity_im {
            Some(id) => Some(read(self, id)?),
            None => None,
        };
        Ok(EntityRows { re, im })
    }

    /// Outside and inside parts of the box distance along one real axis.
    fn box_axis(&mut self, e: Var, c: Var, o: Var) -> Result<(Var, Var), ModelError> {
        let t = &mut self.tape;
        let hi = t.add(c, o)?;
        let lo = t.sub(c, o)?;
        let above = t.sub(e, hi)?;
        let above = t.relu(above);
        let below = t.sub(lo, e)?;
        let below = t.relu(below);
        let outside = t.add(above, below)?;
        let outside = t.sum_rows(outside);
        let up = t.max(lo, e)?;
        let clamp = t.min(hi, up)?;
        let gap = t.sub(c, clamp)?;
        Ok((outside, t.l1_rows(gap)))
    }

    /// Distance (`R x 1`) of every candidate row to one query box.
    pub fn distances(&mut self, q: QueryVar, rows: EntityRows) -> Result<Var, ModelError> {
        let alpha = self.params.config.alpha;
        match self.params.kind() {
            ModelKind::Rotate => {
                let (q_im, e_im) = (q.im.expect("complex query"), rows.im.expect("complex rows"));
                let d_re = self.tape.sub(rows.re, q.re)?;
                let d_re = self.tape.l1_rows(d_re);
                let d_im = self.tape.sub(e_im, q_im)?;
                let d_im = self.tape.l1_rows(d_im);
                Ok(self.tape.add(d_re, d_im)?)
            }
            ModelKind::RotateBox => {
                let (out_re, in_re) = self.box_axis(rows.re, q.re, q.off_re.expect("offset"))?;
                let (out_im, in_im) =
                    self.box_axis(rows.im.expect("complex rows"), q.im.expect("complex query"), q.off_im.expect("offset"))?;
                let outside = self.tape.add(out_re, out_im)?;
                let inside = self.tape.add(in_re, in_im)?;
                let inside = self.tape.scale(inside, alpha);
                Ok(self.tape.add(outside, inside)?)
            }
            ModelKind::Query2Box => {
                let (outside, inside) = self.box_axis(rows.re, q.re, q.off_re.expect("offset"))?;
                let inside = self.tape.scale(inside, alpha);
                Ok(self.tape.add(outside, inside)?)
            }
        }
    }

    /// Distances to the closest branch; `None` when unanswerable.
    pub fn score(&mut self, query: &EmbeddedQuery<QueryVar>, rows: EntityRows) -> Result<Option<Var>, ModelError> {
        let mut best: Option<Var> = None;
        for &q in query.boxes() {
            let d = self.distances(q, rows)?;
            best = Some(match best {
                Some(b) => self.tape.min(b, d)?,
                None => d,
            });
        }
        Ok(best)
    }
}
