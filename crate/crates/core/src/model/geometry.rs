//! Plain (untaped) rotation-box geometry.
//!
//! A rotation box has a unit-modulus center `e^{i theta}` and a
//! non-negative complex offset. Anchoring a relation box at an entity point
//! rotates the point into a query box whose center keeps the point's
//! per-dimension modulus. These functions mirror the taped forward pass
//! operation for operation, so both produce identical numbers.

use crate::numeric::{ComplexVec, NumericError};

/// Relation-level box: angles plus non-negative offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct RotationBox {
    pub theta: Vec<f64>,
    pub off_re: Vec<f64>,
    pub off_im: Vec<f64>,
}

impl RotationBox {
    /// Offsets are read through `abs`, like the trainable parameters.
    pub fn new(theta: Vec<f64>, off_re: Vec<f64>, off_im: Vec<f64>) -> Result<Self, NumericError> {
        let k = theta.len();
        for (name, v) in [("off_re", &off_re), ("off_im", &off_im)] {
            if v.len() != k {
                return Err(NumericError::ShapeMismatch { op: name_op(name), left: (1, k), right: (1, v.len()) });
            }
        }
        Ok(Self {
            theta,
            off_re: off_re.into_iter().map(f64::abs).collect(),
            off_im: off_im.into_iter().map(f64::abs).collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn center(&self) -> ComplexVec {
        ComplexVec::from_angles(&self.theta)
    }
}

fn name_op(name: &str) -> &'static str {
    if name == "off_re" {
        "rotation_box.off_re"
    } else {
        "rotation_box.off_im"
    }
}

/// Query-level box: arbitrary complex center, non-negative offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryBox {
    pub center: ComplexVec,
    pub off_re: Vec<f64>,
    pub off_im: Vec<f64>,
}

impl QueryBox {
    pub fn dim(&self) -> usize {
        self.center.dim()
    }

    /// Continues the query with one more relation: rotate the center, add
    /// the offsets.
    pub fn compose(&self, r: &RotationBox) -> Result<QueryBox, NumericError> {
        check(self.dim(), r.dim())?;
        Ok(QueryBox {
            center: self.center.rotate(&r.theta)?,
            off_re: add(&self.off_re, &r.off_re),
            off_im: add(&self.off_im, &r.off_im),
        })
    }

    fn corners(&self) -> ([Vec<f64>; 2], [Vec<f64>; 2]) {
        let lo = |c: &[f64], o: &[f64]| c.iter().zip(o).map(|(c, o)| c - o).collect::<Vec<_>>();
        let hi = |c: &[f64], o: &[f64]| c.iter().zip(o).map(|(c, o)| c + o).collect::<Vec<_>>();
        (
            [lo(&self.center.re, &self.off_re), lo(&self.center.im, &self.off_im)],
            [hi(&self.center.re, &self.off_re), hi(&self.center.im, &self.off_im)],
        )
    }
}

fn check(a: usize, b: usize) -> Result<(), NumericError> {
    if a == b {
        Ok(())
    } else {
        Err(NumericError::ShapeMismatch { op: "geometry", left: (1, a), right: (1, b) })
    }
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// Rotates `entity` into the relation box.
pub fn single_hop(entity: &ComplexVec, rel: &RotationBox) -> Result<QueryBox, NumericError> {
    check(entity.dim(), rel.dim())?;
    Ok(QueryBox { center: entity.rotate(&rel.theta)?, off_re: rel.off_re.clone(), off_im: rel.off_im.clone() })
}

/// Path composition on relation-level boxes: angles add, offsets add.
pub fn compose_path(p: &RotationBox, r: &RotationBox) -> Result<RotationBox, NumericError> {
    check(p.dim(), r.dim())?;
    Ok(RotationBox {
        theta: add(&p.theta, &r.theta),
        off_re: add(&p.off_re, &r.off_re),
        off_im: add(&p.off_im, &r.off_im),
    })
}

/// Elementwise containment of the real and imaginary parts.
pub fn inside(point: &ComplexVec, q: &QueryBox) -> Result<bool, NumericError> {
    check(point.dim(), q.dim())?;
    let ([lo_re, lo_im], [hi_re, hi_im]) = q.corners();
    Ok((0..q.dim()).all(|j| {
        lo_re[j] <= point.re[j] && point.re[j] <= hi_re[j] && lo_im[j] <= point.im[j] && point.im[j] <= hi_im[j]
    }))
}

fn part_out(v: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    let mut s = 0.0;
    for j in 0..v.len() {
        let above = if v[j] - hi[j] >= 0.0 { v[j] - hi[j] } else { 0.0 };
        let below = if lo[j] - v[j] >= 0.0 { lo[j] - v[j] } else { 0.0 };
        s += above + below;
    }
    s
}

fn part_in(v: &[f64], c: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    let mut s = 0.0;
    for j in 0..v.len() {
        let up = if lo[j] >= v[j] { lo[j] } else { v[j] };
        let clamp = if hi[j] <= up { hi[j] } else { up };
        s += (c[j] - clamp).abs();
    }
    s
}

/// Outside-box component: how far the point lies beyond the box faces.
pub fn dist_out(point: &ComplexVec, q: &QueryBox) -> Result<f64, NumericError> {
    check(point.dim(), q.dim())?;
    let ([lo_re, lo_im], [hi_re, hi_im]) = q.corners();
    Ok(part_out(&point.re, &lo_re, &hi_re) + part_out(&point.im, &lo_im, &hi_im))
}

/// Inside-box component: distance from the center to the point clamped
/// into the box.
pub fn dist_in(point: &ComplexVec, q: &QueryBox) -> Result<f64, NumericError> {
    check(point.dim(), q.dim())?;
    let ([lo_re, lo_im], [hi_re, hi_im]) = q.corners();
    Ok(part_in(&point.re, &q.center.re, &lo_re, &hi_re) + part_in(&point.im, &q.center.im, &lo_im, &hi_im))
}

/// `dist_out + alpha * dist_in`.
pub fn distance(point: &ComplexVec, q: &QueryBox, alpha: f64) -> Result<f64, NumericError> {
    Ok(dist_out(point, q)? + alpha * dist_in(point, q)?)
}

/// Distance to the closest of several branch boxes.
pub fn disj_aggregate(point: &ComplexVec, branches: &[QueryBox], alpha: f64) -> Result<f64, NumericError> {
    assert!(!branches.is_empty(), "aggregation needs at least one branch");
    let mut best = f64::INFINITY;
    for b in branches {
        let d = distance(point, b, alpha)?;
        if d < best {
            best = d;
        }
    }
    Ok(best)
}

/// Point-to-point L1 distance over real and imaginary parts.
pub fn rotate_distance(point: &ComplexVec, query: &ComplexVec) -> Result<f64, NumericError> {
    check(point.dim(), query.dim())?;
    let l1 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>();
    Ok(l1(&point.re, &query.re) + l1(&point.im, &query.im))
}

/// Real box used by the translation baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct RealBox {
    pub center: Vec<f64>,
    pub offset: Vec<f64>,
}

/// Translation composition: centers add, offsets add.
pub fn q2b_compose(p: &RealBox, r: &RealBox) -> Result<RealBox, NumericError> {
    check(p.center.len(), r.center.len())?;
    Ok(RealBox { center: add(&p.center, &r.center), offset: add(&p.offset, &r.offset) })
}

/// Box distance over a single real part.
pub fn q2b_distance(point: &[f64], q: &RealBox, alpha: f64) -> Result<f64, NumericError> {
    check(point.len(), q.center.len())?;
    let lo: Vec<f64> = q.center.iter().zip(&q.offset).map(|(c, o)| c - o).collect();
    let hi: Vec<f64> = q.center.iter().zip(&q.offset).map(|(c, o)| c + o).collect();
    Ok(part_out(point, &lo, &hi) + alpha * part_in(point, &q.center, &lo, &hi))
}
