//! Stage and terminal costs on SO(3) x R^3 with retraction derivatives.
//!
//! Rotation error is measured by the weighted chordal distance
//! `L(R, R_d) = tr((R R_d^T - I) W (R R_d^T - I)^T) / 2`; positions, velocities
//! and inputs use plain quadratics. Derivatives are the `t` and `t^2`
//! coefficients along the curve `R exp(t xi)`.

use crate::expand::{mat3_to_dyn, sym};
use crate::lie::{vee_unchecked, Mat3, Rotation, Vec3};
use crate::nlp::{HessTriplet, Point, SlotId};
use nalgebra::{DMatrix, DVector};

/// One additive term of the objective.
pub trait CostTerm: Send + Sync {
    fn var_slots(&self) -> &[SlotId];
    fn value(&self, x: &Point) -> f64;
    /// Gradient sub-vectors aligned with `var_slots`.
    fn gradient(&self, x: &Point) -> Vec<DVector<f64>>;
    /// Hessian triplets over `var_slots` (see [`crate::nlp::HessTriplet`]).
    fn hessian(&self, x: &Point) -> Vec<HessTriplet>;
}

/// Weighted chordal rotation cost, nonnegative and zero iff `R = R_d` for
/// positive definite weights.
pub fn chordal_cost(r: &Rotation, r_d: &Rotation, w: &Mat3) -> f64 {
    let e = r.matrix() * r_d.matrix().transpose() - Mat3::identity();
    0.5 * (e * w * e.transpose()).trace()
}

/// Gradient of the chordal cost along `R exp(t xi)` as a 3-vector.
pub fn chordal_gradient(r: &Rotation, r_d: &Rotation, w: &Mat3) -> Vec3 {
    let k = chordal_k(r, r_d, w);
    vee_full_diff(&k)
}

/// Hessian (symmetric 3x3) of the chordal cost along the retraction curve.
pub fn chordal_hessian(r: &Rotation, r_d: &Rotation, w: &Mat3) -> Mat3 {
    let k = chordal_k(r, r_d, w);
    let wp = r_d.matrix().transpose() * w * r_d.matrix();
    sym(&k) - Mat3::identity() * k.trace() + Mat3::identity() * wp.trace() - sym(&wp)
}

/// First and second order coefficients of `t` of the cost along `R exp(t xi)`.
pub fn chordal_cost_expansion(r: &Rotation, r_d: &Rotation, w: &Mat3, xi: &Vec3) -> (f64, f64) {
    let g = chordal_gradient(r, r_d, w);
    let h = chordal_hessian(r, r_d, w);
    (g.dot(xi), 0.5 * xi.dot(&(h * xi)))
}

fn chordal_k(r: &Rotation, r_d: &Rotation, w: &Mat3) -> Mat3 {
    let e = r.matrix() * r_d.matrix().transpose() - Mat3::identity();
    r.matrix().transpose() * e * w * r_d.matrix()
}

/// `(M21 - M12, M02 - M20, M10 - M01)`: the full antisymmetric difference.
fn vee_full_diff(m: &Mat3) -> Vec3 {
    vee_unchecked(&(m - m.transpose()))
}

/// Quadratic cost `1/2 (p - p_d)^T W (p - p_d)` with gradient and Hessian.
pub fn quad_cost(p: &Vec3, p_d: &Vec3, w: &Mat3) -> (f64, Vec3, Mat3) {
    let d = p - p_d;
    (0.5 * d.dot(&(w * d)), w * d, *w)
}

/// Chordal cost term bound to one rotation slot.
pub struct ChordalCost {
    slots: [SlotId; 1],
    pub target: Rotation,
    pub weight: Mat3,
}

impl ChordalCost {
    pub fn new(slot: SlotId, target: Rotation, weight: Mat3) -> Self {
        ChordalCost { slots: [slot], target, weight: sym(&weight) }
    }
}

impl CostTerm for ChordalCost {
    fn var_slots(&self) -> &[SlotId] {
        &self.slots
    }

    fn value(&self, x: &Point) -> f64 {
        chordal_cost(x.rot(self.slots[0]), &self.target, &self.weight)
    }

    fn gradient(&self, x: &Point) -> Vec<DVector<f64>> {
        let g = chordal_gradient(x.rot(self.slots[0]), &self.target, &self.weight);
        vec![DVector::from_column_slice(g.as_slice())]
    }

    fn hessian(&self, x: &Point) -> Vec<HessTriplet> {
        let h = chordal_hessian(x.rot(self.slots[0]), &self.target, &self.weight);
        vec![(self.slots[0], self.slots[0], mat3_to_dyn(&h))]
    }
}

/// Quadratic cost term on one Euclidean slot (positions, velocities, inputs).
pub struct QuadCost {
    slots: [SlotId; 1],
    pub target: DVector<f64>,
    pub weight: DMatrix<f64>,
}

impl QuadCost {
    pub fn new(slot: SlotId, target: DVector<f64>, weight: DMatrix<f64>) -> Self {
        let weight = (&weight + weight.transpose()) * 0.5;
        QuadCost { slots: [slot], target, weight }
    }

    /// Isotropic helper: weight `c I` toward the target.
    pub fn isotropic(slot: SlotId, target: DVector<f64>, c: f64) -> Self {
        let dim = target.len();
        Self::new(slot, target, DMatrix::identity(dim, dim) * c)
    }
}

impl CostTerm for QuadCost {
    fn var_slots(&self) -> &[SlotId] {
        &self.slots
    }

    fn value(&self, x: &Point) -> f64 {
        let d = x.euc(self.slots[0]) - &self.target;
        0.5 * d.dot(&(&self.weight * &d))
    }

    fn gradient(&self, x: &Point) -> Vec<DVector<f64>> {
        let d = x.euc(self.slots[0]) - &self.target;
        vec![&self.weight * d]
    }

    fn hessian(&self, _x: &Point) -> Vec<HessTriplet> {
        vec![(self.slots[0], self.slots[0], self.weight.clone())]
    }
}
