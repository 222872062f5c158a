//! Second-order expansion atoms for expressions built from rotations acting on
//! vectors.
//!
//! Every constraint and cost in this crate is differentiated along retraction
//! curves `R exp(t xi)`. Substituting the exponential series
//! `exp(t xi) = I + t hat(xi) + t^2/2 hat(xi)^2 + O(t^3)` and collecting the
//! `t` and `t^2` coefficients yields closed forms; the helpers here package the
//! recurring shapes so block implementations stay short.
//!
//! Conventions: a Hessian triplet `(a, b, M)` contributes `xi_a^T M xi_b` to
//! the quadratic form `xi^T H xi` of the full symmetric Hessian `H`; off-slot
//! pairs are therefore counted twice, matching `H[a][b] = M`, `H[b][a] = M^T`.

use crate::lie::{hat, Mat3, Rotation, Vec3};
use crate::nlp::{HessTriplet, SlotId};
use nalgebra::DMatrix;

/// Symmetric part of a matrix.
pub fn sym(m: &Mat3) -> Mat3 {
    (m + m.transpose()) * 0.5
}

/// Symmetric form `M` with `xi^T M xi = a^T hat(xi)^2 c`
/// (the weighted second-order term of `R exp(t xi) c` with `a = R^T w`).
pub fn rot_quad_form(a: &Vec3, c: &Vec3) -> Mat3 {
    sym(&(a * c.transpose())) - Mat3::identity() * a.dot(c)
}

/// Symmetric form `M` with `xi^T M xi = <hat(w), P hat(xi)^2 Q>_F`, i.e. the
/// weighted vee of the skew pair `P hat(xi)^2 Q - (P hat(xi)^2 Q)^T`.
pub fn vee_pair_quad_form(p: &Mat3, q: &Mat3, w: &Vec3) -> Mat3 {
    let hw = hat(w);
    sym(&(q * hw.transpose() * p)) - Mat3::identity() * (hw.transpose() * p * q).trace()
}

/// Expansion of `A Rl(t)^T Rr(t) (w0 + t W xi_u)` with `Rl(t) = Rl exp(t xi_l)`
/// and `Rr(t) = Rr exp(t xi_r)`; either rotation may be absent (constant
/// identity), and the affine vector slot is optional.
///
/// The same atom covers single-rotation terms (`rl = None`), transported joint
/// reactions (`Q = Rl^T Rr`), and pure input terms (both rotations absent).
pub struct Sandwich {
    /// Constant premultiplier applied to the whole term.
    pub premul: Mat3,
    /// Slot and value of the transposed rotation.
    pub rot_left: Option<(SlotId, Rotation)>,
    /// Slot and value of the plain rotation.
    pub rot_right: Option<(SlotId, Rotation)>,
    /// Constant part of the vector argument at the operating point.
    pub w0: Vec3,
    /// Optional affine dependence of the vector argument on an input slot:
    /// `w(t) = w0 + t W xi_u` with `W` of size 3 x slot_dim.
    pub vec_slot: Option<(SlotId, DMatrix<f64>)>,
}

impl Sandwich {
    fn q(&self) -> Mat3 {
        let left = self
            .rot_left
            .as_ref()
            .map_or_else(Mat3::identity, |(_, r)| r.matrix().transpose());
        let right = self
            .rot_right
            .as_ref()
            .map_or_else(Mat3::identity, |(_, r)| *r.matrix());
        left * right
    }

    /// Value of the term at `t = 0`.
    pub fn value(&self) -> Vec3 {
        self.premul * self.q() * self.w0
    }

    /// Adds the 3 x slot_dim Jacobian contributions into `add(slot, matrix)`.
    pub fn accumulate_jacobian(&self, mut add: impl FnMut(SlotId, DMatrix<f64>)) {
        let q = self.q();
        let c0 = q * self.w0;
        if let Some((slot, _)) = self.rot_left {
            add(slot, mat3_to_dyn(&(self.premul * hat(&c0))));
        }
        if let Some((slot, _)) = self.rot_right {
            add(slot, mat3_to_dyn(&(-self.premul * q * hat(&self.w0))));
        }
        if let Some((slot, w)) = &self.vec_slot {
            let aq = self.premul * q;
            let mut jac = DMatrix::zeros(3, w.ncols());
            for c in 0..w.ncols() {
                let col = Vec3::new(w[(0, c)], w[(1, c)], w[(2, c)]);
                let out = aq * col;
                for r in 0..3 {
                    jac[(r, c)] = out[r];
                }
            }
            add(*slot, jac);
        }
    }

    /// Adds the Hessian triplets of the weighted term `w^T (this term)`.
    pub fn accumulate_weighted_hessian(&self, weight: &Vec3, out: &mut Vec<HessTriplet>) {
        let q = self.q();
        let a_hat = self.premul.transpose() * weight;
        let c0 = q * self.w0;
        let b_hat = q.transpose() * a_hat;
        if let Some((l, _)) = self.rot_left {
            out.push((l, l, mat3_to_dyn(&rot_quad_form(&a_hat, &c0))));
        }
        if let Some((r, _)) = self.rot_right {
            out.push((r, r, mat3_to_dyn(&rot_quad_form(&b_hat, &self.w0))));
        }
        if let (Some((l, _)), Some((r, _))) = (&self.rot_left, &self.rot_right) {
            out.push((*l, *r, mat3_to_dyn(&(-hat(&a_hat) * q * hat(&self.w0)))));
        }
        if let Some((u, w)) = &self.vec_slot {
            if let Some((l, _)) = self.rot_left {
                out.push((l, *u, dmat_mul(&(hat(&a_hat) * q), w)));
            }
            if let Some((r, _)) = self.rot_right {
                out.push((r, *u, dmat_mul(&(-hat(&b_hat)), w)));
            }
        }
    }
}

pub fn mat3_to_dyn(m: &Mat3) -> DMatrix<f64> {
    DMatrix::from_fn(3, 3, |i, j| m[(i, j)])
}

fn dmat_mul(a: &Mat3, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(3, b.ncols());
    for c in 0..b.ncols() {
        let col = Vec3::new(b[(0, c)], b[(1, c)], b[(2, c)]);
        let v = a * col;
        for r in 0..3 {
            out[(r, c)] = v[r];
        }
    }
    out
}
