//! The assembled KKT system and its Newton direction solve.
//!
//! The barrier KKT system
//!
//! ```text
//! [ H      A_E^T  A_I^T  0 ] [d_x]    [ grad f + A_E^T y + A_I^T z ]
//! [ A_E    0      0      0 ] [d_y] = -[ h                          ]
//! [ A_I    0      0      I ] [d_z]    [ g + s                      ]
//! [ 0      0      S      Z ] [d_s]    [ S z - mu e                 ]
//! ```
//!
//! is solved by eliminating `d_s` and `d_z`, leaving the symmetric saddle
//! system `[H + A_I^T Sigma A_I, A_E^T; A_E, 0]` with `Sigma = S^-1 Z`. With
//! primal slots and equality rows interleaved by timestep the saddle matrix is
//! banded, so factorization cost grows linearly with the horizon. The
//! recovered directions are checked against the full system and refined once
//! if needed.

use crate::banded::{BandedError, BandedMatrix};
use crate::nlp::{HessTriplet, SlotId, VariableLayout};
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum KktError {
    #[error("KKT factorization is singular at pivot {pivot}")]
    Singular { pivot: usize },
}

/// One Jacobian sub-block: rows `row..row+dim` of the constraint stack against
/// one layout slot.
#[derive(Debug, Clone)]
pub struct JacBlock {
    pub row: usize,
    pub dim: usize,
    pub slot: SlotId,
    pub mat: DMatrix<f64>,
}

/// Newton directions plus the relative residual of the full system.
#[derive(Debug, Clone)]
pub struct Directions {
    pub d_x: DVector<f64>,
    pub d_y: DVector<f64>,
    pub d_z: DVector<f64>,
    pub d_s: DVector<f64>,
    pub lin_residual_rel: f64,
}

/// Assembled KKT data at one iterate.
pub struct KktSystem {
    pub n: usize,
    pub l: usize,
    pub m: usize,
    pub grad_f: DVector<f64>,
    /// `grad f + A_E^T y + A_I^T z`.
    pub r_dual: DVector<f64>,
    pub hess: Vec<HessTriplet>,
    pub eq_jac: Vec<JacBlock>,
    pub ineq_jac: Vec<JacBlock>,
    pub h: DVector<f64>,
    pub g: DVector<f64>,
    pub s: DVector<f64>,
    pub z: DVector<f64>,
    pub mu: f64,
    slot_offsets: Vec<usize>,
    slot_dims: Vec<usize>,
    /// Permuted position of each slot's first coordinate in the saddle system.
    slot_pos: Vec<usize>,
    /// Permuted position of each equality row.
    row_pos: Vec<usize>,
    bandwidth: usize,
}

impl KktSystem {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        layout: &VariableLayout,
        n: usize,
        l: usize,
        m: usize,
        grad_f: DVector<f64>,
        r_dual: DVector<f64>,
        hess: Vec<HessTriplet>,
        eq_jac: Vec<JacBlock>,
        ineq_jac: Vec<JacBlock>,
        h: DVector<f64>,
        g: DVector<f64>,
        s: DVector<f64>,
        z: DVector<f64>,
        mu: f64,
        eq_row_groups: Vec<usize>,
    ) -> Self {
        let slot_offsets: Vec<usize> = layout.slots().iter().map(|s| s.offset).collect();
        let slot_dims: Vec<usize> = layout.slots().iter().map(|s| s.dim).collect();
        let slot_groups: Vec<usize> = layout.slots().iter().map(|s| s.band_ord).collect();

        // Interleave slots and equality rows by timestep group: within a group
        // the slots come first, then the rows, both in declaration order.
        let mut order: Vec<(usize, u8, usize, usize)> = Vec::with_capacity(layout.n_slots() + l);
        for (idx, g) in slot_groups.iter().enumerate() {
            order.push((*g, 0, idx, slot_dims[idx]));
        }
        for (r, g) in eq_row_groups.iter().enumerate() {
            order.push((*g, 1, r, 1));
        }
        order.sort();
        let mut slot_pos = vec![0usize; layout.n_slots()];
        let mut row_pos = vec![0usize; l];
        let mut pos = 0usize;
        for (_, kind, idx, size) in &order {
            if *kind == 0 {
                slot_pos[*idx] = pos;
            } else {
                row_pos[*idx] = pos;
            }
            pos += size;
        }
        debug_assert_eq!(pos, n + l);

        let mut sys = KktSystem {
            n,
            l,
            m,
            grad_f,
            r_dual,
            hess,
            eq_jac,
            ineq_jac,
            h,
            g,
            s,
            z,
            mu,
            slot_offsets,
            slot_dims,
            slot_pos,
            row_pos,
            bandwidth: 0,
        };
        sys.bandwidth = sys.compute_bandwidth();
        sys
    }

    fn span(&self, pos_a: usize, dim_a: usize, pos_b: usize, dim_b: usize) -> usize {
        let hi = (pos_a + dim_a - 1).max(pos_b + dim_b - 1);
        let lo = pos_a.min(pos_b);
        hi - lo
    }

    fn compute_bandwidth(&self) -> usize {
        let mut band = 0usize;
        for (a, b, _) in &self.hess {
            let (pa, da) = (self.slot_pos[a.0], self.slot_dims[a.0]);
            let (pb, db) = (self.slot_pos[b.0], self.slot_dims[b.0]);
            band = band.max(self.span(pa, da, pb, db));
        }
        for jb in &self.eq_jac {
            let (pc, dc) = (self.slot_pos[jb.slot.0], self.slot_dims[jb.slot.0]);
            for r in 0..jb.dim {
                let pr = self.row_pos[jb.row + r];
                band = band.max(self.span(pr, 1, pc, dc));
            }
        }
        // The inequality contribution A_I^T Sigma A_I couples slot pairs that
        // appear in the same inequality block.
        for group in self.ineq_groups() {
            for &i in &group {
                for &j in &group {
                    let a = &self.ineq_jac[i];
                    let b = &self.ineq_jac[j];
                    let (pa, da) = (self.slot_pos[a.slot.0], self.slot_dims[a.slot.0]);
                    let (pb, db) = (self.slot_pos[b.slot.0], self.slot_dims[b.slot.0]);
                    band = band.max(self.span(pa, da, pb, db));
                }
            }
        }
        band
    }

    /// Indices of `ineq_jac` entries grouped by owning constraint block
    /// (blocks share the row range).
    fn ineq_groups(&self) -> Vec<Vec<usize>> {
        let mut map: std::collections::BTreeMap<(usize, usize), Vec<usize>> =
            std::collections::BTreeMap::new();
        for (i, jb) in self.ineq_jac.iter().enumerate() {
            map.entry((jb.row, jb.dim)).or_default().push(i);
        }
        map.into_values().collect()
    }

    /// Builds the condensed banded saddle matrix and right-hand side.
    /// `delta_w` is an optional diagonal shift of the primal block.
    pub fn build_condensed(&self, delta_w: f64) -> (BandedMatrix, Vec<f64>) {
        let size = self.n + self.l;
        let mut band = BandedMatrix::zeros(size, self.bandwidth, self.bandwidth);

        // Lagrangian Hessian triplets: (a, b, M) adds M at (a, b) and M^T at
        // (b, a); diagonal pairs are symmetrized.
        for (a, b, m) in &self.hess {
            let pa = self.slot_pos[a.0];
            let pb = self.slot_pos[b.0];
            if a == b {
                for i in 0..m.nrows() {
                    for j in 0..m.ncols() {
                        band.add(pa + i, pb + j, 0.5 * (m[(i, j)] + m[(j, i)]));
                    }
                }
            } else {
                for i in 0..m.nrows() {
                    for j in 0..m.ncols() {
                        band.add(pa + i, pb + j, m[(i, j)]);
                        band.add(pb + j, pa + i, m[(i, j)]);
                    }
                }
            }
        }
        if delta_w != 0.0 {
            for slot in 0..self.slot_pos.len() {
                for i in 0..self.slot_dims[slot] {
                    band.add(self.slot_pos[slot] + i, self.slot_pos[slot] + i, delta_w);
                }
            }
        }

        // Barrier term A_I^T Sigma A_I with Sigma = diag(z / s).
        for group in self.ineq_groups() {
            for &i in &group {
                for &j in &group {
                    let a = &self.ineq_jac[i];
                    let b = &self.ineq_jac[j];
                    let pa = self.slot_pos[a.slot.0];
                    let pb = self.slot_pos[b.slot.0];
                    for ca in 0..a.mat.ncols() {
                        for cb in 0..b.mat.ncols() {
                            let mut acc = 0.0;
                            for r in 0..a.dim {
                                let sigma = self.z[a.row + r] / self.s[a.row + r];
                                acc += a.mat[(r, ca)] * sigma * b.mat[(r, cb)];
                            }
                            if acc != 0.0 {
                                band.add(pa + ca, pb + cb, acc);
                            }
                        }
                    }
                }
            }
        }

        // Equality Jacobian and its transpose.
        for jb in &self.eq_jac {
            let pc = self.slot_pos[jb.slot.0];
            for r in 0..jb.dim {
                let pr = self.row_pos[jb.row + r];
                for c in 0..jb.mat.ncols() {
                    let v = jb.mat[(r, c)];
                    if v != 0.0 {
                        band.add(pr, pc + c, v);
                        band.add(pc + c, pr, v);
                    }
                }
            }
        }

        // Condensed right-hand side.
        let q = self.elimination_q();
        let mut rhs_x = -&self.r_dual;
        self.add_ineq_jtv(&q, &mut rhs_x, -1.0);
        let mut rhs = vec![0.0; size];
        for slot in 0..self.slot_pos.len() {
            for i in 0..self.slot_dims[slot] {
                rhs[self.slot_pos[slot] + i] = rhs_x[self.slot_offsets[slot] + i];
            }
        }
        for r in 0..self.l {
            rhs[self.row_pos[r]] = -self.h[r];
        }
        (band, rhs)
    }

    /// `q = -z + mu / s + Sigma (g + s)` from eliminating the last two rows.
    fn elimination_q(&self) -> DVector<f64> {
        DVector::from_fn(self.m, |i, _| {
            let sigma = self.z[i] / self.s[i];
            -self.z[i] + self.mu / self.s[i] + sigma * (self.g[i] + self.s[i])
        })
    }

    /// `out += scale * A_I^T v`.
    fn add_ineq_jtv(&self, v: &DVector<f64>, out: &mut DVector<f64>, scale: f64) {
        for jb in &self.ineq_jac {
            let off = self.slot_offsets[jb.slot.0];
            for c in 0..jb.mat.ncols() {
                let mut acc = 0.0;
                for r in 0..jb.dim {
                    acc += jb.mat[(r, c)] * v[jb.row + r];
                }
                out[off + c] += scale * acc;
            }
        }
    }

    fn eq_apply(&self, d_x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.l);
        for jb in &self.eq_jac {
            let off = self.slot_offsets[jb.slot.0];
            for r in 0..jb.dim {
                let mut acc = 0.0;
                for c in 0..jb.mat.ncols() {
                    acc += jb.mat[(r, c)] * d_x[off + c];
                }
                out[jb.row + r] += acc;
            }
        }
        out
    }

    fn ineq_apply(&self, d_x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.m);
        for jb in &self.ineq_jac {
            let off = self.slot_offsets[jb.slot.0];
            for r in 0..jb.dim {
                let mut acc = 0.0;
                for c in 0..jb.mat.ncols() {
                    acc += jb.mat[(r, c)] * d_x[off + c];
                }
                out[jb.row + r] += acc;
            }
        }
        out
    }

    fn eq_apply_t(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.n);
        for jb in &self.eq_jac {
            let off = self.slot_offsets[jb.slot.0];
            for c in 0..jb.mat.ncols() {
                let mut acc = 0.0;
                for r in 0..jb.dim {
                    acc += jb.mat[(r, c)] * v[jb.row + r];
                }
                out[off + c] += acc;
            }
        }
        out
    }

    /// Applies the Lagrangian Hessian to a layout vector.
    pub fn hess_apply(&self, d: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.n);
        for (a, b, m) in &self.hess {
            let oa = self.slot_offsets[a.0];
            let ob = self.slot_offsets[b.0];
            if a == b {
                for i in 0..m.nrows() {
                    let mut acc = 0.0;
                    for j in 0..m.ncols() {
                        acc += 0.5 * (m[(i, j)] + m[(j, i)]) * d[ob + j];
                    }
                    out[oa + i] += acc;
                }
            } else {
                for i in 0..m.nrows() {
                    let mut acc = 0.0;
                    for j in 0..m.ncols() {
                        acc += m[(i, j)] * d[ob + j];
                    }
                    out[oa + i] += acc;
                }
                for j in 0..m.ncols() {
                    let mut acc = 0.0;
                    for i in 0..m.nrows() {
                        acc += m[(i, j)] * d[oa + i];
                    }
                    out[ob + j] += acc;
                }
            }
        }
        out
    }

    /// Solves the Newton system, optionally with a primal diagonal shift.
    pub fn solve_newton(&self, delta_w: f64) -> Result<Directions, KktError> {
        let (band, rhs) = self.build_condensed(delta_w);
        let lu = band.factor().map_err(|BandedError::Singular { col }| KktError::Singular {
            pivot: col,
        })?;
        let sol = lu.solve(&rhs);
        let (mut d_x, mut d_y) = self.split_solution(&sol);

        // Recover d_z and d_s from the eliminated rows.
        let q = self.elimination_q();
        let a_dx = self.ineq_apply(&d_x);
        let mut d_z = DVector::zeros(self.m);
        let mut d_s = DVector::zeros(self.m);
        for i in 0..self.m {
            let sigma = self.z[i] / self.s[i];
            d_z[i] = sigma * a_dx[i] + q[i];
            d_s[i] = -(self.g[i] + self.s[i]) - a_dx[i];
        }

        // Full-system residual, one refinement pass if needed.
        let mut rel = self.full_residual_rel(&d_x, &d_y, &d_z, &d_s, delta_w);
        if rel > 1e-13 {
            let (r1, r2, r3, r4) = self.full_residual(&d_x, &d_y, &d_z, &d_s, delta_w);
            let mut corr_rhs_x = -r1;
            // Eliminate: e_s = -r3 - A_I e_x; S e_z + Z e_s = -r4
            //   => e_z = (-r4 + Z r3)/s + Sigma A_I e_x.
            let corr_q = DVector::from_fn(self.m, |i, _| (-r4[i] + self.z[i] * r3[i]) / self.s[i]);
            self.add_ineq_jtv(&corr_q, &mut corr_rhs_x, -1.0);
            let mut corr = vec![0.0; self.n + self.l];
            for slot in 0..self.slot_pos.len() {
                for i in 0..self.slot_dims[slot] {
                    corr[self.slot_pos[slot] + i] = corr_rhs_x[self.slot_offsets[slot] + i];
                }
            }
            for r in 0..self.l {
                corr[self.row_pos[r]] = -r2[r];
            }
            let csol = lu.solve(&corr);
            let (e_x, e_y) = self.split_solution(&csol);
            let a_ex = self.ineq_apply(&e_x);
            for i in 0..self.n {
                d_x[i] += e_x[i];
            }
            for i in 0..self.l {
                d_y[i] += e_y[i];
            }
            for i in 0..self.m {
                let sigma = self.z[i] / self.s[i];
                d_z[i] += sigma * a_ex[i] + corr_q[i];
                d_s[i] += -r3[i] - a_ex[i];
            }
            rel = self.full_residual_rel(&d_x, &d_y, &d_z, &d_s, delta_w);
        }

        Ok(Directions { d_x, d_y, d_z, d_s, lin_residual_rel: rel })
    }

    fn split_solution(&self, sol: &[f64]) -> (DVector<f64>, DVector<f64>) {
        let mut d_x = DVector::zeros(self.n);
        for slot in 0..self.slot_pos.len() {
            for i in 0..self.slot_dims[slot] {
                d_x[self.slot_offsets[slot] + i] = sol[self.slot_pos[slot] + i];
            }
        }
        let mut d_y = DVector::zeros(self.l);
        for r in 0..self.l {
            d_y[r] = sol[self.row_pos[r]];
        }
        (d_x, d_y)
    }

    #[allow(clippy::type_complexity)]
    fn full_residual(
        &self,
        d_x: &DVector<f64>,
        d_y: &DVector<f64>,
        d_z: &DVector<f64>,
        d_s: &DVector<f64>,
        delta_w: f64,
    ) -> (DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>) {
        let mut r1 = self.hess_apply(d_x) + d_x * delta_w + self.eq_apply_t(d_y) + &self.r_dual;
        self.add_ineq_jtv(d_z, &mut r1, 1.0);
        let r2 = self.eq_apply(d_x) + &self.h;
        let a_dx = self.ineq_apply(d_x);
        let r3 = DVector::from_fn(self.m, |i, _| a_dx[i] + d_s[i] + self.g[i] + self.s[i]);
        let r4 = DVector::from_fn(self.m, |i, _| {
            self.s[i] * d_z[i] + self.z[i] * d_s[i] + self.s[i] * self.z[i] - self.mu
        });
        (r1, r2, r3, r4)
    }

    fn full_residual_rel(
        &self,
        d_x: &DVector<f64>,
        d_y: &DVector<f64>,
        d_z: &DVector<f64>,
        d_s: &DVector<f64>,
        delta_w: f64,
    ) -> f64 {
        let (r1, r2, r3, r4) = self.full_residual(d_x, d_y, d_z, d_s, delta_w);
        let num = r1
            .amax()
            .max(if self.l > 0 { r2.amax() } else { 0.0 })
            .max(if self.m > 0 { r3.amax().max(r4.amax()) } else { 0.0 });
        let den = self
            .r_dual
            .amax()
            .max(if self.l > 0 { self.h.amax() } else { 0.0 })
            .max(1.0);
        num / den
    }

    /// Dense full 4x4-block system, for cross-checking on small problems.
    pub fn dense_full(&self) -> (DMatrix<f64>, DVector<f64>) {
        let size = self.n + self.l + 2 * self.m;
        let mut a = DMatrix::zeros(size, size);
        // H.
        for (ta, tb, m) in &self.hess {
            let oa = self.slot_offsets[ta.0];
            let ob = self.slot_offsets[tb.0];
            if ta == tb {
                for i in 0..m.nrows() {
                    for j in 0..m.ncols() {
                        a[(oa + i, ob + j)] += 0.5 * (m[(i, j)] + m[(j, i)]);
                    }
                }
            } else {
                for i in 0..m.nrows() {
                    for j in 0..m.ncols() {
                        a[(oa + i, ob + j)] += m[(i, j)];
                        a[(ob + j, oa + i)] += m[(i, j)];
                    }
                }
            }
        }
        for jb in &self.eq_jac {
            let off = self.slot_offsets[jb.slot.0];
            for r in 0..jb.dim {
                for c in 0..jb.mat.ncols() {
                    a[(self.n + jb.row + r, off + c)] += jb.mat[(r, c)];
                    a[(off + c, self.n + jb.row + r)] += jb.mat[(r, c)];
                }
            }
        }
        for jb in &self.ineq_jac {
            let off = self.slot_offsets[jb.slot.0];
            for r in 0..jb.dim {
                for c in 0..jb.mat.ncols() {
                    a[(self.n + self.l + jb.row + r, off + c)] += jb.mat[(r, c)];
                    a[(off + c, self.n + self.l + jb.row + r)] += jb.mat[(r, c)];
                }
            }
        }
        for i in 0..self.m {
            // Row 3 slack identity and row 4 complementarity.
            a[(self.n + self.l + i, self.n + self.l + self.m + i)] = 1.0;
            a[(self.n + self.l + self.m + i, self.n + self.l + i)] = self.s[i];
            a[(self.n + self.l + self.m + i, self.n + self.l + self.m + i)] = self.z[i];
        }
        let mut rhs = DVector::zeros(size);
        for i in 0..self.n {
            rhs[i] = -self.r_dual[i];
        }
        for i in 0..self.l {
            rhs[self.n + i] = -self.h[i];
        }
        for i in 0..self.m {
            rhs[self.n + self.l + i] = -(self.g[i] + self.s[i]);
            rhs[self.n + self.l + self.m + i] = -(self.s[i] * self.z[i] - self.mu);
        }
        (a, rhs)
    }

    /// Count of structurally nonzero Jacobian entries.
    pub fn jacobian_nnz(&self) -> usize {
        self.eq_jac
            .iter()
            .chain(self.ineq_jac.iter())
            .map(|jb| jb.mat.iter().filter(|v| **v != 0.0).count())
            .sum()
    }

    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nlp::{SlotScope, VariableLayout};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    /// Random KKT data over a small layout, dense cross-check of the solve.
    #[test]
    fn condensed_solve_matches_dense_full_system() {
        let mut rng = StdRng::seed_from_u64(91);
        for trial in 0..20 {
            let mut layout = VariableLayout::new();
            let s0 = layout.push_euclidean(3, Some(0), SlotScope::Body(0));
            let s1 = layout.push_euclidean(2, Some(1), SlotScope::Body(0));
            let s2 = layout.push_euclidean(3, Some(2), SlotScope::Body(0));
            let n = layout.dim();
            let (l, m) = (3usize, 4usize);

            // SPD-ish Hessian triplets on the diagonal plus one coupling.
            let mut hess = Vec::new();
            for &slot in &[s0, s1, s2] {
                let d = layout.slot(slot).dim;
                let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
                let spd = &a * a.transpose() + DMatrix::identity(d, d) * 2.0;
                hess.push((slot, slot, spd));
            }
            hess.push((s0, s1, DMatrix::from_fn(3, 2, |_, _| rng.random_range(-0.3..0.3))));

            // Equality rows couple adjacent slots.
            let eq_jac = vec![
                JacBlock { row: 0, dim: 3, slot: s0, mat: DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0)) },
                JacBlock { row: 0, dim: 3, slot: s1, mat: DMatrix::from_fn(3, 2, |_, _| rng.random_range(-1.0..1.0)) },
            ];
            let ineq_jac = vec![
                JacBlock { row: 0, dim: 2, slot: s1, mat: DMatrix::from_fn(2, 2, |_, _| rng.random_range(-1.0..1.0)) },
                JacBlock { row: 2, dim: 2, slot: s2, mat: DMatrix::from_fn(2, 3, |_, _| rng.random_range(-1.0..1.0)) },
            ];
            let grad_f = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            let r_dual = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            let h = DVector::from_fn(l, |_, _| rng.random_range(-1.0..1.0));
            let g = DVector::from_fn(m, |_, _| rng.random_range(-1.0..0.0));
            let s = DVector::from_fn(m, |_, _| rng.random_range(0.2..1.5));
            let z = DVector::from_fn(m, |_, _| rng.random_range(0.1..1.2));
            let sys = KktSystem::new(
                &layout, n, l, m, grad_f, r_dual, hess, eq_jac, ineq_jac, h, g, s, z, 0.05,
                vec![1, 1, 1],
            );
            let dirs = sys.solve_newton(0.0).expect("solve");
            assert!(dirs.lin_residual_rel <= 1e-10, "trial {trial}: rel {}", dirs.lin_residual_rel);

            // Dense full-system oracle.
            let (a, rhs) = sys.dense_full();
            let full = a.lu().solve(&rhs).expect("dense");
            for i in 0..n {
                assert!((dirs.d_x[i] - full[i]).abs() < 1e-10, "d_x[{i}]");
            }
            for i in 0..l {
                assert!((dirs.d_y[i] - full[n + i]).abs() < 1e-10);
            }
            for i in 0..m {
                assert!((dirs.d_z[i] - full[n + l + i]).abs() < 1e-10);
                assert!((dirs.d_s[i] - full[n + l + m + i]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn unconstrained_newton_is_minus_gradient_for_identity_hessian() {
        let mut layout = VariableLayout::new();
        let s0 = layout.push_euclidean(4, Some(0), SlotScope::Free);
        let n = layout.dim();
        let grad = DVector::from_column_slice(&[1.0, -2.0, 0.5, 3.0]);
        let sys = KktSystem::new(
            &layout,
            n,
            0,
            0,
            grad.clone(),
            grad.clone(),
            vec![(s0, s0, DMatrix::identity(4, 4))],
            vec![],
            vec![],
            DVector::zeros(0),
            DVector::zeros(0),
            DVector::zeros(0),
            DVector::zeros(0),
            0.1,
            vec![],
        );
        let dirs = sys.solve_newton(0.0).unwrap();
        assert!((dirs.d_x + grad).norm() < 1e-14);
    }

    #[test]
    fn singular_factorization_reports_pivot() {
        // A single zero equality row makes the saddle system singular.
        let mut layout = VariableLayout::new();
        let s0 = layout.push_euclidean(2, Some(0), SlotScope::Free);
        let sys = KktSystem::new(
            &layout,
            2,
            1,
            0,
            DVector::zeros(2),
            DVector::zeros(2),
            vec![(s0, s0, DMatrix::identity(2, 2))],
            vec![JacBlock { row: 0, dim: 1, slot: s0, mat: DMatrix::zeros(1, 2) }],
            vec![],
            DVector::zeros(1),
            DVector::zeros(0),
            DVector::zeros(0),
            DVector::zeros(0),
            0.1,
            vec![0],
        );
        match sys.solve_newton(0.0) {
            Err(KktError::Singular { .. }) => {}
            other => panic!("expected singular, got {:?}", other.map(|d| d.lin_residual_rel)),
        }
    }
}
