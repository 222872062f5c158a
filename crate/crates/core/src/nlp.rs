//! Problem assembly: variable layout, points on the product manifold,
//! retraction, the KKT system, and optimality error metrics.
//!
//! A point lives on a product of SO(3) factors and Euclidean factors. The
//! layout fixes the tangent coordinate ordering once per problem: per body and
//! timestep the blocks are (xi_R, xi_p, xi_F, xi_v), bodies in declaration
//! order, inputs after the body states of the following step, timesteps
//! outermost. All gradient/Jacobian/Hessian indexing in the crate refers to
//! slot offsets of one shared layout.

use crate::constraints::{Block, BlockKind};
use crate::costs::CostTerm;
use crate::kkt::{JacBlock, KktSystem};
use crate::lie::{exp_so3, Rotation, Vec3};
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NlpError {
    #[error("slack vector must stay strictly positive (min s = {min_s:.3e})")]
    NonPositiveSlack { min_s: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
}

/// Index of one tangent block in a [`VariableLayout`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SlotId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotKind {
    /// SO(3) factor; 3 tangent coordinates, retraction by right-multiplied exp.
    Rotation,
    /// Euclidean factor of the given dimension; retraction by addition.
    Euclidean(usize),
}

/// What a slot belongs to, used for sparsity-envelope checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotScope {
    Body(usize),
    Inputs,
    Free,
}

#[derive(Debug, Clone)]
pub struct SlotMeta {
    pub kind: SlotKind,
    pub dim: usize,
    pub offset: usize,
    /// Timestep the slot belongs to; inputs of step k are assigned step k+1.
    pub step: Option<usize>,
    pub scope: SlotScope,
    /// Band-ordering group of the saddle system; defaults to the step index.
    /// Trajectory layouts refine it to interleave bodies within a step, which
    /// keeps the bandwidth proportional to one body's footprint instead of a
    /// whole timestep.
    pub band_ord: usize,
}

/// A Hessian contribution: `(a, b, M)` adds `xi_a^T M xi_b` to the quadratic
/// form `xi^T H xi` (so off-diagonal pairs are counted twice through symmetry).
pub type HessTriplet = (SlotId, SlotId, DMatrix<f64>);

#[derive(Debug, Clone, Default)]
pub struct VariableLayout {
    slots: Vec<SlotMeta>,
    n: usize,
}

impl VariableLayout {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push_rotation(&mut self, step: Option<usize>, scope: SlotScope) -> SlotId {
        self.push(SlotKind::Rotation, step, scope)
    }

    pub fn push_euclidean(&mut self, dim: usize, step: Option<usize>, scope: SlotScope) -> SlotId {
        self.push(SlotKind::Euclidean(dim), step, scope)
    }

    fn push(&mut self, kind: SlotKind, step: Option<usize>, scope: SlotScope) -> SlotId {
        let dim = match kind {
            SlotKind::Rotation => 3,
            SlotKind::Euclidean(d) => d,
        };
        let id = SlotId(self.slots.len());
        self.slots.push(SlotMeta {
            kind,
            dim,
            offset: self.n,
            step,
            scope,
            band_ord: step.unwrap_or(0),
        });
        self.n += dim;
        id
    }

    /// Overrides the band-ordering group of a slot.
    pub fn set_band_ord(&mut self, id: SlotId, ord: usize) {
        self.slots[id.0].band_ord = ord;
    }

    /// Total tangent dimension.
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn n_slots(&self) -> usize {
        self.slots.len()
    }

    pub fn slot(&self, id: SlotId) -> &SlotMeta {
        &self.slots[id.0]
    }

    pub fn slots(&self) -> &[SlotMeta] {
        &self.slots
    }
}

/// Value of one slot.
#[derive(Debug, Clone)]
pub enum SlotValue {
    Rot(Rotation),
    Euc(DVector<f64>),
}

/// A point on the product manifold described by a layout.
#[derive(Debug, Clone)]
pub struct Point {
    pub values: Vec<SlotValue>,
}

impl Point {
    /// The identity/origin point of a layout: identity rotations, zero vectors.
    pub fn origin(layout: &VariableLayout) -> Self {
        let values = layout
            .slots()
            .iter()
            .map(|s| match s.kind {
                SlotKind::Rotation => SlotValue::Rot(Rotation::identity()),
                SlotKind::Euclidean(d) => SlotValue::Euc(DVector::zeros(d)),
            })
            .collect();
        Point { values }
    }

    pub fn rot(&self, id: SlotId) -> &Rotation {
        match &self.values[id.0] {
            SlotValue::Rot(r) => r,
            SlotValue::Euc(_) => panic!("slot {} is not a rotation", id.0),
        }
    }

    pub fn euc(&self, id: SlotId) -> &DVector<f64> {
        match &self.values[id.0] {
            SlotValue::Euc(v) => v,
            SlotValue::Rot(_) => panic!("slot {} is not euclidean", id.0),
        }
    }

    pub fn euc3(&self, id: SlotId) -> Vec3 {
        let v = self.euc(id);
        Vec3::new(v[0], v[1], v[2])
    }

    pub fn set_rot(&mut self, id: SlotId, r: Rotation) {
        self.values[id.0] = SlotValue::Rot(r);
    }

    pub fn set_euc(&mut self, id: SlotId, v: DVector<f64>) {
        self.values[id.0] = SlotValue::Euc(v);
    }

    pub fn set_euc3(&mut self, id: SlotId, v: Vec3) {
        self.values[id.0] = SlotValue::Euc(DVector::from_column_slice(v.as_slice()));
    }
}

/// Applies the retraction: rotation slots move by `R exp(xi)`, Euclidean slots
/// by addition. The zero tangent is the identity map.
pub fn retract(layout: &VariableLayout, x: &Point, d: &DVector<f64>) -> Point {
    assert_eq!(d.len(), layout.dim(), "direction does not match layout");
    let mut out = x.clone();
    for (idx, meta) in layout.slots().iter().enumerate() {
        match meta.kind {
            SlotKind::Rotation => {
                let xi = Vec3::new(d[meta.offset], d[meta.offset + 1], d[meta.offset + 2]);
                let r = *x.rot(SlotId(idx)) * exp_so3(&xi);
                out.values[idx] = SlotValue::Rot(r.renormalized());
            }
            SlotKind::Euclidean(dim) => {
                let mut v = x.euc(SlotId(idx)).clone();
                for i in 0..dim {
                    v[i] += d[meta.offset + i];
                }
                out.values[idx] = SlotValue::Euc(v);
            }
        }
    }
    out
}

/// Reads the sub-vector of `d` belonging to one slot.
pub fn slot_dir(layout: &VariableLayout, d: &DVector<f64>, id: SlotId) -> DVector<f64> {
    let meta = layout.slot(id);
    DVector::from_fn(meta.dim, |i, _| d[meta.offset + i])
}

/// The trajectory optimization problem: cost terms plus equality/inequality
/// constraint blocks over one shared layout.
pub struct NlpProblem {
    pub layout: VariableLayout,
    pub costs: Vec<Box<dyn CostTerm>>,
    pub eq_blocks: Vec<Box<dyn Block>>,
    pub ineq_blocks: Vec<Box<dyn Block>>,
}

impl NlpProblem {
    pub fn new(layout: VariableLayout) -> Self {
        NlpProblem { layout, costs: Vec::new(), eq_blocks: Vec::new(), ineq_blocks: Vec::new() }
    }

    pub fn add_cost(&mut self, c: Box<dyn CostTerm>) {
        self.costs.push(c);
    }

    pub fn add_block(&mut self, b: Box<dyn Block>) {
        match b.kind() {
            BlockKind::Equality => self.eq_blocks.push(b),
            BlockKind::Inequality => self.ineq_blocks.push(b),
        }
    }

    pub fn n_eq(&self) -> usize {
        self.eq_blocks.iter().map(|b| b.dim()).sum()
    }

    pub fn n_ineq(&self) -> usize {
        self.ineq_blocks.iter().map(|b| b.dim()).sum()
    }

    pub fn cost_value(&self, x: &Point) -> f64 {
        self.costs.iter().map(|c| c.value(x)).sum()
    }

    /// Objective gradient over the layout.
    pub fn cost_gradient(&self, x: &Point) -> DVector<f64> {
        let mut g = DVector::zeros(self.layout.dim());
        for c in self.costs.iter() {
            for (slot, part) in c.var_slots().iter().zip(c.gradient(x)) {
                let off = self.layout.slot(*slot).offset;
                for i in 0..part.len() {
                    g[off + i] += part[i];
                }
            }
        }
        g
    }

    /// Stacked equality residuals h(x).
    pub fn eq_residuals(&self, x: &Point) -> DVector<f64> {
        stack_values(&self.eq_blocks, x)
    }

    /// Stacked inequality residuals g(x) (the `g <= 0` convention).
    pub fn ineq_residuals(&self, x: &Point) -> DVector<f64> {
        stack_values(&self.ineq_blocks, x)
    }

    /// Constraint violation used by the line search:
    /// `theta = ||h||_1 + sum of positive parts of g`.
    pub fn theta(&self, x: &Point) -> f64 {
        let h = self.eq_residuals(x);
        let g = self.ineq_residuals(x);
        h.iter().map(|v| v.abs()).sum::<f64>() + g.iter().map(|v| v.max(0.0)).sum::<f64>()
    }

    /// Assembles the KKT system at `(x, y, z, s)` with barrier parameter `mu`.
    pub fn assemble(
        &self,
        x: &Point,
        y: &DVector<f64>,
        z: &DVector<f64>,
        s: &DVector<f64>,
        mu: f64,
    ) -> Result<KktSystem, NlpError> {
        let (l, m) = (self.n_eq(), self.n_ineq());
        if y.len() != l {
            return Err(NlpError::Dimension { expected: l, got: y.len() });
        }
        if z.len() != m || s.len() != m {
            return Err(NlpError::Dimension { expected: m, got: z.len().max(s.len()) });
        }
        if m > 0 {
            let min_s = s.min();
            if min_s <= 0.0 {
                return Err(NlpError::NonPositiveSlack { min_s });
            }
        }

        let n = self.layout.dim();
        let grad_f = self.cost_gradient(x);

        // Lagrangian Hessian: cost Hessians plus multiplier-weighted
        // constraint Hessians (exact second-order information).
        let mut hess: Vec<HessTriplet> = Vec::new();
        for c in self.costs.iter() {
            hess.extend(c.hessian(x));
        }

        let mut eq_jac = Vec::new();
        let mut h = DVector::zeros(l);
        let mut row = 0usize;
        for b in self.eq_blocks.iter() {
            let val = b.value(x);
            let dim = b.dim();
            h.rows_mut(row, dim).copy_from(&val);
            for (slot, mat) in b.var_slots().iter().zip(b.jacobian(x)) {
                eq_jac.push(JacBlock { row, dim, slot: *slot, mat });
            }
            let w = DVector::from_fn(dim, |i, _| y[row + i]);
            hess.extend(b.weighted_hessian(x, &w));
            row += dim;
        }

        let mut ineq_jac = Vec::new();
        let mut g = DVector::zeros(m);
        row = 0;
        for b in self.ineq_blocks.iter() {
            let val = b.value(x);
            let dim = b.dim();
            g.rows_mut(row, dim).copy_from(&val);
            for (slot, mat) in b.var_slots().iter().zip(b.jacobian(x)) {
                ineq_jac.push(JacBlock { row, dim, slot: *slot, mat });
            }
            let w = DVector::from_fn(dim, |i, _| z[row + i]);
            hess.extend(b.weighted_hessian(x, &w));
            row += dim;
        }

        // Dual residual grad f + A_E^T y + A_I^T z.
        let mut r_dual = grad_f.clone();
        for jb in &eq_jac {
            scatter_jtv(&self.layout, jb, y, &mut r_dual);
        }
        for jb in &ineq_jac {
            scatter_jtv(&self.layout, jb, z, &mut r_dual);
        }

        Ok(KktSystem::new(
            &self.layout,
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
            s.clone(),
            z.clone(),
            mu,
            self.eq_row_groups(),
        ))
    }

    /// Band-ordering group of each equality row: the latest group its block
    /// touches (constraint rows sit with the states they determine).
    fn eq_row_groups(&self) -> Vec<usize> {
        let mut groups = Vec::with_capacity(self.n_eq());
        for b in self.eq_blocks.iter() {
            let group = b
                .var_slots()
                .iter()
                .map(|s| self.layout.slot(*s).band_ord)
                .max()
                .unwrap_or(0);
            for _ in 0..b.dim() {
                groups.push(group);
            }
        }
        groups
    }

    /// Optimality error metrics of the barrier KKT system.
    pub fn error_metrics(
        &self,
        x: &Point,
        y: &DVector<f64>,
        z: &DVector<f64>,
        s: &DVector<f64>,
        mu: f64,
    ) -> Metrics {
        let grad_f = self.cost_gradient(x);
        let mut r_dual = grad_f;
        let mut row = 0usize;
        for b in self.eq_blocks.iter() {
            for (slot, mat) in b.var_slots().iter().zip(b.jacobian(x)) {
                let jb = JacBlock { row, dim: b.dim(), slot: *slot, mat };
                scatter_jtv(&self.layout, &jb, y, &mut r_dual);
            }
            row += b.dim();
        }
        row = 0;
        for b in self.ineq_blocks.iter() {
            for (slot, mat) in b.var_slots().iter().zip(b.jacobian(x)) {
                let jb = JacBlock { row, dim: b.dim(), slot: *slot, mat };
                scatter_jtv(&self.layout, &jb, z, &mut r_dual);
            }
            row += b.dim();
        }
        let h = self.eq_residuals(x);
        Metrics::compute(&r_dual, &h, s, z, y, mu)
    }
}

fn stack_values(blocks: &[Box<dyn Block>], x: &Point) -> DVector<f64> {
    let total: usize = blocks.iter().map(|b| b.dim()).sum();
    let mut out = DVector::zeros(total);
    let mut row = 0;
    for b in blocks {
        out.rows_mut(row, b.dim()).copy_from(&b.value(x));
        row += b.dim();
    }
    out
}

/// Adds `J_block^T w_rows` into the dual residual.
fn scatter_jtv(layout: &VariableLayout, jb: &JacBlock, w: &DVector<f64>, out: &mut DVector<f64>) {
    let off = layout.slot(jb.slot).offset;
    for c in 0..jb.mat.ncols() {
        let mut acc = 0.0;
        for r in 0..jb.dim {
            acc += jb.mat[(r, c)] * w[jb.row + r];
        }
        out[off + c] += acc;
    }
}

/// Scaled optimality violations of the interior-point iterate.
#[derive(Debug, Clone, Copy)]
pub struct Metrics {
    /// `max(eps_kkt, eps_e, eps_i)` at the current barrier parameter.
    pub e_mu: f64,
    /// Same maximum evaluated at `mu = 0`; the termination quantity.
    pub e_0: f64,
    pub eps_kkt: f64,
    pub eps_e: f64,
    pub eps_i: f64,
    /// Unscaled ingredients, sufficient to replay the metrics.
    pub stat_inf: f64,
    pub h_inf: f64,
    pub comp_mu_inf: f64,
    pub comp_zero_inf: f64,
    pub s_d: f64,
    pub s_c: f64,
}

/// Multiplier-size threshold of the scaling denominators.
pub const SCALING_S_MAX: f64 = 100.0;

impl Metrics {
    pub fn compute(
        r_dual: &DVector<f64>,
        h: &DVector<f64>,
        s: &DVector<f64>,
        z: &DVector<f64>,
        y: &DVector<f64>,
        mu: f64,
    ) -> Metrics {
        let l = y.len();
        let m = z.len();
        let stat_inf = r_dual.amax();
        let h_inf = if l > 0 { h.amax() } else { 0.0 };
        let (comp_mu_inf, comp_zero_inf) = if m > 0 {
            let mut cm: f64 = 0.0;
            let mut c0: f64 = 0.0;
            for i in 0..m {
                cm = cm.max((s[i] * z[i] - mu).abs());
                c0 = c0.max((s[i] * z[i]).abs());
            }
            (cm, c0)
        } else {
            (0.0, 0.0)
        };
        let s_d = if l + m > 0 {
            let mult = (y.iter().map(|v| v.abs()).sum::<f64>()
                + z.iter().map(|v| v.abs()).sum::<f64>())
                / (l + m) as f64;
            SCALING_S_MAX.max(mult) / SCALING_S_MAX
        } else {
            1.0
        };
        let s_c = if m > 0 {
            let mult = z.iter().map(|v| v.abs()).sum::<f64>() / m as f64;
            SCALING_S_MAX.max(mult) / SCALING_S_MAX
        } else {
            1.0
        };
        let eps_kkt = stat_inf / s_d;
        let eps_e = h_inf;
        let eps_i = comp_mu_inf / s_c;
        Metrics {
            e_mu: eps_kkt.max(eps_e).max(eps_i),
            e_0: eps_kkt.max(eps_e).max(comp_zero_inf / s_c),
            eps_kkt,
            eps_e,
            eps_i,
            stat_inf,
            h_inf,
            comp_mu_inf,
            comp_zero_inf,
            s_d,
            s_c,
        }
    }
}
