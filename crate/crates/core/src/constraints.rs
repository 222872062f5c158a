//! Equality and inequality constraint blocks with closed-form first and
//! second-order retraction expansions, plus the finite-difference oracle that
//! every expansion is checked against.
//!
//! Group-valued residuals (rotational kinematics, rotation pins) are
//! vectorized in the chart recentered at the evaluation point: the residual of
//! `Y(x) = I` is taken as `log(Ybar^-1 Y(x)) + log(Ybar)` around the operating
//! point `Ybar = Y(xbar)`, which removes the log-Jacobian from all derivative
//! formulas. [`Block::chart_value`] exposes that recentered function so the
//! finite-difference checker probes exactly what the solver linearizes.

use crate::expand::{mat3_to_dyn, vee_pair_quad_form, Sandwich};
use crate::lie::{hat, log_so3, vee_unchecked, Mat3, Rotation, Vec3};
use crate::nlp::{retract, HessTriplet, Point, SlotId, VariableLayout};
use nalgebra::{DMatrix, DVector};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    Equality,
    Inequality,
}

/// One group of equality or inequality rows with its derivative expansion.
pub trait Block: Send + Sync {
    /// Family name used in check reports.
    fn name(&self) -> &'static str;
    fn kind(&self) -> BlockKind;
    /// Number of rows.
    fn dim(&self) -> usize;
    /// The slots this block touches; gradients and Hessians never leave them.
    fn var_slots(&self) -> &[SlotId];
    /// Residual value at the point.
    fn value(&self, x: &Point) -> DVector<f64>;
    /// Jacobian rows per slot, aligned with `var_slots`.
    fn jacobian(&self, x: &Point) -> Vec<DMatrix<f64>>;
    /// Multiplier-weighted sum of the per-row symmetric Hessian forms.
    fn weighted_hessian(&self, x: &Point, w: &DVector<f64>) -> Vec<HessTriplet>;
    /// Residual along curves through `probe`, vectorized in the chart of
    /// `base`. Identical to [`Block::value`] for vector-space residuals.
    fn chart_value(&self, base: &Point, probe: &Point) -> DVector<f64> {
        let _ = base;
        self.value(probe)
    }
}

fn vec3_to_dvec(v: &Vec3) -> DVector<f64> {
    DVector::from_column_slice(v.as_slice())
}

/// Accumulates per-slot Jacobian contributions in `var_slots` order.
struct JacAccum<'a> {
    slots: &'a [SlotId],
    dims: Vec<(usize, usize)>,
    map: BTreeMap<SlotId, DMatrix<f64>>,
}

impl<'a> JacAccum<'a> {
    fn new(slots: &'a [SlotId], rows: usize, layout_dims: impl Fn(SlotId) -> usize) -> Self {
        let dims = slots.iter().map(|s| (rows, layout_dims(*s))).collect();
        JacAccum { slots, dims, map: BTreeMap::new() }
    }

    fn add(&mut self, slot: SlotId, rows: std::ops::Range<usize>, mat: DMatrix<f64>) {
        let idx = self.slots.iter().position(|s| *s == slot).expect("slot not declared");
        let (total_rows, cols) = self.dims[idx];
        let entry = self
            .map
            .entry(slot)
            .or_insert_with(|| DMatrix::zeros(total_rows, cols));
        for (rr, r) in rows.enumerate() {
            for c in 0..mat.ncols() {
                entry[(r, c)] += mat[(rr, c)];
            }
        }
    }

    fn finish(self) -> Vec<DMatrix<f64>> {
        let mut out = Vec::with_capacity(self.slots.len());
        for (i, slot) in self.slots.iter().enumerate() {
            match self.map.get(slot) {
                Some(m) => out.push(m.clone()),
                None => out.push(DMatrix::zeros(self.dims[i].0, self.dims[i].1)),
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Pins of the initial state.
// ---------------------------------------------------------------------------

/// Pins one rotation slot to a target: residual `log(target^T R)`.
pub struct RotPinBlock {
    slots: [SlotId; 1],
    pub target: Rotation,
    name: &'static str,
}

impl RotPinBlock {
    pub fn new(slot: SlotId, target: Rotation) -> Self {
        RotPinBlock { slots: [slot], target, name: "rot-pin" }
    }
}

impl Block for RotPinBlock {
    fn name(&self) -> &'static str {
        self.name
    }
    fn kind(&self) -> BlockKind {
        BlockKind::Equality
    }
    fn dim(&self) -> usize {
        3
    }
    fn var_slots(&self) -> &[SlotId] {
        &self.slots
    }
    fn value(&self, x: &Point) -> DVector<f64> {
        vec3_to_dvec(&log_so3(&(self.target.transpose() * *x.rot(self.slots[0]))))
    }
    fn jacobian(&self, _x: &Point) -> Vec<DMatrix<f64>> {
        vec![DMatrix::identity(3, 3)]
    }
    fn weighted_hessian(&self, _x: &Point, _w: &DVector<f64>) -> Vec<HessTriplet> {
        Vec::new()
    }
    fn chart_value(&self, base: &Point, probe: &Point) -> DVector<f64> {
        // log(Ybar^-1 Y) + log(Ybar) with Y = target^T R.
        let ybar = self.target.transpose() * *base.rot(self.slots[0]);
        let y = self.target.transpose() * *probe.rot(self.slots[0]);
        vec3_to_dvec(&(log_so3(&(ybar.transpose() * y)) + log_so3(&ybar)))
    }
}

/// Pins one Euclidean slot to a target value.
pub struct EucPinBlock {
    slots: [SlotId; 1],
    pub target: DVector<f64>,
}

impl EucPinBlock {
    pub fn new(slot: SlotId, target: DVector<f64>) -> Self {
        EucPinBlock { slots: [slot], target }
    }
}

impl Block for EucPinBlock {
    fn name(&self) -> &'static str {
        "euc-pin"
    }
    fn kind(&self) -> BlockKind {
        BlockKind::Equality
    }
    fn dim(&self) -> usize {
        self.target.len()
    }
    fn var_slots(&self) -> &[SlotId] {
        &self.slots
    }
    fn value(&self, x: &Point) -> DVector<f64> {
        x.euc(self.slots[0]) - &self.target
    }
    fn jacobian(&self, _x: &Point) -> Vec<DMatrix<f64>> {
        vec![DMatrix::identity(self.target.len(), self.target.len())]
    }
    fn weighted_hessian(&self, _x: &Point, _w: &DVector<f64>) -> Vec<HessTriplet> {
        Vec::new()
    }
}

// ---------------------------------------------------------------------------
// Kinematics.
// ---------------------------------------------------------------------------

/// Rotational kinematics row `log(R_{k+1}^-1 R_k F_k) = 0`.
///
/// The expansion is the 3-element chain case: with `Y = R_{k+1}^-1 R_k F_k`,
/// the gradient transports the three directions by `-Ad_{Y^-1}`, `Ad_{F_k^-1}`
/// and the identity, and the Hessian is the half-sum of brackets over the
/// ordered pairs of transported directions.
pub struct RotKinBlock {
    /// `[R_{k+1}, R_k, F_k]`.
    slots: [SlotId; 3],
}

impl RotKinBlock {
    pub fn new(r_next: SlotId, r_k: SlotId, f_k: SlotId) -> Self {
        RotKinBlock { slots: [r_next, r_k, f_k] }
    }

    fn y(&self, x: &Point) -> Rotation {
        x.rot(self.slots[0]).transpose() * *x.rot(self.slots[1]) * *x.rot(self.slots[2])
    }

    /// Gradient coefficient matrices for (xi_R_{k+1}, xi_R_k, xi_F_k).
    fn grad_maps(&self, x: &Point) -> [Mat3; 3] {
        let y = self.y(x);
        let f = x.rot(self.slots[2]);
        [-y.matrix().transpose(), f.matrix().transpose(), Mat3::identity()]
    }
}

impl Block for RotKinBlock {
    fn name(&self) -> &'static str {
        "rot-kinematics"
    }
    fn kind(&self) -> BlockKind {
        BlockKind::Equality
    }
    fn dim(&self) -> usize {
        3
    }
    fn var_slots(&self) -> &[SlotId] {
        &self.slots
    }
    fn value(&self, x: &Point) -> DVector<f64> {
        vec3_to_dvec(&log_so3(&self.y(x)))
    }
    fn jacobian(&self, x: &Point) -> Vec<DMatrix<f64>> {
        self.grad_maps(x).iter().map(mat3_to_dyn).collect()
    }
    fn weighted_hessian(&self, x: &Point, w: &DVector<f64>) -> Vec<HessTriplet> {
        let maps = self.grad_maps(x);
        let wv = Vec3::new(w[0], w[1], w[2]);
        let hw = hat(&wv);
        let mut out = Vec::with_capacity(3);
        for i in 0..3 {
            for j in (i + 1)..3 {
                let m = -0.5 * maps[i].transpose() * hw * maps[j];
                out.push((self.slots[i], self.slots[j], mat3_to_dyn(&m)));
            }
        }
        out
    }
    fn chart_value(&self, base: &Point, probe: &Point) -> DVector<f64> {
        let ybar = self.y(base);
        let y = self.y(probe);
        vec3_to_dvec(&(log_so3(&(ybar.transpose() * y)) + log_so3(&ybar)))
    }
}

/// Translational kinematics row `p_{k+1} - p_k - v_k dt = 0`.
pub struct TransKinBlock {
    /// `[p_{k+1}, p_k, v_k]`.
    slots: [SlotId; 3],
    dt: f64,
}

impl TransKinBlock {
    pub fn new(p_next: SlotId, p_k: SlotId, v_k: SlotId, dt: f64) -> Self {
        TransKinBlock { slots: [p_next, p_k, v_k], dt }
    }
}

impl Block for TransKinBlock {
    fn name(&self) -> &'static str {
        "trans-kinematics"
    }
    fn kind(&self) -> BlockKind {
        BlockKind::Equality
    }
    fn dim(&self) -> usize {
        3
    }
    fn var_slots(&self) -> &[SlotId] {
        &self.slots
    }
    fn value(&self, x: &Point) -> DVector<f64> {
        let r = x.euc3(self.slots[0]) - x.euc3(self.slots[1]) - x.euc3(self.slots[2]) * self.dt;
        vec3_to_dvec(&r)
    }
    fn jacobian(&self, _x: &Point) -> Vec<DMatrix<f64>> {
        vec![
            DMatrix::identity(3, 3),
            -DMatrix::identity(3, 3),
            -DMatrix::identity(3, 3) * self.dt,
        ]
    }
    fn weighted_hessian(&self, _x: &Point, _w: &DVector<f64>) -> Vec<HessTriplet> {
        Vec::new()
    }
}

// ---------------------------------------------------------------------------
// Dynamics.
// ---------------------------------------------------------------------------

/// A generalized-force contribution `premul * Rl(t)^T Rr(t) * W u(t)` entering
/// a dynamics residual; `premul` carries the sign and timestep factors.
pub struct ForceSpec {
    pub premul: Mat3,
    pub rot_left: Option<SlotId>,
    pub rot_right: Option<SlotId>,
    /// Maps the input slot coordinates to the 3-vector argument.
    pub w_map: DMatrix<f64>,
    pub input_slot: SlotId,
}

impl ForceSpec {
    fn atom(&self, x: &Point) -> Sandwich {
        let u = x.euc(self.input_slot);
        let mut w0 = Vec3::zeros();
        for c in 0..self.w_map.ncols() {
            w0 += Vec3::new(self.w_map[(0, c)], self.w_map[(1, c)], self.w_map[(2, c)]) * u[c];
        }
        Sandwich {
            premul: self.premul,
            rot_left: self.rot_left.map(|s| (s, *x.rot(s))),
            rot_right: self.rot_right.map(|s| (s, *x.rot(s))),
            w0,
            vec_slot: Some((self.input_slot, self.w_map.clone())),
        }
    }

    fn slots(&self) -> impl Iterator<Item = SlotId> + '_ {
        self.rot_left
            .iter()
            .chain(self.rot_right.iter())
            .copied()
            .chain(std::iter::once(self.input_slot))
    }
}

/// Rotational dynamics rows
/// `vee(F_{k+1} I^b - I^b F_{k+1}^T - I^b F_k + F_k^T I^b) + sum(forces) = 0`,
/// where the plain torque input appears as a force spec with map `-dt^2 I`.
pub struct RotDynBlock {
    slots: Vec<SlotId>,
    f_k: SlotId,
    f_next: SlotId,
    i_ns: Mat3,
    forces: Vec<ForceSpec>,
}

impl RotDynBlock {
    pub fn new(f_k: SlotId, f_next: SlotId, i_ns: Mat3, forces: Vec<ForceSpec>) -> Self {
        let mut slots = vec![f_k, f_next];
        for f in &forces {
            for s in f.slots() {
                if !slots.contains(&s) {
                    slots.push(s);
                }
            }
        }
        RotDynBlock { slots, f_k, f_next, i_ns, forces }
    }

    /// The drone/free-body variant: torque slot enters linearly as `-tau dt^2`.
    pub fn with_torque(f_k: SlotId, f_next: SlotId, i_ns: Mat3, tau_slot: SlotId, dt: f64) -> Self {
        let spec = ForceSpec {
            premul: -Mat3::identity() * dt * dt,
            rot_left: None,
            rot_right: None,
            w_map: DMatrix::identity(3, 3),
            input_slot: tau_slot,
        };
        Self::new(f_k, f_next, i_ns, vec![spec])
    }
}

impl Block for RotDynBlock {
    fn name(&self) -> &'static str {
        "rot-dynamics"
    }
    fn kind(&self) -> BlockKind {
        BlockKind::Equality
    }
    fn dim(&self) -> usize {
        3
    }
    fn var_slots(&self) -> &[SlotId] {
        &self.slots
    }
    fn value(&self, x: &Point) -> DVector<f64> {
        let fk = x.rot(self.f_k).matrix();
        let fn_ = x.rot(self.f_next).matrix();
        let m = fn_ * self.i_ns - self.i_ns * fn_.transpose() - self.i_ns * fk
            + fk.transpose() * self.i_ns;
        let mut r = vee_unchecked(&m);
        for f in &self.forces {
            r += f.atom(x).value();
        }
        vec3_to_dvec(&r)
    }
    fn jacobian(&self, x: &Point) -> Vec<DMatrix<f64>> {
        let mut acc = JacAccum::new(&self.slots, 3, |s| slot_dim_of(x, s));
        let fk = x.rot(self.f_k);
        let fn_ = x.rot(self.f_next);
        // d/dt vee(F_next e^{t xi} I^b - I^b e^{-t xi} F_next^T).
        let mut jn = Mat3::zeros();
        let mut jk = Mat3::zeros();
        for c in 0..3 {
            let e = hat(&Vec3::ith(c, 1.0));
            let mn = fn_.matrix() * e * self.i_ns + self.i_ns * e * fn_.matrix().transpose();
            jn.set_column(c, &vee_unchecked(&mn));
            let mk = self.i_ns * fk.matrix() * e + e * fk.matrix().transpose() * self.i_ns;
            jk.set_column(c, &vee_unchecked(&mk));
        }
        acc.add(self.f_next, 0..3, mat3_to_dyn(&jn));
        acc.add(self.f_k, 0..3, mat3_to_dyn(&(-jk)));
        for f in &self.forces {
            f.atom(x).accumulate_jacobian(|slot, jac| acc.add(slot, 0..3, jac));
        }
        acc.finish()
    }
    fn weighted_hessian(&self, x: &Point, w: &DVector<f64>) -> Vec<HessTriplet> {
        let wv = Vec3::new(w[0], w[1], w[2]);
        let fk = x.rot(self.f_k).matrix();
        let fn_ = x.rot(self.f_next).matrix();
        let mut out = vec![
            (self.f_next, self.f_next, mat3_to_dyn(&vee_pair_quad_form(fn_, &self.i_ns, &wv))),
            (
                self.f_k,
                self.f_k,
                mat3_to_dyn(&(-vee_pair_quad_form(&(self.i_ns * fk), &Mat3::identity(), &wv))),
            ),
        ];
        for f in &self.forces {
            f.atom(x).accumulate_weighted_hessian(&wv, &mut out);
        }
        out
    }
}

/// Translational dynamics rows
/// `m v_{k+1} - m v_k - m g dt + sum(forces) = 0`; the drone thrust is a force
/// spec `-dt R_{k+1} e_z u_z`, joint forces enter as `-/+ dt R_a lambda`.
pub struct TransDynBlock {
    slots: Vec<SlotId>,
    v_k: SlotId,
    v_next: SlotId,
    mass: f64,
    gravity_dt: Vec3,
    forces: Vec<ForceSpec>,
}

impl TransDynBlock {
    pub fn new(
        v_k: SlotId,
        v_next: SlotId,
        mass: f64,
        gravity: Vec3,
        dt: f64,
        forces: Vec<ForceSpec>,
    ) -> Self {
        let mut slots = vec![v_k, v_next];
        for f in &forces {
            for s in f.slots() {
                if !slots.contains(&s) {
                    slots.push(s);
                }
            }
        }
        TransDynBlock { slots, v_k, v_next, mass, gravity_dt: gravity * (mass * dt), forces }
    }

    /// Drone variant: thrust `u_z` along the body z-axis at the new attitude.
    pub fn with_thrust(
        v_k: SlotId,
        v_next: SlotId,
        mass: f64,
        gravity: Vec3,
        dt: f64,
        r_next: SlotId,
        uz_slot: SlotId,
    ) -> Self {
        let spec = ForceSpec {
            premul: -Mat3::identity() * dt,
            rot_left: None,
            rot_right: Some(r_next),
            w_map: DMatrix::from_column_slice(3, 1, &[0.0, 0.0, 1.0]),
            input_slot: uz_slot,
        };
        Self::new(v_k, v_next, mass, gravity, dt, vec![spec])
    }
}

impl Block for TransDynBlock {
    fn name(&self) -> &'static str {
        "trans-dynamics"
    }
    fn kind(&self) -> BlockKind {
        BlockKind::Equality
    }
    fn dim(&self) -> usize {
        3
    }
    fn var_slots(&self) -> &[SlotId] {
        &self.slots
    }
    fn value(&self, x: &Point) -> DVector<f64> {
        let mut r = (x.euc3(self.v_next) - x.euc3(self.v_k)) * self.mass - self.gravity_dt;
        for f in &self.forces {
            r += f.atom(x).value();
        }
        vec3_to_dvec(&r)
    }
    fn jacobian(&self, x: &Point) -> Vec<DMatrix<f64>> {
        let mut acc = JacAccum::new(&self.slots, 3, |s| slot_dim_of(x, s));
        acc.add(self.v_next, 0..3, DMatrix::identity(3, 3) * self.mass);
        acc.add(self.v_k, 0..3, -DMatrix::identity(3, 3) * self.mass);
        for f in &self.forces {
            f.atom(x).accumulate_jacobian(|slot, jac| acc.add(slot, 0..3, jac));
        }
        acc.finish()
    }
    fn weighted_hessian(&self, x: &Point, w: &DVector<f64>) -> Vec<HessTriplet> {
        let wv = Vec3::new(w[0], w[1], w[2]);
        let mut out = Vec::new();
        for f in &self.forces {
            f.atom(x).accumulate_weighted_hessian(&wv, &mut out);
        }
        out
    }
}

fn slot_dim_of(x: &Point, s: SlotId) -> usize {
    match &x.values[s.0] {
        crate::nlp::SlotValue::Rot(_) => 3,
        crate::nlp::SlotValue::Euc(v) => v.len(),
    }
}

// ---------------------------------------------------------------------------
// Joints.
// ---------------------------------------------------------------------------

/// World-frame residual of a pivot joint: `R_a r_a + p_a - R_b r_b - p_b`.
pub fn pivot_residual(
    r1: &Rotation,
    p1: &Vec3,
    r2: &Rotation,
    p2: &Vec3,
    ra: &Vec3,
    rb: &Vec3,
) -> Vec3 {
    r1.matrix() * ra + p1 - r2.matrix() * rb - p2
}

/// Axis rows `((R1 e_x)^T (R2 e_z), (R1 e_y)^T (R2 e_z))`.
pub fn axis_residual(r1: &Rotation, r2: &Rotation) -> nalgebra::Vector2<f64> {
    let rz = r2.matrix() * Vec3::z();
    nalgebra::Vector2::new((r1.matrix() * Vec3::x()).dot(&rz), (r1.matrix() * Vec3::y()).dot(&rz))
}

/// Pivot joint between two bodies, or between a body and a fixed world anchor.
///
/// Side `a` is the parent; when absent, `anchor` is the world-frame joint
/// point and the residual becomes `anchor - R_b r_b - p_b`.
pub struct PivotBlock {
    slots: Vec<SlotId>,
    side_a: Option<(SlotId, SlotId, Vec3)>, // (rot, pos, offset)
    side_b: (SlotId, SlotId, Vec3),
    anchor: Vec3,
}

impl PivotBlock {
    pub fn new(
        rot_a: SlotId,
        pos_a: SlotId,
        r_a: Vec3,
        rot_b: SlotId,
        pos_b: SlotId,
        r_b: Vec3,
    ) -> Self {
        PivotBlock {
            slots: vec![rot_a, pos_a, rot_b, pos_b],
            side_a: Some((rot_a, pos_a, r_a)),
            side_b: (rot_b, pos_b, r_b),
            anchor: Vec3::zeros(),
        }
    }

    pub fn grounded(anchor: Vec3, rot_b: SlotId, pos_b: SlotId, r_b: Vec3) -> Self {
        PivotBlock { slots: vec![rot_b, pos_b], side_a: None, side_b: (rot_b, pos_b, r_b), anchor }
    }

    fn atoms(&self, x: &Point) -> Vec<Sandwich> {
        let mut out = Vec::with_capacity(2);
        if let Some((rot_a, _, ra)) = &self.side_a {
            out.push(Sandwich {
                premul: Mat3::identity(),
                rot_left: None,
                rot_right: Some((*rot_a, *x.rot(*rot_a))),
                w0: *ra,
                vec_slot: None,
            });
        }
        let (rot_b, _, rb) = &self.side_b;
        out.push(Sandwich {
            premul: -Mat3::identity(),
            rot_left: None,
            rot_right: Some((*rot_b, *x.rot(*rot_b))),
            w0: *rb,
            vec_slot: None,
        });
        out
    }
}

impl Block for PivotBlock {
    fn name(&self) -> &'static str {
        "pivot-joint"
    }
    fn kind(&self) -> BlockKind {
        BlockKind::Equality
    }
    fn dim(&self) -> usize {
        3
    }
    fn var_slots(&self) -> &[SlotId] {
        &self.slots
    }
    fn value(&self, x: &Point) -> DVector<f64> {
        let (rot_b, pos_b, rb) = &self.side_b;
        let world_b = x.rot(*rot_b).matrix() * rb + x.euc3(*pos_b);
        let world_a = match &self.side_a {
            Some((rot_a, pos_a, ra)) => x.rot(*rot_a).matrix() * ra + x.euc3(*pos_a),
            None => self.anchor,
        };
        vec3_to_dvec(&(world_a - world_b))
    }
    fn jacobian(&self, x: &Point) -> Vec<DMatrix<f64>> {
        let mut acc = JacAccum::new(&self.slots, 3, |s| slot_dim_of(x, s));
        for atom in self.atoms(x) {
            atom.accumulate_jacobian(|slot, jac| acc.add(slot, 0..3, jac));
        }
        if let Some((_, pos_a, _)) = &self.side_a {
            acc.add(*pos_a, 0..3, DMatrix::identity(3, 3));
        }
        acc.add(self.side_b.1, 0..3, -DMatrix::identity(3, 3));
        acc.finish()
    }
    fn weighted_hessian(&self, x: &Point, w: &DVector<f64>) -> Vec<HessTriplet> {
        let wv = Vec3::new(w[0], w[1], w[2]);
        let mut out = Vec::new();
        for atom in self.atoms(x) {
            atom.accumulate_weighted_hessian(&wv, &mut out);
        }
        out
    }
}

/// Axis joint rows `(A_a c_i)^T (R_b d) = 0` for two complements `c_1, c_2` of
/// the parent-frame axis; `A_a` is the parent rotation or the identity for a
/// grounded joint. The default `c_1 = e_x, c_2 = e_y, d = e_z` matches a
/// revolute joint about the shared z-axis.
pub struct AxisBlock {
    slots: Vec<SlotId>,
    rot_a: Option<SlotId>,
    rot_b: SlotId,
    pub complements: [Vec3; 2],
    pub axis_child: Vec3,
}

impl AxisBlock {
    pub fn new(rot_a: SlotId, rot_b: SlotId) -> Self {
        Self::with_axes(Some(rot_a), rot_b, [Vec3::x(), Vec3::y()], Vec3::z())
    }

    pub fn with_axes(
        rot_a: Option<SlotId>,
        rot_b: SlotId,
        complements: [Vec3; 2],
        axis_child: Vec3,
    ) -> Self {
        let mut slots = Vec::new();
        if let Some(a) = rot_a {
            slots.push(a);
        }
        slots.push(rot_b);
        AxisBlock { slots, rot_a, rot_b, complements, axis_child }
    }

    fn atom(&self, x: &Point) -> Sandwich {
        Sandwich {
            premul: Mat3::identity(),
            rot_left: self.rot_a.map(|s| (s, *x.rot(s))),
            rot_right: Some((self.rot_b, *x.rot(self.rot_b))),
            w0: self.axis_child,
            vec_slot: None,
        }
    }
}

impl Block for AxisBlock {
    fn name(&self) -> &'static str {
        "axis-joint"
    }
    fn kind(&self) -> BlockKind {
        BlockKind::Equality
    }
    fn dim(&self) -> usize {
        2
    }
    fn var_slots(&self) -> &[SlotId] {
        &self.slots
    }
    fn value(&self, x: &Point) -> DVector<f64> {
        let v = self.atom(x).value();
        DVector::from_column_slice(&[self.complements[0].dot(&v), self.complements[1].dot(&v)])
    }
    fn jacobian(&self, x: &Point) -> Vec<DMatrix<f64>> {
        let mut acc = JacAccum::new(&self.slots, 2, |s| slot_dim_of(x, s));
        let atom = self.atom(x);
        for (row, c) in self.complements.iter().enumerate() {
            // Row i is c_i^T (atom); reuse the vector atom jacobian row-wise.
            atom.accumulate_jacobian(|slot, jac| {
                let mut r = DMatrix::zeros(1, jac.ncols());
                for col in 0..jac.ncols() {
                    r[(0, col)] = c.x * jac[(0, col)] + c.y * jac[(1, col)] + c.z * jac[(2, col)];
                }
                acc.add(slot, row..row + 1, r);
            });
        }
        acc.finish()
    }
    fn weighted_hessian(&self, x: &Point, w: &DVector<f64>) -> Vec<HessTriplet> {
        let atom = self.atom(x);
        let mut out = Vec::new();
        let weight = self.complements[0] * w[0] + self.complements[1] * w[1];
        atom.accumulate_weighted_hessian(&weight, &mut out);
        out
    }
}

// ---------------------------------------------------------------------------
// Inequalities.
// ---------------------------------------------------------------------------

/// Planar cylindrical keep-out residual in the solver's `g <= 0` convention:
/// `g(p) = r^2 - (x - x_c)^2 - (y - y_c)^2`.
pub fn obstacle_residual(p: &Vec3, center: &nalgebra::Vector2<f64>, radius: f64) -> f64 {
    radius * radius - (p.x - center.x).powi(2) - (p.y - center.y).powi(2)
}

/// Cylinder obstacle on one position slot.
pub struct ObstacleBlock {
    slots: [SlotId; 1],
    pub center: nalgebra::Vector2<f64>,
    pub radius: f64,
}

impl ObstacleBlock {
    pub fn new(pos: SlotId, center: nalgebra::Vector2<f64>, radius: f64) -> Self {
        assert!(radius > 0.0, "obstacle radius must be positive");
        ObstacleBlock { slots: [pos], center, radius }
    }
}

impl Block for ObstacleBlock {
    fn name(&self) -> &'static str {
        "obstacle"
    }
    fn kind(&self) -> BlockKind {
        BlockKind::Inequality
    }
    fn dim(&self) -> usize {
        1
    }
    fn var_slots(&self) -> &[SlotId] {
        &self.slots
    }
    fn value(&self, x: &Point) -> DVector<f64> {
        let p = x.euc3(self.slots[0]);
        DVector::from_element(1, obstacle_residual(&p, &self.center, self.radius))
    }
    fn jacobian(&self, x: &Point) -> Vec<DMatrix<f64>> {
        let p = x.euc3(self.slots[0]);
        let jac = DMatrix::from_row_slice(
            1,
            3,
            &[-2.0 * (p.x - self.center.x), -2.0 * (p.y - self.center.y), 0.0],
        );
        vec![jac]
    }
    fn weighted_hessian(&self, _x: &Point, w: &DVector<f64>) -> Vec<HessTriplet> {
        let mut m = DMatrix::zeros(3, 3);
        m[(0, 0)] = -2.0 * w[0];
        m[(1, 1)] = -2.0 * w[0];
        vec![(self.slots[0], self.slots[0], m)]
    }
}

/// Box bounds `lo <= u <= hi` on one Euclidean slot, emitted as the rows
/// `lo - u <= 0` followed by `u - hi <= 0`.
pub struct BoxBoundBlock {
    slots: [SlotId; 1],
    pub lo: Option<DVector<f64>>,
    pub hi: Option<DVector<f64>>,
    dim: usize,
    slot_dim: usize,
}

impl BoxBoundBlock {
    pub fn new(slot: SlotId, lo: Option<DVector<f64>>, hi: Option<DVector<f64>>) -> Self {
        let slot_dim = lo
            .as_ref()
            .map(|v| v.len())
            .or_else(|| hi.as_ref().map(|v| v.len()))
            .expect("box bound needs at least one side");
        if let (Some(l), Some(h)) = (&lo, &hi) {
            assert!(l.iter().zip(h.iter()).all(|(a, b)| a <= b), "lo must not exceed hi");
        }
        let dim = lo.as_ref().map_or(0, |v| v.len()) + hi.as_ref().map_or(0, |v| v.len());
        BoxBoundBlock { slots: [slot], lo, hi, dim, slot_dim }
    }
}

impl Block for BoxBoundBlock {
    fn name(&self) -> &'static str {
        "box-bound"
    }
    fn kind(&self) -> BlockKind {
        BlockKind::Inequality
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn var_slots(&self) -> &[SlotId] {
        &self.slots
    }
    fn value(&self, x: &Point) -> DVector<f64> {
        let u = x.euc(self.slots[0]);
        let mut out = DVector::zeros(self.dim);
        let mut r = 0;
        if let Some(lo) = &self.lo {
            for i in 0..lo.len() {
                out[r] = lo[i] - u[i];
                r += 1;
            }
        }
        if let Some(hi) = &self.hi {
            for i in 0..hi.len() {
                out[r] = u[i] - hi[i];
                r += 1;
            }
        }
        out
    }
    fn jacobian(&self, _x: &Point) -> Vec<DMatrix<f64>> {
        let mut jac = DMatrix::zeros(self.dim, self.slot_dim);
        let mut r = 0;
        if let Some(lo) = &self.lo {
            for i in 0..lo.len() {
                jac[(r, i)] = -1.0;
                r += 1;
            }
        }
        if let Some(hi) = &self.hi {
            for i in 0..hi.len() {
                jac[(r, i)] = 1.0;
                r += 1;
            }
        }
        vec![jac]
    }
    fn weighted_hessian(&self, _x: &Point, _w: &DVector<f64>) -> Vec<HessTriplet> {
        Vec::new()
    }
}

// ---------------------------------------------------------------------------
// Finite-difference verification oracle.
// ---------------------------------------------------------------------------

/// Central-difference step for gradient checks.
pub const FD_GRAD_STEP: f64 = 1e-5;
/// Central-difference step for Hessian quadratic-form checks.
pub const FD_HESS_STEP: f64 = 1e-3;

#[derive(Debug, Clone, Copy, Default)]
pub struct FdReport {
    pub max_grad_err: f64,
    pub max_hess_err: f64,
}

impl FdReport {
    pub fn merge(&mut self, other: FdReport) {
        self.max_grad_err = self.max_grad_err.max(other.max_grad_err);
        self.max_hess_err = self.max_hess_err.max(other.max_hess_err);
    }

    pub fn passes(&self, grad_tol: f64, hess_tol: f64) -> bool {
        self.max_grad_err <= grad_tol && self.max_hess_err <= hess_tol
    }
}

/// Evaluates the quadratic form of Hessian triplets at one direction.
pub fn hessian_quadratic_form(
    layout: &VariableLayout,
    triplets: &[HessTriplet],
    d: &DVector<f64>,
) -> f64 {
    let mut q = 0.0;
    for (a, b, m) in triplets {
        let da = crate::nlp::slot_dir(layout, d, *a);
        let db = crate::nlp::slot_dir(layout, d, *b);
        let factor = if a == b { 1.0 } else { 2.0 };
        q += factor * (da.transpose() * m * db)[(0, 0)];
    }
    q
}

/// Compares the analytic expansion of a block against central finite
/// differences of its chart residual along random retraction directions.
/// Returns the worst relative errors over the trials.
pub fn fd_check(
    block: &dyn Block,
    layout: &VariableLayout,
    base: &Point,
    trials: usize,
    rng: &mut impl rand::Rng,
) -> FdReport {
    let mut report = FdReport::default();
    let jac = block.jacobian(base);
    for _ in 0..trials.max(1) {
        // Direction supported on the block's slots.
        let mut d = DVector::zeros(layout.dim());
        for slot in block.var_slots() {
            let meta = layout.slot(*slot);
            for i in 0..meta.dim {
                d[meta.offset + i] = rng.random_range(-1.0..1.0);
            }
        }
        let norm = d.norm();
        if norm > 0.0 {
            d /= norm;
        }
        let eval = |t: f64| -> DVector<f64> {
            let probe = retract(layout, base, &(&d * t));
            block.chart_value(base, &probe)
        };
        // Gradient: J d against the first central difference.
        let mut an = DVector::zeros(block.dim());
        for (slot, j) in block.var_slots().iter().zip(&jac) {
            an += j * crate::nlp::slot_dir(layout, &d, *slot);
        }
        let h = FD_GRAD_STEP;
        let fd = (eval(h) - eval(-h)) / (2.0 * h);
        let denom = an.amax().max(1.0);
        report.max_grad_err = report.max_grad_err.max((&fd - &an).amax() / denom);

        // Hessian: weighted quadratic form against the second difference.
        let mut w = DVector::from_fn(block.dim(), |_, _| rng.random_range(-1.0..1.0f64));
        let wn = w.norm();
        if wn > 0.0 {
            w /= wn;
        }
        let q_an = hessian_quadratic_form(layout, &block.weighted_hessian(base, &w), &d);
        let h2 = FD_HESS_STEP;
        let second = eval(h2) - eval(0.0) * 2.0 + eval(-h2);
        let q_fd = w.dot(&second) / (h2 * h2);
        let denom2 = q_an.abs().max(1.0);
        report.max_hess_err = report.max_hess_err.max((q_fd - q_an).abs() / denom2);
    }
    report
}

/// Same oracle for a cost term.
pub fn fd_check_cost(
    cost: &dyn crate::costs::CostTerm,
    layout: &VariableLayout,
    base: &Point,
    trials: usize,
    rng: &mut impl rand::Rng,
) -> FdReport {
    let mut report = FdReport::default();
    for _ in 0..trials.max(1) {
        let mut d = DVector::zeros(layout.dim());
        for slot in cost.var_slots() {
            let meta = layout.slot(*slot);
            for i in 0..meta.dim {
                d[meta.offset + i] = rng.random_range(-1.0..1.0);
            }
        }
        let norm = d.norm();
        if norm > 0.0 {
            d /= norm;
        }
        let eval = |t: f64| cost.value(&retract(layout, base, &(&d * t)));
        let mut an = 0.0;
        for (slot, g) in cost.var_slots().iter().zip(cost.gradient(base)) {
            an += g.dot(&crate::nlp::slot_dir(layout, &d, *slot));
        }
        let h = FD_GRAD_STEP;
        let fd = (eval(h) - eval(-h)) / (2.0 * h);
        report.max_grad_err = report.max_grad_err.max((fd - an).abs() / an.abs().max(1.0));

        let q_an = hessian_quadratic_form(layout, &cost.hessian(base), &d);
        let h2 = FD_HESS_STEP;
        let q_fd = (eval(h2) - 2.0 * eval(0.0) + eval(-h2)) / (h2 * h2);
        report.max_hess_err = report.max_hess_err.max((q_fd - q_an).abs() / q_an.abs().max(1.0));
    }
    report
}

/// Uniformly scaled rows of an inner block: `scale * residual`. Row scaling is
/// an equivalent reformulation of the constraint; the scenarios use it to
/// bring dynamics rows to force/torque units so the KKT system stays well
/// conditioned across timestep sizes.
pub struct ScaledBlock<B: Block> {
    pub inner: B,
    pub scale: f64,
}

impl<B: Block> ScaledBlock<B> {
    pub fn new(inner: B, scale: f64) -> Self {
        ScaledBlock { inner, scale }
    }
}

impl<B: Block> Block for ScaledBlock<B> {
    fn name(&self) -> &'static str {
        self.inner.name()
    }
    fn kind(&self) -> BlockKind {
        self.inner.kind()
    }
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn var_slots(&self) -> &[SlotId] {
        self.inner.var_slots()
    }
    fn value(&self, x: &Point) -> DVector<f64> {
        self.inner.value(x) * self.scale
    }
    fn jacobian(&self, x: &Point) -> Vec<DMatrix<f64>> {
        let mut jac = self.inner.jacobian(x);
        for m in &mut jac {
            *m *= self.scale;
        }
        jac
    }
    fn weighted_hessian(&self, x: &Point, w: &DVector<f64>) -> Vec<HessTriplet> {
        self.inner.weighted_hessian(x, &(w * self.scale))
    }
    fn chart_value(&self, base: &Point, probe: &Point) -> DVector<f64> {
        self.inner.chart_value(base, probe) * self.scale
    }
}

/// Wrapper that corrupts one Jacobian entry; used to verify the detector
/// sensitivity of [`fd_check`] and by the CLI fault-injection mode.
pub struct FaultyBlock<B: Block> {
    pub inner: B,
    pub perturbation: f64,
}

impl<B: Block> Block for FaultyBlock<B> {
    fn name(&self) -> &'static str {
        "faulty"
    }
    fn kind(&self) -> BlockKind {
        self.inner.kind()
    }
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn var_slots(&self) -> &[SlotId] {
        self.inner.var_slots()
    }
    fn value(&self, x: &Point) -> DVector<f64> {
        self.inner.value(x)
    }
    fn jacobian(&self, x: &Point) -> Vec<DMatrix<f64>> {
        let mut jac = self.inner.jacobian(x);
        jac[0][(0, 0)] += self.perturbation;
        jac
    }
    fn weighted_hessian(&self, x: &Point, w: &DVector<f64>) -> Vec<HessTriplet> {
        self.inner.weighted_hessian(x, w)
    }
    fn chart_value(&self, base: &Point, probe: &Point) -> DVector<f64> {
        self.inner.chart_value(base, probe)
    }
}
