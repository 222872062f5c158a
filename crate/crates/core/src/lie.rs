//! SO(3) and so(3) primitives.
//!
//! Rotations are stored as explicit 3x3 matrices since the integrator and all
//! constraint expansions are matrix expressions. Tangent vectors are plain
//! `Vector3<f64>` in the hat/vee coordinates, and the so(3) Lie bracket is the
//! cross product throughout.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

pub type Mat3 = Matrix3<f64>;
pub type Vec3 = Vector3<f64>;

/// Frobenius tolerance on `R^T R - I` and `det(R) - 1` for a valid rotation.
pub const ORTHONORMALITY_TOL: f64 = 1e-10;

/// Skewness tolerance accepted by [`vee`].
pub const SKEW_TOL: f64 = 1e-8;

/// Below this angle the Rodrigues coefficients switch to their Taylor forms.
const SMALL_ANGLE: f64 = 1e-4;

/// `log_so3` switches to the axis-extraction branch when `trace(R) < -1 + NEAR_PI_TRACE`.
const NEAR_PI_TRACE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum LieError {
    #[error("matrix is not skew-symmetric: ||M + M^T||_F = {defect:.3e} exceeds {tol:.1e}")]
    NotSkew { defect: f64, tol: f64 },
    #[error("matrix is not a rotation: orthonormality defect {defect:.3e}")]
    NotRotation { defect: f64 },
}

/// Orthonormal 3x3 matrix with determinant +1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation {
    mat: Mat3,
}

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

impl Rotation {
    pub fn identity() -> Self {
        Rotation { mat: Mat3::identity() }
    }

    /// Validates the rotation invariants before wrapping the matrix.
    pub fn try_new(mat: Mat3) -> Result<Self, LieError> {
        let defect = orthonormality_defect(&mat);
        if defect > ORTHONORMALITY_TOL {
            return Err(LieError::NotRotation { defect });
        }
        Ok(Rotation { mat })
    }

    /// Wraps a matrix that is already known to be a rotation.
    pub fn from_matrix_unchecked(mat: Mat3) -> Self {
        Rotation { mat }
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.mat
    }

    pub fn transpose(&self) -> Rotation {
        Rotation { mat: self.mat.transpose() }
    }

    /// Same as [`Rotation::transpose`]; rotations are orthogonal.
    pub fn inverse(&self) -> Rotation {
        self.transpose()
    }

    pub fn apply(&self, v: &Vec3) -> Vec3 {
        self.mat * v
    }

    /// Frobenius norm of `R^T R - I`.
    pub fn ortho_defect(&self) -> f64 {
        orthonormality_defect(&self.mat)
    }

    /// Projects back onto SO(3) when finite arithmetic has drifted past the
    /// orthonormality tolerance. Uses the Newton iteration for the polar
    /// factor, which converges quadratically from near-orthogonal input.
    pub fn renormalize(&mut self) {
        if self.ortho_defect() <= ORTHONORMALITY_TOL {
            return;
        }
        let mut x = self.mat;
        for _ in 0..20 {
            let next = (x + x.transpose().try_inverse().expect("polar iteration singular")) * 0.5;
            let delta = (next - x).norm();
            x = next;
            if delta < 1e-15 {
                break;
            }
        }
        self.mat = x;
    }

    pub fn renormalized(mut self) -> Rotation {
        self.renormalize();
        self
    }
}

impl std::ops::Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation { mat: self.mat * rhs.mat }
    }
}

impl std::ops::Mul for &Rotation {
    type Output = Rotation;
    fn mul(self, rhs: &Rotation) -> Rotation {
        Rotation { mat: self.mat * rhs.mat }
    }
}

fn orthonormality_defect(mat: &Mat3) -> f64 {
    let gram = (mat.transpose() * mat - Mat3::identity()).norm();
    let det = (mat.determinant() - 1.0).abs();
    gram.max(det)
}

/// Cross-product matrix: `hat(v) w = v x w`.
pub fn hat(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`hat`]. Rejects matrices whose symmetric part exceeds [`SKEW_TOL`].
pub fn vee(m: &Mat3) -> Result<Vec3, LieError> {
    let defect = (m + m.transpose()).norm();
    if defect > SKEW_TOL {
        return Err(LieError::NotSkew { defect, tol: SKEW_TOL });
    }
    Ok(vee_unchecked(m))
}

/// Extracts the vector of the antisymmetric part of `m` without validating.
///
/// For `m = hat(v)` this returns `v` exactly.
pub fn vee_unchecked(m: &Mat3) -> Vec3 {
    Vec3::new(
        0.5 * (m[(2, 1)] - m[(1, 2)]),
        0.5 * (m[(0, 2)] - m[(2, 0)]),
        0.5 * (m[(1, 0)] - m[(0, 1)]),
    )
}

/// Exponential map so(3) -> SO(3) via the Rodrigues formula.
pub fn exp_so3(phi: &Vec3) -> Rotation {
    let theta2 = phi.norm_squared();
    let theta = theta2.sqrt();
    let (a, b) = if theta < SMALL_ANGLE {
        // 4th-order Taylor branches of sin(t)/t and (1-cos(t))/t^2.
        (
            1.0 - theta2 / 6.0 + theta2 * theta2 / 120.0,
            0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0,
        )
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    let k = hat(phi);
    Rotation { mat: Mat3::identity() + k * a + k * k * b }
}

/// Logarithm map SO(3) -> so(3); the returned coordinates have norm in `[0, pi]`.
///
/// Near angle pi the sin-normalized formula loses all precision, so the axis is
/// recovered from the symmetric part of `R` instead, with the sign fixed by the
/// antisymmetric part whenever it is nonzero.
pub fn log_so3(r: &Rotation) -> Vec3 {
    let m = r.matrix();
    let tr = m.trace();
    let cos_theta = ((tr - 1.0) * 0.5).clamp(-1.0, 1.0);
    let w = vee_unchecked(m); // sin(theta) * axis
    let sin_theta = w.norm();
    let theta = sin_theta.atan2(cos_theta);

    if tr < -1.0 + NEAR_PI_TRACE {
        // Axis from B = (R + R^T)/2 - cos(theta) I = (1 - cos(theta)) a a^T.
        let b = (m + m.transpose()) * 0.5 - Mat3::identity() * cos_theta;
        let k = (0..3)
            .max_by(|&i, &j| b[(i, i)].partial_cmp(&b[(j, j)]).unwrap())
            .unwrap();
        let col = b.column(k).into_owned();
        let mut axis = col / col.norm();
        if sin_theta > 1e-12 {
            if axis.dot(&w) < 0.0 {
                axis = -axis;
            }
        } else {
            // Angle is pi to machine precision; both signs are valid. Pick the
            // sign that makes the largest-magnitude component positive.
            let dominant = (0..3)
                .max_by(|&i, &j| axis[i].abs().partial_cmp(&axis[j].abs()).unwrap())
                .unwrap();
            if axis[dominant] < 0.0 {
                axis = -axis;
            }
        }
        return axis * theta;
    }

    if theta < SMALL_ANGLE {
        // theta/sin(theta) = 1 + theta^2/6 + 7 theta^4/360 + ...
        let t2 = theta * theta;
        return w * (1.0 + t2 / 6.0 + 7.0 * t2 * t2 / 360.0);
    }

    w * (theta / sin_theta)
}

/// Adjoint action of SO(3) on so(3) coordinates: `hat(result) = R hat(xi) R^T`,
/// which reduces to the matrix-vector product `R xi`.
pub fn adjoint_rot(r: &Rotation, xi: &Vec3) -> Vec3 {
    r.matrix() * xi
}

/// Baker-Campbell-Hausdorff series truncated at the bracket term:
/// `log(exp(a) exp(b)) = a + b + [a, b]/2 + O(|.|^3)`.
pub fn bch2(a: &Vec3, b: &Vec3) -> Vec3 {
    a + b + 0.5 * a.cross(b)
}

/// Second-order expansion data for a chain product `X_1 exp(t xi_1) ... X_n exp(t xi_n)`
/// vectorized around its operating point `Y = X_1 ... X_n`:
///
/// `log(Y^-1 prod_i X_i exp(t xi_i)) = t sum_i A_i xi_i
///     + (t^2/2) sum_{i<j} [A_i xi_i, A_j xi_j] + O(t^3)`
///
/// where `A_i` is the adjoint of the inverse tail product `X_{i+1} ... X_n`.
#[derive(Debug, Clone)]
pub struct ChainExpansion {
    coeffs: Vec<Mat3>,
}

/// Builds the expansion coefficients for the given operating points.
pub fn chain_second_order(points: &[Rotation]) -> ChainExpansion {
    assert!(!points.is_empty(), "chain must have at least one element");
    let n = points.len();
    let mut coeffs = vec![Mat3::identity(); n];
    // Tail products X_{i+1} .. X_n, built right to left; A_i = tail^T.
    let mut tail = Rotation::identity();
    for i in (0..n).rev() {
        coeffs[i] = tail.matrix().transpose();
        tail = points[i] * tail;
    }
    ChainExpansion { coeffs }
}

impl ChainExpansion {
    /// Gradient coefficient matrices, one linear map per chain element.
    pub fn gradient_maps(&self) -> &[Mat3] {
        &self.coeffs
    }

    /// First-order coefficient of `t` for the given directions.
    pub fn first_order(&self, dirs: &[Vec3]) -> Vec3 {
        assert_eq!(dirs.len(), self.coeffs.len());
        let mut out = Vec3::zeros();
        for (a, xi) in self.coeffs.iter().zip(dirs) {
            out += a * xi;
        }
        out
    }

    /// Coefficient of `t^2`: half the sum of brackets over ordered pairs `i < j`.
    pub fn second_order(&self, dirs: &[Vec3]) -> Vec3 {
        let transported: Vec<Vec3> = self.coeffs.iter().zip(dirs).map(|(a, xi)| a * xi).collect();
        let mut out = Vec3::zeros();
        for i in 0..transported.len() {
            for j in (i + 1)..transported.len() {
                out += 0.5 * transported[i].cross(&transported[j]);
            }
        }
        out
    }

    /// The individual half-bracket terms `((i, j), [A_i xi_i, A_j xi_j] / 2)`.
    pub fn bracket_terms(&self, dirs: &[Vec3]) -> Vec<((usize, usize), Vec3)> {
        let transported: Vec<Vec3> = self.coeffs.iter().zip(dirs).map(|(a, xi)| a * xi).collect();
        let mut out = Vec::new();
        for i in 0..transported.len() {
            for j in (i + 1)..transported.len() {
                out.push(((i, j), 0.5 * transported[i].cross(&transported[j])));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn rand_vec3(rng: &mut StdRng, scale: f64) -> Vec3 {
        Vec3::new(
            rng.random_range(-scale..scale),
            rng.random_range(-scale..scale),
            rng.random_range(-scale..scale),
        )
    }

    fn rand_rotation(rng: &mut StdRng) -> Rotation {
        exp_so3(&rand_vec3(rng, 2.0))
    }

    /// 30-term matrix power series of exp(hat(phi)); independent oracle.
    fn exp_series(phi: &Vec3) -> Mat3 {
        let k = hat(phi);
        let mut term = Mat3::identity();
        let mut sum = Mat3::identity();
        for n in 1..=30 {
            term = term * k / n as f64;
            sum += term;
        }
        sum
    }

    #[test]
    fn hat_matches_cross_product() {
        let mut rng = StdRng::seed_from_u64(7);
        assert_eq!(hat(&Vec3::zeros()), Mat3::zeros());
        let e1 = hat(&Vec3::new(1.0, 0.0, 0.0));
        let expected = Mat3::new(0.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0);
        assert_eq!(e1, expected);
        for _ in 0..100 {
            let v = rand_vec3(&mut rng, 5.0);
            let w = rand_vec3(&mut rng, 5.0);
            // Componentwise cross-product oracle.
            let cross = Vec3::new(
                v.y * w.z - v.z * w.y,
                v.z * w.x - v.x * w.z,
                v.x * w.y - v.y * w.x,
            );
            assert!((hat(&v) * w - cross).norm() == 0.0);
        }
    }

    #[test]
    fn vee_round_trip_and_skew_check() {
        assert_eq!(vee(&Mat3::zeros()).unwrap(), Vec3::zeros());
        let v = Vec3::new(1.0, 2.0, 3.0);
        assert_eq!(vee(&hat(&v)).unwrap(), v);
        // ||M + M^T|| = 1 must be rejected.
        let mut m = Mat3::zeros();
        m[(0, 0)] = 0.5;
        match vee(&m) {
            Err(LieError::NotSkew { .. }) => {}
            other => panic!("expected NotSkew, got {other:?}"),
        }
    }

    #[test]
    fn hat_vee_round_trips() {
        let mut rng = StdRng::seed_from_u64(8);
        for _ in 0..200 {
            let v = rand_vec3(&mut rng, 10.0);
            assert_eq!(vee(&hat(&v)).unwrap(), v);
            let m = hat(&rand_vec3(&mut rng, 10.0));
            assert!((hat(&vee(&m).unwrap()) - m).norm() <= 1e-12);
        }
    }

    #[test]
    fn exp_basic_values() {
        assert_eq!(exp_so3(&Vec3::zeros()).matrix(), &Mat3::identity());
        let r = exp_so3(&Vec3::new(std::f64::consts::FRAC_PI_2, 0.0, 0.0));
        let expected = Mat3::new(1.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0);
        assert!((r.matrix() - expected).norm() < 1e-15);
    }

    #[test]
    fn exp_matches_series_oracle() {
        let mut rng = StdRng::seed_from_u64(9);
        for _ in 0..200 {
            let phi = rand_vec3(&mut rng, 3.0);
            let r = exp_so3(&phi);
            assert!((r.matrix() - exp_series(&phi)).norm() < 1e-12);
            assert!(r.ortho_defect() < 1e-12);
        }
        // Small angles hit the Taylor branch.
        for _ in 0..200 {
            let phi = rand_vec3(&mut rng, 1e-5);
            assert!((exp_so3(&phi).matrix() - exp_series(&phi)).norm() < 1e-15);
        }
    }

    #[test]
    fn exp_valid_for_large_inputs() {
        let mut rng = StdRng::seed_from_u64(10);
        for _ in 0..10_000 {
            let phi = rand_vec3(&mut rng, 10.0 / 3f64.sqrt());
            assert!(exp_so3(&phi).ortho_defect() <= ORTHONORMALITY_TOL);
        }
    }

    #[test]
    fn log_exp_round_trip_below_cut_locus() {
        let mut rng = StdRng::seed_from_u64(11);
        let phi0 = Vec3::new(0.3, -0.2, 0.1);
        assert!((log_so3(&exp_so3(&phi0)) - phi0).norm() < 1e-14);
        for _ in 0..2000 {
            let dir = rand_vec3(&mut rng, 1.0).normalize();
            let theta = rng.random_range(0.0..std::f64::consts::PI - 1e-3);
            let phi = dir * theta;
            assert!((log_so3(&exp_so3(&phi)) - phi).norm() <= 1e-10);
        }
        assert_eq!(log_so3(&Rotation::identity()), Vec3::zeros());
    }

    #[test]
    fn exp_log_round_trip_including_pi() {
        let mut rng = StdRng::seed_from_u64(12);
        // Exact pi rotation about x.
        let r = Rotation::try_new(Mat3::from_diagonal(&Vec3::new(1.0, -1.0, -1.0))).unwrap();
        let phi = log_so3(&r);
        assert!((phi.norm() - std::f64::consts::PI).abs() < 1e-12);
        assert!((phi - Vec3::new(std::f64::consts::PI, 0.0, 0.0)).norm() < 1e-9);
        assert!((exp_so3(&phi).matrix() - r.matrix()).norm() <= 1e-9);
        // Random rotations with angles arbitrarily close to pi.
        for i in 0..2000 {
            let dir = rand_vec3(&mut rng, 1.0).normalize();
            let theta = if i % 4 == 0 {
                std::f64::consts::PI - 10f64.powf(rng.random_range(-12.0..-1.0))
            } else {
                rng.random_range(0.0..std::f64::consts::PI)
            };
            let r = exp_so3(&(dir * theta));
            let phi = log_so3(&r);
            assert!(phi.norm() <= std::f64::consts::PI + 1e-12);
            assert!(
                (exp_so3(&phi).matrix() - r.matrix()).norm() <= 1e-9,
                "round trip failed at theta={theta}"
            );
        }
    }

    #[test]
    fn adjoint_is_rotation_action() {
        let mut rng = StdRng::seed_from_u64(13);
        let xi = Vec3::new(0.4, -1.0, 2.0);
        assert_eq!(adjoint_rot(&Rotation::identity(), &xi), xi);
        for _ in 0..100 {
            let r = rand_rotation(&mut rng);
            let xi = rand_vec3(&mut rng, 2.0);
            let ad = adjoint_rot(&r, &xi);
            // Conjugation oracle via hat/vee.
            let conj = r.matrix() * hat(&xi) * r.matrix().transpose();
            assert!((hat(&ad) - conj).norm() < 1e-13);
            // Homomorphism property.
            let r2 = rand_rotation(&mut rng);
            let lhs = adjoint_rot(&(r * r2), &xi);
            let rhs = adjoint_rot(&r, &adjoint_rot(&r2, &xi));
            assert!((lhs - rhs).norm() < 1e-13);
        }
    }

    #[test]
    fn bch2_formula_values() {
        let a = Vec3::new(0.3, 0.1, -0.2);
        assert_eq!(bch2(&a, &Vec3::zeros()), a);
        let eps = 1e-3;
        let out = bch2(&Vec3::new(eps, 0.0, 0.0), &Vec3::new(0.0, eps, 0.0));
        assert!((out - Vec3::new(eps, eps, eps * eps / 2.0)).norm() < 1e-18);
    }

    #[test]
    fn bch2_cubic_remainder_on_halving_sequence() {
        let mut rng = StdRng::seed_from_u64(14);
        // ||log(exp(a) exp(b)) - bch2(a, b)|| should shrink by ~8x per halving.
        let mut ratios = Vec::new();
        for _ in 0..40 {
            let da = rand_vec3(&mut rng, 1.0).normalize();
            let db = rand_vec3(&mut rng, 1.0).normalize();
            let mut last_err = None;
            for k in 2..=7 {
                let s = 2f64.powi(-k);
                let (a, b) = (da * s, db * s);
                let exact = log_so3(&(exp_so3(&a) * exp_so3(&b)));
                let err = (exact - bch2(&a, &b)).norm();
                if let Some(prev) = last_err {
                    if err > 1e-14 {
                        ratios.push(prev / err);
                    }
                }
                last_err = Some(err);
            }
        }
        let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
        assert!((6.4..=9.6).contains(&mean), "mean halving ratio {mean}");
    }

    #[test]
    fn chain_single_element_is_identity_map() {
        let mut rng = StdRng::seed_from_u64(15);
        let x = rand_rotation(&mut rng);
        let chain = chain_second_order(&[x]);
        assert_eq!(chain.gradient_maps().len(), 1);
        assert!((chain.gradient_maps()[0] - Mat3::identity()).norm() < 1e-15);
        let xi = rand_vec3(&mut rng, 1.0);
        assert!(chain.second_order(&[xi]).norm() == 0.0);
    }

    #[test]
    fn chain_identity_points_reduce_to_bch() {
        let chain = chain_second_order(&[Rotation::identity(), Rotation::identity()]);
        let xi1 = Vec3::new(0.1, 0.2, 0.3);
        let xi2 = Vec3::new(-0.4, 0.0, 0.2);
        let first = chain.first_order(&[xi1, xi2]);
        assert!((first - (xi1 + xi2)).norm() < 1e-15);
        let second = chain.second_order(&[xi1, xi2]);
        assert!((second - 0.5 * xi1.cross(&xi2)).norm() < 1e-15);
    }

    #[test]
    fn chain_collinear_directions_have_zero_brackets() {
        let dirs = [Vec3::new(0.2, 0.1, -0.3), Vec3::new(0.4, 0.2, -0.6), Vec3::new(-0.2, -0.1, 0.3)];
        let chain =
            chain_second_order(&[Rotation::identity(), Rotation::identity(), Rotation::identity()]);
        assert!(chain.second_order(&dirs).norm() < 1e-16);
        for (_, term) in chain.bracket_terms(&dirs) {
            assert!(term.norm() < 1e-16);
        }
    }

    #[test]
    fn chain_second_difference_matches_fd_oracle() {
        // Evaluate f(t) = log(Ybar^-1 prod X_i exp(t xi_i)) on a 3-element chain
        // and compare first/second order coefficients against central finite
        // differences in t.
        let mut rng = StdRng::seed_from_u64(16);
        for _ in 0..50 {
            let points: Vec<Rotation> = (0..3).map(|_| rand_rotation(&mut rng)).collect();
            let dirs: Vec<Vec3> = (0..3).map(|_| rand_vec3(&mut rng, 1.0)).collect();
            let ybar = points.iter().copied().reduce(|a, b| a * b).unwrap();
            let eval = |t: f64| -> Vec3 {
                let mut prod = ybar.transpose();
                for (x, xi) in points.iter().zip(&dirs) {
                    prod = prod * *x * exp_so3(&(xi * t));
                }
                log_so3(&prod)
            };
            let chain = chain_second_order(&points);
            let h = 1e-5;
            let fd_grad = (eval(h) - eval(-h)) / (2.0 * h);
            let an_grad = chain.first_order(&dirs);
            assert!((fd_grad - an_grad).norm() < 1e-8, "gradient mismatch");
            let fd_hess = (eval(h) - eval(0.0) * 2.0 + eval(-h)) / (h * h);
            let an_hess = chain.second_order(&dirs) * 2.0;
            assert!((fd_hess - an_hess).norm() < 1e-4, "second order mismatch");
        }
    }

    #[test]
    fn renormalize_projects_back_to_group() {
        let mut rng = StdRng::seed_from_u64(17);
        for _ in 0..50 {
            let r = rand_rotation(&mut rng);
            // Inject drift well past the tolerance.
            let noise = Mat3::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let drifted = r.matrix() + noise * 1e-7;
            let mut rot = Rotation::from_matrix_unchecked(drifted);
            rot.renormalize();
            assert!(rot.ortho_defect() < 1e-14);
            assert!((rot.matrix() - r.matrix()).norm() < 1e-6);
        }
    }
}
