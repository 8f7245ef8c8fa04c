//! Polynomial camera trajectories over the normalized row `s = i / (r - 1)`.
//!
//! Degree 3 is the smoothing model applied to estimated motion; degree 2 is
//! the synthesis model for training data.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::linalg::Qr;
use crate::{Error, MotionCurve, Real, Result};

/// Normalization tag written alongside serialized trajectories.
pub const NORMALIZATION: &str = "s=i/(r-1)";

/// `t_x(s)` and `r_z(s)` as polynomials with ascending coefficients
/// (`c0 + c1 s + c2 s^2 + ...`), `t_x` in pixels and `r_z` in radians.
#[derive(Debug, Clone, PartialEq)]
pub struct PolynomialTrajectory {
    degree: usize,
    coeffs_tx: Vec<f64>,
    coeffs_rz: Vec<f64>,
}

impl PolynomialTrajectory {
    pub fn new(degree: usize, coeffs_tx: Vec<f64>, coeffs_rz: Vec<f64>) -> Result<Self> {
        check_degree(degree)?;
        if coeffs_tx.len() != degree + 1 {
            return Err(Error::dim("t_x coefficients", degree + 1, coeffs_tx.len()));
        }
        if coeffs_rz.len() != degree + 1 {
            return Err(Error::dim("r_z coefficients", degree + 1, coeffs_rz.len()));
        }
        if coeffs_tx.iter().chain(&coeffs_rz).any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("trajectory coefficients"));
        }
        Ok(Self {
            degree,
            coeffs_tx,
            coeffs_rz,
        })
    }

    pub fn zero(degree: usize) -> Result<Self> {
        Self::new(degree, vec![0.0; degree + 1], vec![0.0; degree + 1])
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn coeffs_tx(&self) -> &[f64] {
        &self.coeffs_tx
    }

    pub fn coeffs_rz(&self) -> &[f64] {
        &self.coeffs_rz
    }

    /// `(t_x, r_z)` at normalized row `s`.
    pub fn eval_at(&self, s: f64) -> (f64, f64) {
        (horner(&self.coeffs_tx, s), horner(&self.coeffs_rz, s))
    }

    /// Trajectory `q(s) = p(scale * s + offset)`, used to re-express a
    /// trajectory after cropping rows.
    pub fn reparameterize(&self, scale: f64, offset: f64) -> Self {
        Self {
            degree: self.degree,
            coeffs_tx: compose_affine(&self.coeffs_tx, scale, offset),
            coeffs_rz: compose_affine(&self.coeffs_rz, scale, offset),
        }
    }

    /// Largest `|t_x|` and `|r_z|` over `s` in `[0, 1]`, sampled at `n`
    /// evenly spaced points.
    pub fn sampled_extent(&self, n: usize) -> (f64, f64) {
        let mut out = (0.0f64, 0.0f64);
        for k in 0..n {
            let s = k as f64 / (n - 1).max(1) as f64;
            let (t, r) = self.eval_at(s);
            out.0 = out.0.max(t.abs());
            out.1 = out.1.max(r.abs());
        }
        out
    }
}

fn check_degree(degree: usize) -> Result<()> {
    if degree == 2 || degree == 3 {
        Ok(())
    } else {
        Err(Error::Degree(degree))
    }
}

fn horner(coeffs: &[f64], s: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * s + c)
}

/// Ascending coefficients of `p(a s + b)`.
fn compose_affine(coeffs: &[f64], a: f64, b: f64) -> Vec<f64> {
    let n = coeffs.len();
    let mut out = vec![0.0; n];
    // (a s + b)^k expanded with binomial coefficients
    let mut pow = vec![0.0; n];
    pow[0] = 1.0;
    for (k, &c) in coeffs.iter().enumerate() {
        if k > 0 {
            let prev = pow.clone();
            for m in 0..n {
                pow[m] = prev[m] * b + if m > 0 { prev[m - 1] * a } else { 0.0 };
            }
        }
        for m in 0..=k {
            out[m] += c * pow[m];
        }
    }
    out
}

/// Normalized row of index `i` in an `r`-row image.
#[inline]
pub fn normalized_row(i: usize, r: usize) -> f64 {
    i as f64 / (r - 1) as f64
}

fn vandermonde(r: usize, degree: usize) -> Vec<f64> {
    let cols = degree + 1;
    let mut v = Vec::with_capacity(r * cols);
    for i in 0..r {
        let s = normalized_row(i, r);
        let mut p = 1.0;
        for _ in 0..cols {
            v.push(p);
            p *= s;
        }
    }
    v
}

/// Least-squares polynomial fit of both motion components.
///
/// Each component is fitted independently by minimizing the sum of
/// squared residuals over rows; solved by Householder QR.
pub fn fit_trajectory<T: Real>(
    curve: &MotionCurve<T>,
    degree: usize,
) -> Result<PolynomialTrajectory> {
    check_degree(degree)?;
    let r = curve.len();
    if r < degree + 1 || r < 2 {
        return Err(Error::Underdetermined { rows: r, degree });
    }
    let qr = Qr::new(r, degree + 1, &vandermonde(r, degree))?;
    let tx: Vec<f64> = curve.tx().iter().map(|v| v.as_f64()).collect();
    let rz: Vec<f64> = curve.rz().iter().map(|v| v.as_f64()).collect();
    PolynomialTrajectory::new(degree, qr.solve(&tx), qr.solve(&rz))
}

/// Evaluates a trajectory at `s = i / (r - 1)` for `i = 0..r`.
pub fn eval_trajectory<T: Real>(traj: &PolynomialTrajectory, r: usize) -> Result<MotionCurve<T>> {
    if r < 2 {
        return Err(Error::InvalidArgument("trajectory evaluation needs r >= 2"));
    }
    let (tx, rz) = (0..r)
        .map(|i| {
            let (t, z) = traj.eval_at(normalized_row(i, r));
            (T::of(t), T::of(z))
        })
        .unzip();
    MotionCurve::new(tx, rz)
}

/// Largest tolerated `|t_x|` (pixels) and `|r_z|` (radians).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionRanges {
    pub max_tx: f64,
    pub max_rz: f64,
}

impl MotionRanges {
    pub const DEFAULT_MAX_TX_PX: f64 = 10.0;
    pub const DEFAULT_MAX_RZ_DEG: f64 = 4.0;

    pub fn from_degrees(max_tx: f64, max_rz_deg: f64) -> Self {
        Self {
            max_tx,
            max_rz: max_rz_deg.to_radians(),
        }
    }
}

impl Default for MotionRanges {
    fn default() -> Self {
        Self::from_degrees(Self::DEFAULT_MAX_TX_PX, Self::DEFAULT_MAX_RZ_DEG)
    }
}

/// Exact maximum of `|c0 + c1 s + c2 s^2|` over `[0, 1]`.
fn quadratic_extent(c: &[f64]) -> f64 {
    let mut m = horner(c, 0.0).abs().max(horner(c, 1.0).abs());
    if c[2] != 0.0 {
        let vertex = -c[1] / (2.0 * c[2]);
        if vertex > 0.0 && vertex < 1.0 {
            m = m.max(horner(c, vertex).abs());
        }
    }
    m
}

fn random_quadratic(rng: &mut ChaCha8Rng, bound: f64) -> Vec<f64> {
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(bound > 0.0) {
        return vec![0.0; 3];
    }
    loop {
        let c: Vec<f64> = (0..3)
            .map(|_| (rng.gen::<f64>() * 2.0 - 1.0) * bound)
            .collect();
        if quadratic_extent(&c) <= bound {
            return c;
        }
    }
}

/// Seeded degree-2 trajectory whose curve stays within `ranges` on `[0, 1]`.
///
/// Coefficients are drawn uniformly from `[-bound, bound]` and rejected
/// until the polynomial's extent on `[0, 1]` fits; this also bounds the
/// slope by `3 * bound` per unit `s`.
pub fn random_trajectory(seed: u64, ranges: MotionRanges) -> PolynomialTrajectory {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tx = random_quadratic(&mut rng, ranges.max_tx);
    let rz = random_quadratic(&mut rng, ranges.max_rz);
    PolynomialTrajectory {
        degree: 2,
        coeffs_tx: tx,
        coeffs_rz: rz,
    }
}

/// Orthogonal projection of per-row curves onto polynomials of a fixed
/// degree: the map `curve -> eval(fit(curve))`.
///
/// The projection is linear and symmetric, so it is its own adjoint in the
/// backward pass.
#[derive(Debug, Clone)]
pub struct TrajectoryProjection<T> {
    rows: usize,
    degree: usize,
    /// Row-major `rows x rows`.
    matrix: Vec<T>,
}

impl<T: Real> TrajectoryProjection<T> {
    pub fn new(rows: usize, degree: usize) -> Result<Self> {
        check_degree(degree)?;
        if rows < degree + 1 || rows < 2 {
            return Err(Error::Underdetermined { rows, degree });
        }
        let v = vandermonde(rows, degree);
        let qr = Qr::new(rows, degree + 1, &v)?;
        let cols = degree + 1;
        let mut matrix = vec![T::zero(); rows * rows];
        let mut e = vec![0.0; rows];
        for j in 0..rows {
            e.fill(0.0);
            e[j] = 1.0;
            let c = qr.solve(&e);
            for i in 0..rows {
                let mut s = 0.0;
                for k in 0..cols {
                    s += v[i * cols + k] * c[k];
                }
                matrix[i * rows + j] = T::of(s);
            }
        }
        Ok(Self {
            rows,
            degree,
            matrix,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn matrix(&self) -> &[T] {
        &self.matrix
    }

    /// `P * values`.
    pub fn apply(&self, values: &[T]) -> Vec<T> {
        assert_eq!(values.len(), self.rows);
        self.matrix
            .chunks_exact(self.rows)
            .map(|row| row.iter().zip(values).map(|(&p, &v)| p * v).sum())
            .collect()
    }

    /// `P^T * grad` (equal to `P * grad`).
    pub fn apply_transpose(&self, grad: &[T]) -> Vec<T> {
        assert_eq!(grad.len(), self.rows);
        let mut out = vec![T::zero(); self.rows];
        for (row, &g) in self.matrix.chunks_exact(self.rows).zip(grad) {
            for (o, &p) in out.iter_mut().zip(row) {
                *o += p * g;
            }
        }
        out
    }

    pub fn project(&self, curve: &MotionCurve<T>) -> Result<MotionCurve<T>> {
        curve.check_rows(self.rows)?;
        MotionCurve::new(self.apply(curve.tx()), self.apply(curve.rz()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Normal equations `V^T V c = V^T y` solved by Gaussian elimination with
    /// partial pivoting.
    #[allow(clippy::needless_range_loop)]
    fn normal_equations(r: usize, degree: usize, y: &[f64]) -> Vec<f64> {
        let n = degree + 1;
        let mut a = vec![vec![0.0; n + 1]; n];
        for i in 0..r {
            let s = i as f64 / (r - 1) as f64;
            let pows: Vec<f64> = (0..n).map(|k| s.powi(k as i32)).collect();
            for p in 0..n {
                for q in 0..n {
                    a[p][q] += pows[p] * pows[q];
                }
                a[p][n] += pows[p] * y[i];
            }
        }
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&x, &y| a[x][col].abs().partial_cmp(&a[y][col].abs()).unwrap())
                .unwrap();
            a.swap(col, piv);
            for row in col + 1..n {
                let f = a[row][col] / a[col][col];
                for k in col..=n {
                    a[row][k] -= f * a[col][k];
                }
            }
        }
        let mut x = vec![0.0; n];
        for row in (0..n).rev() {
            let mut s = a[row][n];
            for k in row + 1..n {
                s -= a[row][k] * x[k];
            }
            x[row] = s / a[row][row];
        }
        x
    }

    fn residual(curve: &[f64], coeffs: &[f64]) -> f64 {
        let r = curve.len();
        (0..r)
            .map(|i| (curve[i] - horner(coeffs, normalized_row(i, r))).powi(2))
            .sum()
    }

    #[test]
    fn recovers_cubic_exactly() {
        let traj = PolynomialTrajectory::new(
            3,
            vec![1.5, -4.0, 7.25, -3.0],
            vec![0.01, 0.02, -0.05, 0.03],
        )
        .unwrap();
        let curve = eval_trajectory::<f64>(&traj, 40).unwrap();
        let fit = fit_trajectory(&curve, 3).unwrap();
        for (a, b) in fit.coeffs_tx().iter().zip(traj.coeffs_tx()) {
            assert!((a - b).abs() < 1e-9);
        }
        for (a, b) in fit.coeffs_rz().iter().zip(traj.coeffs_rz()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_curve() {
        let curve = MotionCurve::<f64>::constant(20, 5.0, 0.0);
        let fit = fit_trajectory(&curve, 3).unwrap();
        for (a, b) in fit.coeffs_tx().iter().zip([5.0, 0.0, 0.0, 0.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn noisy_quadratic_matches_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(64);
        let r = 64;
        let y: Vec<f64> = (0..r)
            .map(|i| {
                let s = normalized_row(i, r);
                2.0 - 3.0 * s + 4.0 * s * s + (rng.gen::<f64>() - 0.5) * 0.4
            })
            .collect();
        let curve = MotionCurve::new(y.clone(), vec![0.0; r]).unwrap();
        let fit = fit_trajectory(&curve, 2).unwrap();
        let oracle = normal_equations(r, 2, &y);
        assert!((residual(&y, fit.coeffs_tx()) - residual(&y, &oracle)).abs() < 1e-8);
        for (a, b) in fit.coeffs_tx().iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-8);
        }
        // no random competitor beats the fit
        for _ in 0..200 {
            let comp: Vec<f64> = oracle
                .iter()
                .map(|c| c + (rng.gen::<f64>() - 0.5) * 0.1)
                .collect();
            assert!(residual(&y, &comp) >= residual(&y, fit.coeffs_tx()));
        }
    }

    #[test]
    fn underdetermined_rejected() {
        let curve = MotionCurve::<f64>::zeros(3);
        assert_eq!(
            fit_trajectory(&curve, 3),
            Err(Error::Underdetermined { rows: 3, degree: 3 })
        );
        assert!(fit_trajectory(&curve, 2).is_ok());
        assert_eq!(fit_trajectory(&curve, 4), Err(Error::Degree(4)));
    }

    #[test]
    fn eval_square_ramp() {
        let traj = PolynomialTrajectory::new(2, vec![0.0, 0.0, 1.0], vec![0.0; 3]).unwrap();
        let c = eval_trajectory::<f64>(&traj, 11).unwrap();
        for i in 0..11 {
            assert_eq!(c.tx()[i], (i as f64 / 10.0).powi(2));
        }
        assert!(eval_trajectory::<f64>(&traj, 1).is_err());
    }

    #[test]
    fn eval_fit_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        for _ in 0..20 {
            let c: Vec<f64> = (0..4).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let z: Vec<f64> = (0..4).map(|_| rng.gen_range(-0.1..0.1)).collect();
            let traj = PolynomialTrajectory::new(3, c, z).unwrap();
            let fit = fit_trajectory(&eval_trajectory::<f64>(&traj, 16).unwrap(), 3).unwrap();
            let err = fit
                .coeffs_tx()
                .iter()
                .zip(traj.coeffs_tx())
                .chain(fit.coeffs_rz().iter().zip(traj.coeffs_rz()))
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(err < 1e-9);
        }
    }

    #[test]
    fn random_trajectories_respect_ranges() {
        let ranges = MotionRanges::default();
        for seed in 0..1000 {
            let t = random_trajectory(seed, ranges);
            assert_eq!(t.degree(), 2);
            let (mt, mr) = t.sampled_extent(1000);
            assert!(mt <= ranges.max_tx + 1e-12);
            assert!(mr <= ranges.max_rz + 1e-12);
        }
    }

    #[test]
    fn random_trajectory_determinism_and_zero_range() {
        let a = random_trajectory(42, MotionRanges::default());
        let b = random_trajectory(42, MotionRanges::default());
        assert_eq!(a, b);
        assert_ne!(a, random_trajectory(43, MotionRanges::default()));
        let z = random_trajectory(
            42,
            MotionRanges {
                max_tx: 0.0,
                max_rz: 0.0,
            },
        );
        assert_eq!(z, PolynomialTrajectory::zero(2).unwrap());
    }

    #[test]
    fn reparameterize_matches_direct_evaluation() {
        let t = random_trajectory(5, MotionRanges::default());
        let q = t.reparameterize(0.7, 0.15);
        for k in 0..=10 {
            let s = k as f64 / 10.0;
            let (a, b) = q.eval_at(s);
            let (c, d) = t.eval_at(0.7 * s + 0.15);
            assert!((a - c).abs() < 1e-12 && (b - d).abs() < 1e-12);
        }
    }

    #[test]
    fn projection_is_idempotent_and_symmetric() {
        let p = TrajectoryProjection::<f64>::new(32, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v: Vec<f64> = (0..32).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let once = p.apply(&v);
        let twice = p.apply(&once);
        for (a, b) in once.iter().zip(&twice) {
            assert!((a - b).abs() < 1e-6);
        }
        for i in 0..32 {
            for j in 0..32 {
                assert!((p.matrix()[i * 32 + j] - p.matrix()[j * 32 + i]).abs() < 1e-12);
            }
        }
        assert_eq!(p.apply_transpose(&v).len(), 32);
    }
}
