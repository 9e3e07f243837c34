//! Twistor (1,0)-forms over the `(z, t)` plane, the connection pencil `Σ = −B₁ dz − B₂ dt`,
//! its flatness and the Painlevé tag read off the pole structure.
//!
//! All components are taken in the rotated frame `σ̃`; the rotation itself is never integrated.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::curvature::{self, three_point_weights};
use crate::error::{Error, Result};
use crate::flow::Trajectory;
use crate::spectral::{self, DetAQuartic, RootSet};
use crate::state::MetricState;

pub type CMat2 = [[C64; 2]; 2];
type Row = [C64; 3];

fn zero() -> C64 {
    C64::new(0.0, 0.0)
}

/// Coefficients of `Θ_r = dz·δ_{r3} + v_r dt + Σ_m A_{rm} σ̃_m` as polynomials in `z`
/// (`a[p][r][m]` multiplies `z^p`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaPolynomial {
    pub a: [[Row; 3]; 3],
    pub v: [Row; 3],
}

/// `(Θ1, Θ2, Θ3)` at one point in the basis `{dz, dt, σ̃1, σ̃2, σ̃3}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaDecomposition {
    pub z: C64,
    pub a: [Row; 3],
    pub v: Row,
    /// `dz`-components; `(0, 0, 1)` by construction.
    pub dz: Row,
}

pub fn theta_polynomial(state: &MetricState) -> Result<ThetaPolynomial> {
    let cof = curvature::coframe(state)?;
    let om = curvature::connection(&cof).omega;
    let sc = cof.scales;
    let i = C64::i();
    let one = C64::new(1.0, 0.0);
    // e-basis vectors (e0, e1, e2, e3), complex.
    let real = |u: [f64; 4]| u.map(|x| C64::new(x, 0.0));
    let diff = |p: usize, q: usize, r: usize, s: usize| -> [f64; 4] { std::array::from_fn(|k| om[p][q][k] - om[r][s][k]) };
    let pp = real(diff(0, 2, 3, 1));
    let qq = real(diff(0, 3, 1, 2));
    let rr = real(diff(0, 1, 2, 3));
    let mut e_coeffs = [[[zero(); 4]; 3]; 3];
    e_coeffs[0][0] = [-one, -i, zero(), zero()];
    e_coeffs[1][0] = [zero(), zero(), one, i];
    e_coeffs[0][1] = [zero(), zero(), one, -i];
    e_coeffs[1][1] = [one, -i, zero(), zero()];
    e_coeffs[0][2] = std::array::from_fn(|k| (pp[k] - i * qq[k]) * 0.5);
    e_coeffs[1][2] = std::array::from_fn(|k| -i * rr[k]);
    e_coeffs[2][2] = std::array::from_fn(|k| (pp[k] + i * qq[k]) * 0.5);
    let mut out = ThetaPolynomial { a: [[[zero(); 3]; 3]; 3], v: [[zero(); 3]; 3] };
    for p in 0..3 {
        for r in 0..3 {
            let u = e_coeffs[p][r];
            out.v[p][r] = u[0] * sc[0];
            for m in 0..3 {
                out.a[p][r][m] = u[m + 1] * sc[m + 1];
            }
        }
    }
    Ok(out)
}

impl ThetaPolynomial {
    pub fn at(&self, z: C64) -> ThetaDecomposition {
        let z2 = z * z;
        let a = std::array::from_fn(|r| std::array::from_fn(|m| self.a[0][r][m] + self.a[1][r][m] * z + self.a[2][r][m] * z2));
        let v = std::array::from_fn(|r| self.v[0][r] + self.v[1][r] * z + self.v[2][r] * z2);
        ThetaDecomposition { z, a, v, dz: [zero(), zero(), C64::new(1.0, 0.0)] }
    }

    /// `(∂A/∂z, ∂v/∂z)` at `z`.
    pub fn dz_at(&self, z: C64) -> ([Row; 3], Row) {
        let a = std::array::from_fn(|r| std::array::from_fn(|m| self.a[1][r][m] + self.a[2][r][m] * (2.0 * z)));
        let v = std::array::from_fn(|r| self.v[1][r] + self.v[2][r] * (2.0 * z));
        (a, v)
    }
}

pub fn theta_decomposition(state: &MetricState, z: C64) -> Result<ThetaDecomposition> {
    Ok(theta_polynomial(state)?.at(z))
}

pub fn det3(a: &[Row; 3]) -> C64 {
    a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
}

/// Product of row norms; the natural size of `det A`.
pub fn det_scale(a: &[Row; 3]) -> f64 {
    a.iter().map(|r| r.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()).product()
}

/// Coefficients of `det A(z)` recovered by sampling on the unit circle. Returns the quartic
/// part and the largest coefficient of degree 5–7 (zero if `det A` is a genuine quartic).
pub fn numeric_det_quartic(state: &MetricState) -> Result<(DetAQuartic, f64)> {
    let poly = theta_polynomial(state)?;
    let n = 8;
    let samples: Vec<(C64, C64)> = (0..n)
        .map(|k| {
            let z = C64::from_polar(1.0, 2.0 * std::f64::consts::PI * k as f64 / n as f64);
            (z, det3(&poly.at(z).a))
        })
        .collect();
    let coeff = |p: usize| samples.iter().map(|(z, d)| d * z.powi(-(p as i32))).sum::<C64>() / n as f64;
    let q = DetAQuartic::new(std::array::from_fn(coeff));
    let excess = (5..n).map(|p| coeff(p).norm()).fold(0.0, f64::max);
    Ok((q, excess))
}

/// dz- and dt-coefficients of `ς = −A⁻¹(e3 dz + v dt)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Varsigma {
    pub dz: Row,
    pub dt: Row,
}

fn to_matrix(a: &[Row; 3]) -> Matrix3<C64> {
    Matrix3::from_fn(|r, c| a[r][c])
}

fn solve3(a: &[Row; 3], b: &Row) -> Option<Row> {
    let x = to_matrix(a).lu().solve(&Vector3::new(b[0], b[1], b[2]))?;
    Some([x[0], x[1], x[2]])
}

pub const POLE_THRESHOLD: f64 = 1e-10;

pub fn varsigma(dec: &ThetaDecomposition) -> Result<Varsigma> {
    let det = det3(&dec.a);
    if det.norm() <= POLE_THRESHOLD * det_scale(&dec.a) {
        return Err(Error::OnPoleLocus { z: format!("{}", dec.z), det: det.norm() });
    }
    let neg = |r: Row| r.map(|x| -x);
    let dz = solve3(&dec.a, &neg(dec.dz)).ok_or_else(|| Error::OnPoleLocus { z: format!("{}", dec.z), det: det.norm() })?;
    let dt = solve3(&dec.a, &neg(dec.v)).ok_or_else(|| Error::OnPoleLocus { z: format!("{}", dec.z), det: det.norm() })?;
    Ok(Varsigma { dz, dt })
}

/// `½ [[i u1, u3 + i u2], [−u3 + i u2, −i u1]]`, an isomorphism onto `su(2)` ⊗ C.
pub fn su2(u: &Row) -> CMat2 {
    let i = C64::i();
    [[i * u[0] * 0.5, (u[2] + i * u[1]) * 0.5], [(-u[2] + i * u[1]) * 0.5, -i * u[0] * 0.5]]
}

/// Symmetric pattern `(1/√2) [[i u1, u3 + i u2], [u3 + i u2, i u1]]`.
pub fn symmetric_sigma(u: &Row) -> CMat2 {
    let i = C64::i();
    let k = std::f64::consts::FRAC_1_SQRT_2;
    [[i * u[0] * k, (u[2] + i * u[1]) * k], [(u[2] + i * u[1]) * k, i * u[0] * k]]
}

fn madd(a: &CMat2, b: &CMat2, kb: f64) -> CMat2 {
    std::array::from_fn(|r| std::array::from_fn(|c| a[r][c] + b[r][c] * kb))
}

pub fn mmul(a: &CMat2, b: &CMat2) -> CMat2 {
    std::array::from_fn(|r| std::array::from_fn(|c| a[r][0] * b[0][c] + a[r][1] * b[1][c]))
}

pub fn commutator(a: &CMat2, b: &CMat2) -> CMat2 {
    madd(&mmul(a, b), &mmul(b, a), -1.0)
}

pub fn max_entry(a: &CMat2) -> f64 {
    a.iter().flatten().map(|x| x.norm()).fold(0.0, f64::max)
}

/// `B1 = −Σ_z`, `B2 = −Σ_t` at one point, with the `σ̃`-frame rotation term `−T(ξ)` in `Σ_t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PencilPoint {
    pub z: C64,
    pub b1: CMat2,
    pub b2: CMat2,
    /// `∂B2/∂z`.
    pub db2_dz: CMat2,
    pub det_a: C64,
}

pub fn pencil_point(poly: &ThetaPolynomial, xi: &[f64; 3], z: C64) -> Result<PencilPoint> {
    pencil_point_with(poly, xi, z, su2)
}

fn pencil_point_with(poly: &ThetaPolynomial, xi: &[f64; 3], z: C64, map: fn(&Row) -> CMat2) -> Result<PencilPoint> {
    let dec = poly.at(z);
    let vs = varsigma(&dec)?;
    let (da, dv) = poly.dz_at(z);
    // ∂ς_t/∂z = −A⁻¹(v' + A' ς_t)
    let rhs: Row = std::array::from_fn(|r| -(dv[r] + (0..3).map(|m| da[r][m] * vs.dt[m]).sum::<C64>()));
    let dst = solve3(&dec.a, &rhs).ok_or_else(|| Error::OnPoleLocus { z: format!("{z}"), det: 0.0 })?;
    let gauge = map(&xi.map(|x| C64::new(x, 0.0)));
    let b1 = map(&vs.dz).map(|r| r.map(|x| -x));
    let b2 = madd(&map(&vs.dt), &gauge, -1.0).map(|r| r.map(|x| -x));
    let db2_dz = map(&dst).map(|r| r.map(|x| -x));
    Ok(PencilPoint { z, b1, b2, db2_dz, det_a: det3(&dec.a) })
}

/// `n` points on `|z| = radius` at angles `phase + 2πk/n`, each followed by its partner `−1/z̄`.
pub fn z_grid(radius: f64, n: usize, phase: f64) -> Vec<C64> {
    let mut g = Vec::with_capacity(2 * n);
    for k in 0..n {
        let z = C64::from_polar(radius, phase + 2.0 * std::f64::consts::PI * k as f64 / n as f64);
        g.push(z);
        g.push(-1.0 / z.conj());
    }
    g
}

/// Twelve points on `|z| = ½` and `|z| = 2`, closed under `z ↦ −1/z̄`.
pub fn default_z_grid() -> Vec<C64> {
    z_grid(0.5, 6, 0.37)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pole {
    pub z: C64,
    /// Multiplicity of the root of `det A`.
    pub multiplicity: usize,
    /// Order of the pole of `B1` after cancellation against the numerator.
    pub order: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectionPencil {
    pub points: Vec<PencilPoint>,
    /// Numerator `B1 · det A` as a matrix polynomial of degree ≤ 2: `numerator[p]` multiplies `z^p`.
    pub numerator: [CMat2; 3],
    pub fit_residual: f64,
    pub poles: Vec<Pole>,
    pub poles_at_infinity: usize,
    pub pole_pairing_error: f64,
}

fn fit_numerator(points: &[PencilPoint]) -> Result<([CMat2; 3], f64)> {
    let n = points.len();
    if n < 3 {
        return Err(Error::InsufficientSamples { needed: 3, got: n });
    }
    let vander = DMatrix::<C64>::from_fn(n, 3, |r, c| points[r].z.powi(c as i32));
    let svd = vander.clone().svd(true, true);
    let mut out = [[[zero(); 2]; 2]; 3];
    let mut worst = 0.0f64;
    for r in 0..2 {
        for c in 0..2 {
            let b = DVector::<C64>::from_fn(n, |k, _| points[k].b1[r][c] * points[k].det_a);
            let x = svd.solve(&b, 1e-14).map_err(|_| Error::FitFailure { degree: 2, residual: f64::INFINITY })?;
            let resid = (&vander * &x - &b).iter().map(|v| v.norm()).fold(0.0, f64::max);
            let size = b.iter().map(|v| v.norm()).fold(0.0, f64::max);
            worst = worst.max(resid / (1.0 + size));
            for p in 0..3 {
                out[p][r][c] = x[p];
            }
        }
    }
    Ok((out, worst))
}

fn eval_numerator(num: &[CMat2; 3], z: C64, derivative: usize) -> CMat2 {
    std::array::from_fn(|r| {
        std::array::from_fn(|c| match derivative {
            0 => num[0][r][c] + num[1][r][c] * z + num[2][r][c] * z * z,
            1 => num[1][r][c] + num[2][r][c] * (2.0 * z),
            _ => num[2][r][c] * 2.0,
        })
    })
}

pub fn sigma_pencil(state: &MetricState, z_samples: &[C64]) -> Result<ConnectionPencil> {
    let poly = theta_polynomial(state)?;
    let xi = state.xi();
    let points = z_samples.iter().map(|&z| pencil_point(&poly, &xi, z)).collect::<Result<Vec<_>>>()?;
    let (numerator, fit_residual) = fit_numerator(&points)?;
    if fit_residual > 1e-8 {
        return Err(Error::FitFailure { degree: 2, residual: fit_residual });
    }
    let q = spectral::build_quartic(state);
    let rs = spectral::roots(&q)?;
    let size = numerator.iter().map(max_entry).fold(0.0, f64::max).max(1e-300);
    let mut poles = Vec::new();
    for r in &rs.roots {
        let mut vanish = 0;
        while vanish < r.multiplicity && max_entry(&eval_numerator(&numerator, r.z, vanish)) <= 1e-7 * size * (1.0 + r.z.norm()).powi(2) {
            vanish += 1;
        }
        poles.push(Pole { z: r.z, multiplicity: r.multiplicity, order: r.multiplicity - vanish });
    }
    Ok(ConnectionPencil { points, numerator, fit_residual, poles, poles_at_infinity: rs.at_infinity, pole_pairing_error: rs.pairing_error })
}

/// `max ‖∂_t B1 − ∂_z B2 + [B1, B2]‖` over interior samples and grid points away from poles.
pub fn flatness_residual(traj: &Trajectory, z_grid: &[C64]) -> Result<f64> {
    flatness_with(traj, z_grid, su2, 1)
}

/// As [`flatness_residual`] with the five-point stencil for `∂_t B1`; needs uniformly spaced samples.
pub fn flatness_residual_five_point(traj: &Trajectory, z_grid: &[C64]) -> Result<f64> {
    flatness_with(traj, z_grid, su2, 2)
}

fn stencil(times: &[f64]) -> Result<Vec<f64>> {
    if times.len() == 3 {
        return Ok(three_point_weights(times[0], times[1], times[2]).to_vec());
    }
    let h = (times[4] - times[0]) / 4.0;
    if times.windows(2).any(|p| ((p[1] - p[0]) - h).abs() > 1e-9 * h.abs()) {
        return Err(Error::Precondition("five-point stencil needs uniformly spaced samples".into()));
    }
    Ok([1.0, -8.0, 0.0, 8.0, -1.0].iter().map(|c| c / (12.0 * h)).collect())
}

fn flatness_with(traj: &Trajectory, z_grid: &[C64], map: fn(&Row) -> CMat2, half: usize) -> Result<f64> {
    let n = traj.samples.len();
    if n < 2 * half + 1 {
        return Err(Error::InsufficientSamples { needed: 2 * half + 1, got: n });
    }
    let polys = traj.samples.iter().map(|s| theta_polynomial(&s.state)).collect::<Result<Vec<_>>>()?;
    let root_sets: Vec<Option<RootSet>> = traj.samples.iter().map(|s| spectral::roots(&spectral::build_quartic(&s.state)).ok()).collect();
    let near_pole = |idx: usize, z: C64| match &root_sets[idx] {
        Some(rs) => rs.roots.iter().any(|r| (r.z - z).norm() < 1e-3),
        None => true,
    };
    let mut worst = 0.0f64;
    for i in half..n - half {
        let window = i - half..=i + half;
        let times: Vec<f64> = window.clone().map(|k| traj.samples[k].state.t).collect();
        let wts = stencil(&times)?;
        for &z in z_grid {
            if window.clone().any(|k| near_pole(k, z)) {
                continue;
            }
            let pts = window.clone().map(|k| pencil_point_with(&polys[k], &traj.samples[k].state.xi(), z, map)).collect::<Result<Vec<_>>>()?;
            let dt_b1: CMat2 = std::array::from_fn(|r| std::array::from_fn(|c| pts.iter().zip(&wts).map(|(p, w)| p.b1[r][c] * *w).sum()));
            let mid = &pts[half];
            let resid = madd(&madd(&dt_b1, &mid.db2_dz, -1.0), &commutator(&mid.b1, &mid.b2), 1.0);
            worst = worst.max(max_entry(&resid));
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DegenerateReason {
    ZeroQuartic,
    RootAtInfinity,
    HigherMultiplicity,
    MixedMultiplicities,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PainleveTag {
    PainleveVI,
    PainleveIIICandidate,
    Degenerate(DegenerateReason),
}

impl PainleveTag {
    pub fn name(self) -> &'static str {
        match self {
            PainleveTag::PainleveVI => "PainleveVI",
            PainleveTag::PainleveIIICandidate => "PainleveIIICandidate",
            PainleveTag::Degenerate(_) => "Degenerate",
        }
    }
}

pub fn painleve_tag_of(rs: &std::result::Result<RootSet, Error>) -> PainleveTag {
    match rs {
        Err(_) => PainleveTag::Degenerate(DegenerateReason::ZeroQuartic),
        Ok(rs) if rs.at_infinity > 0 => PainleveTag::Degenerate(DegenerateReason::RootAtInfinity),
        Ok(rs) if rs.is_four_simple() => PainleveTag::PainleveVI,
        Ok(rs) if rs.roots.len() == 2 && rs.roots.iter().all(|r| r.multiplicity == 2) => PainleveTag::PainleveIIICandidate,
        Ok(rs) if rs.roots.iter().any(|r| r.multiplicity > 2) => PainleveTag::Degenerate(DegenerateReason::HigherMultiplicity),
        Ok(_) => PainleveTag::Degenerate(DegenerateReason::MixedMultiplicities),
    }
}

pub fn painleve_tag(state: &MetricState) -> PainleveTag {
    painleve_tag_of(&spectral::roots(&spectral::build_quartic(state)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{self, StepController};
    use crate::spectral::forward_certificate_state;

    fn generic() -> MetricState {
        MetricState::new(0.0, [0.7, 1.3, 2.2], [0.3, -1.1, 0.8], [0.4, 1.2, -0.6]).unwrap()
    }

    #[test]
    fn theta1_at_origin() {
        let s = generic();
        let dec = theta_decomposition(&s, zero()).unwrap();
        let abc = crate::state::recover_abc(&s).unwrap();
        assert!((dec.v[0] - C64::new(-abc.a * abc.b * abc.c, 0.0)).norm() < 1e-14);
        assert!((dec.a[0][0] - C64::new(0.0, -abc.a)).norm() < 1e-14);
        assert_eq!(dec.dz, [zero(), zero(), C64::new(1.0, 0.0)]);
    }

    #[test]
    fn det_a_is_minus_half_the_quartic() {
        let s = generic();
        let (num, excess) = numeric_det_quartic(&s).unwrap();
        let q = spectral::build_quartic(&s);
        assert!(excess < 1e-12);
        for k in 0..5 {
            assert!((num.coeffs[k] + 0.5 * q.coeffs[k]).norm() < 1e-12);
        }
    }

    #[test]
    fn diagonal_det_a_singular_on_roots() {
        let s = MetricState::new(0.0, [0.7, 1.3, 2.2], [0.3, -1.1, 0.8], [0.0; 3]).unwrap();
        let poly = theta_polynomial(&s).unwrap();
        for r in spectral::roots(&spectral::build_quartic(&s)).unwrap().roots {
            let a = poly.at(r.z).a;
            assert!(det3(&a).norm() <= 1e-12 * det_scale(&a));
            assert!(matches!(varsigma(&poly.at(r.z)), Err(Error::OnPoleLocus { .. })));
        }
    }

    #[test]
    fn varsigma_reconstructs() {
        let dec = theta_decomposition(&generic(), C64::new(0.3, -0.4)).unwrap();
        let vs = varsigma(&dec).unwrap();
        for r in 0..3 {
            let rz: C64 = (0..3).map(|m| dec.a[r][m] * vs.dz[m]).sum::<C64>() + dec.dz[r];
            let rt: C64 = (0..3).map(|m| dec.a[r][m] * vs.dt[m]).sum::<C64>() + dec.v[r];
            assert!(rz.norm() < 1e-12 && rt.norm() < 1e-12);
        }
    }

    #[test]
    fn bgpp_is_on_the_pole_locus_everywhere() {
        let s = MetricState::new(0.0, [1.0, 2.0, 3.0], [0.0; 3], [0.0; 3]).unwrap();
        for z in default_z_grid() {
            assert!(matches!(varsigma(&theta_decomposition(&s, z).unwrap()), Err(Error::OnPoleLocus { .. })));
        }
        assert_eq!(painleve_tag(&s), PainleveTag::Degenerate(DegenerateReason::ZeroQuartic));
    }

    #[test]
    fn pencil_is_traceless() {
        let pp = sigma_pencil(&generic(), &default_z_grid()).unwrap();
        for p in &pp.points {
            for m in [&p.b1, &p.b2] {
                assert_eq!(m[0][0], -m[1][1]);
            }
        }
    }

    #[test]
    fn generic_pencil_has_four_simple_poles() {
        let pp = sigma_pencil(&generic(), &default_z_grid()).unwrap();
        assert!(pp.fit_residual < 1e-10);
        assert_eq!(pp.poles.len(), 4);
        assert!(pp.poles.iter().all(|p| p.order == 1));
        assert!(pp.pole_pairing_error < 1e-9);
    }

    #[test]
    fn certificate_pencil_has_two_double_poles() {
        let s = forward_certificate_state(0.0, [0.9, 1.4, 2.1], [1.0, 2.0, 3.0], 4.0, [1.0, -1.0]).unwrap();
        let pp = sigma_pencil(&s, &default_z_grid()).unwrap();
        assert_eq!(pp.poles.len(), 2);
        assert!(pp.poles.iter().all(|p| p.multiplicity == 2 && p.order == 2), "{:?}", pp.poles);
    }

    fn asd_run(h: f64, n: usize) -> Trajectory {
        let s = MetricState::new(0.0, [0.7, 1.3, 2.2], [0.3, -0.4, 0.5], [0.2, 0.4, -0.3]).unwrap();
        let ctl = StepController { rtol: 1e-13, atol: 1e-15, ..Default::default() };
        flow::integrate_on_grid(&s, &flow::uniform_grid(0.0, h * (n - 1) as f64, n), &ctl, flow::RhsVariant::Asd).unwrap()
    }

    #[test]
    fn flatness_on_solutions() {
        let r = flatness_residual(&asd_run(1e-5, 5), &default_z_grid()).unwrap();
        assert!(r < 1e-6, "residual {r}");
    }

    #[test]
    fn flatness_converges_at_second_order() {
        let coarse = flatness_residual(&asd_run(4e-3, 3), &default_z_grid()).unwrap();
        let fine = flatness_residual(&asd_run(2e-3, 3), &default_z_grid()).unwrap();
        let slope = (coarse / fine).log2();
        assert!((slope - 2.0).abs() <= 0.2, "slope {slope}");
    }

    #[test]
    fn five_point_converges_at_fourth_order() {
        let coarse = flatness_residual_five_point(&asd_run(4e-3, 5), &default_z_grid()).unwrap();
        let fine = flatness_residual_five_point(&asd_run(2e-3, 5), &default_z_grid()).unwrap();
        let slope = (coarse / fine).log2();
        assert!((slope - 4.0).abs() <= 0.3, "slope {slope}");
        assert!(flatness_residual_five_point(&asd_run(1e-4, 5), &default_z_grid()).unwrap() < 1e-8);
    }

    #[test]
    fn five_point_needs_uniform_samples() {
        let s = generic();
        let traj = flow::integrate_on_grid(&s, &[1e-3, 2e-3, 4e-3, 5e-3], &StepController::default(), flow::RhsVariant::Asd).unwrap();
        assert!(matches!(flatness_residual_five_point(&traj, &default_z_grid()), Err(Error::Precondition(_))));
    }

    #[test]
    fn symmetric_pattern_is_not_flat() {
        let r = flatness_with(&asd_run(1e-5, 5), &default_z_grid(), symmetric_sigma, 1).unwrap();
        assert!(r > 1e-3, "residual {r}");
    }

    #[test]
    fn flatness_fails_off_solutions() {
        let s = MetricState::new(0.0, [0.7, 1.3, 2.2], [0.3, -0.4, 0.5], [0.2, 0.4, -0.3]).unwrap();
        let grid = flow::uniform_grid(0.0, 4e-5, 5);
        let traj = flow::integrate_on_grid(&s, &grid, &StepController::default(), flow::RhsVariant::ZeroAlphaDot).unwrap();
        assert!(flatness_residual(&traj, &default_z_grid()).unwrap() > 1e-3);
    }

    #[test]
    fn single_sample_is_an_error() {
        let s = generic();
        let traj = flow::integrate(&s, s.t, &StepController::default()).unwrap();
        assert_eq!(flatness_residual(&traj, &default_z_grid()), Err(Error::InsufficientSamples { needed: 3, got: 1 }));
    }
}
