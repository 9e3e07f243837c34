//! Invariant complex structures from double roots of the quartic, the integrability residual of
//! `Θ3` along `z = z0(t)`, the Kähler form `Ω = Σ p_k Ω⁺_k` and its exterior derivative.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::curvature::{self, three_point_weights, TwoForm};
use crate::error::{Error, Result};
use crate::flow::{self, Trajectory};
use crate::isomonodromy::theta_polynomial;
use crate::spectral::{self, DetAQuartic, HermitianCertificate};
use crate::state::{cyc, reduced_x, MetricState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// `X1 X2 X3 ≠ 0`.
    Generic,
    /// `f = α_i`; `index` is zero-based.
    Degenerate { index: usize },
    /// A simple root tracked for comparison; not a complex structure.
    SimpleRoot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormulaCheck {
    Matched { formula: C64, gap: f64 },
    NotRealizable(String),
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexStructureData {
    pub t: f64,
    pub z0: C64,
    /// `−1/z̄0`, or `None` when `z0 = 0` (partner at infinity).
    pub partner: Option<C64>,
    pub branch: Branch,
    /// From the restriction of `Θ3` to `z = z0(t)`.
    pub dz0dt: C64,
    /// `|Q(z0)| + |Q'(z0)|`, scaled by the coefficient size.
    pub double_root_residual: f64,
    pub formula: FormulaCheck,
}

fn qscale(q: &DetAQuartic, z: C64) -> f64 {
    q.max_abs() * (1.0 + z.norm()).powi(4)
}

/// Double roots of `q`, read off the roots of `q'` with the smallest `|q|`.
fn double_roots(q: &DetAQuartic) -> Result<Vec<(C64, f64)>> {
    let c = q.coeffs;
    let dq = DetAQuartic::new([c[1], c[2] * 2.0, c[3] * 3.0, c[4] * 4.0, C64::new(0.0, 0.0)]);
    let rs = spectral::roots(&dq)?;
    let mut cands: Vec<(C64, f64)> = rs
        .flat()
        .into_iter()
        .map(|z| {
            let z = polish_double(q, z);
            (z, (q.eval(z).norm() + q.eval_derivative(z, 1).norm()) / qscale(q, z))
        })
        .collect();
    cands.sort_by(|a, b| a.1.total_cmp(&b.1));
    // A degree drop of two puts one double root at infinity and its partner at zero.
    let finite = if c[4].norm() <= spectral::ZERO_QUARTIC * q.max_abs() && c[3].norm() <= spectral::ZERO_QUARTIC * q.max_abs() { 1 } else { 2 };
    cands.truncate(finite);
    Ok(cands)
}

fn polish_double(q: &DetAQuartic, z0: C64) -> C64 {
    let mut z = z0;
    for _ in 0..20 {
        let d2 = q.eval_derivative(z, 2);
        if d2.norm() == 0.0 {
            break;
        }
        let step = q.eval_derivative(z, 1) / d2;
        z -= step;
        if step.norm() <= 1e-16 * (1.0 + z.norm()) {
            break;
        }
    }
    z
}

fn closed_form_z0(state: &MetricState, cert: &HermitianCertificate) -> (Branch, Vec<C64>, Option<String>) {
    let x = reduced_x(state).0;
    let a = state.alpha;
    let i = C64::i();
    match cert.degenerate {
        None => {
            let s = symmetric_discriminant(&x);
            let den = C64::new(x[0], 0.0) * (C64::new(x[1], 0.0) - i * x[2]);
            let vals = [1.0, -1.0].map(|pm| C64::new(x[1] * x[2] + pm * s, 0.0) / den).to_vec();
            (Branch::Generic, vals, None)
        }
        Some(0) => {
            let (d2, d3, den) = (a[1] - a[0], a[2] - a[0], a[1] + a[2] - 2.0 * a[0]);
            if d2 < 0.0 || d3 < 0.0 || den <= 0.0 {
                return (Branch::Degenerate { index: 0 }, vec![], Some(format!("alpha2 - alpha1 = {d2}, alpha3 - alpha1 = {d3}")));
            }
            let z = (C64::new(d3.sqrt(), 0.0) + i * d2.sqrt()) / den.sqrt();
            (Branch::Degenerate { index: 0 }, vec![z, z.conj(), -z, -z.conj()], None)
        }
        Some(k) => (Branch::Degenerate { index: k }, vec![], None),
    }
}

/// `sqrt(X2²X3² + X3²X1² + X1²X2²)`.
pub fn symmetric_discriminant(x: &[f64; 3]) -> f64 {
    ((x[1] * x[2]).powi(2) + (x[2] * x[0]).powi(2) + (x[0] * x[1]).powi(2)).sqrt()
}

pub fn complex_structure(state: &MetricState, cert: &HermitianCertificate) -> Result<ComplexStructureData> {
    complex_structure_near(state, cert, None)
}

/// As [`complex_structure`], choosing the double root closest to `prev` when given and the one
/// inside the closed unit disc otherwise.
pub fn complex_structure_near(state: &MetricState, cert: &HermitianCertificate, prev: Option<C64>) -> Result<ComplexStructureData> {
    if cert.quartic_degenerate {
        return Err(Error::Precondition("quartic vanishes identically (hyper-Kähler): no distinguished z0".into()));
    }
    let q = spectral::build_quartic(state);
    let doubles = double_roots(&q)?;
    let pick = match prev {
        Some(p) => doubles.iter().min_by(|a, b| (a.0 - p).norm().total_cmp(&(b.0 - p).norm())),
        None => doubles.iter().min_by(|a, b| a.0.norm().total_cmp(&b.0.norm())),
    };
    let &(z0, double_root_residual) = pick.ok_or(Error::InconsistentCertificate { f: cert.f, doubles: 0 })?;
    let (branch, formula_vals, unrealizable) = closed_form_z0(state, cert);
    let formula = if let Some(msg) = unrealizable {
        FormulaCheck::NotRealizable(msg)
    } else if formula_vals.is_empty() {
        FormulaCheck::Skipped
    } else {
        // Every formula value must be one of the double roots.
        let mut worst = (C64::new(0.0, 0.0), 0.0f64);
        let mut best_for_z0 = (formula_vals[0], f64::INFINITY);
        for &v in &formula_vals {
            let gap = doubles.iter().chain(partner_of(z0).iter().map(|p| (*p, 0.0)).collect::<Vec<_>>().iter()).map(|d| (d.0 - v).norm() / (1.0 + v.norm())).fold(f64::INFINITY, f64::min);
            if gap > worst.1 {
                worst = (v, gap);
            }
            let own = (z0 - v).norm() / (1.0 + v.norm());
            if own < best_for_z0.1 {
                best_for_z0 = (v, own);
            }
        }
        if branch == Branch::Generic && worst.1 > 1e-6 {
            return Err(Error::BranchMismatch { formula: format!("{}", worst.0), root: format!("{z0}"), gap: worst.1 });
        }
        if best_for_z0.1 > 1e-6 {
            return Err(Error::BranchMismatch { formula: format!("{}", best_for_z0.0), root: format!("{z0}"), gap: best_for_z0.1 });
        }
        FormulaCheck::Matched { formula: best_for_z0.0, gap: best_for_z0.1 }
    };
    let (dz0dt, _) = restriction_rhs(state, z0)?;
    Ok(ComplexStructureData { t: state.t, z0, partner: partner_of(z0), branch, dz0dt, double_root_residual, formula })
}

fn partner_of(z: C64) -> Option<C64> {
    (z.norm() > 1e-300).then(|| -1.0 / z.conj())
}

/// `ż` required by `Θ3|_{z=z(t)} ≡ 0 mod (Θ1, Θ2)`, with the relative residual of `A3 ∈ span(A1, A2)`.
pub fn restriction_rhs(state: &MetricState, z: C64) -> Result<(C64, f64)> {
    let dec = theta_polynomial(state)?.at(z);
    let [r1, r2, r3] = dec.a;
    let ip = |u: &[C64; 3], v: &[C64; 3]| -> C64 { (0..3).map(|m| u[m].conj() * v[m]).sum() };
    let (g11, g12, g22) = (ip(&r1, &r1), ip(&r1, &r2), ip(&r2, &r2));
    let (b1, b2) = (ip(&r1, &r3), ip(&r2, &r3));
    let det = g11 * g22 - g12 * g12.conj();
    if det.norm() <= 1e-300 {
        return Err(Error::SingularTransform);
    }
    let mu1 = (b1 * g22 - g12 * b2) / det;
    let mu2 = (g11 * b2 - g12.conj() * b1) / det;
    let resid: f64 = (0..3).map(|m| (r3[m] - mu1 * r1[m] - mu2 * r2[m]).norm_sqr()).sum::<f64>().sqrt();
    let size: f64 = (0..3).map(|m| r3[m].norm_sqr()).sum::<f64>().sqrt();
    Ok((mu1 * dec.v[0] + mu2 * dec.v[1] - dec.v[2], resid / (1.0 + size)))
}

/// Cubic interpolating [`restriction_rhs`] on the roots of the quartic: coefficients by power.
pub fn restriction_cubic(state: &MetricState) -> [C64; 4] {
    let [a1, a2, a3] = state.alpha;
    let x = reduced_x(state).0;
    let [w1, w2, w3] = state.w.map(|v| v * v);
    let [e1, e2, e3] = state.eta;
    let i = C64::i();
    [
        i * (0.5 * w2 * e3) - 0.5 * w3 * e2,
        C64::new(a1 - 0.5 * (a2 + a3), 0.0) + i * (0.5 * (w2 + w3) * e1),
        -C64::new((w1 - 0.5 * w3) * e2, 0.0) - i * ((w1 - 0.5 * w2) * e3),
        C64::new(0.5 * (a3 - a2), 0.0) + i * (0.5 * x[0]),
    ]
}

/// `ż0 = −Q̇'(z0)/Q''(z0)`: the velocity of a double root carried by the flow.
pub fn double_root_velocity(state: &MetricState, z0: C64) -> Result<C64> {
    let q = spectral::build_quartic(state);
    let qdot = spectral::quartic_rate(state, &flow::rhs(state)?);
    Ok(-qdot.eval_derivative(z0, 1) / q.eval_derivative(z0, 2))
}

/// Complex structure at every sample, following one double root continuously.
pub fn complex_structures_along(traj: &Trajectory, tol: f64) -> Result<Vec<ComplexStructureData>> {
    let mut out: Vec<ComplexStructureData> = Vec::with_capacity(traj.samples.len());
    for s in &traj.samples {
        let cert = spectral::double_root_certificate(&s.state, tol)?
            .ok_or_else(|| Error::Precondition(format!("no double-root certificate at t = {}", s.state.t)))?;
        let prev = out.last().map(|c| c.z0);
        out.push(complex_structure_near(&s.state, &cert, prev)?);
    }
    Ok(out)
}

/// Follows a simple root of the quartic from `z_start`, with `dz0dt` from the restriction equation.
pub fn track_simple_root(traj: &Trajectory, z_start: C64) -> Result<Vec<ComplexStructureData>> {
    let mut z = z_start;
    let mut out = Vec::with_capacity(traj.samples.len());
    for s in &traj.samples {
        let q = spectral::build_quartic(&s.state);
        let rs = spectral::roots(&q)?;
        let r = rs
            .roots
            .iter()
            .filter(|r| r.multiplicity == 1)
            .min_by(|a, b| (a.z - z).norm().total_cmp(&(b.z - z).norm()))
            .ok_or_else(|| Error::Precondition("quartic has no simple root".into()))?;
        z = r.z;
        let (dz0dt, _) = restriction_rhs(&s.state, z)?;
        out.push(ComplexStructureData {
            t: s.state.t,
            z0: z,
            partner: partner_of(z),
            branch: Branch::SimpleRoot,
            dz0dt,
            double_root_residual: (q.eval(z).norm() + q.eval_derivative(z, 1).norm()) / qscale(&q, z),
            formula: FormulaCheck::Skipped,
        });
    }
    Ok(out)
}

/// `max |ż0_fd − ż0_restriction|` over interior samples, `ż0_fd` by three-point differences.
pub fn theta3_residual(traj: &Trajectory, cs: &[ComplexStructureData]) -> Result<f64> {
    let n = traj.samples.len();
    if cs.len() != n {
        return Err(Error::Precondition(format!("{} complex structures for {} samples", cs.len(), n)));
    }
    if n < 3 {
        return Err(Error::InsufficientSamples { needed: 3, got: n });
    }
    let mut worst = 0.0f64;
    for i in 1..n - 1 {
        let w = three_point_weights(cs[i - 1].t, cs[i].t, cs[i + 1].t);
        let fd = cs[i - 1].z0 * w[0] + cs[i].z0 * w[1] + cs[i + 1].z0 * w[2];
        worst = worst.max((fd - cs[i].dz0dt).norm());
    }
    Ok(worst)
}

/// Integrability of the almost complex structure with (1,0)-forms `Θ1|`, `Θ2|` along `z = z(t)`,
/// measured directly from the coframe: `max_r |dΘ_r ∧ Θ1 ∧ Θ2|`, relative to the size of the factors.
pub fn nijenhuis_residual(state: &MetricState, z: C64, zdot: C64) -> Result<f64> {
    let cof = curvature::coframe(state)?;
    let i = C64::i();
    let one = C64::new(1.0, 0.0);
    let zero = C64::new(0.0, 0.0);
    let u1 = [-one, -i, z, i * z];
    let u2 = [z, -i * z, one, -i];
    let lapse = cof.lapse_inverse();
    let de = |k: usize| cof.de(k).map(|r| r.map(|v| C64::new(v, 0.0)));
    let comb = |a: [[C64; 4]; 4], ka: C64, b: [[C64; 4]; 4], kb: C64| -> [[C64; 4]; 4] {
        std::array::from_fn(|l| std::array::from_fn(|m| a[l][m] * ka + b[l][m] * kb))
    };
    let e0_wedge = |u: [C64; 4]| -> [[C64; 4]; 4] {
        std::array::from_fn(|l| std::array::from_fn(|m| if l == 0 { u[m] } else if m == 0 { -u[l] } else { zero }))
    };
    let add = |a: [[C64; 4]; 4], b: [[C64; 4]; 4]| -> [[C64; 4]; 4] { std::array::from_fn(|l| std::array::from_fn(|m| a[l][m] + b[l][m])) };
    let d1 = add(add(e0_wedge([zero, zero, one, i]).map(|r| r.map(|v| v * zdot * lapse)), comb(de(2), z, de(3), i * z)), comb(de(0), -one, de(1), -i));
    let d2 = add(add(e0_wedge([zero, -i, zero, zero]).map(|r| r.map(|v| v * zdot * lapse)), comb(de(0), z, de(1), -i * z)), comb(de(2), one, de(3), -i));
    let g: [[C64; 4]; 4] = std::array::from_fn(|l| std::array::from_fn(|m| u1[l] * u2[m] - u1[m] * u2[l]));
    let top = |f: &[[C64; 4]; 4]| f[0][1] * g[2][3] - f[0][2] * g[1][3] + f[0][3] * g[1][2] + f[1][2] * g[0][3] - f[1][3] * g[0][2] + f[2][3] * g[0][1];
    let size = |f: &[[C64; 4]; 4]| f.iter().flatten().map(|v| v.norm()).fold(0.0, f64::max);
    let gs = size(&g);
    Ok([d1, d2].iter().map(|f| top(f).norm() / (1e-300 + size(f) * gs)).fold(0.0, f64::max))
}

/// Unit self-dual direction selected by `z`: `((1−|z|²), −2 Im z, −2 Re z)/(1+|z|²)`.
pub fn kahler_direction(z: C64) -> [f64; 3] {
    let r2 = z.norm_sqr();
    let d = 1.0 + r2;
    [(1.0 - r2) / d, -2.0 * z.im / d, -2.0 * z.re / d]
}

fn kahler_direction_rate(z: C64, zdot: C64) -> [f64; 3] {
    let (x, y) = (z.re, z.im);
    let d = 1.0 + x * x + y * y;
    let d2 = d * d;
    let jac = [[-4.0 * x / d2, -4.0 * y / d2], [4.0 * x * y / d2, (-2.0 * d + 4.0 * y * y) / d2], [(-2.0 * d + 4.0 * x * x) / d2, 4.0 * x * y / d2]];
    jac.map(|r| r[0] * zdot.re + r[1] * zdot.im)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClosedForm {
    Matched { p: [f64; 3], q: [f64; 3], gap: f64 },
    NotRealizable(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KahlerFormData {
    /// `Ω = p1 Ω⁺1 + p2 Ω⁺2 + p3 Ω⁺3`.
    pub p: [f64; 3],
    pub dp: [f64; 3],
    /// `dΩ` on `dt∧σ̃2∧σ̃3`, `dt∧σ̃3∧σ̃1`, `dt∧σ̃1∧σ̃2`.
    pub q: [f64; 3],
    /// `dΩ` on `σ̃1∧σ̃2∧σ̃3`.
    pub q123: f64,
    pub closed: ClosedForm,
}

fn wedge21(f: &TwoForm, u: &[f64; 4], l: usize, m: usize, n: usize) -> f64 {
    f[l][m] * u[n] + f[m][n] * u[l] + f[n][l] * u[m]
}

fn unit(i: usize) -> [f64; 4] {
    let mut u = [0.0; 4];
    u[i] = 1.0;
    u
}

/// Components `(q1, q2, q3, q123)` of `d(Σ p_k Ω⁺_k)` given `p` and `ṗ`.
fn d_omega(state: &MetricState, p: &[f64; 3], dp: &[f64; 3]) -> Result<([f64; 3], f64)> {
    let cof = curvature::coframe(state)?;
    let comp = |l: usize, m: usize, n: usize| -> f64 {
        let mut acc = 0.0;
        for k in 0..3 {
            let (i, j) = cyc(k);
            let (ke, ie, je) = (k + 1, i + 1, j + 1);
            let d_plus = wedge21(&cof.de(0), &unit(ke), l, m, n) - wedge21(&cof.de(ke), &unit(0), l, m, n)
                - wedge21(&cof.de(ie), &unit(je), l, m, n)
                + wedge21(&cof.de(je), &unit(ie), l, m, n);
            acc += p[k] * d_plus;
            // dt∧Ω⁺_k = −(1/N) e^{0ij}
            if l == 0 && m == ie && n == je {
                acc -= dp[k] * cof.lapse_inverse();
            }
        }
        acc
    };
    let s = cof.scales;
    let q = std::array::from_fn(|k| {
        let (i, j) = cyc(k);
        comp(0, i + 1, j + 1) * s[0] * s[i + 1] * s[j + 1]
    });
    Ok((q, comp(1, 2, 3) * s[1] * s[2] * s[3]))
}

fn closed_direction(state: &MetricState, cert: &HermitianCertificate) -> std::result::Result<[f64; 3], String> {
    let x = reduced_x(state).0;
    let a = state.alpha;
    match cert.degenerate {
        None => {
            let s = symmetric_discriminant(&x);
            Ok([x[1] * x[2] / s, x[2] * x[0] / s, x[0] * x[1] / s])
        }
        Some(i) => {
            let (j, k) = cyc(i);
            let (dj, dk, den) = (a[j] - a[i], a[k] - a[i], a[j] + a[k] - 2.0 * a[i]);
            if dj < 0.0 || dk < 0.0 || den <= 0.0 {
                return Err(format!("alpha{} - alpha{} = {dj}, alpha{} - alpha{} = {dk}", j + 1, i + 1, k + 1, i + 1));
            }
            let mut p = [0.0; 3];
            p[j] = (dj / den).sqrt();
            p[k] = -x[i].signum() * (dk / den).sqrt();
            Ok(p)
        }
    }
}

pub fn kahler_form(state: &MetricState, cert: &HermitianCertificate) -> Result<KahlerFormData> {
    let cs = complex_structure(state, cert)?;
    let p = kahler_direction(cs.z0);
    let dp = kahler_direction_rate(cs.z0, double_root_velocity(state, cs.z0)?);
    let (q, q123) = d_omega(state, &p, &dp)?;
    let closed = match closed_direction(state, cert) {
        Err(msg) => ClosedForm::NotRealizable(msg),
        Ok(pc) => {
            let align = if (0..3).map(|k| p[k] * pc[k]).sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
            let pc = pc.map(|v| v * align);
            let qc: [f64; 3] = std::array::from_fn(|k| -2.0 * cert.f * state.w[k] * pc[k]);
            let size = 1.0 + q.iter().chain(qc.iter()).fold(0.0f64, |m, v| m.max(v.abs()));
            let p_gap = (0..3).map(|k| (p[k] - pc[k]).abs()).fold(0.0, f64::max);
            let q_gap = (0..3).map(|k| (q[k] - qc[k]).abs()).fold(q123.abs(), f64::max) / size;
            let gap = p_gap.max(q_gap);
            if gap > 1e-8 {
                return Err(Error::FormMismatch { gap });
            }
            ClosedForm::Matched { p: pc, q: qc, gap }
        }
    };
    Ok(KahlerFormData { p, dp, q, q123, closed })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KahlerTest {
    pub is_kahler: bool,
    pub residual: f64,
    /// All relations hold trivially (`α = 0`, `X = 0`).
    pub hyperkahler: bool,
}

pub const KAHLER_TEST_TOL: f64 = 1e-9;

pub fn kahler_test(state: &MetricState) -> KahlerTest {
    kahler_test_with(state, KAHLER_TEST_TOL)
}

pub fn kahler_test_with(state: &MetricState, tol: f64) -> KahlerTest {
    let x = reduced_x(state).0;
    let (rel, sign) = spectral::certificate_residual(&state.alpha, &x, 0.0);
    let residual = rel.max(sign);
    let scale = 1.0 + state.alpha.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let hyperkahler = state.alpha.iter().chain(x.iter()).all(|v| v.abs() <= tol * scale);
    KahlerTest { is_kahler: hyperkahler || residual <= tol, residual, hyperkahler }
}
