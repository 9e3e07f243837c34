//! The twistor quartic `det A`, its roots, the real structure `z ↦ −1/z̄`, fractional linear
//! normalization and the double-root certificate.

use nalgebra::{DMatrix, Schur};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::StateDerivative;
use crate::state::{cyc, reduced_x, MetricState};

/// Coefficients indexed by power: `coeffs[k]` multiplies `z^k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetAQuartic {
    pub coeffs: [C64; 5],
}

impl DetAQuartic {
    pub fn new(coeffs: [C64; 5]) -> Self {
        DetAQuartic { coeffs }
    }

    pub fn from_real(c: [f64; 5]) -> Self {
        DetAQuartic { coeffs: c.map(|v| C64::new(v, 0.0)) }
    }

    pub fn eval(&self, z: C64) -> C64 {
        self.coeffs.iter().rev().fold(C64::new(0.0, 0.0), |acc, c| acc * z + c)
    }

    /// `n`-th derivative evaluated at `z`.
    pub fn eval_derivative(&self, z: C64, n: usize) -> C64 {
        let mut acc = C64::new(0.0, 0.0);
        for k in (n..5).rev() {
            let falling: f64 = (0..n).map(|m| (k - m) as f64).product();
            acc = acc * z + self.coeffs[k] * falling;
        }
        acc
    }

    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    /// Largest violation of `c0 = conj(c4)`, `c1 = −conj(c3)`, `Im c2 = 0`.
    pub fn real_structure_residual(&self) -> f64 {
        let c = &self.coeffs;
        (c[0] - c[4].conj()).norm().max((c[1] + c[3].conj()).norm()).max(c[2].im.abs())
    }

    pub fn scaled(&self, k: C64) -> Self {
        DetAQuartic { coeffs: self.coeffs.map(|c| c * k) }
    }
}

fn quartic_from(alpha: [f64; 3], x: [f64; 3]) -> DetAQuartic {
    let [a1, a2, a3] = alpha;
    let [x1, x2, x3] = x;
    let i = C64::i();
    DetAQuartic {
        coeffs: [
            (a2 - a3) + i * x1,
            (x2 + i * x3) * 2.0,
            C64::new(2.0 * (-2.0 * a1 + a2 + a3), 0.0),
            (x2 - i * x3) * -2.0,
            (a2 - a3) - i * x1,
        ],
    }
}

/// `((α2−α3) − iX1) z⁴ − 2(X2 − iX3) z³ + 2(−2α1+α2+α3) z² + 2(X2 + iX3) z + ((α2−α3) + iX1)`,
/// equal to `−2 det A`.
pub fn build_quartic(state: &MetricState) -> DetAQuartic {
    quartic_from(state.alpha, reduced_x(state).0)
}

/// t-derivative of the quartic coefficients along a derivative of the state.
pub fn quartic_rate(state: &MetricState, deriv: &StateDerivative) -> DetAQuartic {
    let w = state.w;
    let xdot = std::array::from_fn(|i| {
        let (j, k) = cyc(i);
        2.0 * (w[j] * deriv.dw[j] - w[k] * deriv.dw[k]) * state.eta[i] + (w[j] * w[j] - w[k] * w[k]) * deriv.deta[i]
    });
    quartic_from(deriv.dalpha, xdot)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Root {
    pub z: C64,
    pub multiplicity: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Partner {
    Root(usize),
    Infinity,
    Unpaired,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RootSet {
    pub roots: Vec<Root>,
    /// Multiplicity of the root at infinity (degree drop).
    pub at_infinity: usize,
    /// Real-structure partner of each finite root.
    pub partner: Vec<Partner>,
    /// Largest relative distance between `−1/z̄` and its matched root.
    pub pairing_error: f64,
    /// Pairs of distinct roots closer than `1e3·δ`.
    pub near_double: Vec<(usize, usize)>,
    pub delta: f64,
}

impl RootSet {
    pub fn count_with_multiplicity(&self, m: usize) -> usize {
        self.roots.iter().filter(|r| r.multiplicity == m).count() + usize::from(self.at_infinity == m)
    }

    pub fn is_four_simple(&self) -> bool {
        self.at_infinity == 0 && self.roots.len() == 4 && self.roots.iter().all(|r| r.multiplicity == 1)
    }

    pub fn is_two_double(&self) -> bool {
        self.count_with_multiplicity(2) == 2
    }

    /// Finite roots repeated according to multiplicity.
    pub fn flat(&self) -> Vec<C64> {
        self.roots.iter().flat_map(|r| std::iter::repeat(r.z).take(r.multiplicity)).collect()
    }
}

/// Coefficients whose magnitude is below this are treated as the zero polynomial.
pub const ZERO_QUARTIC: f64 = 1e-12;

pub fn default_delta(q: &DetAQuartic) -> f64 {
    let lead = (0..5).rev().map(|k| q.coeffs[k].norm()).find(|c| *c > ZERO_QUARTIC * q.max_abs()).unwrap_or(1.0);
    1e-7 * (1.0 + q.max_abs() / lead)
}

pub fn roots(q: &DetAQuartic) -> Result<RootSet> {
    roots_with_delta(q, default_delta(q))
}

fn companion_eigenvalues(monic: &[C64]) -> Option<Vec<C64>> {
    let n = monic.len() - 1;
    match n {
        0 => Some(vec![]),
        1 => Some(vec![-monic[0]]),
        _ => {
            // Symmetric companion matrices (e.g. z^4 + c z^2 + 1) can stall the QR sweep; retry on a shifted variable.
            for shift in [C64::new(0.0, 0.0), C64::new(0.31, 0.17), C64::new(-0.23, 0.41)] {
                let shifted = taylor_shift(monic, shift);
                let mut m = DMatrix::<C64>::zeros(n, n);
                for j in 0..n {
                    m[(0, j)] = -shifted[n - 1 - j];
                }
                for i in 1..n {
                    m[(i, i - 1)] = C64::new(1.0, 0.0);
                }
                if let Some(schur) = Schur::try_new(m, f64::EPSILON, 500) {
                    let (_, t) = schur.unpack();
                    return Some((0..n).map(|i| t[(i, i)] + shift).collect());
                }
            }
            None
        }
    }
}

/// Coefficients of `p(y + s)` given those of `p` (index = power).
fn taylor_shift(c: &[C64], s: C64) -> Vec<C64> {
    let mut out = c.to_vec();
    let n = out.len();
    for i in 0..n {
        for j in (i..n - 1).rev() {
            let hi = out[j + 1];
            out[j] += s * hi;
        }
    }
    out
}

fn newton_polish(q: &DetAQuartic, z0: C64, order: usize, iters: usize) -> C64 {
    let mut z = z0;
    let mut best = q.eval_derivative(z, order).norm();
    for _ in 0..iters {
        let p = q.eval_derivative(z, order);
        let dp = q.eval_derivative(z, order + 1);
        if dp.norm() == 0.0 {
            break;
        }
        let cand = z - p / dp;
        let val = q.eval_derivative(cand, order).norm();
        if !(val < best) {
            break;
        }
        best = val;
        z = cand;
    }
    z
}

pub fn roots_with_delta(q: &DetAQuartic, delta: f64) -> Result<RootSet> {
    let scale = q.max_abs();
    if !(scale > ZERO_QUARTIC) {
        return Err(Error::DegenerateQuartic);
    }
    let mut deg = 4;
    while deg > 0 && q.coeffs[deg].norm() <= ZERO_QUARTIC * scale {
        deg -= 1;
    }
    let at_infinity = 4 - deg;
    let lead = q.coeffs[deg];
    let monic: Vec<C64> = (0..=deg).map(|k| q.coeffs[k] / lead).collect();
    let raw: Vec<C64> = companion_eigenvalues(&monic)
        .ok_or_else(|| Error::Precondition("companion eigenvalue iteration did not converge".into()))?
        .into_iter().map(|z| newton_polish(q, z, 0, 20)).collect();

    // Single-linkage clustering at distance delta.
    let n = raw.len();
    let mut label: Vec<usize> = (0..n).collect();
    for i in 0..n {
        for j in (i + 1)..n {
            if (raw[i] - raw[j]).norm() <= delta {
                let (a, b) = (label[i], label[j]);
                for l in label.iter_mut() {
                    if *l == b {
                        *l = a;
                    }
                }
            }
        }
    }
    let mut roots = Vec::new();
    let mut seen = Vec::new();
    for i in 0..n {
        if seen.contains(&label[i]) {
            continue;
        }
        seen.push(label[i]);
        let members: Vec<C64> = (0..n).filter(|&j| label[j] == label[i]).map(|j| raw[j]).collect();
        let m = members.len();
        let mean = members.iter().sum::<C64>() / m as f64;
        let z = if m > 1 {
            let refined = newton_polish(q, mean, m - 1, 30);
            if (refined - mean).norm() <= delta { refined } else { mean }
        } else {
            members[0]
        };
        roots.push(Root { z, multiplicity: m });
    }
    roots.sort_by(|a, b| (a.z.re, a.z.im).partial_cmp(&(b.z.re, b.z.im)).unwrap_or(std::cmp::Ordering::Equal));

    let mut near_double = Vec::new();
    for i in 0..roots.len() {
        for j in (i + 1)..roots.len() {
            if (roots[i].z - roots[j].z).norm() <= 1e3 * delta {
                near_double.push((i, j));
            }
        }
    }

    let mut partner = Vec::with_capacity(roots.len());
    let mut pairing_error = 0.0f64;
    for r in &roots {
        if r.z.norm() <= delta {
            if at_infinity == r.multiplicity {
                partner.push(Partner::Infinity);
            } else {
                partner.push(Partner::Unpaired);
                pairing_error = f64::INFINITY;
            }
            continue;
        }
        let target = -1.0 / r.z.conj();
        let (idx, dist) = roots
            .iter()
            .enumerate()
            .map(|(k, s)| (k, (s.z - target).norm() / target.norm().max(1.0)))
            .fold((usize::MAX, f64::INFINITY), |acc, v| if v.1 < acc.1 { v } else { acc });
        if idx != usize::MAX && roots[idx].multiplicity == r.multiplicity {
            partner.push(Partner::Root(idx));
            pairing_error = pairing_error.max(dist);
        } else {
            partner.push(Partner::Unpaired);
            pairing_error = f64::INFINITY;
        }
    }
    Ok(RootSet { roots, at_infinity, partner, pairing_error, near_double, delta })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MobiusKind {
    Identity,
    FractionalLinear,
    /// Fallback `z = e^{iθ} ζ` when the fractional linear map degenerates.
    Rotation,
}

/// `z = (m00 ζ + m01) / (m10 ζ + m11)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MobiusTransform {
    pub m: [[C64; 2]; 2],
    pub kind: MobiusKind,
}

impl MobiusTransform {
    pub fn identity() -> Self {
        let (o, l) = (C64::new(0.0, 0.0), C64::new(1.0, 0.0));
        MobiusTransform { m: [[l, o], [o, l]], kind: MobiusKind::Identity }
    }

    pub fn from_normalized(&self, zeta: C64) -> C64 {
        let m = &self.m;
        (m[0][0] * zeta + m[0][1]) / (m[1][0] * zeta + m[1][1])
    }

    pub fn to_normalized(&self, z: C64) -> C64 {
        let m = &self.m;
        (m[1][1] * z - m[0][1]) / (-m[1][0] * z + m[0][0])
    }

    /// `Q(ζ) = (m10 ζ + m11)^4 P(z(ζ))`, unnormalized.
    pub fn pull_back(&self, q: &DetAQuartic) -> DetAQuartic {
        let m = &self.m;
        let mut out = [C64::new(0.0, 0.0); 5];
        for k in 0..5 {
            let mut poly = vec![q.coeffs[k]];
            for _ in 0..k {
                poly = poly_mul(&poly, &[m[0][1], m[0][0]]);
            }
            for _ in 0..(4 - k) {
                poly = poly_mul(&poly, &[m[1][1], m[1][0]]);
            }
            for (p, c) in poly.iter().enumerate() {
                out[p] += c;
            }
        }
        DetAQuartic { coeffs: out }
    }
}

fn poly_mul(a: &[C64], b: &[C64]) -> Vec<C64> {
    let mut out = vec![C64::new(0.0, 0.0); a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// Brings `ā z⁴ − b̄ z³ + c z² + b z + a` to `ζ⁴ − b̄₀ ζ³ + c₀ ζ² + b₀ ζ + 1` via
/// `z = ((b−|b|)ζ − b + |b|) / ((−b̄+|b|)ζ − b̄ + |b|)`, falling back to a rotation.
pub fn mobius_normalize(q: &DetAQuartic) -> Result<(DetAQuartic, MobiusTransform)> {
    match mobius_normalize_strict(q) {
        Err(Error::SingularTransform) => rotation_normalize(q),
        other => other,
    }
}

pub fn mobius_normalize_strict(q: &DetAQuartic) -> Result<(DetAQuartic, MobiusTransform)> {
    let scale = q.max_abs();
    if !(scale > ZERO_QUARTIC) {
        return Err(Error::DegenerateQuartic);
    }
    let one = C64::new(1.0, 0.0);
    if (q.coeffs[4] - one).norm() <= 1e-14 && (q.coeffs[0] - one).norm() <= 1e-14 {
        return Ok((*q, MobiusTransform::identity()));
    }
    let b = q.coeffs[1];
    let bn = b.norm();
    if bn <= 1e-14 * scale {
        let lead = q.coeffs[4];
        if lead.norm() <= 1e-14 * scale {
            return Err(Error::SingularTransform);
        }
        return Ok((q.scaled(1.0 / lead), MobiusTransform::identity()));
    }
    let m00 = b - bn;
    let m10 = -b.conj() + bn;
    if m00.norm() <= 1e-12 * bn || m10.norm() <= 1e-12 * bn {
        return Err(Error::SingularTransform);
    }
    let t = MobiusTransform { m: [[m00, -m00], [m10, m10]], kind: MobiusKind::FractionalLinear };
    let pulled = t.pull_back(q);
    let lead = pulled.coeffs[4];
    if lead.norm() <= 1e-12 * pulled.max_abs() {
        return Err(Error::SingularTransform);
    }
    Ok((pulled.scaled(1.0 / lead), t))
}

fn rotation_normalize(q: &DetAQuartic) -> Result<(DetAQuartic, MobiusTransform)> {
    let c4 = q.coeffs[4];
    if c4.norm() <= ZERO_QUARTIC * q.max_abs() {
        return Err(Error::SingularTransform);
    }
    let theta = -c4.arg() / 4.0;
    let rot = C64::from_polar(1.0, theta);
    let o = C64::new(0.0, 0.0);
    let t = MobiusTransform { m: [[rot, o], [o, C64::new(1.0, 0.0)]], kind: MobiusKind::Rotation };
    let pulled = t.pull_back(q);
    Ok((pulled.scaled(C64::new(1.0 / c4.norm(), 0.0)), t))
}

/// Witness `X_i² = 4(f − α_j)(f − α_k)` with `X_i = s_i 2 sqrt(...)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HermitianCertificate {
    pub f: f64,
    pub signs: [f64; 3],
    pub residual: f64,
    /// Index `i` with `f = α_i`, if any.
    pub degenerate: Option<usize>,
    /// True when the quartic vanishes identically and the double-root count is vacuous.
    pub quartic_degenerate: bool,
}

/// Relative residual of the three certificate relations and of the sign relation.
pub fn certificate_residual(alpha: &[f64; 3], x: &[f64; 3], f: f64) -> (f64, f64) {
    let mut rel = [0.0; 3];
    let mut scale = 1.0f64;
    for i in 0..3 {
        let (j, k) = cyc(i);
        let rhs = 4.0 * (f - alpha[j]) * (f - alpha[k]);
        rel[i] = x[i] * x[i] - rhs;
        scale = scale.max(x[i] * x[i]).max(rhs.abs());
    }
    let r = rel.iter().fold(0.0f64, |m, v| m.max(v.abs())) / scale;
    let prod = x[0] * x[1] * x[2] - 8.0 * (f - alpha[0]) * (f - alpha[1]) * (f - alpha[2]);
    (r, prod.abs() / scale.powf(1.5))
}

fn f_candidates(alpha: &[f64; 3], x: &[f64; 3], tol: f64) -> Vec<f64> {
    let scale = 1.0 + alpha.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut best = (0usize, 1usize, 0.0f64);
    for i in 0..3 {
        let (j, _) = cyc(i);
        let gap = (alpha[i] - alpha[j]).abs();
        if gap > best.2 {
            best = (i, j, gap);
        }
    }
    let mut out = Vec::new();
    let (i, j, gap) = best;
    if gap > tol * scale {
        let k = 3 - i - j;
        out.push(alpha[k] + (x[i] * x[i] - x[j] * x[j]) / (4.0 * (alpha[i] - alpha[j])));
    }
    let distinct = (0..3).all(|i| {
        let (j, _) = cyc(i);
        (alpha[i] - alpha[j]).abs() > tol * scale
    });
    if !distinct {
        for i in 0..3 {
            let (j, k) = cyc(i);
            let mid = 0.5 * (alpha[j] + alpha[k]);
            let disc = ((alpha[j] - alpha[k]).powi(2) + x[i] * x[i]).sqrt();
            out.push(mid + 0.5 * disc);
            out.push(mid - 0.5 * disc);
        }
    }
    out
}

/// Tolerance-aware root clustering used to count double roots of near-certificate quartics:
/// a residual `ε` in the relations splits a double root by `O(√ε)`.
pub fn certificate_delta(q: &DetAQuartic, tol: f64) -> f64 {
    default_delta(q).max(10.0 * tol.sqrt() * default_delta(q) / 1e-7)
}

pub fn double_root_certificate(state: &MetricState, tol: f64) -> Result<Option<HermitianCertificate>> {
    state.validate()?;
    let x = reduced_x(state).0;
    let alpha = state.alpha;
    let mut best: Option<(f64, f64, f64)> = None;
    for f in f_candidates(&alpha, &x, tol) {
        let (r, sign) = certificate_residual(&alpha, &x, f);
        if best.map_or(true, |b| r < b.1) {
            best = Some((f, r, sign));
        }
    }
    let Some((f, residual, sign_residual)) = best else { return Ok(None) };
    if residual > tol || sign_residual > tol {
        return Ok(None);
    }
    let scale = 1.0 + alpha.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let degenerate = (0..3).find(|&i| (f - alpha[i]).abs() <= 1e-7 * scale);
    let mut signs = [1.0; 3];
    for i in 0..3 {
        if x[i] != 0.0 {
            signs[i] = x[i].signum();
        }
    }
    let q = build_quartic(state);
    let quartic_degenerate = match roots_with_delta(&q, certificate_delta(&q, tol)) {
        Err(Error::DegenerateQuartic) => true,
        Err(e) => return Err(e),
        Ok(rs) => {
            let doubles = rs.count_with_multiplicity(2);
            if doubles != 2 {
                return Err(Error::InconsistentCertificate { f, doubles });
            }
            false
        }
    };
    Ok(Some(HermitianCertificate { f, signs, residual, degenerate, quartic_degenerate }))
}

/// State with `X_i = s_i 2 sqrt((f − α_j)(f − α_k))`. Only `s1`, `s2` are free: `s3` is fixed by
/// `X1 X2 X3 = 8 (f − α1)(f − α2)(f − α3)`.
pub fn forward_certificate_state(t: f64, w: [f64; 3], alpha: [f64; 3], f: f64, s12: [f64; 2]) -> Result<MetricState> {
    let mut mag = [0.0; 3];
    for i in 0..3 {
        let (j, k) = cyc(i);
        let p = (f - alpha[j]) * (f - alpha[k]);
        if p < 0.0 {
            return Err(Error::Precondition(format!("(f - alpha{})(f - alpha{}) < 0: no real certificate", j + 1, k + 1)));
        }
        mag[i] = 2.0 * p.sqrt();
    }
    let prod_sign = ((f - alpha[0]) * (f - alpha[1]) * (f - alpha[2])).signum();
    let s3 = prod_sign * s12[0] * s12[1];
    let x = [s12[0] * mag[0], s12[1] * mag[1], s3 * mag[2]];
    MetricState::from_reduced_x(t, w, alpha, x)
}
