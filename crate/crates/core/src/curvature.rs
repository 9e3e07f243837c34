//! Curvature oracle: orthonormal coframe, Levi-Civita connection and the curvature operator
//! on two-forms, assembled in blocks `[[A, B], [B^t, D]]` over `(Λ⁺, Λ⁻)`.
//!
//! Coframe `e0 = abc dt`, `e_i = s_i σ̃_i` with `(s_1, s_2, s_3) = (a, b, c)` and
//! `dσ̃_1 = σ̃_2∧σ̃_3 + ξ_3 dt∧σ̃_2 − ξ_2 dt∧σ̃_3` (cyclic).
//! Self-dual basis `Ω⁺_i = e0∧e_i − e_j∧e_k`, anti-self-dual `Ω⁻_i = e0∧e_i + e_j∧e_k`.

use serde::{Deserialize, Serialize};

use crate::dual::Dual;
use crate::error::{Error, Result};
use crate::flow::{self, RhsVariant, StateDerivative, StepController};
use crate::state::{cyc, MetricState};

pub type Mat3 = [[f64; 3]; 3];
type Tensor3 = [[[f64; 4]; 4]; 4];
/// Antisymmetric 4×4 array `F` for the two-form `Σ_{l<m} F[l][m] e_l∧e_m`.
pub type TwoForm = [[f64; 4]; 4];

/// Value and first two t-derivatives of the data the coframe depends on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricJet {
    pub w: [f64; 3],
    pub dw: [f64; 3],
    pub ddw: [f64; 3],
    pub xi: [f64; 3],
    pub dxi: [f64; 3],
}

/// Jet from a state and its derivative by the chain rule through `dw = -w_j w_k + w_i(α_j + α_k)`.
pub fn analytic_jet(state: &MetricState, deriv: &StateDerivative) -> MetricJet {
    let (w, a) = (state.w, state.alpha);
    let (dw, da, de) = (deriv.dw, deriv.dalpha, deriv.deta);
    let ddw = std::array::from_fn(|i| {
        let (j, k) = cyc(i);
        -dw[j] * w[k] - w[j] * dw[k] + dw[i] * (a[j] + a[k]) + w[i] * (da[j] + da[k])
    });
    let dxi = std::array::from_fn(|i| {
        let (j, k) = cyc(i);
        de[i] * w[j] * w[k] + state.eta[i] * (dw[j] * w[k] + w[j] * dw[k])
    });
    MetricJet { w, dw, ddw, xi: state.xi(), dxi }
}

/// Three-point derivative weights at the middle of a possibly uneven stencil.
pub fn three_point_weights(t_prev: f64, t_mid: f64, t_next: f64) -> [f64; 3] {
    let h1 = t_mid - t_prev;
    let h2 = t_next - t_mid;
    [-h2 / (h1 * (h1 + h2)), (h2 - h1) / (h1 * h2), h1 / (h2 * (h1 + h2))]
}

/// Jet whose second derivatives come from central differences of neighbouring states.
pub fn fd_jet(prev: &MetricState, mid: &MetricState, next: &MetricState) -> MetricJet {
    let c = three_point_weights(prev.t, mid.t, next.t);
    let d3 = |f: &dyn Fn(&MetricState) -> [f64; 3]| -> [f64; 3] {
        let (p, m, n) = (f(prev), f(mid), f(next));
        std::array::from_fn(|i| c[0] * p[i] + c[1] * m[i] + c[2] * n[i])
    };
    let dw_of = |s: &MetricState| flow::dw(&s.w, &s.alpha);
    MetricJet {
        w: mid.w,
        dw: dw_of(mid),
        ddw: d3(&dw_of),
        xi: mid.xi(),
        dxi: d3(&|s: &MetricState| s.xi()),
    }
}

/// Scales `(abc, a, b, c)` and structure coefficients `de^i = −½ C^i_{jk} e^j∧e^k`, each with
/// its t-derivative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoframeStructure {
    pub scales: [f64; 4],
    pub dscales: [f64; 4],
    pub c: Tensor3,
    pub dc: Tensor3,
}

impl CoframeStructure {
    /// `de^i` as a two-form.
    pub fn de(&self, i: usize) -> TwoForm {
        let mut f = [[0.0; 4]; 4];
        for l in 0..4 {
            for m in 0..4 {
                f[l][m] = -self.c[i][l][m];
            }
        }
        f
    }

    /// Component of `dt` along `e0`, i.e. `1/(abc)`.
    pub fn lapse_inverse(&self) -> f64 {
        1.0 / self.scales[0]
    }
}

pub fn coframe(state: &MetricState) -> Result<CoframeStructure> {
    state.validate()?;
    let d = flow::rhs(state)?;
    Ok(coframe_from_jet(&analytic_jet(state, &d)))
}

pub fn coframe_from_jet(jet: &MetricJet) -> CoframeStructure {
    let w: [Dual; 3] = std::array::from_fn(|i| Dual::new(jet.w[i], jet.dw[i]));
    let dw: [Dual; 3] = std::array::from_fn(|i| Dual::new(jet.dw[i], jet.ddw[i]));
    let xi: [Dual; 3] = std::array::from_fn(|i| Dual::new(jet.xi[i], jet.dxi[i]));
    let half = Dual::constant(0.5);
    let mut s = [Dual::ZERO; 4];
    let mut ds = [Dual::ZERO; 4];
    for i in 0..3 {
        let (j, k) = cyc(i);
        s[i + 1] = (w[j] * w[k] / w[i]).sqrt();
        ds[i + 1] = s[i + 1] * half * (dw[j] / w[j] + dw[k] / w[k] - dw[i] / w[i]);
    }
    s[0] = s[1] * s[2] * s[3];
    ds[0] = ds[1] * s[2] * s[3] + s[1] * ds[2] * s[3] + s[1] * s[2] * ds[3];
    let zero = Dual::ZERO;
    let m = [[zero, xi[2], -xi[1]], [-xi[2], zero, xi[0]], [xi[1], -xi[0], zero]];
    let mut c = [[[Dual::ZERO; 4]; 4]; 4];
    for p in 0..3 {
        let i = p + 1;
        let (jp, kp) = cyc(p);
        let (j, k) = (jp + 1, kp + 1);
        let diag = -(ds[i] / (s[0] * s[i]));
        c[i][0][i] = diag;
        c[i][i][0] = -diag;
        let rot = -(s[i] / (s[j] * s[k]));
        c[i][j][k] = rot;
        c[i][k][j] = -rot;
        for q in 0..3 {
            if q == p {
                continue;
            }
            let mm = q + 1;
            let v = -(s[i] * m[p][q] / (s[0] * s[mm]));
            c[i][0][mm] = v;
            c[i][mm][0] = -v;
        }
    }
    CoframeStructure {
        scales: s.map(|x| x.v),
        dscales: s.map(|x| x.d),
        c: map3(&c, |x| x.v),
        dc: map3(&c, |x| x.d),
    }
}

fn map3(t: &[[[Dual; 4]; 4]; 4], f: impl Fn(Dual) -> f64) -> Tensor3 {
    std::array::from_fn(|i| std::array::from_fn(|j| std::array::from_fn(|k| f(t[i][j][k]))))
}

/// `ω_{ij} = Σ_k omega[i][j][k] e^k`, with t-derivatives of the coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConnectionData {
    pub omega: Tensor3,
    pub domega: Tensor3,
}

fn koszul(c: &Tensor3) -> Tensor3 {
    std::array::from_fn(|i| {
        std::array::from_fn(|j| std::array::from_fn(|k| 0.5 * (-c[i][j][k] - c[j][k][i] + c[k][i][j])))
    })
}

pub fn connection(cof: &CoframeStructure) -> ConnectionData {
    ConnectionData { omega: koszul(&cof.c), domega: koszul(&cof.dc) }
}

/// Largest component of `de^i + ω^i_j∧e^j`.
pub fn structure_residual(cof: &CoframeStructure, conn: &ConnectionData) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..4 {
        for l in 0..4 {
            for m in 0..4 {
                let r = -cof.c[i][l][m] + conn.omega[i][m][l] - conn.omega[i][l][m];
                worst = worst.max(r.abs());
            }
        }
    }
    worst
}

pub fn wedge11(u: &[f64; 4], v: &[f64; 4]) -> TwoForm {
    std::array::from_fn(|l| std::array::from_fn(|m| u[l] * v[m] - u[m] * v[l]))
}

/// `R_{ij} = dω_{ij} + ω_{ik}∧ω_{kj}` as two-forms, `R[i][j]`.
pub fn curvature_forms(cof: &CoframeStructure, conn: &ConnectionData) -> [[TwoForm; 4]; 4] {
    let inv_n = cof.lapse_inverse();
    let mut r = [[[[0.0; 4]; 4]; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            let f = &mut r[i][j];
            for k in 0..4 {
                let dw = conn.domega[i][j][k] * inv_n;
                if k != 0 {
                    f[0][k] += dw;
                    f[k][0] -= dw;
                }
                let w = conn.omega[i][j][k];
                if w != 0.0 {
                    for l in 0..4 {
                        for m in 0..4 {
                            f[l][m] -= w * cof.c[k][l][m];
                        }
                    }
                }
                let wedge = wedge11(&conn.omega[i][k], &conn.omega[k][j]);
                for l in 0..4 {
                    for m in 0..4 {
                        f[l][m] += wedge[l][m];
                    }
                }
            }
        }
    }
    r
}

/// Two-form basis element as `(e_l∧e_m, coefficient)` pairs.
type Basis = [[((usize, usize), f64); 2]; 3];

const PLUS: Basis = [[((0, 1), 1.0), ((2, 3), -1.0)], [((0, 2), 1.0), ((3, 1), -1.0)], [((0, 3), 1.0), ((1, 2), -1.0)]];
const MINUS: Basis = [[((0, 1), 1.0), ((2, 3), 1.0)], [((0, 2), 1.0), ((3, 1), 1.0)], [((0, 3), 1.0), ((1, 2), 1.0)]];

fn block(r: &[[TwoForm; 4]; 4], rows: &Basis, cols: &Basis) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for p in 0..3 {
        for q in 0..3 {
            let mut acc = 0.0;
            for &((i, j), cx) in &rows[p] {
                for &((l, m), cy) in &cols[q] {
                    acc += cx * cy * r[i][j][l][m];
                }
            }
            out[p][q] = 0.5 * acc;
        }
    }
    out
}

/// Curvature operator blocks in the `(Ω⁺, Ω⁻)` basis and the scalar curvature `s = 4 tr D`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvatureBlock {
    pub a: Mat3,
    pub b: Mat3,
    pub d: Mat3,
    pub s: f64,
    /// Transpose of the lower-left block, assembled independently of `b`.
    pub b_lower_t: Mat3,
}

impl CurvatureBlock {
    pub fn trace_a(&self) -> f64 {
        trace(&self.a)
    }

    pub fn trace_d(&self) -> f64 {
        trace(&self.d)
    }

    /// Self-dual Weyl block `A − s/12`.
    pub fn weyl_plus(&self) -> Mat3 {
        shift_diag(&self.a, -self.s / 12.0)
    }

    pub fn weyl_minus(&self) -> Mat3 {
        shift_diag(&self.d, -self.s / 12.0)
    }
}

fn trace(m: &Mat3) -> f64 {
    m[0][0] + m[1][1] + m[2][2]
}

fn shift_diag(m: &Mat3, x: f64) -> Mat3 {
    let mut o = *m;
    for (i, row) in o.iter_mut().enumerate() {
        row[i] += x;
    }
    o
}

pub fn transpose(m: &Mat3) -> Mat3 {
    std::array::from_fn(|i| std::array::from_fn(|j| m[j][i]))
}

/// Induced infinity norm (largest absolute row sum).
pub fn inf_norm(m: &Mat3) -> f64 {
    m.iter().map(|r| r.iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max)
}

pub fn max_abs_diff(x: &Mat3, y: &Mat3) -> f64 {
    let mut m = 0.0f64;
    for i in 0..3 {
        for j in 0..3 {
            m = m.max((x[i][j] - y[i][j]).abs());
        }
    }
    m
}

pub fn curvature_block_from_jet(jet: &MetricJet) -> CurvatureBlock {
    let cof = coframe_from_jet(jet);
    let conn = connection(&cof);
    let r = curvature_forms(&cof, &conn);
    let d = block(&r, &MINUS, &MINUS);
    CurvatureBlock {
        a: block(&r, &PLUS, &PLUS),
        b: block(&r, &PLUS, &MINUS),
        d,
        s: 4.0 * trace(&d),
        b_lower_t: transpose(&block(&r, &MINUS, &PLUS)),
    }
}

pub fn curvature_block(state: &MetricState, deriv: &StateDerivative) -> Result<CurvatureBlock> {
    state.validate()?;
    Ok(curvature_block_from_jet(&analytic_jet(state, deriv)))
}

/// `‖A‖∞` of the curvature operator on the flow's own derivative.
pub fn asd_residual(state: &MetricState) -> Result<f64> {
    let d = flow::rhs(state)?;
    Ok(inf_norm(&curvature_block(state, &d)?.a))
}

/// Intrinsic time scale used to size finite-difference steps.
pub fn timescale(state: &MetricState) -> Result<f64> {
    let d = flow::rhs(state)?.to_array();
    let y = state.to_array();
    let rate = (0..9).map(|n| d[n].abs() / (1.0 + y[n].abs())).fold(0.0, f64::max);
    Ok(1.0 / (1.0 + rate))
}

/// Curvature from states at `t ± h`, `h = 1e-5 · timescale`, integrated with tight tolerances.
pub fn curvature_block_fd(state: &MetricState) -> Result<CurvatureBlock> {
    curvature_block_fd_variant(state, RhsVariant::Asd)
}

/// As [`curvature_block_fd`], with the neighbours produced by the given right-hand side.
pub fn curvature_block_fd_variant(state: &MetricState, variant: RhsVariant) -> Result<CurvatureBlock> {
    let h = 1e-5 * timescale(state)?;
    let ctl = StepController { rtol: 1e-13, atol: 1e-15, ..Default::default() };
    let fwd = flow::integrate_variant(state, state.t + h, &ctl, variant)?;
    let bwd = flow::integrate_variant(state, state.t - h, &ctl, variant)?;
    if fwd.termination.is_singular() || bwd.termination.is_singular() {
        return Err(Error::Precondition("finite-difference neighbours hit a singularity".into()));
    }
    Ok(curvature_block_from_jet(&fd_jet(&bwd.last().state, state, &fwd.last().state)))
}

/// Both derivative paths; fails if they disagree by more than `1e-4` relative.
pub fn curvature_block_checked(state: &MetricState, deriv: &StateDerivative) -> Result<(CurvatureBlock, CurvatureBlock)> {
    let an = curvature_block(state, deriv)?;
    let fd = curvature_block_fd(state)?;
    let gap = block_gap(&an, &fd);
    if gap > 1e-4 {
        return Err(Error::InconsistentDerivative { gap });
    }
    Ok((an, fd))
}

/// Largest entry difference of the full 6×6 operator, relative to its largest entry.
pub fn block_gap(x: &CurvatureBlock, y: &CurvatureBlock) -> f64 {
    let diff = max_abs_diff(&x.a, &y.a).max(max_abs_diff(&x.b, &y.b)).max(max_abs_diff(&x.d, &y.d));
    let scale = [x.a, x.b, x.d].iter().flat_map(|m| m.iter().flatten()).fold(0.0f64, |m, v| m.max(v.abs()));
    diff / (1.0 + scale)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn st(w: [f64; 3], alpha: [f64; 3], eta: [f64; 3]) -> MetricState {
        MetricState::new(0.0, w, alpha, eta).unwrap()
    }

    #[test]
    fn unit_scale_structure_constants() {
        let cof = coframe(&st([1.0; 3], [0.0; 3], [0.0; 3])).unwrap();
        assert_eq!(cof.scales, [1.0; 4]);
        for i in 1..4 {
            let (j, k) = (i % 3 + 1, (i + 1) % 3 + 1);
            assert_eq!(cof.c[i][j][k], -1.0);
            assert_eq!(cof.c[i][k][j], 1.0);
        }
    }

    #[test]
    fn xi_terms_land_in_the_dt_slots() {
        let s = st([1.0, 1.5, 2.0], [0.1, 0.2, 0.3], [0.0, 0.7, -0.4]);
        let cof = coframe(&s).unwrap();
        let xi = s.xi();
        let [n, a, b, c] = cof.scales;
        assert!((cof.c[1][0][2] - (-a * xi[2] / (n * b))).abs() < 1e-14);
        assert!((cof.c[1][0][3] - (a * xi[1] / (n * c))).abs() < 1e-14);
        let diag = st([1.0, 1.5, 2.0], [0.1, 0.2, 0.3], [0.0; 3]);
        let cd = coframe(&diag).unwrap();
        assert_eq!(cd.c[1][0][2], 0.0);
        assert_eq!(cd.c[1][0][3], 0.0);
    }

    #[test]
    fn coefficients_are_antisymmetric() {
        let cof = coframe(&st([0.8, 1.7, 2.4], [0.3, -1.0, 0.5], [0.2, -0.6, 1.1])).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                for k in 0..4 {
                    assert_eq!(cof.c[i][j][k], -cof.c[i][k][j]);
                }
            }
        }
    }

    #[test]
    fn homogeneity_under_w_scaling() {
        let base = st([0.8, 1.7, 2.4], [0.3, -1.0, 0.5], [0.2, -0.6, 1.1]);
        let lam = 2.5;
        let scaled = st(base.w.map(|v| lam * v), base.alpha.map(|v| lam * v), base.eta.map(|v| v / lam));
        let c0 = coframe(&base).unwrap();
        let c1 = coframe(&scaled).unwrap();
        let k = lam.powf(-0.5);
        for i in 0..4 {
            for j in 0..4 {
                for l in 0..4 {
                    assert!((c1.c[i][j][l] - k * c0.c[i][j][l]).abs() < 1e-13);
                }
            }
        }
        // Holding eta fixed instead leaves the rotation slots with weight +1/2.
        let eta_fixed = st(base.w.map(|v| lam * v), base.alpha.map(|v| lam * v), base.eta);
        let c2 = coframe(&eta_fixed).unwrap();
        assert!((c2.c[1][0][2] - lam.sqrt() * c0.c[1][0][2]).abs() < 1e-13);
        assert!((c2.c[1][2][3] - k * c0.c[1][2][3]).abs() < 1e-13);
        assert!((c2.c[1][0][1] - k * c0.c[1][0][1]).abs() < 1e-13);
    }

    #[test]
    fn flat_coframe_has_zero_connection() {
        let cof = CoframeStructure { scales: [1.0; 4], dscales: [0.0; 4], c: [[[0.0; 4]; 4]; 4], dc: [[[0.0; 4]; 4]; 4] };
        let conn = connection(&cof);
        assert!(conn.omega.iter().flatten().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn connection_solves_structure_equations() {
        let cof = coframe(&st([0.8, 1.7, 2.4], [0.3, -1.0, 0.5], [0.2, -0.6, 1.1])).unwrap();
        let conn = connection(&cof);
        assert!(structure_residual(&cof, &conn) <= 1e-12);
        for i in 0..4 {
            for j in 0..4 {
                for k in 0..4 {
                    assert_eq!(conn.omega[i][j][k], -conn.omega[j][i][k]);
                }
            }
        }
    }

    #[test]
    fn diagonal_connection_matches_hand_derivation() {
        // For eta = 0: ω_{0i} = −(ȧ_i/(N a_i)) e_i and ω_{jk} = ½(s_j/(s_k s_i) + s_k/(s_i s_j) − s_i/(s_j s_k)) e_i.
        let s = st([0.9, 1.6, 2.2], [0.4, -0.3, 0.8], [0.0; 3]);
        let cof = coframe(&s).unwrap();
        let conn = connection(&cof);
        let [n, ..] = cof.scales;
        for i in 1..4 {
            let want = -cof.dscales[i] / (n * cof.scales[i]);
            assert!((conn.omega[0][i][i] - want).abs() < 1e-13, "omega_0{i}");
            let (j, k) = (i % 3 + 1, (i + 1) % 3 + 1);
            let (si, sj, sk) = (cof.scales[i], cof.scales[j], cof.scales[k]);
            let want = 0.5 * (sj / (sk * si) + sk / (si * sj) - si / (sj * sk));
            assert!((conn.omega[j][k][i] - want).abs() < 1e-13, "omega_{j}{k}");
        }
    }

    /// Round four-sphere `dr^2 + sin^2 r (σ̃_1^2 + σ̃_2^2 + σ̃_3^2)/4`: the operator is the identity.
    #[test]
    fn round_sphere_is_identity() {
        let r = 0.9f64;
        let s = r.sin() / 2.0;
        let ds_dr = r.cos() / 2.0;
        let d2s_dr2 = -r.sin() / 2.0;
        let rdot = s * s * s;
        let sdot = ds_dr * rdot;
        let rddot = 3.0 * s * s * sdot;
        let sddot = d2s_dr2 * rdot * rdot + ds_dr * rddot;
        let w = s * s;
        let jet = MetricJet {
            w: [w; 3],
            dw: [2.0 * s * sdot; 3],
            ddw: [2.0 * sdot * sdot + 2.0 * s * sddot; 3],
            xi: [0.0; 3],
            dxi: [0.0; 3],
        };
        let blk = curvature_block_from_jet(&jet);
        for i in 0..3 {
            for j in 0..3 {
                let id = if i == j { 1.0 } else { 0.0 };
                assert!((blk.a[i][j] - id).abs() < 1e-12);
                assert!((blk.d[i][j] - id).abs() < 1e-12);
                assert!(blk.b[i][j].abs() < 1e-12);
            }
        }
        assert!((blk.s - 12.0).abs() < 1e-11);
    }

    #[test]
    fn generic_state_is_asd_but_not_einstein() {
        let s = st([0.7, 1.9, 2.6], [0.5, -1.2, 0.9], [0.3, -0.8, 1.4]);
        let d = flow::rhs(&s).unwrap();
        let blk = curvature_block(&s, &d).unwrap();
        let tol = 1e-8 * (1.0 + s.norm().powi(2));
        assert!(inf_norm(&blk.a) <= tol, "A = {:?}", blk.a);
        assert!(inf_norm(&blk.b) > 1e-3);
        assert!(inf_norm(&blk.d) > 1e-3);
        assert!(blk.s.abs() <= tol);
    }

    #[test]
    fn perturbed_eta_breaks_asd() {
        let s = st([0.7, 1.9, 2.6], [0.5, -1.2, 0.9], [0.3, -0.8, 1.4]);
        let d = flow::rhs(&s).unwrap();
        let mut p = s;
        p.eta[0] += 0.01 * s.norm();
        assert!(inf_norm(&curvature_block(&p, &d).unwrap().a) > 1e-4);
    }

    #[test]
    fn block_symmetries() {
        let s = st([1.1, 0.6, 2.9], [-0.5, 1.3, 0.2], [1.7, 0.4, -0.9]);
        let d = flow::rhs(&s).unwrap();
        let blk = curvature_block(&s, &d).unwrap();
        assert!(max_abs_diff(&blk.a, &transpose(&blk.a)) <= 1e-12);
        assert!(max_abs_diff(&blk.d, &transpose(&blk.d)) <= 1e-12);
        assert!(max_abs_diff(&blk.b, &blk.b_lower_t) <= 1e-10);
        assert!((blk.s - 4.0 * blk.trace_d()).abs() <= 1e-12 * (1.0 + blk.s.abs()));
        assert!((blk.trace_a() - blk.trace_d()).abs() <= 1e-10);
    }

    #[test]
    fn zeroed_alpha_dot_is_not_asd() {
        let s = st([0.7, 1.9, 2.6], [0.5, -1.2, 0.9], [0.3, -0.8, 1.4]);
        let d = flow::rhs_variant(&s, flow::RhsVariant::ZeroAlphaDot).unwrap();
        assert!(inf_norm(&curvature_block(&s, &d).unwrap().a) > 1e-3);
    }

    #[test]
    fn finite_difference_path_agrees() {
        let s = st([0.7, 1.9, 2.6], [0.5, -1.2, 0.9], [0.3, -0.8, 1.4]);
        let d = flow::rhs(&s).unwrap();
        let (an, fd) = curvature_block_checked(&s, &d).unwrap();
        assert!(block_gap(&an, &fd) < 1e-7);
    }
}
