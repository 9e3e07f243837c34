//! The ninth-order ASD system, its special-family reductions and an adaptive integrator.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::state::{cyc, reduced_x, MetricState};

/// Guard on `|w_j^2 - w_k^2|` before dividing the eta equations through.
pub const EPS_DEN: f64 = 1e-10;
/// Below this `|eta_i|` a vanishing denominator is treated as the diagonal branch.
pub const ETA_DIAGONAL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StateDerivative {
    pub dw: [f64; 3],
    pub dalpha: [f64; 3],
    pub deta: [f64; 3],
}

impl StateDerivative {
    pub fn to_array(&self) -> [f64; 9] {
        let mut y = [0.0; 9];
        y[..3].copy_from_slice(&self.dw);
        y[3..6].copy_from_slice(&self.dalpha);
        y[6..].copy_from_slice(&self.deta);
        y
    }

    pub fn from_array(y: &[f64; 9]) -> Self {
        StateDerivative {
            dw: [y[0], y[1], y[2]],
            dalpha: [y[3], y[4], y[5]],
            deta: [y[6], y[7], y[8]],
        }
    }
}

/// Which right-hand side drives the flow. `ZeroAlphaDot` is a negative-control hook.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum RhsVariant {
    #[default]
    Asd,
    ZeroAlphaDot,
}

/// `dw_i = -w_j w_k + w_i (alpha_j + alpha_k)`.
pub fn dw(w: &[f64; 3], alpha: &[f64; 3]) -> [f64; 3] {
    std::array::from_fn(|i| {
        let (j, k) = cyc(i);
        -w[j] * w[k] + w[i] * (alpha[j] + alpha[k])
    })
}

fn dalpha(w: &[f64; 3], alpha: &[f64; 3], eta: &[f64; 3]) -> [f64; 3] {
    let sq = w.map(|v| v * v);
    std::array::from_fn(|i| {
        let (j, k) = cyc(i);
        let d = sq[j] - sq[k];
        -alpha[j] * alpha[k]
            + alpha[i] * (alpha[j] + alpha[k])
            + 0.25 * d * d * eta[i] * eta[i]
            + 0.25 * (sq[k] - sq[i]) * (3.0 * sq[i] + sq[k]) * eta[j] * eta[j]
            + 0.25 * (sq[j] - sq[i]) * (3.0 * sq[i] + sq[j]) * eta[k] * eta[k]
    })
}

/// Right-hand side of `(w_j^2 - w_k^2) d(eta_i)/dt`.
fn deta_numerator(w: &[f64; 3], alpha: &[f64; 3], eta: &[f64; 3], i: usize) -> f64 {
    let sq = w.map(|v| v * v);
    let (j, k) = cyc(i);
    eta[j] * eta[k] * (-2.0 * sq[j] * sq[k] + sq[k] * sq[i] + sq[i] * sq[j])
        + eta[i] * (alpha[j] * sq[j] - alpha[k] * sq[k] + 3.0 * alpha[j] * sq[k] - 3.0 * alpha[k] * sq[j])
}

fn deta(w: &[f64; 3], alpha: &[f64; 3], eta: &[f64; 3]) -> Result<[f64; 3]> {
    let mut out = [0.0; 3];
    for i in 0..3 {
        let (j, k) = cyc(i);
        let gap = w[j] * w[j] - w[k] * w[k];
        if gap.abs() < EPS_DEN {
            if eta[i].abs() > ETA_DIAGONAL_TOL {
                return Err(Error::DegenerateDenominator { i: i + 1, j: j + 1, k: k + 1, gap, eta: eta[i] });
            }
            continue;
        }
        out[i] = deta_numerator(w, alpha, eta, i) / gap;
    }
    Ok(out)
}

pub fn rhs(state: &MetricState) -> Result<StateDerivative> {
    rhs_variant(state, RhsVariant::Asd)
}

pub fn rhs_variant(state: &MetricState, variant: RhsVariant) -> Result<StateDerivative> {
    let (w, alpha, eta) = (&state.w, &state.alpha, &state.eta);
    let mut d = StateDerivative { dw: dw(w, alpha), dalpha: dalpha(w, alpha, eta), deta: deta(w, alpha, eta)? };
    if variant == RhsVariant::ZeroAlphaDot {
        d.dalpha = [0.0; 3];
    }
    Ok(d)
}

/// `f(t) = f0 / (1 - f0 (t - t0))`, the solution of `f' = f^2`.
pub fn f_flow(f0: f64, t0: f64, t: f64) -> Result<f64> {
    let den = 1.0 - f0 * (t - t0);
    if den.abs() <= 1e-12 {
        return Err(Error::PoleReached);
    }
    Ok(f0 / den)
}

/// Human-readable listing of the coefficient pattern used by [`rhs`].
pub fn coefficients_report() -> String {
    let mut s = String::new();
    s.push_str("# ASD flow coefficients\n\n");
    s.push_str("Indices (i,j,k) run over the cyclic triples (1,2,3), (2,3,1), (3,1,2).\n\n");
    s.push_str("## w\n\n    dw_i/dt = -w_j w_k + w_i (alpha_j + alpha_k)\n\n");
    s.push_str("## alpha\n\n    dalpha_i/dt = -alpha_j alpha_k + alpha_i (alpha_j + alpha_k)\n");
    s.push_str("                + 1/4 (w_j^2 - w_k^2)^2 eta_i^2\n");
    s.push_str("                + 1/4 (w_k^2 - w_i^2)(3 w_i^2 + w_k^2) eta_j^2\n");
    s.push_str("                + 1/4 (w_j^2 - w_i^2)(3 w_i^2 + w_j^2) eta_k^2\n\n");
    s.push_str("## eta = xi_i / (w_j w_k)\n\n");
    s.push_str("    (w_j^2 - w_k^2) deta_i/dt = eta_j eta_k (-2 w_j^2 w_k^2 + w_k^2 w_i^2 + w_i^2 w_j^2)\n");
    s.push_str("                              + eta_i (alpha_j w_j^2 - alpha_k w_k^2 + 3 alpha_j w_k^2 - 3 alpha_k w_j^2)\n\n");
    s.push_str("Expanded per component:\n\n");
    let names = ["1", "2", "3"];
    for i in 0..3 {
        let (j, k) = cyc(i);
        let (i_, j_, k_) = (names[i], names[j], names[k]);
        s.push_str(&format!(
            "    (w{j_}^2 - w{k_}^2) deta{i_}/dt = eta{j_} eta{k_} (-2 w{j_}^2 w{k_}^2 + w{k_}^2 w{i_}^2 + w{i_}^2 w{j_}^2)\n"
        ));
        s.push_str(&format!(
            "        + eta{i_} (alpha{j_} w{j_}^2 - alpha{k_} w{k_}^2 + 3 alpha{j_} w{k_}^2 - 3 alpha{k_} w{j_}^2)\n"
        ));
    }
    s.push_str("\n## Corrected eta terms\n\n");
    s.push_str("| equation | uncorrected | used |\n|---|---|---|\n");
    s.push_str("| eta1 | +3 alpha3 w2^2 | -3 alpha3 w2^2 |\n");
    s.push_str("| eta2 | +3 alpha1 w2^2 | -3 alpha1 w3^2 |\n");
    s.push_str("| eta3 | xi1/(w1 w3) | xi1/(w2 w3) |\n");
    s.push_str("| eta3 | +3 alpha2 w1^2 | -3 alpha2 w1^2 |\n");
    s.push_str("\nEach correction is the unique choice for which the self-dual Weyl block A of the curvature\n");
    s.push_str("operator vanishes identically along the flow (checked by the curvature oracle).\n");
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Method {
    DormandPrince,
    /// Classical fixed-step RK4, kept as a cross-check.
    Rk4 { h: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepController {
    pub rtol: f64,
    pub atol: f64,
    pub max_step: f64,
    pub h_init: Option<f64>,
    pub max_steps: usize,
    pub eps_pos: f64,
    pub blowup: f64,
    pub method: Method,
}

impl Default for StepController {
    fn default() -> Self {
        StepController {
            rtol: 1e-10,
            atol: 1e-12,
            max_step: f64::INFINITY,
            h_init: None,
            max_steps: 1_000_000,
            eps_pos: 1e-8,
            blowup: 1e12,
            method: Method::DormandPrince,
        }
    }
}

impl StepController {
    pub fn with_tolerances(rtol: f64, atol: f64) -> Self {
        StepController { rtol, atol, ..Default::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Completed,
    BlowUp,
    WPositiveViolated,
    NonDiagonalDegeneracy,
}

impl Termination {
    pub fn name(self) -> &'static str {
        match self {
            Termination::Completed => "completed",
            Termination::BlowUp => "blow_up",
            Termination::WPositiveViolated => "w_positive_violated",
            Termination::NonDiagonalDegeneracy => "non_diagonal_degeneracy",
        }
    }

    pub fn is_singular(self) -> bool {
        self != Termination::Completed
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StepMeta {
    /// Size of the step that produced the sample (0 for the initial sample).
    pub h: f64,
    pub error_norm: f64,
    pub rejected: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub state: MetricState,
    pub deriv: StateDerivative,
    pub meta: StepMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub t0: f64,
    pub t_end: f64,
    pub controller: StepController,
    pub variant: RhsVariant,
    pub termination: Termination,
}

impl Trajectory {
    pub fn last(&self) -> &Sample {
        self.samples.last().expect("trajectory always holds the initial sample")
    }

    pub fn states(&self) -> impl Iterator<Item = &MetricState> {
        self.samples.iter().map(|s| &s.state)
    }
}

const DP_C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const DP_A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
/// Fifth-order weights minus embedded fourth-order weights.
const DP_E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// One Dormand–Prince 5(4) step. Returns `(y_new, f(y_new), error_estimate)`.
fn dopri_step<const N: usize, F>(f: &mut F, t: f64, y: &[f64; N], k1: &[f64; N], h: f64) -> Result<([f64; N], [f64; N], [f64; N])>
where
    F: FnMut(f64, &[f64; N]) -> Result<[f64; N]>,
{
    let mut k = [[0.0; N]; 7];
    k[0] = *k1;
    for s in 1..7 {
        let mut ys = *y;
        for (stage, ks) in k.iter().enumerate().take(s) {
            let a = DP_A[s][stage];
            if a != 0.0 {
                for n in 0..N {
                    ys[n] += h * a * ks[n];
                }
            }
        }
        k[s] = f(t + DP_C[s] * h, &ys)?;
        if s == 6 {
            let mut err = [0.0; N];
            for n in 0..N {
                err[n] = h * (0..7).map(|q| DP_E[q] * k[q][n]).sum::<f64>();
            }
            return Ok((ys, k[6], err));
        }
    }
    unreachable!()
}

fn rk4_step<const N: usize, F>(f: &mut F, t: f64, y: &[f64; N], k1: &[f64; N], h: f64) -> Result<[f64; N]>
where
    F: FnMut(f64, &[f64; N]) -> Result<[f64; N]>,
{
    let shift = |base: &[f64; N], k: &[f64; N], c: f64| -> [f64; N] { std::array::from_fn(|n| base[n] + c * k[n]) };
    let k2 = f(t + 0.5 * h, &shift(y, k1, 0.5 * h))?;
    let k3 = f(t + 0.5 * h, &shift(y, &k2, 0.5 * h))?;
    let k4 = f(t + h, &shift(y, &k3, h))?;
    Ok(std::array::from_fn(|n| y[n] + h / 6.0 * (k1[n] + 2.0 * k2[n] + 2.0 * k3[n] + k4[n])))
}

/// Outcome of a step-by-step integration of a generic autonomous-in-form system.
pub(crate) struct RawRun<const N: usize> {
    pub points: Vec<(f64, [f64; N], [f64; N], StepMeta)>,
    pub termination: Termination,
}

pub(crate) enum Verdict {
    Continue,
    Stop(Termination),
}

/// Adaptive integration with PI control. `record` picks which accepted points are kept:
/// every step, or only the given output times (which the steps are clamped to hit).
pub(crate) fn run<const N: usize, F, C>(
    f: &mut F,
    check: &mut C,
    t0: f64,
    y0: [f64; N],
    outputs: Option<&[f64]>,
    t_end: f64,
    ctl: &StepController,
) -> Result<RawRun<N>>
where
    F: FnMut(f64, &[f64; N]) -> Result<[f64; N]>,
    C: FnMut(f64, &[f64; N], &[f64; N]) -> Result<Verdict>,
{
    let k0 = f(t0, &y0).map_err(|e| Error::ImmediateSingularity(Box::new(e)))?;
    let mut points = vec![(t0, y0, k0, StepMeta::default())];
    if t_end == t0 {
        return Ok(RawRun { points, termination: Termination::Completed });
    }
    let dir = (t_end - t0).signum();
    let span = (t_end - t0).abs();
    let mut t = t0;
    let mut y = y0;
    let mut k1 = k0;
    let mut next_out = 0usize;
    if let Some(outs) = outputs {
        while next_out < outs.len() && (outs[next_out] - t0) * dir <= 0.0 {
            next_out += 1;
        }
    }
    let mut h = match ctl.method {
        Method::Rk4 { h } => h.abs().min(span),
        Method::DormandPrince => ctl.h_init.unwrap_or_else(|| {
            let scale = (0..N).map(|n| k0[n].abs() / (ctl.atol + ctl.rtol * y0[n].abs())).fold(0.0f64, f64::max);
            let guess = if scale > 0.0 { 0.01 * scale.powf(-0.2) } else { 1e-3 };
            guess.min(span).min(0.1 * span.max(1e-3)).max(1e-12 * span)
        }),
    };
    h = h.min(ctl.max_step);
    let mut prev_err = 1e-4f64;
    let mut steps = 0usize;
    let mut rejected = 0usize;
    let mut stage_error: Option<Error> = None;
    let underflow = |t: f64, h: f64, stage_error: Option<Error>, points| match stage_error {
        Some(Error::DegenerateDenominator { .. }) => Ok(RawRun { points, termination: Termination::NonDiagonalDegeneracy }),
        Some(Error::NonPositiveW { .. }) => Ok(RawRun { points, termination: Termination::WPositiveViolated }),
        _ => Err(Error::StepFailure { t, h }),
    };

    loop {
        let remaining = (t_end - t) * dir;
        if remaining <= 1e-14 * span.max(t.abs()) {
            break;
        }
        let mut target = t_end;
        if let Some(outs) = outputs {
            if next_out < outs.len() {
                target = outs[next_out];
            }
        }
        let to_target = (target - t) * dir;
        let mut hit = false;
        let mut step = h.min(ctl.max_step);
        if step >= to_target * (1.0 - 1e-12) {
            step = to_target;
            hit = true;
        }
        if steps >= ctl.max_steps {
            return Err(Error::StepFailure { t, h: step });
        }
        if step <= f64::EPSILON * t.abs().max(1.0) * 4.0 {
            return underflow(t, step, stage_error, points);
        }
        let hs = dir * step;
        let (t_new, y_new, k_new, err_norm) = match ctl.method {
            Method::Rk4 { .. } => {
                let t_new = if hit { target } else { t + hs };
                let attempt = rk4_step(f, t, &y, &k1, hs).and_then(|y_new| Ok((y_new, f(t_new, &y_new)?)));
                let (y_new, k_new) = match attempt {
                    Ok(v) => v,
                    Err(e) => return underflow(t, step, Some(e), points),
                };
                (t_new, y_new, k_new, 0.0)
            }
            Method::DormandPrince => {
                let attempt = dopri_step(f, t, &y, &k1, hs);
                let (y_new, k_new, err) = match attempt {
                    Ok(v) => v,
                    Err(e) => {
                        stage_error = Some(e);
                        h = step * 0.25;
                        rejected += 1;
                        steps += 1;
                        continue;
                    }
                };
                let mut en = 0.0f64;
                for n in 0..N {
                    let sc = ctl.atol + ctl.rtol * y[n].abs().max(y_new[n].abs());
                    en = en.max(err[n].abs() / sc);
                }
                if !en.is_finite() || en > 1.0 {
                    let fac = if en.is_finite() { (0.9 * en.powf(-0.2)).clamp(0.1, 0.9) } else { 0.1 };
                    h = step * fac;
                    rejected += 1;
                    steps += 1;
                    continue;
                }
                let t_new = if hit { target } else { t + hs };
                let en_c = en.max(1e-10);
                let fac = 0.9 * en_c.powf(-0.7 / 5.0) * prev_err.powf(0.4 / 5.0);
                prev_err = en_c;
                let fac = fac.clamp(0.2, 5.0);
                h = if hit { h.max(step * fac) } else { step * fac };
                (t_new, y_new, k_new, en)
            }
        };
        steps += 1;
        let meta = StepMeta { h: step, error_norm: err_norm, rejected };
        rejected = 0;
        stage_error = None;
        t = t_new;
        y = y_new;
        k1 = k_new;
        match check(t, &y, &k1)? {
            Verdict::Stop(reason) => return Ok(RawRun { points, termination: reason }),
            Verdict::Continue => {}
        }
        let keep = match outputs {
            None => true,
            Some(outs) => {
                if hit && next_out < outs.len() {
                    next_out += 1;
                    true
                } else {
                    false
                }
            }
        };
        if keep {
            points.push((t, y, k1, meta));
        }
    }
    Ok(RawRun { points, termination: Termination::Completed })
}

fn state_guard(ctl: &StepController) -> impl FnMut(f64, &[f64; 9], &[f64; 9]) -> Result<Verdict> + '_ {
    move |_t, y, _k| {
        if y.iter().any(|v| !v.is_finite() || v.abs() > ctl.blowup) {
            return Ok(Verdict::Stop(Termination::BlowUp));
        }
        if y[..3].iter().any(|w| *w < ctl.eps_pos) {
            return Ok(Verdict::Stop(Termination::WPositiveViolated));
        }
        Ok(Verdict::Continue)
    }
}

fn system(variant: RhsVariant) -> impl FnMut(f64, &[f64; 9]) -> Result<[f64; 9]> {
    move |t, y| {
        let s = MetricState::from_array(t, y);
        rhs_variant(&s, variant).map(|d| d.to_array())
    }
}

fn assemble(raw: RawRun<9>, t0: f64, t_end: f64, ctl: &StepController, variant: RhsVariant) -> Trajectory {
    let samples = raw
        .points
        .into_iter()
        .map(|(t, y, k, meta)| Sample { state: MetricState::from_array(t, &y), deriv: StateDerivative::from_array(&k), meta })
        .collect();
    Trajectory { samples, t0, t_end, controller: *ctl, variant, termination: raw.termination }
}

pub fn integrate(state0: &MetricState, t_end: f64, controller: &StepController) -> Result<Trajectory> {
    integrate_variant(state0, t_end, controller, RhsVariant::Asd)
}

pub fn integrate_variant(state0: &MetricState, t_end: f64, ctl: &StepController, variant: RhsVariant) -> Result<Trajectory> {
    integrate_impl(state0, None, t_end, ctl, variant)
}

/// Integrates through the given output times and records a sample exactly at each of them.
pub fn integrate_on_grid(state0: &MetricState, times: &[f64], ctl: &StepController, variant: RhsVariant) -> Result<Trajectory> {
    let t_end = *times.last().unwrap_or(&state0.t);
    integrate_impl(state0, Some(times), t_end, ctl, variant)
}

/// Uniform output grid of `n` intervals from `state0.t` to `t_end`.
pub fn uniform_grid(t0: f64, t_end: f64, n: usize) -> Vec<f64> {
    (1..=n).map(|i| t0 + (t_end - t0) * i as f64 / n as f64).collect()
}

fn integrate_impl(state0: &MetricState, outputs: Option<&[f64]>, t_end: f64, ctl: &StepController, variant: RhsVariant) -> Result<Trajectory> {
    state0.validate().map_err(|e| Error::ImmediateSingularity(Box::new(e)))?;
    if !t_end.is_finite() {
        return Err(Error::Precondition("t_end must be finite".into()));
    }
    let mut f = system(variant);
    let mut check = state_guard(ctl);
    let raw = run(&mut f, &mut check, state0.t, state0.to_array(), outputs, t_end, ctl)?;
    Ok(assemble(raw, state0.t, t_end, ctl, variant))
}

/// Fixed signs of a Kähler certificate, `X_i = s_i 2 sqrt(alpha_j alpha_k)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KahlerSigns(pub [f64; 3]);

/// Relative tolerance for recognising a Kähler certificate on input.
pub const KAHLER_TOL: f64 = 1e-8;

/// Checks `X_i^2 = 4 alpha_j alpha_k` and `X1 X2 X3 = -8 alpha1 alpha2 alpha3`; returns the signs.
pub fn kahler_signs(state: &MetricState, tol: f64) -> Result<KahlerSigns> {
    let x = reduced_x(state).0;
    let a = state.alpha;
    let scale = 1.0 + a.iter().chain(x.iter()).fold(0.0f64, |m, v| m.max(v.abs())).powi(2);
    for i in 0..3 {
        let (j, k) = cyc(i);
        let r = (x[i] * x[i] - 4.0 * a[j] * a[k]).abs() / scale;
        if r > tol {
            return Err(Error::Precondition(format!("X{}^2 - 4 alpha{} alpha{} = {:e} relative; not a Kahler certificate", i + 1, j + 1, k + 1, r)));
        }
    }
    let prod = x[0] * x[1] * x[2] + 8.0 * a[0] * a[1] * a[2];
    if prod.abs() > tol * scale.powf(1.5) {
        return Err(Error::Precondition("sign triple inconsistent with a Kahler double root".into()));
    }
    let mut s = [1.0; 3];
    for i in 0..3 {
        if x[i] != 0.0 {
            s[i] = x[i].signum();
        }
    }
    Ok(KahlerSigns(s))
}

/// `eta_i = s_i 2 sqrt(alpha_j alpha_k) / (w_j^2 - w_k^2)`.
pub fn kahler_eta(w: &[f64; 3], alpha: &[f64; 3], signs: &KahlerSigns, t: f64) -> Result<[f64; 3]> {
    let mut eta = [0.0; 3];
    for i in 0..3 {
        let (j, k) = cyc(i);
        let p = alpha[j] * alpha[k];
        if p < -1e-10 * (1.0 + alpha[j].abs() * alpha[k].abs()) {
            return Err(Error::CertificateBroken { t, drift: -p });
        }
        let x = signs.0[i] * 2.0 * p.max(0.0).sqrt();
        let gap = w[j] * w[j] - w[k] * w[k];
        if gap.abs() < EPS_DEN {
            if x.abs() > ETA_DIAGONAL_TOL {
                return Err(Error::DegenerateDenominator { i: i + 1, j: j + 1, k: k + 1, gap, eta: f64::INFINITY });
            }
            continue;
        }
        eta[i] = x / gap;
    }
    Ok(eta)
}

/// The sixth-order scalar-flat Kähler system on `(w, alpha)`; eta is slaved to the certificate.
pub fn sixth_order_rhs(state: &MetricState) -> Result<StateDerivative> {
    let signs = kahler_signs(state, KAHLER_TOL)?;
    sixth_order_rhs_with(state, &signs)
}

pub fn sixth_order_rhs_with(state: &MetricState, signs: &KahlerSigns) -> Result<StateDerivative> {
    let eta = kahler_eta(&state.w, &state.alpha, signs, state.t)?;
    let slaved = MetricState { eta, ..*state };
    rhs(&slaved)
}

/// Integrates the sixth-order Kähler system. The eta components are carried along by the full
/// equations and compared with the slaved values after every step.
pub fn integrate_kahler(state0: &MetricState, t_end: f64, ctl: &StepController) -> Result<Trajectory> {
    let signs = kahler_signs(state0, KAHLER_TOL)?;
    let eta0 = kahler_eta(&state0.w, &state0.alpha, &signs, state0.t)?;
    let start = MetricState { eta: eta0, ..*state0 };
    let mut f = |t: f64, y: &[f64; 9]| -> Result<[f64; 9]> {
        let s = MetricState::from_array(t, y);
        let d = sixth_order_rhs_with(&s, &signs)?;
        // Carried eta evolves by the full equations evaluated at the carried value.
        let full = rhs(&MetricState { w: s.w, alpha: s.alpha, eta: s.eta, t })?;
        Ok(StateDerivative { deta: full.deta, ..d }.to_array())
    };
    let mut guard = state_guard(ctl);
    let mut check = |t: f64, y: &[f64; 9], k: &[f64; 9]| -> Result<Verdict> {
        if let Verdict::Stop(r) = guard(t, y, k)? {
            return Ok(Verdict::Stop(r));
        }
        let s = MetricState::from_array(t, y);
        let slaved = kahler_eta(&s.w, &s.alpha, &signs, t)?;
        let drift = (0..3).map(|i| (slaved[i] - s.eta[i]).abs() / (1.0 + slaved[i].abs())).fold(0.0, f64::max);
        if drift > KAHLER_TOL {
            return Err(Error::CertificateBroken { t, drift });
        }
        Ok(Verdict::Continue)
    };
    let raw = run(&mut f, &mut check, start.t, start.to_array(), None, t_end, ctl)?;
    let samples = raw
        .points
        .into_iter()
        .map(|(t, y, _k, meta)| {
            let s = MetricState::from_array(t, &y);
            let eta = kahler_eta(&s.w, &s.alpha, &signs, t)?;
            let state = MetricState { eta, ..s };
            Ok(Sample { state, deriv: sixth_order_rhs_with(&state, &signs)?, meta })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Trajectory { samples, t0: start.t, t_end, controller: *ctl, variant: RhsVariant::Asd, termination: raw.termination })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn st(w: [f64; 3], alpha: [f64; 3], eta: [f64; 3]) -> MetricState {
        MetricState::new(0.0, w, alpha, eta).unwrap()
    }

    #[test]
    fn bgpp_rhs() {
        let d = rhs(&st([1.0, 2.0, 3.0], [0.0; 3], [0.0; 3])).unwrap();
        assert_eq!(d.dw, [-6.0, -3.0, -2.0]);
        assert_eq!(d.dalpha, [0.0; 3]);
        assert_eq!(d.deta, [0.0; 3]);
    }

    #[test]
    fn atiyah_hitchin_rhs() {
        let d = rhs(&st([1.0, 2.0, 3.0], [1.0, 2.0, 3.0], [0.0; 3])).unwrap();
        assert_eq!(d.dw, [-1.0, 5.0, 7.0]);
        assert_eq!(d.dalpha, d.dw);
    }

    #[test]
    fn tod_reduction() {
        let a = [0.3, -1.2, 0.7];
        let d = rhs(&st([0.8, 1.5, 2.6], a, [0.0; 3])).unwrap();
        for i in 0..3 {
            let (j, k) = cyc(i);
            assert_eq!(d.dalpha[i], -a[j] * a[k] + a[i] * (a[j] + a[k]));
        }
    }

    #[test]
    fn f_flow_examples() {
        assert_eq!(f_flow(0.0, 0.0, 3.7).unwrap(), 0.0);
        assert_eq!(f_flow(1.0, 0.0, 0.5).unwrap(), 2.0);
        assert_eq!(f_flow(1.0, 0.0, 1.0), Err(Error::PoleReached));
        assert_eq!(f_flow(1.0, 2.0, 3.0), Err(Error::PoleReached));
    }

    #[test]
    fn empty_span_gives_single_sample() {
        let s = st([1.0, 2.0, 3.0], [0.1, 0.2, 0.3], [0.1, -0.1, 0.2]);
        let traj = integrate(&s, 0.0, &StepController::default()).unwrap();
        assert_eq!(traj.samples.len(), 1);
        assert_eq!(traj.samples[0].state, s);
        assert_eq!(traj.termination, Termination::Completed);
    }

    #[test]
    fn diagonal_trajectory_stays_diagonal() {
        let s = st([0.9, 1.7, 2.4], [0.4, -0.3, 0.2], [0.0; 3]);
        let traj = integrate(&s, 0.5, &StepController::default()).unwrap();
        assert!(traj.samples.len() > 2);
        assert!(traj.states().all(|x| x.eta == [0.0; 3]));
    }

    #[test]
    fn bgpp_first_integrals() {
        let s = st([1.0, 2.0, 3.0], [0.0; 3], [0.0; 3]);
        let traj = integrate(&s, 0.1, &StepController::default()).unwrap();
        assert_eq!(traj.termination, Termination::Completed);
        let inv = |x: &MetricState| [x.w[0] * x.w[0] - x.w[1] * x.w[1], x.w[1] * x.w[1] - x.w[2] * x.w[2]];
        let i0 = inv(&s);
        for x in traj.states() {
            let i = inv(x);
            assert!((i[0] - i0[0]).abs() <= 1e-10 && (i[1] - i0[1]).abs() <= 1e-10);
        }
    }

    #[test]
    fn samples_are_monotone_and_carry_rhs() {
        let s = st([0.7, 1.3, 2.2], [0.3, -0.4, 0.5], [0.2, 0.4, -0.3]);
        let traj = integrate(&s, 0.2, &StepController::default()).unwrap();
        for pair in traj.samples.windows(2) {
            assert!(pair[1].state.t > pair[0].state.t);
        }
        for smp in &traj.samples {
            assert_eq!(smp.deriv, rhs(&smp.state).unwrap());
        }
    }

    #[test]
    fn backward_integration() {
        let s = st([0.7, 1.3, 2.2], [0.3, -0.4, 0.5], [0.2, 0.4, -0.3]);
        let ctl = StepController::with_tolerances(1e-12, 1e-14);
        let fwd = integrate(&s, 0.2, &ctl).unwrap();
        let back = integrate(&fwd.last().state, 0.0, &ctl).unwrap();
        let end = back.last().state;
        assert!((0..9).all(|n| (end.to_array()[n] - s.to_array()[n]).abs() < 1e-9));
    }

    #[test]
    fn rk4_agrees_with_dormand_prince() {
        let s = st([0.7, 1.3, 2.2], [0.3, -0.4, 0.5], [0.2, 0.4, -0.3]);
        let dp = integrate(&s, 0.2, &StepController::with_tolerances(1e-12, 1e-14)).unwrap().last().state;
        let ctl = StepController { method: Method::Rk4 { h: 1e-3 }, ..Default::default() };
        let rk = integrate(&s, 0.2, &ctl).unwrap().last().state;
        assert!((0..9).all(|n| (dp.to_array()[n] - rk.to_array()[n]).abs() < 1e-9));
    }

    #[test]
    fn output_grid_is_hit_exactly() {
        let s = st([0.7, 1.3, 2.2], [0.3, -0.4, 0.5], [0.2, 0.4, -0.3]);
        let grid = uniform_grid(0.0, 0.1, 7);
        let traj = integrate_on_grid(&s, &grid, &StepController::default(), RhsVariant::Asd).unwrap();
        assert_eq!(traj.samples.len(), 8);
        for (smp, t) in traj.samples[1..].iter().zip(&grid) {
            assert_eq!(smp.state.t, *t);
        }
    }

    #[test]
    fn w_reaching_zero_is_flagged() {
        // BGPP with w1 smallest: w1² − w2² is conserved and negative, so w1 → 0 in finite time.
        let s = st([1.0, 2.0, 3.0], [0.0; 3], [0.0; 3]);
        let traj = integrate(&s, 5.0, &StepController::default()).unwrap();
        assert!(traj.termination.is_singular(), "{:?}", traj.termination);
        assert!(traj.last().state.t < 5.0);
    }

    #[test]
    fn invalid_start_is_immediate() {
        let s = MetricState { t: 0.0, w: [1.0, 1.0, 2.0], alpha: [0.0; 3], eta: [0.0, 0.0, 1.0] };
        assert!(matches!(integrate(&s, 1.0, &StepController::default()), Err(Error::ImmediateSingularity(_))));
    }

    #[test]
    fn kahler_eta_example() {
        let s = MetricState::from_reduced_x(0.0, [1.0, 2.0, 3.0], [0.0, 1.0, 1.0], [2.0, 0.0, 0.0]).unwrap();
        let signs = kahler_signs(&s, KAHLER_TOL).unwrap();
        let eta = kahler_eta(&s.w, &s.alpha, &signs, 0.0).unwrap();
        assert!((eta[0] + 0.4).abs() < 1e-15 && eta[1] == 0.0 && eta[2] == 0.0);
        let d6 = sixth_order_rhs(&s).unwrap();
        let full = rhs(&s).unwrap();
        assert_eq!(d6.dw, full.dw);
        assert!((0..3).all(|i| (d6.dalpha[i] - full.dalpha[i]).abs() < 1e-14));
    }

    #[test]
    fn kahler_zero_alpha_is_bgpp() {
        let s = st([1.0, 2.0, 3.0], [0.0; 3], [0.0; 3]);
        let d6 = sixth_order_rhs(&s).unwrap();
        assert_eq!(d6, rhs(&s).unwrap());
    }

    #[test]
    fn kahler_rejects_nonzero_f() {
        let s = crate::spectral::forward_certificate_state(0.0, [1.0, 2.0, 3.0], [0.0, 1.0, 1.0], 0.1, [1.0, 1.0]);
        // f = 0.1 lies between alpha1 and alpha2: no real witness at all, or one with f ≠ 0.
        if let Ok(s) = s {
            assert!(matches!(sixth_order_rhs(&s), Err(Error::Precondition(_))));
        }
        let s = crate::spectral::forward_certificate_state(0.0, [1.0, 2.0, 3.0], [0.2, 1.0, 1.5], 0.1, [1.0, 1.0]).unwrap();
        assert!(matches!(sixth_order_rhs(&s), Err(Error::Precondition(_))));
    }

    #[test]
    fn kahler_flow_keeps_certificate() {
        let s = MetricState::from_reduced_x(0.0, [1.0, 2.0, 3.0], [0.3, 0.5, 0.8], [-2.0 * 0.4f64.sqrt(), -2.0 * 0.24f64.sqrt(), -2.0 * 0.15f64.sqrt()]).unwrap();
        let traj = integrate_kahler(&s, 0.3, &StepController::default()).unwrap();
        for x in traj.states() {
            assert!(kahler_signs(x, 1e-7).is_ok());
        }
    }

    #[test]
    fn coefficients_report_lists_corrections() {
        let r = coefficients_report();
        assert!(r.contains("-3 alpha1 w3^2"));
        assert!(r.contains("xi1/(w2 w3)"));
    }

    fn arb_state() -> impl Strategy<Value = MetricState> {
        (
            prop::array::uniform3(0.5f64..3.0),
            prop::array::uniform3(-2.0f64..2.0),
            prop::array::uniform3(-2.0f64..2.0),
        )
            .prop_filter("distinct w", |(w, _, _)| {
                (0..3).all(|i| {
                    let (j, _) = cyc(i);
                    (w[i] * w[i] - w[j] * w[j]).abs() > 1e-3
                })
            })
            .prop_map(|(w, a, e)| MetricState::new(0.0, w, a, e).unwrap())
    }

    proptest! {
        #[test]
        fn diagonal_manifold_invariant(w in prop::array::uniform3(0.5f64..3.0), a in prop::array::uniform3(-2.0f64..2.0)) {
            let d = rhs(&MetricState::new(0.0, w, a, [0.0; 3]).unwrap()).unwrap();
            prop_assert_eq!(d.deta, [0.0; 3]);
        }

        #[test]
        fn atiyah_hitchin_invariant(w in prop::array::uniform3(0.5f64..3.0)) {
            let d = rhs(&MetricState::new(0.0, w, w, [0.0; 3]).unwrap()).unwrap();
            prop_assert_eq!(d.dalpha, d.dw);
        }

        #[test]
        fn cyclic_relabelling_commutes(s in arb_state()) {
            let d = rhs(&s).unwrap();
            let r = rhs(&s.rotate_indices()).unwrap();
            let rot = |v: [f64; 3]| MetricState { w: v, ..s }.rotate_indices().w;
            for (x, y) in [(rot(d.dw), r.dw), (rot(d.dalpha), r.dalpha), (rot(d.deta), r.deta)] {
                for n in 0..3 {
                    prop_assert!((x[n] - y[n]).abs() <= 1e-12 * (1.0 + x[n].abs()));
                }
            }
        }

        #[test]
        fn autonomous_in_time(s in arb_state(), c in -5.0f64..5.0) {
            let ctl = StepController::default();
            let a = integrate(&s, 0.02, &ctl);
            let b = integrate(&MetricState { t: s.t + c, ..s }, 0.02 + c, &ctl);
            if let (Ok(a), Ok(b)) = (a, b) {
                let (ya, yb) = (a.last().state.to_array(), b.last().state.to_array());
                for n in 0..9 {
                    prop_assert!((ya[n] - yb[n]).abs() <= 1e-8 * (1.0 + ya[n].abs()));
                }
            }
        }
    }
}
