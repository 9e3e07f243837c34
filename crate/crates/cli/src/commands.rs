//! Subcommand bodies. Each returns the process exit code.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use asdflow_core::curvature::{block_gap, curvature_block, curvature_block_fd_variant, inf_norm, CurvatureBlock};
use asdflow_core::flow::{f_flow, integrate_kahler, integrate_on_grid, integrate_variant, uniform_grid, RhsVariant};
use asdflow_core::hermitian::{complex_structure, complex_structures_along, kahler_form, kahler_test_with, Branch, ClosedForm, FormulaCheck, KAHLER_TEST_TOL};
use asdflow_core::sample::{random_certificate_state, random_diagonal_state, random_kahler_state, random_state};
use asdflow_core::spectral::{build_quartic, certificate_delta, certificate_residual, double_root_certificate, roots, roots_with_delta, HermitianCertificate, ZERO_QUARTIC};
use asdflow_core::{flatness_residual, reduced_x, rhs, theta3_residual, Error, FamilyTag, MetricState, StepController, Termination, Trajectory};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{RunConfig, ScanMode};
use crate::output::{complex, ingest, labels, nums, state_record, JsonLines, Num, StateRecord, Summary};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_SINGULAR: i32 = 2;
pub const EXIT_VERIFY: i32 = 3;

/// Integration stopped at a singularity before producing a trajectory.
#[derive(Debug)]
pub struct Singular(pub String);

impl std::fmt::Display for Singular {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Singular {}

fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    })
}

fn lift(e: Error) -> anyhow::Error {
    match e {
        Error::StepFailure { .. } | Error::PoleReached | Error::CertificateBroken { .. } => Singular(e.to_string()).into(),
        other => anyhow!(other),
    }
}

/// Runs the configured integration.
pub fn trajectory(cfg: &RunConfig, variant: RhsVariant) -> Result<Trajectory> {
    let s0 = cfg.initial_state()?;
    let t_end = cfg.t_end()?;
    let ctl = cfg.controller();
    let traj = if cfg.integrate.kahler {
        if variant != RhsVariant::Asd {
            bail!("--corrupt-rhs cannot be combined with integrate.kahler");
        }
        integrate_kahler(&s0, t_end, &ctl)
    } else if let Some(n) = cfg.integrate.samples {
        integrate_on_grid(&s0, &uniform_grid(s0.t, t_end, n), &ctl, variant)
    } else {
        integrate_variant(&s0, t_end, &ctl, variant)
    };
    traj.map_err(lift)
}

fn state_scale(s: &MetricState) -> f64 {
    let n = s.norm();
    1.0 + n * n
}

fn active_certificate(state: &MetricState, tol: f64) -> Option<HermitianCertificate> {
    double_root_certificate(state, tol).ok().flatten().filter(|c| !c.quartic_degenerate)
}

fn is_bgpp(state: &MetricState, tol: f64) -> bool {
    asdflow_core::classify(state, tol).map(|c| c.primary == FamilyTag::Bgpp).unwrap_or(false)
}

fn square_gaps(s: &MetricState) -> [f64; 2] {
    let q = s.w.map(|w| w * w);
    [q[0] - q[1], q[1] - q[2]]
}

/// Largest change of `w1² − w2²`, `w2² − w3²` and of `|α|`, `|η|` along the run.
pub fn bgpp_drift(traj: &Trajectory) -> f64 {
    let g0 = square_gaps(&traj.samples[0].state);
    traj.states()
        .map(|s| {
            let g = square_gaps(s);
            let lost = s.alpha.iter().chain(s.eta.iter()).fold(0.0f64, |m, v| m.max(v.abs()));
            ((g[0] - g0[0]).abs().max((g[1] - g0[1]).abs()) / (1.0 + g0[0].abs().max(g0[1].abs()))).max(lost)
        })
        .fold(0.0, f64::max)
}

/// Certificate residual along the run with `f` carried by `f' = f²`.
pub fn certificate_drift(traj: &Trajectory, f0: f64) -> f64 {
    let t0 = traj.samples[0].state.t;
    traj.states()
        .map(|s| match f_flow(f0, t0, s.t) {
            Ok(f) => {
                let (rel, sign) = certificate_residual(&s.alpha, &reduced_x(s).0, f);
                rel.max(sign)
            }
            Err(_) => f64::INFINITY,
        })
        .fold(0.0, f64::max)
}

pub fn integrate(cfg: &RunConfig, variant: RhsVariant) -> Result<i32> {
    let traj = trajectory(cfg, variant)?;
    let s0 = traj.samples[0].state;
    let mut out = JsonLines::new(sink(cfg.output.path.as_deref())?);
    let mut classes = BTreeMap::new();
    let mut painleve = BTreeMap::new();
    let mut max_asd = 0.0f64;
    for smp in &traj.samples {
        let rec = state_record(&smp.state, &smp.deriv, cfg.tolerances.family, cfg.tolerances.certificate);
        max_asd = max_asd.max(rec.asd_residual.0);
        *classes.entry(rec.class.clone()).or_insert(0) += 1;
        *painleve.entry(rec.painleve.clone()).or_insert(0) += 1;
        out.record(&rec)?;
    }
    let summary = Summary {
        command: "integrate".into(),
        samples: traj.samples.len(),
        t_start: Num(s0.t),
        t_final: Num(traj.last().state.t),
        termination: traj.termination.name().into(),
        max_asd_residual: Num(max_asd),
        max_certificate_residual: active_certificate(&s0, cfg.tolerances.certificate).map(|c| Num(certificate_drift(&traj, c.f))),
        conserved_drift: is_bgpp(&s0, cfg.tolerances.family).then(|| Num(bgpp_drift(&traj))),
        classes,
        painleve,
    };
    out.summary(&summary)?;
    out.finish()?;
    if traj.termination.is_singular() {
        eprintln!("integration stopped at t = {}: {}", traj.last().state.t, traj.termination.name());
        return Ok(EXIT_SINGULAR);
    }
    Ok(EXIT_OK)
}

#[derive(Debug, Clone)]
pub struct CheckRow {
    pub name: &'static str,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
    pub note: String,
}

impl CheckRow {
    fn measure(name: &'static str, value: f64, threshold: f64) -> Self {
        CheckRow { name, value, threshold, pass: value <= threshold, note: String::new() }
    }

    fn failed(name: &'static str, threshold: f64, note: String) -> Self {
        CheckRow { name, value: f64::NAN, threshold, pass: false, note }
    }

    fn from_result(name: &'static str, threshold: f64, r: Result<f64>) -> Self {
        match r {
            Ok(v) => Self::measure(name, v, threshold),
            Err(e) => Self::failed(name, threshold, format!("{e:#}")),
        }
    }
}

fn block_scale(b: &CurvatureBlock) -> f64 {
    1.0f64.max(inf_norm(&b.a)).max(inf_norm(&b.b)).max(inf_norm(&b.d)).max(b.s.abs())
}

fn evenly(n: usize, k: usize) -> Vec<usize> {
    if k >= n {
        return (0..n).collect();
    }
    let mut idx: Vec<usize> = (0..k).map(|i| i * (n - 1) / (k - 1).max(1)).collect();
    idx.dedup();
    idx
}

/// Short run on a uniform grid for the checks that difference in `t`.
fn fine_run(cfg: &RunConfig, start: &MetricState, variant: RhsVariant) -> Result<Trajectory> {
    let v = &cfg.verify;
    let n = v.samples - 1;
    let t_end = start.t + v.step * n as f64;
    let ctl = StepController { rtol: 1e-13, atol: 1e-15, ..StepController::default() };
    integrate_on_grid(start, &uniform_grid(start.t, t_end, n), &ctl, variant).map_err(|e| anyhow!(e))
}

/// Double roots are counted with a clustering radius matched to the certificate tolerance.
pub fn two_double_roots(state: &MetricState, tol: f64) -> bool {
    let q = build_quartic(state);
    roots_with_delta(&q, certificate_delta(&q, tol)).map(|rs| rs.is_two_double()).unwrap_or(false)
}

/// Every check that applies to the configured run.
pub fn checks(cfg: &RunConfig, variant: RhsVariant) -> Result<(Vec<CheckRow>, Trajectory)> {
    let traj = trajectory(cfg, variant)?;
    let v = &cfg.verify;
    let tol = &cfg.tolerances;
    let s0 = traj.samples[0].state;
    let mut rows = Vec::new();

    let mut analytic = Vec::with_capacity(traj.samples.len());
    let mut worst = 0.0f64;
    for smp in &traj.samples {
        let b = curvature_block(&smp.state, &smp.deriv).map_err(|e| anyhow!(e))?;
        worst = worst.max(inf_norm(&b.a) / (state_scale(&smp.state) + block_scale(&b)));
        analytic.push(b);
    }
    rows.push(CheckRow::measure("asd (analytic derivatives)", worst, tol.oracle));

    let mut fd_worst = 0.0f64;
    let mut gap_worst = 0.0f64;
    let mut fd_err = None;
    for i in evenly(traj.samples.len(), v.fd_points) {
        match curvature_block_fd_variant(&traj.samples[i].state, variant) {
            Ok(fd) => {
                fd_worst = fd_worst.max(inf_norm(&fd.a) / block_scale(&fd));
                gap_worst = gap_worst.max(block_gap(&analytic[i], &fd));
            }
            Err(e) => fd_err = Some(format!("t = {}: {e}", traj.samples[i].state.t)),
        }
    }
    match fd_err {
        Some(msg) => rows.push(CheckRow::failed("asd (finite differences)", v.fd_tol, msg)),
        None => {
            rows.push(CheckRow::measure("asd (finite differences)", fd_worst, v.fd_tol));
            rows.push(CheckRow::measure("derivative paths agree", gap_worst, v.fd_tol));
        }
    }

    if build_quartic(&s0).max_abs() > ZERO_QUARTIC {
        let grid = cfg.zgrid.grid();
        let mut starts = vec![s0];
        if traj.termination == Termination::Completed && traj.samples.len() > 1 {
            starts.push(traj.last().state);
        }
        let r = starts.iter().try_fold(0.0f64, |m, s| {
            let fine = fine_run(cfg, s, variant)?;
            Ok::<f64, anyhow::Error>(m.max(flatness_residual(&fine, &grid).map_err(|e| anyhow!(e))?))
        });
        rows.push(CheckRow::from_result("connection flatness", v.flatness_tol, r));
    }

    if let Some(cert) = active_certificate(&s0, tol.certificate) {
        let drift = certificate_drift(&traj, cert.f);
        let bad = traj
            .states()
            .filter(|s| !two_double_roots(s, v.certificate_tol))
            .count();
        let mut row = CheckRow::measure("certificate propagation", drift, v.certificate_tol);
        if bad > 0 {
            row.pass = false;
            row.note = format!("{bad} samples without two double roots");
        }
        rows.push(row);

        let r = fine_run(cfg, &s0, variant).and_then(|fine| {
            let cs = complex_structures_along(&fine, tol.certificate).map_err(|e| anyhow!(e))?;
            theta3_residual(&fine, &cs).map_err(|e| anyhow!(e))
        });
        rows.push(CheckRow::from_result("theta3 integrability", v.theta3_tol, r));

        if cert.f.abs() <= tol.family * (1.0 + s0.alpha.iter().fold(0.0f64, |m, a| m.max(a.abs()))) {
            let r = traj.states().try_fold(0.0f64, |m, s| {
                let c = double_root_certificate(s, tol.certificate)
                    .map_err(|e| anyhow!(e))?
                    .ok_or_else(|| anyhow!("certificate lost at t = {}", s.t))?;
                let k = kahler_form(s, &c).map_err(|e| anyhow!(e))?;
                let size = 1.0 + k.p.iter().fold(0.0f64, |a, b| a.max(b.abs()));
                Ok(m.max(k.q.iter().fold(k.q123.abs(), |a, b| a.max(b.abs())) / size))
            });
            rows.push(CheckRow::from_result("kahler form closed", v.kahler_tol, r));
        }
    }

    if is_bgpp(&s0, tol.family) {
        rows.push(CheckRow::measure("bgpp conserved drift", bgpp_drift(&traj), v.drift_tol));
    }
    Ok((rows, traj))
}

pub fn verify(cfg: &RunConfig, variant: RhsVariant) -> Result<i32> {
    let (rows, traj) = checks(cfg, variant)?;
    let mut out = sink(cfg.output.path.as_deref())?;
    writeln!(out, "{:<28} {:>12} {:>12}  result", "check", "value", "threshold")?;
    for r in &rows {
        let value = if r.value.is_finite() { format!("{:.3e}", r.value) } else { "-".to_string() };
        write!(out, "{:<28} {:>12} {:>12.1e}  {}", r.name, value, r.threshold, if r.pass { "PASS" } else { "FAIL" })?;
        if !r.note.is_empty() {
            write!(out, "  ({})", r.note)?;
        }
        writeln!(out)?;
    }
    writeln!(out, "termination: {} at t = {}", traj.termination.name(), traj.last().state.t)?;
    out.flush()?;
    if rows.iter().any(|r| !r.pass) {
        return Ok(EXIT_VERIFY);
    }
    if traj.termination.is_singular() {
        return Ok(EXIT_SINGULAR);
    }
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct KahlerRecord {
    is_kahler: bool,
    residual: Num,
    hyperkahler: bool,
}

#[derive(Serialize)]
struct ComplexStructureRecord {
    z0: [Num; 2],
    partner: Option<[Num; 2]>,
    branch: String,
    dz0dt: [Num; 2],
    double_root_residual: Num,
    formula: Option<[Num; 2]>,
    formula_gap: Option<Num>,
    note: Option<String>,
}

#[derive(Serialize)]
struct KahlerFormRecord {
    p: [Num; 3],
    q: [Num; 3],
    q123: Num,
    closed_form_gap: Option<Num>,
    note: Option<String>,
}

#[derive(Serialize)]
struct ClassifyRecord {
    #[serde(flatten)]
    base: StateRecord,
    kahler: KahlerRecord,
    complex_structure: Option<ComplexStructureRecord>,
    kahler_form: Option<KahlerFormRecord>,
    errors: Vec<String>,
}

fn branch_name(b: Branch) -> String {
    match b {
        Branch::Generic => "generic".into(),
        Branch::Degenerate { index } => format!("degenerate_{}", index + 1),
        Branch::SimpleRoot => "simple_root".into(),
    }
}

fn classify_record(state: &MetricState, cfg: &RunConfig) -> ClassifyRecord {
    let tol = &cfg.tolerances;
    let mut errors = Vec::new();
    let deriv = match rhs(state) {
        Ok(d) => d,
        Err(e) => {
            errors.push(format!("rhs: {e}"));
            asdflow_core::StateDerivative { dw: [f64::NAN; 3], dalpha: [f64::NAN; 3], deta: [f64::NAN; 3] }
        }
    };
    let base = state_record(state, &deriv, tol.family, tol.certificate);
    let kt = kahler_test_with(state, KAHLER_TEST_TOL);
    let mut cs_rec = None;
    let mut kf_rec = None;
    match double_root_certificate(state, tol.certificate) {
        Err(e) => errors.push(format!("certificate: {e}")),
        Ok(Some(cert)) if !cert.quartic_degenerate => {
            match complex_structure(state, &cert) {
                Ok(cs) => {
                    let (formula, formula_gap, note) = match cs.formula {
                        FormulaCheck::Matched { formula, gap } => (Some(complex(formula)), Some(Num(gap)), None),
                        FormulaCheck::NotRealizable(m) => (None, None, Some(m)),
                        FormulaCheck::Skipped => (None, None, None),
                    };
                    cs_rec = Some(ComplexStructureRecord {
                        z0: complex(cs.z0),
                        partner: cs.partner.map(complex),
                        branch: branch_name(cs.branch),
                        dz0dt: complex(cs.dz0dt),
                        double_root_residual: Num(cs.double_root_residual),
                        formula,
                        formula_gap,
                        note,
                    });
                }
                Err(e) => errors.push(format!("complex structure: {e}")),
            }
            match kahler_form(state, &cert) {
                Ok(k) => {
                    let (gap, note) = match k.closed {
                        ClosedForm::Matched { gap, .. } => (Some(Num(gap)), None),
                        ClosedForm::NotRealizable(m) => (None, Some(m)),
                    };
                    kf_rec = Some(KahlerFormRecord { p: nums(k.p), q: nums(k.q), q123: Num(k.q123), closed_form_gap: gap, note });
                }
                Err(e) => errors.push(format!("kahler form: {e}")),
            }
        }
        Ok(_) => {}
    }
    ClassifyRecord {
        base,
        kahler: KahlerRecord { is_kahler: kt.is_kahler, residual: Num(kt.residual), hyperkahler: kt.hyperkahler },
        complex_structure: cs_rec,
        kahler_form: kf_rec,
        errors,
    }
}

pub fn classify(cfg: &RunConfig) -> Result<i32> {
    let state = cfg.initial_state()?;
    let mut out = JsonLines::new(sink(cfg.output.path.as_deref())?);
    out.record(&classify_record(&state, cfg))?;
    out.finish()?;
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct ReclassifiedRecord {
    t: Num,
    class: String,
    painleve: String,
    recorded_class: String,
    recorded_painleve: String,
    matches: bool,
}

#[derive(Serialize)]
struct ReclassifySummary {
    records: usize,
    mismatches: usize,
}

#[derive(Serialize)]
struct ReclassifySummaryLine {
    summary: ReclassifySummary,
}

/// Recomputes the label columns of a trajectory file.
pub fn reclassify(cfg: &RunConfig, records: &Path) -> Result<i32> {
    let text = std::fs::read_to_string(records).with_context(|| format!("reading {}", records.display()))?;
    let recs = ingest(&text).with_context(|| format!("in {}", records.display()))?;
    let mut out = JsonLines::new(sink(cfg.output.path.as_deref())?);
    let mut mismatches = 0;
    for r in &recs {
        let l = labels(&r.state, cfg.tolerances.family);
        let matches = l.class == r.class && l.painleve == r.painleve;
        mismatches += usize::from(!matches);
        out.record(&ReclassifiedRecord {
            t: Num(r.state.t),
            class: l.class,
            painleve: l.painleve,
            recorded_class: r.class.clone(),
            recorded_painleve: r.painleve.clone(),
            matches,
        })?;
    }
    out.record(&ReclassifySummaryLine { summary: ReclassifySummary { records: recs.len(), mismatches } })?;
    out.finish()?;
    Ok(if mismatches == 0 { EXIT_OK } else { EXIT_VERIFY })
}

/// Column names of the scan CSV, in order.
pub const SCAN_HEADER: [&str; 23] = [
    "index", "mode", "w1", "w2", "w3", "alpha1", "alpha2", "alpha3", "eta1", "eta2", "eta3", "X1", "X2", "X3", "class", "painleve",
    "asd_residual", "certificate_f", "certificate_residual", "kahler", "simple_roots", "double_roots", "pairing_error",
];

pub fn draw_states(cfg: &RunConfig) -> Result<Vec<MetricState>> {
    let sc = &cfg.scan;
    let ranges = sc.ranges();
    let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);
    (0..sc.points)
        .map(|_| {
            Ok(match sc.mode {
                ScanMode::Random => random_state(&mut rng, &ranges),
                ScanMode::Diagonal => random_diagonal_state(&mut rng, &ranges),
                ScanMode::Certificate => random_certificate_state(&mut rng, &ranges).map_err(|e| anyhow!(e))?.state,
                ScanMode::Kahler => random_kahler_state(&mut rng, &ranges).map_err(|e| anyhow!(e))?.state,
            })
        })
        .collect()
}

fn fmt_num(v: f64) -> String {
    if v.is_finite() { Num(v).text() } else { String::new() }
}

fn scan_row(index: usize, mode: ScanMode, s: &MetricState, cfg: &RunConfig) -> Vec<String> {
    let tol = &cfg.tolerances;
    let asd = rhs(s).and_then(|d| curvature_block(s, &d)).map(|b| inf_norm(&b.a)).unwrap_or(f64::NAN);
    let l = labels(s, tol.family);
    let cert = double_root_certificate(s, tol.certificate).ok().flatten();
    let rs = roots(&build_quartic(s)).ok();
    let x = reduced_x(s).0;
    let mut row = vec![index.to_string(), mode.name().to_string()];
    for v in s.w.iter().chain(&s.alpha).chain(&s.eta).chain(&x) {
        row.push(fmt_num(*v));
    }
    row.push(l.class);
    row.push(l.painleve);
    row.push(fmt_num(asd));
    row.push(cert.map_or(String::new(), |c| fmt_num(c.f)));
    row.push(cert.map_or(String::new(), |c| fmt_num(c.residual)));
    row.push(kahler_test_with(s, KAHLER_TEST_TOL).is_kahler.to_string());
    row.push(rs.as_ref().map_or(String::new(), |r| r.count_with_multiplicity(1).to_string()));
    row.push(rs.as_ref().map_or(String::new(), |r| r.count_with_multiplicity(2).to_string()));
    row.push(rs.as_ref().map_or(String::new(), |r| fmt_num(r.pairing_error)));
    row
}

pub fn scan(cfg: &RunConfig) -> Result<i32> {
    let states = draw_states(cfg)?;
    let mode = cfg.scan.mode;
    let rows: Vec<Vec<String>> = states.par_iter().enumerate().map(|(i, s)| scan_row(i, mode, s, cfg)).collect();
    let mut w = csv::Writer::from_writer(sink(cfg.output.path.as_deref())?);
    w.write_record(SCAN_HEADER)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(EXIT_OK)
}

pub fn coefficients(cfg_out: Option<&Path>) -> Result<i32> {
    let mut out = sink(cfg_out)?;
    out.write_all(asdflow_core::flow::coefficients_report().as_bytes())?;
    out.flush()?;
    Ok(EXIT_OK)
}
