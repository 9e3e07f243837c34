//! TOML run configuration.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use asdflow_core::flow::Method;
use asdflow_core::sample::StateRanges;
use asdflow_core::spectral::forward_certificate_state;
use asdflow_core::{Complex64, MetricState, StepController};
use serde::Deserialize;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub state: Option<StateSpec>,
    #[serde(default)]
    pub integrate: IntegrateSpec,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub zgrid: ZGridSpec,
    #[serde(default)]
    pub verify: VerifySpec,
    #[serde(default)]
    pub scan: ScanSpec,
    #[serde(default)]
    pub output: OutputSpec,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateSpec {
    #[serde(default)]
    pub t0: f64,
    pub w: [f64; 3],
    pub alpha: [f64; 3],
    pub eta: Option<[f64; 3]>,
    pub xi: Option<[f64; 3]>,
    pub certificate: Option<CertificateSpec>,
}

/// Builds `X_i = s_i 2 sqrt((f − α_j)(f − α_k))` instead of taking eta or xi.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificateSpec {
    pub f: f64,
    #[serde(default = "unit_signs")]
    pub signs: [f64; 2],
}

fn unit_signs() -> [f64; 2] {
    [1.0, 1.0]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MethodName {
    #[default]
    DormandPrince,
    Rk4,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegrateSpec {
    pub t_end: Option<f64>,
    pub rtol: f64,
    pub atol: f64,
    pub max_step: Option<f64>,
    pub max_steps: usize,
    pub method: MethodName,
    pub rk4_step: Option<f64>,
    /// Use the sixth-order system with eta slaved to (w, alpha).
    pub kahler: bool,
    /// Record exactly this many uniform intervals instead of every accepted step.
    pub samples: Option<usize>,
}

impl Default for IntegrateSpec {
    fn default() -> Self {
        IntegrateSpec {
            t_end: None,
            rtol: 1e-10,
            atol: 1e-12,
            max_step: None,
            max_steps: 1_000_000,
            method: MethodName::DormandPrince,
            rk4_step: None,
            kahler: false,
            samples: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub family: f64,
    pub certificate: f64,
    pub oracle: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { family: 1e-9, certificate: 1e-9, oracle: 1e-8 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ZGridSpec {
    /// Inner circle; the outer circle `1/radius` is added by the real structure.
    pub radius: f64,
    pub points: usize,
    pub phase: f64,
}

impl Default for ZGridSpec {
    fn default() -> Self {
        ZGridSpec { radius: 0.5, points: 6, phase: 0.37 }
    }
}

impl ZGridSpec {
    pub fn grid(&self) -> Vec<Complex64> {
        asdflow_core::isomonodromy::z_grid(self.radius, self.points, self.phase)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySpec {
    /// Spacing of the short runs used for the flatness and theta3 checks.
    pub step: f64,
    pub samples: usize,
    /// Number of trajectory samples that get the finite-difference curvature check.
    pub fd_points: usize,
    pub fd_tol: f64,
    pub flatness_tol: f64,
    pub certificate_tol: f64,
    pub theta3_tol: f64,
    pub kahler_tol: f64,
    pub drift_tol: f64,
}

impl Default for VerifySpec {
    fn default() -> Self {
        VerifySpec {
            step: 2e-6,
            samples: 5,
            fd_points: 5,
            fd_tol: 1e-4,
            flatness_tol: 1e-6,
            certificate_tol: 1e-7,
            theta3_tol: 1e-6,
            kahler_tol: 1e-8,
            drift_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScanMode {
    #[default]
    Random,
    Diagonal,
    Certificate,
    Kahler,
}

impl ScanMode {
    pub fn name(self) -> &'static str {
        match self {
            ScanMode::Random => "random",
            ScanMode::Diagonal => "diagonal",
            ScanMode::Certificate => "certificate",
            ScanMode::Kahler => "kahler",
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanSpec {
    pub mode: ScanMode,
    pub points: usize,
    pub seed: u64,
    pub w: [f64; 2],
    pub alpha: [f64; 2],
    pub eta: [f64; 2],
    pub min_gap: f64,
}

impl Default for ScanSpec {
    fn default() -> Self {
        let r = StateRanges::default();
        ScanSpec {
            mode: ScanMode::Random,
            points: 100,
            seed: 0,
            w: [r.w.0, r.w.1],
            alpha: [r.alpha.0, r.alpha.1],
            eta: [r.eta.0, r.eta.1],
            min_gap: r.min_gap,
        }
    }
}

impl ScanSpec {
    pub fn ranges(&self) -> StateRanges {
        StateRanges { w: (self.w[0], self.w[1]), alpha: (self.alpha[0], self.alpha[1]), eta: (self.eta[0], self.eta[1]), min_gap: self.min_gap }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub path: Option<PathBuf>,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub rtol: Option<f64>,
    pub atol: Option<f64>,
    pub tol_family: Option<f64>,
    pub tol_cert: Option<f64>,
    pub seed: Option<u64>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| anyhow!("config: {}", e.to_string().trim_end()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(p) = &o.out {
            self.output.path = Some(p.clone());
        }
        if let Some(v) = o.rtol {
            self.integrate.rtol = v;
        }
        if let Some(v) = o.atol {
            self.integrate.atol = v;
        }
        if let Some(v) = o.tol_family {
            self.tolerances.family = v;
        }
        if let Some(v) = o.tol_cert {
            self.tolerances.certificate = v;
        }
        if let Some(v) = o.seed {
            self.scan.seed = v;
        }
        self.check()
    }

    fn check(&self) -> Result<()> {
        let positive = [
            ("integrate.rtol", self.integrate.rtol),
            ("integrate.atol", self.integrate.atol),
            ("tolerances.family", self.tolerances.family),
            ("tolerances.certificate", self.tolerances.certificate),
            ("tolerances.oracle", self.tolerances.oracle),
            ("zgrid.radius", self.zgrid.radius),
            ("verify.step", self.verify.step),
            ("verify.fd_tol", self.verify.fd_tol),
            ("verify.flatness_tol", self.verify.flatness_tol),
            ("verify.certificate_tol", self.verify.certificate_tol),
            ("verify.theta3_tol", self.verify.theta3_tol),
            ("verify.kahler_tol", self.verify.kahler_tol),
            ("verify.drift_tol", self.verify.drift_tol),
            ("scan.min_gap", self.scan.min_gap),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                bail!("config: {name} must be positive and finite, got {v}");
            }
        }
        if let Some(v) = self.integrate.max_step {
            if !(v > 0.0) {
                bail!("config: integrate.max_step must be positive, got {v}");
            }
        }
        if let Some(v) = self.integrate.rk4_step {
            if !(v.is_finite() && v > 0.0) {
                bail!("config: integrate.rk4_step must be positive, got {v}");
            }
        }
        if self.integrate.method == MethodName::Rk4 && self.integrate.rk4_step.is_none() {
            bail!("config: integrate.rk4_step is required when integrate.method = \"rk4\"");
        }
        if self.integrate.samples == Some(0) {
            bail!("config: integrate.samples must be at least 1");
        }
        if self.zgrid.points == 0 {
            bail!("config: zgrid.points must be at least 1");
        }
        if self.verify.samples < 3 {
            bail!("config: verify.samples must be at least 3");
        }
        for (name, r) in [("scan.w", self.scan.w), ("scan.alpha", self.scan.alpha), ("scan.eta", self.scan.eta)] {
            if !(r[0] < r[1]) {
                bail!("config: {name} must be an increasing pair, got [{}, {}]", r[0], r[1]);
            }
        }
        if self.scan.w[0] <= 0.0 {
            bail!("config: scan.w must lie in w > 0");
        }
        if let Some(s) = &self.state {
            let given = [s.eta.is_some(), s.xi.is_some(), s.certificate.is_some()];
            if given.iter().filter(|b| **b).count() > 1 {
                let names: Vec<&str> = ["state.eta", "state.xi", "state.certificate"].into_iter().zip(given).filter(|(_, g)| *g).map(|(n, _)| n).collect();
                bail!("config: {} are mutually exclusive", names.join(" and "));
            }
            if let Some(c) = &s.certificate {
                if c.signs.iter().any(|v| v.abs() != 1.0) {
                    bail!("config: state.certificate.signs entries must be +1 or -1");
                }
            }
        }
        Ok(())
    }

    pub fn initial_state(&self) -> Result<MetricState> {
        let s = self.state.as_ref().ok_or_else(|| anyhow!("config: [state] section is required"))?;
        let st = if let Some(xi) = s.xi {
            MetricState::from_xi(s.t0, s.w, s.alpha, xi)
        } else if let Some(c) = &s.certificate {
            forward_certificate_state(s.t0, s.w, s.alpha, c.f, c.signs)
        } else {
            MetricState::new(s.t0, s.w, s.alpha, s.eta.unwrap_or([0.0; 3]))
        };
        st.map_err(|e| anyhow!("config: state: {e}"))
    }

    pub fn t_end(&self) -> Result<f64> {
        let t0 = self.state.as_ref().map_or(0.0, |s| s.t0);
        let t = self.integrate.t_end.ok_or_else(|| anyhow!("config: integrate.t_end is required"))?;
        if !t.is_finite() {
            bail!("config: integrate.t_end must be finite");
        }
        if t == t0 {
            bail!("config: integrate.t_end equals state.t0");
        }
        Ok(t)
    }

    pub fn controller(&self) -> StepController {
        let i = &self.integrate;
        StepController {
            rtol: i.rtol,
            atol: i.atol,
            max_step: i.max_step.unwrap_or(f64::INFINITY),
            max_steps: i.max_steps,
            method: match i.method {
                MethodName::DormandPrince => Method::DormandPrince,
                MethodName::Rk4 => Method::Rk4 { h: i.rk4_step.unwrap_or(1e-3) },
            },
            ..StepController::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = "[state]\nw = [1.0, 2.0, 3.0]\nalpha = [0.1, 0.2, 0.3]\n";

    #[test]
    fn minimal_state_is_diagonal() {
        let c = RunConfig::parse(BASE).unwrap();
        assert_eq!(c.initial_state().unwrap().eta, [0.0; 3]);
        assert_eq!(c.tolerances.family, 1e-9);
    }

    #[test]
    fn eta_and_xi_conflict_names_both() {
        let e = RunConfig::parse(&format!("{BASE}eta = [0.1, 0.0, 0.0]\nxi = [0.1, 0.0, 0.0]\n")).unwrap_err();
        let msg = format!("{e:#}");
        assert!(msg.contains("state.eta") && msg.contains("state.xi"), "{msg}");
    }

    #[test]
    fn unknown_key_is_named() {
        let e = RunConfig::parse(&format!("{BASE}[integrate]\nrtoll = 1e-9\n")).unwrap_err();
        assert!(format!("{e:#}").contains("rtoll"));
    }

    #[test]
    fn negative_tolerance_is_named() {
        let e = RunConfig::parse(&format!("{BASE}[tolerances]\nfamily = -1.0\n")).unwrap_err();
        assert!(format!("{e:#}").contains("tolerances.family"));
    }

    #[test]
    fn short_triple_is_rejected() {
        assert!(RunConfig::parse("[state]\nw = [1.0, 2.0]\nalpha = [0.0, 0.0, 0.0]\n").is_err());
    }

    #[test]
    fn certificate_state_satisfies_relations() {
        let c = RunConfig::parse(&format!("{BASE}[state.certificate]\nf = 1.0\nsigns = [1.0, -1.0]\n")).unwrap();
        let s = c.initial_state().unwrap();
        let cert = asdflow_core::double_root_certificate(&s, 1e-9).unwrap().unwrap();
        assert!((cert.f - 1.0).abs() < 1e-9);
    }

    #[test]
    fn overrides_win() {
        let mut c = RunConfig::parse(BASE).unwrap();
        c.apply(&Overrides { rtol: Some(1e-6), seed: Some(9), ..Default::default() }).unwrap();
        assert_eq!(c.integrate.rtol, 1e-6);
        assert_eq!(c.scan.seed, 9);
        assert!(c.apply(&Overrides { tol_cert: Some(0.0), ..Default::default() }).is_err());
    }

    #[test]
    fn rk4_needs_a_step() {
        assert!(RunConfig::parse(&format!("{BASE}[integrate]\nmethod = \"rk4\"\n")).is_err());
        let c = RunConfig::parse(&format!("{BASE}[integrate]\nmethod = \"rk4\"\nrk4_step = 0.01\n")).unwrap();
        assert_eq!(c.controller().method, Method::Rk4 { h: 0.01 });
    }
}
