//! Line-delimited records and their 17-significant-digit number format.

use std::collections::BTreeMap;
use std::io::Write;

use anyhow::{anyhow, Context, Result};
use asdflow_core::curvature::{curvature_block, inf_norm};
use asdflow_core::spectral::{build_quartic, double_root_certificate, roots, HermitianCertificate, RootSet};
use asdflow_core::{classify, painleve_tag, reduced_x, Complex64, MetricState, StateDerivative};
use serde::ser::Serializer;
use serde::Serialize;
use serde_json::value::RawValue;

/// Serialized as `d.dddddddddddddddde±x` (17 significant digits); non-finite values become `null`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Num(pub f64);

impl Num {
    pub fn text(self) -> String {
        format!("{:.16e}", self.0)
    }
}

impl Serialize for Num {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if !self.0.is_finite() {
            return s.serialize_none();
        }
        let raw = RawValue::from_string(self.text()).map_err(serde::ser::Error::custom)?;
        raw.serialize(s)
    }
}

pub fn nums<const N: usize>(v: [f64; N]) -> [Num; N] {
    v.map(Num)
}

pub fn complex(z: Complex64) -> [Num; 2] {
    [Num(z.re), Num(z.im)]
}

#[derive(Debug, Clone, Serialize)]
pub struct RootRecord {
    pub re: Num,
    pub im: Num,
    pub multiplicity: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct CertificateRecord {
    pub f: Num,
    pub signs: [Num; 3],
    pub residual: Num,
    pub degenerate: Option<usize>,
    pub quartic_degenerate: bool,
}

impl From<&HermitianCertificate> for CertificateRecord {
    fn from(c: &HermitianCertificate) -> Self {
        CertificateRecord {
            f: Num(c.f),
            signs: nums(c.signs),
            residual: Num(c.residual),
            degenerate: c.degenerate.map(|i| i + 1),
            quartic_degenerate: c.quartic_degenerate,
        }
    }
}

/// One state with everything that can be read off it without integrating.
#[derive(Debug, Clone, Serialize)]
pub struct StateRecord {
    pub t: Num,
    pub w: [Num; 3],
    pub alpha: [Num; 3],
    pub eta: [Num; 3],
    #[serde(rename = "X")]
    pub x: [Num; 3],
    pub asd_residual: Num,
    pub class: String,
    pub tags: Vec<String>,
    pub painleve: String,
    /// `[re, im]` of `c0 … c4`.
    pub quartic: [[Num; 2]; 5],
    pub roots: Vec<RootRecord>,
    pub roots_at_infinity: usize,
    pub certificate: Option<CertificateRecord>,
}

pub struct Labels {
    pub class: String,
    pub tags: Vec<String>,
    pub painleve: String,
}

pub fn labels(state: &MetricState, tol_family: f64) -> Labels {
    let (class, tags) = match classify(state, tol_family) {
        Ok(c) => (c.primary.name().to_string(), c.tags.iter().map(|t| t.name().to_string()).collect()),
        Err(_) => ("Unclassified".to_string(), Vec::new()),
    };
    Labels { class, tags, painleve: painleve_tag(state).name().to_string() }
}

pub fn root_records(rs: &RootSet) -> Vec<RootRecord> {
    rs.roots.iter().map(|r| RootRecord { re: Num(r.z.re), im: Num(r.z.im), multiplicity: r.multiplicity }).collect()
}

pub fn state_record(state: &MetricState, deriv: &StateDerivative, tol_family: f64, tol_cert: f64) -> StateRecord {
    let asd = curvature_block(state, deriv).map(|b| inf_norm(&b.a)).unwrap_or(f64::NAN);
    let l = labels(state, tol_family);
    let q = build_quartic(state);
    let (root_list, at_inf) = match roots(&q) {
        Ok(rs) => (root_records(&rs), rs.at_infinity),
        Err(_) => (Vec::new(), 0),
    };
    let certificate = double_root_certificate(state, tol_cert).ok().flatten().map(|c| CertificateRecord::from(&c));
    StateRecord {
        t: Num(state.t),
        w: nums(state.w),
        alpha: nums(state.alpha),
        eta: nums(state.eta),
        x: nums(reduced_x(state).0),
        asd_residual: Num(asd),
        class: l.class,
        tags: l.tags,
        painleve: l.painleve,
        quartic: q.coeffs.map(complex),
        roots: root_list,
        roots_at_infinity: at_inf,
        certificate,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub command: String,
    pub samples: usize,
    pub t_start: Num,
    pub t_final: Num,
    pub termination: String,
    pub max_asd_residual: Num,
    /// Present when the initial state carries a certificate.
    pub max_certificate_residual: Option<Num>,
    /// Present for BGPP starts: drift of `w_i² − w_j²`.
    pub conserved_drift: Option<Num>,
    pub classes: BTreeMap<String, usize>,
    pub painleve: BTreeMap<String, usize>,
}

#[derive(Serialize)]
struct SummaryLine<'a> {
    summary: &'a Summary,
}

/// Writes one JSON object per line.
pub struct JsonLines<W: Write> {
    out: W,
}

impl<W: Write> JsonLines<W> {
    pub fn new(out: W) -> Self {
        JsonLines { out }
    }

    pub fn record<T: Serialize>(&mut self, value: &T) -> Result<()> {
        serde_json::to_writer(&mut self.out, value)?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn summary(&mut self, s: &Summary) -> Result<()> {
        self.record(&SummaryLine { summary: s })
    }

    pub fn finish(mut self) -> Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

/// A state read back from a record line, with the labels it was written with.
#[derive(Debug, Clone)]
pub struct IngestedRecord {
    pub state: MetricState,
    pub class: String,
    pub painleve: String,
}

fn triple(v: &serde_json::Value, key: &str, line: usize) -> Result<[f64; 3]> {
    let arr = v.get(key).and_then(|a| a.as_array()).ok_or_else(|| anyhow!("line {line}: missing array field {key}"))?;
    if arr.len() != 3 {
        return Err(anyhow!("line {line}: field {key} must have 3 entries"));
    }
    let mut out = [0.0; 3];
    for (o, x) in out.iter_mut().zip(arr) {
        *o = x.as_f64().ok_or_else(|| anyhow!("line {line}: field {key} must hold numbers"))?;
    }
    Ok(out)
}

/// Parses record lines, skipping the summary object.
pub fn ingest(text: &str) -> Result<Vec<IngestedRecord>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let v: serde_json::Value = serde_json::from_str(line).with_context(|| format!("line {line_no}: not JSON"))?;
        if v.get("summary").is_some() {
            continue;
        }
        let t = v.get("t").and_then(|x| x.as_f64()).ok_or_else(|| anyhow!("line {line_no}: missing field t"))?;
        let state = MetricState::new(t, triple(&v, "w", line_no)?, triple(&v, "alpha", line_no)?, triple(&v, "eta", line_no)?)
            .map_err(|e| anyhow!("line {line_no}: {e}"))?;
        let text_field = |k: &str| v.get(k).and_then(|x| x.as_str()).map(str::to_string).ok_or_else(|| anyhow!("line {line_no}: missing field {k}"));
        out.push(IngestedRecord { state, class: text_field("class")?, painleve: text_field("painleve")? });
    }
    Ok(out)
}
