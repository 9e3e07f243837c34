//! Dynamical variables of an SU(2)-invariant metric and the special families.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral;

/// Cyclic successors of an index in `0..3`.
#[inline]
pub fn cyc(i: usize) -> (usize, usize) {
    ((i + 1) % 3, (i + 2) % 3)
}

/// The nine fields `(w, alpha, eta)` at time `t`, with `eta_i = xi_i / (w_j w_k)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricState {
    pub t: f64,
    pub w: [f64; 3],
    pub alpha: [f64; 3],
    pub eta: [f64; 3],
}

impl MetricState {
    pub fn new(t: f64, w: [f64; 3], alpha: [f64; 3], eta: [f64; 3]) -> Result<Self> {
        let s = MetricState { t, w, alpha, eta };
        s.validate()?;
        Ok(s)
    }

    pub fn from_xi(t: f64, w: [f64; 3], alpha: [f64; 3], xi: [f64; 3]) -> Result<Self> {
        let mut eta = [0.0; 3];
        for i in 0..3 {
            let (j, k) = cyc(i);
            eta[i] = xi[i] / (w[j] * w[k]);
        }
        Self::new(t, w, alpha, eta)
    }

    /// Builds a state from the reduced variables `X_i = (w_j^2 - w_k^2) eta_i`.
    pub fn from_reduced_x(t: f64, w: [f64; 3], alpha: [f64; 3], x: [f64; 3]) -> Result<Self> {
        let mut eta = [0.0; 3];
        for i in 0..3 {
            let (j, k) = cyc(i);
            let gap = w[j] * w[j] - w[k] * w[k];
            if gap.abs() < crate::flow::EPS_DEN {
                if x[i] != 0.0 {
                    return Err(Error::DegenerateDenominator { i: i + 1, j: j + 1, k: k + 1, gap, eta: f64::INFINITY });
                }
                continue;
            }
            eta[i] = x[i] / gap;
        }
        Self::new(t, w, alpha, eta)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.t.is_finite() {
            return Err(Error::NonFinite { field: "t" });
        }
        const W: [&str; 3] = ["w1", "w2", "w3"];
        const A: [&str; 3] = ["alpha1", "alpha2", "alpha3"];
        const E: [&str; 3] = ["eta1", "eta2", "eta3"];
        for i in 0..3 {
            if !self.w[i].is_finite() {
                return Err(Error::NonFinite { field: W[i] });
            }
            if !self.alpha[i].is_finite() {
                return Err(Error::NonFinite { field: A[i] });
            }
            if !self.eta[i].is_finite() {
                return Err(Error::NonFinite { field: E[i] });
            }
            if self.w[i] <= 0.0 {
                return Err(Error::NonPositiveW { index: i + 1, value: self.w[i] });
            }
        }
        Ok(())
    }

    pub fn xi(&self) -> [f64; 3] {
        let mut xi = [0.0; 3];
        for i in 0..3 {
            let (j, k) = cyc(i);
            xi[i] = self.eta[i] * self.w[j] * self.w[k];
        }
        xi
    }

    pub fn to_array(&self) -> [f64; 9] {
        let mut y = [0.0; 9];
        y[..3].copy_from_slice(&self.w);
        y[3..6].copy_from_slice(&self.alpha);
        y[6..].copy_from_slice(&self.eta);
        y
    }

    pub fn from_array(t: f64, y: &[f64; 9]) -> Self {
        MetricState {
            t,
            w: [y[0], y[1], y[2]],
            alpha: [y[3], y[4], y[5]],
            eta: [y[6], y[7], y[8]],
        }
    }

    /// Euclidean norm of the nine fields.
    pub fn norm(&self) -> f64 {
        self.to_array().iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Product `(w2^2 - w3^2)(w3^2 - w1^2)(w1^2 - w2^2)`.
    pub fn off_diagonal_discriminant(&self) -> f64 {
        (0..3)
            .map(|i| {
                let (j, k) = cyc(i);
                self.w[j] * self.w[j] - self.w[k] * self.w[k]
            })
            .product()
    }

    pub fn is_non_diagonal(&self, tol: f64) -> bool {
        self.off_diagonal_discriminant().abs() > tol
    }

    /// Relabels `1 -> 2 -> 3 -> 1`, the cyclic frame permutation.
    pub fn rotate_indices(&self) -> Self {
        let p = |v: [f64; 3]| [v[2], v[0], v[1]];
        MetricState { t: self.t, w: p(self.w), alpha: p(self.alpha), eta: p(self.eta) }
    }
}

/// Scales `a, b, c` of the orbit metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoefficientTriple {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl CoefficientTriple {
    pub fn as_array(&self) -> [f64; 3] {
        [self.a, self.b, self.c]
    }

    /// `(bc, ca, ab)`.
    pub fn products(&self) -> [f64; 3] {
        [self.b * self.c, self.c * self.a, self.a * self.b]
    }
}

pub fn recover_abc(state: &MetricState) -> Result<CoefficientTriple> {
    let [w1, w2, w3] = state.w;
    for (i, &w) in state.w.iter().enumerate() {
        if !(w > 0.0) {
            return Err(Error::NonPositiveW { index: i + 1, value: w });
        }
    }
    Ok(CoefficientTriple {
        a: (w2 * w3 / w1).sqrt(),
        b: (w3 * w1 / w2).sqrt(),
        c: (w1 * w2 / w3).sqrt(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReducedX(pub [f64; 3]);

pub fn reduced_x(state: &MetricState) -> ReducedX {
    let w = state.w;
    let mut x = [0.0; 3];
    for i in 0..3 {
        let (j, k) = cyc(i);
        x[i] = (w[j] * w[j] - w[k] * w[k]) * state.eta[i];
    }
    ReducedX(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FamilyTag {
    Diagonal,
    AtiyahHitchin,
    #[serde(rename = "BGPP")]
    Bgpp,
    HermitianDoubleRoot,
    Kahler,
    HyperKahler,
    Generic,
}

impl FamilyTag {
    pub fn name(self) -> &'static str {
        match self {
            FamilyTag::Diagonal => "Diagonal",
            FamilyTag::AtiyahHitchin => "AtiyahHitchin",
            FamilyTag::Bgpp => "BGPP",
            FamilyTag::HermitianDoubleRoot => "HermitianDoubleRoot",
            FamilyTag::Kahler => "Kahler",
            FamilyTag::HyperKahler => "HyperKahler",
            FamilyTag::Generic => "Generic",
        }
    }
}

impl std::fmt::Display for FamilyTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Most specific tag plus every tag that matched, in priority order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub primary: FamilyTag,
    pub tags: Vec<FamilyTag>,
    pub tol: f64,
    pub certificate_f: Option<f64>,
}

pub fn classify(state: &MetricState, tol: f64) -> Result<Classification> {
    state.validate()?;
    let max_abs = |v: [f64; 3]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let diag = max_abs(state.eta) <= tol;
    if diag {
        let mut gap_ah = [0.0; 3];
        for i in 0..3 {
            gap_ah[i] = state.alpha[i] - state.w[i];
        }
        let ah = max_abs(gap_ah) <= tol;
        let bgpp = max_abs(state.alpha) <= tol;
        let (primary, tags) = match (ah, bgpp) {
            (true, true) => return Err(Error::AmbiguousClassification("AtiyahHitchin", "BGPP")),
            (false, true) => (FamilyTag::Bgpp, vec![FamilyTag::Diagonal, FamilyTag::Bgpp, FamilyTag::HyperKahler]),
            (true, false) => (FamilyTag::AtiyahHitchin, vec![FamilyTag::Diagonal, FamilyTag::AtiyahHitchin]),
            (false, false) => (FamilyTag::Diagonal, vec![FamilyTag::Diagonal]),
        };
        return Ok(Classification { primary, tags, tol, certificate_f: None });
    }
    match spectral::double_root_certificate(state, tol)? {
        Some(cert) => {
            let alpha_scale = 1.0 + max_abs(state.alpha);
            if cert.f.abs() <= tol * alpha_scale {
                Ok(Classification {
                    primary: FamilyTag::Kahler,
                    tags: vec![FamilyTag::HermitianDoubleRoot, FamilyTag::Kahler],
                    tol,
                    certificate_f: Some(cert.f),
                })
            } else {
                Ok(Classification {
                    primary: FamilyTag::HermitianDoubleRoot,
                    tags: vec![FamilyTag::HermitianDoubleRoot],
                    tol,
                    certificate_f: Some(cert.f),
                })
            }
        }
        None => Ok(Classification { primary: FamilyTag::Generic, tags: vec![FamilyTag::Generic], tol, certificate_f: None }),
    }
}
