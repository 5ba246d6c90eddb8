//! Analysis report data model and its JSON serialization.
//!
//! Reports are deterministic given (input, seed): field order is fixed by
//! struct declaration, floating-point diagnostics are rendered with 17
//! significant digits, and exact results carry their expression strings.

use serde::Serialize;

use crate::expr::Strength;
use crate::geometry::{Transversality, Verdict};

/// Render a float with 17 significant digits (lossless round-trip).
pub fn format_f64(x: f64) -> String {
    if x.is_nan() {
        "nan".to_string()
    } else {
        format!("{x:.16e}")
    }
}

/// Classification flags with their evidence strength.
#[derive(Debug, Clone, Serialize)]
pub struct Flags {
    pub transverse_type_changing: Verdict,
    pub radical_transversality: Transversality,
    pub radical_evidence: Strength,
    pub ii_flat: Verdict,
    pub iii_flat: Verdict,
    pub conf_ii_flat: Verdict,
    pub conf_iii_flat: Verdict,
}

/// One extendibility question decided by both methods.
#[derive(Debug, Clone, Serialize)]
pub struct MethodPair {
    pub criteria: Verdict,
    pub laurent: Verdict,
    pub agree: bool,
    /// First failing Laurent component, when the tensor does not extend.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<String>,
}

impl MethodPair {
    pub fn new(criteria: Verdict, laurent: Verdict, witness: Option<String>) -> MethodPair {
        MethodPair {
            agree: criteria.value == laurent.value,
            criteria,
            laurent,
            witness,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ExtendibilityTable {
    pub riemann: MethodPair,
    pub ricci: MethodPair,
    pub weyl: MethodPair,
}

impl ExtendibilityTable {
    pub fn all_agree(&self) -> bool {
        self.riemann.agree && self.ricci.agree && self.weyl.agree
    }
}

/// A single diagnostic quantity: expression on the locus, sampled magnitude.
#[derive(Debug, Clone, Serialize)]
pub struct DiagEntry {
    pub expr: String,
    pub max_abs_on_samples: String,
    pub evidence: Strength,
}

#[derive(Debug, Clone, Serialize, Default)]
pub struct Diagnostics {
    /// Second-order Laurent witness of the Weyl tensor in the mixed frame
    /// (nonzero exactly when a tangent radical obstructs extension).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weyl_order2_witness: Option<DiagEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b_residual_max: Option<DiagEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub schouten_gap_max: Option<DiagEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cotton_residual_max: Option<DiagEntry>,
}

/// Full analysis report of one metric chart.
#[derive(Debug, Clone, Serialize)]
pub struct AnalysisReport {
    pub engine_version: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input_hash: Option<String>,
    pub seed: u64,
    pub dim: usize,
    pub coords: Vec<String>,
    pub flags: Flags,
    /// None when the radical transversality is non-uniform along the locus;
    /// extendibility is then not asserted.
    pub extendibility: Option<ExtendibilityTable>,
    pub diagnostics: Diagnostics,
    pub notes: Vec<String>,
}

impl AnalysisReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_formatting_is_lossless() {
        for x in [0.1, 1.0 / 3.0, 2.5e-17, 123456.789] {
            let s = format_f64(x);
            let back: f64 = s.parse().unwrap();
            assert_eq!(back, x);
        }
        assert_eq!(format_f64(f64::NAN), "nan");
    }

    #[test]
    fn method_pair_agreement() {
        let p = MethodPair::new(Verdict::exact(true), Verdict::exact(true), None);
        assert!(p.agree);
        let q = MethodPair::new(Verdict::exact(true), Verdict::numeric(false), None);
        assert!(!q.agree);
    }
}
