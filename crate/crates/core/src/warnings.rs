//! Machine-readable warnings attached to fits and command reports.

use serde::Serialize;

use crate::identifiability::{is_identifiable, parameter_bound_satisfied};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum WarningCode {
    /// `2J > K`: the family cannot determine the missing cell.
    NonidentifiableFamily,
    /// `J(K+1) - 1 > 2^K - 2`: more parameters than free conditional cells.
    Overparameterized,
    /// A fitted model has two classes sharing a per-source probability.
    ClassesMerged,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Warning {
    pub code: WarningCode,
    pub message: String,
}

impl Warning {
    pub fn new(code: WarningCode, message: impl Into<String>) -> Self {
        Warning {
            code,
            message: message.into(),
        }
    }
}

/// Warnings that apply to any analysis of the `J`-class family on `K` sources.
pub fn family_warnings(j: usize, k: usize) -> Vec<Warning> {
    let mut out = Vec::new();
    let (j64, k64) = (j as u64, k as u64);
    if let Ok(d) = is_identifiable(j64, k64) {
        if !d.identifiable {
            out.push(Warning::new(
                WarningCode::NonidentifiableFamily,
                format!(
                    "latent class models with J={j} classes are not identifiable from K={k} sources \
                     (identifiable iff 2J <= K); distinct models fit the observed counts equally well \
                     while implying different population sizes"
                ),
            ));
        }
    }
    if let Ok(false) = parameter_bound_satisfied(j64, k64) {
        out.push(Warning::new(
            WarningCode::Overparameterized,
            format!(
                "J(K+1)-1 = {} parameters exceed the 2^K-2 = {} free conditional cell probabilities",
                j * (k + 1) - 1,
                (1u128 << k.min(127)) - 2
            ),
        ));
    }
    out
}
