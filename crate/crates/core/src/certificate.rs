//! Property certificates shared by every checking routine.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::geometry::Point;

/// Upper limit on stored witnesses; the violation count is kept separately.
pub const MAX_WITNESSES: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Property {
    SelfMap,
    Nonexpansive,
    FirmlyNonexpansive,
    Commuting,
    PreservesSet,
    /// `T c` stays in the Tchebyshev center set of a preserved set.
    CenterInvariance,
    /// A common fixed point was found inside the Tchebyshev center set.
    FixedPointInCenter,
    /// `Fix(T R)` agrees with `Fix T` intersected with the family's fixed set.
    FixCompositeMatchesIntersection,
    /// Approximate fixed point sequences of `T R` are approximate fixed point
    /// sequences of `T`, `R` and every family member.
    ApproximateFixedPointTransfer,
    /// The gamma set is invariant and contains the common fixed points.
    GammaProperties,
    Isometry,
    /// `T_i(R x) = R x` for every family member.
    RangeInFixedSet,
    /// `R(R x) = R x`.
    Idempotent,
}

impl fmt::Display for Property {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = serde_json::to_value(self)
            .ok()
            .and_then(|v| v.as_str().map(str::to_owned))
            .unwrap_or_default();
        f.write_str(&name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    /// Established from the structure of the map; no sampling involved.
    #[serde(rename = "certified-analytic")]
    CertifiedAnalytic,
    /// No violation on the probe set. Evidence, not proof.
    #[serde(rename = "pass-sampled")]
    PassSampled,
    #[serde(rename = "FAIL")]
    Fail,
}

/// One violating input together with the measured quantity and the bound it broke.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Witness {
    pub inputs: Vec<Point>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub indices: Vec<usize>,
    /// Free parameter of the violated inequality (the averaging weight `a` for
    /// firm nonexpansivity), when there is one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parameter: Option<f64>,
    pub measured: f64,
    pub bound: f64,
}

impl Witness {
    pub fn new(inputs: Vec<Point>, measured: f64, bound: f64) -> Self {
        Self {
            inputs,
            indices: Vec::new(),
            parameter: None,
            measured,
            bound,
        }
    }

    pub fn with_indices(mut self, indices: Vec<usize>) -> Self {
        self.indices = indices;
        self
    }

    pub fn with_parameter(mut self, a: f64) -> Self {
        self.parameter = Some(a);
        self
    }

    pub fn excess(&self) -> f64 {
        self.measured - self.bound
    }
}

/// The outcome of checking one property.
///
/// The verdict is `FAIL` exactly when at least one witness was recorded; the
/// constructors below are the only way to build one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PropertyCertificate {
    pub property: Property,
    pub verdict: Verdict,
    pub witnesses: Vec<Witness>,
    /// Total number of violations seen, which may exceed `witnesses.len()`.
    pub violation_count: usize,
    pub sample_count: usize,
    pub tolerance: f64,
    /// Largest `measured - bound` over everything checked. Negative when all
    /// checks held with room to spare.
    pub worst_excess: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl PropertyCertificate {
    pub fn analytic(property: Property, tolerance: f64, note: impl Into<String>) -> Self {
        Self {
            property,
            verdict: Verdict::CertifiedAnalytic,
            witnesses: Vec::new(),
            violation_count: 0,
            sample_count: 0,
            tolerance,
            worst_excess: f64::NEG_INFINITY,
            note: Some(note.into()),
        }
    }

    pub fn is_pass(&self) -> bool {
        self.verdict != Verdict::Fail
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }

    /// Re-labels a failed certificate under another property, keeping its witnesses.
    pub(crate) fn relabel(mut self, property: Property, note: impl Into<String>) -> Self {
        self.property = property;
        self.note = Some(note.into());
        self
    }
}

/// Accumulates checks for a sampled certificate.
#[derive(Debug)]
pub struct CertificateBuilder {
    property: Property,
    tolerance: f64,
    samples: usize,
    witnesses: Vec<Witness>,
    violations: usize,
    worst: f64,
}

impl CertificateBuilder {
    pub fn new(property: Property, tolerance: f64) -> Self {
        Self {
            property,
            tolerance,
            samples: 0,
            witnesses: Vec::new(),
            violations: 0,
            worst: f64::NEG_INFINITY,
        }
    }

    pub fn samples(mut self, n: usize) -> Self {
        self.samples = n;
        self
    }

    /// Records one comparison `measured <= bound + tolerance`. The witness
    /// closure is only called on violation.
    pub fn check(&mut self, measured: f64, bound: f64, witness: impl FnOnce() -> Witness) -> bool {
        let excess = measured - bound;
        // NaN counts as a violation.
        let ok = excess <= self.tolerance;
        if !(excess <= self.worst) {
            self.worst = excess;
        }
        if !ok {
            self.violations += 1;
            if self.witnesses.len() < MAX_WITNESSES {
                self.witnesses.push(witness());
            }
        }
        ok
    }

    pub fn push_witness(&mut self, w: Witness) {
        let excess = w.excess();
        if !(excess <= self.worst) {
            self.worst = excess;
        }
        self.violations += 1;
        if self.witnesses.len() < MAX_WITNESSES {
            self.witnesses.push(w);
        }
    }

    pub fn finish(self) -> PropertyCertificate {
        let verdict = if self.violations == 0 {
            Verdict::PassSampled
        } else {
            Verdict::Fail
        };
        PropertyCertificate {
            property: self.property,
            verdict,
            witnesses: self.witnesses,
            violation_count: self.violations,
            sample_count: self.samples,
            tolerance: self.tolerance,
            worst_excess: self.worst,
            note: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fail_iff_witnesses() {
        let mut b = CertificateBuilder::new(Property::Nonexpansive, 1e-9).samples(2);
        assert!(b.check(1.0, 1.0, || unreachable!()));
        let pass = b.finish();
        assert_eq!(pass.verdict, Verdict::PassSampled);
        assert!(pass.witnesses.is_empty());

        let mut b = CertificateBuilder::new(Property::Nonexpansive, 1e-9);
        assert!(!b.check(2.0, 1.0, || Witness::new(vec![], 2.0, 1.0)));
        let fail = b.finish();
        assert_eq!(fail.verdict, Verdict::Fail);
        assert_eq!(fail.witnesses.len(), 1);
        assert_eq!(fail.worst_excess, 1.0);
    }

    #[test]
    fn nan_is_a_violation() {
        let mut b = CertificateBuilder::new(Property::SelfMap, 1e-9);
        assert!(!b.check(f64::NAN, 0.0, || Witness::new(vec![], f64::NAN, 0.0)));
        assert!(!b.finish().is_pass());
    }

    #[test]
    fn witness_cap() {
        let mut b = CertificateBuilder::new(Property::Commuting, 0.0);
        for _ in 0..100 {
            b.check(1.0, 0.0, || Witness::new(vec![], 1.0, 0.0));
        }
        let c = b.finish();
        assert_eq!(c.witnesses.len(), MAX_WITNESSES);
        assert_eq!(c.violation_count, 100);
    }

    #[test]
    fn verdict_serialization() {
        let s = serde_json::to_string(&Verdict::CertifiedAnalytic).unwrap();
        assert_eq!(s, "\"certified-analytic\"");
        assert_eq!(Property::FirmlyNonexpansive.to_string(), "firmlyNonexpansive");
    }
}
