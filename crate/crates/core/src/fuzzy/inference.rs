use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use super::fam::FamTable;
use super::membership::MembershipFunction;
use super::variable::{FuzzifiedValue, LinguisticVariable};
use super::FuzzyError;
use crate::level::RiskLevel;

pub const DEFAULT_RESOLUTION: usize = 1001;
pub const MIN_RESOLUTION: usize = 101;

/// Firing strength per risk level, each in `[0, 1]`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Activations(pub [f64; 4]);

impl Activations {
    pub fn single(level: RiskLevel, strength: f64) -> Self {
        let mut a = Self::default();
        a[level] = strength;
        a
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }

    /// Most severe level with a non-zero activation.
    pub fn strongest_level(&self) -> Option<RiskLevel> {
        RiskLevel::ALL.into_iter().rev().find(|l| self[*l] > 0.0)
    }
}

impl Index<RiskLevel> for Activations {
    type Output = f64;
    fn index(&self, l: RiskLevel) -> &f64 {
        &self.0[l.index()]
    }
}

impl IndexMut<RiskLevel> for Activations {
    fn index_mut(&mut self, l: RiskLevel) -> &mut f64 {
        &mut self.0[l.index()]
    }
}

/// Evaluates every FAM cell with min implication and keeps, per level, the
/// strongest rule.
pub fn infer(table: &FamTable, last: &FuzzifiedValue, avg: &FuzzifiedValue) -> Activations {
    debug_assert_eq!(last.terms, table.rows, "last value does not match FAM rows");
    debug_assert_eq!(
        avg.terms, table.columns,
        "average does not match FAM columns"
    );
    let mut out = Activations::default();
    for (i, row) in table.cells.iter().enumerate() {
        let r = last.degrees.get(i).copied().unwrap_or(0.0);
        if r <= 0.0 {
            continue;
        }
        for (j, &level) in row.iter().enumerate() {
            let strength = r.min(avg.degrees.get(j).copied().unwrap_or(0.0));
            if strength > out[level] {
                out[level] = strength;
            }
        }
    }
    out
}

/// How per-variable activations are combined into one output set.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    /// Per-level maximum across variables.
    Max,
    /// Per-level maximum, then levels are visited from most to least severe
    /// and each is capped by the belief the more severe ones left over
    /// (`1 - sum` of their capped activations). Evidence of a severe risk is
    /// not averaged away by variables that still read normal.
    #[default]
    SeverityMasked,
}

/// Combined activations plus the output sets they clip.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedOutput {
    pub activations: Activations,
    pub sets: [MembershipFunction; 4],
    pub min: f64,
    pub max: f64,
}

impl AggregatedOutput {
    /// Pointwise max over the output sets, each clipped at its activation.
    pub fn envelope(&self, x: f64) -> f64 {
        RiskLevel::ALL
            .iter()
            .map(|&l| self.activations[l].min(self.sets[l.index()].degree(x)))
            .fold(0.0, f64::max)
    }
}

fn output_sets(output: &LinguisticVariable) -> Result<[MembershipFunction; 4], FuzzyError> {
    let names: Vec<&str> = output.terms.iter().map(|t| t.name.as_str()).collect();
    if names != ["NFR", "LFR", "HFR", "EFR"] {
        return Err(FuzzyError::Config(format!(
            "output variable must have terms NFR, LFR, HFR, EFR in order, got {names:?}"
        )));
    }
    Ok([
        output.terms[0].set,
        output.terms[1].set,
        output.terms[2].set,
        output.terms[3].set,
    ])
}

pub fn aggregate(
    activations: &[Activations],
    output: &LinguisticVariable,
    mode: Aggregation,
) -> Result<AggregatedOutput, FuzzyError> {
    if activations.is_empty() {
        return Err(FuzzyError::EmptyAggregation);
    }
    let sets = output_sets(output)?;
    let mut combined = Activations::default();
    for a in activations {
        for l in RiskLevel::ALL {
            combined[l] = combined[l].max(a[l].clamp(0.0, 1.0));
        }
    }
    if mode == Aggregation::SeverityMasked {
        let mut remaining = 1.0_f64;
        for l in RiskLevel::ALL.into_iter().rev() {
            combined[l] = combined[l].min(remaining);
            remaining = (remaining - combined[l]).max(0.0);
        }
    }
    Ok(AggregatedOutput {
        activations: combined,
        sets,
        min: output.universe.min,
        max: output.universe.max,
    })
}

/// Abscissae where the envelope can change slope: set corners, clip points
/// and crossings of sloped edges.
fn envelope_kinks(agg: &AggregatedOutput) -> Vec<f64> {
    let mut edges = Vec::new();
    let mut out = Vec::new();
    for set in &agg.sets {
        let [a, b, c, d] = set.corners();
        out.extend([a, b, c, d]);
        if b > a {
            edges.push((a, b, 0.0, 1.0));
        }
        if d > c {
            edges.push((c, d, 1.0, 0.0));
        }
    }
    for &level in &agg.activations.0 {
        if level > 0.0 && level < 1.0 {
            for &(x0, x1, y0, y1) in &edges {
                out.push(x0 + (level - y0) / (y1 - y0) * (x1 - x0));
            }
        }
    }
    for (i, &(a0, a1, ay0, ay1)) in edges.iter().enumerate() {
        let sa = (ay1 - ay0) / (a1 - a0);
        for &(b0, b1, by0, by1) in &edges[i + 1..] {
            let sb = (by1 - by0) / (b1 - b0);
            if sa != sb {
                let x = (by0 - sb * b0 - ay0 + sa * a0) / (sa - sb);
                if x > a0.max(b0) && x < a1.min(b1) {
                    out.push(x);
                }
            }
        }
    }
    out
}

/// Centroid of the aggregated envelope. The universe is sampled at
/// `resolution` uniform points plus every kink of the envelope, and each
/// linear piece between samples is integrated exactly. An empty envelope
/// yields 0, i.e. no risk.
pub fn defuzzify_centroid(agg: &AggregatedOutput, resolution: usize) -> f64 {
    let n = resolution.max(MIN_RESOLUTION);
    let step = (agg.max - agg.min) / (n - 1) as f64;
    let mut xs: Vec<f64> = (0..n).map(|i| agg.min + i as f64 * step).collect();
    xs.extend(
        envelope_kinks(agg)
            .into_iter()
            .filter(|x| *x > agg.min && *x < agg.max),
    );
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let (mut num, mut den) = (0.0, 0.0);
    let mut prev = (xs[0], agg.envelope(xs[0]));
    for &x in &xs[1..] {
        let (x0, m0) = prev;
        let m1 = agg.envelope(x);
        let h = x - x0;
        den += h * (m0 + m1) / 2.0;
        num += h * (x0 * (2.0 * m0 + m1) + x * (m0 + 2.0 * m1)) / 6.0;
        prev = (x, m1);
    }
    if den <= 0.0 {
        return 0.0;
    }
    (num / den).clamp(agg.min, agg.max)
}

/// Output term with the highest membership at `p`; ties go to the more
/// severe level.
pub fn classify_level(p: f64, output: &LinguisticVariable) -> RiskLevel {
    let mut best = (RiskLevel::Nfr, f64::NEG_INFINITY);
    for (i, term) in output.terms.iter().enumerate().take(4) {
        let d = term.set.degree(p);
        if d >= best.1 {
            best = (RiskLevel::from_index(i).unwrap_or(RiskLevel::Efr), d);
        }
    }
    best.0
}

#[cfg(test)]
mod tests {
    use super::super::{Term, Universe};
    use super::*;
    use RiskLevel::*;

    fn trap(a: f64, b: f64, c: f64, d: f64) -> MembershipFunction {
        MembershipFunction::trapezoid(a, b, c, d).unwrap()
    }

    fn output() -> LinguisticVariable {
        LinguisticVariable::new(
            "risk",
            Universe::new(0.0, 100.0, "%"),
            vec![
                Term::new("NFR", trap(0.0, 0.0, 15.0, 25.0)),
                Term::new("LFR", trap(15.0, 25.0, 45.0, 55.0)),
                Term::new("HFR", trap(45.0, 55.0, 75.0, 85.0)),
                Term::new("EFR", trap(75.0, 85.0, 100.0, 100.0)),
            ],
        )
        .unwrap()
    }

    fn table1() -> FamTable {
        let t = ["normal", "medium", "high", "very_high"]
            .map(String::from)
            .to_vec();
        FamTable::new(
            "co2",
            t.clone(),
            t,
            vec![
                vec![Nfr, Nfr, Nfr, Nfr],
                vec![Lfr, Lfr, Hfr, Efr],
                vec![Hfr, Hfr, Hfr, Efr],
                vec![Efr, Efr, Efr, Efr],
            ],
        )
        .unwrap()
    }

    fn fv(degrees: [f64; 4]) -> FuzzifiedValue {
        FuzzifiedValue {
            variable: "co2".into(),
            terms: ["normal", "medium", "high", "very_high"]
                .map(String::from)
                .to_vec(),
            degrees: degrees.to_vec(),
        }
    }

    #[test]
    fn infer_single_cell() {
        let a = infer(
            &table1(),
            &fv([0.0, 0.0, 0.0, 1.0]),
            &fv([1.0, 0.0, 0.0, 0.0]),
        );
        assert_eq!(a, Activations::single(Efr, 1.0));
    }

    #[test]
    fn infer_takes_min_then_max() {
        // (medium, high) -> HFR at 0.6 and (high, high) -> HFR at 0.4
        let a = infer(
            &table1(),
            &fv([0.0, 0.6, 0.4, 0.0]),
            &fv([0.0, 0.0, 1.0, 0.0]),
        );
        assert_eq!(a.0, [0.0, 0.0, 0.6, 0.0]);
    }

    #[test]
    fn infer_with_no_membership_fires_nothing() {
        let a = infer(&table1(), &fv([0.0; 4]), &fv([0.0; 4]));
        assert!(a.is_zero());
    }

    #[test]
    fn aggregate_max_combines_variables() {
        let agg = aggregate(
            &[Activations::single(Hfr, 0.5), Activations::single(Hfr, 0.7)],
            &output(),
            Aggregation::Max,
        )
        .unwrap();
        assert_eq!(agg.activations.0, [0.0, 0.0, 0.7, 0.0]);
    }

    #[test]
    fn aggregate_requires_input() {
        assert_eq!(
            aggregate(&[], &output(), Aggregation::Max),
            Err(FuzzyError::EmptyAggregation)
        );
    }

    #[test]
    fn single_full_activation_reproduces_the_set() {
        for mode in [Aggregation::Max, Aggregation::SeverityMasked] {
            let agg = aggregate(&[Activations::single(Efr, 1.0)], &output(), mode).unwrap();
            for i in 0..=1000 {
                let x = i as f64 / 10.0;
                assert_eq!(agg.envelope(x), output().terms[3].set.degree(x));
            }
        }
    }

    #[test]
    fn envelope_is_union_of_clipped_sets() {
        let agg = aggregate(
            &[Activations::single(Lfr, 0.6), Activations::single(Hfr, 0.3)],
            &output(),
            Aggregation::SeverityMasked,
        )
        .unwrap();
        assert_eq!(agg.activations.0, [0.0, 0.6, 0.3, 0.0]);
        assert_eq!(agg.envelope(35.0), 0.6);
        assert_eq!(agg.envelope(65.0), 0.3);
        assert_eq!(agg.envelope(50.0), 0.5_f64.min(0.6).max(0.3_f64.min(0.5)));
        assert_eq!(agg.envelope(95.0), 0.0);
    }

    #[test]
    fn severity_masking_caps_less_severe_levels() {
        let acts = [
            Activations([1.0, 0.0, 0.0, 0.0]),
            Activations([0.0, 0.0, 0.25, 0.9]),
        ];
        let masked = aggregate(&acts, &output(), Aggregation::SeverityMasked).unwrap();
        let left = 1.0 - 0.9;
        assert_eq!(masked.activations.0, [0.0, 0.0, left, 0.9]);
        let plain = aggregate(&acts, &output(), Aggregation::Max).unwrap();
        assert_eq!(plain.activations.0, [1.0, 0.0, 0.25, 0.9]);
    }

    #[test]
    fn max_aggregation_dilutes_extreme_evidence() {
        // One variable at EFR, another still normal: plain max lands on the
        // LFR/HFR crossover, masking keeps the result extreme.
        let acts = [Activations::single(Nfr, 1.0), Activations::single(Efr, 1.0)];
        let out = output();
        let plain = defuzzify_centroid(
            &aggregate(&acts, &out, Aggregation::Max).unwrap(),
            DEFAULT_RESOLUTION,
        );
        assert!((plain - 50.0).abs() < 1e-9);
        assert_eq!(classify_level(plain, &out), Hfr);
        let masked = defuzzify_centroid(
            &aggregate(&acts, &out, Aggregation::SeverityMasked).unwrap(),
            DEFAULT_RESOLUTION,
        );
        assert_eq!(classify_level(masked, &out), Efr);
    }

    #[test]
    fn centroid_of_symmetric_triangle() {
        let agg = AggregatedOutput {
            activations: Activations::single(Hfr, 1.0),
            sets: [
                trap(0.0, 0.0, 0.0, 0.0),
                trap(0.0, 0.0, 0.0, 0.0),
                MembershipFunction::triangle(40.0, 50.0, 60.0).unwrap(),
                trap(0.0, 0.0, 0.0, 0.0),
            ],
            min: 0.0,
            max: 100.0,
        };
        assert!((defuzzify_centroid(&agg, DEFAULT_RESOLUTION) - 50.0).abs() < 1e-9);
    }

    #[test]
    fn centroid_of_constant_envelope() {
        let full = trap(0.0, 0.0, 100.0, 100.0);
        let agg = AggregatedOutput {
            activations: Activations::single(Nfr, 1.0),
            sets: [full, full, full, full],
            min: 0.0,
            max: 100.0,
        };
        assert!((defuzzify_centroid(&agg, DEFAULT_RESOLUTION) - 50.0).abs() < 1e-9);
    }

    #[test]
    fn empty_envelope_means_no_risk() {
        let agg = aggregate(&[Activations::default()], &output(), Aggregation::Max).unwrap();
        assert_eq!(defuzzify_centroid(&agg, DEFAULT_RESOLUTION), 0.0);
    }

    #[test]
    fn classification_and_tie_break() {
        let out = output();
        assert_eq!(classify_level(0.0, &out), Nfr);
        assert_eq!(classify_level(20.0, &out), Lfr);
        assert_eq!(classify_level(50.0, &out), Hfr);
        assert_eq!(classify_level(65.0, &out), Hfr);
        assert_eq!(classify_level(80.0, &out), Efr);
        assert_eq!(classify_level(100.0, &out), Efr);
    }
}
