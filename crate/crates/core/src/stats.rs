//! Statistics for comparing reviewed groups: Fisher's exact test, rate
//! ratios, medians and difference-in-differences.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StatsError {
    #[error("a row or column total is zero")]
    DegenerateMargins,
    #[error("baseline rate is zero")]
    ZeroBaseline,
    #[error("difference-in-differences cell {0} is empty")]
    EmptyCell(&'static str),
    #[error("empty sample")]
    EmptySample,
    #[error("no events in window")]
    EmptyWindow,
    #[error("diff `{0}` lacks a timestamp needed for this metric")]
    MissingTimestamp(String),
}

/// Rows: treated (e.g. RADAR) / comparison. Columns: adverse / not adverse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TwoByTwoTable {
    pub a: u64,
    pub b: u64,
    pub c: u64,
    pub d: u64,
}

impl TwoByTwoTable {
    pub fn new(a: u64, b: u64, c: u64, d: u64) -> Self {
        Self { a, b, c, d }
    }

    pub fn total(&self) -> u64 {
        self.a + self.b + self.c + self.d
    }
}

/// Relative slack when comparing table probabilities to the observed one.
pub const FISHER_REL_TOL: f64 = 1e-7;

fn ln_factorials(n: u64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n as usize + 1);
    let mut acc = 0.0f64;
    out.push(0.0);
    for i in 1..=n {
        acc += (i as f64).ln();
        out.push(acc);
    }
    out
}

/// Two-sided Fisher exact p-value: the total hypergeometric probability of
/// all tables with the observed margins that are no more likely than the
/// observed table.
pub fn fisher_exact_two_sided(t: &TwoByTwoTable) -> Result<f64, StatsError> {
    let (r1, r2) = (t.a + t.b, t.c + t.d);
    let (c1, c2) = (t.a + t.c, t.b + t.d);
    if r1 == 0 || r2 == 0 || c1 == 0 || c2 == 0 {
        return Err(StatsError::DegenerateMargins);
    }
    let n = r1 + r2;
    let lf = ln_factorials(n);
    let ln_choose = |n: u64, k: u64| lf[n as usize] - lf[k as usize] - lf[(n - k) as usize];
    let denom = ln_choose(n, c1);
    let log_p = |k: u64| ln_choose(r1, k) + ln_choose(r2, c1 - k) - denom;

    let observed = log_p(t.a);
    let cutoff = observed + FISHER_REL_TOL.ln_1p();
    let lo = c1.saturating_sub(r2);
    let hi = r1.min(c1);
    let p: f64 = (lo..=hi)
        .map(log_p)
        .filter(|&lp| lp <= cutoff)
        .map(f64::exp)
        .sum();
    Ok(p.clamp(0.0, 1.0))
}

/// (a / (a + b)) / (c / (c + d)).
pub fn rate_ratio(t: &TwoByTwoTable) -> Result<f64, StatsError> {
    let (r1, r2) = (t.a + t.b, t.c + t.d);
    if r1 == 0 || r2 == 0 {
        return Err(StatsError::DegenerateMargins);
    }
    if t.c == 0 {
        return Err(StatsError::ZeroBaseline);
    }
    Ok((t.a as f64 / r1 as f64) / (t.c as f64 / r2 as f64))
}

/// Median; for even counts, the mean of the two middle values.
pub fn median(values: &[f64]) -> Result<f64, StatsError> {
    if values.is_empty() {
        return Err(StatsError::EmptySample);
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Ok(if v.len() % 2 == 1 {
        v[mid]
    } else {
        (v[mid - 1] + v[mid]) / 2.0
    })
}

pub fn mean(values: &[f64]) -> Result<f64, StatsError> {
    if values.is_empty() {
        return Err(StatsError::EmptySample);
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DidGroup {
    Treated,
    Control,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DidPeriod {
    Before,
    After,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DidSample {
    pub group: DidGroup,
    pub period: DidPeriod,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DidResult {
    pub mean_did: f64,
    pub median_did: f64,
}

/// (T after − T before) − (C after − C before), on means and on medians.
pub fn did_estimate(samples: &[DidSample]) -> Result<DidResult, StatsError> {
    let cell = |g: DidGroup, p: DidPeriod| -> Vec<f64> {
        samples
            .iter()
            .filter(|s| s.group == g && s.period == p)
            .map(|s| s.value)
            .collect()
    };
    let cells = [
        ("treated/before", cell(DidGroup::Treated, DidPeriod::Before)),
        ("treated/after", cell(DidGroup::Treated, DidPeriod::After)),
        ("control/before", cell(DidGroup::Control, DidPeriod::Before)),
        ("control/after", cell(DidGroup::Control, DidPeriod::After)),
    ];
    if let Some((name, _)) = cells.iter().find(|(_, v)| v.is_empty()) {
        return Err(StatsError::EmptyCell(name));
    }
    let did = |f: fn(&[f64]) -> Result<f64, StatsError>| -> Result<f64, StatsError> {
        let [tb, ta, cb, ca] = [&cells[0].1, &cells[1].1, &cells[2].1, &cells[3].1].map(|v| f(v));
        Ok((ta? - tb?) - (ca? - cb?))
    };
    Ok(DidResult {
        mean_did: did(mean)?,
        median_did: did(median)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn choose(n: u64, k: u64) -> u128 {
        let k = k.min(n - k);
        (0..k).fold(1u128, |acc, i| acc * u128::from(n - i) / u128::from(i + 1))
    }

    /// Exact enumeration with integer probabilities (shared denominator).
    fn fisher_oracle(t: &TwoByTwoTable) -> f64 {
        let (r1, r2, c1) = (t.a + t.b, t.c + t.d, t.a + t.c);
        let w = |k: u64| choose(r1, k) * choose(r2, c1 - k);
        let obs = w(t.a);
        let lo = c1.saturating_sub(r2);
        let hi = r1.min(c1);
        let num: u128 = (lo..=hi)
            .map(w)
            .filter(|&x| x * 10_000_000 <= obs * 10_000_001)
            .sum();
        num as f64 / choose(r1 + r2, c1) as f64
    }

    #[test]
    fn fisher_examples() {
        let p = fisher_exact_two_sided(&TwoByTwoTable::new(1, 9, 11, 3)).unwrap();
        assert!((p - 0.002759).abs() < 5e-7, "{p}");
        assert!((p - fisher_oracle(&TwoByTwoTable::new(1, 9, 11, 3))).abs() < 1e-12);
        let p = fisher_exact_two_sided(&TwoByTwoTable::new(5, 5, 5, 5)).unwrap();
        assert!((p - 1.0).abs() < 1e-12);
        assert_eq!(
            fisher_exact_two_sided(&TwoByTwoTable::new(0, 7, 0, 4)),
            Err(StatsError::DegenerateMargins)
        );
    }

    #[test]
    fn fisher_large_table_is_significant() {
        // 0.2% vs 10% adverse at 5000 per arm.
        let p = fisher_exact_two_sided(&TwoByTwoTable::new(10, 4990, 500, 4500)).unwrap();
        assert!((0.0..1e-16).contains(&p));
    }

    #[test]
    fn rate_ratio_examples() {
        let r = rate_ratio(&TwoByTwoTable::new(1, 99, 3, 97)).unwrap();
        assert!((r - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(rate_ratio(&TwoByTwoTable::new(4, 6, 4, 6)).unwrap(), 1.0);
        assert_eq!(rate_ratio(&TwoByTwoTable::new(1, 9, 0, 10)), Err(StatsError::ZeroBaseline));
    }

    #[test]
    fn median_examples() {
        assert_eq!(median(&[10.0, 20.0, 30.0]).unwrap(), 20.0);
        assert_eq!(median(&[40.0, 10.0, 30.0, 20.0]).unwrap(), 25.0);
        assert_eq!(median(&[7.0]).unwrap(), 7.0);
        assert_eq!(median(&[]), Err(StatsError::EmptySample));
    }

    fn s(group: DidGroup, period: DidPeriod, value: f64) -> DidSample {
        DidSample { group, period, value }
    }

    #[test]
    fn did_examples() {
        use DidGroup::*;
        use DidPeriod::*;
        let samples = vec![
            s(Treated, Before, 8.0),
            s(Treated, Before, 12.0),
            s(Treated, After, 4.0),
            s(Control, Before, 10.0),
            s(Control, After, 9.0),
        ];
        let r = did_estimate(&samples).unwrap();
        assert_eq!(r.mean_did, -5.0);
        assert_eq!(r.median_did, -5.0);

        let same: Vec<_> = [Treated, Control]
            .into_iter()
            .flat_map(|g| [Before, After].into_iter().flat_map(move |p| [1.0, 2.0, 3.0].map(|v| s(g, p, v))))
            .collect();
        assert_eq!(did_estimate(&same).unwrap(), DidResult { mean_did: 0.0, median_did: 0.0 });

        assert_eq!(
            did_estimate(&samples[..4]),
            Err(StatsError::EmptyCell("control/after"))
        );
    }

    proptest! {
        #[test]
        fn fisher_matches_oracle(a in 0u64..16, b in 0u64..16, c in 0u64..16, d in 0u64..16) {
            let t = TwoByTwoTable::new(a, b, c, d);
            match fisher_exact_two_sided(&t) {
                Ok(p) => {
                    prop_assert!((0.0..=1.0).contains(&p));
                    prop_assert!((p - fisher_oracle(&t)).abs() < 1e-9);
                    let swapped = fisher_exact_two_sided(&TwoByTwoTable::new(d, c, b, a)).unwrap();
                    prop_assert!((p - swapped).abs() < 1e-12);
                }
                Err(e) => prop_assert_eq!(e, StatsError::DegenerateMargins),
            }
        }

        #[test]
        fn median_is_permutation_invariant(mut v in proptest::collection::vec(-1e6f64..1e6, 1..50), seed in any::<u64>()) {
            let m = median(&v).unwrap();
            let n = v.len();
            for i in 0..n {
                let j = (seed as usize).wrapping_add(i * 7919) % n;
                v.swap(i, j);
            }
            prop_assert_eq!(median(&v).unwrap(), m);
        }
    }
}
