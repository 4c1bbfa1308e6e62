//! Order statistics: age quintiles, price terciles, interpolated percentiles.

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuantileError {
    #[error("need at least {needed} values, got {got}")]
    InsufficientData { needed: usize, got: usize },
}

/// Quintile cut points over integer ages.
///
/// `boundaries[k]` is the smallest age above the bottom `20·(k+1)%` of the
/// sorted sample, so bins are the half-open intervals
/// `(-inf, b1)`, `[b1, b2)`, ..., `[b4, inf)`. When ties make cut points
/// coincide (or the first cut equals the minimum age) the bins collapse onto
/// the distinct effective cuts and [`QuintileBins::is_degenerate`] is set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct QuintileBins {
    boundaries: [u32; 4],
    cuts: Vec<u32>,
}

pub fn quintile_bins(ages: &[u32]) -> Result<QuintileBins, QuantileError> {
    if ages.len() < 5 {
        return Err(QuantileError::InsufficientData {
            needed: 5,
            got: ages.len(),
        });
    }
    let mut sorted = ages.to_vec();
    sorted.sort_unstable();
    let n = sorted.len();
    let boundaries = [1, 2, 3, 4].map(|k| sorted[k * n / 5]);
    let min = sorted[0];
    let mut cuts: Vec<u32> = boundaries.iter().copied().filter(|&b| b > min).collect();
    cuts.dedup();
    let bins = QuintileBins { boundaries, cuts };
    if bins.is_degenerate() {
        log::warn!("degenerate age quintiles {:?}", bins.boundaries);
    }
    Ok(bins)
}

impl QuintileBins {
    pub fn boundaries(&self) -> [u32; 4] {
        self.boundaries
    }

    pub fn is_degenerate(&self) -> bool {
        self.cuts.len() < 4
    }

    /// Number of non-empty-by-construction bins (5 unless degenerate).
    pub fn n_bins(&self) -> usize {
        self.cuts.len() + 1
    }

    /// Zero-based bin of `age`; 0 is Q1.
    pub fn bin_of(&self, age: u32) -> usize {
        self.cuts.iter().take_while(|&&c| c <= age).count()
    }

    /// Interval labels in the `< a`, `[a, b)`, `≥ b` style.
    pub fn interval_labels(&self) -> Vec<String> {
        let mut labels = Vec::with_capacity(self.n_bins());
        match self.cuts.first() {
            None => labels.push("all".to_string()),
            Some(first) => {
                labels.push(format!("< {first}"));
                for w in self.cuts.windows(2) {
                    labels.push(format!("[{}, {})", w[0], w[1]));
                }
                labels.push(format!("≥ {}", self.cuts[self.cuts.len() - 1]));
            }
        }
        labels
    }
}

/// Inclusive price band that drops `⌊n/3⌋` values from each end of the sorted sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MiddleThird {
    pub lower: f64,
    pub upper: f64,
}

impl MiddleThird {
    pub fn contains(&self, x: f64) -> bool {
        x >= self.lower && x <= self.upper
    }

    pub fn is_degenerate(&self) -> bool {
        self.lower == self.upper
    }
}

pub fn middle_third(values: &[f64]) -> Result<MiddleThird, QuantileError> {
    if values.len() < 3 {
        return Err(QuantileError::InsufficientData {
            needed: 3,
            got: values.len(),
        });
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let drop = n / 3;
    Ok(MiddleThird {
        lower: sorted[drop],
        upper: sorted[n - 1 - drop],
    })
}

/// Percentile of an ascending slice with linear interpolation between order
/// statistics at position `(n - 1)·q`.
pub fn linear_percentile(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    debug_assert!((0.0..=1.0).contains(&q));
    let pos = (sorted.len() - 1) as f64 * q;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (sorted[hi] - sorted[lo]) * frac
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn five_distinct_ages() {
        let bins = quintile_bins(&[1, 2, 3, 4, 5]).unwrap();
        assert_eq!(bins.boundaries(), [2, 3, 4, 5]);
        assert!(!bins.is_degenerate());
        let occupancy: Vec<usize> = (1..=5).map(|a| bins.bin_of(a)).collect();
        assert_eq!(occupancy, vec![0, 1, 2, 3, 4]);
        assert_eq!(bins.interval_labels()[1], "[2, 3)");
    }

    #[test]
    fn all_equal_ages_land_in_q1() {
        let bins = quintile_bins(&[30; 12]).unwrap();
        assert!(bins.is_degenerate());
        assert_eq!(bins.bin_of(30), 0);
        assert_eq!(bins.n_bins(), 1);
    }

    #[test]
    fn too_few_ages() {
        assert_eq!(
            quintile_bins(&[1, 2, 3, 4]),
            Err(QuantileError::InsufficientData { needed: 5, got: 4 })
        );
    }

    #[test]
    fn thousand_ages_sort_and_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let ages: Vec<u32> = (0..1000).map(|_| rng.gen_range(0..10_000_000)).collect();
        let bins = quintile_bins(&ages).unwrap();
        // oracle: bin k holds sorted ranks 200k..200k+199
        let mut sorted = ages.clone();
        sorted.sort_unstable();
        let mut counts = [0usize; 5];
        for a in &ages {
            counts[bins.bin_of(*a)] += 1;
        }
        for (k, c) in counts.iter().enumerate() {
            assert!((199..=201).contains(c), "bin {k} holds {c}");
            assert_eq!(bins.bin_of(sorted[200 * k]), k);
            assert_eq!(bins.bin_of(sorted[200 * k + 199]), k);
        }
    }

    #[test]
    fn terciles() {
        assert_eq!(
            middle_third(&[3.0, 1.0, 2.0]).unwrap(),
            MiddleThird { lower: 2.0, upper: 2.0 }
        );
        let band = middle_third(&(1..=99).map(f64::from).collect::<Vec<_>>()).unwrap();
        assert_eq!((band.lower, band.upper), (34.0, 66.0));
        assert!(middle_third(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn percentile_of_tenths() {
        // positions 0.225 and 8.775 over 0.1, 0.2, ..., 1.0
        let v: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
        assert!((linear_percentile(&v, 0.025) - 0.1225).abs() < 1e-12);
        assert!((linear_percentile(&v, 0.975) - 0.9775).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn bins_partition_every_age(ages in prop::collection::vec(0u32..120, 5..200)) {
            let bins = quintile_bins(&ages).unwrap();
            let b = bins.boundaries();
            prop_assert!(b.windows(2).all(|w| w[0] <= w[1]));
            for &a in &ages {
                prop_assert!(bins.bin_of(a) < bins.n_bins());
            }
            // no bin is empty
            let mut seen = vec![false; bins.n_bins()];
            for &a in &ages {
                seen[bins.bin_of(a)] = true;
            }
            prop_assert!(seen.iter().all(|s| *s));
        }

        #[test]
        fn middle_third_size(n in 3usize..400) {
            let values: Vec<f64> = (0..n).rev().map(|i| i as f64).collect();
            let band = middle_third(&values).unwrap();
            let kept = values.iter().filter(|v| band.contains(**v)).count();
            prop_assert!(kept + 1 >= n / 3 && kept <= n.div_ceil(3) + 1);
        }
    }
}
