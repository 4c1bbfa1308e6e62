//! Group-pairing frequencies, null intervals and over/under-expression labels.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{BipartiteNetwork, GraphError, SliceKey};
use crate::quantile::linear_percentile;
use crate::rewire::RewireState;
use crate::view::{attribute_view, Attribute, GroupedNetwork};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PairingError {
    #[error("{slice}: no edge has both endpoints with a known {attribute}")]
    EmptyView { slice: SliceKey, attribute: Attribute },
    #[error("need at least 2 null matrices, got {0}")]
    InsufficientEnsemble(usize),
    #[error("null matrices disagree in shape")]
    ShapeMismatch,
    #[error("interval level {0} outside (0, 1)")]
    InvalidLevel(f64),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountMode {
    /// Each unit of edge weight (one stay) counts once.
    #[default]
    StayWeighted,
    /// Each connected guest-host pair counts once.
    DistinctPairs,
}

impl FromStr for CountMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "stay_weighted" => Ok(CountMode::StayWeighted),
            "distinct_pairs" => Ok(CountMode::DistinctPairs),
            other => Err(format!("mode must be stay_weighted or distinct_pairs, got {other:?}")),
        }
    }
}

/// Counts of guest-group → host-group interactions, row-major by guest group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairingMatrix {
    pub attribute: Attribute,
    pub labels: Vec<String>,
    pub counts: Vec<u64>,
    pub total_weight_counted: u64,
}

impl PairingMatrix {
    pub fn n_groups(&self) -> usize {
        self.labels.len()
    }

    pub fn count(&self, guest_group: usize, host_group: usize) -> u64 {
        self.counts[guest_group * self.n_groups() + host_group]
    }

    pub fn freq(&self, guest_group: usize, host_group: usize) -> f64 {
        self.count(guest_group, host_group) as f64 / self.total_weight_counted as f64
    }

    pub fn frequencies(&self) -> Vec<f64> {
        let total = self.total_weight_counted as f64;
        self.counts.iter().map(|&c| c as f64 / total).collect()
    }

    /// `(guest label, host label)` for every cell in row-major order.
    pub fn cell_labels(&self) -> Vec<(String, String)> {
        let mut out = Vec::with_capacity(self.counts.len());
        for g in &self.labels {
            for h in &self.labels {
                out.push((g.clone(), h.clone()));
            }
        }
        out
    }
}

fn empty_matrix(grouped: &GroupedNetwork) -> PairingMatrix {
    let n = grouped.n_groups();
    PairingMatrix {
        attribute: grouped.attribute,
        labels: grouped.labels.clone(),
        counts: vec![0; n * n],
        total_weight_counted: 0,
    }
}

/// Tally of the grouped network's own edges.
pub fn tally_network(grouped: &GroupedNetwork, mode: CountMode) -> PairingMatrix {
    let n = grouped.n_groups();
    let mut m = empty_matrix(grouped);
    for e in grouped.network.edges() {
        let cell = grouped.guest_group[e.guest] as usize * n + grouped.host_group[e.host] as usize;
        let w = match mode {
            CountMode::StayWeighted => e.weight,
            CountMode::DistinctPairs => 1,
        };
        m.counts[cell] += w;
        m.total_weight_counted += w;
    }
    m
}

/// Tally of a rewired configuration of `grouped.network`.
pub fn tally_state(grouped: &GroupedNetwork, state: &RewireState, mode: CountMode) -> PairingMatrix {
    let n = grouped.n_groups();
    let mut m = empty_matrix(grouped);
    let cell = |g: usize, h: usize| grouped.guest_group[g] as usize * n + grouped.host_group[h] as usize;
    match mode {
        CountMode::StayWeighted => {
            for &(g, h) in state.units() {
                m.counts[cell(g as usize, h as usize)] += 1;
            }
        }
        CountMode::DistinctPairs => {
            for (g, h) in state.edge_keys() {
                m.counts[cell(g, h)] += 1;
            }
        }
    }
    m.total_weight_counted = m.counts.iter().sum();
    m
}

/// Observed pairing matrix over the nodes with a known `attribute` at `min_conf`.
pub fn pairing_frequencies(
    network: &BipartiteNetwork,
    attribute: Attribute,
    min_conf: f64,
    mode: CountMode,
) -> Result<PairingMatrix, PairingError> {
    let view = attribute_view(network, attribute, min_conf)?;
    if view.is_empty() {
        return Err(PairingError::EmptyView {
            slice: network.slice().clone(),
            attribute,
        });
    }
    Ok(tally_network(&view.grouped(), mode))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalEstimate {
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
}

/// Per-cell central percentile intervals of the null frequencies (row-major).
pub fn ensemble_intervals(matrices: &[PairingMatrix], level: f64) -> Result<Vec<IntervalEstimate>, PairingError> {
    if !(level > 0.0 && level < 1.0) {
        return Err(PairingError::InvalidLevel(level));
    }
    if matrices.len() < 2 {
        return Err(PairingError::InsufficientEnsemble(matrices.len()));
    }
    let cells = matrices[0].counts.len();
    if matrices.iter().any(|m| m.counts.len() != cells) {
        return Err(PairingError::ShapeMismatch);
    }
    let tail = (1.0 - level) / 2.0;
    let freqs: Vec<Vec<f64>> = matrices.iter().map(PairingMatrix::frequencies).collect();
    Ok((0..cells)
        .map(|c| {
            let mut column: Vec<f64> = freqs.iter().map(|f| f[c]).collect();
            column.sort_by(f64::total_cmp);
            IntervalEstimate {
                lower: linear_percentile(&column, tail),
                upper: linear_percentile(&column, 1.0 - tail),
                level,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpressionLabel {
    Over,
    Under,
    Compatible,
}

impl ExpressionLabel {
    pub fn marker(self) -> &'static str {
        match self {
            ExpressionLabel::Over => "↑",
            ExpressionLabel::Under => "↓",
            ExpressionLabel::Compatible => "—",
        }
    }
}

impl fmt::Display for ExpressionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExpressionLabel::Over => "over",
            ExpressionLabel::Under => "under",
            ExpressionLabel::Compatible => "compatible",
        })
    }
}

pub fn classify(observed: f64, interval: &IntervalEstimate) -> ExpressionLabel {
    if observed > interval.upper {
        ExpressionLabel::Over
    } else if observed < interval.lower {
        ExpressionLabel::Under
    } else {
        ExpressionLabel::Compatible
    }
}

/// Node counts per group on each side for one attribute.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupShares {
    pub attribute: Attribute,
    pub labels: Vec<String>,
    pub hosts: Vec<usize>,
    pub guests: Vec<usize>,
}

fn shares(counts: &[usize]) -> Vec<f64> {
    let total: usize = counts.iter().sum();
    counts
        .iter()
        .map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
        .collect()
}

impl GroupShares {
    pub fn host_shares(&self) -> Vec<f64> {
        shares(&self.hosts)
    }

    pub fn guest_shares(&self) -> Vec<f64> {
        shares(&self.guests)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Demography {
    pub slice: SliceKey,
    pub min_conf: f64,
    pub attributes: Vec<GroupShares>,
    /// Host-age quintile cut points, when at least five host ages are known.
    pub age_boundaries: Option<[u32; 4]>,
}

impl Demography {
    pub fn get(&self, attribute: Attribute) -> Option<&GroupShares> {
        self.attributes.iter().find(|s| s.attribute == attribute)
    }
}

/// Population shares among nodes with a known value at `min_conf`.
pub fn demography_summary(network: &BipartiteNetwork, min_conf: f64) -> Result<Demography, GraphError> {
    let mut attributes = Vec::new();
    let mut age_boundaries = None;
    for attribute in Attribute::ALL {
        let view = attribute_view(network, attribute, min_conf)?;
        let n = view.n_groups();
        let mut hosts = vec![0; n];
        let mut guests = vec![0; n];
        for h in view.included_hosts() {
            hosts[view.host_group(h).unwrap() as usize] += 1;
        }
        for g in view.included_guests() {
            guests[view.guest_group(g).unwrap() as usize] += 1;
        }
        if let Some(bins) = view.age_bins() {
            age_boundaries = Some(bins.boundaries());
        }
        attributes.push(GroupShares {
            attribute,
            labels: view.labels(),
            hosts,
            guests,
        });
    }
    Ok(Demography {
        slice: network.slice().clone(),
        min_conf,
        attributes,
        age_boundaries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_network, AttributeSet, EdgeSpec, Gender, NodeSpec, PropertyType, Race};
    use proptest::prelude::*;

    fn person(gender: Gender, race: Race) -> AttributeSet {
        AttributeSet {
            gender,
            gender_conf: 1.0,
            race,
            race_conf: 1.0,
            age_years: None,
            age_conf: 0.0,
        }
    }

    fn slice() -> SliceKey {
        SliceKey::new("T", PropertyType::Shared)
    }

    #[test]
    fn all_female() {
        let net = build_network(
            vec![
                NodeSpec::guest("g", person(Gender::Female, Race::White)),
                NodeSpec::host("h", person(Gender::Female, Race::White), None),
            ],
            vec![EdgeSpec::new("g", "h", 3)],
            slice(),
        )
        .unwrap();
        let m = pairing_frequencies(&net, Attribute::Gender, 0.0, CountMode::StayWeighted).unwrap();
        assert_eq!(m.frequencies(), vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn cross_gender_symmetry() {
        let net = build_network(
            vec![
                NodeSpec::guest("gF", person(Gender::Female, Race::White)),
                NodeSpec::guest("gM", person(Gender::Male, Race::White)),
                NodeSpec::host("hF", person(Gender::Female, Race::White), None),
                NodeSpec::host("hM", person(Gender::Male, Race::White), None),
            ],
            vec![EdgeSpec::new("gF", "hM", 2), EdgeSpec::new("gM", "hF", 2)],
            slice(),
        )
        .unwrap();
        let m = pairing_frequencies(&net, Attribute::Gender, 0.0, CountMode::StayWeighted).unwrap();
        assert_eq!(m.frequencies(), vec![0.0, 0.5, 0.5, 0.0]);
    }

    #[test]
    fn empty_view_is_an_error() {
        let net = build_network(
            vec![
                NodeSpec::guest("g", AttributeSet::default()),
                NodeSpec::host("h", person(Gender::Male, Race::Asian), None),
            ],
            vec![EdgeSpec::new("g", "h", 1)],
            slice(),
        )
        .unwrap();
        assert!(matches!(
            pairing_frequencies(&net, Attribute::Race, 0.0, CountMode::StayWeighted),
            Err(PairingError::EmptyView { .. })
        ));
    }

    fn matrix(freq_tenths: u64) -> PairingMatrix {
        PairingMatrix {
            attribute: Attribute::Gender,
            labels: vec!["F".into(), "M".into()],
            counts: vec![freq_tenths, 10 - freq_tenths, 0, 0],
            total_weight_counted: 10,
        }
    }

    #[test]
    fn intervals_over_tenths() {
        let ms: Vec<PairingMatrix> = (1..=10).map(matrix).collect();
        let iv = ensemble_intervals(&ms, 0.95).unwrap();
        assert!((iv[0].lower - 0.1225).abs() < 1e-12);
        assert!((iv[0].upper - 0.9775).abs() < 1e-12);
        // a cell that is always zero
        assert_eq!((iv[2].lower, iv[2].upper), (0.0, 0.0));
    }

    #[test]
    fn identical_null_matrices() {
        let iv = ensemble_intervals(&[matrix(3), matrix(3), matrix(3)], 0.95).unwrap();
        assert_eq!((iv[0].lower, iv[0].upper), (0.3, 0.3));
        assert!(matches!(
            ensemble_intervals(&[matrix(3)], 0.95),
            Err(PairingError::InsufficientEnsemble(1))
        ));
    }

    #[test]
    fn classification_examples() {
        let iv = |l: f64, u: f64| IntervalEstimate {
            lower: l / 100.0,
            upper: u / 100.0,
            level: 0.95,
        };
        assert_eq!(classify(0.3023, &iv(29.39, 29.44)), ExpressionLabel::Over);
        assert_eq!(classify(0.2319, &iv(23.98, 24.03)), ExpressionLabel::Under);
        assert_eq!(classify(0.4255, &iv(42.33, 42.60)), ExpressionLabel::Compatible);
    }

    #[test]
    fn demography_shares() {
        let nodes = ["W", "W", "W", "A", "B"]
            .iter()
            .enumerate()
            .map(|(i, r)| NodeSpec::host(format!("h{i}"), person(Gender::Female, r.parse().unwrap()), None))
            .chain(std::iter::once(NodeSpec::guest("g", person(Gender::Male, Race::Unknown))));
        let net = build_network(nodes, vec![], slice()).unwrap();
        let d = demography_summary(&net, 0.0).unwrap();
        assert_eq!(d.get(Attribute::Race).unwrap().host_shares(), vec![0.6, 0.2, 0.2]);
        assert_eq!(d.get(Attribute::Gender).unwrap().host_shares(), vec![1.0, 0.0]);
        assert_eq!(d.get(Attribute::Race).unwrap().guests, vec![0, 0, 0]);
    }

    proptest! {
        #[test]
        fn classify_is_monotone(lo in 0.0f64..1.0, width in 0.0f64..0.5, x in 0.0f64..1.0, dx in 0.0f64..0.5) {
            let iv = IntervalEstimate { lower: lo, upper: (lo + width).min(1.0), level: 0.95 };
            let rank = |l: ExpressionLabel| match l {
                ExpressionLabel::Under => 0,
                ExpressionLabel::Compatible => 1,
                ExpressionLabel::Over => 2,
            };
            prop_assert!(rank(classify(x, &iv)) <= rank(classify((x + dx).min(1.0), &iv)));
        }

        #[test]
        fn intervals_ignore_stream_order(mut counts in prop::collection::vec(0u64..=10, 2..40), seed in any::<u64>()) {
            let ms: Vec<PairingMatrix> = counts.iter().map(|&c| matrix(c)).collect();
            let a = ensemble_intervals(&ms, 0.95).unwrap();
            let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
            rand::seq::SliceRandom::shuffle(counts.as_mut_slice(), &mut rng);
            let ms: Vec<PairingMatrix> = counts.iter().map(|&c| matrix(c)).collect();
            prop_assert_eq!(a, ensemble_intervals(&ms, 0.95).unwrap());
        }
    }
}
