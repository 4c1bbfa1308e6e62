//! Robustness checks: confidence re-runs, race-label perturbation, price
//! terciles, and matched White/non-White host pairs with a paired t-test.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::analysis::{analyze_network, AnalysisConfig, AnalysisError};
use crate::graph::{BipartiteNetwork, NodeId, Race, Side, SliceKey};
use crate::ingest::SliceCounts;
use crate::quantile::{middle_third, MiddleThird};
use crate::report::{compare_reports, DeltaRow, ExpressionReport};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RobustnessError {
    #[error("no node carries the {0:?} race label")]
    EmptySourceGroup(Race),
    #[error("invalid perturbation: {0}")]
    InvalidPerturbation(String),
    #[error("need at least 3 hosts with a weekly price, got {0}")]
    InsufficientPriceData(usize),
    #[error("no White/non-White host pair within the caliper")]
    NoMatchablePairs,
    #[error("host {0} has no stay from a guest of known race")]
    NoKnownRaceStays(String),
    #[error("need at least 2 matched pairs, got {0}")]
    InsufficientPairs(usize),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub fraction: f64,
    pub source: Race,
    /// Each relabeled node gets one of these, uniformly.
    pub targets: Vec<Race>,
    pub seed: u64,
}

impl Default for PerturbationSpec {
    fn default() -> Self {
        PerturbationSpec {
            fraction: 0.05,
            source: Race::White,
            targets: vec![Race::Black, Race::Asian],
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Relabel {
    pub side: Side,
    pub id: NodeId,
    pub to: Race,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerturbationLog {
    pub source_count: usize,
    pub relabeled: Vec<Relabel>,
}

/// `round(fraction · n)` with halves rounded up.
pub fn perturbation_count(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64 + 0.5).floor() as usize).min(n)
}

/// Relabels a random subset of the source-race nodes (guests and hosts pooled).
///
/// Candidates are ordered guests first, then hosts, each by id. A partial
/// Fisher-Yates shuffle picks `perturbation_count` of them; each pick then
/// draws its new label. Only the `race` field changes.
pub fn perturb_labels(
    network: &BipartiteNetwork,
    spec: &PerturbationSpec,
) -> Result<(BipartiteNetwork, PerturbationLog), RobustnessError> {
    if !(spec.fraction > 0.0 && spec.fraction <= 1.0) {
        return Err(RobustnessError::InvalidPerturbation(format!(
            "fraction {} outside (0, 1]",
            spec.fraction
        )));
    }
    if spec.targets.is_empty() {
        return Err(RobustnessError::InvalidPerturbation("no target groups".into()));
    }
    let mut candidates: Vec<(Side, usize)> = network
        .guests()
        .iter()
        .enumerate()
        .filter(|(_, g)| g.attributes.race == spec.source)
        .map(|(i, _)| (Side::Guest, i))
        .collect();
    candidates.extend(
        network
            .hosts()
            .iter()
            .enumerate()
            .filter(|(_, h)| h.attributes.race == spec.source)
            .map(|(i, _)| (Side::Host, i)),
    );
    if candidates.is_empty() {
        return Err(RobustnessError::EmptySourceGroup(spec.source));
    }
    let n = candidates.len();
    let k = perturbation_count(spec.fraction, n);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    for i in 0..k {
        let j = rng.gen_range(i..n);
        candidates.swap(i, j);
    }
    let mut out = network.clone();
    let mut relabeled = Vec::with_capacity(k);
    for &(side, i) in &candidates[..k] {
        let to = spec.targets[rng.gen_range(0..spec.targets.len())];
        let id = match side {
            Side::Guest => {
                out.guests[i].attributes.race = to;
                out.guests[i].id.clone()
            }
            Side::Host => {
                out.hosts[i].attributes.race = to;
                out.hosts[i].id.clone()
            }
        };
        relabeled.push(Relabel { side, id, to });
    }
    Ok((
        out,
        PerturbationLog {
            source_count: n,
            relabeled,
        },
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TercileFilter {
    pub network: BipartiteNetwork,
    pub band: MiddleThird,
    /// All prices inside the band are equal.
    pub degenerate: bool,
}

/// Keeps hosts whose weekly price lies in the middle third, their edges, and
/// the guests that still have an edge.
pub fn tercile_filter(network: &BipartiteNetwork) -> Result<TercileFilter, RobustnessError> {
    let prices: Vec<f64> = network
        .hosts()
        .iter()
        .filter_map(|h| h.profile.map(|p| p.weekly_price))
        .collect();
    let band = middle_third(&prices).map_err(|_| RobustnessError::InsufficientPriceData(prices.len()))?;
    let degenerate = band.is_degenerate();
    if degenerate {
        log::warn!("{}: degenerate price terciles at {}", network.slice(), band.lower);
    }
    let keep_host: Vec<bool> = network
        .hosts()
        .iter()
        .map(|h| h.profile.is_some_and(|p| band.contains(p.weekly_price)))
        .collect();
    let mut keep_guest = vec![false; network.guests().len()];
    for e in network.edges() {
        if keep_host[e.host] {
            keep_guest[e.guest] = true;
        }
    }
    Ok(TercileFilter {
        network: network.restrict(&keep_guest, &keep_host, false),
        band,
        degenerate,
    })
}

/// A host eligible for matching: `covariates` are (number of properties, weekly price).
#[derive(Debug, Clone, PartialEq)]
pub struct HostCovariates {
    pub id: NodeId,
    pub white: bool,
    pub covariates: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchedPair {
    pub white_host: NodeId,
    pub nonwhite_host: NodeId,
    pub distance: f64,
}

/// Greedy nearest-neighbour matching without replacement.
///
/// Covariates are z-scored over all hosts (a constant column contributes
/// nothing). Candidate pairs within `caliper` are taken in order of
/// increasing distance, ties broken by White id then non-White id.
pub fn matched_pairs(hosts: &[HostCovariates], caliper: f64) -> Result<Vec<MatchedPair>, RobustnessError> {
    let z = standardize(hosts);
    let white: Vec<usize> = (0..hosts.len()).filter(|&i| hosts[i].white).collect();
    let other: Vec<usize> = (0..hosts.len()).filter(|&i| !hosts[i].white).collect();
    let mut candidates = Vec::new();
    for &w in &white {
        for &o in &other {
            let d = ((z[w][0] - z[o][0]).powi(2) + (z[w][1] - z[o][1]).powi(2)).sqrt();
            if d <= caliper {
                candidates.push((d, w, o));
            }
        }
    }
    candidates.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then_with(|| hosts[a.1].id.cmp(&hosts[b.1].id))
            .then_with(|| hosts[a.2].id.cmp(&hosts[b.2].id))
    });
    let mut used = vec![false; hosts.len()];
    let mut pairs = Vec::new();
    for (d, w, o) in candidates {
        if used[w] || used[o] {
            continue;
        }
        used[w] = true;
        used[o] = true;
        pairs.push(MatchedPair {
            white_host: hosts[w].id.clone(),
            nonwhite_host: hosts[o].id.clone(),
            distance: d,
        });
    }
    if pairs.is_empty() {
        return Err(RobustnessError::NoMatchablePairs);
    }
    Ok(pairs)
}

fn standardize(hosts: &[HostCovariates]) -> Vec<[f64; 2]> {
    let n = hosts.len().max(1) as f64;
    let mut out = vec![[0.0; 2]; hosts.len()];
    for c in 0..2 {
        let mean = hosts.iter().map(|h| h.covariates[c]).sum::<f64>() / n;
        let var = hosts.iter().map(|h| (h.covariates[c] - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        if sd > 0.0 {
            for (z, h) in out.iter_mut().zip(hosts) {
                z[c] = (h.covariates[c] - mean) / sd;
            }
        }
    }
    out
}

/// Stays a host received from White guests and from guests of any known race.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct RateTally {
    pub white: u64,
    pub known: u64,
}

impl RateTally {
    pub fn rate(&self) -> f64 {
        self.white as f64 / self.known as f64
    }
}

pub fn white_guest_tally(network: &BipartiteNetwork, host: usize, min_conf: f64) -> Result<RateTally, RobustnessError> {
    let mut t = RateTally::default();
    for e in network.edges().iter().filter(|e| e.host == host) {
        let a = &network.guests()[e.guest].attributes;
        if a.race == Race::Unknown || a.race_conf < min_conf {
            continue;
        }
        t.known += e.weight;
        if a.race == Race::White {
            t.white += e.weight;
        }
    }
    if t.known == 0 {
        return Err(RobustnessError::NoKnownRaceStays(network.hosts()[host].id.to_string()));
    }
    Ok(t)
}

/// Share of a host's known-race stays that came from White guests.
pub fn white_guest_rate(network: &BipartiteNetwork, host: usize, min_conf: f64) -> Result<f64, RobustnessError> {
    white_guest_tally(network, host, min_conf).map(|t| t.rate())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateWeighting {
    /// Group rate = pooled White stays / pooled known-race stays.
    #[default]
    StayWeighted,
    /// Group rate = mean of per-host rates.
    PerHost,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TestDegeneracy {
    /// Every paired difference is zero; p is reported as 1.
    DegenerateDifferences,
    /// Differences are constant and non-zero; p is reported as 0.
    DegenerateVariance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairedTTest {
    pub n: usize,
    pub mean_difference: f64,
    pub t_stat: f64,
    pub p_value: f64,
    pub degeneracy: Option<TestDegeneracy>,
}

/// Two-sided paired t-test of `a[i] - b[i]` against zero mean.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<PairedTTest, RobustnessError> {
    assert_eq!(a.len(), b.len());
    let n = a.len();
    if n < 2 {
        return Err(RobustnessError::InsufficientPairs(n));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let all_equal = d.iter().all(|x| *x == d[0]);
    if all_equal && d[0] == 0.0 {
        return Ok(PairedTTest {
            n,
            mean_difference: 0.0,
            t_stat: 0.0,
            p_value: 1.0,
            degeneracy: Some(TestDegeneracy::DegenerateDifferences),
        });
    }
    if all_equal || var == 0.0 {
        return Ok(PairedTTest {
            n,
            mean_difference: mean,
            t_stat: if mean > 0.0 { f64::INFINITY } else { f64::NEG_INFINITY },
            p_value: 0.0,
            degeneracy: Some(TestDegeneracy::DegenerateVariance),
        });
    }
    let t = mean / (var / n as f64).sqrt();
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("df ≥ 1");
    let p = (2.0 * dist.cdf(-t.abs())).min(1.0);
    Ok(PairedTTest {
        n,
        mean_difference: mean,
        t_stat: t,
        p_value: p,
        degeneracy: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchedPairResult {
    pub slice: SliceKey,
    pub pairs: Vec<MatchedPair>,
    pub rate_white_hosts: f64,
    pub rate_nonwhite_hosts: f64,
    pub n_pairs: usize,
    /// Known-race stays received by the matched hosts.
    pub n_stays: u64,
    pub t_stat: f64,
    pub p_value: f64,
    pub degeneracy: Option<TestDegeneracy>,
    pub weighting: RateWeighting,
}

/// Paired t-test on per-host White-guest rates of matched hosts.
pub fn rate_t_test(
    slice: SliceKey,
    pairs: Vec<MatchedPair>,
    tallies: &[(RateTally, RateTally)],
    weighting: RateWeighting,
) -> Result<MatchedPairResult, RobustnessError> {
    assert_eq!(pairs.len(), tallies.len());
    let white: Vec<f64> = tallies.iter().map(|t| t.0.rate()).collect();
    let other: Vec<f64> = tallies.iter().map(|t| t.1.rate()).collect();
    let test = paired_t_test(&white, &other)?;
    let group_rate = |side: &dyn Fn(&(RateTally, RateTally)) -> RateTally, per_host: &[f64]| match weighting {
        RateWeighting::StayWeighted => {
            let w: u64 = tallies.iter().map(|t| side(t).white).sum();
            let k: u64 = tallies.iter().map(|t| side(t).known).sum();
            w as f64 / k as f64
        }
        RateWeighting::PerHost => per_host.iter().sum::<f64>() / per_host.len() as f64,
    };
    Ok(MatchedPairResult {
        slice,
        n_pairs: pairs.len(),
        pairs,
        rate_white_hosts: group_rate(&|t| t.0, &white),
        rate_nonwhite_hosts: group_rate(&|t| t.1, &other),
        n_stays: tallies.iter().map(|t| t.0.known + t.1.known).sum(),
        t_stat: test.t_stat,
        p_value: test.p_value,
        degeneracy: test.degeneracy,
        weighting,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchConfig {
    pub min_conf: f64,
    pub caliper: f64,
    pub weighting: RateWeighting,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            min_conf: 0.3,
            caliper: 0.2,
            weighting: RateWeighting::StayWeighted,
        }
    }
}

/// Hosts that can be matched, with their White-guest tallies.
///
/// Eligible hosts have a known race, a profile, and at least one stay from a
/// guest of known race.
pub fn eligible_hosts(network: &BipartiteNetwork, min_conf: f64) -> (Vec<HostCovariates>, BTreeMap<NodeId, RateTally>) {
    let mut eligible = Vec::new();
    let mut tallies = BTreeMap::new();
    for (i, h) in network.hosts().iter().enumerate() {
        let a = &h.attributes;
        let Some(profile) = h.profile else { continue };
        if a.race == Race::Unknown || a.race_conf < min_conf {
            continue;
        }
        let Ok(t) = white_guest_tally(network, i, min_conf) else {
            continue;
        };
        tallies.insert(h.id.clone(), t);
        eligible.push(HostCovariates {
            id: h.id.clone(),
            white: a.race == Race::White,
            covariates: [profile.num_properties as f64, profile.weekly_price],
        });
    }
    (eligible, tallies)
}

/// Matches White and non-White hosts on wealth proxies and tests whether
/// their White-guest rates differ.
pub fn matched_pair_analysis(
    network: &BipartiteNetwork,
    config: &MatchConfig,
) -> Result<MatchedPairResult, RobustnessError> {
    let (eligible, tallies) = eligible_hosts(network, config.min_conf);
    let pairs = matched_pairs(&eligible, config.caliper)?;
    let pair_tallies: Vec<(RateTally, RateTally)> = pairs
        .iter()
        .map(|p| (tallies[&p.white_host], tallies[&p.nonwhite_host]))
        .collect();
    rate_t_test(network.slice().clone(), pairs, &pair_tallies, config.weighting)
}

/// Matched-pair summary table with one row per slice.
pub fn matched_pair_markdown(results: &[MatchedPairResult]) -> String {
    let mut out = String::from(
        "| City | Property | White/White | non-White/White | Pairs | Stays | p-value |\n|---|---|---:|---:|---:|---:|---:|\n",
    );
    for r in results {
        out.push_str(&format!(
            "| {} | {} | {:.2}% | {:.2}% | {} | {} | {:.3} |\n",
            r.slice.city,
            r.slice.property_type,
            r.rate_white_hosts * 100.0,
            r.rate_nonwhite_hosts * 100.0,
            r.n_pairs,
            r.n_stays,
            r.p_value
        ));
    }
    out
}

/// Hosts, guests and pairs whose gender and race both pass `threshold`.
pub fn annotated_counts(network: &BipartiteNetwork, threshold: f64) -> SliceCounts {
    let g_ok: Vec<bool> = network.guests().iter().map(|g| g.attributes.annotated_at(threshold)).collect();
    let h_ok: Vec<bool> = network.hosts().iter().map(|h| h.attributes.annotated_at(threshold)).collect();
    let edges: Vec<_> = network.edges().iter().filter(|e| g_ok[e.guest] && h_ok[e.host]).collect();
    SliceCounts {
        slice: network.slice().clone(),
        hosts: h_ok.iter().filter(|x| **x).count(),
        guests: g_ok.iter().filter(|x| **x).count(),
        pairs: edges.len(),
        stays: edges.iter().map(|e| e.weight).sum(),
    }
}

pub const BASELINE_MIN_CONF: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfidenceRerun {
    pub baseline_min_conf: f64,
    pub threshold: f64,
    pub baseline_counts: Vec<SliceCounts>,
    pub variant_counts: Vec<SliceCounts>,
    pub baseline: Vec<ExpressionReport>,
    pub variant: Vec<ExpressionReport>,
    pub deltas: Vec<DeltaRow>,
}

/// Re-runs the analysis at `threshold` and at the 0.3 baseline, for every
/// network and every attribute in `attributes`.
pub fn rerun_with_confidence(
    networks: &[&BipartiteNetwork],
    attributes: &[crate::view::Attribute],
    base: &AnalysisConfig,
    threshold: f64,
) -> Result<ConfidenceRerun, RobustnessError> {
    let run = |min_conf: f64| -> Result<Vec<ExpressionReport>, RobustnessError> {
        let mut out = Vec::new();
        for net in networks {
            for &attribute in attributes {
                let cfg = AnalysisConfig {
                    attribute,
                    min_conf,
                    ..base.clone()
                };
                out.push(analyze_network(net, &cfg)?);
            }
        }
        Ok(out)
    };
    let baseline = run(BASELINE_MIN_CONF)?;
    let variant = run(threshold)?;
    Ok(ConfidenceRerun {
        baseline_min_conf: BASELINE_MIN_CONF,
        threshold,
        baseline_counts: networks.iter().map(|n| annotated_counts(n, BASELINE_MIN_CONF)).collect(),
        variant_counts: networks.iter().map(|n| annotated_counts(n, threshold)).collect(),
        deltas: compare_reports(&baseline, &variant),
        baseline,
        variant,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_network, AttributeSet, EdgeSpec, HostProfile, NodeSpec, PropertyType};
    use proptest::prelude::*;
    use rand::Rng;

    fn slice() -> SliceKey {
        SliceKey::new("T", PropertyType::Full)
    }

    fn raced(race: Race) -> AttributeSet {
        AttributeSet {
            race,
            race_conf: 0.9,
            ..AttributeSet::default()
        }
    }

    fn priced(price: f64) -> Option<HostProfile> {
        Some(HostProfile {
            num_properties: 1,
            weekly_price: price,
        })
    }

    /// `n_white` White guests, each staying once with its own host.
    fn white_network(n_white: usize) -> BipartiteNetwork {
        let mut nodes = Vec::new();
        let mut edges = Vec::new();
        for i in 0..n_white {
            nodes.push(NodeSpec::guest(format!("g{i:03}"), raced(Race::White)));
            nodes.push(NodeSpec::host(format!("h{i:03}"), raced(Race::Asian), None));
            edges.push(EdgeSpec::new(format!("g{i:03}"), format!("h{i:03}"), 1));
        }
        build_network(nodes, edges, slice()).unwrap()
    }

    #[test]
    fn perturb_all_to_single_target() {
        let net = white_network(10);
        let spec = PerturbationSpec {
            fraction: 1.0,
            targets: vec![Race::Black],
            ..PerturbationSpec::default()
        };
        let (out, log) = perturb_labels(&net, &spec).unwrap();
        assert_eq!(log.relabeled.len(), 10);
        assert!(out.guests().iter().all(|g| g.attributes.race == Race::Black));
    }

    #[test]
    fn perturb_five_percent_of_hundred() {
        let (out, log) = perturb_labels(&white_network(100), &PerturbationSpec::default()).unwrap();
        assert_eq!(log.relabeled.len(), 5);
        assert!(log.relabeled.iter().all(|r| matches!(r.to, Race::Black | Race::Asian)));
        let whites = out.guests().iter().filter(|g| g.attributes.race == Race::White).count();
        assert_eq!(whites, 95);
    }

    #[test]
    fn perturb_matches_reference_sampler() {
        let net = white_network(40);
        let spec = PerturbationSpec {
            fraction: 0.25,
            seed: 17,
            ..PerturbationSpec::default()
        };
        let (_, log) = perturb_labels(&net, &spec).unwrap();
        // reference: same seed, same candidate order, a plain Fisher-Yates prefix
        let mut ids: Vec<String> = (0..40).map(|i| format!("g{i:03}")).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for i in 0..10 {
            let j = i + rng.gen_range(0..40 - i);
            ids.swap(i, j);
        }
        let mut expected: Vec<String> = ids[..10].to_vec();
        let mut got: Vec<String> = log.relabeled.iter().map(|r| r.id.to_string()).collect();
        expected.sort();
        got.sort();
        assert_eq!(got, expected);
    }

    #[test]
    fn perturb_rejects_empty_source() {
        let net = white_network(3);
        let spec = PerturbationSpec {
            source: Race::Black,
            ..PerturbationSpec::default()
        };
        assert_eq!(
            perturb_labels(&net, &spec).unwrap_err(),
            RobustnessError::EmptySourceGroup(Race::Black)
        );
    }

    fn priced_network(prices: &[f64]) -> BipartiteNetwork {
        let mut nodes = Vec::new();
        let mut edges = Vec::new();
        for (i, p) in prices.iter().enumerate() {
            nodes.push(NodeSpec::guest(format!("g{i:03}"), AttributeSet::default()));
            nodes.push(NodeSpec::host(format!("h{i:03}"), AttributeSet::default(), priced(*p)));
            edges.push(EdgeSpec::new(format!("g{i:03}"), format!("h{i:03}"), 1));
        }
        build_network(nodes, edges, slice()).unwrap()
    }

    #[test]
    fn tercile_of_three() {
        let f = tercile_filter(&priced_network(&[1.0, 2.0, 3.0])).unwrap();
        assert_eq!(f.network.hosts().len(), 1);
        assert_eq!(f.network.hosts()[0].profile.unwrap().weekly_price, 2.0);
        assert_eq!(f.network.guests().len(), 1);
    }

    #[test]
    fn tercile_all_equal() {
        let f = tercile_filter(&priced_network(&[5.0; 6])).unwrap();
        assert!(f.degenerate);
        assert_eq!(f.network.hosts().len(), 6);
    }

    #[test]
    fn tercile_of_99_matches_sort_oracle() {
        let prices: Vec<f64> = (0..99).map(|i| ((i * 37) % 99) as f64 * 1.5 + 10.0).collect();
        let f = tercile_filter(&priced_network(&prices)).unwrap();
        let mut sorted = prices.clone();
        sorted.sort_by(f64::total_cmp);
        let mut expected: Vec<f64> = sorted[33..66].to_vec();
        let mut kept: Vec<f64> = f.network.hosts().iter().map(|h| h.profile.unwrap().weekly_price).collect();
        expected.sort_by(f64::total_cmp);
        kept.sort_by(f64::total_cmp);
        assert_eq!(kept, expected);
    }

    #[test]
    fn tercile_needs_three_prices() {
        assert_eq!(
            tercile_filter(&priced_network(&[1.0, 2.0])).unwrap_err(),
            RobustnessError::InsufficientPriceData(2)
        );
    }

    fn host(id: &str, white: bool, x: f64, y: f64) -> HostCovariates {
        HostCovariates {
            id: NodeId::new(id).unwrap(),
            white,
            covariates: [x, y],
        }
    }

    #[test]
    fn identical_hosts_match_at_zero() {
        let pairs = matched_pairs(&[host("a", true, 2.0, 300.0), host("b", false, 2.0, 300.0)], 0.2).unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].distance, 0.0);
    }

    #[test]
    fn caliper_excludes_outlier() {
        // 10 White hosts around 0 and one far non-White host
        let mut hosts: Vec<HostCovariates> = (0..10)
            .map(|i| host(&format!("w{i}"), true, (i % 2) as f64, (i % 3) as f64))
            .collect();
        hosts.push(host("n", false, 40.0, 40.0));
        assert_eq!(matched_pairs(&hosts, 1.0).unwrap_err(), RobustnessError::NoMatchablePairs);
    }

    /// Brute force: repeatedly take the closest remaining pair.
    fn greedy_oracle(hosts: &[HostCovariates], caliper: f64) -> Vec<(String, String)> {
        let n = hosts.len() as f64;
        let mut z = vec![[0.0; 2]; hosts.len()];
        for c in 0..2 {
            let m: f64 = hosts.iter().map(|h| h.covariates[c]).sum::<f64>() / n;
            let s = (hosts.iter().map(|h| (h.covariates[c] - m).powi(2)).sum::<f64>() / n).sqrt();
            for i in 0..hosts.len() {
                z[i][c] = if s > 0.0 { (hosts[i].covariates[c] - m) / s } else { 0.0 };
            }
        }
        let mut used = vec![false; hosts.len()];
        let mut out = Vec::new();
        loop {
            let mut best: Option<(f64, usize, usize)> = None;
            for w in 0..hosts.len() {
                for o in 0..hosts.len() {
                    if !hosts[w].white || hosts[o].white || used[w] || used[o] {
                        continue;
                    }
                    let d = ((z[w][0] - z[o][0]).powi(2) + (z[w][1] - z[o][1]).powi(2)).sqrt();
                    if d <= caliper && best.is_none_or(|b| d < b.0) {
                        best = Some((d, w, o));
                    }
                }
            }
            let Some((_, w, o)) = best else { break };
            used[w] = true;
            used[o] = true;
            out.push((hosts[w].id.to_string(), hosts[o].id.to_string()));
        }
        out.sort();
        out
    }

    #[test]
    fn twelve_hosts_match_greedy_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let hosts: Vec<HostCovariates> = (0..12)
            .map(|i| {
                host(
                    &format!("h{i:02}"),
                    i % 2 == 0,
                    rng.gen_range(1..5) as f64,
                    rng.gen_range(200.0..2000.0),
                )
            })
            .collect();
        let mut got: Vec<(String, String)> = matched_pairs(&hosts, 1.0)
            .unwrap()
            .iter()
            .map(|p| (p.white_host.to_string(), p.nonwhite_host.to_string()))
            .collect();
        got.sort();
        assert_eq!(got, greedy_oracle(&hosts, 1.0));
    }

    fn stays_network() -> BipartiteNetwork {
        let guests = [
            ("w1", Race::White),
            ("w2", Race::White),
            ("a1", Race::Asian),
            ("b1", Race::Black),
            ("u1", Race::Unknown),
        ];
        let mut nodes: Vec<NodeSpec> = guests.iter().map(|(id, r)| NodeSpec::guest(*id, raced(*r))).collect();
        nodes.push(NodeSpec::host("h1", raced(Race::White), priced(100.0)));
        nodes.push(NodeSpec::host("h2", raced(Race::Black), priced(100.0)));
        // 9 stays at h1: w1×3, w2×1, a1×2, b1×1, u1×2 (unknown, ignored)
        let edges = vec![
            EdgeSpec::new("w1", "h1", 3),
            EdgeSpec::new("w2", "h1", 1),
            EdgeSpec::new("a1", "h1", 2),
            EdgeSpec::new("b1", "h1", 1),
            EdgeSpec::new("u1", "h1", 2),
            EdgeSpec::new("w1", "h2", 2),
            EdgeSpec::new("a1", "h2", 2),
        ];
        build_network(nodes, edges, slice()).unwrap()
    }

    #[test]
    fn white_guest_rates() {
        let net = stays_network();
        // manual tally: 4 White of 7 known-race stays
        assert_eq!(white_guest_rate(&net, 0, 0.3).unwrap(), 4.0 / 7.0);
        assert_eq!(white_guest_rate(&net, 1, 0.3).unwrap(), 0.5);
        assert!(matches!(
            white_guest_rate(&net, 0, 0.95),
            Err(RobustnessError::NoKnownRaceStays(_))
        ));
    }

    #[test]
    fn two_host_matchpair() {
        let net = stays_network();
        let pairs = matched_pairs(
            &[host("h1", true, 1.0, 100.0), host("h2", false, 1.0, 100.0)],
            0.2,
        )
        .unwrap();
        assert_eq!(pairs.len(), 1);
        // a single pair cannot be tested
        assert_eq!(
            matched_pair_analysis(&net, &MatchConfig::default()).unwrap_err(),
            RobustnessError::InsufficientPairs(1)
        );
    }

    #[test]
    fn t_test_degenerate_cases() {
        let same = paired_t_test(&[0.3, 0.5, 0.7], &[0.3, 0.5, 0.7]).unwrap();
        assert_eq!(same.p_value, 1.0);
        assert_eq!(same.degeneracy, Some(TestDegeneracy::DegenerateDifferences));
        let shift = paired_t_test(&[0.6, 0.6, 0.6, 0.6], &[0.5, 0.5, 0.5, 0.5]).unwrap();
        assert_eq!(shift.p_value, 0.0);
        assert_eq!(shift.degeneracy, Some(TestDegeneracy::DegenerateVariance));
    }

    /// Student-t tail through the regularized incomplete beta function,
    /// evaluated with the Lentz continued fraction.
    fn t_two_sided_oracle(t: f64, df: f64) -> f64 {
        let x = df / (df + t * t);
        incomplete_beta(df / 2.0, 0.5, x)
    }

    fn ln_gamma(x: f64) -> f64 {
        // Lanczos, g = 7
        const C: [f64; 9] = [
            0.999_999_999_999_809_9,
            676.520_368_121_885_1,
            -1_259.139_216_722_402_8,
            771.323_428_777_653_1,
            -176.615_029_162_140_6,
            12.507_343_278_686_905,
            -0.138_571_095_265_720_12,
            9.984_369_578_019_572e-6,
            1.505_632_735_149_311_6e-7,
        ];
        let x = x - 1.0;
        let mut a = C[0];
        let t = x + 7.5;
        for (i, c) in C.iter().enumerate().skip(1) {
            a += c / (x + i as f64);
        }
        0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
    }

    fn incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        if x >= 1.0 {
            return 1.0;
        }
        let front = (ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln()).exp();
        if x > (a + 1.0) / (a + b + 2.0) {
            return 1.0 - incomplete_beta(b, a, 1.0 - x);
        }
        let tiny = 1e-300;
        let mut f = 1.0;
        let mut c = 1.0;
        let mut d = 0.0;
        for i in 0..=400 {
            let m = (i / 2) as f64;
            let num = if i == 0 {
                1.0
            } else if i % 2 == 0 {
                m * (b - m) * x / ((a + 2.0 * m - 1.0) * (a + 2.0 * m))
            } else {
                -((a + m) * (a + b + m) * x) / ((a + 2.0 * m) * (a + 2.0 * m + 1.0))
            };
            d = 1.0 + num * d;
            if d.abs() < tiny {
                d = tiny;
            }
            d = 1.0 / d;
            c = 1.0 + num / c;
            if c.abs() < tiny {
                c = tiny;
            }
            let cd = c * d;
            f *= cd;
            if (1.0 - cd).abs() < 1e-15 {
                break;
            }
        }
        front * (f - 1.0) / a
    }

    #[test]
    fn t_test_matches_reference_implementation() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let a: Vec<f64> = (0..20).map(|_| rng.gen_range(0.2..0.8)).collect();
        let b: Vec<f64> = a.iter().map(|x| x - 0.03 + rng.gen_range(-0.1..0.1)).collect();
        let got = paired_t_test(&a, &b).unwrap();
        let d: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        let mean = d.iter().sum::<f64>() / 20.0;
        let sd = (d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 19.0).sqrt();
        let t = mean / (sd / 20f64.sqrt());
        assert!((got.t_stat - t).abs() < 1e-6);
        assert!((got.p_value - t_two_sided_oracle(t, 19.0)).abs() < 1e-6);
        // two-sided p is symmetric in the roles of the groups
        let swapped = paired_t_test(&b, &a).unwrap();
        assert!((swapped.p_value - got.p_value).abs() < 1e-12);
    }

    #[test]
    fn oracle_sanity() {
        // t = 2.093 at 19 df is the 97.5% quantile
        assert!((t_two_sided_oracle(2.093_024, 19.0) - 0.05).abs() < 1e-5);
    }

    #[test]
    fn threshold_zero_equals_baseline_and_raising_drops_pairs() {
        let mut nodes = Vec::new();
        let mut edges = Vec::new();
        for i in 0..6 {
            let mut a = raced(if i % 2 == 0 { Race::White } else { Race::Black });
            a.gender = if i % 3 == 0 { crate::graph::Gender::Female } else { crate::graph::Gender::Male };
            a.gender_conf = 0.9;
            let mut weak = a;
            if i == 0 {
                weak.race_conf = 0.4;
            }
            nodes.push(NodeSpec::guest(format!("g{i}"), weak));
            nodes.push(NodeSpec::host(format!("h{i}"), a, None));
        }
        for i in 0..6 {
            edges.push(EdgeSpec::new(format!("g{i}"), format!("h{i}"), 1));
            edges.push(EdgeSpec::new(format!("g{i}"), format!("h{}", (i + 1) % 6), 1));
        }
        let net = build_network(nodes, edges, slice()).unwrap();
        assert_eq!(annotated_counts(&net, 0.3).pairs, 12);
        assert_eq!(annotated_counts(&net, 0.5).pairs, 10);
        assert_eq!(annotated_counts(&net, 0.5).guests, 5);

        let base = AnalysisConfig {
            rewire: crate::rewire::RewireConfig {
                n_configs: 20,
                burn_in: crate::rewire::BurnIn::Fixed { swaps: 30 },
                ..Default::default()
            },
            ..AnalysisConfig::default()
        };
        let same = rerun_with_confidence(&[&net], &[crate::view::Attribute::Race], &base, 0.3).unwrap();
        assert_eq!(same.baseline, same.variant);
        assert!(same.deltas.iter().all(|d| !d.changed()));
    }

    proptest! {
        #[test]
        fn perturbation_touches_only_race(n in 1usize..60, fraction in 0.01f64..1.0, seed in any::<u64>()) {
            let net = white_network(n);
            let spec = PerturbationSpec { fraction, seed, ..PerturbationSpec::default() };
            let (out, log) = perturb_labels(&net, &spec).unwrap();
            prop_assert_eq!(log.relabeled.len(), perturbation_count(fraction, n));
            prop_assert_eq!(out.edges(), net.edges());
            let changed = out.guests().iter().zip(net.guests()).filter(|(a, b)| a != b).count();
            prop_assert_eq!(changed, log.relabeled.len());
            for (a, b) in out.guests().iter().zip(net.guests()) {
                let mut a = a.attributes;
                a.race = b.attributes.race;
                prop_assert_eq!(a, b.attributes);
            }
        }

        #[test]
        fn tercile_size_bounds(n in 3usize..150) {
            let prices: Vec<f64> = (0..n).map(|i| ((i * 7919) % 10007) as f64).collect();
            let f = tercile_filter(&priced_network(&prices)).unwrap();
            let kept = f.network.hosts().len();
            prop_assert!(kept + 1 >= n / 3 && kept <= n.div_ceil(3) + 1);
        }

        #[test]
        fn matching_ignores_covariate_scale(
            cov in prop::collection::vec((0.0f64..10.0, 0.0f64..1000.0), 4..16),
            sx in 0.01f64..100.0,
            sy in 0.01f64..100.0,
        ) {
            let hosts: Vec<HostCovariates> = cov.iter().enumerate()
                .map(|(i, (x, y))| host(&format!("h{i:02}"), i % 2 == 0, *x, *y)).collect();
            let scaled: Vec<HostCovariates> = hosts.iter()
                .map(|h| host(h.id.as_str(), h.white, h.covariates[0] * sx, h.covariates[1] * sy)).collect();
            let ids = |r: Result<Vec<MatchedPair>, RobustnessError>| -> Vec<(String, String)> {
                r.map(|v| v.into_iter().map(|p| (p.white_host.to_string(), p.nonwhite_host.to_string())).collect())
                    .unwrap_or_default()
            };
            prop_assert_eq!(ids(matched_pairs(&hosts, 0.5)), ids(matched_pairs(&scaled, 0.5)));
        }
    }
}
