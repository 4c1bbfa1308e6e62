//! Strength-preserving randomization of weighted bipartite networks.
//!
//! The working state keeps one slot per unit of edge weight. An xSwap move
//! draws two distinct slots `(g1, h1)` and `(g2, h2)` uniformly, and moves one
//! unit of weight from `g1→h1` to `g1→h2` and one from `g2→h2` to `g2→h1`.
//! Guests own their slots for good and hosts are only exchanged between slots,
//! so every out-strength and in-strength is preserved exactly.
//!
//! Draws with `g1 == g2` or `h1 == h2` are redrawn and never counted. With
//! [`SwapKernel::Uniform`] a Metropolis-Hastings acceptance step corrects for
//! weight-proportional slot sampling so that the chain is uniform over all
//! weight matrices with the original margins; [`SwapKernel::UnitSwap`]
//! always accepts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{BipartiteNetwork, Edge};
use crate::kendall::kendall_tau;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RewireError {
    #[error("network is not rewirable: {0}")]
    NotRewirable(String),
    #[error("no edge {guest}→{host} to move weight from")]
    MissingEdge { guest: usize, host: usize },
    #[error("invalid rewiring configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SwapKernel {
    /// Metropolis-corrected moves; stationary distribution uniform over weight matrices.
    #[default]
    Uniform,
    /// Every admissible move is accepted.
    UnitSwap,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum BurnIn {
    Fixed {
        swaps: u64,
    },
    /// Probe Kendall's tau between original and current edge weights every
    /// `probe_interval` swaps and stop once it drops to `tau_stop`.
    /// `None` intervals default to 2×|edges| and 20×|edges|.
    AutoKendall {
        tau_stop: f64,
        probe_interval: Option<u64>,
        max_swaps: Option<u64>,
    },
}

impl Default for BurnIn {
    fn default() -> Self {
        BurnIn::AutoKendall {
            tau_stop: 0.05,
            probe_interval: None,
            max_swaps: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewireConfig {
    pub n_configs: usize,
    pub burn_in: BurnIn,
    pub master_seed: u64,
    /// `None`: every replicate restarts from the original network.
    /// `Some(k)`: one chain, `k` swaps between retained configurations.
    #[serde(default)]
    pub thinning_swaps: Option<u64>,
    #[serde(default)]
    pub kernel: SwapKernel,
}

impl Default for RewireConfig {
    fn default() -> Self {
        RewireConfig {
            n_configs: 1000,
            burn_in: BurnIn::default(),
            master_seed: 0,
            thinning_swaps: None,
            kernel: SwapKernel::Uniform,
        }
    }
}

impl RewireConfig {
    pub fn validate(&self) -> Result<(), RewireError> {
        if self.n_configs == 0 {
            return Err(RewireError::InvalidConfig("n_configs must be positive".into()));
        }
        if self.thinning_swaps == Some(0) {
            return Err(RewireError::InvalidConfig("thinning_swaps must be positive".into()));
        }
        if let BurnIn::AutoKendall {
            tau_stop,
            probe_interval,
            max_swaps,
        } = self.burn_in
        {
            if !(tau_stop > 0.0 && tau_stop <= 1.0) {
                return Err(RewireError::InvalidConfig(format!("tau_stop {tau_stop} outside (0, 1]")));
            }
            if probe_interval == Some(0) {
                return Err(RewireError::InvalidConfig("probe_interval must be positive".into()));
            }
            if let (Some(p), Some(m)) = (probe_interval, max_swaps) {
                if m < p {
                    return Err(RewireError::InvalidConfig(format!(
                        "max_swaps {m} below probe_interval {p}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// RNG stream `stream` of `master_seed`; replicate `r` uses stream `r`.
pub fn stream_rng(master_seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream);
    rng
}

const CALIBRATION_STREAM: u64 = u64::MAX;

/// An explicit move over guest/host indices of the original network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SwapMove {
    pub g1: usize,
    pub h1: usize,
    pub g2: usize,
    pub h2: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MoveOutcome {
    Swapped,
    /// Degenerate or refused by the acceptance step; state unchanged.
    Rejected,
}

#[derive(Debug, Clone)]
pub struct RewireState {
    units: Vec<(u32, u32)>,
    weights: FxHashMap<(u32, u32), u32>,
    n_guests: usize,
    n_hosts: usize,
    kernel: SwapKernel,
    /// W(W-1) minus same-guest and same-host ordered slot pairs.
    base_pairs: i64,
    /// Σ m(m-1) over current edge weights m.
    same_edge_pairs: i64,
}

impl RewireState {
    pub fn new(network: &BipartiteNetwork, kernel: SwapKernel) -> Result<Self, RewireError> {
        let mut guests_seen = 0usize;
        let mut hosts_seen = std::collections::BTreeSet::new();
        let mut last_guest = None;
        for e in network.edges() {
            if last_guest != Some(e.guest) {
                guests_seen += 1;
                last_guest = Some(e.guest);
            }
            hosts_seen.insert(e.host);
        }
        if guests_seen < 2 || hosts_seen.len() < 2 {
            return Err(RewireError::NotRewirable(format!(
                "{}: {} guest(s) and {} host(s) with edges; need two of each",
                network.slice(),
                guests_seen,
                hosts_seen.len()
            )));
        }

        let total = network.total_weight() as usize;
        let mut units = Vec::with_capacity(total);
        let mut weights = FxHashMap::default();
        weights.reserve(network.edge_count());
        let mut same_edge_pairs = 0i64;
        for e in network.edges() {
            let key = (e.guest as u32, e.host as u32);
            units.extend(std::iter::repeat_n(key, e.weight as usize));
            weights.insert(key, e.weight as u32);
            let m = e.weight as i64;
            same_edge_pairs += m * (m - 1);
        }
        let pairs = |s: Vec<u64>| s.iter().map(|&s| (s * s.saturating_sub(1)) as i64).sum::<i64>();
        let w = total as i64;
        let base_pairs = w * (w - 1) - pairs(network.out_strengths()) - pairs(network.in_strengths());

        Ok(RewireState {
            units,
            weights,
            n_guests: network.guests().len(),
            n_hosts: network.hosts().len(),
            kernel,
            base_pairs,
            same_edge_pairs,
        })
    }

    pub fn kernel(&self) -> SwapKernel {
        self.kernel
    }

    pub fn total_weight(&self) -> u64 {
        self.units.len() as u64
    }

    /// One `(guest, host)` entry per unit of weight.
    pub fn units(&self) -> &[(u32, u32)] {
        &self.units
    }

    pub fn weight(&self, guest: usize, host: usize) -> u64 {
        self.weights
            .get(&(guest as u32, host as u32))
            .copied()
            .unwrap_or(0) as u64
    }

    pub fn edge_count(&self) -> usize {
        self.weights.len()
    }

    /// Current edges sorted by (guest, host).
    pub fn edges(&self) -> Vec<Edge> {
        let mut edges: Vec<Edge> = self
            .weights
            .iter()
            .map(|(&(g, h), &w)| Edge {
                guest: g as usize,
                host: h as usize,
                weight: w as u64,
            })
            .collect();
        edges.sort_unstable();
        edges
    }

    /// Distinct `(guest, host)` pairs currently carrying weight, unordered.
    pub fn edge_keys(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.weights.keys().map(|&(g, h)| (g as usize, h as usize))
    }

    pub fn out_strengths(&self) -> Vec<u64> {
        let mut out = vec![0; self.n_guests];
        for (&(g, _), &w) in &self.weights {
            out[g as usize] += w as u64;
        }
        out
    }

    pub fn in_strengths(&self) -> Vec<u64> {
        let mut out = vec![0; self.n_hosts];
        for (&(_, h), &w) in &self.weights {
            out[h as usize] += w as u64;
        }
        out
    }

    fn bump(&mut self, key: (u32, u32)) {
        let m = self.weights.entry(key).or_insert(0);
        self.same_edge_pairs += 2 * *m as i64;
        *m += 1;
    }

    fn drop_unit(&mut self, key: (u32, u32)) {
        let m = self.weights.get_mut(&key).expect("slot refers to a live edge");
        *m -= 1;
        self.same_edge_pairs -= 2 * *m as i64;
        if *m == 0 {
            self.weights.remove(&key);
        }
    }

    fn transfer(&mut self, i: usize, j: usize) {
        let (g1, h1) = self.units[i];
        let (g2, h2) = self.units[j];
        self.drop_unit((g1, h1));
        self.drop_unit((g2, h2));
        self.bump((g1, h2));
        self.bump((g2, h1));
        self.units[i].1 = h2;
        self.units[j].1 = h1;
    }

    fn accept<R: Rng + ?Sized>(&self, i: usize, j: usize, rng: &mut R) -> bool {
        if self.kernel == SwapKernel::UnitSwap {
            return true;
        }
        let (g1, h1) = self.units[i];
        let (g2, h2) = self.units[j];
        let w = |k| self.weights.get(&k).copied().unwrap_or(0) as i64;
        let (a, d) = (w((g1, h1)), w((g2, h2)));
        let (b, c) = (w((g1, h2)), w((g2, h1)));
        let here = self.base_pairs + self.same_edge_pairs;
        let there = self.base_pairs + self.same_edge_pairs - 2 * (a - 1) - 2 * (d - 1) + 2 * b + 2 * c;
        // forward ∝ a·d / N(x), reverse ∝ (b+1)(c+1) / N(y)
        let num = ((b + 1) * (c + 1)) as f64 * here as f64;
        let den = (a * d) as f64 * there as f64;
        num >= den || rng.gen::<f64>() * den < num
    }

    /// Draws slot pairs until a non-degenerate one comes up, then applies the kernel.
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> MoveOutcome {
        let w = self.units.len();
        loop {
            let i = rng.gen_range(0..w);
            let mut j = rng.gen_range(0..w - 1);
            if j >= i {
                j += 1;
            }
            let (g1, h1) = self.units[i];
            let (g2, h2) = self.units[j];
            if g1 == g2 || h1 == h2 {
                continue;
            }
            if self.accept(i, j, rng) {
                self.transfer(i, j);
                return MoveOutcome::Swapped;
            }
            return MoveOutcome::Rejected;
        }
    }

    /// Performs `steps` counted steps; returns how many were accepted.
    pub fn run<R: Rng + ?Sized>(&mut self, steps: u64, rng: &mut R) -> u64 {
        (0..steps)
            .filter(|_| self.step(rng) == MoveOutcome::Swapped)
            .count() as u64
    }

    /// Applies a specific move unconditionally (no acceptance step).
    pub fn apply_move(&mut self, mv: SwapMove) -> Result<MoveOutcome, RewireError> {
        if mv.g1 == mv.g2 || mv.h1 == mv.h2 {
            return Ok(MoveOutcome::Rejected);
        }
        let find = |g: usize, h: usize| {
            self.units
                .iter()
                .position(|&u| u == (g as u32, h as u32))
                .ok_or(RewireError::MissingEdge { guest: g, host: h })
        };
        let i = find(mv.g1, mv.h1)?;
        let j = find(mv.g2, mv.h2)?;
        self.transfer(i, j);
        Ok(MoveOutcome::Swapped)
    }
}

/// Aligns two sorted edge lists over the union of their keys; absent edges are 0.
pub fn weight_vectors(original: &[Edge], current: &[Edge]) -> (Vec<f64>, Vec<f64>) {
    let (mut a, mut b) = (Vec::new(), Vec::new());
    let (mut i, mut j) = (0, 0);
    while i < original.len() || j < current.len() {
        let ko = original.get(i).map(|e| (e.guest, e.host));
        let kc = current.get(j).map(|e| (e.guest, e.host));
        match (ko, kc) {
            (Some(x), Some(y)) if x == y => {
                a.push(original[i].weight as f64);
                b.push(current[j].weight as f64);
                i += 1;
                j += 1;
            }
            (Some(x), Some(y)) if x < y => {
                a.push(original[i].weight as f64);
                b.push(0.0);
                i += 1;
            }
            (Some(_), None) => {
                a.push(original[i].weight as f64);
                b.push(0.0);
                i += 1;
            }
            _ => {
                a.push(0.0);
                b.push(current[j].weight as f64);
                j += 1;
            }
        }
    }
    (a, b)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TauProbe {
    pub swaps: u64,
    /// `None` when tau-b is undefined (a constant weight vector).
    pub tau: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BurnInResolution {
    pub swaps: u64,
    pub calibrated: bool,
    pub converged: bool,
    pub trace: Vec<TauProbe>,
}

/// Smallest probed swap count at which tau-b ≤ `tau_stop`, else `max_swaps`
/// with `converged = false`.
pub fn calibrate_burn_in(
    network: &BipartiteNetwork,
    tau_stop: f64,
    probe_interval: u64,
    max_swaps: u64,
    kernel: SwapKernel,
    seed: u64,
) -> Result<BurnInResolution, RewireError> {
    if probe_interval == 0 || max_swaps < probe_interval {
        return Err(RewireError::InvalidConfig(format!(
            "probe_interval {probe_interval} / max_swaps {max_swaps}"
        )));
    }
    let mut state = RewireState::new(network, kernel)?;
    let mut rng = stream_rng(seed, CALIBRATION_STREAM);
    let mut trace = Vec::new();
    let mut done = 0;
    while done < max_swaps {
        let chunk = probe_interval.min(max_swaps - done);
        state.run(chunk, &mut rng);
        done += chunk;
        let (a, b) = weight_vectors(network.edges(), &state.edges());
        let tau = kendall_tau(&a, &b).ok();
        trace.push(TauProbe { swaps: done, tau });
        if tau.is_some_and(|t| t <= tau_stop) {
            return Ok(BurnInResolution {
                swaps: done,
                calibrated: true,
                converged: true,
                trace,
            });
        }
    }
    log::warn!(
        "{}: tau did not reach {tau_stop} within {max_swaps} swaps",
        network.slice()
    );
    Ok(BurnInResolution {
        swaps: max_swaps,
        calibrated: true,
        converged: false,
        trace,
    })
}

/// Turns the configured burn-in into a concrete swap count for `network`.
pub fn resolve_burn_in(network: &BipartiteNetwork, config: &RewireConfig) -> Result<BurnInResolution, RewireError> {
    config.validate()?;
    match config.burn_in {
        BurnIn::Fixed { swaps } => Ok(BurnInResolution {
            swaps,
            calibrated: false,
            converged: true,
            trace: Vec::new(),
        }),
        BurnIn::AutoKendall {
            tau_stop,
            probe_interval,
            max_swaps,
        } => {
            let edges = network.edge_count().max(1) as u64;
            let probe = probe_interval.unwrap_or(2 * edges);
            let max = max_swaps.unwrap_or(20 * edges).max(probe);
            calibrate_burn_in(network, tau_stop, probe, max, config.kernel, config.master_seed)
        }
    }
}

#[derive(Debug, Clone)]
pub struct Ensemble<T> {
    /// Consumer outputs in replicate order.
    pub outputs: Vec<T>,
    pub burn_in: BurnInResolution,
}

/// Generates `n_configs` randomized configurations and hands each to `consumer`.
///
/// Replicate `r` draws from RNG stream `r` of the master seed, so outputs do
/// not depend on how many threads the surrounding rayon pool has.
pub fn generate_ensemble<T, F>(
    network: &BipartiteNetwork,
    config: &RewireConfig,
    consumer: F,
) -> Result<Ensemble<T>, RewireError>
where
    T: Send,
    F: Fn(usize, &RewireState) -> T + Sync,
{
    config.validate()?;
    let original = RewireState::new(network, config.kernel)?;
    let burn_in = resolve_burn_in(network, config)?;
    let outputs = match config.thinning_swaps {
        None => (0..config.n_configs)
            .into_par_iter()
            .map(|r| {
                let mut state = original.clone();
                let mut rng = stream_rng(config.master_seed, r as u64);
                state.run(burn_in.swaps, &mut rng);
                consumer(r, &state)
            })
            .collect(),
        Some(thinning) => {
            let mut state = original;
            let mut rng = stream_rng(config.master_seed, 0);
            state.run(burn_in.swaps, &mut rng);
            let mut outputs = Vec::with_capacity(config.n_configs);
            for r in 0..config.n_configs {
                if r > 0 {
                    state.run(thinning, &mut rng);
                }
                outputs.push(consumer(r, &state));
            }
            outputs
        }
    };
    Ok(Ensemble { outputs, burn_in })
}
