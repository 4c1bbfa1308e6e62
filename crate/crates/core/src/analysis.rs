//! Observed pairing frequencies set against a rewired null ensemble.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{BipartiteNetwork, GraphError, SliceKey};
use crate::pairing::{ensemble_intervals, tally_network, tally_state, CountMode, PairingError};
use crate::report::{EnsembleMetadata, ExpressionReport, ReportInputs};
use crate::rewire::{generate_ensemble, RewireConfig, RewireError};
use crate::view::{attribute_view, Attribute};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("{slice}/{attribute}: {source}")]
    Rewire {
        slice: SliceKey,
        attribute: Attribute,
        source: RewireError,
    },
    #[error(transparent)]
    Pairing(#[from] PairingError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub attribute: Attribute,
    pub min_conf: f64,
    pub mode: CountMode,
    pub rewire: RewireConfig,
    pub level: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            attribute: Attribute::Gender,
            min_conf: 0.3,
            mode: CountMode::StayWeighted,
            rewire: RewireConfig::default(),
            level: 0.95,
        }
    }
}

/// Runs the full pipeline for one slice and one attribute.
///
/// Only nodes with a known attribute value take part; the null ensemble
/// rewires that induced sub-network, so strengths are preserved within it.
pub fn analyze_network(network: &BipartiteNetwork, config: &AnalysisConfig) -> Result<ExpressionReport, AnalysisError> {
    let view = attribute_view(network, config.attribute, config.min_conf)?;
    if view.is_empty() {
        return Err(PairingError::EmptyView {
            slice: network.slice().clone(),
            attribute: config.attribute,
        }
        .into());
    }
    let grouped = view.grouped();
    let observed = tally_network(&grouped, config.mode);
    let ensemble = generate_ensemble(&grouped.network, &config.rewire, |_, state| {
        tally_state(&grouped, state, config.mode)
    })
    .map_err(|source| AnalysisError::Rewire {
        slice: network.slice().clone(),
        attribute: config.attribute,
        source,
    })?;
    let intervals = ensemble_intervals(&ensemble.outputs, config.level)?;
    Ok(ExpressionReport::build(ReportInputs {
        slice: network.slice().clone(),
        attribute: config.attribute,
        mode: config.mode,
        min_conf: config.min_conf,
        labels: &observed.labels,
        observed: &observed.frequencies(),
        observed_counts: &observed.counts,
        total_weight_counted: observed.total_weight_counted,
        intervals: &intervals,
        metadata: EnsembleMetadata {
            n_configs: config.rewire.n_configs,
            master_seed: config.rewire.master_seed,
            burn_in_swaps: ensemble.burn_in.swaps,
            burn_in_calibrated: ensemble.burn_in.calibrated,
            burn_in_converged: ensemble.burn_in.converged,
            thinning_swaps: config.rewire.thinning_swaps,
            kernel: config.rewire.kernel,
        },
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_network, AttributeSet, EdgeSpec, Gender, NodeSpec, PropertyType};
    use crate::pairing::ExpressionLabel;
    use crate::rewire::BurnIn;

    fn person(gender: Gender) -> AttributeSet {
        AttributeSet {
            gender,
            gender_conf: 0.9,
            ..AttributeSet::default()
        }
    }

    /// Females stay only with females and males only with males.
    fn segregated() -> BipartiteNetwork {
        let mut nodes = Vec::new();
        let mut edges = Vec::new();
        for i in 0..20 {
            let g = if i % 2 == 0 { Gender::Female } else { Gender::Male };
            nodes.push(NodeSpec::guest(format!("g{i}"), person(g)));
            nodes.push(NodeSpec::host(format!("h{i}"), person(g), None));
        }
        for i in 0..20 {
            edges.push(EdgeSpec::new(format!("g{i}"), format!("h{i}"), 1));
            edges.push(EdgeSpec::new(format!("g{i}"), format!("h{}", (i + 2) % 20), 1));
        }
        build_network(nodes, edges, SliceKey::new("T", PropertyType::Full)).unwrap()
    }

    fn config() -> AnalysisConfig {
        AnalysisConfig {
            rewire: RewireConfig {
                n_configs: 200,
                burn_in: BurnIn::Fixed { swaps: 400 },
                master_seed: 3,
                ..RewireConfig::default()
            },
            ..AnalysisConfig::default()
        }
    }

    #[test]
    fn segregation_is_flagged() {
        let report = analyze_network(&segregated(), &config()).unwrap();
        assert_eq!(report.row("F", "F").unwrap().label, ExpressionLabel::Over);
        assert_eq!(report.row("F", "M").unwrap().label, ExpressionLabel::Under);
        assert_eq!(report.row("F", "F").unwrap().observed, 0.5);
        assert_eq!(report.metadata.burn_in_swaps, 400);
    }

    #[test]
    fn same_seed_same_report() {
        let a = analyze_network(&segregated(), &config()).unwrap();
        let b = analyze_network(&segregated(), &config()).unwrap();
        assert_eq!(a.to_json(), b.to_json());
    }

    #[test]
    fn race_view_of_unannotated_network_is_empty() {
        let err = analyze_network(
            &segregated(),
            &AnalysisConfig {
                attribute: Attribute::Race,
                ..config()
            },
        )
        .unwrap_err();
        assert!(matches!(err, AnalysisError::Pairing(PairingError::EmptyView { .. })));
    }
}
