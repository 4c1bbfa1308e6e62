//! Homophily and avoidance detection in weighted bipartite interaction networks.
//!
//! Observed guest-group → host-group pairing frequencies are compared with an
//! ensemble of strength-preserving randomizations of the same network. A
//! pairing is over-expressed (under-expressed) when its observed frequency lies
//! above (below) the ensemble's central 95% interval.

pub mod analysis;
pub mod graph;
pub mod ingest;
pub mod kendall;
pub mod pairing;
pub mod quantile;
pub mod report;
pub mod rewire;
pub mod robustness;
pub mod synth;
pub mod view;

pub use analysis::{analyze_network, AnalysisConfig, AnalysisError};
pub use graph::{
    build_network, AttributeSet, BipartiteNetwork, Edge, EdgeSpec, Gender, GraphError, HostProfile, NodeId,
    NodeSpec, PropertyType, Race, Side, SliceKey,
};
pub use kendall::{kendall_tau, TauError};
pub use pairing::{
    classify, demography_summary, ensemble_intervals, pairing_frequencies, CountMode, ExpressionLabel,
    IntervalEstimate, PairingError, PairingMatrix,
};
pub use quantile::{quintile_bins, QuintileBins};
pub use rewire::{
    calibrate_burn_in, generate_ensemble, BurnIn, RewireConfig, RewireError, RewireState, SwapKernel, SwapMove,
};
pub use report::{ExpressionReport, PairRow};
pub use robustness::{
    matched_pair_analysis, matched_pairs, perturb_labels, rate_t_test, rerun_with_confidence, tercile_filter,
    white_guest_rate, MatchConfig, MatchedPairResult, PerturbationSpec, RobustnessError,
};
pub use synth::{generate, GroundTruth, SynthError, SynthSpec};
pub use view::{attribute_view, Attribute, AttributeView, GroupedNetwork};
