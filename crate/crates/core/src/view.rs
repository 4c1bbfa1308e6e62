//! Attribute-aware views: which nodes take part in an analysis and in which group.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::graph::{AttributeSet, BipartiteNetwork, Gender, GraphError, Race};
use crate::quantile::{quintile_bins, QuintileBins};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attribute {
    Gender,
    Race,
    AgeQuintile,
}

impl Attribute {
    pub const ALL: [Attribute; 3] = [Attribute::Gender, Attribute::Race, Attribute::AgeQuintile];

    pub fn name(self) -> &'static str {
        match self {
            Attribute::Gender => "gender",
            Attribute::Race => "race",
            Attribute::AgeQuintile => "age_quintile",
        }
    }

    /// Short group labels in group-index order.
    pub fn labels(self) -> &'static [&'static str] {
        match self {
            Attribute::Gender => &["F", "M"],
            Attribute::Race => &["W", "A", "B"],
            Attribute::AgeQuintile => &["Q1", "Q2", "Q3", "Q4", "Q5"],
        }
    }

    pub fn n_groups(self) -> usize {
        self.labels().len()
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Attribute {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gender" => Ok(Attribute::Gender),
            "race" => Ok(Attribute::Race),
            "age" | "age_quintile" => Ok(Attribute::AgeQuintile),
            other => Err(format!("unknown attribute {other:?}")),
        }
    }
}

fn categorical_group(attribute: Attribute, attrs: &AttributeSet, min_conf: f64) -> Option<u8> {
    match attribute {
        Attribute::Gender if attrs.gender_conf >= min_conf => match attrs.gender {
            Gender::Female => Some(0),
            Gender::Male => Some(1),
            Gender::Unknown => None,
        },
        Attribute::Race if attrs.race_conf >= min_conf => match attrs.race {
            Race::White => Some(0),
            Race::Asian => Some(1),
            Race::Black => Some(2),
            Race::Unknown => None,
        },
        _ => None,
    }
}

fn known_age(attrs: &AttributeSet, min_conf: f64) -> Option<u32> {
    attrs.age_years.filter(|_| attrs.age_conf >= min_conf)
}

/// Group membership of every node for one attribute at one confidence threshold.
///
/// `None` marks an excluded node (unknown value or confidence below threshold).
#[derive(Debug, Clone)]
pub struct AttributeView<'a> {
    network: &'a BipartiteNetwork,
    attribute: Attribute,
    min_conf: f64,
    guest_groups: Vec<Option<u8>>,
    host_groups: Vec<Option<u8>>,
    age_bins: Option<QuintileBins>,
}

/// Builds the view of `network` for `attribute`.
///
/// Age quintiles are cut on the included hosts' ages and applied to both sides.
pub fn attribute_view(
    network: &BipartiteNetwork,
    attribute: Attribute,
    min_conf: f64,
) -> Result<AttributeView<'_>, GraphError> {
    if !(0.0..=1.0).contains(&min_conf) {
        return Err(GraphError::InvalidMinConf(min_conf));
    }
    let (guest_groups, host_groups, age_bins) = match attribute {
        Attribute::AgeQuintile => {
            let host_ages: Vec<u32> = network
                .hosts()
                .iter()
                .filter_map(|h| known_age(&h.attributes, min_conf))
                .collect();
            match quintile_bins(&host_ages) {
                Ok(bins) => {
                    let group = |a: &AttributeSet| known_age(a, min_conf).map(|age| bins.bin_of(age) as u8);
                    let g = network.guests().iter().map(|n| group(&n.attributes)).collect();
                    let h = network.hosts().iter().map(|n| group(&n.attributes)).collect();
                    (g, h, Some(bins))
                }
                Err(e) => {
                    log::warn!("{}: no age quintiles ({e}); age view is empty", network.slice());
                    (
                        vec![None; network.guests().len()],
                        vec![None; network.hosts().len()],
                        None,
                    )
                }
            }
        }
        _ => (
            network
                .guests()
                .iter()
                .map(|n| categorical_group(attribute, &n.attributes, min_conf))
                .collect(),
            network
                .hosts()
                .iter()
                .map(|n| categorical_group(attribute, &n.attributes, min_conf))
                .collect(),
            None,
        ),
    };
    let view = AttributeView {
        network,
        attribute,
        min_conf,
        guest_groups,
        host_groups,
        age_bins,
    };
    if view.is_empty() {
        log::warn!("{}: empty {} view at min_conf {}", network.slice(), attribute, min_conf);
    }
    Ok(view)
}

impl<'a> AttributeView<'a> {
    pub fn network(&self) -> &'a BipartiteNetwork {
        self.network
    }

    pub fn attribute(&self) -> Attribute {
        self.attribute
    }

    pub fn min_conf(&self) -> f64 {
        self.min_conf
    }

    pub fn guest_group(&self, guest: usize) -> Option<u8> {
        self.guest_groups[guest]
    }

    pub fn host_group(&self, host: usize) -> Option<u8> {
        self.host_groups[host]
    }

    pub fn age_bins(&self) -> Option<&QuintileBins> {
        self.age_bins.as_ref()
    }

    /// Number of groups actually distinguishable (fewer than five for degenerate quintiles).
    pub fn n_groups(&self) -> usize {
        match (&self.attribute, &self.age_bins) {
            (Attribute::AgeQuintile, Some(bins)) => bins.n_bins(),
            _ => self.attribute.n_groups(),
        }
    }

    pub fn labels(&self) -> Vec<String> {
        self.attribute.labels()[..self.n_groups()]
            .iter()
            .map(|s| s.to_string())
            .collect()
    }

    pub fn included_guests(&self) -> impl Iterator<Item = usize> + '_ {
        self.guest_groups
            .iter()
            .enumerate()
            .filter(|(_, g)| g.is_some())
            .map(|(i, _)| i)
    }

    pub fn included_hosts(&self) -> impl Iterator<Item = usize> + '_ {
        self.host_groups
            .iter()
            .enumerate()
            .filter(|(_, g)| g.is_some())
            .map(|(i, _)| i)
    }

    /// True when no edge has both endpoints included.
    pub fn is_empty(&self) -> bool {
        !self
            .network
            .edges()
            .iter()
            .any(|e| self.guest_groups[e.guest].is_some() && self.host_groups[e.host].is_some())
    }

    /// Sub-network of included nodes with a dense group index per node.
    pub fn grouped(&self) -> GroupedNetwork {
        let keep_g: Vec<bool> = self.guest_groups.iter().map(Option::is_some).collect();
        let keep_h: Vec<bool> = self.host_groups.iter().map(Option::is_some).collect();
        let network = self.network.restrict(&keep_g, &keep_h, false);
        // restrict keeps relative (sorted) order, so groups can be re-read by id
        let guest_group = network
            .guests()
            .iter()
            .map(|g| self.guest_groups[self.network.guest_index(g.id.as_str()).unwrap()].unwrap())
            .collect();
        let host_group = network
            .hosts()
            .iter()
            .map(|h| self.host_groups[self.network.host_index(h.id.as_str()).unwrap()].unwrap())
            .collect();
        GroupedNetwork {
            network,
            attribute: self.attribute,
            labels: self.labels(),
            guest_group,
            host_group,
        }
    }
}

/// A network in which every node carries a group for one attribute.
#[derive(Debug, Clone)]
pub struct GroupedNetwork {
    pub network: BipartiteNetwork,
    pub attribute: Attribute,
    pub labels: Vec<String>,
    pub guest_group: Vec<u8>,
    pub host_group: Vec<u8>,
}

impl GroupedNetwork {
    pub fn n_groups(&self) -> usize {
        self.labels.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_network, EdgeSpec, NodeSpec, PropertyType, SliceKey};

    fn attrs(race: Race, race_conf: f64) -> AttributeSet {
        AttributeSet {
            race,
            race_conf,
            ..Default::default()
        }
    }

    #[test]
    fn low_confidence_node_excluded() {
        let net = build_network(
            vec![
                NodeSpec::guest("g1", attrs(Race::White, 0.3)),
                NodeSpec::guest("g2", attrs(Race::Asian, 0.9)),
                NodeSpec::host("h1", attrs(Race::White, 0.8), None),
            ],
            vec![EdgeSpec::new("g1", "h1", 1), EdgeSpec::new("g2", "h1", 1)],
            SliceKey::new("X", PropertyType::Full),
        )
        .unwrap();
        let v0 = attribute_view(&net, Attribute::Race, 0.0).unwrap();
        assert_eq!(v0.included_guests().count(), 2);
        let v5 = attribute_view(&net, Attribute::Race, 0.5).unwrap();
        assert_eq!(v5.included_guests().collect::<Vec<_>>(), vec![1]);
        let grouped = v5.grouped();
        assert_eq!(grouped.network.total_weight(), 1);
        assert_eq!(grouped.guest_group, vec![1]);
        assert!(attribute_view(&net, Attribute::Race, 1.5).is_err());
    }

    #[test]
    fn unknown_values_excluded_at_zero_threshold() {
        let net = build_network(
            vec![
                NodeSpec::guest("g1", attrs(Race::Unknown, 1.0)),
                NodeSpec::host("h1", attrs(Race::Black, 1.0), None),
            ],
            vec![EdgeSpec::new("g1", "h1", 4)],
            SliceKey::new("X", PropertyType::Full),
        )
        .unwrap();
        let view = attribute_view(&net, Attribute::Race, 0.0).unwrap();
        assert!(view.is_empty());
        assert_eq!(view.included_hosts().count(), 1);
    }

    #[test]
    fn age_view_uses_host_quintiles() {
        let nodes: Vec<NodeSpec> = (0..5)
            .map(|i| {
                NodeSpec::host(
                    format!("h{i}"),
                    AttributeSet {
                        age_years: Some(20 + 10 * i),
                        age_conf: 1.0,
                        ..Default::default()
                    },
                    None,
                )
            })
            .chain(std::iter::once(NodeSpec::guest(
                "g",
                AttributeSet {
                    age_years: Some(45),
                    age_conf: 1.0,
                    ..Default::default()
                },
            )))
            .collect();
        let net = build_network(nodes, vec![EdgeSpec::new("g", "h0", 1)], SliceKey::new("X", PropertyType::Full))
            .unwrap();
        let view = attribute_view(&net, Attribute::AgeQuintile, 0.0).unwrap();
        assert_eq!(view.n_groups(), 5);
        assert_eq!(view.guest_group(0), Some(2));
        assert_eq!(view.host_group(4), Some(4));
    }
}
