//! Weighted bipartite guest→host networks.
//!
//! A [`BipartiteNetwork`] is built once from node and edge records and is
//! immutable afterwards. Nodes are stored sorted by id on each side, so two
//! networks built from permutations of the same rows are identical.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("row {row}: empty node id")]
    EmptyNodeId { row: usize },
    #[error("row {row}: duplicate {side} id {id:?}")]
    DuplicateNodeId { row: usize, side: Side, id: String },
    #[error("edge row {row}: unknown {side} {id:?}")]
    UnknownEndpoint { row: usize, side: Side, id: String },
    #[error("edge row {row}: weight {weight} is not positive")]
    NonPositiveWeight { row: usize, weight: i64 },
    #[error("row {row}: host profile given for guest {id:?}")]
    ProfileOnGuest { row: usize, id: String },
    #[error("row {row}: confidence {value} outside [0, 1]")]
    ConfidenceOutOfRange { row: usize, value: f64 },
    #[error("unknown {side} {id:?}")]
    UnknownNode { side: Side, id: String },
    #[error("min_conf {0} outside [0, 1]")]
    InvalidMinConf(f64),
}

/// Opaque node identifier, unique within one side of a network.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(String);

impl NodeId {
    /// Returns `None` for an empty id.
    pub fn new(id: impl Into<String>) -> Option<Self> {
        let id = id.into();
        if id.is_empty() {
            None
        } else {
            Some(NodeId(id))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Guest,
    Host,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Guest => "guest",
            Side::Host => "host",
        })
    }
}

impl FromStr for Side {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "guest" => Ok(Side::Guest),
            "host" => Ok(Side::Host),
            other => Err(format!("side must be guest or host, got {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub enum Gender {
    Female,
    Male,
    #[default]
    Unknown,
}

impl Gender {
    pub fn code(self) -> &'static str {
        match self {
            Gender::Female => "F",
            Gender::Male => "M",
            Gender::Unknown => "",
        }
    }
}

impl FromStr for Gender {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "f" | "female" => Ok(Gender::Female),
            "m" | "male" => Ok(Gender::Male),
            "" | "unknown" | "u" => Ok(Gender::Unknown),
            other => Err(format!("unrecognised gender {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub enum Race {
    White,
    Asian,
    Black,
    #[default]
    Unknown,
}

impl Race {
    pub fn code(self) -> &'static str {
        match self {
            Race::White => "White",
            Race::Asian => "Asian",
            Race::Black => "Black",
            Race::Unknown => "",
        }
    }
}

impl FromStr for Race {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "w" | "white" => Ok(Race::White),
            "a" | "asian" => Ok(Race::Asian),
            "b" | "black" => Ok(Race::Black),
            "" | "unknown" | "u" => Ok(Race::Unknown),
            other => Err(format!("unrecognised race {other:?}")),
        }
    }
}

/// Annotated attributes of a single user, each with the annotator's confidence.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AttributeSet {
    pub gender: Gender,
    pub gender_conf: f64,
    pub race: Race,
    pub race_conf: f64,
    pub age_years: Option<u32>,
    pub age_conf: f64,
}

impl AttributeSet {
    fn confidences(&self) -> [f64; 3] {
        [self.gender_conf, self.race_conf, self.age_conf]
    }

    /// True when gender and race are both known with confidence at least `threshold`.
    pub fn annotated_at(&self, threshold: f64) -> bool {
        self.gender != Gender::Unknown
            && self.race != Race::Unknown
            && self.gender_conf >= threshold
            && self.race_conf >= threshold
    }
}

/// Wealth proxies available for hosts only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HostProfile {
    pub num_properties: u32,
    pub weekly_price: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PropertyType {
    Full,
    Shared,
}

impl fmt::Display for PropertyType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PropertyType::Full => "full",
            PropertyType::Shared => "shared",
        })
    }
}

impl FromStr for PropertyType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "full" => Ok(PropertyType::Full),
            "shared" => Ok(PropertyType::Shared),
            other => Err(format!("property_type must be full or shared, got {other:?}")),
        }
    }
}

/// Identifies one (city, property type) network.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SliceKey {
    pub city: String,
    pub property_type: PropertyType,
}

impl SliceKey {
    pub fn new(city: impl Into<String>, property_type: PropertyType) -> Self {
        SliceKey {
            city: city.into(),
            property_type,
        }
    }
}

impl fmt::Display for SliceKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.city, self.property_type)
    }
}

/// Input row for [`build_network`].
#[derive(Debug, Clone, PartialEq)]
pub struct NodeSpec {
    pub id: String,
    pub side: Side,
    pub attributes: AttributeSet,
    pub profile: Option<HostProfile>,
}

impl NodeSpec {
    pub fn guest(id: impl Into<String>, attributes: AttributeSet) -> Self {
        NodeSpec {
            id: id.into(),
            side: Side::Guest,
            attributes,
            profile: None,
        }
    }

    pub fn host(id: impl Into<String>, attributes: AttributeSet, profile: Option<HostProfile>) -> Self {
        NodeSpec {
            id: id.into(),
            side: Side::Host,
            attributes,
            profile,
        }
    }
}

/// Input row for [`build_network`]. Weight is signed so bad input can be reported.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeSpec {
    pub guest: String,
    pub host: String,
    pub weight: i64,
}

impl EdgeSpec {
    pub fn new(guest: impl Into<String>, host: impl Into<String>, weight: i64) -> Self {
        EdgeSpec {
            guest: guest.into(),
            host: host.into(),
            weight,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Guest {
    pub id: NodeId,
    pub attributes: AttributeSet,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Host {
    pub id: NodeId,
    pub attributes: AttributeSet,
    pub profile: Option<HostProfile>,
}

/// A merged guest→host edge; `guest` and `host` index into the network's node lists.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Edge {
    pub guest: usize,
    pub host: usize,
    pub weight: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BipartiteNetwork {
    slice: SliceKey,
    pub(crate) guests: Vec<Guest>,
    pub(crate) hosts: Vec<Host>,
    guest_index: HashMap<NodeId, usize>,
    host_index: HashMap<NodeId, usize>,
    edges: Vec<Edge>,
}

/// Builds a network from node and edge rows. Duplicate edge rows are summed.
///
/// Row numbers in errors are zero-based positions in the respective input.
pub fn build_network<N, E>(nodes: N, edges: E, slice: SliceKey) -> Result<BipartiteNetwork, GraphError>
where
    N: IntoIterator<Item = NodeSpec>,
    E: IntoIterator<Item = EdgeSpec>,
{
    let mut guests: BTreeMap<NodeId, AttributeSet> = BTreeMap::new();
    let mut hosts: BTreeMap<NodeId, (AttributeSet, Option<HostProfile>)> = BTreeMap::new();

    for (row, node) in nodes.into_iter().enumerate() {
        let id = NodeId::new(node.id.clone()).ok_or(GraphError::EmptyNodeId { row })?;
        if let Some(&value) = node
            .attributes
            .confidences()
            .iter()
            .find(|c| !(0.0..=1.0).contains(*c))
        {
            return Err(GraphError::ConfidenceOutOfRange { row, value });
        }
        let duplicate = match node.side {
            Side::Guest => {
                if node.profile.is_some() {
                    return Err(GraphError::ProfileOnGuest { row, id: node.id });
                }
                guests.insert(id, node.attributes).is_some()
            }
            Side::Host => hosts.insert(id, (node.attributes, node.profile)).is_some(),
        };
        if duplicate {
            return Err(GraphError::DuplicateNodeId {
                row,
                side: node.side,
                id: node.id,
            });
        }
    }

    let guests: Vec<Guest> = guests
        .into_iter()
        .map(|(id, attributes)| Guest { id, attributes })
        .collect();
    let hosts: Vec<Host> = hosts
        .into_iter()
        .map(|(id, (attributes, profile))| Host {
            id,
            attributes,
            profile,
        })
        .collect();
    let guest_index: HashMap<NodeId, usize> =
        guests.iter().enumerate().map(|(i, g)| (g.id.clone(), i)).collect();
    let host_index: HashMap<NodeId, usize> =
        hosts.iter().enumerate().map(|(i, h)| (h.id.clone(), i)).collect();

    let mut merged: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    for (row, edge) in edges.into_iter().enumerate() {
        if edge.weight < 1 {
            return Err(GraphError::NonPositiveWeight {
                row,
                weight: edge.weight,
            });
        }
        let g = lookup(&guest_index, &edge.guest).ok_or_else(|| GraphError::UnknownEndpoint {
            row,
            side: Side::Guest,
            id: edge.guest.clone(),
        })?;
        let h = lookup(&host_index, &edge.host).ok_or_else(|| GraphError::UnknownEndpoint {
            row,
            side: Side::Host,
            id: edge.host.clone(),
        })?;
        *merged.entry((g, h)).or_insert(0) += edge.weight as u64;
    }
    let edges = merged
        .into_iter()
        .map(|((guest, host), weight)| Edge { guest, host, weight })
        .collect();

    Ok(BipartiteNetwork {
        slice,
        guests,
        hosts,
        guest_index,
        host_index,
        edges,
    })
}

fn lookup(index: &HashMap<NodeId, usize>, id: &str) -> Option<usize> {
    NodeId::new(id).and_then(|id| index.get(&id).copied())
}

impl BipartiteNetwork {
    pub fn slice(&self) -> &SliceKey {
        &self.slice
    }

    pub fn guests(&self) -> &[Guest] {
        &self.guests
    }

    pub fn hosts(&self) -> &[Host] {
        &self.hosts
    }

    /// Edges sorted by (guest, host) index.
    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn total_weight(&self) -> u64 {
        self.edges.iter().map(|e| e.weight).sum()
    }

    pub fn guest_index(&self, id: &str) -> Option<usize> {
        lookup(&self.guest_index, id)
    }

    pub fn host_index(&self, id: &str) -> Option<usize> {
        lookup(&self.host_index, id)
    }

    pub fn weight(&self, guest: usize, host: usize) -> u64 {
        self.edges
            .binary_search_by(|e| (e.guest, e.host).cmp(&(guest, host)))
            .map(|i| self.edges[i].weight)
            .unwrap_or(0)
    }

    pub fn out_strength(&self, guest: &str) -> Result<u64, GraphError> {
        let g = self.guest_index(guest).ok_or_else(|| GraphError::UnknownNode {
            side: Side::Guest,
            id: guest.to_string(),
        })?;
        Ok(self.out_strengths()[g])
    }

    pub fn in_strength(&self, host: &str) -> Result<u64, GraphError> {
        let h = self.host_index(host).ok_or_else(|| GraphError::UnknownNode {
            side: Side::Host,
            id: host.to_string(),
        })?;
        Ok(self.in_strengths()[h])
    }

    /// Out-strength of every guest, indexed like [`Self::guests`].
    pub fn out_strengths(&self) -> Vec<u64> {
        let mut out = vec![0; self.guests.len()];
        for e in &self.edges {
            out[e.guest] += e.weight;
        }
        out
    }

    /// In-strength of every host, indexed like [`Self::hosts`].
    pub fn in_strengths(&self) -> Vec<u64> {
        let mut out = vec![0; self.hosts.len()];
        for e in &self.edges {
            out[e.host] += e.weight;
        }
        out
    }

    /// Sub-network on the kept nodes and the edges between them.
    ///
    /// With `drop_isolated`, kept nodes left without edges are removed too.
    pub fn restrict(&self, keep_guest: &[bool], keep_host: &[bool], drop_isolated: bool) -> BipartiteNetwork {
        let edges: Vec<&Edge> = self
            .edges
            .iter()
            .filter(|e| keep_guest[e.guest] && keep_host[e.host])
            .collect();
        let mut guest_used = vec![!drop_isolated; self.guests.len()];
        let mut host_used = vec![!drop_isolated; self.hosts.len()];
        for e in &edges {
            guest_used[e.guest] = true;
            host_used[e.host] = true;
        }
        let nodes = self
            .guests
            .iter()
            .enumerate()
            .filter(|(i, _)| keep_guest[*i] && guest_used[*i])
            .map(|(_, g)| NodeSpec::guest(g.id.as_str(), g.attributes))
            .chain(
                self.hosts
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| keep_host[*i] && host_used[*i])
                    .map(|(_, h)| NodeSpec::host(h.id.as_str(), h.attributes, h.profile)),
            );
        let edge_specs = edges.iter().map(|e| {
            EdgeSpec::new(
                self.guests[e.guest].id.as_str(),
                self.hosts[e.host].id.as_str(),
                e.weight as i64,
            )
        });
        build_network(nodes, edge_specs, self.slice.clone())
            .expect("restriction of a valid network is valid")
    }

    /// Node and edge rows that rebuild this network.
    pub fn to_specs(&self) -> (Vec<NodeSpec>, Vec<EdgeSpec>) {
        let nodes = self
            .guests
            .iter()
            .map(|g| NodeSpec::guest(g.id.as_str(), g.attributes))
            .chain(
                self.hosts
                    .iter()
                    .map(|h| NodeSpec::host(h.id.as_str(), h.attributes, h.profile)),
            )
            .collect();
        let edges = self
            .edges
            .iter()
            .map(|e| {
                EdgeSpec::new(
                    self.guests[e.guest].id.as_str(),
                    self.hosts[e.host].id.as_str(),
                    e.weight as i64,
                )
            })
            .collect();
        (nodes, edges)
    }
}
