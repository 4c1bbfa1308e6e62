//! CSV ingestion of node and edge files into per-(city, property type) networks.
//!
//! ```text
//! nodes.csv: node_id,side,city,gender,gender_conf,race,race_conf,age_years,age_conf,num_properties,weekly_price
//! edges.csv: guest_id,host_id,weight,city,property_type
//! ```
//!
//! Empty fields mean "missing": unknown attribute, confidence 0, no age, no
//! host profile. A blank weight counts as one stay. A node id may appear on
//! several rows (for instance once per city) as long as the attribute and
//! profile columns agree.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::graph::{
    build_network, AttributeSet, BipartiteNetwork, EdgeSpec, Gender, GraphError, HostProfile, NodeSpec,
    PropertyType, Race, Side, SliceKey,
};

pub const NODES_HEADER: [&str; 11] = [
    "node_id",
    "side",
    "city",
    "gender",
    "gender_conf",
    "race",
    "race_conf",
    "age_years",
    "age_conf",
    "num_properties",
    "weekly_price",
];

pub const EDGES_HEADER: [&str; 5] = ["guest_id", "host_id", "weight", "city", "property_type"];

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{file}:{line}: column {column}: {reason}")]
    Parse {
        file: FileKind,
        line: u64,
        column: String,
        reason: String,
    },
    #[error("edges:{line}: unknown {side} {id:?}")]
    Referential { line: u64, side: Side, id: String },
    #[error("nodes:{line}: {side} {id:?} conflicts with an earlier row")]
    ConflictingNodeRow { line: u64, side: Side, id: String },
    #[error("{0}")]
    Graph(#[from] GraphError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FileKind {
    Nodes,
    Edges,
}

impl std::fmt::Display for FileKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FileKind::Nodes => "nodes",
            FileKind::Edges => "edges",
        })
    }
}

/// One problem found while reading the input files.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Finding {
    ParseError {
        file: FileKind,
        line: u64,
        column: String,
        reason: String,
    },
    RangeError {
        file: FileKind,
        line: u64,
        column: String,
        value: f64,
    },
    ReferentialError { line: u64, side: Side, id: String },
    ConflictingNodeRow { line: u64, side: Side, id: String },
    Warning { message: String },
}

impl Finding {
    pub fn is_warning(&self) -> bool {
        matches!(self, Finding::Warning { .. })
    }

    fn into_error(self) -> Option<IngestError> {
        Some(match self {
            Finding::ParseError {
                file,
                line,
                column,
                reason,
            } => IngestError::Parse {
                file,
                line,
                column,
                reason,
            },
            Finding::RangeError {
                file,
                line,
                column,
                value,
            } => IngestError::Parse {
                file,
                line,
                column,
                reason: format!("{value} outside [0, 1]"),
            },
            Finding::ReferentialError { line, side, id } => IngestError::Referential { line, side, id },
            Finding::ConflictingNodeRow { line, side, id } => IngestError::ConflictingNodeRow { line, side, id },
            Finding::Warning { .. } => return None,
        })
    }
}

impl std::fmt::Display for Finding {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Finding::ParseError {
                file,
                line,
                column,
                reason,
            } => write!(f, "ParseError {file}:{line} [{column}]: {reason}"),
            Finding::RangeError {
                file,
                line,
                column,
                value,
            } => write!(f, "RangeError {file}:{line} [{column}]: {value} outside [0, 1]"),
            Finding::ReferentialError { line, side, id } => {
                write!(f, "ReferentialError edges:{line}: unknown {side} {id:?}")
            }
            Finding::ConflictingNodeRow { line, side, id } => {
                write!(f, "ConflictingNodeRow nodes:{line}: {side} {id:?}")
            }
            Finding::Warning { message } => write!(f, "Warning: {message}"),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct RowCounts {
    pub total: usize,
    pub accepted: usize,
    pub rejected: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
    pub node_rows: RowCounts,
    pub edge_rows: RowCounts,
}

impl ValidationReport {
    /// No errors and no warnings.
    pub fn is_clean(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn has_errors(&self) -> bool {
        self.findings.iter().any(|f| !f.is_warning())
    }

    pub fn has_parse_errors(&self) -> bool {
        self.findings
            .iter()
            .any(|f| matches!(f, Finding::ParseError { .. }))
    }
}

/// A validated node row.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeRecord {
    pub node_id: String,
    pub side: Side,
    pub city: String,
    pub attributes: AttributeSet,
    pub profile: Option<HostProfile>,
}

/// A validated edge row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeRecord {
    pub guest_id: String,
    pub host_id: String,
    pub weight: u64,
    pub city: String,
    pub property_type: PropertyType,
}

/// Per-slice totals in the hosts / guests / pairs layout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SliceCounts {
    pub slice: SliceKey,
    pub hosts: usize,
    pub guests: usize,
    pub pairs: usize,
    pub stays: u64,
}

impl SliceCounts {
    pub fn of(network: &BipartiteNetwork) -> Self {
        SliceCounts {
            slice: network.slice().clone(),
            hosts: network.hosts().len(),
            guests: network.guests().len(),
            pairs: network.edge_count(),
            stays: network.total_weight(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub networks: BTreeMap<SliceKey, BipartiteNetwork>,
    pub warnings: Vec<String>,
}

impl Dataset {
    pub fn counts(&self) -> Vec<SliceCounts> {
        self.networks.values().map(SliceCounts::of).collect()
    }
}

/// Markdown table of per-slice host, guest and pair counts.
pub fn counts_table(counts: &[SliceCounts]) -> String {
    let mut out = String::from("| City | Property | # Hosts | # Guests | # Host-Guest Pairs |\n");
    out.push_str("|---|---|---:|---:|---:|\n");
    for c in counts {
        out.push_str(&format!(
            "| {} | {} | {} | {} | {} |\n",
            c.slice.city, c.slice.property_type, c.hosts, c.guests, c.pairs
        ));
    }
    out
}

struct Parsed {
    nodes: HashMap<(Side, String), NodeRecord>,
    edges: Vec<EdgeRecord>,
    report: ValidationReport,
}

fn io_err(path: &Path, source: std::io::Error) -> IngestError {
    IngestError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn load_dataset(nodes_path: impl AsRef<Path>, edges_path: impl AsRef<Path>) -> Result<Dataset, IngestError> {
    let (np, ep) = (nodes_path.as_ref(), edges_path.as_ref());
    let nodes = File::open(np).map_err(|e| io_err(np, e))?;
    let edges = File::open(ep).map_err(|e| io_err(ep, e))?;
    load_dataset_from_readers(nodes, edges)
}

pub fn load_dataset_from_readers(nodes: impl Read, edges: impl Read) -> Result<Dataset, IngestError> {
    let parsed = parse(nodes, edges);
    let mut warnings = Vec::new();
    for finding in parsed.report.findings {
        match finding {
            Finding::Warning { message } => {
                log::warn!("{message}");
                warnings.push(message);
            }
            other => return Err(other.into_error().expect("non-warning finding")),
        }
    }

    let mut by_slice: BTreeMap<SliceKey, Vec<EdgeRecord>> = BTreeMap::new();
    for e in parsed.edges {
        by_slice
            .entry(SliceKey::new(e.city.clone(), e.property_type))
            .or_default()
            .push(e);
    }
    let mut networks = BTreeMap::new();
    for (slice, edges) in by_slice {
        let mut guests: Vec<&str> = edges.iter().map(|e| e.guest_id.as_str()).collect();
        let mut hosts: Vec<&str> = edges.iter().map(|e| e.host_id.as_str()).collect();
        guests.sort_unstable();
        guests.dedup();
        hosts.sort_unstable();
        hosts.dedup();
        let node = |side: Side, id: &str| {
            let r = &parsed.nodes[&(side, id.to_string())];
            NodeSpec {
                id: r.node_id.clone(),
                side,
                attributes: r.attributes,
                profile: r.profile,
            }
        };
        let nodes = guests
            .iter()
            .map(|g| node(Side::Guest, g))
            .chain(hosts.iter().map(|h| node(Side::Host, h)));
        let edge_specs = edges
            .iter()
            .map(|e| EdgeSpec::new(e.guest_id.as_str(), e.host_id.as_str(), e.weight as i64));
        let network = build_network(nodes, edge_specs, slice.clone())?;
        networks.insert(slice, network);
    }
    Ok(Dataset { networks, warnings })
}

/// Reads both files and lists every violation instead of stopping at the first.
pub fn validate_dataset(nodes: impl Read, edges: impl Read) -> ValidationReport {
    parse(nodes, edges).report
}

pub fn validate_files(nodes_path: impl AsRef<Path>, edges_path: impl AsRef<Path>) -> Result<ValidationReport, IngestError> {
    let (np, ep) = (nodes_path.as_ref(), edges_path.as_ref());
    let nodes = File::open(np).map_err(|e| io_err(np, e))?;
    let edges = File::open(ep).map_err(|e| io_err(ep, e))?;
    Ok(validate_dataset(nodes, edges))
}

struct RowParser<'a> {
    file: FileKind,
    line: u64,
    record: &'a csv::StringRecord,
    header: &'a [&'a str],
    findings: Vec<Finding>,
}

impl<'a> RowParser<'a> {
    fn field(&self, column: &str) -> &'a str {
        let i = self.header.iter().position(|c| *c == column).expect("known column");
        self.record.get(i).unwrap_or("").trim()
    }

    fn fail(&mut self, column: &str, reason: impl Into<String>) {
        self.findings.push(Finding::ParseError {
            file: self.file,
            line: self.line,
            column: column.to_string(),
            reason: reason.into(),
        });
    }

    fn required(&mut self, column: &str) -> Option<String> {
        let v = self.field(column);
        if v.is_empty() {
            self.fail(column, "required value is empty");
            None
        } else {
            Some(v.to_string())
        }
    }

    fn parse<T: std::str::FromStr>(&mut self, column: &str) -> Option<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.field(column);
        if v.is_empty() {
            return Some(None);
        }
        match v.parse::<T>() {
            Ok(x) => Some(Some(x)),
            Err(e) => {
                self.fail(column, format!("{v:?}: {e}"));
                None
            }
        }
    }

    fn confidence(&mut self, column: &str) -> f64 {
        match self.parse::<f64>(column) {
            Some(Some(c)) if (0.0..=1.0).contains(&c) => c,
            Some(Some(c)) => {
                self.findings.push(Finding::RangeError {
                    file: self.file,
                    line: self.line,
                    column: column.to_string(),
                    value: c,
                });
                0.0
            }
            _ => 0.0,
        }
    }
}

fn read_rows(
    reader: impl Read,
    file: FileKind,
    header: &[&str],
    findings: &mut Vec<Finding>,
) -> Vec<(u64, csv::StringRecord)> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    match rdr.headers() {
        Ok(h) if h.iter().map(str::trim).eq(header.iter().copied()) => {}
        Ok(h) => {
            findings.push(Finding::ParseError {
                file,
                line: 1,
                column: "header".into(),
                reason: format!("expected {:?}, got {:?}", header.join(","), h.iter().collect::<Vec<_>>().join(",")),
            });
            return Vec::new();
        }
        Err(e) => {
            findings.push(Finding::ParseError {
                file,
                line: 1,
                column: "header".into(),
                reason: e.to_string(),
            });
            return Vec::new();
        }
    }
    let mut rows = Vec::new();
    for result in rdr.records() {
        match result {
            Ok(record) => {
                let line = record.position().map(|p| p.line()).unwrap_or(0);
                rows.push((line, record));
            }
            Err(e) => {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                findings.push(Finding::ParseError {
                    file,
                    line,
                    column: "record".into(),
                    reason: e.to_string(),
                });
            }
        }
    }
    rows
}

fn parse(nodes: impl Read, edges: impl Read) -> Parsed {
    let mut report = ValidationReport::default();
    let mut node_map: HashMap<(Side, String), NodeRecord> = HashMap::new();

    let node_rows = read_rows(nodes, FileKind::Nodes, &NODES_HEADER, &mut report.findings);
    report.node_rows.total = node_rows.len();
    for (line, record) in &node_rows {
        let mut p = RowParser {
            file: FileKind::Nodes,
            line: *line,
            record,
            header: &NODES_HEADER,
            findings: Vec::new(),
        };
        if record.len() != NODES_HEADER.len() {
            p.fail("record", format!("expected {} fields, found {}", NODES_HEADER.len(), record.len()));
        }
        let node = parse_node(&mut p);
        let mut findings = p.findings;
        if let (Some(node), true) = (node, findings.is_empty()) {
            let key = (node.side, node.node_id.clone());
            match node_map.get(&key) {
                Some(prev) if prev.attributes != node.attributes || prev.profile != node.profile => {
                    findings.push(Finding::ConflictingNodeRow {
                        line: *line,
                        side: node.side,
                        id: node.node_id.clone(),
                    });
                }
                Some(_) => {}
                None => {
                    node_map.insert(key, node);
                }
            }
        }
        if findings.is_empty() {
            report.node_rows.accepted += 1;
        } else {
            report.node_rows.rejected += 1;
            report.findings.extend(findings);
        }
    }

    let mut edge_list = Vec::new();
    let edge_rows = read_rows(edges, FileKind::Edges, &EDGES_HEADER, &mut report.findings);
    report.edge_rows.total = edge_rows.len();
    for (line, record) in &edge_rows {
        let mut p = RowParser {
            file: FileKind::Edges,
            line: *line,
            record,
            header: &EDGES_HEADER,
            findings: Vec::new(),
        };
        if record.len() != EDGES_HEADER.len() {
            p.fail("record", format!("expected {} fields, found {}", EDGES_HEADER.len(), record.len()));
        }
        let edge = parse_edge(&mut p);
        let mut findings = p.findings;
        if let Some(edge) = edge.filter(|_| findings.is_empty()) {
            for (side, id) in [(Side::Guest, &edge.guest_id), (Side::Host, &edge.host_id)] {
                if !node_map.contains_key(&(side, id.clone())) {
                    findings.push(Finding::ReferentialError {
                        line: *line,
                        side,
                        id: id.clone(),
                    });
                }
            }
            if findings.is_empty() {
                edge_list.push(edge);
            }
        }
        if findings.is_empty() {
            report.edge_rows.accepted += 1;
        } else {
            report.edge_rows.rejected += 1;
            report.findings.extend(findings);
        }
    }
    if report.edge_rows.total == 0 {
        report.findings.push(Finding::Warning {
            message: "edge file has no rows".into(),
        });
    }

    Parsed {
        nodes: node_map,
        edges: edge_list,
        report,
    }
}

fn parse_node(p: &mut RowParser<'_>) -> Option<NodeRecord> {
    let node_id = p.required("node_id");
    let side = p.required("side").and_then(|s| match s.parse::<Side>() {
        Ok(side) => Some(side),
        Err(e) => {
            p.fail("side", e);
            None
        }
    });
    let city = p.field("city").to_string();
    let gender = p.parse::<Gender>("gender").map(Option::unwrap_or_default);
    let race = p.parse::<Race>("race").map(Option::unwrap_or_default);
    let gender_conf = p.confidence("gender_conf");
    let race_conf = p.confidence("race_conf");
    let age_years = p.parse::<u32>("age_years");
    let age_conf = p.confidence("age_conf");
    let num_properties = p.parse::<u32>("num_properties");
    let weekly_price = p.parse::<f64>("weekly_price");

    let profile = match (num_properties, weekly_price) {
        (Some(None), Some(None)) => None,
        (Some(Some(n)), Some(Some(price))) => {
            if n == 0 {
                p.fail("num_properties", "must be positive");
            }
            if !(price.is_finite() && price > 0.0) {
                p.fail("weekly_price", "must be positive");
            }
            Some(HostProfile {
                num_properties: n,
                weekly_price: price,
            })
        }
        (Some(_), Some(_)) => {
            p.fail("num_properties", "num_properties and weekly_price must be given together");
            None
        }
        _ => None,
    };
    if side == Some(Side::Guest) && profile.is_some() {
        p.fail("weekly_price", "host profile columns must be empty for guests");
    }

    Some(NodeRecord {
        node_id: node_id?,
        side: side?,
        city,
        attributes: AttributeSet {
            gender: gender?,
            gender_conf,
            race: race?,
            race_conf,
            age_years: age_years?,
            age_conf,
        },
        profile,
    })
}

fn parse_edge(p: &mut RowParser<'_>) -> Option<EdgeRecord> {
    let guest_id = p.required("guest_id");
    let host_id = p.required("host_id");
    let weight = match p.parse::<i64>("weight") {
        Some(None) => Some(1),
        Some(Some(w)) if w >= 1 => Some(w as u64),
        Some(Some(w)) => {
            p.fail("weight", format!("{w} is not a positive integer"));
            None
        }
        None => None,
    };
    let city = p.required("city");
    let property_type = p.required("property_type").and_then(|s| match s.parse::<PropertyType>() {
        Ok(t) => Some(t),
        Err(e) => {
            p.fail("property_type", e);
            None
        }
    });
    Some(EdgeRecord {
        guest_id: guest_id?,
        host_id: host_id?,
        weight: weight?,
        city: city?,
        property_type: property_type?,
    })
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes networks back in the two-file CSV layout.
///
/// A node present in several slices is written once, with the city of the
/// first slice (in slice order) that contains it.
pub fn write_dataset<'a>(
    networks: impl IntoIterator<Item = &'a BipartiteNetwork>,
    nodes: impl Write,
    edges: impl Write,
) -> Result<(), IngestError> {
    let mut nw = csv::Writer::from_writer(nodes);
    let mut ew = csv::Writer::from_writer(edges);
    nw.write_record(NODES_HEADER)?;
    ew.write_record(EDGES_HEADER)?;
    let mut written: std::collections::HashSet<(Side, String)> = std::collections::HashSet::new();
    for net in networks {
        let city = &net.slice().city;
        let rows = net
            .guests()
            .iter()
            .map(|g| (Side::Guest, &g.id, &g.attributes, None))
            .chain(net.hosts().iter().map(|h| (Side::Host, &h.id, &h.attributes, h.profile)));
        for (side, id, a, profile) in rows {
            if !written.insert((side, id.as_str().to_string())) {
                continue;
            }
            nw.write_record([
                id.as_str().to_string(),
                side.to_string(),
                city.clone(),
                a.gender.code().to_string(),
                a.gender_conf.to_string(),
                a.race.code().to_string(),
                a.race_conf.to_string(),
                opt(a.age_years),
                a.age_conf.to_string(),
                opt(profile.map(|p| p.num_properties)),
                opt(profile.map(|p| p.weekly_price)),
            ])?;
        }
        for e in net.edges() {
            ew.write_record([
                net.guests()[e.guest].id.as_str(),
                net.hosts()[e.host].id.as_str(),
                &e.weight.to_string(),
                city,
                &net.slice().property_type.to_string(),
            ])?;
        }
    }
    nw.flush().map_err(|e| IngestError::Io {
        path: "nodes".into(),
        source: e,
    })?;
    ew.flush().map_err(|e| IngestError::Io {
        path: "edges".into(),
        source: e,
    })?;
    Ok(())
}
