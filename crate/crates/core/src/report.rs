//! Expression reports: JSON model plus markdown and CSV renderings.
//!
//! Percentages are rendered with two decimals, intervals as
//! `[lower; upper]%`, and labels as ↑ (over), ↓ (under) or — (compatible).

use serde::{Deserialize, Serialize};

use crate::graph::SliceKey;
use crate::pairing::{classify, CountMode, Demography, ExpressionLabel, IntervalEstimate};
use crate::rewire::SwapKernel;
use crate::view::Attribute;

pub const TOOL_NAME: &str = "pairnull";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRow {
    pub guest_group: String,
    pub host_group: String,
    pub observed: f64,
    pub observed_count: u64,
    pub interval: IntervalEstimate,
    pub label: ExpressionLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleMetadata {
    pub n_configs: usize,
    pub master_seed: u64,
    pub burn_in_swaps: u64,
    pub burn_in_calibrated: bool,
    pub burn_in_converged: bool,
    pub thinning_swaps: Option<u64>,
    pub kernel: SwapKernel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpressionReport {
    pub tool: String,
    pub version: String,
    pub slice: SliceKey,
    pub attribute: Attribute,
    pub mode: CountMode,
    pub min_conf: f64,
    pub total_weight_counted: u64,
    pub pairs: Vec<PairRow>,
    pub metadata: EnsembleMetadata,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<serde_json::Value>,
}

/// Observed values and null intervals for one (slice, attribute), in row-major cell order.
#[derive(Debug, Clone)]
pub struct ReportInputs<'a> {
    pub slice: SliceKey,
    pub attribute: Attribute,
    pub mode: CountMode,
    pub min_conf: f64,
    pub labels: &'a [String],
    pub observed: &'a [f64],
    pub observed_counts: &'a [u64],
    pub total_weight_counted: u64,
    pub intervals: &'a [IntervalEstimate],
    pub metadata: EnsembleMetadata,
}

impl ExpressionReport {
    /// Classifies every cell and assembles the report.
    pub fn build(inputs: ReportInputs<'_>) -> Self {
        let n = inputs.labels.len();
        assert_eq!(inputs.observed.len(), n * n);
        assert_eq!(inputs.intervals.len(), n * n);
        let pairs = (0..n * n)
            .map(|c| PairRow {
                guest_group: inputs.labels[c / n].clone(),
                host_group: inputs.labels[c % n].clone(),
                observed: inputs.observed[c],
                observed_count: inputs.observed_counts.get(c).copied().unwrap_or(0),
                interval: inputs.intervals[c],
                label: classify(inputs.observed[c], &inputs.intervals[c]),
            })
            .collect();
        ExpressionReport {
            tool: TOOL_NAME.into(),
            version: TOOL_VERSION.into(),
            slice: inputs.slice,
            attribute: inputs.attribute,
            mode: inputs.mode,
            min_conf: inputs.min_conf,
            total_weight_counted: inputs.total_weight_counted,
            pairs,
            metadata: inputs.metadata,
            manifest: None,
        }
    }

    pub fn row(&self, guest_group: &str, host_group: &str) -> Option<&PairRow> {
        self.pairs
            .iter()
            .find(|p| p.guest_group == guest_group && p.host_group == host_group)
    }

    fn groups(&self) -> Vec<&str> {
        let mut g: Vec<&str> = Vec::new();
        for p in &self.pairs {
            if !g.contains(&p.guest_group.as_str()) {
                g.push(&p.guest_group);
            }
        }
        g
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

pub fn pct(x: f64) -> String {
    format!("{:.2}%", x * 100.0)
}

pub fn interval_cell(iv: &IntervalEstimate) -> String {
    format!("[{:.2}; {:.2}]%", iv.lower * 100.0, iv.upper * 100.0)
}

pub fn observed_cell(row: &PairRow) -> String {
    format!("{} {}", pct(row.observed), row.label.marker())
}

/// One row per report, two columns (interval, observed) per group pair.
pub fn markdown_wide(reports: &[&ExpressionReport]) -> String {
    let Some(first) = reports.first() else {
        return String::new();
    };
    let mut out = String::from("| Slice |");
    let mut rule = String::from("|---|");
    for p in &first.pairs {
        let pair = format!("{}{}", p.guest_group, p.host_group);
        out.push_str(&format!(" {pair} 95% interval | {pair} observed |"));
        rule.push_str("---|---|");
    }
    out.push('\n');
    out.push_str(&rule);
    out.push('\n');
    for r in reports {
        out.push_str(&format!("| {} |", r.slice));
        for p in &r.pairs {
            out.push_str(&format!(" {} | {} |", interval_cell(&p.interval), observed_cell(p)));
        }
        out.push('\n');
    }
    out
}

/// Guest groups down, host groups across; interval row above observed row.
pub fn markdown_matrix(report: &ExpressionReport) -> String {
    let groups = report.groups();
    let mut out = format!("| {} |", report.slice);
    let mut rule = String::from("|---|");
    for g in &groups {
        out.push_str(&format!(" {g} |"));
        rule.push_str("---|");
    }
    out.push('\n');
    out.push_str(&rule);
    out.push('\n');
    for g in &groups {
        let rows: Vec<&PairRow> = report.pairs.iter().filter(|p| p.guest_group == *g).collect();
        out.push_str(&format!("| {g} |"));
        for p in &rows {
            out.push_str(&format!(" {} |", interval_cell(&p.interval)));
        }
        out.push_str("\n|  |");
        for p in &rows {
            out.push_str(&format!(" {} |", observed_cell(p)));
        }
        out.push('\n');
    }
    out
}

pub fn csv_rows(reports: &[&ExpressionReport]) -> String {
    let mut out = String::from("city,property_type,attribute,guest_group,host_group,observed,lower,upper,label\n");
    for r in reports {
        for p in &r.pairs {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.slice.city,
                r.slice.property_type,
                r.attribute,
                p.guest_group,
                p.host_group,
                p.observed,
                p.interval.lower,
                p.interval.upper,
                p.label
            ));
        }
    }
    out
}

/// Host and guest shares per slice for one attribute.
pub fn demography_markdown(rows: &[Demography], attribute: Attribute) -> String {
    let Some(labels) = rows
        .iter()
        .find_map(|d| d.get(attribute))
        .map(|s| s.labels.clone())
    else {
        return String::new();
    };
    let mut out = String::from("| Slice |");
    let mut rule = String::from("|---|");
    for side in ["Host", "Guest"] {
        for l in &labels {
            out.push_str(&format!(" {l} {side} |"));
            rule.push_str("---:|");
        }
    }
    out.push('\n');
    out.push_str(&rule);
    out.push('\n');
    for d in rows {
        let Some(shares) = d.get(attribute) else { continue };
        out.push_str(&format!("| {} |", d.slice));
        for values in [shares.host_shares(), shares.guest_shares()] {
            for i in 0..labels.len() {
                let v = values.get(i).copied().unwrap_or(0.0);
                out.push_str(&format!(" {:.0}% |", v * 100.0));
            }
        }
        out.push('\n');
    }
    out
}

/// Label changes between two runs over the same slices and attributes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeltaRow {
    pub slice: SliceKey,
    pub attribute: Attribute,
    pub guest_group: String,
    pub host_group: String,
    pub baseline_observed: f64,
    pub variant_observed: f64,
    pub baseline_label: ExpressionLabel,
    pub variant_label: ExpressionLabel,
}

impl DeltaRow {
    pub fn changed(&self) -> bool {
        self.baseline_label != self.variant_label
    }
}

pub fn compare_reports(baseline: &[ExpressionReport], variant: &[ExpressionReport]) -> Vec<DeltaRow> {
    let mut out = Vec::new();
    for b in baseline {
        let Some(v) = variant
            .iter()
            .find(|v| v.slice == b.slice && v.attribute == b.attribute)
        else {
            continue;
        };
        for p in &b.pairs {
            if let Some(q) = v.row(&p.guest_group, &p.host_group) {
                out.push(DeltaRow {
                    slice: b.slice.clone(),
                    attribute: b.attribute,
                    guest_group: p.guest_group.clone(),
                    host_group: p.host_group.clone(),
                    baseline_observed: p.observed,
                    variant_observed: q.observed,
                    baseline_label: p.label,
                    variant_label: q.label,
                });
            }
        }
    }
    out
}

pub fn delta_markdown(rows: &[DeltaRow]) -> String {
    let mut out = String::from("| Slice | Attribute | Pair | Baseline | Variant | Changed |\n|---|---|---|---|---|---|\n");
    for r in rows {
        out.push_str(&format!(
            "| {} | {} | {}{} | {} {} | {} {} | {} |\n",
            r.slice,
            r.attribute,
            r.guest_group,
            r.host_group,
            pct(r.baseline_observed),
            r.baseline_label.marker(),
            pct(r.variant_observed),
            r.variant_label.marker(),
            if r.changed() { "yes" } else { "no" }
        ));
    }
    out
}
