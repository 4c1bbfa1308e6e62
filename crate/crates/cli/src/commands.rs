use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use pairnull::ingest::{counts_table, load_dataset, validate_files, Dataset, IngestError, SliceCounts};
use pairnull::report::{
    compare_reports, csv_rows, delta_markdown, demography_markdown, markdown_matrix, markdown_wide, DeltaRow,
    TOOL_NAME, TOOL_VERSION,
};
use pairnull::robustness::{
    annotated_counts, eligible_hosts, matched_pair_markdown, matched_pairs, rate_t_test, MatchedPair,
    PerturbationLog, RateTally, BASELINE_MIN_CONF,
};
use pairnull::synth::{generate, SynthSpec};
use pairnull::{
    analyze_network, demography_summary, perturb_labels, tercile_filter, AnalysisConfig, Attribute,
    BipartiteNetwork, ExpressionReport, MatchConfig, MatchedPairResult, PerturbationSpec, Race, RobustnessError,
    SliceKey,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::manifest::{Format, RunManifest};
use crate::UsageError;

pub fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .context("building thread pool")?;
    pool.install(f)
}

fn ingest_error(e: IngestError) -> anyhow::Error {
    match e {
        IngestError::Parse { .. } | IngestError::Csv(_) | IngestError::Io { .. } => UsageError(e.to_string()).into(),
        other => anyhow::Error::new(other),
    }
}

fn load(m: &RunManifest) -> Result<Vec<BipartiteNetwork>> {
    let Dataset { networks, .. } = load_dataset(&m.nodes, &m.edges).map_err(ingest_error)?;
    let selected: Vec<BipartiteNetwork> = networks.into_values().filter(|n| m.selects(n.slice())).collect();
    if selected.is_empty() {
        anyhow::bail!("no slice matches the requested cities and property types");
    }
    Ok(selected)
}

fn slug(slice: &SliceKey) -> String {
    let city: String = slice
        .city
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect();
    format!("{city}_{}", slice.property_type)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

/// Header every non-report output carries.
#[derive(Serialize)]
struct Stamped<'a, T: Serialize> {
    tool: &'static str,
    version: &'static str,
    manifest: &'a serde_json::Value,
    #[serde(flatten)]
    body: T,
}

fn stamped<'a, T: Serialize>(manifest: &'a serde_json::Value, body: T) -> Stamped<'a, T> {
    Stamped {
        tool: TOOL_NAME,
        version: TOOL_VERSION,
        manifest,
        body,
    }
}

pub fn validate(nodes: &Path, edges: &Path, out: Option<&Path>) -> Result<u8> {
    let report = validate_files(nodes, edges).map_err(ingest_error)?;
    for f in &report.findings {
        println!("{f}");
    }
    println!(
        "nodes: {} rows, {} rejected; edges: {} rows, {} rejected",
        report.node_rows.total, report.node_rows.rejected, report.edge_rows.total, report.edge_rows.rejected
    );
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        write(&dir.join("validation.json"), to_json(&report))?;
    }
    Ok(if report.has_parse_errors() {
        2
    } else if report.is_clean() {
        0
    } else {
        1
    })
}

fn analysis_config(m: &RunManifest, attribute: Attribute, min_conf: f64) -> AnalysisConfig {
    AnalysisConfig {
        attribute,
        min_conf,
        mode: m.mode,
        rewire: m.rewire.clone(),
        level: m.level,
    }
}

/// Analyses every (network, attribute) pair; failures are reported and skipped.
fn run_all(
    m: &RunManifest,
    networks: &[&BipartiteNetwork],
    attributes: &[Attribute],
    min_conf: f64,
) -> (Vec<ExpressionReport>, Vec<String>) {
    let manifest = serde_json::to_value(m).expect("manifest serializes");
    let tasks: Vec<(&BipartiteNetwork, Attribute)> = networks
        .iter()
        .flat_map(|n| attributes.iter().map(move |a| (*n, *a)))
        .collect();
    let results: Vec<_> = tasks
        .par_iter()
        .map(|(net, a)| analyze_network(net, &analysis_config(m, *a, min_conf)))
        .collect();
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(mut report) => {
                report.manifest = Some(manifest.clone());
                reports.push(report);
            }
            Err(e) => {
                log::error!("{e}");
                failures.push(e.to_string());
            }
        }
    }
    (reports, failures)
}

/// Trailer for markdown outputs; the full manifest sits in `manifest.json`.
fn md_stamp(seed: Option<u64>) -> String {
    match seed {
        Some(s) => format!("\n<!-- {TOOL_NAME} {TOOL_VERSION}, master seed {s}, manifest in manifest.json -->\n"),
        None => format!("\n<!-- {TOOL_NAME} {TOOL_VERSION} -->\n"),
    }
}

fn write_reports(dir: &Path, reports: &[ExpressionReport], formats: &[Format], stamp: &str) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for r in reports {
        let stem = format!("{}_{}", slug(&r.slice), r.attribute);
        if formats.contains(&Format::Json) {
            write(&dir.join(format!("{stem}.json")), to_json(r))?;
        }
        if formats.contains(&Format::Md) {
            write(&dir.join(format!("{stem}.md")), markdown_matrix(r) + stamp)?;
        }
    }
    write_summaries(dir, reports, formats, stamp)
}

fn write_summaries(dir: &Path, reports: &[ExpressionReport], formats: &[Format], stamp: &str) -> Result<()> {
    let mut by_attribute: BTreeMap<Attribute, Vec<&ExpressionReport>> = BTreeMap::new();
    for r in reports {
        by_attribute.entry(r.attribute).or_default().push(r);
    }
    if formats.contains(&Format::Md) {
        for (attribute, group) in &by_attribute {
            write(&dir.join(format!("summary_{attribute}.md")), markdown_wide(group) + stamp)?;
        }
    }
    if formats.contains(&Format::Csv) {
        let all: Vec<&ExpressionReport> = reports.iter().collect();
        write(&dir.join("reports.csv"), csv_rows(&all))?;
    }
    Ok(())
}

pub fn analyze(m: &RunManifest) -> Result<u8> {
    let networks = load(m)?;
    let refs: Vec<&BipartiteNetwork> = networks.iter().collect();
    let (reports, failures) = run_all(m, &refs, &m.attributes, m.min_conf);
    let stamp = md_stamp(Some(m.rewire.master_seed));
    write_reports(&m.out, &reports, &m.formats, &stamp)?;
    write(&m.out.join("manifest.json"), to_json(m))?;
    if m.wants(Format::Md) {
        let counts: Vec<SliceCounts> = networks.iter().map(SliceCounts::of).collect();
        let mut md = String::from("## Slices\n\n");
        md.push_str(&counts_table(&counts));
        let demography = networks
            .iter()
            .map(|n| demography_summary(n, m.min_conf))
            .collect::<Result<Vec<_>, _>>()?;
        for a in [Attribute::Gender, Attribute::Race] {
            md.push_str(&format!("\n## {a}\n\n"));
            md.push_str(&demography_markdown(&demography, a));
        }
        write(&m.out.join("dataset.md"), md + &stamp)?;
    }
    for f in &failures {
        eprintln!("error: {f}");
    }
    println!("{} reports written to {}", reports.len(), m.out.display());
    Ok(if failures.is_empty() { 0 } else { 1 })
}

pub enum Robustness {
    Confidence { threshold: f64 },
    Perturb { fraction: f64, seed: u64 },
    Tercile,
}

#[derive(Serialize)]
struct TercileSummary {
    slice: SliceKey,
    lower_price: f64,
    upper_price: f64,
    degenerate: bool,
    before: SliceCounts,
    after: SliceCounts,
}

#[derive(Serialize)]
struct RobustnessOutput<'a, T: Serialize> {
    procedure: &'static str,
    details: T,
    deltas: &'a [DeltaRow],
}

pub fn robustness(m: &RunManifest, procedure: Robustness) -> Result<u8> {
    let networks = load(m)?;
    let base_refs: Vec<&BipartiteNetwork> = networks.iter().collect();
    let manifest = serde_json::to_value(m).expect("manifest serializes");
    fs::create_dir_all(&m.out)?;
    let (name, baseline, variant, failures, details, extra_md) = match procedure {
        Robustness::Confidence { threshold } => {
            let (baseline, mut failures) = run_all(m, &base_refs, &m.attributes, BASELINE_MIN_CONF);
            let (variant, f2) = run_all(m, &base_refs, &m.attributes, threshold);
            failures.extend(f2);
            let before: Vec<SliceCounts> = networks.iter().map(|n| annotated_counts(n, BASELINE_MIN_CONF)).collect();
            let after: Vec<SliceCounts> = networks.iter().map(|n| annotated_counts(n, threshold)).collect();
            let md = format!(
                "## Annotated at confidence ≥ {BASELINE_MIN_CONF}\n\n{}\n## Annotated at confidence ≥ {threshold}\n\n{}",
                counts_table(&before),
                counts_table(&after)
            );
            let details = serde_json::json!({
                "baseline_min_conf": BASELINE_MIN_CONF,
                "threshold": threshold,
                "baseline_counts": before,
                "variant_counts": after,
            });
            ("confidence", baseline, variant, failures, details, md)
        }
        Robustness::Perturb { fraction, seed } => {
            let spec = PerturbationSpec {
                fraction,
                seed,
                ..PerturbationSpec::default()
            };
            let mut perturbed = Vec::new();
            let mut logs: Vec<(SliceKey, PerturbationLog)> = Vec::new();
            for n in &networks {
                match perturb_labels(n, &spec) {
                    Ok((p, log)) => {
                        logs.push((n.slice().clone(), log));
                        perturbed.push(p);
                    }
                    Err(RobustnessError::EmptySourceGroup(_)) => {
                        log::warn!("{}: no White users to relabel", n.slice());
                        perturbed.push(n.clone());
                    }
                    Err(e) => return Err(e.into()),
                }
            }
            let var_refs: Vec<&BipartiteNetwork> = perturbed.iter().collect();
            let attrs = [Attribute::Race];
            let (baseline, mut failures) = run_all(m, &base_refs, &attrs, m.min_conf);
            let (variant, f2) = run_all(m, &var_refs, &attrs, m.min_conf);
            failures.extend(f2);
            let mut md = String::from("| Slice | White users | Relabeled | to Black | to Asian |\n|---|---:|---:|---:|---:|\n");
            for (slice, log) in &logs {
                let black = log.relabeled.iter().filter(|r| r.to == Race::Black).count();
                md.push_str(&format!(
                    "| {slice} | {} | {} | {black} | {} |\n",
                    log.source_count,
                    log.relabeled.len(),
                    log.relabeled.len() - black
                ));
            }
            for (slice, log) in &logs {
                println!("{slice}: relabeled {} of {} White users", log.relabeled.len(), log.source_count);
            }
            let details = serde_json::json!({ "spec": spec, "relabels": logs.iter().map(|(s, l)| serde_json::json!({"slice": s, "log": l})).collect::<Vec<_>>() });
            ("perturb", baseline, variant, failures, details, md)
        }
        Robustness::Tercile => {
            let mut filtered = Vec::new();
            let mut summaries = Vec::new();
            for n in &networks {
                let f = tercile_filter(n)?;
                summaries.push(TercileSummary {
                    slice: n.slice().clone(),
                    lower_price: f.band.lower,
                    upper_price: f.band.upper,
                    degenerate: f.degenerate,
                    before: SliceCounts::of(n),
                    after: SliceCounts::of(&f.network),
                });
                filtered.push(f.network);
            }
            let var_refs: Vec<&BipartiteNetwork> = filtered.iter().collect();
            let (baseline, mut failures) = run_all(m, &base_refs, &m.attributes, m.min_conf);
            let (variant, f2) = run_all(m, &var_refs, &m.attributes, m.min_conf);
            failures.extend(f2);
            let mut md = String::from("| Slice | Price band | Hosts before | Hosts after |\n|---|---|---:|---:|\n");
            for s in &summaries {
                md.push_str(&format!(
                    "| {} | [{}; {}] | {} | {} |\n",
                    s.slice, s.lower_price, s.upper_price, s.before.hosts, s.after.hosts
                ));
            }
            ("tercile", baseline, variant, failures, serde_json::to_value(&summaries)?, md)
        }
    };
    let deltas = compare_reports(&baseline, &variant);
    let dir = m.out.join(name);
    let stamp = md_stamp(Some(m.rewire.master_seed));
    write_reports(&dir.join("baseline"), &baseline, &m.formats, &stamp)?;
    write_reports(&dir.join("variant"), &variant, &m.formats, &stamp)?;
    write(&m.out.join("manifest.json"), to_json(m))?;
    let output = RobustnessOutput {
        procedure: name,
        details,
        deltas: &deltas,
    };
    write(&m.out.join(format!("{name}.json")), to_json(&stamped(&manifest, output)))?;
    if m.wants(Format::Md) {
        let md = format!("{extra_md}\n## Label changes\n\n{}{stamp}", delta_markdown(&deltas));
        write(&m.out.join(format!("{name}.md")), md)?;
    }
    let changed = deltas.iter().filter(|d| d.changed()).count();
    println!("{name}: {changed} of {} labels changed", deltas.len());
    for f in &failures {
        eprintln!("error: {f}");
    }
    Ok(if failures.is_empty() { 0 } else { 1 })
}

#[derive(Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
enum MatchOutcome {
    Tested(MatchedPairResult),
    /// Pairs were found but too few to test.
    Untested { slice: SliceKey, pairs: Vec<MatchedPair>, reason: String },
    Failed { slice: SliceKey, reason: String },
}

fn match_slice(network: &BipartiteNetwork, config: &MatchConfig) -> MatchOutcome {
    let slice = network.slice().clone();
    let (eligible, tallies) = eligible_hosts(network, config.min_conf);
    let pairs = match matched_pairs(&eligible, config.caliper) {
        Ok(p) => p,
        Err(e) => {
            return MatchOutcome::Failed {
                slice,
                reason: e.to_string(),
            }
        }
    };
    let pair_tallies: Vec<(RateTally, RateTally)> = pairs
        .iter()
        .map(|p| (tallies[&p.white_host], tallies[&p.nonwhite_host]))
        .collect();
    match rate_t_test(slice.clone(), pairs.clone(), &pair_tallies, config.weighting) {
        Ok(r) => MatchOutcome::Tested(r),
        Err(e) => MatchOutcome::Untested {
            slice,
            pairs,
            reason: e.to_string(),
        },
    }
}

pub fn matchpair(m: &RunManifest, config: &MatchConfig) -> Result<u8> {
    let networks = load(m)?;
    let outcomes: Vec<MatchOutcome> = networks.par_iter().map(|n| match_slice(n, config)).collect();
    let manifest = serde_json::to_value(m).expect("manifest serializes");
    fs::create_dir_all(&m.out)?;
    #[derive(Serialize)]
    struct Body<'a> {
        matching: &'a MatchConfig,
        results: &'a [MatchOutcome],
    }
    let body = Body {
        matching: config,
        results: &outcomes,
    };
    write(&m.out.join("matchpair.json"), to_json(&stamped(&manifest, body)))?;
    write(&m.out.join("manifest.json"), to_json(m))?;
    let tested: Vec<MatchedPairResult> = outcomes
        .iter()
        .filter_map(|o| match o {
            MatchOutcome::Tested(r) => Some(r.clone()),
            _ => None,
        })
        .collect();
    if m.wants(Format::Md) {
        write(&m.out.join("matchpair.md"), matched_pair_markdown(&tested) + &md_stamp(None))?;
    }
    let mut failed = false;
    for o in &outcomes {
        match o {
            MatchOutcome::Tested(r) => println!("{}: {} pairs, p = {:.4}", r.slice, r.n_pairs, r.p_value),
            MatchOutcome::Untested { slice, pairs, reason } => {
                failed = true;
                println!("{slice}: {} pairs, not tested ({reason})", pairs.len());
            }
            MatchOutcome::Failed { slice, reason } => {
                failed = true;
                println!("{slice}: {reason}");
            }
        }
    }
    Ok(if failed { 1 } else { 0 })
}

#[derive(Serialize)]
struct SynthManifest<'a> {
    tool: &'static str,
    version: &'static str,
    spec: &'a SynthSpec,
    counts: SliceCounts,
    files: [&'static str; 3],
}

pub fn synth(spec_path: Option<&Path>, seed: Option<u64>, out: &Path) -> Result<u8> {
    let mut spec: SynthSpec = match spec_path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| UsageError(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| UsageError(format!("{}: {e}", p.display())))?
        }
        None => SynthSpec::default(),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    let (network, truth) = generate(&spec).map_err(|e| UsageError(e.to_string()))?;
    fs::create_dir_all(out)?;
    let nodes = fs::File::create(out.join("nodes.csv"))?;
    let edges = fs::File::create(out.join("edges.csv"))?;
    pairnull::ingest::write_dataset([&network], nodes, edges)?;
    write(&out.join("truth.json"), to_json(&truth))?;
    let counts = SliceCounts::of(&network);
    println!(
        "{}: {} guests, {} hosts, {} pairs, {} stays",
        counts.slice, counts.guests, counts.hosts, counts.pairs, counts.stays
    );
    let manifest = SynthManifest {
        tool: TOOL_NAME,
        version: TOOL_VERSION,
        spec: &spec,
        counts,
        files: ["nodes.csv", "edges.csv", "truth.json"],
    };
    write(&out.join("synth_manifest.json"), to_json(&manifest))?;
    Ok(0)
}

pub fn report(input: &Path, out: &Path, formats: &[Format]) -> Result<u8> {
    let mut paths: Vec<PathBuf> = fs::read_dir(input)
        .map_err(|e| UsageError(format!("{}: {e}", input.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let mut reports = Vec::new();
    for p in paths {
        let text = fs::read_to_string(&p)?;
        if let Ok(r) = serde_json::from_str::<ExpressionReport>(&text) {
            reports.push(r);
        }
    }
    if reports.is_empty() {
        return Err(UsageError(format!("no JSON reports in {}", input.display())).into());
    }
    fs::create_dir_all(out)?;
    write_summaries(out, &reports, formats, &md_stamp(Some(reports[0].metadata.master_seed)))?;
    println!("{} reports summarized in {}", reports.len(), out.display());
    Ok(0)
}
