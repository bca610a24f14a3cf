//! Simulated guided teaching: one trial per (rule, source, initial point),
//! replaying demonstrations from a pre-built bank.

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::guidance::{is_done, EntropyWeights, GuidanceRule, GuidanceState, RuleRegistry};
use crate::metrics::{efficacy, summarize, GroupSummary, SuiteSummary, TrialRecord};
use crate::planner::DemoBank;
use crate::task::{evaluate_model, TaskSpec};
use crate::tpgmm::{DemoSource, Demonstration, TpGmm, TpGmmOptions};

pub const DEFAULT_MAX_DEMOS: usize = 20;
pub const DEFAULT_SEED: u64 = 7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: PathBuf,
    pub bank: Option<PathBuf>,
    pub rules: Vec<String>,
    pub sources: Vec<DemoSource>,
    pub max_demos: usize,
    /// Seeds the learner and the bootstrap.
    pub seed: u64,
    pub out: PathBuf,
    pub weights: EntropyWeights,
    pub learner: TpGmmOptions,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            task: PathBuf::from("tasks/training.toml"),
            bank: None,
            rules: vec!["entropy".into(), "heuristic".into()],
            sources: vec![DemoSource::Planner],
            max_demos: DEFAULT_MAX_DEMOS,
            seed: DEFAULT_SEED,
            out: PathBuf::from("out"),
            weights: EntropyWeights::default(),
            learner: TpGmmOptions::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rules.is_empty() || self.sources.is_empty() {
            return Err(Error::Config("rules and sources must be non-empty".into()));
        }
        if self.max_demos == 0 {
            return Err(Error::Config("max_demos must be positive".into()));
        }
        Ok(())
    }

    fn learner_options(&self) -> TpGmmOptions {
        let mut opts = self.learner.clone();
        opts.em.seed = self.seed;
        opts
    }
}

/// Runs one guided teaching loop starting at `initial`.
pub fn run_trial(
    rule: &dyn GuidanceRule,
    source: DemoSource,
    initial: usize,
    spec: &TaskSpec,
    bank: &BTreeMap<usize, Demonstration>,
    cfg: &ExperimentConfig,
) -> Result<TrialRecord> {
    let opts = cfg.learner_options();
    let mut state = GuidanceState::for_task(spec, initial, cfg.weights)?;
    let mut demos = Vec::new();
    let mut trace = Vec::new();
    let mut converged = false;
    while demos.len() < cfg.max_demos {
        let next = match rule.next(&state) {
            Ok(i) => i,
            Err(Error::Exhausted) => break,
            Err(e) => return Err(e),
        };
        let demo = bank.get(&next).ok_or_else(|| Error::MissingDemonstration(next, source.to_string()))?;
        state.record_demo(next)?;
        demos.push(demo.clone());
        let model = TpGmm::fit_with(&demos, &opts)?;
        let eval = evaluate_model(&model, spec)?;
        trace.push(efficacy(&eval)?);
        state.set_evaluation(eval)?;
        if is_done(&state, &spec.criteria) {
            converged = true;
            break;
        }
    }
    TrialRecord::new(rule.name(), source, initial, state.history().to_vec(), trace, converged)
}

/// One trial per grid point for every configured rule and source, in
/// (rule, source, initial point) order.
pub fn run_suite(
    spec: &TaskSpec,
    bank: &DemoBank,
    registry: &RuleRegistry,
    cfg: &ExperimentConfig,
) -> Result<Vec<TrialRecord>> {
    cfg.validate()?;
    let mut jobs = Vec::new();
    let mut indices = BTreeMap::new();
    for name in &cfg.rules {
        let rule = registry.get(name)?;
        for &source in &cfg.sources {
            if let Entry::Vacant(e) = indices.entry(source) {
                e.insert(bank.index(spec, source)?);
            }
            for initial in 0..spec.grid_len() {
                jobs.push((rule.clone(), source, initial));
            }
        }
    }
    jobs.par_iter()
        .map(|(rule, source, initial)| run_trial(rule.as_ref(), *source, *initial, spec, &indices[source], cfg))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleRatio {
    pub source: DemoSource,
    pub candidate: f64,
    pub baseline: f64,
    /// candidate / baseline mean efficiency
    pub ratio: f64,
    pub intervals_overlap: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Degradation {
    pub rule: String,
    pub planner: f64,
    pub noisy: f64,
    /// (planner - noisy) / noisy
    pub relative: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub candidate: String,
    pub baseline: String,
    pub summary: SuiteSummary,
    pub ratios: Vec<RuleRatio>,
    pub degradation: Vec<Degradation>,
}

/// Entropy-vs-heuristic comparison of a finished suite.
pub fn compare(records: &[TrialRecord], seed: u64) -> Result<ComparisonReport> {
    compare_rules(records, "entropy", "heuristic", seed)
}

pub fn compare_rules(records: &[TrialRecord], candidate: &str, baseline: &str, seed: u64) -> Result<ComparisonReport> {
    let summary = summarize(records, seed)?;
    let find =
        |rule: &str, source| summary.groups.iter().find(|g: &&GroupSummary| g.rule == rule && g.source == source);
    let mut ratios = Vec::new();
    for source in [DemoSource::Planner, DemoSource::Noisy, DemoSource::Human] {
        if let (Some(c), Some(b)) = (find(candidate, source), find(baseline, source)) {
            ratios.push(RuleRatio {
                source,
                candidate: c.mean_efficiency,
                baseline: b.mean_efficiency,
                ratio: c.mean_efficiency / b.mean_efficiency,
                intervals_overlap: c.efficiency_ci.overlaps(&b.efficiency_ci),
            });
        }
    }
    if ratios.is_empty() {
        return Err(Error::MissingGroup(format!("no source has both {candidate} and {baseline} trials")));
    }
    let mut degradation = Vec::new();
    let rules: Vec<&str> =
        summary.groups.iter().map(|g| g.rule.as_str()).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
    for rule in rules {
        if let (Some(p), Some(n)) = (find(rule, DemoSource::Planner), find(rule, DemoSource::Noisy)) {
            degradation.push(Degradation {
                rule: rule.to_string(),
                planner: p.mean_efficiency,
                noisy: n.mean_efficiency,
                relative: (p.mean_efficiency - n.mean_efficiency) / n.mean_efficiency,
            });
        }
    }
    Ok(ComparisonReport { candidate: candidate.into(), baseline: baseline.into(), summary, ratios, degradation })
}

impl ComparisonReport {
    pub fn ratio(&self, source: DemoSource) -> Option<&RuleRatio> {
        self.ratios.iter().find(|r| r.source == source)
    }

    pub fn degradation_of(&self, rule: &str) -> Option<&Degradation> {
        self.degradation.iter().find(|d| d.rule == rule)
    }

    /// Plain-text table for terminals.
    pub fn render(&self) -> String {
        let mut s = render_summary(&self.summary);
        for r in &self.ratios {
            let _ = writeln!(
                s,
                "{}/{} on {}: {:.3} ({:+.1}%), intervals {}",
                self.candidate,
                self.baseline,
                r.source,
                r.ratio,
                100.0 * (r.ratio - 1.0),
                if r.intervals_overlap { "overlap" } else { "disjoint" }
            );
        }
        for d in &self.degradation {
            let _ = writeln!(s, "{} degradation planner -> noisy: {:.1}%", d.rule, 100.0 * d.relative);
        }
        s
    }
}

/// Per-group table of a suite summary.
pub fn render_summary(summary: &SuiteSummary) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<10} {:<8} {:>6} {:>8} {:>19} {:>7} {:>8} {:>9}",
        "rule", "source", "trials", "mean_eta", "95% ci", "mean_D", "mean_eps", "converged"
    );
    for g in &summary.groups {
        let _ = writeln!(
            s,
            "{:<10} {:<8} {:>6} {:>8.4} [{:>7.4}, {:>7.4}] {:>7.2} {:>8.3} {:>8.1}%",
            g.rule,
            g.source,
            g.trials,
            g.mean_efficiency,
            g.efficiency_ci.lo,
            g.efficiency_ci.hi,
            g.mean_demos,
            g.mean_efficacy,
            100.0 * g.convergence_rate
        );
    }
    s
}

const CSV_COLUMNS: [&str; 7] = ["rule", "source", "initial_point", "demos", "efficacy", "efficiency", "converged"];

/// CSV with a leading `# key=value ...` comment line.
pub fn trials_csv(records: &[TrialRecord], header: &str) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_COLUMNS)?;
    for r in records {
        w.write_record([
            r.rule.clone(),
            r.source.to_string(),
            r.initial_point.to_string(),
            r.demos.to_string(),
            r.efficacy.to_string(),
            r.efficiency.to_string(),
            r.converged.to_string(),
        ])?;
    }
    let body = String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.into_error()))?).expect("csv output is utf-8");
    Ok(format!("# {header}\n{body}"))
}

/// Reads a trials CSV (comment lines skipped). Per-demo points and traces are
/// not part of the CSV and come back empty.
pub fn parse_trials_csv(text: &str) -> Result<Vec<TrialRecord>> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let headers = r.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != CSV_COLUMNS {
        return Err(Error::invalid(format!("unexpected CSV columns {:?}", headers)));
    }
    let mut out = Vec::new();
    for row in r.records() {
        let row = row?;
        let field = |i: usize| row.get(i).unwrap_or_default();
        let bad = |i: usize| Error::invalid(format!("bad {} value {:?}", CSV_COLUMNS[i], field(i)));
        out.push(TrialRecord {
            rule: field(0).to_string(),
            source: field(1).parse().map_err(|_| bad(1))?,
            initial_point: field(2).parse().map_err(|_| bad(2))?,
            demos: field(3).parse().map_err(|_| bad(3))?,
            efficacy: field(4).parse().map_err(|_| bad(4))?,
            efficiency: field(5).parse().map_err(|_| bad(5))?,
            converged: field(6).parse().map_err(|_| bad(6))?,
            points: Vec::new(),
            trace: Vec::new(),
        });
    }
    Ok(out)
}

#[derive(Serialize)]
struct TraceLine<'a> {
    rule: &'a str,
    source: DemoSource,
    initial_point: usize,
    points: &'a [usize],
    trace: &'a [f64],
}

/// One JSON object per trial with the demonstrated points and coverage trace.
pub fn traces_jsonl(records: &[TrialRecord]) -> Result<String> {
    let mut s = String::new();
    for r in records {
        let line = TraceLine {
            rule: &r.rule,
            source: r.source,
            initial_point: r.initial_point,
            points: &r.points,
            trace: &r.trace,
        };
        s.push_str(&serde_json::to_string(&line)?);
        s.push('\n');
    }
    Ok(s)
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary<'a> {
    pub task: &'a str,
    pub seed: u64,
    pub bank_seed: u64,
    pub noise_seed: Option<u64>,
    pub max_demos: usize,
    pub resamples: usize,
    pub groups: &'a [GroupSummary],
    /// Present when both compared rules ran on a common source.
    pub comparison: Option<Comparison<'a>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Comparison<'a> {
    pub candidate: &'a str,
    pub baseline: &'a str,
    pub ratios: &'a [RuleRatio],
    pub degradation: &'a [Degradation],
}

pub struct ExportPaths {
    pub trials: PathBuf,
    pub summary: PathBuf,
    pub traces: PathBuf,
}

/// Seeds and settings echoed at the top of every exported file.
pub fn run_header(spec: &TaskSpec, bank: &DemoBank, cfg: &ExperimentConfig) -> String {
    let mut h = format!("seed={} bank_seed={}", cfg.seed, bank.planner.seed);
    if let Some(n) = &bank.noise {
        let _ = write!(h, " noise_seed={}", n.seed);
    }
    let _ = write!(h, " task={} max_demos={}", spec.name, cfg.max_demos);
    h
}

/// Writes `trials.csv`, `summary.json` and `traces.jsonl` into `dir`.
pub fn export(
    dir: &Path,
    spec: &TaskSpec,
    bank: &DemoBank,
    cfg: &ExperimentConfig,
    records: &[TrialRecord],
    summary: &SuiteSummary,
    report: Option<&ComparisonReport>,
) -> Result<ExportPaths> {
    fs::create_dir_all(dir)?;
    let paths = ExportPaths {
        trials: dir.join("trials.csv"),
        summary: dir.join("summary.json"),
        traces: dir.join("traces.jsonl"),
    };
    fs::write(&paths.trials, trials_csv(records, &run_header(spec, bank, cfg))?)?;
    let run = RunSummary {
        task: &spec.name,
        seed: cfg.seed,
        bank_seed: bank.planner.seed,
        noise_seed: bank.noise.map(|n| n.seed),
        max_demos: cfg.max_demos,
        resamples: summary.resamples,
        groups: &summary.groups,
        comparison: report.map(|r| Comparison {
            candidate: &r.candidate,
            baseline: &r.baseline,
            ratios: &r.ratios,
            degradation: &r.degradation,
        }),
    };
    fs::write(&paths.summary, serde_json::to_string_pretty(&run)? + "\n")?;
    fs::write(&paths.traces, traces_jsonl(records)?)?;
    Ok(paths)
}
