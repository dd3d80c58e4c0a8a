use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use copilot_core::agent::{CaseTrace, Query, TerminalStatus};
use copilot_core::config::{Engine, EngineConfig};
use copilot_core::eval::{
    aggregate_judge_scores, evaluate_corpus, export_judge_prompt, parse_case_texts, parse_judge_reply, CaseText,
    JudgeResponse, MetricReport,
};
use copilot_core::templates::{derive_templates, parse_corpus_jsonl, summarize_analysis_items, templates_to_json};
use copilot_core::tools::Report;
use copilot_core::volume::{parse_nifti, Volume};
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;
use tokio::task::JoinSet;

use crate::output::{write_case, WrittenCase};

/// Command-line values that replace config-file settings.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub max_steps: Option<usize>,
    pub time_budget_s: Option<f64>,
    pub qc_max_rounds: Option<usize>,
    pub out: Option<PathBuf>,
    pub k: Option<usize>,
    pub seed: Option<u64>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut EngineConfig) {
        if let Some(v) = self.max_steps {
            cfg.agent.max_steps = v;
        }
        if let Some(v) = self.time_budget_s {
            cfg.agent.time_budget_s = v;
        }
        if let Some(v) = self.qc_max_rounds {
            cfg.tools.qc_max_rounds = v;
        }
        if let Some(v) = &self.out {
            cfg.output.dir = v.clone();
        }
        if let Some(v) = self.k {
            cfg.clustering.k = v;
        }
        if let Some(v) = self.seed {
            cfg.clustering.seed = v;
        }
    }
}

pub fn load_engine(config: &Path, overrides: &Overrides) -> Result<Engine> {
    let mut cfg = EngineConfig::load(config).with_context(|| format!("loading config {}", config.display()))?;
    overrides.apply(&mut cfg);
    cfg.validate()?;
    Ok(Engine::new(cfg)?)
}

pub fn load_volume(path: &Path) -> Result<Volume> {
    let bytes = std::fs::read(path).with_context(|| format!("reading volume {}", path.display()))?;
    parse_nifti(&bytes).with_context(|| format!("parsing volume {}", path.display()))
}

/// One case to report on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseSpec {
    pub case_id: String,
    pub volume: PathBuf,
    pub query: String,
    #[serde(default = "default_organ")]
    pub organ: String,
}

fn default_organ() -> String {
    "liver".into()
}

/// Runs one case and writes its outputs under the configured output dir.
pub async fn report_case(engine: &Engine, case: &CaseSpec) -> Result<WrittenCase> {
    if !engine.has_case(&case.case_id) {
        bail!("case {:?} has no masks in the segmentation store", case.case_id);
    }
    let volume = Arc::new(load_volume(&case.volume)?);
    let query = Query::new(case.query.clone(), case.case_id.clone(), case.organ.clone());
    let run = engine.run(query, volume, case.volume.display().to_string()).await;
    for w in run.trace.warnings() {
        tracing::warn!(case = %case.case_id, step = w.step, "{}", w.message);
    }
    let written = write_case(&engine.config.output.dir, &run)?;
    match written.status {
        TerminalStatus::Completed => tracing::info!(case = %case.case_id, dir = %written.dir.display(), "report written"),
        s => eprintln!("case {}: run ended with status {}", case.case_id, status_name(s)),
    }
    Ok(written)
}

pub fn status_name(s: TerminalStatus) -> &'static str {
    match s {
        TerminalStatus::Completed => "completed",
        TerminalStatus::StepCap => "step-cap",
        TerminalStatus::TimeBudget => "time-budget",
        TerminalStatus::Aborted => "aborted",
    }
}

pub fn read_manifest(path: &Path) -> Result<Vec<CaseSpec>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut cases = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let mut c: CaseSpec =
            serde_json::from_str(line).with_context(|| format!("{}: line {}", path.display(), i + 1))?;
        if c.volume.is_relative() {
            c.volume = base.join(&c.volume);
        }
        cases.push(c);
    }
    if cases.is_empty() {
        bail!("manifest {} lists no cases", path.display());
    }
    Ok(cases)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchEntry {
    pub case_id: String,
    pub status: Option<TerminalStatus>,
    pub exit_code: u8,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Runs every case with at most `jobs` in flight; each case keeps its own
/// time budget. Entries come back in manifest order.
pub async fn report_batch(engine: Arc<Engine>, cases: Vec<CaseSpec>, jobs: usize) -> Vec<BatchEntry> {
    let permits = Arc::new(Semaphore::new(jobs.max(1)));
    let mut set = JoinSet::new();
    for (i, case) in cases.into_iter().enumerate() {
        let (engine, permits) = (engine.clone(), permits.clone());
        set.spawn(async move {
            let _permit = permits.acquire_owned().await.expect("semaphore is never closed");
            let entry = match report_case(&engine, &case).await {
                Ok(w) => BatchEntry { case_id: case.case_id, status: Some(w.status), exit_code: w.exit_code(), error: None },
                Err(e) => BatchEntry { case_id: case.case_id, status: None, exit_code: 1, error: Some(format!("{e:#}")) },
            };
            (i, entry)
        });
    }
    let mut entries = Vec::new();
    while let Some(joined) = set.join_next().await {
        entries.push(joined.expect("case task does not panic"));
    }
    entries.sort_by_key(|(i, _)| *i);
    entries.into_iter().map(|(_, e)| e).collect()
}

/// 1 if any case failed outright, else 2 if any hit a cap, else 0.
pub fn batch_exit_code(entries: &[BatchEntry]) -> u8 {
    if entries.iter().any(|e| e.exit_code == 1) {
        1
    } else {
        entries.iter().map(|e| e.exit_code).max().unwrap_or(0)
    }
}

pub fn write_batch_summary(out: &Path, entries: &[BatchEntry]) -> Result<PathBuf> {
    std::fs::create_dir_all(out)?;
    let path = out.join("batch_summary.jsonl");
    let text: String = entries.iter().map(|e| serde_json::to_string(e).expect("entry serializes") + "\n").collect();
    std::fs::write(&path, text)?;
    Ok(path)
}

#[derive(Debug, Clone)]
pub struct DerivedFiles {
    pub templates: PathBuf,
    pub catalog: PathBuf,
    pub sections: PathBuf,
    pub template_count: usize,
}

/// Clusters the corpus into templates, then asks for analysis items.
pub async fn derive(engine: &Engine, corpus: &Path, organ: &str) -> Result<DerivedFiles> {
    let text = std::fs::read_to_string(corpus).with_context(|| format!("reading corpus {}", corpus.display()))?;
    let reports = parse_corpus_jsonl(&text)?;
    let gateway = engine.gateway();
    let opts = engine.config.derive_options(organ);
    let (filtered, templates, model) = derive_templates(&gateway, &reports, &opts).await?;
    tracing::info!(templates = templates.len(), iterations = model.history.len(), "clustering done");
    let catalog = summarize_analysis_items(&gateway, &templates, organ).await?;

    let out = &engine.config.output.dir;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let files = DerivedFiles {
        templates: out.join("templates.json"),
        catalog: out.join("catalog.json"),
        sections: out.join("corpus_sections.jsonl"),
        template_count: templates.len(),
    };
    std::fs::write(&files.templates, templates_to_json(&templates) + "\n")?;
    std::fs::write(&files.catalog, catalog.to_json() + "\n")?;
    let sections: String =
        filtered.iter().map(|r| serde_json::to_string(r).expect("report serializes") + "\n").collect();
    std::fs::write(&files.sections, sections)?;
    Ok(files)
}

/// Reads `{case_id, text}` lines, or a directory of `<case_id>/report.json`.
pub fn read_case_texts(path: &Path) -> Result<Vec<CaseText>> {
    if path.is_dir() {
        let mut out = Vec::new();
        let mut dirs: Vec<PathBuf> = std::fs::read_dir(path)?.filter_map(|e| e.ok().map(|e| e.path())).collect();
        dirs.sort();
        for d in dirs.into_iter().filter(|d| d.join("report.json").is_file()) {
            let bytes = std::fs::read(d.join("report.json"))?;
            let r: Report = serde_json::from_slice(&bytes).with_context(|| format!("{}", d.display()))?;
            let case_id = d.file_name().expect("entry has a name").to_string_lossy().into_owned();
            out.push(CaseText { case_id, text: format!("{} {}", r.findings, r.impression) });
        }
        return Ok(out);
    }
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(parse_case_texts(&text).with_context(|| path.display().to_string())?)
}

pub fn evaluate(predictions: &Path, references: &Path) -> Result<MetricReport> {
    let p = read_case_texts(predictions)?;
    let r = read_case_texts(references)?;
    Ok(evaluate_corpus(&p, &r)?)
}

/// Trace files named directly, or found as `<dir>/*/trace.jsonl`.
pub fn collect_traces(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)?
                .filter_map(|e| e.ok().map(|e| e.path().join("trace.jsonl")))
                .filter(|t| t.is_file())
                .collect();
            found.sort();
            out.extend(found);
        } else {
            out.push(p.clone());
        }
    }
    if out.is_empty() {
        bail!("no traces found");
    }
    Ok(out)
}

pub fn judge_export(traces: &[PathBuf], out: &Path) -> Result<usize> {
    let mut lines = String::new();
    for path in collect_traces(traces)? {
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let trace = CaseTrace::from_jsonl(&text).with_context(|| path.display().to_string())?;
        let req = export_judge_prompt(&trace).with_context(|| path.display().to_string())?;
        lines.push_str(&serde_json::to_string(&req)?);
        lines.push('\n');
    }
    std::fs::write(out, &lines).with_context(|| format!("writing {}", out.display()))?;
    Ok(lines.lines().count())
}

/// Parses judge replies and writes the per-dimension score histogram.
pub fn judge_aggregate(responses: &Path, out: &Path) -> Result<usize> {
    let text = std::fs::read_to_string(responses).with_context(|| format!("reading {}", responses.display()))?;
    let mut cases = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let r: JudgeResponse = serde_json::from_str(line).with_context(|| format!("line {}", i + 1))?;
        cases.push(parse_judge_reply(&r.reply).with_context(|| format!("line {} (case {})", i + 1, r.case_id))?);
    }
    let hist = aggregate_judge_scores(&cases);
    std::fs::write(out, serde_json::to_string_pretty(&hist)? + "\n")?;
    Ok(cases.len())
}
