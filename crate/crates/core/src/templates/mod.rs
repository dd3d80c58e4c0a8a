//! Offline derivation of template reports and analysis items from a corpus.

mod kmeans;
mod section;

pub use kmeans::{kmeans, squared_distance, ClusterError, ClusterModel};
pub use section::{default_keywords, extract_organ_section, split_sentences};

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::agent::{ask_with_repair, extract_json_object, AskError};
use crate::gateway::{Gateway, GatewayError, Message};
use crate::tools::{AnalysisCatalog, AnalysisItem};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TemplateError {
    #[error("corpus line {line}: {reason}")]
    Corpus { line: usize, reason: String },
    #[error("only {usable} report(s) mention the organ; {k} clusters requested")]
    TooFewReports { usable: usize, k: usize },
    #[error("no templates given")]
    NoTemplates,
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("item summary: {0}")]
    Items(String),
    #[error("templates file: {0}")]
    File(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusReport {
    pub case_id: String,
    pub full_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub organ_section: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Template {
    pub template_id: u32,
    pub text: String,
    pub cluster_id: usize,
    pub member_count: usize,
}

#[derive(Deserialize)]
struct CorpusLine {
    case_id: String,
    report_text: String,
}

/// Reads JSON lines of `{"case_id", "report_text"}`; blank lines are skipped.
pub fn parse_corpus_jsonl(text: &str) -> Result<Vec<CorpusReport>, TemplateError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: CorpusLine = serde_json::from_str(line)
            .map_err(|e| TemplateError::Corpus { line: i + 1, reason: e.to_string() })?;
        if parsed.report_text.trim().is_empty() {
            return Err(TemplateError::Corpus { line: i + 1, reason: "empty report_text".into() });
        }
        out.push(CorpusReport { case_id: parsed.case_id, full_text: parsed.report_text, organ_section: None });
    }
    Ok(out)
}

pub fn load_templates(path: &Path) -> Result<Vec<Template>, TemplateError> {
    let text = std::fs::read_to_string(path).map_err(|e| TemplateError::File(format!("{}: {e}", path.display())))?;
    let templates: Vec<Template> = serde_json::from_str(&text).map_err(|e| TemplateError::File(e.to_string()))?;
    let mut ids: Vec<u32> = templates.iter().map(|t| t.template_id).collect();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() != templates.len() {
        return Err(TemplateError::File("template ids must be unique".into()));
    }
    if templates.iter().any(|t| t.text.trim().is_empty()) {
        return Err(TemplateError::File("template text must be non-empty".into()));
    }
    Ok(templates)
}

pub fn templates_to_json(templates: &[Template]) -> String {
    serde_json::to_string_pretty(templates).expect("templates serialize")
}

/// Settings for [`derive_templates`].
#[derive(Debug, Clone, PartialEq)]
pub struct DeriveOptions {
    pub organ: String,
    pub keywords: Vec<String>,
    pub k: usize,
    pub seed: u64,
    pub max_iters: usize,
}

impl DeriveOptions {
    pub fn new(organ: &str) -> Self {
        Self { organ: organ.into(), keywords: default_keywords(organ), k: 6, seed: 0, max_iters: 100 }
    }
}

/// Filters the corpus to the organ, embeds each section, clusters, and keeps
/// the member nearest each centroid as that cluster's template.
///
/// Returns the corpus with `organ_section` filled in alongside the templates.
pub async fn derive_templates(
    gateway: &Gateway,
    corpus: &[CorpusReport],
    opts: &DeriveOptions,
) -> Result<(Vec<CorpusReport>, Vec<Template>, ClusterModel), TemplateError> {
    let filtered: Vec<CorpusReport> = corpus
        .iter()
        .map(|r| CorpusReport { organ_section: extract_organ_section(&r.full_text, &opts.keywords), ..r.clone() })
        .collect();
    let usable: Vec<&CorpusReport> = filtered.iter().filter(|r| r.organ_section.is_some()).collect();
    if opts.k == 0 || usable.len() < opts.k {
        return Err(TemplateError::TooFewReports { usable: usable.len(), k: opts.k });
    }
    let texts: Vec<String> = usable.iter().map(|r| r.organ_section.clone().expect("filtered")).collect();
    let vectors: Vec<Vec<f64>> = gateway.embed(&texts).await?.into_iter().map(|v| v.0).collect();
    let model = kmeans(&vectors, opts.k, opts.seed, opts.max_iters)?;

    let mut templates = Vec::new();
    for c in 0..model.k {
        let members: Vec<usize> = (0..usable.len()).filter(|&i| model.assignments[i] == c).collect();
        let Some(&best) = members.iter().min_by(|&&a, &&b| {
            let da = squared_distance(&vectors[a], &model.centroids[c]);
            let db = squared_distance(&vectors[b], &model.centroids[c]);
            da.total_cmp(&db).then_with(|| usable[a].case_id.cmp(&usable[b].case_id))
        }) else {
            continue;
        };
        templates.push(Template {
            template_id: templates.len() as u32,
            text: texts[best].clone(),
            cluster_id: c,
            member_count: members.len(),
        });
    }
    Ok((filtered, templates, model))
}

fn items_prompt(templates: &[Template], organ: &str) -> String {
    let mut out = format!(
        "TASK: SUMMARIZE_ANALYSIS_ITEMS\nOrgan: {organ}\nTemplate reports:\n"
    );
    for t in templates {
        out.push_str(&format!("[{}] {}\n", t.template_id, t.text));
    }
    out.push_str(
        "\nList the distinct aspects of the organ these reports describe, as analysis items for an image model. \
Reply with one JSON object: {\"items\": [{\"name\": string, \"prompt_fragment\": string, \"lesion_related\": bool}]}.",
    );
    out
}

fn parse_items(reply: &str, organ: &str) -> Result<Vec<AnalysisItem>, String> {
    let obj = extract_json_object(reply)?;
    let list = obj.get("items").and_then(Value::as_array).ok_or("missing array field \"items\"")?;
    let mut items = Vec::with_capacity(list.len());
    for (i, entry) in list.iter().enumerate() {
        let field = |k: &str| entry.get(k).and_then(Value::as_str).map(str::to_string);
        let name = field("name").ok_or(format!("item {i} has no \"name\""))?;
        let prompt_fragment = field("prompt_fragment").ok_or(format!("item {i} has no \"prompt_fragment\""))?;
        let lesion_related = entry
            .get("lesion_related")
            .and_then(Value::as_bool)
            .ok_or(format!("item {i} has no boolean \"lesion_related\""))?;
        items.push(AnalysisItem { name, prompt_fragment, lesion_related });
    }
    crate::tools::validate_items(organ, &items).map_err(|e| e.to_string())?;
    Ok(items)
}

/// Asks the chat backend to condense templates into analysis items and
/// returns them as a one-organ catalog.
pub async fn summarize_analysis_items(
    gateway: &Gateway,
    templates: &[Template],
    organ: &str,
) -> Result<AnalysisCatalog, TemplateError> {
    if templates.is_empty() {
        return Err(TemplateError::NoTemplates);
    }
    let messages = vec![
        Message::system("You summarize radiology report templates into structured analysis items."),
        Message::user(items_prompt(templates, organ)),
    ];
    let items = ask_with_repair(gateway, messages, |r| parse_items(r, organ)).await.map_err(|e| match e {
        AskError::Backend(g) => TemplateError::Gateway(g),
        AskError::Invalid(msg) => TemplateError::Items(msg),
    })?;
    let mut organs = std::collections::BTreeMap::new();
    organs.insert(organ.to_string(), items);
    AnalysisCatalog::new(organs).map_err(|e| TemplateError::Items(e.to_string()))
}
