//! A bundled synthetic liver case with matching scripted transcripts.
//!
//! [`write_sample`] lays out everything a scripted end-to-end run needs:
//!
//! ```text
//! copilot.toml        scripted chat/vision, hash embeddings, frozen clock
//! chat.json           chat transcript for the five-step run
//! vision.json         one answer per analysis item
//! catalog.json        default liver analysis items
//! templates.json      four liver template reports
//! corpus.jsonl        small report corpus for template derivation
//! references.jsonl    reference report text for the sample case
//! manifest.jsonl      batch manifest with the sample case
//! volumes/<case>.nii.gz
//! store/<case>/organ.nii.gz, lesion.nii.gz
//! ```

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::gateway::{Matcher, ScriptRecord};
use crate::templates::{templates_to_json, Template};
use crate::tools::AnalysisCatalog;
use crate::volume::{write_nifti_gz, Datatype, Mask, Volume};

pub const SAMPLE_CASE_ID: &str = "sample-liver-001";
pub const SAMPLE_QUERY: &str = "Generate a liver CT report for this case.";
pub const SAMPLE_ORGAN: &str = "liver";

pub const DIMS: [usize; 3] = [64, 64, 64];
pub const SPACING: [f32; 3] = [1.5, 1.5, 2.0];

const LIVER_CENTER: [f64; 3] = [22.0, 30.0, 32.0];
const LIVER_RADII: [f64; 3] = [12.0, 10.0, 14.0];
/// Main lesion: a ball of radius 3.
const LESION_CENTER: [f64; 3] = [20.0, 28.0, 36.0];
const LESION_RADIUS: f64 = 3.0;
/// Secondary lesion: a 2x2x1 block, smaller than the main one.
const SMALL_LESION: [[usize; 3]; 4] = [[27, 34, 26], [28, 34, 26], [27, 35, 26], [28, 35, 26]];

fn in_ellipsoid(p: [usize; 3], c: [f64; 3], r: [f64; 3]) -> bool {
    (0..3).map(|i| ((p[i] as f64 - c[i]) / r[i]).powi(2)).sum::<f64>() <= 1.0
}

fn in_liver(p: [usize; 3]) -> bool {
    in_ellipsoid(p, LIVER_CENTER, LIVER_RADII)
}

fn in_lesion(p: [usize; 3]) -> bool {
    in_ellipsoid(p, LESION_CENTER, [LESION_RADIUS; 3]) || SMALL_LESION.contains(&p)
}

/// Organ mask (liver = 1) and binary lesion mask.
pub fn sample_masks() -> (Mask, Mask) {
    let mut organ = Mask::zeros(DIMS);
    let mut lesion = Mask::zeros(DIMS);
    for z in 0..DIMS[2] {
        for y in 0..DIMS[1] {
            for x in 0..DIMS[0] {
                if in_liver([x, y, z]) {
                    organ.set(x, y, z, 1);
                }
                if in_lesion([x, y, z]) {
                    lesion.set(x, y, z, 1);
                }
            }
        }
    }
    (organ, lesion)
}

/// Int16 CT-like volume in HU: air, a body cross-section, the liver, and
/// hypodense lesions, with small seeded noise.
pub fn sample_volume() -> Volume {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut data = Vec::with_capacity(DIMS.iter().product());
    for z in 0..DIMS[2] {
        for y in 0..DIMS[1] {
            for x in 0..DIMS[0] {
                let p = [x, y, z];
                let body = ((x as f64 - 32.0) / 28.0).powi(2) + ((y as f64 - 32.0) / 24.0).powi(2) <= 1.0;
                let base = if in_lesion(p) {
                    10.0
                } else if in_liver(p) {
                    60.0
                } else if body {
                    30.0
                } else {
                    -1000.0
                };
                let noise = if body { rng.random_range(-8i32..=8) as f32 } else { 0.0 };
                data.push(base + noise);
            }
        }
    }
    Volume::new(DIMS, SPACING, Datatype::Int16, data).expect("sample volume is valid")
}

pub fn sample_templates() -> Vec<Template> {
    let texts = [
        "The liver is normal in size and contour with a smooth surface. The hepatic parenchyma shows homogeneous attenuation. No focal liver lesion is identified. The intrahepatic and extrahepatic bile ducts are not dilated.",
        "The liver is normal in size with a smooth surface. A well-defined hypodense lesion is seen in the liver; its size, shape, and density are described. The remaining hepatic parenchyma is homogeneous. No biliary dilatation.",
        "The liver is enlarged with a blunted edge. The hepatic parenchyma shows diffusely decreased attenuation consistent with steatosis. No focal lesion. The bile ducts are normal in calibre.",
        "The liver surface is nodular and the contour is irregular, with relative enlargement of the caudate lobe. The parenchyma is heterogeneous. No discrete mass. No intrahepatic bile duct dilatation.",
    ];
    texts
        .iter()
        .enumerate()
        .map(|(i, t)| Template { template_id: i as u32, text: t.to_string(), cluster_id: i, member_count: 1 })
        .collect()
}

fn contains(s: &str) -> Matcher {
    Matcher::Contains(s.to_string())
}

fn all(ms: Vec<Matcher>) -> Matcher {
    Matcher::AllOf(ms)
}

fn plan(goal: &str, tool: &str, rationale: &str) -> String {
    json!({"intermediate_goal": goal, "tool": tool, "rationale": rationale}).to_string()
}

fn command(tool: &str, arguments: serde_json::Value) -> ScriptRecord {
    ScriptRecord::reply(
        all(vec![contains("TASK: GENERATE_COMMAND"), contains(&format!("Tool: {tool}\n"))]),
        json!({ "arguments": arguments }).to_string(),
    )
}

pub const DRAFT_MISSPELLING: &str = "parenchima";

/// Chat transcript for the five-step golden run.
pub fn sample_chat_script() -> Vec<ScriptRecord> {
    let plan_m = || contains("TASK: PLAN_NEXT_ACTION");
    let draft = json!({
        "findings": format!("The liver is normal in size with a smooth surface. A round, well-defined hypodense lesion measuring approximately 9 mm is seen in the right hepatic lobe, with a tiny additional hypodense focus nearby. The remaining {DRAFT_MISSPELLING} is homogeneous. No intrahepatic or extrahepatic biliary dilatation."),
        "impression": "No focal liver lesion."
    });
    let revised = json!({
        "findings": "The liver is normal in size with a smooth surface. A round, well-defined hypodense lesion measuring approximately 9 mm is seen in the right hepatic lobe, with a tiny additional hypodense focus nearby. The remaining parenchyma is homogeneous. No intrahepatic or extrahepatic biliary dilatation.",
        "impression": "Solitary 9 mm hypodense lesion in the right hepatic lobe with a tiny adjacent focus, likely benign; correlation with contrast-enhanced imaging is suggested. No biliary dilatation."
    });
    let failed = json!({
        "qualified": false,
        "rubric": {"format": "pass", "content": "fail", "language_expression": "fail"},
        "comments": "The impression contradicts the findings and the findings contain a spelling error.",
        "feedback": format!("1. Content inconsistency: the findings describe a 9 mm hypodense lesion in the right hepatic lobe, but the impression states there is no focal liver lesion. Revise the impression to agree with the findings. 2. Spelling error: \"{DRAFT_MISSPELLING}\" should be \"parenchyma\".")
    });
    let passed = json!({
        "qualified": true,
        "rubric": {"format": "pass", "content": "pass", "language_expression": "pass"},
        "comments": "Findings are objective and the impression is consistent with them.",
        "feedback": null
    });

    vec![
        ScriptRecord::reply(
            contains("TASK: ANALYZE_QUERY"),
            "1. Segment the liver and any lesions. 2. Decide which liver aspects to analyze, adding lesion characteristics only if a lesion is found. 3. Analyze the liver region for each aspect. 4. Draft findings and impression from the closest template with three key slices. 5. Check report quality and revise until it qualifies. The answer is complete when a qualified report is stored.",
        ),
        ScriptRecord::reply(plan_m(), plan("Obtain liver and lesion masks", "segmentator", "Every later step needs the masks.")),
        ScriptRecord::reply(plan_m(), plan("Choose the liver analysis items", "region_analysis_planner", "Masks are stored; the lesion status decides the items.")),
        ScriptRecord::reply(plan_m(), plan("Describe each analysis item", "analyzer", "Items and masks are stored.")),
        ScriptRecord::reply(plan_m(), plan("Draft the report", "report_generator", "The analysis result is stored.")),
        ScriptRecord::reply(plan_m(), plan("Review and finalize the draft", "quality_controller", "A draft exists but has not been reviewed.")),
        command("segmentator", json!({"case_id": SAMPLE_CASE_ID, "targets": [SAMPLE_ORGAN]})),
        command("region_analysis_planner", json!({"masks": "@s1.masks", "organ": SAMPLE_ORGAN})),
        command("analyzer", json!({"masks": "@s1.masks", "items": "@s2.items"})),
        command("report_generator", json!({"analysis": "@s3.analysis", "masks": "@s1.masks"})),
        command(
            "quality_controller",
            json!({"report": "@s4.report", "analysis": "@s3.analysis", "masks": "@s1.masks", "max_rounds": 3}),
        ),
        ScriptRecord::reply(
            all(vec![contains("TASK: VERIFY_COMPLETION"), contains("- s5.report: qualified report")]),
            json!({"verdict": "stop", "report_key": "s5.report"}).to_string(),
        ),
        ScriptRecord::reply(contains("TASK: VERIFY_COMPLETION"), json!({"verdict": "continue"}).to_string()).repeating(),
        ScriptRecord::reply(contains("TASK: SELECT_TEMPLATE"), "1"),
        ScriptRecord::reply(
            all(vec![contains("TASK: GENERATE_REPORT"), Matcher::NotContains("Reviewer feedback".into())]),
            draft.to_string(),
        ),
        ScriptRecord::reply(
            all(vec![contains("TASK: GENERATE_REPORT"), contains("Reviewer feedback")]),
            revised.to_string(),
        ),
        ScriptRecord::reply(all(vec![contains("TASK: ASSESS_QUALITY"), contains(DRAFT_MISSPELLING)]), failed.to_string()),
        ScriptRecord::reply(contains("TASK: ASSESS_QUALITY"), passed.to_string()),
        ScriptRecord::reply(
            contains("TASK: SUMMARIZE_ANALYSIS_ITEMS"),
            json!({ "items": crate::tools::default_liver_items() }).to_string(),
        ),
    ]
}

/// Vision transcript: one answer per analysis item.
pub fn sample_vision_script() -> Vec<ScriptRecord> {
    let item = |name: &str, text: &str| ScriptRecord::reply(contains(&format!("Item: {name}\n")), text);
    vec![
        item("liver-surface", "The liver surface is smooth and the contour is normal; the liver is not enlarged."),
        item(
            "liver-parenchyma",
            "Parenchymal attenuation is homogeneous apart from a focal hypodense area in the right lobe.",
        ),
        item("bile-ducts", "No intrahepatic or extrahepatic bile duct dilatation."),
        item(
            "liver-lesions",
            "A round, well-defined hypodense lesion of about 9 mm in the right lobe, lower in density than the surrounding parenchyma; a second tiny hypodense focus is too small to characterize.",
        ),
    ]
}

fn sample_corpus() -> String {
    let reports = [
        ("corpus-01", "The liver is normal in size and contour. Hepatic parenchyma is homogeneous. The spleen is unremarkable. No bile duct dilatation."),
        ("corpus-02", "A hypodense lesion is seen in the right hepatic lobe. The liver is otherwise normal. Kidneys are normal."),
        ("corpus-03", "The liver is enlarged with diffuse fatty infiltration. Gallbladder is normal. No ascites."),
        ("corpus-04", "The liver surface is nodular, consistent with cirrhosis. Splenomegaly. Small volume ascites."),
        ("corpus-05", "The liver shows homogeneous attenuation without focal lesion. Pancreas is normal."),
        ("corpus-06", "Two hypodense liver lesions are noted, the largest 12 mm. Mild intrahepatic bile duct dilatation."),
        ("corpus-07", "The lungs are clear. No pleural effusion."),
        ("corpus-08", "The liver is normal. The aorta is of normal calibre."),
    ];
    reports
        .iter()
        .map(|(id, text)| json!({"case_id": id, "report_text": text}).to_string() + "\n")
        .collect()
}

/// Text of the sample case's config file, in a directory laid out by [`write_sample`].
pub fn sample_config_toml() -> String {
    r#"# Scripted configuration for the bundled synthetic case.

[chat]
kind = "scripted"
model = "scripted-chat"
script = "chat.json"

[vision]
kind = "scripted"
model = "scripted-vision"
script = "vision.json"

[embedding]
kind = "hash"
dimension = 64
seed = 0

[segmentation]
store = "store"

[agent]
max_steps = 10
time_budget_s = 500.0
clock = "frozen"

[tools]
qc_max_rounds = 3
roi_margin = 4
vision_input = "slices"
window_center = 40.0
window_width = 400.0
catalog = "catalog.json"
templates = "templates.json"

[clustering]
k = 3
seed = 0
max_iters = 100

[output]
dir = "out"
"#
    .to_string()
}

/// Paths of the files written by [`write_sample`].
#[derive(Debug, Clone)]
pub struct SamplePaths {
    pub root: PathBuf,
    pub config: PathBuf,
    pub volume: PathBuf,
    pub chat_script: PathBuf,
    pub vision_script: PathBuf,
    pub corpus: PathBuf,
    pub references: PathBuf,
    pub manifest: PathBuf,
}

pub fn write_sample(dir: &Path) -> std::io::Result<SamplePaths> {
    let case_store = dir.join("store").join(SAMPLE_CASE_ID);
    std::fs::create_dir_all(&case_store)?;
    std::fs::create_dir_all(dir.join("volumes"))?;

    let volume = dir.join("volumes").join(format!("{SAMPLE_CASE_ID}.nii.gz"));
    std::fs::write(&volume, write_nifti_gz(&sample_volume()))?;
    let (organ, lesion) = sample_masks();
    let as_u8 = |m: &Mask| m.to_volume(SPACING).expect("mask converts");
    std::fs::write(case_store.join("organ.nii.gz"), write_nifti_gz(&as_u8(&organ)))?;
    std::fs::write(case_store.join("lesion.nii.gz"), write_nifti_gz(&as_u8(&lesion)))?;

    let pretty = |v: &Vec<ScriptRecord>| serde_json::to_string_pretty(v).expect("script serializes") + "\n";
    let chat_script = dir.join("chat.json");
    std::fs::write(&chat_script, pretty(&sample_chat_script()))?;
    let vision_script = dir.join("vision.json");
    std::fs::write(&vision_script, pretty(&sample_vision_script()))?;
    std::fs::write(dir.join("catalog.json"), AnalysisCatalog::default().to_json() + "\n")?;
    std::fs::write(dir.join("templates.json"), templates_to_json(&sample_templates()) + "\n")?;

    let corpus = dir.join("corpus.jsonl");
    std::fs::write(&corpus, sample_corpus())?;
    let references = dir.join("references.jsonl");
    let reference = "The liver is normal in size with a smooth surface. A 9 mm well-defined hypodense lesion is present in the right hepatic lobe. The remaining parenchyma is homogeneous. No biliary dilatation. Solitary hypodense right hepatic lobe lesion, likely benign.";
    std::fs::write(&references, json!({"case_id": SAMPLE_CASE_ID, "text": reference}).to_string() + "\n")?;
    let manifest = dir.join("manifest.jsonl");
    std::fs::write(
        &manifest,
        json!({"case_id": SAMPLE_CASE_ID, "volume": format!("volumes/{SAMPLE_CASE_ID}.nii.gz"), "query": SAMPLE_QUERY, "organ": SAMPLE_ORGAN}).to_string() + "\n",
    )?;
    let config = dir.join("copilot.toml");
    std::fs::write(&config, sample_config_toml())?;

    Ok(SamplePaths { root: dir.to_path_buf(), config, volume, chat_script, vision_script, corpus, references, manifest })
}
