#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::time::Duration;

use copilot_core::gateway::{Matcher, ScriptRecord};
use copilot_core::sample::{sample_vision_script, write_sample, SamplePaths, SAMPLE_CASE_ID, SAMPLE_QUERY};
use serde_json::json;

pub fn golden(name: &str) -> Vec<u8> {
    let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    std::fs::read(&p).unwrap_or_else(|e| panic!("reading {}: {e}", p.display()))
}

pub fn sample(dir: &Path) -> SamplePaths {
    write_sample(dir).expect("sample writes")
}

pub fn s(p: &Path) -> String {
    p.display().to_string()
}

pub fn report_args(paths: &SamplePaths, out: &Path) -> Vec<String> {
    vec![
        "copilot".into(),
        "report".into(),
        "--config".into(),
        s(&paths.config),
        "--volume".into(),
        s(&paths.volume),
        "--case-id".into(),
        SAMPLE_CASE_ID.into(),
        "--query".into(),
        SAMPLE_QUERY.into(),
        "--out".into(),
        s(out),
    ]
}

fn contains(s: &str) -> Matcher {
    Matcher::Contains(s.into())
}

/// Replaces the chat script with one whose planner never stops.
pub fn never_stop(paths: &SamplePaths) {
    let script = vec![
        ScriptRecord::reply(contains("TASK: ANALYZE_QUERY"), "Segment, then keep going."),
        ScriptRecord::reply(
            contains("TASK: PLAN_NEXT_ACTION"),
            json!({"intermediate_goal": "masks", "tool": "segmentator", "rationale": "again"}).to_string(),
        )
        .repeating(),
        ScriptRecord::reply(
            contains("TASK: GENERATE_COMMAND"),
            json!({"arguments": {"case_id": SAMPLE_CASE_ID, "targets": ["liver"]}}).to_string(),
        )
        .repeating(),
        ScriptRecord::reply(contains("TASK: VERIFY_COMPLETION"), r#"{"verdict": "continue"}"#).repeating(),
    ];
    std::fs::write(&paths.chat_script, serde_json::to_string_pretty(&script).unwrap()).unwrap();
}

/// Makes every vision reply take 600 s and shrinks the case budget to `budget_s`.
pub fn slow_vision(paths: &SamplePaths, budget_s: f64) {
    let script: Vec<ScriptRecord> =
        sample_vision_script().into_iter().map(|r| r.delayed(Duration::from_secs(600))).collect();
    std::fs::write(&paths.vision_script, serde_json::to_string_pretty(&script).unwrap()).unwrap();
    let cfg = std::fs::read_to_string(&paths.config).unwrap();
    let patched = cfg.replace("time_budget_s = 500.0", &format!("time_budget_s = {budget_s:?}"));
    assert_ne!(cfg, patched);
    std::fs::write(&paths.config, patched).unwrap();
}

pub fn case_dir(out: &Path) -> PathBuf {
    out.join(SAMPLE_CASE_ID)
}

pub fn terminal_line(trace: &str) -> serde_json::Value {
    serde_json::from_str(trace.lines().last().expect("trace has lines")).unwrap()
}

pub fn record_count(trace: &str) -> usize {
    trace.lines().filter(|l| l.starts_with(r#"{"type":"record""#)).count()
}
