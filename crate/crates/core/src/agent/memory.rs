use std::sync::Arc;

use crate::gateway::SegmentationMasks;
use crate::tools::{AnalysisItem, AnalysisResult, Report};

/// A tool product held in case memory.
#[derive(Debug, Clone)]
pub enum Artifact {
    Masks(Arc<SegmentationMasks>),
    Items(Vec<AnalysisItem>),
    Analysis(AnalysisResult),
    Report(Report),
    Text(String),
}

impl Artifact {
    pub fn kind(&self) -> &'static str {
        match self {
            Artifact::Masks(_) => "segmentation masks",
            Artifact::Items(_) => "analysis items",
            Artifact::Analysis(_) => "analysis result",
            Artifact::Report(r) if r.is_qualified() => "qualified report",
            Artifact::Report(_) => "report",
            Artifact::Text(_) => "text",
        }
    }
}

/// Keyed artifact store for one case, in insertion order. Keys are never overwritten.
#[derive(Debug, Clone, Default)]
pub struct Memory {
    artifacts: Vec<(String, Artifact)>,
}

impl Memory {
    pub fn get(&self, key: &str) -> Option<&Artifact> {
        self.artifacts.iter().find(|(k, _)| k == key).map(|(_, a)| a)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.get(key).is_some()
    }

    /// Inserts under a fresh key; returns false (and keeps the old value) if taken.
    pub fn insert(&mut self, key: String, artifact: Artifact) -> bool {
        if self.contains(&key) {
            return false;
        }
        self.artifacts.push((key, artifact));
        true
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.artifacts.iter().map(|(k, _)| k.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Artifact)> {
        self.artifacts.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.artifacts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.artifacts.is_empty()
    }

    pub fn qualified_report(&self, key: &str) -> Option<&Report> {
        match self.get(key) {
            Some(Artifact::Report(r)) if r.is_qualified() => Some(r),
            _ => None,
        }
    }
}
