//! File-backed segmentation store.
//!
//! Layout per case:
//!
//! ```text
//! <store>/<case_id>/organ.nii.gz    label map of organs
//! <store>/<case_id>/lesion.nii.gz   optional; any non-zero voxel is lesion
//! <store>/<case_id>/labels.json     optional {"liver": 1, ...}; defaults to {"liver": 1}
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use async_trait::async_trait;

use super::{GatewayError, SegmentationBackend};
use crate::volume::{parse_nifti, Mask};

/// Organ and lesion masks for one case.
///
/// `organ` is relabeled so the i-th requested target carries label `i + 1`;
/// `lesion` is binary (label 1).
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationMasks {
    pub targets: Vec<String>,
    pub organ: Mask,
    pub lesion: Mask,
}

impl SegmentationMasks {
    pub fn organ_label(&self, organ: &str) -> Option<u32> {
        self.targets.iter().position(|t| t == organ).map(|i| i as u32 + 1)
    }

    pub fn lesion_present(&self) -> bool {
        !self.lesion.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct FileSegmentationStore {
    root: PathBuf,
}

impl FileSegmentationStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn load(&self, case_id: &str, targets: &[String]) -> Result<SegmentationMasks, GatewayError> {
        if targets.is_empty() {
            return Err(GatewayError::Precondition("no segmentation targets".into()));
        }
        if !self.has_case(case_id) {
            return Err(GatewayError::UnknownCase(case_id.to_string()));
        }
        let dir = self.root.join(case_id);
        let labels: BTreeMap<String, u32> = match std::fs::read_to_string(dir.join("labels.json")) {
            Ok(text) => serde_json::from_str(&text)
                .map_err(|e| GatewayError::Segmentation(format!("labels.json: {e}")))?,
            Err(_) => BTreeMap::from([("liver".to_string(), 1)]),
        };
        let wanted = targets
            .iter()
            .map(|t| labels.get(t).copied().ok_or_else(|| GatewayError::UnknownTarget(t.clone())))
            .collect::<Result<Vec<_>, _>>()?;

        let read_mask = |name: &str| -> Result<Option<Mask>, GatewayError> {
            let path = dir.join(name);
            let bytes = match std::fs::read(&path) {
                Ok(b) => b,
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
                Err(e) => return Err(GatewayError::Segmentation(format!("{}: {e}", path.display()))),
            };
            let v = parse_nifti(&bytes).map_err(|e| GatewayError::Segmentation(format!("{}: {e}", path.display())))?;
            Mask::from_volume(&v)
                .map(Some)
                .map_err(|e| GatewayError::Segmentation(format!("{}: {e}", path.display())))
        };

        let raw = read_mask("organ.nii.gz")?
            .ok_or_else(|| GatewayError::Segmentation(format!("{case_id}: organ.nii.gz missing")))?;
        let dims = raw.dims();
        let relabeled = raw
            .labels()
            .iter()
            .map(|l| wanted.iter().position(|w| w == l).map_or(0, |i| i as u32 + 1))
            .collect();
        let organ = Mask::new(dims, relabeled).map_err(|e| GatewayError::Segmentation(e.to_string()))?;
        let lesion = match read_mask("lesion.nii.gz")? {
            Some(m) if m.dims() != dims => {
                return Err(GatewayError::Segmentation(format!(
                    "lesion dims {:?} differ from organ dims {dims:?}",
                    m.dims()
                )))
            }
            Some(m) => m.binarize(1),
            None => Mask::zeros(dims),
        };
        Ok(SegmentationMasks { targets: targets.to_vec(), organ, lesion })
    }
}

#[async_trait]
impl SegmentationBackend for FileSegmentationStore {
    async fn segment(&self, case_id: &str, targets: &[String]) -> Result<SegmentationMasks, GatewayError> {
        let store = self.clone();
        let case_id = case_id.to_string();
        let targets = targets.to_vec();
        tokio::task::spawn_blocking(move || store.load(&case_id, &targets))
            .await
            .map_err(|e| GatewayError::Segmentation(e.to_string()))?
    }

    fn has_case(&self, case_id: &str) -> bool {
        !case_id.is_empty()
            && !case_id.contains(['/', '\\'])
            && case_id != ".."
            && self.root.join(case_id).is_dir()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::write_nifti_gz;

    fn write_mask(dir: &Path, name: &str, m: &Mask) {
        std::fs::write(dir.join(name), write_nifti_gz(&m.to_volume([1.0; 3]).unwrap())).unwrap();
    }

    fn store_with_case(lesion: bool) -> (tempfile::TempDir, FileSegmentationStore) {
        let tmp = tempfile::tempdir().unwrap();
        let case = tmp.path().join("c1");
        std::fs::create_dir(&case).unwrap();
        let mut organ = Mask::zeros([4, 4, 4]);
        organ.set(1, 1, 1, 5);
        organ.set(2, 2, 2, 7);
        write_mask(&case, "organ.nii.gz", &organ);
        std::fs::write(case.join("labels.json"), r#"{"liver": 5, "spleen": 7}"#).unwrap();
        if lesion {
            let mut l = Mask::zeros([4, 4, 4]);
            l.set(1, 1, 1, 3);
            write_mask(&case, "lesion.nii.gz", &l);
        }
        let store = FileSegmentationStore::new(tmp.path());
        (tmp, store)
    }

    #[tokio::test]
    async fn stored_pair_is_returned() {
        let (_tmp, store) = store_with_case(true);
        let m = store.segment("c1", &["spleen".into()]).await.unwrap();
        assert_eq!(m.organ.count(1), 1);
        assert_eq!(m.organ.get(2, 2, 2), 1);
        assert_eq!(m.organ.get(1, 1, 1), 0);
        assert_eq!(m.lesion.get(1, 1, 1), 1);
        assert!(m.lesion_present());
    }

    #[tokio::test]
    async fn missing_lesion_file_gives_empty_mask() {
        let (_tmp, store) = store_with_case(false);
        let m = store.segment("c1", &["liver".into()]).await.unwrap();
        assert!(!m.lesion_present());
        assert_eq!(m.lesion.dims(), [4, 4, 4]);
    }

    #[tokio::test]
    async fn unknown_target_and_case() {
        let (_tmp, store) = store_with_case(false);
        assert_eq!(
            store.segment("c1", &["kidney".into()]).await,
            Err(GatewayError::UnknownTarget("kidney".into()))
        );
        assert_eq!(
            store.segment("nope", &["liver".into()]).await,
            Err(GatewayError::UnknownCase("nope".into()))
        );
        assert!(!store.has_case("../c1"));
    }
}
