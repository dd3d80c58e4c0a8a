#![allow(dead_code)]

use std::sync::Arc;

use async_trait::async_trait;
use copilot_core::gateway::{
    BackendPolicy, Gateway, GatewayError, HashEmbedder, Matcher, ScriptRecord, ScriptedBackend, SegmentationBackend,
    SegmentationMasks,
};
use copilot_core::volume::{Datatype, Mask, Volume};

pub struct MemStore(pub Option<SegmentationMasks>);

#[async_trait]
impl SegmentationBackend for MemStore {
    async fn segment(&self, case_id: &str, _: &[String]) -> Result<SegmentationMasks, GatewayError> {
        self.0.clone().ok_or_else(|| GatewayError::UnknownCase(case_id.into()))
    }
    fn has_case(&self, _: &str) -> bool {
        self.0.is_some()
    }
}

pub fn contains(s: &str) -> Matcher {
    Matcher::Contains(s.into())
}

pub struct Backends {
    pub gateway: Gateway,
    pub chat: Arc<ScriptedBackend>,
    pub vision: Arc<ScriptedBackend>,
}

pub fn backends(chat: Vec<ScriptRecord>, vision: Vec<ScriptRecord>) -> Backends {
    let chat = Arc::new(ScriptedBackend::new(chat));
    let vision = Arc::new(ScriptedBackend::new(vision));
    let no_retry = BackendPolicy { max_retries: 0, ..BackendPolicy::default() };
    let gateway = Gateway {
        chat: chat.clone(),
        vision: vision.clone(),
        embedding: Arc::new(HashEmbedder::default()),
        segmentation: Arc::new(MemStore(None)),
        chat_model: "chat".into(),
        vision_model: "vision".into(),
        chat_policy: no_retry,
        vision_policy: no_retry,
    };
    Backends { gateway, chat, vision }
}

pub fn count(backend: &ScriptedBackend, marker: &str) -> usize {
    backend.calls().iter().filter(|c| c.contains(marker)).count()
}

/// 20x20x20 volume with a cubic liver at [4, 15]^3 and the given lesion voxels.
pub fn cube_case(lesion: &[[usize; 3]]) -> (Volume, SegmentationMasks) {
    let dims = [20, 20, 20];
    let mut organ = Mask::zeros(dims);
    let mut data = vec![-1000.0; 8000];
    for z in 4..16 {
        for y in 4..16 {
            for x in 4..16 {
                organ.set(x, y, z, 1);
                data[x + 20 * (y + 20 * z)] = 60.0;
            }
        }
    }
    let mut les = Mask::zeros(dims);
    for &[x, y, z] in lesion {
        les.set(x, y, z, 1);
        data[x + 20 * (y + 20 * z)] = 10.0;
    }
    let volume = Volume::new(dims, [1.0; 3], Datatype::Int16, data).unwrap();
    (volume, SegmentationMasks { targets: vec!["liver".into()], organ, lesion: les })
}
