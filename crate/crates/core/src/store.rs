//! Content-addressed registry of immutable splat assets.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use crate::splat::{parse_ply_with, serialize_ply, AssetId, GaussianSplatAsset, PlyError, Provenance};

#[derive(Debug, Clone)]
pub struct StoredAsset {
    pub asset: Arc<GaussianSplatAsset>,
    /// Canonical `.ply` encoding; its hash is the asset id.
    pub ply: Arc<Vec<u8>>,
}

#[derive(Debug, Default)]
pub struct AssetStore {
    assets: RwLock<HashMap<AssetId, StoredAsset>>,
}

impl AssetStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&self, asset: GaussianSplatAsset) -> AssetId {
        let id = asset.id().clone();
        let ply = Arc::new(serialize_ply(&asset));
        self.assets
            .write()
            .expect("asset store poisoned")
            .entry(id.clone())
            .or_insert(StoredAsset { asset: Arc::new(asset), ply });
        id
    }

    pub fn insert_ply(&self, bytes: &[u8], provenance: Provenance) -> Result<AssetId, PlyError> {
        Ok(self.insert(parse_ply_with(bytes, provenance)?))
    }

    pub fn get(&self, id: &AssetId) -> Option<Arc<GaussianSplatAsset>> {
        self.assets.read().expect("asset store poisoned").get(id).map(|s| s.asset.clone())
    }

    pub fn ply(&self, id: &AssetId) -> Option<Arc<Vec<u8>>> {
        self.assets.read().expect("asset store poisoned").get(id).map(|s| s.ply.clone())
    }

    pub fn contains(&self, id: &AssetId) -> bool {
        self.assets.read().expect("asset store poisoned").contains_key(id)
    }

    /// All ids in sorted order.
    pub fn ids(&self) -> Vec<AssetId> {
        let mut ids: Vec<_> = self.assets.read().expect("asset store poisoned").keys().cloned().collect();
        ids.sort();
        ids
    }

    pub fn len(&self) -> usize {
        self.assets.read().expect("asset store poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
