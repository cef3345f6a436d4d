//! Session snapshot container.
//!
//! ```text
//! "T2RSNAP1"                      8-byte magic (format version 1)
//! u64 BE length, state bytes      canonical serialization of SessionState
//! u32 BE asset count
//!   per asset: u16 BE id length, id, u64 BE length, canonical .ply bytes
//! 32-byte SHA-256 of everything above
//! ```
//!
//! Assets are keyed by content hash; restore verifies every hash.

use sha2::{Digest, Sha256};

use super::SessionState;
use crate::splat::{AssetId, Provenance};
use crate::store::AssetStore;

pub const SNAPSHOT_MAGIC: &[u8; 8] = b"T2RSNAP1";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SnapshotError {
    #[error("CorruptSnapshot: {0}")]
    CorruptSnapshot(String),
    #[error("MissingAsset: {0}")]
    MissingAsset(AssetId),
}

fn corrupt(reason: impl Into<String>) -> SnapshotError {
    SnapshotError::CorruptSnapshot(reason.into())
}

/// Serializes `state` together with every asset it references.
pub fn snapshot_state(state: &SessionState, assets: &AssetStore) -> Result<Vec<u8>, SnapshotError> {
    let body = state.canonical_bytes();
    let mut out = Vec::with_capacity(body.len() + 64);
    out.extend_from_slice(SNAPSHOT_MAGIC);
    out.extend_from_slice(&(body.len() as u64).to_be_bytes());
    out.extend_from_slice(&body);
    let referenced = state.referenced_assets();
    out.extend_from_slice(&(referenced.len() as u32).to_be_bytes());
    for id in referenced {
        let ply = assets.ply(&id).ok_or_else(|| SnapshotError::MissingAsset(id.clone()))?;
        let id_bytes = id.as_str().as_bytes();
        out.extend_from_slice(&(id_bytes.len() as u16).to_be_bytes());
        out.extend_from_slice(id_bytes);
        out.extend_from_slice(&(ply.len() as u64).to_be_bytes());
        out.extend_from_slice(&ply);
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], SnapshotError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| corrupt(format!("truncated {what} at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn be<const N: usize>(&mut self, what: &str) -> Result<[u8; N], SnapshotError> {
        Ok(self.take(N, what)?.try_into().expect("length checked"))
    }
}

/// Restores a state, registering its assets in `assets`.
pub fn restore_state(blob: &[u8], assets: &AssetStore) -> Result<SessionState, SnapshotError> {
    if blob.len() < SNAPSHOT_MAGIC.len() + 32 || &blob[..8] != SNAPSHOT_MAGIC {
        return Err(corrupt("bad magic"));
    }
    let (payload, checksum) = blob.split_at(blob.len() - 32);
    if Sha256::digest(payload).as_slice() != checksum {
        return Err(corrupt("checksum mismatch"));
    }
    let mut r = Reader { bytes: payload, pos: 8 };
    let len = u64::from_be_bytes(r.be("state length")?) as usize;
    let state: SessionState =
        serde_json::from_slice(r.take(len, "state")?).map_err(|e| corrupt(format!("state: {e}")))?;
    let count = u32::from_be_bytes(r.be("asset count")?);
    let mut restored = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let id_len = u16::from_be_bytes(r.be("asset id length")?) as usize;
        let id = std::str::from_utf8(r.take(id_len, "asset id")?).map_err(|_| corrupt("asset id is not UTF-8"))?;
        let ply_len = u64::from_be_bytes(r.be("asset length")?) as usize;
        let ply = r.take(ply_len, "asset")?;
        let id = AssetId::from(id);
        if AssetId::of_bytes(ply) != id {
            return Err(corrupt(format!("asset {id} does not match its hash")));
        }
        restored.push((id, ply));
    }
    if r.pos != payload.len() {
        return Err(corrupt("trailing bytes"));
    }
    for (id, ply) in restored {
        let stored = assets.insert_ply(ply, Provenance::File).map_err(|e| corrupt(format!("asset {id}: {e}")))?;
        debug_assert_eq!(stored, id);
    }
    Ok(state)
}
