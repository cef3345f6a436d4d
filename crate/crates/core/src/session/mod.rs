//! Server-authoritative shared space: shared 3D objects behind sphere
//! proxies, a whiteboard of 2D pins and a private pie menu per user.
//!
//! All mutation goes through [`SessionState::apply`], which the server calls
//! in a single total order. The state is a pure function of the initial state
//! and the applied `(actor, op, time)` log, so replicas replaying the same log
//! agree on [`SessionState::state_hash`].

mod apply;
mod persist;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use apply::{AssetCatalog, GRAB_LEASE_MS, SYSTEM_ACTOR};
pub use persist::{restore_state, snapshot_state, SnapshotError, SNAPSHOT_MAGIC};

use crate::render::{Camera, ViewSlot};
use crate::splat::AssetId;

macro_rules! string_id {
    ($name:ident) => {
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                Self(s)
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }
    };
}

string_id!(UserId);
string_id!(ObjectId);
string_id!(PinId);
string_id!(SessionId);

pub const MIN_SCALE: f64 = 0.01;
pub const MAX_SCALE: f64 = 100.0;

/// Bounds diagonal of a freshly placed object at `uniform_scale = 1`.
pub const NORMALIZED_DIAGONAL: f64 = 0.5;

/// Largest image edge accepted for snapshots and menu views.
pub const MAX_IMAGE_EDGE: u32 = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transform {
    pub position: [f64; 3],
    /// Unit quaternion `(w, x, y, z)`.
    pub rotation: [f64; 4],
    pub uniform_scale: f64,
}

impl Default for Transform {
    fn default() -> Self {
        Self { position: [0.0; 3], rotation: [1.0, 0.0, 0.0, 0.0], uniform_scale: 1.0 }
    }
}

impl Transform {
    pub fn at(position: [f64; 3]) -> Self {
        Self { position, ..Self::default() }
    }
}

/// A shared 3D object. `proxy_radius` is the radius of the interaction sphere
/// and follows every scale change.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceObject {
    pub object_id: ObjectId,
    pub asset_id: AssetId,
    pub transform: Transform,
    /// Asset units to meters before `uniform_scale` is applied.
    pub normalization: f64,
    /// Bounds diagonal in asset units.
    pub asset_diagonal: f64,
    pub proxy_radius: f64,
    pub grabbed_by: Option<UserId>,
    /// Session time of the holder's last grab, move or scale.
    pub lease_touched_ms: Option<u64>,
    pub created_by: UserId,
}

impl SpaceObject {
    fn recompute_proxy(&mut self) {
        self.proxy_radius = 0.5 * self.asset_diagonal * self.normalization * self.transform.uniform_scale;
    }
}

/// What a whiteboard pin shows. Images are never stored in the state; they
/// are re-derived from the asset and these parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PinImage {
    /// Render from `camera`, expressed in the asset's own frame.
    Snapshot { asset_id: AssetId, camera: Camera },
    View { asset_id: AssetId, slot: ViewSlot, resolution: u32 },
    Orbit { asset_id: AssetId, frame_count: u32, resolution: u32 },
}

impl PinImage {
    pub fn asset_id(&self) -> &AssetId {
        match self {
            PinImage::Snapshot { asset_id, .. } | PinImage::View { asset_id, .. } | PinImage::Orbit { asset_id, .. } => asset_id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhiteboardPin {
    pub pin_id: PinId,
    pub image: PinImage,
    /// Whiteboard-normalized position in `[0, 1]²`.
    pub uv: [f64; 2],
    pub scale: f64,
    pub pinned_by: UserId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MenuSource {
    Object { object_id: ObjectId },
    Asset,
}

/// A user's private panel of orthogonal views around the source image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PieMenu {
    pub owner: UserId,
    pub source: MenuSource,
    pub asset_id: AssetId,
    pub resolution: u32,
    pub visible: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: [f64; 3],
    pub forward: [f64; 3],
}

impl Default for Pose {
    fn default() -> Self {
        Self { position: [0.0; 3], forward: [0.0, 0.0, -1.0] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionSettings {
    pub view_resolution: u32,
    pub orbit_frames: u32,
}

impl Default for SessionSettings {
    fn default() -> Self {
        Self { view_resolution: 256, orbit_frames: 36 }
    }
}

/// Whiteboard pin sources on the pie menu: a view slot or the orbit video
/// behind the center image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MenuItem {
    Front,
    Left,
    Right,
    Back,
    Orbit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SessionOp {
    Join,
    Leave,
    ReportPose { pose: Pose },
    /// Without a transform the object appears one meter in front of the
    /// actor's reported pose.
    CreateObject {
        asset_id: AssetId,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        transform: Option<Transform>,
    },
    Grab { object_id: ObjectId },
    Release { object_id: ObjectId },
    Move { object_id: ObjectId, transform: Transform },
    Scale { object_id: ObjectId, scale: f64 },
    DeleteObject { object_id: ObjectId },
    /// Pins a render of the object from a world-space camera.
    Snapshot { object_id: ObjectId, camera: Camera },
    PinView { item: MenuItem, uv: [f64; 2] },
    MovePin { pin_id: PinId, uv: [f64; 2] },
    ScalePin { pin_id: PinId, scale: f64 },
    DeletePin { pin_id: PinId },
    OpenPieMenu { object_id: ObjectId },
    /// Opens the actor's menu directly on an asset, e.g. a finished job.
    OpenAssetMenu { asset_id: AssetId },
    TogglePieMenu,
    /// Releases every grab whose lease has lapsed.
    ExpireLeases,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Change {
    UserJoined { user: UserId },
    UserLeft { user: UserId },
    PoseUpdated { user: UserId, pose: Pose },
    ObjectUpserted { object: SpaceObject },
    ObjectRemoved { object_id: ObjectId },
    PinUpserted { pin: WhiteboardPin },
    PinRemoved { pin_id: PinId },
    /// Private to `menu.owner`.
    MenuUpdated { menu: PieMenu },
    /// Private to `owner`.
    MenuRemoved { owner: UserId },
}

impl Change {
    /// Owner of a private change, `None` for public ones.
    pub fn private_to(&self) -> Option<&UserId> {
        match self {
            Change::MenuUpdated { menu } => Some(&menu.owner),
            Change::MenuRemoved { owner } => Some(owner),
            _ => None,
        }
    }
}

/// The result of one applied operation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionDelta {
    pub revision: u64,
    pub actor: UserId,
    pub changes: Vec<Change>,
    /// Some argument was clamped into range.
    #[serde(default)]
    pub clamped: bool,
}

impl SessionDelta {
    /// The delta as seen by `user`: other users' private changes are removed
    /// while the revision is kept, so every user sees a gap-free sequence.
    pub fn for_user(&self, user: &UserId) -> SessionDelta {
        SessionDelta {
            revision: self.revision,
            actor: self.actor.clone(),
            changes: self.changes.iter().filter(|c| c.private_to().is_none_or(|o| o == user)).cloned().collect(),
            clamped: self.clamped,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SessionError {
    #[error("NotMember: {0} has not joined")]
    NotMember(UserId),
    #[error("AlreadyMember: {0} already joined")]
    AlreadyMember(UserId),
    #[error("UnknownId: no {kind} {id}")]
    UnknownId { kind: &'static str, id: String },
    #[error("GrabDenied: {object_id} is held by {holder}")]
    GrabDenied { object_id: ObjectId, holder: UserId },
    #[error("NotHolder: {object_id} is not held by {actor}")]
    NotHolder { object_id: ObjectId, actor: UserId },
    #[error("InvalidArgument: {0}")]
    InvalidArgument(String),
}

impl SessionError {
    /// Stable snake_case code used on the wire.
    pub fn code(&self) -> &'static str {
        match self {
            SessionError::NotMember(_) => "not_member",
            SessionError::AlreadyMember(_) => "already_member",
            SessionError::UnknownId { .. } => "unknown_id",
            SessionError::GrabDenied { .. } => "grab_denied",
            SessionError::NotHolder { .. } => "not_holder",
            SessionError::InvalidArgument(_) => "invalid_argument",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub session_id: SessionId,
    pub settings: SessionSettings,
    pub users: BTreeSet<UserId>,
    pub poses: BTreeMap<UserId, Pose>,
    pub objects: BTreeMap<ObjectId, SpaceObject>,
    pub pins: BTreeMap<PinId, WhiteboardPin>,
    pub menus: BTreeMap<UserId, PieMenu>,
    pub revision: u64,
}

impl SessionState {
    pub fn new(session_id: SessionId, settings: SessionSettings) -> Self {
        Self {
            session_id,
            settings,
            users: BTreeSet::new(),
            poses: BTreeMap::new(),
            objects: BTreeMap::new(),
            pins: BTreeMap::new(),
            menus: BTreeMap::new(),
            revision: 0,
        }
    }

    /// Canonical encoding: JSON with sorted maps and fixed field order.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("session state is always serializable")
    }

    /// Hex SHA-256 of [`canonical_bytes`](Self::canonical_bytes).
    pub fn state_hash(&self) -> String {
        Sha256::digest(self.canonical_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// The state with every menu but `user`'s removed.
    pub fn view_for(&self, user: &UserId) -> SessionState {
        let mut view = self.clone();
        view.menus.retain(|owner, _| owner == user);
        view
    }

    /// Mirrors a delta onto a replica. Starting from a user's view and
    /// applying every delta as that user received it reproduces
    /// `view_for(user)` of the authoritative state.
    pub fn apply_changes(&mut self, revision: u64, changes: &[Change]) {
        for change in changes {
            match change.clone() {
                Change::UserJoined { user } => {
                    self.users.insert(user);
                }
                Change::UserLeft { user } => {
                    self.users.remove(&user);
                    self.poses.remove(&user);
                    self.menus.remove(&user);
                }
                Change::PoseUpdated { user, pose } => {
                    self.poses.insert(user, pose);
                }
                Change::ObjectUpserted { object } => {
                    self.objects.insert(object.object_id.clone(), object);
                }
                Change::ObjectRemoved { object_id } => {
                    self.objects.remove(&object_id);
                }
                Change::PinUpserted { pin } => {
                    self.pins.insert(pin.pin_id.clone(), pin);
                }
                Change::PinRemoved { pin_id } => {
                    self.pins.remove(&pin_id);
                }
                Change::MenuUpdated { menu } => {
                    self.menus.insert(menu.owner.clone(), menu);
                }
                Change::MenuRemoved { owner } => {
                    self.menus.remove(&owner);
                }
            }
        }
        self.revision = revision;
    }

    /// Every asset the state refers to.
    pub fn referenced_assets(&self) -> BTreeSet<AssetId> {
        let objects = self.objects.values().map(|o| o.asset_id.clone());
        let pins = self.pins.values().map(|p| p.image.asset_id().clone());
        let menus = self.menus.values().map(|m| m.asset_id.clone());
        objects.chain(pins).chain(menus).collect()
    }
}

#[cfg(test)]
mod tests;
