//! Session hub: one serialized applier per session, fan-out of redacted
//! deltas to connections, and the resync ring.
//!
//! Everything here is synchronous. Each room is guarded by a mutex, and every
//! frame a room emits is queued while that mutex is held, so each connection
//! sees revisions in order.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use splatspace_core::session::{
    restore_state, snapshot_state, Change, SessionDelta, SessionError, SessionId, SessionOp, SessionSettings,
    SessionState, SnapshotError, UserId, SYSTEM_ACTOR,
};
use splatspace_core::splat::AssetId;
use splatspace_core::store::AssetStore;

use crate::frame::{self, FrameError};
use crate::images::RenderCache;
use crate::message::{visible_attachments, Attachment, Body, DeltaBody, Message};

pub type ConnId = u64;

/// File extension of persisted session snapshots.
pub const SNAPSHOT_EXT: &str = "t2rsnap";

/// Outgoing side of a connection.
pub trait Sink: Send + Sync {
    /// Queues an encoded frame. Returns false when the queue is full or the
    /// connection is gone.
    fn send(&self, frame: Arc<Vec<u8>>) -> bool;
    /// Drops the connection without flushing.
    fn kill(&self);
}

/// Session time source, in milliseconds.
#[derive(Debug, Clone)]
pub enum Clock {
    /// Unix time, so leases survive a restart.
    Wall,
    /// Driven by tests.
    Manual(Arc<AtomicU64>),
}

impl Clock {
    pub fn now_ms(&self) -> u64 {
        match self {
            Clock::Wall => SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64),
            Clock::Manual(t) => t.load(Ordering::SeqCst),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct HubConfig {
    pub resync_depth: usize,
    pub settings: SessionSettings,
}

impl Default for HubConfig {
    fn default() -> Self {
        Self { resync_depth: 1024, settings: SessionSettings::default() }
    }
}

struct Subscriber {
    user: UserId,
    sink: Arc<dyn Sink>,
    /// Cleared when the send queue overflows; the entry stays until the
    /// connection task reports the disconnect.
    alive: bool,
}

struct Room {
    state: SessionState,
    ring: VecDeque<DeltaBody>,
    subs: BTreeMap<ConnId, Subscriber>,
    /// Cutouts that produced assets, shown at the center of the pie menu.
    sources: HashMap<AssetId, String>,
}

/// Encodes a message, dropping attachments if the frame would be too large.
pub fn encode_frame(message: &Message) -> Arc<Vec<u8>> {
    match frame::encode(message) {
        Ok(f) => Arc::new(f),
        Err(FrameError::FrameTooLarge { len }) => {
            log::warn!("{} frame of {len} bytes exceeds the limit; dropping attachments", message.body.type_name());
            let mut slim = message.clone();
            match &mut slim.body {
                Body::Delta(d) => d.attachments.clear(),
                Body::Welcome { attachments, .. } | Body::Resync { attachments, .. } => attachments.clear(),
                _ => {}
            }
            Arc::new(frame::encode(&slim).expect("message without attachments fits a frame"))
        }
        Err(e) => unreachable!("encoding cannot fail with {e}"),
    }
}

impl Room {
    fn new(state: SessionState) -> Self {
        Self { state, ring: VecDeque::new(), subs: BTreeMap::new(), sources: HashMap::new() }
    }

    /// Records `delta` and queues it for every subscriber. `origin` gets the
    /// request's `seq`.
    fn broadcast(&mut self, delta: DeltaBody, origin: Option<(ConnId, Option<u64>)>, depth: usize) {
        let mut by_user: BTreeMap<UserId, Arc<Vec<u8>>> = BTreeMap::new();
        let mut dead = Vec::new();
        for (id, sub) in self.subs.iter().filter(|(_, s)| s.alive) {
            let seq = origin.and_then(|(conn, seq)| (conn == *id).then_some(seq)).flatten();
            let frame = if seq.is_some() {
                encode_frame(&Message::reply(seq, Body::Delta(delta.for_user(&sub.user))))
            } else {
                by_user
                    .entry(sub.user.clone())
                    .or_insert_with(|| encode_frame(&Message::new(Body::Delta(delta.for_user(&sub.user)))))
                    .clone()
            };
            if !sub.sink.send(frame) {
                dead.push(*id);
            }
        }
        for id in dead {
            if let Some(sub) = self.subs.get_mut(&id) {
                sub.alive = false;
                log::warn!("dropping connection {id} of {}: send queue full", sub.user);
                sub.sink.kill();
            }
        }
        if depth > 0 {
            self.ring.push_back(delta);
            while self.ring.len() > depth {
                self.ring.pop_front();
            }
        }
    }
}

pub struct Hub {
    config: HubConfig,
    assets: Arc<AssetStore>,
    renders: RenderCache,
    clock: Clock,
    rooms: Mutex<BTreeMap<SessionId, Arc<Mutex<Room>>>>,
}

impl Hub {
    pub fn new(config: HubConfig, assets: Arc<AssetStore>, clock: Clock) -> Self {
        let renders = RenderCache::new(assets.clone());
        Self { config, assets, renders, clock, rooms: Mutex::new(BTreeMap::new()) }
    }

    pub fn assets(&self) -> &Arc<AssetStore> {
        &self.assets
    }

    pub fn renders(&self) -> &RenderCache {
        &self.renders
    }

    pub fn clock(&self) -> &Clock {
        &self.clock
    }

    pub fn settings(&self) -> SessionSettings {
        self.config.settings
    }

    fn room(&self, session: &SessionId) -> Option<Arc<Mutex<Room>>> {
        self.rooms.lock().expect("rooms poisoned").get(session).cloned()
    }

    fn room_or_create(&self, session: &SessionId) -> Arc<Mutex<Room>> {
        self.rooms
            .lock()
            .expect("rooms poisoned")
            .entry(session.clone())
            .or_insert_with(|| Arc::new(Mutex::new(Room::new(SessionState::new(session.clone(), self.config.settings)))))
            .clone()
    }

    pub fn sessions(&self) -> Vec<SessionId> {
        self.rooms.lock().expect("rooms poisoned").keys().cloned().collect()
    }

    /// Copy of a session's full authoritative state.
    pub fn state(&self, session: &SessionId) -> Option<SessionState> {
        Some(self.room(session)?.lock().expect("room poisoned").state.clone())
    }

    fn attachments(&self, room: &Room, op: &SessionOp, delta: &SessionDelta) -> Vec<Attachment> {
        let mut out = Vec::new();
        for change in &delta.changes {
            match (op, change) {
                (SessionOp::Snapshot { .. } | SessionOp::PinView { .. }, Change::PinUpserted { pin }) => {
                    out.extend(self.renders.pin(pin));
                }
                (SessionOp::OpenPieMenu { .. } | SessionOp::OpenAssetMenu { .. }, Change::MenuUpdated { menu }) => {
                    out.extend(self.renders.menu(menu, room.sources.get(&menu.asset_id).map(String::as_str)));
                }
                _ => {}
            }
        }
        out
    }

    fn full_attachments(&self, room: &Room, user: &UserId) -> Vec<Attachment> {
        let mut out: Vec<Attachment> = room.state.pins.values().flat_map(|p| self.renders.pin(p)).collect();
        if let Some(menu) = room.state.menus.get(user) {
            out.extend(self.renders.menu(menu, room.sources.get(&menu.asset_id).map(String::as_str)));
        }
        out
    }

    fn apply_locked(
        &self,
        room: &mut Room,
        actor: &UserId,
        op: &SessionOp,
        origin: Option<(ConnId, Option<u64>)>,
    ) -> Result<u64, SessionError> {
        let delta = room.state.apply(actor, op, self.clock.now_ms(), self.assets.as_ref())?;
        let attachments = self.attachments(room, op, &delta);
        let revision = delta.revision;
        room.broadcast(DeltaBody::new(delta, attachments), origin, self.config.resync_depth);
        Ok(revision)
    }

    /// Adds a connection to a session, joining the user if needed, and
    /// queues the welcome on `sink`.
    pub fn join(&self, session: &SessionId, user: &UserId, conn: ConnId, sink: Arc<dyn Sink>) -> Result<u64, SessionError> {
        let room = self.room_or_create(session);
        let mut room = room.lock().expect("room poisoned");
        if !room.state.users.contains(user) {
            self.apply_locked(&mut room, user, &SessionOp::Join, None)?;
        }
        let revision = room.state.revision;
        let welcome = Body::Welcome {
            user: user.clone(),
            session: session.clone(),
            revision,
            full_state: room.state.view_for(user),
            attachments: self.full_attachments(&room, user),
        };
        sink.send(encode_frame(&Message::new(welcome)));
        room.subs.insert(conn, Subscriber { user: user.clone(), sink, alive: true });
        Ok(revision)
    }

    /// Removes a connection; the user leaves once their last connection is
    /// gone.
    pub fn disconnect(&self, session: &SessionId, conn: ConnId) {
        let Some(room) = self.room(session) else { return };
        let mut room = room.lock().expect("room poisoned");
        let Some(sub) = room.subs.remove(&conn) else { return };
        let still_connected = room.subs.values().any(|s| s.alive && s.user == sub.user);
        if !still_connected && room.state.users.contains(&sub.user) {
            if let Err(e) = self.apply_locked(&mut room, &sub.user, &SessionOp::Leave, None) {
                log::warn!("leave for {} failed: {e}", sub.user);
            }
        }
    }

    /// Applies a client operation. On success the originating connection
    /// receives the delta carrying `seq` as its reply.
    pub fn apply(
        &self,
        session: &SessionId,
        actor: &UserId,
        op: &SessionOp,
        conn: ConnId,
        seq: Option<u64>,
    ) -> Result<u64, SessionError> {
        let room = self.room(session).ok_or_else(|| SessionError::NotMember(actor.clone()))?;
        let mut room = room.lock().expect("room poisoned");
        self.apply_locked(&mut room, actor, op, Some((conn, seq)))
    }

    /// Replies to a resync request on `sink`: the retained deltas after
    /// `from_revision`, or the full state if the ring no longer reaches back.
    pub fn resync(
        &self,
        session: &SessionId,
        user: &UserId,
        from_revision: u64,
        sink: &dyn Sink,
        seq: Option<u64>,
    ) -> Result<(), SessionError> {
        let room = self.room(session).ok_or_else(|| SessionError::NotMember(user.clone()))?;
        let room = room.lock().expect("room poisoned");
        let revision = room.state.revision;
        if from_revision > revision {
            return Err(SessionError::InvalidArgument(format!("from_revision {from_revision} is ahead of {revision}")));
        }
        let reaches = from_revision == revision || room.ring.front().is_some_and(|d| d.revision <= from_revision + 1);
        let body = if reaches {
            let deltas = room.ring.iter().filter(|d| d.revision > from_revision).map(|d| d.for_user(user)).collect();
            Body::Resync { from_revision, revision: Some(revision), deltas: Some(deltas), full_state: None, attachments: vec![] }
        } else {
            Body::Resync {
                from_revision,
                revision: Some(revision),
                deltas: None,
                full_state: Some(room.state.view_for(user)),
                attachments: visible_attachments(&self.full_attachments(&room, user), user),
            }
        };
        sink.send(encode_frame(&Message::reply(seq, body)));
        Ok(())
    }

    /// Opens the pie menu of a freshly generated asset for `user`.
    pub fn open_asset_menu(
        &self,
        session: &SessionId,
        user: &UserId,
        asset_id: &AssetId,
        source: Option<String>,
    ) -> Result<u64, SessionError> {
        let room = self.room(session).ok_or_else(|| SessionError::NotMember(user.clone()))?;
        let mut room = room.lock().expect("room poisoned");
        if let Some(png) = source {
            room.sources.insert(asset_id.clone(), png);
        }
        self.apply_locked(&mut room, user, &SessionOp::OpenAssetMenu { asset_id: asset_id.clone() }, None)
    }

    /// Releases lapsed grabs in every session. Returns how many sessions
    /// changed.
    pub fn expire_leases(&self) -> usize {
        let rooms: Vec<_> = self.rooms.lock().expect("rooms poisoned").values().cloned().collect();
        let system = UserId(SYSTEM_ACTOR.into());
        let mut changed = 0;
        for room in rooms {
            let mut room = room.lock().expect("room poisoned");
            if !room.state.expired_leases(self.clock.now_ms()).is_empty()
                && self.apply_locked(&mut room, &system, &SessionOp::ExpireLeases, None).is_ok()
            {
                changed += 1;
            }
        }
        changed
    }

    pub fn snapshot(&self, session: &SessionId) -> Option<Result<Vec<u8>, SnapshotError>> {
        let room = self.room(session)?;
        let room = room.lock().expect("room poisoned");
        Some(snapshot_state(&room.state, &self.assets))
    }

    /// Writes every session to `<dir>/<session>.t2rsnap`.
    pub fn persist(&self, dir: &Path) -> std::io::Result<usize> {
        std::fs::create_dir_all(dir)?;
        let sessions = self.sessions();
        for session in &sessions {
            let blob = self
                .snapshot(session)
                .expect("listed session exists")
                .map_err(|e| std::io::Error::other(e.to_string()))?;
            let path = dir.join(format!("{session}.{SNAPSHOT_EXT}"));
            let tmp = path.with_extension("tmp");
            std::fs::write(&tmp, blob)?;
            std::fs::rename(&tmp, &path)?;
        }
        Ok(sessions.len())
    }

    /// Loads every snapshot in `dir`, replacing sessions of the same id.
    pub fn restore(&self, dir: &Path) -> std::io::Result<usize> {
        let mut n = 0;
        let entries = match std::fs::read_dir(dir) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(0),
            Err(e) => return Err(e),
        };
        let mut paths: Vec<_> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == SNAPSHOT_EXT))
            .collect();
        paths.sort();
        for path in paths {
            let blob = std::fs::read(&path)?;
            let state = restore_state(&blob, &self.assets)
                .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, format!("{}: {e}", path.display())))?;
            self.rooms
                .lock()
                .expect("rooms poisoned")
                .insert(state.session_id.clone(), Arc::new(Mutex::new(Room::new(state))));
            n += 1;
        }
        Ok(n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use splatspace_core::session::ObjectId;
    use splatspace_core::splat::{GaussianSplatAsset, Provenance, Splat};

    #[derive(Default)]
    struct VecSink {
        frames: Mutex<Vec<Arc<Vec<u8>>>>,
        capacity: usize,
        killed: std::sync::atomic::AtomicBool,
    }

    impl VecSink {
        fn with_capacity(capacity: usize) -> Arc<Self> {
            Arc::new(Self { capacity, ..Default::default() })
        }

        fn messages(&self) -> Vec<Message> {
            self.frames.lock().unwrap().iter().map(|f| frame::decode(f).unwrap().0).collect()
        }
    }

    impl Sink for VecSink {
        fn send(&self, frame: Arc<Vec<u8>>) -> bool {
            let mut frames = self.frames.lock().unwrap();
            if frames.len() >= self.capacity {
                return false;
            }
            frames.push(frame);
            true
        }

        fn kill(&self) {
            self.killed.store(true, Ordering::SeqCst);
        }
    }

    fn hub(depth: usize) -> (Hub, AssetId, Arc<AtomicU64>) {
        let store = Arc::new(AssetStore::new());
        let id = store.insert(GaussianSplatAsset::new(
            vec![
                Splat::new([0.0; 3], [1.0, 0.0, 0.0, 0.0], [-2.0; 3], 3.0, [1.0, 0.0, 0.0]),
                Splat::new([0.3, 0.2, 0.0], [1.0, 0.0, 0.0, 0.0], [-2.0; 3], 3.0, [0.0, 1.0, 0.0]),
            ],
            Provenance::Mock,
        ));
        let t = Arc::new(AtomicU64::new(0));
        let config = HubConfig { resync_depth: depth, settings: SessionSettings { view_resolution: 16, orbit_frames: 3 } };
        (Hub::new(config, store, Clock::Manual(t.clone())), id, t)
    }

    fn sid() -> SessionId {
        SessionId("room".into())
    }

    fn uid(u: &str) -> UserId {
        UserId(u.into())
    }

    fn deltas(sink: &VecSink) -> Vec<DeltaBody> {
        sink.messages()
            .into_iter()
            .filter_map(|m| match m.body {
                Body::Delta(d) => Some(d),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn welcome_then_ordered_deltas() {
        let (hub, asset, _) = hub(16);
        let a = VecSink::with_capacity(100);
        let b = VecSink::with_capacity(100);
        assert_eq!(hub.join(&sid(), &uid("A"), 1, a.clone()).unwrap(), 1);
        assert_eq!(hub.join(&sid(), &uid("B"), 2, b.clone()).unwrap(), 2);
        let rev = hub.apply(&sid(), &uid("A"), &SessionOp::CreateObject { asset_id: asset, transform: None }, 1, Some(7)).unwrap();
        assert_eq!(rev, 3);
        let a_msgs = a.messages();
        assert!(matches!(a_msgs[0].body, Body::Welcome { revision: 1, .. }));
        let last = a_msgs.last().unwrap();
        assert_eq!(last.seq, Some(7));
        let b_msgs = b.messages();
        assert!(matches!(&b_msgs[0].body, Body::Welcome { revision: 2, .. }));
        assert_eq!(b_msgs.last().unwrap().seq, None);
        let revs: Vec<u64> = deltas(&a).iter().map(|d| d.revision).collect();
        assert_eq!(revs, vec![2, 3]);
    }

    #[test]
    fn menu_stays_private_but_revision_is_shared() {
        let (hub, asset, _) = hub(16);
        let a = VecSink::with_capacity(100);
        let b = VecSink::with_capacity(100);
        hub.join(&sid(), &uid("A"), 1, a.clone()).unwrap();
        hub.join(&sid(), &uid("B"), 2, b.clone()).unwrap();
        hub.open_asset_menu(&sid(), &uid("A"), &asset, None).unwrap();
        let for_a = deltas(&a).pop().unwrap();
        let for_b = deltas(&b).pop().unwrap();
        assert_eq!(for_a.revision, for_b.revision);
        assert!(for_b.changes.is_empty() && for_b.attachments.is_empty());
        let names: Vec<_> = for_a.attachments.iter().map(|x| x.name.as_str()).collect();
        assert_eq!(names, ["front", "left", "right", "back", "center"]);
    }

    #[test]
    fn pins_carry_images() {
        let (hub, asset, _) = hub(16);
        let a = VecSink::with_capacity(100);
        hub.join(&sid(), &uid("A"), 1, a.clone()).unwrap();
        hub.open_asset_menu(&sid(), &uid("A"), &asset, None).unwrap();
        let op = SessionOp::PinView { item: splatspace_core::session::MenuItem::Orbit, uv: [0.5, 0.5] };
        hub.apply(&sid(), &uid("A"), &op, 1, None).unwrap();
        let d = deltas(&a).pop().unwrap();
        assert_eq!(d.attachments.len(), 3);
        assert!(d.attachments.iter().all(|x| x.target.starts_with("pin:")));
    }

    #[test]
    fn resync_returns_gap_or_full_state() {
        let (hub, asset, _) = hub(3);
        let a = VecSink::with_capacity(1000);
        hub.join(&sid(), &uid("A"), 1, a.clone()).unwrap();
        for _ in 0..3 {
            hub.apply(&sid(), &uid("A"), &SessionOp::CreateObject { asset_id: asset.clone(), transform: None }, 1, None).unwrap();
        }
        let r = VecSink::with_capacity(10);
        hub.resync(&sid(), &uid("A"), 4, r.as_ref(), Some(1)).unwrap();
        hub.resync(&sid(), &uid("A"), 2, r.as_ref(), Some(2)).unwrap();
        hub.resync(&sid(), &uid("A"), 0, r.as_ref(), Some(3)).unwrap();
        let replies = r.messages();
        let Body::Resync { deltas: Some(d), .. } = &replies[0].body else { panic!() };
        assert!(d.is_empty());
        let Body::Resync { deltas: Some(d), .. } = &replies[1].body else { panic!() };
        assert_eq!(d.iter().map(|d| d.revision).collect::<Vec<_>>(), vec![3, 4]);
        let Body::Resync { full_state: Some(s), revision: Some(4), .. } = &replies[2].body else { panic!() };
        assert_eq!(s.objects.len(), 3);
        assert!(hub.resync(&sid(), &uid("A"), 9, r.as_ref(), None).is_err());
    }

    #[test]
    fn slow_connection_is_dropped() {
        let (hub, asset, _) = hub(16);
        let slow = VecSink::with_capacity(2);
        let fast = VecSink::with_capacity(100);
        hub.join(&sid(), &uid("S"), 1, slow.clone()).unwrap();
        hub.join(&sid(), &uid("F"), 2, fast.clone()).unwrap();
        for _ in 0..3 {
            hub.apply(&sid(), &uid("F"), &SessionOp::CreateObject { asset_id: asset.clone(), transform: None }, 2, None).unwrap();
        }
        assert!(slow.killed.load(Ordering::SeqCst));
        assert!(!fast.killed.load(Ordering::SeqCst));
        hub.disconnect(&sid(), 1);
        assert!(!hub.state(&sid()).unwrap().users.contains(&uid("S")));
    }

    #[test]
    fn lease_expiry_tick_releases() {
        let (hub, asset, t) = hub(16);
        let a = VecSink::with_capacity(100);
        hub.join(&sid(), &uid("A"), 1, a.clone()).unwrap();
        hub.apply(&sid(), &uid("A"), &SessionOp::CreateObject { asset_id: asset, transform: None }, 1, None).unwrap();
        let obj = ObjectId("obj-2".into());
        hub.apply(&sid(), &uid("A"), &SessionOp::Grab { object_id: obj.clone() }, 1, None).unwrap();
        assert_eq!(hub.expire_leases(), 0);
        t.store(10_001, Ordering::SeqCst);
        assert_eq!(hub.expire_leases(), 1);
        assert!(hub.state(&sid()).unwrap().objects[&obj].grabbed_by.is_none());
        assert_eq!(deltas(&a).last().unwrap().actor.as_str(), SYSTEM_ACTOR);
    }

    #[test]
    fn persist_and_restore() {
        let (hub, asset, _) = hub(16);
        let a = VecSink::with_capacity(100);
        hub.join(&sid(), &uid("A"), 1, a).unwrap();
        hub.apply(&sid(), &uid("A"), &SessionOp::CreateObject { asset_id: asset, transform: None }, 1, None).unwrap();
        let dir = std::env::temp_dir().join(format!("hub-persist-{}", std::process::id()));
        assert_eq!(hub.persist(&dir).unwrap(), 1);
        let (fresh, _, _) = hub_empty();
        assert_eq!(fresh.restore(&dir).unwrap(), 1);
        assert_eq!(fresh.state(&sid()).unwrap().state_hash(), hub.state(&sid()).unwrap().state_hash());
        std::fs::remove_dir_all(dir).unwrap();
    }

    fn hub_empty() -> (Hub, (), ()) {
        (Hub::new(HubConfig::default(), Arc::new(AssetStore::new()), Clock::Wall), (), ())
    }
}
