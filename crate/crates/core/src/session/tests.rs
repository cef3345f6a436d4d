use super::*;
use crate::oracle::session_sim::{model_check, OpGenerator};
use crate::oracle::{max_channel_diff, reference_render};
use crate::render::render;
use crate::splat::{GaussianSplatAsset, Provenance, Splat};
use crate::store::AssetStore;

fn store_with_assets(n: usize) -> AssetStore {
    let store = AssetStore::new();
    for i in 0..n {
        let splats = (0..3)
            .map(|k| {
                let t = (i * 3 + k) as f32;
                Splat::new([0.1 * t, -0.05 * t, 0.02 * k as f32], [1.0, 0.0, 0.0, 0.0], [-2.5; 3], 1.5, [0.3 * k as f32, -0.4, 0.2])
            })
            .collect();
        store.insert(GaussianSplatAsset::new(splats, Provenance::Mock));
    }
    store
}

fn user(name: &str) -> UserId {
    UserId(name.into())
}

fn fresh() -> SessionState {
    SessionState::new(SessionId("s".into()), SessionSettings::default())
}

struct World {
    state: SessionState,
    assets: AssetStore,
}

impl World {
    fn new(users: &[&str]) -> Self {
        let mut w = Self { state: fresh(), assets: store_with_assets(2) };
        for u in users {
            w.ok(u, SessionOp::Join, 0);
        }
        w
    }

    fn apply(&mut self, actor: &str, op: SessionOp, now: u64) -> Result<SessionDelta, SessionError> {
        self.state.apply(&user(actor), &op, now, &self.assets)
    }

    fn ok(&mut self, actor: &str, op: SessionOp, now: u64) -> SessionDelta {
        self.apply(actor, op, now).expect("operation applies")
    }

    fn create(&mut self, actor: &str, now: u64) -> ObjectId {
        let asset_id = self.assets.ids()[0].clone();
        let delta = self.ok(actor, SessionOp::CreateObject { asset_id, transform: None }, now);
        match &delta.changes[0] {
            Change::ObjectUpserted { object } => object.object_id.clone(),
            other => panic!("unexpected change {other:?}"),
        }
    }
}

#[test]
fn second_grab_is_denied() {
    let mut w = World::new(&["A", "B"]);
    let obj = w.create("A", 0);
    w.ok("A", SessionOp::Grab { object_id: obj.clone() }, 10);
    let before = w.state.state_hash();
    let err = w.apply("B", SessionOp::Grab { object_id: obj.clone() }, 20).unwrap_err();
    assert_eq!(err, SessionError::GrabDenied { object_id: obj.clone(), holder: user("A") });
    assert_eq!(err.code(), "grab_denied");
    assert_eq!(w.state.state_hash(), before);
    assert_eq!(w.state.holder(&obj, 20), Some(&user("A")));
}

#[test]
fn move_is_read_back_exactly() {
    let mut w = World::new(&["A"]);
    let obj = w.create("A", 0);
    w.ok("A", SessionOp::Grab { object_id: obj.clone() }, 0);
    let t = Transform { position: [1.0, 2.0, 3.0], rotation: [1.0, 0.0, 0.0, 0.0], uniform_scale: 1.0 };
    let delta = w.ok("A", SessionOp::Move { object_id: obj.clone(), transform: t }, 5);
    assert!(!delta.clamped);
    assert_eq!(w.state.objects[&obj].transform, t);
}

#[test]
fn default_placement_is_one_meter_ahead() {
    let mut w = World::new(&["A"]);
    let pose = Pose { position: [1.0, 1.6, 0.0], forward: [2.0, 0.0, 0.0] };
    w.ok("A", SessionOp::ReportPose { pose }, 0);
    let obj = w.create("A", 0);
    let p = w.state.objects[&obj].transform.position;
    assert!((p[0] - 2.0).abs() < 1e-12 && (p[1] - 1.6).abs() < 1e-12 && p[2].abs() < 1e-12);
}

#[test]
fn placement_normalizes_to_half_meter() {
    let mut w = World::new(&["A"]);
    let obj = w.create("A", 0);
    let o = &w.state.objects[&obj];
    assert!((o.asset_diagonal * o.normalization - NORMALIZED_DIAGONAL).abs() < 1e-12);
    assert!((o.proxy_radius - 0.25).abs() < 1e-12);
}

#[test]
fn scale_clamps_and_tracks_proxy() {
    let mut w = World::new(&["A"]);
    let obj = w.create("A", 0);
    w.ok("A", SessionOp::Grab { object_id: obj.clone() }, 0);
    let d = w.ok("A", SessionOp::Scale { object_id: obj.clone(), scale: 1e6 }, 1);
    assert!(d.clamped);
    assert_eq!(w.state.objects[&obj].transform.uniform_scale, MAX_SCALE);
    assert!((w.state.objects[&obj].proxy_radius - 0.25 * MAX_SCALE).abs() < 1e-9);
    let d = w.ok("A", SessionOp::Scale { object_id: obj.clone(), scale: 0.0 }, 2);
    assert!(d.clamped);
    assert_eq!(w.state.objects[&obj].transform.uniform_scale, MIN_SCALE);
    assert!(w.apply("A", SessionOp::Scale { object_id: obj, scale: f64::NAN }, 3).is_err());
}

#[test]
fn move_requires_live_lease() {
    let mut w = World::new(&["A", "B"]);
    let obj = w.create("A", 0);
    let t = Transform::at([0.0, 1.0, 0.0]);
    let err = w.apply("A", SessionOp::Move { object_id: obj.clone(), transform: t }, 0).unwrap_err();
    assert_eq!(err.code(), "not_holder");
    w.ok("A", SessionOp::Grab { object_id: obj.clone() }, 0);
    assert!(w.apply("B", SessionOp::Move { object_id: obj.clone(), transform: t }, 1).is_err());
    assert!(w.apply("B", SessionOp::Release { object_id: obj.clone() }, 1).is_err());
    // Moving refreshes the lease.
    w.ok("A", SessionOp::Move { object_id: obj.clone(), transform: t }, 9_000);
    assert_eq!(w.state.holder(&obj, 18_000), Some(&user("A")));
    assert!(w.apply("B", SessionOp::Grab { object_id: obj.clone() }, 18_000).is_err());
}

#[test]
fn idle_lease_lapses() {
    let mut w = World::new(&["A", "B"]);
    let obj = w.create("A", 0);
    w.ok("A", SessionOp::Grab { object_id: obj.clone() }, 1_000);
    assert_eq!(w.state.holder(&obj, 1_000 + GRAB_LEASE_MS), Some(&user("A")));
    assert_eq!(w.state.holder(&obj, 1_001 + GRAB_LEASE_MS), None);
    let t = Transform::at([0.0; 3]);
    assert!(w.apply("A", SessionOp::Move { object_id: obj.clone(), transform: t }, 20_000).is_err());
    w.ok("B", SessionOp::Grab { object_id: obj.clone() }, 20_000);
    assert_eq!(w.state.holder(&obj, 20_000), Some(&user("B")));
}

#[test]
fn system_expiry_clears_lapsed_grabs() {
    let mut w = World::new(&["A"]);
    let a = w.create("A", 0);
    let b = w.create("A", 0);
    w.ok("A", SessionOp::Grab { object_id: a.clone() }, 0);
    w.ok("A", SessionOp::Grab { object_id: b.clone() }, 8_000);
    assert_eq!(w.state.expired_leases(12_000), vec![a.clone()]);
    let d = w.ok(SYSTEM_ACTOR, SessionOp::ExpireLeases, 12_000);
    assert_eq!(d.changes.len(), 1);
    assert!(w.state.objects[&a].grabbed_by.is_none());
    assert_eq!(w.state.objects[&b].grabbed_by, Some(user("A")));
    assert!(w.apply(SYSTEM_ACTOR, SessionOp::Join, 0).is_err());
    assert!(w.apply(SYSTEM_ACTOR, SessionOp::Grab { object_id: b }, 0).is_err());
}

#[test]
fn leaving_releases_grabs_and_menu() {
    let mut w = World::new(&["A", "B"]);
    let obj = w.create("A", 0);
    w.ok("A", SessionOp::Grab { object_id: obj.clone() }, 0);
    w.ok("A", SessionOp::OpenPieMenu { object_id: obj.clone() }, 0);
    w.ok("A", SessionOp::Leave, 1);
    assert!(w.state.objects[&obj].grabbed_by.is_none());
    assert!(w.state.menus.is_empty());
    assert_eq!(w.apply("A", SessionOp::Leave, 2).unwrap_err().code(), "not_member");
    w.ok("B", SessionOp::Grab { object_id: obj }, 2);
}

#[test]
fn pins_survive_object_deletion() {
    let mut w = World::new(&["A", "B"]);
    let obj = w.create("A", 0);
    w.ok("A", SessionOp::OpenPieMenu { object_id: obj.clone() }, 0);
    w.ok("A", SessionOp::PinView { item: MenuItem::Left, uv: [0.2, 0.3] }, 0);
    w.ok("A", SessionOp::Grab { object_id: obj.clone() }, 0);
    assert_eq!(w.apply("B", SessionOp::DeleteObject { object_id: obj.clone() }, 1).unwrap_err().code(), "grab_denied");
    w.ok("A", SessionOp::DeleteObject { object_id: obj.clone() }, 1);
    assert!(w.state.objects.is_empty());
    assert_eq!(w.state.pins.len(), 1);
    let pin = w.state.pins.values().next().unwrap();
    assert!(matches!(pin.image, PinImage::View { slot: ViewSlot::Left, resolution: 256, .. }));
}

#[test]
fn pin_uv_is_clamped_to_board() {
    let mut w = World::new(&["A"]);
    let obj = w.create("A", 0);
    w.ok("A", SessionOp::OpenPieMenu { object_id: obj }, 0);
    let d = w.ok("A", SessionOp::PinView { item: MenuItem::Orbit, uv: [0.5, 0.5] }, 0);
    assert!(!d.clamped);
    let pin_id = w.state.pins.keys().next().unwrap().clone();
    let d = w.ok("A", SessionOp::MovePin { pin_id: pin_id.clone(), uv: [1.7, -0.2] }, 0);
    assert!(d.clamped);
    assert_eq!(w.state.pins[&pin_id].uv, [1.0, 0.0]);
    assert!(w.apply("A", SessionOp::MovePin { pin_id: pin_id.clone(), uv: [f64::INFINITY, 0.0] }, 0).is_err());
    w.ok("A", SessionOp::DeletePin { pin_id: pin_id.clone() }, 0);
    assert_eq!(w.apply("A", SessionOp::DeletePin { pin_id }, 0).unwrap_err().code(), "unknown_id");
}

#[test]
fn pin_view_needs_own_menu() {
    let mut w = World::new(&["A", "B"]);
    let obj = w.create("A", 0);
    w.ok("A", SessionOp::OpenPieMenu { object_id: obj }, 0);
    assert!(w.apply("B", SessionOp::PinView { item: MenuItem::Front, uv: [0.5, 0.5] }, 0).is_err());
    assert!(w.apply("B", SessionOp::TogglePieMenu, 0).is_err());
}

#[test]
fn menus_are_private() {
    let mut w = World::new(&["A", "B"]);
    let obj = w.create("A", 0);
    let d = w.ok("A", SessionOp::OpenPieMenu { object_id: obj }, 0);
    let for_b = d.for_user(&user("B"));
    assert_eq!(for_b.revision, d.revision);
    assert!(for_b.changes.is_empty());
    assert_eq!(d.for_user(&user("A")).changes, d.changes);
    assert!(w.state.view_for(&user("B")).menus.is_empty());
    assert_eq!(w.state.view_for(&user("A")).menus.len(), 1);
}

#[test]
fn failed_ops_do_not_advance_revision() {
    let mut w = World::new(&["A"]);
    let rev = w.state.revision;
    let hash = w.state.state_hash();
    let bogus = ObjectId("nope".into());
    assert!(w.apply("A", SessionOp::Grab { object_id: bogus.clone() }, 0).is_err());
    assert!(w.apply("A", SessionOp::OpenPieMenu { object_id: bogus }, 0).is_err());
    assert!(w.apply("Z", SessionOp::TogglePieMenu, 0).is_err());
    assert!(w.apply("A", SessionOp::Join, 0).is_err());
    let unknown = SessionOp::CreateObject { asset_id: crate::splat::AssetId::from("missing"), transform: None };
    assert!(w.apply("A", unknown, 0).is_err());
    assert_eq!(w.state.revision, rev);
    assert_eq!(w.state.state_hash(), hash);
}

#[test]
fn state_hash_is_insensitive_to_insertion_history() {
    let mut a = World::new(&["A", "B"]);
    let mut b = World::new(&["B", "A"]);
    // Same set of members but different op order: revisions agree, hashes agree.
    assert_eq!(a.state.state_hash(), b.state.state_hash());
    a.create("A", 0);
    b.create("A", 0);
    assert_eq!(a.state.state_hash(), b.state.state_hash());
}

#[test]
fn snapshot_pin_matches_world_render() {
    let mut w = World::new(&["A"]);
    let asset_id = w.assets.ids()[0].clone();
    let transform = Transform { position: [0.4, 1.2, -0.7], rotation: [0.9, 0.1, 0.3, -0.2], uniform_scale: 2.5 };
    let d = w.ok("A", SessionOp::CreateObject { asset_id: asset_id.clone(), transform: Some(transform) }, 0);
    let Change::ObjectUpserted { object } = &d.changes[0] else { panic!() };
    let object = object.clone();
    let world_cam = Camera::new([1.5, 1.8, -2.0], [0.4, 1.2, -0.7], 0.9, 48, 48);
    w.ok("A", SessionOp::Snapshot { object_id: object.object_id.clone(), camera: world_cam }, 0);
    let pin = w.state.pins.values().next().unwrap();
    let PinImage::Snapshot { camera: local, .. } = &pin.image else { panic!() };

    // Place the asset in the world explicitly and render with the world camera.
    let asset = w.assets.get(&asset_id).unwrap();
    let t = &object.transform;
    let k = (object.normalization * t.uniform_scale) as f32;
    let q = nalgebra::UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
        t.rotation[0], t.rotation[1], t.rotation[2], t.rotation[3],
    ));
    let qf: nalgebra::UnitQuaternion<f32> = q.cast();
    let placed: Vec<Splat> = asset
        .splats()
        .iter()
        .map(|s| {
            let p = qf * nalgebra::Vector3::from(s.position) * k + nalgebra::Vector3::from(t.position.map(|c| c as f32));
            let r = qf * nalgebra::UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
                s.rotation[0], s.rotation[1], s.rotation[2], s.rotation[3],
            ));
            let r = r.quaternion();
            Splat::new(p.into(), [r.w, r.i, r.j, r.k], s.log_scale.map(|l| l + k.ln()), s.raw_opacity, s.color_dc)
        })
        .collect();
    let world_asset = GaussianSplatAsset::new(placed, Provenance::Mock);
    let from_world = reference_render(&world_asset, &world_cam, [0, 0, 0]);
    let from_pin = render(&asset, local, [0, 0, 0]).unwrap();
    assert!(max_channel_diff(&from_world.pixels, &from_pin.pixels) <= 2);
}

#[test]
fn replay_reproduces_hash() {
    let assets = store_with_assets(3);
    let mut generator = OpGenerator::new(7, 3, assets.ids());
    let mut state = fresh();
    let mut log = Vec::new();
    while log.len() < 200 {
        let (actor, op, now) = generator.next(&state);
        if state.apply(&actor, &op, now, &assets).is_ok() {
            log.push((actor, op, now));
        }
    }
    let mut replica = fresh();
    for (actor, op, now) in &log {
        replica.apply(actor, op, *now, &assets).unwrap();
    }
    assert_eq!(replica, state);
    assert_eq!(replica.state_hash(), state.state_hash());
    assert_eq!(state.revision, 200);
}

#[test]
fn model_check_small() {
    let assets = store_with_assets(3);
    for seed in 0..20 {
        let report = model_check(seed, 4, 300, &assets);
        assert!(report.clean(), "seed {seed}: {report:?}");
        assert!(report.applied > 100, "seed {seed}: {report:?}");
    }
}

#[test]
fn snapshot_roundtrip_empty() {
    let assets = AssetStore::new();
    let state = fresh();
    let blob = snapshot_state(&state, &assets).unwrap();
    assert_eq!(&blob[..8], SNAPSHOT_MAGIC);
    let target = AssetStore::new();
    let back = restore_state(&blob, &target).unwrap();
    assert_eq!(back.state_hash(), state.state_hash());
}

#[test]
fn snapshot_roundtrip_populated() {
    let assets = store_with_assets(4);
    let mut generator = OpGenerator::new(99, 4, assets.ids());
    let mut state = fresh();
    while state.objects.len() < 50 {
        let (actor, op, now) = generator.next(&state);
        let op = match op {
            SessionOp::DeleteObject { .. } | SessionOp::Leave => continue,
            op => op,
        };
        let _ = state.apply(&actor, &op, now, &assets);
    }
    let blob = snapshot_state(&state, &assets).unwrap();
    let target = AssetStore::new();
    let back = restore_state(&blob, &target).unwrap();
    assert_eq!(back, state);
    assert_eq!(back.state_hash(), state.state_hash());
    for id in state.referenced_assets() {
        assert_eq!(target.ply(&id).unwrap(), assets.ply(&id).unwrap());
    }
}

#[test]
fn snapshot_requires_referenced_assets() {
    let assets = store_with_assets(1);
    let mut w = World { state: fresh(), assets };
    w.ok("A", SessionOp::Join, 0);
    w.create("A", 0);
    let err = snapshot_state(&w.state, &AssetStore::new()).unwrap_err();
    assert!(matches!(err, SnapshotError::MissingAsset(_)));
}

#[test]
fn corrupted_snapshot_is_rejected() {
    let assets = store_with_assets(2);
    let mut w = World { state: fresh(), assets };
    w.ok("A", SessionOp::Join, 0);
    w.create("A", 0);
    let blob = snapshot_state(&w.state, &w.assets).unwrap();
    for i in [0, 9, 20, blob.len() / 2, blob.len() - 1] {
        let mut bad = blob.clone();
        bad[i] ^= 0x40;
        let err = restore_state(&bad, &AssetStore::new()).unwrap_err();
        assert!(matches!(err, SnapshotError::CorruptSnapshot(_)), "byte {i}: {err:?}");
    }
    for len in [0, 7, 8, 40, blob.len() - 1] {
        let err = restore_state(&blob[..len], &AssetStore::new()).unwrap_err();
        assert!(matches!(err, SnapshotError::CorruptSnapshot(_)), "len {len}: {err:?}");
    }
}
