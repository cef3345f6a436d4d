//! Reference implementations used as test oracles.
//!
//! Everything here is written out with plain arrays and explicit loops and
//! shares no code with the production paths it checks. Only the rendering
//! constants (covariance dilation, contribution floor, DC color mapping) are
//! common, because the oracle must use identical values.

use crate::render::{Camera, RenderedImage};
use crate::splat::GaussianSplatAsset;

type V3 = [f64; 3];

fn sub(a: V3, b: V3) -> V3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: V3, b: V3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: V3, b: V3) -> V3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn unit(a: V3) -> V3 {
    let n = dot(a, a).sqrt();
    [a[0] / n, a[1] / n, a[2] / n]
}

fn rotation_matrix(q: [f32; 4]) -> [[f64; 3]; 3] {
    let [w, x, y, z] = q.map(f64::from);
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

/// `R S Sᵀ Rᵀ` by explicit summation.
pub fn covariance_by_summation(rotation: [f32; 4], log_scale: [f32; 3]) -> [[f64; 3]; 3] {
    let r = rotation_matrix(rotation);
    let s2 = log_scale.map(|v| (2.0 * v as f64).exp());
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                out[i][j] += r[i][k] * s2[k] * r[j][k];
            }
        }
    }
    out
}

struct OracleSplat {
    index: usize,
    depth: f64,
    mean: [f64; 2],
    inv: [f64; 3],
    color: [f64; 3],
    alpha: f64,
}

/// Brute-force renderer: every splat is evaluated at every pixel, splats are
/// ordered by depth with ties in asset order, and there is no transmittance
/// cutoff.
pub fn reference_render(asset: &GaussianSplatAsset, camera: &Camera, background: [u8; 3]) -> RenderedImage {
    let forward = unit(sub(camera.look_at, camera.position));
    let right = unit(cross(forward, camera.up));
    let up = cross(right, forward);
    let down = [-up[0], -up[1], -up[2]];
    let focal = 0.5 * camera.height as f64 / (0.5 * camera.vertical_fov).tan();
    let (cx, cy) = (0.5 * camera.width as f64, 0.5 * camera.height as f64);
    let rows = [right, down, forward];

    let mut splats = Vec::new();
    for (index, s) in asset.splats().iter().enumerate() {
        let rel = sub(s.position.map(f64::from), camera.position);
        let c = [dot(right, rel), dot(down, rel), dot(forward, rel)];
        if c[2] <= camera.near {
            continue;
        }
        let sigma = covariance_by_summation(s.rotation, s.log_scale);
        // T = J W, with J the perspective Jacobian at c.
        let j = [
            [focal / c[2], 0.0, -focal * c[0] / (c[2] * c[2])],
            [0.0, focal / c[2], -focal * c[1] / (c[2] * c[2])],
        ];
        let mut t = [[0.0; 3]; 2];
        for i in 0..2 {
            for k in 0..3 {
                t[i][k] = (0..3).map(|m| j[i][m] * rows[m][k]).sum();
            }
        }
        let mut cov2 = [[0.0; 2]; 2];
        for i in 0..2 {
            for k in 0..2 {
                for a in 0..3 {
                    for b in 0..3 {
                        cov2[i][k] += t[i][a] * sigma[a][b] * t[k][b];
                    }
                }
            }
        }
        let a = cov2[0][0] + crate::render::COVARIANCE_DILATION;
        let b = cov2[0][1];
        let d = cov2[1][1] + crate::render::COVARIANCE_DILATION;
        let det = a * d - b * b;
        if det <= 0.0 {
            continue;
        }
        splats.push(OracleSplat {
            index,
            depth: c[2],
            mean: [focal * c[0] / c[2] + cx, focal * c[1] / c[2] + cy],
            inv: [d / det, -b / det, a / det],
            color: s.rgb().map(f64::from),
            alpha: 1.0 / (1.0 + (-(s.raw_opacity as f64)).exp()),
        });
    }
    // Selection-style ordering: smallest depth first, then smallest index.
    let mut ordered = Vec::with_capacity(splats.len());
    while !splats.is_empty() {
        let mut best = 0;
        for (k, s) in splats.iter().enumerate() {
            let b = &splats[best];
            if s.depth < b.depth || (s.depth == b.depth && s.index < b.index) {
                best = k;
            }
        }
        ordered.push(splats.swap_remove(best));
    }

    let floor = crate::render::MIN_CONTRIBUTION as f64;
    let bg = background.map(|c| c as f64 / 255.0);
    let mut pixels = Vec::with_capacity(camera.width as usize * camera.height as usize * 4);
    for y in 0..camera.height {
        for x in 0..camera.width {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut color = [0.0; 3];
            let mut transmittance = 1.0;
            for s in &ordered {
                let dx = px - s.mean[0];
                let dy = py - s.mean[1];
                let g = (-0.5 * (s.inv[0] * dx * dx + 2.0 * s.inv[1] * dx * dy + s.inv[2] * dy * dy)).exp();
                if g < floor {
                    continue;
                }
                let w = s.alpha * g;
                for k in 0..3 {
                    color[k] += s.color[k] * w * transmittance;
                }
                transmittance *= 1.0 - w;
            }
            for k in 0..3 {
                let v = (color[k] + transmittance * bg[k]).clamp(0.0, 1.0);
                pixels.push((v * 255.0).round() as u8);
            }
            pixels.push(255);
        }
    }
    RenderedImage { width: camera.width, height: camera.height, pixels, camera: *camera }
}

/// Largest per-channel difference between two equally sized images.
pub fn max_channel_diff(a: &[u8], b: &[u8]) -> u8 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x.abs_diff(*y)).max().unwrap_or(0)
}

/// Connected component (4-neighbourhood) of `seed` over pixels whose RGB lies
/// within Euclidean distance `threshold` (0..255 units) of the seed color.
pub fn threshold_component(frame: &image::RgbaImage, seed: (u32, u32), threshold: f64) -> Vec<bool> {
    let (w, h) = frame.dimensions();
    let seed_px = frame.get_pixel(seed.0, seed.1).0;
    let close = |x: u32, y: u32| {
        let p = frame.get_pixel(x, y).0;
        let d2: f64 = (0..3).map(|k| (p[k] as f64 - seed_px[k] as f64).powi(2)).sum();
        d2.sqrt() <= threshold
    };
    let mut mask = vec![false; (w * h) as usize];
    let mut stack = vec![seed];
    while let Some((x, y)) = stack.pop() {
        let i = (y * w + x) as usize;
        if mask[i] || !close(x, y) {
            continue;
        }
        mask[i] = true;
        if x > 0 {
            stack.push((x - 1, y));
        }
        if y > 0 {
            stack.push((x, y - 1));
        }
        if x + 1 < w {
            stack.push((x + 1, y));
        }
        if y + 1 < h {
            stack.push((x, y + 1));
        }
    }
    mask
}

/// Camera that frames a one-meter-tall billboard at the origin so it fills a
/// `width`×`height` image, looking along +z.
pub fn billboard_front_camera(width: u32, height: u32) -> Camera {
    Camera::new([0.0, 0.0, -2.0], [0.0; 3], 2.0 * 0.25f64.atan(), width, height)
}

/// Mean absolute per-channel error (0–255 units) between the front render of
/// `asset` and `cutout` composited over black, at the cutout's resolution.
pub fn billboard_fidelity(asset: &GaussianSplatAsset, cutout: &image::RgbaImage) -> f64 {
    let (w, h) = cutout.dimensions();
    let rendered = crate::render::render(asset, &billboard_front_camera(w, h), [0, 0, 0]).expect("valid camera");
    let mut total = 0.0;
    for (px, out) in cutout.pixels().zip(rendered.pixels.chunks_exact(4)) {
        let a = px[3] as f64 / 255.0;
        for c in 0..3 {
            total += (px[c] as f64 * a - out[c] as f64).abs();
        }
    }
    total / (w as f64 * h as f64 * 3.0)
}

/// A frame with one soft-shaded ellipse on a contrasting flat background and
/// three prompt points inside the ellipse.
pub fn synthetic_scene(seed: u64, width: u32, height: u32) -> (image::RgbaImage, [crate::pipeline::Point; 3]) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (width as f64, height as f64);
    let center = [rng.random_range(0.35..0.65) * w, rng.random_range(0.35..0.65) * h];
    let radii = [rng.random_range(0.15..0.3) * w, rng.random_range(0.15..0.3) * h];
    let base: [f64; 3] = [rng.random_range(60.0..200.0), rng.random_range(60.0..200.0), rng.random_range(60.0..200.0)];
    let background: [u8; 3] = base.map(|c| if c > 128.0 { 20 } else { 235 });
    let frame = image::RgbaImage::from_fn(width, height, |x, y| {
        let u = (x as f64 + 0.5 - center[0]) / radii[0];
        let v = (y as f64 + 0.5 - center[1]) / radii[1];
        if u * u + v * v <= 1.0 {
            // A gentle left-to-right ramp of at most 20 levels.
            let shade = 10.0 * u;
            image::Rgba([0, 1, 2].map(|c| (base[c] + shade).round() as u8).into_iter().chain([255]).collect::<Vec<_>>().try_into().unwrap())
        } else {
            image::Rgba([background[0], background[1], background[2], 255])
        }
    });
    let pick = |rng: &mut rand_chacha::ChaCha8Rng| {
        let t = rng.random_range(0.0..std::f64::consts::TAU);
        let r = rng.random_range(0.0..0.6);
        let x = center[0] + r * radii[0] * t.cos();
        let y = center[1] + r * radii[1] * t.sin();
        crate::pipeline::Point::new(x as u32, y as u32)
    };
    let points = [pick(&mut rng), pick(&mut rng), pick(&mut rng)];
    (frame, points)
}

pub mod session_sim {
    //! Randomized operation streams and an independent checker for the
    //! session invariants.

    use std::collections::BTreeMap;

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use crate::render::Camera;
    use crate::session::*;
    use crate::splat::AssetId;
    use crate::store::AssetStore;

    /// Generates plausible (and occasionally invalid) operations.
    pub struct OpGenerator {
        rng: ChaCha8Rng,
        users: Vec<UserId>,
        assets: Vec<AssetId>,
        now_ms: u64,
    }

    impl OpGenerator {
        pub fn new(seed: u64, users: usize, assets: Vec<AssetId>) -> Self {
            Self {
                rng: ChaCha8Rng::seed_from_u64(seed),
                users: (0..users).map(|i| UserId(format!("user-{i}"))).collect(),
                assets,
                now_ms: 0,
            }
        }

        pub fn users(&self) -> &[UserId] {
            &self.users
        }

        fn pick<T: Clone>(&mut self, items: &[T]) -> Option<T> {
            (!items.is_empty()).then(|| items[self.rng.random_range(0..items.len())].clone())
        }

        fn object_id(&mut self, state: &SessionState) -> ObjectId {
            let ids: Vec<_> = state.objects.keys().cloned().collect();
            match self.pick(&ids) {
                Some(id) if self.rng.random_bool(0.95) => id,
                _ => ObjectId("obj-missing".into()),
            }
        }

        fn pin_id(&mut self, state: &SessionState) -> PinId {
            let ids: Vec<_> = state.pins.keys().cloned().collect();
            match self.pick(&ids) {
                Some(id) if self.rng.random_bool(0.95) => id,
                _ => PinId("pin-missing".into()),
            }
        }

        fn transform(&mut self) -> Transform {
            let r = &mut self.rng;
            Transform {
                position: [r.random_range(-3.0..3.0), r.random_range(0.0..2.0), r.random_range(-3.0..3.0)],
                rotation: [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), 1.0],
                uniform_scale: r.random_range(0.001..150.0),
            }
        }

        /// Next `(actor, op, time)`; time advances by up to three seconds so
        /// grab leases regularly lapse.
        pub fn next(&mut self, state: &SessionState) -> (UserId, SessionOp, u64) {
            self.now_ms += self.rng.random_range(0..3_000);
            let actor = self.pick(&self.users.clone()).expect("at least one user");
            if !state.users.contains(&actor) && self.rng.random_bool(0.9) {
                return (actor, SessionOp::Join, self.now_ms);
            }
            let op = match self.rng.random_range(0..20) {
                0 => SessionOp::Leave,
                1 => SessionOp::ReportPose {
                    pose: Pose { position: [self.rng.random_range(-2.0..2.0), 1.6, 0.0], forward: [0.0, 0.0, -1.0] },
                },
                2 | 3 => {
                    let asset_id = self.pick(&self.assets.clone()).unwrap_or_else(|| AssetId::from("none"));
                    let transform = self.rng.random_bool(0.5).then(|| self.transform());
                    SessionOp::CreateObject { asset_id, transform }
                }
                4..=6 => SessionOp::Grab { object_id: self.object_id(state) },
                7 => SessionOp::Release { object_id: self.object_id(state) },
                8 | 9 => SessionOp::Move { object_id: self.object_id(state), transform: self.transform() },
                10 => SessionOp::Scale { object_id: self.object_id(state), scale: self.rng.random_range(0.0..120.0) },
                11 => SessionOp::DeleteObject { object_id: self.object_id(state) },
                12 => SessionOp::Snapshot {
                    object_id: self.object_id(state),
                    camera: Camera::new([self.rng.random_range(-3.0..3.0), 1.0, -3.0], [0.0, 0.5, 0.0], 0.8, 32, 32),
                },
                13 => {
                    let items = [MenuItem::Front, MenuItem::Left, MenuItem::Right, MenuItem::Back, MenuItem::Orbit];
                    let item = self.pick(&items).expect("non-empty");
                    SessionOp::PinView { item, uv: [self.rng.random_range(-0.5..1.5), self.rng.random_range(-0.5..1.5)] }
                }
                14 => SessionOp::MovePin {
                    pin_id: self.pin_id(state),
                    uv: [self.rng.random_range(-0.5..1.5), self.rng.random_range(-0.5..1.5)],
                },
                15 => SessionOp::ScalePin { pin_id: self.pin_id(state), scale: self.rng.random_range(0.0..200.0) },
                16 => SessionOp::DeletePin { pin_id: self.pin_id(state) },
                17 => SessionOp::OpenPieMenu { object_id: self.object_id(state) },
                18 => match self.pick(&self.assets.clone()) {
                    Some(asset_id) => SessionOp::OpenAssetMenu { asset_id },
                    None => SessionOp::TogglePieMenu,
                },
                _ => SessionOp::TogglePieMenu,
            };
            (actor, op, self.now_ms)
        }
    }

    #[derive(Debug, Default, Clone)]
    pub struct ModelCheckReport {
        pub applied: usize,
        pub rejected: usize,
        pub single_holder_violations: usize,
        pub revision_gaps: usize,
        pub privacy_leaks: usize,
        /// Per-user mirrors built from delivered deltas that diverged from
        /// the user's view of the authoritative state.
        pub mirror_mismatches: usize,
        pub replay_mismatch: bool,
        pub final_hash: String,
    }

    impl ModelCheckReport {
        pub fn clean(&self) -> bool {
            self.single_holder_violations == 0 && self.revision_gaps == 0 && self.privacy_leaks == 0
                && self.mirror_mismatches == 0
                && !self.replay_mismatch
        }
    }

    /// Runs `ops` generated operations from `seed` and checks:
    /// * a grab never succeeds while another user's lease is live (tracked
    ///   by an independent lease model);
    /// * every user's delta stream has consecutive revisions;
    /// * no delta delivered to a user carries another user's menu;
    /// * a mirror started from the user's view at join and fed that user's
    ///   deltas always equals the user's current view;
    /// * replaying the applied log on a fresh replica reproduces the hash.
    pub fn model_check(seed: u64, users: usize, ops: usize, assets: &AssetStore) -> ModelCheckReport {
        let mut generator = OpGenerator::new(seed, users, assets.ids());
        let mut state = SessionState::new(SessionId("model".into()), SessionSettings::default());
        let mut report = ModelCheckReport::default();
        let mut log = Vec::new();
        // Independent lease model: object -> (holder, last touch).
        let mut leases: BTreeMap<ObjectId, (UserId, u64)> = BTreeMap::new();
        let mut last_seen: BTreeMap<UserId, u64> = BTreeMap::new();
        let mut mirrors: BTreeMap<UserId, SessionState> = BTreeMap::new();

        let live = |leases: &BTreeMap<ObjectId, (UserId, u64)>, id: &ObjectId, now: u64| {
            leases.get(id).filter(|(_, t)| now - t <= GRAB_LEASE_MS).map(|(u, _)| u.clone())
        };

        for _ in 0..ops {
            let (actor, op, now) = generator.next(&state);
            let before = state.revision;
            let result = state.apply(&actor, &op, now, assets);
            let delta = match result {
                Ok(d) => d,
                Err(_) => {
                    report.rejected += 1;
                    continue;
                }
            };
            report.applied += 1;
            if delta.revision != before + 1 || state.revision != delta.revision {
                report.revision_gaps += 1;
            }
            match &op {
                SessionOp::Grab { object_id } => {
                    if live(&leases, object_id, now).is_some_and(|h| h != actor) {
                        report.single_holder_violations += 1;
                    }
                    leases.insert(object_id.clone(), (actor.clone(), now));
                }
                SessionOp::Move { object_id, .. } | SessionOp::Scale { object_id, .. } => {
                    if live(&leases, object_id, now).as_ref() != Some(&actor) {
                        report.single_holder_violations += 1;
                    }
                    leases.insert(object_id.clone(), (actor.clone(), now));
                }
                SessionOp::Release { object_id } | SessionOp::DeleteObject { object_id } => {
                    leases.remove(object_id);
                }
                SessionOp::Leave => leases.retain(|_, (u, _)| *u != actor),
                SessionOp::ExpireLeases => leases.retain(|_, (_, t)| now - *t <= GRAB_LEASE_MS),
                _ => {}
            }
            // At most one live holder per object, as recorded by the state.
            for object in state.objects.values() {
                if let Some(h) = state.holder(&object.object_id, now) {
                    if live(&leases, &object.object_id, now).as_ref() != Some(h) {
                        report.single_holder_violations += 1;
                    }
                }
            }
            for user in &state.users {
                let seen = delta.for_user(user);
                if seen.changes.iter().any(|c| c.private_to().is_some_and(|o| o != user)) {
                    report.privacy_leaks += 1;
                }
                if let Some(prev) = last_seen.get(user) {
                    if seen.revision != prev + 1 {
                        report.revision_gaps += 1;
                    }
                }
                last_seen.insert(user.clone(), seen.revision);
                match mirrors.get_mut(user) {
                    Some(mirror) => mirror.apply_changes(seen.revision, &seen.changes),
                    None => {
                        mirrors.insert(user.clone(), state.view_for(user));
                    }
                }
                if mirrors[user] != state.view_for(user) {
                    report.mirror_mismatches += 1;
                }
            }
            mirrors.retain(|u, _| state.users.contains(u));
            // Users who left stop receiving; a re-join starts a new stream.
            last_seen.retain(|u, _| state.users.contains(u));
            log.push((actor, op, now));
        }

        let mut replica = SessionState::new(SessionId("model".into()), SessionSettings::default());
        for (actor, op, now) in &log {
            if replica.apply(actor, op, *now, assets).is_err() {
                report.replay_mismatch = true;
            }
        }
        report.final_hash = state.state_hash();
        report.replay_mismatch |= replica.state_hash() != report.final_hash;
        report
    }
}
