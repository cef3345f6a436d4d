use nalgebra::{Quaternion, UnitQuaternion, Vector3};

use super::*;
use crate::store::AssetStore;

/// Idle time after which a grab lapses.
pub const GRAB_LEASE_MS: u64 = 10_000;

/// Actor the server uses for housekeeping operations.
pub const SYSTEM_ACTOR: &str = "@system";

/// What the session needs to know about assets.
pub trait AssetCatalog {
    /// Bounds diagonal of a known asset (0 for empty or single-point
    /// assets), `None` if the asset is unknown.
    fn asset_diagonal(&self, id: &AssetId) -> Option<f64>;
}

impl AssetCatalog for AssetStore {
    fn asset_diagonal(&self, id: &AssetId) -> Option<f64> {
        self.get(id).map(|a| a.bounds().map_or(0.0, |b| b.diagonal()))
    }
}

fn finite(values: &[f64], what: &str) -> Result<(), SessionError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(SessionError::InvalidArgument(format!("{what} must be finite")))
    }
}

fn clamp_flag(value: f64, lo: f64, hi: f64, clamped: &mut bool) -> f64 {
    let c = value.clamp(lo, hi);
    *clamped |= c != value;
    c
}

fn sanitize_transform(t: &Transform, clamped: &mut bool) -> Result<Transform, SessionError> {
    finite(&t.position, "position")?;
    finite(&t.rotation, "rotation")?;
    finite(&[t.uniform_scale], "scale")?;
    let norm = t.rotation.iter().map(|c| c * c).sum::<f64>().sqrt();
    if norm < 1e-9 {
        return Err(SessionError::InvalidArgument("rotation must be non-zero".into()));
    }
    let rotation = if (norm - 1.0).abs() < 1e-12 { t.rotation } else { t.rotation.map(|c| c / norm) };
    Ok(Transform {
        position: t.position,
        rotation,
        uniform_scale: clamp_flag(t.uniform_scale, MIN_SCALE, MAX_SCALE, clamped),
    })
}

fn check_uv(uv: [f64; 2], clamped: &mut bool) -> Result<[f64; 2], SessionError> {
    finite(&uv, "uv")?;
    Ok(uv.map(|c| clamp_flag(c, 0.0, 1.0, clamped)))
}

fn check_resolution(r: u32) -> Result<(), SessionError> {
    if r == 0 || r > MAX_IMAGE_EDGE {
        return Err(SessionError::InvalidArgument(format!("image edge must lie in 1..={MAX_IMAGE_EDGE}")));
    }
    Ok(())
}

fn unknown(kind: &'static str, id: impl fmt::Display) -> SessionError {
    SessionError::UnknownId { kind, id: id.to_string() }
}

/// Expresses a world-space camera in the object's asset frame, so the pin can
/// be re-rendered from the asset alone.
fn camera_in_asset_frame(object: &SpaceObject, camera: &Camera) -> Camera {
    let t = &object.transform;
    let [w, x, y, z] = t.rotation;
    let inv = UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z)).inverse();
    let k = object.normalization * t.uniform_scale;
    let origin = Vector3::from(t.position);
    let to_local = |p: [f64; 3]| -> [f64; 3] { ((inv * (Vector3::from(p) - origin)) / k).into() };
    Camera {
        position: to_local(camera.position),
        look_at: to_local(camera.look_at),
        up: (inv * Vector3::from(camera.up)).into(),
        near: camera.near / k,
        ..*camera
    }
}

impl SessionState {
    fn lease_live(object: &SpaceObject, now_ms: u64) -> bool {
        object.grabbed_by.is_some()
            && object.lease_touched_ms.is_some_and(|t| now_ms.saturating_sub(t) <= GRAB_LEASE_MS)
    }

    /// Holder of a live grab, if any.
    pub fn holder(&self, object_id: &ObjectId, now_ms: u64) -> Option<&UserId> {
        let object = self.objects.get(object_id)?;
        Self::lease_live(object, now_ms).then(|| object.grabbed_by.as_ref()).flatten()
    }

    /// Objects whose grab has lapsed at `now_ms` but is still recorded.
    pub fn expired_leases(&self, now_ms: u64) -> Vec<ObjectId> {
        self.objects
            .values()
            .filter(|o| o.grabbed_by.is_some() && !Self::lease_live(o, now_ms))
            .map(|o| o.object_id.clone())
            .collect()
    }

    fn object(&self, id: &ObjectId) -> Result<&SpaceObject, SessionError> {
        self.objects.get(id).ok_or_else(|| unknown("object", id))
    }

    fn held_object(&mut self, id: &ObjectId, actor: &UserId, now_ms: u64) -> Result<&mut SpaceObject, SessionError> {
        let object = self.objects.get_mut(id).ok_or_else(|| unknown("object", id))?;
        if object.grabbed_by.as_ref() != Some(actor) || !Self::lease_live(object, now_ms) {
            return Err(SessionError::NotHolder { object_id: id.clone(), actor: actor.clone() });
        }
        object.lease_touched_ms = Some(now_ms);
        Ok(object)
    }

    fn menu_for(&self, actor: &UserId, asset_id: AssetId, source: MenuSource) -> PieMenu {
        PieMenu { owner: actor.clone(), source, asset_id, resolution: self.settings.view_resolution, visible: true }
    }

    /// Applies one operation as `actor` at session time `now_ms`.
    ///
    /// On success the revision advances by exactly one and the returned
    /// delta lists every changed entity. Failed operations leave the state
    /// untouched.
    pub fn apply(
        &mut self,
        actor: &UserId,
        op: &SessionOp,
        now_ms: u64,
        assets: &dyn AssetCatalog,
    ) -> Result<SessionDelta, SessionError> {
        let is_system = actor.as_str() == SYSTEM_ACTOR;
        match op {
            SessionOp::Join => {
                if is_system {
                    return Err(SessionError::InvalidArgument("reserved user id".into()));
                }
                if self.users.contains(actor) {
                    return Err(SessionError::AlreadyMember(actor.clone()));
                }
            }
            SessionOp::ExpireLeases if is_system => {}
            _ if !self.users.contains(actor) => return Err(SessionError::NotMember(actor.clone())),
            _ => {}
        }

        let revision = self.revision + 1;
        let mut clamped = false;
        let mut changes = Vec::new();
        match op {
            SessionOp::Join => {
                self.users.insert(actor.clone());
                changes.push(Change::UserJoined { user: actor.clone() });
            }
            SessionOp::Leave => {
                self.users.remove(actor);
                self.poses.remove(actor);
                for object in self.objects.values_mut() {
                    if object.grabbed_by.as_ref() == Some(actor) {
                        object.grabbed_by = None;
                        object.lease_touched_ms = None;
                        changes.push(Change::ObjectUpserted { object: object.clone() });
                    }
                }
                if self.menus.remove(actor).is_some() {
                    changes.push(Change::MenuRemoved { owner: actor.clone() });
                }
                changes.push(Change::UserLeft { user: actor.clone() });
            }
            SessionOp::ReportPose { pose } => {
                finite(&pose.position, "pose position")?;
                finite(&pose.forward, "pose forward")?;
                if pose.forward.iter().map(|c| c * c).sum::<f64>() < 1e-12 {
                    return Err(SessionError::InvalidArgument("pose forward must be non-zero".into()));
                }
                self.poses.insert(actor.clone(), *pose);
                changes.push(Change::PoseUpdated { user: actor.clone(), pose: *pose });
            }
            SessionOp::CreateObject { asset_id, transform } => {
                let diagonal = assets.asset_diagonal(asset_id).ok_or_else(|| unknown("asset", asset_id))?;
                let transform = match transform {
                    Some(t) => sanitize_transform(t, &mut clamped)?,
                    None => {
                        let pose = self.poses.get(actor).copied().unwrap_or_default();
                        let f = Vector3::from(pose.forward).normalize();
                        Transform::at((Vector3::from(pose.position) + f).into())
                    }
                };
                let normalization = if diagonal > 1e-12 { NORMALIZED_DIAGONAL / diagonal } else { 1.0 };
                let mut object = SpaceObject {
                    object_id: ObjectId(format!("obj-{revision}")),
                    asset_id: asset_id.clone(),
                    transform,
                    normalization,
                    asset_diagonal: diagonal,
                    proxy_radius: 0.0,
                    grabbed_by: None,
                    lease_touched_ms: None,
                    created_by: actor.clone(),
                };
                object.recompute_proxy();
                self.objects.insert(object.object_id.clone(), object.clone());
                changes.push(Change::ObjectUpserted { object });
            }
            SessionOp::Grab { object_id } => {
                let live = self.holder(object_id, now_ms).cloned();
                let object = self.objects.get_mut(object_id).ok_or_else(|| unknown("object", object_id))?;
                if let Some(holder) = live.filter(|h| h != actor) {
                    return Err(SessionError::GrabDenied { object_id: object_id.clone(), holder });
                }
                object.grabbed_by = Some(actor.clone());
                object.lease_touched_ms = Some(now_ms);
                changes.push(Change::ObjectUpserted { object: object.clone() });
            }
            SessionOp::Release { object_id } => {
                let object = self.objects.get_mut(object_id).ok_or_else(|| unknown("object", object_id))?;
                if object.grabbed_by.as_ref() != Some(actor) {
                    return Err(SessionError::NotHolder { object_id: object_id.clone(), actor: actor.clone() });
                }
                object.grabbed_by = None;
                object.lease_touched_ms = None;
                changes.push(Change::ObjectUpserted { object: object.clone() });
            }
            SessionOp::Move { object_id, transform } => {
                let transform = sanitize_transform(transform, &mut clamped)?;
                let object = self.held_object(object_id, actor, now_ms)?;
                object.transform = transform;
                object.recompute_proxy();
                changes.push(Change::ObjectUpserted { object: object.clone() });
            }
            SessionOp::Scale { object_id, scale } => {
                finite(&[*scale], "scale")?;
                let scale = clamp_flag(*scale, MIN_SCALE, MAX_SCALE, &mut clamped);
                let object = self.held_object(object_id, actor, now_ms)?;
                object.transform.uniform_scale = scale;
                object.recompute_proxy();
                changes.push(Change::ObjectUpserted { object: object.clone() });
            }
            SessionOp::DeleteObject { object_id } => {
                self.object(object_id)?;
                if let Some(holder) = self.holder(object_id, now_ms).filter(|h| *h != actor) {
                    return Err(SessionError::GrabDenied { object_id: object_id.clone(), holder: holder.clone() });
                }
                // Pins are independent images and survive their object.
                self.objects.remove(object_id);
                changes.push(Change::ObjectRemoved { object_id: object_id.clone() });
            }
            SessionOp::Snapshot { object_id, camera } => {
                camera.validate().map_err(|e| SessionError::InvalidArgument(e.to_string()))?;
                check_resolution(camera.width.max(camera.height))?;
                let object = self.object(object_id)?;
                let local = camera_in_asset_frame(object, camera);
                local.validate().map_err(|e| SessionError::InvalidArgument(e.to_string()))?;
                let pin = WhiteboardPin {
                    pin_id: PinId(format!("pin-{revision}")),
                    image: PinImage::Snapshot { asset_id: object.asset_id.clone(), camera: local },
                    uv: [0.5, 0.5],
                    scale: 1.0,
                    pinned_by: actor.clone(),
                };
                self.pins.insert(pin.pin_id.clone(), pin.clone());
                changes.push(Change::PinUpserted { pin });
            }
            SessionOp::PinView { item, uv } => {
                let uv = check_uv(*uv, &mut clamped)?;
                let menu = self.menus.get(actor).ok_or_else(|| unknown("menu", actor))?;
                let asset_id = menu.asset_id.clone();
                let resolution = menu.resolution;
                let image = match item {
                    MenuItem::Front => PinImage::View { asset_id, slot: ViewSlot::Front, resolution },
                    MenuItem::Left => PinImage::View { asset_id, slot: ViewSlot::Left, resolution },
                    MenuItem::Right => PinImage::View { asset_id, slot: ViewSlot::Right, resolution },
                    MenuItem::Back => PinImage::View { asset_id, slot: ViewSlot::Back, resolution },
                    MenuItem::Orbit => PinImage::Orbit { asset_id, frame_count: self.settings.orbit_frames, resolution },
                };
                let pin = WhiteboardPin { pin_id: PinId(format!("pin-{revision}")), image, uv, scale: 1.0, pinned_by: actor.clone() };
                self.pins.insert(pin.pin_id.clone(), pin.clone());
                changes.push(Change::PinUpserted { pin });
            }
            SessionOp::MovePin { pin_id, uv } => {
                let uv = check_uv(*uv, &mut clamped)?;
                let pin = self.pins.get_mut(pin_id).ok_or_else(|| unknown("pin", pin_id))?;
                pin.uv = uv;
                changes.push(Change::PinUpserted { pin: pin.clone() });
            }
            SessionOp::ScalePin { pin_id, scale } => {
                finite(&[*scale], "scale")?;
                let scale = clamp_flag(*scale, MIN_SCALE, MAX_SCALE, &mut clamped);
                let pin = self.pins.get_mut(pin_id).ok_or_else(|| unknown("pin", pin_id))?;
                pin.scale = scale;
                changes.push(Change::PinUpserted { pin: pin.clone() });
            }
            SessionOp::DeletePin { pin_id } => {
                self.pins.remove(pin_id).ok_or_else(|| unknown("pin", pin_id))?;
                changes.push(Change::PinRemoved { pin_id: pin_id.clone() });
            }
            SessionOp::OpenPieMenu { object_id } => {
                let asset_id = self.object(object_id)?.asset_id.clone();
                let menu = self.menu_for(actor, asset_id, MenuSource::Object { object_id: object_id.clone() });
                self.menus.insert(actor.clone(), menu.clone());
                changes.push(Change::MenuUpdated { menu });
            }
            SessionOp::OpenAssetMenu { asset_id } => {
                assets.asset_diagonal(asset_id).ok_or_else(|| unknown("asset", asset_id))?;
                let menu = self.menu_for(actor, asset_id.clone(), MenuSource::Asset);
                self.menus.insert(actor.clone(), menu.clone());
                changes.push(Change::MenuUpdated { menu });
            }
            SessionOp::TogglePieMenu => {
                let menu = self.menus.get_mut(actor).ok_or_else(|| unknown("menu", actor))?;
                menu.visible = !menu.visible;
                changes.push(Change::MenuUpdated { menu: menu.clone() });
            }
            SessionOp::ExpireLeases => {
                for id in self.expired_leases(now_ms) {
                    let object = self.objects.get_mut(&id).expect("listed above");
                    object.grabbed_by = None;
                    object.lease_touched_ms = None;
                    changes.push(Change::ObjectUpserted { object: object.clone() });
                }
            }
        }
        self.revision = revision;
        Ok(SessionDelta { revision, actor: actor.clone(), changes, clamped })
    }
}
