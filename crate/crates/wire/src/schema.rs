//! Protocol description. `docs/protocol.md` is generated from this module;
//! tests check the field tables against the serialized example messages, so
//! the document cannot drift from the types.

use std::collections::BTreeMap;
use std::fmt::Write;

use serde_json::Value;
use splatspace_core::pipeline::{BackendFailure, JobId, Point, PromptSource};
use splatspace_core::render::{Camera, ViewSlot};
use splatspace_core::session::*;
use splatspace_core::splat::AssetId;

use crate::frame::MAX_FRAME_LEN;
use crate::message::{Attachment, Body, DeltaBody, JobBody, JobPayload, Message};

pub struct FieldDoc {
    pub name: &'static str,
    pub required: bool,
    pub doc: &'static str,
}

pub struct MessageDoc {
    pub type_name: &'static str,
    pub direction: &'static str,
    pub doc: &'static str,
    pub fields: &'static [FieldDoc],
}

const fn f(name: &'static str, required: bool, doc: &'static str) -> FieldDoc {
    FieldDoc { name, required, doc }
}

const C2S: &str = "client → server";
const S2C: &str = "server → client";

pub const MESSAGES: &[MessageDoc] = &[
    MessageDoc {
        type_name: "hello",
        direction: C2S,
        doc: "First message on a connection. Joins `user` to `session`, creating the session if needed. Replied to with `welcome`; anything else first is a protocol violation.",
        fields: &[
            f("user", true, "User id; non-empty, at most 64 characters, must not start with `@`."),
            f("session", true, "Session id; 1-64 characters from `[A-Za-z0-9_.-]`, not starting with `.`."),
        ],
    },
    MessageDoc {
        type_name: "welcome",
        direction: S2C,
        doc: "Handshake reply. Subsequent deltas continue from `revision` without gaps.",
        fields: &[
            f("user", true, "Echo of the joined user."),
            f("session", true, "Echo of the joined session."),
            f("revision", true, "Current session revision."),
            f("full_state", true, "Session state as visible to this user (other users' menus removed)."),
            f("attachments", false, "Images of every pin and of the user's own menu."),
        ],
    },
    MessageDoc {
        type_name: "op",
        direction: C2S,
        doc: "Applies a session operation. Replied to with the resulting `delta` (carrying `seq`) or an `error`. `join`, `leave` and `expire_leases` are server-managed and rejected with `forbidden_op`.",
        fields: &[f("op", true, "Session operation, tagged by `kind` (see Session operations).")],
    },
    MessageDoc {
        type_name: "delta",
        direction: S2C,
        doc: "One applied operation. Every member receives every revision in order; changes private to another user are stripped, so a delta may have no changes.",
        fields: &[
            f("revision", true, "Session revision after the operation."),
            f("actor", true, "User who issued the operation (`@system` for lease expiry)."),
            f("changes", true, "Changed entities, tagged by `kind` (see Changes)."),
            f("clamped", false, "True when an argument was clamped into range."),
            f("attachments", false, "Images for new pins and for opened menus."),
        ],
    },
    MessageDoc {
        type_name: "job_submit",
        direction: C2S,
        doc: "Starts a 2D-to-3D job from an image and exactly three prompt points. Replied to with `job` at stage `segmenting`; later `job` messages follow as the job advances.",
        fields: &[
            f("image", true, "Base64 PNG frame, longest edge at most 2048 px."),
            f("points", true, "Three `[x, y]` pixel positions inside the frame."),
            f("source", false, "`web_view`, `camera_feed` or `file` (default)."),
        ],
    },
    MessageDoc {
        type_name: "job_confirm",
        direction: C2S,
        doc: "Accepts the segmentation of a job at `awaiting_confirmation`. Replied to with `job` at stage `multiview`.",
        fields: &[f("job_id", true, "Job to confirm; only its submitter may confirm it.")],
    },
    MessageDoc {
        type_name: "job_reject",
        direction: C2S,
        doc: "Discards a job at `awaiting_confirmation`. Replied to with `job` at stage `rejected`.",
        fields: &[f("job_id", true, "Job to discard; only its submitter may reject it.")],
    },
    MessageDoc {
        type_name: "job",
        direction: S2C,
        doc: "Job progress, as a request reply or pushed to the submitting connection on every stage change. Stages: `segmenting`, `awaiting_confirmation`, `multiview`, `fusing`, `done`, `failed`, and `rejected` in the `job_reject` reply. When a job is done the server opens the submitter's pie menu on the new asset.",
        fields: &[
            f("job_id", true, "Job id."),
            f("stage", true, "Stage reached."),
            f("payload", false, "Stage results (see Job payload)."),
        ],
    },
    MessageDoc {
        type_name: "fetch_asset",
        direction: C2S,
        doc: "Requests an asset's `.ply` bytes. Replied to with `asset` or `error` (`unknown_id`).",
        fields: &[f("asset_id", true, "Content hash of the asset.")],
    },
    MessageDoc {
        type_name: "asset",
        direction: S2C,
        doc: "Asset payload. Assets are immutable and never inlined in deltas.",
        fields: &[f("asset_id", true, "Content hash of the asset."), f("ply", true, "Base64 binary little-endian `.ply`.")],
    },
    MessageDoc {
        type_name: "resync",
        direction: "both",
        doc: "Request: `from_revision`, the last revision the client applied. Reply: the current `revision` and either the missing `deltas` (when retained) or the `full_state`.",
        fields: &[
            f("from_revision", true, "Last revision the client applied."),
            f("revision", false, "Reply only: current revision."),
            f("deltas", false, "Reply only: deltas after `from_revision`, in order."),
            f("full_state", false, "Reply only: state visible to the user when the deltas are no longer retained."),
            f("attachments", false, "Reply only: images accompanying `full_state`."),
        ],
    },
    MessageDoc {
        type_name: "error",
        direction: S2C,
        doc: "Failure reply. With code `protocol` the server closes the connection right after sending it.",
        fields: &[f("code", true, "Stable snake_case code (see Error codes)."), f("message", true, "Human-readable detail.")],
    },
    MessageDoc { type_name: "ping", direction: C2S, doc: "Liveness probe, replied to with `pong`.", fields: &[] },
    MessageDoc { type_name: "pong", direction: S2C, doc: "Reply to `ping`.", fields: &[] },
];

pub const ERROR_CODES: &[(&str, &str)] = &[
    ("protocol", "Malformed frame or JSON, missing handshake, or a server-only message sent by a client. The connection closes."),
    ("unsupported", "Unknown message `type`; the connection stays open."),
    ("forbidden_op", "Server-managed operation sent by a client."),
    ("not_member", "Actor is not a member of the session."),
    ("already_member", "User already joined."),
    ("unknown_id", "Referenced object, pin, menu or asset does not exist."),
    ("grab_denied", "Object is held by another user's live grab."),
    ("not_holder", "Move, scale or release without holding the grab."),
    ("invalid_argument", "Non-finite number, zero rotation, bad resolution or camera."),
    ("invalid_prompt", "Prompt without exactly three in-frame points, or an undecodable image."),
    ("unknown_job", "No such job for this user."),
    ("wrong_stage", "Job is not at the stage the request needs."),
];

pub const NESTED_DOCS: &[(&str, &str)] = &[
    ("Attachment", "`target` is `pin:<pin_id>` or `menu:<owner>`; `name` is `image`, `frame-<i>` (orbit pins) or `front`/`left`/`right`/`back`/`center` (menus); `png` is base64."),
    ("Job payload", "Set per stage: `cutout` and `mask` at `awaiting_confirmation`, `views` (front, left, right, back) at `fusing`, `asset_id` at `done`, `error` at `failed`; `timings_ms` per completed stage on terminal stages."),
    ("Transform", "`rotation` is a unit quaternion `[w, x, y, z]`; `uniform_scale` is clamped to [0.01, 100]."),
    ("Camera", "World-space camera; `fov` is the vertical field of view in radians."),
];

fn oid() -> ObjectId {
    ObjectId("obj-2".into())
}

fn pid() -> PinId {
    PinId("pin-5".into())
}

fn asset() -> AssetId {
    AssetId::from("3f786850e387550fdab836ed7e6dc881de23001b")
}

fn camera() -> Camera {
    Camera::new([0.0, 1.5, -2.0], [0.0, 1.0, 0.0], 0.8, 256, 256)
}

fn transform() -> Transform {
    Transform { position: [0.0, 1.0, -1.0], rotation: [1.0, 0.0, 0.0, 0.0], uniform_scale: 1.0 }
}

/// One example of every session operation kind.
pub fn example_ops() -> Vec<SessionOp> {
    vec![
        SessionOp::Join,
        SessionOp::Leave,
        SessionOp::ReportPose { pose: Pose { position: [0.0, 1.6, 0.0], forward: [0.0, 0.0, -1.0] } },
        SessionOp::CreateObject { asset_id: asset(), transform: Some(transform()) },
        SessionOp::Grab { object_id: oid() },
        SessionOp::Release { object_id: oid() },
        SessionOp::Move { object_id: oid(), transform: transform() },
        SessionOp::Scale { object_id: oid(), scale: 1.5 },
        SessionOp::DeleteObject { object_id: oid() },
        SessionOp::Snapshot { object_id: oid(), camera: camera() },
        SessionOp::PinView { item: MenuItem::Front, uv: [0.25, 0.5] },
        SessionOp::MovePin { pin_id: pid(), uv: [0.75, 0.5] },
        SessionOp::ScalePin { pin_id: pid(), scale: 2.0 },
        SessionOp::DeletePin { pin_id: pid() },
        SessionOp::OpenPieMenu { object_id: oid() },
        SessionOp::OpenAssetMenu { asset_id: asset() },
        SessionOp::TogglePieMenu,
        SessionOp::ExpireLeases,
    ]
}

fn object() -> SpaceObject {
    SpaceObject {
        object_id: oid(),
        asset_id: asset(),
        transform: transform(),
        normalization: 0.5,
        asset_diagonal: 1.0,
        proxy_radius: 0.25,
        grabbed_by: Some(UserId("alice".into())),
        lease_touched_ms: Some(1_000),
        created_by: UserId("alice".into()),
    }
}

fn pin() -> WhiteboardPin {
    WhiteboardPin {
        pin_id: pid(),
        image: PinImage::View { asset_id: asset(), slot: ViewSlot::Front, resolution: 256 },
        uv: [0.25, 0.5],
        scale: 1.0,
        pinned_by: UserId("alice".into()),
    }
}

fn menu() -> PieMenu {
    PieMenu {
        owner: UserId("alice".into()),
        source: MenuSource::Object { object_id: oid() },
        asset_id: asset(),
        resolution: 256,
        visible: true,
    }
}

/// One example of every change kind.
pub fn example_changes() -> Vec<Change> {
    vec![
        Change::UserJoined { user: UserId("bob".into()) },
        Change::UserLeft { user: UserId("bob".into()) },
        Change::PoseUpdated { user: UserId("bob".into()), pose: Pose::default() },
        Change::ObjectUpserted { object: object() },
        Change::ObjectRemoved { object_id: oid() },
        Change::PinUpserted { pin: pin() },
        Change::PinRemoved { pin_id: pid() },
        Change::MenuUpdated { menu: menu() },
        Change::MenuRemoved { owner: UserId("alice".into()) },
    ]
}

fn attachment() -> Attachment {
    Attachment { target: "pin:pin-5".into(), name: "image".into(), png: "iVBORw0KGgo=".into() }
}

fn delta() -> DeltaBody {
    DeltaBody {
        revision: 7,
        actor: UserId("alice".into()),
        changes: vec![Change::PinUpserted { pin: pin() }],
        clamped: true,
        attachments: vec![attachment()],
    }
}

fn state() -> SessionState {
    let mut s = SessionState::new(SessionId("lab".into()), SessionSettings::default());
    s.users.insert(UserId("alice".into()));
    s.objects.insert(oid(), object());
    s.pins.insert(pid(), pin());
    s.revision = 7;
    s
}

pub fn example_payload() -> JobPayload {
    JobPayload {
        cutout: Some("iVBORw0KGgo=".into()),
        mask: Some("iVBORw0KGgo=".into()),
        views: Some(vec!["iVBORw0KGgo=".into(); 4]),
        asset_id: Some(asset()),
        error: Some(BackendFailure { stage: "multiview".into(), message: "timed out".into() }),
        points_outside_mask: true,
        timings_ms: BTreeMap::from([("segmenting".to_owned(), 12.5)]),
    }
}

/// A fully populated example of every message type, in [`MESSAGES`] order.
pub fn example_messages() -> Vec<Message> {
    let job = JobId::from("job-1");
    let bodies = vec![
        Body::Hello { user: UserId("alice".into()), session: SessionId("lab".into()) },
        Body::Welcome {
            user: UserId("alice".into()),
            session: SessionId("lab".into()),
            revision: 7,
            full_state: state(),
            attachments: vec![attachment()],
        },
        Body::Op { op: SessionOp::Grab { object_id: oid() } },
        Body::Delta(delta()),
        Body::JobSubmit {
            image: "iVBORw0KGgo=".into(),
            points: vec![Point::new(10, 12), Point::new(14, 12), Point::new(12, 20)],
            source: PromptSource::CameraFeed,
        },
        Body::JobConfirm { job_id: job.clone() },
        Body::JobReject { job_id: job.clone() },
        Body::Job(JobBody { job_id: job, stage: "done".into(), payload: example_payload() }),
        Body::FetchAsset { asset_id: asset() },
        Body::Asset { asset_id: asset(), ply: "cGx5Cg==".into() },
        Body::Resync {
            from_revision: 5,
            revision: Some(7),
            deltas: Some(vec![delta()]),
            full_state: Some(state()),
            attachments: vec![attachment()],
        },
        Body::error("grab_denied", "GrabDenied: obj-2 is held by bob"),
        Body::Ping {},
        Body::Pong {},
    ];
    bodies.into_iter().enumerate().map(|(i, b)| Message::reply(Some(i as u64 + 1), b)).collect()
}

fn json_type(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(n) if n.is_u64() || n.is_i64() => "integer",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

fn tagged_fields(value: &Value, tag: &str) -> (String, Vec<(String, &'static str)>) {
    let map = value.as_object().expect("tagged values are objects");
    let kind = map[tag].as_str().expect("tag is a string").to_owned();
    let fields = map.iter().filter(|(k, _)| *k != tag).map(|(k, v)| (k.clone(), json_type(v))).collect();
    (kind, fields)
}

fn field_list(fields: &[(String, &'static str)]) -> String {
    if fields.is_empty() {
        "(none)".into()
    } else {
        fields.iter().map(|(k, t)| format!("`{k}`: {t}")).collect::<Vec<_>>().join(", ")
    }
}

/// Renders `docs/protocol.md`.
pub fn protocol_markdown() -> String {
    let mut out = String::new();
    let w = &mut out;
    writeln!(w, "# splatspace wire protocol\n").unwrap();
    writeln!(w, "<!-- Generated by splatspace_wire::schema::protocol_markdown; do not edit. -->\n").unwrap();
    writeln!(w, "## Framing\n").unwrap();
    writeln!(
        w,
        "Each frame is a 4-byte big-endian unsigned payload length followed by that many bytes of UTF-8 JSON. \
         Payloads above {MAX_FRAME_LEN} bytes are rejected (`FrameTooLarge`). A message is one JSON object with a string \
         `type`; requests carry a client-chosen integer `seq` that the server echoes on the one reply. Pushed messages have \
         no `seq`. Objects are encoded with sorted keys and no whitespace. Unknown `type` values decode to an opaque \
         message that keeps all fields, so newer peers stay compatible.\n"
    )
    .unwrap();
    writeln!(w, "## Messages\n").unwrap();
    let examples = example_messages();
    for (doc, example) in MESSAGES.iter().zip(&examples) {
        writeln!(w, "### `{}` ({})\n\n{}\n", doc.type_name, doc.direction, doc.doc).unwrap();
        let value = example.to_value();
        if !doc.fields.is_empty() {
            writeln!(w, "| field | type | required | description |\n|---|---|---|---|").unwrap();
            for field in doc.fields {
                let ty = value.get(field.name).map_or("?", json_type);
                let req = if field.required { "yes" } else { "no" };
                writeln!(w, "| `{}` | {ty} | {req} | {} |", field.name, field.doc).unwrap();
            }
            writeln!(w).unwrap();
        }
        writeln!(w, "```json\n{}\n```\n", serde_json::to_string(&value).unwrap()).unwrap();
    }

    writeln!(w, "## Session operations\n\nCarried in `op.op`, tagged by `kind`.\n").unwrap();
    writeln!(w, "| kind | fields |\n|---|---|").unwrap();
    for op in example_ops() {
        let (kind, fields) = tagged_fields(&serde_json::to_value(&op).unwrap(), "kind");
        writeln!(w, "| `{kind}` | {} |", field_list(&fields)).unwrap();
    }
    writeln!(w, "\n## Changes\n\nCarried in `delta.changes`, tagged by `kind`. `menu_updated` and `menu_removed` reach only the menu owner.\n").unwrap();
    writeln!(w, "| kind | fields |\n|---|---|").unwrap();
    for change in example_changes() {
        let (kind, fields) = tagged_fields(&serde_json::to_value(&change).unwrap(), "kind");
        writeln!(w, "| `{kind}` | {} |", field_list(&fields)).unwrap();
    }

    writeln!(w, "\n## Nested objects\n").unwrap();
    let nested: Vec<(&str, Value)> = vec![
        ("Attachment", serde_json::to_value(attachment()).unwrap()),
        ("Job payload", serde_json::to_value(example_payload()).unwrap()),
        ("Transform", serde_json::to_value(transform()).unwrap()),
        ("Camera", serde_json::to_value(camera()).unwrap()),
        ("Pose", serde_json::to_value(Pose::default()).unwrap()),
        ("SpaceObject", serde_json::to_value(object()).unwrap()),
        ("WhiteboardPin", serde_json::to_value(pin()).unwrap()),
        ("PieMenu", serde_json::to_value(menu()).unwrap()),
    ];
    for (name, value) in nested {
        let fields: Vec<_> = value.as_object().unwrap().iter().map(|(k, v)| (k.clone(), json_type(v))).collect();
        writeln!(w, "- **{name}**: {}.", field_list(&fields)).unwrap();
        if let Some((_, doc)) = NESTED_DOCS.iter().find(|(n, _)| *n == name) {
            writeln!(w, "  {doc}").unwrap();
        }
    }
    writeln!(
        w,
        "\nPin `image` is tagged by `kind`: `snapshot` (`asset_id`, `camera` in the asset's frame), `view` (`asset_id`, `slot`, \
         `resolution`) or `orbit` (`asset_id`, `frame_count`, `resolution`). Menu `source` is `{{\"kind\":\"object\",\"object_id\":…}}` \
         or `{{\"kind\":\"asset\"}}`."
    )
    .unwrap();

    writeln!(w, "\n## Error codes\n\n| code | meaning |\n|---|---|").unwrap();
    for (code, doc) in ERROR_CODES {
        writeln!(w, "| `{code}` | {doc} |").unwrap();
    }
    writeln!(
        w,
        "\n## Ordering\n\nEach session applies operations in one total order. A connection receives `welcome`, then every later \
         revision exactly once, in order. A client that detects a gap sends `resync`; the server keeps the last 1024 deltas per \
         session by default and falls back to the full state. A connection with more than 1024 queued outgoing frames is closed."
    )
    .unwrap();
    out
}
