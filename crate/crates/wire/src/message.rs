//! Message schema. On the wire a message is one JSON object whose `type`
//! field selects the body; `seq` is set by the client on requests and echoed
//! on the matching reply.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use splatspace_core::pipeline::{BackendFailure, JobId, Point, PromptSource};
use splatspace_core::session::{Change, SessionDelta, SessionId, SessionOp, SessionState, UserId};
use splatspace_core::splat::AssetId;

/// A base64 PNG attached to a delta, welcome or resync.
///
/// `target` is `pin:<pin_id>` for pin images (`name` is `image`, or
/// `frame-<i>` for orbit pins) or `menu:<owner>` for pie-menu views (`name`
/// is `front`, `left`, `right`, `back` or `center`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attachment {
    pub target: String,
    pub name: String,
    pub png: String,
}

impl Attachment {
    /// Owner of a private attachment.
    pub fn private_to(&self) -> Option<&str> {
        self.target.strip_prefix("menu:")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaBody {
    pub revision: u64,
    pub actor: UserId,
    pub changes: Vec<Change>,
    #[serde(default)]
    pub clamped: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub attachments: Vec<Attachment>,
}

impl DeltaBody {
    pub fn new(delta: SessionDelta, attachments: Vec<Attachment>) -> Self {
        Self { revision: delta.revision, actor: delta.actor, changes: delta.changes, clamped: delta.clamped, attachments }
    }

    /// The delta as `user` may see it: same revision, other users' private
    /// changes and attachments removed.
    pub fn for_user(&self, user: &UserId) -> DeltaBody {
        DeltaBody {
            revision: self.revision,
            actor: self.actor.clone(),
            changes: self.changes.iter().filter(|c| c.private_to().is_none_or(|o| o == user)).cloned().collect(),
            clamped: self.clamped,
            attachments: visible_attachments(&self.attachments, user),
        }
    }
}

pub fn visible_attachments(attachments: &[Attachment], user: &UserId) -> Vec<Attachment> {
    attachments.iter().filter(|a| a.private_to().is_none_or(|o| o == user.as_str())).cloned().collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct JobPayload {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cutout: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub views: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub asset_id: Option<AssetId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<BackendFailure>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub points_outside_mask: bool,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub timings_ms: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobBody {
    pub job_id: JobId,
    /// A pipeline stage, or `rejected`.
    pub stage: String,
    #[serde(default)]
    pub payload: JobPayload,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Body {
    Hello {
        user: UserId,
        session: SessionId,
    },
    Welcome {
        user: UserId,
        session: SessionId,
        revision: u64,
        full_state: SessionState,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        attachments: Vec<Attachment>,
    },
    Op {
        op: SessionOp,
    },
    Delta(DeltaBody),
    JobSubmit {
        image: String,
        points: Vec<Point>,
        #[serde(default)]
        source: PromptSource,
    },
    JobConfirm {
        job_id: JobId,
    },
    JobReject {
        job_id: JobId,
    },
    Job(JobBody),
    FetchAsset {
        asset_id: AssetId,
    },
    Asset {
        asset_id: AssetId,
        ply: String,
    },
    /// Request: `from_revision` only. Reply: `revision` plus either the
    /// missing `deltas` or a `full_state`.
    Resync {
        from_revision: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        revision: Option<u64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        deltas: Option<Vec<DeltaBody>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        full_state: Option<SessionState>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        attachments: Vec<Attachment>,
    },
    Error {
        code: String,
        message: String,
    },
    Ping {},
    Pong {},
    /// Any other `type`, kept verbatim.
    #[serde(skip)]
    Unknown {
        type_name: String,
        fields: Map<String, Value>,
    },
}

/// Every `type` value this protocol version defines.
pub const MESSAGE_TYPES: [&str; 14] = [
    "hello",
    "welcome",
    "op",
    "delta",
    "job_submit",
    "job_confirm",
    "job_reject",
    "job",
    "fetch_asset",
    "asset",
    "resync",
    "error",
    "ping",
    "pong",
];

impl Body {
    pub fn type_name(&self) -> &str {
        match self {
            Body::Hello { .. } => "hello",
            Body::Welcome { .. } => "welcome",
            Body::Op { .. } => "op",
            Body::Delta(_) => "delta",
            Body::JobSubmit { .. } => "job_submit",
            Body::JobConfirm { .. } => "job_confirm",
            Body::JobReject { .. } => "job_reject",
            Body::Job(_) => "job",
            Body::FetchAsset { .. } => "fetch_asset",
            Body::Asset { .. } => "asset",
            Body::Resync { .. } => "resync",
            Body::Error { .. } => "error",
            Body::Ping {} => "ping",
            Body::Pong {} => "pong",
            Body::Unknown { type_name, .. } => type_name,
        }
    }

    pub fn error(code: impl Into<String>, message: impl Into<String>) -> Self {
        Body::Error { code: code.into(), message: message.into() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub seq: Option<u64>,
    pub body: Body,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("InvalidMessage: {0}")]
pub struct InvalidMessage(pub String);

impl Message {
    pub fn new(body: Body) -> Self {
        Self { seq: None, body }
    }

    pub fn reply(seq: Option<u64>, body: Body) -> Self {
        Self { seq, body }
    }

    pub fn to_value(&self) -> Value {
        let mut map = match &self.body {
            Body::Unknown { type_name, fields } => {
                let mut m = fields.clone();
                m.insert("type".into(), Value::String(type_name.clone()));
                m
            }
            body => match serde_json::to_value(body).expect("message bodies serialize") {
                Value::Object(m) => m,
                _ => unreachable!("tagged enums serialize to objects"),
            },
        };
        match self.seq {
            Some(seq) => map.insert("seq".into(), seq.into()),
            None => map.remove("seq"),
        };
        Value::Object(map)
    }

    /// Canonical encoding: compact JSON with keys in sorted order.
    pub fn to_json(&self) -> Vec<u8> {
        serde_json::to_vec(&self.to_value()).expect("values serialize")
    }

    pub fn from_value(value: Value) -> Result<Self, InvalidMessage> {
        let Value::Object(mut map) = value else {
            return Err(InvalidMessage("message must be a JSON object".into()));
        };
        let seq = match map.remove("seq") {
            None | Some(Value::Null) => None,
            Some(v) => Some(v.as_u64().ok_or_else(|| InvalidMessage("seq must be a non-negative integer".into()))?),
        };
        let type_name = match map.get("type") {
            Some(Value::String(t)) => t.clone(),
            _ => return Err(InvalidMessage("missing string field `type`".into())),
        };
        let body = if MESSAGE_TYPES.contains(&type_name.as_str()) {
            serde_json::from_value(Value::Object(map)).map_err(|e| InvalidMessage(format!("{type_name}: {e}")))?
        } else {
            map.remove("type");
            Body::Unknown { type_name, fields: map }
        };
        Ok(Self { seq, body })
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, InvalidMessage> {
        let value: Value = serde_json::from_slice(bytes).map_err(|e| InvalidMessage(format!("malformed JSON: {e}")))?;
        Self::from_value(value)
    }
}
