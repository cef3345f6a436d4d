//! Scripted headless client.
//!
//! A script is plain text, one step per line, `<at_ms> <action> [json]`,
//! with steps sorted by `at_ms` (milliseconds after connecting). Blank lines
//! and lines starting with `#` are ignored. Actions:
//!
//! * a message type (`op`, `job_submit`, `ping`, ...): sends the JSON body as
//!   that message and waits for its reply;
//! * `expect <pattern>`: the last reply must match `pattern`;
//! * `await <pattern>`: waits for the next received message matching
//!   `pattern`, skipping earlier ones;
//! * `state <pattern>`: the mirrored session state must match `pattern`.
//!
//! A pattern matches a value when every object key in the pattern matches
//! the value's key of the same name (extra keys are ignored), arrays match
//! element-wise with equal length, and scalars are equal. The string
//! `"$name"` binds `name` on first use and must equal the bound value
//! afterwards; `"$_"` matches anything. In message bodies `"$name"` is
//! replaced by its value and `"@file:path"` by the base64 contents of `path`,
//! relative to the script's directory.
//!
//! The transcript has one line per event: `connected`, `>` for sent
//! messages, `<` for replies, `~` for awaited messages, `!` for resyncs and a
//! closing `state` line. Long strings are abbreviated and `timings_ms`
//! omitted so transcripts are reproducible.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde_json::{Map, Value};
use splatspace_core::session::SessionState;
use splatspace_wire::message::{Body, Message};
use splatspace_wire::{Client, ClientError};

use crate::exit;

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Send { type_name: String, body: Map<String, Value> },
    Expect(Value),
    Await(Value),
    State(Value),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScriptStep {
    pub at_ms: u64,
    /// 1-based line in the script file.
    pub line: usize,
    pub action: Action,
}

#[derive(Debug, thiserror::Error)]
pub enum ScriptError {
    #[error("script:{line}: {message}")]
    Parse { line: usize, message: String },
    #[error("connection refused: {addr}: {message}")]
    Connect { addr: String, message: String },
    #[error("script:{line}: expectation failed: {message}")]
    Expectation { line: usize, message: String },
    #[error("script:{line}: protocol error: {message}")]
    Protocol { line: usize, message: String },
    #[error("transcript: {0}")]
    Output(#[from] std::io::Error),
}

impl ScriptError {
    pub fn exit_code(&self) -> i32 {
        match self {
            ScriptError::Parse { .. } => exit::USAGE,
            ScriptError::Connect { .. } => exit::CONNECTION_REFUSED,
            ScriptError::Expectation { .. } => exit::EXPECTATION_FAILED,
            ScriptError::Protocol { .. } | ScriptError::Output(_) => exit::PROTOCOL,
        }
    }
}

pub fn parse_script(text: &str) -> Result<Vec<ScriptStep>, ScriptError> {
    let mut steps: Vec<ScriptStep> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let err = |message: String| ScriptError::Parse { line, message };
        let (at, rest) = trimmed.split_once(char::is_whitespace).unwrap_or((trimmed, ""));
        let at_ms: u64 = at.parse().map_err(|_| err(format!("expected <at_ms> <action> [json], got {trimmed:?}")))?;
        let rest = rest.trim_start();
        let (word, json) = rest.split_once(char::is_whitespace).unwrap_or((rest, ""));
        if word.is_empty() {
            return Err(err("missing action".into()));
        }
        let json = json.trim();
        let value: Option<Value> =
            if json.is_empty() { None } else { Some(serde_json::from_str(json).map_err(|e| err(format!("invalid JSON: {e}")))?) };
        let pattern = |v: Option<Value>| v.ok_or_else(|| err(format!("{word} needs a JSON pattern")));
        let action = match word {
            "expect" => Action::Expect(pattern(value)?),
            "await" => Action::Await(pattern(value)?),
            "state" => Action::State(pattern(value)?),
            _ if word.chars().all(|c| c.is_ascii_lowercase() || c == '_') => {
                let body = match value {
                    None => Map::new(),
                    Some(Value::Object(m)) => m,
                    Some(_) => return Err(err("message body must be a JSON object".into())),
                };
                if body.contains_key("type") || body.contains_key("seq") {
                    return Err(err("`type` and `seq` are set by the runner".into()));
                }
                Action::Send { type_name: word.to_owned(), body }
            }
            _ => return Err(err(format!("unknown action {word:?}"))),
        };
        if steps.last().is_some_and(|s| s.at_ms > at_ms) {
            return Err(err(format!("steps must be sorted by at_ms ({at_ms} follows {})", steps.last().unwrap().at_ms)));
        }
        steps.push(ScriptStep { at_ms, line, action });
    }
    Ok(steps)
}

pub type Vars = BTreeMap<String, Value>;

fn var_name(s: &str) -> Option<&str> {
    let name = s.strip_prefix('$')?;
    let mut chars = name.chars();
    let first = chars.next()?;
    ((first.is_ascii_alphabetic() || first == '_') && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')).then_some(name)
}

/// Matches `value` against `pattern`, extending `vars` with new bindings.
/// On mismatch returns the path and reason; `vars` is then unspecified.
pub fn match_pattern(pattern: &Value, value: &Value, vars: &mut Vars, path: &str) -> Result<(), String> {
    match pattern {
        Value::String(s) if s == "$_" => Ok(()),
        Value::String(s) if var_name(s).is_some() => {
            let name = var_name(s).expect("checked");
            match vars.get(name) {
                Some(bound) if json_eq(bound, value) => Ok(()),
                Some(bound) => Err(format!("{path}: ${name} is {}, got {}", brief(bound), brief(value))),
                None => {
                    vars.insert(name.to_owned(), value.clone());
                    Ok(())
                }
            }
        }
        Value::Object(p) => {
            let Value::Object(v) = value else {
                return Err(format!("{path}: expected an object, got {}", brief(value)));
            };
            for (k, pv) in p {
                let sub = format!("{path}.{k}");
                match v.get(k) {
                    Some(vv) => match_pattern(pv, vv, vars, &sub)?,
                    None => return Err(format!("{sub}: missing")),
                }
            }
            Ok(())
        }
        Value::Array(p) => {
            let Value::Array(v) = value else {
                return Err(format!("{path}: expected an array, got {}", brief(value)));
            };
            if p.len() != v.len() {
                return Err(format!("{path}: expected {} elements, got {}", p.len(), v.len()));
            }
            for (i, (pv, vv)) in p.iter().zip(v).enumerate() {
                match_pattern(pv, vv, vars, &format!("{path}[{i}]"))?;
            }
            Ok(())
        }
        _ if json_eq(pattern, value) => Ok(()),
        _ => Err(format!("{path}: expected {}, got {}", brief(pattern), brief(value))),
    }
}

fn json_eq(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => x.as_f64() == y.as_f64(),
        _ => a == b,
    }
}

fn brief(v: &Value) -> String {
    let s = summarize(v).to_string();
    if s.len() > 120 {
        format!("{}…", &s[..s.floor_char_boundary(120)])
    } else {
        s
    }
}

/// Copy of `v` for the transcript: long strings abbreviated, timings and
/// `seq` dropped.
pub fn summarize(v: &Value) -> Value {
    match v {
        Value::String(s) if s.len() > 64 => Value::String(format!("<{} bytes>", s.len())),
        Value::Array(a) => Value::Array(a.iter().map(summarize).collect()),
        Value::Object(m) => Value::Object(
            m.iter().filter(|(k, _)| *k != "timings_ms" && *k != "seq").map(|(k, v)| (k.clone(), summarize(v))).collect(),
        ),
        _ => v.clone(),
    }
}

/// Replaces `"$name"` strings by their bindings and `"@file:path"` strings
/// by base64 file contents. `expand_files` false leaves file references in
/// place, for the transcript.
fn substitute(v: &Value, vars: &Vars, base_dir: &Path, expand_files: bool, line: usize) -> Result<Value, ScriptError> {
    Ok(match v {
        Value::String(s) if var_name(s).is_some() => {
            let name = var_name(s).expect("checked");
            vars.get(name).cloned().ok_or_else(|| ScriptError::Parse { line, message: format!("unbound variable ${name}") })?
        }
        Value::String(s) if s.starts_with("@file:") => {
            let rel = &s["@file:".len()..];
            let path = base_dir.join(rel);
            let bytes = std::fs::read(&path)
                .map_err(|e| ScriptError::Parse { line, message: format!("cannot read {}: {e}", path.display()) })?;
            if expand_files {
                Value::String(B64.encode(bytes))
            } else {
                v.clone()
            }
        }
        Value::Array(a) => Value::Array(a.iter().map(|x| substitute(x, vars, base_dir, expand_files, line)).collect::<Result<_, _>>()?),
        Value::Object(m) => Value::Object(
            m.iter()
                .map(|(k, x)| Ok((k.clone(), substitute(x, vars, base_dir, expand_files, line)?)))
                .collect::<Result<_, ScriptError>>()?,
        ),
        _ => v.clone(),
    })
}

#[derive(Debug, Clone)]
pub struct ScriptOptions {
    pub addr: String,
    pub user: String,
    pub session: String,
    /// Directory `@file:` paths are resolved against.
    pub base_dir: PathBuf,
    /// Limit for each reply and each `await`.
    pub timeout: Duration,
    pub vars: Vars,
}

impl ScriptOptions {
    pub fn new(addr: impl Into<String>, user: impl Into<String>, session: impl Into<String>) -> Self {
        Self {
            addr: addr.into(),
            user: user.into(),
            session: session.into(),
            base_dir: PathBuf::from("."),
            timeout: Duration::from_secs(10),
            vars: Vars::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    /// The session as the scripted user saw it at the end.
    pub state: SessionState,
    pub vars: Vars,
}

fn body_value(message: &Message) -> Value {
    let mut v = message.to_value();
    if let Value::Object(m) = &mut v {
        m.remove("seq");
    }
    v
}

fn message_line(prefix: &str, message: &Message) -> String {
    let mut v = summarize(&body_value(message));
    if let Value::Object(m) = &mut v {
        m.remove("type");
    }
    format!("{prefix} {} {v}", message.body.type_name())
}

fn client_error(line: usize, e: ClientError) -> ScriptError {
    ScriptError::Protocol { line, message: e.to_string() }
}

/// Connects as `options.user`, runs `steps` and writes the transcript to
/// `out`.
pub fn run_script(steps: &[ScriptStep], options: &ScriptOptions, out: &mut dyn Write) -> Result<Outcome, ScriptError> {
    let (mut client, welcome) = match Client::connect(&options.addr, &options.user, &options.session) {
        Ok(c) => c,
        Err(ClientError::Connect(e)) => return Err(ScriptError::Connect { addr: options.addr.clone(), message: e.to_string() }),
        Err(e) => return Err(client_error(0, e)),
    };
    client.timeout = options.timeout;
    writeln!(out, "connected {}@{} revision={}", options.user, options.session, welcome.revision)?;
    out.flush()?;

    let start = Instant::now();
    let mut vars = options.vars.clone();
    let mut last_reply: Option<Value> = None;
    let mut gaps = 0;
    for step in steps {
        let due = start + Duration::from_millis(step.at_ms);
        if let Some(wait) = due.checked_duration_since(Instant::now()) {
            std::thread::sleep(wait);
        }
        let line = step.line;
        match &step.action {
            Action::Send { type_name, body } => {
                let shown = substitute(&Value::Object(body.clone()), &vars, &options.base_dir, false, line)?;
                let Value::Object(mut full) = substitute(&Value::Object(body.clone()), &vars, &options.base_dir, true, line)? else {
                    unreachable!("objects substitute to objects")
                };
                full.insert("type".into(), Value::String(type_name.clone()));
                let message = Message::from_value(Value::Object(full))
                    .map_err(|e| ScriptError::Parse { line, message: e.to_string() })?;
                writeln!(out, "> {} {type_name} {}", step.at_ms, summarize(&shown))?;
                let reply = client.request(message.body).map_err(|e| client_error(line, e))?;
                writeln!(out, "{}", message_line("<", &reply))?;
                if let Body::Error { code, message } = &reply.body {
                    if code == "protocol" {
                        return Err(ScriptError::Protocol { line, message: message.clone() });
                    }
                }
                last_reply = Some(body_value(&reply));
            }
            Action::Expect(pattern) => {
                let reply = last_reply.as_ref().ok_or_else(|| ScriptError::Parse { line, message: "expect before any reply".into() })?;
                let mut next = vars.clone();
                match_pattern(pattern, reply, &mut next, "$").map_err(|message| ScriptError::Expectation { line, message })?;
                vars = next;
            }
            Action::Await(pattern) => {
                let deadline = Instant::now() + options.timeout;
                loop {
                    let left = deadline.saturating_duration_since(Instant::now());
                    let message = match client.recv(left.max(Duration::from_millis(1))) {
                        Ok(m) => m,
                        Err(ClientError::Timeout(_)) => {
                            return Err(ScriptError::Expectation {
                                line,
                                message: format!("no message matching {} within {:?}", brief(pattern), options.timeout),
                            });
                        }
                        Err(e) => return Err(client_error(line, e)),
                    };
                    let mut next = vars.clone();
                    if match_pattern(pattern, &body_value(&message), &mut next, "$").is_ok() {
                        writeln!(out, "{}", message_line("~", &message))?;
                        vars = next;
                        break;
                    }
                }
            }
            Action::State(pattern) => {
                let state = serde_json::to_value(client.mirror()).expect("states serialize");
                let mut next = vars.clone();
                match_pattern(pattern, &state, &mut next, "$state").map_err(|message| ScriptError::Expectation { line, message })?;
                vars = next;
            }
        }
        if client.gaps() > gaps {
            gaps = client.gaps();
            writeln!(out, "! resync from {}", client.revision())?;
            client.resync().map_err(|e| client_error(line, e))?;
        }
        out.flush()?;
    }
    let state = client.mirror().clone();
    writeln!(
        out,
        "state revision={} objects={} pins={} hash={}",
        state.revision,
        state.objects.len(),
        state.pins.len(),
        state.state_hash()
    )?;
    out.flush()?;
    Ok(Outcome { state, vars })
}

#[cfg(test)]
mod tests {
    use serde_json::json;

    use super::*;

    #[test]
    fn parses_steps_and_rejects_disorder() {
        let steps = parse_script("# c\n\n0 ping\n10 op {\"op\":{\"kind\":\"toggle_pie_menu\"}}\n10 expect {\"type\":\"error\"}\n").unwrap();
        assert_eq!(steps.len(), 3);
        assert_eq!(steps[0].line, 3);
        assert!(matches!(&steps[1].action, Action::Send { type_name, .. } if type_name == "op"));
        for (bad, line) in [("5 ping\n1 ping", 2), ("x ping", 1), ("0 ping [1]", 1), ("0 expect", 1), ("0 Ping", 1), ("0 ping {\"seq\":1}", 1), ("0", 1)] {
            match parse_script(bad) {
                Err(ScriptError::Parse { line: l, .. }) => assert_eq!(l, line, "{bad}"),
                other => panic!("{bad}: {other:?}"),
            }
        }
    }

    #[test]
    fn patterns_bind_and_compare() {
        let value = json!({"type": "delta", "revision": 4, "changes": [{"kind": "object_upserted", "object": {"object_id": "obj-4", "x": 1}}]});
        let mut vars = Vars::new();
        let p = json!({"changes": [{"object": {"object_id": "$obj"}}], "revision": 4.0});
        match_pattern(&p, &value, &mut vars, "$").unwrap();
        assert_eq!(vars["obj"], json!("obj-4"));
        match_pattern(&json!({"changes": [{"object": {"object_id": "$obj"}}]}), &value, &mut vars, "$").unwrap();
        let err = match_pattern(&json!({"revision": "$obj"}), &value, &mut vars, "$").unwrap_err();
        assert!(err.starts_with("$.revision"), "{err}");
        assert!(match_pattern(&json!({"changes": []}), &value, &mut vars, "$").is_err());
        assert!(match_pattern(&json!({"nope": "$_"}), &value, &mut vars, "$").is_err());
        assert!(match_pattern(&json!({"type": "$_"}), &value, &mut vars, "$").is_ok());
    }

    #[test]
    fn substitution_and_summary() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("f.bin"), b"abc").unwrap();
        let vars = Vars::from([("obj".to_owned(), json!("obj-2"))]);
        let body = json!({"a": "$obj", "b": ["@file:f.bin"], "c": "$$x"});
        let full = substitute(&body, &vars, dir.path(), true, 1).unwrap();
        assert_eq!(full, json!({"a": "obj-2", "b": ["YWJj"], "c": "$$x"}));
        assert_eq!(substitute(&body, &vars, dir.path(), false, 1).unwrap()["b"], json!(["@file:f.bin"]));
        assert!(substitute(&json!("$missing"), &vars, dir.path(), true, 7).is_err());
        assert!(substitute(&json!("@file:nope"), &vars, dir.path(), true, 7).is_err());
        let s = summarize(&json!({"png": "x".repeat(100), "timings_ms": {"a": 1}, "k": [1]}));
        assert_eq!(s, json!({"png": "<100 bytes>", "k": [1]}));
    }
}
