use std::path::PathBuf;

use proptest::prelude::*;
use serde_json::{json, Value};
use splatspace_wire::frame::{self, FrameDecoder, FrameError, HEADER_LEN, MAX_FRAME_LEN};
use splatspace_wire::message::{Body, Message, MESSAGE_TYPES};
use splatspace_wire::schema::{self, MESSAGES};

fn updating() -> bool {
    std::env::var_os("UPDATE_GOLDEN").is_some()
}

fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

#[test]
fn schema_covers_every_type_in_order() {
    let documented: Vec<_> = MESSAGES.iter().map(|m| m.type_name).collect();
    assert_eq!(documented, MESSAGE_TYPES);
    let examples: Vec<_> = schema::example_messages().iter().map(|m| m.body.type_name().to_owned()).collect();
    assert_eq!(examples, MESSAGE_TYPES);
}

#[test]
fn field_tables_match_serialized_examples() {
    for (doc, example) in MESSAGES.iter().zip(schema::example_messages()) {
        let value = example.to_value();
        let mut keys: Vec<_> = value.as_object().unwrap().keys().filter(|k| *k != "type" && *k != "seq").cloned().collect();
        keys.sort();
        let mut documented: Vec<_> = doc.fields.iter().map(|f| f.name.to_owned()).collect();
        documented.sort();
        assert_eq!(keys, documented, "fields of {}", doc.type_name);
    }
}

#[test]
fn required_fields_are_required() {
    for (doc, example) in MESSAGES.iter().zip(schema::example_messages()) {
        let full = example.to_value();
        for field in doc.fields {
            let mut v = full.clone();
            v.as_object_mut().unwrap().remove(field.name);
            let decoded = Message::from_value(v);
            assert_eq!(decoded.is_err(), field.required, "{}.{}", doc.type_name, field.name);
        }
    }
}

#[test]
fn every_example_round_trips() {
    for example in schema::example_messages() {
        let bytes = frame::encode(&example).unwrap();
        let (back, used) = frame::decode(&bytes).unwrap();
        assert_eq!(used, bytes.len());
        assert_eq!(back, example);
        assert_eq!(frame::encode(&back).unwrap(), bytes);
    }
}

#[test]
fn golden_corpus() {
    let dir = golden_dir();
    for example in schema::example_messages() {
        let path = dir.join(format!("{}.json", example.body.type_name()));
        let json = example.to_json();
        if updating() {
            std::fs::write(&path, &json).unwrap();
            continue;
        }
        let stored = std::fs::read(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(String::from_utf8_lossy(&json), String::from_utf8_lossy(&stored), "{}", path.display());
        assert_eq!(Message::from_json(&stored).unwrap(), example);
    }
}

#[test]
fn protocol_doc_is_current() {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../docs/protocol.md");
    let doc = schema::protocol_markdown();
    if updating() {
        std::fs::write(&path, &doc).unwrap();
        return;
    }
    let stored = std::fs::read_to_string(&path).expect("docs/protocol.md exists");
    assert!(stored == doc, "docs/protocol.md is stale; regenerate with UPDATE_GOLDEN=1 cargo test -p splatspace-wire --test protocol");
}

#[test]
fn keys_are_sorted_and_compact() {
    for example in schema::example_messages() {
        let text = String::from_utf8(example.to_json()).unwrap();
        let reparsed: Value = serde_json::from_str(&text).unwrap();
        assert_eq!(serde_json::to_string(&reparsed).unwrap(), text);
    }
}

#[test]
fn unknown_types_are_preserved() {
    let raw = json!({"type": "hologram", "seq": 4, "color": [1, 2, 3], "nested": {"b": 1, "a": null}});
    let msg = Message::from_value(raw.clone()).unwrap();
    assert_eq!(msg.seq, Some(4));
    assert_eq!(msg.body.type_name(), "hologram");
    assert!(matches!(msg.body, Body::Unknown { .. }));
    assert_eq!(msg.to_value(), raw);
}

#[test]
fn invalid_messages() {
    for bad in [
        &b"[1,2]"[..],
        b"{\"seq\":1}",
        b"{\"type\":3}",
        b"{\"type\":\"ping\",\"seq\":-1}",
        b"{\"type\":\"hello\",\"user\":\"a\"}",
        b"{\"type\":\"op\",\"op\":{\"kind\":\"teleport\"}}",
        b"{nope",
    ] {
        let err = frame::decode_payload(bad).unwrap_err();
        assert!(matches!(err, FrameError::InvalidMessage(_)), "{err:?}");
        assert!(err.to_string().starts_with("InvalidMessage"), "{err}");
    }
    assert!(matches!(frame::decode_payload(&[0xff, 0xfe]), Err(FrameError::InvalidUtf8)));
}

#[test]
fn oversized_frames_are_rejected() {
    let mut header = ((MAX_FRAME_LEN + 1) as u32).to_be_bytes().to_vec();
    header.extend_from_slice(b"{}");
    assert!(matches!(frame::decode(&header), Err(FrameError::FrameTooLarge { .. })));
    let mut decoder = FrameDecoder::new();
    decoder.push(&header);
    assert!(matches!(decoder.next_message(), Err(FrameError::FrameTooLarge { .. })));
    let big = vec![b' '; MAX_FRAME_LEN + 1];
    assert!(matches!(frame::encode_payload(&big), Err(FrameError::FrameTooLarge { .. })));
    let at_limit = vec![b' '; MAX_FRAME_LEN];
    assert_eq!(frame::encode_payload(&at_limit).unwrap().len(), MAX_FRAME_LEN + HEADER_LEN);
}

proptest! {
    #[test]
    fn arbitrary_splits_decode_in_order(cuts in proptest::collection::vec(0usize..4000, 0..12)) {
        let examples = schema::example_messages();
        let stream: Vec<u8> = examples.iter().flat_map(|m| frame::encode(m).unwrap()).collect();
        let mut cuts: Vec<usize> = cuts.into_iter().map(|c| c % (stream.len() + 1)).collect();
        cuts.push(0);
        cuts.push(stream.len());
        cuts.sort_unstable();
        let mut decoder = FrameDecoder::new();
        let mut out = Vec::new();
        for w in cuts.windows(2) {
            decoder.push(&stream[w[0]..w[1]]);
            while let Some(m) = decoder.next_message().unwrap() {
                out.push(m);
            }
        }
        prop_assert_eq!(out, examples);
        prop_assert_eq!(decoder.buffered(), 0);
    }

    #[test]
    fn truncated_frames_need_more(index in 0usize..14, cut in 0usize..100_000) {
        let bytes = frame::encode(&schema::example_messages()[index]).unwrap();
        let cut = cut % bytes.len();
        match frame::decode(&bytes[..cut]) {
            Err(FrameError::NeedMoreBytes { needed }) => prop_assert!(needed > 0 && cut + needed <= bytes.len()),
            other => prop_assert!(false, "unexpected {:?}", other),
        }
    }

    #[test]
    fn seq_round_trips(seq in proptest::option::of(any::<u64>()), user in "[a-z]{1,8}") {
        let m = Message::reply(seq, Body::Hello { user: splatspace_core::session::UserId(user), session: splatspace_core::session::SessionId("s".into()) });
        prop_assert_eq!(Message::from_json(&m.to_json()).unwrap(), m);
    }
}
