//! Checked-in wire vectors. Other-language container bindings compare their
//! encoder output against these files byte for byte.
//!
//! Regenerate with `PREDSERVE_BLESS=1 cargo test -p predserve-core --test golden`.

use std::path::PathBuf;

use predserve_core::wire::{decode_message, encode_message, ErrorMessage, Handshake, PredictRequest, PredictResponse, WireMessage};
use predserve_core::{InputPayload, InputType};

fn vectors() -> Vec<(&'static str, WireMessage)> {
    let strings = [InputPayload::String("a".into()), InputPayload::String("bc".into()), InputPayload::String("def".into())];
    vec![
        ("heartbeat", WireMessage::Heartbeat),
        ("handshake_noop", WireMessage::Handshake(Handshake { model_name: "noop".into(), model_version: 1, input_type: InputType::Bytes })),
        (
            "handshake_linear",
            WireMessage::Handshake(Handshake { model_name: "linear".into(), model_version: 3, input_type: InputType::Doubles }),
        ),
        ("predict_request_doubles", WireMessage::PredictRequest(PredictRequest::from_inputs(1, &[InputPayload::Doubles(vec![1.0])]))),
        (
            "predict_request_ints",
            WireMessage::PredictRequest(PredictRequest::from_inputs(
                2,
                &[InputPayload::Ints(vec![-1, 0, 7]), InputPayload::Ints(vec![65_536])],
            )),
        ),
        ("predict_request_floats", WireMessage::PredictRequest(PredictRequest::from_inputs(3, &[InputPayload::Floats(vec![0.5, -2.25])]))),
        ("predict_request_strings", WireMessage::PredictRequest(PredictRequest::from_inputs(7, &strings))),
        (
            "predict_response_echo",
            WireMessage::PredictResponse(PredictResponse {
                request_id: 7,
                outputs: vec![vec!["a".into()], vec!["bc".into()], vec!["def".into()]],
            }),
        ),
        (
            "predict_response_multi",
            WireMessage::PredictResponse(PredictResponse {
                request_id: 9,
                outputs: vec![vec!["cat".into(), "0.9".into()], vec![], vec!["ünïcode".into()]],
            }),
        ),
        ("error", WireMessage::Error(ErrorMessage { request_id: 7, message: "dimension mismatch".into() })),
    ]
}

fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

#[test]
fn encoder_matches_checked_in_vectors() {
    let bless = std::env::var_os("PREDSERVE_BLESS").is_some();
    for (name, msg) in vectors() {
        let path = golden_dir().join(format!("{name}.bin"));
        let bytes = encode_message(&msg).unwrap();
        if bless {
            std::fs::write(&path, &bytes).unwrap();
            continue;
        }
        let want = std::fs::read(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(bytes, want, "{name} drifted from its golden vector");
    }
}

#[test]
fn checked_in_vectors_decode_to_their_messages() {
    for (name, msg) in vectors() {
        let bytes = std::fs::read(golden_dir().join(format!("{name}.bin"))).unwrap();
        let mut r = &bytes[..];
        assert_eq!(decode_message(&mut r).unwrap(), msg, "{name}");
        assert!(r.is_empty(), "{name} left trailing bytes");
    }
}

#[test]
fn hand_encoded_vectors() {
    let hb = std::fs::read(golden_dir().join("heartbeat.bin")).unwrap();
    assert_eq!(hb, [4, 0, 0, 0, 0, 0, 0, 0]);

    let req = std::fs::read(golden_dir().join("predict_request_doubles.bin")).unwrap();
    let mut want = vec![2, 0, 0, 0, 20, 0, 0, 0];
    want.extend_from_slice(&[1, 0, 0, 0, 1, 0, 0, 0, 8, 0, 0, 0]);
    want.extend_from_slice(&1.0f64.to_le_bytes());
    assert_eq!(req, want);

    let hs = std::fs::read(golden_dir().join("handshake_noop.bin")).unwrap();
    let mut want = vec![1, 0, 0, 0, 16, 0, 0, 0, 4, 0, 0, 0];
    want.extend_from_slice(b"noop");
    want.extend_from_slice(&[1, 0, 0, 0, 0, 0, 0, 0]);
    assert_eq!(hs, want);
}

#[test]
fn every_golden_file_is_covered() {
    let known: Vec<String> = vectors().iter().map(|(n, _)| format!("{n}.bin")).collect();
    for entry in std::fs::read_dir(golden_dir()).unwrap() {
        let name = entry.unwrap().file_name().into_string().unwrap();
        assert!(known.contains(&name), "stray golden file {name}");
    }
}
