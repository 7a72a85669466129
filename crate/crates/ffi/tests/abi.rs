use std::ffi::{CStr, CString};
use std::os::raw::c_char;
use std::path::Path;
use std::ptr;

use openavs_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

unsafe fn take(p: *mut c_char) -> String {
    let s = CStr::from_ptr(p).to_str().unwrap().to_string();
    openavs_string_free(p);
    s
}

unsafe fn last_error() -> String {
    let p = openavs_last_error();
    assert!(!p.is_null());
    CStr::from_ptr(p).to_string_lossy().into_owned()
}

#[test]
fn metrics_match_worked_example() {
    let pred = [1u8, 0, 0, 0];
    let gt = [1u8, 1, 0, 0];
    let (mut m, mut f) = (0.0, 0.0);
    unsafe {
        assert_eq!(openavs_miou(pred.as_ptr(), gt.as_ptr(), 2, 2, &mut m), OpenavsStatus::Ok);
        assert_eq!(openavs_fscore(pred.as_ptr(), gt.as_ptr(), 2, 2, 0.3, &mut f), OpenavsStatus::Ok);
        assert!(openavs_last_error().is_null());
    }
    assert!((m - 7.0 / 12.0).abs() < 1e-12);
    assert!((f - 0.8125).abs() < 1e-12);
}

#[test]
fn metric_argument_errors() {
    let bad = [2u8, 0, 0, 0];
    let gt = [1u8, 1, 0, 0];
    let mut v = 0.0;
    unsafe {
        assert_eq!(openavs_miou(bad.as_ptr(), gt.as_ptr(), 2, 2, &mut v), OpenavsStatus::InvalidArgument);
        assert!(last_error().contains("pred"));
        assert_eq!(openavs_miou(ptr::null(), gt.as_ptr(), 2, 2, &mut v), OpenavsStatus::NullPointer);
        assert_eq!(openavs_miou(gt.as_ptr(), gt.as_ptr(), 2, 2, ptr::null_mut()), OpenavsStatus::NullPointer);
        assert_eq!(
            openavs_fscore(gt.as_ptr(), gt.as_ptr(), 2, 2, 0.0, &mut v),
            OpenavsStatus::InvalidArgument
        );
    }
}

#[test]
fn binarize() {
    let labels = [0u32, 3, 7, 0, 1, u32::MAX];
    let mut out = [9u8; 6];
    unsafe {
        assert_eq!(openavs_binarize_semantic(labels.as_ptr(), 2, 3, out.as_mut_ptr()), OpenavsStatus::Ok);
    }
    assert_eq!(out, [0, 1, 1, 0, 1, 1]);
}

#[test]
fn system_prompts() {
    unsafe {
        let mut out = ptr::null_mut();
        assert_eq!(openavs_system_prompt(c("model").as_ptr(), &mut out), OpenavsStatus::Ok);
        assert_eq!(take(out), openavs_core::prompt::translator_system_prompt(openavs_core::prompt::TranslatorMode::ModelConsistency));
        assert_eq!(openavs_system_prompt(c("nope").as_ptr(), &mut out), OpenavsStatus::InvalidArgument);
        assert!(last_error().contains("prompt+frame"));
    }
}

#[test]
fn bank_lifecycle() {
    unsafe {
        let mut bank = ptr::null_mut();
        assert_eq!(openavs_bank_new(c("v").as_ptr(), &mut bank), OpenavsStatus::Ok);
        for (k, t) in ["wind", "water", "engine"].iter().enumerate() {
            let st = openavs_bank_insert(bank, 0, c("audio_describer").as_ptr(), c("pengi").as_ptr(), k, c(t).as_ptr());
            assert_eq!(st, OpenavsStatus::Ok);
        }
        let dup = openavs_bank_insert(bank, 0, c("audio_describer").as_ptr(), c("pengi").as_ptr(), 0, c("x").as_ptr());
        assert_eq!(dup, OpenavsStatus::InvalidArgument);
        let bad_kind = openavs_bank_insert(bank, 0, c("oracle").as_ptr(), c("m").as_ptr(), 0, c("x").as_ptr());
        assert_eq!(bad_kind, OpenavsStatus::InvalidArgument);
        assert_eq!(openavs_bank_len(bank), 3);

        let mut out = ptr::null_mut();
        assert_eq!(openavs_bank_frame_input(bank, 1, true, &mut out), OpenavsStatus::Ok);
        assert_eq!(
            take(out),
            "<frame0>\n <exp1>wind</exp1>\n <exp2>water</exp2>\n <exp3>engine</exp3>\n</frame0>"
        );
        assert_eq!(openavs_bank_frame_input(bank, 2, false, &mut out), OpenavsStatus::InvalidArgument);
        assert_eq!(openavs_bank_model_input(bank, 0, &mut out), OpenavsStatus::InvalidArgument);
        assert!(last_error().contains("visual"));

        assert_eq!(openavs_bank_to_json(bank, &mut out), OpenavsStatus::Ok);
        let json: serde_json::Value = serde_json::from_str(&take(out)).unwrap();
        assert_eq!(json["descriptions"].as_array().unwrap().len(), 3);
        openavs_bank_free(bank);
        openavs_bank_free(ptr::null_mut());
        assert_eq!(openavs_bank_len(ptr::null()), 0);
    }
}

#[test]
fn answers() {
    unsafe {
        let mut out = ptr::null_mut();
        let st = openavs_parse_answers(c("<answer>a woman</answer>").as_ptr(), 3, c("v").as_ptr(), &mut out);
        assert_eq!(st, OpenavsStatus::Ok);
        let json: serde_json::Value = serde_json::from_str(&take(out)).unwrap();
        assert_eq!(json["directives"].as_array().unwrap().len(), 3);
        assert_eq!(json["warnings"].as_array().unwrap().len(), 1);
        let st = openavs_parse_answers(c("no tags").as_ptr(), 3, c("v").as_ptr(), &mut out);
        assert_eq!(st, OpenavsStatus::NoAnswerTags);
        let st = openavs_parse_answers(c("<answer>x</answer>").as_ptr(), 0, c("v").as_ptr(), &mut out);
        assert_eq!(st, OpenavsStatus::InvalidArgument);
    }
}

#[test]
fn costs() {
    unsafe {
        let (mut pico, mut usd) = (0u64, ptr::null_mut());
        assert_eq!(openavs_cost(c("gpt-4o-mini").as_ptr(), 1000, 200, &mut pico, &mut usd), OpenavsStatus::Ok);
        assert_eq!(pico, 270_000_000);
        assert_eq!(take(usd), "0.000270");
        assert_eq!(openavs_cost(c("gpt-4-turbo").as_ptr(), 1000, 200, &mut pico, ptr::null_mut()), OpenavsStatus::Ok);
        assert_eq!(pico, 16_000_000_000);
        assert_eq!(openavs_cost(c("mystery").as_ptr(), 1, 1, &mut pico, ptr::null_mut()), OpenavsStatus::UnknownModel);
        assert_eq!(openavs_cost(c("gpt-4-turbo").as_ptr(), u64::MAX, u64::MAX, &mut pico, ptr::null_mut()), OpenavsStatus::Overflow);
    }
}

#[test]
fn invalid_utf8_is_reported() {
    let raw = [0xffu8, 0xfe, 0];
    let mut out = ptr::null_mut();
    unsafe {
        let st = openavs_system_prompt(raw.as_ptr() as *const c_char, &mut out);
        assert_eq!(st, OpenavsStatus::InvalidUtf8);
    }
}

#[test]
fn pipeline_run_over_fixture_manifest() {
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/clips/manifest.json");
    let dir = tempfile::tempdir().unwrap();
    unsafe {
        let mut p = ptr::null_mut();
        let st = openavs_pipeline_new(ptr::null(), c("standard").as_ptr(), c("mock://derived").as_ptr(), &mut p);
        assert_eq!(st, OpenavsStatus::Ok);
        let mut summary = ptr::null_mut();
        let st = openavs_pipeline_run(
            p,
            c(manifest.to_str().unwrap()).as_ptr(),
            c(dir.path().to_str().unwrap()).as_ptr(),
            2,
            &mut summary,
        );
        assert_eq!(st, OpenavsStatus::Ok);
        let json: serde_json::Value = serde_json::from_str(&take(summary)).unwrap();
        assert_eq!(json["failed"], 0);
        assert_eq!(json["mode"], "model");
        openavs_pipeline_free(p);

        let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/golden/standard/clip_a/00000.png");
        assert_eq!(
            std::fs::read(dir.path().join("clip_a/00000.png")).unwrap(),
            std::fs::read(golden).unwrap()
        );

        let st = openavs_pipeline_new(ptr::null(), c("huge").as_ptr(), ptr::null(), &mut p);
        assert_eq!(st, OpenavsStatus::InvalidArgument);
        let st = openavs_pipeline_run(ptr::null(), c("m").as_ptr(), c("o").as_ptr(), 0, ptr::null_mut());
        assert_eq!(st, OpenavsStatus::NullPointer);
    }
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/openavs.h")).unwrap();
    for name in [
        "openavs_last_error",
        "openavs_string_free",
        "openavs_miou",
        "openavs_fscore",
        "openavs_binarize_semantic",
        "openavs_system_prompt",
        "openavs_bank_new",
        "openavs_bank_free",
        "openavs_bank_insert",
        "openavs_bank_len",
        "openavs_bank_frame_input",
        "openavs_bank_model_input",
        "openavs_bank_to_json",
        "openavs_parse_answers",
        "openavs_cost",
        "openavs_pipeline_new",
        "openavs_pipeline_free",
        "openavs_pipeline_run",
        "typedef struct OpenavsBank OpenavsBank;",
        "OPENAVS_STATUS_NO_ANSWER_TAGS = 5",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}
