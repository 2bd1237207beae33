use std::path::Path;
use std::process::{Command, Output};

use rnn_asr::container::read_model;

fn decode_cmd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_asr-decode")).args(args).env("RUST_LOG", "error").output().unwrap()
}

fn quantize_cmd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_asr-quantize")).args(args).env("RUST_LOG", "error").output().unwrap()
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

struct Toy {
    _dir: tempfile::TempDir,
    am: String,
    lm: String,
    arpa: String,
    feats: String,
    root: std::path::PathBuf,
}

fn toy() -> Toy {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let t = Toy {
        am: s(&root.join("am.q")),
        lm: s(&root.join("lm.q")),
        arpa: s(&root.join("w.arpa")),
        feats: s(&root.join("x.feat")),
        root,
        _dir: dir,
    };
    let out = decode_cmd(&["--gen-toy", "tiny", "--am", &t.am, "--lm", &t.lm, "--arpa", &t.arpa, "--features", &t.feats]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    t
}

#[test]
fn decode_succeeds_and_writes_report() {
    let t = toy();
    let report = s(&t.root.join("r.txt"));
    let out = decode_cmd(&["--am", &t.am, "--lm", &t.lm, "--arpa", &t.arpa, "--features", &t.feats, "--report", &report]);
    assert_eq!(out.status.code(), Some(0));
    let text = std::fs::read_to_string(&report).unwrap();
    let r = rnn_asr::report::Report::parse(&text).unwrap();
    assert_eq!(r.get("mode"), Some("hwsim"));
    assert_eq!(r.get("transcript").map(str::trim), Some(String::from_utf8_lossy(&out.stdout).trim()));
}

#[test]
fn acoustic_model_alone_decodes() {
    let t = toy();
    let out = decode_cmd(&["--am", &t.am, "--features", &t.feats, "--mode", "fixed"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn input_errors_exit_with_2() {
    let t = toy();
    let missing = decode_cmd(&["--am", "/nonexistent/am", "--features", &t.feats]);
    assert_eq!(missing.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&missing.stderr);
    assert_eq!(stderr.matches("No such file").count(), 1, "{stderr}");

    assert_eq!(decode_cmd(&["--am", &t.am, "--features", &t.feats, "--mode", "turbo"]).status.code(), Some(2));

    let garbage = s(&t.root.join("garbage"));
    std::fs::write(&garbage, b"not a model").unwrap();
    assert_eq!(decode_cmd(&["--am", &garbage, "--features", &t.feats]).status.code(), Some(2));

    // the character model in the acoustic slot has the wrong alphabet width
    assert_eq!(decode_cmd(&["--am", &t.lm, "--features", &t.feats]).status.code(), Some(2));

    let short = s(&t.root.join("short.feat"));
    rnn_asr::frontend::write_feature_file(Path::new(&short), &[vec![0.0; 7]]).unwrap();
    assert_eq!(decode_cmd(&["--am", &t.am, "--features", &short]).status.code(), Some(2));
}

#[test]
fn quantize_round_trip() {
    let t = toy();
    let out_path = s(&t.root.join("am4.q"));
    let out = quantize_cmd(&["--input", &t.am, "--output", &out_path, "--weight-bits", "4"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let m = read_model(Path::new(&out_path)).unwrap();
    let q = m.network.quantized.as_ref().unwrap();
    assert_eq!(q.layers[0].wx[0].scheme.bits(), 4);
    assert!(m.float_shadow);

    let stripped = s(&t.root.join("am-noshadow.q"));
    let out = quantize_cmd(&["--input", &t.am, "--output", &stripped, "--no-float-shadow"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(std::fs::metadata(&stripped).unwrap().len() < std::fs::metadata(&out_path).unwrap().len());
    // without shadows the levels stand in for the float weights; requantizing keeps them
    let again = s(&t.root.join("again.q"));
    assert_eq!(quantize_cmd(&["--input", &stripped, "--output", &again, "--no-float-shadow"]).status.code(), Some(0));
    let (a, b) = (read_model(Path::new(&stripped)).unwrap(), read_model(Path::new(&again)).unwrap());
    assert_eq!(a.network.quantized, b.network.quantized);
}
