mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use bnne_cli::{cmd_convert, cmd_cost, cmd_run, cmd_verify, parse_bits, ConvertArgs, CostArgs, RunArgs, VerifyArgs};
use bnne_core::costmodel::CostReport;
use bnne_core::format::read_model;
use bnne_core::graph::{count_macs, ExecutionTrace};
use common::{fixtures, CORRUPT_LAYER};

fn bnne(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bnne"))
        .args(args)
        .output()
        .expect("spawn bnne")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn run_args(model: &Path, input: &Path, output: &Path, threads: Option<usize>) -> RunArgs {
    RunArgs {
        model: model.into(),
        input: vec![path_str(input).into()],
        output: vec![path_str(output).into()],
        trace: None,
        threads,
    }
}

#[test]
fn convert_reproduces_committed_container() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("toy.bnne");
    let outcome = cmd_convert(&ConvertArgs {
        graph: fixtures().join("toy_graph.json"),
        weights: fixtures().join("toy_weights.f32"),
        output: out.clone(),
    })
    .unwrap();
    assert!(outcome.passed);
    assert_eq!(fs::read(&out).unwrap(), fs::read(fixtures().join("toy.bnne")).unwrap());
    read_model(&fs::read(&out).unwrap()).unwrap().check_folding().unwrap();
}

#[test]
fn convert_rejects_truncated_blob() {
    let dir = tempfile::tempdir().unwrap();
    let blob = fs::read(fixtures().join("block_weights.f32")).unwrap();
    let short = dir.path().join("short.f32");
    fs::write(&short, &blob[..blob.len() - 4]).unwrap();
    let out = dir.path().join("m.bnne");
    let o = bnne(&[
        "convert",
        "--graph",
        path_str(&fixtures().join("block_graph.json")),
        "--weights",
        path_str(&short),
        "--output",
        path_str(&out),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("parameter blob"));
    assert!(!out.exists());
}

#[test]
fn convert_rejects_nan_weight() {
    let dir = tempfile::tempdir().unwrap();
    let mut blob = fs::read(fixtures().join("block_weights.f32")).unwrap();
    blob[8..12].copy_from_slice(&f32::NAN.to_le_bytes());
    let bad = dir.path().join("nan.f32");
    fs::write(&bad, &blob).unwrap();
    let err = cmd_convert(&ConvertArgs {
        graph: fixtures().join("block_graph.json"),
        weights: bad,
        output: dir.path().join("m.bnne"),
    })
    .unwrap_err();
    assert!(format!("{err:#}").contains("non-finite"), "{err:#}");
}

#[test]
fn identity_graph_copies_input_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("id.bnne");
    cmd_convert(&ConvertArgs {
        graph: fixtures().join("identity_graph.json"),
        weights: fixtures().join("identity_weights.f32"),
        output: model.clone(),
    })
    .unwrap();
    let input = dir.path().join("x.bnnt");
    let t = bnne_core::QuantTensor::new(bnne_core::Dims::new(4, 5, 5), 8, (0..100).map(|v| v * 2 + 7).collect()).unwrap();
    fs::write(&input, bnne_core::format::write_tensor(&bnne_core::format::RawTensor::Quant(t)).unwrap()).unwrap();
    let out = dir.path().join("y.bnnt");
    cmd_run(&run_args(&model, &input, &out, Some(1))).unwrap();
    assert_eq!(fs::read(&out).unwrap(), fs::read(&input).unwrap());
}

#[test]
fn toy_run_matches_golden_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let golden = fs::read(fixtures().join("toy_golden.bnnt")).unwrap();
    for threads in [1, 1, 4, 0] {
        let out = dir.path().join(format!("out{threads}.bnnt"));
        cmd_run(&run_args(&fixtures().join("toy.bnne"), &fixtures().join("toy_input.bnnt"), &out, Some(threads))).unwrap();
        assert!(fs::read(&out).unwrap() == golden, "{threads} worker(s) diverged from the golden output");
    }
}

#[test]
fn thread_env_var_is_honoured() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.json");
    let out = dir.path().join("out.bnnt");
    let o = Command::new(env!("CARGO_BIN_EXE_bnne"))
        .env("BNNE_THREADS", "3")
        .args([
            "run",
            "--model",
            path_str(&fixtures().join("toy.bnne")),
            "--input",
            path_str(&fixtures().join("toy_input.bnnt")),
            "--output",
            path_str(&out),
            "--trace",
            path_str(&trace),
        ])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let t: ExecutionTrace = serde_json::from_slice(&fs::read(&trace).unwrap()).unwrap();
    assert_eq!(t.threads, 3);
    let model = read_model(&fs::read(fixtures().join("toy.bnne")).unwrap()).unwrap();
    assert_eq!(t.total_macs, count_macs(model.graph()).total);
    assert_eq!(t.nodes.len(), model.graph().graph().nodes.len());
    assert_eq!(fs::read(&out).unwrap(), fs::read(fixtures().join("toy_golden.bnnt")).unwrap());
}

#[test]
fn run_rejects_damaged_container() {
    let dir = tempfile::tempdir().unwrap();
    let mut bytes = fs::read(fixtures().join("toy.bnne")).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 1;
    let model = dir.path().join("bad.bnne");
    fs::write(&model, bytes).unwrap();
    let o = bnne(&[
        "run",
        "--model",
        path_str(&model),
        "--input",
        path_str(&fixtures().join("toy_input.bnnt")),
        "--output",
        path_str(&dir.path().join("o.bnnt")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("checksum"));
}

#[test]
fn run_rejects_wrong_input_shape() {
    let dir = tempfile::tempdir().unwrap();
    let err = cmd_run(&run_args(
        &fixtures().join("toy.bnne"),
        &fixtures().join("toy_golden.bnnt"),
        &dir.path().join("o.bnnt"),
        Some(1),
    ))
    .unwrap_err();
    assert!(format!("{err:#}").contains("image"), "{err:#}");
}

#[test]
fn verify_zero_trials_passes() {
    let o = bnne(&["verify", "--builtin", "--trials", "0"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("0 trial(s)"));
}

#[test]
fn verify_builtin_campaign_passes() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("r.json");
    let outcome = cmd_verify(&VerifyArgs {
        model: None,
        builtin: true,
        trials: 52,
        seed: 7,
        report: Some(report.clone()),
    })
    .unwrap();
    assert!(outcome.passed, "{}", outcome.text);
    let json: serde_json::Value = serde_json::from_slice(&fs::read(report).unwrap()).unwrap();
    assert_eq!(json["trials"], 52);
    assert_eq!(json["mismatches"].as_array().unwrap().len(), 0);
}

#[test]
fn verify_model_passes_on_toy() {
    let o = bnne(&["verify", "--model", path_str(&fixtures().join("toy.bnne")), "--trials", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
}

#[test]
fn verify_names_layer_with_corrupted_bias() {
    let o = bnne(&["verify", "--model", path_str(&fixtures().join("corrupt_bias.bnne")), "--trials", "2"]);
    assert_eq!(o.status.code(), Some(1));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains(&format!("`{CORRUPT_LAYER}`")), "{text}");
    assert!(text.contains("channel 3"), "{text}");
}

#[test]
fn verify_requires_a_target() {
    assert_eq!(bnne(&["verify"]).status.code(), Some(2));
    assert_eq!(bnne(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn cost_sweep_has_one_row_per_width() {
    let o = bnne(&["cost", "--bits", "1..16", "--lanes", "1", "--json"]);
    assert_eq!(o.status.code(), Some(0));
    let r: CostReport = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r.rows.len(), 16);
    let row8 = &r.rows[7];
    assert!(row8.totals["proposed"] < row8.totals["selector"]);
    assert!(row8.totals["selector"] < row8.totals["xnor_modified"]);
    let text = String::from_utf8_lossy(&bnne(&["cost"]).stdout).to_string();
    assert!(text.contains("211K") && text.contains("52%"), "{text}");
}

#[test]
fn cost_of_model_lists_layer_macs() {
    let outcome = cmd_cost(&CostArgs {
        model: Some(fixtures().join("toy.bnne")),
        graph: None,
        lanes: 64,
        bits: "8".into(),
        ge_config: None,
        json: true,
    })
    .unwrap();
    let r: CostReport = serde_json::from_str(&outcome.text).unwrap();
    let model = read_model(&fs::read(fixtures().join("toy.bnne")).unwrap()).unwrap();
    let macs = count_macs(model.graph());
    assert_eq!(r.total_macs, Some(macs.total));
    let ids: Vec<_> = r.layers.iter().map(|l| (l.id.clone(), l.macs)).collect();
    let expected: Vec<_> = macs.layers.iter().map(|l| (l.id.clone(), l.macs)).collect();
    assert_eq!(ids, expected);
}

#[test]
fn cost_config_handling() {
    let o = bnne(&["cost", "--ge-config", path_str(&fixtures().join("ge_uniform.json")), "--json"]);
    assert_eq!(o.status.code(), Some(0));
    let r: CostReport = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r.config.full_adder, 1.0);
    assert_eq!(r.rows[0].totals["proposed"], 17.0);

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"archs": ["wallace"]}"#).unwrap();
    let o = bnne(&["cost", "--ge-config", path_str(&bad)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("wallace"));
}

#[test]
fn bit_sweep_syntax() {
    assert_eq!(parse_bits("8").unwrap(), vec![8]);
    assert_eq!(parse_bits("1..4").unwrap(), vec![1, 2, 3, 4]);
    assert_eq!(parse_bits("2..=3").unwrap(), vec![2, 3]);
    assert_eq!(parse_bits("1, 8,16").unwrap(), vec![1, 8, 16]);
    assert!(parse_bits("0..3").is_err());
    assert!(parse_bits("17").is_err());
    assert!(parse_bits("5..2").is_err());
}

#[test]
fn converted_block_verifies() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("block.bnne");
    let o = bnne(&[
        "convert",
        "--graph",
        path_str(&fixtures().join("block_graph.json")),
        "--weights",
        path_str(&fixtures().join("block_weights.f32")),
        "--output",
        path_str(&model),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let o = bnne(&["verify", "--model", path_str(&model), "--trials", "5", "--seed", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
}
