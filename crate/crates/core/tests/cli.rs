use serde_json::Value;
use starkit::cli::run;

fn call(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("starkit").chain(args.iter().copied());
    let code = run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn error_record(err: &str) -> Value {
    serde_json::from_str(err.trim()).expect("stderr is a JSON record")
}

#[test]
fn density_height_row() {
    let (code, out, _) = call(&["density", "--f", "height", "--eps", "0.25"]);
    assert_eq!(code, 0);
    assert_eq!(out, "epsilon,value,stderr,method\n0.25,0.25,0,analytic\n");
}

#[test]
fn shape_file_and_inline_agree() {
    let file = concat!(env!("CARGO_MANIFEST_DIR"), "/../../shapes/multiplicative.df");
    let a = call(&["density", "--f", file, "--eps", "0.1"]);
    let b = call(&["density", "--f", "gm(abs(1,0),abs(0,1))", "--eps", "0.1"]);
    let c = call(&[
        "density",
        "--f",
        r#"{"kind":"gm","children":[{"kind":"abs","a":1,"b":0},{"kind":"abs","a":0,"b":1}]}"#,
        "--eps",
        "0.1",
    ]);
    assert_eq!(a.0, 0);
    assert_eq!(a.1, b.1);
    assert_eq!(b.1, c.1, "{}", c.2);
}

#[test]
fn parse_error_exit_two() {
    let (code, out, err) = call(&["skeleton", "--f", "max(abs(1,0),"]);
    assert_eq!(code, 2);
    assert!(out.is_empty());
    let r = error_record(&err);
    assert_eq!(r["error"], "ParseError");
    assert_eq!(r["exit_code"], 2);
}

#[test]
fn usage_error_exit_two() {
    let (code, _, err) = call(&["density", "--f", "height"]);
    assert_eq!(code, 2);
    assert_eq!(error_record(&err)["error"], "UsageError");
}

#[test]
fn stochastic_commands_need_seed() {
    let (code, _, err) = call(&["tail", "--f", "height", "--psi", "pow:1.5", "--N", "16"]);
    assert_eq!(code, 2);
    assert!(error_record(&err)["message"].as_str().unwrap().contains("--seed"));
    let (code, _, _) = call(&["density", "--f", "height", "--eps", "0.1", "--method", "montecarlo"]);
    assert_eq!(code, 2);
}

#[test]
fn irrational_skeleton_density_is_rejected() {
    let (code, _, err) = call(&["density", "--f", "cusp", "--eps", "0.1"]);
    assert_eq!(code, 2);
    assert_eq!(error_record(&err)["error"], "IrrationalSkeleton");
}

#[test]
fn numeric_failure_exit_three() {
    let (code, _, err) = call(&["cf", "--alpha", "1.41421356", "--depth", "40"]);
    assert_eq!(code, 3, "{err}");
    assert_eq!(error_record(&err)["error"], "PrecisionExhausted");
}

#[test]
fn cf_of_surd_is_periodic() {
    let (code, out, _) = call(&["cf", "--alpha", "sqrt3", "--depth", "7"]);
    assert_eq!(code, 0);
    let v: Value = serde_json::from_str(&out).unwrap();
    let q: Vec<&str> = v["partial_quotients"].as_array().unwrap().iter().map(|x| x.as_str().unwrap()).collect();
    assert_eq!(q, ["1", "1", "2", "1", "2", "1", "2"]);
}

#[test]
fn precision_widens_decimal_input() {
    let narrow = call(&["cf", "--alpha", "1.4142135623730951", "--depth", "40", "--precision", "8"]);
    assert_eq!(narrow.0, 3);
}

#[test]
fn series_csv_header_and_last_row() {
    let (code, out, _) = call(&["series", "--f", "height", "--psi", "pow:2", "--Qmax", "100"]);
    assert_eq!(code, 0);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "Q,partial_sum");
    assert!(lines.last().unwrap().starts_with("100,"));
}

#[test]
fn threedist_three_gaps() {
    let (code, out, _) = call(&["threedist", "--alpha", "sqrt2", "--N", "50"]);
    assert_eq!(code, 0);
    let v: Value = serde_json::from_str(&out).unwrap();
    assert!(v["distinct_gap_values"].as_array().unwrap().len() <= 3);
    assert_eq!(v["gaps"].as_array().unwrap().len(), 50);
}

#[test]
fn out_dir_receives_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let (code, out, err) = call(&[
        "coverage",
        "--f",
        "cusp",
        "--eps",
        "0.2",
        "--N",
        "10,100",
        "--samples",
        "500",
        "--seed",
        "1",
        "--intervals",
        "--out",
        d,
    ]);
    assert_eq!(code, 0, "{err}");
    assert!(out.is_empty());
    let cov = std::fs::read_to_string(dir.path().join("coverage.csv")).unwrap();
    assert!(cov.starts_with("N,fraction_hit_once,fraction_hit_k,stderr\n"));
    let iv = std::fs::read_to_string(dir.path().join("intervals.csv")).unwrap();
    assert!(iv.starts_with("n,x_n,r_n,sigma_n,len_In,len_Itilde_n\n"));
    assert_eq!(iv.lines().count(), 101);
}

#[test]
fn svg_output() {
    let (code, out, _) =
        call(&["series", "--f", "multiplicative", "--psi", "powlog:1.5,1.2", "--Qmax", "64", "--format", "svg"]);
    assert_eq!(code, 0);
    assert!(out.starts_with("<svg"));
}

#[test]
fn philemma_matches_paper_ranges() {
    let (code, out, _) = call(&["philemma", "--N", "2"]);
    assert_eq!(code, 0);
    assert_eq!(out, "N,lhs,rhs,ratio\n2,1.125,0.5,2.25\n");
}

#[test]
fn seeded_runs_repeat() {
    let args = ["search", "--f", "multiplicative", "--q", "5", "--eps", "0.1", "--samples", "20000", "--seed", "4"];
    assert_eq!(call(&args), call(&args));
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_starkit");
    let ok = std::process::Command::new(bin).args(["density", "--f", "height", "--eps", "0.25"]).output().unwrap();
    assert_eq!(ok.status.code(), Some(0));
    let bad = std::process::Command::new(bin).args(["skeleton", "--f", "nope("]).output().unwrap();
    assert_eq!(bad.status.code(), Some(2));
    let threads = std::process::Command::new(bin)
        .args(["density", "--f", "height", "--eps", "0.25"])
        .env("STARKIT_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(threads.status.code(), Some(2));
}
