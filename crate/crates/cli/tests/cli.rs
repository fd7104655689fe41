use std::fs;
use std::path::Path;
use std::process::Command;

use cbnorm_cli::{parse_config, resolve_outdir, run_campaign, with_threads, EXIT_STRICT, EXIT_USAGE};

const MINIMAL: &str = r#"
seed = 7
outdir = "out"

[[run]]
experiment = "ymn"
params = { m = 2, n = 64, trials = 3 }
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cbnorm"))
}

fn body(path: &Path) -> String {
    let text = fs::read_to_string(path).unwrap();
    text.lines().skip(1).collect::<Vec<_>>().join("\n")
}

#[test]
fn minimal_config_accepted() {
    let cfg = parse_config(MINIMAL).unwrap();
    assert_eq!(cfg.seed, 7);
    assert_eq!(cfg.runs.len(), 1);
    assert_eq!(cfg.outdir.as_deref(), Some(Path::new("out")));
}

#[test]
fn unknown_experiment_named() {
    let errs = parse_config("seed = 1\n[[run]]\nexperiment = \"lemma99\"\n").unwrap_err();
    assert_eq!(errs.len(), 1);
    assert!(errs[0].message.contains("lemma99"));
    assert_eq!(errs[0].line, 3);
}

#[test]
fn every_error_reported_with_lines() {
    let text = "seed = 1\ncolour = \"red\"\n[[run]]\nexperiment = \"ymn\"\nparams = { m = \"two\" }\n";
    let errs = parse_config(text).unwrap_err();
    let lines: Vec<usize> = errs.iter().map(|e| e.line).collect();
    assert_eq!(lines, vec![2, 5], "{errs:?}");
    assert!(errs[0].message.contains("colour"));
    assert!(errs[1].message.contains('m'));
}

#[test]
fn syntax_errors_carry_lines() {
    let errs = parse_config("seed = 1\n[[run]\nexperiment = \"ymn\"\n").unwrap_err();
    assert!(errs.iter().any(|e| e.line == 2), "{errs:?}");
}

#[test]
fn scale_and_band_validation() {
    let text = r#"
seed = 1
[[run]]
experiment = "ymn"
scale = [2, 4]
[run.bands.nonsense]
min = 1.0
[run.bands.ratio]
min = 3.0
max = 2.0
"#;
    let errs = parse_config(text).unwrap_err();
    let msgs: Vec<&str> = errs.iter().map(|e| e.message.as_str()).collect();
    assert!(msgs.iter().any(|m| m.contains("at least 3")), "{msgs:?}");
    assert!(msgs.iter().any(|m| m.contains("nonsense")), "{msgs:?}");
    assert!(msgs.iter().any(|m| m.contains("min > max")), "{msgs:?}");
    assert!(msgs.iter().any(|m| m.contains("requires `statistic`")), "{msgs:?}");
}

#[test]
fn outdir_precedence() {
    let cfg = parse_config(MINIMAL).unwrap();
    let flag = Path::new("flag");
    assert_eq!(resolve_outdir(Some(flag), &cfg, Some("env")), flag);
    assert_eq!(resolve_outdir(None, &cfg, Some("env")), Path::new("out"));
    let mut bare = cfg.clone();
    bare.outdir = None;
    assert_eq!(resolve_outdir(None, &bare, Some("env")), Path::new("env"));
    assert_eq!(resolve_outdir(None, &bare, None), Path::new(cbnorm_cli::DEFAULT_OUTDIR));
}

#[test]
fn campaign_is_deterministic_across_threads() {
    let cfg = parse_config(MINIMAL).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    with_threads(Some(1), || run_campaign(&cfg, &a)).unwrap().unwrap();
    with_threads(Some(3), || run_campaign(&cfg, &b)).unwrap().unwrap();
    for f in ["records.csv", "records.jsonl", "summary.txt", "metadata.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_eq!(fs::read_to_string(a.join("campaign.status")).unwrap(), "complete\n");
}

#[test]
fn plot_rows_match_schedule() {
    let text = r#"
seed = 3
[[run]]
experiment = "ymn"
params = { n = 32, trials = 2 }
scale = [2, 3, 4, 5]
statistic = "norm"
"#;
    let cfg = parse_config(text).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let out = run_campaign(&cfg, dir.path()).unwrap();
    let plot = out.runs[0].plot_file.clone().unwrap();
    assert_eq!(plot.file_name().unwrap(), "scaling_ymn_norm.dat");
    let rows: Vec<String> = fs::read_to_string(plot)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(str::to_string)
        .collect();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.split_whitespace().count() == 2));
}

#[test]
fn budget_violation_marks_failure() {
    let text = format!("{MINIMAL}\n[budgets]\nmax_trials = 2\n");
    let cfg = parse_config(&text).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let err = run_campaign(&cfg, dir.path()).unwrap_err();
    assert!(err.to_string().contains("budget"));
    let status = fs::read_to_string(dir.path().join("campaign.status")).unwrap();
    assert!(status.starts_with("failed"));
    assert!(!dir.path().join("records.csv").exists());
}

#[test]
fn binary_runs_and_is_byte_stable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, MINIMAL).unwrap();
    let run = |sub: &str, threads: &str| {
        let st = bin()
            .args(["run", cfg.to_str().unwrap(), "--outdir", dir.path().join(sub).to_str().unwrap(), "--threads", threads])
            .output()
            .unwrap();
        assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    };
    run("x", "1");
    run("y", "2");
    assert_eq!(body(&dir.path().join("x/records.csv")), body(&dir.path().join("y/records.csv")));
}

#[test]
fn env_outdir_used_and_flag_wins() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, MINIMAL.replace("outdir = \"out\"\n", "")).unwrap();
    let env_dir = dir.path().join("from_env");
    let st = bin().args(["run", cfg.to_str().unwrap()]).env("CBNORM_OUTDIR", &env_dir).output().unwrap();
    assert!(st.status.success());
    assert!(env_dir.join("records.csv").exists());
    let flag_dir = dir.path().join("from_flag");
    let st = bin()
        .args(["run", cfg.to_str().unwrap(), "--outdir", flag_dir.to_str().unwrap()])
        .env("CBNORM_OUTDIR", &env_dir)
        .output()
        .unwrap();
    assert!(st.status.success());
    assert!(flag_dir.join("records.csv").exists());
}

#[test]
fn strict_gates_on_impossible_band() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    let text = format!("{MINIMAL}[run.bands.norm]\nmin = 1e9\npass_rate = 1.0\n");
    fs::write(&cfg, text).unwrap();
    let out = dir.path().join("o");
    let lax = bin().args(["run", cfg.to_str().unwrap(), "--outdir", out.to_str().unwrap()]).output().unwrap();
    assert_eq!(lax.status.code(), Some(0));
    let strict = bin()
        .args(["run", cfg.to_str().unwrap(), "--outdir", out.to_str().unwrap(), "--strict"])
        .output()
        .unwrap();
    assert_eq!(strict.status.code(), Some(EXIT_STRICT));
}

#[test]
fn bad_config_exits_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "seed = -1\n[[run]]\nexperiment = \"nope\"\n").unwrap();
    let out = bin().args(["run", cfg.to_str().unwrap()]).output().unwrap();
    assert_eq!(out.status.code(), Some(EXIT_USAGE));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("line 1") && err.contains("line 3") && err.contains("nope"), "{err}");
    assert_eq!(bin().arg("frobnicate").output().unwrap().status.code(), Some(EXIT_USAGE));
}

#[test]
fn describe_and_fit_subcommands() {
    let out = bin().arg("describe").output().unwrap();
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("sublemma28") && text.contains("theorem29"));

    let dir = tempfile::tempdir().unwrap();
    let cfg = parse_config("seed = 2\n[[run]]\nexperiment = \"ymn\"\nparams = { n = 32, trials = 2 }\nscale = [2, 3, 4]\nstatistic = \"norm\"\n").unwrap();
    let outcome = run_campaign(&cfg, dir.path()).unwrap();
    let csv = dir.path().join("records.csv");
    let out = bin().args(["fit", csv.to_str().unwrap(), "ymn", "norm"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let slope: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("slope "))
        .and_then(|l| l.split_whitespace().next())
        .unwrap()
        .parse()
        .unwrap();
    assert!((slope - outcome.runs[0].fit.unwrap().slope).abs() < 1e-12);
    let bad = bin().args(["fit", csv.to_str().unwrap(), "ymn", "nothing"]).output().unwrap();
    assert_eq!(bad.status.code(), Some(cbnorm_cli::EXIT_RUNTIME));
}
