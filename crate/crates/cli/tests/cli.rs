use std::path::Path;
use std::process::{Command, Output};

fn goalcc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_goalcc")).args(args).output().unwrap()
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

#[test]
fn help_lists_every_subcommand() {
    let o = goalcc(&["--help"]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    for c in ["train", "frontier", "tcr", "convergence", "loss-sweep", "fairness", "gradcheck"] {
        assert!(text.contains(c), "{c} missing from help");
    }
}

#[test]
fn missing_output_dir_fails_with_message() {
    let tmp = tempfile::tempdir().unwrap();
    let absent = tmp.path().join("nope");
    let o = goalcc(&["gradcheck", "--count", "1", "--out", absent.to_str().unwrap()]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("error:") && err.contains("nope"), "{err}");
}

#[test]
fn evaluation_needs_a_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let o = goalcc(&["frontier", "--out", tmp.path().to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("--checkpoint"));
    let o = goalcc(&["frontier", "--checkpoint", "/nonexistent.ckpt", "--out", tmp.path().to_str().unwrap()]);
    assert!(!o.status.success());
}

#[test]
fn bad_config_and_unknown_scenario_fail() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    std::fs::write(&cfg, "[tuner]\nk = 0\n").unwrap();
    let out = tmp.path().to_str().unwrap();
    assert!(!goalcc(&["gradcheck", "--config", cfg.to_str().unwrap(), "--out", out]).status.success());
    assert!(!goalcc(&["gradcheck", "--scenario", "mars", "--out", out]).status.success());
}

#[test]
fn train_then_evaluate_writes_csv_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("small.toml");
    std::fs::write(
        &cfg,
        "[train]\nscenario = \"lab\"\nlog_every = 50\n[train.agent]\nwarmup = 64\n\n\
         [lab]\nduration_ms = 4000\n[lab.link]\none_way_delay_ms = 20\nqueue_capacity = 30\n\
         trace = { kind = \"constant\", rate_mbps = 8.0 }\n",
    )
    .unwrap();
    let c = cfg.to_str().unwrap();
    let run = |sub: &str, extra: &[&str]| {
        let dir = tmp.path().join(sub);
        std::fs::create_dir_all(&dir).unwrap();
        let mut args = vec![sub, "--config", c, "--seed", "3", "--out", dir.to_str().unwrap()];
        args.extend_from_slice(extra);
        let o = goalcc(&args);
        assert!(o.status.success(), "{sub}: {}", String::from_utf8_lossy(&o.stderr));
        dir
    };
    let t = run("train", &["--iters", "300"]);
    let ckpt = t.join("agent.ckpt");
    assert!(ckpt.exists());
    assert!(read(&t.join("curve.csv")).starts_with("iter,critic_loss"));
    let m: serde_json::Value = serde_json::from_str(&read(&t.join("manifest.json"))).unwrap();
    assert_eq!(m["command"], "train");
    assert_eq!(m["seed"], 3);
    assert_eq!(m["config"]["train"]["iterations"], 300);
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
    assert!(m.get("timestamp").is_none());

    let ck = ckpt.to_str().unwrap();
    let f = run("frontier", &["--checkpoint", ck, "--scenario", "lab"]);
    assert_eq!(read(&f.join("frontier.csv")).lines().count(), 6);
    let s = run("tcr", &["--checkpoint", ck, "--scenario", "lab", "--count", "4"]);
    assert_eq!(read(&s.join("tcr_targets.csv")).lines().count(), 5);
    assert_eq!(read(&s.join("tcr_schemes.csv")).lines().count(), 4);
    let l = run("loss-sweep", &["--checkpoint", ck, "--scenario", "lab"]);
    assert_eq!(read(&l.join("loss_sweep.csv")).lines().count(), 8);
    let fa = run("fairness", &["--checkpoint", ck, "--scenario", "lab", "--duration-ms", "30000"]);
    assert!(fa.join("fairness_same_target.csv").exists() && fa.join("fairness_vs_aimd.csv").exists());
    let cv = run("convergence", &["--checkpoint", ck, "--scenario", "lab"]);
    assert!(read(&cv.join("convergence.csv")).lines().count() > 1);
    let m: serde_json::Value = serde_json::from_str(&read(&cv.join("manifest.json"))).unwrap();
    assert_eq!(m["checkpoint_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn same_seed_same_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let hash = |tag: &str, seed: &str| {
        let dir = tmp.path().join(tag);
        std::fs::create_dir_all(&dir).unwrap();
        let o = goalcc(&["train", "--scenario", "steady", "--iters", "1200", "--seed", seed, "--out", dir.to_str().unwrap()]);
        assert!(o.status.success());
        std::fs::read(dir.join("agent.ckpt")).unwrap()
    };
    let a = hash("a", "1");
    assert_eq!(a, hash("b", "1"));
    assert_ne!(a, hash("c", "2"));
}
