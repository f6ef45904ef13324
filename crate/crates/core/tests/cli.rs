use std::path::Path;
use std::process::{Command, Output};

use setpool::data::{gen_synthetic, load_embeddings};
use setpool::config::RunConfig;

fn setpool(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_setpool"))
        .args(args)
        .current_dir(dir)
        .env_remove("SETPOOL_SEED")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn metrics_rows(path: &Path) -> Vec<Vec<String>> {
    let text = std::fs::read_to_string(path).unwrap();
    text.lines().skip(1).map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn gen_is_deterministic_and_reloads() {
    let tmp = tempfile::tempdir().unwrap();
    for name in ["a.csv", "b.csv"] {
        let o = setpool(tmp.path(), &["gen", "--seed", "7", "--ids", "50", "--out", name]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let a = std::fs::read(tmp.path().join("a.csv")).unwrap();
    assert_eq!(a, std::fs::read(tmp.path().join("b.csv")).unwrap());
    let mut cfg = RunConfig::default();
    cfg.set("ids", "50").unwrap();
    let expect = gen_synthetic(&cfg.synthetic, 7).unwrap().without_quality();
    assert_eq!(load_embeddings(&tmp.path().join("a.csv")).unwrap(), expect);
}

#[test]
fn zero_dim_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = setpool(tmp.path(), &["gen", "--dim", "0", "--out", "x.csv"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("dim"));
    let o = setpool(tmp.path(), &["train", "--set", "bogus_key=1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bogus_key"));
}

#[test]
fn seed_falls_back_to_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |env: Option<&str>, args: &[&str], out: &str| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_setpool"));
        c.current_dir(tmp.path()).env_remove("SETPOOL_SEED");
        if let Some(s) = env {
            c.env("SETPOOL_SEED", s);
        }
        assert!(c.args(args).args(["--out", out]).output().unwrap().status.success());
        std::fs::read(tmp.path().join(out)).unwrap()
    };
    assert_eq!(run(Some("7"), &["gen"], "e.csv"), run(None, &["gen", "--seed", "7"], "f.csv"));
    assert_ne!(run(Some("8"), &["gen"], "g.csv"), run(None, &["gen", "--seed", "7"], "h.csv"));
}

#[test]
fn on_policy_train_logs_every_episode() {
    let tmp = tempfile::tempdir().unwrap();
    let o = setpool(tmp.path(), &["train", "--mode", "on", "--episodes", "200", "--seed", "1", "--out", "r"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = metrics_rows(&tmp.path().join("r/metrics.csv"));
    assert_eq!(rows.len(), 200);
    let xent = |r: &[Vec<String>]| r.iter().map(|r| r[3].parse::<f64>().unwrap()).sum::<f64>() / r.len() as f64;
    assert!(xent(&rows[180..]) < xent(&rows[..20]));
    let first = std::fs::read(tmp.path().join("r/metrics.csv")).unwrap();
    let o = setpool(tmp.path(), &["train", "--mode", "on", "--episodes", "200", "--seed", "1", "--out", "r"]);
    assert!(o.status.success());
    assert_eq!(first, std::fs::read(tmp.path().join("r/metrics.csv")).unwrap());
    // The manifest is itself a loadable config.
    let text = std::fs::read_to_string(tmp.path().join("r/run.txt")).unwrap();
    let mut cfg = RunConfig::default();
    cfg.apply_text(&text).unwrap();
    assert_eq!(cfg.episodes, 200);
}

#[test]
fn off_policy_first_update_after_warmup() {
    let tmp = tempfile::tempdir().unwrap();
    let o = setpool(
        tmp.path(),
        &["train", "--mode", "off", "--episodes", "60", "--set", "warmup=32", "--out", "r"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = metrics_rows(&tmp.path().join("r/metrics.csv"));
    assert_eq!(rows[0][1], "33");
    assert_eq!(rows.len(), 60 - 32);
}

#[test]
fn untrained_checkpoint_matches_avepool() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(setpool(tmp.path(), &["train", "--episodes", "0", "--out", "r"]).status.success());
    for d in ["plain", "pgr"] {
        let a = setpool(tmp.path(), &["eval", "--checkpoint", "r/checkpoint", "--distance", d, "--out", "ea"]);
        let b = setpool(tmp.path(), &["eval", "--baseline", "avepool", "--distance", d, "--out", "eb"]);
        assert!(a.status.success() && b.status.success());
        assert_eq!(a.stdout, b.stdout);
        for f in ["metrics.json", "roc.csv", "cmc.csv", "open_set.csv"] {
            assert_eq!(
                std::fs::read(tmp.path().join("ea").join(f)).unwrap(),
                std::fs::read(tmp.path().join("eb").join(f)).unwrap()
            );
        }
    }
}

#[test]
fn pgr_equals_plain_on_all_frontal_data() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(setpool(tmp.path(), &["train", "--episodes", "50", "--profile-rate", "0", "--out", "r"]).status.success());
    let plain = setpool(tmp.path(), &["eval", "--checkpoint", "r/checkpoint", "--distance", "plain"]);
    let pgr = setpool(tmp.path(), &["eval", "--checkpoint", "r/checkpoint", "--distance", "pgr"]);
    assert!(plain.status.success() && pgr.status.success());
    assert_eq!(plain.stdout, pgr.stdout);
}

#[test]
fn dimension_mismatch_exits_4() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(setpool(tmp.path(), &["train", "--episodes", "0", "--out", "r"]).status.success());
    let o = setpool(tmp.path(), &["eval", "--checkpoint", "r/checkpoint", "--dim", "16"]);
    assert_eq!(o.status.code(), Some(4));
    std::fs::write(tmp.path().join("r/checkpoint/trunk.bin"), b"garbage").unwrap();
    let o = setpool(tmp.path(), &["eval", "--checkpoint", "r/checkpoint"]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn weights_table() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(setpool(tmp.path(), &["train", "--episodes", "100", "--out", "r"]).status.success());
    let o = setpool(tmp.path(), &["weights", "--checkpoint", "r/checkpoint", "--set-id", "id00003_s001"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    let w: Vec<f64> = text.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
    assert!(!w.is_empty());
    assert!(w.windows(2).all(|p| p[0] >= p[1]));
    let o = setpool(tmp.path(), &["weights", "--checkpoint", "r/checkpoint", "--set-id", "missing"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn singleton_set_weight_is_the_deterministic_action() {
    let tmp = tempfile::tempdir().unwrap();
    let args = ["--set", "set_size_min=1", "--set", "set_size_max=1"];
    let mut train = vec!["train", "--episodes", "40", "--out", "r"];
    train.extend(args);
    assert!(setpool(tmp.path(), &train).status.success());
    let mut w = vec!["weights", "--checkpoint", "r/checkpoint", "--set-id", "id00000_s000"];
    w.extend(args);
    let o = setpool(tmp.path(), &w);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().count(), 2);
    let weight: f64 = text.lines().nth(1).unwrap().rsplit(',').next().unwrap().parse().unwrap();

    let (model, _) = setpool::actor_critic::ActorCritic::load(&tmp.path().join("r/checkpoint")).unwrap();
    let mut cfg = RunConfig::default();
    cfg.apply_text(&std::fs::read_to_string(tmp.path().join("r/run.txt")).unwrap()).unwrap();
    let ds = gen_synthetic(&cfg.synthetic, cfg.seed).unwrap();
    let set = ds.find("id00000_s000").unwrap();
    let state = setpool::env::build_state(&set.features(), &[1.0], 0).unwrap();
    let (mean, _) = model.policy_forward(&state).unwrap();
    assert_eq!(weight, setpool::actor_critic::action_weight(mean));
}

#[test]
fn selfcheck_reports_and_negative_control() {
    let tmp = tempfile::tempdir().unwrap();
    let o = setpool(tmp.path(), &["selfcheck"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 7);
    assert!(text.lines().all(|l| l.contains("max_error=")));
    let o = setpool(tmp.path(), &["selfcheck", "--corrupt-backward"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8(o.stdout).unwrap().contains("FAIL grad_policy_surrogate"));
}
