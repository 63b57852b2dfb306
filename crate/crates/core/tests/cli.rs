use std::fs;
use std::path::Path;

use crossframe::cli::{run, EXIT_INVALID, EXIT_NUMERIC, EXIT_OK};
use crossframe::config::Config;
use proptest::prelude::*;

const TINY: &[&str] = &[
    "model.T=2",
    "model.H=8",
    "model.W=8",
    "model.P=4",
    "model.d=8",
    "model.heads=2",
    "model.text_depth=1",
    "train.epochs=2",
    "train.batch=4",
];

fn cli(cmd: &str, out: &Path, extra: &[String]) -> i32 {
    let mut args = vec![
        "crossframe".to_string(),
        cmd.to_string(),
        "--out".into(),
        out.display().to_string(),
    ];
    args.extend(TINY.iter().map(|s| s.to_string()));
    args.extend(extra.iter().cloned());
    run(args)
}

fn synth(dir: &Path, name: &str, ids: &str, clips: usize, seed: u64) -> String {
    let out = dir.join(name);
    let code = cli(
        "synth",
        &out,
        &[
            format!("synth.class_ids={ids}"),
            format!("synth.clips={clips}"),
            format!("synth.seed={seed}"),
        ],
    );
    assert_eq!(code, EXIT_OK);
    out.join("manifest.csv").display().to_string()
}

#[test]
fn same_seed_gives_identical_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), "data", "0,1", 3, 1);
    let args = [
        format!("data.manifest={manifest}"),
        format!("data.eval_manifest={manifest}"),
    ];
    assert_eq!(cli("train", &dir.path().join("a"), &args), EXIT_OK);
    assert_eq!(cli("train", &dir.path().join("b"), &args), EXIT_OK);
    for file in ["metrics.csv", "steps.csv", "eval.csv", "checkpoint.xclp"] {
        let a = fs::read(dir.path().join("a").join(file)).unwrap();
        assert_eq!(
            a,
            fs::read(dir.path().join("b").join(file)).unwrap(),
            "{file}"
        );
    }
    let metrics = fs::read_to_string(dir.path().join("a/metrics.csv")).unwrap();
    assert!(metrics.starts_with("epoch,loss,top1\n"));
    assert_eq!(metrics.lines().count(), 3);

    let ckpt = dir.path().join("a/checkpoint.xclp").display().to_string();
    let code = run([
        "crossframe",
        "eval",
        "--checkpoint",
        &ckpt,
        "--out",
        &dir.path().join("e").display().to_string(),
        &args[1],
    ]);
    assert_eq!(code, EXIT_OK);
    assert_eq!(
        fs::read(dir.path().join("e/eval.csv")).unwrap(),
        fs::read(dir.path().join("a/eval.csv")).unwrap()
    );
}

#[test]
fn failures_leave_no_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let missing = format!("data.manifest={}", dir.path().join("nope.csv").display());
    assert_eq!(
        cli("train", &out, std::slice::from_ref(&missing)),
        EXIT_INVALID
    );
    assert_eq!(cli("train", &out, &[]), EXIT_INVALID);
    assert_eq!(cli("train", &out, &["model.bogus=1".into()]), EXIT_INVALID);
    assert_eq!(cli("train", &out, &["train.lr=-1".into()]), EXIT_INVALID);
    assert_eq!(cli("fewshot", &out, &[missing]), EXIT_INVALID);
    assert_eq!(run(["crossframe", "nonsense"]), EXIT_INVALID);
    assert!(!out.exists());

    // overlapping train and eval labels are refused for zero-shot
    let m = synth(dir.path(), "d", "0,1", 2, 0);
    let args = [
        format!("data.manifest={m}"),
        format!("data.eval_manifest={m}"),
    ];
    assert_eq!(cli("zeroshot", &out, &args), EXIT_INVALID);
    assert!(!out.exists());
}

#[test]
fn fewshot_accepts_listed_shot_counts() {
    let dir = tempfile::tempdir().unwrap();
    let train = synth(dir.path(), "train", "0,1", 16, 0);
    let test = synth(dir.path(), "test", "0,1", 2, 9);
    for k in [2, 4, 8, 16] {
        let mut c = Config::default();
        c.apply_overrides(&[format!("fewshot.shots={k}")]).unwrap();
        assert_eq!(c.shots, k);
    }
    let out = dir.path().join("k2");
    let args = [
        format!("data.manifest={train}"),
        format!("data.eval_manifest={test}"),
        "fewshot.shots=2".into(),
    ];
    assert_eq!(cli("fewshot", &out, &args), EXIT_OK);
    assert!(out.join("metrics.csv").exists() && out.join("eval.csv").exists());
    let too_many = [args[0].clone(), args[1].clone(), "fewshot.shots=17".into()];
    assert_eq!(
        cli("fewshot", &dir.path().join("k17"), &too_many),
        EXIT_INVALID
    );
}

#[test]
fn zeroshot_protocol_runs_on_disjoint_labels() {
    let dir = tempfile::tempdir().unwrap();
    let train = synth(dir.path(), "train", "0,1", 2, 0);
    let eval = synth(dir.path(), "eval", "2,3,4", 2, 5);
    let out = dir.path().join("zs");
    let args = [
        format!("data.manifest={train}"),
        format!("data.eval_manifest={eval}"),
        "zeroshot.pool=3".into(),
        "zeroshot.subset=2".into(),
        "zeroshot.repeats=3".into(),
    ];
    assert_eq!(cli("zeroshot", &out, &args), EXIT_OK);
    let csv = fs::read_to_string(out.join("zeroshot.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(fs::read_to_string(out.join("zeroshot.txt"))
        .unwrap()
        .contains("over 3 repeats"));

    let mut big = Config::default();
    big.apply_overrides(&[
        "zeroshot.pool=220",
        "zeroshot.subset=160",
        "zeroshot.repeats=3",
    ])
    .unwrap();
    assert_eq!(
        (big.zeroshot.pool, big.zeroshot.subset, big.zeroshot.repeats),
        (220, 160, 3)
    );
}

#[test]
fn flops_table_has_every_layout() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("f");
    assert_eq!(
        run(["crossframe", "flops", "--out", &out.display().to_string()]),
        EXIT_OK
    );
    let text = fs::read_to_string(out.join("flops.csv")).unwrap();
    let rows: Vec<Vec<&str>> = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').collect())
        .collect();
    assert_eq!(rows.len(), 6 * 4);
    let cell = |kind: &str, t: &str, col: usize| {
        rows.iter().find(|r| r[0] == kind && r[1] == t).unwrap()[col]
    };
    let analytic = |kind, t| cell(kind, t, 5).parse::<u64>().unwrap();
    assert!(analytic("cross_frame", "1") >= analytic("spatial", "1"));
    assert_eq!(
        (
            cell("joint", "8", 2),
            cell("joint", "8", 3),
            cell("joint", "8", 4)
        ),
        ("49", "768", "12")
    );
    for kind in ["spatial", "joint", "cross_frame"] {
        assert_eq!(
            cell(kind, "8", 6).parse::<u64>().unwrap(),
            analytic(kind, "8")
        );
    }
}

#[test]
fn gradcheck_reports_each_group_once() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("g");
    assert_eq!(
        run([
            "crossframe",
            "gradcheck",
            "--out",
            &out.display().to_string()
        ]),
        EXIT_OK
    );
    let table = fs::read_to_string(out.join("gradcheck.csv")).unwrap();
    let groups: Vec<&str> = table
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    let unique: std::collections::BTreeSet<_> = groups.iter().collect();
    assert_eq!(unique.len(), groups.len());
    for g in [
        "text.proj",
        "logit_scale",
        "prompt.alpha",
        "mit.pos",
        "visual.embed.proj",
    ] {
        assert!(groups.iter().any(|x| x.starts_with(g)), "{g} missing");
    }
    assert_eq!(run(["crossframe", "gradcheck", "--corrupt"]), EXIT_NUMERIC);
    assert_eq!(
        run(["crossframe", "gradcheck", "gradcheck.max_params=10"]),
        EXIT_INVALID
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn config_text_round_trips(d in 1usize..9, epochs in 1usize..50, lr in 1e-6f64..1.0, views in 1usize..5, per_dim in any::<bool>()) {
        let mut c = Config::default();
        c.apply_overrides(&[
            format!("model.d={}", 8 * d),
            format!("train.epochs={epochs}"),
            format!("train.lr={lr}"),
            format!("eval.views={views}"),
            format!("prompt.per_dim_alpha={per_dim}"),
        ]).unwrap();
        let parsed = Config::parse(&c.to_text()).unwrap();
        prop_assert_eq!(parsed.to_text(), c.to_text());
        prop_assert_eq!(parsed, c);
    }
}
