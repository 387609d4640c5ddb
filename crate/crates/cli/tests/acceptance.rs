//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs everything by default; `S2M_ACCEPTANCE=name,name` selects a subset.
//! Exits non-zero if any selected criterion fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use s2m_core::dataset::{
    generate_world, CoarseStructure, DomainMap, SyntheticConfig, SyntheticWorld,
};
use s2m_core::eval::{average_precision, RankedResult};
use s2m_core::pipelines::{
    run_experiment_on, EvaluationSettings, ExperimentConfig, ExperimentReport, InputModality,
    ModalityKind, NegativeScope, SplitSpec, SweepAxes, TrainingSettings,
};
use s2m_core::regnet::{AdamConfig, ConvConfig, ConvRegressor};
use s2m_core::RandomStream;

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const MINUTE: Duration = Duration::from_secs(60);

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

type Criterion = (&'static str, Duration, fn() -> Verdict);

const CRITERIA: [Criterion; 8] = [
    ("gradients", MINUTE, gradients),
    ("svm_oracle", Duration::from_secs(120), svm_oracle),
    ("ap_oracle", MINUTE, ap_oracle),
    ("shape_contract", MINUTE, shape_contract),
    ("binary_trend", Duration::from_secs(900), binary_trend),
    (
        "multiclass_trend",
        Duration::from_secs(900),
        multiclass_trend,
    ),
    ("coarse_to_fine", Duration::from_secs(900), coarse_to_fine),
    ("cli_determinism", Duration::from_secs(300), cli_determinism),
];

fn main() {
    let selected: Option<Vec<String>> = std::env::var("S2M_ACCEPTANCE")
        .ok()
        .map(|v| v.split(',').map(|s| s.trim().to_string()).collect());
    let mut failed = 0;
    for (name, budget, run) in CRITERIA {
        if selected
            .as_ref()
            .is_some_and(|s| !s.iter().any(|n| n == name))
        {
            continue;
        }
        let start = Instant::now();
        let v = run();
        let took = start.elapsed();
        let pass = v.pass && took <= budget;
        if !pass {
            failed += 1;
        }
        println!(
            "{} {name}: {} [{:.1}s, budget {}s]",
            if pass { "PASS" } else { "FAIL" },
            v.detail,
            took.as_secs_f64(),
            budget.as_secs()
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

fn gradients() -> Verdict {
    const TOL: f64 = 1e-4;
    let mut worst = (String::new(), 0.0f64);
    for (name, check) in common::grad::CHECKS {
        for p in 0..10 {
            for (block, err) in check(p) {
                if err > worst.1 {
                    worst = (format!("{name}/{block} at point {p}"), err);
                }
            }
        }
    }
    verdict(
        worst.1 < TOL,
        format!(
            "worst relative error {:.2e} ({}), tolerance {TOL:e}",
            worst.1, worst.0
        ),
    )
}

fn svm_oracle() -> Verdict {
    let mut worst: f64 = 0.0;
    for set in 0..10 {
        let (trained, oracle) = common::svm_oracle_case(set, 0.01);
        worst = worst.max((trained - oracle).abs() / oracle);
    }
    verdict(
        worst <= 0.05,
        format!(
            "worst primal gap to grid oracle {:.2}% (limit 5%)",
            100.0 * worst
        ),
    )
}

fn ap_oracle() -> Verdict {
    let mut s = RandomStream::new(11);
    let mut worst: f64 = 0.0;
    let mut invariance_breaks = 0;
    for _ in 0..1000 {
        let (scores, labels) = common::random_ranking(&mut s);
        let ap = |sc: Vec<f64>| {
            average_precision(&RankedResult::new(sc, labels.clone()).unwrap()).unwrap()
        };
        let got = ap(scores.clone());
        worst = worst.max((got - common::brute_force_ap(&scores, &labels)).abs());
        let a = 0.1 + 5.0 * s.uniform();
        let b = 10.0 * s.gaussian();
        let exp = ap(scores.iter().map(|x| x.exp()).collect());
        let affine = ap(scores.iter().map(|x| a * x + b).collect());
        if exp != got || affine != got {
            invariance_breaks += 1;
        }
    }
    verdict(
        worst <= 1e-12 && invariance_breaks == 0,
        format!(
            "max |AP - oracle| {worst:.1e} on 1000 sets, {invariance_breaks} invariance violations"
        ),
    )
}

fn shape_contract() -> Verdict {
    let mut s = RandomStream::new(4);
    let net = ConvRegressor::new(ConvConfig::default(), &mut s).unwrap();
    let mut bad = Vec::new();
    for d in [16, 32, 64] {
        for c in [2, 5, 10] {
            let x = common::gaussian(&mut s, d + 1, c, 1.0);
            let out = net.forward_eval(std::slice::from_ref(&x)).unwrap();
            if out[0].shape() != (d + 1, c) {
                bad.push(format!("{}x{} -> {:?}", d + 1, c, out[0].shape()));
            }
        }
    }
    verdict(
        bad.is_empty(),
        if bad.is_empty() {
            "9 of 9 shapes preserved".to_string()
        } else {
            format!("changed shapes: {}", bad.join(", "))
        },
    )
}

/// d = 32, 25 categories, banded affine sketch map, noise 0.3 x cluster std.
fn trend_world(seed: u64) -> SyntheticWorld {
    let mut cfg = SyntheticConfig::new(32, 25, 30, seed);
    cfg.domain_map = DomainMap::Toeplitz {
        taps: vec![0.0, 0.0, 1.0],
        offset: 0.5,
    };
    cfg.noise_std = 0.3 * cfg.cluster_std;
    generate_world(&cfg).unwrap()
}

fn trend_settings() -> TrainingSettings {
    TrainingSettings {
        adam: AdamConfig::with_lr(2e-5),
        negatives: 100,
        photo_negatives: 200,
        svm_epochs: 20,
        ..TrainingSettings::default()
    }
}

fn experiment(
    id: &str,
    modality: InputModality,
    split: SplitSpec,
    seed: u64,
    repetitions: usize,
    training: TrainingSettings,
) -> ExperimentConfig {
    ExperimentConfig {
        experiment_id: id.into(),
        manifest: PathBuf::new(),
        grouping: None,
        split,
        modality,
        seed,
        repetitions,
        training,
        evaluation: EvaluationSettings::default(),
        sweep: SweepAxes::default(),
    }
}

fn run(cfg: &ExperimentConfig, world: &SyntheticWorld) -> ExperimentReport {
    run_experiment_on(cfg, &world.manifest, world.grouping.as_ref()).unwrap()
}

fn tally(name: &str, wins: &[bool], needed: usize) -> (bool, String) {
    let n = wins.iter().filter(|w| **w).count();
    (n >= needed, format!("{name} {n}/{}", wins.len()))
}

fn binary_trend() -> Verdict {
    let split = SplitSpec::Random { train: 20, test: 5 };
    let training = TrainingSettings {
        batch_size: Some(64),
        epochs: 300,
        ensembles: 200,
        hidden: 128,
        leaky_slope: 0.5,
        ..trend_settings()
    };
    let (mut a, mut b, mut c) = (Vec::new(), Vec::new(), Vec::new());
    let mut lines = Vec::new();
    for seed in SEEDS {
        let world = trend_world(seed);
        let mut f2m = experiment(
            "f2m",
            InputModality::new(ModalityKind::FeatureToModelBinary, 1),
            split.clone(),
            seed,
            100,
            training.clone(),
        );
        f2m.evaluation.test_k = vec![1, 5];
        let r = run(&f2m, &world);
        let one = r.mean("f2m/test_k=1", "ap").unwrap();
        let nn = r.mean("f2m/test_k=1", "nn_ap").unwrap();
        let five = r.mean("f2m/test_k=5", "ap").unwrap();

        let m2m = experiment(
            "m2m",
            InputModality::new(ModalityKind::ModelToModelBinary, 1),
            split.clone(),
            seed,
            100,
            training.clone(),
        );
        let r = run(&m2m, &world);
        let regressed = r.mean("m2m", "ap").unwrap();
        let raw = r.mean("m2m", "raw_svm_ap").unwrap();

        a.push(one - nn >= 0.10);
        b.push(five >= one);
        c.push(regressed > raw);
        lines.push(format!(
            "seed {seed}: f2m1 {one:.3} nn {nn:.3} f2m5 {five:.3} m2m {regressed:.3} raw {raw:.3}"
        ));
    }
    let (pa, ta) = tally("(a) f2m1 >= nn + 0.10", &a, 4);
    let (pb, tb) = tally("(b) f2m5 >= f2m1", &b, 4);
    let (pc, tc) = tally("(c) m2m > raw svm", &c, 4);
    verdict(
        pa && pb && pc,
        format!("{ta}, {tb}, {tc}; {}", lines.join("; ")),
    )
}

fn multiclass_trend() -> Verdict {
    let training = TrainingSettings {
        epochs: 40,
        ensembles: 100,
        ..trend_settings()
    };
    let mut wins = Vec::new();
    let mut lines = Vec::new();
    for seed in SEEDS {
        let world = trend_world(seed);
        let cfg = experiment(
            "multi",
            InputModality::multiclass(ModalityKind::FeatureToModelMulticlass, 1, 5),
            SplitSpec::Random { train: 20, test: 5 },
            seed,
            100,
            training.clone(),
        );
        let r = run(&cfg, &world);
        let acc = r.mean("multi", "accuracy").unwrap();
        let nn = r.mean("multi", "nn_accuracy").unwrap();
        wins.push(acc - nn >= 0.15);
        lines.push(format!("seed {seed}: {acc:.3} vs nn {nn:.3}"));
    }
    let (pass, t) = tally("accuracy >= nn + 0.15", &wins, 4);
    verdict(pass, format!("{t}; {}", lines.join("; ")))
}

fn coarse_to_fine() -> Verdict {
    let training = TrainingSettings {
        epochs: 100,
        ensembles: 30,
        hidden: 128,
        leaky_slope: 0.8,
        adam: AdamConfig::with_lr(1e-3),
        negative_scope: NegativeScope::SameGroup,
        coarse_c: 0.01,
        ..trend_settings()
    };
    let split = SplitSpec::HeldOutGroups { groups: 3 };
    let mut wins = Vec::new();
    let mut lines = Vec::new();
    for seed in SEEDS {
        let mut cfg = SyntheticConfig::new(32, 120, 30, seed);
        cfg.domain_map = DomainMap::Toeplitz {
            taps: vec![0.0, 0.0, 1.0],
            offset: 0.5,
        };
        cfg.noise_std = 0.3;
        cfg.coarse = Some(CoarseStructure {
            groups: 40,
            fine_std: 0.35,
        });
        let world = generate_world(&cfg).unwrap();
        let mut means = BTreeMap::new();
        for (id, kind) in [
            ("fusion", ModalityKind::CoarseFusion),
            ("f2m", ModalityKind::FeatureToModelBinary),
        ] {
            let cfg = experiment(
                id,
                InputModality::new(kind, 1),
                split.clone(),
                seed,
                20,
                training.clone(),
            );
            let r = run(&cfg, &world);
            means.insert(id, r.mean(id, "ap_coarse_known").unwrap());
        }
        wins.push(means["fusion"] >= means["f2m"]);
        lines.push(format!(
            "seed {seed}: fusion {:.3} f2m {:.3}",
            means["fusion"], means["f2m"]
        ));
    }
    let (pass, t) = tally("fusion >= f2m (coarse known)", &wins, 3);
    verdict(pass, format!("{t}; {}", lines.join("; ")))
}

fn s2m(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_s2m"))
        .args(args)
        .output()
        .expect("spawn s2m")
}

fn s2m_ok(args: &[&str]) -> Result<(), String> {
    let out = s2m(args);
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "`s2m {}` failed: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr)
        ))
    }
}

/// Every file under `dir`, keyed by relative path.
fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().to_path_buf();
                out.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn pipeline(root: &Path) -> Result<(), String> {
    let p = |rel: &str| root.join(rel).to_string_lossy().into_owned();
    fs::create_dir_all(root).unwrap();
    fs::write(
        root.join("settings.json"),
        r#"{"photo_negatives": 100, "svm_epochs": 10, "probe_size": 16}"#,
    )
    .unwrap();
    let world = p("world");
    s2m_ok(&[
        "gen-synth",
        "--d",
        "16",
        "--categories",
        "12",
        "--samples",
        "20",
        "--taps",
        "0,0,1",
        "--offset",
        "0.5",
        "--groups",
        "4",
        "--seed",
        "7",
        "--out",
        &world,
    ])?;
    let train = |dir: &str, extra: &[&str]| -> Result<(), String> {
        let out = p(dir);
        let settings = p("settings.json");
        let mut args = vec![
            "train-regressor",
            "--manifest",
            &world,
            "--settings",
            &settings,
            "--split-train",
            "9",
            "--split-test",
            "3",
            "--epochs",
            "3",
            "--ensembles",
            "10",
            "--hidden",
            "32",
            "--negatives",
            "50",
            "--seed",
            "3",
            "--out",
            &out,
        ];
        args.extend_from_slice(extra);
        s2m_ok(&args)
    };
    train("binary", &["--modality", "feature_to_model_binary"])?;
    train(
        "multi",
        &[
            "--modality",
            "feature_to_model_multiclass",
            "--c",
            "3",
            "--lr",
            "1e-3",
        ],
    )?;
    let split: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(root.join("binary/split.json")).unwrap()).unwrap();
    let test: Vec<String> = split["test"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap().to_string())
        .collect();
    let test_list = test.join(",");
    let (ckpt_b, ckpt_m) = (p("binary/checkpoint.json"), p("multi/checkpoint.json"));
    let synth = p("synth");
    for cat in &test {
        let name = format!("{cat}.json");
        s2m_ok(&[
            "synthesize",
            "--checkpoint",
            &ckpt_b,
            "--manifest",
            &world,
            "--categories",
            cat,
            "--negatives",
            "50",
            "--svm-epochs",
            "10",
            "--seed",
            "5",
            "--name",
            &name,
            "--out",
            &synth,
        ])?;
    }
    s2m_ok(&[
        "synthesize",
        "--checkpoint",
        &ckpt_m,
        "--manifest",
        &world,
        "--categories",
        &test_list,
        "--seed",
        "5",
        "--name",
        "multi.json",
        "--out",
        &synth,
    ])?;
    s2m_ok(&[
        "train-svm",
        "--manifest",
        &world,
        "--domain",
        "sketch",
        "--categories",
        &test[0],
        "--k",
        "1",
        "--negatives",
        "50",
        "--seed",
        "2",
        "--out",
        &p("svm"),
    ])?;
    let mut models: Vec<String> = test
        .iter()
        .map(|c| {
            format!(
                "{c}={}",
                root.join("synth").join(format!("{c}.json")).display()
            )
        })
        .collect();
    models.push(p("synth/multi.json"));
    let mut eval = vec![
        "evaluate".to_string(),
        "--manifest".into(),
        world.clone(),
        "--photos".into(),
        test_list.clone(),
        "--out".into(),
        p("eval"),
    ];
    for m in &models {
        eval.push("--model".into());
        eval.push(m.clone());
    }
    s2m_ok(&eval.iter().map(String::as_str).collect::<Vec<_>>())?;

    fs::write(
        root.join("experiment.json"),
        serde_json::json!({
            "experiment_id": "det",
            "manifest": "world",
            "grouping": "world/grouping.json",
            "split": {"held_out_groups": {"groups": 1}},
            "modality": {"kind": "coarse_fusion", "k": 1},
            "seed": 9,
            "repetitions": 2,
            "training": {
                "epochs": 2, "ensembles": 5, "hidden": 16, "negatives": 40,
                "photo_negatives": 60, "svm_epochs": 5, "coarse_photos": 40,
                "probe_size": 8
            },
            "evaluation": {"subspace_dim": 8},
            "sweep": {"k": [1, 2]}
        })
        .to_string(),
    )
    .unwrap();
    s2m_ok(&[
        "experiment",
        "--config",
        &p("experiment.json"),
        "--out",
        &p("experiment"),
    ])?;
    for required in [
        "eval/summary.csv",
        "eval/results.csv",
        "experiment/summary.csv",
    ] {
        if !root.join(required).is_file() {
            return Err(format!("{required} was not written"));
        }
    }
    Ok(())
}

fn cli_determinism() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("run");
    if let Err(e) = pipeline(&root) {
        return verdict(false, e);
    }
    let first = snapshot(&root);
    fs::remove_dir_all(&root).unwrap();
    if let Err(e) = pipeline(&root) {
        return verdict(false, e);
    }
    let second = snapshot(&root);
    let differing: Vec<String> = first
        .keys()
        .chain(second.keys())
        .filter(|k| first.get(*k) != second.get(*k))
        .map(|k| k.display().to_string())
        .collect();

    // An invalid experiment config exits 2 and lists every problem.
    let bad = tmp.path().join("bad.json");
    fs::write(
        &bad,
        r#"{"experiment_id": "x", "split": {"random": {"train": 0, "test": 2}},
            "modality": {"kind": "feature_to_model_binary", "k": 0},
            "repetitions": 0, "bogus": 1}"#,
    )
    .unwrap();
    let out = s2m(&[
        "experiment",
        "--config",
        &bad.to_string_lossy(),
        "--out",
        &tmp.path().join("bad").to_string_lossy(),
    ]);
    let stderr = String::from_utf8_lossy(&out.stderr);
    let listed = ["manifest", "repetitions", "bogus", "k must", "split"]
        .iter()
        .all(|needle| stderr.contains(needle));
    let config_ok = out.status.code() == Some(2) && listed;
    let usage = s2m(&["gen-synth", "--no-such-flag"]);
    let usage_ok = usage.status.code() == Some(2);

    verdict(
        differing.is_empty() && config_ok && usage_ok,
        format!(
            "{} files compared, {} differ{}; invalid config exit {:?} (all problems listed: {listed}); unknown flag exit {:?}",
            first.len(),
            differing.len(),
            if differing.is_empty() {
                String::new()
            } else {
                format!(" ({})", differing.join(", "))
            },
            out.status.code(),
            usage.status.code()
        ),
    )
}
