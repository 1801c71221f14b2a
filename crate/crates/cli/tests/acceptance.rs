//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any hard criterion fails.

#[path = "../../core/tests/common/oracle.rs"]
mod oracle;

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use gctf::harness::{
    auc, build_model, make_mask, make_synthetic, run_cell, CellSettings, LinkDataset, MaskPlan,
    ModelKind, Noise, Structure, SyntheticSpec,
};
use gctf::{
    build_coupled_cp, build_coupled_tucker, delta, fit_from, predict, Cost, DenseTensor, FactorSet,
    LinkDims, ModelSpec, UpdateConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Tolerances and thresholds.
const DELTA_REL_TOL: f64 = 1e-10;
const MONOTONE_SLACK: f64 = 1e-9;
const FIXED_POINT_REL_TOL: f64 = 1e-12;
const MIN_SEEDS: usize = 8;
const COUPLED_COLD_MIN: f64 = 0.7;
/// Per-seed bounds on the single-tensor AUC for users with no data.
const COLD_SINGLE_BAND: (f64, f64) = (0.25, 0.75);
/// Bounds on the mean of those AUCs over seeds.
const COLD_SINGLE_MEAN_BAND: (f64, f64) = (0.4, 0.6);

const LINK_DIMS: LinkDims = LinkDims {
    i: 20,
    j: 20,
    k: 5,
    m: 20,
    n: 10,
};

struct Outcome {
    pass: bool,
    soft: bool,
    skipped: bool,
    detail: String,
}

impl Outcome {
    fn hard(pass: bool, detail: String) -> Self {
        Outcome {
            pass,
            soft: false,
            skipped: false,
            detail,
        }
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

fn poisson_data(seed: u64) -> LinkDataset {
    make_synthetic(&SyntheticSpec::new(LINK_DIMS, 2, Noise::Poisson, seed))
        .expect("synthetic data")
        .0
}

fn delta_oracle() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut worst, mut pairs) = (0.0f64, 0);
    for _ in 0..50 {
        let (spec, factors) = oracle::random_model(&mut rng);
        for nu in 0..spec.observations.len() {
            let layout = spec.observations[nu].visible().to_vec();
            let n: usize = layout.iter().map(|i| i.cardinality).product();
            let arg = DenseTensor::new(
                layout,
                (0..n).map(|_| rng.random_range(0.05..2.0)).collect(),
            )
            .unwrap();
            for alpha in spec.coupled_factors(nu) {
                let got = delta(&spec, &factors, alpha, nu, &arg).unwrap();
                let want = oracle::brute_delta(&spec, &factors, alpha, nu, &arg);
                for (g, w) in got.values().iter().zip(&want) {
                    worst = worst.max(rel_err(*g, *w));
                }
                pairs += 1;
            }
        }
    }
    let elapsed = started.elapsed();
    Outcome::hard(
        worst <= DELTA_REL_TOL && elapsed < Duration::from_secs(10),
        format!("{pairs} factor/observation pairs, max rel err {worst:.2e}, {elapsed:.2?}"),
    )
}

fn monotonicity() -> Outcome {
    let started = Instant::now();
    let settings = CellSettings::default();
    let (mut fits, mut violations, mut worst) = (0, 0, 0.0f64);
    for seed in 0..5u64 {
        let data = poisson_data(seed);
        for fraction in [0.0, 0.5, 0.9] {
            let (mask, _) = make_mask(
                &MaskPlan::random_entries(fraction, 500 + seed),
                data.x1.indices(),
            )
            .unwrap();
            for model in [ModelKind::CoupledCp, ModelKind::CoupledTucker] {
                let spec = build_model(&data, model, mask.clone(), &settings).unwrap();
                for cost in [Cost::Euc, Cost::Kl] {
                    let cfg = UpdateConfig {
                        cost,
                        max_iters: 200,
                        rel_tol: 0.0,
                        seed: 40 + seed,
                        ..UpdateConfig::default()
                    };
                    let init = FactorSet::random(&spec, cfg.seed, 1.0).unwrap();
                    let fit = fit_from(&spec, init, &cfg).unwrap();
                    let mut prev = fit.initial_objective;
                    for &f in &fit.objective_trace {
                        if f > prev * (1.0 + MONOTONE_SLACK) {
                            violations += 1;
                            worst = worst.max((f - prev) / prev);
                        }
                        prev = f;
                    }
                    fits += 1;
                }
            }
        }
    }
    let elapsed = started.elapsed();
    Outcome::hard(
        violations == 0 && elapsed < Duration::from_secs(60),
        format!("{fits} fits x 200 sweeps, {violations} increases (worst rel {worst:.2e}), {elapsed:.2?}"),
    )
}

fn planted(mut spec: ModelSpec, seed: u64) -> (ModelSpec, FactorSet) {
    let truth = FactorSet::random(&spec, seed, 1.0).unwrap();
    for nu in 0..spec.observations.len() {
        spec.observations[nu].data = predict(&spec, &truth, nu).unwrap();
    }
    (spec, truth)
}

fn fixed_point_and_mask_invariance() -> Outcome {
    let dims = LinkDims::new(6, 5, 3, 4, 3);
    let mut worst = 0.0f64;
    for (n, spec) in [
        build_coupled_cp(dims, 2).unwrap(),
        build_coupled_tucker(dims, [2, 2, 2]).unwrap(),
    ]
    .into_iter()
    .enumerate()
    {
        let (spec, truth) = planted(spec, 70 + n as u64);
        for cost in [Cost::Euc, Cost::Kl, Cost::Is] {
            let cfg = UpdateConfig {
                cost,
                max_iters: 1,
                rel_tol: 0.0,
                ..UpdateConfig::default()
            };
            let after = fit_from(&spec, truth.clone(), &cfg).unwrap().factors;
            for ((_, a), (_, b)) in truth.iter().zip(after.iter()) {
                for (x, y) in a.values().iter().zip(b.values()) {
                    worst = worst.max(rel_err(*x, *y));
                }
            }
        }
    }

    let data = poisson_data(3);
    let (mask, heldout) = make_mask(&MaskPlan::random_entries(0.5, 8), data.x1.indices()).unwrap();
    let mut identical = true;
    for model in [ModelKind::CoupledCp, ModelKind::CoupledTucker] {
        let spec = build_model(&data, model, mask.clone(), &CellSettings::default()).unwrap();
        let mut perturbed = spec.clone();
        let x1 = &mut perturbed.observations[0].data;
        for &o in &heldout {
            let at = x1.multi_index(o).unwrap();
            let v = x1.get(&at).unwrap();
            x1.set(&at, v * 7.0 + 13.0).unwrap();
        }
        for cost in [Cost::Euc, Cost::Kl, Cost::Is] {
            let cfg = UpdateConfig {
                cost,
                max_iters: 1,
                rel_tol: 0.0,
                seed: 5,
                ..UpdateConfig::default()
            };
            let mut a = FactorSet::random(&spec, 5, 1.0).unwrap();
            let mut b = a.clone();
            for _ in 0..50 {
                a = fit_from(&spec, a, &cfg).unwrap().factors;
                b = fit_from(&perturbed, b, &cfg).unwrap().factors;
                identical &= a == b;
            }
        }
    }
    Outcome::hard(
        worst <= FIXED_POINT_REL_TOL && identical,
        format!(
            "fixed point max rel change {worst:.2e}; masked-entry perturbation {} over 50 sweeps",
            if identical {
                "bit-identical"
            } else {
                "CHANGED trajectories"
            }
        ),
    )
}

fn auc_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut mismatches = 0;
    for case in 0..100 {
        let n = rng.random_range(2..=200usize);
        let levels = rng.random_range(1..=10u32);
        let scores: Vec<f64> = (0..n)
            .map(|_| rng.random_range(0..levels) as f64 / 3.0)
            .collect();
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        labels[case % n] = true;
        labels[(case + 1) % n] = false;
        if auc(&scores, &labels).unwrap() != oracle::pair_auc(&scores, &labels) {
            mismatches += 1;
        }
    }
    Outcome::hard(
        mismatches == 0,
        format!("{mismatches}/100 vectors differ from pair counting"),
    )
}

/// Single CP and coupled CP AUC on the same data, mask and initialisation.
fn paired_aucs(data: &LinkDataset, plan: &MaskPlan, cost: Cost, engine_seed: u64) -> (f64, f64) {
    let settings = CellSettings::default();
    let single = run_cell(data, ModelKind::Cp, cost, plan, &settings, engine_seed, 0);
    let coupled = run_cell(
        data,
        ModelKind::CoupledCp,
        cost,
        plan,
        &settings,
        engine_seed,
        0,
    );
    (
        single.auc.expect("single auc"),
        coupled.auc.expect("coupled auc"),
    )
}

fn coupled_beats_single() -> Outcome {
    let started = Instant::now();
    let (mut single, mut coupled, mut wins) = (0.0, 0.0, 0);
    for seed in 0..10u64 {
        let data = poisson_data(seed);
        let (a, b) = paired_aucs(
            &data,
            &MaskPlan::random_entries(0.8, 1000 + seed),
            Cost::Kl,
            7 + seed,
        );
        single += a / 10.0;
        coupled += b / 10.0;
        wins += usize::from(b > a);
    }
    let elapsed = started.elapsed();
    Outcome::hard(
        coupled > single && wins >= MIN_SEEDS && elapsed < Duration::from_secs(300),
        format!("mean AUC cp {single:.4}, coupled cp {coupled:.4}; coupled ahead in {wins}/10 seeds, {elapsed:.2?}"),
    )
}

fn cold_start() -> Outcome {
    let started = Instant::now();
    let (mut ok, mut strict, mut single_mean, mut coupled_mean) = (0, 0, 0.0, 0.0);
    for seed in 0..10u64 {
        let mut spec = SyntheticSpec::new(LINK_DIMS, 2, Noise::Poisson, seed);
        spec.structure = Structure::Communities {
            contrast: 0.05,
            link_scale: 1.0,
            side_scale: 3.0,
        };
        let data = make_synthetic(&spec).unwrap().0;
        let (a, b) = paired_aucs(
            &data,
            &MaskPlan::missing_slices("i", 4, 1000 + seed),
            Cost::Kl,
            7 + seed,
        );
        single_mean += a / 10.0;
        coupled_mean += b / 10.0;
        ok += usize::from(
            (COLD_SINGLE_BAND.0..=COLD_SINGLE_BAND.1).contains(&a) && b > COUPLED_COLD_MIN,
        );
        strict += usize::from((0.4..=0.6).contains(&a) && b > COUPLED_COLD_MIN);
    }
    let elapsed = started.elapsed();
    let mean_ok = (COLD_SINGLE_MEAN_BAND.0..=COLD_SINGLE_MEAN_BAND.1).contains(&single_mean);
    Outcome::hard(
        ok >= MIN_SEEDS && mean_ok && elapsed < Duration::from_secs(300),
        format!(
            "{ok}/10 seeds with cp in [{}, {}] and coupled > {COUPLED_COLD_MIN} ({strict}/10 with cp in [0.4, 0.6]); \
             mean cp {single_mean:.4}, mean coupled {coupled_mean:.4}, {elapsed:.2?}",
            COLD_SINGLE_BAND.0, COLD_SINGLE_BAND.1
        ),
    )
}

fn kl_versus_euc() -> Outcome {
    let (mut euc, mut kl) = (0.0, 0.0);
    let settings = CellSettings::default();
    for seed in 0..10u64 {
        let data = poisson_data(seed);
        let plan = MaskPlan::random_entries(0.9, 1000 + seed);
        euc += run_cell(
            &data,
            ModelKind::CoupledCp,
            Cost::Euc,
            &plan,
            &settings,
            7 + seed,
            0,
        )
        .auc
        .unwrap()
            / 10.0;
        kl += run_cell(
            &data,
            ModelKind::CoupledCp,
            Cost::Kl,
            &plan,
            &settings,
            7 + seed,
            0,
        )
        .auc
        .unwrap()
            / 10.0;
    }
    Outcome {
        pass: kl >= euc,
        soft: true,
        skipped: false,
        detail: format!("coupled cp mean AUC kl {kl:.4}, euc {euc:.4}"),
    }
}

fn gctf() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gctf"))
}

fn sample_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data")
}

fn uclaf_scale() -> Outcome {
    let Some(dir) = std::env::var_os("GCTF_UCLAF_DIR").map(PathBuf::from) else {
        return Outcome {
            pass: true,
            soft: false,
            skipped: true,
            detail: "set GCTF_UCLAF_DIR to a directory with x1.tns, x2.tns, x3.tns".into(),
        };
    };
    let out = tempfile::tempdir().unwrap();
    let started = Instant::now();
    let status = gctf()
        .arg("benchmark")
        .args([
            "--jobs",
            &std::thread::available_parallelism()
                .map_or(1, |n| n.get())
                .to_string(),
        ])
        .args(["--set", &format!("data.x1={:?}", dir.join("x1.tns"))])
        .args(["--set", &format!("data.x2={:?}", dir.join("x2.tns"))])
        .args(["--set", &format!("data.x3={:?}", dir.join("x3.tns"))])
        .args([
            "--set",
            "data.binarize_x1=true",
            "--set",
            "data.preprocess_x3=true",
        ])
        .args(["--set", &format!("output.dir={:?}", out.path())])
        .status()
        .unwrap();
    let elapsed = started.elapsed();
    if !status.success() {
        return Outcome::hard(false, format!("benchmark exited with {status}"));
    }
    let report = gctf::io::read_report(&out.path().join("report.json")).unwrap();
    let dims = report.dims;
    let at_80: Vec<f64> = report
        .records
        .iter()
        .filter(|r| r.model.is_coupled() && r.mask.parameter() == "0.8")
        .filter_map(|r| r.auc)
        .collect();
    let in_range = !at_80.is_empty() && at_80.iter().all(|&a| a > 0.5 && a <= 1.0);
    let expected_dims = (dims.i, dims.j, dims.k, dims.n) == (146, 168, 5, 14);
    Outcome::hard(
        in_range && expected_dims && elapsed < Duration::from_secs(1800),
        format!(
            "dims {}x{}x{} (n={}), {} coupled AUCs at 80% missing in (0.5, 1]: {in_range}, {elapsed:.2?}",
            dims.i, dims.j, dims.k, dims.n, at_80.len()
        ),
    )
}

fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files: Vec<(PathBuf, Vec<u8>)> = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push((
                    p.strip_prefix(dir).unwrap().to_path_buf(),
                    std::fs::read(&p).unwrap(),
                ));
            }
        }
    }
    files.sort();
    files
}

fn determinism() -> Outcome {
    let data = sample_dir();
    let runs = [
        ("synth", "synth.toml", vec![]),
        ("fit", "fit.toml", vec![]),
        (
            "fit",
            "fit.toml",
            vec!["--set", "cost=euc", "--set", "model.kind=coupled_tucker"],
        ),
        ("fit", "custom.toml", vec![]),
        (
            "benchmark",
            "benchmark.toml",
            vec!["--jobs", "3", "--set", "grid.repeats=1"],
        ),
    ];
    let mut differing = Vec::new();
    for (cmd, config, extra) in &runs {
        let out = tempfile::tempdir().unwrap();
        let outputs: Vec<_> = (0..2)
            .map(|_| {
                for entry in std::fs::read_dir(out.path()).unwrap() {
                    let p = entry.unwrap().path();
                    if p.is_dir() {
                        std::fs::remove_dir_all(p).unwrap();
                    } else {
                        std::fs::remove_file(p).unwrap();
                    }
                }
                let result = gctf()
                    .arg(cmd)
                    .arg("--config")
                    .arg(data.join(config))
                    .args(extra)
                    .args(["--set", &format!("output.dir={:?}", out.path())])
                    .output()
                    .unwrap();
                assert!(
                    result.status.success(),
                    "{cmd} {config} failed: {}",
                    String::from_utf8_lossy(&result.stderr)
                );
                (result.stdout, snapshot(out.path()))
            })
            .collect();
        if outputs[0] != outputs[1] || outputs[0].1.is_empty() {
            differing.push(format!("{cmd} {config}"));
        }
    }
    Outcome::hard(
        differing.is_empty(),
        if differing.is_empty() {
            format!(
                "{} command runs repeated, outputs byte-identical",
                runs.len()
            )
        } else {
            format!("outputs differ for {}", differing.join(", "))
        },
    )
}

fn main() {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 9] = [
        ("delta matches brute-force oracle", delta_oracle),
        ("objective monotone for euc and kl", monotonicity),
        (
            "fixed point and mask invariance",
            fixed_point_and_mask_invariance,
        ),
        ("auc matches pair counting", auc_oracle),
        ("coupled cp beats single cp", coupled_beats_single),
        ("cold start", cold_start),
        ("kl at least euc at 90% missing", kl_versus_euc),
        ("uclaf-scale benchmark", uclaf_scale),
        ("cli determinism", determinism),
    ];
    let mut hard_failures = 0;
    for (n, (name, run)) in criteria.iter().enumerate() {
        let o = run();
        let status = match (o.skipped, o.pass, o.soft) {
            (true, _, _) => "SKIP",
            (false, true, _) => "PASS",
            (false, false, true) => "FAIL (soft)",
            (false, false, false) => "FAIL",
        };
        if !o.pass && !o.soft {
            hard_failures += 1;
        }
        println!("criterion {}: {status} - {name}: {}", n + 1, o.detail);
    }
    if hard_failures > 0 {
        println!("{hard_failures} criteria failed");
        std::process::exit(1);
    }
}
