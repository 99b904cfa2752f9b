//! Acceptance suite. Prints one `[PASS]`/`[FAIL]` line per criterion.
//!
//! Run everything with `cargo test -p mnca-cli --test acceptance`, or pick
//! criteria by id: `cargo test -p mnca-cli --test acceptance -- C3 C8`.
//! Failures are reported but only change the exit status when
//! `MNCA_ACCEPTANCE_STRICT=1` is set.

#[path = "../../core/tests/support/oracles.rs"]
mod oracles;
#[path = "../../core/tests/support/reference.rs"]
mod reference;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use anyhow::{bail, ensure, Context as _, Result};
use mnca_core::abc::{abc_run, AbcConfig, Epsilon, PriorSpec, ProportionMetric, SummaryKind};
use mnca_core::analysis::{
    lipschitz_report, noise_partition, noise_permutation_test, spectral_norm_raw,
};
use mnca_core::io::imaging::rgba_to_tensor;
use mnca_core::metrics::{
    border_complexity, evaluate_cohorts, kl_proportions, rgba_mse, wasserstein1, MetricReport,
};
use mnca_core::model::{gumbel_softmax, rollout, Stepper};
use mnca_core::numerics::sample_categorical;
use mnca_core::perturb::{recovery_experiment, Perturbation};
use mnca_core::tissuesim::{
    default_params, init_grid, minimal_params, one_hot, run_cohort, sim_step_logged, CellGrid,
    CellType, TissueCohort,
};
use mnca_core::training::{
    cohort_sequences, generate_cohort, seed_state, train_pool, train_timeseries, Readout, SeedSpec,
    TrainConfig,
};
use mnca_core::{
    AutomatonModel, ModelSpec, RngStream, SelectionMode, StepOptions, Tensor, Variant,
};
use nalgebra::DMatrix;
use statrs::distribution::{ChiSquared, ContinuousCDF};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Result<Outcome> {
    Ok(Outcome {
        pass,
        detail: detail.into(),
    })
}

fn spec(
    variant: Variant,
    channels: usize,
    hidden: usize,
    rules: usize,
    residual: bool,
) -> ModelSpec {
    ModelSpec {
        variant,
        channels,
        hidden_dim: hidden,
        rules,
        residual,
        dropout: 0.0,
        zero_init_output: false,
    }
}

// ---------------------------------------------------------------- C1

fn c1_gradients() -> Result<Outcome> {
    let t0 = Instant::now();
    let cases = [
        (Variant::Nca, StepOptions::default()),
        (Variant::Gca, StepOptions::default()),
        (Variant::Mnca, StepOptions::training(0.7)),
        (Variant::MncaNoise, StepOptions::training(1.0)),
    ];
    let mut worst = (0.0f64, String::new());
    for (variant, opts) in &cases {
        for seed in 0..20 {
            let r = reference::check_case(*variant, opts, 5000 + seed);
            if r.max_rel > worst.0 {
                worst = (r.max_rel, r.worst);
            }
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        worst.0 < 1e-3 && secs < 60.0,
        format!(
            "80 cases, max rel err {:.2e} ({}), {secs:.1} s",
            worst.0, worst.1
        ),
    )
}

// ---------------------------------------------------------------- C2

fn cohort_with(counts: &[(CellType, usize)]) -> Result<TissueCohort> {
    let mut g = CellGrid::empty(10);
    let mut i = 0;
    for &(t, n) in counts {
        for _ in 0..n {
            g.set(i / 10, i % 10, t);
            i += 1;
        }
    }
    Ok(TissueCohort::from_final_grids(vec![g])?)
}

fn c2_metrics() -> Result<Outcome> {
    let mut w1_err = 0.0f64;
    for seed in 0..100u64 {
        let s = RngStream::new(seed);
        let n = 2 + (s.at(0, 0).uniform() * 80.0) as usize;
        let m = 2 + (s.at(0, 1).uniform() * 80.0) as usize;
        // Small integer support so ties are common.
        let u: Vec<f64> = (0..n)
            .map(|i| (s.at(1, i as u64).uniform() * 40.0).floor())
            .collect();
        let v: Vec<f64> = (0..m)
            .map(|i| (s.at(2, i as u64).uniform() * 40.0).floor() + 3.0)
            .collect();
        w1_err = w1_err.max((wasserstein1(&u, &v)? - oracles::w1_breakpoints(&u, &v)).abs());
    }
    let mut single = CellGrid::empty(7);
    single.set(3, 3, CellType::Stem);
    let mut mask = vec![vec![0u8; 7]; 7];
    mask[3][3] = 1;
    let single_oracle = oracles::border_by_convolution(&mask, 0.1);
    let block = CellGrid::from_cells(3, vec![1; 9])?;
    let block_oracle = oracles::border_by_convolution(&vec![vec![1; 3]; 3], 0.1);
    let (b1, b9) = (border_complexity(&single), border_complexity(&block));
    let p = cohort_with(&[(CellType::Stem, 2), (CellType::Int1, 2)])?;
    let q = cohort_with(&[(CellType::Stem, 1), (CellType::Int1, 3)])?;
    let (k0, k1) = (kl_proportions(&p, &p), kl_proportions(&p, &q));
    let pass = w1_err < 1e-12
        && b1 == 9
        && single_oracle == 9
        && b9 == 8
        && block_oracle == 8
        && k0 == 0.0
        && (k1 - 0.14384).abs() < 1e-5;
    outcome(
        pass,
        format!("W1 max err {w1_err:.1e}; border {b1}/{b9} (oracle {single_oracle}/{block_oracle}); KL {k0} and {k1:.5}"),
    )
}

// ---------------------------------------------------------------- C3

fn chi_square_p(counts: &[u64]) -> f64 {
    let n: u64 = counts.iter().sum();
    let e = n as f64 / counts.len() as f64;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
    let dist = ChiSquared::new((counts.len() - 1) as f64).expect("df >= 1");
    1.0 - dist.cdf(stat)
}

fn c3_samplers() -> Result<Outcome> {
    let k = 6;
    let draws = 100_000u64;
    let mut gumbel = vec![0u64; k];
    let mut direct = vec![0u64; k];
    let logits = vec![0.0f32; k];
    let probs = vec![1.0 / k as f64; k];
    let s = RngStream::new(2718);
    for i in 0..draws {
        gumbel[gumbel_softmax(&logits, 1.0, &mut s.at(0, i), true)?.index] += 1;
        direct[sample_categorical(&mut s.at(1, i), &probs)?] += 1;
    }
    let (pg, pd) = (chi_square_p(&gumbel), chi_square_p(&direct));

    let nca = AutomatonModel::init(&spec(Variant::Nca, 6, 16, 1, true), 21)?;
    let mut mix = AutomatonModel::init(&spec(Variant::Mnca, 6, 16, 1, true), 22)?;
    mix.rules = nca.rules.clone();
    let g = {
        let r = RngStream::new(4);
        Tensor::from_vec(
            &[6, 8, 8],
            (0..384).map(|i| r.at(0, i).normal() as f32).collect(),
        )?
    };
    let mut bitwise = true;
    for opts in [
        StepOptions::inference(),
        StepOptions::inference().with_selection(SelectionMode::Argmax),
    ] {
        let a = rollout(&nca, &g, 8, &opts, &RngStream::new(5))?;
        let b = rollout(&mix, &g, 8, &opts, &RngStream::new(5))?;
        bitwise &= a.iter().zip(&b).all(|(x, y)| {
            x.data()
                .iter()
                .zip(y.data())
                .all(|(p, q)| p.to_bits() == q.to_bits())
        });
    }
    outcome(
        pg > 0.01 && pd > 0.01 && bitwise,
        format!("chi-square p: gumbel {pg:.3}, categorical {pd:.3}; K=1 mixture bitwise equal to NCA: {bitwise}"),
    )
}

// ---------------------------------------------------------------- C4

fn c4_tissue() -> Result<Outcome> {
    let params = default_params();
    let rng = RngStream::new(2024);
    let cohort = run_cohort(&params, 200, &rng)?;
    let (mut transitions, mut violations) = (0usize, 0usize);
    for r in 0..200 {
        let stream = rng.fork(r as u64);
        let mut g = init_grid(&params, &stream)?;
        for t in 0..params.steps {
            let mut events = Vec::new();
            let next = sim_step_logged(&g, &params, &stream, t as u64, &mut events);
            for e in &events {
                if e.parent_type == CellType::Int2 && e.daughter_type == CellType::Diff2 {
                    transitions += 1;
                    let (y, x) = e.parent;
                    if !g
                        .moore(y, x)
                        .any(|(ny, nx)| g.get(ny, nx) == CellType::Diff1)
                    {
                        violations += 1;
                    }
                }
            }
            g = next;
        }
        ensure!(
            &g == cohort.realization(r).last().unwrap(),
            "replay of realization {r} diverged from run_cohort"
        );
    }

    let mut lone = CellGrid::empty(5);
    lone.set(2, 2, CellType::Stem);
    let trials = 10_000u64;
    let mut counts = [0usize; 5];
    let s = RngStream::new(99);
    for i in 0..trials {
        let mut ev = Vec::new();
        sim_step_logged(&lone, &params, &s.fork(i), 0, &mut ev);
        ensure!(ev.len() == 1, "a lone stem cell must divide");
        counts[ev[0].daughter_type.type_index().unwrap()] += 1;
    }
    let expect = [0.3 / 1.1, 0.8 / 1.1, 0.0, 0.0, 0.0];
    let n = trials as f64;
    let within = expect.iter().zip(&counts).all(|(&p, &c)| {
        let sd = (n * p * (1.0 - p)).sqrt();
        (c as f64 - n * p).abs() <= 3.0 * sd
    });
    outcome(
        violations == 0 && transitions > 0 && within,
        format!("{transitions} INT2->DIFF2 transitions, {violations} violations; lone stem daughters {counts:?} of {trials}"),
    )
}

// ---------------------------------------------------------------- C5

fn c5_tissue_ordering() -> Result<Outcome> {
    let mut params = default_params();
    params.grid_size = 25;
    params.steps = 25;
    let real = run_cohort(&params, 50, &RngStream::new(7))?;
    let seqs = cohort_sequences(&real);
    let init: Vec<CellGrid> = real.realizations().iter().map(|r| r[0].clone()).collect();
    let mut reports: Vec<MetricReport> = Vec::new();
    for (variant, k) in [(Variant::Nca, 1), (Variant::Mnca, 5)] {
        let mut m = AutomatonModel::init(&spec(variant, 6, 128, k, false), 1)?;
        let cfg = TrainConfig {
            learning_rate: 1e-3,
            epochs: 400,
            milestones: vec![250],
            gamma: 0.1,
            batch_size: 8,
            window: 5,
            tau: 1,
            seed: 3,
            ..TrainConfig::default()
        };
        train_timeseries(&mut m, &seqs, &cfg)?;
        let gen = generate_cohort(
            &m,
            &init,
            25,
            &StepOptions::inference(),
            Readout::Argmax,
            &RngStream::new(99),
        )?;
        reports.push(evaluate_cohorts(&real, &gen)?);
    }
    let (nca, mnca) = (&reports[0], &reports[1]);
    outcome(
        mnca.kl_div < nca.kl_div / 5.0 && mnca.size_w < nca.size_w,
        format!(
            "KL NCA {:.4} vs MNCA {:.4} (ratio {:.2}); Size-W NCA {:.2} vs MNCA {:.2}",
            nca.kl_div,
            mnca.kl_div,
            nca.kl_div / mnca.kl_div,
            nca.size_w,
            mnca.size_w
        ),
    )
}

// ---------------------------------------------------------------- C6

/// 40×40 RGBA face: orange rim, yellow fill, dark eyes and mouth.
fn face_target(size: u32) -> image::RgbaImage {
    let c = (size as f32 - 1.0) / 2.0;
    let s = size as f32 / 40.0;
    image::RgbaImage::from_fn(size, size, |x, y| {
        let (dx, dy) = ((x as f32 - c) / s, (y as f32 - c) / s);
        let r = (dx * dx + dy * dy).sqrt();
        if r > 17.0 {
            return image::Rgba([0, 0, 0, 0]);
        }
        let eye = ((dx.abs() - 6.0).powi(2) + (dy + 5.0).powi(2)).sqrt() < 3.0;
        let mouth = dy > 3.0 && (r - 10.0).abs() < 1.5;
        if eye || mouth {
            image::Rgba([60, 30, 20, 255])
        } else if r > 14.5 {
            image::Rgba([230, 120, 20, 255])
        } else {
            image::Rgba([250, 210, 60, 255])
        }
    })
}

const C6_CHANNELS: usize = 12;
const C6_HIDDEN: usize = 32;
const C6_RULES: usize = 4;
const C6_PAD: usize = 2;

fn c6_perturbation_ordering() -> Result<Outcome> {
    let target = rgba_to_tensor(&face_target(40), 40, C6_PAD, 0.0, true);
    let n = 40 + 2 * C6_PAD;
    let seed = SeedSpec::center(n, n);
    let opts = StepOptions::inference();
    let damage = [
        Perturbation::Chunk { side: 5 },
        Perturbation::Sparse { count: 100 },
    ];
    let mut rows = Vec::new();
    for (variant, k) in [(Variant::Nca, 1), (Variant::MncaNoise, C6_RULES)] {
        let mut s = spec(variant, C6_CHANNELS, C6_HIDDEN, k, true);
        s.zero_init_output = true;
        let mut m = AutomatonModel::init(&s, 1)?;
        let cfg = TrainConfig {
            learning_rate: 2e-3,
            epochs: 1500,
            milestones: vec![900],
            gamma: 0.1,
            // Batch 8 so the worst-15% reseed replaces one state per step.
            batch_size: 8,
            pool_size: 256,
            n_min: 24,
            n_max: 32,
            seed: 3,
            ..TrainConfig::default()
        };
        train_pool(&mut m, &target, seed, &cfg)?;
        let start = seed_state(C6_CHANNELS, n, n, seed)?.chw_to_rows();
        let frames = Stepper::<f32>::new(&m)?.rollout_rows(
            start,
            n,
            n,
            100,
            &opts,
            &RngStream::new(5),
            0,
        )?;
        let grown = Tensor::from_rows(frames.last().unwrap(), C6_CHANNELS, n, n);
        let grown_mse = rgba_mse(&grown, &target)?;
        let mut finals = Vec::new();
        for p in &damage {
            let r =
                recovery_experiment(&m, &grown, &target, p, 50, 100, &opts, &RngStream::new(6))?;
            // Diverged repeats count as failed recoveries.
            let mean = if r.diverged > 0 {
                f64::INFINITY
            } else {
                r.final_mean
            };
            finals.push((mean, r.final_ci95, r.diverged));
        }
        rows.push((variant, grown_mse, finals));
    }
    let (nca, mix) = (&rows[0].2, &rows[1].2);
    let pass = (0..damage.len()).all(|i| mix[i].0 < nca[i].0);
    let mut detail = Vec::new();
    for (i, p) in damage.iter().enumerate() {
        detail.push(format!(
            "{p}: NCA {:.4}±{:.4} ({} diverged) vs MNCA-noise {:.4}±{:.4} ({} diverged)",
            nca[i].0, nca[i].1, nca[i].2, mix[i].0, mix[i].1, mix[i].2
        ));
    }
    detail.push(format!("grown MSE {:.4} / {:.4}", rows[0].1, rows[1].1));
    outcome(pass, detail.join("; "))
}

// ---------------------------------------------------------------- C7

fn c7_abc() -> Result<Outcome> {
    let t0 = Instant::now();
    let base = default_params();
    let observed = run_cohort(&base, 50, &RngStream::new(31))?;
    let cfg = AbcConfig {
        particles: 500,
        epsilon: Epsilon::Quantile(0.1),
        kind: SummaryKind::Proportions,
        prior: PriorSpec::default(),
        realizations_per_particle: 1,
        proportion_metric: ProportionMetric::TotalVariation,
    };
    let result = abc_run(&observed, &base, &cfg, &RngStream::new(32))?;
    let posterior = run_cohort(&result.posterior, 50, &RngStream::new(33))?;
    let kl = kl_proportions(&observed, &posterior);
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        kl < 0.5 && secs < 900.0,
        format!(
            "posterior KL {kl:.4}, acceptance {:.3}, epsilon {:.4}, {secs:.1} s",
            result.acceptance_rate, result.epsilon
        ),
    )
}

// ---------------------------------------------------------------- C8

fn c8_spectral() -> Result<Outcome> {
    let mut worst = 0.0f64;
    for i in 0..50u64 {
        let s = RngStream::new(800 + i);
        let rows = 1 + (s.at(0, 0).uniform() * 16.0) as usize;
        let cols = 1 + (s.at(0, 1).uniform() * 16.0) as usize;
        let m: Vec<f64> = (0..rows * cols)
            .map(|j| s.at(1, j as u64).normal())
            .collect();
        let est = spectral_norm_raw(&m, rows, cols, 100_000, 1e-14);
        let svd = DMatrix::from_row_slice(rows, cols, &m)
            .singular_values()
            .iter()
            .copied()
            .fold(0.0, f64::max);
        worst = worst.max((est.value - svd).abs() / svd);
    }
    let model = AutomatonModel::init(&spec(Variant::Mnca, 6, 32, 3, true), 8)?;
    let before = lipschitz_report(&model, None)?.rule_bounds;
    let mut scale_err = 0.0f64;
    let mut others_fixed = true;
    for c in [2.0f32, 0.25, -4.0] {
        let mut m = model.clone();
        m.rules[1].w2.data_mut().iter_mut().for_each(|v| *v *= c);
        let after = lipschitz_report(&m, None)?.rule_bounds;
        let want = before[1] * f64::from(c.abs());
        scale_err = scale_err.max((after[1] - want).abs() / want);
        others_fixed &= after[0] == before[0] && after[2] == before[2];
    }
    outcome(
        worst < 1e-6 && scale_err < 1e-12 && others_fixed,
        format!("max rel err vs SVD {worst:.2e}; W2 scaling rel err {scale_err:.1e}, other rules unchanged: {others_fixed}"),
    )
}

// ---------------------------------------------------------------- C9

const TISSUE_TOML: &str = r#"
variant = "mnca_noise"
channels = 6
hidden_dim = 8
rules = 3
learning_rate = 1e-3
epochs = 4
residual = false
seed = 3

[training]
batch_size = 3
window = 3

[tissue]
realizations = 4
grid_size = 10
steps = 5

[sweep]
rule_counts = [1, 2]
"#;

const IMAGE_TOML: &str = r#"
variant = "mnca_noise"
channels = 8
hidden_dim = 8
rules = 2
learning_rate = 2e-3
epochs = 3
residual = true

[training]
batch_size = 3
pool_size = 6
n_min = 3
n_max = 5

[image]
path = "face.png"
size = 10
pad = 1

[perturb]
perturbations = [{ kind = "chunk", side = 3 }, { kind = "sparse", count = 5 }]
repeats = 3
steps = 4
grow_steps = 6
"#;

fn mnca(dir: &Path, threads: usize, args: &[&str]) -> Result<()> {
    let out = Command::new(env!("CARGO_BIN_EXE_mnca"))
        .current_dir(dir)
        .arg("--threads")
        .arg(threads.to_string())
        .args(args)
        .output()?;
    ensure!(
        out.status.success(),
        "mnca {} failed: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
    Ok(())
}

fn collect_files(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) -> Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            out.insert(
                path.strip_prefix(root)?.to_path_buf(),
                std::fs::read(&path)?,
            );
        }
    }
    Ok(())
}

fn c9_reproducibility() -> Result<Outcome> {
    let dir = tempfile::tempdir()?;
    let d = dir.path();
    std::fs::write(d.join("tissue.toml"), TISSUE_TOML)?;
    std::fs::write(d.join("image.toml"), IMAGE_TOML)?;
    face_target(40).save(d.join("face.png"))?;
    let mut snapshots = Vec::new();
    for threads in [1usize, 2, 4] {
        let o = format!("run{threads}");
        let run = |sub: &str, args: &[&str]| -> Result<()> {
            let out = format!("{o}/{sub}");
            let mut all = vec!["--seed", "17", "--out-dir", out.as_str()];
            all.extend_from_slice(args);
            mnca(d, threads, &all)
        };
        let tck = format!("{o}/train_tissue/checkpoint");
        let ick = format!("{o}/train_image/checkpoint");
        run(
            "simulate",
            &[
                "simulate-tissue",
                "--realizations",
                "3",
                "--grid-size",
                "12",
                "--steps",
                "6",
                "--png",
            ],
        )?;
        run("train_tissue", &["--config", "tissue.toml", "train"])?;
        run("evaluate", &["evaluate", "--checkpoint", &tck, "--png"])?;
        run(
            "analyze",
            &[
                "analyze",
                "--checkpoint",
                &tck,
                "--steps",
                "3",
                "--draws",
                "30",
                "--png",
            ],
        )?;
        run(
            "steer",
            &[
                "steer",
                "--checkpoint",
                &tck,
                "--multipliers",
                "0.01,1,2",
                "--steps",
                "4",
                "--png",
            ],
        )?;
        run(
            "abc",
            &["--config", "tissue.toml", "abc", "--particles", "24"],
        )?;
        run(
            "sweep",
            &["--config", "tissue.toml", "sweep-rules", "--epochs", "2"],
        )?;
        run("train_image", &["--config", "image.toml", "train"])?;
        run("perturb", &["perturb", "--checkpoint", &ick, "--png"])?;
        let mut files = BTreeMap::new();
        collect_files(&d.join(&o), &d.join(&o), &mut files)?;
        snapshots.push(files);
    }
    let reference = &snapshots[0];
    let csvs = reference
        .keys()
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .count();
    let checkpoints = reference
        .keys()
        .filter(|p| p.ends_with("weights.bin"))
        .count();
    if csvs == 0 || checkpoints < 2 {
        bail!(
            "expected CSVs and two checkpoints, found {csvs} CSVs and {checkpoints} weight blobs"
        );
    }
    let mut mismatches = Vec::new();
    for (i, snap) in snapshots.iter().enumerate().skip(1) {
        if snap.keys().ne(reference.keys()) {
            mismatches.push(format!("file sets differ for run {i}"));
        }
        for (path, bytes) in reference {
            if snap.get(path) != Some(bytes) {
                mismatches.push(path.display().to_string());
            }
        }
    }
    outcome(
        mismatches.is_empty(),
        if mismatches.is_empty() {
            format!(
                "{} files ({csvs} CSV, {checkpoints} checkpoints) identical across --threads 1/2/4",
                reference.len()
            )
        } else {
            format!("differing: {}", mismatches.join(", "))
        },
    )
}

// ---------------------------------------------------------------- C10

fn c10_attempt(seed: u64) -> Result<(bool, String)> {
    let mut params = minimal_params();
    params.grid_size = 25;
    params.steps = 25;
    let rng = RngStream::new(seed);
    let real = run_cohort(&params, 50, &rng.fork(0))?;
    let mut m = AutomatonModel::init(
        &spec(Variant::MncaNoise, 6, 64, 5, false),
        rng.fork(1).seed(),
    )?;
    let cfg = TrainConfig {
        learning_rate: 1e-3,
        epochs: 300,
        milestones: vec![200],
        gamma: 0.1,
        batch_size: 8,
        window: 5,
        tau: 1,
        seed: rng.fork(2).seed(),
        ..TrainConfig::default()
    };
    train_timeseries(&mut m, &cohort_sequences(&real), &cfg)?;
    // Mid-growth state of a real realization; every stem cell can die or divide.
    let grid = &real.realization(0)[12];
    let pixels: Vec<usize> = (0..grid.cells().len())
        .filter(|&p| grid.cells()[p] == CellType::Stem as u8)
        .collect();
    ensure!(!pixels.is_empty(), "no stem cells in the reference state");
    let part = noise_partition(&m, &one_hot(grid), &pixels, 0..6, 1000, &rng.fork(3))?;
    let (_, p) = noise_permutation_test(&part, 999, &rng.fork(4));
    let freqs = part.class_frequencies();
    let present: Vec<f64> = freqs.iter().copied().filter(|f| *f > 0.0).collect();
    let rare = if present.len() >= 2 {
        present.iter().copied().fold(f64::INFINITY, f64::min)
    } else {
        0.0
    };
    let pass = p < 0.01 && (0.02..=0.08).contains(&rare);
    let freqs: Vec<String> = freqs.iter().map(|f| format!("{f:.3}")).collect();
    Ok((
        pass,
        format!(
            "seed {seed}: permutation p {p:.4}, rare class {rare:.4}, class freqs [{}]",
            freqs.join(", ")
        ),
    ))
}

fn c10_noise_effect() -> Result<Outcome> {
    let mut details = Vec::new();
    // One attempt plus two retries with fresh seeds.
    for seed in [101, 202, 303] {
        let (pass, detail) = c10_attempt(seed)?;
        details.push(detail);
        if pass {
            return outcome(true, details.join("; "));
        }
    }
    outcome(false, details.join("; "))
}

// ----------------------------------------------------------------

type Criterion = (&'static str, &'static str, fn() -> Result<Outcome>);

const CRITERIA: [Criterion; 10] = [
    ("C1", "gradient correctness", c1_gradients),
    ("C2", "metric oracles", c2_metrics),
    ("C3", "sampler correctness", c3_samplers),
    ("C4", "tissue simulator fidelity", c4_tissue),
    ("C5", "desk-scale tissue ordering", c5_tissue_ordering),
    (
        "C6",
        "desk-scale perturbation ordering",
        c6_perturbation_ordering,
    ),
    ("C7", "ABC sanity", c7_abc),
    ("C8", "spectral bound", c8_spectral),
    (
        "C9",
        "reproducibility across thread counts",
        c9_reproducibility,
    ),
    ("C10", "noise partitioning effect", c10_noise_effect),
];

fn main() {
    let wanted: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .map(|a| a.to_uppercase())
        .collect();
    let mut failed = 0;
    let mut ran = 0;
    for (id, name, check) in CRITERIA {
        if !wanted.is_empty() && !wanted.iter().any(|w| w == id) {
            continue;
        }
        ran += 1;
        let t0 = Instant::now();
        let result = std::panic::catch_unwind(check)
            .unwrap_or_else(|e| {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                Err(anyhow::anyhow!("panicked: {msg}"))
            })
            .context("error");
        let secs = t0.elapsed().as_secs_f64();
        let (pass, detail) = match result {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("{e:#}")),
        };
        if !pass {
            failed += 1;
        }
        println!(
            "[{}] {id} {name}: {detail} [{secs:.1} s]",
            if pass { "PASS" } else { "FAIL" }
        );
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    let strict = std::env::var("MNCA_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if strict && failed > 0 {
        std::process::exit(1);
    }
}
