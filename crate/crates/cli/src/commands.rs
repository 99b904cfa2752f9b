use std::fmt::Write as _;
use std::path::Path;

use anyhow::{anyhow, bail, Result};
use mnca_core::abc::{abc_run, particles_csv, Epsilon, SummaryKind};
use mnca_core::analysis::{
    lipschitz_report, modal_rule_share, noise_partition, noise_permutation_test, rule_map,
    rules_sweep, sweep_csv, sweep_summary, SweepConfig,
};
use mnca_core::io::checkpoint::Manifest;
use mnca_core::io::config::{default_abc, ImageBlock, TissueBlock};
use mnca_core::io::{
    ingest_image, render_gray, render_rgba, render_tissue, save_checkpoint, ExperimentConfig,
};
use mnca_core::metrics::{evaluate_cohorts, label_counts, type_proportions};
use mnca_core::model::rollout;
use mnca_core::perturb::{recovery_experiment, summary_csv, Perturbation};
use mnca_core::tissuesim::{
    default_params, minimal_params, one_hot, run_cohort, CellGrid, CellType, SimParams,
    TissueCohort, NUM_LABELS,
};
use mnca_core::training::{
    cohort_sequences, generate_cohort, seed_state, train_pool, train_timeseries, SeedSpec,
};
use mnca_core::{AutomatonModel, Error, StepOptions, Tensor};

use crate::context::Context;
use crate::{
    AbcArgs, AnalyzeArgs, EvalArgs, PerturbArgs, SimulateArgs, SteerArgs, SweepArgs, TrainArgs,
};

// Stream tags, one per purpose.
const TAG_COHORT: u64 = 1;
const TAG_INIT: u64 = 2;
const TAG_TRAIN: u64 = 3;
const TAG_GENERATE: u64 = 4;
const TAG_GROW: u64 = 5;
const TAG_PERTURB: u64 = 6;
const TAG_ABC: u64 = 7;
const TAG_POSTERIOR: u64 = 8;
const TAG_NOISE: u64 = 9;
const TAG_PERMUTE: u64 = 10;
const TAG_STEER: u64 = 11;

/// Default realization count when neither flags nor config give one.
const DEFAULT_REALIZATIONS: usize = 50;
/// PNG frames written at most per run.
const MAX_PNGS: usize = 8;

fn config_error(msg: impl Into<String>) -> anyhow::Error {
    anyhow!(Error::Config(msg.into()))
}

fn tissue_block(cfg: Option<&ExperimentConfig>) -> Option<&TissueBlock> {
    cfg.and_then(|c| c.tissue.as_ref())
}

fn sim_params(ctx: &Context) -> SimParams {
    tissue_block(ctx.config.as_ref())
        .map(TissueBlock::sim_params)
        .unwrap_or_else(default_params)
}

fn realizations(ctx: &Context) -> usize {
    tissue_block(ctx.config.as_ref())
        .map(|t| t.realizations)
        .filter(|&n| n > 0)
        .unwrap_or(DEFAULT_REALIZATIONS)
}

/// Real cohort: explicit file, the config's cohort file, or a fresh simulation.
fn real_cohort(ctx: &Context, path: Option<&Path>) -> Result<TissueCohort> {
    if let Some(p) = path {
        return Ok(mnca_core::tissuesim::read_cohort(p)?);
    }
    if let Some(p) = tissue_block(ctx.config.as_ref()).and_then(|t| t.cohort.as_ref()) {
        return Ok(mnca_core::tissuesim::read_cohort(ctx.resolve(p))?);
    }
    let params = sim_params(ctx);
    log::info!(
        "simulating {} realizations ({}x{}, {} steps)",
        realizations(ctx),
        params.grid_size,
        params.grid_size,
        params.steps
    );
    Ok(run_cohort(
        &params,
        realizations(ctx),
        &ctx.stream(TAG_COHORT),
    )?)
}

fn image_block(ctx: &Context) -> Result<&ImageBlock> {
    ctx.config()?
        .image
        .as_ref()
        .ok_or_else(|| config_error("this command needs an [image] block"))
}

fn load_target(ctx: &Context, block: &ImageBlock) -> Result<Tensor> {
    Ok(ingest_image(
        ctx.resolve(&block.path),
        block.size,
        block.pad,
        block.pad_value,
        block.premultiply,
    )?)
}

fn seed_spec(block: &ImageBlock, h: usize, w: usize) -> SeedSpec {
    let c = SeedSpec::center(h, w);
    SeedSpec {
        y: block.seed_y.unwrap_or(c.y),
        x: block.seed_x.unwrap_or(c.x),
    }
}

fn cohort_stats_csv(cohort: &TissueCohort) -> String {
    let mut s = String::from("realization,size,border_complexity");
    for t in CellType::ALL {
        write!(s, ",{}", t.name()).unwrap();
    }
    s.push('\n');
    for (i, g) in cohort.final_grids().enumerate() {
        write!(
            s,
            "{i},{},{}",
            mnca_core::metrics::tissue_size(g),
            mnca_core::metrics::border_complexity(g)
        )
        .unwrap();
        for n in label_counts(g) {
            write!(s, ",{n}").unwrap();
        }
        s.push('\n');
    }
    s
}

fn write_tissue_pngs(ctx: &mut Context, prefix: &str, cohort: &TissueCohort) -> Result<()> {
    for (i, g) in cohort.final_grids().take(MAX_PNGS).enumerate() {
        ctx.write_png(&format!("{prefix}_{i:03}.png"), &render_tissue(g, 8))?;
    }
    Ok(())
}

pub fn simulate(ctx: &mut Context, a: &SimulateArgs) -> Result<()> {
    let mut params = match a.preset.as_deref() {
        None => sim_params(ctx),
        Some("default") => default_params(),
        Some("minimal") => minimal_params(),
        Some(other) => bail!(Error::usage(format!("unknown simulator preset {other:?}"))),
    };
    if let Some(n) = a.grid_size {
        params.grid_size = n;
    }
    if let Some(t) = a.steps {
        params.steps = t;
    }
    params.validate()?;
    let n = a.realizations.unwrap_or_else(|| realizations(ctx));
    let cohort = run_cohort(&params, n, &ctx.stream(TAG_COHORT))?;
    ctx.write("cohort.bin", cohort.to_bytes())?;
    ctx.write("cohort_stats.csv", cohort_stats_csv(&cohort))?;
    ctx.write(
        "sim_params.json",
        serde_json::to_string_pretty(&params)? + "\n",
    )?;
    if a.png {
        write_tissue_pngs(ctx, "tissue", &cohort)?;
    }
    log::info!("wrote {n} realizations to {}", ctx.out_dir.display());
    Ok(())
}

fn save_model(
    ctx: &mut Context,
    model: &AutomatonModel,
    steps: u64,
    cfg: &ExperimentConfig,
) -> Result<()> {
    let mut manifest = Manifest::for_model(model, steps, ctx.seed);
    manifest.config = Some(serde_json::to_value(cfg)?);
    let dir = ctx.path("checkpoint");
    save_checkpoint(&dir, model, &manifest)?;
    ctx.record("checkpoint/manifest.json");
    ctx.record("checkpoint/weights.bin");
    Ok(())
}

pub fn train(ctx: &mut Context, a: &TrainArgs) -> Result<()> {
    let mut cfg = ctx.config()?.clone();
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    // The checkpoint keeps a config snapshot; make its paths independent of
    // where the config file lived.
    if let Some(b) = cfg.image.as_mut() {
        b.path = ctx.resolve(&b.path);
    }
    if let Some(p) = cfg.tissue.as_mut().and_then(|t| t.cohort.as_mut()) {
        *p = ctx.resolve(p);
    }
    let mut model = AutomatonModel::init(&cfg.model_spec(), ctx.stream(TAG_INIT).seed())?;
    let train_cfg = cfg.train_config(ctx.stream(TAG_TRAIN).seed());
    log::info!(
        "training {} ({} parameters) for {} epochs",
        model.variant,
        model.param_count(),
        cfg.epochs
    );
    let log = if cfg.tissue.is_some() || a.cohort.is_some() {
        let cohort = real_cohort(ctx, a.cohort.as_deref())?;
        train_timeseries(&mut model, &cohort_sequences(&cohort), &train_cfg)?
    } else if let Some(block) = cfg.image.clone() {
        let target = load_target(ctx, &block)?;
        let (_, h, w) = target.dims3("target")?;
        let (log, pool) = train_pool(&mut model, &target, seed_spec(&block, h, w), &train_cfg)?;
        let sample = pool.slot(0);
        ctx.write_png("pool_sample.png", &render_rgba(&sample, 4)?)?;
        log
    } else {
        bail!(config_error("train needs a [tissue] or [image] block"));
    };
    if let Some(l) = log.last_loss() {
        log::info!("final loss {l:.6}");
    }
    ctx.write("loss.csv", log.to_csv())?;
    save_model(ctx, &model, cfg.epochs as u64, &cfg)?;
    ctx.config = Some(cfg);
    Ok(())
}

pub fn evaluate(ctx: &mut Context, a: &EvalArgs) -> Result<()> {
    let model = ctx.load_model(&a.checkpoint)?;
    let real = real_cohort(ctx, a.cohort.as_deref())?;
    let readout = tissue_block(ctx.config.as_ref())
        .map(|t| t.readout)
        .unwrap_or_default();
    let init: Vec<CellGrid> = real.realizations().iter().map(|r| r[0].clone()).collect();
    let generated = generate_cohort(
        &model,
        &init,
        real.steps(),
        &StepOptions::inference(),
        readout,
        &ctx.stream(TAG_GENERATE),
    )?;
    let report = evaluate_cohorts(&real, &generated)?;
    log::info!(
        "KL-div {:.6}, size W1 {:.4}, border W1 {:.4}",
        report.kl_div,
        report.size_w,
        report.border_w
    );
    ctx.write(
        "metrics.csv",
        format!(
            "kl_div,size_w,border_w\n{:.9e},{:.9e},{:.9e}\n",
            report.kl_div, report.size_w, report.border_w
        ),
    )?;
    let (pr, pg) = (type_proportions(&real), type_proportions(&generated));
    let mut s = String::from("type,real,generated\n");
    for (i, t) in CellType::ALL.iter().skip(1).enumerate() {
        writeln!(s, "{},{:.9e},{:.9e}", t.name(), pr[i], pg[i]).unwrap();
    }
    ctx.write("proportions.csv", s)?;
    ctx.write("generated.bin", generated.to_bytes())?;
    ctx.write("generated_stats.csv", cohort_stats_csv(&generated))?;
    if a.png {
        write_tissue_pngs(ctx, "generated", &generated)?;
    }
    Ok(())
}

fn default_perturbations() -> Vec<Perturbation> {
    vec![
        Perturbation::Chunk { side: 5 },
        Perturbation::Sparse { count: 100 },
    ]
}

pub fn perturb(ctx: &mut Context, a: &PerturbArgs) -> Result<()> {
    let model = ctx.load_model(&a.checkpoint)?;
    let cfg = ctx.config()?.clone();
    let block = image_block(ctx)?.clone();
    let target = load_target(ctx, &block)?;
    let (_, h, w) = target.dims3("target")?;
    let seed = seed_state(model.channels, h, w, seed_spec(&block, h, w))?;
    let (perts, repeats, steps, grow) = match &cfg.perturb {
        Some(p) => (p.perturbations.clone(), p.repeats, p.steps, p.grow_steps),
        None => (default_perturbations(), 50, 100, 100),
    };
    let repeats = a.repeats.unwrap_or(repeats);
    let steps = a.steps.unwrap_or(steps);
    for p in &perts {
        p.validate(h, w)?;
    }
    let opts = StepOptions::inference();
    let grown = rollout(&model, &seed, grow, &opts, &ctx.stream(TAG_GROW))?
        .pop()
        .expect("rollout keeps the initial state");
    let grown_mse = mnca_core::metrics::rgba_mse(&grown, &target)?;
    log::info!("grown state MSE {grown_mse:.6} after {grow} steps");
    let base = ctx.stream(TAG_PERTURB);
    let mut rows = Vec::new();
    for (j, p) in perts.iter().enumerate() {
        let r = recovery_experiment(
            &model,
            &grown,
            &target,
            p,
            repeats,
            steps,
            &opts,
            &base.fork(j as u64),
        )?;
        log::info!(
            "{p}: final MSE {:.6} ± {:.6} ({} diverged)",
            r.final_mean,
            r.final_ci95,
            r.diverged
        );
        ctx.write(&format!("curves_{p}.csv"), r.curves_csv())?;
        if a.png {
            let stream = base.fork(j as u64).fork(0);
            let damaged = mnca_core::perturb::apply_perturbation(&grown, p, &stream)?;
            let frames = rollout(&model, &damaged, steps, &opts, &stream.fork(1))?;
            for t in [0, steps / 2, steps] {
                ctx.write_png(
                    &format!("recovery_{p}_{t:04}.png"),
                    &render_rgba(&frames[t], 4)?,
                )?;
            }
        }
        rows.push((model.variant.name().to_string(), r));
    }
    ctx.write("recovery_summary.csv", summary_csv(&rows))?;
    Ok(())
}

fn summary_kind(name: &str) -> Result<SummaryKind> {
    Ok(match name {
        "proportions" => SummaryKind::Proportions,
        "neighborhood" => SummaryKind::Neighborhood,
        "correlation" => SummaryKind::Correlation,
        other => bail!(Error::usage(format!(
            "unknown statistic {other:?} (proportions, neighborhood, correlation)"
        ))),
    })
}

pub fn abc(ctx: &mut Context, a: &AbcArgs) -> Result<()> {
    let observed = real_cohort(ctx, a.cohort.as_deref())?;
    let mut abc_cfg = ctx
        .config
        .as_ref()
        .and_then(|c| c.abc.clone())
        .unwrap_or_else(default_abc);
    if let Some(n) = a.particles {
        abc_cfg.particles = n;
    }
    if let Some(s) = &a.statistic {
        abc_cfg.kind = summary_kind(s)?;
    }
    if let Some(e) = a.epsilon {
        abc_cfg.epsilon = Epsilon::Fixed(e);
    }
    let base = sim_params(ctx);
    let result = abc_run(&observed, &base, &abc_cfg, &ctx.stream(TAG_ABC))?;
    log::info!(
        "epsilon {:.6}, acceptance rate {:.4}",
        result.epsilon,
        result.acceptance_rate
    );
    ctx.write("particles.csv", particles_csv(&result))?;
    ctx.write(
        "posterior.json",
        serde_json::to_string_pretty(&result.posterior)? + "\n",
    )?;
    let mut post = result.posterior.clone();
    post.grid_size = observed.grid_size();
    post.steps = observed.steps();
    let sim = run_cohort(&post, observed.len(), &ctx.stream(TAG_POSTERIOR))?;
    let report = evaluate_cohorts(&observed, &sim)?;
    log::info!("posterior-mean model KL-div {:.6}", report.kl_div);
    ctx.write(
        "posterior_metrics.csv",
        format!(
            "epsilon,acceptance_rate,kl_div,size_w,border_w\n{:.9e},{:.9e},{:.9e},{:.9e},{:.9e}\n",
            result.epsilon, result.acceptance_rate, report.kl_div, report.size_w, report.border_w
        ),
    )?;
    Ok(())
}

/// Starting state for analysis and steering: a tissue grid from the cohort, or
/// the growth seed for image models.
fn start_state(ctx: &Context, model: &AutomatonModel) -> Result<(Tensor, bool)> {
    let cfg = ctx.config()?;
    if cfg.tissue.is_some() {
        let cohort = real_cohort(ctx, None)?;
        let g = one_hot(&cohort.realization(0)[0]);
        let (_, h, w) = g.dims3("grid")?;
        let mut t = Tensor::zeros(&[model.channels, h, w]);
        t.data_mut()[..NUM_LABELS * h * w].copy_from_slice(g.data());
        return Ok((t, true));
    }
    if let Some(block) = &cfg.image {
        let n = block.size + 2 * block.pad;
        return Ok((
            seed_state(model.channels, n, n, seed_spec(block, n, n))?,
            false,
        ));
    }
    bail!(config_error(
        "need a [tissue] or [image] block to build a start state"
    ))
}

fn labels_of(state: &Tensor) -> Result<CellGrid> {
    Ok(mnca_core::tissuesim::argmax_labels(
        &state.channels(0, NUM_LABELS)?,
    )?)
}

pub fn analyze(ctx: &mut Context, a: &AnalyzeArgs) -> Result<()> {
    let model = ctx.load_model(&a.checkpoint)?;
    let (start, tissue) = start_state(ctx, &model)?;
    let state = rollout(
        &model,
        &start,
        a.steps,
        &StepOptions::inference(),
        &ctx.stream(TAG_GROW),
    )?
    .pop()
    .expect("rollout keeps the initial state");
    let report = lipschitz_report(&model, Some(&state))?;
    if !report.all_converged {
        log::warn!("power iteration did not converge for every matrix");
    }
    ctx.write("lipschitz.csv", report.to_csv())?;
    let (_, h, w) = state.dims3("state")?;
    if model.variant.is_mixture() {
        let map = rule_map(&model, &state, None)?;
        let k = model.num_rules();
        let mut s = String::from("pixel,argmax");
        for r in 0..k {
            write!(s, ",p{r}").unwrap();
        }
        s.push('\n');
        let plane = h * w;
        for p in 0..plane {
            write!(s, "{p},{}", map.argmax[p]).unwrap();
            for r in 0..k {
                write!(s, ",{:.9e}", map.probs.data()[r * plane + p]).unwrap();
            }
            s.push('\n');
        }
        ctx.write("rule_map.csv", s)?;
        if tissue {
            let labels = labels_of(&state)?;
            let mut s = String::from("label,modal_rule,share\n");
            for (lab, rule, share) in modal_rule_share(&map, &labels, k) {
                let name = CellType::from_u8(lab).map(CellType::name).unwrap_or("?");
                writeln!(s, "{name},{rule},{share:.9e}").unwrap();
            }
            ctx.write("modal_rules.csv", s)?;
        }
        if a.png {
            let argmax: Vec<f32> = map
                .argmax
                .iter()
                .map(|&r| {
                    if k > 1 {
                        f32::from(r) / (k - 1) as f32
                    } else {
                        0.0
                    }
                })
                .collect();
            ctx.write_png("rule_map.png", &render_gray(&argmax, h, w, 8))?;
        }
    }
    if tissue && model.variant.has_noise() && model.variant != mnca_core::Variant::Gca {
        let pixels: Vec<usize> = (0..h * w).collect();
        let part = noise_partition(
            &model,
            &state,
            &pixels,
            0..NUM_LABELS,
            a.draws,
            &ctx.stream(TAG_NOISE),
        )?;
        let (stat, p) = noise_permutation_test(&part, 999, &ctx.stream(TAG_PERMUTE));
        log::info!("noise/class permutation test: statistic {stat:.6}, p = {p:.4}");
        ctx.write("noise_partition.csv", part.to_csv())?;
        let freqs = part.class_frequencies();
        let means = part.class_noise_means();
        let mut s = String::from("class,frequency,noise_mean\n");
        for (i, t) in CellType::ALL.iter().enumerate() {
            writeln!(s, "{},{:.9e},{:.9e}", t.name(), freqs[i], means[i]).unwrap();
        }
        writeln!(s, "# permutation statistic {stat:.9e} p {p:.9e}").unwrap();
        ctx.write("noise_summary.csv", s)?;
    }
    Ok(())
}

pub fn sweep(ctx: &mut Context, a: &SweepArgs) -> Result<()> {
    let mut cfg = ctx.config()?.clone();
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    let block = cfg.sweep.clone();
    let rule_counts = a
        .rules
        .clone()
        .or_else(|| block.as_ref().map(|b| b.rule_counts.clone()))
        .ok_or_else(|| config_error("sweep-rules needs --rules or a [sweep] block"))?;
    let repeats = a.repeats.or(block.map(|b| b.repeats)).unwrap_or(1);
    let readout = cfg.tissue.as_ref().map(|t| t.readout).unwrap_or_default();
    let cohort = real_cohort(ctx, None)?;
    let sweep_cfg = SweepConfig {
        rule_counts,
        repeats,
        model: cfg.model_spec(),
        train: cfg.train_config(0),
        readout,
        seed: ctx.stream(TAG_TRAIN).seed(),
    };
    let rows = rules_sweep(&sweep_cfg, &cohort)?;
    ctx.write("sweep.csv", sweep_csv(&rows))?;
    let mut s = String::from("rules,mean_kl,sd_kl\n");
    for (k, m, sd) in sweep_summary(&rows) {
        writeln!(s, "{k},{m:.9e},{sd:.9e}").unwrap();
    }
    ctx.write("sweep_summary.csv", s)?;
    Ok(())
}

pub fn steer(ctx: &mut Context, a: &SteerArgs) -> Result<()> {
    let model = ctx.load_model(&a.checkpoint)?;
    if !model.variant.is_mixture() {
        bail!(Error::usage(format!(
            "steering needs a mixture model, got {}",
            model.variant
        )));
    }
    if a.multipliers.len() != model.num_rules() {
        bail!(Error::usage(format!(
            "{} multipliers for {} rules",
            a.multipliers.len(),
            model.num_rules()
        )));
    }
    let (start, tissue) = start_state(ctx, &model)?;
    let opts = StepOptions::inference().with_steering(a.multipliers.clone());
    let frames = rollout(&model, &start, a.steps, &opts, &ctx.stream(TAG_STEER))?;
    let last = frames.last().expect("rollout keeps the initial state");
    let (_, h, w) = last.dims3("state")?;
    let map = rule_map(&model, last, Some(&a.multipliers))?;
    let k = model.num_rules();
    let mut share = vec![0usize; k];
    for &r in &map.argmax {
        share[r as usize] += 1;
    }
    let mut s = String::from("rule,multiplier,argmax_share\n");
    for r in 0..k {
        writeln!(
            s,
            "{r},{},{:.9e}",
            a.multipliers[r],
            share[r] as f64 / (h * w) as f64
        )
        .unwrap();
    }
    ctx.write("steer_rules.csv", s)?;
    if tissue {
        let labels = labels_of(last)?;
        let mut s = String::from("label,count\n");
        for (t, n) in CellType::ALL.iter().zip(label_counts(&labels)) {
            writeln!(s, "{},{n}", t.name()).unwrap();
        }
        ctx.write("steer_labels.csv", s)?;
        if a.png {
            ctx.write_png("steered.png", &render_tissue(&labels, 8))?;
        }
    } else {
        log::info!("rolled out {} steps", frames.len() - 1);
        if a.png {
            ctx.write_png("steered.png", &render_rgba(last, 4)?)?;
        }
    }
    Ok(())
}
