use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{kl_proportions, mean_std};
use crate::model::{AutomatonModel, ModelSpec, StepOptions, Variant};
use crate::numerics::RngStream;
use crate::tissuesim::{CellGrid, TissueCohort};
use crate::training::{cohort_sequences, generate_cohort, train_timeseries, Readout, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub rule_counts: Vec<usize>,
    pub repeats: usize,
    /// Template; `rules` and `variant` are overridden per cell.
    pub model: ModelSpec,
    pub train: TrainConfig,
    #[serde(default)]
    pub readout: Readout,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub rules: usize,
    pub repeat: usize,
    pub kl_div: f64,
    pub error: Option<String>,
}

fn run_cell(cfg: &SweepConfig, cohort: &TissueCohort, rules: usize, repeat: usize) -> Result<f64> {
    let spec = ModelSpec {
        variant: Variant::Mnca,
        rules,
        ..cfg.model.clone()
    };
    let cell_seed = RngStream::new(cfg.seed)
        .fork(rules as u64)
        .fork(repeat as u64);
    let mut model = AutomatonModel::init(&spec, cell_seed.seed())?;
    let train = TrainConfig {
        seed: cell_seed.fork(1).seed(),
        ..cfg.train.clone()
    };
    train_timeseries(&mut model, &cohort_sequences(cohort), &train)?;
    let init: Vec<CellGrid> = cohort.realizations().iter().map(|r| r[0].clone()).collect();
    let generated = generate_cohort(
        &model,
        &init,
        cohort.steps(),
        &StepOptions::inference(),
        cfg.readout,
        &cell_seed.fork(2),
    )?;
    Ok(kl_proportions(cohort, &generated))
}

/// Train a fresh mixture per `(K, repeat)` cell and score generated tissues by
/// KL divergence. Failed cells are reported, not fatal. Cell seeds derive from
/// `(seed, K, repeat)`, so K = 1 with the same seed matches a plain automaton run.
pub fn rules_sweep(cfg: &SweepConfig, cohort: &TissueCohort) -> Result<Vec<SweepRow>> {
    if cfg.rule_counts.is_empty() || cfg.rule_counts.contains(&0) {
        return Err(Error::config("rule_counts must be nonempty and >= 1"));
    }
    if cfg.repeats == 0 {
        return Err(Error::config("repeats must be >= 1"));
    }
    let cells: Vec<(usize, usize)> = cfg
        .rule_counts
        .iter()
        .flat_map(|&k| (0..cfg.repeats).map(move |r| (k, r)))
        .collect();
    Ok(cells
        .par_iter()
        .map(
            |&(rules, repeat)| match run_cell(cfg, cohort, rules, repeat) {
                Ok(kl) => SweepRow {
                    rules,
                    repeat,
                    kl_div: kl,
                    error: None,
                },
                Err(e) => {
                    log::warn!("sweep cell K={rules} repeat {repeat} failed: {e}");
                    SweepRow {
                        rules,
                        repeat,
                        kl_div: f64::NAN,
                        error: Some(e.to_string()),
                    }
                }
            },
        )
        .collect())
}

/// Per-cell rows followed by no aggregate; see [`sweep_summary`] for means.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("rules,repeat,kl_div,error\n");
    for r in rows {
        let err = r.error.as_deref().unwrap_or("").replace([',', '\n'], ";");
        s.push_str(&format!(
            "{},{},{:.9e},{err}\n",
            r.rules, r.repeat, r.kl_div
        ));
    }
    s
}

/// `(K, mean KL, sd KL)` over successful repeats, in first-seen order of K.
pub fn sweep_summary(rows: &[SweepRow]) -> Vec<(usize, f64, f64)> {
    let mut ks: Vec<usize> = Vec::new();
    for r in rows {
        if !ks.contains(&r.rules) {
            ks.push(r.rules);
        }
    }
    ks.into_iter()
        .map(|k| {
            let v: Vec<f64> = rows
                .iter()
                .filter(|r| r.rules == k && r.error.is_none())
                .map(|r| r.kl_div)
                .collect();
            let (m, s) = mean_std(&v);
            (k, m, s)
        })
        .collect()
}
