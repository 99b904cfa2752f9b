use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AutomatonModel, StepOptions, Stepper};
use crate::numerics::{RngStream, Tensor};
use crate::tissuesim::{argmax_labels, one_hot, CellGrid, TissueCohort, NUM_LABELS};

/// One-hot frame sequences of every realization in a cohort.
pub fn cohort_sequences(cohort: &TissueCohort) -> Vec<Vec<Tensor>> {
    cohort
        .realizations()
        .iter()
        .map(|r| r.iter().map(one_hot).collect())
        .collect()
}

/// How a continuous model state becomes a tissue grid during generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Readout {
    /// Free-running continuous state; only stored frames are discretized.
    Continuous,
    /// Argmax label after every step, fed back as a one-hot state.
    #[default]
    Argmax,
    /// Label drawn after every step from the clamped, renormalized label
    /// channels, fed back as a one-hot state.
    Sample,
}

fn labels_of(
    state: &[f32],
    c: usize,
    p_n: usize,
    readout: Readout,
    rng: &RngStream,
    step: u64,
) -> Vec<u8> {
    (0..p_n)
        .map(|p| {
            let v = &state[p * c..p * c + NUM_LABELS];
            let mut best = 0;
            for k in 1..NUM_LABELS {
                if v[k] > v[best] {
                    best = k;
                }
            }
            if readout != Readout::Sample {
                return best as u8;
            }
            let total: f64 = v.iter().map(|&x| f64::from(x.max(0.0))).sum();
            if !(total > 0.0) {
                return best as u8;
            }
            let u = rng.at(step, p as u64).gen::<f64>() * total;
            let mut acc = 0.0;
            for (k, &x) in v.iter().enumerate() {
                acc += f64::from(x.max(0.0));
                if u < acc {
                    return k as u8;
                }
            }
            best as u8
        })
        .collect()
}

/// Roll a tissue model from each initial grid for `steps` updates.
///
/// Every stored frame is the per-pixel label read from the six label channels;
/// `readout` controls whether the state is also discretized between steps.
/// Realization `i` draws from `rng.fork(i)` (model noise) and
/// `rng.fork(i).fork(1)` (label sampling).
pub fn generate_cohort(
    model: &AutomatonModel,
    initial: &[CellGrid],
    steps: usize,
    opts: &StepOptions,
    readout: Readout,
    rng: &RngStream,
) -> Result<TissueCohort> {
    if model.channels < NUM_LABELS {
        return Err(Error::config(format!(
            "tissue models need at least {NUM_LABELS} channels, got {}",
            model.channels
        )));
    }
    let stepper = Stepper::<f32>::new(model)?;
    let c = model.channels;
    let realizations = initial
        .par_iter()
        .enumerate()
        .map(|(i, g0)| {
            let n = g0.size();
            let mut state = vec![0.0f32; n * n * c];
            for (p, &v) in g0.cells().iter().enumerate() {
                state[p * c + v as usize] = 1.0;
            }
            let stream = rng.fork(i as u64);
            if readout == Readout::Continuous {
                let states = stepper.rollout_rows(state, n, n, steps, opts, &stream, 0)?;
                return states
                    .iter()
                    .map(|s| {
                        let t = Tensor::from_rows(s, c, n, n).channels(0, NUM_LABELS)?;
                        argmax_labels(&t)
                    })
                    .collect::<Result<Vec<_>>>();
            }
            let label_rng = stream.fork(1);
            let mut frames = vec![g0.clone()];
            for s in 0..steps {
                let (next, _) = stepper.step_rows(&state, n, n, opts, &stream, s as u64, false)?;
                let labels = labels_of(&next, c, n * n, readout, &label_rng, s as u64);
                // Hidden channels keep their values; label channels become one-hot.
                state = next;
                for (p, &l) in labels.iter().enumerate() {
                    let row = &mut state[p * c..p * c + NUM_LABELS];
                    row.fill(0.0);
                    row[l as usize] = 1.0;
                }
                frames.push(CellGrid::from_cells(n, labels)?);
            }
            Ok(frames)
        })
        .collect::<Result<Vec<_>>>()?;
    TissueCohort::new(realizations)
}
