use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{apply_update, lr_at, param_set, LossLog, TrainConfig};
use crate::error::{Error, Result};
use crate::model::backward::mse_rows;
use crate::model::{AutomatonModel, Gradients, Stepper};
use crate::numerics::{RngStream, Tensor};

/// Pixel where growth starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedSpec {
    pub y: usize,
    pub x: usize,
}

impl SeedSpec {
    pub fn center(h: usize, w: usize) -> Self {
        Self { y: h / 2, x: w / 2 }
    }
}

/// All-zero `[C,H,W]` grid with channels `3..C` set to one at the seed pixel.
pub fn seed_state(channels: usize, h: usize, w: usize, seed: SeedSpec) -> Result<Tensor> {
    if seed.y >= h || seed.x >= w {
        return Err(Error::config(format!(
            "seed pixel ({}, {}) outside a {h}x{w} grid",
            seed.y, seed.x
        )));
    }
    let mut t = Tensor::zeros(&[channels, h, w]);
    let d = t.data_mut();
    for ch in 3..channels {
        d[(ch * h + seed.y) * w + seed.x] = 1.0;
    }
    Ok(t)
}

/// The sample pool. Slots are only ever overwritten.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolState {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Pixel-major grids.
    slots: Vec<Vec<f32>>,
    /// Loss recorded each time a slot was part of a batch.
    pub history: Vec<Vec<f32>>,
}

impl PoolState {
    pub fn new(seed: &Tensor, size: usize) -> Result<Self> {
        let (c, h, w) = seed.dims3("pool seed")?;
        let rows = seed.chw_to_rows();
        Ok(Self {
            height: h,
            width: w,
            channels: c,
            slots: vec![rows; size],
            history: vec![Vec::new(); size],
        })
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn slot(&self, i: usize) -> Tensor {
        Tensor::from_rows(&self.slots[i], self.channels, self.height, self.width)
    }
}

/// Indices of the `k` largest losses, ties to the lowest index.
pub(crate) fn worst_indices(losses: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..losses.len()).collect();
    order.sort_by(|&a, &b| losses[b].total_cmp(&losses[a]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

/// Pool-based growth training towards the first four channels of `target`.
///
/// Per epoch: `batch_size` distinct slots are drawn, one step count
/// `n ∈ [n_min, n_max]` is drawn, every member runs `n` steps, and the loss is
/// the MSE on the RGBA channels of the final states. After the update the
/// `floor(0.15 · B)` worst members are reset to the seed and the rest are written
/// back to their slots.
pub fn train_pool(
    model: &mut AutomatonModel,
    target: &Tensor,
    seed: SeedSpec,
    config: &TrainConfig,
) -> Result<(LossLog, PoolState)> {
    config.validate()?;
    let (ct, h, w) = target.dims3("target")?;
    let c = model.channels;
    if ct < 4 || c < 4 {
        return Err(Error::config(format!(
            "pool training needs 4 visible channels (target {ct}, model {c})"
        )));
    }
    if config.pool_size < config.batch_size {
        return Err(Error::config(format!(
            "pool_size {} smaller than batch_size {}",
            config.pool_size, config.batch_size
        )));
    }
    if config.n_min == 0 {
        return Err(Error::config("n_min must be >= 1"));
    }
    let seed_grid = seed_state(c, h, w, seed)?;
    let seed_rows = seed_grid.chw_to_rows();
    let target_rows = target.channels(0, 4)?.chw_to_rows();
    let mut pool = PoolState::new(&seed_grid, config.pool_size)?;
    let opts = config.step_options();
    let base = RngStream::new(config.seed);
    let b_n = config.batch_size;
    let scale = 1.0 / (b_n * 4 * h * w) as f64;
    let replace = b_n * 15 / 100;
    let mut params = param_set(model);
    let mut log = LossLog::default();
    let report_every = (config.epochs / 20).max(1);

    for epoch in 0..config.epochs {
        let epoch_rng = base.fork(epoch as u64);
        let mut r = epoch_rng.at(u64::MAX, 0);
        let batch = sample(&mut r, config.pool_size, b_n).into_vec();
        let n = r.gen_range(config.n_min..=config.n_max);
        let stepper = Stepper::<f32>::new(model)?;
        let results: Vec<Result<(f64, Vec<f32>, Gradients<f32>)>> = batch
            .par_iter()
            .enumerate()
            .map(|(i, &slot)| {
                let rng = epoch_rng.fork(i as u64);
                let tape = stepper.record(pool.slots[slot].clone(), h, w, n, &opts, &rng, 0)?;
                let (l, g) = mse_rows(&tape.states[n], &target_rows, c, 0..4, scale);
                let mut sg = vec![None; n + 1];
                sg[n] = Some(g);
                let grads = stepper.backward_tape(&tape, &sg)?;
                let last = tape.states.into_iter().next_back().unwrap();
                Ok((l, last, grads))
            })
            .collect();
        let mut total = 0.0;
        let mut member_loss = Vec::with_capacity(b_n);
        let mut finals = Vec::with_capacity(b_n);
        let mut acc: Option<Gradients<f32>> = None;
        for res in results {
            let (l, last, g) = res?;
            total += l;
            member_loss.push(l);
            finals.push(last);
            match &mut acc {
                Some(a) => a.add_assign(&g),
                None => acc = Some(g),
            }
        }
        let lr = lr_at(config, epoch);
        apply_update(
            model,
            &mut params,
            &acc.expect("batch_size >= 1"),
            config,
            lr,
        )?;

        let worst = worst_indices(&member_loss, replace);
        for (i, (&slot, state)) in batch.iter().zip(finals).enumerate() {
            pool.history[slot].push((member_loss[i] / scale / (4 * h * w) as f64) as f32);
            pool.slots[slot] = if worst.contains(&i) {
                seed_rows.clone()
            } else {
                state
            };
        }
        log.push(epoch, total, lr);
        if epoch % report_every == 0 || epoch + 1 == config.epochs {
            log::info!("epoch {epoch}: loss {total:.6e} lr {lr:.3e} n {n}");
        }
    }
    Ok((log, pool))
}
