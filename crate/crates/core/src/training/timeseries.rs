use rand::Rng;
use rayon::prelude::*;

use super::{apply_update, lr_at, param_set, LossLog, TrainConfig};
use crate::error::{Error, Result};
use crate::model::backward::mse_rows;
use crate::model::{AutomatonModel, Gradients, Stepper};
use crate::numerics::{RngStream, Tensor};

/// Check sequences and return `(frames, data channels, height, width)`.
fn sequence_dims(
    model: &AutomatonModel,
    sequences: &[Vec<Tensor>],
) -> Result<(usize, usize, usize, usize)> {
    let first = sequences
        .first()
        .and_then(|s| s.first())
        .ok_or_else(|| Error::usage("train_timeseries: no sequences"))?;
    let (cd, h, w) = first.dims3("sequence frame")?;
    let frames = sequences[0].len();
    for s in sequences {
        if s.len() != frames {
            return Err(Error::usage("all sequences must have the same length"));
        }
        for f in s {
            if f.shape() != [cd, h, w] {
                return Err(Error::Shape {
                    expected: vec![cd, h, w],
                    actual: f.shape().to_vec(),
                });
            }
        }
    }
    if cd > model.channels {
        return Err(Error::config(format!(
            "sequences have {cd} channels but the model only {}",
            model.channels
        )));
    }
    Ok((frames, cd, h, w))
}

/// Pixel-major state with the data channels copied in and hidden channels zero.
fn embed(frame_rows: &[f32], cd: usize, c: usize) -> Vec<f32> {
    let p_n = frame_rows.len() / cd;
    let mut out = vec![0.0; p_n * c];
    for p in 0..p_n {
        out[p * c..p * c + cd].copy_from_slice(&frame_rows[p * cd..(p + 1) * cd]);
    }
    out
}

/// Fit a model to frame sequences.
///
/// Every epoch draws `batch_size` sequences with replacement and one window
/// start each. From the (embedded) frame at the window start the model runs
/// continuously for `J = floor(window / tau)` segments of `tau` steps; the state
/// after each segment is compared with the matching frame. The loss is the mean
/// squared error over all supervised elements of the batch.
pub fn train_timeseries(
    model: &mut AutomatonModel,
    sequences: &[Vec<Tensor>],
    config: &TrainConfig,
) -> Result<LossLog> {
    config.validate()?;
    let (frames, cd, h, w) = sequence_dims(model, sequences)?;
    let transitions = frames.saturating_sub(1);
    if config.window < config.tau || config.window > transitions {
        return Err(Error::config(format!(
            "window {} must satisfy tau ({}) <= window <= sequence transitions ({transitions})",
            config.window, config.tau
        )));
    }
    let segments = config.window / config.tau;
    let c = model.channels;
    let rows: Vec<Vec<Vec<f32>>> = sequences
        .iter()
        .map(|s| s.iter().map(|f| f.chw_to_rows()).collect())
        .collect();
    let opts = config.step_options();
    let base = RngStream::new(config.seed);
    let scale = 1.0 / (config.batch_size * segments * cd * h * w) as f64;
    let mut params = param_set(model);
    let mut log = LossLog::default();
    let report_every = (config.epochs / 20).max(1);

    for epoch in 0..config.epochs {
        let epoch_rng = base.fork(epoch as u64);
        let picks: Vec<(usize, usize)> = (0..config.batch_size)
            .map(|i| {
                let mut r = epoch_rng.at(u64::MAX, i as u64);
                (
                    r.gen_range(0..sequences.len()),
                    r.gen_range(0..=transitions - config.window),
                )
            })
            .collect();
        let stepper = Stepper::<f32>::new(model)?;
        let results: Vec<Result<(f64, Gradients<f32>)>> = picks
            .par_iter()
            .enumerate()
            .map(|(i, &(seq, t0))| {
                let rng = epoch_rng.fork(i as u64);
                let state = embed(&rows[seq][t0], cd, c);
                let steps = segments * config.tau;
                let tape = stepper.record(state, h, w, steps, &opts, &rng, 0)?;
                let mut grads = vec![None; steps + 1];
                let mut loss = 0.0;
                for j in 1..=segments {
                    let t = j * config.tau;
                    let (l, g) = mse_rows(&tape.states[t], &rows[seq][t0 + t], c, 0..cd, scale);
                    loss += l;
                    grads[t] = Some(g);
                }
                Ok((loss, stepper.backward_tape(&tape, &grads)?))
            })
            .collect();
        let mut total = 0.0;
        let mut acc: Option<Gradients<f32>> = None;
        for r in results {
            let (l, g) = r?;
            total += l;
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
        log.push(epoch, total, lr);
        if epoch % report_every == 0 || epoch + 1 == config.epochs {
            log::info!("epoch {epoch}: loss {total:.6e} lr {lr:.3e}");
        }
    }
    Ok(log)
}
