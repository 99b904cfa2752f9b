use std::ops::Range;

use super::step::{SelKind, StepTrace, Stepper};
use super::{AutomatonModel, StepOptions, Variant};
use crate::error::{Error, Result};
use crate::numerics::kernels::{
    dense_row_grad_input, dense_row_grad_params, perceive_rows_adjoint,
};
use crate::numerics::{Real, RngStream, Tensor};

/// A recorded rollout: all states plus per-step traces.
#[derive(Debug, Clone)]
pub struct Tape<T = f32> {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// `steps + 1` pixel-major states; element 0 is the input.
    pub states: Vec<Vec<T>>,
    pub traces: Vec<StepTrace<T>>,
}

impl<T: Real> Tape<T> {
    pub fn steps(&self) -> usize {
        self.traces.len()
    }

    pub fn state_tensor(&self, t: usize) -> Tensor {
        let rows: Vec<f32> = self.states[t].iter().map(|v| v.as_f32()).collect();
        Tensor::from_rows(&rows, self.channels, self.height, self.width)
    }
}

/// Parameter gradients in canonical order plus the gradient w.r.t. the input state.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    pub tensors: Vec<Vec<T>>,
    pub input: Vec<T>,
}

impl<T: Real> Gradients<T> {
    pub(crate) fn zeros_for(stepper: &Stepper<T>) -> Self {
        let mut tensors = Vec::new();
        for r in &stepper.rules {
            tensors.push(vec![T::zero(); r.w1.len()]);
            tensors.push(vec![T::zero(); r.b1.len()]);
            tensors.push(vec![T::zero(); r.w2.len()]);
            tensors.push(vec![T::zero(); r.b2.len()]);
        }
        if let Some(s) = &stepper.selector {
            tensors.push(vec![T::zero(); s.v1.len()]);
            tensors.push(vec![T::zero(); s.c1.len()]);
            tensors.push(vec![T::zero(); s.v2.len()]);
            tensors.push(vec![T::zero(); s.c2.len()]);
        }
        Self {
            tensors,
            input: Vec::new(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients<T>) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
    }

    /// Shaped `f32` tensors matching `model.named_tensors()`.
    pub fn to_tensors(&self, model: &AutomatonModel) -> Vec<Tensor> {
        model
            .named_tensors()
            .iter()
            .zip(&self.tensors)
            .map(|((_, t), g)| {
                Tensor::from_vec(t.shape(), g.iter().map(|v| v.as_f32()).collect())
                    .expect("gradient length matches parameter")
            })
            .collect()
    }
}

impl<T: Real> Stepper<T> {
    /// Roll out `steps` updates keeping everything backward needs.
    #[allow(clippy::too_many_arguments)]
    pub fn record(
        &self,
        state: Vec<T>,
        h: usize,
        w: usize,
        steps: usize,
        opts: &StepOptions,
        rng: &RngStream,
        start_step: u64,
    ) -> Result<Tape<T>> {
        let mut states = Vec::with_capacity(steps + 1);
        let mut traces = Vec::with_capacity(steps);
        states.push(state);
        for i in 0..steps {
            let (next, tr) = self.step_rows(
                states.last().unwrap(),
                h,
                w,
                opts,
                rng,
                start_step + i as u64,
                true,
            )?;
            states.push(next);
            traces.push(tr);
        }
        Ok(Tape {
            height: h,
            width: w,
            channels: self.c,
            states,
            traces,
        })
    }

    /// Backpropagate `state_grads[t]` (gradient of the loss w.r.t. state `t`,
    /// `None` for zero) through the whole tape.
    pub fn backward_tape(
        &self,
        tape: &Tape<T>,
        state_grads: &[Option<Vec<T>>],
    ) -> Result<Gradients<T>> {
        let n = tape.steps();
        if state_grads.len() != n + 1 {
            return Err(Error::usage(format!(
                "{} state gradients for a tape of {} states",
                state_grads.len(),
                n + 1
            )));
        }
        let len = tape.states[0].len();
        let mut grads = Gradients::zeros_for(self);
        let mut g = vec![T::zero(); len];
        for t in (0..=n).rev() {
            if let Some(sg) = &state_grads[t] {
                if sg.len() != len {
                    return Err(Error::Shape {
                        expected: vec![len],
                        actual: vec![sg.len()],
                    });
                }
                for (a, b) in g.iter_mut().zip(sg) {
                    *a += *b;
                }
            }
            if t > 0 {
                g = self.backward_step(&tape.traces[t - 1], &g, &mut grads)?;
            }
        }
        grads.input = g;
        Ok(grads)
    }

    /// Gradient w.r.t. the step's input state; parameter gradients accumulate into `grads`.
    pub(crate) fn backward_step(
        &self,
        tr: &StepTrace<T>,
        g_next: &[T],
        grads: &mut Gradients<T>,
    ) -> Result<Vec<T>> {
        if !tr.recorded {
            return Err(Error::usage(
                "backward through a step that was not recorded",
            ));
        }
        let (c, k_n) = (self.c, self.rules.len());
        let (h, w) = (tr.height, tr.width);
        let p_n = h * w;
        let cin = 3 * c;
        let zero = T::zero();

        let mut g_state = vec![zero; p_n * c];
        let mut g_delta = vec![zero; p_n * c];
        for p in 0..p_n {
            let gn = &g_next[p * c..(p + 1) * c];
            if self.residual {
                for ch in 0..c {
                    g_state[p * c + ch] += gn[ch];
                }
                if tr.update[p] {
                    g_delta[p * c..(p + 1) * c].copy_from_slice(gn);
                }
            } else if tr.update[p] {
                g_delta[p * c..(p + 1) * c].copy_from_slice(gn);
            } else {
                g_state[p * c..(p + 1) * c].copy_from_slice(gn);
            }
        }

        let mut g_feat = vec![zero; p_n * cin];
        let half = T::from_f64(0.5);
        for (k, rule) in self.rules.iter().enumerate() {
            let rows = &tr.rule_rows[k];
            let hid = &tr.rule_hidden[k];
            let out = &tr.rule_out[k];
            let (hd, cout) = (rule.hidden, rule.cout);
            let base = 4 * k;
            let (gw1, rest) = grads.tensors[base..base + 4].split_at_mut(1);
            let (gb1, rest) = rest.split_at_mut(1);
            let (gw2, gb2) = rest.split_at_mut(1);
            let (gw1, gb1, gw2, gb2) = (&mut gw1[0], &mut gb1[0], &mut gw2[0], &mut gb2[0]);

            let mut go = vec![zero; cout];
            let mut hx = vec![zero; rule.hx];
            let mut gh = vec![zero; rule.hx];
            for (r, &p) in rows.iter().enumerate() {
                let p = p as usize;
                let gd = &g_delta[p * c..(p + 1) * c];
                match tr.kind {
                    SelKind::Single => {
                        go[..c].copy_from_slice(gd);
                        if self.variant == Variant::Gca {
                            let o = &out[r * cout..(r + 1) * cout];
                            for ch in 0..c {
                                let std = (half * o[c + ch]).exp();
                                go[c + ch] = gd[ch] * tr.eps[p * c + ch] * half * std;
                            }
                        }
                    }
                    SelKind::Hard | SelKind::StraightThrough => {
                        if tr.selected[p] as usize != k {
                            continue;
                        }
                        go.copy_from_slice(gd);
                    }
                    SelKind::GumbelSoft | SelKind::Soft => {
                        let wk = tr.weights[p * k_n + k];
                        for ch in 0..c {
                            go[ch] = wk * gd[ch];
                        }
                    }
                }
                if go.iter().all(|v| *v == zero) {
                    continue;
                }
                let hrow = &hid[r * hd..(r + 1) * hd];
                hx[..hd].copy_from_slice(hrow);
                if rule.hx > hd {
                    hx[hd] = tr.noise[p];
                }
                dense_row_grad_params(&hx, &go, gw2, gb2);
                gh.iter_mut().for_each(|v| *v = zero);
                dense_row_grad_input(&go, &rule.w2, &mut gh);
                for j in 0..hd {
                    if !(hrow[j] > zero) {
                        gh[j] = zero;
                    }
                }
                let f = &tr.features[p * cin..(p + 1) * cin];
                dense_row_grad_params(f, &gh[..hd], gw1, gb1);
                dense_row_grad_input(&gh[..hd], &rule.w1, &mut g_feat[p * cin..(p + 1) * cin]);
            }
        }

        if let Some(sel) = &self.selector {
            if tr.kind != SelKind::Hard {
                self.selector_backward(sel, tr, &g_delta, grads, &mut g_state);
            }
        }

        perceive_rows_adjoint(&g_feat, c, h, w, &mut g_state);
        Ok(g_state)
    }

    fn selector_backward(
        &self,
        sel: &super::step::PreparedSelector<T>,
        tr: &StepTrace<T>,
        g_delta: &[T],
        grads: &mut Gradients<T>,
        g_state: &mut [T],
    ) {
        let (c, k_n, hs) = (self.c, sel.k, sel.hidden);
        let cin = 3 * c;
        let zero = T::zero();
        let base = 4 * self.rules.len();
        let (gv1, rest) = grads.tensors[base..base + 4].split_at_mut(1);
        let (gc1, rest) = rest.split_at_mut(1);
        let (gv2, gc2) = rest.split_at_mut(1);
        let (gv1, gc1, gv2, gc2) = (&mut gv1[0], &mut gc1[0], &mut gv2[0], &mut gc2[0]);

        let mut gy = vec![zero; k_n];
        let mut gl = vec![zero; k_n];
        let mut gp = vec![zero; k_n];
        let mut ghs = vec![zero; hs];
        for p in 0..tr.update.len() {
            if !tr.update[p] {
                continue;
            }
            let gd = &g_delta[p * c..(p + 1) * c];
            if gd.iter().all(|v| *v == zero) {
                continue;
            }
            for k in 0..k_n {
                let r = tr.rule_pos[k][p] as usize;
                let o = &tr.rule_out[k][r * c..(r + 1) * c];
                let mut dot = zero;
                for ch in 0..c {
                    dot += gd[ch] * o[ch];
                }
                gy[k] = dot;
            }
            let y = &tr.weights[p * k_n..(p + 1) * k_n];
            let mut yg = zero;
            for k in 0..k_n {
                yg += gy[k] * y[k];
            }
            match tr.kind {
                SelKind::StraightThrough | SelKind::GumbelSoft => {
                    for k in 0..k_n {
                        gl[k] = y[k] * (gy[k] - yg) / tr.tau;
                    }
                }
                SelKind::Soft => {
                    // weights = q / sum(q), q = probs * m
                    let probs = &tr.probs[p * k_n..(p + 1) * k_n];
                    let mut sum = zero;
                    for k in 0..k_n {
                        let m = tr.steer.as_ref().map_or(T::one(), |m| m[k]);
                        sum += probs[k] * m;
                    }
                    let mut pg = zero;
                    for k in 0..k_n {
                        let m = tr.steer.as_ref().map_or(T::one(), |m| m[k]);
                        gp[k] = (gy[k] - yg) / sum * m;
                        pg += gp[k] * probs[k];
                    }
                    for k in 0..k_n {
                        gl[k] = probs[k] * (gp[k] - pg);
                    }
                }
                SelKind::Single | SelKind::Hard => unreachable!(),
            }
            let hrow = &tr.sel_hidden[p * hs..(p + 1) * hs];
            dense_row_grad_params(hrow, &gl, gv2, gc2);
            ghs.iter_mut().for_each(|v| *v = zero);
            dense_row_grad_input(&gl, &sel.v2, &mut ghs);
            for j in 0..hs {
                if !(hrow[j] > zero) {
                    ghs[j] = zero;
                }
            }
            let s = &tr.features[p * cin..p * cin + c];
            dense_row_grad_params(s, &ghs, gv1, gc1);
            dense_row_grad_input(&ghs, &sel.v1, &mut g_state[p * c..(p + 1) * c]);
        }
    }
}

/// A loss value together with its gradient w.r.t. each state of a tape.
#[derive(Debug, Clone)]
pub struct LossNode {
    value: Tensor,
    state_grads: Vec<Option<Vec<f32>>>,
}

impl LossNode {
    /// `state_grads[t]` is the pixel-major gradient w.r.t. tape state `t`.
    pub fn new(value: Tensor, state_grads: Vec<Option<Vec<f32>>>) -> Self {
        Self { value, state_grads }
    }

    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn scalar(&self) -> Option<f32> {
        (self.value.shape().is_empty() || self.value.shape() == [1]).then(|| self.value.data()[0])
    }
}

#[derive(Debug, Clone)]
pub struct BackwardOutput {
    /// Canonical-order gradients shaped like the model parameters.
    pub grads: Vec<Tensor>,
    /// Gradient w.r.t. the tape's input grid, `[C,H,W]`.
    pub input_grad: Tensor,
}

/// Reverse pass of `loss` through `tape`. Fails unless the loss is a scalar.
pub fn backward(
    model: &AutomatonModel,
    tape: &Tape<f32>,
    loss: &LossNode,
) -> Result<BackwardOutput> {
    if loss.scalar().is_none() {
        return Err(Error::usage(format!(
            "backward needs a scalar loss, got shape {:?}",
            loss.value.shape()
        )));
    }
    let st = Stepper::<f32>::new(model)?;
    let g = st.backward_tape(tape, &loss.state_grads)?;
    Ok(BackwardOutput {
        grads: g.to_tensors(model),
        input_grad: Tensor::from_rows(&g.input, tape.channels, tape.height, tape.width),
    })
}

/// Mean squared error between selected channels of pixel-major `state` and a
/// `[C',H,W]`-shaped target given as rows. Returns `(loss, dloss/dstate)`,
/// the loss scaled by `scale` before differentiation.
pub(crate) fn mse_rows<T: Real>(
    state: &[T],
    target_rows: &[f32],
    c: usize,
    channels: Range<usize>,
    scale: f64,
) -> (f64, Vec<T>) {
    let nc = channels.len();
    let p_n = state.len() / c;
    let mut g = vec![T::zero(); state.len()];
    let mut acc = 0.0f64;
    for p in 0..p_n {
        for (j, ch) in channels.clone().enumerate() {
            let diff = state[p * c + ch].as_f64() - f64::from(target_rows[p * nc + j]);
            acc += diff * diff;
            g[p * c + ch] = T::from_f64(2.0 * diff * scale);
        }
    }
    (acc * scale, g)
}

/// Mean squared error over `channels` between tape states and targets, averaged
/// over all `(state, target)` pairs and elements.
pub fn mse_loss(
    tape: &Tape<f32>,
    targets: &[(usize, &Tensor)],
    channels: Range<usize>,
) -> Result<LossNode> {
    let (c, h, w) = (tape.channels, tape.height, tape.width);
    if channels.end > c || channels.is_empty() {
        return Err(Error::usage(format!(
            "loss channels {channels:?} out of range for {c} channels"
        )));
    }
    if targets.is_empty() {
        return Err(Error::usage("mse_loss: no targets"));
    }
    let nc = channels.len();
    let scale = 1.0 / (targets.len() * nc * h * w) as f64;
    let mut grads: Vec<Option<Vec<f32>>> = vec![None; tape.states.len()];
    let mut total = 0.0;
    for &(t, target) in targets {
        if t >= tape.states.len() {
            return Err(Error::usage(format!(
                "loss refers to state {t} beyond the tape"
            )));
        }
        if target.shape() != [nc, h, w] {
            return Err(Error::Shape {
                expected: vec![nc, h, w],
                actual: target.shape().to_vec(),
            });
        }
        let (l, g) = mse_rows(
            &tape.states[t],
            &target.chw_to_rows(),
            c,
            channels.clone(),
            scale,
        );
        total += l;
        match &mut grads[t] {
            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += *b),
            slot => *slot = Some(g),
        }
    }
    Ok(LossNode::new(Tensor::scalar(total as f32), grads))
}

/// Record a rollout of `steps` updates from a `[C,H,W]` grid.
pub fn record_rollout(
    model: &AutomatonModel,
    grid: &Tensor,
    steps: usize,
    opts: &StepOptions,
    rng: &RngStream,
) -> Result<Tape<f32>> {
    let (c, h, w) = grid.dims3("grid")?;
    if c != model.channels {
        return Err(Error::Shape {
            expected: vec![model.channels, h, w],
            actual: grid.shape().to_vec(),
        });
    }
    Stepper::<f32>::new(model)?.record(grid.chw_to_rows(), h, w, steps, opts, rng, 0)
}
