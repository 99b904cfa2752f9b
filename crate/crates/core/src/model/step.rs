use super::{AutomatonModel, RuleNet, SelectionMode, SelectorNet, StepOptions, Variant};
use crate::error::{Error, Result};
use crate::numerics::kernels::{dense_row, dense_rows, perceive_rows, transpose};
use crate::numerics::rng::categorical_unchecked;
use crate::numerics::{CellRng, Real, RngStream, Tensor};

// Draw-index offsets inside one (step, cell) coordinate.
pub(crate) const DRAW_DROPOUT: u64 = 0;
pub(crate) const DRAW_SELECT: u64 = 1 << 20;
pub(crate) const DRAW_NOISE: u64 = 2 << 20;
pub(crate) const DRAW_GCA: u64 = 3 << 20;

fn to_real<T: Real>(v: &[f32]) -> Vec<T> {
    v.iter().map(|&x| T::from_f32(x)).collect()
}

#[inline]
fn relu_in_place<T: Real>(v: &mut [T]) {
    for x in v {
        if *x < T::zero() {
            *x = T::zero();
        }
    }
}

pub(crate) fn softmax_into<T: Real>(a: &[T], out: &mut [T]) {
    let m = a
        .iter()
        .fold(T::neg_infinity(), |m, &v| if v > m { v } else { m });
    let mut s = T::zero();
    for (o, &v) in out.iter_mut().zip(a) {
        *o = (v - m).exp();
        s += *o;
    }
    for o in out.iter_mut() {
        *o = *o / s;
    }
}

/// First index of the maximum.
pub(crate) fn argmax<T: PartialOrd + Copy>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate().skip(1) {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Gumbel-perturbed softmax of `base`; draws one uniform per entry from `rng`.
fn gumbel_core<T: Real>(
    base: &[T],
    tau: T,
    rng: &mut CellRng,
    g_out: &mut [T],
    a_buf: &mut [T],
    y_out: &mut [T],
) -> usize {
    for k in 0..base.len() {
        let u = rng.uniform().clamp(1e-9, 1.0 - 1e-9);
        let g = T::from_f64(-(-u.ln()).ln());
        g_out[k] = g;
        a_buf[k] = (base[k] + g) / tau;
    }
    softmax_into(a_buf, y_out);
    argmax(y_out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GumbelSample {
    pub soft: Vec<f32>,
    pub index: usize,
    /// One-hot of `index` when sampled hard, `soft` otherwise.
    pub value: Vec<f32>,
}

/// Gumbel-Softmax sample over `logits`. Consumes one draw per entry.
pub fn gumbel_softmax(
    logits: &[f32],
    temperature: f32,
    rng: &mut CellRng,
    hard: bool,
) -> Result<GumbelSample> {
    if logits.is_empty() {
        return Err(Error::usage("gumbel_softmax: empty logits"));
    }
    if !(temperature > 0.0) {
        return Err(Error::usage("gumbel_softmax: temperature must be positive"));
    }
    let k = logits.len();
    let (mut g, mut a, mut y) = (vec![0.0; k], vec![0.0; k], vec![0.0; k]);
    let index = gumbel_core(logits, temperature, rng, &mut g, &mut a, &mut y);
    let value = if hard {
        (0..k).map(|i| if i == index { 1.0 } else { 0.0 }).collect()
    } else {
        y.clone()
    };
    Ok(GumbelSample {
        soft: y,
        index,
        value,
    })
}

pub(crate) struct PreparedRule<T> {
    pub(crate) w1: Vec<T>,
    pub(crate) w1t: Vec<T>,
    pub(crate) b1: Vec<T>,
    pub(crate) w2: Vec<T>,
    pub(crate) w2t: Vec<T>,
    pub(crate) b2: Vec<T>,
    pub(crate) cin: usize,
    pub(crate) hidden: usize,
    pub(crate) hx: usize,
    pub(crate) cout: usize,
}

impl<T: Real> PreparedRule<T> {
    fn new(r: &RuleNet) -> Self {
        let (hidden, cin) = (r.hidden(), r.in_features());
        let hx = hidden + r.noise_dim;
        let cout = r.out_channels();
        let w1 = to_real(r.w1.data());
        let w2 = to_real(r.w2.data());
        Self {
            w1t: transpose(&w1, hidden, cin),
            w2t: transpose(&w2, cout, hx),
            w1,
            w2,
            b1: to_real(r.b1.data()),
            b2: to_real(r.b2.data()),
            cin,
            hidden,
            hx,
            cout,
        }
    }

    /// Hidden activations and outputs for `n` gathered feature rows.
    fn eval(&self, f: &[T], noise: Option<&[T]>, n: usize) -> (Vec<T>, Vec<T>) {
        let mut hid = vec![T::zero(); n * self.hidden];
        dense_rows(f, self.cin, &self.w1t, &self.b1, &mut hid);
        relu_in_place(&mut hid);
        let mut out = vec![T::zero(); n * self.cout];
        match noise {
            Some(z) => {
                let mut hx = Vec::with_capacity(n * self.hx);
                for r in 0..n {
                    hx.extend_from_slice(&hid[r * self.hidden..(r + 1) * self.hidden]);
                    hx.push(z[r]);
                }
                dense_rows(&hx, self.hx, &self.w2t, &self.b2, &mut out);
            }
            None => dense_rows(&hid, self.hidden, &self.w2t, &self.b2, &mut out),
        }
        (hid, out)
    }
}

pub(crate) struct PreparedSelector<T> {
    pub(crate) v1: Vec<T>,
    pub(crate) v1t: Vec<T>,
    pub(crate) c1: Vec<T>,
    pub(crate) v2: Vec<T>,
    pub(crate) v2t: Vec<T>,
    pub(crate) c2: Vec<T>,
    pub(crate) hidden: usize,
    pub(crate) k: usize,
}

impl<T: Real> PreparedSelector<T> {
    fn new(s: &SelectorNet, channels: usize) -> Self {
        let (hidden, k) = (s.hidden(), s.rules());
        let v1 = to_real(s.v1.data());
        let v2 = to_real(s.v2.data());
        Self {
            v1t: transpose(&v1, hidden, channels),
            v2t: transpose(&v2, k, hidden),
            v1,
            v2,
            c1: to_real(s.c1.data()),
            c2: to_real(s.c2.data()),
            hidden,
            k,
        }
    }

    /// Selector hidden layer and logits for one cell state.
    #[inline]
    fn forward(&self, s: &[T], hid: &mut [T], logits: &mut [T]) {
        dense_row(s, &self.v1t, &self.c1, hid);
        relu_in_place(hid);
        dense_row(hid, &self.v2t, &self.c2, logits);
    }
}

/// How the rule update of a step is formed from the rule outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum SelKind {
    /// Single-rule variants.
    Single,
    /// Sampled or argmax rule; no gradient reaches the selector.
    Hard,
    /// Hard Gumbel sample in the forward pass, soft gradient backward.
    StraightThrough,
    /// Relaxed Gumbel-Softmax weights.
    GumbelSoft,
    /// Probability-weighted average.
    Soft,
}

/// Everything one step consumed and produced, pixel-major.
///
/// The draw records (`update`, `noise`, `gumbel`, `eps`, `selected`) are what an
/// external reference implementation needs to replay the step exactly.
#[derive(Debug, Clone)]
pub struct StepTrace<T = f32> {
    pub(crate) kind: SelKind,
    pub(crate) tau: T,
    pub(crate) recorded: bool,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub rules: usize,
    /// `false` where dropout froze the cell.
    pub update: Vec<bool>,
    /// `[P]` intrinsic noise (noise variant only).
    pub noise: Vec<T>,
    /// `[P]` applied rule (mixtures only; argmax of the weights in soft modes).
    pub selected: Vec<u16>,
    /// `[P][K]` mixing weights: Gumbel-Softmax output when training,
    /// steered probabilities otherwise.
    pub weights: Vec<T>,
    /// `[P][K]` unsteered selector probabilities.
    pub probs: Vec<T>,
    /// `[P][K]` Gumbel perturbations (training only).
    pub gumbel: Vec<T>,
    /// `[P][C]` reparameterization draws (GCA only).
    pub eps: Vec<T>,
    pub(crate) steer: Option<Vec<T>>,
    pub(crate) features: Vec<T>,
    pub(crate) sel_hidden: Vec<T>,
    pub(crate) rule_rows: Vec<Vec<u32>>,
    pub(crate) rule_pos: Vec<Vec<u32>>,
    pub(crate) rule_hidden: Vec<Vec<T>>,
    pub(crate) rule_out: Vec<Vec<T>>,
}

impl<T: Real> StepTrace<T> {
    fn new(kind: SelKind, tau: T, h: usize, w: usize, c: usize, k: usize) -> Self {
        Self {
            kind,
            tau,
            recorded: false,
            height: h,
            width: w,
            channels: c,
            rules: k,
            update: Vec::new(),
            noise: Vec::new(),
            selected: Vec::new(),
            weights: Vec::new(),
            probs: Vec::new(),
            gumbel: Vec::new(),
            eps: Vec::new(),
            steer: None,
            features: Vec::new(),
            sel_hidden: Vec::new(),
            rule_rows: Vec::new(),
            rule_pos: Vec::new(),
            rule_hidden: Vec::new(),
            rule_out: Vec::new(),
        }
    }

    pub fn is_recorded(&self) -> bool {
        self.recorded
    }

    pub fn assignment(&self) -> RuleAssignment {
        let (h, w, k) = (self.height, self.width, self.rules);
        let probs = (!self.weights.is_empty()).then(|| {
            let rows: Vec<f32> = self.weights.iter().map(|v| v.as_f32()).collect();
            Tensor::from_rows(&rows, k, h, w)
        });
        RuleAssignment {
            height: h,
            width: w,
            rules: k,
            selected: self.selected.clone(),
            probs,
        }
    }
}

/// Per-cell rule choice of one step.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleAssignment {
    pub height: usize,
    pub width: usize,
    pub rules: usize,
    /// Row-major rule index per cell; empty for single-rule variants.
    pub selected: Vec<u16>,
    /// `[K,H,W]` weights the step used; `None` for single-rule variants.
    pub probs: Option<Tensor>,
}

/// A model's weights converted and laid out for repeated stepping.
pub struct Stepper<T: Real = f32> {
    pub(crate) variant: Variant,
    pub(crate) c: usize,
    pub(crate) residual: bool,
    pub(crate) dropout: f64,
    pub(crate) rules: Vec<PreparedRule<T>>,
    pub(crate) selector: Option<PreparedSelector<T>>,
}

impl<T: Real> Stepper<T> {
    pub fn new(model: &AutomatonModel) -> Result<Self> {
        model.validate()?;
        Ok(Self {
            variant: model.variant,
            c: model.channels,
            residual: model.residual,
            dropout: f64::from(model.dropout),
            rules: model.rules.iter().map(PreparedRule::new).collect(),
            selector: model
                .selector
                .as_ref()
                .map(|s| PreparedSelector::new(s, model.channels)),
        })
    }

    pub fn channels(&self) -> usize {
        self.c
    }

    pub fn num_rules(&self) -> usize {
        self.rules.len()
    }

    pub(crate) fn kind(&self, opts: &StepOptions) -> SelKind {
        if self.selector.is_none() {
            SelKind::Single
        } else if opts.train_mode {
            if opts.straight_through {
                SelKind::StraightThrough
            } else {
                SelKind::GumbelSoft
            }
        } else if opts.selection == SelectionMode::Soft {
            SelKind::Soft
        } else {
            SelKind::Hard
        }
    }

    /// One synchronous update of a pixel-major `[P][C]` state.
    ///
    /// With `record` the trace keeps the intermediates needed for backward.
    #[allow(clippy::too_many_arguments)]
    pub fn step_rows(
        &self,
        state: &[T],
        h: usize,
        w: usize,
        opts: &StepOptions,
        rng: &RngStream,
        step: u64,
        record: bool,
    ) -> Result<(Vec<T>, StepTrace<T>)> {
        let (c, k_n, p_n) = (self.c, self.rules.len(), h * w);
        if state.len() != p_n * c {
            return Err(Error::Shape {
                expected: vec![p_n, c],
                actual: vec![state.len()],
            });
        }
        opts.validate(k_n)?;
        let kind = self.kind(opts);
        let mut tr = StepTrace::new(kind, T::from_f32(opts.gumbel_temperature), h, w, c, k_n);

        let cin = 3 * c;
        let mut features = vec![T::zero(); p_n * cin];
        perceive_rows(state, c, h, w, &mut features);

        tr.update = if self.dropout > 0.0 {
            (0..p_n)
                .map(|p| rng.at(step, p as u64).with_draw(DRAW_DROPOUT).uniform() >= self.dropout)
                .collect()
        } else {
            vec![true; p_n]
        };
        if self.variant.has_noise() {
            tr.noise = (0..p_n)
                .map(|p| T::from_f64(rng.at(step, p as u64).with_draw(DRAW_NOISE).normal()))
                .collect();
        }
        if let Some(sel) = &self.selector {
            self.select(sel, state, opts, rng, step, &mut tr)?;
        }

        for (k, rule) in self.rules.iter().enumerate() {
            let mut rows = Vec::new();
            let mut pos = vec![u32::MAX; p_n];
            for p in 0..p_n {
                if !tr.update[p] {
                    continue;
                }
                let needed = match kind {
                    SelKind::Single | SelKind::GumbelSoft | SelKind::Soft => true,
                    SelKind::Hard => tr.selected[p] as usize == k,
                    SelKind::StraightThrough => record || tr.selected[p] as usize == k,
                };
                if needed {
                    pos[p] = rows.len() as u32;
                    rows.push(p as u32);
                }
            }
            let n = rows.len();
            let mut f = Vec::with_capacity(n * cin);
            for &p in &rows {
                let p = p as usize;
                f.extend_from_slice(&features[p * cin..(p + 1) * cin]);
            }
            let noise: Option<Vec<T>> = (rule.hx > rule.hidden)
                .then(|| rows.iter().map(|&p| tr.noise[p as usize]).collect());
            let (hid, out) = rule.eval(&f, noise.as_deref(), n);
            tr.rule_rows.push(rows);
            tr.rule_pos.push(pos);
            tr.rule_hidden.push(if record { hid } else { Vec::new() });
            tr.rule_out.push(out);
        }

        let mut next = state.to_vec();
        if self.variant == Variant::Gca {
            tr.eps = vec![T::zero(); p_n * c];
        }
        let half = T::from_f64(0.5);
        let mut d = vec![T::zero(); c];
        for p in 0..p_n {
            if !tr.update[p] {
                continue;
            }
            match kind {
                SelKind::Single => {
                    let cout = self.rules[0].cout;
                    let r = tr.rule_pos[0][p] as usize;
                    let o = &tr.rule_out[0][r * cout..(r + 1) * cout];
                    if self.variant == Variant::Gca {
                        for ch in 0..c {
                            let e = rng
                                .at(step, p as u64)
                                .with_draw(DRAW_GCA + 2 * ch as u64)
                                .normal();
                            let e = T::from_f64(e);
                            tr.eps[p * c + ch] = e;
                            d[ch] = o[ch] + (half * o[c + ch]).exp() * e;
                        }
                    } else {
                        d.copy_from_slice(o);
                    }
                }
                SelKind::Hard | SelKind::StraightThrough => {
                    let z = tr.selected[p] as usize;
                    let r = tr.rule_pos[z][p] as usize;
                    d.copy_from_slice(&tr.rule_out[z][r * c..(r + 1) * c]);
                }
                SelKind::GumbelSoft | SelKind::Soft => {
                    d.iter_mut().for_each(|v| *v = T::zero());
                    for k in 0..k_n {
                        let wk = tr.weights[p * k_n + k];
                        let r = tr.rule_pos[k][p] as usize;
                        let o = &tr.rule_out[k][r * c..(r + 1) * c];
                        for ch in 0..c {
                            d[ch] += wk * o[ch];
                        }
                    }
                }
            }
            let s = &mut next[p * c..(p + 1) * c];
            if self.residual {
                for ch in 0..c {
                    s[ch] += d[ch];
                }
            } else {
                s.copy_from_slice(&d);
            }
        }

        if let Some(i) = next.iter().position(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                step,
                detail: format!("non-finite state at cell {} channel {}", i / c, i % c),
            });
        }

        if record {
            tr.features = features;
            tr.recorded = true;
        } else {
            tr.sel_hidden = Vec::new();
            tr.rule_rows = Vec::new();
            tr.rule_pos = Vec::new();
            tr.rule_out = Vec::new();
        }
        Ok((next, tr))
    }

    fn select(
        &self,
        sel: &PreparedSelector<T>,
        state: &[T],
        opts: &StepOptions,
        rng: &RngStream,
        step: u64,
        tr: &mut StepTrace<T>,
    ) -> Result<()> {
        let (c, k, hs) = (self.c, sel.k, sel.hidden);
        let p_n = state.len() / c;
        let train = matches!(tr.kind, SelKind::StraightThrough | SelKind::GumbelSoft);
        tr.selected = vec![0; p_n];
        tr.weights = vec![T::zero(); p_n * k];
        tr.probs = vec![T::zero(); p_n * k];
        tr.sel_hidden = vec![T::zero(); p_n * hs];
        if train {
            tr.gumbel = vec![T::zero(); p_n * k];
        }
        tr.steer = opts.steering.as_deref().map(to_real);
        let log_m: Option<Vec<T>> = tr
            .steer
            .as_ref()
            .map(|m| m.iter().map(|v| v.ln()).collect());

        let mut logits = vec![T::zero(); k];
        let mut a = vec![T::zero(); k];
        let mut q64 = vec![0.0f64; k];
        for p in 0..p_n {
            let s = &state[p * c..(p + 1) * c];
            sel.forward(s, &mut tr.sel_hidden[p * hs..(p + 1) * hs], &mut logits);
            softmax_into(&logits, &mut tr.probs[p * k..(p + 1) * k]);
            let z = if train {
                if let Some(lm) = &log_m {
                    for i in 0..k {
                        logits[i] += lm[i];
                    }
                }
                let mut r = rng.at(step, p as u64).with_draw(DRAW_SELECT);
                gumbel_core(
                    &logits,
                    tr.tau,
                    &mut r,
                    &mut tr.gumbel[p * k..(p + 1) * k],
                    &mut a,
                    &mut tr.weights[p * k..(p + 1) * k],
                )
            } else {
                let probs = &tr.probs[p * k..(p + 1) * k];
                let q = &mut tr.weights[p * k..(p + 1) * k];
                match &tr.steer {
                    Some(m) => {
                        let mut sum = T::zero();
                        for i in 0..k {
                            q[i] = probs[i] * m[i];
                            sum += q[i];
                        }
                        if !(sum > T::zero()) {
                            return Err(Error::usage(format!(
                                "steering leaves no probability mass at cell {p}"
                            )));
                        }
                        for v in q.iter_mut() {
                            *v = *v / sum;
                        }
                    }
                    None => q.copy_from_slice(probs),
                }
                if tr.kind == SelKind::Hard && opts.selection == SelectionMode::Sample {
                    for i in 0..k {
                        q64[i] = q[i].as_f64();
                    }
                    let u = rng.at(step, p as u64).with_draw(DRAW_SELECT).uniform();
                    categorical_unchecked(u, &q64)
                } else {
                    argmax(q)
                }
            };
            tr.selected[p] = z as u16;
        }
        Ok(())
    }

    /// `steps` updates from `state`; returns all `steps + 1` states.
    #[allow(clippy::too_many_arguments)]
    pub fn rollout_rows(
        &self,
        state: Vec<T>,
        h: usize,
        w: usize,
        steps: usize,
        opts: &StepOptions,
        rng: &RngStream,
        start_step: u64,
    ) -> Result<Vec<Vec<T>>> {
        let mut out = Vec::with_capacity(steps + 1);
        out.push(state);
        for i in 0..steps {
            let (next, _) = self.step_rows(
                out.last().unwrap(),
                h,
                w,
                opts,
                rng,
                start_step + i as u64,
                false,
            )?;
            out.push(next);
        }
        Ok(out)
    }
}

fn check_grid(model: &AutomatonModel, grid: &Tensor) -> Result<(usize, usize, usize)> {
    let (c, h, w) = grid.dims3("grid")?;
    if c != model.channels {
        return Err(Error::Shape {
            expected: vec![model.channels, h, w],
            actual: grid.shape().to_vec(),
        });
    }
    Ok((c, h, w))
}

/// Apply one update to a `[C,H,W]` grid. `step_index` addresses the random draws.
pub fn step(
    model: &AutomatonModel,
    grid: &Tensor,
    opts: &StepOptions,
    rng: &RngStream,
    step_index: u64,
) -> Result<(Tensor, RuleAssignment)> {
    let (c, h, w) = check_grid(model, grid)?;
    let st = Stepper::<f32>::new(model)?;
    let (next, tr) = st.step_rows(&grid.chw_to_rows(), h, w, opts, rng, step_index, false)?;
    Ok((Tensor::from_rows(&next, c, h, w), tr.assignment()))
}

/// Like [`step`] but returns the full trace, including the random draws used.
pub fn step_traced(
    model: &AutomatonModel,
    grid: &Tensor,
    opts: &StepOptions,
    rng: &RngStream,
    step_index: u64,
) -> Result<(Tensor, StepTrace<f32>)> {
    let (c, h, w) = check_grid(model, grid)?;
    let st = Stepper::<f32>::new(model)?;
    let (next, tr) = st.step_rows(&grid.chw_to_rows(), h, w, opts, rng, step_index, true)?;
    Ok((Tensor::from_rows(&next, c, h, w), tr))
}

/// `n_steps` updates; element 0 is the input grid. Step `i` uses draw step index `i`.
pub fn rollout(
    model: &AutomatonModel,
    grid: &Tensor,
    n_steps: usize,
    opts: &StepOptions,
    rng: &RngStream,
) -> Result<Vec<Tensor>> {
    let (c, h, w) = check_grid(model, grid)?;
    let st = Stepper::<f32>::new(model)?;
    let states = st.rollout_rows(grid.chw_to_rows(), h, w, n_steps, opts, rng, 0)?;
    Ok(states
        .iter()
        .map(|s| Tensor::from_rows(s, c, h, w))
        .collect())
}

/// Per-cell rule probabilities `[K,H,W]`, optionally rescaled by steering
/// multipliers and renormalized.
pub fn select_probs(
    selector: &SelectorNet,
    grid: &Tensor,
    steering: Option<&[f32]>,
) -> Result<Tensor> {
    let (c, h, w) = grid.dims3("select_probs")?;
    if selector.v1.shape()[1] != c {
        return Err(Error::Shape {
            expected: vec![selector.v1.shape()[1], h, w],
            actual: grid.shape().to_vec(),
        });
    }
    let k = selector.rules();
    let opts = StepOptions {
        steering: steering.map(|m| m.to_vec()),
        ..StepOptions::default()
    };
    opts.validate(k)?;
    let sel = PreparedSelector::<f32>::new(selector, c);
    let rows = grid.chw_to_rows();
    let mut hid = vec![0.0; sel.hidden];
    let mut logits = vec![0.0; k];
    let mut out = vec![0.0; h * w * k];
    for (p, s) in rows.chunks_exact(c).enumerate() {
        sel.forward(s, &mut hid, &mut logits);
        let q = &mut out[p * k..(p + 1) * k];
        softmax_into(&logits, q);
        if let Some(m) = steering {
            let mut sum = 0.0;
            for i in 0..k {
                q[i] *= m[i];
                sum += q[i];
            }
            if !(sum > 0.0) {
                return Err(Error::usage(format!(
                    "steering leaves no probability mass at cell {p}"
                )));
            }
            q.iter_mut().for_each(|v| *v /= sum);
        }
    }
    Ok(Tensor::from_rows(&out, k, h, w))
}

/// Output of one rule network on perception features `[3C,H,W]`.
/// `noise` (`[1,H,W]`) is required exactly when the rule has a noise input.
pub fn rule_delta(rule: &RuleNet, features: &Tensor, noise: Option<&Tensor>) -> Result<Tensor> {
    let (cin, h, w) = features.dims3("rule_delta")?;
    if cin != rule.in_features() {
        return Err(Error::Shape {
            expected: vec![rule.in_features(), h, w],
            actual: features.shape().to_vec(),
        });
    }
    let noise_rows = match (rule.noise_dim, noise) {
        (0, None) => None,
        (1, Some(z)) => {
            if z.shape() != [1, h, w] {
                return Err(Error::Shape {
                    expected: vec![1, h, w],
                    actual: z.shape().to_vec(),
                });
            }
            Some(z.data().to_vec())
        }
        (0, Some(_)) => return Err(Error::usage("rule_delta: rule takes no noise input")),
        _ => return Err(Error::usage("rule_delta: rule requires a noise input")),
    };
    let prepared = PreparedRule::<f32>::new(rule);
    let (_, out) = prepared.eval(&features.chw_to_rows(), noise_rows.as_deref(), h * w);
    Ok(Tensor::from_rows(&out, prepared.cout, h, w))
}
