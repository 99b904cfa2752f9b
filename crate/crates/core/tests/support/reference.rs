//! Naive `f64` reference forward pass and a finite-difference gradient checker.
//!
//! Written directly from the model definition on channel-major arrays, sharing
//! nothing with the crate's kernels except the recorded random draws.

#![allow(dead_code)]

use mnca_core::model::{StepTrace, Stepper};
use mnca_core::{AutomatonModel, ModelSpec, RngStream, StepOptions, Variant};

const KX: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
const KY: [[f64; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];

#[derive(Clone, Debug, PartialEq)]
pub enum Mode {
    Single,
    Hard,
    StraightThrough { tau: f64 },
    GumbelSoft { tau: f64 },
    Soft { steer: Option<Vec<f64>> },
}

#[derive(Clone, Debug)]
pub struct Draws {
    pub update: Vec<bool>,
    pub noise: Vec<f64>,
    pub gumbel: Vec<f64>,
    pub eps: Vec<f64>,
    pub selected: Vec<usize>,
}

impl Draws {
    pub fn from_trace(t: &StepTrace<f64>) -> Self {
        Self {
            update: t.update.clone(),
            noise: t.noise.clone(),
            gumbel: t.gumbel.clone(),
            eps: t.eps.clone(),
            selected: t.selected.iter().map(|&v| v as usize).collect(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct RefModel {
    pub variant: Variant,
    pub c: usize,
    pub hd: usize,
    pub k: usize,
    pub residual: bool,
    /// Canonical order: per rule w1, b1, w2, b2; then v1, c1, v2, c2.
    pub params: Vec<Vec<f64>>,
}

pub struct RefStep {
    /// `[C][H][W]`
    pub next: Vec<f64>,
    /// `[P][K][C]` rule updates (GCA: mean part only is unused).
    pub phi: Vec<Vec<Vec<f64>>>,
    /// `[P][K]` selection weights (Gumbel-Softmax or steered probabilities).
    pub y: Vec<Vec<f64>>,
}

impl RefModel {
    pub fn from_model(m: &AutomatonModel) -> Self {
        Self {
            variant: m.variant,
            c: m.channels,
            hd: m.hidden_dim(),
            k: m.num_rules(),
            residual: m.residual,
            params: m
                .named_tensors()
                .iter()
                .map(|(_, t)| t.data().iter().map(|&v| f64::from(v)).collect())
                .collect(),
        }
    }

    fn cout(&self) -> usize {
        if self.variant == Variant::Gca {
            2 * self.c
        } else {
            self.c
        }
    }

    fn relu(v: f64) -> f64 {
        if v > 0.0 {
            v
        } else {
            0.0
        }
    }

    fn softmax(a: &[f64]) -> Vec<f64> {
        let m = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = a.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        e.iter().map(|v| v / s).collect()
    }

    /// Perception features of pixel (y, x): `[state; d/dx; d/dy]`.
    fn features(&self, s: &[f64], h: usize, w: usize, y: usize, x: usize) -> Vec<f64> {
        let c = self.c;
        let mut f = vec![0.0; 3 * c];
        for ch in 0..c {
            f[ch] = s[(ch * h + y) * w + x];
            let (mut gx, mut gy) = (0.0, 0.0);
            for dy in 0..3 {
                for dx in 0..3 {
                    let yy = y as i64 + dy as i64 - 1;
                    let xx = x as i64 + dx as i64 - 1;
                    if yy < 0 || xx < 0 || yy >= h as i64 || xx >= w as i64 {
                        continue;
                    }
                    let v = s[(ch * h + yy as usize) * w + xx as usize];
                    gx += KX[dy][dx] * v;
                    gy += KY[dy][dx] * v;
                }
            }
            f[c + ch] = gx;
            f[2 * c + ch] = gy;
        }
        f
    }

    fn rule(&self, k: usize, f: &[f64], noise: Option<f64>) -> Vec<f64> {
        let (w1, b1, w2, b2) = (
            &self.params[4 * k],
            &self.params[4 * k + 1],
            &self.params[4 * k + 2],
            &self.params[4 * k + 3],
        );
        let cin = f.len();
        let mut x: Vec<f64> = (0..self.hd)
            .map(|j| {
                let mut a = b1[j];
                for i in 0..cin {
                    a += w1[j * cin + i] * f[i];
                }
                Self::relu(a)
            })
            .collect();
        if let Some(z) = noise {
            x.push(z);
        }
        let nx = x.len();
        (0..self.cout())
            .map(|o| {
                let mut a = b2[o];
                for j in 0..nx {
                    a += w2[o * nx + j] * x[j];
                }
                a
            })
            .collect()
    }

    fn selector_logits(&self, s: &[f64]) -> Vec<f64> {
        let base = 4 * self.k;
        let (v1, c1, v2, c2) = (
            &self.params[base],
            &self.params[base + 1],
            &self.params[base + 2],
            &self.params[base + 3],
        );
        let hs = c1.len();
        let hid: Vec<f64> = (0..hs)
            .map(|j| {
                let mut a = c1[j];
                for i in 0..self.c {
                    a += v1[j * self.c + i] * s[i];
                }
                Self::relu(a)
            })
            .collect();
        (0..self.k)
            .map(|r| {
                let mut a = c2[r];
                for j in 0..hs {
                    a += v2[r * hs + j] * hid[j];
                }
                a
            })
            .collect()
    }

    pub fn step(&self, s: &[f64], h: usize, w: usize, draws: &Draws, mode: &Mode) -> RefStep {
        let c = self.c;
        let mut next = s.to_vec();
        let mut phi_all = Vec::with_capacity(h * w);
        let mut y_all = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                let f = self.features(s, h, w, y, x);
                let noise = (self.variant == Variant::MncaNoise).then(|| draws.noise[p]);
                let phi: Vec<Vec<f64>> = (0..self.k).map(|k| self.rule(k, &f, noise)).collect();
                let cell: Vec<f64> = (0..c).map(|ch| s[(ch * h + y) * w + x]).collect();
                let (delta, weights): (Vec<f64>, Vec<f64>) = match mode {
                    Mode::Single => {
                        let o = &phi[0];
                        let d = if self.variant == Variant::Gca {
                            (0..c)
                                .map(|ch| o[ch] + (0.5 * o[c + ch]).exp() * draws.eps[p * c + ch])
                                .collect()
                        } else {
                            o.clone()
                        };
                        (d, Vec::new())
                    }
                    Mode::Hard => (phi[draws.selected[p]].clone(), Vec::new()),
                    Mode::StraightThrough { tau } | Mode::GumbelSoft { tau } => {
                        let l = self.selector_logits(&cell);
                        let a: Vec<f64> = (0..self.k)
                            .map(|k| (l[k] + draws.gumbel[p * self.k + k]) / tau)
                            .collect();
                        let yv = Self::softmax(&a);
                        let d = if matches!(mode, Mode::StraightThrough { .. }) {
                            let mut z = 0;
                            for k in 1..self.k {
                                if yv[k] > yv[z] {
                                    z = k;
                                }
                            }
                            phi[z].clone()
                        } else {
                            (0..c)
                                .map(|ch| (0..self.k).map(|k| yv[k] * phi[k][ch]).sum())
                                .collect()
                        };
                        (d, yv)
                    }
                    Mode::Soft { steer } => {
                        let pr = Self::softmax(&self.selector_logits(&cell));
                        let mut q: Vec<f64> = (0..self.k)
                            .map(|k| pr[k] * steer.as_ref().map_or(1.0, |m| m[k]))
                            .collect();
                        let sum: f64 = q.iter().sum();
                        q.iter_mut().for_each(|v| *v /= sum);
                        let d = (0..c)
                            .map(|ch| (0..self.k).map(|k| q[k] * phi[k][ch]).sum())
                            .collect();
                        (d, q)
                    }
                };
                if draws.update[p] {
                    for ch in 0..c {
                        let i = (ch * h + y) * w + x;
                        next[i] = if self.residual {
                            s[i] + delta[ch]
                        } else {
                            delta[ch]
                        };
                    }
                }
                phi_all.push(phi);
                y_all.push(weights);
            }
        }
        RefStep {
            next,
            phi: phi_all,
            y: y_all,
        }
    }
}

pub fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

fn chw_to_rows(v: &[f64], c: usize, p: usize) -> Vec<f64> {
    let mut r = vec![0.0; v.len()];
    for ch in 0..c {
        for i in 0..p {
            r[i * c + ch] = v[ch * p + i];
        }
    }
    r
}

fn rows_to_chw(v: &[f64], c: usize, p: usize) -> Vec<f64> {
    let mut r = vec![0.0; v.len()];
    for ch in 0..c {
        for i in 0..p {
            r[ch * p + i] = v[i * c + ch];
        }
    }
    r
}

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub max_rel: f64,
    pub worst: String,
    pub checked: usize,
}

/// Small deterministic source of test values.
pub struct Draw {
    s: RngStream,
    i: u64,
}

impl Draw {
    pub fn new(seed: u64) -> Self {
        Self {
            s: RngStream::new(seed),
            i: 0,
        }
    }
    pub fn uniform(&mut self) -> f64 {
        self.i += 1;
        self.s.at(0, self.i).uniform()
    }
    pub fn range(&mut self, lo: usize, hi: usize) -> usize {
        lo + (self.uniform() * (hi - lo + 1) as f64) as usize
    }
}

/// Compare the crate's analytic gradients of a one-step MSE loss against
/// central differences of the reference, for one random parameterization.
pub fn check_case(variant: Variant, opts: &StepOptions, seed: u64) -> CheckResult {
    let mut d = Draw::new(seed);
    let c = d.range(1, 6);
    let h = d.range(1, 8);
    let w = d.range(1, 8);
    let hd = d.range(1, 16);
    let k = if variant.is_mixture() {
        d.range(1, 5)
    } else {
        1
    };
    let residual = d.uniform() < 0.7;
    let dropout = if d.uniform() < 0.5 { 0.0 } else { 0.3 };
    let spec = ModelSpec {
        variant,
        channels: c,
        hidden_dim: hd,
        rules: k,
        residual,
        dropout,
        zero_init_output: false,
    };
    let mut model = AutomatonModel::init(&spec, seed ^ 0xabc).unwrap();
    // Larger-than-default weights exercise the nonlinearities.
    for t in model.tensors_mut() {
        t.scale(1.5);
    }
    let p_n = h * w;
    let state: Vec<f64> = (0..c * p_n).map(|_| d.uniform() * 2.0 - 1.0).collect();
    let target: Vec<f64> = (0..c * p_n).map(|_| d.uniform() * 2.0 - 1.0).collect();
    let mut opts = opts.clone();
    if let Some(m) = opts.steering.as_mut() {
        m.resize(k, 1.0);
        if k > 1 {
            m[0] = 0.5;
        }
    }

    let stepper = Stepper::<f64>::new(&model).unwrap();
    let rng = RngStream::new(seed.wrapping_mul(31) + 7);
    let tape = stepper
        .record(chw_to_rows(&state, c, p_n), h, w, 1, &opts, &rng, 0)
        .unwrap();
    let next_rows = &tape.states[1];
    let target_rows = chw_to_rows(&target, c, p_n);
    let n = (c * p_n) as f64;
    let g_next: Vec<f64> = next_rows
        .iter()
        .zip(&target_rows)
        .map(|(a, b)| 2.0 * (a - b) / n)
        .collect();
    let grads = stepper
        .backward_tape(&tape, &[None, Some(g_next.clone())])
        .unwrap();

    let draws = Draws::from_trace(&tape.traces[0]);
    let mode = if !variant.is_mixture() {
        Mode::Single
    } else if opts.train_mode {
        let tau = f64::from(opts.gumbel_temperature);
        if opts.straight_through {
            Mode::StraightThrough { tau }
        } else {
            Mode::GumbelSoft { tau }
        }
    } else if opts.selection == mnca_core::SelectionMode::Soft {
        Mode::Soft {
            steer: opts
                .steering
                .as_ref()
                .map(|m| m.iter().map(|&v| f64::from(v)).collect()),
        }
    } else {
        Mode::Hard
    };

    let base = RefModel::from_model(&model);
    let base_step = base.step(&state, h, w, &draws, &mode);
    // The reference must reproduce the crate's forward pass.
    let crate_next = rows_to_chw(next_rows, c, p_n);
    for (a, b) in base_step.next.iter().zip(&crate_next) {
        assert!(
            (a - b).abs() <= 1e-9 * (1.0 + a.abs()),
            "forward mismatch {a} vs {b}"
        );
    }

    let loss = |m: &RefModel| mse(&m.step(&state, h, w, &draws, &mode).next, &target);
    // Straight-through surrogate: sum_p sum_k y_k * stopgrad(<dL/ddelta_p, phi_k(p)>).
    let coeffs: Vec<Vec<f64>> = (0..p_n)
        .map(|p| {
            (0..k)
                .map(|kk| {
                    if !draws.update[p] {
                        return 0.0;
                    }
                    (0..c)
                        .map(|ch| g_next[p * c + ch] * base_step.phi[p][kk][ch])
                        .sum()
                })
                .collect()
        })
        .collect();
    let surrogate = |m: &RefModel| {
        let st = m.step(&state, h, w, &draws, &mode);
        (0..p_n)
            .map(|p| (0..k).map(|kk| st.y[p][kk] * coeffs[p][kk]).sum::<f64>())
            .sum::<f64>()
    };

    let eps = 1e-6;
    let mut res = CheckResult {
        max_rel: 0.0,
        worst: String::new(),
        checked: 0,
    };
    let names: Vec<String> = model.named_tensors().into_iter().map(|(n, _)| n).collect();
    for (ti, name) in names.iter().enumerate() {
        let is_selector = name.starts_with("selector");
        for i in 0..base.params[ti].len() {
            let analytic = grads.tensors[ti][i];
            let numeric = if is_selector && mode == Mode::Hard {
                0.0
            } else {
                let f: &dyn Fn(&RefModel) -> f64 =
                    if is_selector && matches!(mode, Mode::StraightThrough { .. }) {
                        &surrogate
                    } else {
                        &loss
                    };
                let mut mp = base.clone();
                mp.params[ti][i] += eps;
                let mut mm = base.clone();
                mm.params[ti][i] -= eps;
                (f(&mp) - f(&mm)) / (2.0 * eps)
            };
            let r = rel_err(analytic, numeric);
            res.checked += 1;
            if r > res.max_rel {
                res.max_rel = r;
                res.worst = format!(
                    "{variant} seed {seed} {name}[{i}]: analytic {analytic:.6e} numeric {numeric:.6e}"
                );
            }
        }
    }
    // Input gradient, where the forward pass is smooth in the state.
    if matches!(
        mode,
        Mode::Single | Mode::Soft { .. } | Mode::GumbelSoft { .. }
    ) {
        let input = rows_to_chw(&grads.input, c, p_n);
        for i in 0..state.len() {
            let mut sp = state.clone();
            sp[i] += eps;
            let mut sm = state.clone();
            sm[i] -= eps;
            let numeric = (mse(&base.step(&sp, h, w, &draws, &mode).next, &target)
                - mse(&base.step(&sm, h, w, &draws, &mode).next, &target))
                / (2.0 * eps);
            let r = rel_err(input[i], numeric);
            res.checked += 1;
            if r > res.max_rel {
                res.max_rel = r;
                res.worst = format!(
                    "{variant} seed {seed} input[{i}]: analytic {:.6e} numeric {numeric:.6e}",
                    input[i]
                );
            }
        }
    }
    res
}
