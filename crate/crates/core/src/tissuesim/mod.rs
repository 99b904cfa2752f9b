//! Stochastic lattice model of stem-cell driven tissue growth.
//!
//! Each occupied cell either dies, divides into a uniformly chosen empty Moore
//! neighbor, or survives, with probabilities proportional to its type's rates.
//! A daughter's type is drawn from the parent's row of the differentiation
//! matrix plus interaction rows contributed by the parent's occupied
//! neighbors. Updates are synchronous: every decision reads `G_t` only.

mod cohort;

pub use cohort::{read_cohort, write_cohort, TissueCohort, COHORT_MAGIC, COHORT_VERSION};

use std::sync::atomic::{AtomicBool, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::rng::categorical_unchecked;
use crate::numerics::{RngStream, Tensor};

pub const NUM_LABELS: usize = 6;
pub const NUM_TYPES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum CellType {
    Empty = 0,
    Stem = 1,
    Int1 = 2,
    Int2 = 3,
    Diff1 = 4,
    Diff2 = 5,
}

impl CellType {
    pub const ALL: [CellType; NUM_LABELS] = [
        CellType::Empty,
        CellType::Stem,
        CellType::Int1,
        CellType::Int2,
        CellType::Diff1,
        CellType::Diff2,
    ];

    pub fn from_u8(v: u8) -> Option<Self> {
        Self::ALL.get(v as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            CellType::Empty => "EMPTY",
            CellType::Stem => "STEM",
            CellType::Int1 => "INT1",
            CellType::Int2 => "INT2",
            CellType::Diff1 => "DIFF1",
            CellType::Diff2 => "DIFF2",
        }
    }

    /// Row/column index into the 5×5 rate matrices (`None` for EMPTY).
    pub fn type_index(self) -> Option<usize> {
        (self as usize).checked_sub(1)
    }
}

/// How neighbors modify a daughter's type distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InteractionMode {
    /// Add row `I[type(n)]` for every occupied Moore neighbor `n` of the parent.
    #[default]
    NeighborRows,
    /// Add `Σ_n I[type(parent)][type(n)]` to column `type(n)`: the matrix read
    /// as "effect of neighbors of type j on cells of type i".
    ParentRow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimParams {
    /// Division rates per type (STEM, INT1, INT2, DIFF1, DIFF2).
    pub b: [f64; NUM_TYPES],
    /// Death rates.
    pub d: [f64; NUM_TYPES],
    /// Survival rates.
    pub s: [f64; NUM_TYPES],
    /// `diff[i][j]`: base weight of a type-`i` parent producing a type-`j` daughter.
    pub diff: [[f64; NUM_TYPES]; NUM_TYPES],
    pub interaction: [[f64; NUM_TYPES]; NUM_TYPES],
    pub grid_size: usize,
    pub steps: usize,
    pub n_stem_min: usize,
    pub n_stem_max: usize,
    #[serde(default)]
    pub interaction_mode: InteractionMode,
}

pub fn default_params() -> SimParams {
    let mut interaction = [[0.0; NUM_TYPES]; NUM_TYPES];
    interaction[3][4] = 0.3;
    SimParams {
        b: [0.8, 0.5, 0.5, 0.0, 0.0],
        d: [0.0, 0.0, 0.0, 0.001, 0.001],
        s: [0.0, 0.0, 0.01, 1.0, 1.0],
        diff: [
            [0.3, 0.8, 0.0, 0.0, 0.0],
            [0.1, 0.2, 0.8, 0.0, 0.0],
            [0.0, 0.0, 0.2, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 0.0, 1.0],
        ],
        interaction,
        grid_size: 35,
        steps: 35,
        n_stem_min: 5,
        n_stem_max: 15,
        interaction_mode: InteractionMode::NeighborRows,
    }
}

/// Two-type model: stems that occasionally die and divide into permanent
/// differentiated cells.
pub fn minimal_params() -> SimParams {
    let mut diff = [[0.0; NUM_TYPES]; NUM_TYPES];
    diff[0][3] = 0.1;
    diff[3][3] = 1.0;
    SimParams {
        b: [0.8, 0.0, 0.0, 0.0, 0.0],
        d: [0.05, 0.0, 0.0, 0.0, 0.0],
        s: [1.0, 0.0, 0.0, 1.0, 0.0],
        diff,
        interaction: [[0.0; NUM_TYPES]; NUM_TYPES],
        ..default_params()
    }
}

impl SimParams {
    pub fn validate(&self) -> Result<()> {
        let rates = self.b.iter().chain(&self.d).chain(&self.s);
        if rates.clone().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::config(
                "division, death and survival rates must be finite and >= 0",
            ));
        }
        if self
            .diff
            .iter()
            .flatten()
            .any(|v| !(v.is_finite() && *v >= 0.0))
        {
            return Err(Error::config(
                "differentiation matrix entries must be finite and >= 0",
            ));
        }
        if self.interaction.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::config("interaction matrix entries must be finite"));
        }
        if self.grid_size == 0 {
            return Err(Error::config("grid_size must be >= 1"));
        }
        if self.n_stem_min > self.n_stem_max {
            return Err(Error::config("n_stem_min must not exceed n_stem_max"));
        }
        let block = self.grid_size.min(7);
        if self.n_stem_max > block * block {
            return Err(Error::config(format!(
                "n_stem_max = {} does not fit the central {block}x{block} block",
                self.n_stem_max
            )));
        }
        Ok(())
    }
}

/// Square lattice of cell labels, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CellGrid {
    n: usize,
    cells: Vec<u8>,
}

impl CellGrid {
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            cells: vec![0; n * n],
        }
    }

    pub fn from_cells(n: usize, cells: Vec<u8>) -> Result<Self> {
        if cells.len() != n * n {
            return Err(Error::Shape {
                expected: vec![n, n],
                actual: vec![cells.len()],
            });
        }
        if let Some(v) = cells.iter().find(|&&v| v as usize >= NUM_LABELS) {
            return Err(Error::usage(format!("cell label {v} out of range")));
        }
        Ok(Self { n, cells })
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn cells(&self) -> &[u8] {
        &self.cells
    }

    pub fn get(&self, y: usize, x: usize) -> CellType {
        CellType::ALL[self.cells[y * self.n + x] as usize]
    }

    pub fn set(&mut self, y: usize, x: usize, t: CellType) {
        self.cells[y * self.n + x] = t as u8;
    }

    pub fn count(&self, t: CellType) -> usize {
        self.cells.iter().filter(|&&v| v == t as u8).count()
    }

    pub fn occupied(&self) -> usize {
        self.cells.iter().filter(|&&v| v != 0).count()
    }

    /// In-bounds Moore neighbors of `(y, x)` in raster order.
    pub fn moore(&self, y: usize, x: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        let n = self.n as isize;
        (-1isize..=1)
            .flat_map(move |dy| (-1isize..=1).map(move |dx| (dy, dx)))
            .filter(|&(dy, dx)| dy != 0 || dx != 0)
            .filter_map(move |(dy, dx)| {
                let (yy, xx) = (y as isize + dy, x as isize + dx);
                (yy >= 0 && xx >= 0 && yy < n && xx < n).then_some((yy as usize, xx as usize))
            })
    }
}

/// One division recorded by [`sim_step_logged`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DivisionEvent {
    pub parent: (usize, usize),
    pub parent_type: CellType,
    pub daughter: (usize, usize),
    pub daughter_type: CellType,
}

// Draw offsets within one (step, cell) coordinate.
const DRAW_EVENT: u64 = 0;
const DRAW_SITE: u64 = 1;
const DRAW_DAUGHTER: u64 = 2;

/// Stems uniformly without collision inside the central 7×7 block.
pub fn init_grid(params: &SimParams, rng: &RngStream) -> Result<CellGrid> {
    params.validate()?;
    let n = params.grid_size;
    let block = n.min(7);
    let lo = n / 2 - block / 2;
    let mut r = rng.at(u64::MAX, 0);
    let span = params.n_stem_max - params.n_stem_min + 1;
    let count = params.n_stem_min + ((r.uniform() * span as f64) as usize).min(span - 1);
    let mut sites: Vec<usize> = (0..block * block).collect();
    // Partial Fisher-Yates.
    for i in 0..count {
        let j = i + ((r.uniform() * (sites.len() - i) as f64) as usize).min(sites.len() - i - 1);
        sites.swap(i, j);
    }
    let mut grid = CellGrid::empty(n);
    for &s in &sites[..count] {
        grid.set(lo + s / block, lo + s % block, CellType::Stem);
    }
    Ok(grid)
}

static ZERO_RATE_WARNED: AtomicBool = AtomicBool::new(false);

/// Daughter-type weights for a dividing parent at `(y, x)`.
pub fn daughter_weights(
    grid: &CellGrid,
    params: &SimParams,
    y: usize,
    x: usize,
) -> [f64; NUM_TYPES] {
    let ti = grid.get(y, x).type_index().expect("parent is occupied");
    let mut k = params.diff[ti];
    for (ny, nx) in grid.moore(y, x) {
        if let Some(ni) = grid.get(ny, nx).type_index() {
            match params.interaction_mode {
                InteractionMode::NeighborRows => {
                    for j in 0..NUM_TYPES {
                        k[j] += params.interaction[ni][j];
                    }
                }
                InteractionMode::ParentRow => k[ni] += params.interaction[ti][ni],
            }
        }
    }
    // Negative interaction entries can push weights below zero.
    for v in k.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    k
}

/// One synchronous update. `step` addresses the random draws.
pub fn sim_step(grid: &CellGrid, params: &SimParams, rng: &RngStream, step: u64) -> CellGrid {
    step_impl(grid, params, rng, step, None)
}

/// [`sim_step`] that also records every successful division.
pub fn sim_step_logged(
    grid: &CellGrid,
    params: &SimParams,
    rng: &RngStream,
    step: u64,
    events: &mut Vec<DivisionEvent>,
) -> CellGrid {
    step_impl(grid, params, rng, step, Some(events))
}

fn step_impl(
    grid: &CellGrid,
    params: &SimParams,
    rng: &RngStream,
    step: u64,
    mut events: Option<&mut Vec<DivisionEvent>>,
) -> CellGrid {
    let n = grid.n;
    let mut next = grid.clone();
    // Sites already taken by a daughter this step.
    let mut claimed = vec![false; n * n];
    let mut empty_nb: Vec<(usize, usize)> = Vec::with_capacity(8);
    for y in 0..n {
        for x in 0..n {
            let t = grid.get(y, x);
            let Some(ti) = t.type_index() else { continue };
            let (b, d, s) = (params.b[ti], params.d[ti], params.s[ti]);
            let total = b + d + s;
            if !(total > 0.0) {
                if !ZERO_RATE_WARNED.swap(true, Ordering::Relaxed) {
                    log::warn!(
                        "cell type {} has zero total rate; it survives unchanged",
                        t.name()
                    );
                }
                continue;
            }
            let cell = (y * n + x) as u64;
            let rho = rng.at(step, cell).with_draw(DRAW_EVENT).uniform();
            let (p_death, p_div) = (d / total, b / total);
            if rho < p_death {
                next.set(y, x, CellType::Empty);
            } else if rho < p_death + p_div {
                empty_nb.clear();
                empty_nb.extend(
                    grid.moore(y, x)
                        .filter(|&(ny, nx)| grid.get(ny, nx) == CellType::Empty),
                );
                if empty_nb.is_empty() {
                    continue;
                }
                let u = rng.at(step, cell).with_draw(DRAW_SITE).uniform();
                let pick = ((u * empty_nb.len() as f64) as usize).min(empty_nb.len() - 1);
                let (ty, tx) = empty_nb[pick];
                if claimed[ty * n + tx] {
                    continue;
                }
                let k = daughter_weights(grid, params, y, x);
                if !(k.iter().sum::<f64>() > 0.0) {
                    continue;
                }
                let u = rng.at(step, cell).with_draw(DRAW_DAUGHTER).uniform();
                let dt = CellType::ALL[1 + categorical_unchecked(u, &k)];
                claimed[ty * n + tx] = true;
                next.set(ty, tx, dt);
                if let Some(ev) = events.as_deref_mut() {
                    ev.push(DivisionEvent {
                        parent: (y, x),
                        parent_type: t,
                        daughter: (ty, tx),
                        daughter_type: dt,
                    });
                }
            }
        }
    }
    next
}

/// `steps` updates from `grid`; returns all `steps + 1` grids.
pub fn simulate(
    grid: CellGrid,
    params: &SimParams,
    rng: &RngStream,
    steps: usize,
) -> Vec<CellGrid> {
    let mut out = Vec::with_capacity(steps + 1);
    out.push(grid);
    for t in 0..steps {
        let next = sim_step(out.last().unwrap(), params, rng, t as u64);
        out.push(next);
    }
    out
}

/// Independent realizations, each `init_grid` plus `params.steps` updates.
/// Realization `r` uses stream `rng.fork(r)`.
pub fn run_cohort(
    params: &SimParams,
    n_realizations: usize,
    rng: &RngStream,
) -> Result<TissueCohort> {
    params.validate()?;
    if n_realizations == 0 {
        return Err(Error::usage("run_cohort needs at least one realization"));
    }
    let realizations = (0..n_realizations)
        .into_par_iter()
        .map(|r| {
            let stream = rng.fork(r as u64);
            let g0 = init_grid(params, &stream)?;
            Ok(simulate(g0, params, &stream, params.steps))
        })
        .collect::<Result<Vec<_>>>()?;
    TissueCohort::new(realizations)
}

/// `[6,N,N]` indicator tensor: channel 0 is EMPTY, channels 1..5 the cell types.
pub fn one_hot(grid: &CellGrid) -> Tensor {
    let n = grid.n;
    let plane = n * n;
    let mut t = Tensor::zeros(&[NUM_LABELS, n, n]);
    let data = t.data_mut();
    for (i, &v) in grid.cells.iter().enumerate() {
        data[v as usize * plane + i] = 1.0;
    }
    t
}

/// Per-pixel argmax over channels (lowest index wins ties).
pub fn argmax_labels(t: &Tensor) -> Result<CellGrid> {
    let (c, h, w) = t.dims3("argmax_labels")?;
    if c != NUM_LABELS || h != w {
        return Err(Error::Shape {
            expected: vec![NUM_LABELS, h, h],
            actual: t.shape().to_vec(),
        });
    }
    let plane = h * w;
    let data = t.data();
    let cells = (0..plane)
        .map(|p| {
            let mut best = 0;
            for ch in 1..c {
                if data[ch * plane + p] > data[best * plane + p] {
                    best = ch;
                }
            }
            best as u8
        })
        .collect();
    CellGrid::from_cells(h, cells)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn printed_values() {
        let p = default_params();
        assert_eq!(p.diff[0][1], 0.8);
        assert_eq!(p.interaction[3][4], 0.3);
        let nonzero = p
            .interaction
            .iter()
            .flatten()
            .filter(|v| **v != 0.0)
            .count();
        assert_eq!(nonzero, 1);
        let m = minimal_params();
        assert_eq!(m.d[0], 0.05);
        assert_eq!(m.b[3], 0.0);
        assert!(m.interaction.iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn init_grid_places_stems_centrally() {
        let p = default_params();
        for seed in 0..50 {
            let g = init_grid(&p, &RngStream::new(seed)).unwrap();
            let occ = g.occupied();
            assert!((5..=15).contains(&occ));
            assert_eq!(g.count(CellType::Stem), occ);
            for y in 0..35 {
                for x in 0..35 {
                    if g.get(y, x) != CellType::Empty {
                        assert!((14..=20).contains(&y) && (14..=20).contains(&x));
                    }
                }
            }
        }
    }

    #[test]
    fn empty_grid_stays_empty() {
        let g = CellGrid::empty(10);
        let next = sim_step(&g, &default_params(), &RngStream::new(1), 0);
        assert_eq!(next, g);
    }

    #[test]
    fn certain_death_empties_grid() {
        let mut p = default_params();
        p.b = [0.0; 5];
        p.s = [0.0; 5];
        p.d = [1.0; 5];
        let g = init_grid(&p, &RngStream::new(3)).unwrap();
        let next = sim_step(&g, &p, &RngStream::new(3), 0);
        assert_eq!(next.occupied(), 0);
    }

    #[test]
    fn one_hot_round_trip() {
        let p = default_params();
        let c = run_cohort(&p, 1, &RngStream::new(9)).unwrap();
        let g = c.final_grid(0);
        let t = one_hot(g);
        assert_eq!(&argmax_labels(&t).unwrap(), g);
        let plane = 35 * 35;
        for i in 0..plane {
            let s: f32 = (0..6).map(|ch| t.data()[ch * plane + i]).sum();
            assert_eq!(s, 1.0);
        }
    }

    #[test]
    fn boxed_in_stem_survives() {
        let mut p = default_params();
        p.grid_size = 3;
        let g = CellGrid::from_cells(3, vec![1; 9]).unwrap();
        let next = sim_step(&g, &p, &RngStream::new(0), 0);
        assert_eq!(next, g);
    }
}
