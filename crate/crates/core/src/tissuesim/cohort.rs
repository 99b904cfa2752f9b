//! Cohort container and its binary file format.
//!
//! Layout (little-endian): the 8-byte magic `MNCA-TIS`, then `u32` version,
//! `u32` grid size `N`, `u32` steps `T`, `u32` realization count, followed by
//! `count × (T+1) × N × N` label bytes, realization-major then step-major.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{CellGrid, NUM_LABELS};
use crate::error::{Error, Result};

pub const COHORT_MAGIC: &[u8; 8] = b"MNCA-TIS";
pub const COHORT_VERSION: u32 = 1;

/// Realizations of equal grid size and length; each holds `steps + 1` grids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TissueCohort {
    realizations: Vec<Vec<CellGrid>>,
}

impl TissueCohort {
    pub fn new(realizations: Vec<Vec<CellGrid>>) -> Result<Self> {
        let first = realizations
            .first()
            .ok_or_else(|| Error::usage("cohort needs at least one realization"))?;
        let len = first.len();
        if len == 0 {
            return Err(Error::usage("realizations must contain at least one grid"));
        }
        let n = first[0].size();
        for r in &realizations {
            if r.len() != len || r.iter().any(|g| g.size() != n) {
                return Err(Error::usage(
                    "all realizations must share grid size and length",
                ));
            }
        }
        Ok(Self { realizations })
    }

    /// Cohort of single-frame realizations.
    pub fn from_final_grids(grids: Vec<CellGrid>) -> Result<Self> {
        Self::new(grids.into_iter().map(|g| vec![g]).collect())
    }

    pub fn len(&self) -> usize {
        self.realizations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.realizations.is_empty()
    }

    pub fn grid_size(&self) -> usize {
        self.realizations[0][0].size()
    }

    pub fn steps(&self) -> usize {
        self.realizations[0].len() - 1
    }

    pub fn realizations(&self) -> &[Vec<CellGrid>] {
        &self.realizations
    }

    pub fn realization(&self, i: usize) -> &[CellGrid] {
        &self.realizations[i]
    }

    pub fn final_grid(&self, i: usize) -> &CellGrid {
        self.realizations[i].last().unwrap()
    }

    pub fn final_grids(&self) -> impl Iterator<Item = &CellGrid> {
        self.realizations.iter().map(|r| r.last().unwrap())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.grid_size();
        let mut out = Vec::with_capacity(24 + self.len() * (self.steps() + 1) * n * n);
        out.extend_from_slice(COHORT_MAGIC);
        out.extend_from_slice(&COHORT_VERSION.to_le_bytes());
        out.extend_from_slice(&(n as u32).to_le_bytes());
        out.extend_from_slice(&(self.steps() as u32).to_le_bytes());
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        for r in &self.realizations {
            for g in r {
                out.extend_from_slice(g.cells());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::config(format!("cohort file: {msg}"));
        if bytes.len() < 24 || &bytes[..8] != COHORT_MAGIC {
            return Err(bad("missing MNCA-TIS header"));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
        let version = word(8) as u32;
        if version != COHORT_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let (n, t, count) = (word(12), word(16), word(20));
        let frame = n * n;
        let expected = count
            .checked_mul(t + 1)
            .and_then(|v| v.checked_mul(frame))
            .ok_or_else(|| bad("header sizes overflow"))?;
        let body = &bytes[24..];
        if body.len() != expected {
            return Err(bad(&format!(
                "expected {expected} label bytes, found {}",
                body.len()
            )));
        }
        if body.iter().any(|&v| v as usize >= NUM_LABELS) {
            return Err(bad("label byte out of range"));
        }
        let realizations = body
            .chunks_exact((t + 1) * frame)
            .map(|r| {
                r.chunks_exact(frame)
                    .map(|g| CellGrid::from_cells(n, g.to_vec()))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(realizations)
    }
}

pub fn write_cohort(path: impl AsRef<Path>, cohort: &TissueCohort) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    w.write_all(&cohort.to_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn read_cohort(path: impl AsRef<Path>) -> Result<TissueCohort> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    BufReader::new(f)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    TissueCohort::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bytes_round_trip() {
        let g0 = CellGrid::from_cells(2, vec![0, 1, 2, 3]).unwrap();
        let g1 = CellGrid::from_cells(2, vec![4, 5, 0, 0]).unwrap();
        let c = TissueCohort::new(vec![vec![g0.clone(), g1.clone()], vec![g1, g0]]).unwrap();
        let b = c.to_bytes();
        assert_eq!(&b[..8], b"MNCA-TIS");
        assert_eq!(TissueCohort::from_bytes(&b).unwrap(), c);
        assert!(TissueCohort::from_bytes(&b[..b.len() - 1]).is_err());
    }
}
