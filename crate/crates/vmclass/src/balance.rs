//! Class rebalancing: SMOTE interpolation, random under-sampling and
//! random over-sampling.
//!
//! All methods leave the original rows untouched. SMOTE and over-sampling
//! append new rows at the end; under-sampling keeps a subset in the
//! original order. New rows inherit the split tag of the row they were
//! derived from and are marked with a non-Real provenance.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{Dataset, Provenance};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BalanceMethod {
    None,
    Smote { k: usize },
    RandomUnder,
    RandomOver,
}

impl BalanceMethod {
    pub const DEFAULT_SMOTE_K: usize = 5;

    /// Parse a method name; `k` is used only by SMOTE.
    pub fn from_name(name: &str, k: usize) -> Result<Self> {
        match name {
            "none" => Ok(BalanceMethod::None),
            "smote" => Ok(BalanceMethod::Smote { k }),
            "rus" | "random_under" => Ok(BalanceMethod::RandomUnder),
            "ros" | "random_over" => Ok(BalanceMethod::RandomOver),
            other => Err(Error::Config(format!(
                "unknown balance method '{other}'; valid: none, smote, rus, ros"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            BalanceMethod::None => "none",
            BalanceMethod::Smote { .. } => "smote",
            BalanceMethod::RandomUnder => "rus",
            BalanceMethod::RandomOver => "ros",
        }
    }
}

/// Row indices per class: (minority label, minority rows, majority rows).
/// Equal counts resolve the minority to label 1.
fn class_rows(ds: &Dataset) -> Result<(u8, Vec<usize>, Vec<usize>)> {
    let (n0, n1) = ds.class_counts();
    if n0 == 0 || n1 == 0 {
        return Err(Error::SingleClass);
    }
    let minority_label: u8 = if n0 < n1 { 0 } else { 1 };
    let minority = (0..ds.n_rows())
        .filter(|&i| ds.labels[i] == minority_label)
        .collect();
    let majority = (0..ds.n_rows())
        .filter(|&i| ds.labels[i] != minority_label)
        .collect();
    Ok((minority_label, minority, majority))
}

fn interpolate(base: &[f64], neighbor: &[f64], delta: f64) -> Vec<f64> {
    base.iter()
        .zip(neighbor)
        .map(|(&b, &n)| b + delta * (n - b))
        .collect()
}

/// For each minority row, its `k` nearest minority rows by Euclidean
/// distance (itself excluded), nearest first; distance ties break toward the
/// lower row index. Returns (minority row index, neighbor row indices).
pub fn nearest_minority_neighbors(ds: &Dataset, k: usize) -> Result<Vec<(usize, Vec<usize>)>> {
    let (_, minority, _) = class_rows(ds)?;
    if k == 0 || k >= minority.len() {
        return Err(Error::SmoteKTooLarge {
            k,
            minority: minority.len(),
        });
    }
    let dist2 = |a: usize, b: usize| -> f64 {
        ds.row(a)
            .iter()
            .zip(ds.row(b))
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum()
    };
    let mut out = Vec::with_capacity(minority.len());
    for &i in &minority {
        let mut others: Vec<(f64, usize)> = minority
            .iter()
            .filter(|&&j| j != i)
            .map(|&j| (dist2(i, j), j))
            .collect();
        others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        out.push((i, others[..k].iter().map(|&(_, j)| j).collect()));
    }
    Ok(out)
}

/// SMOTE: append synthetic minority rows until the classes are equal.
///
/// Base rows cycle round-robin through the minority in row order; for each,
/// one of its `k` nearest minority neighbors is drawn uniformly and the new
/// row is `base + delta * (neighbor - base)` with `delta ~ U[0, 1)`. Also
/// returns the (base, neighbor) row-index pair behind each synthetic row.
pub fn smote_with_parents(
    ds: &Dataset,
    k: usize,
    seed: u64,
) -> Result<(Dataset, Vec<(usize, usize)>)> {
    let (minority_label, minority, majority) = class_rows(ds)?;
    let deficit = majority.len() - minority.len();
    if deficit == 0 {
        return Ok((ds.clone(), Vec::new()));
    }
    let neighbors = nearest_minority_neighbors(ds, k)?;

    let mut out = ds.clone();
    let mut parents = Vec::with_capacity(deficit);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in 0..deficit {
        let (base, base_neighbors) = &neighbors[t % minority.len()];
        let neighbor = base_neighbors[rng.random_range(0..k)];
        let delta: f64 = rng.random();
        let row = interpolate(ds.row(*base), ds.row(neighbor), delta);
        out.push_row(&row, minority_label, ds.split[*base], Provenance::Synthetic)?;
        parents.push((*base, neighbor));
    }
    Ok((out, parents))
}

pub fn smote(ds: &Dataset, k: usize, seed: u64) -> Result<Dataset> {
    smote_with_parents(ds, k, seed).map(|(out, _)| out)
}

/// Keep every minority row and a uniform random subset of the majority of
/// the same size, preserving the original row order.
pub fn random_under(ds: &Dataset, seed: u64) -> Result<Dataset> {
    let (_, minority, mut majority) = class_rows(ds)?;
    if majority.len() == minority.len() {
        return Ok(ds.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    majority.shuffle(&mut rng);
    let mut keep: Vec<usize> = majority[..minority.len()].to_vec();
    keep.extend_from_slice(&minority);
    keep.sort_unstable();
    Ok(ds.select_rows(&keep))
}

/// Append uniform draws (with replacement) of minority rows until the
/// classes are equal; copies are marked Duplicate.
pub fn random_over(ds: &Dataset, seed: u64) -> Result<Dataset> {
    let (minority_label, minority, majority) = class_rows(ds)?;
    let deficit = majority.len() - minority.len();
    let mut out = ds.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..deficit {
        let src = minority[rng.random_range(0..minority.len())];
        let row = ds.row(src).to_vec();
        out.push_row(&row, minority_label, ds.split[src], Provenance::Duplicate)?;
    }
    Ok(out)
}

pub fn balance(ds: &Dataset, method: BalanceMethod, seed: u64) -> Result<Dataset> {
    match method {
        BalanceMethod::None => Ok(ds.clone()),
        BalanceMethod::Smote { k } => smote(ds, k, seed),
        BalanceMethod::RandomUnder => random_under(ds, seed),
        BalanceMethod::RandomOver => random_over(ds, seed),
    }
}
