//! Real measurement files: a seeded 50/50 split into training reports and a
//! test grid placed at the test locations.

use std::path::Path;

use rand::seq::SliceRandom;
use rssfield::synth::replicate_rng;
use rssfield::{Grid, MeasurementSnapshot, Position, SensorReport};

use crate::error::{CliError, Result};
use crate::io::{read_measurement_rows, TruthRow};

#[derive(Debug, Clone, PartialEq)]
pub struct RealSplit {
    /// Training reports pooled into one snapshot at `t = 0`, in file order.
    pub train: MeasurementSnapshot,
    /// Distinct test locations in order of first appearance.
    pub grid: Grid,
    /// One row per test measurement; repeated locations share a node.
    pub truth: Vec<TruthRow>,
}

impl RealSplit {
    pub fn test_len(&self) -> usize {
        self.truth.len()
    }
}

/// Shuffles row indices with `split_seed`, trains on the first `⌊n/2⌋` and
/// tests on the remaining `⌈n/2⌉`.
pub fn ingest_real(path: &Path, split_seed: u64) -> Result<RealSplit> {
    let rows = read_measurement_rows(path)?;
    split_rows(path, rows.into_iter().map(|(_, r)| r).collect(), split_seed)
}

pub fn split_rows(path: &Path, rows: Vec<SensorReport>, split_seed: u64) -> Result<RealSplit> {
    let n = rows.len();
    if n < 2 {
        return Err(CliError::BadRow { path: path.to_path_buf(), row: n, message: format!("need at least 2 measurements, found {n}") });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut replicate_rng(split_seed, 0));
    let n_train = n / 2;
    let mut train_idx = idx[..n_train].to_vec();
    let mut test_idx = idx[n_train..].to_vec();
    train_idx.sort_unstable();
    test_idx.sort_unstable();

    let train = MeasurementSnapshot { t: 0, sensors: train_idx.iter().map(|&i| rows[i]).collect() };
    let mut nodes: Vec<Position> = Vec::new();
    let mut seen: std::collections::HashMap<(u64, u64), usize> = std::collections::HashMap::new();
    let mut truth = Vec::with_capacity(test_idx.len());
    for &i in &test_idx {
        let p = rows[i].position;
        let id = *seen.entry((p.x.to_bits(), p.y.to_bits())).or_insert_with(|| {
            nodes.push(p);
            nodes.len() - 1
        });
        truth.push(TruthRow { node_id: id, position: p, rss: rows[i].rss });
    }
    let grid = Grid::new(nodes)?;
    Ok(RealSplit { train, grid, truth })
}
