use serde::{Deserialize, Serialize};

use super::{fit, TrainReport};
use crate::data::Dataset;
use crate::metrics::{flat_hit_at_k, hierarchical_precision_at_k};
use crate::model::{EmbeddingModel, Hyperparams};
use crate::{Error, Result};

/// Candidate values for the semantic hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub mu2: Vec<f64>,
    pub gamma1: Vec<f64>,
    pub gamma2: Vec<f64>,
}

impl Default for Grid {
    fn default() -> Self {
        Grid {
            mu2: vec![0.3, 1.0, 3.0],
            gamma1: vec![0.5, 1.0],
            gamma2: vec![0.03, 0.1, 0.3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub mu2: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub val_hit1: f64,
    pub val_hp2: f64,
}

/// Fits every grid point on `train` and keeps the one with the best
/// validation hit@1 (then hp@2, then grid order). Returns the selected model
/// with its training report, and the full table.
pub fn grid_search(
    train: &Dataset,
    val: &Dataset,
    base: &Hyperparams,
    grid: &Grid,
) -> Result<(EmbeddingModel, TrainReport, Vec<GridPoint>)> {
    if grid.mu2.is_empty() || grid.gamma1.is_empty() || grid.gamma2.is_empty() {
        return Err(Error::InvalidArgument(
            "every grid axis needs at least one value".into(),
        ));
    }
    if val.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut table = Vec::new();
    let mut best: Option<(EmbeddingModel, TrainReport, (f64, f64))> = None;
    for &mu2 in &grid.mu2 {
        for &gamma1 in &grid.gamma1 {
            for &gamma2 in &grid.gamma2 {
                let hyper = Hyperparams {
                    mu2,
                    gamma1,
                    gamma2,
                    ..base.clone()
                };
                let (model, report) = fit(train, &hyper)?;
                let score = (
                    flat_hit_at_k(&model, val, 1)?,
                    hierarchical_precision_at_k(&model, val, 2)?,
                );
                log::info!(
                    "grid mu2={mu2} gamma1={gamma1} gamma2={gamma2}: hit@1 {:.4} hp@2 {:.4}",
                    score.0,
                    score.1
                );
                table.push(GridPoint {
                    mu2,
                    gamma1,
                    gamma2,
                    val_hit1: score.0,
                    val_hp2: score.1,
                });
                if best.as_ref().is_none_or(|(_, _, s)| score > *s) {
                    best = Some((model, report, score));
                }
            }
        }
    }
    let (model, report, _) = best.expect("grid is non-empty");
    Ok((model, report, table))
}
