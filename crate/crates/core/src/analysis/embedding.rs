//! Similarity structure of learned embeddings.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::model::ParameterSet;
use crate::tasks::{Task, FEATURES, FEATURE_VALUES, ITEM_DIMS};

fn table<'a>(params: &'a ParameterSet, name: &str) -> Result<&'a crate::tensor::Tensor> {
    params
        .get(name)
        .ok_or_else(|| Error::Config(alloc::format!("parameter {name} missing")))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Gram matrix of the given rows, row-major.
pub fn gram(rows: &[&[f64]]) -> Vec<f64> {
    let n = rows.len();
    let mut g = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let d = dot(rows[i], rows[j]);
            g[i * n + j] = d;
            g[j * n + i] = d;
        }
    }
    g
}

/// Dot products between the 15 item-embedding vectors, ordered shape 1-5,
/// color 1-5, texture 1-5. Row-major 15 x 15.
pub fn embedding_similarity(params: &ParameterSet) -> Result<Vec<f64>> {
    let t = table(params, "embed.item")?;
    let rows: Vec<&[f64]> = (0..ITEM_DIMS).map(|r| t.row(r)).collect();
    Ok(gram(&rows))
}

/// The five embedding vectors of one feature.
pub fn feature_block(params: &ParameterSet, feature: usize) -> Result<Vec<Vec<f64>>> {
    if feature >= FEATURES {
        return Err(Error::Index {
            what: "feature",
            index: feature,
            bound: FEATURES,
        });
    }
    let t = table(params, "embed.item")?;
    Ok((0..FEATURE_VALUES)
        .map(|v| t.row(feature * FEATURE_VALUES + v).to_vec())
        .collect())
}

/// Search grid for the kernel width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmaGrid {
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

impl Default for SigmaGrid {
    fn default() -> Self {
        Self {
            min: 0.1,
            max: 10.0,
            step: 0.01,
        }
    }
}

impl SigmaGrid {
    pub fn values(&self) -> Vec<f64> {
        let n = libm::round((self.max - self.min) / self.step) as usize;
        (0..=n).map(|i| self.min + i as f64 * self.step).collect()
    }
}

/// Best kernel fit `a * exp(-(i-j)^2 / (2 sigma^2))` to the pairwise dot
/// products of one feature's value embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianFit {
    /// Infinite when the block is degenerate.
    pub sigma: f64,
    pub amplitude: f64,
    /// Mean squared error over the 15 pairs `i <= j`.
    pub loss: f64,
    /// All dot products were zero, so no width is identifiable.
    pub degenerate: bool,
}

fn pairs(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n).flat_map(move |i| (i..n).map(move |j| (i, j)))
}

/// Grid search over sigma with the least-squares amplitude at each width.
pub fn gaussian_order_fit(block: &[Vec<f64>], grid: &SigmaGrid) -> Result<GaussianFit> {
    let n = block.len();
    if n == 0 {
        return Err(Error::Degenerate("empty embedding block".into()));
    }
    let rows: Vec<&[f64]> = block.iter().map(|r| r.as_slice()).collect();
    let g = gram(&rows);
    let sims: Vec<(f64, f64)> = pairs(n)
        .map(|(i, j)| ((j - i) as f64, g[i * n + j]))
        .collect();
    let m = sims.len() as f64;
    if sims.iter().all(|&(_, s)| s == 0.0) {
        return Ok(GaussianFit {
            sigma: f64::INFINITY,
            amplitude: 0.0,
            loss: 0.0,
            degenerate: true,
        });
    }
    let mut best: Option<GaussianFit> = None;
    for sigma in grid.values() {
        let k: Vec<f64> = sims
            .iter()
            .map(|&(d, _)| math::exp(-d * d / (2.0 * sigma * sigma)))
            .collect();
        let sk: f64 = sims.iter().zip(&k).map(|(&(_, s), &k)| s * k).sum();
        let kk: f64 = k.iter().map(|k| k * k).sum();
        let a = sk / kk;
        let loss = sims
            .iter()
            .zip(&k)
            .map(|(&(_, s), &k)| (s - a * k) * (s - a * k))
            .sum::<f64>()
            / m;
        if best.map_or(true, |b| loss < b.loss) {
            best = Some(GaussianFit {
                sigma,
                amplitude: a,
                loss,
                degenerate: false,
            });
        }
    }
    Ok(best.expect("non-empty grid"))
}

/// Fits for shape, color and texture in that order.
pub fn gaussian_fits(params: &ParameterSet, grid: &SigmaGrid) -> Result<Vec<GaussianFit>> {
    (0..FEATURES)
        .map(|f| gaussian_order_fit(&feature_block(params, f)?, grid))
        .collect()
}

/// Cosine similarity between the six task-token embeddings, in
/// [`Task::ALL`] order. Zero vectors have similarity 0 to everything,
/// including themselves.
pub fn task_embedding_similarity(params: &ParameterSet) -> Result<Vec<f64>> {
    let t = table(params, "embed.control")?;
    let rows: Vec<&[f64]> = Task::ALL.iter().map(|task| t.row(task.index())).collect();
    let g = gram(&rows);
    let n = rows.len();
    let norms: Vec<f64> = (0..n).map(|i| math::sqrt(g[i * n + i])).collect();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let d = norms[i] * norms[j];
            out[i * n + j] = if i == j && d > 0.0 {
                1.0
            } else if d > 0.0 {
                g[i * n + j] / d
            } else {
                0.0
            };
        }
    }
    Ok(out)
}

/// Row and column labels for the 15 item-embedding dimensions.
pub fn item_dim_names() -> Vec<String> {
    ["s", "c", "t"]
        .iter()
        .flat_map(|p| (1..=FEATURE_VALUES).map(move |v| alloc::format!("{p}{v}")))
        .collect()
}
