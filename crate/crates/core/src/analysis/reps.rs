//! Task-conditioned item representations and their principal components.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{EvalEpisode, EVAL_CHUNK};
use crate::linalg::symmetric_eigen;
use crate::model::{AblationSpec, Model, Readouts};
use crate::tasks::{Task, FEATURE_VALUES};
use crate::tokens::{encode_tokens, TaskMode};

pub const PAIRS: usize = FEATURE_VALUES * FEATURE_VALUES;

/// Mean layer output at input-item positions for each shape x color pair,
/// pooled over textures, labels and sequences. Pair `5 * shape + color`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepresentationSummary {
    pub task: Task,
    pub layer: usize,
    pub means: Vec<Option<Vec<f64>>>,
    pub counts: Vec<usize>,
}

impl RepresentationSummary {
    /// Observed pairs and their mean vectors.
    pub fn present(&self) -> (Vec<usize>, Vec<Vec<f64>>) {
        self.means
            .iter()
            .enumerate()
            .filter_map(|(i, m)| m.as_ref().map(|m| (i, m.clone())))
            .unzip()
    }
}

/// Runs the sequences under `task` and summarizes every layer's output.
/// Returns one summary per layer.
pub fn task_conditioned_reps(
    model: &Model,
    episodes: &[EvalEpisode],
    task: Task,
) -> Result<Vec<RepresentationSummary>> {
    let d = model.config.d_model;
    let layers = model.config.n_layers();
    let lead = usize::from(model.config.task_mode == TaskMode::Multi);
    let mut sums = vec![vec![0.0; PAIRS * d]; layers];
    let mut counts = vec![0usize; PAIRS];
    let streams = episodes
        .iter()
        .map(|e| {
            let ep = crate::tokens::Episode::new(task, e.episode.input.clone());
            Ok((
                encode_tokens(
                    &ep,
                    model.config.task_mode,
                    model.config.encoding.order_code(),
                )?
                .teacher_forced(),
                ep,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    for chunk in streams.chunks(EVAL_CHUNK) {
        let refs: Vec<_> = chunk.iter().map(|(s, _)| s).collect();
        let out = model.forward(&refs, &AblationSpec::none(), Readouts::Outputs, false)?;
        for ((_, ep), seg) in chunk.iter().zip(&out.segments) {
            for (i, x) in ep.input.iter().enumerate() {
                let pair = x.item.shape as usize * FEATURE_VALUES + x.item.color as usize;
                counts[pair] += 1;
                let row = seg.start + lead + i;
                for (l, sum) in sums.iter_mut().enumerate() {
                    let v = out.tape.value(out.layer_outputs[l]).row(row);
                    for (a, b) in sum[pair * d..(pair + 1) * d].iter_mut().zip(v) {
                        *a += b;
                    }
                }
            }
        }
    }
    Ok(sums
        .into_iter()
        .enumerate()
        .map(|(layer, sum)| RepresentationSummary {
            task,
            layer,
            means: (0..PAIRS)
                .map(|p| {
                    (counts[p] > 0).then(|| {
                        sum[p * d..(p + 1) * d]
                            .iter()
                            .map(|x| x / counts[p] as f64)
                            .collect()
                    })
                })
                .collect(),
            counts: counts.clone(),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaResult {
    pub mean: Vec<f64>,
    /// Unit components, most variance first.
    pub components: Vec<Vec<f64>>,
    /// Variance along each returned component.
    pub explained_variance: Vec<f64>,
    /// Share of the total variance along each returned component.
    pub explained_ratio: Vec<f64>,
    /// Row coordinates on the returned components.
    pub projections: Vec<Vec<f64>>,
}

/// Principal components of the rows of `data`. Each component's first
/// coordinate with magnitude above 1e-12 is made positive.
pub fn pca(data: &[Vec<f64>], n_components: usize) -> Result<PcaResult> {
    let n = data.len();
    if n == 0 || n < n_components {
        return Err(Error::Degenerate(alloc::format!(
            "{n} rows for {n_components} components"
        )));
    }
    let d = data[0].len();
    if n_components > d {
        return Err(Error::Degenerate(alloc::format!(
            "{n_components} components in {d} dimensions"
        )));
    }
    if let Some(r) = data.iter().find(|r| r.len() != d) {
        return Err(Error::Shape {
            op: "pca",
            lhs: vec![r.len()],
            rhs: vec![d],
        });
    }
    let mean: Vec<f64> = (0..d)
        .map(|j| data.iter().map(|r| r[j]).sum::<f64>() / n as f64)
        .collect();
    let centered: Vec<Vec<f64>> = data
        .iter()
        .map(|r| r.iter().zip(&mean).map(|(x, m)| x - m).collect())
        .collect();
    let denom = if n > 1 { (n - 1) as f64 } else { 1.0 };
    let mut cov = vec![0.0; d * d];
    for r in &centered {
        for i in 0..d {
            for j in i..d {
                cov[i * d + j] += r[i] * r[j] / denom;
            }
        }
    }
    for i in 0..d {
        for j in 0..i {
            cov[i * d + j] = cov[j * d + i];
        }
    }
    let eig = symmetric_eigen(&cov, d)?;
    let total: f64 = eig.values.iter().map(|v| v.max(0.0)).sum();
    let mut components = Vec::with_capacity(n_components);
    let mut explained_variance = Vec::with_capacity(n_components);
    for (v, mut c) in eig.values.into_iter().zip(eig.vectors).take(n_components) {
        if let Some(&first) = c.iter().find(|x| crate::math::abs(**x) > 1e-12) {
            if first < 0.0 {
                c.iter_mut().for_each(|x| *x = -*x);
            }
        }
        components.push(c);
        explained_variance.push(v.max(0.0));
    }
    let explained_ratio = explained_variance
        .iter()
        .map(|v| if total > 0.0 { v / total } else { 0.0 })
        .collect();
    let projections = centered
        .iter()
        .map(|r| {
            components
                .iter()
                .map(|c| c.iter().zip(r).map(|(a, b)| a * b).sum())
                .collect()
        })
        .collect();
    Ok(PcaResult {
        mean,
        components,
        explained_variance,
        explained_ratio,
        projections,
    })
}
