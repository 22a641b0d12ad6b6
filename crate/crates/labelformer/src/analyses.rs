//! Runs the interpretability analyses on a saved run and writes one file
//! per analysis and slice under `<root>/analysis/<run>/`.

use std::path::PathBuf;

use anyhow::{bail, Result};
use labelformer_core::analysis::{
    ablation_sweep, attention_maps, canonical_specs, embedding_similarity, eos_attention_profile,
    feature_block, gaussian_fits, gaussian_order_fit, gram, grouped_tasks, item_dim_names, pca,
    task_conditioned_reps, task_embedding_similarity, within_group_attention, SigmaGrid,
};
use labelformer_core::data::ContentIndex;
use labelformer_core::eval::EvalEpisode;
use labelformer_core::model::{AblationSpec, Model};
use labelformer_core::tasks::Task;
use labelformer_core::tokens::TaskMode;
use serde::{Deserialize, Serialize};

use crate::experiment::Run;
use crate::report::write_csv;

pub const ANALYSES: [&str; 5] = ["attn", "gauss", "sim", "ablate", "pca"];

/// Task name without brackets, for file names (`S[s]` becomes `Ss`).
pub fn task_slug(t: Task) -> String {
    t.name().replace(['[', ']'], "")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixCell {
    pub row: String,
    pub col: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WithinGroupCell {
    pub task: String,
    pub layer: usize,
    pub query_index: usize,
    pub key_index: usize,
    /// Empty when no pair was observed.
    pub mean: Option<f64>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WithinGroupSummary {
    pub task: String,
    pub layer: usize,
    pub within_group_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EosBin {
    pub task: String,
    pub layer: usize,
    pub head: usize,
    /// 1-based group value (`s1`..`s5` for shape tasks).
    pub group: u8,
    pub index: usize,
    pub mean: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussRow {
    pub step: u64,
    pub feature: String,
    /// Empty for a degenerate (all-zero) block.
    pub sigma: Option<f64>,
    pub amplitude: f64,
    pub loss: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussCurvePoint {
    pub step: u64,
    pub feature: String,
    pub i: usize,
    pub j: usize,
    pub distance: usize,
    pub similarity: f64,
    pub fitted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCsvRow {
    pub spec: String,
    pub task: String,
    pub mode: String,
    pub n_sequences: usize,
    pub item_accuracy: f64,
    pub label_accuracy: f64,
    pub token_accuracy: f64,
    pub eos_accuracy: f64,
    pub task_accuracy: Option<f64>,
    pub seq_exact: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaPoint {
    pub task: String,
    pub layer: usize,
    pub pair: usize,
    /// 1-based shape and color values.
    pub shape: u8,
    pub color: u8,
    pub count: usize,
    pub pc1: f64,
    pub pc2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaSummaryRow {
    pub task: String,
    pub layer: usize,
    pub component: usize,
    pub explained_variance: f64,
    pub explained_ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalysisOptions {
    pub step: u64,
    /// Generalization sequences per task.
    pub sequences: usize,
}

struct Ctx<'a> {
    run: &'a mut Run,
    model: Model,
    step: u64,
    episodes: Vec<EvalEpisode>,
    written: Vec<PathBuf>,
}

impl Ctx<'_> {
    fn csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<()> {
        let p = self.run.analysis_dir().join(format!("{name}.csv"));
        write_csv(&p, rows)?;
        self.written.push(p);
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let dir = self.run.analysis_dir();
        std::fs::create_dir_all(&dir)?;
        let p = dir.join(format!("{name}.json"));
        std::fs::write(&p, serde_json::to_string(value)? + "\n")?;
        self.written.push(p);
        Ok(())
    }

    fn task_episodes(&self, t: Task) -> Vec<EvalEpisode> {
        self.episodes
            .iter()
            .filter(|e| e.episode.task == t)
            .cloned()
            .collect()
    }

    fn tasks(&self) -> Vec<Task> {
        Task::ALL
            .into_iter()
            .filter(|t| self.episodes.iter().any(|e| e.episode.task == *t))
            .collect()
    }
}

fn matrix_cells(names: &[String], m: &[f64]) -> Vec<MatrixCell> {
    let n = names.len();
    (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| MatrixCell {
            row: names[i].clone(),
            col: names[j].clone(),
            value: m[i * n + j],
        })
        .collect()
}

#[derive(Serialize)]
struct AttentionFile<'a> {
    task: String,
    seq_id: u64,
    step: u64,
    maps: &'a [labelformer_core::analysis::AttentionMap],
}

fn attn(ctx: &mut Ctx) -> Result<()> {
    for t in ctx.tasks() {
        let eps = ctx.task_episodes(t);
        let Some(first) = eps.first() else { continue };
        let maps = attention_maps(&ctx.model, first, &AblationSpec::none(), true)?;
        ctx.json(
            &format!("attn_maps_{}", task_slug(t)),
            &AttentionFile {
                task: t.name().into(),
                seq_id: first.seq_id,
                step: ctx.step,
                maps: &maps,
            },
        )?;
        if !grouped_tasks().contains(&t) {
            continue;
        }
        let mut cells = Vec::new();
        let mut summary = Vec::new();
        for layer in 0..ctx.model.config.n_layers() {
            let w = within_group_attention(&ctx.model, &eps, layer)?;
            for q in 0..w.size {
                for k in 0..w.size {
                    cells.push(WithinGroupCell {
                        task: t.name().into(),
                        layer,
                        query_index: q,
                        key_index: k,
                        mean: w.mean[q * w.size + k],
                        count: w.counts[q * w.size + k],
                    });
                }
            }
            summary.push(WithinGroupSummary {
                task: t.name().into(),
                layer,
                within_group_fraction: w.within_group_fraction,
            });
        }
        ctx.csv(&format!("attn_within_{}", task_slug(t)), &cells)?;
        ctx.csv(&format!("attn_withinfrac_{}", task_slug(t)), &summary)?;
        let bins: Vec<EosBin> = eos_attention_profile(&ctx.model, &eps)?
            .into_iter()
            .flat_map(|c| {
                let task = t.name().to_string();
                c.bins.into_iter().map(move |(index, mean, count)| EosBin {
                    task: task.clone(),
                    layer: c.layer,
                    head: c.head,
                    group: c.group + 1,
                    index,
                    mean,
                    count,
                })
            })
            .collect();
        ctx.csv(&format!("attn_eos_{}", task_slug(t)), &bins)?;
    }
    Ok(())
}

const FEATURE_NAMES: [&str; 3] = ["shape", "color", "texture"];

/// Fits at every checkpoint, plus the fitted curve at the chosen one.
fn gauss(ctx: &mut Ctx) -> Result<()> {
    let grid = SigmaGrid::default();
    let mut rows = Vec::new();
    for step in ctx.run.manifest.checkpoints.clone() {
        let m = ctx.run.load_model(step)?;
        for (f, fit) in gaussian_fits(&m.params, &grid)?.into_iter().enumerate() {
            rows.push(GaussRow {
                step,
                feature: FEATURE_NAMES[f].into(),
                sigma: (!fit.degenerate).then_some(fit.sigma),
                amplitude: fit.amplitude,
                loss: fit.loss,
                degenerate: fit.degenerate,
            });
        }
    }
    ctx.csv("gauss_fit_checkpoints", &rows)?;
    let mut curve = Vec::new();
    for (f, name) in FEATURE_NAMES.iter().enumerate() {
        let block = feature_block(&ctx.model.params, f)?;
        let fit = gaussian_order_fit(&block, &grid)?;
        let refs: Vec<&[f64]> = block.iter().map(Vec::as_slice).collect();
        let g = gram(&refs);
        let n = block.len();
        for i in 0..n {
            for j in i..n {
                let d = (j - i) as f64;
                let fitted = if fit.degenerate {
                    0.0
                } else {
                    fit.amplitude * (-d * d / (2.0 * fit.sigma * fit.sigma)).exp()
                };
                curve.push(GaussCurvePoint {
                    step: ctx.step,
                    feature: (*name).into(),
                    i,
                    j,
                    distance: j - i,
                    similarity: g[i * n + j],
                    fitted,
                });
            }
        }
    }
    ctx.csv(&format!("gauss_curve_step{}", ctx.step), &curve)
}

fn sim(ctx: &mut Ctx) -> Result<()> {
    let names = item_dim_names();
    let m = embedding_similarity(&ctx.model.params)?;
    ctx.csv("sim_items", &matrix_cells(&names, &m))?;
    if ctx.model.config.task_mode == TaskMode::Multi {
        let names: Vec<String> = Task::ALL.iter().map(|t| t.name().to_string()).collect();
        let m = task_embedding_similarity(&ctx.model.params)?;
        ctx.csv("sim_tasks", &matrix_cells(&names, &m))?;
    }
    Ok(())
}

fn ablate(ctx: &mut Ctx) -> Result<()> {
    let specs = canonical_specs(&ctx.model.config);
    let rows: Vec<AblationCsvRow> = ablation_sweep(&ctx.model, &ctx.episodes, &specs)?
        .into_iter()
        .map(|r| AblationCsvRow {
            token_accuracy: r.token_accuracy(),
            spec: r.spec,
            task: r.task.name().into(),
            mode: r.mode.name().into(),
            n_sequences: r.n_sequences,
            item_accuracy: r.item_accuracy,
            label_accuracy: r.label_accuracy,
            eos_accuracy: r.eos_accuracy,
            task_accuracy: r.task_accuracy,
            seq_exact: r.seq_exact,
        })
        .collect();
    ctx.csv("ablate_all", &rows)
}

fn pca_analysis(ctx: &mut Ctx) -> Result<()> {
    let mut summary = Vec::new();
    for t in ctx.tasks() {
        let eps = ctx.task_episodes(t);
        let mut points = Vec::new();
        for s in task_conditioned_reps(&ctx.model, &eps, t)? {
            let (pairs, data) = s.present();
            if data.len() < 2 {
                continue;
            }
            let r = pca(&data, 2)?;
            for (k, &pair) in pairs.iter().enumerate() {
                points.push(PcaPoint {
                    task: t.name().into(),
                    layer: s.layer,
                    pair,
                    shape: (pair / 5) as u8 + 1,
                    color: (pair % 5) as u8 + 1,
                    count: s.counts[pair],
                    pc1: r.projections[k][0],
                    pc2: r.projections[k][1],
                });
            }
            for c in 0..r.explained_variance.len() {
                summary.push(PcaSummaryRow {
                    task: t.name().into(),
                    layer: s.layer,
                    component: c + 1,
                    explained_variance: r.explained_variance[c],
                    explained_ratio: r.explained_ratio[c],
                });
            }
        }
        ctx.csv(&format!("pca_{}", task_slug(t)), &points)?;
    }
    ctx.csv("pca_summary", &summary)
}

/// Runs the named analyses (`all` expands to every one) and records the
/// outputs in the run manifest. Returns the written paths.
pub fn run_analyses(
    run: &mut Run,
    which: &[String],
    opts: AnalysisOptions,
) -> Result<Vec<PathBuf>> {
    let mut names: Vec<&str> = Vec::new();
    for w in which {
        match w.as_str() {
            "all" => names.extend(ANALYSES),
            n if ANALYSES.contains(&n) => names.push(n),
            n => bail!("unknown analysis {n:?} (expected one of {ANALYSES:?} or all)"),
        }
    }
    names.dedup();
    let model = run.load_model(opts.step)?;
    let needs_episodes = names
        .iter()
        .any(|n| matches!(*n, "attn" | "ablate" | "pca"));
    let episodes = if needs_episodes {
        let index = ContentIndex::new(&run.training_records()?);
        run.analysis_episodes(&model, &index, opts.sequences)?
    } else {
        Vec::new()
    };
    let mut ctx = Ctx {
        run,
        model,
        step: opts.step,
        episodes,
        written: Vec::new(),
    };
    for n in names {
        match n {
            "attn" => attn(&mut ctx)?,
            "gauss" => gauss(&mut ctx)?,
            "sim" => sim(&mut ctx)?,
            "ablate" => ablate(&mut ctx)?,
            "pca" => pca_analysis(&mut ctx)?,
            _ => unreachable!(),
        }
    }
    let written = std::mem::take(&mut ctx.written);
    for p in &written {
        ctx.run.add_artifact(p);
    }
    ctx.run.save_manifest()?;
    Ok(written)
}
