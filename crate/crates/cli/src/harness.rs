//! Experiment drivers: single-agent, PBT, population-size sweep, grid search.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use popforge::checkpoint;
use popforge::optim::{HyperBounds, InitRanges};
use popforge::pbt::{run_pbt, BarrierView, HyperInit, PbtRun, PopulationConfig};
use popforge::td3::Td3Params;
use popforge::{Error, HyperparamSet, OptimizerKind};
use serde::{Deserialize, Serialize};

use crate::config::{Composition, ExperimentConfig, Mode, Retention};
use crate::summary::{self, SummaryTable};

/// Per-run result, one row of `final.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalRow {
    pub env: String,
    pub composition: String,
    pub population_size: usize,
    pub seed: u64,
    pub final_eval_return: f64,
    pub best_member: usize,
    pub checkpoint_sha256: String,
}

#[derive(Debug, Serialize)]
struct RecordRow<'a> {
    interval: usize,
    member: usize,
    optimizer: &'a str,
    fitness: f64,
    episodes: usize,
    grad_steps: usize,
    skipped_steps: u64,
    lr_actor: f64,
    lr_critic: f64,
    batch_size: usize,
    damping: String,
    received_from: String,
    transfer_mode: String,
}

#[derive(Debug, Serialize)]
struct LineageRow {
    interval: usize,
    member: usize,
    event: &'static str,
    source: String,
    mode: String,
    lr_actor: f64,
    lr_critic: f64,
    batch_size: usize,
    damping: String,
}

fn damping_text(d: Option<f64>) -> String {
    d.map_or_else(String::new, |d| d.to_string())
}

pub fn td3_params(cfg: &ExperimentConfig) -> Td3Params {
    Td3Params {
        gamma: cfg.gamma,
        tau: cfg.tau,
        policy_delay: cfg.policy_delay,
        target_noise: cfg.target_noise,
        noise_clip: cfg.noise_clip,
        exploration_noise: cfg.exploration_noise,
        hidden: cfg.hidden.clone(),
        kfac_decay: cfg.kfac_decay,
        replay_capacity: cfg.replay_capacity,
        ..Td3Params::default()
    }
}

pub fn init_ranges(cfg: &ExperimentConfig) -> InitRanges {
    InitRanges {
        adam_lr: cfg.adam_lr_range,
        diag_ggn_lr: cfg.diag_ggn_lr_range,
        kfac_lr: cfg.kfac_lr_range,
        batch_choices: cfg.batch_choices.clone(),
        diag_ggn_damping: cfg.diag_ggn_damping_range,
        kfac_damping: cfg.kfac_damping_range,
    }
}

pub fn bounds(cfg: &ExperimentConfig) -> HyperBounds {
    HyperBounds {
        batch_min: cfg.batch_min,
        batch_max: cfg.batch_max,
        ..HyperBounds::default()
    }
}

/// Single-agent hyperparameters; damping falls back to 0.1 (Diag-GGN) or
/// 1.0 (K-FAC) and is dropped for Adam.
pub fn single_hyper(cfg: &ExperimentConfig, kind: OptimizerKind) -> HyperparamSet {
    let damping = match kind {
        OptimizerKind::Adam => None,
        OptimizerKind::DiagGgn => Some(cfg.damping.unwrap_or(0.1)),
        OptimizerKind::Kfac => Some(cfg.damping.unwrap_or(1.0)),
    };
    HyperparamSet {
        lr_actor: cfg.lr_actor,
        lr_critic: cfg.lr_critic,
        batch_size: cfg.batch_size,
        damping,
    }
}

/// Population settings for one run of `cfg`.
pub fn population_config(
    cfg: &ExperimentConfig,
    composition: &Composition,
    seed: u64,
) -> PopulationConfig {
    let single = cfg.mode == Mode::Single || cfg.mode == Mode::Grid;
    let (interval, intervals, init) = if single {
        (
            cfg.train_steps,
            1,
            HyperInit::Fixed(single_hyper(cfg, composition.0[0].0)),
        )
    } else {
        (
            cfg.perturbation_interval,
            cfg.intervals,
            HyperInit::Sampled(init_ranges(cfg)),
        )
    };
    PopulationConfig {
        env: cfg.env,
        composition: composition.0.clone(),
        perturbation_interval: interval,
        intervals,
        exploit_top_fraction: cfg.exploit_top_fraction,
        exploit_bottom_fraction: cfg.exploit_bottom_fraction,
        step_adjusted: cfg.step_adjusted,
        seed,
        warmup_steps: cfg.warmup_steps,
        eval_steps: cfg.eval_steps,
        td3: td3_params(cfg),
        init,
        bounds: bounds(cfg),
        threads: None,
    }
}

/// Run directory of one (composition, seed) pair.
pub fn run_dir(cfg: &ExperimentConfig, composition: &Composition, seed: u64) -> PathBuf {
    cfg.out_dir
        .join("runs")
        .join(format!("{}_{}", cfg.env.name(), composition.slug()))
        .join(format!("seed_{seed}"))
}

/// Trains one population (or single agent) and writes its run directory:
/// `records.csv` (flushed at every barrier), `lineage.csv`, `final.csv`
/// and checkpoints per the retention policy.
pub fn run_one(
    cfg: &ExperimentConfig,
    composition: &Composition,
    seed: u64,
) -> Result<(FinalRow, PbtRun)> {
    let dir = run_dir(cfg, composition, seed);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let pcfg = population_config(cfg, composition, seed);
    let mut records = csv::Writer::from_path(dir.join("records.csv"))?;
    let retention = cfg.checkpoints;
    let ckpt_dir = dir.join("checkpoints");

    let observer = |view: &BarrierView<'_>| -> popforge::Result<()> {
        let io = |e: &dyn std::fmt::Display| Error::Checkpoint(e.to_string());
        for r in view.rows {
            records
                .serialize(RecordRow {
                    interval: r.interval,
                    member: r.id,
                    optimizer: r.kind.name(),
                    fitness: r.fitness,
                    episodes: r.episodes,
                    grad_steps: r.grad_steps,
                    skipped_steps: r.skipped_steps,
                    lr_actor: r.hyper.lr_actor,
                    lr_critic: r.hyper.lr_critic,
                    batch_size: r.hyper.batch_size,
                    damping: damping_text(r.hyper.damping),
                    received_from: r.received.map_or_else(String::new, |(s, _)| s.to_string()),
                    transfer_mode: r.received.map_or_else(String::new, |(_, m)| m.to_string()),
                })
                .map_err(|e| io(&e))?;
        }
        records.flush().map_err(|e| io(&e))?;
        let keep = match retention {
            Retention::None => false,
            Retention::Final => view.is_final,
            Retention::All => true,
        };
        if keep {
            let d = ckpt_dir.join(format!("interval_{:04}", view.interval));
            fs::create_dir_all(&d).map_err(|e| io(&e))?;
            for m in view.members {
                let bytes = checkpoint::encode(&m.agent, &m.replay);
                fs::write(d.join(format!("member_{:02}.pbtc", m.id)), bytes).map_err(|e| io(&e))?;
            }
        }
        Ok(())
    };
    let run =
        run_pbt(&pcfg, observer).with_context(|| format!("run {} seed {seed}", composition))?;

    write_lineage(&dir.join("lineage.csv"), &run)?;
    let best = &run.members[run.best_id];
    let sha = checkpoint::sha256_hex(&checkpoint::encode(&best.agent, &best.replay));
    let row = FinalRow {
        env: cfg.env.name().to_string(),
        composition: composition.to_string(),
        population_size: composition.size(),
        seed,
        final_eval_return: run.final_eval,
        best_member: run.best_id,
        checkpoint_sha256: sha,
    };
    let mut w = csv::Writer::from_path(dir.join("final.csv"))?;
    w.serialize(&row)?;
    w.flush()?;
    log::info!(
        "{} {} seed {seed}: final eval {:.3} (member {})",
        row.env,
        row.composition,
        row.final_eval_return,
        row.best_member
    );
    Ok((row, run))
}

fn write_lineage(path: &Path, run: &PbtRun) -> Result<()> {
    use popforge::pbt::LineageEvent;
    let mut w = csv::Writer::from_path(path)?;
    for m in &run.members {
        for rec in &m.lineage {
            let (event, source, mode, h) = match &rec.event {
                LineageEvent::Created { hyper } => ("created", String::new(), String::new(), hyper),
                LineageEvent::Received {
                    src, mode, after, ..
                } => ("received", src.to_string(), mode.to_string(), after),
            };
            w.serialize(LineageRow {
                interval: rec.interval,
                member: m.id,
                event,
                source,
                mode,
                lr_actor: h.lr_actor,
                lr_critic: h.lr_critic,
                batch_size: h.batch_size,
                damping: damping_text(h.damping),
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

/// What a finished experiment produced.
#[derive(Debug)]
pub struct Outcome {
    pub finals: Vec<FinalRow>,
    pub summary: Option<SummaryTable>,
    pub grid: Option<GridResult>,
}

/// Executes `cfg.mode` over all seeds and writes `summary.csv` (or the grid
/// tables) under `cfg.out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Outcome> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.out_dir)
        .with_context(|| format!("creating {}", cfg.out_dir.display()))?;
    fs::write(cfg.out_dir.join("config.txt"), cfg.to_text())?;
    if cfg.mode == Mode::Grid {
        let grid = grid_search(cfg)?;
        return Ok(Outcome {
            finals: Vec::new(),
            summary: None,
            grid: Some(grid),
        });
    }
    let compositions: Vec<Composition> = match cfg.mode {
        Mode::Single => vec![Composition::single(cfg.optimizer, 1)],
        Mode::Pbt => vec![cfg.composition.clone()],
        Mode::Sweep => cfg
            .sweep_sizes
            .iter()
            .map(|&n| cfg.composition.scaled_to(n))
            .collect(),
        Mode::Grid => unreachable!(),
    };
    let mut finals = Vec::new();
    for comp in &compositions {
        for &seed in &cfg.seeds {
            finals.push(run_one(cfg, comp, seed)?.0);
        }
    }
    let table = summary::summarize(&[cfg.out_dir.join("runs")], cfg.baseline.as_ref())?;
    table.write_csv(&cfg.out_dir.join("summary.csv"))?;
    Ok(Outcome {
        finals,
        summary: Some(table),
        grid: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridCell {
    pub optimizer: String,
    pub lr: f64,
    pub damping: String,
    pub seeds: usize,
    pub mean_return: Option<f64>,
    pub std_return: Option<f64>,
    pub status: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub cells: Vec<GridCell>,
    /// Index of the best OK cell: highest mean, ties to the smaller lr.
    pub best: Option<usize>,
}

/// Trains a single agent per (lr, damping, seed) cell and writes
/// `grid.csv` and `grid_heatmap.csv`. Adam cells ignore the damping axis.
/// Cells that fail validation or training are recorded as FAILED.
pub fn grid_search(cfg: &ExperimentConfig) -> Result<GridResult> {
    let kind = cfg.optimizer;
    let dampings: Vec<Option<f64>> = if kind.is_second_order() {
        cfg.grid_dampings.iter().map(|&d| Some(d)).collect()
    } else {
        vec![None]
    };
    let mut cells = Vec::new();
    for &lr in &cfg.grid_lrs {
        for &damping in &dampings {
            let mut cell_cfg = cfg.clone();
            cell_cfg.mode = Mode::Grid;
            cell_cfg.lr_actor = lr;
            cell_cfg.lr_critic = lr;
            cell_cfg.damping = damping;
            let comp = Composition::single(kind, 1);
            let mut returns = Vec::new();
            let mut failure = None;
            for &seed in &cfg.seeds {
                let pcfg = population_config(&cell_cfg, &comp, seed);
                match run_pbt(&pcfg, |_| Ok(())) {
                    Ok(run) => returns.push(run.final_eval),
                    Err(e) => {
                        failure = Some(e.to_string());
                        break;
                    }
                }
            }
            let (mean, std) = match failure {
                None => {
                    let (m, s) = summary::mean_std(&returns);
                    (Some(m), Some(s))
                }
                Some(_) => (None, None),
            };
            log::info!(
                "grid {kind} lr={lr} damping={damping:?}: {mean:?} {}",
                failure.as_deref().unwrap_or("OK")
            );
            cells.push(GridCell {
                optimizer: kind.name().to_string(),
                lr,
                damping: damping_text(damping),
                seeds: cfg.seeds.len(),
                mean_return: mean,
                std_return: std,
                status: if failure.is_some() { "FAILED" } else { "OK" }.to_string(),
                message: failure.unwrap_or_default(),
            });
        }
    }
    let best = best_cell(&cells);
    let mut w = csv::Writer::from_path(cfg.out_dir.join("grid.csv"))?;
    for c in &cells {
        w.serialize(c)?;
    }
    w.flush()?;
    write_heatmap(&cfg.out_dir.join("grid_heatmap.csv"), &cells)?;
    Ok(GridResult { cells, best })
}

/// Highest mean among OK cells; equal means go to the smaller lr, then
/// the earlier cell.
pub fn best_cell(cells: &[GridCell]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, c) in cells.iter().enumerate() {
        let Some(m) = c.mean_return else { continue };
        best = match best {
            None => Some(i),
            Some(b) => {
                let bm = cells[b].mean_return.expect("best is OK");
                if m > bm || (m == bm && c.lr < cells[b].lr) {
                    Some(i)
                } else {
                    Some(b)
                }
            }
        };
    }
    best
}

fn write_heatmap(path: &Path, cells: &[GridCell]) -> Result<()> {
    let mut dampings: Vec<&str> = Vec::new();
    let mut lrs: Vec<f64> = Vec::new();
    for c in cells {
        if !dampings.contains(&c.damping.as_str()) {
            dampings.push(&c.damping);
        }
        if !lrs.contains(&c.lr) {
            lrs.push(c.lr);
        }
    }
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["lr".to_string()];
    header.extend(dampings.iter().map(|d| {
        if d.is_empty() {
            "mean_return".to_string()
        } else {
            format!("damping={d}")
        }
    }));
    w.write_record(&header)?;
    for lr in lrs {
        let mut rec = vec![lr.to_string()];
        for d in &dampings {
            let cell = cells.iter().find(|c| c.lr == lr && c.damping == *d);
            rec.push(match cell {
                Some(GridCell {
                    mean_return: Some(m),
                    ..
                }) => m.to_string(),
                Some(_) => "FAILED".to_string(),
                None => "N/A".to_string(),
            });
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
