//! Mean ± sample standard deviation of final returns per
//! (environment, composition), with percent deltas against a baseline.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use walkdir::WalkDir;

use crate::config::Composition;
use crate::harness::FinalRow;

/// Mean and sample standard deviation; the deviation of a single value is 0.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// `round(100 (candidate - baseline) / |baseline|)`; `None` for a zero baseline.
pub fn percent_delta(candidate: f64, baseline: f64) -> Option<i64> {
    if baseline == 0.0 || !baseline.is_finite() || !candidate.is_finite() {
        return None;
    }
    Some((100.0 * (candidate - baseline) / baseline.abs()).round() as i64)
}

/// `+10`, `-9`, `±0`.
pub fn format_delta(d: i64) -> String {
    match d {
        0 => "±0".to_string(),
        d if d > 0 => format!("+{d}"),
        d => d.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub env: String,
    pub composition: String,
    pub seeds: usize,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    /// Rounded `mean ± std`, or `N/A`.
    pub report: String,
    /// Percent delta against the baseline; empty without a baseline.
    pub delta_pct: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryTable {
    pub rows: Vec<SummaryRow>,
    pub baseline: Option<String>,
    pub warnings: Vec<String>,
}

impl SummaryTable {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w =
            csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let base = self
            .baseline
            .as_deref()
            .map(|b| format!("  Δ% vs {b}"))
            .unwrap_or_default();
        out.push_str(&format!(
            "{:<12} {:<24} {:>5} {:>20}{base}\n",
            "env", "composition", "seeds", "return"
        ));
        for r in &self.rows {
            out.push_str(&format!(
                "{:<12} {:<24} {:>5} {:>20}",
                r.env, r.composition, r.seeds, r.report
            ));
            if self.baseline.is_some() {
                out.push_str(&format!("  {}", r.delta_pct));
            }
            out.push('\n');
        }
        out
    }
}

/// Collects every `final.csv` below `dirs`.
pub fn collect_finals(dirs: &[PathBuf]) -> Result<Vec<FinalRow>> {
    let mut rows = Vec::new();
    for dir in dirs {
        if !dir.exists() {
            anyhow::bail!("run directory {} does not exist", dir.display());
        }
        let mut files: Vec<PathBuf> = WalkDir::new(dir)
            .into_iter()
            .filter_map(|e| e.ok())
            .filter(|e| e.file_type().is_file() && e.file_name() == "final.csv")
            .map(|e| e.into_path())
            .collect();
        files.sort();
        for f in files {
            let mut r =
                csv::Reader::from_path(&f).with_context(|| format!("reading {}", f.display()))?;
            for row in r.deserialize() {
                rows.push(row.with_context(|| format!("parsing {}", f.display()))?);
            }
        }
    }
    Ok(rows)
}

pub fn summarize(dirs: &[PathBuf], baseline: Option<&Composition>) -> Result<SummaryTable> {
    Ok(summarize_rows(&collect_finals(dirs)?, baseline))
}

/// Groups rows into the full env × composition grid; empty cells are N/A.
pub fn summarize_rows(rows: &[FinalRow], baseline: Option<&Composition>) -> SummaryTable {
    let mut groups: BTreeMap<(String, String), Vec<(u64, f64)>> = BTreeMap::new();
    let mut envs = BTreeSet::new();
    let mut comps = BTreeSet::new();
    for r in rows {
        envs.insert(r.env.clone());
        comps.insert(r.composition.clone());
        groups
            .entry((r.env.clone(), r.composition.clone()))
            .or_default()
            .push((r.seed, r.final_eval_return));
    }
    let baseline = baseline.map(|b| b.to_string());
    if let Some(b) = &baseline {
        comps.insert(b.clone());
    }
    let mut warnings = Vec::new();
    let stats = |env: &str, comp: &str| -> Option<(usize, f64, f64)> {
        let g = groups.get(&(env.to_string(), comp.to_string()))?;
        let mut g = g.clone();
        g.sort_by_key(|&(s, _)| s);
        let xs: Vec<f64> = g.iter().map(|&(_, x)| x).collect();
        let (m, s) = mean_std(&xs);
        Some((xs.len(), m, s))
    };
    let mut out = Vec::new();
    for env in &envs {
        let base = baseline.as_deref().and_then(|b| stats(env, b));
        for comp in &comps {
            let cell = stats(env, comp);
            if let Some((1, _, _)) = cell {
                warnings.push(format!("{env} {comp}: single seed, std reported as 0"));
            }
            let delta_pct = match (&baseline, cell, base) {
                (None, _, _) => String::new(),
                (Some(_), Some((_, m, _)), Some((_, b, _))) => {
                    percent_delta(m, b).map_or("N/A".into(), format_delta)
                }
                _ => "N/A".to_string(),
            };
            out.push(SummaryRow {
                env: env.clone(),
                composition: comp.clone(),
                seeds: cell.map_or(0, |c| c.0),
                mean: cell.map(|c| c.1),
                std: cell.map(|c| c.2),
                report: cell.map_or("N/A".into(), |(_, m, s)| {
                    format!("{} ± {}", m.round(), s.round())
                }),
                delta_pct,
            });
        }
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    SummaryTable {
        rows: out,
        baseline,
        warnings,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(env: &str, comp: &str, seed: u64, ret: f64) -> FinalRow {
        FinalRow {
            env: env.into(),
            composition: comp.into(),
            population_size: 8,
            seed,
            final_eval_return: ret,
            best_member: 0,
            checkpoint_sha256: String::new(),
        }
    }

    #[test]
    fn sample_std() {
        assert_eq!(mean_std(&[10.0, 20.0, 30.0]), (20.0, 10.0));
        assert_eq!(mean_std(&[4.0]), (4.0, 0.0));
    }

    #[test]
    fn deltas() {
        assert_eq!(percent_delta(110.0, 100.0), Some(10));
        assert_eq!(percent_delta(-110.0, -100.0), Some(-10));
        assert_eq!(format_delta(10), "+10");
        assert_eq!(format_delta(-9), "-9");
        assert_eq!(format_delta(0), "±0");
        assert_eq!(percent_delta(1.0, 0.0), None);
    }

    #[test]
    fn missing_cells_are_na_and_single_seed_warns() {
        let rows = vec![
            row("pendulum", "adam:8", 0, 100.0),
            row("pendulum", "adam:8", 1, 120.0),
            row("point_mass", "adam:6,kfac:2", 0, 5.0),
        ];
        let base: Composition = "adam:8".parse().unwrap();
        let t = summarize_rows(&rows, Some(&base));
        assert_eq!(t.rows.len(), 4);
        let find = |e: &str, c: &str| {
            t.rows
                .iter()
                .find(|r| r.env == e && r.composition == c)
                .unwrap()
        };
        assert_eq!(find("pendulum", "adam:6,kfac:2").report, "N/A");
        assert_eq!(find("pendulum", "adam:8").report, "110 ± 14");
        assert_eq!(find("pendulum", "adam:8").delta_pct, "±0");
        assert_eq!(find("point_mass", "adam:6,kfac:2").delta_pct, "N/A");
        assert_eq!(t.warnings.len(), 1);
    }
}
