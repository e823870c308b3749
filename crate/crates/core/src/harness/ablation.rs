//! Module-placement grids compared against the all-off baseline.
//!
//! Grid file: one entry per line, `name key=value key=value ...`, using the
//! config keys. Entries may not touch the seed or the data, so every run
//! sees the same clouds and random streams.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

use super::config::RunConfig;
use super::dataset::{Dataset, SplitKind};
use super::train::{evaluate, train};

#[derive(Clone, Debug, PartialEq)]
pub struct GridEntry {
    pub name: String,
    pub overrides: Vec<(String, String)>,
}

const SHARED_KEYS: [&str; 4] = ["seed", "data", "points", "out"];

fn is_shared(key: &str) -> bool {
    SHARED_KEYS.contains(&key) || key.starts_with("synthetic.")
}

impl GridEntry {
    pub fn new(name: &str, overrides: &[(&str, &str)]) -> Self {
        GridEntry {
            name: name.to_string(),
            overrides: overrides.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some((k, _)) = self.overrides.iter().find(|(k, _)| is_shared(k)) {
            return Err(Error::arg(format!(
                "grid entry {:?} overrides {k:?}; seed and data must be shared by all entries",
                self.name
            )));
        }
        Ok(())
    }
}

pub fn parse_grid(text: &str) -> Result<Vec<GridEntry>> {
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut tok = line.split_whitespace();
        let name = tok.next().unwrap_or_default().to_string();
        let mut overrides = Vec::new();
        for t in tok {
            let (k, v) = t
                .split_once('=')
                .ok_or_else(|| Error::parse(format!("line {}", i + 1), format!("expected key=value, got {t:?}")))?;
            overrides.push((k.to_string(), v.to_string()));
        }
        let entry = GridEntry { name, overrides };
        entry.validate()?;
        entries.push(entry);
    }
    Ok(entries)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub name: String,
    pub acc: f64,
    pub macc: f64,
    pub delta_acc: f64,
    pub delta_macc: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationTable {
    pub baseline: AblationRow,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    /// Builds rows from final test `(acc, macc)` pairs.
    pub fn from_scores(baseline: (f64, f64), entries: &[(String, f64, f64)]) -> Self {
        let row = |name: &str, acc: f64, macc: f64| AblationRow {
            name: name.to_string(),
            acc,
            macc,
            delta_acc: acc - baseline.0,
            delta_macc: macc - baseline.1,
        };
        AblationTable {
            baseline: row("baseline", baseline.0, baseline.1),
            rows: entries.iter().map(|(n, a, m)| row(n, *a, *m)).collect(),
        }
    }

    pub fn to_text(&self) -> String {
        let width = self
            .rows
            .iter()
            .map(|r| r.name.len())
            .chain(std::iter::once(8))
            .max()
            .unwrap_or(8);
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<width$}  {:>7}  {:>7}  {:>7}  {:>7}",
            "config", "acc", "macc", "Δacc", "Δmacc"
        );
        for r in std::iter::once(&self.baseline).chain(&self.rows) {
            let _ = writeln!(
                s,
                "{:<width$}  {:>7.2}  {:>7.2}  {:>+7.2}  {:>+7.2}",
                r.name,
                100.0 * r.acc,
                100.0 * r.macc,
                100.0 * r.delta_acc,
                100.0 * r.delta_macc
            );
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("name,acc,macc,delta_acc,delta_macc\n");
        for r in std::iter::once(&self.baseline).chain(&self.rows) {
            let _ = writeln!(
                s,
                "{},{:.6},{:.6},{:.6},{:.6}",
                r.name, r.acc, r.macc, r.delta_acc, r.delta_macc
            );
        }
        s
    }
}

fn run_dir(out: Option<&Path>, name: &str) -> Option<std::path::PathBuf> {
    out.map(|d| {
        let safe: String = name
            .chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                    c
                } else {
                    '_'
                }
            })
            .collect();
        d.join(safe)
    })
}

/// Trains the all-off baseline and every entry on `dataset`, then compares
/// their final test accuracies. Entries whose config equals the baseline
/// reuse its result.
pub fn ablation_grid(
    base: &RunConfig,
    grid: &[GridEntry],
    dataset: &Dataset,
    out: Option<&Path>,
) -> Result<AblationTable> {
    for e in grid {
        e.validate()?;
    }
    let baseline_cfg = base.all_off();
    let configs = grid
        .iter()
        .map(|e| baseline_cfg.with_overrides(&e.overrides))
        .collect::<Result<Vec<_>>>()?;
    let score = |cfg: &RunConfig, name: &str| -> Result<(f64, f64)> {
        let dir = run_dir(out, name);
        let outcome = train(cfg, dataset, dir.as_deref())?;
        let e = evaluate(&outcome.model, &outcome.store, dataset, SplitKind::Test, cfg.seed)?;
        Ok((e.acc, e.macc))
    };
    let baseline = score(&baseline_cfg, "baseline")?;
    let mut scores = Vec::with_capacity(grid.len());
    for (e, cfg) in grid.iter().zip(&configs) {
        let (acc, macc) = if *cfg == baseline_cfg {
            baseline
        } else {
            score(cfg, &e.name)?
        };
        scores.push((e.name.clone(), acc, macc));
    }
    let table = AblationTable::from_scores(baseline, &scores);
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("ablation.csv"), table.to_csv())?;
        std::fs::write(dir.join("ablation.txt"), table.to_text())?;
    }
    Ok(table)
}
