//! Parameter sweeps: many seeded runs over a grid, summarized per run and
//! per grid point.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{theoretical_alpha, Checker, ContractionChecker, LOOSE_OFFSET};
use crate::config::{expand_grid, SimConfig};
use crate::engine::run_with_sink;
use crate::trace::{NullSink, TraceEvent, TraceHeader, TraceSink, CODE_VERSION};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub grid_key: String,
    pub seed: u64,
    pub code_version: String,
    pub converged: bool,
    pub t_epsilon: Option<u64>,
    pub steps: u64,
    /// Diameters are absent when the run could not be carried out.
    pub initial_ud_diameter: Option<f64>,
    pub final_ud_diameter: Option<f64>,
    pub final_diameter: Option<f64>,
    /// Largest UD-diameter ratio over contraction windows, if any window
    /// completed.
    pub worst_window_ratio: Option<f64>,
    /// Bound on the shrinking factor at the initial UD-diameter.
    pub theoretical_alpha: Option<f64>,
    pub diameter_series: Vec<(u64, f64)>,
    /// Set when the run could not be carried out.
    pub error: Option<String>,
}

impl RunSummary {
    fn failed(grid_key: &str, seed: u64, error: String) -> Self {
        Self {
            grid_key: grid_key.to_owned(),
            seed,
            code_version: CODE_VERSION.to_owned(),
            converged: false,
            t_epsilon: None,
            steps: 0,
            initial_ud_diameter: None,
            final_ud_diameter: None,
            final_diameter: None,
            worst_window_ratio: None,
            theoretical_alpha: None,
            diameter_series: Vec::new(),
            error: Some(error),
        }
    }
}

/// Runs one configuration and summarizes it. `sink` sees the full trace.
pub fn summarize_run(grid_key: &str, config: &SimConfig, sink: &mut dyn TraceSink) -> RunSummary {
    let mut contraction = ContractionSink(ContractionChecker::default());
    let result = run_with_sink(config, &mut (&mut contraction, sink));
    match result {
        Ok(r) => {
            let estimate = contraction.0.estimate();
            RunSummary {
                grid_key: grid_key.to_owned(),
                seed: config.seed,
                code_version: CODE_VERSION.to_owned(),
                converged: r.converged,
                t_epsilon: r.t_epsilon,
                steps: r.steps,
                initial_ud_diameter: Some(r.initial_ud_diameter),
                final_ud_diameter: Some(r.final_ud_diameter),
                final_diameter: Some(r.final_diameter),
                worst_window_ratio: estimate.worst_ratio(),
                theoretical_alpha: (r.initial_ud_diameter > 0.0).then(|| {
                    theoretical_alpha(
                        config.delta,
                        r.initial_ud_diameter,
                        config.k,
                        config.f,
                        LOOSE_OFFSET,
                    )
                    .value
                }),
                diameter_series: r.diameter_series,
                error: None,
            }
        }
        Err(e) => RunSummary::failed(grid_key, config.seed, e.to_string()),
    }
}

struct ContractionSink(ContractionChecker);

impl TraceSink for ContractionSink {
    fn header(&mut self, header: &TraceHeader) {
        self.0.begin(header);
    }

    fn event(&mut self, event: &TraceEvent) {
        self.0.observe(event);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSummary {
    pub grid_key: String,
    pub runs: usize,
    pub converged: usize,
    pub errors: usize,
    pub convergence_rate: f64,
    pub median_t_epsilon: Option<f64>,
    pub worst_window_ratio: Option<f64>,
    pub theoretical_alpha: Option<f64>,
    /// Distinct code versions among the runs; more than one is suspicious.
    pub code_versions: Vec<String>,
}

impl GridSummary {
    pub fn mixed_versions(&self) -> bool {
        self.code_versions.len() > 1
    }
}

fn median(mut v: Vec<u64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_unstable();
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[mid] as f64
    } else {
        (v[mid - 1] as f64 + v[mid] as f64) / 2.0
    })
}

/// Groups runs by grid key, in order of first appearance.
pub fn aggregate(runs: &[RunSummary]) -> Vec<GridSummary> {
    let mut order: Vec<&str> = Vec::new();
    let mut groups: BTreeMap<&str, Vec<&RunSummary>> = BTreeMap::new();
    for r in runs {
        groups
            .entry(&r.grid_key)
            .or_insert_with(|| {
                order.push(&r.grid_key);
                Vec::new()
            })
            .push(r);
    }
    order
        .into_iter()
        .map(|key| {
            let group = &groups[key];
            let converged = group.iter().filter(|r| r.converged).count();
            let max = |it: &mut dyn Iterator<Item = f64>| it.reduce(f64::max);
            GridSummary {
                grid_key: key.to_owned(),
                runs: group.len(),
                converged,
                errors: group.iter().filter(|r| r.error.is_some()).count(),
                convergence_rate: converged as f64 / group.len() as f64,
                median_t_epsilon: median(group.iter().filter_map(|r| r.t_epsilon).collect()),
                worst_window_ratio: max(&mut group.iter().filter_map(|r| r.worst_window_ratio)),
                theoretical_alpha: max(&mut group.iter().filter_map(|r| r.theoretical_alpha)),
                code_versions: group
                    .iter()
                    .map(|r| r.code_version.clone())
                    .collect::<BTreeSet<_>>()
                    .into_iter()
                    .collect(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub runs: Vec<RunSummary>,
    pub aggregate: Vec<GridSummary>,
}

/// Runs `seeds` seeds at every grid point, in parallel. Run `i` of a grid
/// point uses seed `base.seed + i`. Invalid grid points and failed runs are
/// recorded, not raised.
pub fn sweep(
    base: &SimConfig,
    seeds: u64,
    grid: &BTreeMap<String, Vec<toml::Value>>,
) -> SweepResult {
    let jobs: Vec<(String, Result<SimConfig, String>)> = expand_grid(base, grid)
        .into_iter()
        .flat_map(|point| {
            (0..seeds).map(move |i| {
                let config = point
                    .config
                    .clone()
                    .map_err(|e| e.to_string())
                    .map(|mut c| {
                        c.seed = c.seed.wrapping_add(i);
                        c
                    });
                (point.key.clone(), config)
            })
        })
        .collect();
    let base_seed = base.seed;
    let runs: Vec<RunSummary> = jobs
        .par_iter()
        .enumerate()
        .map(|(idx, (key, config))| match config {
            Ok(c) => summarize_run(key, c, &mut NullSink),
            Err(e) => {
                let seed = base_seed.wrapping_add(idx as u64 % seeds.max(1));
                RunSummary::failed(key, seed, e.clone())
            }
        })
        .collect();
    let aggregate = aggregate(&runs);
    SweepResult { runs, aggregate }
}

pub fn write_runs_jsonl<W: Write>(runs: &[RunSummary], mut out: W) -> std::io::Result<()> {
    for r in runs {
        serde_json::to_writer(&mut out, r)?;
        writeln!(out)?;
    }
    out.flush()
}

pub fn read_runs_jsonl<R: BufRead>(input: R) -> Result<Vec<RunSummary>, String> {
    let mut runs = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| e.to_string())?;
        if line.trim().is_empty() {
            continue;
        }
        runs.push(serde_json::from_str(&line).map_err(|e| format!("line {}: {e}", i + 1))?);
    }
    Ok(runs)
}

/// Locale-free float with 17 significant digits.
pub fn fmt_float(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_float).unwrap_or_default()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

pub const AGGREGATE_COLUMNS: [&str; 10] = [
    "grid_key",
    "runs",
    "converged",
    "errors",
    "convergence_rate",
    "median_t_epsilon",
    "worst_window_ratio",
    "theoretical_alpha",
    "code_versions",
    "warning",
];

fn aggregate_row(g: &GridSummary) -> [String; 10] {
    [
        g.grid_key.clone(),
        g.runs.to_string(),
        g.converged.to_string(),
        g.errors.to_string(),
        fmt_float(g.convergence_rate),
        fmt_opt(g.median_t_epsilon),
        fmt_opt(g.worst_window_ratio),
        fmt_opt(g.theoretical_alpha),
        g.code_versions.join(";"),
        if g.mixed_versions() {
            "mixed code versions".to_owned()
        } else {
            String::new()
        },
    ]
}

pub fn write_aggregate_csv<W: Write>(rows: &[GridSummary], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{}", AGGREGATE_COLUMNS.join(","))?;
    for g in rows {
        let fields: Vec<String> = aggregate_row(g).iter().map(|f| csv_field(f)).collect();
        writeln!(out, "{}", fields.join(","))?;
    }
    out.flush()
}

pub fn write_aggregate_text<W: Write>(rows: &[GridSummary], mut out: W) -> std::io::Result<()> {
    let table: Vec<[String; 10]> = rows.iter().map(aggregate_row).collect();
    let mut widths = AGGREGATE_COLUMNS.map(str::len);
    for row in &table {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let line = |cells: &[&str]| {
        cells
            .iter()
            .zip(widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_owned()
    };
    writeln!(out, "{}", line(&AGGREGATE_COLUMNS))?;
    for row in &table {
        let cells: Vec<&str> = row.iter().map(String::as_str).collect();
        writeln!(out, "{}", line(&cells))?;
    }
    out.flush()
}

/// Long-format diameter series: one `(grid_key, seed, step, ud_diameter)`
/// row per point.
pub fn write_series_csv<W: Write>(runs: &[RunSummary], mut out: W) -> std::io::Result<()> {
    writeln!(out, "grid_key,seed,step,ud_diameter")?;
    for r in runs {
        let key = csv_field(&r.grid_key);
        for (step, d) in &r.diameter_series {
            writeln!(out, "{key},{},{step},{}", r.seed, fmt_float(*d))?;
        }
    }
    out.flush()
}
