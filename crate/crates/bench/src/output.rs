use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};

pub const HEADER: [&str; 10] = [
    "method",
    "schedule",
    "eps_target",
    "mse",
    "expected_cost",
    "ledger_cost",
    "wall_ms",
    "n_steps",
    "trial",
    "plan_seed",
];

/// One solver run over a batch of noise paths.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub method: String,
    pub schedule: String,
    pub eps_target: Option<f64>,
    /// Batch mean of the final squared error against the reference.
    pub mse: f64,
    pub expected_cost: f64,
    /// Batch mean of the realized ledger totals.
    pub ledger_cost: f64,
    pub wall_ms: f64,
    pub n_steps: usize,
    pub trial: usize,
    pub plan_seed: Option<u64>,
}

impl ResultRow {
    fn fields(&self) -> [String; 10] {
        let opt = |v: Option<String>| v.unwrap_or_default();
        [
            self.method.clone(),
            self.schedule.clone(),
            opt(self.eps_target.map(|e| e.to_string())),
            self.mse.to_string(),
            self.expected_cost.to_string(),
            self.ledger_cost.to_string(),
            self.wall_ms.to_string(),
            self.n_steps.to_string(),
            self.trial.to_string(),
            opt(self.plan_seed.map(|s| s.to_string())),
        ]
    }
}

pub fn write_rows<W: Write>(rows: &[ResultRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(HEADER)?;
    for row in rows {
        w.write_record(row.fields())?;
    }
    w.flush()?;
    Ok(())
}

/// CSV with [`HEADER`], rows in the given order. `f64` fields use Rust's
/// shortest round-trip formatting.
pub fn write_results(rows: &[ResultRow], path: &Path) -> Result<()> {
    let file =
        std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    write_rows(rows, std::io::BufWriter::new(file))
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r =
        csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let opt_f = |s: &str| -> Result<Option<f64>> {
            Ok(if s.is_empty() { None } else { Some(s.parse()?) })
        };
        rows.push(ResultRow {
            method: rec[0].to_string(),
            schedule: rec[1].to_string(),
            eps_target: opt_f(&rec[2])?,
            mse: rec[3].parse()?,
            expected_cost: rec[4].parse()?,
            ledger_cost: rec[5].parse()?,
            wall_ms: rec[6].parse()?,
            n_steps: rec[7].parse()?,
            trial: rec[8].parse()?,
            plan_seed: if rec[9].is_empty() {
                None
            } else {
                Some(rec[9].parse()?)
            },
        });
    }
    Ok(rows)
}

/// Lowest-MSE row of each `(method, schedule, n_steps)` group, in order of
/// first appearance.
pub fn best_of_trials(rows: &[ResultRow]) -> Vec<ResultRow> {
    let mut best: Vec<ResultRow> = Vec::new();
    for row in rows {
        match best.iter_mut().find(|b| {
            b.method == row.method && b.schedule == row.schedule && b.n_steps == row.n_steps
        }) {
            Some(b) if row.mse < b.mse => *b = row.clone(),
            Some(_) => {}
            None => best.push(row.clone()),
        }
    }
    best
}
