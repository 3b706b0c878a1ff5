//! Per-iteration metrics and their CSV form.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CSV_HEADER: &str =
    "iter,phase,lr,loss_mean,grad_norm_mean_sq,xi_sq,theta_sq,phi_bar,phi_sq,gamma_sq,gossip_steps,seed";

/// Metrics logged after iteration `iter` (gossip included).
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub iter: usize,
    /// 1-based.
    pub phase: usize,
    pub lr: f64,
    /// `f(x_bar)`.
    pub loss_mean: f64,
    /// `||grad f(x_bar)||^2`.
    pub grad_norm_mean_sq: f64,
    pub xi_sq: f64,
    pub theta_sq: f64,
    pub phi_bar: f64,
    pub phi_sq: f64,
    pub gamma_sq: f64,
    pub gossip_steps: usize,
    pub seed: u64,
    /// Target used by the control exit test, if any. Not written to CSV.
    pub control_target: Option<f64>,
    /// `EMA(phi_bar)` after this step. Not written to CSV.
    pub phi_ema: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub config_hash: String,
    pub seed: u64,
    pub ema_beta: f64,
    pub wall_clock_ms: u128,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsTrace {
    pub records: Vec<TraceRecord>,
    pub meta: TraceMeta,
}

impl MetricsTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.records.len() + 1));
        out.push_str(CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                r.iter,
                r.phase,
                r.lr,
                r.loss_mean,
                r.grad_norm_mean_sq,
                r.xi_sq,
                r.theta_sq,
                r.phi_bar,
                r.phi_sq,
                r.gamma_sq,
                r.gossip_steps,
                r.seed
            );
        }
        out
    }

    /// Writes `<stem>.csv` and `<stem>.meta.json` into `dir`. Timing lives in
    /// the metadata file so the CSV is byte-reproducible.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(format!("{stem}.csv")), self.to_csv())?;
        let meta = serde_json::to_string_pretty(&self.meta).map_err(|e| Error::Parse(e.to_string()))?;
        std::fs::write(dir.join(format!("{stem}.meta.json")), meta + "\n")?;
        Ok(())
    }

    /// Parses the CSV columns back; in-memory-only fields come back empty.
    pub fn records_from_csv(text: &str) -> Result<Vec<TraceRecord>> {
        let mut lines = text.lines();
        if lines.next() != Some(CSV_HEADER) {
            return Err(Error::Parse("unexpected trace header".into()));
        }
        lines
            .filter(|l| !l.is_empty())
            .map(|line| {
                let f: Vec<&str> = line.split(',').collect();
                if f.len() != 12 {
                    return Err(Error::Parse(format!("expected 12 fields: {line}")));
                }
                let num = |i: usize| f[i].parse::<f64>().map_err(|e| Error::Parse(format!("{}: {e}", f[i])));
                let int = |i: usize| f[i].parse::<u64>().map_err(|e| Error::Parse(format!("{}: {e}", f[i])));
                Ok(TraceRecord {
                    iter: int(0)? as usize,
                    phase: int(1)? as usize,
                    lr: num(2)?,
                    loss_mean: num(3)?,
                    grad_norm_mean_sq: num(4)?,
                    xi_sq: num(5)?,
                    theta_sq: num(6)?,
                    phi_bar: num(7)?,
                    phi_sq: num(8)?,
                    gamma_sq: num(9)?,
                    gossip_steps: int(10)? as usize,
                    seed: int(11)?,
                    control_target: None,
                    phi_ema: f64::NAN,
                })
            })
            .collect()
    }

    /// `max Xi` of every phase present in the trace, in phase order.
    pub fn phase_xi_max(&self) -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, f64)> = Vec::new();
        for r in &self.records {
            let xi = r.xi_sq.sqrt();
            match out.last_mut() {
                Some((p, m)) if *p == r.phase => *m = m.max(xi),
                _ => out.push((r.phase, xi)),
            }
        }
        out
    }

    pub fn final_record(&self) -> Option<&TraceRecord> {
        self.records.last()
    }
}

/// Sidecar text: one `phase_index xi_max` line per phase.
pub fn format_xi_max(entries: &[(usize, f64)]) -> String {
    entries.iter().map(|(p, x)| format!("{p} {x:.16e}\n")).collect()
}

pub fn parse_xi_max(text: &str) -> Result<Vec<(usize, f64)>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let mut it = l.split_whitespace();
            let (Some(p), Some(x), None) = (it.next(), it.next(), it.next()) else {
                return Err(Error::Parse(format!("bad xi_max line: {l}")));
            };
            let p = p.parse::<usize>().map_err(|e| Error::Parse(format!("{p}: {e}")))?;
            let x = x.parse::<f64>().map_err(|e| Error::Parse(format!("{x}: {e}")))?;
            Ok((p, x))
        })
        .collect()
}
