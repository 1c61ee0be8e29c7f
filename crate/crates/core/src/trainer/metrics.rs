use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const METRICS_HEADER: &str =
    "step,epoch,mlm_loss,rtd_loss,lambda,total,rtd_accuracy,encoder_forward_count,wall_seconds,cumulative_flops";

/// One logged training step.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub step: u64,
    pub epoch: u32,
    pub mlm_loss: f64,
    pub rtd_loss: f64,
    pub lambda: f64,
    pub total: f64,
    /// NaN when the strategy has no RTD head.
    pub rtd_accuracy: f64,
    pub encoder_forward_count: u64,
    pub wall_seconds: f64,
    pub cumulative_flops: f64,
}

impl MetricsRecord {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{:.3},{}",
            self.step,
            self.epoch,
            self.mlm_loss,
            self.rtd_loss,
            self.lambda,
            self.total,
            self.rtd_accuracy,
            self.encoder_forward_count,
            self.wall_seconds,
            self.cumulative_flops
        )
    }

    pub fn from_csv(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 10 {
            return Err(Error::Invalid(format!("metrics row has {} fields: {line:?}", f.len())));
        }
        let num = |i: usize| {
            f[i].parse::<f64>()
                .map_err(|_| Error::Invalid(format!("bad metrics field {:?}", f[i])))
        };
        let int = |i: usize| {
            f[i].parse::<u64>()
                .map_err(|_| Error::Invalid(format!("bad metrics field {:?}", f[i])))
        };
        Ok(MetricsRecord {
            step: int(0)?,
            epoch: int(1)? as u32,
            mlm_loss: num(2)?,
            rtd_loss: num(3)?,
            lambda: num(4)?,
            total: num(5)?,
            rtd_accuracy: num(6)?,
            encoder_forward_count: int(7)?,
            wall_seconds: num(8)?,
            cumulative_flops: num(9)?,
        })
    }
}

/// Parse a metrics CSV (header included).
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == METRICS_HEADER => {}
        _ => return Err(Error::Invalid(format!("{} lacks the metrics header", path.display()))),
    }
    lines.filter(|l| !l.trim().is_empty()).map(MetricsRecord::from_csv).collect()
}

/// Append rows, writing the header first if the file is new or empty.
pub fn append_metrics(path: &Path, rows: &[MetricsRecord]) -> Result<()> {
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut text = String::new();
    if fresh {
        text.push_str(METRICS_HEADER);
        text.push('\n');
    }
    for r in rows {
        text.push_str(&r.to_csv());
        text.push('\n');
    }
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Rewrite the metrics file keeping only rows from epochs before `epoch`, so
/// a run resumed at that epoch boundary does not repeat rows.
pub fn truncate_metrics(path: &Path, epoch: u32) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let kept: Vec<MetricsRecord> = read_metrics(path)?.into_iter().filter(|r| r.epoch < epoch).collect();
    std::fs::remove_file(path).map_err(|e| Error::io(path, e))?;
    append_metrics(path, &kept)
}

/// Drop the `wall_seconds` column so runs can be compared byte for byte.
pub fn strip_wall_clock(csv: &str) -> String {
    csv.lines()
        .map(|l| {
            let mut f: Vec<&str> = l.split(',').collect();
            if f.len() == 10 {
                f.remove(8);
            }
            f.join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
}
