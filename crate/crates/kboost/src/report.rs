//! Evaluation reports, sweep tables and session traces.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use kboost_core::runtime::{SessionTrace, TickDelays, TickRecord};
use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileMetrics {
    pub id: String,
    pub si_sdr: f64,
    /// Improvement over the unprocessed mixture.
    pub si_sdri: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (zero for a single file).
    pub std: f64,
    pub mean_improvement: f64,
}

/// Mean and spread of the rows, accumulated in row order.
pub fn aggregate(rows: &[FileMetrics]) -> Aggregate {
    let n = rows.len();
    if n == 0 {
        return Aggregate {
            n,
            mean: f64::NAN,
            std: f64::NAN,
            mean_improvement: f64::NAN,
        };
    }
    let mean = rows.iter().map(|r| r.si_sdr).sum::<f64>() / n as f64;
    let mean_improvement = rows.iter().map(|r| r.si_sdri).sum::<f64>() / n as f64;
    let var = if n > 1 {
        rows.iter().map(|r| (r.si_sdr - mean).powi(2)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    Aggregate {
        n,
        mean,
        std: var.sqrt(),
        mean_improvement,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportHeader {
    pub config: String,
    pub config_hash: String,
    pub checkpoint_hash: Option<String>,
    /// Set when the checkpoint was trained for a different configuration.
    pub config_mismatch: bool,
    pub seed: u64,
    pub role: String,
    pub estimate: String,
    pub split: String,
    pub delay_chunks: usize,
    pub compression: usize,
    pub params: Vec<(String, usize)>,
    pub throughput_bps: f64,
    pub local_macs_per_chunk: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub header: ReportHeader,
    pub rows: Vec<FileMetrics>,
    pub summary: Aggregate,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum ReportLine {
    Header(ReportHeader),
    File(FileMetrics),
    Summary(Aggregate),
}

impl MetricsReport {
    pub fn new(header: ReportHeader, rows: Vec<FileMetrics>) -> Self {
        let summary = aggregate(&rows);
        Self { header, rows, summary }
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let mut line = |l: &ReportLine| {
            out.push_str(&serde_json::to_string(l).expect("report serializes"));
            out.push('\n');
        };
        line(&ReportLine::Header(self.header.clone()));
        for r in &self.rows {
            line(&ReportLine::File(r.clone()));
        }
        line(&ReportLine::Summary(self.summary));
        out
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(io_err(path))?;
        let (mut header, mut rows, mut summary) = (None, Vec::new(), None);
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(io_err(path))?;
            let parsed: ReportLine = serde_json::from_str(&line).map_err(|source| Error::Json {
                path: path.to_path_buf(),
                line: n + 1,
                source,
            })?;
            match parsed {
                ReportLine::Header(h) => header = Some(h),
                ReportLine::File(f) => rows.push(f),
                ReportLine::Summary(s) => summary = Some(s),
            }
        }
        match (header, summary) {
            (Some(header), Some(summary)) => Ok(Self { header, rows, summary }),
            _ => Err(Error::ConfigFile {
                path: path.to_path_buf(),
                detail: "report lacks a header or summary line".into(),
            }),
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_csv(path, &self.rows)
    }

    pub fn summary_table(&self) -> String {
        let h = &self.header;
        let s = &self.summary;
        let mut t = String::new();
        let _ = writeln!(t, "config      {} ({})", h.config, &h.config_hash[..12.min(h.config_hash.len())]);
        if h.config_mismatch {
            let _ = writeln!(t, "WARNING     checkpoint was trained for another configuration");
        }
        let _ = writeln!(t, "model       {} (estimate: {}), C = {}, P = {}", h.role, h.estimate, h.delay_chunks, h.compression);
        let _ = writeln!(t, "split       {} ({} files)", h.split, s.n);
        let _ = writeln!(t, "SI-SDR      {:.2} +- {:.2} dB", s.mean, s.std);
        let _ = writeln!(t, "SI-SDRi     {:.2} dB", s.mean_improvement);
        for (name, n) in &h.params {
            let _ = writeln!(t, "params      {name}: {:.2}K", *n as f64 / 1e3);
        }
        let _ = writeln!(t, "MACs/chunk  {:.3}M (local)", h.local_macs_per_chunk as f64 / 1e6);
        if h.throughput_bps > 0.0 {
            let _ = writeln!(t, "hint rate   {:.0} bps", h.throughput_bps);
        }
        t
    }
}

pub fn write_csv<R: Serialize>(path: &Path, rows: &[R]) -> Result<()> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))
}

/// One row of an ablation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub name: String,
    pub c: usize,
    pub p: usize,
    pub freeze: bool,
    pub val_si_snr: Option<f64>,
    pub test_si_sdr: Option<f64>,
    pub test_std: Option<f64>,
    pub params_k: f64,
    pub macs_m: f64,
    pub status: String,
}

pub fn sweep_table(rows: &[SweepRow]) -> String {
    let mut t = String::new();
    let _ = writeln!(t, "{:<8} {:>2} {:>2} {:>10} {:>10} {:>8} {:>8}  status", "name", "C", "P", "val (dB)", "test (dB)", "param K", "MACs M");
    let f = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.2}"));
    for r in rows {
        let _ = writeln!(
            t,
            "{:<8} {:>2} {:>2} {:>10} {:>10} {:>8.2} {:>8.3}  {}",
            r.name,
            r.c,
            r.p,
            f(r.val_si_snr),
            f(r.test_si_sdr),
            r.params_k,
            r.macs_m,
            r.status
        );
    }
    t
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub config_hash: String,
    pub seed: u64,
    pub delays: TickDelays,
}

/// Session trace as line-delimited JSON: a header line, then one line per tick.
pub fn write_trace(out: &mut impl Write, header: &TraceHeader, trace: &SessionTrace) -> std::io::Result<()> {
    serde_json::to_writer(&mut *out, header)?;
    out.write_all(b"\n")?;
    for r in &trace.records {
        serde_json::to_writer(&mut *out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_trace(path: &Path) -> Result<(TraceHeader, SessionTrace)> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let json = |n: usize, source| Error::Json {
        path: path.to_path_buf(),
        line: n + 1,
        source,
    };
    let mut lines = text.lines().enumerate();
    let (n, first) = lines.next().ok_or_else(|| Error::ConfigFile {
        path: path.to_path_buf(),
        detail: "empty trace".into(),
    })?;
    let header: TraceHeader = serde_json::from_str(first).map_err(|e| json(n, e))?;
    let records = lines
        .map(|(n, l)| serde_json::from_str::<TickRecord>(l).map_err(|e| json(n, e)))
        .collect::<Result<Vec<_>>>()?;
    Ok((
        header.clone(),
        SessionTrace {
            delays: header.delays,
            records,
        },
    ))
}
