//! Per-iteration ADMM trace and its CSV form.
//!
//! Columns: `k,layer,rho,residual,train_loss,val_accuracy`. `layer` is a
//! weight-layer index for per-layer rows, `all` for the per-iteration summary
//! (maximum residual over layers) and `step<s>` for a progressive step summary.
//! Missing values are empty fields.

use std::fmt;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowKind {
    Layer(usize),
    Iteration,
    Step(usize),
}

impl fmt::Display for RowKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RowKind::Layer(i) => write!(f, "{i}"),
            RowKind::Iteration => f.write_str("all"),
            RowKind::Step(s) => write!(f, "step{s}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub k: usize,
    pub layer: RowKind,
    pub rho: f64,
    pub residual: f64,
    pub train_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
}

pub const CSV_HEADER: &str = "k,layer,rho,residual,train_loss,val_accuracy";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    rows: Vec<TraceRow>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl Trace {
    pub fn push(&mut self, row: TraceRow) {
        self.rows.push(row);
    }

    pub fn rows(&self) -> &[TraceRow] {
        &self.rows
    }

    /// Summary rows, one per iteration (including the initial `k = 0` row).
    pub fn iterations(&self) -> impl Iterator<Item = &TraceRow> {
        self.rows.iter().filter(|r| r.layer == RowKind::Iteration)
    }

    /// Appends `other`, shifting its iteration index by `offset`.
    pub fn extend_shifted(&mut self, other: &Trace, offset: usize) {
        self.rows.extend(other.rows.iter().map(|r| TraceRow {
            k: r.k + offset,
            ..r.clone()
        }));
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "{CSV_HEADER}")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.k,
                r.layer,
                r.rho,
                r.residual,
                opt(r.train_loss),
                opt(r.val_accuracy)
            )?;
        }
        out.flush()
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let mut t = Trace::default();
        t.push(TraceRow {
            k: 1,
            layer: RowKind::Layer(0),
            rho: 0.001,
            residual: 0.5,
            train_loss: None,
            val_accuracy: None,
        });
        t.push(TraceRow {
            k: 1,
            layer: RowKind::Iteration,
            rho: 0.001,
            residual: 0.5,
            train_loss: Some(0.25),
            val_accuracy: Some(0.9),
        });
        t.push(TraceRow {
            k: 4,
            layer: RowKind::Step(2),
            rho: 0.1,
            residual: 0.0,
            train_loss: None,
            val_accuracy: Some(0.95),
        });
        assert_eq!(
            t.to_csv_string(),
            "k,layer,rho,residual,train_loss,val_accuracy\n\
             1,0,0.001,0.5,,\n\
             1,all,0.001,0.5,0.25,0.9\n\
             4,step2,0.1,0,,0.95\n"
        );
    }
}
