//! Per-phase cost and coverage accounting of a hybrid run.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PhaseKind {
    DataGen,
    Train,
    Infer,
    Correct,
    Retrain,
}

impl PhaseKind {
    pub fn name(self) -> &'static str {
        match self {
            PhaseKind::DataGen => "data-gen",
            PhaseKind::Train => "train",
            PhaseKind::Infer => "infer",
            PhaseKind::Correct => "correct",
            PhaseKind::Retrain => "retrain",
        }
    }

    /// Phases whose cost is solver time.
    pub fn is_solver(self) -> bool {
        matches!(self, PhaseKind::DataGen | PhaseKind::Correct)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhaseRecord {
    pub kind: PhaseKind,
    /// Simulated interval the phase covers, s. Training phases cover the
    /// interval whose data they fit.
    pub start: f64,
    pub end: f64,
    pub wall_clock: f64,
    /// Final loss for training phases, surrogate temperature maximum for
    /// inference, corrected-field maximum for corrections.
    pub metric: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunLedger {
    pub records: Vec<PhaseRecord>,
}

impl RunLedger {
    pub fn push(&mut self, kind: PhaseKind, start: f64, end: f64, wall_clock: f64, metric: f64) {
        self.records.push(PhaseRecord {
            kind,
            start,
            end,
            wall_clock: wall_clock.max(0.0),
            metric,
        });
    }

    pub fn wall_clock(&self, kind: PhaseKind) -> f64 {
        self.records.iter().filter(|r| r.kind == kind).map(|r| r.wall_clock).sum()
    }

    pub fn solver_wall_clock(&self) -> f64 {
        self.records.iter().filter(|r| r.kind.is_solver()).map(|r| r.wall_clock).sum()
    }

    pub fn total_wall_clock(&self) -> f64 {
        self.records.iter().map(|r| r.wall_clock).sum()
    }

    pub fn count(&self, kind: PhaseKind) -> usize {
        self.records.iter().filter(|r| r.kind == kind).count()
    }

    /// Checks that data generation covers `[0, window_end]` and that the
    /// inference and correction intervals tile `[window_end, horizon]`
    /// in order with neither gaps nor overlaps.
    pub fn check_tiling(&self, window_end: f64, horizon: f64) -> Result<()> {
        let tol = 1e-9 * horizon.max(1e-12);
        let fail = |msg: String| Err(Error::Consistency(format!("ledger: {msg}")));
        if self.records.iter().any(|r| !(r.wall_clock >= 0.0) || r.end < r.start - tol) {
            return fail("negative wall-clock or reversed interval".into());
        }
        if window_end > tol {
            let covered = self
                .records
                .iter()
                .any(|r| r.kind == PhaseKind::DataGen && r.start.abs() <= tol && (r.end - window_end).abs() <= tol);
            if !covered {
                return fail(format!("no data generation over [0, {window_end:e}] s"));
            }
        }
        let mut cursor = window_end;
        for r in self
            .records
            .iter()
            .filter(|r| matches!(r.kind, PhaseKind::Infer | PhaseKind::Correct))
        {
            if (r.start - cursor).abs() > tol {
                return fail(format!(
                    "{} starts at {:e} s, expected {cursor:e} s",
                    r.kind.name(),
                    r.start
                ));
            }
            cursor = r.end;
        }
        if (cursor - horizon).abs() > tol {
            return fail(format!("timeline ends at {cursor:e} s, horizon is {horizon:e} s"));
        }
        Ok(())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "phase,start_s,end_s,wall_clock_s,metric")?;
        for r in &self.records {
            writeln!(
                out,
                "{},{:.9e},{:.9e},{:.6e},{:.9e}",
                r.kind.name(),
                r.start,
                r.end,
                r.wall_clock,
                r.metric
            )?;
        }
        out.flush()?;
        Ok(())
    }

    /// Rows: data generation, training + inference, each correction with
    /// its retraining, totals.
    pub fn text_table(&self) -> String {
        let mut s = String::new();
        let us = |t: f64| t * 1e6;
        let _ = writeln!(s, "{:<34} {:>14} {:>12}", "phase", "interval (us)", "wall (s)");
        let _ = writeln!(s, "{}", "-".repeat(62));
        let mut row = |label: String, a: f64, b: f64, w: f64| {
            let _ = writeln!(s, "{label:<34} {:>6.1}-{:<7.1} {w:>12.3}", us(a), us(b));
        };
        for r in self.records.iter().filter(|r| r.kind == PhaseKind::DataGen) {
            row("data generation (solver)".into(), r.start, r.end, r.wall_clock);
        }
        let train: Vec<&PhaseRecord> = self.records.iter().filter(|r| r.kind == PhaseKind::Train).collect();
        let infer: Vec<&PhaseRecord> = self.records.iter().filter(|r| r.kind == PhaseKind::Infer).collect();
        if let (Some(first), Some(last)) = (train.first(), infer.last().or(train.last())) {
            let w: f64 = train.iter().chain(&infer).map(|r| r.wall_clock).sum();
            row("training + inference (surrogate)".into(), first.start, last.end, w);
        }
        let retrains: Vec<&PhaseRecord> = self.records.iter().filter(|r| r.kind == PhaseKind::Retrain).collect();
        for (i, c) in self.records.iter().filter(|r| r.kind == PhaseKind::Correct).enumerate() {
            row(format!("correction {} (solver)", i + 1), c.start, c.end, c.wall_clock);
            if let Some(r) = retrains.get(i) {
                row(format!("retraining {}", i + 1), r.start, r.end, r.wall_clock);
            }
        }
        let _ = writeln!(s, "{}", "-".repeat(62));
        let _ = writeln!(s, "{:<34} {:>14} {:>12.3}", "solver total", "", self.solver_wall_clock());
        let _ = writeln!(s, "{:<34} {:>14} {:>12.3}", "total", "", self.total_wall_clock());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ledger() -> RunLedger {
        let mut l = RunLedger::default();
        l.push(PhaseKind::DataGen, 0.0, 60e-6, 0.4, 0.0);
        l.push(PhaseKind::Train, 0.0, 60e-6, 10.0, 1e-3);
        l.push(PhaseKind::Infer, 60e-6, 106e-6, 0.1, 0.0);
        l.push(PhaseKind::Correct, 106e-6, 112e-6, 0.05, 0.0);
        l.push(PhaseKind::Retrain, 112e-6, 112e-6, 1.0, 0.0);
        l.push(PhaseKind::Infer, 112e-6, 200e-6, 0.1, 0.0);
        l
    }

    #[test]
    fn tiling_accepts_contiguous_timeline() {
        let l = ledger();
        l.check_tiling(60e-6, 200e-6).unwrap();
        assert!((l.solver_wall_clock() - 0.45).abs() < 1e-12);
        assert_eq!(l.count(PhaseKind::Infer), 2);
    }

    #[test]
    fn tiling_rejects_gaps_and_overlaps() {
        let mut gap = ledger();
        gap.records[5].start = 113e-6;
        assert!(gap.check_tiling(60e-6, 200e-6).is_err());
        let mut short = ledger();
        short.records[5].end = 190e-6;
        assert!(short.check_tiling(60e-6, 200e-6).is_err());
        let mut no_data = ledger();
        no_data.records.remove(0);
        assert!(no_data.check_tiling(60e-6, 200e-6).is_err());
    }

    #[test]
    fn pure_training_run_tiles() {
        let mut l = RunLedger::default();
        l.push(PhaseKind::DataGen, 0.0, 60e-6, 0.4, 0.0);
        l.push(PhaseKind::Train, 0.0, 60e-6, 1.0, 0.0);
        l.check_tiling(60e-6, 60e-6).unwrap();
    }

    #[test]
    fn exports() {
        let l = ledger();
        let table = l.text_table();
        assert!(table.contains("data generation"));
        assert!(table.contains("correction 1"));
        assert!(table.contains("retraining 1"));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ledger.csv");
        l.write_csv(&p).unwrap();
        let text = std::fs::read_to_string(p).unwrap();
        assert_eq!(text.lines().count(), 7);
        assert!(text.starts_with("phase,start_s,end_s,wall_clock_s,metric\n"));
    }
}
