//! Full-horizon reference runs, cached on disk.
//!
//! A cache entry is a directory holding the exact text of everything the
//! run depends on (`key.toml`), its wall-clock time and one CSV field per
//! requested time. An entry whose key text differs is recomputed.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::path::{Path, PathBuf};

use log::info;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::io::config::{GeometryConfig, MaterialConfig, ProcessConfig, SolverConfig};
use crate::io::field::{export_field, import_field_csv, FieldFormat};
use crate::solver::ThermalField;

use super::Study;

/// Solver fields of one run at requested times.
#[derive(Clone, Debug)]
pub struct ReferenceRun {
    pub fields: Vec<ThermalField>,
    /// Wall-clock time of the full run, s.
    pub wall_clock: f64,
}

#[derive(Serialize)]
struct CacheKey<'a> {
    geometry: &'a GeometryConfig,
    material: &'a MaterialConfig,
    process: &'a ProcessConfig,
    solver: &'a SolverConfig,
    horizon_us: f64,
    times_us: Vec<f64>,
}

impl ReferenceRun {
    /// Keeps the fields at `times`, in the order given.
    pub(super) fn from_fields(times: &[f64], fields: Vec<ThermalField>, wall_clock: f64) -> Result<Self> {
        let fields = times
            .iter()
            .map(|&t| super::find_time(&fields, t).cloned())
            .collect::<Result<_>>()?;
        Ok(Self { fields, wall_clock })
    }

    pub fn at(&self, t: f64) -> Option<&ThermalField> {
        super::find_time(&self.fields, t).ok()
    }

    /// Loads the run from `cache_dir` if an entry for this study and these
    /// times exists, otherwise runs the solver and stores it.
    pub fn cached(study: &Study, times: &[f64], cache_dir: &Path) -> Result<Self> {
        let key = cache_key(study, times)?;
        let mut h = DefaultHasher::new();
        key.hash(&mut h);
        let dir = cache_dir.join(format!("ref-{:016x}", h.finish()));
        if let Some(run) = Self::load(&dir, &key, study, times)? {
            info!("reference run loaded from {}", dir.display());
            return Ok(run);
        }
        let run = study.oracle_run(times)?;
        std::fs::create_dir_all(&dir)?;
        for (i, f) in run.fields.iter().enumerate() {
            export_field(&field_path(&dir, i), f, &study.grid, FieldFormat::Csv)?;
        }
        std::fs::write(dir.join("wall_clock.txt"), format!("{:.17e}\n", run.wall_clock))?;
        // Written last: an entry without a key is incomplete and ignored.
        std::fs::write(dir.join("key.toml"), &key)?;
        Ok(run)
    }

    fn load(dir: &Path, key: &str, study: &Study, times: &[f64]) -> Result<Option<Self>> {
        match std::fs::read_to_string(dir.join("key.toml")) {
            Ok(stored) if stored == key => {}
            _ => return Ok(None),
        }
        let wall = std::fs::read_to_string(dir.join("wall_clock.txt"))?;
        let wall_clock: f64 = wall
            .trim()
            .parse()
            .map_err(|_| Error::Consistency(format!("corrupt cache entry {}", dir.display())))?;
        let mut fields = Vec::with_capacity(times.len());
        for (i, &t) in times.iter().enumerate() {
            let f = import_field_csv(&field_path(dir, i), &study.grid)?;
            if (f.time - t).abs() > 1e-9 * t.abs().max(1e-9) {
                return Ok(None);
            }
            fields.push(f);
        }
        Ok(Some(Self { fields, wall_clock }))
    }
}

fn field_path(dir: &Path, i: usize) -> PathBuf {
    dir.join(format!("field_{i:03}.csv"))
}

fn cache_key(study: &Study, times: &[f64]) -> Result<String> {
    let c = &study.config;
    let key = CacheKey {
        geometry: &c.geometry,
        material: &c.material,
        process: &c.process,
        solver: &c.solver,
        horizon_us: c.hybrid.horizon_us,
        times_us: times.iter().map(|t| t / crate::US).collect(),
    };
    toml::to_string(&key).map_err(|e| Error::Config(e.to_string()))
}
