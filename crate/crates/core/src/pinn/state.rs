//! Melt-state ledger for collocation points.

use crate::error::{Error, Result};
use crate::grid::{CollocationSet, StructuredGrid};
use crate::material::{PhaseState, Region};
use crate::nn::SurrogateModel;
use crate::solver::ThermalField;

/// First-melt time of every spatial collocation point (interior points, then
/// boundary points, as in [`CollocationSet::state_points`]).
#[derive(Clone, Debug, PartialEq)]
pub struct StateTable {
    pub points: Vec<[f64; 3]>,
    pub regions: Vec<Region>,
    /// Earliest time the point exceeded the liquidus, if ever.
    pub t_min: Vec<Option<f64>>,
    /// Spacing of the time grid scanned by [`refresh`](Self::refresh), s.
    pub dt_state: f64,
}

/// Default scan spacing, 10 µs.
pub const DEFAULT_DT_STATE: f64 = 10.0e-6;

/// Nodes strictly above the powder/substrate interface belong to the powder
/// layer; the same rule as the solver.
pub fn region_at(z: f64, interface_z: f64, height: f64) -> Region {
    if z > interface_z + 1e-9 * height {
        Region::PowderLayer
    } else {
        Region::Substrate
    }
}

impl StateTable {
    pub fn new(points: Vec<[f64; 3]>, interface_z: f64, height: f64, dt_state: f64) -> Result<Self> {
        if !(dt_state > 0.0 && dt_state.is_finite()) {
            return Err(Error::InvalidInput(format!("state spacing {dt_state} s must be positive")));
        }
        let regions = points.iter().map(|p| region_at(p[2], interface_z, height)).collect();
        let n = points.len();
        Ok(Self {
            points,
            regions,
            t_min: vec![None; n],
            dt_state,
        })
    }

    pub fn for_collocation(set: &CollocationSet, interface_z: f64, height: f64, dt_state: f64) -> Result<Self> {
        Self::new(set.state_points(), interface_z, height, dt_state)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn state(&self, i: usize, t: f64) -> PhaseState {
        PhaseState::from_flag(matches!(self.t_min[i], Some(tm) if t >= tm))
    }

    /// Points that have melted at any time so far.
    pub fn melted(&self) -> Vec<bool> {
        self.t_min.iter().map(Option::is_some).collect()
    }

    pub fn melted_count(&self) -> usize {
        self.t_min.iter().filter(|t| t.is_some()).count()
    }

    /// Lowers `t_min[i]` to `t` if that is earlier; never clears an entry.
    fn merge(&mut self, i: usize, t: f64) {
        self.t_min[i] = Some(match self.t_min[i] {
            Some(old) => old.min(t),
            None => t,
        });
    }

    /// Times scanned up to `horizon`: `0, dt, 2 dt, …`.
    pub fn scan_times(&self, horizon: f64) -> Vec<f64> {
        let steps = (horizon / self.dt_state + 1e-9).floor() as usize;
        (0..=steps).map(|k| k as f64 * self.dt_state).collect()
    }

    /// Scans the model over the time grid and records, per point, the
    /// earliest grid time with `T > liquidus`. Existing entries only move
    /// earlier.
    pub fn refresh(&mut self, model: &SurrogateModel, horizon: f64, liquidus: f64) {
        let times = self.scan_times(horizon);
        let first = first_crossings(model, &self.points, &times, liquidus);
        for (i, t) in first.into_iter().enumerate() {
            if let Some(t) = t {
                self.merge(i, t);
            }
        }
    }

    /// Merges a solver field's node melt history: each point takes the
    /// earlier of its own first-melt time and that of its nearest node.
    pub fn merge_field(&mut self, grid: &StructuredGrid, field: &ThermalField) -> Result<()> {
        if field.t_min.len() != grid.node_count() {
            return Err(Error::ShapeMismatch(format!(
                "field has {} melt times for {} nodes",
                field.t_min.len(),
                grid.node_count()
            )));
        }
        for i in 0..self.points.len() {
            if let Some(t) = field.t_min[grid.nearest_node(self.points[i])] {
                self.merge(i, t);
            }
        }
        Ok(())
    }
}

/// For each point, the first of `times` at which the model exceeds
/// `threshold`.
pub(crate) fn first_crossings(
    model: &SurrogateModel,
    points: &[[f64; 3]],
    times: &[f64],
    threshold: f64,
) -> Vec<Option<f64>> {
    let mut first = vec![None; points.len()];
    let mut query = Vec::with_capacity(points.len());
    for &t in times {
        query.clear();
        query.extend(points.iter().map(|p| [p[0], p[1], p[2], t]));
        let values = model.forward_batch(&query);
        for (i, v) in values.into_iter().enumerate() {
            if first[i].is_none() && v > threshold {
                first[i] = Some(t);
            }
        }
    }
    first
}
