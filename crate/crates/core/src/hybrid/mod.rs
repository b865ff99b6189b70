//! The staged solver–surrogate loop: generate labeled data with the solver
//! over a short window, train the surrogate, infer forward, correct with short
//! solver runs started from the surrogate's prediction, retrain on the
//! corrected snapshot, repeat to the horizon.

mod cache;
mod ledger;

pub use cache::ReferenceRun;
pub use ledger::{PhaseKind, PhaseRecord, RunLedger};

use std::time::Instant;

use log::info;

use crate::error::{invalid, Error, Result};
use crate::grid::{labeled_nodes, sample_collocation, CollocationSet, DomainSpec, StructuredGrid};
use crate::io::config::{HybridConfig, RunConfig, TriggerName};
use crate::material::MaterialLibrary;
use crate::nn::{AdamState, SurrogateModel};
use crate::pinn::{predict_field, scaled_model, LossReport, LossScales, Physics, StateTable, TrainEvent, TrainingProblem};
use crate::solver::{HeatSolver, ProcessParams, SolverSettings, ThermalField};
use crate::US;

/// Named process-parameter presets for transfer runs: name, W, mm/s.
pub const TRANSFER_PRESETS: [(&str, f64, f64); 3] = [
    ("60w-600", 60.0, 600.0),
    ("150w-1200", 150.0, 1200.0),
    ("75w-800", 75.0, 800.0),
];

/// Power and speed of a named preset.
pub fn transfer_preset(name: &str) -> Option<(f64, f64)> {
    TRANSFER_PRESETS.iter().find(|p| p.0 == name).map(|p| (p.1, p.2))
}

/// When corrections happen.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Trigger {
    /// At the scheduled instants.
    Fixed,
    /// When the probe residual exceeds `threshold` times its value at the
    /// end of the training window.
    Residual { threshold: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct HybridSchedule {
    pub horizon: f64,
    pub window_end: f64,
    pub snapshot_times: Vec<f64>,
    pub correction_times: Vec<f64>,
    pub correction_duration: f64,
    pub initial_epochs: usize,
    pub retrain_epochs: usize,
    pub transfer_epochs: usize,
    pub trigger: Trigger,
    /// Spacing of the residual checks in residual-trigger mode, s.
    pub inference_step: f64,
}

impl HybridSchedule {
    pub fn from_config(h: &HybridConfig) -> Result<Self> {
        let s = Self {
            horizon: h.horizon_us * US,
            window_end: h.window_end_us * US,
            snapshot_times: h.snapshot_times_us.iter().map(|t| t * US).collect(),
            correction_times: h.correction_times_us.iter().map(|t| t * US).collect(),
            correction_duration: h.correction_duration_us * US,
            initial_epochs: h.initial_epochs,
            retrain_epochs: h.retrain_epochs,
            transfer_epochs: h.transfer_epochs,
            trigger: match h.trigger {
                TriggerName::Fixed => Trigger::Fixed,
                TriggerName::Residual => Trigger::Residual {
                    threshold: h.residual_threshold,
                },
            },
            inference_step: h.inference_step_us * US,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let tol = 1e-9 * self.horizon;
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(invalid("horizon must be positive"));
        }
        if !(self.window_end >= 0.0 && self.window_end <= self.horizon + tol) {
            return Err(invalid("training window must end inside the horizon"));
        }
        if self.snapshot_times.iter().any(|&t| !(t > 0.0 && t <= self.window_end + tol)) {
            return Err(invalid("snapshot times must lie in (0, window end]"));
        }
        if !self.correction_times.is_empty() && !(self.correction_duration > 0.0) {
            return Err(invalid("correction duration must be positive"));
        }
        let mut prev_end = self.window_end;
        for (i, &t) in self.correction_times.iter().enumerate() {
            if i > 0 && t <= self.correction_times[i - 1] {
                return Err(invalid("correction instants must be strictly increasing"));
            }
            if t < prev_end - tol {
                return Err(invalid(format!(
                    "correction at {t:e} s overlaps the training window or the previous correction"
                )));
            }
            prev_end = t + self.correction_duration;
            if prev_end > self.horizon + tol {
                return Err(invalid(format!("correction at {t:e} s runs past the horizon")));
            }
        }
        if let Trigger::Residual { threshold } = self.trigger {
            if !(threshold > 0.0) || !(self.correction_duration > 0.0) {
                return Err(invalid("residual trigger needs a positive threshold and correction duration"));
            }
        }
        if !(self.inference_step > 0.0) {
            return Err(invalid("inference step must be positive"));
        }
        Ok(())
    }
}

/// Solver output over the training window.
#[derive(Clone, Debug)]
pub struct TrainingData {
    /// Collocation points with labels attached.
    pub set: CollocationSet,
    /// Labeled snapshots, in schedule order.
    pub snapshots: Vec<ThermalField>,
    /// Field at the window end.
    pub end_field: ThermalField,
    pub wall_clock: f64,
}

/// One solver correction window.
#[derive(Clone, Debug)]
pub struct Correction {
    /// Surrogate field at `t_c`, clamped to `T₀`, that started the solver.
    pub initial: ThermalField,
    /// Nodes raised to `T₀` in `initial`.
    pub clamped_nodes: usize,
    /// Solver field at `t_c + duration`.
    pub corrected: ThermalField,
    /// Solver fields at requested times inside the window.
    pub snapshots: Vec<ThermalField>,
    pub wall_clock: f64,
}

/// Where an emitted hybrid snapshot came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Source {
    Surrogate,
    Solver,
}

#[derive(Clone, Debug)]
pub struct HybridSnapshot {
    pub field: ThermalField,
    pub source: Source,
}

/// Per-correction record for accuracy audits.
#[derive(Clone, Debug)]
pub struct CorrectionRecord {
    pub start: f64,
    pub end: f64,
    /// Surrogate prediction at `end` before the correction.
    pub uncorrected: ThermalField,
    pub corrected: ThermalField,
    pub clamped_nodes: usize,
    /// Data loss on the corrected snapshot alone before and after retraining.
    pub snapshot_loss_before: f64,
    pub snapshot_loss_after: f64,
}

#[derive(Clone, Debug)]
pub struct HybridOutcome {
    pub ledger: RunLedger,
    /// Emitted snapshots at the requested output times, in time order.
    pub snapshots: Vec<HybridSnapshot>,
    pub corrections: Vec<CorrectionRecord>,
    /// Surrogate after the initial training, before any correction.
    pub initial_model: SurrogateModel,
    /// Surrogate after the last retraining.
    pub model: SurrogateModel,
    pub adam: AdamState,
    pub table: StateTable,
    /// Loss history of the initial training.
    pub training_history: Vec<LossReport>,
    /// Loss histories of each retraining.
    pub retrain_histories: Vec<Vec<LossReport>>,
    /// Melted-set size after every refresh and merge, in order.
    pub melted_counts: Vec<usize>,
    /// Whether every refresh and merge kept the melted set a superset of
    /// the previous one.
    pub monotone: bool,
    /// `(t, r(t))` of the residual monitor.
    pub residual_trace: Vec<(f64, f64)>,
}

/// A failed hybrid run with the phases completed before the failure.
#[derive(Debug)]
pub struct HybridFailure {
    pub ledger: RunLedger,
    pub error: Error,
}

impl std::fmt::Display for HybridFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} (after {} completed phases)", self.error, self.ledger.records.len())
    }
}

impl std::error::Error for HybridFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

/// Progress notifications from [`Study::run_hybrid`].
#[derive(Debug)]
pub enum HybridEvent<'a> {
    Phase(&'a PhaseRecord),
    Epoch(PhaseKind, &'a LossReport),
}

/// Outcome of fine-tuning a pretrained surrogate on new process parameters.
#[derive(Clone, Debug)]
pub struct TransferOutcome {
    pub model: SurrogateModel,
    pub history: Vec<LossReport>,
    /// Relative L2 against the labeled snapshots before and after.
    pub rel_l2_before: Vec<f64>,
    pub rel_l2_after: Vec<f64>,
    pub data_wall_clock: f64,
    pub train_wall_clock: f64,
}

/// Tracks the state table's melted set across a run.
#[derive(Clone, Debug, Default)]
struct MeltAudit {
    last: Vec<bool>,
    counts: Vec<usize>,
    monotone: bool,
}

impl MeltAudit {
    fn new(table: &StateTable) -> Self {
        let mut a = Self {
            last: Vec::new(),
            counts: Vec::new(),
            monotone: true,
        };
        a.observe(table);
        a
    }

    fn observe(&mut self, table: &StateTable) {
        let now = table.melted();
        if self.last.len() == now.len() && self.last.iter().zip(&now).any(|(&was, &is)| was && !is) {
            self.monotone = false;
        }
        self.counts.push(table.melted_count());
        self.last = now;
    }
}

/// One configured problem: geometry, grid, material, process and schedule.
#[derive(Clone, Debug)]
pub struct Study {
    pub config: RunConfig,
    pub spec: DomainSpec,
    pub grid: StructuredGrid,
    pub material: MaterialLibrary,
    pub process: ProcessParams,
    pub settings: SolverSettings,
    pub schedule: HybridSchedule,
}

impl Study {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            spec: config.domain(),
            grid: config.grid()?,
            material: config.material_library(),
            process: config.process_params(),
            settings: config.solver_settings(),
            schedule: HybridSchedule::from_config(&config.hybrid)?,
            config,
        })
    }

    /// The same study with another laser power and scan speed.
    pub fn with_process(&self, power_w: f64, speed_mm_per_s: f64) -> Result<Self> {
        let mut config = self.config.clone();
        config.process.power_w = power_w;
        config.process.speed_mm_per_s = speed_mm_per_s;
        Self::new(config)
    }

    pub fn t0(&self) -> f64 {
        self.process.ambient_k
    }

    pub fn solver(&self) -> Result<HeatSolver> {
        HeatSolver::new(
            self.grid.clone(),
            &self.spec,
            self.material.clone(),
            self.process.clone(),
            self.settings.clone(),
        )
    }

    /// Glorot-initialised surrogate with the study's scalings.
    pub fn new_model(&self) -> Result<SurrogateModel> {
        let n = &self.config.network;
        scaled_model(&n.layers, n.seed, &self.spec, self.schedule.horizon, self.t0(), n.t_ref_max_k)
    }

    pub fn new_adam(&self, model: &SurrogateModel) -> AdamState {
        AdamState::for_model(model, self.config.network.learning_rate)
    }

    fn labeled_nodes(&self) -> Vec<usize> {
        labeled_nodes(&self.grid, self.config.losses.labeled_per_snapshot, self.config.losses.sample_seed)
    }

    /// Full-horizon solver run from ambient, returning the fields at `times`.
    pub fn oracle_run(&self, times: &[f64]) -> Result<ReferenceRun> {
        let solver = self.solver()?;
        let start = Instant::now();
        let fields = solver.run(&solver.initial_field(0.0), self.schedule.horizon, times)?;
        let wall_clock = start.elapsed().as_secs_f64();
        ReferenceRun::from_fields(times, fields, wall_clock)
    }

    /// Solver run over the training window; labels attached to freshly
    /// sampled collocation points.
    pub fn generate_training_data(&self) -> Result<TrainingData> {
        let s = &self.schedule;
        let l = &self.config.losses;
        let mut set = sample_collocation(
            &self.spec,
            &self.grid,
            self.config.collocation_counts(),
            &s.snapshot_times,
            s.horizon,
            l.refinement_fraction,
            l.sample_seed,
        )?;
        let solver = self.solver()?;
        let start = Instant::now();
        let initial = solver.initial_field(0.0);
        let fields = if s.window_end > 0.0 {
            solver.run(&initial, s.window_end, &s.snapshot_times)?
        } else {
            vec![initial]
        };
        let wall_clock = start.elapsed().as_secs_f64();
        let end_field = fields.last().cloned().expect("solver returns the final field");
        let snapshots: Vec<ThermalField> = s
            .snapshot_times
            .iter()
            .map(|&t| find_time(&fields, t).cloned())
            .collect::<Result<_>>()?;
        for (i, p) in set.labeled.iter().enumerate() {
            let snap = find_time(&snapshots, p[3])?;
            set.labels[i] = snap.temperature[set.labeled_nodes[i]];
        }
        Ok(TrainingData {
            set,
            snapshots,
            end_field,
            wall_clock,
        })
    }

    /// Training problem over the whole horizon. The state table starts from
    /// the solver's melt history at the window end.
    pub fn training_problem(&self, data: &TrainingData) -> Result<TrainingProblem> {
        let l = &self.config.losses;
        let horizon = self.schedule.horizon;
        let mut table = StateTable::for_collocation(
            &data.set,
            self.spec.interface_z(),
            self.spec.height(),
            l.dt_state_us * US,
        )?;
        table.merge_field(&self.grid, &data.end_field)?;
        let problem = TrainingProblem {
            physics: Physics {
                material: self.material.clone(),
                process: self.process.clone(),
                scales: LossScales::new(self.t0(), self.config.network.t_ref_max_k, horizon, &self.process)?,
                form: self.config.residual_form(),
            },
            weights: self.config.loss_weights(),
            set: data.set.clone(),
            table,
            horizon,
            refresh_every: l.refresh_every,
            lr_decay: self.config.lr_decay(),
        };
        problem.validate()?;
        Ok(problem)
    }

    /// Surrogate evaluated on every grid node at `time`.
    pub fn predict(&self, model: &SurrogateModel, table: &StateTable, time: f64) -> ThermalField {
        predict_field(model, table, &self.grid, time, self.material.liquidus_k)
    }

    /// Starts the solver at `t_c` from the surrogate's prediction and runs
    /// it for `duration`; merges the solver's melt history into `table`.
    /// Fields at `times` inside the window are returned too.
    ///
    /// The predicted initial field is raised to `T₀` where it dips below,
    /// since the exact field never does.
    pub fn correct(
        &self,
        model: &SurrogateModel,
        table: &mut StateTable,
        t_c: f64,
        duration: f64,
        times: &[f64],
    ) -> Result<Correction> {
        let end = t_c + duration;
        if !(duration > 0.0) || end > self.schedule.horizon * (1.0 + 1e-9) {
            return Err(invalid(format!(
                "correction window [{t_c:e}, {end:e}] s must be non-empty and end inside the horizon"
            )));
        }
        let t0 = self.t0();
        let mut initial = self.predict(model, table, t_c);
        let mut clamped_nodes = 0;
        for v in &mut initial.temperature {
            if *v < t0 {
                *v = t0;
                clamped_nodes += 1;
            }
        }
        let solver = self.solver()?;
        let inside: Vec<f64> = times.iter().copied().filter(|&t| t > t_c && t <= end).collect();
        let start = Instant::now();
        let fields = solver.run(&initial, end, &inside)?;
        let wall_clock = start.elapsed().as_secs_f64();
        let corrected = fields.last().cloned().expect("solver returns the final field");
        let floor = t0 * (1.0 - 1e-9);
        if let Some(n) = corrected.temperature.iter().position(|&v| !(v >= floor)) {
            return Err(Error::Consistency(format!(
                "corrected field at {end:e} s is {:.6} K at node {n}, below T0 = {t0} K",
                corrected.temperature[n]
            )));
        }
        table.merge_field(&self.grid, &corrected)?;
        let snapshots = inside
            .iter()
            .map(|&t| find_time(&fields, t).cloned())
            .collect::<Result<_>>()?;
        Ok(Correction {
            initial,
            clamped_nodes,
            corrected,
            snapshots,
            wall_clock,
        })
    }

    /// Appends `field` as a labeled snapshot and continues training for
    /// `epochs`.
    pub fn retrain<F>(
        &self,
        problem: &mut TrainingProblem,
        model: &mut SurrogateModel,
        adam: &mut AdamState,
        field: &ThermalField,
        epochs: usize,
        observer: F,
    ) -> Result<Vec<LossReport>>
    where
        F: FnMut(TrainEvent<'_>),
    {
        field.validate(&self.grid)?;
        problem.set.push_snapshot(&self.grid, &self.labeled_nodes(), field.time, &field.temperature);
        problem.train(model, adam, epochs, observer)
    }

    /// Data loss of `model` on one field at the labeled nodes.
    pub fn snapshot_loss(&self, problem: &TrainingProblem, model: &SurrogateModel, field: &ThermalField) -> f64 {
        let nodes = self.labeled_nodes();
        let pts: Vec<[f64; 4]> = nodes
            .iter()
            .map(|&n| {
                let p = self.grid.node(n);
                [p[0], p[1], p[2], field.time]
            })
            .collect();
        let pred = model.forward_batch(&pts);
        let s = problem.physics.scales.temperature;
        let sum: f64 = pred
            .iter()
            .zip(&nodes)
            .map(|(p, &n)| ((p - field.temperature[n]) / s).powi(2))
            .sum();
        sum / nodes.len().max(1) as f64
    }

    /// Data generation, training, then inference and correction windows to
    /// the horizon. Snapshots are emitted at the configured output times:
    /// inside correction windows from the solver, elsewhere from the
    /// surrogate current at that point of the timeline.
    pub fn run_hybrid<F>(&self, mut observer: F) -> std::result::Result<HybridOutcome, HybridFailure>
    where
        F: FnMut(HybridEvent<'_>),
    {
        let mut ledger = RunLedger::default();
        match self.run_hybrid_inner(&mut ledger, &mut observer) {
            Ok(outcome) => Ok(outcome),
            Err(error) => Err(HybridFailure { ledger, error }),
        }
    }

    fn run_hybrid_inner<F>(&self, ledger: &mut RunLedger, observer: &mut F) -> Result<HybridOutcome>
    where
        F: FnMut(HybridEvent<'_>),
    {
        let s = &self.schedule;
        let mut outputs = self.config.output_times();
        outputs.sort_by(f64::total_cmp);
        outputs.dedup();
        let record = |ledger: &mut RunLedger, observer: &mut F, kind, a, b, wall, metric| {
            ledger.push(kind, a, b, wall, metric);
            observer(HybridEvent::Phase(ledger.records.last().unwrap()));
        };

        let data = self.generate_training_data()?;
        info!("training data: {} labeled points, {:.3} s", data.set.labeled.len(), data.wall_clock);
        record(ledger, observer, PhaseKind::DataGen, 0.0, s.window_end, data.wall_clock, data.end_field.max_temperature());

        let mut problem = self.training_problem(&data)?;
        let mut audit = MeltAudit::new(&problem.table);
        let mut model = self.new_model()?;
        let mut adam = self.new_adam(&model);
        let start = Instant::now();
        let training_history = problem.train(&mut model, &mut adam, s.initial_epochs, |e| match e {
            TrainEvent::Epoch(r) => observer(HybridEvent::Epoch(PhaseKind::Train, r)),
            TrainEvent::Refreshed(t) => audit.observe(t),
        })?;
        let final_loss = match training_history.last() {
            Some(r) => r.total,
            None => problem.losses(&model, 0)?.total,
        };
        record(ledger, observer, PhaseKind::Train, 0.0, s.window_end, start.elapsed().as_secs_f64(), final_loss);
        let initial_model = model.clone();

        let mut snapshots = Vec::new();
        for &t in outputs.iter().filter(|&&t| t <= s.window_end) {
            snapshots.push(HybridSnapshot {
                field: self.predict(&model, &problem.table, t),
                source: Source::Surrogate,
            });
        }

        let mut residual_trace = Vec::new();
        let reference_residual = match s.trigger {
            Trigger::Fixed => None,
            Trigger::Residual { threshold } => {
                let r0 = problem.probe_residual(&model, s.window_end)?;
                residual_trace.push((s.window_end, r0));
                Some(threshold * r0)
            }
        };

        let mut corrections = Vec::new();
        let mut retrain_histories = Vec::new();
        let mut cursor = s.window_end;
        let tol = 1e-9 * s.horizon;
        let mut scheduled = s.correction_times.iter().copied();
        loop {
            // Next correction instant, or None to infer to the horizon.
            let infer_start = Instant::now();
            let next = match reference_residual {
                None => scheduled.next(),
                Some(limit) => {
                    let mut found = None;
                    let mut k = 1;
                    loop {
                        let t = cursor + k as f64 * s.inference_step;
                        if t + s.correction_duration > s.horizon + tol {
                            break;
                        }
                        let r = problem.probe_residual(&model, t)?;
                        residual_trace.push((t, r));
                        if r > limit {
                            found = Some(t);
                            break;
                        }
                        k += 1;
                    }
                    found
                }
            };
            let segment_end = next.unwrap_or(s.horizon);
            let mut peak = f64::NAN;
            for &t in outputs.iter().filter(|&&t| t > cursor + tol && t <= segment_end + tol) {
                let field = self.predict(&model, &problem.table, t);
                peak = peak.max(field.max_temperature());
                snapshots.push(HybridSnapshot {
                    field,
                    source: Source::Surrogate,
                });
            }
            if segment_end > cursor + tol {
                record(ledger, observer, PhaseKind::Infer, cursor, segment_end, infer_start.elapsed().as_secs_f64(), peak);
            }
            let Some(t_c) = next else { break };

            let end = t_c + s.correction_duration;
            let uncorrected = self.predict(&model, &problem.table, end);
            let c = self.correct(&model, &mut problem.table, t_c, s.correction_duration, &outputs)?;
            audit.observe(&problem.table);
            info!(
                "correction [{:.1}, {:.1}] us: {:.3} s, {} nodes clamped",
                t_c / US,
                end / US,
                c.wall_clock,
                c.clamped_nodes
            );
            record(ledger, observer, PhaseKind::Correct, t_c, end, c.wall_clock, c.corrected.max_temperature());
            for field in c.snapshots.iter().filter(|f| (f.time - end).abs() > tol) {
                snapshots.push(HybridSnapshot {
                    field: field.clone(),
                    source: Source::Solver,
                });
            }
            if outputs.iter().any(|&t| (t - end).abs() <= tol) {
                snapshots.push(HybridSnapshot {
                    field: c.corrected.clone(),
                    source: Source::Solver,
                });
            }

            let before = self.snapshot_loss(&problem, &model, &c.corrected);
            let start = Instant::now();
            let history = self.retrain(&mut problem, &mut model, &mut adam, &c.corrected, s.retrain_epochs, |e| match e {
                TrainEvent::Epoch(r) => observer(HybridEvent::Epoch(PhaseKind::Retrain, r)),
                TrainEvent::Refreshed(t) => audit.observe(t),
            })?;
            let after = self.snapshot_loss(&problem, &model, &c.corrected);
            let metric = history.last().map_or(f64::NAN, |r| r.total);
            record(ledger, observer, PhaseKind::Retrain, end, end, start.elapsed().as_secs_f64(), metric);
            retrain_histories.push(history);
            corrections.push(CorrectionRecord {
                start: t_c,
                end,
                uncorrected,
                corrected: c.corrected,
                clamped_nodes: c.clamped_nodes,
                snapshot_loss_before: before,
                snapshot_loss_after: after,
            });
            cursor = end;
        }
        ledger.check_tiling(s.window_end, s.horizon)?;
        snapshots.sort_by(|a, b| a.field.time.total_cmp(&b.field.time));
        Ok(HybridOutcome {
            ledger: ledger.clone(),
            snapshots,
            corrections,
            initial_model,
            model,
            adam,
            table: problem.table,
            training_history,
            retrain_histories,
            melted_counts: audit.counts,
            monotone: audit.monotone,
            residual_trace,
        })
    }

    /// Fine-tunes `pretrained` on solver data for this study's process
    /// parameters for `epochs`, with a fresh optimizer.
    pub fn transfer<F>(&self, pretrained: SurrogateModel, epochs: usize, mut observer: F) -> Result<TransferOutcome>
    where
        F: FnMut(&LossReport),
    {
        pretrained.validate()?;
        let data = self.generate_training_data()?;
        let mut problem = self.training_problem(&data)?;
        let mut model = pretrained;
        problem.refresh_state(&model);
        let rel = |m: &SurrogateModel, table: &StateTable| -> Result<Vec<f64>> {
            data.snapshots
                .iter()
                .map(|snap| {
                    let pred = self.predict(m, table, snap.time);
                    crate::io::metrics::field_relative_l2(&pred, snap)
                })
                .collect()
        };
        let rel_l2_before = rel(&model, &problem.table)?;
        let mut adam = self.new_adam(&model);
        let start = Instant::now();
        let history = problem.train(&mut model, &mut adam, epochs, |e| {
            if let TrainEvent::Epoch(r) = e {
                observer(r)
            }
        })?;
        let train_wall_clock = start.elapsed().as_secs_f64();
        let rel_l2_after = rel(&model, &problem.table)?;
        Ok(TransferOutcome {
            model,
            history,
            rel_l2_before,
            rel_l2_after,
            data_wall_clock: data.wall_clock,
            train_wall_clock,
        })
    }
}

/// First epoch whose total loss is at or below `threshold`.
pub fn epochs_to_threshold(history: &[LossReport], threshold: f64) -> Option<usize> {
    history.iter().position(|r| r.total <= threshold)
}

fn find_time(fields: &[ThermalField], t: f64) -> Result<&ThermalField> {
    let tol = 1e-9 * t.abs().max(1e-9);
    fields
        .iter()
        .find(|f| (f.time - t).abs() <= tol)
        .ok_or_else(|| invalid(format!("no field at {t:e} s")))
}
