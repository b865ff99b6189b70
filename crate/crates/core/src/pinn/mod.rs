//! Physics-informed training of the surrogate: data, PDE, boundary and
//! initial-condition losses, the melt-state ledger and the epoch loop.
//!
//! All losses are dimensionless. Temperatures are divided by
//! `ΔT_ref = T_ref_max − T₀`, the PDE residual by `ρ_ref C_ref ΔT_ref / t_ref`
//! and boundary flux residuals by the peak laser flux, so the default weights
//! `{1, 1, 1, 1e-4}` balance terms of comparable size.

mod state;

pub use state::{region_at, StateTable, DEFAULT_DT_STATE};

use std::io::Write;
use std::path::Path;

use crate::error::{invalid, Error, Result};
use crate::grid::{BoundaryPoint, CollocationSet, DomainSpec, Face, StructuredGrid};
use crate::material::{MaterialLibrary, PhaseState, SolidSide};
use crate::nn::dual::{Dual, Real};
use crate::nn::{AdamState, AffineMap, Jet, JetAdjoint, JetOrder, ParamGradient, SurrogateModel};
use crate::solver::{laser_flux, ProcessParams, ThermalField};

/// Reference density for the residual scale, kg/m³.
pub const RHO_REF: f64 = 7000.0;
/// Reference specific heat for the residual scale, J/(kg·K).
pub const CP_REF: f64 = 600.0;
/// Default upper reference temperature of the output map, K.
pub const DEFAULT_T_REF_MAX: f64 = 4000.0;
/// Default layer sizes of the surrogate.
pub const DEFAULT_LAYERS: [usize; 8] = [4, 32, 64, 64, 64, 64, 32, 1];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub data: f64,
    pub pde: f64,
    pub bc: f64,
    pub ic: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            data: 1.0,
            pde: 1.0,
            bc: 1.0,
            ic: 1e-4,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.data, self.pde, self.bc, self.ic];
        if w.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(invalid(format!("loss weights {w:?} must be finite and non-negative")));
        }
        Ok(())
    }

    pub fn total(&self, data: f64, pde: f64, bc: f64, ic: f64) -> f64 {
        self.data * data + self.pde * pde + self.bc * bc + self.ic * ic
    }
}

/// The four loss terms and their weighted sum at one epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossReport {
    pub epoch: usize,
    pub data: f64,
    pub pde: f64,
    pub bc: f64,
    pub ic: f64,
    pub total: f64,
}

/// Which expansion of the transient term the PDE residual uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ResidualForm {
    /// `∂(ρ C_p T)/∂t − k ∇²T`, with the time derivative expanded through the
    /// temperature dependence of `ρ C_p`.
    #[default]
    Literal,
    /// `ρ C_p ∂T/∂t − ∇·(k ∇T)`, the operator the solver discretizes.
    Conservative,
}

/// Reference scales that make the losses dimensionless.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossScales {
    /// ΔT_ref, K.
    pub temperature: f64,
    /// PDE residual scale, W/m³.
    pub residual: f64,
    /// Boundary flux scale, W/m².
    pub flux: f64,
}

impl LossScales {
    /// `ΔT_ref = t_ref_max − t0`, residual `ρ_ref C_ref ΔT_ref / horizon`,
    /// flux the peak laser flux (1 W/m² when the laser is off).
    pub fn new(t0: f64, t_ref_max: f64, horizon: f64, process: &ProcessParams) -> Result<Self> {
        let dt = t_ref_max - t0;
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(invalid(format!(
                "reference temperature {t_ref_max} K must exceed the initial temperature {t0} K"
            )));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(invalid(format!("horizon {horizon} s must be positive")));
        }
        let peak = process.peak_flux();
        Ok(Self {
            temperature: dt,
            residual: RHO_REF * CP_REF * dt / horizon,
            flux: if peak > 0.0 { peak } else { 1.0 },
        })
    }
}

/// Maps from the physical domain and horizon onto `[-1, 1]`.
pub fn input_maps(spec: &DomainSpec, horizon: f64) -> [AffineMap; 4] {
    let b = spec.bounds();
    [
        AffineMap::to_unit_interval(b[0].0, b[0].1),
        AffineMap::to_unit_interval(b[1].0, b[1].1),
        AffineMap::to_unit_interval(b[2].0, b[2].1),
        AffineMap::to_unit_interval(0.0, horizon),
    ]
}

/// `T = t0 + θ (t_ref_max − t0)`.
pub fn output_map(t0: f64, t_ref_max: f64) -> AffineMap {
    AffineMap {
        scale: t_ref_max - t0,
        offset: t0,
    }
}

/// Glorot-initialised surrogate with the standard input and output maps.
pub fn scaled_model(
    layer_sizes: &[usize],
    seed: u64,
    spec: &DomainSpec,
    horizon: f64,
    t0: f64,
    t_ref_max: f64,
) -> Result<SurrogateModel> {
    Ok(SurrogateModel::glorot(layer_sizes, seed)?.with_scaling(input_maps(spec, horizon), output_map(t0, t_ref_max)))
}

/// Material, process and scaling shared by the physics losses.
#[derive(Clone, Debug, PartialEq)]
pub struct Physics {
    pub material: MaterialLibrary,
    pub process: ProcessParams,
    pub scales: LossScales,
    pub form: ResidualForm,
}

impl Physics {
    pub fn t0(&self) -> f64 {
        self.process.ambient_k
    }

    /// Unscaled heat-equation residual, W/m³.
    pub fn pde_residual<S: Real>(&self, jet: &Jet<S>, side: SolidSide) -> S {
        let t = Dual::<S, 1>::variable(jet.value, 0);
        let props = self.material.props_for_side(t, side);
        let rho_cp = props.rho_cp();
        let lap = jet.hess[0] + jet.hess[1] + jet.hess[2];
        match self.form {
            ResidualForm::Literal => (rho_cp.re + jet.value * rho_cp.eps[0]) * jet.grad[3] - props.k.re * lap,
            ResidualForm::Conservative => {
                let g2 = jet.grad[0] * jet.grad[0] + jet.grad[1] * jet.grad[1] + jet.grad[2] * jet.grad[2];
                rho_cp.re * jet.grad[3] - props.k.re * lap - props.k.eps[0] * g2
            }
        }
    }

    /// Scaled boundary residual at one boundary point.
    pub fn bc_residual<S: Real>(&self, bp: &BoundaryPoint, jet: &Jet<S>, side: SolidSide) -> S {
        let p = &self.process;
        let t0 = p.ambient_k;
        let temp = jet.value;
        if bp.face == Face::Bottom {
            return (temp - t0) / self.scales.temperature;
        }
        let k = self.material.props_for_side(temp, side).k;
        let n = bp.normal;
        let dn = jet.grad[0] * n[0] + jet.grad[1] * n[1] + jet.grad[2] * n[2];
        let conduction = k * dn;
        let exchange = || {
            (temp - t0) * p.h_conv + (temp.powi(4) - t0.powi(4)) * (p.emissivity * p.stefan_boltzmann)
        };
        let r = match bp.face {
            Face::Top => {
                let q = laser_flux(bp.point[0], bp.point[1], bp.point[3], p);
                conduction - q + exchange()
            }
            Face::Lateral => conduction + exchange(),
            Face::Symmetry => conduction,
            Face::Bottom => unreachable!(),
        };
        r / self.scales.flux
    }
}

/// Collocation points, state ledger and settings of one training problem.
#[derive(Clone, Debug)]
pub struct TrainingProblem {
    pub physics: Physics,
    pub weights: LossWeights,
    pub set: CollocationSet,
    pub table: StateTable,
    /// End of the time range the surrogate covers, s.
    pub horizon: f64,
    /// Epochs between state refreshes; 0 disables refreshing.
    pub refresh_every: usize,
    /// Learning-rate schedule; `None` keeps the optimizer's rate.
    pub lr_decay: Option<LearningRateDecay>,
}

/// Exponential learning-rate decay keyed to the optimizer's step count, so a
/// resumed optimizer continues the schedule and a fresh one restarts it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LearningRateDecay {
    pub initial: f64,
    /// Multiplier applied per 1000 optimizer steps, in (0, 1].
    pub factor_per_1000: f64,
}

impl LearningRateDecay {
    pub fn rate(&self, step: u64) -> f64 {
        self.initial * self.factor_per_1000.powf(step as f64 / 1000.0)
    }
}

/// Default epochs between state refreshes.
pub const DEFAULT_REFRESH_EVERY: usize = 500;

impl TrainingProblem {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if let Some(d) = self.lr_decay {
            if !(d.initial > 0.0 && d.initial.is_finite() && d.factor_per_1000 > 0.0 && d.factor_per_1000 <= 1.0) {
                return Err(invalid(format!("learning-rate decay {d:?} needs a positive rate and a factor in (0, 1]")));
            }
        }
        let needed = self.set.interior.len() + self.set.boundary.len();
        if self.table.len() != needed {
            return Err(Error::ShapeMismatch(format!(
                "state table has {} entries for {needed} interior and boundary points",
                self.table.len()
            )));
        }
        if self.set.labels.len() != self.set.labeled.len() {
            return Err(Error::ShapeMismatch("labeled points and labels differ in length".into()));
        }
        if let Some(i) = self.set.labels.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!("label {i} is not attached")));
        }
        Ok(())
    }

    fn interior_side(&self, i: usize) -> SolidSide {
        let t = self.set.interior[i][3];
        SolidSide::of(self.table.state(i, t), self.table.regions[i])
    }

    fn boundary_side(&self, j: usize) -> SolidSide {
        let i = self.set.interior.len() + j;
        let t = self.set.boundary[j].point[3];
        SolidSide::of(self.table.state(i, t), self.table.regions[i])
    }

    fn report(&self, epoch: usize, data: f64, pde: f64, bc: f64, ic: f64) -> LossReport {
        LossReport {
            epoch,
            data,
            pde,
            bc,
            ic,
            total: self.weights.total(data, pde, bc, ic),
        }
    }

    /// Mean squared scaled misfit at the labeled points.
    pub fn data_loss(&self, model: &SurrogateModel) -> f64 {
        let pred = model.forward_batch(&self.set.labeled);
        mean_square(pred.iter().zip(&self.set.labels).map(|(p, l)| (p - l) / self.physics.scales.temperature))
    }

    /// Mean squared scaled deviation from `T₀` at the initial points.
    pub fn ic_loss(&self, model: &SurrogateModel) -> f64 {
        let pred = model.forward_batch(&self.set.initial);
        let t0 = self.physics.t0();
        mean_square(pred.iter().map(|p| (p - t0) / self.physics.scales.temperature))
    }

    /// Mean squared scaled PDE residual at the interior points.
    pub fn pde_loss(&self, model: &SurrogateModel) -> Result<f64> {
        self.validate()?;
        let jets = model.jets(&self.set.interior, JetOrder::Full);
        let s = self.physics.scales.residual;
        Ok(mean_square(
            jets.iter()
                .enumerate()
                .map(|(i, j)| self.physics.pde_residual(j, self.interior_side(i)) / s),
        ))
    }

    /// Mean squared scaled PDE residual at the interior points' locations,
    /// all evaluated at time `t`; the drift monitor of a hybrid run.
    pub fn probe_residual(&self, model: &SurrogateModel, t: f64) -> Result<f64> {
        self.validate()?;
        let probes: Vec<[f64; 4]> = self.set.interior.iter().map(|p| [p[0], p[1], p[2], t]).collect();
        let jets = model.jets(&probes, JetOrder::Full);
        let s = self.physics.scales.residual;
        Ok(mean_square(jets.iter().enumerate().map(|(i, j)| {
            let side = SolidSide::of(self.table.state(i, t), self.table.regions[i]);
            self.physics.pde_residual(j, side) / s
        })))
    }

    /// Mean squared scaled boundary residual.
    pub fn bc_loss(&self, model: &SurrogateModel) -> Result<f64> {
        self.validate()?;
        let pts: Vec<[f64; 4]> = self.set.boundary.iter().map(|b| b.point).collect();
        let jets = model.jets(&pts, JetOrder::Gradient);
        Ok(mean_square(jets.iter().enumerate().map(|(j, jet)| {
            self.physics.bc_residual(&self.set.boundary[j], jet, self.boundary_side(j))
        })))
    }

    /// All four losses without gradients.
    pub fn losses(&self, model: &SurrogateModel, epoch: usize) -> Result<LossReport> {
        let pde = self.pde_loss(model)?;
        let bc = self.bc_loss(model)?;
        Ok(self.report(epoch, self.data_loss(model), pde, bc, self.ic_loss(model)))
    }

    /// The four losses and the gradient of their weighted sum.
    pub fn loss_and_gradient(&self, model: &SurrogateModel, epoch: usize) -> Result<(LossReport, ParamGradient)> {
        self.validate()?;
        let scales = self.physics.scales;
        let w = self.weights;
        let mut grad = ParamGradient::zeros_like(model);
        let mut accumulate = |g: &mut ParamGradient, weight: f64| {
            if weight != 0.0 {
                g.scale(weight);
                grad.add_assign(g);
            }
        };

        let (data, mut g) = mean_square_gradient(model, &self.set.labeled, |i, v| {
            (v - self.set.labels[i]) / scales.temperature
        }, scales.temperature)?;
        accumulate(&mut g, w.data);

        let t0 = self.physics.t0();
        let (ic, mut g) =
            mean_square_gradient(model, &self.set.initial, |_, v| (v - t0) / scales.temperature, scales.temperature)?;
        accumulate(&mut g, w.ic);

        let (pde, mut g) = if self.set.interior.is_empty() {
            (0.0, ParamGradient::zeros_like(model))
        } else {
            let inv_n = 1.0 / self.set.interior.len() as f64;
            model.param_gradient(&self.set.interior, JetOrder::Full, |i, jet| {
                let r = self.physics.pde_residual(jet, self.interior_side(i)) / scales.residual;
                r * r * inv_n
            })?
        };
        accumulate(&mut g, w.pde);

        let (bc, mut g) = if self.set.boundary.is_empty() {
            (0.0, ParamGradient::zeros_like(model))
        } else {
            let inv_n = 1.0 / self.set.boundary.len() as f64;
            let pts: Vec<[f64; 4]> = self.set.boundary.iter().map(|b| b.point).collect();
            model.param_gradient(&pts, JetOrder::Gradient, |j, jet| {
                let r = self.physics.bc_residual(&self.set.boundary[j], jet, self.boundary_side(j));
                r * r * inv_n
            })?
        };
        accumulate(&mut g, w.bc);

        let report = self.report(epoch, data, pde, bc, ic);
        if !report.total.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                detail: format!("{report:?}"),
            });
        }
        Ok((report, grad))
    }

    /// Re-derives first-melt times from the model over `[0, horizon]`.
    pub fn refresh_state(&mut self, model: &SurrogateModel) {
        self.table.refresh(model, self.horizon, self.physics.material.liquidus_k);
    }

    /// Full-batch Adam training for `epochs` epochs.
    ///
    /// Each history entry holds the losses of the parameters the epoch
    /// started from. Every `refresh_every` epochs the state table is
    /// re-derived from the model before the epoch's losses are assembled.
    /// `observer` sees each report and the table after every refresh.
    ///
    /// On a non-finite loss the model and optimizer are restored to the last
    /// parameters whose loss was finite and the error is returned.
    pub fn train<F>(
        &mut self,
        model: &mut SurrogateModel,
        adam: &mut AdamState,
        epochs: usize,
        mut observer: F,
    ) -> Result<Vec<LossReport>>
    where
        F: FnMut(TrainEvent<'_>),
    {
        self.validate()?;
        let mut history = Vec::with_capacity(epochs);
        let mut last_good = (model.clone(), adam.clone());
        for epoch in 0..epochs {
            if self.refresh_every > 0 && epoch > 0 && epoch % self.refresh_every == 0 {
                self.refresh_state(model);
                observer(TrainEvent::Refreshed(&self.table));
            }
            let (report, grad) = match self.loss_and_gradient(model, epoch) {
                Ok(v) => v,
                Err(e) => {
                    *model = last_good.0;
                    *adam = last_good.1;
                    return Err(match e {
                        Error::NonFiniteLoss { detail, .. } => Error::NonFiniteLoss { epoch, detail },
                        other => other,
                    });
                }
            };
            last_good = (model.clone(), adam.clone());
            if let Some(decay) = self.lr_decay {
                adam.learning_rate = decay.rate(adam.step);
            }
            if let Err(e) = adam.step(model, &grad) {
                *model = last_good.0;
                *adam = last_good.1;
                return Err(match e {
                    Error::NonFiniteLoss { detail, .. } => Error::NonFiniteLoss { epoch, detail },
                    other => other,
                });
            }
            observer(TrainEvent::Epoch(&report));
            history.push(report);
        }
        Ok(history)
    }
}

/// Progress notifications from [`TrainingProblem::train`].
#[derive(Debug)]
pub enum TrainEvent<'a> {
    Epoch(&'a LossReport),
    Refreshed(&'a StateTable),
}

fn mean_square(values: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = values.len();
    if n == 0 {
        return 0.0;
    }
    values.map(|v| v * v).sum::<f64>() / n as f64
}

/// Mean of `r(i, T)²` over value-only points, with its parameter gradient;
/// `r` must be affine in `T` with slope `1 / scale`.
fn mean_square_gradient<F>(
    model: &SurrogateModel,
    points: &[[f64; 4]],
    r: F,
    scale: f64,
) -> Result<(f64, ParamGradient)>
where
    F: Fn(usize, f64) -> f64 + Sync,
{
    if points.is_empty() {
        return Ok((0.0, ParamGradient::zeros_like(model)));
    }
    let inv_n = 1.0 / points.len() as f64;
    model.gradient_with(points, JetOrder::Value, |i, jet| {
        let v = r(i, jet.value);
        let adj = JetAdjoint {
            value: 2.0 * v * inv_n / scale,
            ..Default::default()
        };
        (v * v * inv_n, adj)
    })
}

/// Evaluates the surrogate on every grid node at `time`.
///
/// A node's first-melt time is the earliest of: the first scan time (on the
/// table's `dt_state` grid, plus `time` itself) at which the model exceeds the
/// liquidus there, and the first-melt time of the nearest state-table point.
pub fn predict_field(
    model: &SurrogateModel,
    table: &StateTable,
    grid: &StructuredGrid,
    time: f64,
    liquidus: f64,
) -> ThermalField {
    let nodes = grid.nodes();
    let query: Vec<[f64; 4]> = nodes.iter().map(|p| [p[0], p[1], p[2], time]).collect();
    let temperature = model.forward_batch(&query);
    let mut times = table.scan_times(time);
    if times.last().map_or(true, |&t| t < time) {
        times.push(time);
    }
    let mut t_min = state::first_crossings(model, &nodes, &times, liquidus);
    if !table.is_empty() {
        for (n, p) in nodes.iter().enumerate() {
            let nearest = nearest_point(&table.points, *p);
            if let Some(tp) = table.t_min[nearest] {
                if tp <= time {
                    t_min[n] = Some(t_min[n].map_or(tp, |t| t.min(tp)));
                }
            }
        }
    }
    let state = t_min
        .iter()
        .map(|t| PhaseState::from_flag(matches!(t, Some(t) if *t <= time)))
        .collect();
    ThermalField {
        time,
        temperature,
        state,
        t_min,
    }
}

fn nearest_point(points: &[[f64; 3]], p: [f64; 3]) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (i, q) in points.iter().enumerate() {
        let d = (q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2) + (q[2] - p[2]).powi(2);
        if d < best.0 {
            best = (d, i);
        }
    }
    best.1
}

/// Writes `epoch,L_data,L_PDE,L_BC,L_IC,L_total` rows.
pub fn write_loss_history(path: &Path, history: &[LossReport]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "epoch,L_data,L_PDE,L_BC,L_IC,L_total")?;
    for r in history {
        writeln!(
            out,
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            r.epoch, r.data, r.pde, r.bc, r.ic, r.total
        )?;
    }
    out.flush()?;
    Ok(())
}
