//! Simulation domain, graded structured grid and collocation sampling.
//!
//! The domain is the box `[0, L] × [y_min, W/2] × [0, H_sub + H_powder]` with
//! the powder layer on top of the substrate; with symmetry on, `y_min = 0` and
//! the plane `y = 0` is the symmetry plane containing the scan path.

use rand::distributions::{Distribution, Uniform};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};
use crate::UM;

#[derive(Clone, Debug, PartialEq)]
pub struct DomainSpec {
    pub length_x: f64,
    /// Full width; the half model spans `[0, width_y / 2]`.
    pub width_y: f64,
    pub substrate_depth: f64,
    pub powder_thickness: f64,
    pub symmetry: bool,
    pub laser_start_x: f64,
}

impl DomainSpec {
    pub fn paper_default() -> Self {
        Self {
            length_x: 800.0 * UM,
            width_y: 200.0 * UM,
            substrate_depth: 90.0 * UM,
            powder_thickness: 30.0 * UM,
            symmetry: true,
            laser_start_x: 160.0 * UM,
        }
    }

    /// Reduced problem used by the acceptance suite.
    pub fn desk_scale() -> Self {
        Self {
            length_x: 400.0 * UM,
            width_y: 100.0 * UM,
            substrate_depth: 60.0 * UM,
            powder_thickness: 30.0 * UM,
            symmetry: true,
            laser_start_x: 120.0 * UM,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("length_x", self.length_x),
            ("width_y", self.width_y),
            ("substrate_depth", self.substrate_depth),
            ("powder_thickness", self.powder_thickness),
        ];
        for (name, v) in dims {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.laser_start_x >= 0.0 && self.laser_start_x <= self.length_x) {
            return Err(invalid(format!(
                "laser start {} m outside [0, {}] m",
                self.laser_start_x, self.length_x
            )));
        }
        Ok(())
    }

    pub fn y_min(&self) -> f64 {
        if self.symmetry {
            0.0
        } else {
            -0.5 * self.width_y
        }
    }

    pub fn y_max(&self) -> f64 {
        0.5 * self.width_y
    }

    pub fn height(&self) -> f64 {
        self.substrate_depth + self.powder_thickness
    }

    /// z of the powder/substrate interface.
    pub fn interface_z(&self) -> f64 {
        self.substrate_depth
    }

    /// `[lo, hi]` per axis.
    pub fn bounds(&self) -> [(f64, f64); 3] {
        [
            (0.0, self.length_x),
            (self.y_min(), self.y_max()),
            (0.0, self.height()),
        ]
    }
}

/// Axis-aligned box with the fine spacing used inside it.
#[derive(Clone, Debug, PartialEq)]
pub struct RefinementBox {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
    pub spacing: [f64; 3],
}

impl RefinementBox {
    /// Scan path ± 100 µm in x, `y ≤ 80 µm`, top 60 µm, spacing 7.6 × 10 × 12 µm.
    pub fn paper_default() -> Self {
        Self {
            lo: [60.0 * UM, 0.0, 60.0 * UM],
            hi: [740.0 * UM, 80.0 * UM, 120.0 * UM],
            spacing: [7.6 * UM, 10.0 * UM, 12.0 * UM],
        }
    }

    pub fn desk_scale() -> Self {
        Self {
            lo: [20.0 * UM, 0.0, 30.0 * UM],
            hi: [380.0 * UM, 40.0 * UM, 90.0 * UM],
            spacing: [7.6 * UM, 10.0 * UM, 12.0 * UM],
        }
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|a| p[a] >= self.lo[a] && p[a] <= self.hi[a])
    }

    /// Intersection with the domain; `None` if empty.
    pub fn clipped(&self, spec: &DomainSpec) -> Option<([f64; 3], [f64; 3])> {
        let b = spec.bounds();
        let mut lo = [0.0; 3];
        let mut hi = [0.0; 3];
        for a in 0..3 {
            lo[a] = self.lo[a].max(b[a].0);
            hi[a] = self.hi[a].min(b[a].1);
            if hi[a] <= lo[a] {
                return None;
            }
        }
        Some((lo, hi))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StructuredGrid {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub refinement: RefinementBox,
}

impl StructuredGrid {
    /// Grid from explicit axes; each must be strictly increasing.
    pub fn from_axes(x: Vec<f64>, y: Vec<f64>, z: Vec<f64>) -> Result<Self> {
        for (name, axis) in [("x", &x), ("y", &y), ("z", &z)] {
            if axis.len() < 2 {
                return Err(invalid(format!("{name} axis needs at least two nodes")));
            }
            if axis.windows(2).any(|w| !(w[1] > w[0])) || axis.iter().any(|v| !v.is_finite()) {
                return Err(invalid(format!("{name} axis is not strictly increasing")));
            }
        }
        let spacing = [
            min_spacing(&x),
            min_spacing(&y),
            min_spacing(&z),
        ];
        let refinement = RefinementBox {
            lo: [x[0], y[0], z[0]],
            hi: [*x.last().unwrap(), *y.last().unwrap(), *z.last().unwrap()],
            spacing,
        };
        Ok(Self { x, y, z, refinement })
    }

    pub fn uniform(spec: &DomainSpec, counts: [usize; 3]) -> Result<Self> {
        let b = spec.bounds();
        let axis = |a: usize| -> Vec<f64> {
            let n = counts[a].max(1);
            (0..=n)
                .map(|i| b[a].0 + (b[a].1 - b[a].0) * i as f64 / n as f64)
                .collect()
        };
        Self::from_axes(axis(0), axis(1), axis(2))
    }

    pub fn axis(&self, a: usize) -> &[f64] {
        match a {
            0 => &self.x,
            1 => &self.y,
            _ => &self.z,
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.x.len(), self.y.len(), self.z.len()]
    }

    pub fn node_count(&self) -> usize {
        self.x.len() * self.y.len() * self.z.len()
    }

    pub fn cell_count(&self) -> usize {
        (self.x.len() - 1) * (self.y.len() - 1) * (self.z.len() - 1)
    }

    /// Linear node index; x varies fastest.
    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.y.len() + j) * self.x.len() + i
    }

    #[inline]
    pub fn ijk(&self, index: usize) -> (usize, usize, usize) {
        let nx = self.x.len();
        let ny = self.y.len();
        (index % nx, (index / nx) % ny, index / (nx * ny))
    }

    #[inline]
    pub fn node(&self, index: usize) -> [f64; 3] {
        let (i, j, k) = self.ijk(index);
        [self.x[i], self.y[j], self.z[k]]
    }

    pub fn nodes(&self) -> Vec<[f64; 3]> {
        (0..self.node_count()).map(|n| self.node(n)).collect()
    }

    pub fn bounds(&self) -> [(f64, f64); 3] {
        [0, 1, 2].map(|a| {
            let ax = self.axis(a);
            (ax[0], ax[ax.len() - 1])
        })
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        let b = self.bounds();
        (0..3).all(|a| p[a] >= b[a].0 && p[a] <= b[a].1)
    }

    pub fn min_spacing(&self) -> [f64; 3] {
        [min_spacing(&self.x), min_spacing(&self.y), min_spacing(&self.z)]
    }

    /// Largest ratio between adjacent spacings over all three axes.
    pub fn max_grading_ratio(&self) -> f64 {
        (0..3)
            .map(|a| grading_ratio(self.axis(a)))
            .fold(1.0, f64::max)
    }

    /// Control-volume extent of node `i` along an axis (half cells each side).
    pub fn dual_width(&self, a: usize, i: usize) -> f64 {
        let ax = self.axis(a);
        let left = if i > 0 { ax[i] - ax[i - 1] } else { 0.0 };
        let right = if i + 1 < ax.len() { ax[i + 1] - ax[i] } else { 0.0 };
        0.5 * (left + right)
    }

    pub fn node_volume(&self, index: usize) -> f64 {
        let (i, j, k) = self.ijk(index);
        self.dual_width(0, i) * self.dual_width(1, j) * self.dual_width(2, k)
    }

    /// Trilinear interpolation of nodal `values` at `p`.
    pub fn interpolate(&self, values: &[f64], p: [f64; 3]) -> Option<f64> {
        if values.len() != self.node_count() || !self.contains(p) {
            return None;
        }
        let mut cell = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let ax = self.axis(a);
            let c = locate(ax, p[a]);
            cell[a] = c;
            frac[a] = (p[a] - ax[c]) / (ax[c + 1] - ax[c]);
        }
        let mut acc = 0.0;
        for corner in 0..8 {
            let (di, dj, dk) = (corner & 1, (corner >> 1) & 1, (corner >> 2) & 1);
            let w = (if di == 1 { frac[0] } else { 1.0 - frac[0] })
                * (if dj == 1 { frac[1] } else { 1.0 - frac[1] })
                * (if dk == 1 { frac[2] } else { 1.0 - frac[2] });
            if w != 0.0 {
                acc += w * values[self.index(cell[0] + di, cell[1] + dj, cell[2] + dk)];
            }
        }
        Some(acc)
    }

    /// Index of the node nearest to `p` (clamped to the grid).
    pub fn nearest_node(&self, p: [f64; 3]) -> usize {
        let mut ijk = [0usize; 3];
        for a in 0..3 {
            let ax = self.axis(a);
            let c = locate(ax, p[a].clamp(ax[0], ax[ax.len() - 1]));
            ijk[a] = if p[a] - ax[c] <= ax[c + 1] - p[a] { c } else { c + 1 };
        }
        self.index(ijk[0], ijk[1], ijk[2])
    }
}

/// Cell index `c` with `ax[c] ≤ v ≤ ax[c + 1]`, for `v` inside the axis.
fn locate(ax: &[f64], v: f64) -> usize {
    let pos = ax.partition_point(|&a| a <= v);
    pos.saturating_sub(1).min(ax.len() - 2)
}

fn min_spacing(ax: &[f64]) -> f64 {
    ax.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
}

fn grading_ratio(ax: &[f64]) -> f64 {
    let h: Vec<f64> = ax.windows(2).map(|w| w[1] - w[0]).collect();
    h.windows(2)
        .map(|w| (w[1] / w[0]).max(w[0] / w[1]))
        .fold(1.0, f64::max)
}

/// Largest ratio between adjacent cells in graded zones.
pub const MAX_GRADING: f64 = 1.5;

/// Builds the graded, non-uniform grid: exact `spacing` inside the
/// refinement box, geometric growth (ratio ≤ 1.5) towards `coarse_dx`
/// outside it.
pub fn build_grid(spec: &DomainSpec, coarse_dx: f64, refine: &RefinementBox) -> Result<StructuredGrid> {
    spec.validate()?;
    let bounds = spec.bounds();
    for a in 0..3 {
        let h = refine.spacing[a];
        if !(h.is_finite() && h > 0.0) {
            return Err(invalid(format!("fine spacing on axis {a} must be positive")));
        }
        if !(coarse_dx >= h) {
            return Err(invalid(format!(
                "coarse spacing {coarse_dx} m is finer than fine spacing {h} m"
            )));
        }
        let tol = 1e-12 * (bounds[a].1 - bounds[a].0);
        if refine.lo[a] < bounds[a].0 - tol
            || refine.hi[a] > bounds[a].1 + tol
            || refine.hi[a] <= refine.lo[a]
        {
            return Err(invalid(format!(
                "refinement box [{}, {}] m on axis {a} lies outside the domain [{}, {}] m",
                refine.lo[a], refine.hi[a], bounds[a].0, bounds[a].1
            )));
        }
    }
    let clamp = |a: usize| {
        (
            refine.lo[a].max(bounds[a].0),
            refine.hi[a].min(bounds[a].1),
        )
    };
    let (x_lo, x_hi) = clamp(0);
    let x = graded_axis(bounds[0].0, bounds[0].1, x_lo, x_hi, refine.spacing[0], coarse_dx);
    let (z_lo, z_hi) = clamp(2);
    let z = graded_axis(bounds[2].0, bounds[2].1, z_lo, z_hi, refine.spacing[2], coarse_dx);
    let y = if spec.symmetry {
        let (lo, hi) = clamp(1);
        graded_axis(0.0, spec.y_max(), lo, hi, refine.spacing[1], coarse_dx)
    } else {
        // Build the half axis and mirror it so the scan plane is a node plane.
        let hi = refine.hi[1].min(spec.y_max()).max(refine.spacing[1]);
        let half = graded_axis(0.0, spec.y_max(), 0.0, hi, refine.spacing[1], coarse_dx);
        let mut full: Vec<f64> = half.iter().rev().map(|v| -v).collect();
        full.pop();
        full.extend_from_slice(&half);
        full
    };
    let mut grid = StructuredGrid::from_axes(x, y, z)?;
    grid.refinement = refine.clone();
    Ok(grid)
}

/// One graded axis on `[lo, hi]` with fine zone covering `[a, b]`.
fn graded_axis(lo: f64, hi: f64, a: f64, b: f64, hf: f64, hc: f64) -> Vec<f64> {
    let total = hi - lo;
    let tol = 1e-9 * hf;
    let uniform = |n: usize| -> Vec<f64> {
        (0..=n)
            .map(|i| if i == n { hi } else { lo + total * i as f64 / n as f64 })
            .collect()
    };
    let (mut a, mut b) = (a, b);
    for _ in 0..4 {
        // Sides too short to grade are absorbed into the fine zone.
        if a - lo < 2.0 * hf - tol {
            a = lo;
        }
        if hi - b < 2.0 * hf - tol {
            b = hi;
        }
        if a <= lo && b >= hi {
            let n = ((total / hf) - 1e-9).ceil().max(1.0) as usize;
            return uniform(n);
        }
        let n = (((b - a) / hf) - 1e-9).ceil().max(1.0) as usize;
        let len = n as f64 * hf;
        if len > total - tol {
            let n = ((total / hf) - 1e-9).ceil().max(1.0) as usize;
            return uniform(n);
        }
        let mut s = if b >= hi { hi - len } else { a };
        if s + len > hi {
            s = hi - len;
        }
        let (na, nb) = (s, s + len);
        let left_ok = na - lo <= tol || na - lo >= 2.0 * hf - tol;
        let right_ok = hi - nb <= tol || hi - nb >= 2.0 * hf - tol;
        if left_ok && right_ok {
            let left = graded_side(na - lo, hf, hc);
            let right = graded_side(hi - nb, hf, hc);
            let mut nodes = Vec::with_capacity(left.len() + n + right.len() + 1);
            // Left side grows away from the fine zone towards `lo`.
            let mut acc = na;
            for h in &left {
                acc -= h;
                nodes.push(acc);
            }
            nodes.reverse();
            if let Some(first) = nodes.first_mut() {
                *first = lo;
            }
            for i in 0..=n {
                nodes.push(na + i as f64 * hf);
            }
            if left.is_empty() {
                nodes[0] = lo;
            }
            if right.is_empty() {
                *nodes.last_mut().unwrap() = hi;
            }
            let mut acc = nb;
            for (i, h) in right.iter().enumerate() {
                acc += h;
                nodes.push(if i + 1 == right.len() { hi } else { acc });
            }
            return nodes;
        }
        a = na;
        b = nb;
    }
    let n = ((total / hf) - 1e-9).ceil().max(1.0) as usize;
    uniform(n)
}

/// Cell sizes filling a side of length `d ≥ 2·hf`, starting next to the fine
/// zone: `min(hf·rⁱ, hc)` with `r ∈ [1, 1.5]` solved so the sizes sum to `d`.
fn graded_side(d: f64, hf: f64, hc: f64) -> Vec<f64> {
    if d <= 1e-9 * hf {
        return Vec::new();
    }
    if hc < MAX_GRADING * hf {
        let n = ((d / hf) + 1e-9).floor().max(1.0) as usize;
        return vec![d / n as f64; n];
    }
    let sizes = |r: f64, n: usize| -> Vec<f64> {
        let mut h = hf;
        (0..n)
            .map(|_| {
                h = (h * r).min(hc);
                h
            })
            .collect()
    };
    let sum = |r: f64, n: usize| sizes(r, n).iter().sum::<f64>();
    let mut n = 1;
    while sum(MAX_GRADING, n) < d {
        n += 1;
    }
    let (mut lo, mut hi) = (1.0, MAX_GRADING);
    if sum(1.0, n) > d {
        // Only reachable for d < 2·hf, which callers absorb.
        return vec![d / n as f64; n];
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if sum(mid, n) < d {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut out = sizes(hi, n);
    let excess = out.iter().sum::<f64>() - d;
    *out.last_mut().unwrap() -= excess;
    out
}

/// Boundary face of the domain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Face {
    /// `z = top`: laser, convection and radiation.
    Top,
    /// `z = 0`: fixed temperature.
    Bottom,
    /// `y = 0` in the half model: zero normal flux.
    Symmetry,
    /// Remaining side faces: convection and radiation.
    Lateral,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundaryPoint {
    /// `(x, y, z, t)`.
    pub point: [f64; 4],
    /// Outward unit normal.
    pub normal: [f64; 3],
    pub face: Face,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CollocationCounts {
    /// Labeled grid nodes per snapshot; at least the node count means all.
    pub labeled_per_snapshot: usize,
    pub interior: usize,
    pub boundary: usize,
    pub initial: usize,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct CollocationSet {
    /// Labeled `(x, y, z, t)`.
    pub labeled: Vec<[f64; 4]>,
    /// Reference temperatures for `labeled`, K (NaN until attached).
    pub labels: Vec<f64>,
    /// Grid node of each labeled point.
    pub labeled_nodes: Vec<usize>,
    pub interior: Vec<[f64; 4]>,
    pub boundary: Vec<BoundaryPoint>,
    /// Initial-condition points, `t = 0`.
    pub initial: Vec<[f64; 4]>,
}

impl CollocationSet {
    pub fn validate(&self, spec: &DomainSpec, horizon: f64) -> Result<()> {
        if self.labels.len() != self.labeled.len() || self.labeled_nodes.len() != self.labeled.len() {
            return Err(Error::ShapeMismatch("labeled arrays differ in length".into()));
        }
        let b = spec.bounds();
        let tol = 1e-12;
        let inside = |p: &[f64; 4]| {
            (0..3).all(|a| p[a] >= b[a].0 - tol && p[a] <= b[a].1 + tol)
                && p[3] >= 0.0
                && p[3] <= horizon * (1.0 + 1e-12)
        };
        let all = self
            .labeled
            .iter()
            .chain(&self.interior)
            .chain(self.boundary.iter().map(|bp| &bp.point))
            .chain(&self.initial);
        for (i, p) in all.enumerate() {
            if !inside(p) {
                return Err(Error::OutOfBounds { index: i, x: p[0], y: p[1], z: p[2] });
            }
        }
        for bp in &self.boundary {
            let n = bp.normal;
            if ((n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt() - 1.0).abs() > 1e-12 {
                return Err(invalid("boundary normal is not unit length"));
            }
        }
        Ok(())
    }

    /// Appends one labeled snapshot at time `t` for the given nodes.
    pub fn push_snapshot(&mut self, grid: &StructuredGrid, nodes: &[usize], t: f64, values: &[f64]) {
        for &n in nodes {
            let p = grid.node(n);
            self.labeled.push([p[0], p[1], p[2], t]);
            self.labels.push(values[n]);
            self.labeled_nodes.push(n);
        }
    }

    /// Distinct spatial locations of the interior and boundary points, in
    /// that order; the melt-state table is indexed the same way.
    pub fn state_points(&self) -> Vec<[f64; 3]> {
        self.interior
            .iter()
            .map(|p| [p[0], p[1], p[2]])
            .chain(self.boundary.iter().map(|b| [b.point[0], b.point[1], b.point[2]]))
            .collect()
    }
}

/// Grid nodes labeled at each snapshot: every node inside the refinement box
/// plus a uniform subsample of the rest, `count` in total.
pub fn labeled_nodes(grid: &StructuredGrid, count: usize, seed: u64) -> Vec<usize> {
    let total = grid.node_count();
    if count >= total {
        return (0..total).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6c61_6265_6c73);
    let (mut inside, mut outside): (Vec<usize>, Vec<usize>) =
        (0..total).partition(|&n| grid.refinement.contains(grid.node(n)));
    let mut chosen = if inside.len() >= count {
        inside.shuffle(&mut rng);
        inside.truncate(count);
        inside
    } else {
        outside.shuffle(&mut rng);
        outside.truncate(count - inside.len());
        inside.extend(outside);
        inside
    };
    chosen.sort_unstable();
    chosen
}

/// Deterministic stratified sampling of the training points. Interior and
/// boundary times are uniform on `[0, horizon]`. A fraction `density_ratio`
/// of interior, boundary and initial points is drawn inside the refinement
/// box, the rest uniformly over the domain. Labeled points are grid nodes at
/// `snapshot_times` whose temperatures are attached later.
pub fn sample_collocation(
    spec: &DomainSpec,
    grid: &StructuredGrid,
    counts: CollocationCounts,
    snapshot_times: &[f64],
    horizon: f64,
    density_ratio: f64,
    seed: u64,
) -> Result<CollocationSet> {
    spec.validate()?;
    if counts.interior == 0 || counts.boundary == 0 || counts.initial == 0 {
        return Err(invalid("collocation counts must be positive"));
    }
    if !(0.0..=1.0).contains(&density_ratio) {
        return Err(invalid(format!("density ratio {density_ratio} outside [0, 1]")));
    }
    if !(horizon > 0.0) {
        return Err(invalid("horizon must be positive"));
    }
    for &t in snapshot_times {
        if !(t >= 0.0 && t <= horizon * (1.0 + 1e-12)) {
            return Err(invalid(format!(
                "snapshot time {t} s outside the horizon [0, {horizon}] s"
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bounds = spec.bounds();
    let boxed = grid.refinement.clipped(spec).unwrap_or_else(|| {
        (
            [bounds[0].0, bounds[1].0, bounds[2].0],
            [bounds[0].1, bounds[1].1, bounds[2].1],
        )
    });
    let unit = Uniform::new(0.0f64, 1.0);
    let mut draw = |lo: f64, hi: f64, rng: &mut ChaCha8Rng| lo + (hi - lo) * unit.sample(rng);

    let mut set = CollocationSet::default();
    let nodes = labeled_nodes(grid, counts.labeled_per_snapshot, seed);
    for &t in snapshot_times {
        for &n in &nodes {
            let p = grid.node(n);
            set.labeled.push([p[0], p[1], p[2], t]);
            set.labels.push(f64::NAN);
            set.labeled_nodes.push(n);
        }
    }

    let n_boxed = |n: usize| (density_ratio * n as f64).round() as usize;
    let spatial = |inside: bool, rng: &mut ChaCha8Rng, draw: &mut dyn FnMut(f64, f64, &mut ChaCha8Rng) -> f64| {
        let mut p = [0.0; 3];
        for a in 0..3 {
            p[a] = if inside {
                draw(boxed.0[a], boxed.1[a], rng)
            } else {
                draw(bounds[a].0, bounds[a].1, rng)
            };
        }
        p
    };

    let nb = n_boxed(counts.interior);
    for i in 0..counts.interior {
        let p = spatial(i < nb, &mut rng, &mut draw);
        let t = draw(0.0, horizon, &mut rng);
        set.interior.push([p[0], p[1], p[2], t]);
    }

    let nb = n_boxed(counts.initial);
    for i in 0..counts.initial {
        let p = spatial(i < nb, &mut rng, &mut draw);
        set.initial.push([p[0], p[1], p[2], 0.0]);
    }

    // Faces: top 50 %, symmetry (or far side) 20 %, bottom 10 %, remaining
    // lateral faces 20 % split by area.
    let (lx, ly, lz) = (
        bounds[0].1 - bounds[0].0,
        bounds[1].1 - bounds[1].0,
        bounds[2].1 - bounds[2].0,
    );
    let n_top = counts.boundary / 2;
    let n_sym = counts.boundary / 5;
    let n_bottom = counts.boundary / 10;
    let n_lat = counts.boundary - n_top - n_sym - n_bottom;
    let plane = |face: Face, normal: [f64; 3], fixed_axis: usize, value: f64, n: usize,
                     rng: &mut ChaCha8Rng, draw: &mut dyn FnMut(f64, f64, &mut ChaCha8Rng) -> f64,
                     out: &mut Vec<BoundaryPoint>| {
        let nb = n_boxed(n);
        for i in 0..n {
            let mut p = spatial(i < nb, rng, draw);
            p[fixed_axis] = value;
            let t = draw(0.0, horizon, rng);
            out.push(BoundaryPoint { point: [p[0], p[1], p[2], t], normal, face });
        }
    };
    let mut boundary = Vec::with_capacity(counts.boundary);
    plane(Face::Top, [0.0, 0.0, 1.0], 2, bounds[2].1, n_top, &mut rng, &mut draw, &mut boundary);
    if spec.symmetry {
        plane(Face::Symmetry, [0.0, -1.0, 0.0], 1, 0.0, n_sym, &mut rng, &mut draw, &mut boundary);
    } else {
        plane(Face::Lateral, [0.0, -1.0, 0.0], 1, bounds[1].0, n_sym, &mut rng, &mut draw, &mut boundary);
    }
    plane(Face::Bottom, [0.0, 0.0, -1.0], 2, bounds[2].0, n_bottom, &mut rng, &mut draw, &mut boundary);
    // x-min, x-max and y-max, by area.
    let areas = [ly * lz, ly * lz, lx * lz];
    let total_area: f64 = areas.iter().sum();
    let mut left = n_lat;
    let faces = [
        ([-1.0, 0.0, 0.0], 0usize, bounds[0].0),
        ([1.0, 0.0, 0.0], 0, bounds[0].1),
        ([0.0, 1.0, 0.0], 1, bounds[1].1),
    ];
    for (f, (normal, axis, value)) in faces.iter().enumerate() {
        let n = if f == 2 {
            left
        } else {
            ((n_lat as f64) * areas[f] / total_area).round() as usize
        };
        let n = n.min(left);
        left -= n;
        plane(Face::Lateral, *normal, *axis, *value, n, &mut rng, &mut draw, &mut boundary);
    }
    set.boundary = boundary;
    Ok(set)
}

/// Trilinear interpolation of a nodal field at arbitrary points.
pub fn interpolate_to_points(grid: &StructuredGrid, values: &[f64], points: &[[f64; 3]]) -> Result<Vec<f64>> {
    if values.len() != grid.node_count() {
        return Err(Error::ShapeMismatch(format!(
            "{} values for {} nodes",
            values.len(),
            grid.node_count()
        )));
    }
    points
        .iter()
        .enumerate()
        .map(|(index, p)| {
            grid.interpolate(values, *p).ok_or(Error::OutOfBounds {
                index,
                x: p[0],
                y: p[1],
                z: p[2],
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn default_grid() -> StructuredGrid {
        build_grid(&DomainSpec::paper_default(), 40.0 * UM, &RefinementBox::paper_default()).unwrap()
    }

    #[test]
    fn paper_default_min_spacing() {
        let g = default_grid();
        let h = g.min_spacing();
        for (a, want) in [7.6, 10.0, 12.0].iter().enumerate() {
            assert!((h[a] / (want * UM) - 1.0).abs() < 1e-9, "axis {a}: {}", h[a]);
        }
        assert!(g.max_grading_ratio() <= MAX_GRADING + 1e-9);
    }

    #[test]
    fn desk_grid_is_graded() {
        let g = build_grid(&DomainSpec::desk_scale(), 40.0 * UM, &RefinementBox::desk_scale()).unwrap();
        let h = g.min_spacing();
        assert!((h[0] / (7.6 * UM) - 1.0).abs() < 1e-9);
        assert!(g.max_grading_ratio() <= MAX_GRADING + 1e-9);
        assert_eq!(g.x[0], 0.0);
        assert_eq!(*g.x.last().unwrap(), 400.0 * UM);
        assert_eq!(*g.z.last().unwrap(), 90.0 * UM);
        assert_eq!(*g.y.last().unwrap(), 50.0 * UM);
    }

    #[test]
    fn whole_domain_refinement_is_uniform() {
        let spec = DomainSpec::desk_scale();
        let b = spec.bounds();
        let rb = RefinementBox {
            lo: [b[0].0, b[1].0, b[2].0],
            hi: [b[0].1, b[1].1, b[2].1],
            spacing: [10.0 * UM; 3],
        };
        let g = build_grid(&spec, 40.0 * UM, &rb).unwrap();
        assert_eq!(g.dims(), [41, 6, 10]);
        for a in 0..3 {
            let ax = g.axis(a);
            let h0 = ax[1] - ax[0];
            assert!(ax.windows(2).all(|w| ((w[1] - w[0]) / h0 - 1.0).abs() < 1e-9));
        }
    }

    #[test]
    fn box_outside_domain_rejected() {
        let mut rb = RefinementBox::desk_scale();
        rb.hi[0] = 1.0;
        assert!(matches!(
            build_grid(&DomainSpec::desk_scale(), 40.0 * UM, &rb),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn full_model_mirrors_half_axis() {
        let mut spec = DomainSpec::desk_scale();
        spec.symmetry = false;
        let g = build_grid(&spec, 40.0 * UM, &RefinementBox::desk_scale()).unwrap();
        let n = g.y.len();
        for j in 0..n {
            assert!((g.y[j] + g.y[n - 1 - j]).abs() < 1e-18);
        }
        assert!(g.y.contains(&0.0));
    }

    #[test]
    fn graded_axes_monotone_over_random_boxes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = Uniform::new(0.0, 1.0);
        for _ in 0..300 {
            let lo: f64 = 100.0 * u.sample(&mut rng);
            let hi = lo + 1.0 + 200.0 * u.sample(&mut rng);
            let a = lo + (hi - lo) * 0.5 * u.sample(&mut rng);
            let b = a + (hi - a) * u.sample(&mut rng).max(0.01);
            let hf = 1.0 + 5.0 * u.sample(&mut rng);
            let hc = hf * (1.0 + 10.0 * u.sample(&mut rng));
            let ax = graded_axis(lo, hi, a, b, hf, hc);
            assert_eq!(ax[0], lo);
            assert_eq!(*ax.last().unwrap(), hi);
            assert!(ax.windows(2).all(|w| w[1] > w[0]), "{ax:?}");
        }
    }

    #[test]
    fn sampling_is_deterministic_and_in_bounds() {
        let spec = DomainSpec::desk_scale();
        let g = build_grid(&spec, 40.0 * UM, &RefinementBox::desk_scale()).unwrap();
        let counts = CollocationCounts { labeled_per_snapshot: 500, interior: 400, boundary: 200, initial: 100 };
        let a = sample_collocation(&spec, &g, counts, &[20e-6, 40e-6], 200e-6, 0.7, 9).unwrap();
        let b = sample_collocation(&spec, &g, counts, &[20e-6, 40e-6], 200e-6, 0.7, 9).unwrap();
        assert_eq!(a.interior, b.interior);
        assert_eq!(a.boundary, b.boundary);
        assert_eq!(a.labeled.len(), 1000);
        assert_eq!(a.boundary.len(), 200);
        a.validate(&spec, 200e-6).unwrap();
        assert!(a.interior.iter().all(|p| p[1] >= 0.0));
        let inside = a.interior.iter().filter(|p| g.refinement.contains([p[0], p[1], p[2]])).count();
        assert!(inside >= 280);
    }

    #[test]
    fn zero_density_ratio_is_uniform() {
        let spec = DomainSpec::desk_scale();
        let g = build_grid(&spec, 40.0 * UM, &RefinementBox::desk_scale()).unwrap();
        let counts = CollocationCounts { labeled_per_snapshot: 1, interior: 20000, boundary: 10, initial: 10 };
        let s = sample_collocation(&spec, &g, counts, &[], 1e-4, 0.0, 1).unwrap();
        let mean_x = s.interior.iter().map(|p| p[0]).sum::<f64>() / 20000.0;
        assert!((mean_x / (200.0 * UM) - 1.0).abs() < 0.02);
    }

    #[test]
    fn snapshot_outside_horizon_rejected() {
        let spec = DomainSpec::desk_scale();
        let g = build_grid(&spec, 40.0 * UM, &RefinementBox::desk_scale()).unwrap();
        let counts = CollocationCounts { labeled_per_snapshot: 1, interior: 1, boundary: 1, initial: 1 };
        assert!(sample_collocation(&spec, &g, counts, &[3e-4], 2e-4, 0.5, 1).is_err());
    }

    #[test]
    fn interpolation_identities() {
        let g = build_grid(&DomainSpec::desk_scale(), 40.0 * UM, &RefinementBox::desk_scale()).unwrap();
        let lin: Vec<f64> = g.nodes().iter().map(|p| 3.0 + 2e4 * p[0] - 1e4 * p[1] + 5e3 * p[2]).collect();
        for n in [0, 17, g.node_count() - 1] {
            assert_eq!(g.interpolate(&lin, g.node(n)).unwrap(), lin[n]);
        }
        let p = [123.4e-6, 7.7e-6, 55.5e-6];
        let want = 3.0 + 2e4 * p[0] - 1e4 * p[1] + 5e3 * p[2];
        assert!((g.interpolate(&lin, p).unwrap() - want).abs() < 1e-12);
        let err = interpolate_to_points(&g, &lin, &[p, [1.0, 0.0, 0.0]]).unwrap_err();
        assert!(matches!(err, Error::OutOfBounds { index: 1, .. }));
    }

    #[test]
    fn interpolation_second_order() {
        let spec = DomainSpec::desk_scale();
        let f = |p: [f64; 3]| (p[0] * 1e4).sin() * (p[2] * 2e4).cos() + p[1] * 1e4;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let u = Uniform::new(0.0, 1.0);
        let probe: Vec<[f64; 3]> = (0..200)
            .map(|_| [400e-6 * u.sample(&mut rng), 50e-6 * u.sample(&mut rng), 90e-6 * u.sample(&mut rng)])
            .collect();
        let mut errs = vec![];
        for n in [10, 20, 40] {
            let g = StructuredGrid::uniform(&spec, [n, n, n]).unwrap();
            let v: Vec<f64> = g.nodes().into_iter().map(f).collect();
            let e = probe
                .iter()
                .map(|p| (g.interpolate(&v, *p).unwrap() - f(*p)).powi(2))
                .sum::<f64>()
                .sqrt();
            errs.push(e);
        }
        assert!(errs[0] / errs[1] > 3.0 && errs[1] / errs[2] > 3.0, "{errs:?}");
    }

    #[test]
    fn nearest_and_volume() {
        let g = StructuredGrid::uniform(&DomainSpec::desk_scale(), [4, 1, 3]).unwrap();
        let total: f64 = (0..g.node_count()).map(|n| g.node_volume(n)).sum();
        assert!((total / (400e-6 * 50e-6 * 90e-6) - 1.0).abs() < 1e-12);
        assert_eq!(g.nearest_node([101e-6, 1e-6, 31e-6]), g.index(1, 0, 1));
    }
}
