//! Tanh multilayer perceptron mapping (x, y, z, t) to temperature.
//!
//! Input derivatives are propagated forward as truncated Taylor jets: every
//! layer carries the activation together with its first derivatives along the
//! four inputs and its pure second derivatives along x, y and z. Parameter
//! gradients of losses built from those jets come from a reverse sweep over
//! the jet propagation itself, so they are exact (reverse-over-forward).
//!
//! A batch of `B` points with `C` jet channels is stored as an `n × C·B`
//! matrix whose column `c·B + p` holds channel `c` of point `p`. Channel 0 is
//! the value, channels 1–4 are ∂/∂(x, y, z, t) and channels 5–7 are
//! ∂²/∂(x², y², z²).

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, Axis, Zip};
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::dual::Dual;
use crate::error::{Error, Result};

/// Points per chunk in batched passes. Chunk results are reduced in index
/// order, so sums do not depend on the thread count.
pub const CHUNK: usize = 256;

/// `y = scale · x + offset`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineMap {
    pub scale: f64,
    pub offset: f64,
}

impl AffineMap {
    pub const IDENTITY: AffineMap = AffineMap {
        scale: 1.0,
        offset: 0.0,
    };

    /// Maps `[lo, hi]` onto `[-1, 1]`.
    pub fn to_unit_interval(lo: f64, hi: f64) -> Self {
        let scale = 2.0 / (hi - lo);
        Self {
            scale,
            offset: -1.0 - lo * scale,
        }
    }

    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        self.scale * x + self.offset
    }

    #[inline]
    pub fn invert(&self, y: f64) -> f64 {
        (y - self.offset) / self.scale
    }

    pub fn is_invertible(&self) -> bool {
        self.scale.is_finite() && self.offset.is_finite() && self.scale != 0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JetOrder {
    /// Value only.
    Value,
    /// Value and first derivatives.
    Gradient,
    /// Value, first derivatives and ∂²/∂x², ∂²/∂y², ∂²/∂z².
    Full,
}

impl JetOrder {
    pub fn channels(self) -> usize {
        match self {
            JetOrder::Value => 1,
            JetOrder::Gradient => 5,
            JetOrder::Full => 8,
        }
    }
}

/// Temperature and its input derivatives at one point, in physical units.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Jet<S = f64> {
    pub value: S,
    /// ∂T/∂x, ∂T/∂y, ∂T/∂z, ∂T/∂t.
    pub grad: [S; 4],
    /// ∂²T/∂x², ∂²T/∂y², ∂²T/∂z².
    pub hess: [S; 3],
}

/// Sensitivity of a loss to each jet component.
pub type JetAdjoint = Jet<f64>;

/// Dual number with one tangent per jet component.
pub type JetDual = Dual<f64, 8>;

impl Jet<f64> {
    /// Seeds every component as an independent dual variable.
    pub fn to_dual(&self) -> Jet<JetDual> {
        let mut out = Jet {
            value: JetDual::variable(self.value, 0),
            ..Default::default()
        };
        for k in 0..4 {
            out.grad[k] = JetDual::variable(self.grad[k], 1 + k);
        }
        for k in 0..3 {
            out.hess[k] = JetDual::variable(self.hess[k], 5 + k);
        }
        out
    }
}

impl Default for JetDual {
    fn default() -> Self {
        JetDual::constant(0.0)
    }
}

fn adjoint_from_dual(d: &JetDual) -> JetAdjoint {
    Jet {
        value: d.eps[0],
        grad: [d.eps[1], d.eps[2], d.eps[3], d.eps[4]],
        hess: [d.eps[5], d.eps[6], d.eps[7]],
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SurrogateModel {
    pub layer_sizes: Vec<usize>,
    /// `weights[l]` has shape `(layer_sizes[l + 1], layer_sizes[l])`.
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    /// Per-axis maps from physical (x, y, z, t) to network inputs.
    pub input_maps: [AffineMap; 4],
    /// Map from network output to kelvin.
    pub output_map: AffineMap,
}

/// Gradient with the same shapes as the model parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGradient {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl ParamGradient {
    pub fn zeros_like(model: &SurrogateModel) -> Self {
        Self {
            weights: model
                .weights
                .iter()
                .map(|w| Array2::zeros(w.raw_dim()))
                .collect(),
            biases: model
                .biases
                .iter()
                .map(|b| Array1::zeros(b.raw_dim()))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &ParamGradient) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for w in &mut self.weights {
            *w *= s;
        }
        for b in &mut self.biases {
            *b *= s;
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }

    pub fn norm(&self) -> f64 {
        self.flatten().iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

struct Cache {
    channels: usize,
    batch: usize,
    /// Layer inputs, one per layer.
    inputs: Vec<Array2<f64>>,
    /// Pre-activations of the hidden layers.
    pre: Vec<Array2<f64>>,
    output: Array2<f64>,
}

impl SurrogateModel {
    /// Glorot-uniform weights, zero biases, identity scaling maps.
    pub fn glorot(layer_sizes: &[usize], seed: u64) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.iter().any(|&n| n == 0) {
            return Err(Error::InvalidInput(format!(
                "layer sizes {layer_sizes:?} must have at least two positive entries"
            )));
        }
        if layer_sizes[0] != 4 || *layer_sizes.last().unwrap() != 1 {
            return Err(Error::InvalidInput(format!(
                "network maps (x, y, z, t) to T, got sizes {layer_sizes:?}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-a, a);
            weights.push(Array2::from_shape_fn((fan_out, fan_in), |_| {
                dist.sample(&mut rng)
            }));
            biases.push(Array1::zeros(fan_out));
        }
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            input_maps: [AffineMap::IDENTITY; 4],
            output_map: AffineMap::IDENTITY,
        })
    }

    pub fn with_scaling(mut self, input_maps: [AffineMap; 4], output_map: AffineMap) -> Self {
        self.input_maps = input_maps;
        self.output_map = output_map;
        self
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.layer_sizes.len();
        if n < 2 || self.weights.len() != n - 1 || self.biases.len() != n - 1 {
            return Err(Error::ShapeMismatch(format!(
                "{} layer sizes with {} weight and {} bias arrays",
                n,
                self.weights.len(),
                self.biases.len()
            )));
        }
        if self.layer_sizes[0] != 4 || self.layer_sizes[n - 1] != 1 {
            return Err(Error::ShapeMismatch(format!(
                "network maps (x, y, z, t) to T, got sizes {:?}",
                self.layer_sizes
            )));
        }
        for (l, pair) in self.layer_sizes.windows(2).enumerate() {
            if self.weights[l].dim() != (pair[1], pair[0]) || self.biases[l].len() != pair[1] {
                return Err(Error::ShapeMismatch(format!("layer {l} does not chain")));
            }
        }
        if !self.input_maps.iter().all(AffineMap::is_invertible) || !self.output_map.is_invertible()
        {
            return Err(Error::ShapeMismatch("scaling map is not invertible".into()));
        }
        let finite = self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(Error::InvalidInput("network parameters are not all finite".into()));
        }
        Ok(())
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }

    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.parameter_count() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {} parameters",
                values.len(),
                self.parameter_count()
            )));
        }
        let mut it = values.iter().copied();
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            w.iter_mut().for_each(|v| *v = it.next().unwrap());
            b.iter_mut().for_each(|v| *v = it.next().unwrap());
        }
        Ok(())
    }

    /// Temperature at one point.
    pub fn forward(&self, point: [f64; 4]) -> f64 {
        self.forward_batch(&[point])[0]
    }

    pub fn forward_batch(&self, points: &[[f64; 4]]) -> Vec<f64> {
        self.jets(points, JetOrder::Value)
            .into_iter()
            .map(|j| j.value)
            .collect()
    }

    /// Value, gradient and ∂²T/∂{x², y², z²} at one point.
    pub fn input_derivatives(&self, point: [f64; 4]) -> Jet {
        self.jets(&[point], JetOrder::Full)[0]
    }

    pub fn jets(&self, points: &[[f64; 4]], order: JetOrder) -> Vec<Jet> {
        let chunks: Vec<Vec<Jet>> = points
            .par_chunks(CHUNK)
            .map(|chunk| {
                let cache = self.forward_cache(chunk, order);
                self.physical_jets(&cache)
            })
            .collect();
        chunks.into_iter().flatten().collect()
    }

    /// Loss value and parameter gradient for a loss that is a sum of
    /// per-point terms. `term(i, jet)` returns the contribution of point `i`
    /// and its sensitivity to every jet component.
    pub fn gradient_with<F>(
        &self,
        points: &[[f64; 4]],
        order: JetOrder,
        term: F,
    ) -> Result<(f64, ParamGradient)>
    where
        F: Fn(usize, &Jet) -> (f64, JetAdjoint) + Sync,
    {
        let partials: Vec<(f64, ParamGradient)> = points
            .par_chunks(CHUNK)
            .enumerate()
            .map(|(c, chunk)| {
                let cache = self.forward_cache(chunk, order);
                let jets = self.physical_jets(&cache);
                let mut loss = 0.0;
                let mut adjoints = Vec::with_capacity(jets.len());
                for (p, jet) in jets.iter().enumerate() {
                    let (l, adj) = term(c * CHUNK + p, jet);
                    loss += l;
                    adjoints.push(adj);
                }
                let mut grad = ParamGradient::zeros_like(self);
                self.backward(&cache, &adjoints, &mut grad);
                (loss, grad)
            })
            .collect();
        let mut total = 0.0;
        let mut grad = ParamGradient::zeros_like(self);
        for (l, g) in &partials {
            total += l;
            grad.add_assign(g);
        }
        if !total.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch: 0,
                detail: format!("loss evaluated to {total}"),
            });
        }
        Ok((total, grad))
    }

    /// Like [`gradient_with`](Self::gradient_with), with the per-point term
    /// written over dual numbers so its jet sensitivities need not be derived
    /// by hand.
    pub fn param_gradient<F>(
        &self,
        points: &[[f64; 4]],
        order: JetOrder,
        term: F,
    ) -> Result<(f64, ParamGradient)>
    where
        F: Fn(usize, &Jet<JetDual>) -> JetDual + Sync,
    {
        self.gradient_with(points, order, |i, jet| {
            let d = term(i, &jet.to_dual());
            (d.re, adjoint_from_dual(&d))
        })
    }

    fn forward_cache(&self, points: &[[f64; 4]], order: JetOrder) -> Cache {
        let c = order.channels();
        let b = points.len();
        let mut a = Array2::<f64>::zeros((4, c * b));
        for (p, pt) in points.iter().enumerate() {
            for (i, map) in self.input_maps.iter().enumerate() {
                a[[i, p]] = map.apply(pt[i]);
            }
            if c > 1 {
                for k in 0..4 {
                    a[[k, (1 + k) * b + p]] = 1.0;
                }
            }
        }
        let n_layers = self.weights.len();
        let mut inputs = Vec::with_capacity(n_layers);
        let mut pre = Vec::with_capacity(n_layers - 1);
        for l in 0..n_layers {
            let w = &self.weights[l];
            let mut z = Array2::<f64>::zeros((w.nrows(), c * b));
            general_mat_mul(1.0, w, &a, 0.0, &mut z);
            {
                let mut value = z.slice_mut(s![.., 0..b]);
                value += &self.biases[l].view().insert_axis(Axis(1));
            }
            if l + 1 == n_layers {
                inputs.push(a);
                return Cache {
                    channels: c,
                    batch: b,
                    inputs,
                    pre,
                    output: z,
                };
            }
            let next = tanh_jet_forward(&z, c, b);
            inputs.push(std::mem::replace(&mut a, next));
            pre.push(z);
        }
        unreachable!("network has at least one layer")
    }

    fn physical_jets(&self, cache: &Cache) -> Vec<Jet> {
        let (c, b) = (cache.channels, cache.batch);
        let out = cache.output.row(0);
        let scale = self.output_map.scale;
        (0..b)
            .map(|p| {
                let mut jet = Jet {
                    value: self.output_map.apply(out[p]),
                    ..Default::default()
                };
                if c > 1 {
                    for k in 0..4 {
                        jet.grad[k] = scale * self.input_maps[k].scale * out[(1 + k) * b + p];
                    }
                }
                if c > 5 {
                    for k in 0..3 {
                        let s = self.input_maps[k].scale;
                        jet.hess[k] = scale * s * s * out[(5 + k) * b + p];
                    }
                }
                jet
            })
            .collect()
    }

    fn backward(&self, cache: &Cache, adjoints: &[JetAdjoint], grad: &mut ParamGradient) {
        let (c, b) = (cache.channels, cache.batch);
        let scale = self.output_map.scale;
        let mut g = Array2::<f64>::zeros((1, c * b));
        for (p, adj) in adjoints.iter().enumerate() {
            g[[0, p]] = scale * adj.value;
            if c > 1 {
                for k in 0..4 {
                    g[[0, (1 + k) * b + p]] = scale * self.input_maps[k].scale * adj.grad[k];
                }
            }
            if c > 5 {
                for k in 0..3 {
                    let s = self.input_maps[k].scale;
                    g[[0, (5 + k) * b + p]] = scale * s * s * adj.hess[k];
                }
            }
        }
        for l in (0..self.weights.len()).rev() {
            let a = &cache.inputs[l];
            general_mat_mul(1.0, &g, &a.t(), 1.0, &mut grad.weights[l]);
            Zip::from(&mut grad.biases[l])
                .and(g.slice(s![.., 0..b]).rows())
                .for_each(|gb, row| *gb += row.sum());
            if l == 0 {
                break;
            }
            let w = &self.weights[l];
            let mut abar = Array2::<f64>::zeros((w.ncols(), c * b));
            general_mat_mul(1.0, &w.t(), &g, 0.0, &mut abar);
            g = tanh_jet_backward(&cache.pre[l - 1], &abar, c, b);
        }
    }
}

/// Elementwise tanh applied to a jet.
fn tanh_jet_forward(z: &Array2<f64>, c: usize, b: usize) -> Array2<f64> {
    let mut a = Array2::<f64>::zeros(z.raw_dim());
    for (zr, mut ar) in z.rows().into_iter().zip(a.rows_mut()) {
        let zr = zr.as_slice().expect("standard layout");
        let ar = ar.as_slice_mut().expect("standard layout");
        for p in 0..b {
            let s = zr[p].tanh();
            let s1 = 1.0 - s * s;
            ar[p] = s;
            if c > 1 {
                for k in 0..4 {
                    ar[(1 + k) * b + p] = s1 * zr[(1 + k) * b + p];
                }
            }
            if c > 5 {
                let s2 = -2.0 * s * s1;
                for k in 0..3 {
                    let dz = zr[(1 + k) * b + p];
                    ar[(5 + k) * b + p] = s2 * dz * dz + s1 * zr[(5 + k) * b + p];
                }
            }
        }
    }
    a
}

/// Reverse sweep of [`tanh_jet_forward`]: maps output adjoints to
/// pre-activation adjoints.
fn tanh_jet_backward(z: &Array2<f64>, abar: &Array2<f64>, c: usize, b: usize) -> Array2<f64> {
    let mut zbar = Array2::<f64>::zeros(z.raw_dim());
    for ((zr, ab), mut zb) in z.rows().into_iter().zip(abar.rows()).zip(zbar.rows_mut()) {
        let zr = zr.as_slice().expect("standard layout");
        let ab = ab.as_slice().expect("standard layout");
        let zb = zb.as_slice_mut().expect("standard layout");
        for p in 0..b {
            let s = zr[p].tanh();
            let s1 = 1.0 - s * s;
            let s2 = -2.0 * s * s1;
            let mut acc = ab[p] * s1;
            if c > 1 {
                for k in 0..4 {
                    let i = (1 + k) * b + p;
                    acc += ab[i] * s2 * zr[i];
                    zb[i] = ab[i] * s1;
                }
            }
            if c > 5 {
                let s3 = -2.0 * (s1 * s1 + s * s2);
                for k in 0..3 {
                    let i1 = (1 + k) * b + p;
                    let i2 = (5 + k) * b + p;
                    let dz = zr[i1];
                    let d2z = zr[i2];
                    let g2 = ab[i2];
                    acc += g2 * (s3 * dz * dz + s2 * d2z);
                    zb[i1] += g2 * 2.0 * s2 * dz;
                    zb[i2] = g2 * s1;
                }
            }
            zb[p] = acc;
        }
    }
    zbar
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::dual::Real;
    use rand::Rng;

    fn scaled_model(sizes: &[usize], seed: u64) -> SurrogateModel {
        let maps = [
            AffineMap::to_unit_interval(0.0, 4e-4),
            AffineMap::to_unit_interval(0.0, 5e-5),
            AffineMap::to_unit_interval(0.0, 9e-5),
            AffineMap::to_unit_interval(0.0, 2e-4),
        ];
        SurrogateModel::glorot(sizes, seed)
            .unwrap()
            .with_scaling(maps, AffineMap { scale: 3707.0, offset: 293.0 })
    }

    /// Network computing T = tanh(x) on identity scaling.
    fn tanh_x() -> SurrogateModel {
        let mut m = SurrogateModel::glorot(&[4, 1, 1], 0).unwrap();
        m.weights[0] = Array2::from_shape_vec((1, 4), vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        m.weights[1] = Array2::from_elem((1, 1), 1.0);
        m
    }

    #[test]
    fn glorot_statistics() {
        let mut var = 0.0;
        let mut n = 0.0;
        for seed in 0..10 {
            let m = SurrogateModel::glorot(&[4, 64, 64, 1], seed).unwrap();
            for w in m.weights[1].iter() {
                var += w * w;
                n += 1.0;
            }
            assert!(m.biases.iter().all(|b| b.iter().all(|&v| v == 0.0)));
        }
        let var = var / n;
        assert!((var / (2.0 / 128.0) - 1.0).abs() < 0.1, "variance {var}");
        let a = SurrogateModel::glorot(&[4, 32, 1], 9).unwrap();
        let b = SurrogateModel::glorot(&[4, 32, 1], 9).unwrap();
        assert_eq!(a.flatten(), b.flatten());
    }

    #[test]
    fn zero_network_outputs_scaling_offset() {
        let mut m = scaled_model(&[4, 8, 1], 1);
        m.set_flat(&vec![0.0; m.parameter_count()]).unwrap();
        assert_eq!(m.forward([1e-4, 1e-5, 2e-5, 3e-5]), 293.0);
    }

    #[test]
    fn tanh_construction_matches_closed_form() {
        let m = tanh_x();
        for x in [-1.3, -0.2, 0.0, 0.4, 2.0] {
            let j = m.input_derivatives([x, 0.3, -0.2, 0.1]);
            let t = x.tanh();
            assert!((j.value - t).abs() < 1e-12);
            assert!((j.grad[0] - (1.0 - t * t)).abs() < 1e-12);
            assert!((j.hess[0] + 2.0 * t * (1.0 - t * t)).abs() < 1e-10);
            assert_eq!(j.grad[1], 0.0);
            assert_eq!(j.hess[2], 0.0);
        }
    }

    #[test]
    fn scaled_input_chain_rule() {
        let mut m = tanh_x();
        m.input_maps[0] = AffineMap { scale: 3.0, offset: 0.5 };
        let x: f64 = 0.2;
        let j = m.input_derivatives([x, 0.0, 0.0, 0.0]);
        let t = (3.0 * x + 0.5).tanh();
        assert!((j.grad[0] - 3.0 * (1.0 - t * t)).abs() < 1e-12);
        assert!((j.hess[0] + 9.0 * 2.0 * t * (1.0 - t * t)).abs() < 1e-10);
    }

    #[test]
    fn linear_network_has_constant_gradient() {
        let mut m = SurrogateModel::glorot(&[4, 1], 0).unwrap();
        m.weights[0] = Array2::from_shape_vec((1, 4), vec![2.0, -1.0, 0.5, 3.0]).unwrap();
        m.input_maps = [
            AffineMap { scale: 10.0, offset: 0.0 },
            AffineMap { scale: 2.0, offset: 1.0 },
            AffineMap::IDENTITY,
            AffineMap { scale: 0.5, offset: 0.0 },
        ];
        let j = m.input_derivatives([0.3, 0.1, 0.7, 2.0]);
        assert_eq!(j.grad, [20.0, -2.0, 0.5, 1.5]);
        assert_eq!(j.hess, [0.0; 3]);
    }

    #[test]
    fn batch_equals_pointwise() {
        let m = scaled_model(&[4, 16, 16, 1], 3);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<[f64; 4]> = (0..600)
            .map(|_| {
                [
                    rng.gen_range(0.0..4e-4),
                    rng.gen_range(0.0..5e-5),
                    rng.gen_range(0.0..9e-5),
                    rng.gen_range(0.0..2e-4),
                ]
            })
            .collect();
        let batch = m.jets(&pts, JetOrder::Full);
        for (p, jb) in pts.iter().zip(&batch) {
            let single = m.input_derivatives(*p);
            assert!((single.value - jb.value).abs() <= 1e-12 * single.value.abs());
            for k in 0..4 {
                assert!((single.grad[k] - jb.grad[k]).abs() <= 1e-12 * single.grad[k].abs().max(1.0));
            }
        }
        let values = m.forward_batch(&pts);
        for (v, j) in values.iter().zip(&batch) {
            assert!((v - j.value).abs() <= 1e-12 * v.abs());
        }
    }

    #[test]
    fn output_scaling_scales_second_derivative() {
        let mut m = scaled_model(&[4, 12, 12, 1], 8);
        let p = [1e-4, 2e-5, 5e-5, 7e-5];
        let base = m.input_derivatives(p);
        m.output_map.scale *= 2.5;
        let scaled = m.input_derivatives(p);
        for k in 0..3 {
            assert!((scaled.hess[k] - 2.5 * base.hess[k]).abs() <= 1e-12 * base.hess[k].abs());
        }
    }

    #[test]
    fn one_parameter_gradient_by_hand() {
        // T = w x, loss = T^2 at x = 3: dL/dw = 2 w x^2.
        let mut m = SurrogateModel::glorot(&[4, 1], 0).unwrap();
        m.weights[0] = Array2::from_shape_vec((1, 4), vec![0.7, 0.0, 0.0, 0.0]).unwrap();
        let (loss, g) = m
            .param_gradient(&[[3.0, 0.0, 0.0, 0.0]], JetOrder::Value, |_, j| {
                j.value * j.value
            })
            .unwrap();
        assert!((loss - 4.41).abs() < 1e-12);
        assert!((g.weights[0][[0, 0]] - 2.0 * 0.7 * 9.0).abs() < 1e-12);
        assert!((g.biases[0][0] - 2.0 * 0.7 * 3.0).abs() < 1e-12);
    }

    #[test]
    fn duplicated_point_doubles_gradient() {
        let m = scaled_model(&[4, 6, 1], 2);
        let p = [1e-4, 1e-5, 4e-5, 5e-5];
        let f = |_: usize, j: &Jet<JetDual>| (j.value - 1000.0).powi(2) + j.hess[0] * 1e-12;
        let (l1, g1) = m.param_gradient(&[p], JetOrder::Full, f).unwrap();
        let (l2, g2) = m.param_gradient(&[p, p], JetOrder::Full, f).unwrap();
        assert!((l2 - 2.0 * l1).abs() < 1e-9 * l1.abs());
        for (a, b) in g1.flatten().iter().zip(g2.flatten()) {
            assert!((b - 2.0 * a).abs() <= 1e-10 * a.abs().max(1e-8));
        }
    }

    #[test]
    fn non_finite_loss_reported() {
        let m = scaled_model(&[4, 3, 1], 2);
        let r = m.param_gradient(&[[0.0; 4]], JetOrder::Value, |_, j| j.value * f64::NAN);
        assert!(matches!(r, Err(Error::NonFiniteLoss { .. })));
    }

    #[test]
    fn parameter_gradient_matches_finite_differences() {
        let mut m = scaled_model(&[4, 5, 5, 1], 11);
        m.output_map = AffineMap { scale: 1.0, offset: 0.0 };
        let pts = [
            [1e-4, 2e-5, 3e-5, 4e-5],
            [3e-4, 4e-5, 8e-5, 1.5e-4],
            [2e-4, 1e-6, 5e-5, 1e-5],
        ];
        // A PDE-like term that touches every jet channel.
        let term = |_: usize, j: &Jet<JetDual>| {
            let r = j.grad[3] * 1e-4 - (j.hess[0] + j.hess[1] + j.hess[2]) * 1e-9
                + j.value * j.grad[0] * 1e-4
                + (j.grad[1] + j.grad[2]) * 1e-5;
            r * r
        };
        let (_, g) = m.param_gradient(&pts, JetOrder::Full, term).unwrap();
        let g = g.flatten();
        let base = m.flatten();
        let loss_at = |theta: &[f64]| {
            let mut mm = m.clone();
            mm.set_flat(theta).unwrap();
            mm.param_gradient(&pts, JetOrder::Full, term).unwrap().0
        };
        let mut worst: f64 = 0.0;
        for i in 0..base.len() {
            let h = 1e-6;
            let mut plus = base.clone();
            plus[i] += h;
            let mut minus = base.clone();
            minus[i] -= h;
            let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
            let scale = g.iter().map(|v| v.abs()).fold(0.0, f64::max);
            worst = worst.max((fd - g[i]).abs() / scale);
        }
        assert!(worst < 1e-6, "worst relative error {worst}");
    }

    #[test]
    fn input_derivatives_match_finite_differences() {
        let m = scaled_model(&[4, 10, 10, 1], 4);
        let p = [1.7e-4, 2.2e-5, 6.1e-5, 9.0e-5];
        let j = m.input_derivatives(p);
        let steps = [1e-9, 1e-10, 1e-10, 1e-9];
        for k in 0..4 {
            let h = steps[k];
            let mut a = p;
            a[k] += h;
            let mut b = p;
            b[k] -= h;
            let (fa, fb, f0) = (m.forward(a), m.forward(b), m.forward(p));
            let d1 = (fa - fb) / (2.0 * h);
            assert!((d1 - j.grad[k]).abs() < 1e-5 * j.grad[k].abs().max(1e3), "d{k}: {d1} vs {}", j.grad[k]);
            if k < 3 {
                let h2 = h * 100.0;
                let mut a = p;
                a[k] += h2;
                let mut b = p;
                b[k] -= h2;
                let d2 = (m.forward(a) - 2.0 * f0 + m.forward(b)) / (h2 * h2);
                assert!((d2 - j.hess[k]).abs() < 1e-3 * j.hess[k].abs().max(1e9), "d{k}{k}: {d2} vs {}", j.hess[k]);
            }
        }
    }

    #[test]
    fn jet_dual_real_bridge() {
        let d = JetDual::variable(2.0, 3);
        assert_eq!(d.re(), 2.0);
    }
}
