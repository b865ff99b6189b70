//! Binary checkpoints of a surrogate and, optionally, its optimizer.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! "MSPN"            magic
//! u8                format version (1)
//! u32               number of layer sizes L
//! u32 × L           layer sizes
//! per layer:        f64 weights (row-major, out × in), then f64 biases
//! f64 × 8           input maps (scale, offset) for x, y, z, t
//! f64 × 2           output map (scale, offset)
//! u8                optimizer present (0 or 1)
//! if present:       u64 step, f64 learning rate, β₁, β₂, ε,
//!                   f64 × P first moments, f64 × P second moments
//! ```

use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::nn::{AdamState, AffineMap, SurrogateModel};

pub const MAGIC: &[u8; 4] = b"MSPN";
pub const VERSION: u8 = 1;
/// Upper bound on a layer width accepted by the decoder.
pub const MAX_LAYER_WIDTH: usize = 1 << 16;
/// Upper bound on the number of layer sizes accepted by the decoder.
pub const MAX_LAYERS: usize = 1 << 10;

pub fn encode_checkpoint(model: &SurrogateModel, adam: Option<&AdamState>) -> Result<Vec<u8>> {
    model.validate()?;
    let mut out = Vec::with_capacity(16 + 8 * model.parameter_count() * if adam.is_some() { 3 } else { 1 });
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(model.layer_sizes.len() as u32).to_le_bytes());
    for &n in &model.layer_sizes {
        out.extend_from_slice(&(n as u32).to_le_bytes());
    }
    for (w, b) in model.weights.iter().zip(&model.biases) {
        for v in w.iter().chain(b.iter()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    for m in model.input_maps.iter().chain(std::iter::once(&model.output_map)) {
        out.extend_from_slice(&m.scale.to_le_bytes());
        out.extend_from_slice(&m.offset.to_le_bytes());
    }
    match adam {
        None => out.push(0),
        Some(a) => {
            if a.m.len() != model.parameter_count() || a.v.len() != model.parameter_count() {
                return Err(Error::ShapeMismatch("optimizer moments do not match the model".into()));
            }
            out.push(1);
            out.extend_from_slice(&a.step.to_le_bytes());
            for v in [a.learning_rate, a.beta1, a.beta2, a.epsilon] {
                out.extend_from_slice(&v.to_le_bytes());
            }
            for v in a.m.iter().chain(&a.v) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Checkpoint(format!(
                "truncated: {what} needs {n} bytes at offset {}, {} left",
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("size overflow".into()))?, what)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(SurrogateModel, Option<AdamState>)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Checkpoint("bad magic bytes".into()));
    }
    let version = r.u8("version")?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}, expected {VERSION}")));
    }
    let count = r.u32("layer count")? as usize;
    if !(2..=MAX_LAYERS).contains(&count) {
        return Err(Error::Checkpoint(format!("layer count {count} outside [2, {MAX_LAYERS}]")));
    }
    let mut sizes = Vec::with_capacity(count);
    for _ in 0..count {
        let n = r.u32("layer size")? as usize;
        if n == 0 || n > MAX_LAYER_WIDTH {
            return Err(Error::Checkpoint(format!("layer size {n} outside [1, {MAX_LAYER_WIDTH}]")));
        }
        sizes.push(n);
    }
    let mut weights = Vec::with_capacity(count - 1);
    let mut biases = Vec::with_capacity(count - 1);
    for pair in sizes.windows(2) {
        let (n_in, n_out) = (pair[0], pair[1]);
        let w = r.f64s(n_in * n_out, "weights")?;
        let b = r.f64s(n_out, "biases")?;
        weights.push(Array2::from_shape_vec((n_out, n_in), w).expect("length checked"));
        biases.push(Array1::from_vec(b));
    }
    let mut maps = [AffineMap::IDENTITY; 5];
    for m in maps.iter_mut() {
        m.scale = r.f64("scaling")?;
        m.offset = r.f64("scaling")?;
    }
    let model = SurrogateModel {
        layer_sizes: sizes,
        weights,
        biases,
        input_maps: [maps[0], maps[1], maps[2], maps[3]],
        output_map: maps[4],
    };
    let adam = match r.u8("optimizer flag")? {
        0 => None,
        1 => {
            let step = r.u64("optimizer step")?;
            let learning_rate = r.f64("learning rate")?;
            let beta1 = r.f64("beta1")?;
            let beta2 = r.f64("beta2")?;
            let epsilon = r.f64("epsilon")?;
            let p = model.parameter_count();
            let m = r.f64s(p, "first moments")?;
            let v = r.f64s(p, "second moments")?;
            Some(AdamState {
                step,
                learning_rate,
                beta1,
                beta2,
                epsilon,
                m,
                v,
            })
        }
        f => return Err(Error::Checkpoint(format!("optimizer flag {f} is neither 0 nor 1"))),
    };
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    model
        .validate()
        .map_err(|e| Error::Checkpoint(format!("decoded model is inconsistent: {e}")))?;
    if let Some(a) = &adam {
        let scalars = [a.learning_rate, a.beta1, a.beta2, a.epsilon];
        if !scalars.iter().chain(&a.m).chain(&a.v).all(|v| v.is_finite()) {
            return Err(Error::Checkpoint("optimizer state is not all finite".into()));
        }
    }
    Ok((model, adam))
}

pub fn save_checkpoint(path: &Path, model: &SurrogateModel, adam: Option<&AdamState>) -> Result<()> {
    std::fs::write(path, encode_checkpoint(model, adam)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(SurrogateModel, Option<AdamState>)> {
    decode_checkpoint(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model() -> SurrogateModel {
        SurrogateModel::glorot(&[4, 7, 5, 1], 3).unwrap().with_scaling(
            [
                AffineMap::to_unit_interval(0.0, 4e-4),
                AffineMap::to_unit_interval(0.0, 5e-5),
                AffineMap::to_unit_interval(0.0, 9e-5),
                AffineMap::to_unit_interval(0.0, 2e-4),
            ],
            AffineMap {
                scale: 3707.0,
                offset: 293.0,
            },
        )
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = model();
        let mut adam = AdamState::for_model(&m, 1e-3);
        adam.step = 17;
        adam.m.iter_mut().enumerate().for_each(|(i, v)| *v = i as f64 * 0.1 - 3.0);
        adam.v.iter_mut().enumerate().for_each(|(i, v)| *v = (i as f64).sqrt());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&path, &m, Some(&adam)).unwrap();
        let (back, back_adam) = load_checkpoint(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(back_adam.unwrap(), adam);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let p = [rng.gen_range(0.0..4e-4), rng.gen_range(0.0..5e-5), rng.gen_range(0.0..9e-5), rng.gen_range(0.0..2e-4)];
            assert_eq!(m.forward(p).to_bits(), back.forward(p).to_bits());
        }
        let bytes = encode_checkpoint(&m, None).unwrap();
        assert_eq!(decode_checkpoint(&bytes).unwrap(), (m, None));
    }

    #[test]
    fn header_layout() {
        let m = model();
        let b = encode_checkpoint(&m, None).unwrap();
        assert_eq!(&b[..4], b"MSPN");
        assert_eq!(b[4], 1);
        assert_eq!(u32::from_le_bytes(b[5..9].try_into().unwrap()), 4);
        assert_eq!(u32::from_le_bytes(b[9..13].try_into().unwrap()), 4);
        assert_eq!(u32::from_le_bytes(b[13..17].try_into().unwrap()), 7);
        let w0 = f64::from_le_bytes(b[25..33].try_into().unwrap());
        assert_eq!(w0, m.weights[0][[0, 0]]);
        assert_eq!(b.len(), 25 + 8 * m.parameter_count() + 80 + 1);
        assert_eq!(*b.last().unwrap(), 0);
    }

    #[test]
    fn corruption_is_reported() {
        let m = model();
        let good = encode_checkpoint(&m, Some(&AdamState::for_model(&m, 1e-3))).unwrap();
        for cut in [0, 3, 5, 12, 40, good.len() - 1] {
            let err = decode_checkpoint(&good[..cut]).unwrap_err();
            assert!(matches!(err, Error::Checkpoint(ref s) if s.contains("truncated")), "{cut}: {err}");
        }
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(decode_checkpoint(&bad).unwrap_err().to_string().contains("magic"));
        let mut bad = good.clone();
        bad[4] = 2;
        assert!(decode_checkpoint(&bad).unwrap_err().to_string().contains("version"));
        let mut bad = good.clone();
        bad.push(0);
        assert!(decode_checkpoint(&bad).unwrap_err().to_string().contains("trailing"));
        let mut bad = good;
        bad[9..13].copy_from_slice(&3u32.to_le_bytes());
        assert!(decode_checkpoint(&bad).is_err());
    }

    #[test]
    fn non_finite_values_are_rejected() {
        let m = model();
        let good = encode_checkpoint(&m, Some(&AdamState::for_model(&m, 1e-3))).unwrap();
        let mut bad = good.clone();
        bad[25..33].copy_from_slice(&f64::NAN.to_le_bytes());
        let err = decode_checkpoint(&bad).unwrap_err();
        assert!(err.to_string().contains("finite"), "{err}");
        let mut bad = good;
        let end = bad.len();
        bad[end - 8..].copy_from_slice(&f64::INFINITY.to_le_bytes());
        let err = decode_checkpoint(&bad).unwrap_err();
        assert!(err.to_string().contains("optimizer state"), "{err}");
    }

    #[test]
    fn huge_declared_sizes_fail_without_allocating() {
        let mut b = Vec::new();
        b.extend_from_slice(b"MSPN");
        b.push(1);
        b.extend_from_slice(&3u32.to_le_bytes());
        for n in [4u32, 65536, 1] {
            b.extend_from_slice(&n.to_le_bytes());
        }
        assert!(matches!(decode_checkpoint(&b), Err(Error::Checkpoint(_))));
    }
}
