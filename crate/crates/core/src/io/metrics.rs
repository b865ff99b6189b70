//! Field comparison and melt-pool geometry.

use crate::error::{Error, Result};
use crate::grid::StructuredGrid;
use crate::solver::ThermalField;

/// `‖pred − reference‖₂ / ‖reference‖₂` over all nodes.
pub fn relative_l2(pred: &[f64], reference: &[f64]) -> Result<f64> {
    if pred.len() != reference.len() || pred.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "{} predicted values against {} reference values",
            pred.len(),
            reference.len()
        )));
    }
    let num: f64 = pred.iter().zip(reference).map(|(p, r)| (p - r) * (p - r)).sum();
    let den: f64 = reference.iter().map(|r| r * r).sum();
    if den == 0.0 {
        return Err(Error::InvalidInput("reference field is identically zero".into()));
    }
    Ok((num / den).sqrt())
}

/// [`relative_l2`] between two fields that must share grid and time.
pub fn field_relative_l2(pred: &ThermalField, reference: &ThermalField) -> Result<f64> {
    if (pred.time - reference.time).abs() > 1e-12 * reference.time.abs().max(1e-9) {
        return Err(Error::Consistency(format!(
            "fields at {} s and {} s",
            pred.time, reference.time
        )));
    }
    relative_l2(&pred.temperature, &reference.temperature)
}

/// Axis-aligned extent of the `T ≥ T_L` region.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct MeltPoolDims {
    /// Extent along the scan direction, m.
    pub length: f64,
    /// Extent across the track (both halves with symmetry on), m.
    pub width: f64,
    /// Extent along z, m.
    pub depth: f64,
    /// Volume of the nodes' control volumes above the liquidus, m³.
    pub volume: f64,
    pub empty: bool,
}

/// Melt-pool extents with linear interpolation of the isotherm between a
/// hot node and each colder axis neighbour. With `symmetric`, the width and
/// volume are doubled to cover the mirrored half.
pub fn melt_pool_dims(field: &ThermalField, grid: &StructuredGrid, liquidus: f64, symmetric: bool) -> MeltPoolDims {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    let mut volume = 0.0;
    let dims = grid.dims();
    let t = &field.temperature;
    for n in 0..grid.node_count() {
        if t[n] < liquidus {
            continue;
        }
        volume += grid.node_volume(n);
        let p = grid.node(n);
        let ijk = grid.ijk(n);
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
            let ax = grid.axis(a);
            let idx = [ijk.0, ijk.1, ijk.2];
            for step in [-1i64, 1] {
                let j = idx[a] as i64 + step;
                if j < 0 || j >= dims[a] as i64 {
                    continue;
                }
                let mut nb = idx;
                nb[a] = j as usize;
                let m = grid.index(nb[0], nb[1], nb[2]);
                if t[m] >= liquidus {
                    continue;
                }
                let frac = (t[n] - liquidus) / (t[n] - t[m]);
                let x = ax[idx[a]] + frac * (ax[j as usize] - ax[idx[a]]);
                lo[a] = lo[a].min(x);
                hi[a] = hi[a].max(x);
            }
        }
    }
    if lo[0].is_infinite() {
        return MeltPoolDims {
            empty: true,
            ..Default::default()
        };
    }
    let mirror = if symmetric { 2.0 } else { 1.0 };
    MeltPoolDims {
        length: hi[0] - lo[0],
        width: mirror * (hi[1] - lo[1]),
        depth: hi[2] - lo[2],
        volume: mirror * volume,
        empty: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::DomainSpec;
    use approx::assert_relative_eq;

    fn grid() -> StructuredGrid {
        StructuredGrid::from_axes(
            vec![0.0, 1e-5, 2e-5, 3e-5, 4e-5],
            vec![0.0, 1e-5, 2e-5],
            vec![0.0, 1e-5, 2e-5, 3e-5],
        )
        .unwrap()
    }

    #[test]
    fn relative_l2_examples() {
        let r = vec![300.0, 1500.0, 2000.0, 293.0];
        assert_eq!(relative_l2(&r, &r).unwrap(), 0.0);
        let p: Vec<f64> = r.iter().map(|v| 1.1 * v).collect();
        assert_relative_eq!(relative_l2(&p, &r).unwrap(), 0.1, max_relative = 1e-12);
        let c = 3.7;
        let (pc, rc): (Vec<f64>, Vec<f64>) = p.iter().zip(&r).map(|(a, b)| (a * c, b * c)).unzip();
        assert_relative_eq!(relative_l2(&pc, &rc).unwrap(), relative_l2(&p, &r).unwrap(), max_relative = 1e-12);
        assert!(relative_l2(&p[..3], &r).is_err());
    }

    #[test]
    fn relative_l2_matches_recomputation() {
        let g = StructuredGrid::uniform(&DomainSpec::desk_scale(), [9, 4, 5]).unwrap();
        let a: Vec<f64> = (0..g.node_count()).map(|i| 293.0 + (i as f64).sin().abs() * 900.0).collect();
        let b: Vec<f64> = (0..g.node_count()).map(|i| 293.0 + (i as f64 * 1.3).cos().abs() * 900.0).collect();
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..a.len() {
            num += (a[i] - b[i]).powi(2);
            den += b[i].powi(2);
        }
        assert!((relative_l2(&a, &b).unwrap() - (num / den).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn cold_field_has_empty_pool() {
        let g = grid();
        let f = ThermalField::uniform(&g, 1000.0, 0.0);
        let d = melt_pool_dims(&f, &g, 1723.0, true);
        assert!(d.empty);
        assert_eq!(d.length, 0.0);
    }

    #[test]
    fn single_node_at_liquidus_is_zero_extent() {
        let g = grid();
        let mut f = ThermalField::uniform(&g, 300.0, 0.0);
        f.temperature[g.index(2, 1, 3)] = 1723.0;
        let d = melt_pool_dims(&f, &g, 1723.0, false);
        assert!(!d.empty);
        assert_eq!((d.length, d.width, d.depth), (0.0, 0.0, 0.0));
        assert!(d.volume > 0.0);
    }

    #[test]
    fn ramp_crossing_midway_adds_half_cell() {
        let g = grid();
        let mut f = ThermalField::uniform(&g, 300.0, 0.0);
        // Hot node at x = 1e-5 (i = 1) and the ramp to i = 2 crosses T_L halfway.
        f.temperature[g.index(1, 0, 3)] = 1733.0;
        f.temperature[g.index(2, 0, 3)] = 1713.0;
        let d = melt_pool_dims(&f, &g, 1723.0, true);
        // Towards i = 0 the crossing is at (1733 − 1723)/(1733 − 300) of the cell.
        let left = 1e-5 - 1e-5 * 10.0 / 1433.0;
        assert_relative_eq!(d.length, 1.5e-5 - left, max_relative = 1e-12);
        // y: only the neighbour at j = 1 is cold; doubled across the plane.
        assert_relative_eq!(d.width, 2.0 * 1e-5 * 10.0 / 1433.0, max_relative = 1e-12);
    }
}
