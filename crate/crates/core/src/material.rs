//! Temperature- and phase-dependent properties of SS 316L.
//!
//! Properties follow the apparent heat capacity method: inside the mushy
//! interval the solid-side and liquid properties are mixed by the liquid
//! fraction and the latent heat is folded into `cp` through the temperature
//! derivative of the mass fraction. Points in the powder layer that have never
//! melted use porosity-reduced density and conductivity as their solid side.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::nn::dual::{Dual, Real};

pub const STEFAN_BOLTZMANN: f64 = 5.670374419e-8;

/// Lower and upper bound of the temperature range over which every property
/// must stay positive.
pub const VALID_RANGE_K: (f64, f64) = (293.0, 5000.0);

/// Polynomial with coefficients stored lowest order first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Polynomial(pub Vec<f64>);

impl Polynomial {
    pub fn new(coefficients: impl Into<Vec<f64>>) -> Self {
        Self(coefficients.into())
    }

    pub fn constant(c: f64) -> Self {
        Self(vec![c])
    }

    #[inline]
    pub fn eval<S: Real>(&self, t: S) -> S {
        let mut acc = S::cst(0.0);
        for &c in self.0.iter().rev() {
            acc = acc * t + c;
        }
        acc
    }

    pub fn derivative(&self) -> Polynomial {
        if self.0.len() <= 1 {
            return Polynomial::constant(0.0);
        }
        Polynomial(
            self.0
                .iter()
                .enumerate()
                .skip(1)
                .map(|(i, c)| c * i as f64)
                .collect(),
        )
    }

    /// Antiderivative vanishing at zero.
    pub fn antiderivative(&self) -> Polynomial {
        let mut out = vec![0.0];
        out.extend(self.0.iter().enumerate().map(|(i, c)| c / (i + 1) as f64));
        Polynomial(out)
    }

    pub fn product(&self, other: &Polynomial) -> Polynomial {
        if self.0.is_empty() || other.0.is_empty() {
            return Polynomial::constant(0.0);
        }
        let mut out = vec![0.0; self.0.len() + other.0.len() - 1];
        for (i, a) in self.0.iter().enumerate() {
            for (j, b) in other.0.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Polynomial(out)
    }

    pub fn scaled(&self, s: f64) -> Polynomial {
        Polynomial(self.0.iter().map(|c| c * s).collect())
    }
}

/// Melt history of a point: never melted, or melted at or before now.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum PhaseState {
    #[default]
    Unmelted,
    Melted,
}

impl PhaseState {
    pub fn from_flag(melted: bool) -> Self {
        if melted {
            Self::Melted
        } else {
            Self::Unmelted
        }
    }

    pub fn flag(self) -> u8 {
        match self {
            Self::Unmelted => 0,
            Self::Melted => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Region {
    PowderLayer,
    Substrate,
}

/// Phase assigned to a (temperature, state, region) triple.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Phase {
    Powder,
    BulkSolid,
    Mushy,
    Liquid,
}

/// Which material plays the solid role for a point.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SolidSide {
    Powder,
    Bulk,
}

impl SolidSide {
    pub fn of(state: PhaseState, region: Region) -> Self {
        match (region, state) {
            (Region::PowderLayer, PhaseState::Unmelted) => SolidSide::Powder,
            _ => SolidSide::Bulk,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolidProps {
    pub rho: f64,
    pub cp: f64,
    pub k: f64,
}

/// Effective properties at a point.
///
/// `cp_apparent` includes the latent contribution `cp_latent = L dα_m/dT`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EffectiveProps<S = f64> {
    pub rho: S,
    pub k: S,
    pub cp_apparent: S,
    pub cp_latent: S,
}

impl<S: Real> EffectiveProps<S> {
    /// Volumetric heat capacity ρ·C_p in J/(m³·K).
    pub fn rho_cp(&self) -> S {
        self.rho * self.cp_apparent
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaterialLibrary {
    pub solidus_k: f64,
    pub liquidus_k: f64,
    pub rho_solid: Polynomial,
    pub cp_solid: Polynomial,
    pub k_solid: Polynomial,
    pub rho_liquid: f64,
    pub cp_liquid: f64,
    pub k_liquid: f64,
    /// J/kg.
    pub latent_heat: f64,
    pub porosity: f64,
    /// Half-width of the optional C¹ smoothing of the liquid-fraction ramp
    /// corners, K. Zero reproduces the piecewise-linear ramp.
    pub mushy_smoothing: f64,
}

impl MaterialLibrary {
    /// SS 316L with the tabulated polynomials, 35 % powder porosity.
    pub fn ss316l() -> Self {
        Self {
            solidus_k: 1658.0,
            liquidus_k: 1723.0,
            rho_solid: Polynomial::new([8084.0, -0.4209, -3.894e-5]),
            cp_solid: Polynomial::new([462.0, 0.134]),
            k_solid: Polynomial::new([9.248, 0.01571]),
            rho_liquid: 6873.0,
            cp_liquid: 775.0,
            k_liquid: 22.5,
            latent_heat: latent_heat_from_j_per_g(270.0),
            porosity: 0.35,
            mushy_smoothing: 0.0,
        }
    }

    /// Constant properties with no reachable phase change. Used by the
    /// verification problems.
    pub fn constant(rho: f64, cp: f64, k: f64) -> Self {
        Self {
            solidus_k: 1.0e7,
            liquidus_k: 1.1e7,
            rho_solid: Polynomial::constant(rho),
            cp_solid: Polynomial::constant(cp),
            k_solid: Polynomial::constant(k),
            rho_liquid: rho,
            cp_liquid: cp,
            k_liquid: k,
            latent_heat: 0.0,
            porosity: 0.0,
            mushy_smoothing: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.solidus_k < self.liquidus_k) {
            return Err(invalid(format!(
                "solidus {} K must be below liquidus {} K",
                self.solidus_k, self.liquidus_k
            )));
        }
        if !(0.0..1.0).contains(&self.porosity) {
            return Err(invalid(format!(
                "porosity {} outside [0, 1)",
                self.porosity
            )));
        }
        if !(self.latent_heat >= 0.0) {
            return Err(invalid("latent heat must be non-negative"));
        }
        let w = self.mushy_smoothing;
        if !(w >= 0.0) || 2.0 * w > self.liquidus_k - self.solidus_k {
            return Err(invalid(format!(
                "mushy smoothing half-width {w} K must lie in [0, (T_L - T_S)/2]"
            )));
        }
        if !(self.rho_liquid > 0.0 && self.cp_liquid > 0.0 && self.k_liquid > 0.0) {
            return Err(invalid("liquid properties must be positive"));
        }
        let (lo, hi) = VALID_RANGE_K;
        for i in 0..=470 {
            let t = lo + (hi - lo) * i as f64 / 470.0;
            for (name, p) in [
                ("rho_solid", &self.rho_solid),
                ("cp_solid", &self.cp_solid),
                ("k_solid", &self.k_solid),
            ] {
                let v = p.eval(t);
                if !(v > 0.0) {
                    return Err(invalid(format!("{name} is {v} at {t} K")));
                }
            }
        }
        Ok(())
    }

    fn check_temperature(t: f64) -> Result<()> {
        if t.is_finite() {
            Ok(())
        } else {
            Err(invalid(format!("temperature {t} is not finite")))
        }
    }

    pub fn solid_props(&self, t: f64) -> Result<SolidProps> {
        Self::check_temperature(t)?;
        Ok(SolidProps {
            rho: self.rho_solid.eval(t),
            cp: self.cp_solid.eval(t),
            k: self.k_solid.eval(t),
        })
    }

    /// Powder-layer density and conductivity at porosity `phi`.
    pub fn powder_props(&self, t: f64, phi: f64) -> Result<(f64, f64)> {
        Self::check_temperature(t)?;
        if !(0.0..1.0).contains(&phi) {
            return Err(invalid(format!("porosity {phi} outside [0, 1)")));
        }
        Ok((
            (1.0 - phi) * self.rho_solid.eval(t),
            self.k_solid.eval(t) * powder_conductivity_factor(phi),
        ))
    }

    /// Liquid fraction, linear between solidus and liquidus and clamped to
    /// [0, 1]; the ramp corners are rounded when `mushy_smoothing > 0`.
    pub fn liquid_fraction<S: Real>(&self, t: S) -> S {
        self.liquid_fraction_with_slope(t).0
    }

    fn liquid_fraction_with_slope<S: Real>(&self, t: S) -> (S, S) {
        let span = self.liquidus_k - self.solidus_k;
        let w = self.mushy_smoothing;
        let (g0, g0p) = smoothed_ramp(t - self.solidus_k, w);
        let (g1, g1p) = smoothed_ramp(t - self.liquidus_k, w);
        ((g0 - g1) / span, (g0p - g1p) / span)
    }

    /// Mass fraction α_m for liquid fraction `f_l`, with the bulk solid
    /// density evaluated at `t`.
    pub fn mass_fraction(&self, f_l: f64, t: f64) -> f64 {
        let rho_s = self.rho_solid.eval(t);
        mass_fraction_of(f_l, rho_s, self.rho_liquid)
    }

    pub fn phase(&self, t: f64, state: PhaseState, region: Region) -> Phase {
        if t >= self.liquidus_k {
            Phase::Liquid
        } else if t >= self.solidus_k {
            Phase::Mushy
        } else {
            match SolidSide::of(state, region) {
                SolidSide::Powder => Phase::Powder,
                SolidSide::Bulk => Phase::BulkSolid,
            }
        }
    }

    pub fn effective_props(&self, t: f64, state: PhaseState, region: Region) -> EffectiveProps {
        self.props_for_side(t, SolidSide::of(state, region))
    }

    /// Generic over the scalar so derivatives through the property functions
    /// come out of dual arithmetic.
    pub fn props_for_side<S: Real>(&self, t: S, side: SolidSide) -> EffectiveProps<S> {
        let m = self.mixture(t, side);
        let cp_latent = m.dalpha_dt * self.latent_heat;
        EffectiveProps {
            rho: m.rho,
            k: m.k,
            cp_apparent: m.cp_sensible + cp_latent,
            cp_latent,
        }
    }

    /// Total derivative of the mass fraction with respect to temperature.
    pub fn mass_fraction_slope(&self, t: f64, side: SolidSide) -> f64 {
        self.mixture(t, side).dalpha_dt
    }

    fn mixture<S: Real>(&self, t: S, side: SolidSide) -> Mixture<S> {
        let tr = t.re();
        let w = self.mushy_smoothing;
        let (porosity_factor, k_factor) = match side {
            SolidSide::Powder => (
                1.0 - self.porosity,
                powder_conductivity_factor(self.porosity),
            ),
            SolidSide::Bulk => (1.0, 1.0),
        };
        let zero = S::cst(0.0);
        if tr < self.solidus_k - w {
            return Mixture {
                rho: self.rho_solid.eval(t) * porosity_factor,
                k: self.k_solid.eval(t) * k_factor,
                cp_sensible: self.cp_solid.eval(t),
                dalpha_dt: zero,
            };
        }
        if tr >= self.liquidus_k + w {
            return Mixture {
                rho: S::cst(self.rho_liquid),
                k: S::cst(self.k_liquid),
                cp_sensible: S::cst(self.cp_liquid),
                dalpha_dt: zero,
            };
        }
        let (f, fp) = self.liquid_fraction_with_slope(t);
        let one_minus = S::cst(1.0) - f;
        let rho_s = self.rho_solid.eval(t) * porosity_factor;
        let rho_s_dt = self.rho_solid.derivative().eval(t) * porosity_factor;
        let cp_s = self.cp_solid.eval(t);
        let k_s = self.k_solid.eval(t) * k_factor;
        let rho_l = self.rho_liquid;

        let rho = one_minus * rho_s + f * rho_l;
        let k = one_minus * k_s + f * self.k_liquid;
        let cp_sensible = (one_minus * rho_s * cp_s + f * (rho_l * self.cp_liquid)) / rho;
        // α_m = N / (2 D), N = f ρ_L - (1 - f) ρ_s, D = ρ.
        let num = f * rho_l - one_minus * rho_s;
        let num_dt = fp * rho_l + fp * rho_s - one_minus * rho_s_dt;
        let den_dt = fp * rho_l - fp * rho_s + one_minus * rho_s_dt;
        let dalpha_dt = (num_dt * rho - num * den_dt) / (rho * rho * 2.0);
        Mixture {
            rho,
            k,
            cp_sensible,
            dalpha_dt,
        }
    }

    /// d(ρC_p)/dT at `t`, from dual arithmetic through the property functions.
    pub fn rho_cp_slope(&self, t: f64, side: SolidSide) -> f64 {
        let p = self.props_for_side(Dual::<f64, 1>::variable(t, 0), side);
        p.rho_cp().eps[0]
    }

    pub fn enthalpy_model(&self) -> EnthalpyModel {
        EnthalpyModel::new(self)
    }
}

struct Mixture<S> {
    rho: S,
    k: S,
    cp_sensible: S,
    dalpha_dt: S,
}

pub fn latent_heat_from_j_per_g(j_per_g: f64) -> f64 {
    j_per_g * 1.0e3
}

pub fn powder_conductivity_factor(phi: f64) -> f64 {
    (1.0 - phi) / (1.0 + 11.0 * phi * phi)
}

fn mass_fraction_of(f_l: f64, rho_s: f64, rho_l: f64) -> f64 {
    (f_l * rho_l - (1.0 - f_l) * rho_s) / (2.0 * ((1.0 - f_l) * rho_s + f_l * rho_l))
}

/// max(u, 0) with its corner rounded by a quadratic over |u| <= w.
fn smoothed_ramp<S: Real>(u: S, w: f64) -> (S, S) {
    let ur = u.re();
    if ur <= -w {
        (S::cst(0.0), S::cst(0.0))
    } else if ur >= w {
        (u, S::cst(1.0))
    } else {
        let s = u + w;
        (s * s / (4.0 * w), s / (2.0 * w))
    }
}

const GAUSS_LEGENDRE_8: [(f64, f64); 8] = [
    (-0.960_289_856_497_536_3, 0.101_228_536_290_376_26),
    (-0.796_666_477_413_626_7, 0.222_381_034_453_374_47),
    (-0.525_532_409_916_329, 0.313_706_645_877_887_3),
    (-0.183_434_642_495_649_8, 0.362_683_783_378_362),
    (0.183_434_642_495_649_8, 0.362_683_783_378_362),
    (0.525_532_409_916_329, 0.313_706_645_877_887_3),
    (0.796_666_477_413_626_7, 0.222_381_034_453_374_47),
    (0.960_289_856_497_536_3, 0.101_228_536_290_376_26),
];

/// Volumetric enthalpy e(T) = ∫ ρ C_p dT (J/m³) per solid side, measured from
/// 0 K along that side's property path.
///
/// Solid and liquid branches are closed-form polynomial antiderivatives; the
/// mushy interval uses composite Gauss–Legendre quadrature, which is exact
/// for the polynomial part and converged to round-off for the latent part.
#[derive(Clone, Debug)]
pub struct EnthalpyModel {
    material: MaterialLibrary,
    lo: f64,
    hi: f64,
    sides: [SideEnthalpy; 2],
}

#[derive(Clone, Debug)]
struct SideEnthalpy {
    solid_antiderivative: Polynomial,
    at_lo: f64,
    at_hi: f64,
}

impl EnthalpyModel {
    pub fn new(material: &MaterialLibrary) -> Self {
        let lo = material.solidus_k - material.mushy_smoothing;
        let hi = material.liquidus_k + material.mushy_smoothing;
        let make = |side: SolidSide| {
            let factor = match side {
                SolidSide::Powder => 1.0 - material.porosity,
                SolidSide::Bulk => 1.0,
            };
            let anti = material
                .rho_solid
                .product(&material.cp_solid)
                .scaled(factor)
                .antiderivative();
            let at_lo = anti.eval(lo);
            let at_hi = at_lo + mushy_integral(material, side, lo, hi);
            SideEnthalpy {
                solid_antiderivative: anti,
                at_lo,
                at_hi,
            }
        };
        Self {
            material: material.clone(),
            lo,
            hi,
            sides: [make(SolidSide::Powder), make(SolidSide::Bulk)],
        }
    }

    fn side(&self, side: SolidSide) -> &SideEnthalpy {
        match side {
            SolidSide::Powder => &self.sides[0],
            SolidSide::Bulk => &self.sides[1],
        }
    }

    pub fn material(&self) -> &MaterialLibrary {
        &self.material
    }

    pub fn enthalpy(&self, t: f64, side: SolidSide) -> f64 {
        let s = self.side(side);
        if t <= self.lo {
            s.solid_antiderivative.eval(t)
        } else if t >= self.hi {
            s.at_hi + self.material.rho_liquid * self.material.cp_liquid * (t - self.hi)
        } else {
            s.at_lo + mushy_integral(&self.material, side, self.lo, t)
        }
    }

    /// Inverse of [`enthalpy`](Self::enthalpy) by safeguarded Newton iteration.
    pub fn temperature(&self, e: f64, side: SolidSide, guess: f64) -> f64 {
        let (mut a, mut b) = (1.0, 1.0e5);
        let mut t = guess.clamp(a, b);
        for _ in 0..200 {
            let r = self.enthalpy(t, side) - e;
            if r.abs() <= 1e-13 * e.abs().max(1.0) {
                break;
            }
            if r > 0.0 {
                b = t;
            } else {
                a = t;
            }
            let slope = self.material.props_for_side(t, side).rho_cp();
            let mut next = t - r / slope;
            if !(next > a && next < b) {
                next = 0.5 * (a + b);
            }
            if (next - t).abs() <= 1e-12 * t.abs() {
                t = next;
                break;
            }
            t = next;
        }
        t
    }
}

fn mushy_integral(m: &MaterialLibrary, side: SolidSide, a: f64, b: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let w = m.mushy_smoothing;
    let mut breaks = vec![a];
    for p in [m.solidus_k + w, m.liquidus_k - w] {
        if p > a && p < b {
            breaks.push(p);
        }
    }
    breaks.push(b);
    let mut total = 0.0;
    for seg in breaks.windows(2) {
        let (s0, s1) = (seg[0], seg[1]);
        let pieces = 4;
        let h = (s1 - s0) / pieces as f64;
        for p in 0..pieces {
            let c = s0 + (p as f64 + 0.5) * h;
            for &(x, wt) in &GAUSS_LEGENDRE_8 {
                let t = c + 0.5 * h * x;
                total += 0.5 * h * wt * m.props_for_side(t, side).rho_cp();
            }
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lib() -> MaterialLibrary {
        MaterialLibrary::ss316l()
    }

    #[test]
    fn table_values_at_reference_temperatures() {
        let m = lib();
        assert_eq!(m.solid_props(0.0).unwrap().rho, 8084.0);
        let p = m.solid_props(293.0).unwrap();
        assert!((p.rho - 7957.33).abs() < 0.01);
        assert!((p.cp - 501.262).abs() < 1e-9);
        assert!((p.k - 13.851).abs() < 1e-3);
        let p = m.solid_props(1658.0).unwrap();
        let expect = 8084.0 - 0.4209 * 1658.0 - 3.894e-5 * 1658.0 * 1658.0;
        assert!((p.rho - expect).abs() < 1e-9);
        assert!(m.solid_props(f64::NAN).is_err());
        assert!(m.solid_props(f64::INFINITY).is_err());
    }

    #[test]
    fn powder_reduction() {
        let m = lib();
        let s = m.solid_props(293.0).unwrap();
        assert_eq!(m.powder_props(293.0, 0.0).unwrap(), (s.rho, s.k));
        let (rho_p, k_p) = m.powder_props(293.0, 0.35).unwrap();
        assert!((rho_p - 5172.26).abs() < 0.01);
        assert!((k_p - 3.8353).abs() < 1e-3);
        for t in [300.0, 900.0, 1600.0] {
            let (_, kp) = m.powder_props(t, 0.35).unwrap();
            assert!((kp / m.solid_props(t).unwrap().k - 0.27689).abs() < 1e-5);
        }
        assert!(m.powder_props(300.0, 1.0).is_err());
        assert!(m.powder_props(300.0, -0.1).is_err());
    }

    #[test]
    fn liquid_fraction_ramp() {
        let m = lib();
        assert_eq!(m.liquid_fraction(1658.0), 0.0);
        assert_eq!(m.liquid_fraction(1723.0), 1.0);
        assert!((m.liquid_fraction(1690.5) - 0.5).abs() < 1e-15);
        assert_eq!(m.liquid_fraction(300.0), 0.0);
        assert_eq!(m.liquid_fraction(3000.0), 1.0);
    }

    #[test]
    fn mass_fraction_endpoints() {
        let m = lib();
        assert!((m.mass_fraction(0.0, 1700.0) + 0.5).abs() < 1e-15);
        assert!((m.mass_fraction(1.0, 1700.0) - 0.5).abs() < 1e-15);
        assert!((m.mass_fraction(0.5, 1690.5) + 0.01373).abs() < 1e-4);
    }

    #[test]
    fn phase_rules() {
        let m = lib();
        use PhaseState::*;
        use Region::*;
        let bulk = m.solid_props(300.0).unwrap();
        let p = m.effective_props(300.0, Melted, PowderLayer);
        assert_eq!((p.rho, p.k, p.cp_apparent), (bulk.rho, bulk.k, bulk.cp));
        let p = m.effective_props(300.0, Unmelted, PowderLayer);
        let (rp, kp) = m.powder_props(300.0, 0.35).unwrap();
        assert_eq!((p.rho, p.k), (rp, kp));
        let p = m.effective_props(300.0, Unmelted, Substrate);
        assert_eq!(p.rho, bulk.rho);
        for (state, region) in [(Melted, PowderLayer), (Unmelted, PowderLayer), (Unmelted, Substrate)] {
            let p = m.effective_props(2000.0, state, region);
            assert_eq!((p.rho, p.k, p.cp_apparent), (6873.0, 22.5, 775.0));
        }
        assert_eq!(m.phase(1700.0, Unmelted, PowderLayer), Phase::Mushy);
        assert_eq!(m.phase(1723.0, Unmelted, PowderLayer), Phase::Liquid);
        assert_eq!(m.phase(1657.9, Unmelted, PowderLayer), Phase::Powder);
        assert_eq!(m.phase(1657.9, Melted, PowderLayer), Phase::BulkSolid);
    }

    #[test]
    fn latent_quadrature_recovers_latent_heat() {
        for side in [SolidSide::Bulk, SolidSide::Powder] {
            let m = lib();
            let n = 2000;
            let (a, b) = (m.solidus_k, m.liquidus_k);
            let h = (b - a) / n as f64;
            // Interior samples only: the ramp slope is one-sided at the ends.
            let f = |t: f64| m.mass_fraction_slope(t, side) * m.latent_heat;
            let mut integral = 0.5 * (f(a + 1e-9) + f(b - 1e-9));
            for i in 1..n {
                integral += f(a + i as f64 * h);
            }
            integral *= h;
            assert!(
                (integral / m.latent_heat - 1.0).abs() < 1e-3,
                "{side:?}: {integral}"
            );
        }
    }

    #[test]
    fn smoothing_keeps_latent_total() {
        let mut m = lib();
        m.mushy_smoothing = 10.0;
        m.validate().unwrap();
        let n = 4000;
        let (a, b) = (m.solidus_k - 10.0, m.liquidus_k + 10.0);
        let h = (b - a) / n as f64;
        let mut integral = 0.0;
        for i in 0..n {
            let t = a + (i as f64 + 0.5) * h;
            integral += m.mass_fraction_slope(t, SolidSide::Bulk) * h;
        }
        assert!((integral - 1.0).abs() < 1e-4);
    }

    #[test]
    fn enthalpy_derivative_matches_heat_capacity() {
        let m = lib();
        let e = m.enthalpy_model();
        for side in [SolidSide::Bulk, SolidSide::Powder] {
            for &t in &[500.0, 1500.0, 1670.0, 1700.0, 1715.0, 2500.0] {
                let h = 1e-3;
                let fd = (e.enthalpy(t + h, side) - e.enthalpy(t - h, side)) / (2.0 * h);
                let exact = m.props_for_side(t, side).rho_cp();
                assert!((fd / exact - 1.0).abs() < 1e-6, "{side:?} {t}: {fd} vs {exact}");
            }
        }
    }

    #[test]
    fn enthalpy_continuous_across_phase_limits() {
        let m = lib();
        let e = m.enthalpy_model();
        for t in [m.solidus_k, m.liquidus_k] {
            let a = e.enthalpy(t - 1e-9, SolidSide::Bulk);
            let b = e.enthalpy(t + 1e-9, SolidSide::Bulk);
            // 2e-9 K times the largest apparent heat capacity (latent plateau).
            assert!((a - b).abs() < 2e-9 * 5e7 + 1e-3, "{t}: {a} vs {b}");
        }
    }

    #[test]
    fn enthalpy_inverse_round_trips() {
        let m = lib();
        let e = m.enthalpy_model();
        for &t in &[293.0, 1000.0, 1660.0, 1690.0, 1722.9, 1800.0, 3500.0] {
            for side in [SolidSide::Bulk, SolidSide::Powder] {
                let back = e.temperature(e.enthalpy(t, side), side, 293.0);
                assert!((back - t).abs() < 1e-8, "{t} -> {back}");
            }
        }
    }

    #[test]
    fn default_library_validates() {
        lib().validate().unwrap();
        MaterialLibrary::constant(7000.0, 600.0, 20.0).validate().unwrap();
        let mut bad = lib();
        bad.porosity = 1.0;
        assert!(bad.validate().is_err());
        let mut bad = lib();
        bad.liquidus_k = bad.solidus_k;
        assert!(bad.validate().is_err());
    }

    proptest! {
        #[test]
        fn liquid_fraction_bounded_monotone(t0 in 200.0f64..3000.0, dt in 0.0f64..200.0) {
            let m = lib();
            let a = m.liquid_fraction(t0);
            let b = m.liquid_fraction(t0 + dt);
            prop_assert!((0.0..=1.0).contains(&a));
            prop_assert!(b >= a);
        }

        #[test]
        fn mass_fraction_increasing(f in 0.0f64..0.999, df in 1e-4f64..1e-3, t in 1658.0f64..1723.0) {
            let m = lib();
            let a = m.mass_fraction(f, t);
            let b = m.mass_fraction((f + df).min(1.0), t);
            prop_assert!(b > a);
            prop_assert!((-0.5..=0.5).contains(&a));
        }

        #[test]
        fn powder_never_exceeds_solid(t in 293.0f64..1658.0, phi in 0.001f64..0.99) {
            let m = lib();
            let (rp, kp) = m.powder_props(t, phi).unwrap();
            let s = m.solid_props(t).unwrap();
            prop_assert!(rp <= s.rho && kp <= s.k);
        }

        #[test]
        fn properties_positive(t in 293.0f64..5000.0, melted in any::<bool>(), powder in any::<bool>()) {
            let m = lib();
            let region = if powder { Region::PowderLayer } else { Region::Substrate };
            let p = m.effective_props(t, PhaseState::from_flag(melted), region);
            prop_assert!(p.rho > 0.0 && p.k > 0.0 && p.cp_apparent > 0.0);
        }
    }

    #[test]
    fn continuity_at_phase_limits() {
        let m = lib();
        for state in [PhaseState::Unmelted, PhaseState::Melted] {
            for region in [Region::PowderLayer, Region::Substrate] {
                for t in [m.solidus_k, m.liquidus_k] {
                    let below = m.effective_props(t - 1e-9, state, region);
                    let above = m.effective_props(t + 1e-9, state, region);
                    let sens = |p: EffectiveProps| p.cp_apparent - p.cp_latent;
                    assert!((below.rho - above.rho).abs() < 1e-4);
                    assert!((below.k - above.k).abs() < 1e-6);
                    assert!((sens(below) - sens(above)).abs() < 1e-4);
                }
            }
        }
    }
}
