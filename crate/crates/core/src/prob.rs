//! Probability primitives: a fast error function, the truncated normal
//! distribution used for predicted object positions, and the detector
//! confusion model that turns an existence probability into maneuver weights.

use serde::{Deserialize, Serialize};

use crate::error::{PlannerError, Result};

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Parent-normal mass on `[lower, upper]` below which a truncated normal is
/// treated as degenerate.
pub const MIN_TRUNCATED_MASS: f64 = 1e-12;

/// Complementary error function, Chebyshev fit with fractional error below
/// 1.2e-7 everywhere.
pub fn erfc_approx(x: f64) -> f64 {
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.5 * z);
    let poly = -1.265_512_23
        + t * (1.000_023_68
            + t * (0.374_091_96
                + t * (0.096_784_18
                    + t * (-0.186_288_06
                        + t * (0.278_868_07
                            + t * (-1.135_203_98
                                + t * (1.488_515_87 + t * (-0.822_152_23 + t * 0.170_872_77))))))));
    let ans = t * (-z * z + poly).exp();
    if x >= 0.0 {
        ans
    } else {
        2.0 - ans
    }
}

/// Error function built on [`erfc_approx`]. Absolute error is at most 1.2e-7.
///
/// The value is computed on `|x|` and the sign reapplied, so
/// `erf_approx(-x) == -erf_approx(x)` holds bit for bit and `erf_approx(0.0)`
/// is exactly zero.
pub fn erf_approx(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(PlannerError::Domain(format!("erf of non-finite value {x}")));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    let magnitude = 1.0 - erfc_approx(x.abs());
    Ok(if x < 0.0 { -magnitude } else { magnitude })
}

/// Standard normal cdf.
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc_approx(-z * std::f64::consts::FRAC_1_SQRT_2)
}

/// Standard normal upper tail `1 - Φ(z)`, accurate far into the tail.
fn std_normal_sf(z: f64) -> f64 {
    0.5 * erfc_approx(z * std::f64::consts::FRAC_1_SQRT_2)
}

pub fn std_normal_pdf(z: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * z * z).exp()
}

/// Normal distribution `N(mu, sigma²)` restricted to `[lower, upper]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncatedNormal {
    pub mu: f64,
    pub sigma: f64,
    pub lower: f64,
    pub upper: f64,
}

impl TruncatedNormal {
    pub fn new(mu: f64, sigma: f64, lower: f64, upper: f64) -> Result<Self> {
        let d = TruncatedNormal { mu, sigma, lower, upper };
        d.validate()?;
        Ok(d)
    }

    /// Truncation at `mu ± k·sigma`.
    pub fn symmetric(mu: f64, sigma: f64, k: f64) -> Result<Self> {
        Self::new(mu, sigma, mu - k * sigma, mu + k * sigma)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(PlannerError::Domain(format!("sigma must be positive, got {}", self.sigma)));
        }
        if !self.mu.is_finite() || self.lower.is_nan() || self.upper.is_nan() {
            return Err(PlannerError::Domain("non-finite truncated normal parameter".into()));
        }
        if !(self.lower < self.upper) {
            return Err(PlannerError::Domain(format!(
                "lower bound {} must be below upper bound {}",
                self.lower, self.upper
            )));
        }
        Ok(())
    }

    fn z(&self, x: f64) -> f64 {
        (x - self.mu) / self.sigma
    }

    /// `(alpha, beta, mass)` with the parent mass taken from whichever tail
    /// keeps the subtraction well conditioned.
    fn standardized(&self) -> Result<(f64, f64, f64)> {
        let alpha = self.z(self.lower);
        let beta = self.z(self.upper);
        let mass = if alpha > 0.0 {
            std_normal_sf(alpha) - std_normal_sf(beta)
        } else {
            std_normal_cdf(beta) - std_normal_cdf(alpha)
        };
        if !(mass >= MIN_TRUNCATED_MASS) {
            return Err(PlannerError::Numeric(format!(
                "parent mass {mass:e} on [{}, {}] is degenerate",
                self.lower, self.upper
            )));
        }
        Ok((alpha, beta, mass))
    }

    /// Probability density; zero outside the support.
    pub fn pdf(&self, x: f64) -> Result<f64> {
        let (_, _, mass) = self.standardized()?;
        if x < self.lower || x > self.upper {
            return Ok(0.0);
        }
        Ok(std_normal_pdf(self.z(x)) / (self.sigma * mass))
    }

    /// Derivative of the density inside the support.
    pub fn pdf_slope(&self, x: f64) -> Result<f64> {
        let density = self.pdf(x)?;
        Ok(-density * self.z(x) / self.sigma)
    }
}

/// Cumulative distribution function of a truncated normal.
///
/// Exactly 0 at and below `lower`, exactly 1 at and above `upper`.
pub fn tn_cdf(d: &TruncatedNormal, x: f64) -> Result<f64> {
    d.validate()?;
    let (alpha, _, mass) = d.standardized()?;
    if x <= d.lower {
        return Ok(0.0);
    }
    if x >= d.upper {
        return Ok(1.0);
    }
    let zx = d.z(x);
    let num = if alpha > 0.0 {
        std_normal_sf(alpha) - std_normal_sf(zx)
    } else {
        std_normal_cdf(zx) - std_normal_cdf(alpha)
    };
    Ok((num / mass).clamp(0.0, 1.0))
}

/// Mean and variance of a truncated normal.
pub fn tn_moments(d: &TruncatedNormal) -> Result<(f64, f64)> {
    d.validate()?;
    let (alpha, beta, mass) = d.standardized()?;
    let pa = std_normal_pdf(alpha);
    let pb = std_normal_pdf(beta);
    // alpha·φ(alpha) → 0 for infinite bounds; guard the 0·∞ product.
    let apa = if pa == 0.0 { 0.0 } else { alpha * pa };
    let bpb = if pb == 0.0 { 0.0 } else { beta * pb };
    let shift = (pa - pb) / mass;
    let mean = d.mu + d.sigma * shift;
    let variance = d.sigma * d.sigma * (1.0 + (apa - bpb) / mass - shift * shift);
    Ok((mean, variance))
}

/// Confusion probabilities of the object detector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorModel {
    pub p_tp: f64,
    pub p_fp: f64,
    pub p_tn: f64,
    pub p_fn: f64,
}

impl DetectorModel {
    pub fn new(p_tp: f64, p_fp: f64, p_tn: f64, p_fn: f64) -> Result<Self> {
        let d = DetectorModel { p_tp, p_fp, p_tn, p_fn };
        d.validate()?;
        Ok(d)
    }

    pub fn perfect() -> Self {
        DetectorModel { p_tp: 1.0, p_fp: 0.0, p_tn: 1.0, p_fn: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("p_tp", self.p_tp), ("p_fp", self.p_fp), ("p_tn", self.p_tn), ("p_fn", self.p_fn)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(PlannerError::Domain(format!("{name} = {p} is not a probability")));
            }
        }
        Ok(())
    }
}

/// Blend weights of the "ignore" maneuver A and the "treat as real" maneuver B.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ManeuverWeights {
    pub w_a: f64,
    pub w_b: f64,
}

impl ManeuverWeights {
    pub fn new(w_a: f64, w_b: f64) -> Result<Self> {
        if !(w_a >= 0.0 && w_b >= 0.0) || !(w_a + w_b > 0.0) || !(w_a + w_b).is_finite() {
            return Err(PlannerError::Domain(format!("invalid maneuver weights ({w_a}, {w_b})")));
        }
        Ok(ManeuverWeights { w_a, w_b })
    }

    pub fn normalized(&self) -> Self {
        let sum = self.w_a + self.w_b;
        ManeuverWeights { w_a: self.w_a / sum, w_b: self.w_b / sum }
    }
}

/// Unnormalized confusion-weighted maneuver weights `(w_a, w_b)`.
pub fn detection_weights_raw(p_exist: f64, det: &DetectorModel) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&p_exist) {
        return Err(PlannerError::Domain(format!("existence probability {p_exist} outside [0, 1]")));
    }
    det.validate()?;
    let w_a = (1.0 - p_exist) * det.p_tn + p_exist * det.p_fp;
    let w_b = p_exist * det.p_tp + (1.0 - p_exist) * det.p_fn;
    Ok((w_a, w_b))
}

/// Maneuver weights for an object with existence probability `p_exist`,
/// normalized to sum to one.
pub fn detection_weights(p_exist: f64, det: &DetectorModel) -> Result<ManeuverWeights> {
    let (w_a, w_b) = detection_weights_raw(p_exist, det)?;
    if w_a + w_b <= 0.0 {
        return Err(PlannerError::DegenerateDetector);
    }
    Ok(ManeuverWeights::new(w_a, w_b)?.normalized())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // Reference values from a 40-term Taylor series (see tests/common).
    const ERF_1: f64 = 0.842_700_792_949_714_9;

    #[test]
    fn erf_origin_and_symmetry() {
        assert_eq!(erf_approx(0.0).unwrap(), 0.0);
        for &x in &[1e-9, 0.3, 1.0, 2.5, 5.9] {
            assert_eq!(erf_approx(-x).unwrap(), -erf_approx(x).unwrap());
        }
        assert!((erf_approx(1.0).unwrap() - ERF_1).abs() <= 1.2e-7);
    }

    #[test]
    fn erf_rejects_non_finite() {
        assert!(matches!(erf_approx(f64::NAN), Err(PlannerError::Domain(_))));
        assert!(erf_approx(f64::INFINITY).is_err());
    }

    #[test]
    fn cdf_examples() {
        let d = TruncatedNormal::new(0.0, 1.0, -1.0, 1.0).unwrap();
        assert!((tn_cdf(&d, 0.0).unwrap() - 0.5).abs() < 2e-7);
        assert_eq!(tn_cdf(&d, -1.0).unwrap(), 0.0);
        assert_eq!(tn_cdf(&d, 1.0).unwrap(), 1.0);
        let wide = TruncatedNormal::new(0.0, 1.0, -1e6, 1e6).unwrap();
        assert!((tn_cdf(&wide, 1.0).unwrap() - 0.841_344_746).abs() < 1e-6);
    }

    #[test]
    fn degenerate_mass_is_an_error() {
        let d = TruncatedNormal::new(0.0, 1.0, 40.0, 41.0).unwrap();
        assert!(matches!(tn_cdf(&d, 40.5), Err(PlannerError::Numeric(_))));
        assert!(tn_moments(&d).is_err());
    }

    #[test]
    fn invalid_parameters() {
        assert!(TruncatedNormal::new(0.0, 0.0, -1.0, 1.0).is_err());
        assert!(TruncatedNormal::new(0.0, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn moments_examples() {
        let half = TruncatedNormal::new(0.0, 1.0, 0.0, 1e6).unwrap();
        let (m, _) = tn_moments(&half).unwrap();
        assert!((m - 0.797_884_560_8).abs() < 1e-6);

        let sym = TruncatedNormal::new(0.0, 2.0, -1.5, 1.5).unwrap();
        assert_eq!(tn_moments(&sym).unwrap().0, 0.0);

        let wide = TruncatedNormal::new(5.0, 1.0, -1e6, 1e6).unwrap();
        let (m, v) = tn_moments(&wide).unwrap();
        assert!((m - 5.0).abs() < 1e-6 && (v - 1.0).abs() < 1e-6);
    }

    #[test]
    fn weight_examples() {
        let w = detection_weights(1.0, &DetectorModel::perfect()).unwrap();
        assert_eq!((w.w_a, w.w_b), (0.0, 1.0));
        let w = detection_weights(0.5, &DetectorModel::perfect()).unwrap();
        assert_eq!((w.w_a, w.w_b), (0.5, 0.5));
        let det = DetectorModel::new(0.9, 0.1, 0.9, 0.1).unwrap();
        let (ra, rb) = detection_weights_raw(0.3, &det).unwrap();
        assert!((ra - 0.66).abs() < 1e-15 && (rb - 0.34).abs() < 1e-15);
        let w = detection_weights(0.3, &det).unwrap();
        assert!((w.w_a - 0.66).abs() < 1e-15 && (w.w_b - 0.34).abs() < 1e-15);
    }

    #[test]
    fn weight_errors() {
        let blind = DetectorModel::new(0.0, 0.0, 0.0, 0.0).unwrap();
        assert_eq!(detection_weights(0.4, &blind), Err(PlannerError::DegenerateDetector));
        assert!(detection_weights(1.1, &DetectorModel::perfect()).is_err());
        assert!(DetectorModel::new(1.2, 0.0, 0.0, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn cdf_monotone(mu in -10.0..10.0f64, sigma in 0.1..5.0f64,
                        lo in -4.0..0.0f64, width in 0.5..8.0f64,
                        a in -20.0..20.0f64, b in -20.0..20.0f64) {
            let d = TruncatedNormal::new(mu, sigma, mu + lo * sigma, mu + (lo + width) * sigma).unwrap();
            let (x1, x2) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(tn_cdf(&d, x1).unwrap() <= tn_cdf(&d, x2).unwrap());
        }

        #[test]
        fn truncation_shrinks_variance(mu in -5.0..5.0f64, sigma in 0.1..3.0f64,
                                       lo in -6.0..5.5f64, width in 0.1..6.0f64) {
            let hi = (lo + width).min(6.0);
            prop_assume!(hi > lo);
            let d = TruncatedNormal::new(mu, sigma, mu + lo * sigma, mu + hi * sigma).unwrap();
            let (_, v) = tn_moments(&d).unwrap();
            prop_assert!(v < sigma * sigma);
        }

        #[test]
        fn symmetric_detector_sums_to_one(p in 0.0..=1.0f64, q in 0.0..=1.0f64) {
            let det = DetectorModel::new(q, 1.0 - q, q, 1.0 - q).unwrap();
            let (a, b) = detection_weights_raw(p, &det).unwrap();
            prop_assert!((a + b - 1.0).abs() <= 1e-15);
        }
    }
}
