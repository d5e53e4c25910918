//! Mixing distributions for random coefficients.
//!
//! A random coefficient is `location + scale * T(draw)` where `T` depends on
//! the distribution kind, except for the lognormal which is
//! `sign * exp(location + scale * z)`. Normal and lognormal kinds consume
//! standard-normal draws; triangular, uniform, and Weibull kinds consume
//! uniform(0,1) draws directly. The Weibull is the location-scale shift of the
//! unit-shape (exponential) variate; see the crate docs for why the shape is
//! pinned.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quasirandom::DrawSpace;
use crate::special;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixingKind {
    Normal,
    Lognormal,
    Triangular,
    Uniform,
    Weibull,
}

impl MixingKind {
    /// Which standard draws this kind consumes.
    pub fn draw_space(&self) -> DrawSpace {
        match self {
            MixingKind::Normal | MixingKind::Lognormal => DrawSpace::StandardNormal,
            MixingKind::Triangular | MixingKind::Uniform | MixingKind::Weibull => {
                DrawSpace::Uniform01
            }
        }
    }

    pub fn token(&self) -> &'static str {
        match self {
            MixingKind::Normal => "normal",
            MixingKind::Lognormal => "lognormal",
            MixingKind::Triangular => "triangular",
            MixingKind::Uniform => "uniform",
            MixingKind::Weibull => "weibull",
        }
    }

    pub fn from_token(token: &str) -> Result<Self> {
        match token {
            "normal" => Ok(MixingKind::Normal),
            "lognormal" => Ok(MixingKind::Lognormal),
            "triangular" => Ok(MixingKind::Triangular),
            "uniform" => Ok(MixingKind::Uniform),
            "weibull" => Ok(MixingKind::Weibull),
            other => Err(Error::invalid(format!(
                "unknown distribution token `{other}`"
            ))),
        }
    }
}

impl std::fmt::Display for MixingKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.pad(self.token())
    }
}

/// A standard draw tagged with its space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StandardDraw {
    Normal(f64),
    Uniform(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixingDistribution {
    pub kind: MixingKind,
    /// Location mu.
    pub location: f64,
    /// Scale sigma >= 0.
    pub scale: f64,
    /// Negative branch for the lognormal (coefficient constrained negative).
    #[serde(default)]
    pub negative: bool,
}

/// The linear draw factor `T` so that a non-lognormal realization is
/// `location + scale * T`. For normal/lognormal kinds `raw` is a standard
/// normal; otherwise a uniform in (0, 1).
pub(crate) fn linear_factor(kind: MixingKind, raw: f64) -> f64 {
    match kind {
        MixingKind::Normal | MixingKind::Lognormal => raw,
        MixingKind::Uniform => 2.0 * raw - 1.0,
        MixingKind::Triangular => {
            if raw < 0.5 {
                (2.0 * raw).sqrt() - 1.0
            } else {
                1.0 - (2.0 * (1.0 - raw)).sqrt()
            }
        }
        MixingKind::Weibull => -(-raw).ln_1p(), // -ln(1 - raw)
    }
}

impl MixingDistribution {
    pub fn new(kind: MixingKind, location: f64, scale: f64) -> Result<Self> {
        if scale.is_nan() || scale < 0.0 {
            return Err(Error::invalid(format!("scale must be >= 0, got {scale}")));
        }
        Ok(MixingDistribution {
            kind,
            location,
            scale,
            negative: false,
        })
    }

    pub fn with_sign(mut self, negative: bool) -> Self {
        self.negative = negative;
        self
    }

    /// Realize a coefficient from a standard draw; rejects draws from the
    /// wrong space.
    pub fn realize(&self, draw: StandardDraw) -> Result<f64> {
        let raw = match (self.kind.draw_space(), draw) {
            (DrawSpace::StandardNormal, StandardDraw::Normal(z)) => z,
            (DrawSpace::Uniform01, StandardDraw::Uniform(u)) => {
                if !(u > 0.0 && u < 1.0) {
                    return Err(Error::invalid(format!(
                        "uniform draw must lie in (0,1), got {u}"
                    )));
                }
                u
            }
            _ => {
                return Err(Error::invalid(format!(
                    "draw-space mismatch: {} expects {:?}",
                    self.kind,
                    self.kind.draw_space()
                )))
            }
        };
        Ok(self.realize_from_factor(linear_factor(self.kind, raw)))
    }

    /// Realization from a pre-transformed linear factor (hot path used by the
    /// likelihood kernels, which pre-transform whole draw matrices once).
    #[inline]
    pub(crate) fn realize_from_factor(&self, t: f64) -> f64 {
        match self.kind {
            MixingKind::Lognormal => {
                let sign = if self.negative { -1.0 } else { 1.0 };
                sign * (self.location + self.scale * t).exp()
            }
            _ => self.location + self.scale * t,
        }
    }

    pub fn is_degenerate(&self) -> bool {
        self.scale == 0.0
    }

    /// Exact P(coefficient > 0).
    ///
    /// With `scale == 0` this degenerates to 0 or 1 by the sign of the point
    /// mass (0.5 when it sits exactly at zero).
    pub fn share_above_zero(&self) -> f64 {
        if let MixingKind::Lognormal = self.kind {
            return if self.negative { 0.0 } else { 1.0 };
        }
        if self.scale == 0.0 {
            return match self.location.partial_cmp(&0.0) {
                Some(std::cmp::Ordering::Greater) => 1.0,
                Some(std::cmp::Ordering::Less) => 0.0,
                _ => 0.5,
            };
        }
        let ratio = self.location / self.scale;
        match self.kind {
            MixingKind::Normal => special::normal_cdf(ratio),
            MixingKind::Uniform => ((ratio + 1.0) / 2.0).clamp(0.0, 1.0),
            MixingKind::Triangular => {
                // P(T > c) for the symmetric triangular variate on [-1, 1].
                let c = -ratio;
                if c <= -1.0 {
                    1.0
                } else if c < 0.0 {
                    1.0 - (c + 1.0) * (c + 1.0) / 2.0
                } else if c < 1.0 {
                    (1.0 - c) * (1.0 - c) / 2.0
                } else {
                    0.0
                }
            }
            MixingKind::Weibull => {
                // Support [location, inf): P(E > -mu/sigma) with E ~ Exp(1).
                if self.location >= 0.0 {
                    1.0
                } else {
                    (self.location / self.scale).exp()
                }
            }
            MixingKind::Lognormal => unreachable!(),
        }
    }

    /// Analytic mean of the coefficient.
    pub fn mean(&self) -> f64 {
        match self.kind {
            MixingKind::Normal | MixingKind::Uniform | MixingKind::Triangular => self.location,
            MixingKind::Weibull => self.location + self.scale,
            MixingKind::Lognormal => {
                let sign = if self.negative { -1.0 } else { 1.0 };
                sign * (self.location + self.scale * self.scale / 2.0).exp()
            }
        }
    }

    /// Analytic standard deviation of the coefficient.
    pub fn sd(&self) -> f64 {
        match self.kind {
            MixingKind::Normal => self.scale,
            MixingKind::Uniform => self.scale / 3.0f64.sqrt(),
            MixingKind::Triangular => self.scale / 6.0f64.sqrt(),
            MixingKind::Weibull => self.scale,
            MixingKind::Lognormal => {
                let s2 = self.scale * self.scale;
                ((s2.exp() - 1.0).max(0.0)).sqrt() * (self.location + s2 / 2.0).exp()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const ALL_KINDS: [MixingKind; 5] = [
        MixingKind::Normal,
        MixingKind::Lognormal,
        MixingKind::Triangular,
        MixingKind::Uniform,
        MixingKind::Weibull,
    ];

    fn draw_for(kind: MixingKind, rng: &mut ChaCha8Rng) -> StandardDraw {
        let u: f64 = rng.random_range(1e-12..(1.0 - 1e-12));
        match kind.draw_space() {
            DrawSpace::StandardNormal => StandardDraw::Normal(special::inverse_normal_cdf(u)),
            DrawSpace::Uniform01 => StandardDraw::Uniform(u),
        }
    }

    #[test]
    fn normal_realize_is_affine() {
        let d = MixingDistribution::new(MixingKind::Normal, 1.0, 2.0).unwrap();
        assert_eq!(d.realize(StandardDraw::Normal(0.5)).unwrap(), 2.0);
    }

    #[test]
    fn lognormal_unit_draw_gives_e() {
        let d = MixingDistribution::new(MixingKind::Lognormal, 0.0, 1.0).unwrap();
        assert_abs_diff_eq!(
            d.realize(StandardDraw::Normal(1.0)).unwrap(),
            std::f64::consts::E,
            epsilon = 1e-12
        );
        let neg = d.with_sign(true);
        assert_abs_diff_eq!(
            neg.realize(StandardDraw::Normal(1.0)).unwrap(),
            -std::f64::consts::E,
            epsilon = 1e-12
        );
    }

    #[test]
    fn zero_scale_is_a_point_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for kind in ALL_KINDS {
            let d = MixingDistribution::new(kind, 0.7, 0.0).unwrap();
            let expected = match kind {
                MixingKind::Lognormal => 0.7f64.exp(),
                _ => 0.7,
            };
            for _ in 0..20 {
                let v = d.realize(draw_for(kind, &mut rng)).unwrap();
                assert_abs_diff_eq!(v, expected, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn draw_space_mismatch_is_rejected() {
        let n = MixingDistribution::new(MixingKind::Normal, 0.0, 1.0).unwrap();
        assert!(n.realize(StandardDraw::Uniform(0.3)).is_err());
        let u = MixingDistribution::new(MixingKind::Uniform, 0.0, 1.0).unwrap();
        assert!(u.realize(StandardDraw::Normal(0.3)).is_err());
        assert!(MixingDistribution::new(MixingKind::Normal, 0.0, -1.0).is_err());
    }

    #[test]
    fn published_normal_share_anchors() {
        let d = MixingDistribution::new(MixingKind::Normal, -6.5, 7.24).unwrap();
        let above = 100.0 * d.share_above_zero();
        assert!((above - 18.46).abs() < 0.05, "above {above}");
        assert!((100.0 - above - 81.54).abs() < 0.05);

        let d = MixingDistribution::new(MixingKind::Normal, -2.98, 3.49).unwrap();
        assert!((100.0 * d.share_above_zero() - 19.66).abs() < 0.05);

        let d = MixingDistribution::new(MixingKind::Normal, 0.0, 1.0).unwrap();
        assert_eq!(d.share_above_zero(), 0.5);
    }

    #[test]
    fn normal_share_identity_is_exact() {
        for &(mu, sd) in &[(0.3, 1.7), (-2.98, 3.49), (5.0, 0.01), (0.0, 2.0)] {
            let a = MixingDistribution::new(MixingKind::Normal, mu, sd).unwrap();
            let b = MixingDistribution::new(MixingKind::Normal, -mu, sd).unwrap();
            assert_eq!(a.share_above_zero() + b.share_above_zero(), 1.0);
        }
    }

    #[test]
    fn degenerate_share_follows_location_sign() {
        let pos = MixingDistribution::new(MixingKind::Normal, 1.0, 0.0).unwrap();
        let neg = MixingDistribution::new(MixingKind::Normal, -1.0, 0.0).unwrap();
        let zero = MixingDistribution::new(MixingKind::Normal, 0.0, 0.0).unwrap();
        assert_eq!(pos.share_above_zero(), 1.0);
        assert_eq!(neg.share_above_zero(), 0.0);
        assert_eq!(zero.share_above_zero(), 0.5);
        assert!(zero.is_degenerate());
    }

    #[test]
    fn monte_carlo_mean_and_share_match_analytic() {
        let n = 100_000usize;
        let cases = [
            MixingDistribution::new(MixingKind::Normal, -0.4, 1.3).unwrap(),
            MixingDistribution::new(MixingKind::Lognormal, 0.2, 0.5).unwrap(),
            MixingDistribution::new(MixingKind::Lognormal, 0.2, 0.5)
                .unwrap()
                .with_sign(true),
            MixingDistribution::new(MixingKind::Triangular, -0.3, 1.1).unwrap(),
            MixingDistribution::new(MixingKind::Uniform, 0.25, 0.9).unwrap(),
            MixingDistribution::new(MixingKind::Weibull, -0.8, 0.7).unwrap(),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(20240229);
        for d in cases {
            let mut sum = 0.0;
            let mut above = 0usize;
            for _ in 0..n {
                let v = d.realize(draw_for(d.kind, &mut rng)).unwrap();
                sum += v;
                if v > 0.0 {
                    above += 1;
                }
            }
            let emp_mean = sum / n as f64;
            let se_mean = d.sd() / (n as f64).sqrt();
            assert!(
                (emp_mean - d.mean()).abs() < 3.0 * se_mean,
                "{:?}: mean {emp_mean} vs {}",
                d.kind,
                d.mean()
            );
            let p = d.share_above_zero();
            let se_share = (p * (1.0 - p) / n as f64).sqrt();
            let emp_share = above as f64 / n as f64;
            assert!(
                (emp_share - p).abs() <= 3.0 * se_share + 1e-12,
                "{:?}: share {emp_share} vs {p}",
                d.kind
            );
        }
    }

    proptest! {
        #[test]
        fn realize_is_strictly_increasing(
            kind_idx in 0usize..5,
            mu in -3.0f64..3.0,
            sigma in 0.05f64..4.0,
            a in 0.01f64..0.99,
            b in 0.01f64..0.99,
        ) {
            prop_assume!((a - b).abs() > 1e-9);
            let kind = ALL_KINDS[kind_idx];
            let d = MixingDistribution::new(kind, mu, sigma).unwrap();
            let make = |u: f64| match kind.draw_space() {
                DrawSpace::StandardNormal =>
                    StandardDraw::Normal(special::inverse_normal_cdf(u)),
                DrawSpace::Uniform01 => StandardDraw::Uniform(u),
            };
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let vlo = d.realize(make(lo)).unwrap();
            let vhi = d.realize(make(hi)).unwrap();
            prop_assert!(vlo < vhi, "{kind:?}: f({lo})={vlo} !< f({hi})={vhi}");
        }

        #[test]
        fn share_is_a_probability(
            kind_idx in 0usize..5,
            mu in -10.0f64..10.0,
            sigma in 0.0f64..10.0,
        ) {
            let d = MixingDistribution::new(ALL_KINDS[kind_idx], mu, sigma).unwrap();
            let s = d.share_above_zero();
            prop_assert!((0.0..=1.0).contains(&s));
        }
    }
}
