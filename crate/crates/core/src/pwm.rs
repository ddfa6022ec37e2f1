//! Classical two-level PWM with a triangle carrier.
//!
//! All functions of the normalized time `sigma = t / epsilon` are 1-periodic.
//! The carrier peaks (`+u_max`) at integer `sigma` and bottoms out (`-u_max`)
//! at half-integer `sigma`, so a constant input `u` produces
//! `-u_max` around the peaks and `+u_max` around the troughs.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PwmConfig {
    epsilon: f64,
    u_max: f64,
}

impl PwmConfig {
    pub fn new(epsilon: f64, u_max: f64) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(Error::InvalidConfig {
                field: "epsilon",
                reason: format!("must be finite and > 0, got {epsilon}"),
            });
        }
        if !(u_max.is_finite() && u_max > 0.0) {
            return Err(Error::InvalidConfig {
                field: "u_max",
                reason: format!("must be finite and > 0, got {u_max}"),
            });
        }
        Ok(Self { epsilon, u_max })
    }

    /// PWM period.
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// PWM amplitude; the encoder output is always `±u_max`.
    pub fn u_max(&self) -> f64 {
        self.u_max
    }

    /// Normalized time `t / epsilon`.
    pub fn phase(&self, t: f64) -> f64 {
        t / self.epsilon
    }

    /// Sawtooth of slope `u_max` mapping `sigma` into `[-u_max/2, u_max/2)`.
    pub fn wrap(&self, sigma: f64) -> f64 {
        self.u_max * (sigma + 0.5).rem_euclid(1.0) - 0.5 * self.u_max
    }

    /// Triangle carrier of period `epsilon` spanning `[-u_max, u_max]`.
    pub fn carrier(&self, t: f64) -> f64 {
        self.carrier_at_phase(self.phase(t))
    }

    pub fn carrier_at_phase(&self, sigma: f64) -> f64 {
        let w = self.wrap(sigma);
        if w <= 0.0 {
            self.u_max + 4.0 * w
        } else {
            self.u_max - 4.0 * w
        }
    }

    fn check_range(&self, u: f64) -> Result<()> {
        if u.is_finite() && u.abs() <= self.u_max {
            Ok(())
        } else {
            Err(Error::OutOfRange {
                u,
                u_max: self.u_max,
            })
        }
    }

    /// PWM output `M(u, sigma)` from the three-region definition.
    ///
    /// The middle region `u - u_max < 4 wrap(sigma) <= u_max - u` is where the
    /// carrier lies above the input; the output is `-u_max` there and `+u_max`
    /// elsewhere. Its mean over one period is `u`.
    pub fn modulate(&self, u: f64, sigma: f64) -> Result<f64> {
        self.check_range(u)?;
        Ok(self.modulate_unchecked(u, sigma))
    }

    pub(crate) fn modulate_unchecked(&self, u: f64, sigma: f64) -> f64 {
        let w4 = 4.0 * self.wrap(sigma);
        if u - self.u_max < w4 && w4 <= self.u_max - u {
            -self.u_max
        } else {
            self.u_max
        }
    }

    /// Closed form `u_max + u_max sgn(u - u_max - 4w) + u_max sgn(u - u_max + 4w)`.
    ///
    /// Agrees with [`PwmConfig::modulate`] away from the switching phases; at
    /// the switching phases themselves `sgn(0) = 0` gives the midpoint value.
    pub fn modulate_sign_form(&self, u: f64, sigma: f64) -> Result<f64> {
        self.check_range(u)?;
        let w4 = 4.0 * self.wrap(sigma);
        let sgn = |v: f64| if v == 0.0 { 0.0 } else { v.signum() };
        Ok(self.u_max
            + self.u_max * sgn(u - self.u_max - w4)
            + self.u_max * sgn(u - self.u_max + w4))
    }

    /// Zero-mean probing signal `s0(u, sigma) = M(u, sigma) - u`.
    pub fn s0(&self, u: f64, sigma: f64) -> Result<f64> {
        Ok(self.modulate(u, sigma)? - u)
    }

    /// Zero-mean primitive of `s0` in `sigma`:
    /// `(1 - u/u_max) w - |(u - u_max)/4 - w| + |(u - u_max)/4 + w|`, `w = wrap(sigma)`.
    pub fn s1(&self, u: f64, sigma: f64) -> Result<f64> {
        self.check_range(u)?;
        Ok(self.s1_unchecked(u, sigma))
    }

    pub(crate) fn s1_unchecked(&self, u: f64, sigma: f64) -> f64 {
        let w = self.wrap(sigma);
        let q = 0.25 * (u - self.u_max);
        (1.0 - u / self.u_max) * w - (q - w).abs() + (q + w).abs()
    }

    /// Mean of `s1(u, .)^2` over one period, `4 a^2 (m - a)^2 / (3 m^2)` with
    /// `a = (u_max - u)/4` and `m = u_max/2`. Zero at `u = ±u_max`.
    pub fn s1_mean_square(&self, u: f64) -> Result<f64> {
        self.check_range(u)?;
        Ok(self.s1_mean_square_unchecked(u))
    }

    pub(crate) fn s1_mean_square_unchecked(&self, u: f64) -> f64 {
        let a = 0.25 * (self.u_max - u);
        let m = 0.5 * self.u_max;
        4.0 * a * a * (m - a) * (m - a) / (3.0 * m * m)
    }

    /// Fraction of the period spent at `+u_max` for a constant input.
    pub fn duty(&self, u: f64) -> Result<f64> {
        self.check_range(u)?;
        Ok(0.5 * (1.0 + u / self.u_max))
    }

    /// Phases in `[0, 1)` at which a constant input crosses the carrier:
    /// `(falling, rising)` where the falling ramp crossing ends the `-u_max`
    /// interval centred on `sigma = 0`. `None` for `|u| = u_max`.
    pub fn switching_phases(&self, u: f64) -> Result<Option<(f64, f64)>> {
        self.check_range(u)?;
        if u.abs() == self.u_max {
            return Ok(None);
        }
        // wrap(sigma) = ±(u_max - u)/4 on the two ramps
        let half_width = (self.u_max - u) / (4.0 * self.u_max);
        Ok(Some((half_width, 1.0 - half_width)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> PwmConfig {
        PwmConfig::new(1e-3, 20.0).unwrap()
    }

    #[test]
    fn rejects_bad_config() {
        assert!(matches!(
            PwmConfig::new(-1.0, 20.0),
            Err(Error::InvalidConfig {
                field: "epsilon",
                ..
            })
        ));
        assert!(PwmConfig::new(1e-3, 0.0).is_err());
        assert!(PwmConfig::new(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn wrap_values() {
        let c = cfg();
        assert_eq!(c.wrap(0.0), 0.0);
        assert_eq!(c.wrap(0.25), 5.0);
        assert_eq!(c.wrap(-0.25), -5.0);
        assert_eq!(c.wrap(0.5), -10.0);
        for k in -64..64 {
            let s = k as f64 / 16.0;
            assert_eq!(c.wrap(s + 1.0), c.wrap(s));
            assert!((-10.0..10.0).contains(&c.wrap(s)));
        }
    }

    #[test]
    fn carrier_shape() {
        let c = cfg();
        let eps = c.epsilon();
        assert_eq!(c.carrier(0.0), 20.0);
        assert!((c.carrier(0.5 * eps) + 20.0).abs() < 1e-12);
        // continuity at the peak
        assert!((c.carrier(-1e-12) - c.carrier(1e-12)).abs() < 1e-6);
        // ramp midpoints
        assert!(c.carrier(0.25 * eps).abs() < 1e-12);
        assert!(c.carrier(0.75 * eps).abs() < 1e-12);
    }

    #[test]
    fn modulate_regions() {
        let c = cfg();
        assert_eq!(c.modulate(0.0, 0.0).unwrap(), -20.0);
        assert_eq!(c.modulate(0.0, 0.5).unwrap(), 20.0);
        for k in 0..100 {
            assert_eq!(c.modulate(20.0, k as f64 / 100.0).unwrap(), 20.0);
        }
        assert!(matches!(
            c.modulate(20.5, 0.0),
            Err(Error::OutOfRange { .. })
        ));
        assert!(c.s1(-21.0, 0.0).is_err());
        assert!(c.s1_mean_square(f64::NAN).is_err());
    }

    #[test]
    fn sign_form_matches_regions_off_switching() {
        let c = cfg();
        for iu in -9..=9 {
            let u = iu as f64 * 2.1;
            let (a, b) = c.switching_phases(u).unwrap().unwrap();
            for k in 0..997 {
                let s = (k as f64 + 0.5) / 997.0;
                if (s - a).abs() < 1e-9 || (s - b).abs() < 1e-9 {
                    continue;
                }
                assert_eq!(
                    c.modulate(u, s).unwrap(),
                    c.modulate_sign_form(u, s).unwrap()
                );
            }
        }
    }

    #[test]
    fn s0_s1_examples() {
        let c = cfg();
        assert_eq!(c.s0(0.0, 0.0).unwrap(), -20.0);
        assert_eq!(c.s1(0.0, 0.25).unwrap(), -5.0);
        for iu in -20..=20 {
            let u = iu as f64;
            assert_eq!(c.s1(u, 0.0).unwrap(), 0.0);
        }
        for k in 0..50 {
            let s = k as f64 / 50.0;
            assert_eq!(c.s0(20.0, s).unwrap(), 0.0);
        }
    }

    #[test]
    fn s1_peak_amplitude_at_zero_input() {
        let c = cfg();
        let peak = (0..4000)
            .map(|k| c.s1(0.0, k as f64 / 4000.0).unwrap().abs())
            .fold(0.0, f64::max);
        assert!((peak - 5.0).abs() < 1e-12);
    }

    #[test]
    fn mean_square_examples() {
        let c = cfg();
        assert!((c.s1_mean_square(0.0).unwrap() - 25.0 / 3.0).abs() < 1e-12);
        assert_eq!(c.s1_mean_square(20.0).unwrap(), 0.0);
        assert_eq!(c.s1_mean_square(-20.0).unwrap(), 0.0);
        for iu in -19..=19 {
            let u = iu as f64 * 0.9;
            assert!(c.s1_mean_square(u).unwrap() > 0.0);
        }
    }

    #[test]
    fn switching_phases_and_duty() {
        let c = cfg();
        let (a, b) = c.switching_phases(0.0).unwrap().unwrap();
        assert!((a - 0.25).abs() < 1e-15 && (b - 0.75).abs() < 1e-15);
        let (a, b) = c.switching_phases(10.0).unwrap().unwrap();
        assert!(((b - a) - c.duty(10.0).unwrap()).abs() < 1e-15);
        assert_eq!(c.duty(10.0).unwrap(), 0.75);
        assert!(c.switching_phases(20.0).unwrap().is_none());
    }
}
