//! Recovery of the actual output `y_a` and the virtual output `y_v` from a
//! rippled measurement by moving averages over one PWM period.
//!
//! With `M(k)(t) = (1/eps) int_{t-eps}^{t} k`:
//!
//! ```text
//! y_a_hat(t) = 3/2 M(y)(t) - 1/2 M(y)(t - eps)
//! k_delta(t) = (y(t) - y_a_hat(t)) s1(u(t), t/eps)
//! y_v_hat(t) = M(k_delta)(t) / mean_sigma(s1(u(t), .)^2)
//! ```
//!
//! Samples arrive on a uniform grid of `n` points per period starting at a
//! period boundary, and every `M` is a trapezoidal rule over `n + 1` samples.
//! The normalizer is the same rule applied to `s1(u(t), .)^2` on the grid
//! phases, so quadrature bias cancels between numerator and denominator; it
//! tends to [`PwmConfig::s1_mean_square`] as `n` grows.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::pwm::PwmConfig;

/// Trapezoidal mean of samples spanning exactly one window.
pub fn moving_average(window: &[f64]) -> Result<f64> {
    if window.len() < 2 {
        return Err(Error::WarmUp);
    }
    let n = window.len() - 1;
    let inner: f64 = window[1..n].iter().sum();
    Ok((inner + 0.5 * (window[0] + window[n])) / n as f64)
}

/// Fixed-length window with a running trapezoidal sum.
#[derive(Debug, Clone)]
struct Window {
    samples: VecDeque<f64>,
    capacity: usize,
    sum: f64,
    pushes_since_refresh: usize,
}

impl Window {
    fn new(capacity: usize) -> Self {
        Self {
            samples: VecDeque::with_capacity(capacity + 1),
            capacity,
            sum: 0.0,
            pushes_since_refresh: 0,
        }
    }

    fn push(&mut self, v: f64) {
        self.samples.push_back(v);
        self.sum += v;
        if self.samples.len() > self.capacity {
            self.sum -= self.samples.pop_front().unwrap_or(0.0);
        }
        self.pushes_since_refresh += 1;
        // cancel the drift of the running sum once per window length
        if self.pushes_since_refresh >= self.capacity {
            self.sum = self.samples.iter().sum();
            self.pushes_since_refresh = 0;
        }
    }

    fn is_full(&self) -> bool {
        self.samples.len() == self.capacity
    }

    fn trapezoid_mean(&self) -> f64 {
        let first = self.samples.front().copied().unwrap_or(0.0);
        let last = self.samples.back().copied().unwrap_or(0.0);
        (self.sum - 0.5 * (first + last)) / (self.capacity - 1) as f64
    }

    fn front(&self) -> Option<f64> {
        self.samples.front().copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Estimates {
    pub y_a: Option<f64>,
    pub y_v: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct DemodState {
    pwm: PwmConfig,
    per_period: usize,
    count: u64,
    y: Window,
    /// M(y) over the last period, so M(y)(t - eps) is the front entry.
    mean_y: Window,
    k_delta: Window,
    guard_floor: f64,
    latest: Estimates,
}

impl DemodState {
    pub fn new(pwm: PwmConfig, samples_per_period: usize) -> Result<Self> {
        if samples_per_period < 2 {
            return Err(Error::InvalidConfig {
                field: "substeps_per_period",
                reason: "demodulation needs at least 2 samples per period".into(),
            });
        }
        let w = samples_per_period + 1;
        Ok(Self {
            pwm,
            per_period: samples_per_period,
            count: 0,
            y: Window::new(w),
            mean_y: Window::new(w),
            k_delta: Window::new(w),
            guard_floor: 1e-6 * pwm.u_max() * pwm.u_max(),
            latest: Estimates::default(),
        })
    }

    /// Floor on the normalizer below which `y_v` is reported as unobservable.
    pub fn with_guard_floor(mut self, floor: f64) -> Self {
        self.guard_floor = floor;
        self
    }

    /// Normalized phase of the next sample.
    pub fn next_phase(&self) -> f64 {
        (self.count % self.per_period as u64) as f64 / self.per_period as f64
    }

    /// Feeds the measurement `y` and PWM input `u` at the next grid instant.
    pub fn push(&mut self, y: f64, u: f64) -> Result<Estimates> {
        let sigma = self.next_phase();
        self.count += 1;
        let ripple = self.pwm.s1(u, sigma)?;

        self.y.push(y);
        let mut est = Estimates::default();
        if self.y.is_full() {
            self.mean_y.push(self.y.trapezoid_mean());
        }
        if self.mean_y.is_full() {
            let now = self.mean_y.samples.back().copied().unwrap_or(0.0);
            let before = self.mean_y.front().unwrap_or(0.0);
            let y_a = 1.5 * now - 0.5 * before;
            est.y_a = Some(y_a);
            self.k_delta.push((y - y_a) * ripple);
        }
        if self.k_delta.is_full() {
            let ms = self.pwm.s1_mean_square_unchecked(u);
            if ms < self.guard_floor {
                self.latest = est;
                return Err(Error::DegenerateModulation {
                    u,
                    mean_square: ms,
                    floor: self.guard_floor,
                });
            }
            est.y_v = Some(self.k_delta.trapezoid_mean() / self.grid_mean_square(u));
        }
        self.latest = est;
        Ok(est)
    }

    /// Mean of `s1(u, .)^2` over the sample phases of one period.
    pub fn grid_mean_square(&self, u: f64) -> f64 {
        let n = self.per_period;
        (0..n)
            .map(|k| {
                let v = self.pwm.s1_unchecked(u, k as f64 / n as f64);
                v * v
            })
            .sum::<f64>()
            / n as f64
    }

    pub fn estimate_actual(&self) -> Result<f64> {
        self.latest.y_a.ok_or(Error::WarmUp)
    }

    pub fn estimate_virtual(&self) -> Result<f64> {
        self.latest.y_v.ok_or(Error::WarmUp)
    }

    pub fn samples_per_period(&self) -> usize {
        self.per_period
    }
}
