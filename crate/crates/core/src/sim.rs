//! Fixed-step simulation of the PWM-switched closed loop and of the ideal
//! averaged closed loop.
//!
//! The time grid has `substeps_per_period` points per PWM period, aligned so
//! that the carrier corners fall on grid points. Inside a substep the carrier
//! is linear, the PWM level is constant between carrier crossings, and
//! classical RK4 is applied piecewise: a crossing detected at the end of a
//! trial step is located by bisection and the step is split there.

use serde::{Deserialize, Serialize};

use crate::control::{ControllerObserver, Scenario};
use crate::demod::DemodState;
use crate::error::{Error, Result};
use crate::noise::BandLimitedNoise;
use crate::plant::SisoPlant;
use crate::pwm::PwmConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    /// Even, at least 8.
    pub substeps_per_period: usize,
    /// Bisection tolerance on switching instants, as a fraction of the period.
    pub event_tolerance: f64,
    pub noise_enabled: bool,
    pub noise_power_density: f64,
    pub noise_sample_time: f64,
    pub rng_seed: u64,
    /// Keep one substep out of `record_stride` in the trace.
    pub record_stride: usize,
    pub virtual_output: VirtualOutput,
}

/// Source of the virtual output fed to the observer in actual runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VirtualOutput {
    /// Demodulated from the measurement and held over each substep.
    #[default]
    Demodulated,
    /// `eps h'(x_bar) g(x_bar)` at the de-rippled state
    /// `x_bar = x - eps g(x) s1(u, t/eps)`, evaluated inside the integrator.
    /// Not implementable; isolates the averaging error from the estimation error.
    Exact,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            substeps_per_period: 100,
            event_tolerance: 1e-10,
            noise_enabled: false,
            noise_power_density: 1e-9,
            noise_sample_time: 1e-5,
            rng_seed: 0,
            record_stride: 1,
            virtual_output: VirtualOutput::Demodulated,
        }
    }
}

impl SimConfig {
    pub fn validate(&self, pwm: &PwmConfig) -> Result<()> {
        if self.substeps_per_period < 8 || self.substeps_per_period % 2 != 0 {
            return Err(Error::InvalidConfig {
                field: "substeps_per_period",
                reason: format!("must be even and >= 8, got {}", self.substeps_per_period),
            });
        }
        if !(self.event_tolerance > 0.0 && self.event_tolerance < 1.0) {
            return Err(Error::InvalidConfig {
                field: "event_tolerance",
                reason: "must lie in (0, 1)".into(),
            });
        }
        if self.record_stride == 0 {
            return Err(Error::InvalidConfig {
                field: "record_stride",
                reason: "must be >= 1".into(),
            });
        }
        if self.noise_enabled {
            if !(self.noise_power_density >= 0.0 && self.noise_power_density.is_finite()) {
                return Err(Error::InvalidConfig {
                    field: "noise_power_density",
                    reason: "must be >= 0".into(),
                });
            }
            if !(self.noise_sample_time > 0.0 && self.noise_sample_time <= pwm.epsilon() / 10.0) {
                return Err(Error::InvalidConfig {
                    field: "noise_sample_time",
                    reason: format!("must lie in (0, epsilon/10 = {}]", pwm.epsilon() / 10.0),
                });
            }
        }
        Ok(())
    }

    pub fn step(&self, pwm: &PwmConfig) -> f64 {
        pwm.epsilon() / self.substeps_per_period as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunKind {
    Actual,
    Ideal,
}

/// Uniformly sampled record of one run. Vector channels are stored row-major
/// (`x[i * state_dim + j]`). For ideal runs `u_pwm` holds the averaged input
/// and the estimate channels hold the true `h(x)` and `epsilon h'(x) g(x)`.
#[derive(Debug, Clone)]
pub struct SimTrace {
    pub kind: RunKind,
    pub epsilon: f64,
    pub substeps_per_period: usize,
    pub state_dim: usize,
    pub eta_dim: usize,
    /// Substep index of each record.
    pub index: Vec<u64>,
    pub t: Vec<f64>,
    pub x: Vec<f64>,
    pub eta: Vec<f64>,
    pub u: Vec<f64>,
    pub u_pwm: Vec<f64>,
    pub y_clean: Vec<f64>,
    pub y_noisy: Vec<f64>,
    pub yhat_a: Vec<f64>,
    pub yhat_v: Vec<f64>,
    pub x1ref: Vec<f64>,
    pub d: Vec<f64>,
    /// Carrier crossings counted in each PWM period (actual runs only).
    pub switchings_per_period: Vec<u32>,
    pub chattering: bool,
}

impl SimTrace {
    fn new(
        kind: RunKind,
        pwm: &PwmConfig,
        sim: &SimConfig,
        state_dim: usize,
        eta_dim: usize,
        rows: usize,
    ) -> Self {
        let v = |w: usize| Vec::with_capacity(rows * w);
        Self {
            kind,
            epsilon: pwm.epsilon(),
            substeps_per_period: sim.substeps_per_period,
            state_dim,
            eta_dim,
            index: Vec::with_capacity(rows),
            t: v(1),
            x: v(state_dim),
            eta: v(eta_dim),
            u: v(1),
            u_pwm: v(1),
            y_clean: v(1),
            y_noisy: v(1),
            yhat_a: v(1),
            yhat_v: v(1),
            x1ref: v(1),
            d: v(1),
            switchings_per_period: Vec::new(),
            chattering: false,
        }
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn x_at(&self, i: usize) -> &[f64] {
        &self.x[i * self.state_dim..(i + 1) * self.state_dim]
    }

    pub fn eta_at(&self, i: usize) -> &[f64] {
        &self.eta[i * self.eta_dim..(i + 1) * self.eta_dim]
    }

    /// Normalized phase `t / epsilon` reduced to `[0, 1)`, exact on the grid.
    pub fn phase(&self, i: usize) -> f64 {
        let n = self.substeps_per_period as u64;
        (self.index[i] % n) as f64 / n as f64
    }

    pub fn state_channel(&self, j: usize) -> Vec<f64> {
        self.x.chunks_exact(self.state_dim).map(|r| r[j]).collect()
    }

    pub fn eta_channel(&self, j: usize) -> Vec<f64> {
        self.eta.chunks_exact(self.eta_dim).map(|r| r[j]).collect()
    }

    /// Smallest and largest per-period switching count over complete periods.
    pub fn switching_count_range(&self) -> Option<(u32, u32)> {
        let min = self.switchings_per_period.iter().copied().min()?;
        let max = self.switchings_per_period.iter().copied().max()?;
        Some((min, max))
    }

    fn check_finite(&self) -> Result<()> {
        let ok = self
            .x
            .iter()
            .chain(&self.eta)
            .chain(&self.u)
            .chain(&self.y_noisy)
            .chain(&self.yhat_a)
            .chain(&self.yhat_v)
            .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::NumericOverflow {
                what: "trace",
                t: f64::NAN,
            })
        }
    }
}

/// Classical RK4 with preallocated stage buffers.
#[derive(Debug, Clone)]
pub struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4 {
    pub fn new(dim: usize) -> Self {
        Self {
            k1: vec![0.0; dim],
            k2: vec![0.0; dim],
            k3: vec![0.0; dim],
            k4: vec![0.0; dim],
            tmp: vec![0.0; dim],
        }
    }

    pub fn step<F>(&mut self, rhs: &mut F, t: f64, z: &[f64], h: f64, out: &mut [f64])
    where
        F: FnMut(f64, &[f64], &mut [f64]),
    {
        let n = z.len();
        rhs(t, z, &mut self.k1);
        for i in 0..n {
            self.tmp[i] = z[i] + 0.5 * h * self.k1[i];
        }
        rhs(t + 0.5 * h, &self.tmp, &mut self.k2);
        for i in 0..n {
            self.tmp[i] = z[i] + 0.5 * h * self.k2[i];
        }
        rhs(t + 0.5 * h, &self.tmp, &mut self.k3);
        for i in 0..n {
            self.tmp[i] = z[i] + h * self.k3[i];
        }
        rhs(t + h, &self.tmp, &mut self.k4);
        for i in 0..n {
            out[i] =
                z[i] + h / 6.0 * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
    }
}

fn level_of(phi: f64, u_max: f64) -> f64 {
    if phi >= 0.0 {
        u_max
    } else {
        -u_max
    }
}

/// Advances `z` over one substep of a system whose right-hand side depends
/// on the PWM level, splitting the step at each sign change of the
/// switching function `phi(t, z) = u - carrier`. Returns the number of
/// level changes.
struct SwitchedStepper {
    rk: Rk4,
    start: Vec<f64>,
    trial: Vec<f64>,
    probe: Vec<f64>,
}

impl SwitchedStepper {
    fn new(dim: usize) -> Self {
        Self {
            rk: Rk4::new(dim),
            start: vec![0.0; dim],
            trial: vec![0.0; dim],
            probe: vec![0.0; dim],
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn advance<F, S>(
        &mut self,
        z: &mut [f64],
        t0: f64,
        h: f64,
        u_max: f64,
        tol: f64,
        level: &mut f64,
        rhs: &mut F,
        phi: &S,
    ) -> u32
    where
        F: FnMut(f64, &[f64], &mut [f64], f64),
        S: Fn(f64, &[f64]) -> f64,
    {
        let t1 = t0 + h;
        let mut ts = t0;
        self.start.copy_from_slice(z);
        let mut events = 0;
        // a substep holds at most one crossing when the input is slow; the
        // cap only bounds the work if it is not
        for _ in 0..16 {
            let lv = *level;
            let mut f = |t: f64, s: &[f64], o: &mut [f64]| rhs(t, s, o, lv);
            self.rk
                .step(&mut f, ts, &self.start, t1 - ts, &mut self.trial);
            if level_of(phi(t1, &self.trial), u_max) == lv {
                z.copy_from_slice(&self.trial);
                return events;
            }
            let (mut lo, mut hi) = (ts, t1);
            while hi - lo > tol {
                let mid = 0.5 * (lo + hi);
                self.rk
                    .step(&mut f, ts, &self.start, mid - ts, &mut self.probe);
                if level_of(phi(mid, &self.probe), u_max) == lv {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let te = 0.5 * (lo + hi);
            self.rk
                .step(&mut f, ts, &self.start, te - ts, &mut self.probe);
            std::mem::swap(&mut self.start, &mut self.probe);
            ts = te;
            *level = -lv;
            events += 1;
        }
        z.copy_from_slice(&self.start);
        events
    }
}

fn step_count(sc: &Scenario, h: f64) -> Result<usize> {
    let steps = (sc.t_end / h).round();
    if !(steps.is_finite() && steps >= 1.0) || steps > 1e10 {
        return Err(Error::InvalidConfig {
            field: "t_end",
            reason: format!("{} steps of {h}", steps),
        });
    }
    Ok(steps as usize)
}

fn check_dims<P: SisoPlant + ?Sized>(plant: &P, x0: &[f64], co: &ControllerObserver) -> Result<()> {
    if x0.len() != plant.dim() {
        return Err(Error::Dimension(format!(
            "x0 has {} entries, plant has {}",
            x0.len(),
            plant.dim()
        )));
    }
    if co.state_dim() == 0 {
        return Err(Error::Dimension("controller has no state".into()));
    }
    Ok(())
}

fn saturation(pwm: &PwmConfig, t: f64, u: f64) -> Result<()> {
    if !u.is_finite() {
        return Err(Error::NumericOverflow {
            what: "control input",
            t,
        });
    }
    if u.abs() > pwm.u_max() {
        return Err(Error::Saturation {
            t,
            u,
            u_max: pwm.u_max(),
        });
    }
    Ok(())
}

/// Closed loop with PWM and demodulation, starting at rest at the origin.
pub fn simulate_actual<P: SisoPlant + ?Sized>(
    plant: &P,
    co: &ControllerObserver,
    pwm: &PwmConfig,
    sim: &SimConfig,
    sc: &Scenario,
) -> Result<SimTrace> {
    simulate_actual_from(plant, &vec![0.0; plant.dim()], co, pwm, sim, sc)
}

/// Closed loop `x' = f + g (M(u, t/eps) + d)`, `u = -K eta + k r`,
/// `eta' = M eta + N r + L y_v_hat / eps`, with `y_v_hat` demodulated from
/// the (optionally noisy) measurement and held over each substep. The
/// controller sees `y_v_hat = 0` until the demodulator is warm.
pub fn simulate_actual_from<P: SisoPlant + ?Sized>(
    plant: &P,
    x0: &[f64],
    co: &ControllerObserver,
    pwm: &PwmConfig,
    sim: &SimConfig,
    sc: &Scenario,
) -> Result<SimTrace> {
    sim.validate(pwm)?;
    sc.validate()?;
    check_dims(plant, x0, co)?;

    let n = plant.dim();
    let q = co.state_dim();
    let per = sim.substeps_per_period;
    let h = sim.step(pwm);
    let steps = step_count(sc, h)?;
    let eps = pwm.epsilon();
    let u_max = pwm.u_max();
    let tol = sim.event_tolerance * eps;

    let mut z: Vec<f64> = x0.iter().chain(co.eta.iter()).copied().collect();
    let mut trace = SimTrace::new(
        RunKind::Actual,
        pwm,
        sim,
        n,
        q,
        steps / sim.record_stride + 2,
    );
    trace.switchings_per_period = vec![0; steps.div_ceil(per)];

    let mut demod = DemodState::new(*pwm, per)?;
    let mut noise = sim.noise_enabled.then(|| {
        BandLimitedNoise::new(sim.noise_power_density, sim.noise_sample_time, sim.rng_seed)
    });
    let mut stepper = SwitchedStepper::new(n + q);
    let mut dist = vec![0.0; n];
    plant.disturbance_channel(&mut dist);
    let mut g = vec![0.0; n];
    let mut xbar = vec![0.0; n];
    let exact = sim.virtual_output == VirtualOutput::Exact;
    let mut prev_level: Option<f64> = None;

    for k in 0..=steps {
        let t0 = k as f64 * h;
        let x1ref = sc.signals(t0).x1ref;
        let u0 = co.output_at(&z[n..], x1ref);
        saturation(pwm, t0, u0)?;

        let y_clean = plant.output(&z[..n]);
        let y_noisy = y_clean + noise.as_mut().map_or(0.0, |g| g.sample(t0));
        if !y_noisy.is_finite() {
            return Err(Error::NumericOverflow {
                what: "measurement",
                t: t0,
            });
        }
        let est = demod.push(y_noisy, u0).map_err(|e| match e {
            Error::DegenerateModulation { .. } | Error::OutOfRange { .. } => Error::Saturation {
                t: t0,
                u: u0,
                u_max,
            },
            other => other,
        })?;
        let yv_held = est.y_v.unwrap_or(0.0);

        let base = (k % per) as f64;
        let sigma_of = |t: f64| (base + (t - t0) / h) / per as f64;
        let phi = |t: f64, s: &[f64]| {
            co.output_at(&s[n..], sc.signals(t).x1ref) - pwm.carrier_at_phase(sigma_of(t))
        };
        let mut level = level_of(u0 - pwm.carrier_at_phase(sigma_of(t0)), u_max);
        // a crossing on a grid point can flip the level between substeps
        let boundary_switch = u32::from(prev_level.is_some_and(|p| p != level));

        if k % sim.record_stride == 0 || k == steps {
            trace.index.push(k as u64);
            trace.t.push(t0);
            trace.x.extend_from_slice(&z[..n]);
            trace.eta.extend_from_slice(&z[n..]);
            trace.u.push(u0);
            trace.u_pwm.push(level);
            trace.y_clean.push(y_clean);
            trace.y_noisy.push(y_noisy);
            trace.yhat_a.push(est.y_a.unwrap_or(f64::NAN));
            trace.yhat_v.push(yhat_or_zero(est.y_v));
            trace.x1ref.push(x1ref);
            trace.d.push(sc.signals(t0).d);
        }
        if k == steps {
            break;
        }

        let d = sc.signals(t0 + 0.5 * h).d;
        let mut rhs = |t: f64, s: &[f64], out: &mut [f64], lv: f64| {
            let (xs, es) = s.split_at(n);
            let (dx, de) = out.split_at_mut(n);
            let r = sc.signals(t).x1ref;
            plant.drift(xs, dx);
            plant.input_field(xs, &mut g);
            for i in 0..n {
                dx[i] += g[i] * lv + dist[i] * d;
            }
            let yv_over_eps = if exact {
                let ripple = eps * pwm.s1_unchecked(co.output_at(es, r), sigma_of(t));
                for i in 0..n {
                    xbar[i] = xs[i] - ripple * g[i];
                }
                plant.output_derivative_along_input(&xbar)
            } else {
                yv_held / eps
            };
            co.closed_loop_rhs_into(es, yv_over_eps, r, de);
        };
        let events = stepper.advance(&mut z, t0, h, u_max, tol, &mut level, &mut rhs, &phi)
            + boundary_switch;
        prev_level = Some(level);
        let slot = &mut trace.switchings_per_period[k / per];
        *slot = slot.saturating_add(events);
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericOverflow {
                what: "state",
                t: t0 + h,
            });
        }
    }

    // the last period may be incomplete
    if steps % per != 0 {
        trace.switchings_per_period.pop();
    }
    trace.chattering = trace.switchings_per_period.iter().any(|&c| c > 2);
    // the estimate channel is NaN until the demodulator warms up
    let warm = trace
        .yhat_a
        .iter()
        .position(|v| v.is_finite())
        .unwrap_or(trace.len());
    for v in &mut trace.yhat_a[..warm] {
        *v = 0.0;
    }
    trace.check_finite()?;
    Ok(trace)
}

fn yhat_or_zero(v: Option<f64>) -> f64 {
    v.unwrap_or(0.0)
}

/// Ideal averaged closed loop started from the origin.
pub fn simulate_ideal<P: SisoPlant + ?Sized>(
    plant: &P,
    co: &ControllerObserver,
    pwm: &PwmConfig,
    sim: &SimConfig,
    sc: &Scenario,
) -> Result<SimTrace> {
    simulate_ideal_from(plant, &vec![0.0; plant.dim()], co, pwm, sim, sc)
}

/// Averaged loop `x' = f + g (u + d)` with the controller fed the true
/// virtual output. The initial state is `x0 - eps g(x0) s1(u(0), 0)`.
pub fn simulate_ideal_from<P: SisoPlant + ?Sized>(
    plant: &P,
    x0: &[f64],
    co: &ControllerObserver,
    pwm: &PwmConfig,
    sim: &SimConfig,
    sc: &Scenario,
) -> Result<SimTrace> {
    sim.validate(pwm)?;
    sc.validate()?;
    check_dims(plant, x0, co)?;

    let n = plant.dim();
    let q = co.state_dim();
    let h = sim.step(pwm);
    let steps = step_count(sc, h)?;
    let eps = pwm.epsilon();

    let mut g = vec![0.0; n];
    let u_init = co.output_at(co.eta.as_slice(), sc.signals(0.0).x1ref);
    saturation(pwm, 0.0, u_init)?;
    plant.input_field(x0, &mut g);
    let shift = eps * pwm.s1(u_init, 0.0)?;
    let mut z: Vec<f64> = x0
        .iter()
        .zip(&g)
        .map(|(x, gi)| x - shift * gi)
        .chain(co.eta.iter().copied())
        .collect();

    let mut trace = SimTrace::new(
        RunKind::Ideal,
        pwm,
        sim,
        n,
        q,
        steps / sim.record_stride + 2,
    );
    let mut rk = Rk4::new(n + q);
    let mut next = vec![0.0; n + q];
    let mut dist = vec![0.0; n];
    plant.disturbance_channel(&mut dist);

    for k in 0..=steps {
        let t0 = k as f64 * h;
        let sig = sc.signals(t0);
        let u0 = co.output_at(&z[n..], sig.x1ref);
        saturation(pwm, t0, u0)?;

        if k % sim.record_stride == 0 || k == steps {
            let xs = &z[..n];
            let y = plant.output(xs);
            trace.index.push(k as u64);
            trace.t.push(t0);
            trace.x.extend_from_slice(xs);
            trace.eta.extend_from_slice(&z[n..]);
            trace.u.push(u0);
            trace.u_pwm.push(u0);
            trace.y_clean.push(y);
            trace.y_noisy.push(y);
            trace.yhat_a.push(y);
            trace
                .yhat_v
                .push(eps * plant.output_derivative_along_input(xs));
            trace.x1ref.push(sig.x1ref);
            trace.d.push(sig.d);
        }
        if k == steps {
            break;
        }

        let d = sc.signals(t0 + 0.5 * h).d;
        let mut rhs = |t: f64, s: &[f64], out: &mut [f64]| {
            let (xs, es) = s.split_at(n);
            let (dx, de) = out.split_at_mut(n);
            let r = sc.signals(t).x1ref;
            let u = co.output_at(es, r);
            plant.drift(xs, dx);
            plant.input_field(xs, &mut g);
            for i in 0..n {
                dx[i] += g[i] * u + dist[i] * d;
            }
            let yv_over_eps = plant.output_derivative_along_input(xs);
            co.closed_loop_rhs_into(es, yv_over_eps, r, de);
        };
        rk.step(&mut rhs, t0, &z, h, &mut next);
        std::mem::swap(&mut z, &mut next);
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericOverflow {
                what: "state",
                t: t0 + h,
            });
        }
    }
    trace.check_finite()?;
    Ok(trace)
}

/// Open-loop PWM drive of a plant by a prescribed input `u(t)`.
#[derive(Debug, Clone)]
pub struct OpenLoopTrace {
    pub t: Vec<f64>,
    pub x: Vec<f64>,
    pub u_pwm: Vec<f64>,
    pub state_dim: usize,
    pub switchings_per_period: Vec<u32>,
}

impl OpenLoopTrace {
    pub fn x_at(&self, i: usize) -> &[f64] {
        &self.x[i * self.state_dim..(i + 1) * self.state_dim]
    }
}

pub fn simulate_open_loop<P, U>(
    plant: &P,
    x0: &[f64],
    pwm: &PwmConfig,
    sim: &SimConfig,
    t_end: f64,
    u_of_t: U,
) -> Result<OpenLoopTrace>
where
    P: SisoPlant + ?Sized,
    U: Fn(f64) -> f64,
{
    sim.validate(pwm)?;
    let n = plant.dim();
    if x0.len() != n {
        return Err(Error::Dimension(format!(
            "x0 has {} entries, plant has {}",
            x0.len(),
            n
        )));
    }
    let per = sim.substeps_per_period;
    let h = sim.step(pwm);
    let steps = (t_end / h).round() as usize;
    let eps = pwm.epsilon();
    let u_max = pwm.u_max();

    let mut z = x0.to_vec();
    let mut out = OpenLoopTrace {
        t: Vec::with_capacity(steps + 1),
        x: Vec::with_capacity((steps + 1) * n),
        u_pwm: Vec::with_capacity(steps + 1),
        state_dim: n,
        switchings_per_period: vec![0; steps.div_ceil(per)],
    };
    let mut stepper = SwitchedStepper::new(n);
    let mut g = vec![0.0; n];
    let mut prev_level: Option<f64> = None;
    for k in 0..=steps {
        let t0 = k as f64 * h;
        saturation(pwm, t0, u_of_t(t0))?;
        let base = (k % per) as f64;
        let sigma_of = |t: f64| (base + (t - t0) / h) / per as f64;
        let phi = |t: f64, _: &[f64]| u_of_t(t) - pwm.carrier_at_phase(sigma_of(t));
        let mut level = level_of(phi(t0, &z), u_max);
        let boundary_switch = u32::from(prev_level.is_some_and(|p| p != level));
        out.t.push(t0);
        out.x.extend_from_slice(&z);
        out.u_pwm.push(level);
        if k == steps {
            break;
        }
        let mut rhs = |_t: f64, s: &[f64], o: &mut [f64], lv: f64| {
            plant.drift(s, o);
            plant.input_field(s, &mut g);
            for i in 0..n {
                o[i] += g[i] * lv;
            }
        };
        let events = stepper.advance(
            &mut z,
            t0,
            h,
            u_max,
            sim.event_tolerance * eps,
            &mut level,
            &mut rhs,
            &phi,
        );
        prev_level = Some(level);
        out.switchings_per_period[k / per] += events + boundary_switch;
    }
    if steps % per != 0 {
        out.switchings_per_period.pop();
    }
    Ok(out)
}

/// Carrier crossings of a continuous input within one PWM period.
#[derive(Debug, Clone, PartialEq)]
pub struct Switchings {
    /// Crossing times in increasing order.
    pub times: Vec<f64>,
    /// More than one crossing on a ramp.
    pub chattering: bool,
}

/// Locates the crossings of `u(t)` with the carrier on the falling ramp
/// `[p eps, (p + 1/2) eps]` and the rising ramp `[(p + 1/2) eps, (p + 1) eps]`
/// of period `p`. Each ramp is scanned on a fine grid for sign changes, which
/// are then refined by bisection to `tol * eps`.
pub fn find_switchings<U: Fn(f64) -> f64>(
    u_of_t: U,
    period_index: i64,
    pwm: &PwmConfig,
    tol: f64,
) -> Switchings {
    const SCAN: usize = 256;
    let eps = pwm.epsilon();
    let u_max = pwm.u_max();
    let phi = |t: f64| level_of(u_of_t(t) - pwm.carrier(t), u_max);
    let mut times = Vec::new();
    let mut chattering = false;
    for ramp in 0..2 {
        let a = (period_index as f64 + 0.5 * ramp as f64) * eps;
        let span = 0.5 * eps;
        let mut found = 0;
        let mut prev_t = a;
        let mut prev = phi(a);
        for i in 1..=SCAN {
            let t = a + span * i as f64 / SCAN as f64;
            let cur = phi(t);
            if cur != prev {
                let (mut lo, mut hi) = (prev_t, t);
                while hi - lo > tol * eps {
                    let mid = 0.5 * (lo + hi);
                    if phi(mid) == prev {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                times.push(0.5 * (lo + hi));
                found += 1;
            }
            prev = cur;
            prev_t = t;
        }
        chattering |= found > 1;
    }
    Switchings { times, chattering }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::build_paper_controller;
    use crate::plant::triple_integrator;

    fn pwm() -> PwmConfig {
        PwmConfig::new(1e-3, 20.0).unwrap()
    }

    #[test]
    fn rk4_exponential() {
        let mut rk = Rk4::new(1);
        let mut y = [1.0];
        let mut out = [0.0];
        let mut f = |_t: f64, s: &[f64], o: &mut [f64]| o[0] = s[0];
        for i in 0..10 {
            rk.step(&mut f, i as f64 * 0.1, &y, 0.1, &mut out);
            y = out;
        }
        assert!((y[0] - std::f64::consts::E).abs() < 3e-6);
    }

    #[test]
    fn config_validation() {
        let p = pwm();
        assert!(SimConfig::default().validate(&p).is_ok());
        assert!(SimConfig {
            substeps_per_period: 6,
            ..Default::default()
        }
        .validate(&p)
        .is_err());
        assert!(SimConfig {
            substeps_per_period: 101,
            ..Default::default()
        }
        .validate(&p)
        .is_err());
        assert!(SimConfig {
            noise_enabled: true,
            noise_sample_time: 2e-4,
            ..Default::default()
        }
        .validate(&p)
        .is_err());
        assert!(SimConfig {
            record_stride: 0,
            ..Default::default()
        }
        .validate(&p)
        .is_err());
    }

    #[test]
    fn switchings_for_constant_inputs() {
        let p = pwm();
        let s = find_switchings(|_| 0.0, 3, &p, 1e-12);
        assert_eq!(s.times.len(), 2);
        assert!((s.times[0] - 3.25e-3).abs() < 1e-14);
        assert!((s.times[1] - 3.75e-3).abs() < 1e-14);
        assert!(!s.chattering);

        assert!(find_switchings(|_| 20.0, 0, &p, 1e-12).times.is_empty());

        let s = find_switchings(|_| 10.0, 0, &p, 1e-12);
        let on = (s.times[1] - s.times[0]) / p.epsilon();
        assert!((on - 0.75).abs() < 1e-10);
    }

    #[test]
    fn switchings_flag_chattering() {
        let p = pwm();
        let eps = p.epsilon();
        let fast = |t: f64| 15.0 * (2.0 * std::f64::consts::PI * 40.0 * t / eps).sin();
        assert!(find_switchings(fast, 0, &p, 1e-12).chattering);
    }

    #[test]
    fn open_loop_full_duty_is_unswitched() {
        let p = pwm();
        let plant = triple_integrator();
        let tr = simulate_open_loop(&plant, &[0.0; 3], &p, &SimConfig::default(), 0.05, |_| 20.0)
            .unwrap();
        assert!(tr.u_pwm.iter().all(|&v| v == 20.0));
        assert!(tr.switchings_per_period.iter().all(|&c| c == 0));
        let last = tr.t.len() - 1;
        let t = tr.t[last];
        let x = tr.x_at(last);
        assert!((x[2] - 20.0 * t).abs() < 1e-10);
        assert!((x[0] - 20.0 * t.powi(3) / 6.0).abs() < 1e-12);
    }

    #[test]
    fn open_loop_zero_input_ripple_is_eps_s1() {
        let p = pwm();
        let plant = triple_integrator();
        let tr = simulate_open_loop(&plant, &[0.0; 3], &p, &SimConfig::default(), 0.01, |_| 0.0)
            .unwrap();
        // each crossing is located to event_tolerance * eps and shifts x3 by
        // at most 2 u_max times the timing error
        let per_event = 2.0 * p.u_max() * SimConfig::default().event_tolerance * p.epsilon();
        for (i, &t) in tr.t.iter().enumerate() {
            let want = p.epsilon() * p.s1(0.0, p.phase(t)).unwrap();
            let events = 2.0 * (t / p.epsilon()).ceil() + 1.0;
            assert!(
                (tr.x_at(i)[2] - want).abs() < events * per_event,
                "t = {t}: {} vs {want}",
                tr.x_at(i)[2]
            );
        }
        assert!(tr.switchings_per_period.iter().all(|&c| c == 2));
    }

    #[test]
    fn ideal_zero_scenario_stays_at_rest() {
        let co = build_paper_controller().unwrap();
        let sc = Scenario::quiet(1.0);
        let tr = simulate_ideal(
            &triple_integrator(),
            &co,
            &pwm(),
            &SimConfig::default(),
            &sc,
        )
        .unwrap();
        assert!(tr.x.iter().chain(&tr.eta).all(|&v| v == 0.0));
        assert_eq!(tr.len(), 100_001);
    }

    #[test]
    fn saturation_is_an_error() {
        let co = build_paper_controller().unwrap();
        let sc = Scenario {
            ref_amplitude: 50.0,
            ..Scenario::default()
        };
        let err = simulate_ideal(
            &triple_integrator(),
            &co,
            &PwmConfig::new(1e-2, 20.0).unwrap(),
            &SimConfig::default(),
            &sc,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Saturation { .. }), "{err}");
    }
}
