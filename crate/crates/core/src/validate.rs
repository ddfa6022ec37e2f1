//! Quick invariant suite behind `--mode validate`. Each check is cheap
//! (well under a second) and independent of the run configuration except for
//! the PWM parameters.

use crate::control::{
    build_paper_controller, poles, spectrum, spectrum_distance, LinearLoop, Scenario,
    CONTROLLER_POLES, OBSERVER_POLES,
};
use crate::demod::DemodState;
use crate::error::Result;
use crate::plant::triple_integrator;
use crate::pwm::PwmConfig;
use crate::sim::{find_switchings, simulate_actual, SimConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, value: f64, limit: f64) -> Check {
    Check {
        name,
        passed: value <= limit,
        detail: format!("{value:.3e} <= {limit:.1e}"),
    }
}

fn failed(name: &'static str, err: crate::Error) -> Check {
    Check {
        name,
        passed: false,
        detail: err.to_string(),
    }
}

fn modulation_mean(pwm: &PwmConfig) -> f64 {
    let n = 100_000;
    (1..50)
        .map(|i| {
            let u = pwm.u_max() * (i as f64 / 25.0 - 1.0);
            let mean = (0..n)
                .map(|k| pwm.modulate_unchecked(u, (k as f64 + 0.5) / n as f64))
                .sum::<f64>()
                / n as f64;
            (mean - u).abs() / pwm.u_max()
        })
        .fold(0.0, f64::max)
}

/// `max |(s1(u, s + h) - s1(u, s)) / h - s0(u, s)|` off the switching phases.
fn primitive_defect(pwm: &PwmConfig, h: f64) -> f64 {
    let mut worst: f64 = 0.0;
    for i in -9..=9 {
        let u = pwm.u_max() * i as f64 / 10.0;
        let Some((a, b)) = pwm.switching_phases(u).ok().flatten() else {
            continue;
        };
        for k in 0..1000 {
            let s = (k as f64 + 0.37) / 1000.0;
            if [a, b, 0.5]
                .iter()
                .any(|&p| (s - p).abs() < 2.0 * h || (s + h - p).abs() < 2.0 * h)
            {
                continue;
            }
            let fd = (pwm.s1_unchecked(u, s + h) - pwm.s1_unchecked(u, s)) / h;
            worst = worst.max((fd - (pwm.modulate_unchecked(u, s) - u)).abs());
        }
    }
    worst
}

fn mean_square_defect(pwm: &PwmConfig) -> f64 {
    let n = 200_000;
    (0..20)
        .map(|i| {
            let u = pwm.u_max() * (-0.95 + 0.1 * i as f64);
            let quad = (0..n)
                .map(|k| pwm.s1_unchecked(u, (k as f64 + 0.5) / n as f64).powi(2))
                .sum::<f64>()
                / n as f64;
            let exact = pwm.s1_mean_square_unchecked(u);
            (quad - exact).abs() / exact
        })
        .fold(0.0, f64::max)
}

fn demod_frozen_defect(pwm: &PwmConfig) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for &(ya, yv, u) in &[(5.0, 1e-3, 0.0), (-1.0, 2e-3, 0.4), (0.3, -4e-4, -0.6)] {
        let u = u * pwm.u_max();
        let mut d = DemodState::new(*pwm, 100)?;
        for _ in 0..400 {
            let y = ya + yv * pwm.s1(u, d.next_phase())?;
            let est = d.push(y, u)?;
            if let Some(v) = est.y_v {
                worst = worst.max((v - yv).abs());
            }
            if let Some(a) = est.y_a {
                worst = worst.max((a - ya).abs() * 1e-3);
            }
        }
    }
    Ok(worst)
}

fn placement_defect() -> Result<f64> {
    let co = build_paper_controller()?;
    let n = co.observer_a.nrows();
    let a_ctrl = co.observer_a.view((0, 0), (n - 1, n - 1)).into_owned()
        - co.observer_b.rows(0, n - 1) * co.feedback.rows(0, n - 1).transpose();
    let a_obs = &co.observer_a - &co.innovation_gain * co.observer_c.transpose();
    let d1 = spectrum_distance(&spectrum(&a_ctrl), &poles(&CONTROLLER_POLES));
    let d2 = spectrum_distance(&spectrum(&a_obs), &poles(&OBSERVER_POLES));
    Ok(d1.max(d2))
}

fn steady_state_defect() -> Result<f64> {
    let co = build_paper_controller()?;
    let lp = LinearLoop::triple_integrator(&co);
    let ss = lp.steady_state(1.0, -0.25)?;
    Ok((ss[0] - 1.0).abs().max(ss[1].abs()).max(ss[2].abs()))
}

fn quiet_ripple(pwm: &PwmConfig) -> Result<f64> {
    let co = build_paper_controller()?;
    let sim = SimConfig {
        record_stride: 3,
        ..SimConfig::default()
    };
    let tr = simulate_actual(
        &triple_integrator(),
        &co,
        pwm,
        &sim,
        &Scenario::quiet(200.0 * pwm.epsilon()),
    )?;
    let peak = (0..tr.len())
        .map(|i| tr.x_at(i)[2].abs())
        .fold(0.0, f64::max);
    Ok(peak / (pwm.epsilon() * pwm.u_max() / 4.0))
}

pub fn run_suite(pwm: &PwmConfig) -> Vec<Check> {
    let mut out = vec![
        check("modulation mean equals input", modulation_mean(pwm), 1e-6),
        check(
            "s1 is a primitive of s0",
            primitive_defect(pwm, 1e-5),
            pwm.u_max() * 1e-5,
        ),
        check(
            "closed-form mean square of s1",
            mean_square_defect(pwm),
            1e-8,
        ),
    ];
    out.push(match demod_frozen_defect(pwm) {
        Ok(v) => check("demodulation exact on frozen signals", v, 1e-9),
        Err(e) => failed("demodulation exact on frozen signals", e),
    });
    out.push(match placement_defect() {
        Ok(v) => check("controller and observer spectra", v, 1e-9),
        Err(e) => failed("controller and observer spectra", e),
    });
    out.push(match steady_state_defect() {
        Ok(v) => check("steady state rejects d and tracks x1ref", v, 1e-9),
        Err(e) => failed("steady state rejects d and tracks x1ref", e),
    });
    let sw = find_switchings(|_| 0.0, 0, pwm, 1e-12);
    let eps = pwm.epsilon();
    let off = (sw.times.len() as f64 - 2.0).abs()
        + sw.times
            .iter()
            .zip([0.25 * eps, 0.75 * eps])
            .map(|(a, b)| (a - b).abs() / eps)
            .sum::<f64>();
    out.push(check("zero input switches at ramp midpoints", off, 1e-9));
    out.push(match quiet_ripple(pwm) {
        Ok(v) => check("quiet-loop ripple within eps u_max / 4", v, 1.05),
        Err(e) => failed("quiet-loop ripple within eps u_max / 4", e),
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_on_defaults() {
        let pwm = PwmConfig::new(1e-3, 20.0).unwrap();
        for c in run_suite(&pwm) {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
