//! Empirical checks of the averaging and demodulation predictions:
//! ripple prediction, sup-norm deviations between actual and averaged runs,
//! and least-squares convergence orders over an epsilon sweep.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::control::{build_paper_controller, Scenario};
use crate::error::{Error, Result};
use crate::plant::{triple_integrator, SisoPlant};
use crate::pwm::PwmConfig;
use crate::sim::{simulate_actual, simulate_ideal, SimConfig, SimTrace};

/// Time intervals left out of sup norms.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Exclusions(pub Vec<(f64, f64)>);

impl Exclusions {
    /// Demodulator warm-up `[0, 3 eps]` and `transient` seconds after each
    /// scenario discontinuity.
    pub fn standard(pwm: &PwmConfig, sc: &Scenario, transient: f64) -> Self {
        let mut v = vec![(0.0, 3.0 * pwm.epsilon())];
        v.extend(sc.discontinuities().iter().map(|&t| (t, t + transient)));
        Self(v)
    }

    pub fn contains(&self, t: f64) -> bool {
        self.0.iter().any(|&(a, b)| t >= a && t <= b)
    }
}

fn check_grids(a: &SimTrace, b: &SimTrace) -> Result<()> {
    if a.len() != b.len() || a.index != b.index {
        return Err(Error::GridMismatch(format!(
            "{} vs {} records",
            a.len(),
            b.len()
        )));
    }
    if a.state_dim != b.state_dim || a.eta_dim != b.eta_dim {
        return Err(Error::GridMismatch("channel dimensions differ".into()));
    }
    Ok(())
}

/// `x_bar(t) + eps g(x_bar(t)) s1(u_bar(t), t/eps)` on the trace grid,
/// row-major like [`SimTrace::x`].
pub fn ripple_prediction<P: SisoPlant + ?Sized>(
    ideal: &SimTrace,
    plant: &P,
    pwm: &PwmConfig,
) -> Result<Vec<f64>> {
    let n = ideal.state_dim;
    let mut g = vec![0.0; n];
    let mut out = Vec::with_capacity(ideal.x.len());
    for i in 0..ideal.len() {
        let xb = ideal.x_at(i);
        plant.input_field(xb, &mut g);
        let r = pwm.epsilon() * pwm.s1(ideal.u[i], ideal.phase(i))?;
        out.extend(xb.iter().zip(&g).map(|(x, gi)| x + r * gi));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviationMetrics {
    /// `sup |x_j - x_bar_j|`
    pub state: Vec<f64>,
    /// `sup |eta_j - eta_bar_j|`
    pub eta: Vec<f64>,
    /// `sup |x_j - predicted_j|` with the ripple prediction
    pub residual: Vec<f64>,
}

impl DeviationMetrics {
    pub fn eta_max(&self) -> f64 {
        self.eta.iter().copied().fold(0.0, f64::max)
    }
}

pub fn deviation_metrics<P: SisoPlant + ?Sized>(
    actual: &SimTrace,
    ideal: &SimTrace,
    plant: &P,
    pwm: &PwmConfig,
    exclude: &Exclusions,
) -> Result<DeviationMetrics> {
    check_grids(actual, ideal)?;
    let prediction = ripple_prediction(ideal, plant, pwm)?;
    let (n, q) = (actual.state_dim, actual.eta_dim);
    let mut m = DeviationMetrics {
        state: vec![0.0; n],
        eta: vec![0.0; q],
        residual: vec![0.0; n],
    };
    for i in 0..actual.len() {
        if exclude.contains(actual.t[i]) {
            continue;
        }
        let (x, xb) = (actual.x_at(i), ideal.x_at(i));
        for j in 0..n {
            m.state[j] = m.state[j].max((x[j] - xb[j]).abs());
            m.residual[j] = m.residual[j].max((x[j] - prediction[i * n + j]).abs());
        }
        let (e, eb) = (actual.eta_at(i), ideal.eta_at(i));
        for j in 0..q {
            m.eta[j] = m.eta[j].max((e[j] - eb[j]).abs());
        }
    }
    Ok(m)
}

/// Sup of `|x_j - x_bar_j|` over `[from, to)`.
pub fn ripple_amplitude(
    actual: &SimTrace,
    ideal: &SimTrace,
    j: usize,
    from: f64,
    to: f64,
) -> Result<f64> {
    check_grids(actual, ideal)?;
    Ok((0..actual.len())
        .filter(|&i| actual.t[i] >= from && actual.t[i] < to)
        .map(|i| (actual.x_at(i)[j] - ideal.x_at(i)[j]).abs())
        .fold(0.0, f64::max))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EstimatorErrors {
    pub actual_output: f64,
    pub virtual_output: f64,
}

/// Sup errors of the demodulated outputs against `h` and `eps h' g` evaluated
/// at the de-rippled state `x - eps g(x) s1(u, t/eps)` of the same run.
pub fn estimator_errors<P: SisoPlant + ?Sized>(
    actual: &SimTrace,
    plant: &P,
    pwm: &PwmConfig,
    exclude: &Exclusions,
) -> Result<EstimatorErrors> {
    let n = actual.state_dim;
    let mut g = vec![0.0; n];
    let mut xbar = vec![0.0; n];
    let mut e = EstimatorErrors {
        actual_output: 0.0,
        virtual_output: 0.0,
    };
    for i in 0..actual.len() {
        if exclude.contains(actual.t[i]) {
            continue;
        }
        let x = actual.x_at(i);
        plant.input_field(x, &mut g);
        let r = pwm.epsilon() * pwm.s1(actual.u[i], actual.phase(i))?;
        for j in 0..n {
            xbar[j] = x[j] - r * g[j];
        }
        let ya = plant.output(&xbar);
        let yv = pwm.epsilon() * plant.output_derivative_along_input(&xbar);
        e.actual_output = e.actual_output.max((actual.yhat_a[i] - ya).abs());
        e.virtual_output = e.virtual_output.max((actual.yhat_v[i] - yv).abs());
    }
    Ok(e)
}

/// Least-squares slope of `ln(err)` against `ln(eps)`.
pub fn fitted_order(epsilons: &[f64], errors: &[f64]) -> f64 {
    let xs: Vec<f64> = epsilons.iter().map(|e| e.ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChannelOrder {
    pub name: String,
    pub errors: Vec<f64>,
    pub fitted_order: f64,
    pub expected_order: f64,
    /// Fitted order further than [`ORDER_TOLERANCE`] from the expected one.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderReport {
    pub epsilons: Vec<f64>,
    pub channels: Vec<ChannelOrder>,
}

pub const ORDER_TOLERANCE: f64 = 0.35;

impl OrderReport {
    pub fn channel(&self, name: &str) -> Option<&ChannelOrder> {
        self.channels.iter().find(|c| c.name == name)
    }

    pub fn any_flagged(&self) -> bool {
        self.channels.iter().any(|c| c.flagged)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).unwrap_or_default()
    }
}

/// Runs `run(eps)` for every epsilon (in parallel) and fits an order per
/// channel. `expected` maps channel names to the predicted exponent; channels
/// missing from it are reported with expected order NaN and never flagged.
pub fn convergence_order<F>(
    epsilons: &[f64],
    expected: &BTreeMap<String, f64>,
    run: F,
) -> Result<OrderReport>
where
    F: Fn(f64) -> Result<BTreeMap<String, f64>> + Sync,
{
    if epsilons.len() < 3
        || epsilons.windows(2).any(|w| !(w[1] < w[0]))
        || epsilons.iter().any(|&e| !(e > 0.0))
    {
        return Err(Error::Sweep(format!("{epsilons:?}")));
    }
    let results: Vec<BTreeMap<String, f64>> = epsilons
        .par_iter()
        .map(|&e| run(e))
        .collect::<Result<_>>()?;
    let names: Vec<String> = results[0].keys().cloned().collect();
    let mut channels = Vec::new();
    for name in names {
        let errors: Vec<f64> = results
            .iter()
            .map(|r| r.get(&name).copied().unwrap_or(f64::NAN))
            .collect();
        if errors.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
            return Err(Error::Sweep(format!(
                "channel {name} has non-positive errors {errors:?}"
            )));
        }
        let fitted = fitted_order(epsilons, &errors);
        let expected_order = expected.get(&name).copied().unwrap_or(f64::NAN);
        channels.push(ChannelOrder {
            flagged: expected_order.is_finite()
                && (fitted - expected_order).abs() > ORDER_TOLERANCE,
            name,
            errors,
            fitted_order: fitted,
            expected_order,
        });
    }
    Ok(OrderReport {
        epsilons: epsilons.to_vec(),
        channels,
    })
}

pub const DEFAULT_SWEEP: [f64; 3] = [1e-3, 5e-4, 2.5e-4];

/// Predicted exponents for the channels produced by [`triple_integrator_sweep_point`].
pub fn expected_orders() -> BTreeMap<String, f64> {
    [
        ("x1", 2.0),
        ("x2", 2.0),
        ("eta", 2.0),
        ("x3_residual", 2.0),
        ("x3_ripple", 1.0),
        ("yhat_a", 2.0),
        ("yhat_v", 2.0),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

/// Everything one epsilon of the triple-integrator sweep produces.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub epsilon: f64,
    pub deviations: DeviationMetrics,
    pub estimators: EstimatorErrors,
    /// `sup |x3 - x3_bar|` before the disturbance step, where `u` is near 0.
    pub quiet_ripple: f64,
    pub max_switchings_per_period: u32,
    pub min_switchings_per_period: u32,
}

impl SweepPoint {
    pub fn channels(&self) -> BTreeMap<String, f64> {
        let d = &self.deviations;
        [
            ("x1", d.state[0]),
            ("x2", d.state[1]),
            ("eta", d.eta_max()),
            ("x3_residual", d.residual[2]),
            ("x3_ripple", d.state[2]),
            ("yhat_a", self.estimators.actual_output),
            ("yhat_v", self.estimators.virtual_output),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}

/// Actual and ideal runs of the triple-integrator loop at one epsilon, with
/// the standard exclusions (`transient` seconds after each discontinuity).
pub fn triple_integrator_sweep_point(
    epsilon: f64,
    u_max: f64,
    sim: &SimConfig,
    sc: &Scenario,
    transient: f64,
) -> Result<SweepPoint> {
    let pwm = PwmConfig::new(epsilon, u_max)?;
    let plant = triple_integrator();
    let co = build_paper_controller()?;
    let actual = simulate_actual(&plant, &co, &pwm, sim, sc)?;
    let ideal = simulate_ideal(&plant, &co, &pwm, sim, sc)?;
    let ex = Exclusions::standard(&pwm, sc, transient);
    let deviations = deviation_metrics(&actual, &ideal, &plant, &pwm, &ex)?;
    let estimators = estimator_errors(&actual, &plant, &pwm, &ex)?;
    let quiet_ripple = ripple_amplitude(&actual, &ideal, 2, 3.0 * epsilon, sc.d_step_time)?;
    let (min_sw, max_sw) = actual.switching_count_range().unwrap_or((0, 0));
    Ok(SweepPoint {
        epsilon,
        deviations,
        estimators,
        quiet_ripple,
        max_switchings_per_period: max_sw,
        min_switchings_per_period: min_sw,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::simulate_ideal;

    #[test]
    fn fitted_order_of_power_law() {
        let eps = [1e-3, 5e-4, 2.5e-4];
        let errs: Vec<f64> = eps.iter().map(|e| 3.0 * e * e).collect();
        assert!((fitted_order(&eps, &errs) - 2.0).abs() < 1e-12);
        let errs: Vec<f64> = eps.iter().map(|e| 0.1 * e).collect();
        assert!((fitted_order(&eps, &errs) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn convergence_order_flags_and_errors() {
        let expected = expected_orders();
        let rep = convergence_order(&DEFAULT_SWEEP, &expected, |e| {
            Ok(
                [("x1".to_string(), e * e), ("x3_ripple".to_string(), e * e)]
                    .into_iter()
                    .collect(),
            )
        })
        .unwrap();
        assert!(!rep.channel("x1").unwrap().flagged);
        assert!(rep.channel("x3_ripple").unwrap().flagged);
        assert!(rep.to_toml().contains("fitted_order"));

        assert!(convergence_order(&[1e-3, 5e-4], &expected, |_| Ok(BTreeMap::new())).is_err());
        assert!(
            convergence_order(&[1e-3, 2e-3, 5e-4], &expected, |_| Ok(BTreeMap::new())).is_err()
        );
        let failing = convergence_order(&DEFAULT_SWEEP, &expected, |_| Err(Error::WarmUp));
        assert_eq!(failing.unwrap_err(), Error::WarmUp);
    }

    fn short_ideal() -> (PwmConfig, SimTrace) {
        let pwm = PwmConfig::new(1e-2, 20.0).unwrap();
        let sc = Scenario {
            d_step_time: 0.1,
            ref_step_time: 0.2,
            t_end: 0.5,
            ..Scenario::default()
        };
        let co = build_paper_controller().unwrap();
        let tr =
            simulate_ideal(&triple_integrator(), &co, &pwm, &SimConfig::default(), &sc).unwrap();
        (pwm, tr)
    }

    #[test]
    fn prediction_ripples_only_the_input_channel() {
        let (pwm, ideal) = short_ideal();
        let p = ripple_prediction(&ideal, &triple_integrator(), &pwm).unwrap();
        for i in 0..ideal.len() {
            let xb = ideal.x_at(i);
            assert_eq!(p[3 * i], xb[0]);
            assert_eq!(p[3 * i + 1], xb[1]);
            if ideal.index[i] % 100 == 0 {
                assert_eq!(p[3 * i + 2], xb[2]);
            }
        }
        assert!((0..ideal.len()).any(|i| p[3 * i + 2] != ideal.x_at(i)[2]));
    }

    #[test]
    fn identical_traces_have_zero_deviation() {
        let (pwm, ideal) = short_ideal();
        let m = deviation_metrics(
            &ideal,
            &ideal,
            &triple_integrator(),
            &pwm,
            &Exclusions::default(),
        )
        .unwrap();
        assert!(m.state.iter().chain(&m.eta).all(|&v| v == 0.0));
        let mut shorter = ideal.clone();
        shorter.t.pop();
        shorter.index.pop();
        assert!(matches!(
            deviation_metrics(
                &shorter,
                &ideal,
                &triple_integrator(),
                &pwm,
                &Exclusions::default()
            ),
            Err(Error::GridMismatch(_))
        ));
    }
}
