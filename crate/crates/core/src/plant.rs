//! Single-input single-output plants `x' = f(x) + g(x) (u + d)`, `y = h(x)`.

use crate::error::{Error, Result};

/// A SISO plant. Vector-valued maps write into caller-provided buffers of
/// length [`SisoPlant::dim`] so the integrator loop stays allocation free.
pub trait SisoPlant: Send + Sync {
    fn dim(&self) -> usize;

    /// Drift field `f(x)`.
    fn drift(&self, x: &[f64], out: &mut [f64]);

    /// Input field `g(x)`.
    fn input_field(&self, x: &[f64], out: &mut [f64]);

    /// Measured output `h(x)`.
    fn output(&self, x: &[f64]) -> f64;

    /// Direction along which the exogenous disturbance enters additively.
    fn disturbance_channel(&self, out: &mut [f64]);

    /// `h'(x) g(x)`. The default is a central difference along `g` with step
    /// `1e-6 (1 + |x|)`; plants with an analytic expression should override it.
    fn output_derivative_along_input(&self, x: &[f64]) -> f64 {
        let n = self.dim();
        let mut g = vec![0.0; n];
        self.input_field(x, &mut g);
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let step = 1e-6 * (1.0 + norm);
        let plus: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi + step * gi).collect();
        let minus: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi - step * gi).collect();
        (self.output(&plus) - self.output(&minus)) / (2.0 * step)
    }
}

/// Actual and virtual measurements of a state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutputPair {
    /// `h(x)`
    pub y_a: f64,
    /// `epsilon h'(x) g(x)`
    pub y_v: f64,
}

pub fn outputs<P: SisoPlant + ?Sized>(plant: &P, x: &[f64], epsilon: f64) -> Result<OutputPair> {
    if x.len() != plant.dim() {
        return Err(Error::Dimension(format!(
            "state has {} entries, plant dimension is {}",
            x.len(),
            plant.dim()
        )));
    }
    let y_a = plant.output(x);
    let y_v = epsilon * plant.output_derivative_along_input(x);
    if !(y_a.is_finite() && y_v.is_finite()) {
        return Err(Error::NumericOverflow {
            what: "plant outputs",
            t: f64::NAN,
        });
    }
    Ok(OutputPair { y_a, y_v })
}

/// `x1' = x2, x2' = x3, x3' = u + d`, `y = x2 + x1 x3`.
///
/// At the equilibria `(c, 0, 0)` the output carries no information about
/// `x1`, while the virtual output `epsilon x1` does.
#[derive(Debug, Clone, Copy, Default)]
pub struct TripleIntegrator;

pub fn triple_integrator() -> TripleIntegrator {
    TripleIntegrator
}

impl SisoPlant for TripleIntegrator {
    fn dim(&self) -> usize {
        3
    }

    fn drift(&self, x: &[f64], out: &mut [f64]) {
        out[0] = x[1];
        out[1] = x[2];
        out[2] = 0.0;
    }

    fn input_field(&self, _x: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
        out[1] = 0.0;
        out[2] = 1.0;
    }

    fn output(&self, x: &[f64]) -> f64 {
        x[1] + x[0] * x[2]
    }

    fn disturbance_channel(&self, out: &mut [f64]) {
        out[0] = 0.0;
        out[1] = 0.0;
        out[2] = 1.0;
    }

    fn output_derivative_along_input(&self, x: &[f64]) -> f64 {
        x[0]
    }
}
