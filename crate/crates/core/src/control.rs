//! Pole placement, the disturbance-estimating controller-observer for the
//! triple integrator, and the test scenario signals.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;

/// Controller eigenvalues used for the triple-integrator example.
pub const CONTROLLER_POLES: [(f64, f64); 3] = [(-6.59, 0.0), (-3.30, 5.71), (-3.30, -5.71)];

/// Observer eigenvalues (three states plus the disturbance estimate).
pub const OBSERVER_POLES: [(f64, f64); 4] =
    [(-1.19, 0.0), (-0.73, 0.0), (-0.49, 0.57), (-0.49, -0.57)];

pub fn poles(spec: &[(f64, f64)]) -> Vec<C64> {
    spec.iter().map(|&(re, im)| C64::new(re, im)).collect()
}

/// Real coefficients `[c_0, ..., c_{n-1}]` of the monic polynomial
/// `s^n + c_{n-1} s^{n-1} + ... + c_0` with the given roots.
pub fn characteristic_coefficients(roots: &[C64]) -> Result<Vec<f64>> {
    check_conjugate_closed(roots)?;
    // coefficients in increasing degree, leading 1 last
    let mut poly = vec![C64::new(1.0, 0.0)];
    for &r in roots {
        let mut next = vec![C64::new(0.0, 0.0); poly.len() + 1];
        for (i, &c) in poly.iter().enumerate() {
            next[i + 1] += c;
            next[i] -= c * r;
        }
        poly = next;
    }
    poly.pop();
    Ok(poly.into_iter().map(|c| c.re).collect())
}

/// Real factors `(b, c)` of `s^2 + b s + c` for conjugate pairs and `(-r, 0)`
/// flagged as linear for real roots.
fn real_factors(roots: &[C64]) -> Result<Vec<(f64, f64, bool)>> {
    check_conjugate_closed(roots)?;
    let mut out = Vec::new();
    let mut skip = vec![false; roots.len()];
    for i in 0..roots.len() {
        if skip[i] {
            continue;
        }
        let r = roots[i];
        if r.im.abs() <= 1e-12 * (1.0 + r.norm()) {
            out.push((-r.re, 0.0, false));
            continue;
        }
        let tol = 1e-12 * (1.0 + r.norm());
        if let Some(j) =
            (i + 1..roots.len()).find(|&j| !skip[j] && (roots[j] - r.conj()).norm() <= tol)
        {
            skip[j] = true;
        }
        out.push((-2.0 * r.re, r.norm_sqr(), true));
    }
    Ok(out)
}

fn check_conjugate_closed(roots: &[C64]) -> Result<()> {
    let mut used = vec![false; roots.len()];
    for i in 0..roots.len() {
        let r = roots[i];
        if !(r.re.is_finite() && r.im.is_finite()) {
            return Err(Error::InvalidPoles(format!("non-finite pole {r}")));
        }
        let tol = 1e-12 * (1.0 + r.norm());
        if r.im.abs() <= tol || used[i] {
            continue;
        }
        let partner =
            (0..roots.len()).find(|&j| j != i && !used[j] && (roots[j] - r.conj()).norm() <= tol);
        match partner {
            Some(j) => {
                used[i] = true;
                used[j] = true;
            }
            None => return Err(Error::InvalidPoles(format!("{r} has no conjugate partner"))),
        }
    }
    Ok(())
}

/// State-feedback row `K` such that `eig(A - B K)` equals `poles`
/// (Ackermann's formula `K = e_n^T C^{-1} phi(A)`).
pub fn place_poles(a: &DMatrix<f64>, b: &DVector<f64>, poles: &[C64]) -> Result<DVector<f64>> {
    let n = a.nrows();
    if a.ncols() != n || b.len() != n || poles.len() != n || n == 0 {
        return Err(Error::Dimension(format!(
            "A is {}x{}, B has {} entries, {} poles requested",
            a.nrows(),
            a.ncols(),
            b.len(),
            poles.len()
        )));
    }
    let factors = real_factors(poles)?;

    let mut ctrb = DMatrix::zeros(n, n);
    let mut col = b.clone();
    for j in 0..n {
        ctrb.set_column(j, &col);
        col = a * col;
    }
    let sv = ctrb.clone().singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    let ratio = if smax > 0.0 { smin / smax } else { 0.0 };
    if ratio < 1e-13 {
        return Err(Error::Uncontrollable { ratio });
    }

    // phi(A) as a product of real factors; better conditioned than the
    // power basis when the poles spread over a wide range
    let eye = DMatrix::<f64>::identity(n, n);
    let mut phi = eye.clone();
    for (b1, c0, quadratic) in factors {
        let lin = a + &eye * b1;
        phi = if quadratic {
            &phi * (a * a + a * b1 + &eye * c0)
        } else {
            &phi * lin
        };
    }

    let mut e_n = DVector::zeros(n);
    e_n[n - 1] = 1.0;
    let v = ctrb
        .transpose()
        .lu()
        .solve(&e_n)
        .ok_or(Error::Uncontrollable { ratio })?;
    Ok(phi.transpose() * v)
}

/// Observer gain `L` such that `eig(A - L C)` equals `poles`, by placement on
/// the dual pair `(A^T, C^T)`.
pub fn place_observer(a: &DMatrix<f64>, c: &DVector<f64>, poles: &[C64]) -> Result<DVector<f64>> {
    place_poles(&a.transpose(), c, poles)
}

pub fn spectrum(m: &DMatrix<f64>) -> Vec<C64> {
    m.complex_eigenvalues().iter().copied().collect()
}

/// Largest distance between paired eigenvalues under a greedy nearest
/// matching; `f64::INFINITY` if the multisets have different sizes.
pub fn spectrum_distance(a: &[C64], b: &[C64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    let mut used = vec![false; b.len()];
    let mut worst = 0.0f64;
    for x in a {
        let (j, d) = b
            .iter()
            .enumerate()
            .filter(|(j, _)| !used[*j])
            .map(|(j, y)| (j, (x - y).norm()))
            .fold((usize::MAX, f64::INFINITY), |acc, v| {
                if v.1 < acc.1 {
                    v
                } else {
                    acc
                }
            });
        used[j] = true;
        worst = worst.max(d);
    }
    worst
}

/// Linear dynamic output feedback
///
/// ```text
/// u    = -K eta + k r
/// eta' = A_o eta + B_o u + L (y_v / epsilon - C_o eta)
///      = M eta + N r + L y_v / epsilon
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerObserver {
    pub feedback: DVector<f64>,
    pub reference_gain: f64,
    pub observer_a: DMatrix<f64>,
    pub observer_b: DVector<f64>,
    pub observer_c: DVector<f64>,
    pub innovation_gain: DVector<f64>,
    /// `M = A_o - B_o K - L C_o`
    pub dynamics: DMatrix<f64>,
    /// `N = B_o k`
    pub reference_input: DVector<f64>,
    pub eta: DVector<f64>,
}

impl ControllerObserver {
    pub fn new(
        feedback: DVector<f64>,
        reference_gain: f64,
        observer_a: DMatrix<f64>,
        observer_b: DVector<f64>,
        observer_c: DVector<f64>,
        innovation_gain: DVector<f64>,
    ) -> Result<Self> {
        let q = observer_a.nrows();
        if observer_a.ncols() != q
            || [
                feedback.len(),
                observer_b.len(),
                observer_c.len(),
                innovation_gain.len(),
            ]
            .iter()
            .any(|&l| l != q)
        {
            return Err(Error::Dimension(
                "controller-observer blocks disagree on the state size".into(),
            ));
        }
        let dynamics = &observer_a
            - &observer_b * feedback.transpose()
            - &innovation_gain * observer_c.transpose();
        let reference_input = &observer_b * reference_gain;
        Ok(Self {
            feedback,
            reference_gain,
            observer_a,
            observer_b,
            observer_c,
            innovation_gain,
            dynamics,
            reference_input,
            eta: DVector::zeros(q),
        })
    }

    pub fn state_dim(&self) -> usize {
        self.eta.len()
    }

    /// `u = -K eta + k r` at the stored `eta`.
    pub fn controller_output(&self, x1ref: f64) -> f64 {
        self.output_at(self.eta.as_slice(), x1ref)
    }

    pub fn output_at(&self, eta: &[f64], x1ref: f64) -> f64 {
        let fb: f64 = self.feedback.iter().zip(eta).map(|(k, e)| k * e).sum();
        -fb + self.reference_gain * x1ref
    }

    /// Observer right-hand side at the stored `eta` for an explicit input `u`.
    pub fn observer_rhs(&self, u: f64, yv_over_eps: f64, _x1ref: f64) -> DVector<f64> {
        let mut out = DVector::zeros(self.state_dim());
        self.observer_rhs_into(self.eta.as_slice(), u, yv_over_eps, out.as_mut_slice());
        out
    }

    pub fn observer_rhs_into(&self, eta: &[f64], u: f64, yv_over_eps: f64, out: &mut [f64]) {
        let q = eta.len();
        let innovation = yv_over_eps
            - self
                .observer_c
                .iter()
                .zip(eta)
                .map(|(c, e)| c * e)
                .sum::<f64>();
        for (i, o) in out.iter_mut().enumerate().take(q) {
            let mut acc = self.observer_b[i] * u + self.innovation_gain[i] * innovation;
            for (j, e) in eta.iter().enumerate() {
                acc += self.observer_a[(i, j)] * e;
            }
            *o = acc;
        }
    }

    /// `eta' = M eta + N r + L y_v / epsilon`, the closed-loop form with
    /// `u = -K eta + k r` substituted.
    pub fn closed_loop_rhs_into(&self, eta: &[f64], yv_over_eps: f64, x1ref: f64, out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = self.reference_input[i] * x1ref + self.innovation_gain[i] * yv_over_eps;
            for (j, e) in eta.iter().enumerate() {
                acc += self.dynamics[(i, j)] * e;
            }
            *o = acc;
        }
    }
}

fn shift_matrix(n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| if j == i + 1 { 1.0 } else { 0.0 })
}

fn unit(n: usize, i: usize) -> DVector<f64> {
    let mut v = DVector::zeros(n);
    v[i] = 1.0;
    v
}

/// Controller-observer for the triple integrator with disturbance estimate
/// `eta = (x1_hat, x2_hat, x3_hat, d_hat)`, fed by the virtual output
/// `y_v / epsilon = x1`.
///
/// Gains are placed at [`CONTROLLER_POLES`] and [`OBSERVER_POLES`]; the
/// disturbance gain is 1 (cancels `d_hat`) and the reference gain equals
/// `k1` (unit DC gain from `x1ref` to `x1`).
pub fn build_paper_controller() -> Result<ControllerObserver> {
    let k_state = place_poles(&shift_matrix(3), &unit(3, 2), &poles(&CONTROLLER_POLES))?;
    let l = place_observer(&shift_matrix(4), &unit(4, 0), &poles(&OBSERVER_POLES))?;
    let feedback = DVector::from_vec(vec![k_state[0], k_state[1], k_state[2], 1.0]);
    ControllerObserver::new(
        feedback,
        k_state[0],
        shift_matrix(4),
        unit(4, 2),
        unit(4, 0),
        l,
    )
}

/// Ideal (averaged, true `y_v`) closed loop of the triple integrator and a
/// controller-observer, as `z' = A z + b_ref r + b_dist d` with
/// `z = (x1, x2, x3, eta)`.
#[derive(Debug, Clone)]
pub struct LinearLoop {
    pub a: DMatrix<f64>,
    pub b_ref: DVector<f64>,
    pub b_dist: DVector<f64>,
}

impl LinearLoop {
    pub fn triple_integrator(co: &ControllerObserver) -> Self {
        let q = co.state_dim();
        let n = 3 + q;
        let mut a = DMatrix::zeros(n, n);
        a[(0, 1)] = 1.0;
        a[(1, 2)] = 1.0;
        for j in 0..q {
            a[(2, 3 + j)] = -co.feedback[j];
        }
        for i in 0..q {
            a[(3 + i, 0)] = co.innovation_gain[i];
            for j in 0..q {
                a[(3 + i, 3 + j)] = co.dynamics[(i, j)];
            }
        }
        let mut b_ref = DVector::zeros(n);
        b_ref[2] = co.reference_gain;
        let mut b_dist = DVector::zeros(n);
        b_dist[2] = 1.0;
        for i in 0..q {
            b_ref[3 + i] = co.reference_input[i];
        }
        Self { a, b_ref, b_dist }
    }

    /// Equilibrium for constant reference and disturbance.
    pub fn steady_state(&self, x1ref: f64, d: f64) -> Result<DVector<f64>> {
        let rhs = -(&self.b_ref * x1ref + &self.b_dist * d);
        self.a
            .clone()
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Dimension("closed-loop matrix is singular".into()))
    }
}

/// Disturbance step and filtered reference step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scenario {
    pub d_step_time: f64,
    pub d_value: f64,
    pub ref_step_time: f64,
    pub ref_amplitude: f64,
    pub ref_filter_time_constant: f64,
    pub t_end: f64,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            d_step_time: 2.0,
            d_value: -0.25,
            ref_step_time: 14.0,
            ref_amplitude: 1.0,
            ref_filter_time_constant: 0.5,
            t_end: 20.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioSignals {
    pub d: f64,
    pub x1ref: f64,
}

impl Scenario {
    /// Scenario with no disturbance and no reference change.
    pub fn quiet(t_end: f64) -> Self {
        Self {
            d_step_time: 0.25 * t_end,
            d_value: 0.0,
            ref_step_time: 0.5 * t_end,
            ref_amplitude: 0.0,
            ..Self::default()
        }
        .with_t_end(t_end)
    }

    pub fn with_t_end(mut self, t_end: f64) -> Self {
        self.t_end = t_end;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.d_step_time,
            self.d_value,
            self.ref_step_time,
            self.ref_amplitude,
            self.ref_filter_time_constant,
            self.t_end,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidConfig {
                field: "scenario",
                reason: "non-finite value".into(),
            });
        }
        if self.d_step_time < 0.0 {
            return Err(Error::InvalidConfig {
                field: "d_step_time",
                reason: "must be >= 0".into(),
            });
        }
        if self.ref_step_time <= self.d_step_time {
            return Err(Error::InvalidConfig {
                field: "ref_step_time",
                reason: "must be after d_step_time".into(),
            });
        }
        if self.t_end <= self.ref_step_time {
            return Err(Error::InvalidConfig {
                field: "t_end",
                reason: "must be after ref_step_time".into(),
            });
        }
        if self.ref_filter_time_constant <= 0.0 {
            return Err(Error::InvalidConfig {
                field: "ref_filter_time_constant",
                reason: "must be > 0".into(),
            });
        }
        Ok(())
    }

    /// `d` is a plain step; `x1ref` is a unit step through the critically
    /// damped filter `1 / (T s + 1)^2`, which keeps it C1 at the step time.
    pub fn signals(&self, t: f64) -> ScenarioSignals {
        let d = if t >= self.d_step_time {
            self.d_value
        } else {
            0.0
        };
        let s = t - self.ref_step_time;
        let x1ref = if s > 0.0 {
            let r = s / self.ref_filter_time_constant;
            self.ref_amplitude * (1.0 - (1.0 + r) * (-r).exp())
        } else {
            0.0
        };
        ScenarioSignals { d, x1ref }
    }

    /// Instants where the scenario signals are not smooth.
    pub fn discontinuities(&self) -> [f64; 2] {
        [self.d_step_time, self.ref_step_time]
    }
}
