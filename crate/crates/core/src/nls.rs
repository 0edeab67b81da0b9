//! Weighted nonlinear least squares by Levenberg-Marquardt.
//!
//! Minimizes `Σ wᵢ (yᵢ − f(p, xᵢ))²` over the free parameters of a
//! [`FitProblem`]. Bounds are enforced by projecting every trial point onto
//! the box; a parameter whose lower and upper bound coincide is frozen and
//! takes no part in the solve. At the solution the covariance is
//! `χ²_red · (JᵀWJ)⁻¹` and reported 3σ half-widths are `3·sqrt(Cᵢᵢ)`.

use std::fmt;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("invalid fit problem: {0}")]
    InvalidProblem(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("model evaluation failed: {0}")]
    Evaluation(String),

    #[error("degenerate fit: parameters not identifiable along {direction}")]
    Degenerate { direction: String },
}

/// A parametric model `f(p, x)`.
pub trait Model {
    fn n_params(&self) -> usize;

    fn eval(&self, params: &[f64], x: f64) -> f64;

    /// Writes `∂f/∂pⱼ` into `out` and returns true, or returns false when the
    /// model has no analytic derivatives (finite differences are used).
    fn partials(&self, _params: &[f64], _x: f64, _out: &mut [f64]) -> bool {
        false
    }

    fn param_names(&self) -> Vec<String> {
        (0..self.n_params()).map(|i| format!("p{i}")).collect()
    }
}

/// Adapts a closure into a [`Model`] without analytic derivatives.
pub struct FnModel<F> {
    names: Vec<String>,
    f: F,
}

impl<F: Fn(&[f64], f64) -> f64> FnModel<F> {
    pub fn new(names: &[&str], f: F) -> Self {
        Self {
            names: names.iter().map(|s| s.to_string()).collect(),
            f,
        }
    }
}

impl<F: Fn(&[f64], f64) -> f64> Model for FnModel<F> {
    fn n_params(&self) -> usize {
        self.names.len()
    }

    fn eval(&self, params: &[f64], x: f64) -> f64 {
        (self.f)(params, x)
    }

    fn param_names(&self) -> Vec<String> {
        self.names.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataPoint {
    pub x: f64,
    pub y: f64,
    pub weight: f64,
}

impl DataPoint {
    pub fn new(x: f64, y: f64, weight: f64) -> Self {
        Self { x, y, weight }
    }
}

/// Poisson weight for a count observation, `1 / max(n, 1)`.
pub fn poisson_weight(counts: f64) -> f64 {
    1.0 / counts.max(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bound {
    pub lower: f64,
    pub upper: f64,
}

impl Bound {
    pub const FREE: Bound = Bound {
        lower: f64::NEG_INFINITY,
        upper: f64::INFINITY,
    };

    pub fn new(lower: f64, upper: f64) -> Self {
        Self { lower, upper }
    }

    pub fn positive() -> Self {
        Self::new(0.0, f64::INFINITY)
    }

    pub fn at_least(lower: f64) -> Self {
        Self::new(lower, f64::INFINITY)
    }

    pub fn fixed(value: f64) -> Self {
        Self::new(value, value)
    }

    pub fn is_fixed(&self) -> bool {
        self.lower == self.upper
    }

    fn clamp(&self, v: f64) -> f64 {
        v.max(self.lower).min(self.upper)
    }

    fn touches(&self, v: f64) -> bool {
        let near = |b: f64| b.is_finite() && (v - b).abs() <= 1e-9 * b.abs().max(1e-12);
        !self.is_fixed() && (near(self.lower) || near(self.upper))
    }
}

pub struct FitProblem<'a> {
    model: &'a dyn Model,
    data: Vec<DataPoint>,
    initial: Vec<f64>,
    bounds: Vec<Bound>,
}

impl<'a> FitProblem<'a> {
    pub fn new(model: &'a dyn Model, data: Vec<DataPoint>, initial: Vec<f64>) -> Result<Self, FitError> {
        let n = model.n_params();
        Self::with_bounds(model, data, initial, vec![Bound::FREE; n])
    }

    pub fn with_bounds(
        model: &'a dyn Model,
        data: Vec<DataPoint>,
        initial: Vec<f64>,
        bounds: Vec<Bound>,
    ) -> Result<Self, FitError> {
        let n = model.n_params();
        if initial.len() != n || bounds.len() != n {
            return Err(FitError::InvalidProblem(format!(
                "model has {n} parameters but {} initial values and {} bounds were given",
                initial.len(),
                bounds.len()
            )));
        }
        for (i, d) in data.iter().enumerate() {
            if !(d.weight > 0.0) || !d.weight.is_finite() {
                return Err(FitError::InvalidProblem(format!(
                    "data point {i}: weight {} must be positive and finite",
                    d.weight
                )));
            }
            if !d.x.is_finite() || !d.y.is_finite() {
                return Err(FitError::InvalidProblem(format!("data point {i} is not finite")));
            }
        }
        for (i, (b, p)) in bounds.iter().zip(&initial).enumerate() {
            if b.lower > b.upper || b.lower.is_nan() || b.upper.is_nan() {
                return Err(FitError::InvalidProblem(format!("parameter {i}: empty bound")));
            }
            if !p.is_finite() || *p < b.lower || *p > b.upper {
                return Err(FitError::InvalidProblem(format!(
                    "parameter {i}: initial value {p} outside [{}, {}]",
                    b.lower, b.upper
                )));
            }
        }
        Ok(Self {
            model,
            data,
            initial,
            bounds,
        })
    }

    pub fn data(&self) -> &[DataPoint] {
        &self.data
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    /// Weighted squared residual sum at `params`.
    pub fn cost(&self, params: &[f64]) -> Result<f64, FitError> {
        let mut acc = 0.0;
        for d in &self.data {
            let r = d.y - self.model.eval(params, d.x);
            if !r.is_finite() {
                return Err(FitError::Evaluation(format!(
                    "model is not finite at x = {} for parameters {params:?}",
                    d.x
                )));
            }
            acc += d.weight * r * r;
        }
        Ok(acc)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_iter: usize,
    /// Convergence when the cosine between residual and every Jacobian
    /// column falls below this.
    pub gradient_tol: f64,
    pub step_tol: f64,
    pub cost_tol: f64,
    /// Relative step used for finite-difference derivatives.
    pub fd_step: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            gradient_tol: 1e-10,
            step_tol: 1e-8,
            cost_tol: 1e-10,
            fd_step: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub names: Vec<String>,
    pub parameters: Vec<f64>,
    /// Row-major, `n × n`, zero rows and columns for frozen parameters.
    pub covariance: Vec<Vec<f64>>,
    pub chi2: f64,
    pub reduced_chi2: f64,
    pub dof: usize,
    /// Number of parameters that were not frozen.
    pub n_free: usize,
    pub n_iterations: usize,
    pub converged: bool,
    pub sigma3: Vec<f64>,
    pub at_bound: Vec<bool>,
}

impl FitResult {
    pub fn sigma(&self, i: usize) -> f64 {
        self.sigma3[i] / 3.0
    }

    pub fn any_at_bound(&self) -> bool {
        self.at_bound.iter().any(|&b| b)
    }
}

impl fmt::Display for FitResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for ((name, v), s) in self.names.iter().zip(&self.parameters).zip(&self.sigma3) {
            writeln!(f, "{name:>12} = {v:.6} ± {s:.3} (3σ)")?;
        }
        write!(
            f,
            "reduced χ² = {:.4}, iterations = {}, converged = {}",
            self.reduced_chi2, self.n_iterations, self.converged
        )
    }
}

/// Central-difference Jacobian `∂f(p, xᵢ)/∂pⱼ` with step `h·max(|pⱼ|, 1)`.
pub fn finite_diff_jacobian(model: &dyn Model, params: &[f64], xs: &[f64], h: f64) -> Result<DMatrix<f64>, FitError> {
    if !(h > 0.0 && h <= 1e-2) {
        return Err(FitError::Precondition(format!(
            "finite-difference step must lie in (0, 1e-2], got {h}"
        )));
    }
    let mut jac = DMatrix::zeros(xs.len(), params.len());
    let mut p = params.to_vec();
    for j in 0..params.len() {
        let step = h * params[j].abs().max(1.0);
        p[j] = params[j] + step;
        let plus: Vec<f64> = xs.iter().map(|&x| model.eval(&p, x)).collect();
        p[j] = params[j] - step;
        let minus: Vec<f64> = xs.iter().map(|&x| model.eval(&p, x)).collect();
        p[j] = params[j];
        for (i, (a, b)) in plus.iter().zip(&minus).enumerate() {
            let d = (a - b) / (2.0 * step);
            if !d.is_finite() {
                return Err(FitError::Evaluation(format!(
                    "non-finite derivative for parameter {j} at x = {}",
                    xs[i]
                )));
            }
            jac[(i, j)] = d;
        }
    }
    Ok(jac)
}

/// Analytic Jacobian if the model provides one, else `None`.
pub fn analytic_jacobian(model: &dyn Model, params: &[f64], xs: &[f64]) -> Option<DMatrix<f64>> {
    let mut jac = DMatrix::zeros(xs.len(), params.len());
    let mut row = vec![0.0; params.len()];
    for (i, &x) in xs.iter().enumerate() {
        if !model.partials(params, x, &mut row) {
            return None;
        }
        for (j, v) in row.iter().enumerate() {
            jac[(i, j)] = *v;
        }
    }
    Some(jac)
}

/// Largest disagreement between the analytic and central-difference
/// Jacobians, per column relative to the column's largest analytic entry.
/// Each column is compared at steps `h`, `h/10`, `h/100` and `10h` and
/// the closest agreement counts, so round-off in columns much smaller than
/// the model value does not mask a correct derivative. `None` if the model
/// has no analytic derivatives.
pub fn jacobian_mismatch(model: &dyn Model, params: &[f64], xs: &[f64], h: f64) -> Result<Option<f64>, FitError> {
    let Some(a) = analytic_jacobian(model, params, xs) else {
        return Ok(None);
    };
    let mut best = vec![f64::INFINITY; params.len()];
    for step in [h, h / 10.0, h / 100.0, (10.0 * h).min(1e-2)] {
        let f = finite_diff_jacobian(model, params, xs, step)?;
        for (j, b) in best.iter_mut().enumerate() {
            let scale = a.column(j).amax();
            let diff = (a.column(j) - f.column(j)).amax();
            *b = b.min(if scale > 0.0 { diff / scale } else { diff });
        }
    }
    Ok(Some(best.into_iter().fold(0.0, f64::max)))
}

struct Engine<'p, 'a> {
    problem: &'p FitProblem<'a>,
    free: Vec<usize>,
    fd_step: f64,
}

impl Engine<'_, '_> {
    /// Weighted Jacobian restricted to free parameters, as rows √w·∂f.
    fn jacobian(&self, params: &[f64]) -> Result<DMatrix<f64>, FitError> {
        let data = &self.problem.data;
        let model = self.problem.model;
        let xs: Vec<f64> = data.iter().map(|d| d.x).collect();
        let full = match analytic_jacobian(model, params, &xs) {
            Some(j) => j,
            None => self.fd_jacobian(params, &xs)?,
        };
        let mut jac = DMatrix::zeros(data.len(), self.free.len());
        for (i, d) in data.iter().enumerate() {
            let sw = d.weight.sqrt();
            for (c, &j) in self.free.iter().enumerate() {
                let v = full[(i, j)];
                if !v.is_finite() {
                    return Err(FitError::Evaluation(format!(
                        "non-finite derivative for parameter {j} at x = {}",
                        d.x
                    )));
                }
                jac[(i, c)] = sw * v;
            }
        }
        Ok(jac)
    }

    /// Finite differences that never step outside the bounds.
    fn fd_jacobian(&self, params: &[f64], xs: &[f64]) -> Result<DMatrix<f64>, FitError> {
        let model = self.problem.model;
        let mut jac = DMatrix::zeros(xs.len(), params.len());
        let mut p = params.to_vec();
        for &j in &self.free {
            let b = self.problem.bounds[j];
            let step = self.fd_step * params[j].abs().max(1e-8);
            let hi = (params[j] + step).min(b.upper);
            let lo = (params[j] - step).max(b.lower);
            let span = hi - lo;
            if span <= 0.0 {
                continue;
            }
            p[j] = hi;
            let plus: Vec<f64> = xs.iter().map(|&x| model.eval(&p, x)).collect();
            p[j] = lo;
            let minus: Vec<f64> = xs.iter().map(|&x| model.eval(&p, x)).collect();
            p[j] = params[j];
            for i in 0..xs.len() {
                jac[(i, j)] = (plus[i] - minus[i]) / span;
            }
        }
        Ok(jac)
    }

    /// Weighted residuals √w·(y − f).
    fn residuals(&self, params: &[f64]) -> Result<DVector<f64>, FitError> {
        let data = &self.problem.data;
        let mut r = DVector::zeros(data.len());
        for (i, d) in data.iter().enumerate() {
            let v = self.problem.model.eval(params, d.x);
            if !v.is_finite() {
                return Err(FitError::Evaluation(format!(
                    "model is not finite at x = {} for parameters {params:?}",
                    d.x
                )));
            }
            r[i] = d.weight.sqrt() * (d.y - v);
        }
        Ok(r)
    }

    fn project(&self, params: &mut [f64]) {
        for (p, b) in params.iter_mut().zip(&self.problem.bounds) {
            *p = b.clamp(*p);
        }
    }
}

/// Solves the weighted least-squares problem.
pub fn minimize(problem: &FitProblem, options: &FitOptions) -> Result<FitResult, FitError> {
    let n_params = problem.model.n_params();
    let free: Vec<usize> = (0..n_params).filter(|&j| !problem.bounds[j].is_fixed()).collect();
    let k = free.len();
    let n = problem.data.len();
    if n < k.max(1) {
        return Err(FitError::Precondition(format!(
            "{n} data points cannot determine {k} free parameters"
        )));
    }
    let engine = Engine {
        problem,
        free,
        fd_step: options.fd_step,
    };

    let mut params = problem.initial.clone();
    engine.project(&mut params);
    let mut resid = engine.residuals(&params)?;
    let mut cost = resid.norm_squared();
    // Scale for "exact fit" detection: the weighted data norm.
    let data_norm2: f64 = problem
        .data
        .iter()
        .map(|d| d.weight * d.y * d.y)
        .sum::<f64>()
        .max(f64::MIN_POSITIVE);

    let mut lambda = 1e-3;
    let mut converged = k == 0;
    let mut iterations = 0;

    while !converged && iterations < options.max_iter {
        iterations += 1;
        if cost <= 1e-28 * data_norm2 {
            converged = true;
            break;
        }
        let jac = engine.jacobian(&params)?;
        let jtj = jac.transpose() * &jac;
        let grad = jac.transpose() * &resid;

        let max_diag = (0..k).map(|c| jtj[(c, c)]).fold(0.0_f64, f64::max);
        let cosine = (0..k)
            .map(|c| {
                let d = jtj[(c, c)];
                if d > 0.0 {
                    grad[c].abs() / (d * cost).sqrt()
                } else {
                    0.0
                }
            })
            .fold(0.0_f64, f64::max);
        if cosine <= options.gradient_tol {
            converged = true;
            break;
        }

        let floor = (max_diag * 1e-15).max(f64::MIN_POSITIVE);
        let mut accepted = false;
        loop {
            let mut damped = jtj.clone();
            for c in 0..k {
                damped[(c, c)] += lambda * jtj[(c, c)].max(floor);
            }
            let step = match damped.clone().cholesky() {
                Some(ch) => ch.solve(&grad),
                None => {
                    lambda *= 10.0;
                    if lambda > 1e16 {
                        break;
                    }
                    continue;
                }
            };
            let mut trial = params.clone();
            for (c, &j) in engine.free.iter().enumerate() {
                trial[j] += step[c];
            }
            engine.project(&mut trial);
            let trial_resid = engine.residuals(&trial).ok();
            let trial_cost = trial_resid.as_ref().map(|r| r.norm_squared());
            match (trial_resid, trial_cost) {
                (Some(r), Some(c)) if c < cost => {
                    let step_norm: f64 = engine
                        .free
                        .iter()
                        .map(|&j| (trial[j] - params[j]).powi(2))
                        .sum::<f64>()
                        .sqrt();
                    let param_norm: f64 = engine.free.iter().map(|&j| params[j].powi(2)).sum::<f64>().sqrt();
                    let rel_step = step_norm / (param_norm + 1e-30);
                    let rel_cost = (cost - c) / cost;
                    params = trial;
                    resid = r;
                    cost = c;
                    lambda = (lambda / 10.0).max(1e-12);
                    accepted = true;
                    if (rel_step < options.step_tol && rel_cost < options.cost_tol) || cost <= 1e-28 * data_norm2 {
                        converged = true;
                    }
                    break;
                }
                _ => {
                    lambda *= 10.0;
                    if lambda > 1e16 {
                        break;
                    }
                }
            }
        }
        if !accepted {
            // No descent direction left within machine precision.
            converged = true;
        }
    }

    finish(&engine, params, cost, iterations, converged)
}

fn finish(
    engine: &Engine,
    params: Vec<f64>,
    cost: f64,
    iterations: usize,
    converged: bool,
) -> Result<FitResult, FitError> {
    let problem = engine.problem;
    let n_params = params.len();
    let names = problem.model.param_names();
    let k = engine.free.len();
    let n = problem.data.len();
    let dof = n.saturating_sub(k);
    let reduced_chi2 = if dof > 0 { cost / dof as f64 } else { 0.0 };

    let mut covariance = vec![vec![0.0; n_params]; n_params];
    if k > 0 {
        let jac = engine.jacobian(&params)?;
        let jtj = jac.transpose() * &jac;

        // A parameter with no influence on the model cannot be identified.
        for (c, &j) in engine.free.iter().enumerate() {
            if !(jtj[(c, c)] > 0.0) {
                return Err(FitError::Degenerate {
                    direction: format!("parameter `{}`", names[j]),
                });
            }
        }

        let d: Vec<f64> = (0..k).map(|c| 1.0 / jtj[(c, c)].sqrt()).collect();
        let scaled = DMatrix::from_fn(k, k, |a, b| jtj[(a, b)] * d[a] * d[b]);
        let eig = SymmetricEigen::new(scaled);
        let max_ev = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
        let (min_idx, min_ev) = eig
            .eigenvalues
            .iter()
            .cloned()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("at least one eigenvalue");
        if min_ev <= 1e-12 * max_ev {
            let v = eig.eigenvectors.column(min_idx);
            let terms: Vec<String> = engine
                .free
                .iter()
                .enumerate()
                .filter(|(c, _)| v[*c].abs() > 1e-3)
                .map(|(c, &j)| format!("{:+.3}·{}", v[c], names[j]))
                .collect();
            return Err(FitError::Degenerate {
                direction: terms.join(" "),
            });
        }
        // (JᵀWJ)⁻¹ = D V Λ⁻¹ Vᵀ D
        let inv_lambda = DMatrix::from_diagonal(&eig.eigenvalues.map(|e| 1.0 / e));
        let inv_scaled = &eig.eigenvectors * inv_lambda * eig.eigenvectors.transpose();
        for (a, &ja) in engine.free.iter().enumerate() {
            for (b, &jb) in engine.free.iter().enumerate() {
                let v = 0.5 * (inv_scaled[(a, b)] + inv_scaled[(b, a)]) * d[a] * d[b];
                covariance[ja][jb] = reduced_chi2 * v;
            }
        }
    }

    let sigma3 = (0..n_params).map(|i| 3.0 * covariance[i][i].max(0.0).sqrt()).collect();
    let at_bound = params.iter().zip(&problem.bounds).map(|(p, b)| b.touches(*p)).collect();
    Ok(FitResult {
        names,
        parameters: params,
        covariance,
        chi2: cost,
        reduced_chi2,
        dof,
        n_iterations: iterations,
        converged,
        sigma3,
        at_bound,
        n_free: k,
    })
}
