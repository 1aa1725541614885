//! The infinite-width tangent kernel of the linearized model on indicator
//! random features, kernel ridge regression against it, and the sample-size
//! lower-bound harness on pure high-degree targets.

use crate::linalg::{spd_solve, sym_min_eig};
use crate::synth::sample_sphere;
use crate::{Error, Result};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhiPrimeKind {
    Indicator,
    Relu,
}

/// Closed forms for the infinite-width limit kernel: the bottom activation is
/// the indicator, the top derivative `phi'` is selectable.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct InfiniteKernel {
    pub phi_prime: PhiPrimeKind,
}

fn check_unit(x: ArrayView1<f64>) -> Result<()> {
    let norm = x.dot(&x).sqrt();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "kernel inputs must be unit norm (|x| = {norm:.12})"
        )));
    }
    Ok(())
}

/// `E_{v,b}[1{v.x + b >= 0} 1{v.x' + b >= 0}]` for standard normal `v, b`:
/// the orthant probability at the augmented correlation `(x.x' + 1)/2`.
pub fn sigma12(x: ArrayView1<f64>, x_prime: ArrayView1<f64>) -> Result<f64> {
    check_unit(x)?;
    check_unit(x_prime)?;
    Ok(sigma12_from_dot(x.dot(&x_prime)))
}

pub(crate) fn sigma12_from_dot(t: f64) -> f64 {
    let rho = ((t + 1.0) / 2.0).clamp(-1.0, 1.0);
    0.25 + rho.asin() / (2.0 * std::f64::consts::PI)
}

impl InfiniteKernel {
    pub fn new(phi_prime: PhiPrimeKind) -> Self {
        Self { phi_prime }
    }

    /// Kernel value from the raw inner product `t = x.x'`.
    ///
    /// The pre-activation pair `(w0 . g(x)/sqrt(D), w0 . g(x')/sqrt(D))` has
    /// second moments `Sigma11 = Sigma22 = 1/2` and cross moment `Sigma12`,
    /// so the derivative factor is an orthant probability (indicator) or the
    /// first-order arc-cosine form (relu), times `Sigma12`.
    pub fn value_from_dot(&self, t: f64) -> f64 {
        let s12 = sigma12_from_dot(t);
        let s11 = 0.5;
        let rho_g = (s12 / s11).clamp(-1.0, 1.0);
        let derivative_factor = match self.phi_prime {
            PhiPrimeKind::Indicator => 0.25 + rho_g.asin() / (2.0 * std::f64::consts::PI),
            PhiPrimeKind::Relu => {
                let theta = rho_g.acos();
                s11 * (theta.sin() + (std::f64::consts::PI - theta) * theta.cos())
                    / (2.0 * std::f64::consts::PI)
            }
        };
        derivative_factor * s12
    }

    pub fn value(&self, x: ArrayView1<f64>, x_prime: ArrayView1<f64>) -> Result<f64> {
        check_unit(x)?;
        check_unit(x_prime)?;
        Ok(self.value_from_dot(x.dot(&x_prime)))
    }

    /// Symmetric Gram matrix of unit-norm rows.
    pub fn gram(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let dots = x.dot(&x.t());
        dots.mapv(|t| self.value_from_dot(t))
    }

    /// Cross Gram between two sets of unit-norm rows.
    pub fn cross_gram(&self, a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
        let dots = a.dot(&b.t());
        dots.mapv(|t| self.value_from_dot(t))
    }
}

/// A fitted kernel ridge predictor `f(x) = sum_i alpha_i K(x, x_i)`.
#[derive(Debug, Clone)]
pub struct KernelPredictor {
    pub support_x: Array2<f64>,
    pub dual_coeffs: Array1<f64>,
    pub ridge_lambda: f64,
    pub kernel: InfiniteKernel,
}

impl KernelPredictor {
    pub fn predict_batch(&self, x: ArrayView2<f64>) -> Array1<f64> {
        self.kernel.cross_gram(x, self.support_x.view()).dot(&self.dual_coeffs)
    }

    pub fn predict(&self, x: ArrayView1<f64>) -> f64 {
        self.predict_batch(x.insert_axis(Axis(0)))[0]
    }
}

/// Solve `(K + lambda n I) alpha = y` by Cholesky with one step of iterative
/// refinement, and verify the residual is below `1e-8 |y|`.
pub fn kernel_ridge_fit(
    kernel: InfiniteKernel,
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    ridge_lambda: f64,
) -> Result<KernelPredictor> {
    if ridge_lambda <= 0.0 {
        return Err(Error::InvalidArgument("ridge lambda must be positive".into()));
    }
    let n = x.nrows();
    if n == 0 || y.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{n} support rows but {} labels",
            y.len()
        )));
    }
    let mut system = kernel.gram(x);
    for i in 0..n {
        system[[i, i]] += ridge_lambda * n as f64;
    }
    let y_owned = y.to_owned();
    let mut alpha = match spd_solve(&system, &y_owned) {
        Ok(a) => a,
        Err(_) => {
            let min_eig = sym_min_eig(&kernel.gram(x))?;
            return Err(Error::Numerical(format!(
                "ridge system factorization failed; smallest Gram eigenvalue = {min_eig:.6e}"
            )));
        }
    };
    // one refinement step, then enforce the residual contract
    let resid = &y_owned - &system.dot(&alpha);
    if let Ok(correction) = spd_solve(&system, &resid) {
        alpha += &correction;
    }
    let resid_norm = (&y_owned - &system.dot(&alpha)).mapv(|v| v * v).sum().sqrt();
    let y_norm = y_owned.mapv(|v| v * v).sum().sqrt();
    if resid_norm > 1e-8 * y_norm.max(1e-300) {
        let min_eig = sym_min_eig(&kernel.gram(x))?;
        return Err(Error::Numerical(format!(
            "ridge solve residual {resid_norm:.3e} exceeds 1e-8 |y|; smallest Gram eigenvalue = {min_eig:.6e}"
        )));
    }
    Ok(KernelPredictor {
        support_x: x.to_owned(),
        dual_coeffs: alpha,
        ridge_lambda,
        kernel,
    })
}

/// Coefficients of the Gegenbauer polynomial `C_p^{(lambda)}` in the monomial
/// basis, by the three-term recurrence.
fn gegenbauer_coeffs(p: usize, lambda: f64) -> Vec<f64> {
    let mut prev = vec![1.0];
    if p == 0 {
        return prev;
    }
    let mut cur = vec![0.0, 2.0 * lambda];
    for k in 1..p {
        let mut next = vec![0.0; k + 2];
        for (i, &c) in cur.iter().enumerate() {
            next[i + 1] += 2.0 * (k as f64 + lambda) * c;
        }
        for (i, &c) in prev.iter().enumerate() {
            next[i] -= (k as f64 + 2.0 * lambda - 1.0) * c;
        }
        for c in next.iter_mut() {
            *c /= (k + 1) as f64;
        }
        prev = cur;
        cur = next;
    }
    cur
}

/// `E[t^j]` for `t = w.x`, `x ~ Unif(S^{d-1})`, `|w| = 1`.
fn sphere_projection_moment(j: usize, d: usize) -> f64 {
    if j % 2 == 1 {
        return 0.0;
    }
    let p = j / 2;
    let num: f64 = (0..p).map(|i| (2 * i + 1) as f64).product();
    let den: f64 = (0..p).map(|i| (d + 2 * i) as f64).product();
    num / den
}

/// A unit-L2 function of `w.x` that is a *pure* degree-`p` polynomial on the
/// sphere: all of its L2 mass sits in harmonic degree exactly `p`, so it is
/// orthogonal to every polynomial of lower degree.
#[derive(Debug, Clone)]
pub struct PureDegreeTarget {
    pub direction: Array1<f64>,
    pub degree: usize,
    coeffs: Vec<f64>,
    norm: f64,
}

impl PureDegreeTarget {
    /// Gegenbauer polynomial of the projection on a random direction,
    /// normalized to unit L2 norm by the exact moment formula.
    pub fn new(d: usize, p: usize, seed: u64) -> Result<Self> {
        if d < 3 {
            return Err(Error::InvalidArgument(
                "pure-degree targets need d >= 3 for the Gegenbauer weight".into(),
            ));
        }
        let direction = sample_sphere(d, 1, seed ^ 0x6765_6765).row(0).to_owned();
        let lambda = (d as f64 - 2.0) / 2.0;
        let coeffs = gegenbauer_coeffs(p, lambda);
        let mut norm_sq = 0.0;
        for (i, &ci) in coeffs.iter().enumerate() {
            for (j, &cj) in coeffs.iter().enumerate() {
                norm_sq += ci * cj * sphere_projection_moment(i + j, d);
            }
        }
        Ok(Self { direction, degree: p, coeffs, norm: norm_sq.sqrt() })
    }

    pub fn evaluate_batch(&self, x: ArrayView2<f64>) -> Array1<f64> {
        let proj = x.dot(&self.direction);
        proj.mapv(|t| {
            let mut acc = 0.0;
            let mut pow = 1.0;
            for &c in &self.coeffs {
                acc += c * pow;
                pow *= t;
            }
            acc / self.norm
        })
    }
}

/// Log-spaced default ridge grid, 12 values spanning 1e-6 to 1e2.
pub fn default_lambda_grid() -> Vec<f64> {
    (0..12).map(|i| 10f64.powf(-6.0 + 8.0 * i as f64 / 11.0)).collect()
}

/// One row of the per-lambda table emitted by [`lower_bound_run`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LambdaRow {
    pub lambda: f64,
    pub train_mse: f64,
    pub test_mse: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone)]
pub struct LowerBoundReport {
    /// `min over lambda of test MSE / E[f*^2]`; 1.0 is the zero predictor.
    pub best_ratio: f64,
    pub rows: Vec<LambdaRow>,
}

/// Fit the kernel ridge predictor on a pure degree-`p` target for every
/// lambda in the grid and report best-case test MSE relative to the target's
/// second moment.
pub fn lower_bound_run(
    kernel: InfiniteKernel,
    d: usize,
    p: usize,
    n: usize,
    lambda_grid: &[f64],
    seed: u64,
) -> Result<LowerBoundReport> {
    if lambda_grid.is_empty() {
        return Err(Error::InvalidArgument("lambda grid must be nonempty".into()));
    }
    let target = PureDegreeTarget::new(d, p, seed)?;
    let x_train = sample_sphere(d, n, seed ^ 0x6c62_7472);
    let x_test = sample_sphere(d, 4000, seed ^ 0x6c62_7465);
    let y_train = target.evaluate_batch(x_train.view());
    let y_test = target.evaluate_batch(x_test.view());
    let target_power = y_test.mapv(|v| v * v).mean().unwrap();

    let mut rows = Vec::with_capacity(lambda_grid.len());
    let mut best_ratio = f64::INFINITY;
    for &lambda in lambda_grid {
        let predictor = kernel_ridge_fit(kernel, x_train.view(), y_train.view(), lambda)?;
        let train_pred = predictor.predict_batch(x_train.view());
        let test_pred = predictor.predict_batch(x_test.view());
        let train_mse = (&train_pred - &y_train).mapv(|v| v * v).mean().unwrap();
        let test_mse = (&test_pred - &y_test).mapv(|v| v * v).mean().unwrap();
        let ratio = test_mse / target_power;
        best_ratio = best_ratio.min(ratio);
        rows.push(LambdaRow { lambda, train_mse, test_mse, ratio });
    }
    Ok(LowerBoundReport { best_ratio, rows })
}
