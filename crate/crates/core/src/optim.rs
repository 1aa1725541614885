//! Full-batch perturbed gradient descent to an approximate second-order
//! stationary point, with a certificate.
//!
//! The loop takes Armijo backtracking gradient steps while the gradient is
//! large. Once it is small, it draws a uniform ball perturbation and runs a
//! burst of fixed-step descent; if the objective drops by more than
//! `hess_tol * radius^2 / 2` the escape is accepted, otherwise the point is
//! certified by a shifted power iteration on the Hessian and the loop stops.
//! Everything is deterministic given the config seed.

use crate::linalg::fro_norm;
use crate::loss::LossKind;
use crate::rng::substream;
use crate::taylor::{
    hessian_quadratic_form_with, norm24, risk_grad_with, risk_hvp_with, Batch, ModelKind,
    Regularizer, TaylorModel,
};
use crate::{Error, Result};
use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// A twice-differentiable objective over a weight matrix.
pub trait Objective {
    /// (rows, cols) of the weight matrix.
    fn shape(&self) -> (usize, usize);
    fn value(&self, w: &Array2<f64>) -> Result<f64>;
    fn value_and_grad(&self, w: &Array2<f64>) -> Result<(f64, Array2<f64>)>;
    /// Hessian-vector product at `w` along `u`.
    fn hvp(&self, w: &Array2<f64>, u: &Array2<f64>) -> Result<Array2<f64>>;
    /// (unregularized risk, regularizer value) at `w`; used for reporting.
    fn risk_components(&self, w: &Array2<f64>) -> Result<(f64, f64)> {
        Ok((self.value(w)?, 0.0))
    }
    /// A reusable Hessian-vector operator pinned at `w`. The default calls
    /// [`Objective::hvp`]; objectives that can precompute per-point state
    /// override this so repeated products (power iteration) come cheap.
    fn hvp_operator<'s>(&'s self, w: &Array2<f64>) -> Result<HvpOperator<'s>> {
        let w = w.clone();
        Ok(Box::new(move |u| self.hvp(&w, u)))
    }
}

/// A Hessian-vector product pinned at one point.
pub type HvpOperator<'s> = Box<dyn Fn(&Array2<f64>) -> Result<Array2<f64>> + 's>;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimConfig {
    /// Largest step the Armijo search will try; the search halves from here.
    pub step_size: f64,
    /// Gradient norm tolerance (epsilon_g).
    pub grad_tol: f64,
    /// Negative-curvature tolerance (epsilon_H).
    pub hess_tol: f64,
    pub perturb_radius: f64,
    /// Fixed-step descent steps after each perturbation.
    pub escape_steps: usize,
    pub max_iters: usize,
    /// Random starts of the Hessian eigenvalue estimator.
    pub probes: usize,
    pub seed: u64,
}

impl OptimConfig {
    /// Defaults with the gradient tolerance tied to the objective scale:
    /// `grad_tol = 1e-4 (1 + initial_value)`.
    pub fn for_initial_value(initial_value: f64, seed: u64) -> Self {
        Self {
            step_size: 64.0,
            grad_tol: 1e-4 * (1.0 + initial_value.max(0.0)),
            hess_tol: 1e-2,
            perturb_radius: 1e-3,
            escape_steps: 50,
            max_iters: 400,
            probes: 8,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.grad_tol <= 0.0
            || self.hess_tol <= 0.0
            || self.perturb_radius <= 0.0
            || self.step_size <= 0.0
        {
            return Err(Error::InvalidArgument("optimizer tolerances must be positive".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidArgument("max_iters must be >= 1".into()));
        }
        Ok(())
    }
}

/// What the optimizer can report about the returned point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SospCertificate {
    pub grad_norm: f64,
    pub min_hess_eig_est: f64,
    pub reg_risk: f64,
    pub plain_risk: f64,
    pub norm24_value: f64,
    pub iters: usize,
}

/// One line of the optimizer trace.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub risk: f64,
    pub reg_risk: f64,
    pub grad_norm: f64,
    pub event: String,
}

/// Regularization strength rule `lambda = (2 tau M + eps) / (36 B_{w*}^4)`.
pub fn lambda_rule(tau: f64, m_ref: f64, eps: f64, b_w_star: f64) -> Result<f64> {
    if b_w_star <= 0.0 {
        return Err(Error::InvalidArgument("lambda rule needs B_{w,*} > 0".into()));
    }
    if tau < 0.0 || m_ref < 0.0 || eps < 0.0 {
        return Err(Error::InvalidArgument("lambda rule needs tau, M, eps >= 0".into()));
    }
    Ok((2.0 * tau * m_ref + eps) / (36.0 * b_w_star.powi(4)))
}

/// The constructive norm-radius default `(108 r*^2)^{1/4}` for a rank-`r*`
/// polynomial target.
pub fn b_w_star_default(r_star: usize) -> f64 {
    (108.0 * (r_star * r_star) as f64).powf(0.25)
}

/// Every stationary point of the regularized risk satisfies
/// `|W|_{2,4} <= (2 lambda)^{-1/4}`; check it with 5% numerical slack.
pub fn stationary_norm_bound_check(w_hat: &Array2<f64>, lambda: f64) -> bool {
    assert!(lambda > 0.0, "stationary norm bound needs lambda > 0");
    norm24(w_hat) <= 1.05 * (2.0 * lambda).powf(-0.25)
}

fn uniform_ball(shape: (usize, usize), radius: f64, rng: &mut ChaCha12Rng) -> Array2<f64> {
    let mut dir = Array2::from_shape_fn(shape, |_| rng.sample::<f64, _>(StandardNormal));
    let norm = fro_norm(&dir.view()).max(1e-300);
    let n = (shape.0 * shape.1) as f64;
    let r = radius * rng.random::<f64>().powf(1.0 / n);
    dir.mapv_inplace(|v| v * r / norm);
    dir
}

/// Estimate the smallest Hessian eigenvalue of `objective` at `w` by shifted
/// power iteration on `sigma I - H`, using only Hessian-vector products.
/// `probes` independent random starts are run and the smallest estimate wins.
pub fn min_hess_eig_estimate(
    objective: &dyn Objective,
    w: &Array2<f64>,
    probes: usize,
    seed: u64,
) -> Result<f64> {
    assert!(probes >= 1);
    let shape = objective.shape();
    let hvp = objective.hvp_operator(w)?;
    let mut rng = substream(seed, "hess.probes");
    let normalize = |u: &mut Array2<f64>| {
        let n = fro_norm(&u.view()).max(1e-300);
        u.mapv_inplace(|v| v / n);
    };

    // dominant |eigenvalue| to pick the shift
    let mut u = Array2::from_shape_fn(shape, |_| rng.sample::<f64, _>(StandardNormal));
    normalize(&mut u);
    let mut dominant = 0.0f64;
    for _ in 0..50 {
        let mut hu = hvp(&u)?;
        let rayleigh = (&u * &hu).sum();
        if (rayleigh.abs() - dominant.abs()).abs() <= 1e-6 * dominant.abs().max(1e-12) {
            dominant = rayleigh;
            break;
        }
        dominant = rayleigh;
        normalize(&mut hu);
        u = hu;
    }
    let sigma = 1.1 * dominant.abs() + 1e-6;

    // power iteration on sigma I - H; its top eigenvalue is sigma - lambda_min
    let mut best = f64::INFINITY;
    for _ in 0..probes {
        let mut v = Array2::from_shape_fn(shape, |_| rng.sample::<f64, _>(StandardNormal));
        normalize(&mut v);
        let mut prev = f64::NEG_INFINITY;
        let mut top = 0.0;
        for it in 0..120 {
            let hv = hvp(&v)?;
            let mut bv = &v * sigma - &hv;
            top = (&v * &bv).sum();
            if it >= 10 && (top - prev).abs() <= 1e-7 * top.abs().max(1e-12) {
                break;
            }
            prev = top;
            normalize(&mut bv);
            v = bv;
        }
        best = best.min(sigma - top);
    }
    Ok(best)
}

/// Result of [`find_sosp`]: the weights, the certificate, and the iteration
/// trace.
pub struct SospOutcome {
    pub w_hat: Array2<f64>,
    pub certificate: SospCertificate,
    pub trace: Vec<TraceRow>,
}

/// Minimize `objective` from the zero matrix to an approximate second-order
/// stationary point.
pub fn find_sosp(objective: &dyn Objective, config: &OptimConfig) -> Result<SospOutcome> {
    let start = Array2::zeros(objective.shape());
    find_sosp_from(objective, start, config)
}

/// Minimize from an explicit starting point.
pub fn find_sosp_from(
    objective: &dyn Objective,
    start: Array2<f64>,
    config: &OptimConfig,
) -> Result<SospOutcome> {
    config.validate()?;
    let mut rng = substream(config.seed, "optim.perturb");
    let mut w = start;
    let (mut value, mut grad) = objective.value_and_grad(&w)?;
    if !value.is_finite() {
        return Err(Error::Numerical("objective is not finite at the start point".into()));
    }
    let mut trace = Vec::new();
    let mut iters = 0usize;
    let mut last_step = config.step_size;
    let mut min_eig_est: Option<f64> = None;

    let record = |trace: &mut Vec<TraceRow>,
                  objective: &dyn Objective,
                  iter: usize,
                  w: &Array2<f64>,
                  reg_risk: f64,
                  grad_norm: f64,
                  event: &str| {
        let (plain, _) = objective.risk_components(w).unwrap_or((f64::NAN, 0.0));
        trace.push(TraceRow { iter, risk: plain, reg_risk, grad_norm, event: event.to_string() });
    };

    record(&mut trace, objective, 0, &w, value, fro_norm(&grad.view()), "start");

    while iters < config.max_iters {
        let grad_norm = fro_norm(&grad.view());
        if grad_norm > config.grad_tol {
            // Armijo backtracking, halving from the configured step size;
            // non-finite trial values just reject the step like any other
            // failed sufficient-decrease test
            let mut step = config.step_size;
            let mut accepted = false;
            let mut any_finite = false;
            for _ in 0..60 {
                let cand = &w - &(&grad * step);
                let cand_value = objective.value(&cand)?;
                any_finite |= cand_value.is_finite();
                if cand_value.is_finite()
                    && cand_value <= value - 1e-4 * step * grad_norm * grad_norm
                {
                    w = cand;
                    let vg = objective.value_and_grad(&w)?;
                    value = vg.0;
                    grad = vg.1;
                    last_step = step;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            iters += 1;
            if !accepted {
                if !any_finite {
                    return Err(Error::Numerical(
                        "objective is non-finite along the whole descent ray".into(),
                    ));
                }
                // descent stalled at numerical precision; treat as stationary
                record(&mut trace, objective, iters, &w, value, grad_norm, "stall");
                break;
            }
            if iters % 16 == 0 {
                record(&mut trace, objective, iters, &w, value, fro_norm(&grad.view()), "step");
            }
            continue;
        }

        // small gradient: perturb and run a fixed-step escape burst; if the
        // burst blows up, restart it from the same perturbed point with a
        // halved step (still deterministic)
        let perturbation = uniform_ball(objective.shape(), config.perturb_radius, &mut rng);
        let start = &w + &perturbation;
        let mut escape_step = last_step;
        let mut escaped: Option<(f64, Array2<f64>)> = None;
        'restart: for _ in 0..10 {
            let mut cand = start.clone();
            for _ in 0..config.escape_steps {
                let (cv, cg) = objective.value_and_grad(&cand)?;
                if !cv.is_finite() || cv > value.abs() * 10.0 + 10.0 {
                    escape_step *= 0.5;
                    continue 'restart;
                }
                cand = &cand - &(&cg * escape_step);
            }
            let cand_value = objective.value(&cand)?;
            if cand_value.is_finite() {
                escaped = Some((cand_value, cand));
                break;
            }
            escape_step *= 0.5;
        }
        iters += config.escape_steps;
        let threshold = config.hess_tol * config.perturb_radius * config.perturb_radius / 2.0;
        if let Some((cand_value, cand)) = escaped {
            if value - cand_value > threshold {
                let vg = objective.value_and_grad(&cand)?;
                w = cand;
                value = vg.0;
                grad = vg.1;
                record(&mut trace, objective, iters, &w, value, fro_norm(&grad.view()), "escape");
                continue;
            }
        }
        // escape failed: certify and stop
        let est = min_hess_eig_estimate(objective, &w, config.probes, config.seed)?;
        min_eig_est = Some(est);
        record(&mut trace, objective, iters, &w, value, fro_norm(&grad.view()), "certify");
        break;
    }

    let grad_norm = fro_norm(&grad.view());
    let min_hess_eig_est = match min_eig_est {
        Some(e) => e,
        None => min_hess_eig_estimate(objective, &w, config.probes, config.seed)?,
    };
    let (plain_risk, _) = objective.risk_components(&w)?;
    let certificate = SospCertificate {
        grad_norm,
        min_hess_eig_est,
        reg_risk: value,
        plain_risk,
        norm24_value: norm24(&w),
        iters,
    };
    Ok(SospOutcome { w_hat: w, certificate, trace })
}

/// The regularized empirical risk of a Taylor model on a fixed batch, as an
/// optimizer objective. Gates are precomputed once; every evaluation is two
/// BLAS products.
pub struct RegularizedRisk<'a> {
    pub model: &'a TaylorModel,
    pub loss: LossKind,
    pub batch: Batch<'a>,
    pub reg: Regularizer,
    gates: Array2<f64>,
}

impl<'a> RegularizedRisk<'a> {
    pub fn new(
        model: &'a TaylorModel,
        loss: LossKind,
        batch: Batch<'a>,
        reg: Regularizer,
    ) -> Result<Self> {
        let gates = model.gates(batch.h)?;
        Ok(Self { model, loss, batch, reg, gates })
    }

    fn plain_risk(&self, w: &Array2<f64>) -> f64 {
        use crate::loss::Loss;
        let f = self.model.forward_batch_with(self.batch.h, &self.gates, w);
        let vals: Vec<f64> = f
            .iter()
            .zip(self.batch.y.iter())
            .map(|(&z, &y)| self.loss.value(z, y))
            .collect();
        crate::linalg::pairwise_mean(&vals)
    }

    /// Directional second derivative along `w_star` (risk plus regularizer).
    pub fn hessian_quadratic_form(&self, w: &Array2<f64>, w_star: &Array2<f64>) -> Result<f64> {
        let risk = hessian_quadratic_form_with(
            self.model, self.loss, self.batch, &self.gates, w, w_star,
        );
        let reg_hvp = self.reg.hvp(w, w_star)?;
        Ok(risk + (&reg_hvp * w_star).sum())
    }
}

impl Objective for RegularizedRisk<'_> {
    fn shape(&self) -> (usize, usize) {
        (self.model.width(), self.model.dim())
    }

    fn value(&self, w: &Array2<f64>) -> Result<f64> {
        let (reg_value, _) = self.reg.value_and_grad(w)?;
        Ok(self.plain_risk(w) + reg_value)
    }

    fn value_and_grad(&self, w: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
        let (reg_value, reg_grad) = self.reg.value_and_grad(w)?;
        let risk_grad = risk_grad_with(self.model, self.loss, self.batch, &self.gates, w);
        Ok((self.plain_risk(w) + reg_value, risk_grad + reg_grad))
    }

    fn hvp(&self, w: &Array2<f64>, u: &Array2<f64>) -> Result<Array2<f64>> {
        let risk = risk_hvp_with(self.model, self.loss, self.batch, &self.gates, w, u);
        Ok(risk + self.reg.hvp(w, u)?)
    }

    fn risk_components(&self, w: &Array2<f64>) -> Result<(f64, f64)> {
        let (reg_value, _) = self.reg.value_and_grad(w)?;
        Ok((self.plain_risk(w), reg_value))
    }

    // Pin the point: scores and loss derivatives are reused across products,
    // leaving two BLAS products per call.
    fn hvp_operator<'s>(&'s self, w: &Array2<f64>) -> Result<super::optim::HvpOperator<'s>> {
        use crate::loss::Loss;
        let w = w.clone();
        let scores = self.batch.h.dot(&w.t());
        let f = self.model.forward_batch_with(self.batch.h, &self.gates, &w);
        let n = self.batch.len();
        let lp = Array1::from_shape_fn(n, |i| self.loss.d1(f[i], self.batch.y[i]));
        let lpp = Array1::from_shape_fn(n, |i| self.loss.d2(f[i], self.batch.y[i]));
        let m_sqrt = (self.model.width() as f64).sqrt();
        let kind = self.model.kind;
        Ok(Box::new(move |u: &Array2<f64>| {
            let scores_u = self.batch.h.dot(&u.t());
            let risk_part = match kind {
                ModelKind::Quadratic => {
                    let y_tilde = (&scores * &scores_u * &self.gates).sum_axis(Axis(1))
                        * (0.5 / m_sqrt);
                    let a = &scores_u * &self.gates * &lp.view().insert_axis(Axis(1));
                    let b = &scores
                        * &self.gates
                        * &(2.0 * &lpp * &y_tilde).view().insert_axis(Axis(1));
                    (a + b).t().dot(&self.batch.h) / (n as f64 * m_sqrt)
                }
                ModelKind::Linearized => {
                    let f_u = (&scores_u * &self.gates).sum_axis(Axis(1)) * (1.0 / m_sqrt);
                    let weighted = &self.gates * &(&lpp * &f_u).view().insert_axis(Axis(1));
                    weighted.t().dot(&self.batch.h) / (n as f64 * m_sqrt)
                }
            };
            Ok(risk_part + self.reg.hvp(&w, u)?)
        }))
    }
}
