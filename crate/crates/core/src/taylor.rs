//! Quadratic and linearized Taylor models on a fixed representation, their
//! exact batch gradient and Hessian quadratic form, the (2,4)-norm, and both
//! regularizers.
//!
//! For the quadratic model `f(x) = 1/(2 sqrt m) sum_r a_r phi''(w0_r . h) (w_r . h)^2`
//! everything reduces to two matrices per batch: the activation pattern
//! `Phi[i][r] = a_r phi''(w0_r . h_i)` (fixed, since `W0` is frozen) and the
//! scores `S = H W^T`. The gradient and Hessian are assembled in closed form
//! from these; no autodiff anywhere.

use crate::loss::{Loss, LossKind};
use crate::rng::substream;
use crate::{Error, Result};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Second-order Taylor model; activation second derivative is the
    /// indicator `1{t >= 0}`.
    Quadratic,
    /// First-order (tangent) model; activation first derivative is relu.
    Linearized,
}

/// A Taylor model with frozen init `W0`, frozen signs `a`, and trainable
/// weight-movement matrix `W` (initialized at zero).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaylorModel {
    pub w0: Array2<f64>,
    pub a: Array1<f64>,
    pub w: Array2<f64>,
    pub kind: ModelKind,
    pub seed: u64,
}

impl TaylorModel {
    /// Fresh model: `W0` standard normal, `a` Rademacher, `W = 0`. Both
    /// frozen tensors come from named sub-streams of `seed`.
    pub fn init(width: usize, dim: usize, kind: ModelKind, seed: u64) -> Result<Self> {
        if width == 0 || dim == 0 {
            return Err(Error::InvalidArgument(format!(
                "model needs width >= 1 and dim >= 1, got width={width}, dim={dim}"
            )));
        }
        let mut rng_w0 = substream(seed, "model.w0");
        let w0 = Array2::from_shape_fn((width, dim), |_| rng_w0.sample(StandardNormal));
        let mut rng_a = substream(seed, "model.a");
        let a = Array1::from_shape_fn(width, |_| if rng_a.random::<bool>() { 1.0 } else { -1.0 });
        Ok(Self { w0, a, w: Array2::zeros((width, dim)), kind, seed })
    }

    pub fn width(&self) -> usize {
        self.w0.nrows()
    }

    pub fn dim(&self) -> usize {
        self.w0.ncols()
    }

    /// Signed activation pattern of a batch: `Phi[i][r] = a_r phi''(w0_r . h_i)`
    /// for the quadratic model, `a_r phi'(w0_r . h_i)` (relu) for the
    /// linearized one. Depends only on the frozen tensors.
    pub fn gates(&self, h: ArrayView2<f64>) -> Result<Array2<f64>> {
        if h.ncols() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "representation has dim {}, model expects {}",
                h.ncols(),
                self.dim()
            )));
        }
        let pre = h.dot(&self.w0.t());
        let mut phi = pre;
        match self.kind {
            ModelKind::Quadratic => {
                phi.mapv_inplace(|t| if t >= 0.0 { 1.0 } else { 0.0 });
            }
            ModelKind::Linearized => {
                phi.mapv_inplace(|t| t.max(0.0));
            }
        }
        phi *= &self.a;
        Ok(phi)
    }

    /// Model outputs for a batch given precomputed gates and an explicit
    /// weight matrix.
    pub fn forward_batch_with(
        &self,
        h: ArrayView2<f64>,
        gates: &Array2<f64>,
        w: &Array2<f64>,
    ) -> Array1<f64> {
        let scores = h.dot(&w.t());
        let m = self.width() as f64;
        match self.kind {
            ModelKind::Quadratic => {
                let scale = 0.5 / m.sqrt();
                (&scores * &scores * gates).sum_axis(Axis(1)) * scale
            }
            ModelKind::Linearized => {
                let scale = 1.0 / m.sqrt();
                (&scores * gates).sum_axis(Axis(1)) * scale
            }
        }
    }

    /// Model outputs for a batch using the model's own weights.
    pub fn forward_batch(&self, h: ArrayView2<f64>) -> Result<Array1<f64>> {
        let gates = self.gates(h)?;
        Ok(self.forward_batch_with(h, &gates, &self.w))
    }

    /// Model output on a single representation vector.
    pub fn forward(&self, h: ArrayView1<f64>) -> Result<f64> {
        let h2 = h.insert_axis(Axis(0));
        Ok(self.forward_batch(h2)?[0])
    }
}

/// A labeled batch in representation space.
#[derive(Clone, Copy)]
pub struct Batch<'a> {
    pub h: ArrayView2<'a, f64>,
    pub y: ArrayView1<'a, f64>,
}

impl<'a> Batch<'a> {
    pub fn new(h: ArrayView2<'a, f64>, y: ArrayView1<'a, f64>) -> Result<Self> {
        if h.nrows() != y.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} representation rows but {} labels",
                h.nrows(),
                y.len()
            )));
        }
        if h.nrows() == 0 {
            return Err(Error::InvalidArgument("batch must be nonempty".into()));
        }
        Ok(Self { h, y })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// Mean loss of the model on a batch.
pub fn risk_value(model: &TaylorModel, loss: LossKind, batch: Batch<'_>) -> Result<f64> {
    let f = model.forward_batch(batch.h)?;
    let vals: Vec<f64> =
        f.iter().zip(batch.y.iter()).map(|(&z, &y)| loss.value(z, y)).collect();
    Ok(crate::linalg::pairwise_mean(&vals))
}

/// Exact gradient of the unregularized empirical risk with respect to `W`.
///
/// Quadratic model, row `r`:
/// `1/(n sqrt m) sum_i l'_i Phi[i][r] (w_r . h_i) h_i`;
/// linearized model drops the score factor.
pub fn risk_grad(model: &TaylorModel, loss: LossKind, batch: Batch<'_>) -> Result<Array2<f64>> {
    let gates = model.gates(batch.h)?;
    Ok(risk_grad_with(model, loss, batch, &gates, &model.w))
}

pub(crate) fn risk_grad_with(
    model: &TaylorModel,
    loss: LossKind,
    batch: Batch<'_>,
    gates: &Array2<f64>,
    w: &Array2<f64>,
) -> Array2<f64> {
    let n = batch.len() as f64;
    let m = model.width() as f64;
    let f = model.forward_batch_with(batch.h, gates, w);
    let lp = Array1::from_shape_fn(batch.len(), |i| loss.d1(f[i], batch.y[i]));
    match model.kind {
        ModelKind::Quadratic => {
            let scores = batch.h.dot(&w.t());
            let weighted = &scores * gates * &lp.view().insert_axis(Axis(1));
            weighted.t().dot(&batch.h) / (n * m.sqrt())
        }
        ModelKind::Linearized => {
            let weighted = gates * &lp.view().insert_axis(Axis(1));
            weighted.t().dot(&batch.h) / (n * m.sqrt())
        }
    }
}

/// Exact directional second derivative of the unregularized empirical risk
/// along `w_star`.
///
/// For the quadratic model this is the two-term closed form: term I is
/// `2 mean[l' f_{W*}]` (the model evaluated at the direction), term II is
/// `4 mean[l'' ytilde^2]` with `ytilde` the cross score form. The linearized
/// model is linear in `W`, so only the Gauss-Newton term survives.
pub fn hessian_quadratic_form(
    model: &TaylorModel,
    loss: LossKind,
    batch: Batch<'_>,
    w_star: &Array2<f64>,
) -> Result<f64> {
    let gates = model.gates(batch.h)?;
    Ok(hessian_quadratic_form_with(model, loss, batch, &gates, &model.w, w_star))
}

pub(crate) fn hessian_quadratic_form_with(
    model: &TaylorModel,
    loss: LossKind,
    batch: Batch<'_>,
    gates: &Array2<f64>,
    w: &Array2<f64>,
    w_star: &Array2<f64>,
) -> f64 {
    let n = batch.len();
    let m = model.width() as f64;
    let f = model.forward_batch_with(batch.h, gates, w);
    match model.kind {
        ModelKind::Quadratic => {
            let scores = batch.h.dot(&w.t());
            let scores_star = batch.h.dot(&w_star.t());
            let f_star = (&scores_star * &scores_star * gates).sum_axis(Axis(1)) * (0.5 / m.sqrt());
            let y_tilde = (&scores * &scores_star * gates).sum_axis(Axis(1)) * (0.5 / m.sqrt());
            let terms: Vec<f64> = (0..n)
                .map(|i| {
                    let lp = loss.d1(f[i], batch.y[i]);
                    let lpp = loss.d2(f[i], batch.y[i]);
                    2.0 * lp * f_star[i] + 4.0 * lpp * y_tilde[i] * y_tilde[i]
                })
                .collect();
            crate::linalg::pairwise_mean(&terms)
        }
        ModelKind::Linearized => {
            let f_star =
                (&batch.h.dot(&w_star.t()) * gates).sum_axis(Axis(1)) * (1.0 / m.sqrt());
            let terms: Vec<f64> = (0..n)
                .map(|i| loss.d2(f[i], batch.y[i]) * f_star[i] * f_star[i])
                .collect();
            crate::linalg::pairwise_mean(&terms)
        }
    }
}

/// Hessian-vector product of the unregularized empirical risk at `w` along
/// `u`, in closed form (consistent with [`hessian_quadratic_form`] through
/// the polarization identity).
pub(crate) fn risk_hvp_with(
    model: &TaylorModel,
    loss: LossKind,
    batch: Batch<'_>,
    gates: &Array2<f64>,
    w: &Array2<f64>,
    u: &Array2<f64>,
) -> Array2<f64> {
    let n = batch.len() as f64;
    let m = model.width() as f64;
    let f = model.forward_batch_with(batch.h, gates, w);
    let lp = Array1::from_shape_fn(batch.len(), |i| loss.d1(f[i], batch.y[i]));
    let lpp = Array1::from_shape_fn(batch.len(), |i| loss.d2(f[i], batch.y[i]));
    match model.kind {
        ModelKind::Quadratic => {
            let scores = batch.h.dot(&w.t());
            let scores_u = batch.h.dot(&u.t());
            let y_tilde = (&scores * &scores_u * gates).sum_axis(Axis(1)) * (0.5 / m.sqrt());
            // d/dt grad(W + tU): the l' term moves to the direction scores,
            // the l'' term feeds the cross form back through the gates
            let a = &scores_u * gates * &lp.view().insert_axis(Axis(1));
            let b = &scores * gates * &(2.0 * &lpp * &y_tilde).view().insert_axis(Axis(1));
            (a + b).t().dot(&batch.h) / (n * m.sqrt())
        }
        ModelKind::Linearized => {
            let f_u = (&batch.h.dot(&u.t()) * gates).sum_axis(Axis(1)) * (1.0 / m.sqrt());
            let weighted = gates * &(&lpp * &f_u).view().insert_axis(Axis(1));
            weighted.t().dot(&batch.h) / (n * m.sqrt())
        }
    }
}

/// The (2,4)-norm: fourth root of the sum of fourth powers of row l2 norms.
pub fn norm24(w: &Array2<f64>) -> f64 {
    w.axis_iter(Axis(0))
        .map(|row| {
            let sq = row.dot(&row);
            sq * sq
        })
        .sum::<f64>()
        .powf(0.25)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegKind {
    /// `lambda |W|_{2,4}^4`
    Norm24,
    /// `lambda |W Sigma_hat^{1/2}|_{2,4}^4` (data-dependent)
    DataDependent,
    /// `lambda |W|_F^2`; the convex ridge used by the linearized baseline.
    Frobenius,
}

/// The (2,4)-norm regularizer in both variants.
#[derive(Debug, Clone)]
pub struct Regularizer {
    pub kind: RegKind,
    pub lambda: f64,
    /// `Sigma_hat^{1/2}` for the data-dependent variant.
    pub sigma_half: Option<Array2<f64>>,
}

impl Regularizer {
    pub fn norm24(lambda: f64) -> Self {
        Self { kind: RegKind::Norm24, lambda, sigma_half: None }
    }

    pub fn frobenius(lambda: f64) -> Self {
        Self { kind: RegKind::Frobenius, lambda, sigma_half: None }
    }

    pub fn data_dependent(lambda: f64, sigma_half: Array2<f64>) -> Result<Self> {
        let asym = (&sigma_half - &sigma_half.t()).mapv(f64::abs).sum();
        if asym > 1e-8 * (1.0 + sigma_half.mapv(f64::abs).sum()) {
            return Err(Error::InvalidArgument(
                "data-dependent regularizer needs a symmetric Sigma^{1/2}".into(),
            ));
        }
        Ok(Self { kind: RegKind::DataDependent, lambda, sigma_half: Some(sigma_half) })
    }

    fn transformed(&self, w: &Array2<f64>) -> Result<Array2<f64>> {
        match self.kind {
            RegKind::Norm24 | RegKind::Frobenius => Ok(w.clone()),
            RegKind::DataDependent => {
                let half = self.sigma_half.as_ref().ok_or_else(|| {
                    Error::InvalidArgument(
                        "data-dependent regularizer is missing Sigma^{1/2}".into(),
                    )
                })?;
                Ok(w.dot(half))
            }
        }
    }

    /// Value `lambda |T|_{2,4}^4` and its exact gradient in `W`, where `T` is
    /// `W` or `W Sigma^{1/2}`. The gradient of the plain variant is
    /// `4 lambda diag(|w_r|^2) W`; the data-dependent one carries the extra
    /// `Sigma^{1/2}` factor back through the chain rule.
    pub fn value_and_grad(&self, w: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
        if self.kind == RegKind::Frobenius {
            let value = self.lambda * w.iter().map(|v| v * v).sum::<f64>();
            return Ok((value, w * (2.0 * self.lambda)));
        }
        let t = self.transformed(w)?;
        let row_sq: Array1<f64> = t.axis_iter(Axis(0)).map(|r| r.dot(&r)).collect();
        let value = self.lambda * row_sq.iter().map(|&s| s * s).sum::<f64>();
        let scaled = &t * &row_sq.view().insert_axis(Axis(1));
        let grad = match self.kind {
            RegKind::Norm24 | RegKind::Frobenius => scaled * (4.0 * self.lambda),
            RegKind::DataDependent => {
                scaled.dot(self.sigma_half.as_ref().unwrap()) * (4.0 * self.lambda)
            }
        };
        Ok((value, grad))
    }

    /// Hessian-vector product of the regularizer at `w` along `u`:
    /// per row, `4 lambda (2 <t_r, s_r> t_r + |t_r|^2 s_r)` mapped back
    /// through `Sigma^{1/2}` when data-dependent.
    pub fn hvp(&self, w: &Array2<f64>, u: &Array2<f64>) -> Result<Array2<f64>> {
        if self.kind == RegKind::Frobenius {
            return Ok(u * (2.0 * self.lambda));
        }
        let t = self.transformed(w)?;
        let s = self.transformed(u)?;
        let mut out = Array2::zeros(t.raw_dim());
        for ((t_r, s_r), mut o_r) in
            t.axis_iter(Axis(0)).zip(s.axis_iter(Axis(0))).zip(out.axis_iter_mut(Axis(0)))
        {
            let tt = t_r.dot(&t_r);
            let ts = t_r.dot(&s_r);
            o_r.assign(&(&t_r * (2.0 * ts) + &(&s_r * tt)));
        }
        let out = out * (4.0 * self.lambda);
        Ok(match self.kind {
            RegKind::Norm24 | RegKind::Frobenius => out,
            RegKind::DataDependent => out.dot(self.sigma_half.as_ref().unwrap()),
        })
    }
}
