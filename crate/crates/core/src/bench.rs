//! Experiment configs, the benchmark pipeline for all five model choices,
//! paired sweeps, the verification battery, reference size calculators, and
//! CSV emission.

use crate::features::FeatureLayer;
use crate::kernel::{kernel_ridge_fit, InfiniteKernel, PhiPrimeKind};
use crate::loss::{Loss, LossKind};
use crate::optim::{
    b_w_star_default, find_sosp, lambda_rule, OptimConfig, RegularizedRisk,
    SospOutcome, TraceRow,
};
use crate::synth::{
    make_split, make_target, LabelChannel, PolyTarget, RawTerm, SplitDataset,
};
use crate::taylor::{Batch, ModelKind, Regularizer, TaylorModel};
use crate::whiten::{estimate_covariance, whiten_batch};
use crate::{Error, Result};
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelChoice {
    QuadNeural,
    QuadRaw,
    QuadGDatadep,
    NtkNeuralFinite,
    NtkKernel,
}

impl ModelChoice {
    pub fn name(&self) -> &'static str {
        match self {
            ModelChoice::QuadNeural => "quad_neural",
            ModelChoice::QuadRaw => "quad_raw",
            ModelChoice::QuadGDatadep => "quad_g_datadep",
            ModelChoice::NtkNeuralFinite => "ntk_neural_finite",
            ModelChoice::NtkKernel => "ntk_kernel",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TargetTermConfig {
    pub alpha: f64,
    pub degree: usize,
    /// Explicit direction; omitted means a random direction of norm sqrt(d).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TargetConfig {
    pub terms: Vec<TargetTermConfig>,
    #[serde(default = "default_true")]
    pub normalize: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct LambdaRuleConfig {
    pub tau: f64,
    pub eps: f64,
    #[serde(default)]
    pub m_ref: f64,
    /// Norm radius; defaults to the constructive bound `(108 r*^2)^{1/4}`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_w_star: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSettings {
    pub step_size: f64,
    /// Overrides the scale-tied default `1e-4 (1 + initial value)`.
    pub grad_tol: Option<f64>,
    pub hess_tol: f64,
    pub perturb_radius: f64,
    pub escape_steps: usize,
    pub max_iters: usize,
    pub probes: usize,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            step_size: 64.0,
            grad_tol: None,
            hess_tol: 1e-2,
            perturb_radius: 1e-3,
            escape_steps: 50,
            max_iters: 400,
            probes: 8,
        }
    }
}

/// One experiment. JSON configs carry exactly these keys; unknown keys are
/// rejected.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelChoice,
    pub d: usize,
    #[serde(rename = "D")]
    pub feature_dim: usize,
    pub m: usize,
    pub n: usize,
    pub n0: usize,
    pub seed: u64,
    pub target: TargetConfig,
    pub loss: LossKind,
    pub channel: LabelChannel,
    #[serde(default)]
    pub noise: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_rule: Option<LambdaRuleConfig>,
    #[serde(default)]
    pub optimizer: OptimizerSettings,
    pub n_test: usize,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidArgument("n must be >= 1".into()));
        }
        if self.d == 0 || self.n_test == 0 {
            return Err(Error::InvalidArgument("d and n_test must be >= 1".into()));
        }
        if self.target.terms.is_empty() {
            return Err(Error::InvalidArgument("target needs at least one term".into()));
        }
        let needs_features = matches!(
            self.model,
            ModelChoice::QuadNeural | ModelChoice::QuadGDatadep | ModelChoice::NtkNeuralFinite
        );
        if needs_features && (self.feature_dim == 0 || self.n0 == 0) {
            return Err(Error::InvalidArgument(
                "feature models need D >= 1 and n0 >= 1".into(),
            ));
        }
        if self.model != ModelChoice::NtkKernel && self.m == 0 {
            return Err(Error::InvalidArgument("trained models need m >= 1".into()));
        }
        if self.lambda.is_none() && self.lambda_rule.is_none() {
            return Err(Error::InvalidArgument(
                "either lambda or lambda_rule must be given".into(),
            ));
        }
        Ok(())
    }

    /// The regularization strength: explicit, or through the lambda rule with
    /// the constructive norm-radius default.
    pub fn resolve_lambda(&self, r_star: usize) -> Result<f64> {
        if let Some(l) = self.lambda {
            return Ok(l);
        }
        let rule = self.lambda_rule.as_ref().unwrap();
        let b = rule.b_w_star.unwrap_or_else(|| b_w_star_default(r_star));
        lambda_rule(rule.tau, rule.m_ref, rule.eps, b)
    }

    fn raw_terms(&self) -> Vec<RawTerm> {
        self.target
            .terms
            .iter()
            .map(|t| RawTerm {
                alpha: t.alpha,
                beta: t.beta.as_ref().map(|b| Array1::from_vec(b.clone())),
                degree: t.degree,
            })
            .collect()
    }

    fn experiment_id(&self) -> String {
        format!(
            "{}-d{}-D{}-m{}-n{}-n0{}-s{}",
            self.model.name(),
            self.d,
            self.feature_dim,
            self.m,
            self.n,
            self.n0,
            self.seed
        )
    }
}

/// One CSV row of a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub experiment_id: String,
    pub model: String,
    pub d: usize,
    pub feature_dim: usize,
    pub m: usize,
    pub n: usize,
    pub n0: usize,
    pub seed: u64,
    pub lambda: f64,
    pub train_risk: f64,
    pub test_risk: f64,
    pub reg_value: f64,
    pub norm24: f64,
    pub grad_norm: f64,
    pub min_hess_eig: f64,
    pub zero_predictor_risk: f64,
    pub wall_time_s: f64,
    pub error: String,
}

pub const CSV_HEADER: &str = "experiment_id,model,d,D,m,n,n0,seed,lambda,train_risk,test_risk,\
reg_value,norm24,grad_norm,min_hess_eig,zero_predictor_risk,wall_time_s,error";

/// 17 significant digits, enough to reproduce every f64 bit-exactly.
fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

impl ExperimentRecord {
    pub fn to_csv_row(&self) -> String {
        let error = self.error.replace([',', '\n'], ";");
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.experiment_id,
            self.model,
            self.d,
            self.feature_dim,
            self.m,
            self.n,
            self.n0,
            self.seed,
            fmt_float(self.lambda),
            fmt_float(self.train_risk),
            fmt_float(self.test_risk),
            fmt_float(self.reg_value),
            fmt_float(self.norm24),
            fmt_float(self.grad_norm),
            fmt_float(self.min_hess_eig),
            fmt_float(self.zero_predictor_risk),
            fmt_float(self.wall_time_s),
            error
        )
    }

    fn error_row(config: &ExperimentConfig, message: String) -> Self {
        Self {
            experiment_id: config.experiment_id(),
            model: config.model.name().to_string(),
            d: config.d,
            feature_dim: config.feature_dim,
            m: config.m,
            n: config.n,
            n0: config.n0,
            seed: config.seed,
            lambda: 0.0,
            train_risk: 0.0,
            test_risk: 0.0,
            reg_value: 0.0,
            norm24: 0.0,
            grad_norm: 0.0,
            min_hess_eig: 0.0,
            zero_predictor_risk: 0.0,
            wall_time_s: 0.0,
            error: message,
        }
    }
}

pub fn records_to_csv(records: &[ExperimentRecord]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.to_csv_row());
        out.push('\n');
    }
    out
}

/// Optimizer trace as CSV.
pub fn trace_to_csv(trace: &[TraceRow]) -> String {
    let mut out = String::from("iter,risk,reg_risk,grad_norm,event\n");
    for row in trace {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            row.iter,
            fmt_float(row.risk),
            fmt_float(row.reg_risk),
            fmt_float(row.grad_norm),
            row.event
        );
    }
    out
}

/// Build the task (target and data split) for a config. Model-independent:
/// two configs differing only in `model` see identical data, which is what
/// makes sweep comparisons paired.
pub fn prepare_task(config: &ExperimentConfig) -> Result<(PolyTarget, SplitDataset)> {
    let target = make_target(&config.raw_terms(), config.d, config.target.normalize, config.seed)?;
    let needs_unlabeled = matches!(
        config.model,
        ModelChoice::QuadNeural | ModelChoice::QuadGDatadep | ModelChoice::NtkNeuralFinite
    );
    let n0 = if needs_unlabeled { config.n0 } else { 0 };
    let split = make_split(
        &target,
        config.d,
        config.n,
        n0,
        config.n_test,
        config.channel,
        config.noise,
        config.seed,
    );
    Ok((target, split))
}

struct TrainedPieces {
    outcome: SospOutcome,
    train_risk: f64,
    test_risk: f64,
    reg_value: f64,
    lambda: f64,
}

fn mean_loss(loss: LossKind, f: &Array1<f64>, y: &Array1<f64>) -> f64 {
    let vals: Vec<f64> = f.iter().zip(y.iter()).map(|(&z, &yv)| loss.value(z, yv)).collect();
    crate::linalg::pairwise_mean(&vals)
}

fn train_taylor(
    config: &ExperimentConfig,
    kind: ModelKind,
    h_train: &Array2<f64>,
    h_test: &Array2<f64>,
    split: &SplitDataset,
    reg: Regularizer,
    lambda: f64,
) -> Result<TrainedPieces> {
    let dim = h_train.ncols();
    let model = TaylorModel::init(config.m, dim, kind, config.seed)?;
    let batch = Batch::new(h_train.view(), split.train_y.view())?;
    let objective = RegularizedRisk::new(&model, config.loss, batch, reg)?;
    let zero = Array2::zeros((config.m, dim));
    let initial = crate::optim::Objective::value(&objective, &zero)?;
    let opt = &config.optimizer;
    let optim_config = OptimConfig {
        step_size: opt.step_size,
        grad_tol: opt.grad_tol.unwrap_or(1e-4 * (1.0 + initial.max(0.0))),
        hess_tol: opt.hess_tol,
        perturb_radius: opt.perturb_radius,
        escape_steps: opt.escape_steps,
        max_iters: opt.max_iters,
        probes: opt.probes,
        seed: config.seed,
    };
    let outcome = find_sosp(&objective, &optim_config)?;
    let gates_test = model.gates(h_test.view())?;
    let f_test = model.forward_batch_with(h_test.view(), &gates_test, &outcome.w_hat);
    let test_risk = mean_loss(config.loss, &f_test, &split.test_y);
    let train_risk = outcome.certificate.plain_risk;
    let reg_value = outcome.certificate.reg_risk - outcome.certificate.plain_risk;
    Ok(TrainedPieces { outcome, train_risk, test_risk, reg_value, lambda })
}

/// The trained weights and optimizer trace of a quad-family run; kernel runs
/// have none.
pub struct RunArtifacts {
    pub w_hat: Array2<f64>,
    pub trace: Vec<TraceRow>,
}

/// Execute one full experiment: sample data, build the representation,
/// train (or solve) the model, and evaluate. Deterministic in the seed.
pub fn run_single(config: &ExperimentConfig) -> Result<ExperimentRecord> {
    Ok(run_single_detailed(config)?.0)
}

/// [`run_single`] plus the trained weights and trace, for callers that
/// inspect the optimizer output (the CLI trace emission and the acceptance
/// checks of the stationarity norm bound).
pub fn run_single_detailed(
    config: &ExperimentConfig,
) -> Result<(ExperimentRecord, Option<RunArtifacts>)> {
    config.validate()?;
    let started = Instant::now();
    let (target, split) = prepare_task(config)?;
    let lambda = config.resolve_lambda(target.r_star)?;
    let zero_predictions = Array1::zeros(config.n);
    let zero_predictor_risk = mean_loss(config.loss, &zero_predictions, &split.train_y);

    let stage = |name: &str, e: Error| Error::Numerical(format!("stage {name}: {e}"));

    let (pieces, feature_dim_used, m_used) = match config.model {
        ModelChoice::QuadRaw => {
            // raw input representation: h(x) = x, identity whitening, D = d
            let pieces = train_taylor(
                config,
                ModelKind::Quadratic,
                &split.train_x,
                &split.test_x,
                &split,
                Regularizer::norm24(lambda),
                lambda,
            )
            .map_err(|e| stage("train", e))?;
            (pieces, config.d, config.m)
        }
        ModelChoice::QuadNeural => {
            let layer = FeatureLayer::sample(config.d, config.feature_dim, true, config.seed)
                .map_err(|e| stage("features", e))?;
            let rep = estimate_covariance(&layer, split.unlabeled.view())
                .map_err(|e| stage("whiten", e))?;
            let g_train =
                layer.apply_batch(split.train_x.view()).map_err(|e| stage("features", e))?;
            let g_test =
                layer.apply_batch(split.test_x.view()).map_err(|e| stage("features", e))?;
            let h_train = whiten_batch(&rep, g_train.view()).map_err(|e| stage("whiten", e))?;
            let h_test = whiten_batch(&rep, g_test.view()).map_err(|e| stage("whiten", e))?;
            let pieces = train_taylor(
                config,
                ModelKind::Quadratic,
                &h_train,
                &h_test,
                &split,
                Regularizer::norm24(lambda),
                lambda,
            )
            .map_err(|e| stage("train", e))?;
            (pieces, config.feature_dim, config.m)
        }
        ModelChoice::QuadGDatadep => {
            let layer = FeatureLayer::sample(config.d, config.feature_dim, true, config.seed)
                .map_err(|e| stage("features", e))?;
            let rep = estimate_covariance(&layer, split.unlabeled.view())
                .map_err(|e| stage("whiten", e))?;
            let g_train =
                layer.apply_batch(split.train_x.view()).map_err(|e| stage("features", e))?;
            let g_test =
                layer.apply_batch(split.test_x.view()).map_err(|e| stage("features", e))?;
            let reg = Regularizer::data_dependent(lambda, rep.sqrt.clone())
                .map_err(|e| stage("regularizer", e))?;
            let pieces = train_taylor(
                config,
                ModelKind::Quadratic,
                &g_train,
                &g_test,
                &split,
                reg,
                lambda,
            )
            .map_err(|e| stage("train", e))?;
            (pieces, config.feature_dim, config.m)
        }
        ModelChoice::NtkNeuralFinite => {
            let layer = FeatureLayer::sample(config.d, config.feature_dim, true, config.seed)
                .map_err(|e| stage("features", e))?;
            let scale = 1.0 / (config.feature_dim as f64).sqrt();
            let g_train = layer
                .apply_batch(split.train_x.view())
                .map_err(|e| stage("features", e))?
                * scale;
            let g_test = layer
                .apply_batch(split.test_x.view())
                .map_err(|e| stage("features", e))?
                * scale;
            let pieces = train_taylor(
                config,
                ModelKind::Linearized,
                &g_train,
                &g_test,
                &split,
                Regularizer::frobenius(lambda),
                lambda,
            )
            .map_err(|e| stage("train", e))?;
            (pieces, config.feature_dim, config.m)
        }
        ModelChoice::NtkKernel => {
            let kernel = InfiniteKernel::new(PhiPrimeKind::Relu);
            let predictor =
                kernel_ridge_fit(kernel, split.train_x.view(), split.train_y.view(), lambda)
                    .map_err(|e| stage("kernel", e))?;
            let f_train = predictor.predict_batch(split.train_x.view());
            let f_test = predictor.predict_batch(split.test_x.view());
            let train_risk = mean_loss(config.loss, &f_train, &split.train_y);
            let test_risk = mean_loss(config.loss, &f_test, &split.test_y);
            // the penalty actually paid by the solver: lambda |f|_H^2
            let gram = kernel.gram(split.train_x.view());
            let reg_value = lambda * predictor.dual_coeffs.dot(&gram.dot(&predictor.dual_coeffs));
            let record = ExperimentRecord {
                experiment_id: config.experiment_id(),
                model: config.model.name().to_string(),
                d: config.d,
                feature_dim: 0,
                m: 0,
                n: config.n,
                n0: 0,
                seed: config.seed,
                lambda,
                train_risk,
                test_risk,
                reg_value,
                norm24: 0.0,
                grad_norm: 0.0,
                min_hess_eig: 0.0,
                zero_predictor_risk,
                wall_time_s: started.elapsed().as_secs_f64(),
                error: String::new(),
            };
            return Ok((record, None));
        }
    };

    let cert = &pieces.outcome.certificate;
    let record = ExperimentRecord {
        experiment_id: config.experiment_id(),
        model: config.model.name().to_string(),
        d: config.d,
        feature_dim: feature_dim_used,
        m: m_used,
        n: config.n,
        n0: if config.model == ModelChoice::QuadRaw { 0 } else { config.n0 },
        seed: config.seed,
        lambda: pieces.lambda,
        train_risk: pieces.train_risk,
        test_risk: pieces.test_risk,
        reg_value: pieces.reg_value,
        norm24: cert.norm24_value,
        grad_norm: cert.grad_norm,
        min_hess_eig: cert.min_hess_eig_est,
        zero_predictor_risk,
        wall_time_s: started.elapsed().as_secs_f64(),
        error: String::new(),
    };
    let artifacts = RunArtifacts { w_hat: pieces.outcome.w_hat, trace: pieces.outcome.trace };
    Ok((record, Some(artifacts)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepAxis {
    #[serde(rename = "n")]
    SampleCount,
    #[serde(rename = "d")]
    InputDim,
    #[serde(rename = "D")]
    FeatureDim,
    #[serde(rename = "m")]
    Width,
}

/// Run a paired sweep: one record per (grid value, seed, model). All models
/// at a given (grid value, seed) share the same data sub-streams. Failures
/// become error rows and the sweep continues.
pub fn run_sweep(
    base: &ExperimentConfig,
    axis: SweepAxis,
    grid: &[usize],
    seeds: &[u64],
    models: &[ModelChoice],
) -> Result<Vec<ExperimentRecord>> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("sweep grid must be nonempty".into()));
    }
    let mut records = Vec::new();
    for &value in grid {
        for &seed in seeds {
            for &model in models {
                let mut config = base.clone();
                config.model = model;
                config.seed = seed;
                match axis {
                    SweepAxis::SampleCount => config.n = value,
                    SweepAxis::InputDim => config.d = value,
                    SweepAxis::FeatureDim => config.feature_dim = value,
                    SweepAxis::Width => config.m = value,
                }
                match run_single(&config) {
                    Ok(rec) => records.push(rec),
                    Err(e) => records.push(ExperimentRecord::error_row(&config, e.to_string())),
                }
            }
        }
    }
    Ok(records)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerifyLevel {
    Fast,
    Full,
}

/// One line of the verification report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifyRow {
    pub name: String,
    pub measured: f64,
    pub bound: f64,
    /// Where the expected value comes from: exact | quadrature | monte-carlo
    /// | finite-difference | concentration | constructed.
    pub provenance: String,
    pub pass: bool,
}

impl VerifyRow {
    pub fn to_line(&self) -> String {
        format!(
            "{} {}: measured {:.6e} bound {:.6e} [{}]",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.measured,
            self.bound,
            self.provenance
        )
    }
}

#[derive(Debug, Clone)]
pub struct VerifyReport {
    pub rows: Vec<VerifyRow>,
    pub level: VerifyLevel,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for row in &self.rows {
            out.push_str(&row.to_line());
            out.push('\n');
        }
        let _ = writeln!(
            out,
            "{}: {}/{} checks passed",
            if self.passed() { "OK" } else { "FAILED" },
            self.rows.iter().filter(|r| r.pass).count(),
            self.rows.len()
        );
        out
    }
}

mod verify_impl;
pub use verify_impl::run_verify;

/// The feature-count prescription from the Chebyshev argument:
/// `D = 2 * 200^2 k^5 |beta|^{2k} / (eps^2 delta)`.
pub fn chebyshev_feature_count(k: usize, beta_norm: f64, eps: f64, delta: f64) -> f64 {
    2.0 * 200.0_f64.powi(2) * (k as f64).powi(5) * beta_norm.powi(2 * k as i32)
        / (eps * eps * delta)
}

/// The stacked feature-count prescription covering odd degrees:
/// `D = 8 * 50^2 r*^3 sum_s (p_s + 1)^5 |beta_s|^{2 ceil(p_s/2)} / (eps^2 delta)`.
pub fn stacked_feature_count(
    degrees: &[usize],
    beta_norms: &[f64],
    eps: f64,
    delta: f64,
) -> f64 {
    let r_star = degrees.len() as f64;
    let sum: f64 = degrees
        .iter()
        .zip(beta_norms)
        .map(|(&p, &b)| ((p + 1) as f64).powi(5) * b.powi(2 * p.div_ceil(2) as i32))
        .sum();
    8.0 * 50.0_f64.powi(2) * r_star.powi(3) * sum / (eps * eps * delta)
}

/// The width prescription `m = eps^{-1} (2 lambda_0)^{-1/2} C^2 B_h^4 B_{w*}^4`
/// with `C = 1`.
pub fn width_rule(eps: f64, lambda0: f64, b_h: f64, b_w_star: f64) -> f64 {
    b_h.powi(4) * b_w_star.powi(4) / (eps * (2.0 * lambda0).sqrt())
}

/// Everything the `calc` command prints.
#[derive(Debug, Clone, Serialize)]
pub struct ReferenceSizes {
    pub d_chebyshev: f64,
    pub d_stacked: f64,
    pub m_width: f64,
    pub lambda: f64,
    pub lambda0: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn reference_calculators(
    k: usize,
    beta_norm: f64,
    eps: f64,
    delta: f64,
    r_star: usize,
    p: usize,
    tau: f64,
    m_ref: f64,
    b_h: f64,
) -> Result<ReferenceSizes> {
    let degrees = vec![p; r_star];
    let beta_norms = vec![beta_norm; r_star];
    let b_w = b_w_star_default(r_star);
    let lambda = lambda_rule(tau, m_ref, eps, b_w)?;
    let lambda0 = (2.0 * tau * m_ref + eps) / 36.0;
    Ok(ReferenceSizes {
        d_chebyshev: chebyshev_feature_count(k, beta_norm, eps, delta),
        d_stacked: stacked_feature_count(&degrees, &beta_norms, eps, delta),
        m_width: width_rule(eps, lambda0, b_h, b_w),
        lambda,
        lambda0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::LossKind;
    use crate::synth::LabelChannel;

    pub(crate) fn small_config(model: ModelChoice) -> ExperimentConfig {
        ExperimentConfig {
            model,
            d: 6,
            feature_dim: 32,
            m: 24,
            n: 120,
            n0: 400,
            seed: 11,
            target: TargetConfig {
                terms: vec![TargetTermConfig { alpha: 1.0, degree: 2, beta: None }],
                normalize: true,
            },
            loss: LossKind::LogCosh,
            channel: LabelChannel::Value,
            noise: 0.0,
            lambda: Some(1e-4),
            lambda_rule: None,
            optimizer: OptimizerSettings {
                max_iters: 60,
                probes: 2,
                ..OptimizerSettings::default()
            },
            n_test: 200,
        }
    }

    #[test]
    fn config_roundtrips_through_json() {
        let config = small_config(ModelChoice::QuadNeural);
        let text = serde_json::to_string_pretty(&config).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(config, back);
        let text2 = serde_json::to_string_pretty(&back).unwrap();
        assert_eq!(text, text2);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut value = serde_json::to_value(small_config(ModelChoice::QuadRaw)).unwrap();
        value.as_object_mut().unwrap().insert("typo_key".into(), 1.into());
        let parsed: std::result::Result<ExperimentConfig, _> = serde_json::from_value(value);
        assert!(parsed.is_err());
    }

    #[test]
    fn zero_n_is_a_configuration_error() {
        let mut config = small_config(ModelChoice::QuadRaw);
        config.n = 0;
        assert!(matches!(run_single(&config), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn runs_are_deterministic_modulo_wall_time() {
        let config = small_config(ModelChoice::QuadRaw);
        let a = run_single(&config).unwrap();
        let b = run_single(&config).unwrap();
        let strip = |r: &ExperimentRecord| {
            let mut row = r.to_csv_row();
            let cut = row.rfind(',').unwrap();
            let cut2 = row[..cut].rfind(',').unwrap();
            row.truncate(cut2);
            row
        };
        assert_eq!(strip(&a), strip(&b));
    }

    #[test]
    fn paired_models_share_training_data() {
        // same seed, different model: identical zero-predictor train risk
        let a = run_single(&small_config(ModelChoice::QuadRaw)).unwrap();
        let b = run_single(&small_config(ModelChoice::QuadNeural)).unwrap();
        assert_eq!(a.zero_predictor_risk.to_bits(), b.zero_predictor_risk.to_bits());
    }

    #[test]
    fn single_point_sweep_matches_run_single() {
        let base = small_config(ModelChoice::QuadRaw);
        let records =
            run_sweep(&base, SweepAxis::SampleCount, &[120], &[11], &[ModelChoice::QuadRaw])
                .unwrap();
        assert_eq!(records.len(), 1);
        let direct = run_single(&base).unwrap();
        assert_eq!(records[0].train_risk.to_bits(), direct.train_risk.to_bits());
    }

    #[test]
    fn sweep_records_failures_and_continues() {
        let mut base = small_config(ModelChoice::QuadNeural);
        base.n0 = 0; // feature models need unlabeled data
        let records = run_sweep(
            &base,
            SweepAxis::SampleCount,
            &[50],
            &[1],
            &[ModelChoice::QuadNeural, ModelChoice::QuadRaw],
        )
        .unwrap();
        assert_eq!(records.len(), 2);
        assert!(!records[0].error.is_empty());
        assert!(records[1].error.is_empty());
    }

    #[test]
    fn csv_has_fixed_header_and_17_digit_floats() {
        let config = small_config(ModelChoice::QuadRaw);
        let record = run_single(&config).unwrap();
        let csv = records_to_csv(&[record]);
        assert!(csv.starts_with(CSV_HEADER));
        // 17 significant digits in scientific notation
        assert!(csv.contains('e'));
        let row = csv.lines().nth(1).unwrap();
        assert_eq!(row.split(',').count(), 18);
    }

    #[test]
    fn quad_raw_record_uses_input_dim_as_feature_dim() {
        let config = small_config(ModelChoice::QuadRaw);
        let record = run_single(&config).unwrap();
        assert_eq!(record.feature_dim, 6);
        assert!(record.error.is_empty());
        assert!(record.train_risk.is_finite() && record.test_risk.is_finite());
    }

    #[test]
    fn all_models_produce_finite_records() {
        for model in [
            ModelChoice::QuadNeural,
            ModelChoice::QuadRaw,
            ModelChoice::QuadGDatadep,
            ModelChoice::NtkNeuralFinite,
            ModelChoice::NtkKernel,
        ] {
            let record = run_single(&small_config(model)).unwrap();
            assert!(record.error.is_empty(), "{model:?}: {}", record.error);
            for v in [
                record.train_risk,
                record.test_risk,
                record.reg_value,
                record.norm24,
                record.grad_norm,
                record.min_hess_eig,
                record.zero_predictor_risk,
            ] {
                assert!(v.is_finite(), "{model:?} produced a non-finite metric");
            }
            // training always descends below the zero predictor here
            if record.model != "ntk_kernel" {
                assert!(
                    record.train_risk + record.reg_value <= record.zero_predictor_risk + 1e-9,
                    "{model:?}: regularized risk did not descend"
                );
            }
        }
    }

    #[test]
    fn lambda_rule_config_resolves_with_constructive_default() {
        let mut config = small_config(ModelChoice::QuadRaw);
        config.lambda = None;
        config.lambda_rule = Some(LambdaRuleConfig { tau: 0.0, eps: 0.36, m_ref: 0.0, b_w_star: None });
        // B = (108)^{1/4} for r* = 1, so lambda = 0.01 / sqrt(108)... computed via the rule
        let lambda = config.resolve_lambda(1).unwrap();
        let expect = 0.36 / (36.0 * 108.0f64);
        assert!((lambda - expect).abs() <= 1e-15);
    }

    #[test]
    fn reference_calculators_match_hand_values() {
        let sizes = reference_calculators(2, 1.0, 0.1, 0.1, 1, 4, 0.0, 0.0, 1.0).unwrap();
        // 2 * 200^2 * 2^5 / (0.01 * 0.1) = 2.56e9
        assert!((sizes.d_chebyshev - 2.56e9).abs() / 2.56e9 <= 1e-12);
        // lambda printed equals the lambda rule output
        let direct = lambda_rule(0.0, 0.0, 0.1, b_w_star_default(1)).unwrap();
        assert_eq!(sizes.lambda.to_bits(), direct.to_bits());
    }

    #[test]
    fn verify_fast_passes_on_a_correct_build() {
        let report = run_verify(VerifyLevel::Fast, 1234).unwrap();
        assert!(report.passed(), "\n{}", report.to_text());
    }

    /// An injected sign error in term II of the Hessian must trip the
    /// second-difference oracle that the verification battery uses.
    #[test]
    fn mutated_hessian_fails_the_second_difference_check() {
        use crate::rng::substream;
        use ndarray::Axis;
        use rand::Rng;
        use rand_distr::StandardNormal;
        let mut rng = substream(77, "mutation");
        let model = {
            let mut m = TaylorModel::init(6, 5, ModelKind::Quadratic, 78).unwrap();
            m.w = Array2::from_shape_fn((6, 5), |_| 0.4 * rng.sample::<f64, _>(StandardNormal));
            m
        };
        let h = Array2::from_shape_fn((10, 5), |_| rng.sample(StandardNormal));
        let y = Array1::from_elem(10, 1.0);
        let batch = Batch::new(h.view(), y.view()).unwrap();
        let dir = Array2::from_shape_fn((6, 5), |_| rng.sample::<f64, _>(StandardNormal));

        // sabotaged quadratic form: term II enters with a flipped sign
        let gates = model.gates(h.view()).unwrap();
        let scores = h.dot(&model.w.t());
        let scores_star = h.dot(&dir.t());
        let m_sqrt = 6.0f64.sqrt();
        let f = model.forward_batch(h.view()).unwrap();
        let f_star = (&scores_star * &scores_star * &gates).sum_axis(Axis(1)) * (0.5 / m_sqrt);
        let y_tilde = (&scores * &scores_star * &gates).sum_axis(Axis(1)) * (0.5 / m_sqrt);
        let sabotaged: f64 = (0..10)
            .map(|i| {
                2.0 * LossKind::LogCosh.d1(f[i], 1.0) * f_star[i]
                    - 4.0 * LossKind::LogCosh.d2(f[i], 1.0) * y_tilde[i] * y_tilde[i]
            })
            .sum::<f64>()
            / 10.0;

        let t = 1e-3;
        let eval = |w: &Array2<f64>| {
            let mut m2 = model.clone();
            m2.w = w.clone();
            crate::taylor::risk_value(&m2, LossKind::LogCosh, batch).unwrap()
        };
        let fd = (eval(&(&model.w + &(&dir * t))) - 2.0 * eval(&model.w)
            + eval(&(&model.w - &(&dir * t))))
            / (t * t);
        let rel = (sabotaged - fd).abs() / fd.abs().max(1e-8);
        assert!(rel > 1e-4, "sign mutation went undetected (rel err {rel})");
    }
}
