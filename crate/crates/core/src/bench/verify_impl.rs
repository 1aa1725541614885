//! The verification battery behind `run_verify`: one measured line per
//! check, each against an independent oracle (closed form, quadrature,
//! Monte Carlo, finite differences, or a constructed instance).

use super::{VerifyLevel, VerifyReport, VerifyRow};
use crate::features::{
    hermite_coeff_indicator, indicator_coeff_quadrature, monomial_coeffs, FeatureLayer,
};
use crate::kernel::{default_lambda_grid, lower_bound_run, InfiniteKernel, PhiPrimeKind};
use crate::linalg::{pairwise_mean, sym_op_norm};
use crate::loss::LossKind;
use crate::optim::{
    find_sosp, lambda_rule, min_hess_eig_estimate, Objective, OptimConfig, RegularizedRisk,
};
use crate::rng::{substream, substream_indexed};
use crate::synth::{make_target, sample_sphere, RawTerm};
use crate::taylor::{
    hessian_quadratic_form, risk_grad, risk_value, Batch, ModelKind, Regularizer, TaylorModel,
};
use crate::whiten::{
    estimate_covariance, hadamard_power_min_eig, orthant_probability, population_covariance,
    relative_concentration, whiten_batch,
};
use crate::witness::{
    build_witness, indicator_concentration_bound, indicator_concentration_stat,
    opposite_sign_probability, plan_witness_features,
};
use crate::Result;
use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;

fn row(name: &str, measured: f64, bound: f64, provenance: &str, pass: bool) -> VerifyRow {
    VerifyRow {
        name: name.to_string(),
        measured,
        bound,
        provenance: provenance.to_string(),
        pass,
    }
}

/// A `measured <= bound` check.
fn upper(name: &str, measured: f64, bound: f64, provenance: &str) -> VerifyRow {
    row(name, measured, bound, provenance, measured <= bound)
}

/// A `measured >= bound` check.
fn lower(name: &str, measured: f64, bound: f64, provenance: &str) -> VerifyRow {
    row(name, measured, bound, provenance, measured >= bound)
}

fn random_model_state(seed: u64) -> (TaylorModel, Array2<f64>, Array1<f64>) {
    let mut rng = substream(seed, "verify.state");
    let mut model = TaylorModel::init(6, 5, ModelKind::Quadratic, seed).unwrap();
    model.w = Array2::from_shape_fn((6, 5), |_| 0.4 * rng.sample::<f64, _>(StandardNormal));
    let h = Array2::from_shape_fn((12, 5), |_| rng.sample(StandardNormal));
    let y = Array1::from_shape_fn(12, |_| if rng.random::<bool>() { 1.0 } else { -1.0 });
    (model, h, y)
}

fn check_gradient_fd(seed: u64) -> VerifyRow {
    let mut worst = 0.0f64;
    for instance in 0..4u64 {
        let (mut model, h, y) = random_model_state(seed + instance);
        let batch = Batch::new(h.view(), y.view()).unwrap();
        let grad = risk_grad(&model, LossKind::LogCosh, batch).unwrap();
        let mut rng = substream(seed ^ instance, "verify.coords");
        for _ in 0..10 {
            let r = rng.random_range(0..6);
            let c = rng.random_range(0..5);
            let eps = 1e-5;
            let orig = model.w[[r, c]];
            model.w[[r, c]] = orig + eps;
            let hi = risk_value(&model, LossKind::LogCosh, batch).unwrap();
            model.w[[r, c]] = orig - eps;
            let lo = risk_value(&model, LossKind::LogCosh, batch).unwrap();
            model.w[[r, c]] = orig;
            let fd = (hi - lo) / (2.0 * eps);
            worst = worst.max((grad[[r, c]] - fd).abs() / grad[[r, c]].abs().max(1e-8));
        }
    }
    upper("risk_grad_vs_central_differences", worst, 1e-5, "finite-difference")
}

fn check_hessian_fd(seed: u64) -> VerifyRow {
    let mut worst = 0.0f64;
    for instance in 0..4u64 {
        let (model, h, y) = random_model_state(seed * 3 + instance);
        let batch = Batch::new(h.view(), y.view()).unwrap();
        let mut rng = substream(seed ^ (instance + 9), "verify.dir");
        let dir = Array2::from_shape_fn((6, 5), |_| rng.sample::<f64, _>(StandardNormal));
        let quad = hessian_quadratic_form(&model, LossKind::LogCosh, batch, &dir).unwrap();
        let t = 1e-3;
        let eval = |w: &Array2<f64>| {
            let mut m2 = model.clone();
            m2.w = w.clone();
            risk_value(&m2, LossKind::LogCosh, batch).unwrap()
        };
        let fd = (eval(&(&model.w + &(&dir * t))) - 2.0 * eval(&model.w)
            + eval(&(&model.w - &(&dir * t))))
            / (t * t);
        worst = worst.max((quad - fd).abs() / fd.abs().max(1e-8));
    }
    upper("hessian_form_vs_second_differences", worst, 1e-4, "finite-difference")
}

fn check_hermite_closed_form() -> VerifyRow {
    let mut worst = 0.0f64;
    for k in 0..=12 {
        worst = worst.max((hermite_coeff_indicator(k) - indicator_coeff_quadrature(k)).abs());
    }
    upper("hermite_indicator_coeffs_vs_quadrature", worst, 1e-10, "quadrature")
}

fn check_parseval() -> VerifyRow {
    // the i^{-3/2} tail leaves ~0.0196 of the mass beyond degree 41, so the
    // partial sum sits just above 0.48; it must also never exceed 1/2
    let sum: f64 = (0..=41).map(|k| hermite_coeff_indicator(k).powi(2)).sum();
    row("hermite_parseval_partial_sum", sum, 0.5, "quadrature", (0.48..=0.5 + 1e-12).contains(&sum))
}

fn check_orthant_mc(seed: u64) -> VerifyRow {
    let layer = FeatureLayer {
        v: ndarray::array![[1.0, 0.0, 0.0], [0.5, 3f64.sqrt() / 2.0, 0.0]],
        b: ndarray::array![0.0, 0.0],
        use_bias: false,
        seed: 0,
    };
    let n = 200_000;
    let x = sample_sphere(3, n, seed ^ 0xabc);
    let g = layer.apply_batch(x.view()).unwrap();
    let joint: Vec<f64> = (0..n).map(|i| g[[i, 0]] * g[[i, 1]]).collect();
    let mc = pairwise_mean(&joint);
    let se = (mc * (1.0 - mc) / n as f64).sqrt();
    let z = (mc - orthant_probability(0.5)).abs() / se;
    upper("population_covariance_vs_monte_carlo_z", z, 3.0, "monte-carlo")
}

fn check_monomial_unbiasedness(seed: u64) -> VerifyRow {
    let d = 4;
    let x = sample_sphere(d, 1, seed ^ 0x77).row(0).to_owned();
    let beta = ndarray::array![0.9, -0.4, 0.2, 0.1];
    let layer = FeatureLayer::sample(d, 120_000, true, seed ^ 0x78).unwrap();
    let g = layer.apply(x.view()).unwrap();
    let mut worst_z = 0.0f64;
    for k in 1..=2 {
        let mono = monomial_coeffs(&layer, beta.view(), k).unwrap();
        let terms: Vec<f64> =
            (0..layer.features()).map(|j| mono.coeffs[j] * g[j] * layer.features() as f64).collect();
        let mean = pairwise_mean(&terms);
        let var =
            pairwise_mean(&terms.iter().map(|t| (t - mean) * (t - mean)).collect::<Vec<_>>());
        let se = (var / terms.len() as f64).sqrt();
        let target = beta.dot(&x).powi(k as i32);
        worst_z = worst_z.max((mean - target).abs() / se);
    }
    upper("monomial_readout_unbiasedness_z", worst_z, 5.0, "monte-carlo")
}

fn check_reg_identity(seed: u64) -> VerifyRow {
    let mut rng = substream(seed, "verify.reg");
    let reg = Regularizer::norm24(0.7);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let w = Array2::from_shape_fn((4, 3), |_| rng.sample::<f64, _>(StandardNormal));
        let (v, g) = reg.value_and_grad(&w).unwrap();
        worst = worst.max(((&g * &w).sum() - 4.0 * v).abs() / v.max(1e-12));
    }
    upper("regularizer_gradient_inner_product_identity", worst, 1e-10, "exact")
}

fn check_polarization(seed: u64) -> VerifyRow {
    let (model, h, y) = random_model_state(seed + 101);
    let batch = Batch::new(h.view(), y.view()).unwrap();
    let objective =
        RegularizedRisk::new(&model, LossKind::LogCosh, batch, Regularizer::norm24(0.05)).unwrap();
    let mut rng = substream(seed, "verify.uv");
    let u = Array2::from_shape_fn((6, 5), |_| rng.sample::<f64, _>(StandardNormal));
    let v = Array2::from_shape_fn((6, 5), |_| rng.sample::<f64, _>(StandardNormal));
    let bilinear = (&objective.hvp(&model.w, &u).unwrap() * &v).sum();
    let q = |dir: &Array2<f64>| objective.hessian_quadratic_form(&model.w, dir).unwrap();
    let polarized = (q(&(&u + &v)) - q(&(&u - &v))) / 4.0;
    upper("hessian_polarization_identity", (bilinear - polarized).abs(), 1e-9, "exact")
}

fn check_lambda_rule() -> VerifyRow {
    let l = lambda_rule(0.0, 0.0, 0.36, 1.0).unwrap();
    upper("lambda_rule_reference_value", (l - 0.01).abs(), 1e-15, "exact")
}

fn check_ridge_residual(seed: u64) -> VerifyRow {
    let kernel = InfiniteKernel::new(PhiPrimeKind::Relu);
    let x = sample_sphere(5, 60, seed ^ 0x99);
    let t = crate::kernel::PureDegreeTarget::new(5, 2, seed ^ 0x9a).unwrap();
    let y = t.evaluate_batch(x.view());
    let predictor = crate::kernel::kernel_ridge_fit(kernel, x.view(), y.view(), 1e-4).unwrap();
    let mut system = kernel.gram(x.view());
    for i in 0..60 {
        system[[i, i]] += 1e-4 * 60.0;
    }
    let resid = (&y - &system.dot(&predictor.dual_coeffs)).mapv(|v| v * v).sum().sqrt();
    let rel = resid / y.mapv(|v| v * v).sum().sqrt();
    upper("kernel_ridge_solve_relative_residual", rel, 1e-8, "exact")
}

fn check_sigma12_references() -> VerifyRow {
    let cases = [
        (1.0, 0.5),
        (0.0, 1.0 / 3.0),
        (-1.0, 0.25),
    ];
    let worst = cases
        .iter()
        .map(|&(t, expect)| (crate::kernel::sigma12_from_dot(t) - expect).abs())
        .fold(0.0, f64::max);
    upper("sigma12_reference_values", worst, 1e-12, "exact")
}

fn check_opposite_sign_bound() -> VerifyRow {
    let worst = [0.9, 0.99, 0.999]
        .iter()
        .map(|&rho| opposite_sign_probability(rho).unwrap() - (1.0f64 - rho * rho).sqrt())
        .fold(f64::NEG_INFINITY, f64::max);
    upper("opposite_sign_probability_bound_margin", worst, 0.0, "exact")
}

fn check_saddle_escape(seed: u64) -> VerifyRow {
    // quadratic model at W = 0 with positive labels: a strict saddle
    let d = 4;
    let x = sample_sphere(d, 60, seed ^ 0x5ad);
    let y = Array1::from_elem(60, 1.0);
    let model = TaylorModel::init(8, d, ModelKind::Quadratic, seed ^ 0x5ae).unwrap();
    let batch = Batch::new(x.view(), y.view()).unwrap();
    let objective =
        RegularizedRisk::new(&model, LossKind::Logistic, batch, Regularizer::norm24(1e-5))
            .unwrap();
    let config = OptimConfig {
        step_size: 64.0,
        grad_tol: 1e-6,
        hess_tol: 1e-2,
        perturb_radius: 1e-3,
        escape_steps: 50,
        max_iters: 200,
        probes: 4,
        seed,
    };
    let zero = Array2::zeros((8, d));
    let v0 = objective.value(&zero).unwrap();
    let out = find_sosp(&objective, &config).unwrap();
    // escaping the saddle means strictly improving on the start value
    row(
        "sosp_escapes_zero_saddle",
        out.certificate.reg_risk,
        v0,
        "constructed",
        out.certificate.reg_risk < v0 - 1e-4,
    )
}

fn fast_checks(seed: u64) -> Vec<VerifyRow> {
    vec![
        check_gradient_fd(seed),
        check_hessian_fd(seed),
        check_hermite_closed_form(),
        check_parseval(),
        check_orthant_mc(seed),
        check_monomial_unbiasedness(seed),
        check_reg_identity(seed),
        check_polarization(seed),
        check_lambda_rule(),
        check_ridge_residual(seed),
        check_sigma12_references(),
        check_opposite_sign_bound(),
        check_saddle_escape(seed),
    ]
}

fn check_covariance_diagonal(seed: u64) -> VerifyRow {
    let layer = FeatureLayer::sample(20, 40, false, seed ^ 0xd1a).unwrap();
    let n0 = 2000;
    let rep = estimate_covariance(&layer, sample_sphere(20, n0, seed ^ 0xd1b).view()).unwrap();
    let worst = (0..40)
        .map(|i| (rep.sigma_hat[[i, i]] - 0.5).abs())
        .fold(0.0, f64::max);
    upper("covariance_diagonal_binomial_band", worst, 4.0 * (0.25f64 / n0 as f64).sqrt(), "monte-carlo")
}

fn check_concentration_rate(seed: u64) -> VerifyRow {
    let mut ratios = Vec::new();
    for s in 0..5u64 {
        let layer = FeatureLayer::sample(20, 40, false, seed + 17 * s).unwrap();
        let sigma = population_covariance(&layer);
        let rep1 = estimate_covariance(
            &layer,
            sample_sphere(20, 2000, seed ^ (0x1000 + s)).view(),
        )
        .unwrap();
        let rep2 = estimate_covariance(
            &layer,
            sample_sphere(20, 8000, seed ^ (0x2000 + s)).view(),
        )
        .unwrap();
        let dev1 = relative_concentration(&rep1, &sigma).unwrap();
        let dev2 = relative_concentration(&rep2, &sigma).unwrap();
        ratios.push(dev1 / dev2);
    }
    ratios.sort_by(f64::total_cmp);
    let median = ratios[2];
    row(
        "relative_concentration_quadrupling_ratio",
        median,
        2.0,
        "monte-carlo",
        (1.4..=3.0).contains(&median),
    )
}

fn check_hadamard(seed: u64) -> VerifyRow {
    let mut ok = 0;
    let mut worst = f64::INFINITY;
    for s in 0..5u64 {
        let layer = FeatureLayer::sample(80, 80, false, seed + 31 * s).unwrap();
        let min = hadamard_power_min_eig(&layer, 1).unwrap();
        worst = worst.min(min);
        if min >= 0.5 {
            ok += 1;
        }
    }
    row(
        "hadamard_square_min_eig_seeds_passing",
        ok as f64,
        4.0,
        "monte-carlo",
        ok >= 4 && worst > 0.0,
    )
}

fn check_claim_concentration(seed: u64) -> VerifyRow {
    let m0 = 4000;
    let dim = 20;
    let mut rng = substream(seed, "verify.claim");
    let w0 = Array2::from_shape_fn((m0, dim), |_| rng.sample::<f64, _>(StandardNormal));
    let probes = Array2::from_shape_fn((10_000, dim), |_| rng.sample::<f64, _>(StandardNormal));
    let stat = indicator_concentration_stat(w0.view(), probes.view());
    upper(
        "indicator_concentration_vs_bound",
        stat,
        indicator_concentration_bound(m0, dim, 0.05),
        "concentration",
    )
}

fn check_kernel_finite_width(seed: u64) -> VerifyRow {
    let kernel = InfiniteKernel::new(PhiPrimeKind::Relu);
    let d = 8;
    let width = 2000;
    let x = sample_sphere(d, 4, seed ^ 0xfe);
    let draws = 10;
    let mut worst_z = 0.0f64;
    for i in 0..2 {
        for j in (i + 1)..3 {
            let mut samples = Vec::with_capacity(draws);
            for rep in 0..draws {
                let layer =
                    FeatureLayer::sample(d, width, true, seed + 7000 + rep as u64).unwrap();
                let ga = layer.apply(x.row(i)).unwrap() / (width as f64).sqrt();
                let gb = layer.apply(x.row(j)).unwrap() / (width as f64).sqrt();
                let mut rng = substream_indexed(seed ^ 0xff, "verify.w0", rep as u64);
                let mut acc = 0.0;
                for _ in 0..width {
                    let w0: Array1<f64> =
                        Array1::from_shape_fn(width, |_| rng.sample(StandardNormal));
                    acc += w0.dot(&ga).max(0.0) * w0.dot(&gb).max(0.0);
                }
                samples.push(acc / width as f64 * ga.dot(&gb));
            }
            let mean = pairwise_mean(&samples);
            let var = pairwise_mean(
                &samples.iter().map(|s| (s - mean) * (s - mean)).collect::<Vec<_>>(),
            );
            let se = (var / draws as f64).sqrt().max(1e-5);
            let exact = kernel.value(x.row(i), x.row(j)).unwrap();
            worst_z = worst_z.max((mean - exact).abs() / se);
        }
    }
    upper("kernel_vs_finite_width_monte_carlo_z", worst_z, 3.0, "monte-carlo")
}

fn check_witness_quality(seed: u64) -> Vec<VerifyRow> {
    // degree-2 target: the regime where the constructive coefficients reach
    // tight desk-scale accuracy
    let d = 6;
    let raw = vec![RawTerm { alpha: 1.0, beta: None, degree: 2 }];
    let target = make_target(&raw, d, true, seed ^ 0x217).unwrap();
    let features = plan_witness_features(&target, &[1500], seed ^ 0x218).unwrap();
    let rep = estimate_covariance(
        &features.stacked.layer,
        sample_sphere(d, 20_000, seed ^ 0x219).view(),
    )
    .unwrap();
    let model = TaylorModel::init(3000, 1500, ModelKind::Quadratic, seed ^ 0x21a).unwrap();
    let (w_star, _plan) = build_witness(&target, &features, &rep, &model).unwrap();

    let x = sample_sphere(d, 10_000, seed ^ 0x21b);
    let g = features.stacked.layer.apply_batch(x.view()).unwrap();
    let h = whiten_batch(&rep, g.view()).unwrap();
    let gates = model.gates(h.view()).unwrap();
    let f_witness = model.forward_batch_with(h.view(), &gates, &w_star);
    let f_target = target.evaluate_batch(x.view());
    let dist = (&f_witness - &f_target).mapv(|v| v * v).mean().unwrap().sqrt();
    let norm4 = crate::taylor::norm24(&w_star).powi(4);
    // the degree-1 readout variance gives err ~ sqrt(35/D) ~ 0.15 at D=1500,
    // so the end-to-end distance centers near 0.3 with seed spread
    vec![
        upper("witness_degree2_l2_distance", dist, 0.5, "monte-carlo"),
        upper("witness_degree2_norm24_fourth", norm4, 108.0, "monte-carlo"),
    ]
}

fn check_held_out_opnorm(seed: u64) -> VerifyRow {
    let layer = FeatureLayer::sample(20, 40, true, seed ^ 0x31).unwrap();
    let rep =
        estimate_covariance(&layer, sample_sphere(20, 2000, seed ^ 0x32).view()).unwrap();
    let fresh = sample_sphere(20, 2000, seed ^ 0x33);
    let g = layer.apply_batch(fresh.view()).unwrap();
    let h = whiten_batch(&rep, g.view()).unwrap();
    let second = h.t().dot(&h) / 2000.0;
    upper("held_out_whitened_second_moment_opnorm", sym_op_norm(&second).unwrap(), 1.5, "monte-carlo")
}

fn check_monomial_rate(seed: u64) -> VerifyRow {
    let d = 5;
    let mut beta = Array1::zeros(d);
    beta[0] = (d as f64).sqrt();
    let x = sample_sphere(d, 8000, seed ^ 0x41);
    let mut worst: f64 = 0.0;
    let mut best = f64::INFINITY;
    for k in 1..=3usize {
        let mut ratios = Vec::new();
        for s in 0..3u64 {
            let mut errs = Vec::new();
            for (bi, budget) in [250usize, 1000, 4000].iter().enumerate() {
                let layer =
                    FeatureLayer::sample(d, *budget, true, seed + 1000 * s + bi as u64).unwrap();
                let mono = monomial_coeffs(&layer, beta.view(), k).unwrap();
                let g = layer.apply_batch(x.view()).unwrap();
                let est = mono.evaluate_batch(g.view());
                let target = x.dot(&beta).mapv(|t| t.powi(k as i32));
                errs.push((&est - &target).mapv(|v| v * v).mean().unwrap().sqrt());
            }
            ratios.push(errs[0] / errs[1]);
            ratios.push(errs[1] / errs[2]);
        }
        ratios.sort_by(f64::total_cmp);
        let median = ratios[ratios.len() / 2];
        worst = worst.max(median);
        best = best.min(median);
    }
    row(
        "monomial_l2_error_quadrupling_ratio",
        worst,
        3.0,
        "monte-carlo",
        best >= 1.4 && worst <= 3.0,
    )
}

fn check_lower_bound_contrast(seed: u64) -> Vec<VerifyRow> {
    let kernel = InfiniteKernel::new(PhiPrimeKind::Relu);
    let grid = default_lambda_grid();
    let hard = lower_bound_run(kernel, 30, 3, 900, &grid, seed ^ 0x61).unwrap();
    let easy = lower_bound_run(kernel, 30, 1, 600, &grid, seed ^ 0x62).unwrap();
    vec![
        lower("kernel_lower_bound_degree3_ratio", hard.best_ratio, 0.8, "monte-carlo"),
        upper("kernel_lower_bound_degree1_ratio", easy.best_ratio, 0.5, "monte-carlo"),
    ]
}

fn check_min_eig_estimator(seed: u64) -> VerifyRow {
    struct Diagonal {
        curv: Array2<f64>,
    }
    impl Objective for Diagonal {
        fn shape(&self) -> (usize, usize) {
            self.curv.dim()
        }
        fn value(&self, w: &Array2<f64>) -> Result<f64> {
            Ok(0.5 * (&self.curv * w * w).sum())
        }
        fn value_and_grad(&self, w: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
            Ok((self.value(w)?, &self.curv * w))
        }
        fn hvp(&self, _w: &Array2<f64>, u: &Array2<f64>) -> Result<Array2<f64>> {
            Ok(&self.curv * u)
        }
    }
    let mut curv = Array2::from_elem((3, 2), 2.0);
    curv[[2, 1]] = -1.0;
    let objective = Diagonal { curv };
    let est = min_hess_eig_estimate(&objective, &Array2::zeros((3, 2)), 4, seed).unwrap();
    row("min_eig_estimator_known_spectrum", est, -1.0, "constructed", (est + 1.0).abs() <= 0.1)
}

fn full_checks(seed: u64) -> Vec<VerifyRow> {
    let mut rows = vec![
        check_covariance_diagonal(seed),
        check_concentration_rate(seed),
        check_hadamard(seed),
        check_claim_concentration(seed),
        check_kernel_finite_width(seed),
        check_held_out_opnorm(seed),
        check_monomial_rate(seed),
        check_min_eig_estimator(seed),
    ];
    rows.extend(check_witness_quality(seed));
    rows.extend(check_lower_bound_contrast(seed));
    rows
}

/// Run the verification battery. `Fast` covers the closed forms, exact
/// identities, and small oracles; `Full` adds the Monte-Carlo and
/// concentration diagnostics at desk scale.
pub fn run_verify(level: VerifyLevel, seed: u64) -> Result<VerifyReport> {
    let mut rows = fast_checks(seed);
    if level == VerifyLevel::Full {
        rows.extend(full_checks(seed));
    }
    Ok(VerifyReport { rows, level })
}
