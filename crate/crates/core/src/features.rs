//! Frozen indicator random features and the constructive Hermite-coefficient
//! approximation of monomials `(beta . x)^k` by a linear readout of those
//! features.
//!
//! The readout weights are *universal*: neuron `j` with parameters `(v_j, b_j)`
//! gets coefficient `c_k H_k(v_j . beta / |beta|) gate(b_j) / D`, where the
//! bias gate keeps a thin window around zero and `c_k` is a calibration
//! constant. Averaged over the feature distribution this reproduces the
//! monomial exactly; a finite layer approximates it at the usual `1/sqrt(D)`
//! Monte-Carlo rate.

use crate::rng::substream;
use crate::{Error, Result};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::ops::Range;

/// Frozen bottom layer: `g(x) = 1{V x + b >= 0}` entrywise.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureLayer {
    /// Weight matrix, one row per feature (D x d).
    pub v: Array2<f64>,
    /// Biases, length D (all zero when `use_bias` is false).
    pub b: Array1<f64>,
    pub use_bias: bool,
    pub seed: u64,
}

impl FeatureLayer {
    /// Sample a layer with i.i.d. standard normal weights and biases.
    ///
    /// Deterministic in `(seed, d, features)`: the weight and bias streams are
    /// separate sub-streams of `seed`, so the same triple reproduces the layer
    /// bit-exactly.
    pub fn sample(d: usize, features: usize, use_bias: bool, seed: u64) -> Result<Self> {
        if d == 0 || features == 0 {
            return Err(Error::InvalidArgument(format!(
                "feature layer needs d >= 1 and features >= 1, got d={d}, features={features}"
            )));
        }
        let mut rng_v = substream(seed, "features.v");
        let v = Array2::from_shape_fn((features, d), |_| rng_v.sample(StandardNormal));
        let b = if use_bias {
            let mut rng_b = substream(seed, "features.b");
            Array1::from_shape_fn(features, |_| rng_b.sample(StandardNormal))
        } else {
            Array1::zeros(features)
        };
        Ok(Self { v, b, use_bias, seed })
    }

    /// Input dimension d.
    pub fn input_dim(&self) -> usize {
        self.v.ncols()
    }

    /// Number of features D.
    pub fn features(&self) -> usize {
        self.v.nrows()
    }

    fn check_unit(&self, x: ArrayView1<f64>) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "input has length {}, layer expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        let norm = x.dot(&x).sqrt();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "input must lie on the unit sphere (|x| = {norm:.12})"
            )));
        }
        Ok(())
    }

    /// Binary feature vector for one unit-norm input. Ties `v.x + b = 0` map
    /// to 1, matching the indicator `1{t >= 0}` literally.
    pub fn apply(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        self.check_unit(x)?;
        let pre = self.v.dot(&x) + &self.b;
        Ok(pre.mapv(|t| if t >= 0.0 { 1.0 } else { 0.0 }))
    }

    /// Binary features for a batch of unit-norm rows (n x d) -> (n x D).
    pub fn apply_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        for row in x.axis_iter(Axis(0)) {
            self.check_unit(row)?;
        }
        let mut pre = x.dot(&self.v.t());
        pre += &self.b;
        Ok(pre.mapv_into(|t| if t >= 0.0 { 1.0 } else { 0.0 }))
    }

    /// Copy of the rows `range` as a standalone layer (used for the stacked
    /// construction, where each block of rows serves one monomial term).
    pub fn slice_rows(&self, range: Range<usize>) -> FeatureLayer {
        FeatureLayer {
            v: self.v.slice(ndarray::s![range.clone(), ..]).to_owned(),
            b: self.b.slice(ndarray::s![range]).to_owned(),
            use_bias: self.use_bias,
            seed: self.seed,
        }
    }
}

/// Probabilists' Hermite polynomial `H_k(z)` by the three-term recurrence
/// `H_{k+1} = z H_k - k H_{k-1}`, `H_0 = 1`, `H_1 = z`.
pub fn hermite_poly(k: usize, z: f64) -> f64 {
    match k {
        0 => 1.0,
        1 => z,
        _ => {
            let (mut prev, mut cur) = (1.0, z);
            for j in 1..k {
                let next = z * cur - j as f64 * prev;
                prev = cur;
                cur = next;
            }
            cur
        }
    }
}

fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|j| (j as f64).ln()).sum()
}

/// Coefficients of the indicator `1{z >= 0}` in the orthonormal Hermite basis
/// under the standard Gaussian: 1/2 at degree 0, zero at even degrees >= 2,
/// and `(-1)^i sqrt(1/(2 pi (2i+1)!)) (2i)! / (2^i i!)` at degree `2i+1`.
/// Evaluated in log space so large degrees do not overflow.
pub fn hermite_coeff_indicator(k: usize) -> f64 {
    if k == 0 {
        return 0.5;
    }
    if k % 2 == 0 {
        return 0.0;
    }
    let i = (k - 1) / 2;
    let ln_mag = 0.5 * (-(2.0 * std::f64::consts::PI).ln() - ln_factorial(2 * i + 1))
        + ln_factorial(2 * i)
        - i as f64 * 2.0f64.ln()
        - ln_factorial(i);
    let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
    sign * ln_mag.exp()
}

/// Quadrature oracle for [`hermite_coeff_indicator`]: `E[1{z>=0} H_k(z)]`
/// under the standard Gaussian, divided by `sqrt(k!)`, via composite Simpson
/// on `[0, 12]`. Independent of the closed form; used by the verification
/// battery and the tests.
pub fn indicator_coeff_quadrature(k: usize) -> f64 {
    let n = 200_000;
    let hi = 12.0;
    let h = hi / n as f64;
    let phi = |z: f64| (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut acc = 0.0;
    for j in 0..n {
        let z0 = j as f64 * h;
        let z1 = z0 + h;
        let zm = 0.5 * (z0 + z1);
        acc += h / 6.0
            * (hermite_poly(k, z0) * phi(z0)
                + 4.0 * hermite_poly(k, zm) * phi(zm)
                + hermite_poly(k, z1) * phi(z1));
    }
    acc / ln_factorial(k).exp().sqrt()
}

/// Whether the degree-`k` bias gate is open at bias value `b`:
/// `0 < -b < 1/(2k)` for even `k`, `|b| < 1/(2k)` for odd `k`.
pub fn gate_open(k: usize, b: f64) -> bool {
    assert!(k >= 1, "gate is only defined for degree >= 1");
    let w = 1.0 / (2.0 * k as f64);
    if k % 2 == 0 { -b > 0.0 && -b < w } else { b.abs() < w }
}

/// Composite Simpson rule on `[lo, hi]` with `2n` panels.
fn simpson(lo: f64, hi: f64, n: usize, f: impl Fn(f64) -> f64) -> f64 {
    let m = 2 * n;
    let h = (hi - lo) / m as f64;
    let mut acc = f(lo) + f(hi);
    for j in 1..m {
        let w = if j % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(lo + j as f64 * h);
    }
    acc * h / 3.0
}

/// Calibration constant `q_k` of the gated-Hermite readout: the expectation
/// over the bias of `gate(b) H_{k-1}(-b) phi(b)`, where `phi(b)` is both the
/// Gaussian tail-integral factor and the bias density, giving the 1-D integral
/// `q_k = int gate(b) H_{k-1}(-b) exp(-b^2) / (2 pi) db`.
pub fn gate_calibration(k: usize) -> f64 {
    assert!(k >= 1);
    let w = 1.0 / (2.0 * k as f64);
    let integrand =
        |b: f64| hermite_poly(k - 1, -b) * (-b * b).exp() / (2.0 * std::f64::consts::PI);
    if k % 2 == 0 {
        simpson(-w, 0.0, 2048, integrand)
    } else {
        simpson(-w, w, 2048, integrand)
    }
}

/// Per-neuron readout coefficients approximating one monomial.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MonomialCoeffs {
    pub target_beta: Array1<f64>,
    pub degree: usize,
    /// Per-neuron coefficients `a(v_j, b_j) / D`, length D. Exactly zero on
    /// neurons whose bias gate is closed.
    pub coeffs: Array1<f64>,
    /// Normalization constant `c_k = |beta|^k / q_k` (the constant 2 at k=0).
    pub c_k: f64,
}

impl MonomialCoeffs {
    /// Readout `coeffs . g(x)` on precomputed binary features (n x D).
    pub fn evaluate_batch(&self, g: ArrayView2<f64>) -> Array1<f64> {
        g.dot(&self.coeffs)
    }
}

/// Readout coefficients so that `coeffs . g(x)` approximates `(beta . x)^k`
/// in L2 over the sphere.
///
/// Degree 0 uses the constant coefficient 2 on every neuron (symmetry makes
/// `E[2 * 1{v.x + b >= 0}] = 1` whether or not the layer has biases); degrees
/// >= 1 require a biased layer because the gate lives on the bias.
pub fn monomial_coeffs(
    layer: &FeatureLayer,
    beta: ArrayView1<f64>,
    k: usize,
) -> Result<MonomialCoeffs> {
    if beta.len() != layer.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "beta has length {}, layer expects {}",
            beta.len(),
            layer.input_dim()
        )));
    }
    let d_count = layer.features() as f64;
    if k == 0 {
        return Ok(MonomialCoeffs {
            target_beta: beta.to_owned(),
            degree: 0,
            coeffs: Array1::from_elem(layer.features(), 2.0 / d_count),
            c_k: 2.0,
        });
    }
    if !layer.use_bias {
        return Err(Error::InvalidArgument(format!(
            "degree {k} >= 1 needs a biased layer: the bias gate of the construction is degenerate at b = 0"
        )));
    }
    let beta_norm = beta.dot(&beta).sqrt();
    if beta_norm == 0.0 {
        return Err(Error::InvalidArgument("beta must be nonzero".into()));
    }
    let q_k = gate_calibration(k);
    let c_k = beta_norm.powi(k as i32) / q_k;
    let beta_hat = beta.mapv(|v| v / beta_norm);
    let proj = layer.v.dot(&beta_hat);
    let coeffs = Array1::from_shape_fn(layer.features(), |j| {
        if gate_open(k, layer.b[j]) {
            c_k * hermite_poly(k, proj[j]) / d_count
        } else {
            0.0
        }
    });
    Ok(MonomialCoeffs { target_beta: beta.to_owned(), degree: k, coeffs, c_k })
}

/// One stacked layer and block-diagonal readout approximating a sum of
/// monomials: block `s` (rows `blocks[s]`) carries the coefficients for
/// `(beta_s . x)^{k_s}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StackedCoeffs {
    pub layer: FeatureLayer,
    /// Concatenated per-block coefficients, length `sum(budgets)`.
    pub coeffs: Array1<f64>,
    /// Row ranges of the stacked layer, one per term; they partition `0..D`.
    pub blocks: Vec<Range<usize>>,
    /// The calibration constant used in each block.
    pub c_ks: Vec<f64>,
}

impl StackedCoeffs {
    pub fn evaluate_batch(&self, g: ArrayView2<f64>) -> Array1<f64> {
        g.dot(&self.coeffs)
    }
}

/// Build one stacked feature layer of size `sum(budgets)` whose linear
/// readout approximates `sum_s (beta_s . x)^{k_s}`.
pub fn stacked_poly_coeffs(
    specs: &[(Array1<f64>, usize)],
    budgets: &[usize],
    seed: u64,
) -> Result<StackedCoeffs> {
    if specs.is_empty() {
        return Err(Error::InvalidArgument("stacked construction needs at least one term".into()));
    }
    if specs.len() != budgets.len() {
        return Err(Error::InvalidArgument(format!(
            "{} terms but {} budgets",
            specs.len(),
            budgets.len()
        )));
    }
    if budgets.iter().any(|&b| b == 0) {
        return Err(Error::InvalidArgument("per-term feature budgets must be positive".into()));
    }
    let d = specs[0].0.len();
    let total: usize = budgets.iter().sum();
    let layer = FeatureLayer::sample(d, total, true, seed)?;
    let mut coeffs = Array1::zeros(total);
    let mut blocks = Vec::with_capacity(specs.len());
    let mut c_ks = Vec::with_capacity(specs.len());
    let mut start = 0usize;
    for ((beta, k), &budget) in specs.iter().zip(budgets) {
        let range = start..start + budget;
        let block = layer.slice_rows(range.clone());
        let mono = monomial_coeffs(&block, beta.view(), *k)?;
        coeffs.slice_mut(ndarray::s![range.clone()]).assign(&mono.coeffs);
        c_ks.push(mono.c_k);
        blocks.push(range);
        start += budget;
    }
    Ok(StackedCoeffs { layer, coeffs, blocks, c_ks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::sample_sphere;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn double_factorial(n: i64) -> f64 {
        let mut acc = 1.0;
        let mut j = n;
        while j > 1 {
            acc *= j as f64;
            j -= 2;
        }
        acc
    }

    #[test]
    fn sampling_is_deterministic_in_seed() {
        let a = FeatureLayer::sample(3, 5, true, 7).unwrap();
        let b = FeatureLayer::sample(3, 5, true, 7).unwrap();
        assert_eq!(a.v, b.v);
        assert_eq!(a.b, b.b);
    }

    #[test]
    fn biasless_layer_has_zero_biases() {
        let layer = FeatureLayer::sample(2, 4, false, 1).unwrap();
        assert!(layer.b.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn rejects_empty_dims() {
        assert!(FeatureLayer::sample(0, 5, true, 1).is_err());
        assert!(FeatureLayer::sample(5, 0, true, 1).is_err());
    }

    #[test]
    fn weight_sample_mean_within_clt_band() {
        // 4 / sqrt(D * d) band on the empirical mean of 1e5 standard normals
        let layer = FeatureLayer::sample(50, 2000, false, 3).unwrap();
        let mean = layer.v.mean().unwrap();
        assert!(mean.abs() <= 4.0 / (2000.0f64 * 50.0).sqrt(), "mean = {mean}");
    }

    #[test]
    fn ties_map_to_one() {
        // craft a layer whose preactivations at x = e1 are (0.5, -0.2, 0.0)
        let layer = FeatureLayer {
            v: array![[0.5, 0.0], [-0.2, 0.0], [0.0, 1.0]],
            b: array![0.0, 0.0, 0.0],
            use_bias: false,
            seed: 0,
        };
        let g = layer.apply(array![1.0, 0.0].view()).unwrap();
        assert_eq!(g, array![1.0, 0.0, 1.0]);
    }

    #[test]
    fn sign_antisymmetry_without_bias() {
        let layer = FeatureLayer::sample(6, 64, false, 11).unwrap();
        let x = sample_sphere(6, 1, 5).row(0).to_owned();
        let g_pos = layer.apply(x.view()).unwrap();
        let g_neg = layer.apply(x.mapv(|v| -v).view()).unwrap();
        for j in 0..64 {
            let pre = layer.v.row(j).dot(&x);
            if pre != 0.0 {
                assert_eq!(g_pos[j] + g_neg[j], 1.0);
            }
        }
    }

    #[test]
    fn rejects_off_sphere_input() {
        let layer = FeatureLayer::sample(3, 4, false, 2).unwrap();
        let err = layer.apply(array![1.0, 1.0, 0.0].view());
        assert!(err.is_err());
    }

    #[test]
    fn fraction_of_ones_near_half() {
        let layer = FeatureLayer::sample(20, 5000, false, 13).unwrap();
        let x = sample_sphere(20, 1, 17).row(0).to_owned();
        let g = layer.apply(x.view()).unwrap();
        let frac = g.mean().unwrap();
        assert!((frac - 0.5).abs() <= 0.03, "fraction = {frac}");
    }

    #[test]
    fn hermite_low_degrees() {
        assert_eq!(hermite_poly(0, 3.7), 1.0);
        assert_eq!(hermite_poly(1, 2.0), 2.0);
        // H_3(z) = z^3 - 3z
        assert_abs_diff_eq!(hermite_poly(3, 1.0), -2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(hermite_poly(2, 1.5), 1.5 * 1.5 - 1.0, epsilon = 1e-12);
    }

    #[test]
    fn indicator_coeffs_match_quadrature() {
        assert_eq!(hermite_coeff_indicator(0), 0.5);
        assert_eq!(hermite_coeff_indicator(2), 0.0);
        assert_abs_diff_eq!(
            hermite_coeff_indicator(1),
            1.0 / (2.0 * std::f64::consts::PI).sqrt(),
            epsilon = 1e-12
        );
        for k in 1..=15 {
            assert_abs_diff_eq!(
                hermite_coeff_indicator(k),
                indicator_coeff_quadrature(k),
                epsilon = 1e-10
            );
        }
    }

    #[test]
    fn indicator_coeffs_parseval_partial_sum() {
        // the partial sum must stay below the full second moment 1/2 and
        // match the independent quadrature oracle; the slow i^{-3/2} tail
        // leaves about 0.0196 beyond degree 41
        let sum: f64 = (0..=41).map(|k| hermite_coeff_indicator(k).powi(2)).sum();
        assert!(sum <= 0.5 + 1e-12, "partial sum {sum} exceeds E[1^2] = 1/2");
        let oracle: f64 = (0..=41).map(|k| indicator_coeff_quadrature(k).powi(2)).sum();
        assert_abs_diff_eq!(sum, oracle, epsilon = 1e-9);
        assert!(sum >= 0.48, "partial sum {sum} below the oracle value 0.4804");
    }

    #[test]
    fn degree_zero_readout_is_constant_two() {
        let layer = FeatureLayer::sample(4, 100, true, 5).unwrap();
        let beta = array![1.0, 0.0, 0.0, 0.0];
        let mono = monomial_coeffs(&layer, beta.view(), 0).unwrap();
        assert!(mono.coeffs.iter().all(|&a| a == 2.0 / 100.0));
        // symmetry forces E[2 * indicator] = 1; check on a large fresh layer
        let big = FeatureLayer::sample(4, 50_000, true, 6).unwrap();
        let x = sample_sphere(4, 1, 7).row(0).to_owned();
        let g = big.apply(x.view()).unwrap();
        let est = monomial_coeffs(&big, beta.view(), 0).unwrap().coeffs.dot(&g);
        assert!((est - 1.0).abs() < 0.05, "E[2 * 1{{..}}] estimate = {est}");
    }

    #[test]
    fn degree_one_needs_bias() {
        let layer = FeatureLayer::sample(4, 16, false, 5).unwrap();
        assert!(monomial_coeffs(&layer, array![1.0, 0.0, 0.0, 0.0].view(), 1).is_err());
    }

    #[test]
    fn closed_gate_coefficients_are_exactly_zero() {
        let layer = FeatureLayer::sample(5, 4000, true, 21).unwrap();
        for k in 1..=4 {
            let mono = monomial_coeffs(&layer, array![0.3, 0.0, 0.0, 0.4, 0.0].view(), k).unwrap();
            for j in 0..layer.features() {
                if !gate_open(k, layer.b[j]) {
                    assert_eq!(mono.coeffs[j], 0.0);
                }
            }
        }
    }

    #[test]
    fn calibration_constant_within_paper_bound() {
        // |c_k| <= 200 k^2 |beta|^k / (k-1)!!
        for k in 1..=6 {
            let beta_norm = 1.7f64;
            let c_k = beta_norm.powi(k as i32) / gate_calibration(k);
            let bound = 200.0 * (k * k) as f64 * beta_norm.powi(k as i32)
                / double_factorial(k as i64 - 1);
            assert!(
                c_k.abs() <= bound,
                "k={k}: |c_k| = {} exceeds {}",
                c_k.abs(),
                bound
            );
        }
    }

    /// Unbiasedness oracle: a 2-D Monte Carlo over fresh neurons checks that
    /// the mean of `a(v,b) 1{v.x + b >= 0}` reproduces `(beta . x)^k` within
    /// 5 Monte-Carlo standard errors.
    #[test]
    fn readout_is_unbiased_over_fresh_neurons() {
        let d = 4;
        let x = sample_sphere(d, 1, 23).row(0).to_owned();
        let beta = array![0.9, -0.4, 0.2, 0.1];
        let layer = FeatureLayer::sample(d, 200_000, true, 29).unwrap();
        let g = layer.apply(x.view()).unwrap();
        for k in 1..=3 {
            let mono = monomial_coeffs(&layer, beta.view(), k).unwrap();
            let terms: Vec<f64> = (0..layer.features())
                .map(|j| mono.coeffs[j] * g[j] * layer.features() as f64)
                .collect();
            let mean = crate::linalg::pairwise_mean(&terms);
            let var = crate::linalg::pairwise_mean(
                &terms.iter().map(|t| (t - mean) * (t - mean)).collect::<Vec<_>>(),
            );
            let se = (var / terms.len() as f64).sqrt();
            let target = beta.dot(&x).powi(k as i32);
            assert!(
                (mean - target).abs() <= 5.0 * se,
                "k={k}: estimate {mean} vs target {target} (se {se})"
            );
        }
    }

    #[test]
    fn stacked_single_term_matches_monomial_embedding() {
        let beta = array![1.0, 0.5, 0.0];
        let stacked = stacked_poly_coeffs(&[(beta.clone(), 2)], &[500], 31).unwrap();
        let mono = monomial_coeffs(&stacked.layer, beta.view(), 2).unwrap();
        assert_eq!(stacked.blocks, vec![0..500]);
        assert_eq!(stacked.coeffs, mono.coeffs);
    }

    #[test]
    fn stacked_blocks_partition_rows() {
        let specs = vec![
            (array![1.0, 0.0, 0.0, 0.0, 0.0, 0.0], 1),
            (array![0.0, 1.0, 0.0, 0.0, 0.0, 0.0], 1),
            (array![0.0, 0.0, 1.0, 0.0, 0.0, 0.0], 3),
        ];
        let stacked = stacked_poly_coeffs(&specs, &[100, 200, 50], 37).unwrap();
        let mut covered = vec![false; 350];
        for block in &stacked.blocks {
            for j in block.clone() {
                assert!(!covered[j], "row {j} assigned twice");
                covered[j] = true;
            }
        }
        assert!(covered.iter().all(|&c| c));
        assert_eq!(stacked.layer.features(), 350);
    }

    #[test]
    fn stacked_error_obeys_triangle_inequality() {
        let d = 6;
        let specs = vec![
            (array![1.0, 0.0, 0.0, 0.0, 0.0, 0.0], 1),
            (array![0.0, 1.0, 0.0, 0.0, 0.0, 0.0], 1),
        ];
        let stacked = stacked_poly_coeffs(&specs, &[4000, 4000], 41).unwrap();
        let x = sample_sphere(d, 2000, 43);
        let g = stacked.layer.apply_batch(x.view()).unwrap();
        let total = stacked.evaluate_batch(g.view());
        let f_true = x.column(0).to_owned() + x.column(1).to_owned();

        let mut per_block_err_sum = 0.0;
        for (s, block) in stacked.blocks.iter().enumerate() {
            let gs = g.slice(ndarray::s![.., block.clone()]);
            let coeffs_s = stacked.coeffs.slice(ndarray::s![block.clone()]);
            let est_s = gs.dot(&coeffs_s);
            let target_s = x.column(s).to_owned();
            let err: f64 =
                (&est_s - &target_s).mapv(|e| e * e).mean().unwrap().sqrt();
            per_block_err_sum += err;
        }
        let total_err: f64 = (&total - &f_true).mapv(|e| e * e).mean().unwrap().sqrt();
        assert!(total_err <= per_block_err_sum + 1e-12);
    }

    proptest::proptest! {
        /// Gate parity: even-degree gates only open for negative biases,
        /// odd-degree gates are symmetric.
        #[test]
        fn gate_parity(b in -1.0f64..1.0, k in 1usize..6) {
            if gate_open(k, b) {
                proptest::prop_assert!(b.abs() < 1.0 / (2.0 * k as f64) + 1e-15);
                if k % 2 == 0 {
                    proptest::prop_assert!(b < 0.0);
                }
            }
            if k % 2 == 1 {
                proptest::prop_assert_eq!(gate_open(k, b), gate_open(k, -b));
            }
        }
    }
}
