//! Synthetic tasks: uniform sphere inputs, low-rank polynomial targets
//! `f*(x) = sum_s alpha_s (beta_s . x)^{p_s}`, and labeled splits.

use crate::rng::substream;
use crate::{Error, Result};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Label range accepted by the shipped regression loss; value-channel labels
/// are clipped to `[-VALUE_CLIP, VALUE_CLIP]` so that `loss(0, y) <= 1`.
pub const VALUE_CLIP: f64 = 1.3;

/// `n` i.i.d. points uniform on the unit sphere `S^{d-1}` (normalized
/// standard Gaussians), one per row.
pub fn sample_sphere(d: usize, n: usize, seed: u64) -> Array2<f64> {
    assert!(d >= 1, "sphere dimension must be >= 1");
    let mut rng = substream(seed, "sphere");
    let mut x = Array2::from_shape_fn((n, d), |_| rng.sample::<f64, _>(StandardNormal));
    for mut row in x.axis_iter_mut(Axis(0)) {
        let mut norm = row.dot(&row).sqrt();
        while norm == 0.0 {
            // astronomically unlikely; resample the row rather than divide by zero
            for v in row.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            norm = row.dot(&row).sqrt();
        }
        row.mapv_inplace(|v| v / norm);
    }
    x
}

/// Rescaled-Gaussian sphere variant: `x = S^{1/2} z / |S^{1/2} z|` with
/// `S = diag(scales)`. Used only by covariance diagnostics on non-uniform
/// inputs.
pub fn sample_rescaled_sphere(scales: ArrayView1<f64>, n: usize, seed: u64) -> Array2<f64> {
    let d = scales.len();
    let sqrt_scales = scales.mapv(f64::sqrt);
    let mut rng = substream(seed, "sphere.rescaled");
    let mut x = Array2::from_shape_fn((n, d), |_| rng.sample::<f64, _>(StandardNormal));
    for mut row in x.axis_iter_mut(Axis(0)) {
        for (v, s) in row.iter_mut().zip(sqrt_scales.iter()) {
            *v *= s;
        }
        let norm = row.dot(&row).sqrt();
        row.mapv_inplace(|v| v / norm);
    }
    x
}

fn double_factorial_odd(p: usize) -> f64 {
    // (2p - 1)!!
    (0..p).map(|j| (2 * j + 1) as f64).product()
}

/// Exact L2 norm of the monomial `(beta . x)^p` over `x ~ Unif(S^{d-1})`:
/// `|beta|^p sqrt((2p-1)!! / prod_{j<p} (d + 2j))`.
pub fn monomial_l2_norm(beta: ArrayView1<f64>, p: usize, d: usize) -> f64 {
    assert!(p >= 1, "monomial degree must be >= 1");
    let beta_norm = beta.dot(&beta).sqrt();
    let denom: f64 = (0..p).map(|j| (d + 2 * j) as f64).product();
    beta_norm.powi(p as i32) * (double_factorial_odd(p) / denom).sqrt()
}

/// One term of a low-rank polynomial target.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolyTerm {
    pub alpha: f64,
    pub beta: Array1<f64>,
    pub degree: usize,
}

/// Low-rank polynomial `f*(x) = sum_s alpha_s (beta_s . x)^{p_s}` with
/// normalization metadata.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolyTarget {
    pub terms: Vec<PolyTerm>,
    pub r_star: usize,
    pub p_max: usize,
    /// L2 norm of each monomial before normalization (1.0 when `normalize`
    /// was off or the term was already normalized).
    pub original_scales: Vec<f64>,
}

impl PolyTarget {
    pub fn evaluate(&self, x: ArrayView1<f64>) -> f64 {
        self.terms
            .iter()
            .map(|t| t.alpha * t.beta.dot(&x).powi(t.degree as i32))
            .sum()
    }

    pub fn evaluate_batch(&self, x: ArrayView2<f64>) -> Array1<f64> {
        let mut out = Array1::zeros(x.nrows());
        for t in &self.terms {
            let proj = x.dot(&t.beta);
            out += &proj.mapv(|z| t.alpha * z.powi(t.degree as i32));
        }
        out
    }
}

/// A raw term for [`make_target`]; `beta: None` draws a random direction
/// of norm `sqrt(d)` from the target sub-stream.
#[derive(Debug, Clone)]
pub struct RawTerm {
    pub alpha: f64,
    pub beta: Option<Array1<f64>>,
    pub degree: usize,
}

/// Assemble a [`PolyTarget`]. With `normalize` set, each `beta_s` is rescaled
/// so the monomial has unit L2 norm over the sphere and `alpha_s` is clipped
/// into `[-1, 1]`; the pre-normalization scales are recorded.
pub fn make_target(raw: &[RawTerm], d: usize, normalize: bool, seed: u64) -> Result<PolyTarget> {
    if raw.is_empty() {
        return Err(Error::InvalidArgument("target needs at least one term".into()));
    }
    let mut rng = substream(seed, "target.beta");
    let mut terms = Vec::with_capacity(raw.len());
    let mut original_scales = Vec::with_capacity(raw.len());
    let mut p_max = 0usize;
    for term in raw {
        if term.degree == 0 {
            return Err(Error::InvalidArgument(
                "degree-0 terms are excluded from the target family".into(),
            ));
        }
        let mut beta = match &term.beta {
            Some(b) => {
                if b.len() != d {
                    return Err(Error::DimensionMismatch(format!(
                        "beta has length {}, target dimension is {d}",
                        b.len()
                    )));
                }
                b.clone()
            }
            None => {
                let mut v = Array1::from_shape_fn(d, |_| rng.sample::<f64, _>(StandardNormal));
                let norm = v.dot(&v).sqrt();
                v.mapv_inplace(|z| z / norm * (d as f64).sqrt());
                v
            }
        };
        if beta.dot(&beta) == 0.0 {
            return Err(Error::InvalidArgument("zero beta in target term".into()));
        }
        let scale = monomial_l2_norm(beta.view(), term.degree, d);
        let mut alpha = term.alpha;
        if normalize {
            beta.mapv_inplace(|z| z / scale.powf(1.0 / term.degree as f64));
            alpha = alpha.clamp(-1.0, 1.0);
            original_scales.push(scale);
        } else {
            original_scales.push(1.0);
        }
        p_max = p_max.max(term.degree);
        terms.push(PolyTerm { alpha, beta, degree: term.degree });
    }
    Ok(PolyTarget { r_star: terms.len(), terms, p_max, original_scales })
}

/// How target values become labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelChannel {
    /// `y = sign(f*(x))` with independent flips at the noise rate.
    Sign,
    /// `y = clip(f*(x))` plus Gaussian noise of the given std.
    Value,
}

/// Labels plus a report of how many values hit the clip range.
#[derive(Debug, Clone)]
pub struct Labels {
    pub y: Array1<f64>,
    pub clipped: usize,
}

/// Generate labels for the rows of `x`. For the sign channel `noise` is a
/// flip probability; for the value channel it is a Gaussian noise std.
pub fn label(
    target: &PolyTarget,
    x: ArrayView2<f64>,
    channel: LabelChannel,
    noise: f64,
    seed: u64,
) -> Labels {
    let f = target.evaluate_batch(x);
    let mut rng = substream(seed, "labels");
    match channel {
        LabelChannel::Sign => {
            let mut y = f.mapv(|v| if v >= 0.0 { 1.0 } else { -1.0 });
            if noise > 0.0 {
                for v in y.iter_mut() {
                    if rng.random::<f64>() < noise {
                        *v = -*v;
                    }
                }
            }
            Labels { y, clipped: 0 }
        }
        LabelChannel::Value => {
            let mut clipped = 0usize;
            let mut y = f.mapv(|v| {
                if v.abs() > VALUE_CLIP {
                    clipped += 1;
                    v.clamp(-VALUE_CLIP, VALUE_CLIP)
                } else {
                    v
                }
            });
            if noise > 0.0 {
                for v in y.iter_mut() {
                    *v += noise * rng.sample::<f64, _>(StandardNormal);
                }
            }
            Labels { y, clipped }
        }
    }
}

/// Train / unlabeled / test split, all rows unit norm, disjoint by
/// construction (separate sub-streams of the split seed).
#[derive(Debug, Clone)]
pub struct SplitDataset {
    pub train_x: Array2<f64>,
    pub train_y: Array1<f64>,
    pub unlabeled: Array2<f64>,
    pub test_x: Array2<f64>,
    pub test_y: Array1<f64>,
    pub seed: u64,
    pub noise: f64,
    pub clipped_train: usize,
    pub clipped_test: usize,
}

/// Labeled samples as CSV for external inspection: one row per sample,
/// feature coordinates first, label last.
pub fn dataset_to_csv(x: ArrayView2<f64>, y: ArrayView1<f64>) -> String {
    let mut out = String::new();
    for (row, label) in x.axis_iter(Axis(0)).zip(y.iter()) {
        for v in row.iter() {
            out.push_str(&format!("{v:.16e},"));
        }
        out.push_str(&format!("{label:.16e}\n"));
    }
    out
}

/// Draw a full split for a target. Each part has its own sub-stream, so the
/// same seed reproduces the identical split and parts never alias.
pub fn make_split(
    target: &PolyTarget,
    d: usize,
    n: usize,
    n0: usize,
    n_test: usize,
    channel: LabelChannel,
    noise: f64,
    seed: u64,
) -> SplitDataset {
    let train_x = sample_sphere(d, n, seed ^ 0x7261_696e);
    let unlabeled = sample_sphere(d, n0, seed ^ 0x756e_6c61);
    let test_x = sample_sphere(d, n_test, seed ^ 0x7465_7374);
    let train = label(target, train_x.view(), channel, noise, seed ^ 0x6c61_6201);
    let test = label(target, test_x.view(), channel, noise, seed ^ 0x6c61_6202);
    SplitDataset {
        train_x,
        train_y: train.y,
        unlabeled,
        test_x,
        test_y: test.y,
        seed,
        noise,
        clipped_train: train.clipped,
        clipped_test: test.clipped,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn sphere_rows_are_unit_norm() {
        let x = sample_sphere(7, 500, 3);
        for row in x.axis_iter(Axis(0)) {
            assert_abs_diff_eq!(row.dot(&row).sqrt(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn sphere_mean_vector_is_small() {
        let n = 100_000;
        let x = sample_sphere(10, n, 5);
        let mean = x.mean_axis(Axis(0)).unwrap();
        let norm = mean.dot(&mean).sqrt();
        assert!(norm <= 4.0 / ((n * 10) as f64).sqrt(), "mean norm {norm}");
    }

    #[test]
    fn sphere_coordinate_second_moment() {
        let n = 100_000;
        let d = 10;
        let x = sample_sphere(d, n, 7);
        let sq: Vec<f64> = x.column(0).iter().map(|v| v * v).collect();
        let mean = crate::linalg::pairwise_mean(&sq);
        let var = crate::linalg::pairwise_mean(
            &sq.iter().map(|v| (v - mean) * (v - mean)).collect::<Vec<_>>(),
        );
        let se = (var / n as f64).sqrt();
        assert!((mean - 1.0 / d as f64).abs() <= 3.0 * se);
    }

    #[test]
    fn rescaled_sphere_is_unit_norm_and_anisotropic() {
        let scales = array![9.0, 1.0, 1.0, 1.0];
        let x = sample_rescaled_sphere(scales.view(), 20_000, 13);
        for row in x.axis_iter(Axis(0)).take(50) {
            assert_abs_diff_eq!(row.dot(&row).sqrt(), 1.0, epsilon = 1e-12);
        }
        // mass concentrates on the upscaled coordinate
        let first: f64 = x.column(0).iter().map(|v| v * v).sum::<f64>() / 20_000.0;
        assert!(first > 0.5, "E[x1^2] = {first} not inflated by the scale");
    }

    #[test]
    fn monomial_norm_degree_one() {
        let beta = array![0.0, 3.0, 0.0, 4.0];
        assert_abs_diff_eq!(
            monomial_l2_norm(beta.view(), 1, 4),
            5.0 / 2.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn monomial_norm_degree_two_d10() {
        let beta = Array1::from_elem(10, 1.0 / (10f64).sqrt());
        assert_abs_diff_eq!(
            monomial_l2_norm(beta.view(), 2, 10),
            (3.0f64 / 120.0).sqrt(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn monomial_norm_homogeneity() {
        let beta = array![0.2, -0.4, 0.9];
        for p in 1..=4 {
            let one = monomial_l2_norm(beta.view(), p, 3);
            let two = monomial_l2_norm(beta.mapv(|v| 2.0 * v).view(), p, 3);
            assert_abs_diff_eq!(two, one * 2.0f64.powi(p as i32), epsilon = 1e-10);
        }
    }

    #[test]
    fn monomial_norm_matches_monte_carlo() {
        for &d in &[5usize, 20] {
            let x = sample_sphere(d, 1_000_000, 11);
            let mut beta = Array1::zeros(d);
            beta[0] = 0.8;
            beta[1] = -0.6;
            let proj = x.dot(&beta);
            for p in 1..=5 {
                let vals: Vec<f64> = proj.iter().map(|t| t.powi(2 * p as i32)).collect();
                let mean = crate::linalg::pairwise_mean(&vals);
                let var = crate::linalg::pairwise_mean(
                    &vals.iter().map(|v| (v - mean) * (v - mean)).collect::<Vec<_>>(),
                );
                let se = (var / vals.len() as f64).sqrt();
                let exact = monomial_l2_norm(beta.view(), p, d).powi(2);
                assert!(
                    (mean - exact).abs() <= 3.0 * se.max(1e-12),
                    "d={d} p={p}: mc {mean} vs exact {exact} (se {se})"
                );
            }
        }
    }

    #[test]
    fn normalization_solves_for_unit_monomial_norm() {
        // d=4, p=1: |beta| / sqrt(4) = 1 forces |beta| = 2
        let raw = vec![RawTerm { alpha: 1.0, beta: Some(array![1.0, 0.0, 0.0, 0.0]), degree: 1 }];
        let target = make_target(&raw, 4, true, 0).unwrap();
        assert_abs_diff_eq!(target.terms[0].beta[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(
            monomial_l2_norm(target.terms[0].beta.view(), 1, 4),
            1.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn evaluate_along_beta_direction() {
        let raw = vec![RawTerm { alpha: 0.7, beta: Some(array![1.5, 0.0]), degree: 3 }];
        let target = make_target(&raw, 2, false, 0).unwrap();
        let x = array![1.0, 0.0];
        assert_abs_diff_eq!(target.evaluate(x.view()), 0.7 * 1.5f64.powi(3), epsilon = 1e-12);
    }

    #[test]
    fn normalized_target_l2_bounded_by_rank() {
        let raw: Vec<RawTerm> = (0..3)
            .map(|_| RawTerm { alpha: 1.0, beta: None, degree: 4 })
            .collect();
        let target = make_target(&raw, 8, true, 13).unwrap();
        let x = sample_sphere(8, 100_000, 17);
        let f = target.evaluate_batch(x.view());
        let sq = f.mapv(|v| v * v).mean().unwrap();
        let r2 = (target.r_star * target.r_star) as f64;
        assert!(sq <= r2 * 1.05, "empirical |f*|^2 = {sq} exceeds r*^2 = {r2}");
    }

    #[test]
    fn rejects_degenerate_terms() {
        assert!(make_target(&[], 3, true, 0).is_err());
        let zero = vec![RawTerm { alpha: 1.0, beta: Some(array![0.0, 0.0, 0.0]), degree: 2 }];
        assert!(make_target(&zero, 3, true, 0).is_err());
        let p0 = vec![RawTerm { alpha: 1.0, beta: Some(array![1.0, 0.0, 0.0]), degree: 0 }];
        assert!(make_target(&p0, 3, true, 0).is_err());
    }

    #[test]
    fn sign_labels_noiseless_and_noisy() {
        let raw = vec![RawTerm { alpha: 1.0, beta: Some(array![2.0, 0.0, 0.0]), degree: 1 }];
        let target = make_target(&raw, 3, false, 0).unwrap();
        let x = sample_sphere(3, 20_000, 19);
        let clean = label(&target, x.view(), LabelChannel::Sign, 0.0, 23);
        for (y, x_row) in clean.y.iter().zip(x.axis_iter(Axis(0))) {
            let f = target.evaluate(x_row);
            if f > 0.0 {
                assert_eq!(*y, 1.0);
            }
        }
        let noisy = label(&target, x.view(), LabelChannel::Sign, 0.5, 23);
        let agree = clean
            .y
            .iter()
            .zip(noisy.y.iter())
            .filter(|(a, b)| a == b)
            .count() as f64
            / clean.y.len() as f64;
        let se = 0.5 / (clean.y.len() as f64).sqrt();
        assert!((agree - 0.5).abs() <= 3.0 * se, "agreement {agree}");
    }

    #[test]
    fn value_labels_equal_target_when_unclipped() {
        let raw = vec![RawTerm { alpha: 0.9, beta: None, degree: 2 }];
        let target = make_target(&raw, 5, true, 29).unwrap();
        let x = sample_sphere(5, 1000, 31);
        let out = label(&target, x.view(), LabelChannel::Value, 0.0, 37);
        let f = target.evaluate_batch(x.view());
        for (y, f) in out.y.iter().zip(f.iter()) {
            if f.abs() <= VALUE_CLIP {
                assert_eq!(*y, *f);
            }
        }
    }

    #[test]
    fn csv_export_puts_label_last() {
        let x = sample_sphere(3, 4, 51);
        let y = Array1::from_vec(vec![1.0, -1.0, 1.0, -1.0]);
        let csv = dataset_to_csv(x.view(), y.view());
        assert_eq!(csv.lines().count(), 4);
        for (line, label) in csv.lines().zip(y.iter()) {
            assert_eq!(line.split(',').count(), 4);
            let last: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
            assert_eq!(last, *label);
        }
    }

    #[test]
    fn splits_are_reproducible() {
        let raw = vec![RawTerm { alpha: 1.0, beta: None, degree: 4 }];
        let target = make_target(&raw, 6, true, 41).unwrap();
        let a = make_split(&target, 6, 50, 60, 70, LabelChannel::Value, 0.0, 43);
        let b = make_split(&target, 6, 50, 60, 70, LabelChannel::Value, 0.0, 43);
        assert_eq!(a.train_x, b.train_x);
        assert_eq!(a.train_y, b.train_y);
        assert_eq!(a.unlabeled, b.unlabeled);
        assert_eq!(a.test_x, b.test_x);
        // different parts use different sub-streams
        assert_ne!(a.train_x.row(0), a.test_x.row(0));
    }
}
