//! Explicit witness weights certifying what the quadratic model can express:
//! neurons are partitioned by the sign of `a_r`, each target term gets a
//! group of `m0` identical rows built from its feature-block readout through
//! `Sigma_hat^{1/2}`, and odd degrees are split as a difference of squares
//! across two groups of opposite sign.

use crate::features::StackedCoeffs;
use crate::synth::PolyTarget;
use crate::taylor::TaylorModel;
use crate::whiten::WhitenedRep;
use crate::{Error, Result};
use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use std::ops::Range;

/// Which stacked feature blocks serve a target term.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum TermBlocks {
    /// Even degree: one block approximating `(beta . x)^{p/2}`.
    Even { block: usize },
    /// Odd degree `2k+1`: block `high` approximates `(beta . x)^{k+1}`,
    /// block `low` approximates `(beta . x)^k`.
    Odd { high: usize, low: usize },
}

/// The stacked feature layer planned for a witness, with the block-to-term
/// assignment.
#[derive(Debug, Clone)]
pub struct WitnessFeatures {
    pub stacked: StackedCoeffs,
    pub term_blocks: Vec<TermBlocks>,
}

/// Build the stacked layer for a target: even-degree terms contribute one
/// monomial spec of degree `p/2`, odd-degree terms two specs of degrees
/// `(p+1)/2` and `(p-1)/2` (each getting half of the term's budget).
pub fn plan_witness_features(
    target: &PolyTarget,
    per_term_budget: &[usize],
    seed: u64,
) -> Result<WitnessFeatures> {
    if per_term_budget.len() != target.terms.len() {
        return Err(Error::InvalidArgument(format!(
            "{} budget entries for {} terms",
            per_term_budget.len(),
            target.terms.len()
        )));
    }
    let mut specs = Vec::new();
    let mut budgets = Vec::new();
    let mut term_blocks = Vec::new();
    for (term, &budget) in target.terms.iter().zip(per_term_budget) {
        if term.degree % 2 == 0 {
            term_blocks.push(TermBlocks::Even { block: specs.len() });
            specs.push((term.beta.clone(), term.degree / 2));
            budgets.push(budget);
        } else {
            let half = (budget / 2).max(1);
            term_blocks.push(TermBlocks::Odd { high: specs.len(), low: specs.len() + 1 });
            specs.push((term.beta.clone(), (term.degree + 1) / 2));
            budgets.push(half);
            specs.push((term.beta.clone(), (term.degree - 1) / 2));
            budgets.push(budget - half);
        }
    }
    let stacked = crate::features::stacked_poly_coeffs(&specs, &budgets, seed)?;
    Ok(WitnessFeatures { stacked, term_blocks })
}

/// One group of the witness: `m0` neurons of one sign carrying one readout.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WitnessGroup {
    pub term: usize,
    /// Required sign of `a_r` on this group's neurons.
    pub sign: f64,
    /// The neuron indices, greedily taken from the sign bucket.
    pub neurons: Vec<usize>,
    /// Row scale `2 sqrt(|alpha|) (3 r*)^{1/4} m0^{-1/4}`.
    pub scale: f64,
    /// Readout direction in feature space (length D); the witness row is
    /// `scale * Sigma_hat^{1/2} readout`.
    #[serde(skip)]
    pub readout: Array1<f64>,
}

/// The full witness plan; serializes to JSON for inspection (readout vectors
/// are omitted, the neuron assignment and scales are kept).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WitnessPlan {
    pub m0: usize,
    pub groups: Vec<WitnessGroup>,
    /// Per term: the (high, low) stacked block pair for odd degrees.
    pub odd_split: Vec<Option<(usize, usize)>>,
}

fn embed_block(dim: usize, block: &Range<usize>, coeffs: &Array1<f64>, factor: f64) -> Array1<f64> {
    let mut out = Array1::zeros(dim);
    out.slice_mut(ndarray::s![block.clone()])
        .assign(&coeffs.slice(ndarray::s![block.clone()]).mapv(|v| factor * v));
    out
}

/// Construct the witness weight matrix for `target` on the planned features.
///
/// Requires `model.a` to contain at least `m0` neurons of each sign needed by
/// the plan (checked; the builder fails loudly rather than reweighting) and
/// the representation to match the stacked layer.
pub fn build_witness(
    target: &PolyTarget,
    features: &WitnessFeatures,
    rep: &WhitenedRep,
    model: &TaylorModel,
) -> Result<(Array2<f64>, WitnessPlan)> {
    let d_feat = features.stacked.layer.features();
    if rep.dim() != d_feat || model.dim() != d_feat {
        return Err(Error::DimensionMismatch(format!(
            "features have D = {d_feat}, representation D = {}, model D = {}",
            rep.dim(),
            model.dim()
        )));
    }
    let r_star = target.r_star;
    let m = model.width();
    let m0 = m / (3 * r_star);
    if m0 == 0 {
        return Err(Error::InvalidArgument(format!(
            "width {m} is too small for {r_star} terms (m0 = floor(m / 3 r*) = 0)"
        )));
    }

    let mut plus: Vec<usize> = (0..m).filter(|&r| model.a[r] > 0.0).collect();
    let mut minus: Vec<usize> = (0..m).filter(|&r| model.a[r] < 0.0).collect();
    plus.reverse();
    minus.reverse();
    let mut take = |sign: f64| -> Result<Vec<usize>> {
        let bucket = if sign > 0.0 { &mut plus } else { &mut minus };
        if bucket.len() < m0 {
            return Err(Error::InvalidArgument(format!(
                "not enough neurons with a_r = {sign:+}: need {m0}, have {}",
                bucket.len()
            )));
        }
        Ok((0..m0).map(|_| bucket.pop().unwrap()).collect())
    };

    let mut w = Array2::zeros((m, d_feat));
    let mut groups = Vec::new();
    let mut odd_split = vec![None; target.terms.len()];
    let scale_base = (3.0 * r_star as f64).powf(0.25) / (m0 as f64).powf(0.25);

    for (s, term) in target.terms.iter().enumerate() {
        if term.alpha == 0.0 {
            continue;
        }
        let alpha_sign = term.alpha.signum();
        let scale = 2.0 * term.alpha.abs().sqrt() * scale_base;
        match &features.term_blocks[s] {
            TermBlocks::Even { block } => {
                let readout = embed_block(
                    d_feat,
                    &features.stacked.blocks[*block],
                    &features.stacked.coeffs,
                    1.0,
                );
                let neurons = take(alpha_sign)?;
                let row = rep.sqrt.dot(&readout) * scale;
                for &r in &neurons {
                    w.row_mut(r).assign(&row);
                }
                groups.push(WitnessGroup { term: s, sign: alpha_sign, neurons, scale, readout });
            }
            TermBlocks::Odd { high, low } => {
                odd_split[s] = Some((*high, *low));
                let high_range = &features.stacked.blocks[*high];
                let low_range = &features.stacked.blocks[*low];
                // A = (t^{k+1} + t^k)/2 on the alpha-sign bucket,
                // B = (t^{k+1} - t^k)/2 on the opposite bucket
                for (sign, low_factor) in [(alpha_sign, 0.5), (-alpha_sign, -0.5)] {
                    let mut readout =
                        embed_block(d_feat, high_range, &features.stacked.coeffs, 0.5);
                    readout += &embed_block(
                        d_feat,
                        low_range,
                        &features.stacked.coeffs,
                        low_factor,
                    );
                    let neurons = take(sign)?;
                    let row = rep.sqrt.dot(&readout) * scale;
                    for &r in &neurons {
                        w.row_mut(r).assign(&row);
                    }
                    groups.push(WitnessGroup { term: s, sign, neurons, scale, readout });
                }
            }
        }
    }
    Ok((w, WitnessPlan { m0, groups, odd_split }))
}

/// Empirical sup over the probe set of `|mean_r 2 * 1{w0_r . h >= 0} - 1|`,
/// the concentration statistic of the random half of the quadratic model.
pub fn indicator_concentration_stat(w0_rows: ArrayView2<f64>, probes: ArrayView2<f64>) -> f64 {
    assert!(w0_rows.nrows() >= 1, "need at least one neuron row");
    let m0 = w0_rows.nrows() as f64;
    let pre = probes.dot(&w0_rows.t());
    pre.axis_iter(Axis(0))
        .map(|row| {
            let mean = row.iter().map(|&t| if t >= 0.0 { 2.0 } else { 0.0 }).sum::<f64>() / m0;
            (mean - 1.0).abs()
        })
        .fold(0.0, f64::max)
}

/// The high-probability envelope for [`indicator_concentration_stat`] at
/// confidence `1 - delta`: `6 sqrt(D log(3 m0) (1 + log(2/delta)) / m0)`.
pub fn indicator_concentration_bound(m0: usize, dim: usize, delta: f64) -> f64 {
    6.0 * (dim as f64 * (3.0 * m0 as f64).ln() * (1.0 + (2.0 / delta).ln()) / m0 as f64).sqrt()
}

/// Exact probability that two standard Gaussians with correlation `rho` have
/// opposite signs: `arccos(rho) / pi`.
pub fn opposite_sign_probability(rho: f64) -> Result<f64> {
    if !(-1.0..=1.0).contains(&rho) {
        return Err(Error::InvalidArgument(format!("correlation {rho} outside [-1, 1]")));
    }
    Ok(rho.acos() / std::f64::consts::PI)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use crate::synth::{make_target, sample_sphere, RawTerm};
    use crate::taylor::ModelKind;
    use crate::whiten::estimate_covariance;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn small_setup(
        degree: usize,
        alpha: f64,
        d: usize,
        budget: usize,
        width: usize,
        seed: u64,
    ) -> (PolyTarget, WitnessFeatures, WhitenedRep, TaylorModel) {
        let raw = vec![RawTerm { alpha, beta: None, degree }];
        let target = make_target(&raw, d, true, seed).unwrap();
        let features = plan_witness_features(&target, &[budget], seed ^ 1).unwrap();
        let unlabeled = sample_sphere(d, 40 * budget, seed ^ 2);
        let rep = estimate_covariance(&features.stacked.layer, unlabeled.view()).unwrap();
        let model =
            TaylorModel::init(width, features.stacked.layer.features(), ModelKind::Quadratic, seed ^ 3)
                .unwrap();
        (target, features, rep, model)
    }

    #[test]
    fn zero_coefficient_gives_zero_witness() {
        let (mut target, features, rep, model) = small_setup(2, 1.0, 5, 60, 30, 3);
        target.terms[0].alpha = 0.0;
        let (w, plan) = build_witness(&target, &features, &rep, &model).unwrap();
        assert_eq!(w.mapv(f64::abs).sum(), 0.0);
        assert!(plan.groups.is_empty());
    }

    #[test]
    fn unassigned_rows_are_exactly_zero() {
        let (target, features, rep, model) = small_setup(2, 0.8, 5, 60, 31, 5);
        let (w, plan) = build_witness(&target, &features, &rep, &model).unwrap();
        let assigned: std::collections::HashSet<usize> =
            plan.groups.iter().flat_map(|g| g.neurons.iter().copied()).collect();
        assert_eq!(plan.m0, 31 / 3);
        for r in 0..model.width() {
            if !assigned.contains(&r) {
                assert_eq!(w.row(r).mapv(f64::abs).sum(), 0.0, "row {r} not zero");
            }
        }
        // sign buckets respected
        for g in &plan.groups {
            for &r in &g.neurons {
                assert_eq!(model.a[r], g.sign);
            }
        }
    }

    #[test]
    fn fails_loudly_when_a_sign_bucket_is_short() {
        let (target, features, rep, mut model) = small_setup(2, 1.0, 5, 60, 30, 7);
        // positive bucket emptied: the plan needs 10 positive neurons
        model.a.fill(-1.0);
        assert!(build_witness(&target, &features, &rep, &model).is_err());
    }

    #[test]
    fn readout_identity_when_sigma_nonsingular() {
        // few features in a higher input dimension keep the estimate
        // nonsingular, so sqrt and inv_sqrt cancel exactly
        let (target, features, rep, model) = small_setup(2, 1.0, 12, 10, 24, 11);
        assert_eq!(rep.floored, 0, "estimate unexpectedly singular");
        let (w, plan) = build_witness(&target, &features, &rep, &model).unwrap();
        let x = sample_sphere(12, 50, 13);
        let g = features.stacked.layer.apply_batch(x.view()).unwrap();
        let h = crate::whiten::whiten_batch(&rep, g.view()).unwrap();
        let group = &plan.groups[0];
        let r = group.neurons[0];
        for i in 0..50 {
            let lhs = w.row(r).dot(&h.row(i));
            let rhs = group.scale * group.readout.dot(&g.row(i));
            assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-8);
        }
    }

    #[test]
    fn group_isolation_is_exact() {
        // two-term target: zeroing one group removes exactly its contribution
        let raw = vec![
            RawTerm { alpha: 0.9, beta: None, degree: 2 },
            RawTerm { alpha: -0.6, beta: None, degree: 2 },
        ];
        let target = make_target(&raw, 5, true, 17).unwrap();
        let features = plan_witness_features(&target, &[50, 50], 19).unwrap();
        let unlabeled = sample_sphere(5, 2000, 23);
        let rep = estimate_covariance(&features.stacked.layer, unlabeled.view()).unwrap();
        let model = TaylorModel::init(60, 100, ModelKind::Quadratic, 29).unwrap();
        let (w, plan) = build_witness(&target, &features, &rep, &model).unwrap();
        assert_eq!(plan.groups.len(), 2);

        let x = sample_sphere(5, 30, 31);
        let g = features.stacked.layer.apply_batch(x.view()).unwrap();
        let h = crate::whiten::whiten_batch(&rep, g.view()).unwrap();
        let gates = model.gates(h.view()).unwrap();
        let full = model.forward_batch_with(h.view(), &gates, &w);
        let mut sum = Array1::<f64>::zeros(30);
        for g_idx in 0..2 {
            let mut only = Array2::zeros(w.raw_dim());
            for &r in &plan.groups[g_idx].neurons {
                only.row_mut(r).assign(&w.row(r));
            }
            sum += &model.forward_batch_with(h.view(), &gates, &only);
        }
        for i in 0..30 {
            assert_abs_diff_eq!(full[i], sum[i], epsilon = 1e-10);
        }
    }

    #[test]
    fn odd_degree_uses_two_opposite_sign_groups() {
        let raw = vec![RawTerm { alpha: 1.0, beta: None, degree: 3 }];
        let target = make_target(&raw, 5, true, 37).unwrap();
        let features = plan_witness_features(&target, &[80], 41).unwrap();
        assert_eq!(features.stacked.blocks.len(), 2);
        let unlabeled = sample_sphere(5, 3000, 43);
        let rep = estimate_covariance(&features.stacked.layer, unlabeled.view()).unwrap();
        let model = TaylorModel::init(40, 80, ModelKind::Quadratic, 47).unwrap();
        let (_, plan) = build_witness(&target, &features, &rep, &model).unwrap();
        assert_eq!(plan.groups.len(), 2);
        assert_eq!(plan.groups[0].sign, 1.0);
        assert_eq!(plan.groups[1].sign, -1.0);
        assert_eq!(plan.odd_split[0], Some((0, 1)));
        // plan dumps to JSON
        let dump = serde_json::to_string(&plan).unwrap();
        assert!(dump.contains("\"m0\""));
    }

    #[test]
    fn concentration_stat_single_neuron_is_one() {
        let mut rng = substream(53, "w0");
        let w0 = Array2::from_shape_fn((1, 6), |_| rng.sample::<f64, _>(StandardNormal));
        let probes = Array2::from_shape_fn((100, 6), |_| rng.sample::<f64, _>(StandardNormal));
        assert_eq!(indicator_concentration_stat(w0.view(), probes.view()), 1.0);
    }

    #[test]
    fn concentration_stat_shrinks_with_width() {
        let dim = 10;
        let mut medians = Vec::new();
        for &m0 in &[100usize, 400, 1600] {
            let mut stats = Vec::new();
            for seed in 0..5u64 {
                let mut rng = substream(1000 + seed, "w0");
                let w0 =
                    Array2::from_shape_fn((m0, dim), |_| rng.sample::<f64, _>(StandardNormal));
                let probes =
                    Array2::from_shape_fn((2000, dim), |_| rng.sample::<f64, _>(StandardNormal));
                stats.push(indicator_concentration_stat(w0.view(), probes.view()));
            }
            stats.sort_by(f64::total_cmp);
            medians.push(stats[2]);
        }
        assert!(
            medians[0] >= medians[1] && medians[1] >= medians[2],
            "medians not nonincreasing: {medians:?}"
        );
        // the envelope holds comfortably at the smallest width
        let bound = indicator_concentration_bound(100, dim, 0.05);
        assert!(medians[0] <= bound);
    }

    #[test]
    fn opposite_sign_probability_reference_and_bound() {
        assert_abs_diff_eq!(opposite_sign_probability(1.0).unwrap(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(opposite_sign_probability(0.0).unwrap(), 0.5, epsilon = 1e-12);
        for rho in [0.9, 0.99, 0.999] {
            let exact = opposite_sign_probability(rho).unwrap();
            assert!(exact <= (1.0f64 - rho * rho).sqrt());
        }
        assert!(opposite_sign_probability(1.5).is_err());
    }

    #[test]
    fn witness_rows_scale_with_alpha() {
        let (target_full, features, rep, model) = small_setup(2, 1.0, 5, 40, 24, 59);
        let (w_full, plan) = build_witness(&target_full, &features, &rep, &model).unwrap();
        let mut target_quarter = target_full.clone();
        target_quarter.terms[0].alpha = 0.25;
        let (w_quarter, _) = build_witness(&target_quarter, &features, &rep, &model).unwrap();
        let r = plan.groups[0].neurons[0];
        // scale is 2 sqrt(alpha) ...: quartering alpha halves the row
        for c in [0usize, 7, 20] {
            assert_abs_diff_eq!(w_quarter[[r, c]], 0.5 * w_full[[r, c]], epsilon = 1e-12);
        }
    }

    #[test]
    fn rejects_mismatched_dimensions() {
        let (target, features, rep, _) = small_setup(2, 1.0, 5, 40, 24, 61);
        let wrong_model = TaylorModel::init(24, 7, ModelKind::Quadratic, 3).unwrap();
        assert!(build_witness(&target, &features, &rep, &wrong_model).is_err());
        let _ = array![0.0];
        let _ = rep;
    }
}
