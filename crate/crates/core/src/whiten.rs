//! Second-moment estimation of the binary features, its inverse square root,
//! the whitened representation `h(x) = Sigma_hat^{-1/2} g(x)`, and the
//! covariance diagnostics.

use crate::features::FeatureLayer;
use crate::linalg::{scaled_outer, sym_eig, sym_op_norm};
use crate::{Error, Result};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Estimated feature second moment and its (pseudo-)inverse square root.
///
/// Directions whose eigenvalue falls below `eig_floor` are projected out of
/// `inv_sqrt` (their inverse-sqrt value is 0, not a huge multiplier), which is
/// the stable behavior when `n0 < D` makes the estimate singular. The count of
/// floored directions is surfaced in `floored`, a warning channel rather than
/// an error.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WhitenedRep {
    pub sigma_hat: Array2<f64>,
    pub inv_sqrt: Array2<f64>,
    /// Symmetric square root `Sigma_hat^{1/2}` (no flooring; negative
    /// round-off eigenvalues clamp to zero). Needed by the witness weights and
    /// the data-dependent regularizer.
    pub sqrt: Array2<f64>,
    pub eig_floor: f64,
    pub n0: usize,
    pub min_eig: f64,
    pub max_eig: f64,
    pub floored: usize,
}

impl WhitenedRep {
    /// Build from an explicit second-moment matrix.
    pub fn from_sigma(sigma: Array2<f64>, n0: usize) -> Result<Self> {
        let (vals, vecs) = sym_eig(&sigma)?;
        let dim = sigma.nrows();
        let max_eig = vals[dim - 1];
        let min_eig = vals[0];
        if min_eig < -1e-9 * max_eig.max(1.0) {
            return Err(Error::Numerical(format!(
                "second-moment estimate has eigenvalue {min_eig:.3e}, far below zero"
            )));
        }
        let eig_floor = 1e-10f64.max(1e-8 * max_eig);
        let inv_vals = vals.mapv(|l| if l > eig_floor { 1.0 / l.sqrt() } else { 0.0 });
        let sqrt_vals = vals.mapv(|l| l.max(0.0).sqrt());
        let floored = vals.iter().filter(|&&l| l <= eig_floor).count();
        Ok(Self {
            inv_sqrt: scaled_outer(&vecs.view(), &inv_vals.view()),
            sqrt: scaled_outer(&vecs.view(), &sqrt_vals.view()),
            sigma_hat: sigma,
            eig_floor,
            n0,
            min_eig,
            max_eig,
            floored,
        })
    }

    /// Build from raw feature vectors, one per row (n0 x D).
    pub fn from_feature_matrix(g: ArrayView2<f64>) -> Result<Self> {
        let n0 = g.nrows();
        if n0 == 0 {
            return Err(Error::InvalidArgument("need at least one unlabeled sample".into()));
        }
        let sigma = g.t().dot(&g) / n0 as f64;
        Self::from_sigma(sigma, n0)
    }

    /// Identity whitening of the given dimension (`h(x) = x`, used when the
    /// representation is the raw input).
    pub fn identity(dim: usize) -> Self {
        Self {
            sigma_hat: Array2::eye(dim),
            inv_sqrt: Array2::eye(dim),
            sqrt: Array2::eye(dim),
            eig_floor: 1e-10,
            n0: 0,
            min_eig: 1.0,
            max_eig: 1.0,
            floored: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.sigma_hat.nrows()
    }
}

/// Estimate the second-moment matrix of the layer's binary features from
/// unlabeled sphere points and build the whitened representation.
///
/// The features are 0/1, so the Gram accumulation is done on packed bit rows
/// with popcounts; the resulting counts are exact integers and the estimate
/// equals the naive floating-point accumulation bit for bit.
pub fn estimate_covariance(layer: &FeatureLayer, unlabeled: ArrayView2<f64>) -> Result<WhitenedRep> {
    let n0 = unlabeled.nrows();
    if n0 == 0 {
        return Err(Error::InvalidArgument("need at least one unlabeled sample".into()));
    }
    let d_feat = layer.features();
    let words = n0.div_ceil(64);
    let mut bits = vec![0u64; d_feat * words];

    let batch = 2048usize;
    let mut start = 0usize;
    while start < n0 {
        let stop = (start + batch).min(n0);
        let x_btch = unlabeled.slice(ndarray::s![start..stop, ..]);
        let mut pre = x_btch.dot(&layer.v.t());
        pre += &layer.b;
        for (i, row) in pre.axis_iter(Axis(0)).enumerate() {
            let sample = start + i;
            let (word, bit) = (sample / 64, sample % 64);
            for (j, &t) in row.iter().enumerate() {
                if t >= 0.0 {
                    bits[j * words + word] |= 1u64 << bit;
                }
            }
        }
        start = stop;
    }

    let inv_n0 = 1.0 / n0 as f64;
    let mut sigma = Array2::zeros((d_feat, d_feat));
    {
        let rows: Vec<(usize, &mut [f64])> =
            sigma.as_slice_mut().unwrap().chunks_mut(d_feat).enumerate().collect();
        rows.into_par_iter().for_each(|(i, row)| {
            let bi = &bits[i * words..(i + 1) * words];
            for (j, out) in row.iter_mut().enumerate().skip(i) {
                let bj = &bits[j * words..(j + 1) * words];
                let count: u64 = bi.iter().zip(bj).map(|(a, b)| (a & b).count_ones() as u64).sum();
                *out = count as f64 * inv_n0;
            }
        });
    }
    // mirror the upper triangle
    for i in 0..d_feat {
        for j in 0..i {
            sigma[[i, j]] = sigma[[j, i]];
        }
    }
    WhitenedRep::from_sigma(sigma, n0)
}

/// Whiten one feature vector: `h = Sigma_hat^{-1/2} g`.
pub fn whiten(rep: &WhitenedRep, g: ArrayView1<f64>) -> Result<Array1<f64>> {
    if g.len() != rep.dim() {
        return Err(Error::DimensionMismatch(format!(
            "feature vector has length {}, representation expects {}",
            g.len(),
            rep.dim()
        )));
    }
    Ok(rep.inv_sqrt.dot(&g))
}

/// Whiten a batch of feature rows: `H = G Sigma_hat^{-1/2}`.
pub fn whiten_batch(rep: &WhitenedRep, g: ArrayView2<f64>) -> Result<Array2<f64>> {
    if g.ncols() != rep.dim() {
        return Err(Error::DimensionMismatch(format!(
            "feature rows have length {}, representation expects {}",
            g.ncols(),
            rep.dim()
        )));
    }
    Ok(g.dot(&rep.inv_sqrt))
}

/// Orthant probability `P(u >= 0, v >= 0) = 1/4 + arcsin(rho) / (2 pi)` for
/// jointly Gaussian `(u, v)` with correlation `rho`; equivalently
/// `(pi - arccos(rho)) / (2 pi)`.
pub fn orthant_probability(rho: f64) -> f64 {
    0.25 + rho.clamp(-1.0, 1.0).asin() / (2.0 * std::f64::consts::PI)
}

/// Closed-form population second moment of the indicator features.
///
/// Biasless layers: entry `(i, j)` is the exact sphere probability
/// `P(v_i.x >= 0, v_j.x >= 0)` which depends only on the angle between the
/// rows. Biased layers: the same orthant formula on the augmented correlation
/// `(v_i.v_j + b_i b_j) / (|(v_i,b_i)| |(v_j,b_j)|)`, exact in the
/// large-d Gaussian limit of the sphere.
pub fn population_covariance(layer: &FeatureLayer) -> Array2<f64> {
    let d_feat = layer.features();
    let mut aug = layer.v.clone();
    let norms: Array1<f64> = if layer.use_bias {
        (0..d_feat)
            .map(|i| (aug.row(i).dot(&aug.row(i)) + layer.b[i] * layer.b[i]).sqrt())
            .collect()
    } else {
        (0..d_feat).map(|i| aug.row(i).dot(&aug.row(i)).sqrt()).collect()
    };
    for (mut row, &nrm) in aug.axis_iter_mut(Axis(0)).zip(norms.iter()) {
        row.mapv_inplace(|v| v / nrm);
    }
    let mut gram = aug.dot(&aug.t());
    if layer.use_bias {
        for i in 0..d_feat {
            for j in 0..d_feat {
                gram[[i, j]] += layer.b[i] * layer.b[j] / (norms[i] * norms[j]);
            }
        }
    }
    // the diagonal correlation is 1 by construction; pin it so round-off in
    // the normalization cannot leak through the arcsin singularity
    for i in 0..d_feat {
        gram[[i, i]] = 1.0;
    }
    gram.mapv_into(orthant_probability)
}

/// Smallest eigenvalue of the entrywise `(k+1)`-th power of the
/// normalized-row Gram matrix of the layer weights.
pub fn hadamard_power_min_eig(layer: &FeatureLayer, k: usize) -> Result<f64> {
    let d_feat = layer.features();
    let mut rows = layer.v.clone();
    for mut row in rows.axis_iter_mut(Axis(0)) {
        let nrm = row.dot(&row).sqrt();
        row.mapv_inplace(|v| v / nrm);
    }
    let gram = rows.dot(&rows.t());
    let power = gram.mapv(|g| g.powi(k as i32 + 1));
    debug_assert_eq!(power, power.t().to_owned());
    let (vals, _) = sym_eig(&power)?;
    let _ = d_feat;
    Ok(vals[0])
}

/// Relative deviation `|ref^{-1/2} Sigma_hat ref^{-1/2} - I|_op` of the
/// estimate against a positive-definite reference.
pub fn relative_concentration(rep: &WhitenedRep, sigma_ref: &Array2<f64>) -> Result<f64> {
    let (vals, vecs) = sym_eig(sigma_ref)?;
    if vals[0] <= 1e-12 {
        return Err(Error::InvalidArgument(format!(
            "reference matrix is not positive definite (min eigenvalue {:.3e})",
            vals[0]
        )));
    }
    let inv_vals = vals.mapv(|l| 1.0 / l.sqrt());
    let ref_inv_sqrt = scaled_outer(&vecs.view(), &inv_vals.view());
    let mut m = ref_inv_sqrt.dot(&rep.sigma_hat).dot(&ref_inv_sqrt);
    for i in 0..m.nrows() {
        m[[i, i]] -= 1.0;
    }
    // symmetrize round-off before the eigensolve
    let m = (&m + &m.t()) * 0.5;
    sym_op_norm(&m)
}
