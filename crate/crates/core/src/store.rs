//! One JSON container format for layers, whitened representations, and model
//! checkpoints. Floats are written in shortest round-trip form, so loading
//! reproduces every matrix bit-exactly.

use crate::{Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

/// Write any serializable artifact to `path` as JSON.
pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path)?;
    serde_json::to_writer(BufWriter::new(file), value)?;
    Ok(())
}

/// Load an artifact previously written by [`save_json`].
pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path)?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureLayer;
    use crate::synth::sample_sphere;
    use crate::taylor::{ModelKind, TaylorModel};
    use crate::whiten::{estimate_covariance, WhitenedRep};

    #[test]
    fn layer_roundtrip_is_bit_exact() {
        let dir = std::env::temp_dir().join("store_layer_test.json");
        let layer = FeatureLayer::sample(7, 23, true, 99).unwrap();
        save_json(&dir, &layer).unwrap();
        let back: FeatureLayer = load_json(&dir).unwrap();
        assert_eq!(layer.v, back.v);
        assert_eq!(layer.b, back.b);
        assert_eq!(layer.use_bias, back.use_bias);
        assert_eq!(layer.seed, back.seed);
        std::fs::remove_file(&dir).ok();
    }

    #[test]
    fn rep_and_model_roundtrip() {
        let layer = FeatureLayer::sample(6, 12, true, 3).unwrap();
        let rep = estimate_covariance(&layer, sample_sphere(6, 500, 5).view()).unwrap();
        let path = std::env::temp_dir().join("store_rep_test.json");
        save_json(&path, &rep).unwrap();
        let back: WhitenedRep = load_json(&path).unwrap();
        assert_eq!(rep.sigma_hat, back.sigma_hat);
        assert_eq!(rep.inv_sqrt, back.inv_sqrt);
        assert_eq!(rep.n0, back.n0);
        std::fs::remove_file(&path).ok();

        let model = TaylorModel::init(5, 12, ModelKind::Quadratic, 7).unwrap();
        let path = std::env::temp_dir().join("store_model_test.json");
        save_json(&path, &model).unwrap();
        let back: TaylorModel = load_json(&path).unwrap();
        assert_eq!(model.w0, back.w0);
        assert_eq!(model.a, back.a);
        std::fs::remove_file(&path).ok();
    }
}
