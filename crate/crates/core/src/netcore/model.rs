use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::arch::ArchDescriptor;
use super::layers::Tensor;
use crate::envelope;
use crate::error::{Error, Result};
use crate::rng;

pub const CHECKPOINT_KIND: &str = "checkpoint";
pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Where a set of weights came from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub model_index: Option<usize>,
    pub epochs_trained: usize,
    pub final_train_loss: Option<f64>,
    pub final_test_mse: Option<f64>,
}

/// All network weights plus the architecture they belong to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub arch: ArchDescriptor,
    pub init_seed: u64,
    pub provenance: Provenance,
    /// Conv layers followed by dense layers, in declared order.
    pub layers: Vec<Tensor>,
}

impl ModelParams {
    /// All-zero weights; useful as a degenerate reference model.
    pub fn zeros(arch: &ArchDescriptor) -> Result<Self> {
        arch.validate()?;
        Ok(ModelParams {
            arch: arch.clone(),
            init_seed: 0,
            provenance: Provenance::default(),
            layers: arch.weight_shapes()?.iter().map(|s| Tensor::zeros(s)).collect(),
        })
    }

    pub fn conv(&self, i: usize) -> &Tensor {
        &self.layers[i]
    }

    pub fn dense(&self, j: usize) -> &Tensor {
        &self.layers[self.arch.n_conv() + j]
    }

    pub fn n_weights(&self) -> usize {
        self.layers.iter().map(Tensor::len).sum()
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        let shapes = self.arch.weight_shapes()?;
        if shapes.len() != self.layers.len() {
            return Err(Error::shape("model layers", shapes.len(), self.layers.len()));
        }
        for (shape, t) in shapes.iter().zip(&self.layers) {
            if &t.shape != shape || t.data.len() != shape.iter().product::<usize>() {
                return Err(Error::shape("model weights", format!("{shape:?}"), format!("{:?}", t.shape)));
            }
            if !t.data.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite("model weight".into()));
            }
        }
        Ok(())
    }

    /// Checksum of the serialized weights, identical to the one
    /// [`save_checkpoint`] stores.
    pub fn checksum(&self) -> Result<String> {
        Ok(envelope::encode(CHECKPOINT_KIND, CHECKPOINT_FORMAT_VERSION, self)?.1)
    }
}

/// Glorot-uniform initialization, `±√(6 / (fan_in + fan_out))` per layer.
/// Conv fans count the kernel: `fan_in = in·k`, `fan_out = out·k`.
pub fn init_params(arch: &ArchDescriptor, seed: u64) -> Result<ModelParams> {
    arch.validate()?;
    let mut r = rng::stream(seed, rng::tag::INIT, 0);
    let layers = arch
        .weight_shapes()?
        .iter()
        .map(|shape| {
            let (fan_in, fan_out) = glorot_fans(shape);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let n = shape.iter().product();
            let data = (0..n).map(|_| r.random_range(-bound..bound)).collect();
            Tensor {
                shape: shape.clone(),
                data,
            }
        })
        .collect();
    Ok(ModelParams {
        arch: arch.clone(),
        init_seed: seed,
        provenance: Provenance::default(),
        layers,
    })
}

pub fn glorot_fans(shape: &[usize]) -> (usize, usize) {
    match shape {
        [out, inp, k] => (inp * k, out * k),
        [out, inp] => (*inp, *out),
        _ => (1, 1),
    }
}

pub fn save_checkpoint(model: &ModelParams, path: &Path) -> Result<String> {
    envelope::write(path, CHECKPOINT_KIND, CHECKPOINT_FORMAT_VERSION, model)
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelParams, String)> {
    let (model, checksum): (ModelParams, String) = envelope::read(path, CHECKPOINT_KIND, CHECKPOINT_FORMAT_VERSION)?;
    model.validate()?;
    Ok((model, checksum))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arch() -> ArchDescriptor {
        ArchDescriptor::standard(700).unwrap()
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        assert_eq!(init_params(&arch(), 4).unwrap(), init_params(&arch(), 4).unwrap());
        assert_ne!(init_params(&arch(), 4).unwrap().layers, init_params(&arch(), 5).unwrap().layers);
    }

    #[test]
    fn first_conv_within_glorot_bound() {
        let m = init_params(&arch(), 1).unwrap();
        let bound = (6.0f64 / (50.0 + 200.0)).sqrt();
        assert_eq!(m.conv(0).shape, vec![8, 2, 25]);
        assert!(m.conv(0).data.iter().all(|w| w.abs() <= bound));
        // the bound is actually used, not something far tighter
        assert!(m.conv(0).data.iter().any(|w| w.abs() > 0.8 * bound));
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let mut m = init_params(&arch(), 9).unwrap();
        m.provenance.final_test_mse = Some(0.123456789012345);
        let c1 = save_checkpoint(&m, &path).unwrap();
        let (back, c2) = load_checkpoint(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(c1, c2);
        assert_eq!(c1, m.checksum().unwrap());
    }

    #[test]
    fn wrong_shape_rejected() {
        let mut m = init_params(&arch(), 9).unwrap();
        m.layers[1].data.pop();
        assert!(m.validate().is_err());
    }
}
