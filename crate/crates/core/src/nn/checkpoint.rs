use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::NnError;

pub const CHECKPOINT_VERSION: u32 = 1;
const FORMAT: &str = "reed-lab/checkpoint";

/// Versioned JSON envelope for networks, ensembles and buffers.
///
/// Floats are written in shortest round-trip form and parsed with exact
/// rounding, so a save/load cycle is bit-exact.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint<T> {
    pub format: String,
    pub version: u32,
    pub kind: String,
    pub payload: T,
}

impl<T: Serialize + DeserializeOwned> Checkpoint<T> {
    pub fn new(kind: &str, payload: T) -> Self {
        Self {
            format: FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            kind: kind.to_string(),
            payload,
        }
    }

    pub fn to_json(&self) -> Result<String, NnError> {
        serde_json::to_string(self).map_err(|e| NnError::Checkpoint(e.to_string()))
    }

    pub fn from_json(text: &str, kind: &str) -> Result<Self, NnError> {
        let ck: Self =
            serde_json::from_str(text).map_err(|e| NnError::Checkpoint(e.to_string()))?;
        if ck.format != FORMAT {
            return Err(NnError::Checkpoint(format!("unknown format {:?}", ck.format)));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(NnError::Checkpoint(format!(
                "unsupported version {} (expected {CHECKPOINT_VERSION})",
                ck.version
            )));
        }
        if ck.kind != kind {
            return Err(NnError::Checkpoint(format!(
                "expected a {kind:?} checkpoint, found {:?}",
                ck.kind
            )));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        fs::write(path, self.to_json()?).map_err(|e| NnError::Checkpoint(e.to_string()))
    }

    pub fn load(path: &Path, kind: &str) -> Result<Self, NnError> {
        let text = fs::read_to_string(path).map_err(|e| NnError::Checkpoint(e.to_string()))?;
        Self::from_json(&text, kind)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, DenseNet, LayerSpec};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    proptest! {
        #[test]
        fn dense_net_round_trips_bit_exact(seed in any::<u64>(), width in 1usize..9) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let specs = [
                LayerSpec::new(3, width, Activation::LeakyRelu).with_batch_norm(),
                LayerSpec::new(width, 2, Activation::Tanh),
            ];
            let net = DenseNet::new(&specs, &mut rng).unwrap();
            let json = Checkpoint::new("dense_net", net.clone()).to_json().unwrap();
            let back = Checkpoint::<DenseNet>::from_json(&json, "dense_net").unwrap().payload;
            let a: Vec<u64> = net.flat_params().iter().map(|x| x.to_bits()).collect();
            let b: Vec<u64> = back.flat_params().iter().map(|x| x.to_bits()).collect();
            prop_assert_eq!(a, b);
            prop_assert_eq!(net, back);
        }
    }

    #[test]
    fn wrong_kind_or_version_is_rejected() {
        let ck = Checkpoint::new("dense_net", 1.5f64);
        let json = ck.to_json().unwrap();
        assert!(Checkpoint::<f64>::from_json(&json, "buffer").is_err());
        let bumped = json.replace("\"version\":1", "\"version\":99");
        assert!(Checkpoint::<f64>::from_json(&bumped, "dense_net").is_err());
    }
}
