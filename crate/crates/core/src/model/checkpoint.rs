//! Self-describing JSON checkpoints.
//!
//! Floats are written in shortest round-trip form, so a save/load cycle is
//! bit-exact. The generator state is stored as seed, stream and word
//! position, which is enough to resume a ChaCha stream exactly.

use std::fs;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::{ModelDescriptor, OperatorModel};
use crate::error::ModelError;
use crate::network::NetworkTopology;
use crate::nn::AdamState;

pub const CHECKPOINT_FORMAT: &str = "heng-operator-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub stream: u64,
    /// ChaCha word position; decimal string because it is a `u128`.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(seed: u64, rng: &ChaCha8Rng) -> Self {
        Self {
            seed,
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng, ModelError> {
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| ModelError::Checkpoint(format!("bad word position `{}`", self.word_pos)))?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub descriptor: ModelDescriptor,
    pub params: Vec<f64>,
    pub optimizer: Option<AdamState>,
    pub rng: Option<RngState>,
    pub epochs_completed: usize,
}

impl Checkpoint {
    pub fn from_model(model: &OperatorModel) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            descriptor: model.descriptor().clone(),
            params: model.params.clone(),
            optimizer: None,
            rng: None,
            epochs_completed: 0,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(ModelError::Checkpoint(format!("unexpected format `{}`", ck.format)));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(ModelError::Checkpoint(format!("unsupported version {}", ck.version)));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// Rebuilds the model; fails when `topology` is not the network it was trained on.
    pub fn into_model(self, topology: &NetworkTopology) -> Result<OperatorModel, ModelError> {
        OperatorModel::from_parts(self.descriptor, topology, self.params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::nn::AdamConfig;
    use rand::Rng;

    #[test]
    fn rng_state_resumes_stream() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..37 {
            rng.gen::<u64>();
        }
        let state = RngState::capture(9, &rng);
        let mut resumed = state.restore().unwrap();
        for _ in 0..10 {
            assert_eq!(rng.gen::<u64>(), resumed.gen::<u64>());
        }
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let net = NetworkTopology::reference_six_pipe();
        let mut cfg = ModelConfig::graph();
        cfg.branch_hidden = vec![5];
        cfg.trunk_hidden = vec![5];
        let model = OperatorModel::new(cfg, &net, 3600.0, 4).unwrap();
        let mut ck = Checkpoint::from_model(&model);
        let mut adam = AdamState::new(AdamConfig::default(), model.params.len());
        let mut p = model.params.clone();
        let g: Vec<f64> = (0..p.len()).map(|i| (i as f64 * 0.37).sin()).collect();
        adam.step(&mut p, &g).unwrap();
        ck.params = p;
        ck.optimizer = Some(adam);
        ck.rng = Some(RngState::capture(4, &ChaCha8Rng::seed_from_u64(4)));
        let text = ck.to_json();
        let back = Checkpoint::from_json(&text).unwrap();
        assert_eq!(back, ck);
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back.params), bits(&ck.params));
        assert_eq!(back.to_json(), text);
    }

    #[test]
    fn topology_mismatch_refused() {
        let net = NetworkTopology::reference_six_pipe();
        let mut cfg = ModelConfig::vanilla();
        cfg.branch_hidden = vec![3];
        cfg.trunk_hidden = vec![3];
        let model = OperatorModel::new(cfg, &net, 100.0, 0).unwrap();
        let ck = Checkpoint::from_model(&model);
        let mut other = net.clone();
        other.pipes[0].length_m += 1.0;
        assert!(matches!(
            ck.clone().into_model(&other),
            Err(ModelError::TopologyMismatch { .. })
        ));
        assert!(ck.into_model(&net).is_ok());
    }

    #[test]
    fn wrong_format_refused() {
        assert!(Checkpoint::from_json(r#"{"format":"x"}"#).is_err());
    }
}
