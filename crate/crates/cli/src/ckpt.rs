//! Policy checkpoints on disk: a binary array file plus a JSON sidecar
//! carrying the architecture, since the array format stores weights only.
//!
//! A checkpoint "stem" like `out/ckpt_ep000010` owns up to four files:
//! `<stem>_actor.l2r`, `<stem>_actor.arch.json`, and the `_critic` pair.

use crate::config::activation_name;
use crate::{CliError, Result};
use l2r_core::env::ObsMode;
use l2r_core::nn::{
    load_arrays, save_arrays, Activation, LayerKind, LayerSpec, Net, NetworkParams, NetworkSpec,
};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const ACTOR_SUFFIX: &str = "_actor";
pub const CRITIC_SUFFIX: &str = "_critic";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerJson {
    pub width: usize,
    pub activation: String,
    #[serde(default)]
    pub layer_norm: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchFile {
    /// "actor" or "critic".
    pub kind: String,
    /// Observation pipeline the policy was trained on: "raw" or "enriched".
    pub observations: String,
    pub action_repeat: u32,
    pub input_dim: usize,
    pub body: Vec<LayerJson>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub heads: Vec<Vec<LayerJson>>,
}

fn layer_json(spec: &LayerSpec) -> Result<LayerJson> {
    match spec.kind {
        LayerKind::Dense { width } => Ok(LayerJson {
            width,
            activation: activation_name(spec.activation).to_string(),
            layer_norm: spec.layer_norm,
        }),
        other => Err(CliError::checkpoint(format!("cannot describe layer kind {other:?}"))),
    }
}

fn layer_spec(json: &LayerJson) -> Result<LayerSpec> {
    let act = match json.activation.as_str() {
        "linear" => Activation::Linear,
        "relu" => Activation::Relu,
        "tanh" => Activation::Tanh,
        "sigmoid" => Activation::Sigmoid,
        "elu" => Activation::Elu,
        "selu" => Activation::Selu,
        other => {
            return Err(CliError::checkpoint(format!("unknown activation \"{other}\" in sidecar")))
        }
    };
    Ok(if json.layer_norm {
        LayerSpec::dense_ln(json.width, act)
    } else {
        LayerSpec::dense(json.width, act)
    })
}

impl ArchFile {
    pub fn from_spec(
        kind: &str,
        obs_mode: ObsMode,
        action_repeat: u32,
        spec: &NetworkSpec,
    ) -> Result<ArchFile> {
        Ok(ArchFile {
            kind: kind.to_string(),
            observations: match obs_mode {
                ObsMode::Raw => "raw".to_string(),
                ObsMode::Enriched => "enriched".to_string(),
            },
            action_repeat,
            input_dim: spec.input_dim,
            body: spec.body.iter().map(layer_json).collect::<Result<_>>()?,
            heads: spec
                .heads
                .iter()
                .map(|h| h.iter().map(layer_json).collect::<Result<_>>())
                .collect::<Result<_>>()?,
        })
    }

    pub fn spec(&self) -> Result<NetworkSpec> {
        let body = self.body.iter().map(layer_spec).collect::<Result<_>>()?;
        let heads: Vec<Vec<LayerSpec>> = self
            .heads
            .iter()
            .map(|h| h.iter().map(layer_spec).collect::<Result<_>>())
            .collect::<Result<_>>()?;
        Ok(if heads.is_empty() {
            NetworkSpec::plain(self.input_dim, body)
        } else {
            NetworkSpec::with_heads(self.input_dim, body, heads)
        })
    }

    pub fn obs_mode(&self) -> Result<ObsMode> {
        match self.observations.as_str() {
            "raw" => Ok(ObsMode::Raw),
            "enriched" => Ok(ObsMode::Enriched),
            other => Err(CliError::checkpoint(format!("unknown observation mode \"{other}\""))),
        }
    }
}

/// A checkpoint pulled back into memory, ready to forward.
pub struct SavedNet {
    pub net: Net,
    pub params: NetworkParams<f64>,
    pub arch: ArchFile,
}

fn paths(stem: &Path, suffix: &str) -> (PathBuf, PathBuf) {
    let base = stem.to_string_lossy();
    (PathBuf::from(format!("{base}{suffix}.l2r")), PathBuf::from(format!("{base}{suffix}.arch.json")))
}

pub fn save_net(
    stem: &Path,
    suffix: &str,
    arch: &ArchFile,
    params: &NetworkParams<f64>,
) -> Result<()> {
    let (weights_path, arch_path) = paths(stem, suffix);
    std::fs::write(&weights_path, save_arrays(&params.arrays))?;
    let text = serde_json::to_string_pretty(arch)
        .map_err(|e| CliError::other(format!("sidecar encode: {e}")))?;
    std::fs::write(&arch_path, text)?;
    Ok(())
}

pub fn load_net(stem: &Path, suffix: &str) -> Result<SavedNet> {
    let (weights_path, arch_path) = paths(stem, suffix);
    let bytes = std::fs::read(&weights_path).map_err(|e| {
        CliError::checkpoint(format!("cannot read {}: {e}", weights_path.display()))
    })?;
    let arrays = load_arrays(&bytes)?;
    let text = std::fs::read_to_string(&arch_path)
        .map_err(|e| CliError::checkpoint(format!("cannot read {}: {e}", arch_path.display())))?;
    let arch: ArchFile = serde_json::from_str(&text)
        .map_err(|e| CliError::checkpoint(format!("{}: {e}", arch_path.display())))?;
    let net = Net::new(arch.spec()?)?;
    let params = net.params_from_arrays::<f64>(0, &arrays)?;
    Ok(SavedNet { net, params, arch })
}
