//! Parameter archives with an embedded configuration snapshot.

use std::collections::HashMap;
use std::path::Path;

use candle_core::{DType, Device};

use crate::config::RunConfig;
use crate::error::{LgsanError, Result};
use crate::network::Lgsan;
use crate::nn::ParamStore;

pub const FORMAT_VERSION: &str = "lgsan-ckpt-1";

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointMeta {
    pub format_version: String,
    pub config: RunConfig,
    pub config_hash: String,
    pub architecture_hash: String,
    pub seed: u64,
    pub step: usize,
    pub val_s_alpha: Option<f64>,
}

impl CheckpointMeta {
    fn to_map(&self) -> HashMap<String, String> {
        let mut m = HashMap::from([
            ("format_version".to_string(), self.format_version.clone()),
            ("config".to_string(), self.config.to_toml()),
            ("config_hash".to_string(), self.config_hash.clone()),
            ("architecture_hash".to_string(), self.architecture_hash.clone()),
            ("seed".to_string(), self.seed.to_string()),
            ("step".to_string(), self.step.to_string()),
        ]);
        if let Some(s) = self.val_s_alpha {
            m.insert("val_s_alpha".into(), format!("{s:.17e}"));
        }
        m
    }

    fn from_map(m: &HashMap<String, String>) -> Result<Self> {
        let get = |k: &str| m.get(k).ok_or_else(|| LgsanError::Version(format!("checkpoint metadata lacks `{k}`")));
        let version = get("format_version")?;
        if version != FORMAT_VERSION {
            return Err(LgsanError::Version(format!("format {version}, expected {FORMAT_VERSION}")));
        }
        let parse_err = |k: &str| LgsanError::Checkpoint(format!("bad `{k}` in metadata"));
        Ok(Self {
            format_version: version.clone(),
            config: RunConfig::from_toml(get("config")?)?,
            config_hash: get("config_hash")?.clone(),
            architecture_hash: get("architecture_hash")?.clone(),
            seed: get("seed")?.parse().map_err(|_| parse_err("seed"))?,
            step: get("step")?.parse().map_err(|_| parse_err("step"))?,
            val_s_alpha: m.get("val_s_alpha").map(|s| s.parse()).transpose().map_err(|_| parse_err("val_s_alpha"))?,
        })
    }
}

pub fn save_checkpoint(path: &Path, cfg: &RunConfig, ps: &ParamStore, step: usize, val_s_alpha: Option<f64>) -> Result<()> {
    let meta = CheckpointMeta {
        format_version: FORMAT_VERSION.into(),
        config: cfg.clone(),
        config_hash: cfg.hash(),
        architecture_hash: cfg.architecture_hash(),
        seed: cfg.seed,
        step,
        val_s_alpha,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    ps.save(path, meta.to_map())
}

pub fn read_checkpoint_meta(path: &Path) -> Result<CheckpointMeta> {
    let bytes = std::fs::read(path)?;
    let (_, meta) = safetensors::SafeTensors::read_metadata(&bytes).map_err(|e| LgsanError::Checkpoint(e.to_string()))?;
    CheckpointMeta::from_map(&meta.metadata().clone().unwrap_or_default())
}

/// Loads parameters into a model built from `cfg`. Fails with a version
/// error when the checkpoint was written for a different architecture.
pub fn load_into(path: &Path, cfg: &RunConfig, ps: &ParamStore) -> Result<CheckpointMeta> {
    let meta = read_checkpoint_meta(path)?;
    if meta.architecture_hash != cfg.architecture_hash() {
        return Err(LgsanError::Version(format!(
            "checkpoint architecture {} does not match config architecture {}",
            meta.architecture_hash,
            cfg.architecture_hash()
        )));
    }
    ps.load(path)?;
    Ok(meta)
}

/// Rebuilds the model from the configuration stored in the checkpoint.
pub fn load_model(path: &Path, dtype: DType, device: &Device) -> Result<(Lgsan, ParamStore, CheckpointMeta)> {
    let meta = read_checkpoint_meta(path)?;
    let mut ps = ParamStore::new(meta.seed, dtype, device.clone());
    let model = Lgsan::new(&meta.config, &mut ps)?;
    load_into(path, &meta.config, &ps)?;
    Ok((model, ps, meta))
}
