//! Pipeline configuration read from a flat JSON or TOML file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diseasehead::DiseaseModelConfig;
use crate::error::{Error, Result};
use crate::eval::DiseaseRecipe;
use crate::featnet::TrunkConfig;
use crate::ingest::{AugParams, SplitSpec};
use crate::train::{DiseaseTrainConfig, OptimizerKind, ViewTrainConfig};
use crate::viewnet::ViewNetConfig;

/// Defaults follow the published recipe at full model size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub manifest: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub viewnet_preset: String,
    pub trunk_preset: String,

    pub view_optimizer: OptimizerKind,
    pub view_lr: f64,
    pub view_batch_size: usize,
    pub view_weight_decay: f64,
    pub view_momentum: f64,
    pub view_epochs: usize,

    pub disease_lr: f64,
    pub disease_batch_size: usize,
    pub disease_loss_weight: f64,
    pub disease_epochs: usize,

    pub view_split: Vec<f64>,
    pub disease_split: Vec<f64>,
    pub folds: usize,

    /// Six-fold CA augmentation of the training part.
    pub expand_ca: bool,
    pub augment_val_ca: bool,
    pub freeze_trunk: bool,
    pub share_trunk: bool,
    pub replicate_to_3: bool,
    pub no_clip: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let v = ViewTrainConfig::default();
        let d = DiseaseTrainConfig::default();
        Self {
            manifest: None,
            out_dir: PathBuf::from("out"),
            seed: 0,
            viewnet_preset: "base".into(),
            trunk_preset: "resnet18".into(),
            view_optimizer: v.optimizer,
            view_lr: v.lr,
            view_batch_size: v.batch_size,
            view_weight_decay: v.weight_decay,
            view_momentum: v.momentum,
            view_epochs: v.epochs,
            disease_lr: d.lr,
            disease_batch_size: d.batch_size,
            disease_loss_weight: d.loss_weight,
            disease_epochs: d.epochs,
            view_split: vec![0.8, 0.1, 0.1],
            disease_split: vec![0.8, 0.2],
            folds: 5,
            expand_ca: true,
            augment_val_ca: true,
            freeze_trunk: false,
            share_trunk: false,
            replicate_to_3: false,
            no_clip: false,
        }
    }
}

impl PipelineConfig {
    /// Parses `.toml` files as TOML and anything else as JSON.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let cfg: Self = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.viewnet()?;
        self.trunk()?;
        self.view_train().validate()?;
        self.disease_train().validate()?;
        self.view_split_spec().validate().map_err(|e| Error::Config(e.to_string()))?;
        self.disease_split_spec().validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.folds < 2 {
            return Err(Error::Config("folds must be ≥ 2".into()));
        }
        Ok(())
    }

    pub fn viewnet(&self) -> Result<ViewNetConfig> {
        let mut c = ViewNetConfig::preset(&self.viewnet_preset)?;
        c.replicate_to_3 = self.replicate_to_3;
        Ok(c)
    }

    pub fn trunk(&self) -> Result<TrunkConfig> {
        TrunkConfig::preset(&self.trunk_preset)
    }

    fn clip(&self) -> Option<f64> {
        if self.no_clip {
            None
        } else {
            Some(5.0)
        }
    }

    pub fn view_train(&self) -> ViewTrainConfig {
        ViewTrainConfig {
            optimizer: self.view_optimizer,
            lr: self.view_lr,
            batch_size: self.view_batch_size,
            weight_decay: self.view_weight_decay,
            momentum: self.view_momentum,
            epochs: self.view_epochs,
            seed: self.seed,
            clip_norm: self.clip(),
        }
    }

    pub fn disease_train(&self) -> DiseaseTrainConfig {
        DiseaseTrainConfig {
            lr: self.disease_lr,
            batch_size: self.disease_batch_size,
            loss_weight: self.disease_loss_weight,
            epochs: self.disease_epochs,
            seed: self.seed,
            clip_norm: self.clip(),
            freeze_trunk: self.freeze_trunk,
            ..DiseaseTrainConfig::default()
        }
    }

    pub fn view_split_spec(&self) -> SplitSpec {
        SplitSpec { ratios: self.view_split.clone(), ..SplitSpec::views_8_1_1(self.seed) }
    }

    pub fn disease_split_spec(&self) -> SplitSpec {
        SplitSpec { ratios: self.disease_split.clone(), ..SplitSpec::disease_8_2(self.seed) }
    }

    pub fn disease_model(&self) -> Result<DiseaseModelConfig> {
        let mut m = DiseaseModelConfig::new(self.trunk()?);
        m.share_trunk = self.share_trunk;
        Ok(m)
    }

    pub fn recipe(&self) -> Result<DiseaseRecipe> {
        Ok(DiseaseRecipe {
            model: self.disease_model()?,
            train: self.disease_train(),
            expand_ca: self.expand_ca,
            augment_val_ca: self.augment_val_ca,
            aug: AugParams::default(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_and_json_agree() {
        let t: PipelineConfig = toml::from_str("seed = 3\nviewnet_preset = \"tiny\"\nno_clip = true\n").unwrap();
        let j: PipelineConfig = serde_json::from_str(r#"{"seed":3,"viewnet_preset":"tiny","no_clip":true}"#).unwrap();
        assert_eq!(t, j);
        assert_eq!(t.view_train().clip_norm, None);
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"sede":3}"#).is_err());
    }
}
