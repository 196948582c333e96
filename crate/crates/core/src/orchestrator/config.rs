use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::contrastive::ContrastiveConfig;
use crate::envs::{EnvConfig, EnvKind, LbfConfig, PolicySet, PpConfig};
use crate::error::{ClamError, Result};
use crate::model::{ModelConfig, Pooling};
use crate::ppo::PpoConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Clam,
    /// No agent modeling: the embedding input is all zeros.
    Nam,
    /// Average pooling instead of the policy token.
    ClamAvg,
    /// Learned positional weight vector instead of the policy token.
    ClamP,
    /// No masking on the strong branch.
    ClamSym,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Self::Clam, Self::Nam, Self::ClamAvg, Self::ClamP, Self::ClamSym];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Clam => "clam",
            Self::Nam => "nam",
            Self::ClamAvg => "clam-avg",
            Self::ClamP => "clam-p",
            Self::ClamSym => "clam-sym",
        }
    }

    pub fn models_agent(self) -> bool {
        self != Self::Nam
    }

    pub fn pooling(self) -> Pooling {
        match self {
            Self::ClamAvg => Pooling::Average,
            Self::ClamP => Pooling::WeightVector,
            _ => Pooling::Attention,
        }
    }

    pub fn symmetric(self) -> bool {
        self == Self::ClamSym
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = ClamError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| ClamError::Config(format!("unknown variant `{s}` (clam, nam, clam-avg, clam-p, clam-sym)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub env: EnvKind,
    pub variant: Variant,
    pub seed: u64,
    /// Total training episodes.
    pub episodes: u64,
    pub freq_ppo: u64,
    pub freq_clam: u64,
    /// Contrastive steps run each time the CLAM schedule fires.
    pub clam_steps: usize,
    pub tau_ema: f64,
    /// Indices into the environment's full policy set; all ten when absent.
    pub policies: Option<Vec<usize>>,
    /// Episodes per metrics row.
    pub log_interval: u64,
    /// Write every training episode to `episodes.jsonl`.
    pub log_episodes: bool,
    /// Stop once a logging interval's mean ego return reaches this value.
    pub early_stop_return: Option<f64>,
    pub out_dir: PathBuf,
    pub lbf: LbfConfig,
    pub pp: PpConfig,
    pub model: ModelConfig,
    pub contrastive: ContrastiveConfig,
    pub ppo: PpoConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            env: EnvKind::Lbf,
            variant: Variant::Clam,
            seed: 0,
            episodes: 30_000,
            freq_ppo: 10,
            freq_clam: 16,
            clam_steps: 1,
            tau_ema: 0.01,
            policies: None,
            log_interval: 100,
            log_episodes: false,
            early_stop_return: None,
            out_dir: PathBuf::from("runs/default"),
            lbf: LbfConfig::default(),
            pp: PpConfig::default(),
            model: ModelConfig::default(),
            contrastive: ContrastiveConfig::default(),
            ppo: PpoConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// The full-size defaults.
    Full,
    /// Small model and buffer sized for minutes of single-core training.
    Desk,
}

impl FromStr for Preset {
    type Err = ClamError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Self::Full),
            "desk" => Ok(Self::Desk),
            _ => Err(ClamError::Config(format!("unknown preset `{s}` (full, desk)"))),
        }
    }
}

impl TrainConfig {
    pub fn preset(preset: Preset, env: EnvKind, variant: Variant, seed: u64) -> Self {
        let mut c = Self {
            env,
            variant,
            seed,
            ..Self::default()
        };
        if preset == Preset::Desk {
            let pp = env == EnvKind::Pp;
            c.episodes = 3_000;
            c.freq_ppo = 10;
            c.freq_clam = if pp { 1 } else { 4 };
            c.clam_steps = if pp { 2 } else { 1 };
            c.tau_ema = 0.1;
            c.log_interval = 100;
            c.model = ModelConfig {
                d_model: 32,
                heads: 2,
                layers: 1,
                d_proj: 16,
                normalize_embedding: pp,
                ..ModelConfig::default()
            };
            c.contrastive = ContrastiveConfig {
                batch_size: if pp { 64 } else { 32 },
                capacity: if pp { 512 } else { 128 },
                lr: 1e-3,
                disjoint_crops: true,
                ..ContrastiveConfig::default()
            };
            c.policies = Some(if pp { vec![0, 4, 7, 8] } else { vec![4, 5, 6, 9] });
            c.pp.obstacles = Some([[-0.45, 0.35], [0.4, -0.4]]);
            c.ppo = PpoConfig {
                hidden: 64,
                lr: 1e-3,
                ..PpoConfig::default()
            };
        }
        c.apply_variant();
        c
    }

    /// Aligns the pooling and augmentation settings with the variant.
    pub fn apply_variant(&mut self) {
        self.model.pooling = self.variant.pooling();
        self.contrastive.symmetric = self.variant.symmetric();
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut c: Self = toml::from_str(text).map_err(|e| ClamError::Config(e.to_string()))?;
        c.apply_variant();
        Ok(c)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ClamError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| ClamError::Config(e.to_string()))
    }

    pub fn env_config(&self) -> EnvConfig {
        EnvConfig {
            lbf: self.lbf.clone(),
            pp: self.pp.clone(),
        }
    }

    pub fn policy_set(&self) -> Result<PolicySet> {
        match &self.policies {
            Some(idx) => PolicySet::subset(self.env, &self.lbf, &self.pp, idx),
            None => Ok(PolicySet::full(self.env, &self.lbf, &self.pp)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.freq_ppo == 0 || self.freq_clam == 0 {
            return Err(ClamError::Config("freq_ppo and freq_clam must be at least 1".into()));
        }
        if !(self.tau_ema > 0.0 && self.tau_ema <= 1.0) {
            return Err(ClamError::Config("tau_ema must lie in (0, 1]".into()));
        }
        if self.log_interval == 0 {
            return Err(ClamError::Config("log_interval must be at least 1".into()));
        }
        if self.model.pooling != self.variant.pooling() || self.contrastive.symmetric != self.variant.symmetric() {
            return Err(ClamError::Config(format!(
                "variant {} conflicts with model.pooling/contrastive.symmetric",
                self.variant
            )));
        }
        self.contrastive.validate()?;
        self.ppo.validate()?;
        crate::envs::env_spec(self.env, &self.env_config())?;
        self.policy_set()?;
        Ok(())
    }
}
