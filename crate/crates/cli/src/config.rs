//! Pipeline configuration: TOML with one table per stage. Flags override
//! file values; missing keys take the embedded defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use qe_core::corruptor::EditProbs;
use qe_core::ensemble::{MergeRule, Thresholds};
use qe_core::fixer::{FillMode, SeverityKMap};
use qe_core::metrics::SpanMatch;
use qe_core::synth::ToyLanguageConfig;
use qe_core::toy_qe::{Activation, EncoderConfig, TrainConfig};
use qe_core::{QeError, Result};

pub const CONFIG_ENV: &str = "QE_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Base seed for corruption, filling and toy data.
    pub seed: u64,
    pub corrupt: EditProbs,
    pub lm: LmSection,
    pub fix: FixSection,
    pub encoder: EncoderConfig,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub spans: SpansSection,
    pub tune: TuneSection,
    pub toy: ToyLanguageConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 1,
            corrupt: EditProbs::default(),
            lm: LmSection::default(),
            fix: FixSection::default(),
            encoder: EncoderConfig::default(),
            model: ModelSection::default(),
            train: TrainConfig::default(),
            spans: SpansSection::default(),
            tune: TuneSection::default(),
            toy: ToyLanguageConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmSection {
    pub order: usize,
}

impl Default for LmSection {
    fn default() -> Self {
        LmSection { order: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixSection {
    pub mode: FillMode,
    pub k: SeverityKMap,
    /// Shell command of an external sampler; the n-gram LM is used when unset.
    pub external_cmd: Option<String>,
    pub timeout_secs: f64,
}

impl Default for FixSection {
    fn default() -> Self {
        FixSection {
            mode: FillMode::LeftToRight,
            k: SeverityKMap::default(),
            external_cmd: None,
            timeout_secs: qe_core::fixer::DEFAULT_TIMEOUT.as_secs_f64(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub sigma: Activation,
    pub dropout: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection { sigma: Activation::Sigmoid, dropout: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpansSection {
    pub e_bad: f64,
    pub e_minor: f64,
    pub e_major: f64,
    pub merge: MergeRule,
}

impl Default for SpansSection {
    fn default() -> Self {
        let t = Thresholds::default();
        SpansSection { e_bad: t.bad, e_minor: t.minor, e_major: t.major, merge: MergeRule::Worst }
    }
}

impl SpansSection {
    pub fn thresholds(&self) -> Thresholds {
        Thresholds { bad: self.e_bad, minor: self.e_minor, major: self.e_major }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuneSection {
    pub step: f64,
    pub mode: SpanMatch,
}

impl Default for TuneSection {
    fn default() -> Self {
        TuneSection { step: 0.01, mode: SpanMatch::Lenient }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| QeError::Parse {
            path: origin.to_path_buf(),
            line: e.span().map_or(0, |s| text[..s.start].lines().count().max(1)),
            message: e.message().to_string(),
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    /// Explicit path, else `$QE_CONFIG`, else defaults.
    pub fn load(explicit: Option<&Path>) -> Result<(Self, Option<PathBuf>)> {
        let path = explicit
            .map(Path::to_path_buf)
            .or_else(|| std::env::var_os(CONFIG_ENV).filter(|v| !v.is_empty()).map(PathBuf::from));
        match path {
            None => Ok((PipelineConfig::default(), None)),
            Some(p) => {
                let text = std::fs::read_to_string(&p).map_err(|e| QeError::io(&p, e))?;
                Ok((Self::from_toml(&text, &p)?, Some(p)))
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.corrupt.validate()?;
        self.fix.k.validate()?;
        if self.lm.order < 1 {
            return Err(QeError::InvalidValue("lm.order must be >= 1".into()));
        }
        if !(self.fix.timeout_secs > 0.0 && self.fix.timeout_secs.is_finite()) {
            return Err(QeError::InvalidValue("fix.timeout_secs must be positive".into()));
        }
        self.encoder.validate()?;
        if !(0.0..1.0).contains(&self.model.dropout) {
            return Err(QeError::InvalidValue(format!("model.dropout {} outside [0,1)", self.model.dropout)));
        }
        self.train.validate()?;
        self.spans.thresholds().validate()?;
        if !(self.tune.step > 0.0 && self.tune.step <= 1.0) {
            return Err(QeError::InvalidValue("tune.step must be in (0,1]".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = PipelineConfig::default();
        let back = PipelineConfig::from_toml(&c.to_toml(), Path::new("x")).unwrap();
        assert_eq!(c, back);
        c.validate().unwrap();
    }

    #[test]
    fn modified_round_trip() {
        let mut c = PipelineConfig::default();
        c.fix.external_cmd = Some("python3 sampler.py --k 'a b'".into());
        c.fix.mode = FillMode::Parallel;
        c.model.sigma = Activation::None;
        c.spans.merge = MergeRule::Majority;
        c.train.learning_rate = 0.1 + 0.2;
        let back = PipelineConfig::from_toml(&c.to_toml(), Path::new("x")).unwrap();
        assert_eq!(c, back);
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let c = PipelineConfig::from_toml("seed = 7\n[train]\nbeta = 10.0\n", Path::new("x")).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.train.beta, 10.0);
        assert_eq!(c.train.alpha, 1.0);
        assert_eq!(c.fix.k, SeverityKMap::default());
    }

    #[test]
    fn unknown_key_rejected() {
        let err = PipelineConfig::from_toml("[train]\nbetta = 1.0\n", Path::new("c.toml")).unwrap_err();
        assert!(err.to_string().contains("c.toml"));
        assert!(PipelineConfig::from_toml("nonsense = 1\n", Path::new("c.toml")).is_err());
    }
}
