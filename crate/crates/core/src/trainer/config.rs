use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::autodiff::Precision;
use crate::error::{Error, Result};
use crate::losses::{AdversarialForm, LossNorms, LossWeights, ObjectiveOptions, Pairing, Rel1Policy};
use crate::nn::{AdamConfig, ArchConfig};
use crate::schedule::StagnationRule;
use crate::data::SyntheticTaskSpec;

/// Where training images come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Synthetic(SyntheticTaskSpec),
    /// A `trainA/ trainB/ testA/ testB/ [masks/]` tree of PNGs.
    Dir(PathBuf),
}

impl Default for Task {
    fn default() -> Self {
        Task::Synthetic(SyntheticTaskSpec::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub task: Task,
    pub arch: ArchConfig,
    pub weights: LossWeights,
    pub norms: LossNorms,
    pub rule: StagnationRule,
    pub optimizer: AdamConfig,
    pub batch_size: usize,
    pub total_steps: u64,
    pub seed: u64,
    pub paired: bool,
    /// Share parameters between each generator and its primed twin.
    pub tied: bool,
    pub rel1_policy: Rel1Policy,
    pub adversarial: AdversarialForm,
    /// Discriminator updates per generator update.
    pub d_steps: usize,
    pub precision: Precision,
    /// Checkpoint period in steps; 0 keeps only the final checkpoint.
    pub checkpoint_every: u64,
    /// Evaluation period in steps; 0 evaluates only at the end.
    pub eval_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            task: Task::default(),
            arch: ArchConfig::default(),
            weights: LossWeights::default(),
            norms: LossNorms::default(),
            rule: StagnationRule::default(),
            optimizer: AdamConfig::default(),
            batch_size: 4,
            total_steps: 2000,
            seed: 0,
            paired: false,
            tied: false,
            rel1_policy: Rel1Policy::Off,
            adversarial: AdversarialForm::NonSaturating,
            d_steps: 1,
            precision: Precision::Single,
            checkpoint_every: 500,
            eval_every: 0,
        }
    }
}

fn prefixed(e: Error, prefix: &str) -> Error {
    match e {
        Error::Config { pointer, message } => Error::Config {
            pointer: format!("{prefix}{pointer}"),
            message,
        },
        other => other,
    }
}

/// Parse JSON, reporting failures with a JSON pointer to the offending key.
pub fn parse_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let mut pointer = String::new();
        for seg in e.path().iter() {
            match seg {
                serde_path_to_error::Segment::Seq { index } => pointer.push_str(&format!("/{index}")),
                serde_path_to_error::Segment::Map { key } => pointer.push_str(&format!("/{key}")),
                serde_path_to_error::Segment::Enum { variant } => pointer.push_str(&format!("/{variant}")),
                serde_path_to_error::Segment::Unknown => pointer.push_str("/?"),
            }
        }
        if pointer.is_empty() {
            pointer.push('/');
        }
        Error::config(pointer, e.into_inner().to_string())
    })
}

impl TrainConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        parse_json(text)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Two tied generators, no relative terms: plain CycleGAN.
    pub fn cyclegan_baseline(mut self) -> Self {
        self.tied = true;
        self.weights.lambda_rel1 = 0.0;
        self.weights.lambda_rel2 = 0.0;
        self
    }

    pub fn pairing(&self) -> Pairing {
        Pairing::new(self.paired, self.rel1_policy)
    }

    pub fn objective_options(&self) -> ObjectiveOptions {
        ObjectiveOptions {
            norms: self.norms,
            adversarial: self.adversarial,
            pairing: self.pairing(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.weights.validate(true)?;
        self.rule.validate()?;
        self.optimizer.validate()?;
        if self.batch_size == 0 {
            return Err(Error::config("/batch_size", "must be at least 1"));
        }
        if self.total_steps == 0 {
            return Err(Error::config("/total_steps", "must be at least 1"));
        }
        if self.d_steps == 0 {
            return Err(Error::config("/d_steps", "must be at least 1"));
        }
        match &self.task {
            Task::Synthetic(spec) => {
                spec.validate().map_err(|e| prefixed(e, "/task/synthetic"))?;
                if spec.image_size != self.arch.image_size {
                    return Err(Error::config(
                        "/arch/image_size",
                        format!("{} differs from the task's image_size {}", self.arch.image_size, spec.image_size),
                    ));
                }
                if spec.channels != self.arch.channels {
                    return Err(Error::config(
                        "/arch/channels",
                        format!("{} differs from the task's channels {}", self.arch.channels, spec.channels),
                    ));
                }
                if self.batch_size > spec.n_train {
                    return Err(Error::config("/batch_size", format!("exceeds n_train {}", spec.n_train)));
                }
            }
            Task::Dir(path) => {
                if !path.is_dir() {
                    return Err(Error::config(
                        "/task/dir",
                        format!("dataset path {} does not exist", path.display()),
                    ));
                }
                if self.arch.channels != 3 {
                    return Err(Error::config("/arch/channels", "PNG datasets are RGB; use 3"));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = TrainConfig::default();
        cfg.validate().unwrap();
        assert_eq!(TrainConfig::from_json(&cfg.to_json()).unwrap(), cfg);
        assert_eq!(TrainConfig::from_json("{}").unwrap(), cfg);
    }

    #[test]
    fn errors_carry_json_pointers() {
        let err = TrainConfig::from_json(r#"{"arch": {"image_sise": 32}}"#).unwrap_err();
        assert!(matches!(&err, Error::Config { pointer, .. } if pointer.starts_with("/arch")), "{err}");

        let err = TrainConfig::from_json(r#"{"optimizer": {"lr": "fast"}}"#).unwrap_err();
        assert!(matches!(&err, Error::Config { pointer, .. } if pointer == "/optimizer/lr"), "{err}");

        let cfg = TrainConfig::from_json(r#"{"arch": {"image_size": 30}}"#).unwrap();
        let err = cfg.validate().unwrap_err();
        assert!(matches!(&err, Error::Config { pointer, .. } if pointer == "/arch/image_size"), "{err}");

        let cfg = TrainConfig::from_json(r#"{"task": {"synthetic": {"texture_a": "checker", "texture_b": "checker"}}}"#)
            .unwrap();
        let err = cfg.validate().unwrap_err();
        assert!(matches!(&err, Error::Config { pointer, .. } if pointer == "/task/synthetic/texture_b"), "{err}");
    }

    #[test]
    fn missing_dataset_path_is_named() {
        let cfg = TrainConfig {
            task: Task::Dir("/no/such/dataset".into()),
            ..TrainConfig::default()
        };
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("/no/such/dataset"), "{msg}");
    }

    #[test]
    fn baseline_ties_and_drops_relative_terms() {
        let cfg = TrainConfig::default().cyclegan_baseline();
        assert!(cfg.tied);
        assert_eq!((cfg.weights.lambda_rel1, cfg.weights.lambda_rel2), (0.0, 0.0));
        assert!(cfg.to_json().contains("\"tied\": true"));
    }
}
