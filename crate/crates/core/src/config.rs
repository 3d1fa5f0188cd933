//! TOML run configuration. Every field is optional; missing values come from
//! the selected profile.
//!
//! ```toml
//! [workload]
//! q = 0.2
//! k = 5
//!
//! [protocol]
//! l = 100
//! num_lof = 3
//! l_lof = 8
//! T = 1
//!
//! [training]
//! profile = "desk"
//! alpha = 0.1
//! seeds = [0, 1, 2]
//!
//! [experiment]
//! sweep = "trial_length"
//! values = [50, 100, 150]
//! runs = 5
//! frames = 500
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::{ExperimentConfig, PipelineConfig, Profile, SweepVariable};
use crate::runtime::Method;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSection {
    /// Number of chain states; must agree with the setting when given.
    #[serde(alias = "N")]
    pub num_states: Option<usize>,
    #[serde(alias = "q")]
    pub stay_prob: Option<f64>,
    #[serde(alias = "k")]
    pub jumps: Option<u32>,
    pub seed: Option<u64>,
    pub frames: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolSection {
    #[serde(alias = "l")]
    pub trial_length: Option<usize>,
    pub num_lof: Option<u32>,
    pub l_lof: Option<u32>,
    #[serde(alias = "T")]
    pub types: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    pub profile: Option<Profile>,
    pub alpha: Option<f64>,
    #[serde(alias = "lr")]
    pub learning_rate: Option<f64>,
    #[serde(alias = "batch")]
    pub batch_size: Option<usize>,
    #[serde(alias = "epochs")]
    pub student_epochs: Option<usize>,
    pub teacher_epochs: Option<usize>,
    pub early_stop: Option<usize>,
    pub patience: Option<usize>,
    #[serde(alias = "split")]
    pub train_fraction: Option<f64>,
    pub seeds: Option<Vec<u64>>,
    pub teacher_frames: Option<usize>,
    pub student_frames: Option<usize>,
    pub genie_learning_rate: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub sweep: Option<SweepVariable>,
    pub values: Option<Vec<f64>>,
    pub runs: Option<usize>,
    pub frames: Option<usize>,
    pub seed: Option<u64>,
    pub reuse_model: Option<bool>,
    pub methods: Option<Vec<Method>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub workload: WorkloadSection,
    #[serde(default)]
    pub protocol: ProtocolSection,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub experiment: ExperimentSection,
}

impl FileConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::parse("config", e.message()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingArtifact(path.display().to_string()));
        }
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config sections serialize to TOML")
    }

    pub fn profile(&self) -> Profile {
        self.training.profile.unwrap_or(Profile::Desk)
    }

    pub fn seeds(&self) -> Vec<u64> {
        self.training.seeds.clone().unwrap_or_else(|| vec![0])
    }

    /// Pipeline for training seed `seed`.
    pub fn pipeline(&self, seed: u64) -> Result<PipelineConfig> {
        let p = &self.protocol;
        let t = &self.training;
        let w = &self.workload;
        let alpha = t.alpha.unwrap_or(0.1);
        let mut c = PipelineConfig::for_profile(
            self.profile(),
            p.types.unwrap_or(1),
            p.trial_length.unwrap_or(100),
            alpha,
            seed,
        );
        if let Some(v) = w.stay_prob {
            c.stay_prob = v;
        }
        if let Some(v) = w.jumps {
            c.jumps = v;
        }
        if let Some(v) = p.num_lof {
            c.lof.num_lof = v;
        }
        if let Some(v) = p.l_lof {
            c.lof.l_lof = v;
        }
        if let Some(v) = t.teacher_frames {
            c.teacher_frames = v;
        }
        if let Some(v) = t.student_frames {
            c.student_frames = v;
        }
        if let Some(v) = t.genie_learning_rate {
            c.genie_learning_rate = v;
        }
        for train in [&mut c.teacher, &mut c.student] {
            if let Some(v) = t.learning_rate {
                train.learning_rate = v;
            }
            if let Some(v) = t.batch_size {
                train.batch_size = v;
            }
            if let Some(v) = t.train_fraction {
                train.train_fraction = v;
            }
            if let Some(v) = t.patience {
                train.patience = Some(v);
            }
            if t.early_stop.is_some() {
                train.early_stop_epoch = t.early_stop;
            }
        }
        if let Some(v) = t.teacher_epochs {
            c.teacher.max_epochs = v;
        }
        if let Some(v) = t.student_epochs {
            c.student.max_epochs = v;
        }
        let states = c.setting()?.n_max() as usize + 1;
        if let Some(n) = w.num_states.filter(|&n| n != states) {
            return Err(Error::spec(format!("workload N = {n} but the setting needs {states} states")));
        }
        c.transition()?;
        c.teacher.validate()?;
        c.student.validate()?;
        Ok(c)
    }

    pub fn experiment(&self, seed: u64) -> Result<ExperimentConfig> {
        let e = &self.experiment;
        let sweep = e.sweep.unwrap_or(SweepVariable::TrialLength);
        let base = self.pipeline(seed)?;
        let default_value = match sweep {
            SweepVariable::TrialLength => base.trial_length as f64,
            SweepVariable::JumpsK => base.jumps as f64,
            SweepVariable::Alpha => base.student.mixing_alpha,
            SweepVariable::NumTypes => base.types as f64,
        };
        let mut c = ExperimentConfig::new(
            base,
            sweep,
            e.values.clone().unwrap_or_else(|| vec![default_value]),
            self.profile(),
        );
        if let Some(v) = e.runs {
            c.runs = v;
        }
        if let Some(v) = e.frames {
            c.frames = v;
        }
        if let Some(v) = e.seed {
            c.eval_seed = v;
        }
        if let Some(v) = e.reuse_model {
            c.reuse_model = v;
        }
        if let Some(v) = &e.methods {
            c.methods = v.clone();
        }
        c.validate()?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn short_names_and_defaults() {
        let cfg = FileConfig::from_toml(
            "[workload]\nq = 0.3\nk = 2\n[protocol]\nl = 60\nT = 3\n[training]\nlr = 0.01\nepochs = 7\n",
        )
        .unwrap();
        let p = cfg.pipeline(4).unwrap();
        assert_eq!((p.stay_prob, p.jumps, p.trial_length, p.types), (0.3, 2, 60, 3));
        assert_eq!(p.student.learning_rate, 0.01);
        assert_eq!(p.teacher.learning_rate, 0.01);
        assert_eq!(p.student.max_epochs, 7);
        assert_eq!(p.student.mixing_alpha, 0.1);
        assert_eq!(p.seed, 4);
        let e = cfg.experiment(4).unwrap();
        assert_eq!(e.values, vec![60.0]);
        assert_eq!((e.runs, e.frames), (5, 500));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(FileConfig::from_toml("[protocol]\nbogus = 1\n"), Err(Error::Parse { .. })));
        let cfg = FileConfig::from_toml("[workload]\nN = 10\n").unwrap();
        assert!(cfg.pipeline(0).is_err());
        let cfg = FileConfig::from_toml("[workload]\nq = 1.5\n").unwrap();
        assert!(cfg.pipeline(0).is_err());
        assert!(matches!(FileConfig::load("/nonexistent/run.toml"), Err(Error::MissingArtifact(_))));
    }

    #[test]
    fn toml_round_trip() {
        let cfg = FileConfig::from_toml(
            "[experiment]\nsweep = \"alpha\"\nvalues = [0.0, 0.5, 1.0]\nmethods = [\"nn\", \"bb_aware\"]\n",
        )
        .unwrap();
        assert_eq!(FileConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        let e = cfg.experiment(0).unwrap();
        assert_eq!(e.sweep, SweepVariable::Alpha);
        assert_eq!(e.methods, vec![Method::Nn, Method::BbAware]);
    }
}
