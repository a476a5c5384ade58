//! Run configuration shared by every command.
//!
//! Files are JSON. Unknown keys are rejected and omitted sections take their
//! defaults; [`RunConfig::validate`] runs before any work starts.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::aligndp::timing;
use crate::decode::{BeamConfig, LengthLimits, SamplingSchedule};
use crate::error::{Error, Result};
use crate::evalsuite::{
    DEFAULT_COLLAPSE_THRESHOLD, DEFAULT_OVERLAP_THRESHOLD, DEFAULT_POSITION_BINS, DEFAULT_RELAXED_THRESHOLD,
    DEFAULT_SWEEP_THRESHOLDS, DEFAULT_TOP_Q,
};
use crate::objectives::ObjectiveConfig;
use crate::seqcore::Alphabet;

pub const DEFAULT_CODEBOOK_SIZE: u32 = 512;
pub const DEFAULT_WINDOW_S: f64 = 3.0;
pub const DEFAULT_HOP_S: f64 = 1.5;
pub const DEFAULT_L_MAX: usize = 44;
pub const DEFAULT_L_MIN: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub collapse_threshold: f64,
    pub overlap_threshold: f64,
    pub relaxed_threshold: f64,
    pub position_bins: usize,
    pub top_q: Vec<usize>,
    pub recall_k: Vec<usize>,
    pub dl_thresholds: Vec<usize>,
    pub ed_thresholds: Vec<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            collapse_threshold: DEFAULT_COLLAPSE_THRESHOLD,
            overlap_threshold: DEFAULT_OVERLAP_THRESHOLD,
            relaxed_threshold: DEFAULT_RELAXED_THRESHOLD,
            position_bins: DEFAULT_POSITION_BINS,
            top_q: DEFAULT_TOP_Q.to_vec(),
            recall_k: vec![1, 5, 10, 20],
            dl_thresholds: DEFAULT_SWEEP_THRESHOLDS.to_vec(),
            ed_thresholds: DEFAULT_SWEEP_THRESHOLDS.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimingConfig {
    pub prior_a: f64,
    pub prior_b: f64,
    pub prior_strength: f64,
    pub epsilon: f64,
    pub frame_dt_s: f64,
}

impl Default for TimingConfig {
    fn default() -> Self {
        TimingConfig {
            prior_a: timing::DEFAULT_PRIOR_A,
            prior_b: timing::DEFAULT_PRIOR_B,
            prior_strength: timing::DEFAULT_PRIOR_STRENGTH,
            epsilon: timing::DEFAULT_EPSILON,
            frame_dt_s: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchiveConfig {
    pub window_s: f64,
    pub hop_s: f64,
}

impl Default for ArchiveConfig {
    fn default() -> Self {
        ArchiveConfig {
            window_s: DEFAULT_WINDOW_S,
            hop_s: DEFAULT_HOP_S,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub alphabet: Alphabet,
    pub seed: u64,
    pub objectives: ObjectiveConfig,
    pub sampling: SamplingSchedule,
    pub generation: LengthLimits,
    pub beam: BeamConfig,
    pub timing: TimingConfig,
    pub eval: EvalConfig,
    pub archive: ArchiveConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let objectives = ObjectiveConfig::default();
        let rho = objectives.rho;
        RunConfig {
            alphabet: Alphabet::with_size(DEFAULT_CODEBOOK_SIZE).expect("default alphabet is valid"),
            seed: 0,
            objectives,
            sampling: SamplingSchedule {
                k_early: 4,
                tau_early: 1.0,
                tau_late: 0.7,
                p_early: 0.95,
                p_late: 0.9,
                gamma_early: 1.1,
                gamma_late: 1.3,
                freq_window: None,
            },
            generation: LengthLimits {
                rho,
                l_min: DEFAULT_L_MIN,
                l_max: DEFAULT_L_MAX,
            },
            beam: BeamConfig {
                beam_size: 4,
                l_max: DEFAULT_L_MAX,
                l_min: DEFAULT_L_MIN,
                rho,
                gamma_rep: 1.2,
                alpha_len: 0.0,
            },
            timing: TimingConfig::default(),
            eval: EvalConfig::default(),
            archive: ArchiveConfig::default(),
        }
    }
}

fn config_err(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.alphabet.validate().map_err(config_err)?;
        self.objectives.validate()?;
        self.sampling.validate()?;
        self.generation.cap(0).map_err(config_err)?;
        self.beam.validate()?;

        let t = &self.timing;
        if !(t.prior_a >= 0.0 && t.prior_b >= 0.0) {
            return Err(Error::Config("timing prior shape offsets must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&t.prior_strength) {
            return Err(Error::Config("timing prior_strength must lie in [0, 1]".into()));
        }
        if !(t.epsilon > 0.0 && t.frame_dt_s > 0.0) {
            return Err(Error::Config("timing epsilon and frame_dt_s must be > 0".into()));
        }

        let e = &self.eval;
        for (name, v) in [
            ("collapse_threshold", e.collapse_threshold),
            ("overlap_threshold", e.overlap_threshold),
            ("relaxed_threshold", e.relaxed_threshold),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("eval.{name} must lie in [0, 1]")));
            }
        }
        if e.position_bins == 0 || e.recall_k.contains(&0) {
            return Err(Error::Config("position_bins and recall_k entries must be >= 1".into()));
        }

        let a = &self.archive;
        if !(a.window_s > 0.0 && a.hop_s > 0.0) {
            return Err(Error::Config("archive window_s and hop_s must be > 0".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON serialization, hex encoded.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}
