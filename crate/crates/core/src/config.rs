use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the group-vector regularizer measures spread.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegMode {
    /// Variance over the components of each group vector (default).
    WithinRows,
    /// Variance across groups per component.
    AcrossGroups,
}

/// Per-module enable switches; disabling a module swaps in its
/// shape-preserving bypass.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationSwitches {
    pub mlfef: bool,
    pub lid: bool,
    pub gem: bool,
    pub gla: bool,
}

impl Default for AblationSwitches {
    fn default() -> Self {
        AblationSwitches {
            mlfef: true,
            lid: true,
            gem: true,
            gla: true,
        }
    }
}

impl AblationSwitches {
    pub fn all_on() -> Self {
        Self::default()
    }
}

/// Full description of one training/evaluation run.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    // model
    pub n_groups: usize,
    pub d_w: usize,
    pub channels: [usize; 3],
    pub leaky_slope: f64,
    pub attention_scale: bool,
    pub gate_sigmoid: bool,
    pub per_group_weights: bool,
    pub learnable_affinity: bool,
    pub reg_mode: RegMode,
    // optimizer
    pub lr: f32,
    pub weight_decay: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub adam_eps: f32,
    // schedule
    pub epochs: usize,
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f32,
    pub batch_size: usize,
    // objective
    pub lambda: f64,
    // run
    pub seed: u64,
    pub dataset_dir: String,
    pub output_dir: String,
    pub val_fraction: f64,
    pub threads: usize,
    pub eval_ks: Vec<usize>,
    pub ablation: AblationSwitches,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            n_groups: 8,
            d_w: 16,
            channels: [32, 64, 128],
            leaky_slope: 0.01,
            attention_scale: true,
            gate_sigmoid: true,
            per_group_weights: false,
            learnable_affinity: false,
            reg_mode: RegMode::WithinRows,
            lr: 1e-3,
            weight_decay: 4e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            epochs: 20,
            decay_epochs: vec![7, 14],
            decay_factor: 0.1,
            batch_size: 32,
            lambda: 0.1,
            seed: 0,
            dataset_dir: "data/benchmark".into(),
            output_dir: "runs/default".into(),
            val_fraction: 0.1,
            threads: 1,
            eval_ks: vec![3, 5],
            ablation: AblationSwitches::default(),
        }
    }
}

impl RunConfig {
    /// Channel width of the fused map; groups × embedding width by
    /// construction.
    pub fn fused_channels(&self) -> usize {
        self.n_groups * self.d_w
    }

    /// Validate every field, reporting all violations at once.
    pub fn validate(&self) -> Result<()> {
        let mut violations = Vec::new();
        if self.n_groups == 0 {
            violations.push("n_groups must be >= 1".to_string());
        }
        if self.d_w < 2 {
            violations.push(format!("d_w must be >= 2, got {}", self.d_w));
        }
        for (i, &c) in self.channels.iter().enumerate() {
            if c == 0 {
                violations.push(format!("channels[{i}] must be positive"));
            }
        }
        if self.channels[2] % 4 != 0 {
            violations.push(format!(
                "channels[2] must be divisible by 4 for the gate MLP hidden width, got {}",
                self.channels[2]
            ));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            violations.push(format!("leaky_slope must be in (0,1), got {}", self.leaky_slope));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            violations.push(format!("lr must be positive, got {}", self.lr));
        }
        if self.weight_decay < 0.0 {
            violations.push(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        for b in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b.1 >= 0.0 && b.1 < 1.0) {
                violations.push(format!("{} must be in [0,1), got {}", b.0, b.1));
            }
        }
        for &e in &self.decay_epochs {
            if e == 0 || e >= self.epochs.max(1) {
                violations.push(format!(
                    "decay epoch {e} must lie strictly inside 1..{}",
                    self.epochs
                ));
            }
        }
        if !(0.0..=1.0).contains(&self.decay_factor) || self.decay_factor == 0.0 {
            violations.push(format!("decay_factor must be in (0,1], got {}", self.decay_factor));
        }
        if self.batch_size == 0 {
            violations.push("batch_size must be >= 1".to_string());
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            violations.push(format!("lambda must be in [0,1], got {}", self.lambda));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            violations.push(format!("val_fraction must be in [0,1), got {}", self.val_fraction));
        }
        if self.threads == 0 {
            violations.push("threads must be >= 1".to_string());
        }
        if self.eval_ks.is_empty() {
            violations.push("eval_ks must name at least one cutoff".to_string());
        }
        if self.eval_ks.iter().any(|&k| k == 0) {
            violations.push("eval_ks entries must be >= 1".to_string());
        }
        if violations.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidRunConfig { violations })
        }
    }

    pub fn from_json_file(path: &std::path::Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path)?;
        let cfg: RunConfig = serde_json::from_str(&raw).map_err(|source| Error::Json {
            path: path.display().to_string(),
            source,
        })?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
