use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hyperparameter values explored in the reference experiments.
pub const GRID_BATCH_SIZES: [usize; 2] = [32, 64];
pub const GRID_LEARNING_RATES: [f64; 3] = [1e-3, 1e-4, 1e-5];
pub const GRID_EPOCHS: [usize; 4] = [30, 50, 75, 100];

/// Losses whose magnitude exceeds this abort training.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Non-hate vs hate (implicit and explicit merged).
    Binary,
    #[default]
    Multiclass,
}

impl Task {
    pub fn classes(self) -> usize {
        match self {
            Task::Binary => 2,
            Task::Multiclass => 3,
        }
    }

    /// Maps a stored three-way label to the task's label space.
    pub fn map_label(self, label: usize) -> usize {
        match self {
            Task::Binary => usize::from(label > 0),
            Task::Multiclass => label,
        }
    }

    pub fn class_names(self) -> &'static [&'static str] {
        match self {
            Task::Binary => &["non-hate", "hate"],
            Task::Multiclass => &crate::features::LABEL_NAMES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainPlan {
    pub seed: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Total epoch budget the stage schedule must fit into.
    pub epochs: usize,
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub classifier_epochs: usize,
    pub task: Task,
    /// When set, the classifier stage also updates every encoder on
    /// `L_ce + joint_lambda * L_total`.
    pub joint_lambda: Option<f64>,
}

impl Default for TrainPlan {
    fn default() -> Self {
        Self {
            seed: 0,
            batch_size: 32,
            learning_rate: 1e-4,
            epochs: 50,
            stage1_epochs: 20,
            stage2_epochs: 15,
            classifier_epochs: 15,
            task: Task::Multiclass,
            joint_lambda: None,
        }
    }
}

impl TrainPlan {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "batch_size must be at least 2 for the contrastive loss, got {}",
                self.batch_size
            )));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::Config(format!(
                "learning_rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        let scheduled = self.stage1_epochs + self.stage2_epochs + self.classifier_epochs;
        if scheduled > self.epochs {
            return Err(Error::Config(format!(
                "stage schedule {}+{}+{} exceeds the epoch budget {}",
                self.stage1_epochs, self.stage2_epochs, self.classifier_epochs, self.epochs
            )));
        }
        if let Some(l) = self.joint_lambda {
            if !l.is_finite() || l < 0.0 {
                return Err(Error::Config(format!("joint_lambda must be >= 0, got {l}")));
            }
        }
        Ok(())
    }

    /// Whether batch size, learning rate and epoch budget are grid values.
    pub fn in_reference_grid(&self) -> bool {
        GRID_BATCH_SIZES.contains(&self.batch_size)
            && GRID_LEARNING_RATES.contains(&self.learning_rate)
            && GRID_EPOCHS.contains(&self.epochs)
    }
}
