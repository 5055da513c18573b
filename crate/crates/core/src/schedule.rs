//! Per-step learning-rate schedules: linear warmup + cosine annealing, step
//! decay, and constant.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{real, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    WarmupCosine,
    Step,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule<F> {
    pub kind: ScheduleKind,
    pub base_lr: F,
    pub warmup_epochs: usize,
    pub total_epochs: usize,
    pub step_milestones: Vec<usize>,
    pub step_factor: F,
    pub steps_per_epoch: usize,
}

impl<F: Real> Schedule<F> {
    pub fn warmup_cosine(base_lr: F, warmup_epochs: usize, total_epochs: usize, steps_per_epoch: usize) -> Result<Self> {
        let s = Self {
            kind: ScheduleKind::WarmupCosine,
            base_lr,
            warmup_epochs,
            total_epochs,
            step_milestones: Vec::new(),
            step_factor: F::one(),
            steps_per_epoch,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn step_decay(base_lr: F, milestones: Vec<usize>, factor: F, total_epochs: usize, steps_per_epoch: usize) -> Result<Self> {
        let s = Self {
            kind: ScheduleKind::Step,
            base_lr,
            warmup_epochs: 0,
            total_epochs,
            step_milestones: milestones,
            step_factor: factor,
            steps_per_epoch,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn constant(base_lr: F, total_epochs: usize, steps_per_epoch: usize) -> Result<Self> {
        let s = Self {
            kind: ScheduleKind::Constant,
            base_lr,
            warmup_epochs: 0,
            total_epochs,
            step_milestones: Vec::new(),
            step_factor: F::one(),
            steps_per_epoch,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_lr <= F::zero() {
            return Err(Error::input("base learning rate must be positive"));
        }
        if self.total_epochs == 0 || self.steps_per_epoch == 0 {
            return Err(Error::input("epoch and step counts must be positive"));
        }
        if self.warmup_epochs >= self.total_epochs {
            return Err(Error::input("warmup must be shorter than the run"));
        }
        if self.step_factor <= F::zero() {
            return Err(Error::input("step factor must be positive"));
        }
        let increasing = self
            .step_milestones
            .windows(2)
            .all(|w| w[0] < w[1]);
        if !increasing || self.step_milestones.iter().any(|&m| m >= self.total_epochs) {
            return Err(Error::input(
                "milestones must be strictly increasing and inside the epoch budget",
            ));
        }
        Ok(())
    }

    pub fn total_steps(&self) -> usize {
        self.total_epochs * self.steps_per_epoch
    }

    /// Learning rate at a global optimizer step.
    pub fn lr_at(&self, global_step: usize) -> Result<F> {
        if global_step >= self.total_steps() {
            return Err(Error::contract(format!(
                "step {} beyond budget of {}",
                global_step,
                self.total_steps()
            )));
        }
        Ok(match self.kind {
            ScheduleKind::Constant => self.base_lr,
            ScheduleKind::Step => {
                let epoch = global_step / self.steps_per_epoch;
                let passed = self.step_milestones.iter().filter(|&&m| epoch >= m).count();
                self.base_lr * self.step_factor.powi(passed as i32)
            }
            ScheduleKind::WarmupCosine => {
                let warmup_steps = self.warmup_epochs * self.steps_per_epoch;
                if global_step < warmup_steps {
                    // ramp from base_lr / warmup_steps up to base_lr
                    let frac = F::from_usize_lossy(global_step + 1) / F::from_usize_lossy(warmup_steps);
                    self.base_lr * frac
                } else {
                    let span = self.total_steps() - warmup_steps;
                    let p = F::from_usize_lossy(global_step - warmup_steps) / F::from_usize_lossy(span);
                    let half = real::<F>(0.5);
                    self.base_lr * half * (F::one() + (real::<F>(std::f64::consts::PI) * p).cos())
                }
            }
        })
    }
}
