use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    /// Divide by 10 at each decay point.
    #[default]
    StepDecay,
    /// `peak (1 + cos(pi * progress)) / 2` after warmup.
    HalfCosine,
    Constant,
}

/// Learning-rate schedule over a fixed number of iterations.
///
/// Warmup interpolates linearly from `base_lr` to `base_lr * scaling`; with
/// no warmup the schedule starts at the peak.
#[derive(Debug, Clone, PartialEq)]
pub struct LrSchedule {
    pub kind: ScheduleKind,
    pub base_lr: f64,
    pub scaling: f64,
    pub warmup_iters: usize,
    pub phases: PhaseSchedule,
}

impl LrSchedule {
    pub fn new(
        kind: ScheduleKind,
        base_lr: f64,
        scaling: f64,
        warmup_iters: usize,
        phases: PhaseSchedule,
    ) -> Result<Self> {
        if !(base_lr >= 0.0 && base_lr.is_finite()) {
            return Err(Error::Config(format!("base_lr must be finite and >= 0, got {base_lr}")));
        }
        if !(scaling > 0.0 && scaling.is_finite()) {
            return Err(Error::Config(format!("lr scaling must be positive, got {scaling}")));
        }
        if warmup_iters > phases.total() {
            return Err(Error::Config("warmup longer than training".into()));
        }
        Ok(Self { kind, base_lr, scaling, warmup_iters, phases })
    }

    /// Constant learning rate, no decay.
    pub fn constant(lr: f64, total: usize) -> Result<Self> {
        Self::new(ScheduleKind::Constant, lr, 1.0, 0, PhaseSchedule::new(&[], total)?)
    }

    /// Step decay without warmup and with peak `lr`.
    pub fn step_decay(lr: f64, decay_points: &[f64], total: usize) -> Result<Self> {
        Self::new(ScheduleKind::StepDecay, lr, 1.0, 0, PhaseSchedule::new(decay_points, total)?)
    }

    pub fn peak(&self) -> f64 {
        self.base_lr * self.scaling
    }

    pub fn lr_at(&self, t: usize) -> f64 {
        let peak = self.peak();
        if t < self.warmup_iters {
            return self.base_lr + (peak - self.base_lr) * t as f64 / self.warmup_iters as f64;
        }
        match self.kind {
            ScheduleKind::Constant => peak,
            ScheduleKind::StepDecay => peak * 10f64.powi(-((self.phases.phase_at(t) - 1) as i32)),
            ScheduleKind::HalfCosine => {
                let span = (self.phases.total() - self.warmup_iters).max(1) as f64;
                let progress = (t - self.warmup_iters) as f64 / span;
                peak * (1.0 + (std::f64::consts::PI * progress).cos()) / 2.0
            }
        }
    }
}

/// Decay boundaries partitioning training into phases `1..=K`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhaseSchedule {
    boundaries: Vec<usize>,
    total: usize,
}

impl PhaseSchedule {
    /// Boundaries are `floor(fraction * total)`.
    pub fn new(decay_points: &[f64], total: usize) -> Result<Self> {
        if total == 0 {
            return Err(Error::Config("iterations must be positive".into()));
        }
        let mut prev = 0.0;
        let mut boundaries = Vec::with_capacity(decay_points.len());
        for &f in decay_points {
            if !(f > prev && f < 1.0) {
                return Err(Error::Config(format!(
                    "decay points must be strictly increasing in (0, 1): {decay_points:?}"
                )));
            }
            prev = f;
            let b = (f * total as f64).floor() as usize;
            if b == 0 || boundaries.last() == Some(&b) {
                return Err(Error::Config(format!("decay points {decay_points:?} collapse at {total} iterations")));
            }
            boundaries.push(b);
        }
        Ok(Self { boundaries, total })
    }

    pub fn boundaries(&self) -> &[usize] {
        &self.boundaries
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn phases(&self) -> usize {
        self.boundaries.len() + 1
    }

    /// 1-based phase of iteration `t`.
    pub fn phase_at(&self, t: usize) -> usize {
        1 + self.boundaries.iter().filter(|&&b| b <= t).count()
    }

    /// Iteration range of a 1-based phase.
    pub fn range(&self, phase: usize) -> std::ops::Range<usize> {
        let start = if phase <= 1 { 0 } else { self.boundaries[phase - 2] };
        let end = self.boundaries.get(phase - 1).copied().unwrap_or(self.total);
        start..end
    }
}
