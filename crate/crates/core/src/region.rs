//! Per-region state: AoI, virtual queue and the task lifecycle.

use serde::{Deserialize, Serialize};

use crate::env::DelayBreakdown;
use crate::error::{Error, Result};
use crate::penalty::{volume_to_log2_bytes, PenaltyModel, ScenarioKind};

/// Weight of the newest realized delay in the running delay estimate.
pub const DELAY_EMA_WEIGHT: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorSpec {
    pub id: usize,
    /// Stand-in for how much salient content the sensor sees.
    pub saliency_weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub start_slot: u64,
    pub finish_slot: u64,
    pub b_region: f64,
    pub b_per_sensor: Vec<f64>,
    pub bandwidth_per_sensor: Vec<f64>,
    pub delays: DelayBreakdown,
}

#[derive(Clone, Debug, PartialEq)]
pub enum TaskStatus {
    Idle,
    Active { remaining_slots: u32, task: TaskRecord },
}

#[derive(Clone, Debug)]
pub struct RegionState {
    pub id: usize,
    pub kind: ScenarioKind,
    /// Age of information in slots.
    pub h: u32,
    /// Virtual queue level (Mb).
    pub q: f64,
    pub status: TaskStatus,
    pub sensors: Vec<SensorSpec>,
    /// Long-term volume budget Γ (Mb/slot).
    pub gamma: f64,
    /// Drift/penalty trade-off V.
    pub v: f64,
    /// Volume of the most recently completed task; `None` until the first
    /// completion when the cold-start convention leaves it undefined.
    pub last_completed_volume: Option<f64>,
    /// Running mean of realized task delays (slots).
    pub d_bar_est: f64,
}

impl RegionState {
    pub fn new(
        id: usize,
        kind: ScenarioKind,
        sensors: Vec<SensorSpec>,
        gamma: f64,
        v: f64,
        initial_volume: Option<f64>,
        d_bar_seed: f64,
    ) -> Result<Self> {
        let weight_sum: f64 = sensors.iter().map(|s| s.saliency_weight).sum();
        if sensors.is_empty() || !(weight_sum > 0.0) || sensors.iter().any(|s| s.saliency_weight < 0.0) {
            return Err(Error::domain(format!(
                "region {id}: saliency weights must be nonnegative with a positive sum"
            )));
        }
        Ok(RegionState {
            id,
            kind,
            h: 1,
            q: 0.0,
            status: TaskStatus::Idle,
            sensors,
            gamma,
            v,
            last_completed_volume: initial_volume,
            d_bar_est: d_bar_seed,
        })
    }

    pub fn is_idle(&self) -> bool {
        matches!(self.status, TaskStatus::Idle)
    }

    pub fn n_sensors(&self) -> usize {
        self.sensors.len()
    }

    /// Advances the AoI one slot: resets to the task delay on completion,
    /// otherwise increments. A completion must match the task whose
    /// countdown just reached zero; the region becomes idle.
    pub fn step_aoi(&mut self, completed: Option<&TaskRecord>) -> Result<u32> {
        let Some(done) = completed else {
            self.h = self.h.saturating_add(1);
            return Ok(self.h);
        };
        match &self.status {
            TaskStatus::Idle => {
                return Err(Error::State(format!(
                    "region {}: completion signaled for an idle region",
                    self.id
                )))
            }
            TaskStatus::Active { remaining_slots, task } => {
                if *remaining_slots != 0 || task.finish_slot != done.finish_slot {
                    return Err(Error::State(format!(
                        "region {}: completion for a task that is not due",
                        self.id
                    )));
                }
            }
        }
        self.status = TaskStatus::Idle;
        self.h = done.delays.total_slots;
        self.last_completed_volume = Some(done.b_region);
        let d = done.delays.total_slots as f64;
        self.d_bar_est = (1.0 - DELAY_EMA_WEIGHT) * self.d_bar_est + DELAY_EMA_WEIGHT * d;
        Ok(self.h)
    }

    /// `Q <- max(Q + b - Γ, 0)`.
    pub fn update_virtual_queue(&mut self, b_this_slot: f64) -> f64 {
        self.q = (self.q + b_this_slot - self.gamma).max(0.0);
        self.q
    }

    pub fn begin_task(&mut self, task: TaskRecord) -> Result<()> {
        if !self.is_idle() {
            return Err(Error::State(format!("region {}: begin_task on an active region", self.id)));
        }
        let remaining_slots = task.delays.total_slots;
        if remaining_slots == 0 {
            return Err(Error::State(format!("region {}: task with zero duration", self.id)));
        }
        self.status = TaskStatus::Active { remaining_slots, task };
        Ok(())
    }

    /// Counts down the running task by one slot and returns a copy of it once
    /// the countdown reaches zero. The region stays active until the
    /// completion is passed to [`RegionState::step_aoi`].
    pub fn tick(&mut self) -> Option<TaskRecord> {
        let TaskStatus::Active { remaining_slots, task } = &mut self.status else {
            return None;
        };
        if *remaining_slots == 0 {
            return None;
        }
        *remaining_slots -= 1;
        (*remaining_slots == 0).then(|| task.clone())
    }

    /// Surrogate AP given the current age and the volume of the last
    /// completed task; `None` before the first completion when cold start
    /// leaves the volume undefined.
    pub fn instantaneous_ap(&self, model: &PenaltyModel) -> Option<f64> {
        let b = self.last_completed_volume?;
        let h_s = self.h as f64 * model.tau_ms / 1000.0;
        model.ap_value(h_s, volume_to_log2_bytes(b)).ok()
    }

    pub fn instantaneous_penalty(&self, model: &PenaltyModel) -> Option<f64> {
        let b = self.last_completed_volume?;
        model.penalty(self.h as f64, b).ok()
    }
}
