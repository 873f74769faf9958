//! REINFORCE learning automaton, one per secondary transmitter.
//!
//! The policy is Bernoulli(transmit) with probability `sigmoid(s)`. For that
//! parameterisation the score `d/ds ln pi_s(a)` is `a - sigmoid(s)`, so the
//! update is `s += eta * reward * (a - p)`, followed by clamping `|s|` to
//! `s_clamp` so the probability never saturates at exactly 0 or 1.

use crate::error::Result;
use crate::opmap::{threshold_from_opportunity, AccessThreshold, Opportunity};
use crate::radio::NodeId;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearnerState {
    pub stx_id: NodeId,
    pub s: f64,
    pub eta: f64,
    pub s_clamp: f64,
}

impl LearnerState {
    /// Starts from `logit(p0)`, so the initial access probability is `p0`
    /// (up to the clamp).
    pub fn from_opportunity(stx_id: NodeId, p0: f64, eta: f64, s_clamp: f64) -> Self {
        debug_assert!((0.0..=1.0).contains(&p0), "p0 = {p0}");
        let p0 = p0.clamp(0.0, 1.0);
        let logit = p0.ln() - (-p0).ln_1p();
        Self {
            stx_id,
            s: logit.clamp(-s_clamp, s_clamp),
            eta,
            s_clamp,
        }
    }

    pub fn access_probability(&self) -> f64 {
        1.0 / (1.0 + (-self.s).exp())
    }

    pub fn access_opportunity(&self) -> Opportunity {
        Opportunity::from_logit(self.s)
    }

    /// Single-action REINFORCE step.
    pub fn reinforce_update(&self, transmitted: bool, reward: f64, prob_used: f64) -> Self {
        self.reinforce_update_fraction(if transmitted { 1.0 } else { 0.0 }, reward, prob_used)
    }

    /// REINFORCE step averaged over the slots of an epoch that all used the
    /// same probability: `a` is the fraction of slots in which the
    /// transmitter accessed the channel.
    pub fn reinforce_update_fraction(&self, a: f64, reward: f64, prob_used: f64) -> Self {
        debug_assert!(
            prob_used > 0.0 && prob_used < 1.0,
            "prob_used = {prob_used}"
        );
        let step = self.eta * reward * (a - prob_used);
        if step == 0.0 {
            return *self;
        }
        Self {
            s: (self.s + step).clamp(-self.s_clamp, self.s_clamp),
            ..*self
        }
    }

    /// Threshold at which the opportunity under `interference` equals the
    /// current access probability.
    pub fn learned_threshold(&self, interference: f64) -> Result<AccessThreshold> {
        threshold_from_opportunity(self.access_opportunity(), interference)
    }
}

/// One transmitter's summary of an epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeedbackRecord {
    pub stx_id: NodeId,
    /// Accessed the channel in at least one slot.
    pub transmitted: bool,
    /// Strict majority of this transmitter's attempts succeeded.
    pub success: bool,
    /// Mean Shannon rate over successful slots; 0 unless `success`.
    pub achieved_rate: f64,
    pub access_prob_used: f64,
    pub tx_slots: u64,
    pub success_slots: u64,
    pub slots: u64,
}

impl FeedbackRecord {
    pub fn transmit_fraction(&self) -> f64 {
        if self.slots == 0 {
            0.0
        } else {
            self.tx_slots as f64 / self.slots as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardKind {
    /// Own Shannon rate on success, `-failure_penalty` on a failed attempt.
    LocalRate,
    /// Every transmitter receives the epoch's area spectral efficiency.
    GlobalAse,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardMode {
    pub kind: RewardKind,
    pub failure_penalty: f64,
}

impl Default for RewardMode {
    fn default() -> Self {
        Self {
            kind: RewardKind::GlobalAse,
            failure_penalty: 0.0,
        }
    }
}

pub fn compute_reward(feedback: &FeedbackRecord, mode: &RewardMode, epoch_ase: f64) -> f64 {
    debug_assert!(!feedback.success || feedback.transmitted);
    match mode.kind {
        RewardKind::GlobalAse => epoch_ase,
        RewardKind::LocalRate => match (feedback.transmitted, feedback.success) {
            (false, _) => 0.0,
            (true, true) => feedback.achieved_rate,
            (true, false) => -mode.failure_penalty,
        },
    }
}
