//! The sense / op-map / access / learn cycle and the experiments built on it.
//!
//! One cycle:
//! 1. sensors report the interference they measure,
//! 2. the server turns readings plus the current threshold into an op map,
//! 3. secondary pairs run one epoch of slotted ALOHA and report feedback,
//! 4. every transmitter updates its learner and reads back a threshold; the
//!    median of those becomes the next cycle's threshold.
//!
//! Latency is accounted, never slept.

use std::collections::BTreeMap;

use rand::Rng;

use crate::config::SimConfig;
use crate::error::{Error, Result};
use crate::learner::{compute_reward, LearnerState, RewardMode};
use crate::mac::{run_epoch, run_slots, EpochMetrics, EpochStreams, SlotOutcome};
use crate::opmap::{build_op_map_with, AccessThreshold, OpportunityMap, SensorReading};
use crate::radio::{
    aggregate_interference, place_nodes, sample_fading, ChannelParams, Emitter, NodeId, Topology,
};
use crate::rng::{Phase, Purpose, SimRng, StreamSeed};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleTiming {
    pub tcp_ms: f64,
    pub server_compute_ms: f64,
    pub node_ms: f64,
    pub optimized_server_compute_ms: f64,
}

impl Default for CycleTiming {
    fn default() -> Self {
        Self {
            tcp_ms: 1.0,
            server_compute_ms: 132.0,
            node_ms: 10.0,
            optimized_server_compute_ms: 17.0,
        }
    }
}

/// Modeled wall time of one cycle. The optimized path runs the server on
/// chip, which drops the TCP hop.
pub fn cycle_latency(timing: &CycleTiming, optimized: bool) -> f64 {
    if optimized {
        timing.optimized_server_compute_ms + timing.node_ms
    } else {
        timing.tcp_ms + timing.server_compute_ms + timing.node_ms
    }
}

/// Reads every sensor against `active`. With `fading_rng` each sensor link
/// gets its own fading draw on top of the emitter's own factor.
pub fn sense(
    topology: &Topology,
    active: &[Emitter],
    params: &ChannelParams,
    mut fading_rng: Option<&mut SimRng>,
    epoch: u64,
) -> Vec<SensorReading> {
    topology
        .sensors()
        .map(|s| {
            let interference = match fading_rng.as_deref_mut() {
                None => aggregate_interference(&s.position, active, params),
                Some(rng) => active
                    .iter()
                    .map(|e| {
                        let faded = Emitter {
                            fading: e.fading * sample_fading(params, rng),
                            ..*e
                        };
                        faded.received_at(&s.position, params)
                    })
                    .sum(),
            };
            SensorReading {
                sensor_id: s.id,
                epoch,
                interference,
            }
        })
        .collect()
}

/// Median of the primary-only, unfaded sensor readings: the interference
/// level the op map works against.
pub fn interference_scale(topology: &Topology, params: &ChannelParams) -> f64 {
    let active: Vec<Emitter> = topology
        .primary_tx()
        .map(|n| Emitter {
            position: n.position,
            power: params.tx_power,
            fading: 1.0,
        })
        .into_iter()
        .collect();
    let readings: Vec<f64> = sense(topology, &active, params, None, 0)
        .into_iter()
        .map(|r| r.interference)
        .collect();
    median(readings).unwrap_or(0.0)
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Settings that stay fixed across the cycles of one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleSettings {
    pub slots_per_epoch: u64,
    pub primary_activity_prob: f64,
    pub learning_rate: f64,
    pub s_clamp: f64,
    pub reward: RewardMode,
    pub sense_includes_secondaries: bool,
    pub faded_sensing: bool,
    pub per_direction_thresholds: bool,
    pub timing: CycleTiming,
    pub optimized_timing: bool,
    pub keep_slots: bool,
}

impl CycleSettings {
    pub fn from_config(cfg: &SimConfig) -> Self {
        Self {
            slots_per_epoch: cfg.slots_per_epoch,
            primary_activity_prob: cfg.primary_activity_prob,
            learning_rate: cfg.learning_rate,
            s_clamp: cfg.s_clamp,
            reward: cfg.reward_mode(),
            sense_includes_secondaries: cfg.sense_includes_secondaries,
            faded_sensing: cfg.faded_sensing,
            per_direction_thresholds: cfg.per_direction_thresholds,
            timing: CycleTiming::default(),
            optimized_timing: cfg.optimized_timing,
            keep_slots: false,
        }
    }
}

/// Per-transmitter view of one cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionTrace {
    pub stx_id: NodeId,
    pub opportunity: f64,
    pub interference: f64,
    /// Probability used during the epoch.
    pub access_prob: f64,
    /// Learner state after the update (absent for the baseline).
    pub state_after: Option<f64>,
    /// Threshold read back from the updated learner.
    pub learned_threshold: Option<f64>,
    pub reward: f64,
    pub tx_slots: u64,
    pub success_slots: u64,
    pub achieved_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CycleRecord {
    pub metrics: EpochMetrics,
    pub latency_ms: f64,
    pub mean_opportunity: f64,
    pub rate_sum: f64,
    pub directions: Vec<DirectionTrace>,
    pub slots: Option<Vec<SlotOutcome>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentState {
    pub topology: Topology,
    pub params: ChannelParams,
    /// `None` until the first cycle initialises them from the op map.
    pub learners: Option<Vec<LearnerState>>,
    pub threshold: AccessThreshold,
    pub direction_thresholds: BTreeMap<NodeId, AccessThreshold>,
    pub phase: Phase,
    pub epoch: u64,
    pub seed: StreamSeed,
}

impl ExperimentState {
    pub fn new(
        topology: Topology,
        params: ChannelParams,
        threshold: AccessThreshold,
        seed: StreamSeed,
    ) -> Self {
        Self {
            topology,
            params,
            learners: None,
            threshold,
            direction_thresholds: BTreeMap::new(),
            phase: Phase::Measured,
            epoch: 0,
            seed,
        }
    }

    fn tau_for(&self, per_direction: bool, stx: NodeId) -> AccessThreshold {
        if per_direction {
            self.direction_thresholds
                .get(&stx)
                .copied()
                .unwrap_or(self.threshold)
        } else {
            self.threshold
        }
    }

    /// Sensing step shared by both arms. `current_probs` are the access
    /// probabilities secondaries would be heard with when sensing includes
    /// them.
    fn sense_cycle(
        &self,
        settings: &CycleSettings,
        current_probs: &BTreeMap<NodeId, f64>,
    ) -> Result<OpportunityMap> {
        let mut rng = self.seed.stream(self.phase, self.epoch, Purpose::Sensing);
        let p = &self.params;
        let mut active = Vec::new();
        if let Some(ptx) = self.topology.primary_tx() {
            if rng.random::<f64>() < settings.primary_activity_prob {
                active.push(Emitter {
                    position: ptx.position,
                    power: p.tx_power,
                    fading: 1.0,
                });
            }
        }
        if settings.sense_includes_secondaries {
            for stx in self.topology.secondary_transmitters() {
                let prob = current_probs.get(&stx.id).copied().unwrap_or(0.0);
                if rng.random::<f64>() < prob {
                    active.push(Emitter {
                        position: stx.position,
                        power: p.tx_power,
                        fading: 1.0,
                    });
                }
            }
        }
        let faded = settings.faded_sensing.then_some(&mut rng);
        let readings = sense(&self.topology, &active, p, faded, self.epoch);
        build_op_map_with(
            &readings,
            |stx| self.tau_for(settings.per_direction_thresholds, stx),
            &self.topology,
            self.epoch,
        )
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// One learning cycle. Returns the advanced state and what happened.
pub fn run_cycle(
    state: ExperimentState,
    settings: &CycleSettings,
) -> Result<(ExperimentState, CycleRecord)> {
    let current_probs: BTreeMap<NodeId, f64> = state
        .learners
        .iter()
        .flatten()
        .map(|l| (l.stx_id, l.access_probability()))
        .collect();
    let op_map = state.sense_cycle(settings, &current_probs)?;

    let learners = match &state.learners {
        Some(l) => l.clone(),
        None => op_map
            .entries
            .iter()
            .map(|(&stx, e)| {
                LearnerState::from_opportunity(
                    stx,
                    e.opportunity.value(),
                    settings.learning_rate,
                    settings.s_clamp,
                )
            })
            .collect(),
    };

    let mut streams = EpochStreams::new(state.seed, state.phase, state.epoch);
    let (block, feedback) = run_epoch(
        &state.topology,
        &state.params,
        &learners,
        settings.primary_activity_prob,
        settings.slots_per_epoch,
        &mut streams,
        settings.keep_slots,
    )?;
    let mean_p = mean(learners.iter().map(LearnerState::access_probability));
    let metrics = block.metrics(
        state.epoch,
        state.topology.area(),
        mean_p,
        state.threshold.watts(),
    )?;

    let mut updated = Vec::with_capacity(learners.len());
    let mut traces = Vec::with_capacity(learners.len());
    let mut learned = BTreeMap::new();
    for (l, fb) in learners.iter().zip(&feedback) {
        let entry = op_map
            .get(l.stx_id)
            .ok_or_else(|| Error::Precondition(format!("op map has no entry for {}", l.stx_id)))?;
        let reward = compute_reward(fb, &settings.reward, metrics.ase);
        let next = l.reinforce_update_fraction(fb.transmit_fraction(), reward, fb.access_prob_used);
        // A zero reading carries no information about the threshold.
        let tau = if entry.interference > 0.0 {
            let t = next.learned_threshold(entry.interference)?;
            learned.insert(l.stx_id, t);
            Some(t.watts())
        } else {
            None
        };
        traces.push(DirectionTrace {
            stx_id: l.stx_id,
            opportunity: entry.opportunity.value(),
            interference: entry.interference,
            access_prob: fb.access_prob_used,
            state_after: Some(next.s),
            learned_threshold: tau,
            reward,
            tx_slots: fb.tx_slots,
            success_slots: fb.success_slots,
            achieved_rate: fb.achieved_rate,
        });
        updated.push(next);
    }

    let next_threshold = match median(learned.values().map(|t| t.watts()).collect()) {
        Some(m) => AccessThreshold::new(m)?,
        None => state.threshold,
    };
    let mut direction_thresholds = state.direction_thresholds.clone();
    direction_thresholds.extend(learned);

    let record = CycleRecord {
        metrics,
        latency_ms: cycle_latency(&settings.timing, settings.optimized_timing),
        mean_opportunity: mean(op_map.entries.values().map(|e| e.opportunity.value())),
        rate_sum: block.rate_sum,
        directions: traces,
        slots: block.outcomes,
    };
    let next = ExperimentState {
        learners: Some(updated),
        threshold: next_threshold,
        direction_thresholds,
        epoch: state.epoch + 1,
        ..state
    };
    Ok((next, record))
}

/// One cycle of the fixed-threshold system: access probabilities are the op
/// map values and nothing is learned.
pub fn run_baseline_cycle(
    state: ExperimentState,
    settings: &CycleSettings,
    previous_probs: &BTreeMap<NodeId, f64>,
) -> Result<(ExperimentState, CycleRecord, BTreeMap<NodeId, f64>)> {
    let op_map = state.sense_cycle(settings, previous_probs)?;
    let probs: BTreeMap<NodeId, f64> = op_map
        .entries
        .iter()
        .map(|(&k, e)| (k, e.opportunity.value()))
        .collect();
    let mut streams = EpochStreams::new(state.seed, state.phase, state.epoch);
    let block = run_slots(
        &state.topology,
        &state.params,
        &probs,
        settings.primary_activity_prob,
        settings.slots_per_epoch,
        &mut streams,
        settings.keep_slots,
    )?;
    let mean_p = mean(probs.values().copied());
    let metrics = block.metrics(
        state.epoch,
        state.topology.area(),
        mean_p,
        state.threshold.watts(),
    )?;
    let traces = op_map
        .entries
        .iter()
        .map(|(&stx, e)| {
            let t = block.tallies.get(&stx).copied().unwrap_or_default();
            DirectionTrace {
                stx_id: stx,
                opportunity: e.opportunity.value(),
                interference: e.interference,
                access_prob: e.opportunity.value(),
                state_after: None,
                learned_threshold: None,
                reward: 0.0,
                tx_slots: t.tx_slots,
                success_slots: t.success_slots,
                achieved_rate: if t.success_slots > 0 {
                    t.rate_sum / t.success_slots as f64
                } else {
                    0.0
                },
            }
        })
        .collect();
    let record = CycleRecord {
        metrics,
        latency_ms: cycle_latency(&settings.timing, settings.optimized_timing),
        mean_opportunity: mean_p,
        rate_sum: block.rate_sum,
        directions: traces,
        slots: block.outcomes,
    };
    let next = ExperimentState {
        epoch: state.epoch + 1,
        ..state
    };
    Ok((next, record, probs))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arm {
    Learning,
    Baseline,
}

impl Arm {
    pub fn name(self) -> &'static str {
        match self {
            Arm::Learning => "learning",
            Arm::Baseline => "baseline",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub arm: Arm,
    pub config: SimConfig,
    pub topology: Topology,
    pub initial_threshold: AccessThreshold,
    pub warmup_epochs: u64,
    /// Measured cycles only; warm-up cycles are not kept.
    pub cycles: Vec<CycleRecord>,
    pub final_states: Vec<LearnerState>,
    pub final_threshold: AccessThreshold,
    pub latency_ms: f64,
    pub optimized_latency_ms: f64,
}

impl ExperimentReport {
    pub fn seed(&self) -> u64 {
        self.config.seed
    }

    /// Modeled wall time of the measured cycles.
    pub fn modeled_wall_ms(&self) -> f64 {
        self.cycles.iter().map(|c| c.latency_ms).sum()
    }
}

/// A placed scenario from which either arm can be run with paired streams.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: SimConfig,
    pub topology: Topology,
    pub params: ChannelParams,
    pub initial_threshold: AccessThreshold,
    pub settings: CycleSettings,
}

impl Experiment {
    pub fn new(config: SimConfig) -> Result<Self> {
        config.validate()?;
        let params = config.channel_params();
        params.validate()?;
        let seed = StreamSeed(config.seed);
        let topology = place_nodes(&config.layout(), &mut seed.placement())?;
        let initial_threshold = match config.threshold_offset_db {
            Some(off) => AccessThreshold::new(
                interference_scale(&topology, &params) * crate::units::db_to_linear(off),
            )?,
            None => config.initial_threshold(),
        };
        let settings = CycleSettings::from_config(&config);
        Ok(Self {
            config,
            topology,
            params,
            initial_threshold,
            settings,
        })
    }

    pub fn with_threshold(mut self, tau: AccessThreshold) -> Self {
        self.initial_threshold = tau;
        self
    }

    pub fn keep_slots(mut self, keep: bool) -> Self {
        self.settings.keep_slots = keep;
        self
    }

    fn fresh_state(&self) -> ExperimentState {
        ExperimentState::new(
            self.topology.clone(),
            self.params.clone(),
            self.initial_threshold,
            StreamSeed(self.config.seed),
        )
    }

    fn report(
        &self,
        arm: Arm,
        cycles: Vec<CycleRecord>,
        state: ExperimentState,
    ) -> ExperimentReport {
        ExperimentReport {
            arm,
            config: self.config.clone(),
            topology: self.topology.clone(),
            initial_threshold: self.initial_threshold,
            warmup_epochs: if arm == Arm::Learning {
                self.config.warmup_epochs
            } else {
                0
            },
            cycles,
            final_states: state.learners.unwrap_or_default(),
            final_threshold: state.threshold,
            latency_ms: cycle_latency(&self.settings.timing, false),
            optimized_latency_ms: cycle_latency(&self.settings.timing, true),
        }
    }

    /// Warm-up (pretraining) cycles followed by the measured cycles.
    pub fn run_learning(&self) -> Result<ExperimentReport> {
        let mut state = self.fresh_state();
        state.phase = Phase::Warmup;
        let warm_settings = CycleSettings {
            keep_slots: false,
            ..self.settings.clone()
        };
        for _ in 0..self.config.warmup_epochs {
            state = run_cycle(state, &warm_settings)?.0;
        }
        state.phase = Phase::Measured;
        state.epoch = 0;
        let mut cycles = Vec::with_capacity(self.config.epochs as usize);
        for _ in 0..self.config.epochs {
            let (next, record) = run_cycle(state, &self.settings)?;
            cycles.push(record);
            state = next;
        }
        Ok(self.report(Arm::Learning, cycles, state))
    }

    /// Fixed-threshold system over the measured epochs, on the same streams
    /// as the learning arm's measured phase.
    pub fn run_baseline(&self) -> Result<ExperimentReport> {
        let mut state = self.fresh_state();
        let mut probs = BTreeMap::new();
        let mut cycles = Vec::with_capacity(self.config.epochs as usize);
        for _ in 0..self.config.epochs {
            let (next, record, p) = run_baseline_cycle(state, &self.settings, &probs)?;
            cycles.push(record);
            state = next;
            probs = p;
        }
        Ok(self.report(Arm::Baseline, cycles, state))
    }
}

/// Fixed-threshold metrics for `epochs` epochs on an explicit topology.
pub fn run_baseline(
    topology: &Topology,
    params: &ChannelParams,
    fixed_tau: AccessThreshold,
    epochs: u64,
    settings: &CycleSettings,
    seed: StreamSeed,
) -> Result<Vec<EpochMetrics>> {
    let mut state = ExperimentState::new(topology.clone(), params.clone(), fixed_tau, seed);
    let mut probs = BTreeMap::new();
    let mut out = Vec::with_capacity(epochs as usize);
    for _ in 0..epochs {
        let (next, record, p) = run_baseline_cycle(state, settings, &probs)?;
        out.push(record.metrics);
        state = next;
        probs = p;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    pub learning: ExperimentReport,
    pub baseline: Option<ExperimentReport>,
}

pub fn run_experiment(
    config: SimConfig,
    with_baseline: bool,
    keep_slots: bool,
) -> Result<ExperimentOutcome> {
    let exp = Experiment::new(config)?.keep_slots(keep_slots);
    Ok(ExperimentOutcome {
        learning: exp.run_learning()?,
        baseline: if with_baseline {
            Some(exp.run_baseline()?)
        } else {
            None
        },
    })
}
