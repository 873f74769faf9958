//! Slotted-ALOHA access for secondary pairs.
//!
//! Every secondary node is the transmitter of one direction towards its
//! partner. In each slot every direction transmits independently with its
//! access probability; a pair with both directions on runs full duplex and
//! each end sees its own residual self-interference.

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::learner::{FeedbackRecord, LearnerState};
use crate::radio::{
    link_sinr, sample_fading, ChannelParams, Emitter, NodeId, NodeRole, PairId, Topology,
};
use crate::rng::{Phase, Purpose, SimRng, StreamSeed};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Direction {
    pub stx: NodeId,
    pub rx: NodeId,
    pub pair: PairId,
    /// True when the transmitter is the `A` end of its pair.
    pub from_a: bool,
}

/// All secondary directions, ordered by transmitter id.
pub fn directions(topology: &Topology) -> Vec<Direction> {
    topology
        .secondary_transmitters()
        .into_iter()
        .filter_map(|n| {
            let partner = topology.partner(n.id)?;
            Some(Direction {
                stx: n.id,
                rx: partner.id,
                pair: n.pair?,
                from_a: n.role == NodeRole::SecondaryA,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DuplexMode {
    Silent,
    HalfDuplexAtoB,
    HalfDuplexBtoA,
    FullDuplex,
}

impl DuplexMode {
    pub fn from_activity(a_to_b: bool, b_to_a: bool) -> Self {
        match (a_to_b, b_to_a) {
            (false, false) => DuplexMode::Silent,
            (true, false) => DuplexMode::HalfDuplexAtoB,
            (false, true) => DuplexMode::HalfDuplexBtoA,
            (true, true) => DuplexMode::FullDuplex,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectionOutcome {
    pub stx_id: NodeId,
    pub transmitted: bool,
    pub success: bool,
    /// Linear SINR at the partner; 0 when the direction was silent.
    pub sinr: f64,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlotOutcome {
    pub slot: u64,
    pub directions: Vec<DirectionOutcome>,
    pub primary_active: bool,
    pub primary_violation: bool,
    pub modes: BTreeMap<PairId, DuplexMode>,
}

impl SlotOutcome {
    pub fn rate_sum(&self) -> f64 {
        self.directions
            .iter()
            .filter(|d| d.success)
            .map(|d| d.rate)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: u64,
    pub attempts: u64,
    pub successes: u64,
    pub collisions: u64,
    pub primary_violations: u64,
    pub ase: f64,
    pub mean_access_prob: f64,
    pub threshold_snapshot: f64,
}

/// Independent random streams consumed by one epoch's slots.
#[derive(Debug, Clone)]
pub struct EpochStreams {
    pub access: SimRng,
    pub fading: SimRng,
    pub primary: SimRng,
}

impl EpochStreams {
    pub fn new(seed: StreamSeed, phase: Phase, epoch: u64) -> Self {
        Self {
            access: seed.stream(phase, epoch, Purpose::Access),
            fading: seed.stream(phase, epoch, Purpose::Fading),
            primary: seed.stream(phase, epoch, Purpose::Primary),
        }
    }
}

/// Plays one slot. `access_probs` maps each transmitter id to its access
/// probability; the access decision consumes exactly one uniform draw per
/// direction so that runs with different probabilities stay aligned.
pub fn run_slot(
    topology: &Topology,
    params: &ChannelParams,
    dirs: &[Direction],
    access_probs: &BTreeMap<NodeId, f64>,
    primary_active: bool,
    streams: &mut EpochStreams,
    slot: u64,
) -> SlotOutcome {
    let active: Vec<bool> = dirs
        .iter()
        .map(|d| {
            let p = access_probs.get(&d.stx).copied().unwrap_or(0.0);
            streams.access.random::<f64>() < p
        })
        .collect();
    let is_tx: BTreeMap<NodeId, bool> =
        dirs.iter().zip(&active).map(|(d, &a)| (d.stx, a)).collect();

    let primary = match (topology.primary_tx(), topology.primary_rx()) {
        (Some(tx), Some(rx)) if primary_active => Some((tx, rx)),
        _ => None,
    };
    let pos = |id: NodeId| {
        topology
            .node(id)
            .expect("direction node in topology")
            .position
    };

    // Active transmitters in a fixed order: primary first, then secondaries by id.
    let mut transmitters: Vec<(NodeId, crate::radio::Position)> = Vec::new();
    if let Some((tx, _)) = primary {
        transmitters.push((tx.id, tx.position));
    }
    for (d, _) in dirs.iter().zip(&active).filter(|(_, &a)| a) {
        transmitters.push((d.stx, pos(d.stx)));
    }

    let faded = |rng: &mut SimRng, exclude: &[NodeId]| -> Vec<(NodeId, Emitter)> {
        transmitters
            .iter()
            .filter(|(id, _)| !exclude.contains(id))
            .map(|&(id, position)| {
                (
                    id,
                    Emitter {
                        position,
                        power: params.tx_power,
                        fading: sample_fading(params, rng),
                    },
                )
            })
            .collect()
    };

    let mut outcomes = Vec::with_capacity(dirs.len());
    for (d, &tx) in dirs.iter().zip(&active) {
        if !tx {
            outcomes.push(DirectionOutcome {
                stx_id: d.stx,
                transmitted: false,
                success: false,
                sinr: 0.0,
                rate: 0.0,
            });
            continue;
        }
        let links = faded(&mut streams.fading, &[d.rx]);
        let (desired, interferers): (Vec<_>, Vec<_>) =
            links.into_iter().partition(|(id, _)| *id == d.stx);
        let interferers: Vec<Emitter> = interferers.into_iter().map(|(_, e)| e).collect();
        let own = is_tx
            .get(&d.rx)
            .copied()
            .unwrap_or(false)
            .then_some(params.tx_power);
        let sinr = link_sinr(&pos(d.rx), &desired[0].1, &interferers, own, params);
        let success = sinr >= params.sinr_threshold;
        outcomes.push(DirectionOutcome {
            stx_id: d.stx,
            transmitted: true,
            success,
            sinr,
            rate: if success { (1.0 + sinr).log2() } else { 0.0 },
        });
    }

    let any_secondary = active.iter().any(|&a| a);
    let primary_violation = match primary {
        Some((tx, rx)) if any_secondary => {
            let links = faded(&mut streams.fading, &[]);
            let (desired, interferers): (Vec<_>, Vec<_>) =
                links.into_iter().partition(|(id, _)| *id == tx.id);
            let interferers: Vec<Emitter> = interferers.into_iter().map(|(_, e)| e).collect();
            link_sinr(&rx.position, &desired[0].1, &interferers, None, params)
                < params.sinr_threshold
        }
        _ => false,
    };

    let mut modes = BTreeMap::new();
    for (d, &tx) in dirs.iter().zip(&active) {
        let entry = modes.entry(d.pair).or_insert((false, false));
        if d.from_a {
            entry.0 = tx;
        } else {
            entry.1 = tx;
        }
    }
    SlotOutcome {
        slot,
        directions: outcomes,
        primary_active: primary.is_some(),
        primary_violation,
        modes: modes
            .into_iter()
            .map(|(pair, (ab, ba))| (pair, DuplexMode::from_activity(ab, ba)))
            .collect(),
    }
}

pub fn ase_from_rate_sum(rate_sum: f64, room_area: f64, slots: u64) -> Result<f64> {
    if slots == 0 {
        return Err(Error::Precondition("ASE needs at least one slot".into()));
    }
    if room_area.is_nan() || room_area <= 0.0 {
        return Err(Error::Precondition("ASE needs a positive room area".into()));
    }
    Ok(rate_sum / (room_area * slots as f64))
}

/// Sum of successful Shannon rates per square metre per slot.
pub fn area_spectral_efficiency(
    outcomes: &[SlotOutcome],
    room_area: f64,
    slots: u64,
) -> Result<f64> {
    ase_from_rate_sum(
        outcomes.iter().map(SlotOutcome::rate_sum).sum(),
        room_area,
        slots,
    )
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DirectionTally {
    pub tx_slots: u64,
    pub success_slots: u64,
    pub rate_sum: f64,
}

/// Aggregated result of running a block of slots with fixed probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotBlock {
    pub attempts: u64,
    pub successes: u64,
    pub primary_violations: u64,
    pub rate_sum: f64,
    pub slots: u64,
    pub tallies: BTreeMap<NodeId, DirectionTally>,
    /// Every slot outcome, kept only when requested.
    pub outcomes: Option<Vec<SlotOutcome>>,
}

impl SlotBlock {
    pub fn metrics(
        &self,
        epoch: u64,
        room_area: f64,
        mean_access_prob: f64,
        threshold: f64,
    ) -> Result<EpochMetrics> {
        Ok(EpochMetrics {
            epoch,
            attempts: self.attempts,
            successes: self.successes,
            collisions: self.attempts - self.successes,
            primary_violations: self.primary_violations,
            ase: ase_from_rate_sum(self.rate_sum, room_area, self.slots)?,
            mean_access_prob,
            threshold_snapshot: threshold,
        })
    }
}

/// Runs `slots` slots with fixed per-direction probabilities. The primary is
/// active in each slot with probability `primary_activity_prob`.
pub fn run_slots(
    topology: &Topology,
    params: &ChannelParams,
    access_probs: &BTreeMap<NodeId, f64>,
    primary_activity_prob: f64,
    slots: u64,
    streams: &mut EpochStreams,
    keep_outcomes: bool,
) -> Result<SlotBlock> {
    if slots == 0 {
        return Err(Error::Precondition(
            "slots_per_epoch must be at least 1".into(),
        ));
    }
    if let Some((id, p)) = access_probs.iter().find(|(_, p)| !(0.0..=1.0).contains(*p)) {
        return Err(Error::Precondition(format!(
            "access probability {p} for node {id} is outside [0, 1]"
        )));
    }
    let dirs = directions(topology);
    let mut block = SlotBlock {
        attempts: 0,
        successes: 0,
        primary_violations: 0,
        rate_sum: 0.0,
        slots,
        tallies: dirs
            .iter()
            .map(|d| (d.stx, DirectionTally::default()))
            .collect(),
        outcomes: keep_outcomes.then(Vec::new),
    };
    for slot in 0..slots {
        let primary_active = streams.primary.random::<f64>() < primary_activity_prob;
        let out = run_slot(
            topology,
            params,
            &dirs,
            access_probs,
            primary_active,
            streams,
            slot,
        );
        for d in &out.directions {
            let t = block
                .tallies
                .get_mut(&d.stx_id)
                .expect("tally per direction");
            if d.transmitted {
                block.attempts += 1;
                t.tx_slots += 1;
            }
            if d.success {
                block.successes += 1;
                t.success_slots += 1;
                t.rate_sum += d.rate;
                block.rate_sum += d.rate;
            }
        }
        block.primary_violations += out.primary_violation as u64;
        if let Some(v) = block.outcomes.as_mut() {
            v.push(out);
        }
    }
    Ok(block)
}

/// One learning epoch: every direction uses its learner's current access
/// probability for all slots, then reports a [`FeedbackRecord`].
pub fn run_epoch(
    topology: &Topology,
    params: &ChannelParams,
    learners: &[LearnerState],
    primary_activity_prob: f64,
    slots_per_epoch: u64,
    streams: &mut EpochStreams,
    keep_outcomes: bool,
) -> Result<(SlotBlock, Vec<FeedbackRecord>)> {
    let probs: BTreeMap<NodeId, f64> = learners
        .iter()
        .map(|l| (l.stx_id, l.access_probability()))
        .collect();
    if let Some(d) = directions(topology)
        .iter()
        .find(|d| !probs.contains_key(&d.stx))
    {
        return Err(Error::Precondition(format!(
            "no learner state for transmitter {}",
            d.stx
        )));
    }
    let block = run_slots(
        topology,
        params,
        &probs,
        primary_activity_prob,
        slots_per_epoch,
        streams,
        keep_outcomes,
    )?;
    let feedback = learners
        .iter()
        .map(|l| {
            let t = block.tallies.get(&l.stx_id).copied().unwrap_or_default();
            let success = t.tx_slots > 0 && 2 * t.success_slots > t.tx_slots;
            FeedbackRecord {
                stx_id: l.stx_id,
                transmitted: t.tx_slots > 0,
                success,
                achieved_rate: if success {
                    t.rate_sum / t.success_slots as f64
                } else {
                    0.0
                },
                access_prob_used: probs[&l.stx_id],
                tx_slots: t.tx_slots,
                success_slots: t.success_slots,
                slots: slots_per_epoch,
            }
        })
        .collect();
    Ok((block, feedback))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radio::{Node, Position};

    fn node(id: NodeId, role: NodeRole, pair: Option<PairId>, x: f64, y: f64) -> Node {
        Node {
            id,
            role,
            position: Position::new(x, y),
            pair,
        }
    }

    fn one_pair(with_primary: bool) -> Topology {
        let mut nodes = vec![
            node(2, NodeRole::SecondaryA, Some(0), 1.0, 1.0),
            node(3, NodeRole::SecondaryB, Some(0), 1.5, 1.0),
            node(4, NodeRole::Sensor, None, 2.0, 2.0),
        ];
        if with_primary {
            nodes.push(node(0, NodeRole::PrimaryTx, None, 6.0, 6.0));
            nodes.push(node(1, NodeRole::PrimaryRx, None, 6.5, 6.0));
        }
        Topology::new(nodes, 7.9, 8.6).unwrap()
    }

    fn streams() -> EpochStreams {
        EpochStreams::new(StreamSeed(17), Phase::Measured, 0)
    }

    fn probs(topo: &Topology, p: f64) -> BTreeMap<NodeId, f64> {
        directions(topo).iter().map(|d| (d.stx, p)).collect()
    }

    #[test]
    fn silent_slot() {
        let topo = crate::radio::place_nodes(
            &crate::radio::Layout::default(),
            &mut StreamSeed(1).placement(),
        )
        .unwrap();
        let dirs = directions(&topo);
        assert_eq!(dirs.len(), 8);
        let out = run_slot(
            &topo,
            &ChannelParams::default(),
            &dirs,
            &probs(&topo, 0.0),
            true,
            &mut streams(),
            0,
        );
        assert!(out.directions.iter().all(|d| !d.transmitted && !d.success));
        assert!(!out.primary_violation);
        assert!(out.modes.values().all(|m| *m == DuplexMode::Silent));
    }

    #[test]
    fn interference_free_full_duplex() {
        let topo = one_pair(false);
        let params = ChannelParams {
            si_cancellation: 0.0,
            ..ChannelParams::default()
        };
        let dirs = directions(&topo);
        let out = run_slot(
            &topo,
            &params,
            &dirs,
            &probs(&topo, 1.0),
            false,
            &mut streams(),
            0,
        );
        assert_eq!(out.modes[&0], DuplexMode::FullDuplex);
        assert!(out.directions.iter().all(|d| d.transmitted && d.success));
        for d in &out.directions {
            assert!((d.rate - (1.0 + d.sinr).log2()).abs() <= 1e-12 * d.rate);
        }
    }

    #[test]
    fn half_duplex_modes() {
        let topo = one_pair(false);
        let dirs = directions(&topo);
        let mut p = BTreeMap::new();
        p.insert(2, 1.0);
        p.insert(3, 0.0);
        let out = run_slot(
            &topo,
            &ChannelParams::default(),
            &dirs,
            &p,
            false,
            &mut streams(),
            0,
        );
        assert_eq!(out.modes[&0], DuplexMode::HalfDuplexAtoB);
        p.insert(2, 0.0);
        p.insert(3, 1.0);
        let out = run_slot(
            &topo,
            &ChannelParams::default(),
            &dirs,
            &p,
            false,
            &mut streams(),
            0,
        );
        assert_eq!(out.modes[&0], DuplexMode::HalfDuplexBtoA);
    }

    #[test]
    fn full_duplex_residual_lowers_sinr() {
        let topo = one_pair(false);
        let dirs = directions(&topo);
        let params = ChannelParams {
            fading_enabled: false,
            si_cancellation: 1e-6,
            ..ChannelParams::default()
        };
        let fd = run_slot(
            &topo,
            &params,
            &dirs,
            &probs(&topo, 1.0),
            false,
            &mut streams(),
            0,
        );
        let mut p = BTreeMap::new();
        p.insert(2, 1.0);
        p.insert(3, 0.0);
        let hd = run_slot(&topo, &params, &dirs, &p, false, &mut streams(), 0);
        assert!(fd.directions[0].sinr < hd.directions[0].sinr);
    }

    #[test]
    fn ase_examples() {
        let area = 7.9 * 8.6;
        assert_eq!(area_spectral_efficiency(&[], area, 4).unwrap(), 0.0);
        let slot = SlotOutcome {
            slot: 0,
            directions: vec![DirectionOutcome {
                stx_id: 2,
                transmitted: true,
                success: true,
                sinr: 1.0,
                rate: 1.0,
            }],
            primary_active: false,
            primary_violation: false,
            modes: BTreeMap::new(),
        };
        let ase = area_spectral_efficiency(std::slice::from_ref(&slot), area, 1).unwrap();
        assert!((ase - 1.0 / 67.94).abs() < 1e-12);
        assert!((ase - 0.014719).abs() < 1e-6);
        assert!(area_spectral_efficiency(&[], area, 0).is_err());
        assert!(area_spectral_efficiency(&[], 0.0, 1).is_err());
    }

    #[test]
    fn ase_concatenation_identity() {
        let topo = crate::radio::place_nodes(
            &crate::radio::Layout::default(),
            &mut StreamSeed(4).placement(),
        )
        .unwrap();
        let dirs = directions(&topo);
        let params = ChannelParams::default();
        let mut s = streams();
        let outs: Vec<SlotOutcome> = (0..40)
            .map(|k| run_slot(&topo, &params, &dirs, &probs(&topo, 0.4), true, &mut s, k))
            .collect();
        let area = topo.area();
        let whole = area_spectral_efficiency(&outs, area, 40).unwrap();
        let a = area_spectral_efficiency(&outs[..20], area, 20).unwrap();
        let b = area_spectral_efficiency(&outs[20..], area, 20).unwrap();
        assert!((whole - (a + b) / 2.0).abs() <= 1e-12 * whole.max(1e-300));
    }

    #[test]
    fn slot_invariants_hold_on_random_slots() {
        let topo = crate::radio::place_nodes(
            &crate::radio::Layout::default(),
            &mut StreamSeed(8).placement(),
        )
        .unwrap();
        let dirs = directions(&topo);
        let params = ChannelParams::default();
        let mut s = streams();
        for k in 0..2000 {
            let out = run_slot(
                &topo,
                &params,
                &dirs,
                &probs(&topo, 0.5),
                k % 3 != 0,
                &mut s,
                k,
            );
            for d in &out.directions {
                assert_eq!(d.success, d.transmitted && d.sinr >= params.sinr_threshold);
                if d.success {
                    assert!((d.rate - (1.0 + d.sinr).log2()).abs() <= 1e-12 * d.rate);
                } else {
                    assert_eq!(d.rate, 0.0);
                }
            }
            for dir in &dirs {
                let both = out
                    .directions
                    .iter()
                    .filter(|o| {
                        o.transmitted && {
                            let other = dirs.iter().find(|x| x.stx == o.stx_id).unwrap();
                            other.pair == dir.pair
                        }
                    })
                    .count()
                    == 2;
                assert_eq!(out.modes[&dir.pair] == DuplexMode::FullDuplex, both);
            }
            if !out.primary_active {
                assert!(!out.primary_violation);
            }
        }
    }

    #[test]
    fn epoch_zero_slots_is_rejected() {
        let topo = one_pair(true);
        let learners: Vec<LearnerState> = directions(&topo)
            .iter()
            .map(|d| LearnerState::from_opportunity(d.stx, 0.5, 0.1, 10.0))
            .collect();
        let err = run_epoch(
            &topo,
            &ChannelParams::default(),
            &learners,
            1.0,
            0,
            &mut streams(),
            false,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Precondition(_)));
    }

    #[test]
    fn epoch_with_silent_learners() {
        let topo = one_pair(true);
        let learners: Vec<LearnerState> = directions(&topo)
            .iter()
            .map(|d| LearnerState::from_opportunity(d.stx, 0.0, 0.1, 800.0))
            .collect();
        let (block, feedback) = run_epoch(
            &topo,
            &ChannelParams::default(),
            &learners,
            1.0,
            50,
            &mut streams(),
            false,
        )
        .unwrap();
        let m = block.metrics(0, topo.area(), 0.0, 0.0).unwrap();
        assert_eq!(
            (m.attempts, m.successes, m.collisions, m.primary_violations),
            (0, 0, 0, 0)
        );
        assert_eq!(m.ase, 0.0);
        assert!(feedback
            .iter()
            .all(|f| !f.transmitted && !f.success && f.achieved_rate == 0.0));
    }

    #[test]
    fn epoch_requires_learner_per_direction() {
        let topo = one_pair(true);
        let learners = vec![LearnerState::from_opportunity(2, 0.5, 0.1, 10.0)];
        let err = run_epoch(
            &topo,
            &ChannelParams::default(),
            &learners,
            1.0,
            5,
            &mut streams(),
            false,
        )
        .unwrap_err();
        assert!(err.to_string().contains('3'));
    }

    #[test]
    fn epoch_is_reproducible() {
        let topo = crate::radio::place_nodes(
            &crate::radio::Layout::default(),
            &mut StreamSeed(2).placement(),
        )
        .unwrap();
        let learners: Vec<LearnerState> = directions(&topo)
            .iter()
            .map(|d| LearnerState::from_opportunity(d.stx, 0.3, 0.1, 10.0))
            .collect();
        let run = || {
            let mut s = EpochStreams::new(StreamSeed(2), Phase::Measured, 5);
            let (b, f) = run_epoch(
                &topo,
                &ChannelParams::default(),
                &learners,
                1.0,
                100,
                &mut s,
                false,
            )
            .unwrap();
            (b.metrics(5, topo.area(), 0.3, 1e-9).unwrap(), f)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn feedback_summarises_tallies() {
        let topo = crate::radio::place_nodes(
            &crate::radio::Layout::default(),
            &mut StreamSeed(6).placement(),
        )
        .unwrap();
        let learners: Vec<LearnerState> = directions(&topo)
            .iter()
            .map(|d| LearnerState::from_opportunity(d.stx, 0.6, 0.1, 10.0))
            .collect();
        let (block, feedback) = run_epoch(
            &topo,
            &ChannelParams::default(),
            &learners,
            1.0,
            200,
            &mut streams(),
            true,
        )
        .unwrap();
        let outs = block.outcomes.as_ref().unwrap();
        for f in &feedback {
            let mine: Vec<&DirectionOutcome> = outs
                .iter()
                .flat_map(|o| o.directions.iter())
                .filter(|d| d.stx_id == f.stx_id)
                .collect();
            let tx = mine.iter().filter(|d| d.transmitted).count() as u64;
            let ok: Vec<f64> = mine.iter().filter(|d| d.success).map(|d| d.rate).collect();
            assert_eq!(f.tx_slots, tx);
            assert_eq!(f.success_slots, ok.len() as u64);
            assert_eq!(f.success, 2 * ok.len() as u64 > tx);
            if f.success {
                let mean = ok.iter().sum::<f64>() / ok.len() as f64;
                assert!((f.achieved_rate - mean).abs() <= 1e-12 * mean);
            } else {
                assert_eq!(f.achieved_rate, 0.0);
            }
        }
        let ase = area_spectral_efficiency(outs, topo.area(), 200).unwrap();
        let m = block.metrics(0, topo.area(), 0.6, 0.0).unwrap();
        assert!((m.ase - ase).abs() <= 1e-12 * ase);
        assert!(m.successes <= m.attempts);
    }
}
