//! Node placement and radio propagation.
//!
//! Log-distance path loss with a near-field clamp, exponential (Rayleigh
//! power) block fading, and SINR for half- and full-duplex receivers. All
//! powers are linear watts.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::error::{Error, Result};

pub type NodeId = usize;
pub type PairId = usize;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NodeRole {
    PrimaryTx,
    PrimaryRx,
    SecondaryA,
    SecondaryB,
    Sensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: NodeId,
    pub role: NodeRole,
    pub position: Position,
    pub pair: Option<PairId>,
}

/// Placement parameters for [`place_nodes`].
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub room_width: f64,
    pub room_height: f64,
    pub n_secondary_pairs: usize,
    pub n_sensors: usize,
    pub pair_link_distance: f64,
}

impl Default for Layout {
    fn default() -> Self {
        Self {
            room_width: 7.9,
            room_height: 8.6,
            n_secondary_pairs: 4,
            n_sensors: 9,
            pair_link_distance: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    nodes: Vec<Node>,
    room_width: f64,
    room_height: f64,
}

impl Topology {
    /// Builds a topology after checking its structural invariants.
    pub fn new(nodes: Vec<Node>, room_width: f64, room_height: f64) -> Result<Self> {
        if !(room_width > 0.0 && room_height > 0.0) {
            return Err(Error::config("room", "room dimensions must be positive"));
        }
        let mut seen = std::collections::BTreeSet::new();
        let mut pairs: BTreeMap<PairId, Vec<NodeRole>> = BTreeMap::new();
        for n in &nodes {
            if !seen.insert(n.id) {
                return Err(Error::config(
                    "topology",
                    format!("duplicate node id {}", n.id),
                ));
            }
            let p = n.position;
            if !(0.0..=room_width).contains(&p.x) || !(0.0..=room_height).contains(&p.y) {
                return Err(Error::config(
                    "topology",
                    format!("node {} at ({}, {}) lies outside the room", n.id, p.x, p.y),
                ));
            }
            match (n.role, n.pair) {
                (NodeRole::SecondaryA | NodeRole::SecondaryB, Some(pair)) => {
                    pairs.entry(pair).or_default().push(n.role)
                }
                (NodeRole::SecondaryA | NodeRole::SecondaryB, None) => {
                    return Err(Error::config(
                        "topology",
                        format!("secondary node {} has no pair id", n.id),
                    ))
                }
                _ => {}
            }
        }
        for (pair, roles) in &pairs {
            let ok = roles.len() == 2
                && roles.contains(&NodeRole::SecondaryA)
                && roles.contains(&NodeRole::SecondaryB);
            if !ok {
                return Err(Error::config(
                    "topology",
                    format!("secondary pair {pair} must have exactly one A and one B member"),
                ));
            }
        }
        let n_sensors = nodes.iter().filter(|n| n.role == NodeRole::Sensor).count();
        if !pairs.is_empty() && n_sensors == 0 {
            return Err(Error::config(
                "n_sensors",
                "at least one sensor is required when secondary pairs exist",
            ));
        }
        Ok(Self {
            nodes,
            room_width,
            room_height,
        })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn room_width(&self) -> f64 {
        self.room_width
    }

    pub fn room_height(&self) -> f64 {
        self.room_height
    }

    pub fn area(&self) -> f64 {
        self.room_width * self.room_height
    }

    pub fn node(&self, id: NodeId) -> Option<&Node> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn with_role(&self, role: NodeRole) -> impl Iterator<Item = &Node> + '_ {
        self.nodes.iter().filter(move |n| n.role == role)
    }

    pub fn primary_tx(&self) -> Option<&Node> {
        self.with_role(NodeRole::PrimaryTx).next()
    }

    pub fn primary_rx(&self) -> Option<&Node> {
        self.with_role(NodeRole::PrimaryRx).next()
    }

    pub fn sensors(&self) -> impl Iterator<Item = &Node> + '_ {
        self.with_role(NodeRole::Sensor)
    }

    /// Secondary nodes in id order. Every secondary node is the transmitter
    /// of exactly one direction (towards its partner).
    pub fn secondary_transmitters(&self) -> Vec<&Node> {
        let mut v: Vec<&Node> = self
            .nodes
            .iter()
            .filter(|n| matches!(n.role, NodeRole::SecondaryA | NodeRole::SecondaryB))
            .collect();
        v.sort_by_key(|n| n.id);
        v
    }

    pub fn partner(&self, id: NodeId) -> Option<&Node> {
        let me = self.node(id)?;
        let pair = me.pair?;
        self.nodes
            .iter()
            .find(|n| n.pair == Some(pair) && n.id != id && n.role != me.role)
    }
}

/// Places the primary pair, the secondary pairs and the sensors.
///
/// Sensors sit at the cell centres of a near-square grid; the primary nodes
/// and the `A` end of each secondary pair are uniform in the room, and the
/// `B` end is offset by the pair link distance in a uniform direction and
/// clipped to the room.
pub fn place_nodes<R: Rng + ?Sized>(layout: &Layout, rng: &mut R) -> Result<Topology> {
    let (w, h) = (layout.room_width, layout.room_height);
    if !(w > 0.0 && h > 0.0) {
        return Err(Error::config(
            "room_width_m",
            "room dimensions must be positive",
        ));
    }
    if layout.n_secondary_pairs > 0 && layout.n_sensors == 0 {
        return Err(Error::config(
            "n_sensors",
            "at least one sensor is required when secondary pairs exist",
        ));
    }
    let uniform = |rng: &mut R| Position::new(rng.random_range(0.0..=w), rng.random_range(0.0..=h));
    let mut nodes = Vec::with_capacity(2 + 2 * layout.n_secondary_pairs + layout.n_sensors);
    let mut next_id = 0;
    let mut push = |nodes: &mut Vec<Node>, role, position, pair| {
        nodes.push(Node {
            id: next_id,
            role,
            position,
            pair,
        });
        next_id += 1;
    };

    let ptx = uniform(rng);
    let prx = uniform(rng);
    push(&mut nodes, NodeRole::PrimaryTx, ptx, None);
    push(&mut nodes, NodeRole::PrimaryRx, prx, None);

    for pair in 0..layout.n_secondary_pairs {
        let a = uniform(rng);
        let theta = rng.random_range(0.0..std::f64::consts::TAU);
        let b = Position::new(
            (a.x + layout.pair_link_distance * theta.cos()).clamp(0.0, w),
            (a.y + layout.pair_link_distance * theta.sin()).clamp(0.0, h),
        );
        push(&mut nodes, NodeRole::SecondaryA, a, Some(pair));
        push(&mut nodes, NodeRole::SecondaryB, b, Some(pair));
    }

    for p in sensor_grid(layout.n_sensors, w, h) {
        push(&mut nodes, NodeRole::Sensor, p, None);
    }
    Topology::new(nodes, w, h)
}

fn sensor_grid(n: usize, w: f64, h: f64) -> Vec<Position> {
    if n == 0 {
        return Vec::new();
    }
    let cols = (n as f64).sqrt().ceil() as usize;
    let rows = n.div_ceil(cols);
    (0..n)
        .map(|k| {
            let (r, c) = (k / cols, k % cols);
            Position::new(
                (c as f64 + 0.5) * w / cols as f64,
                (r as f64 + 0.5) * h / rows as f64,
            )
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelParams {
    pub pathloss_exponent: f64,
    pub reference_distance: f64,
    pub tx_power: f64,
    pub noise_power: f64,
    /// Fraction of a node's own transmit power that survives cancellation.
    pub si_cancellation: f64,
    pub fading_enabled: bool,
    pub sinr_threshold: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            pathloss_exponent: 3.5,
            reference_distance: 0.1,
            tx_power: 1e-3,
            noise_power: 1e-12,
            si_cancellation: 1e-11,
            fading_enabled: true,
            sinr_threshold: 1.0,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("pathloss_exponent", self.pathloss_exponent > 0.0),
            ("reference_distance_m", self.reference_distance > 0.0),
            ("tx_power_dbm", self.tx_power > 0.0),
            ("noise_dbm", self.noise_power > 0.0),
            (
                "si_cancellation_db",
                (0.0..=1.0).contains(&self.si_cancellation),
            ),
            ("sinr_threshold_db", self.sinr_threshold > 0.0),
        ];
        for (key, ok) in checks {
            if !ok {
                return Err(Error::config(key, "value out of range"));
            }
        }
        Ok(())
    }
}

pub fn path_gain(distance: f64, params: &ChannelParams) -> f64 {
    let d0 = params.reference_distance;
    (distance.max(d0) / d0).powf(-params.pathloss_exponent)
}

/// Exponential power gain with unit mean, or exactly 1 when fading is off
/// (no draw is consumed in that case).
pub fn sample_fading<R: Rng + ?Sized>(params: &ChannelParams, rng: &mut R) -> f64 {
    if params.fading_enabled {
        Exp1.sample(rng)
    } else {
        1.0
    }
}

/// A transmitter as seen by one receiver: where it is, how loud, and the
/// fading realisation on that particular link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Emitter {
    pub position: Position,
    pub power: f64,
    pub fading: f64,
}

impl Emitter {
    pub fn received_at(&self, point: &Position, params: &ChannelParams) -> f64 {
        self.power * path_gain(point.distance(&self.position), params) * self.fading
    }
}

pub fn aggregate_interference(point: &Position, active: &[Emitter], params: &ChannelParams) -> f64 {
    active.iter().map(|e| e.received_at(point, params)).sum()
}

/// SINR at `rx`. `own_tx_power` is the receiver's own transmit power when it
/// is transmitting at the same time (full duplex); its residual after
/// cancellation adds to the noise floor.
pub fn link_sinr(
    rx: &Position,
    desired: &Emitter,
    interferers: &[Emitter],
    own_tx_power: Option<f64>,
    params: &ChannelParams,
) -> f64 {
    let signal = desired.received_at(rx, params);
    let interference = aggregate_interference(rx, interferers, params);
    let self_interference = own_tx_power.map_or(0.0, |p| params.si_cancellation * p);
    signal / (params.noise_power + interference + self_interference)
}
