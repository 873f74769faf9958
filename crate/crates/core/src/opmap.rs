//! Opportunity map: turns sensed interference and an access threshold into a
//! per-transmitter access opportunity, and inverts that relation to read a
//! threshold back from a probability.
//!
//! The opportunity is `1 - exp(-tau / I)`, the probability that an
//! exponentially faded interference level with mean `I` stays below `tau`.
//! [`Opportunity`] carries `ln(1 - p)` next to `p`, so the inverse stays
//! exact even where `p` itself rounds to 1.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::radio::{NodeId, Position, Topology};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorReading {
    pub sensor_id: NodeId,
    pub epoch: u64,
    pub interference: f64,
}

/// Interference-domain access threshold in watts.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct AccessThreshold(f64);

impl AccessThreshold {
    pub fn new(tau: f64) -> Result<Self> {
        if tau >= 0.0 {
            Ok(Self(tau))
        } else {
            Err(Error::Domain(format!(
                "access threshold must be >= 0, got {tau}"
            )))
        }
    }

    pub fn watts(self) -> f64 {
        self.0
    }

    pub fn dbm(self) -> f64 {
        crate::units::watts_to_dbm(self.0)
    }
}

/// A probability in `[0, 1]` together with the log of its complement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Opportunity {
    value: f64,
    ln_complement: f64,
}

impl Opportunity {
    pub const ZERO: Opportunity = Opportunity {
        value: 0.0,
        ln_complement: 0.0,
    };
    pub const ONE: Opportunity = Opportunity {
        value: 1.0,
        ln_complement: f64::NEG_INFINITY,
    };

    pub fn from_probability(p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Domain(format!(
                "probability must lie in [0, 1], got {p}"
            )));
        }
        Ok(Self {
            value: p,
            ln_complement: (-p).ln_1p(),
        })
    }

    /// `sigmoid(s)`, with the complement taken as `sigmoid(-s)`.
    pub fn from_logit(s: f64) -> Self {
        let softplus = |x: f64| {
            if x > 0.0 {
                x + (-x).exp().ln_1p()
            } else {
                x.exp().ln_1p()
            }
        };
        Self {
            value: 1.0 / (1.0 + (-s).exp()),
            ln_complement: -softplus(s),
        }
    }

    /// `1 - exp(-x)` for `x >= 0`.
    fn from_exponent(x: f64) -> Self {
        Self {
            value: -(-x).exp_m1(),
            ln_complement: -x,
        }
    }

    pub fn value(self) -> f64 {
        self.value
    }

    pub fn ln_complement(self) -> f64 {
        self.ln_complement
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpEntry {
    pub opportunity: Opportunity,
    pub sensor_id: NodeId,
    pub interference: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpportunityMap {
    pub epoch: u64,
    pub entries: BTreeMap<NodeId, OpEntry>,
}

impl OpportunityMap {
    pub fn get(&self, stx: NodeId) -> Option<&OpEntry> {
        self.entries.get(&stx)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Closest sensor to `position`; ties go to the lowest sensor id.
pub fn nearest_sensor(position: &Position, topology: &Topology) -> Result<NodeId> {
    topology
        .sensors()
        .map(|s| (position.distance(&s.position), s.id))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .map(|(_, id)| id)
        .ok_or_else(|| Error::config("n_sensors", "topology has no sensors"))
}

pub fn opportunity(interference: f64, tau: AccessThreshold) -> Result<Opportunity> {
    if interference.is_nan() || interference < 0.0 {
        return Err(Error::Domain(format!(
            "interference must be >= 0, got {interference}"
        )));
    }
    let tau = tau.watts();
    Ok(match (interference > 0.0, tau > 0.0) {
        (false, _) => Opportunity::ONE,
        (true, false) => Opportunity::ZERO,
        (true, true) => Opportunity::from_exponent(tau / interference),
    })
}

/// Inverse of [`opportunity`] in `tau` for a fixed interference level.
pub fn threshold_from_opportunity(p: Opportunity, interference: f64) -> Result<AccessThreshold> {
    if !p.ln_complement.is_finite() {
        return Err(Error::Domain(format!(
            "opportunity must lie in [0, 1) to invert, got {}",
            p.value
        )));
    }
    if interference.is_nan() || interference < 0.0 {
        return Err(Error::Domain(format!(
            "interference must be >= 0, got {interference}"
        )));
    }
    AccessThreshold::new(-(interference * p.ln_complement))
}

/// Per-transmitter sensor assignment, fixed for a topology.
pub fn sensor_assignment(topology: &Topology) -> Result<BTreeMap<NodeId, NodeId>> {
    topology
        .secondary_transmitters()
        .into_iter()
        .map(|stx| Ok((stx.id, nearest_sensor(&stx.position, topology)?)))
        .collect()
}

pub fn build_op_map(
    readings: &[SensorReading],
    tau: AccessThreshold,
    topology: &Topology,
    epoch: u64,
) -> Result<OpportunityMap> {
    build_op_map_with(readings, |_| tau, topology, epoch)
}

/// Like [`build_op_map`] but with a threshold chosen per transmitter.
pub fn build_op_map_with(
    readings: &[SensorReading],
    tau_for: impl Fn(NodeId) -> AccessThreshold,
    topology: &Topology,
    epoch: u64,
) -> Result<OpportunityMap> {
    let by_sensor: BTreeMap<NodeId, f64> = readings
        .iter()
        .map(|r| (r.sensor_id, r.interference))
        .collect();
    let mut entries = BTreeMap::new();
    for (stx, sensor_id) in sensor_assignment(topology)? {
        let interference = *by_sensor
            .get(&sensor_id)
            .ok_or(Error::MissingReading { sensor_id })?;
        entries.insert(
            stx,
            OpEntry {
                opportunity: opportunity(interference, tau_for(stx))?,
                sensor_id,
                interference,
            },
        );
    }
    Ok(OpportunityMap { epoch, entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radio::{Node, NodeRole};
    use proptest::prelude::*;

    fn tau(x: f64) -> AccessThreshold {
        AccessThreshold::new(x).unwrap()
    }

    fn prob(p: f64) -> Opportunity {
        Opportunity::from_probability(p).unwrap()
    }

    fn sensor(id: NodeId, x: f64, y: f64) -> Node {
        Node {
            id,
            role: NodeRole::Sensor,
            position: Position::new(x, y),
            pair: None,
        }
    }

    fn secondary(id: NodeId, role: NodeRole, pair: usize, x: f64, y: f64) -> Node {
        Node {
            id,
            role,
            position: Position::new(x, y),
            pair: Some(pair),
        }
    }

    #[test]
    fn nearest_sensor_singleton() {
        let topo = Topology::new(vec![sensor(4, 1.0, 1.0)], 5.0, 5.0).unwrap();
        assert_eq!(nearest_sensor(&Position::new(4.0, 4.0), &topo).unwrap(), 4);
    }

    #[test]
    fn nearest_sensor_tie_breaks_on_lowest_id() {
        let topo = Topology::new(vec![sensor(7, 1.0, 2.0), sensor(3, 3.0, 2.0)], 5.0, 5.0).unwrap();
        assert_eq!(nearest_sensor(&Position::new(2.0, 2.0), &topo).unwrap(), 3);
    }

    #[test]
    fn nearest_sensor_corner_of_grid() {
        let sensors = vec![
            sensor(10, 1.0, 1.0),
            sensor(11, 3.0, 1.0),
            sensor(12, 1.0, 3.0),
            sensor(13, 3.0, 3.0),
        ];
        let topo = Topology::new(sensors.clone(), 4.0, 4.0).unwrap();
        for (corner, expected) in [
            ((0.0, 0.0), 10),
            ((4.0, 0.0), 11),
            ((0.0, 4.0), 12),
            ((4.0, 4.0), 13),
        ] {
            let p = Position::new(corner.0, corner.1);
            let brute = sensors
                .iter()
                .min_by(|a, b| {
                    p.distance(&a.position)
                        .partial_cmp(&p.distance(&b.position))
                        .unwrap()
                })
                .unwrap()
                .id;
            assert_eq!(brute, expected);
            assert_eq!(nearest_sensor(&p, &topo).unwrap(), expected);
        }
    }

    #[test]
    fn nearest_sensor_requires_sensors() {
        let topo = Topology::new(vec![], 1.0, 1.0).unwrap();
        assert!(matches!(
            nearest_sensor(&Position::new(0.5, 0.5), &topo),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn opportunity_corners() {
        assert_eq!(opportunity(0.0, tau(1e-9)).unwrap().value(), 1.0);
        assert_eq!(opportunity(1e-6, tau(0.0)).unwrap().value(), 0.0);
        assert_eq!(opportunity(0.0, tau(0.0)).unwrap().value(), 1.0);
        let p = opportunity(3e-7, tau(3e-7)).unwrap().value();
        assert!((p - (1.0 - (-1.0f64).exp())).abs() < 1e-15);
        assert!((p - 0.63212).abs() < 1e-5);
    }

    #[test]
    fn negative_inputs_are_domain_errors() {
        assert!(matches!(opportunity(-1.0, tau(1.0)), Err(Error::Domain(_))));
        assert!(AccessThreshold::new(-1.0).is_err());
        assert!(matches!(
            Opportunity::from_probability(-0.1),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            threshold_from_opportunity(prob(1.0), 1.0),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            threshold_from_opportunity(prob(0.5), -1.0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn threshold_inverse_examples() {
        assert_eq!(
            threshold_from_opportunity(prob(0.0), 5e-6).unwrap().watts(),
            0.0
        );
        let p = 1.0 - (-1.0f64).exp();
        let t = threshold_from_opportunity(prob(p), 2e-6).unwrap().watts();
        assert!((t - 2e-6).abs() < 1e-18);
    }

    #[test]
    fn op_map_empty_without_secondaries() {
        let topo = Topology::new(vec![sensor(0, 1.0, 1.0)], 2.0, 2.0).unwrap();
        let readings = [SensorReading {
            sensor_id: 0,
            epoch: 0,
            interference: 1e-6,
        }];
        let map = build_op_map(&readings, tau(1e-6), &topo, 0).unwrap();
        assert!(map.is_empty());
    }

    fn three_stx_topology() -> Topology {
        Topology::new(
            vec![
                secondary(0, NodeRole::SecondaryA, 0, 0.5, 0.5),
                secondary(1, NodeRole::SecondaryB, 0, 1.5, 0.5),
                secondary(2, NodeRole::SecondaryA, 1, 3.5, 3.0),
                secondary(3, NodeRole::SecondaryB, 1, 3.9, 3.9),
                sensor(8, 1.0, 1.0),
                sensor(9, 3.0, 3.0),
            ],
            4.0,
            4.0,
        )
        .unwrap()
    }

    #[test]
    fn op_map_matches_recomposition() {
        let topo = three_stx_topology();
        let readings = [
            SensorReading {
                sensor_id: 8,
                epoch: 2,
                interference: 4e-7,
            },
            SensorReading {
                sensor_id: 9,
                epoch: 2,
                interference: 9e-6,
            },
        ];
        let t = tau(2e-6);
        let map = build_op_map(&readings, t, &topo, 2).unwrap();
        assert_eq!(map.len(), 4);
        for stx in topo.secondary_transmitters() {
            let s = nearest_sensor(&stx.position, &topo).unwrap();
            let i = readings
                .iter()
                .find(|r| r.sensor_id == s)
                .unwrap()
                .interference;
            let entry = map.get(stx.id).unwrap();
            assert_eq!(entry.sensor_id, s);
            assert_eq!(entry.opportunity, opportunity(i, t).unwrap());
        }
    }

    #[test]
    fn op_map_single_entry_is_composition() {
        let topo = Topology::new(
            vec![
                secondary(0, NodeRole::SecondaryA, 0, 0.5, 0.5),
                secondary(1, NodeRole::SecondaryB, 0, 0.6, 0.5),
                sensor(2, 1.0, 1.0),
            ],
            2.0,
            2.0,
        )
        .unwrap();
        let readings = [SensorReading {
            sensor_id: 2,
            epoch: 0,
            interference: 1e-6,
        }];
        let map = build_op_map(&readings, tau(5e-7), &topo, 0).unwrap();
        assert_eq!(
            map.get(0).unwrap().opportunity,
            opportunity(1e-6, tau(5e-7)).unwrap()
        );
    }

    #[test]
    fn op_map_missing_reading_names_sensor() {
        let topo = three_stx_topology();
        let readings = [SensorReading {
            sensor_id: 8,
            epoch: 0,
            interference: 1e-6,
        }];
        let err = build_op_map(&readings, tau(1e-6), &topo, 0).unwrap_err();
        assert!(matches!(err, Error::MissingReading { sensor_id: 9 }));
        assert!(err.to_string().contains('9'));
    }

    proptest! {
        #[test]
        fn opportunity_in_unit_interval(i in 0.0f64..1e-2, t in 0.0f64..1e-2) {
            let p = opportunity(i, tau(t)).unwrap().value();
            prop_assert!((0.0..=1.0).contains(&p));
        }

        #[test]
        fn opportunity_monotone(i in 1e-9f64..1e-3, t in 1e-9f64..1e-3, k in 1.01f64..3.0) {
            prop_assert!(opportunity(i, tau(t * k)).unwrap().value() >= opportunity(i, tau(t)).unwrap().value());
            prop_assert!(opportunity(i * k, tau(t)).unwrap().value() <= opportunity(i, tau(t)).unwrap().value());
        }

        #[test]
        fn threshold_round_trip(le in -12.0f64..-3.0, lt in -12.0f64..-3.0) {
            let (i, t) = (10f64.powf(le), 10f64.powf(lt));
            let back = threshold_from_opportunity(opportunity(i, tau(t)).unwrap(), i).unwrap().watts();
            prop_assert!((back - t).abs() <= 1e-9 * t);
        }

        #[test]
        fn logit_complement_is_accurate(s in -30.0f64..30.0) {
            let o = Opportunity::from_logit(s);
            let direct = 1.0 / (1.0 + s.exp());
            prop_assert!((o.ln_complement().exp() - direct).abs() <= 1e-12 * direct.max(1e-300));
            prop_assert!((o.value() + direct - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn opportunity_round_trip(le in -12.0f64..-3.0, p in 0.0f64..(1.0 - 1e-9)) {
            let i = 10f64.powf(le);
            let t = threshold_from_opportunity(prob(p), i).unwrap();
            prop_assert!((opportunity(i, t).unwrap().value() - p).abs() <= 1e-9);
        }
    }
}
