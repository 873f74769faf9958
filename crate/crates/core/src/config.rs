//! Flat `key = value` experiment configuration.
//!
//! Power-like settings are given in dB/dBm and converted to linear units by
//! the accessors on [`SimConfig`]; nothing downstream sees dB.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::learner::{RewardKind, RewardMode};
use crate::opmap::AccessThreshold;
use crate::radio::{ChannelParams, Layout};
use crate::units::{db_to_linear, dbm_to_watts};

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub room_width_m: f64,
    pub room_height_m: f64,
    pub n_secondary_pairs: usize,
    pub n_sensors: usize,
    pub pair_link_distance_m: f64,
    pub pathloss_exponent: f64,
    pub reference_distance_m: f64,
    pub tx_power_dbm: f64,
    pub noise_dbm: f64,
    /// Self-interference suppression depth; the residual is `-si_cancellation_db`.
    pub si_cancellation_db: f64,
    pub sinr_threshold_db: f64,
    pub fading: bool,
    pub primary_activity_prob: f64,
    pub learning_rate: f64,
    pub s_clamp: f64,
    pub reward_mode: RewardKind,
    pub failure_penalty: f64,
    pub warmup_epochs: u64,
    pub epochs: u64,
    pub slots_per_epoch: u64,
    pub initial_threshold_dbm: f64,
    /// When set, the starting threshold is this many dB relative to the
    /// median sensed interference of the placed topology, replacing
    /// `initial_threshold_dbm`.
    pub threshold_offset_db: Option<f64>,
    pub seed: u64,
    pub optimized_timing: bool,
    pub sense_includes_secondaries: bool,
    pub faded_sensing: bool,
    pub per_direction_thresholds: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            room_width_m: 7.9,
            room_height_m: 8.6,
            n_secondary_pairs: 4,
            n_sensors: 9,
            pair_link_distance_m: 1.0,
            pathloss_exponent: 3.5,
            reference_distance_m: 0.1,
            tx_power_dbm: 0.0,
            noise_dbm: -90.0,
            si_cancellation_db: 110.0,
            sinr_threshold_db: 0.0,
            fading: true,
            primary_activity_prob: 1.0,
            learning_rate: 100.0,
            s_clamp: 10.0,
            reward_mode: RewardKind::GlobalAse,
            failure_penalty: 0.0,
            warmup_epochs: 50,
            epochs: 300,
            slots_per_epoch: 10,
            initial_threshold_dbm: -55.0,
            threshold_offset_db: None,
            seed: 1,
            optimized_timing: false,
            sense_includes_secondaries: false,
            faded_sensing: false,
            per_direction_thresholds: false,
        }
    }
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(key, format!("cannot parse {value:?}")))
}

fn parse_count(key: &str, value: &str) -> Result<u64> {
    let v: i128 = parse_num(key, value)?;
    u64::try_from(v)
        .map_err(|_| Error::config(key, format!("must be a nonnegative integer, got {v}")))
}

fn parse_switch(key: &str, value: &str) -> Result<bool> {
    match value {
        "on" | "true" => Ok(true),
        "off" | "false" => Ok(false),
        _ => Err(Error::config(
            key,
            format!("expected on|off, got {value:?}"),
        )),
    }
}

fn switch(b: bool) -> &'static str {
    if b {
        "on"
    } else {
        "off"
    }
}

impl SimConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Parses `key = value` lines over the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = SimConfig::default();
        let mut seen = std::collections::BTreeSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at_line = |e: Error| match e {
                Error::Config { key, message, .. } => Error::Config {
                    key,
                    line: Some(line_no),
                    message,
                },
                other => other,
            };
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| at_line(Error::config(line, "expected `key = value`")))?;
            if !seen.insert(key.to_string()) {
                return Err(at_line(Error::config(key, "duplicate key")));
            }
            cfg.set(key, value).map_err(at_line)?;
            // n_sensors vs n_secondary_pairs depends on both lines; checked at the end.
            if key != "n_sensors" {
                cfg.validate_key(key).map_err(at_line)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "room_width_m" => self.room_width_m = parse_num(key, v)?,
            "room_height_m" => self.room_height_m = parse_num(key, v)?,
            "n_secondary_pairs" => self.n_secondary_pairs = parse_count(key, v)? as usize,
            "n_sensors" => self.n_sensors = parse_count(key, v)? as usize,
            "pair_link_distance_m" => self.pair_link_distance_m = parse_num(key, v)?,
            "pathloss_exponent" => self.pathloss_exponent = parse_num(key, v)?,
            "reference_distance_m" => self.reference_distance_m = parse_num(key, v)?,
            "tx_power_dbm" => self.tx_power_dbm = parse_num(key, v)?,
            "noise_dbm" => self.noise_dbm = parse_num(key, v)?,
            "si_cancellation_db" => self.si_cancellation_db = parse_num(key, v)?,
            "sinr_threshold_db" => self.sinr_threshold_db = parse_num(key, v)?,
            "fading" => self.fading = parse_switch(key, v)?,
            "primary_activity_prob" => self.primary_activity_prob = parse_num(key, v)?,
            "learning_rate" => self.learning_rate = parse_num(key, v)?,
            "s_clamp" => self.s_clamp = parse_num(key, v)?,
            "reward_mode" => {
                self.reward_mode = match v {
                    "local" => RewardKind::LocalRate,
                    "global" => RewardKind::GlobalAse,
                    _ => {
                        return Err(Error::config(
                            key,
                            format!("expected local|global, got {v:?}"),
                        ))
                    }
                }
            }
            "failure_penalty" => self.failure_penalty = parse_num(key, v)?,
            "warmup_epochs" => self.warmup_epochs = parse_count(key, v)?,
            "epochs" => self.epochs = parse_count(key, v)?,
            "slots_per_epoch" => self.slots_per_epoch = parse_count(key, v)?,
            "initial_threshold_dbm" => self.initial_threshold_dbm = parse_num(key, v)?,
            "threshold_offset_db" => self.threshold_offset_db = Some(parse_num(key, v)?),
            "seed" => self.seed = parse_count(key, v)?,
            "optimized_timing" => self.optimized_timing = parse_switch(key, v)?,
            "sense_includes_secondaries" => self.sense_includes_secondaries = parse_switch(key, v)?,
            "faded_sensing" => self.faded_sensing = parse_switch(key, v)?,
            "per_direction_thresholds" => self.per_direction_thresholds = parse_switch(key, v)?,
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    fn checks(&self) -> Vec<(&'static str, bool)> {
        let finite = |x: f64| x.is_finite();
        vec![
            (
                "room_width_m",
                self.room_width_m > 0.0 && finite(self.room_width_m),
            ),
            (
                "room_height_m",
                self.room_height_m > 0.0 && finite(self.room_height_m),
            ),
            (
                "n_sensors",
                self.n_secondary_pairs == 0 || self.n_sensors > 0,
            ),
            (
                "pair_link_distance_m",
                self.pair_link_distance_m >= 0.0 && finite(self.pair_link_distance_m),
            ),
            (
                "pathloss_exponent",
                self.pathloss_exponent > 0.0 && finite(self.pathloss_exponent),
            ),
            (
                "reference_distance_m",
                self.reference_distance_m > 0.0 && finite(self.reference_distance_m),
            ),
            ("tx_power_dbm", finite(self.tx_power_dbm)),
            ("noise_dbm", finite(self.noise_dbm)),
            (
                "si_cancellation_db",
                self.si_cancellation_db >= 0.0 && finite(self.si_cancellation_db),
            ),
            ("sinr_threshold_db", finite(self.sinr_threshold_db)),
            (
                "primary_activity_prob",
                (0.0..=1.0).contains(&self.primary_activity_prob),
            ),
            (
                "learning_rate",
                self.learning_rate >= 0.0 && finite(self.learning_rate),
            ),
            ("s_clamp", self.s_clamp > 0.0 && finite(self.s_clamp)),
            (
                "failure_penalty",
                self.failure_penalty >= 0.0 && finite(self.failure_penalty),
            ),
            ("slots_per_epoch", self.slots_per_epoch >= 1),
            ("initial_threshold_dbm", finite(self.initial_threshold_dbm)),
            (
                "threshold_offset_db",
                self.threshold_offset_db.is_none_or(finite),
            ),
        ]
    }

    fn validate_key(&self, key: &str) -> Result<()> {
        match self.checks().into_iter().find(|(k, ok)| *k == key && !ok) {
            Some((k, _)) => Err(Error::config(k, "value out of range")),
            None => Ok(()),
        }
    }

    /// Checks every invariant and reports all offending keys at once.
    pub fn validate(&self) -> Result<()> {
        let bad: Vec<&str> = self
            .checks()
            .into_iter()
            .filter(|(_, ok)| !ok)
            .map(|(k, _)| k)
            .collect();
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::config(bad.join(", "), "value out of range"))
        }
    }

    /// Renders every setting in the form accepted by [`SimConfig::parse`].
    pub fn render(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("room_width_m", self.room_width_m.to_string());
        kv("room_height_m", self.room_height_m.to_string());
        kv("n_secondary_pairs", self.n_secondary_pairs.to_string());
        kv("n_sensors", self.n_sensors.to_string());
        kv(
            "pair_link_distance_m",
            self.pair_link_distance_m.to_string(),
        );
        kv("pathloss_exponent", self.pathloss_exponent.to_string());
        kv(
            "reference_distance_m",
            self.reference_distance_m.to_string(),
        );
        kv("tx_power_dbm", self.tx_power_dbm.to_string());
        kv("noise_dbm", self.noise_dbm.to_string());
        kv("si_cancellation_db", self.si_cancellation_db.to_string());
        kv("sinr_threshold_db", self.sinr_threshold_db.to_string());
        kv("fading", switch(self.fading).into());
        kv(
            "primary_activity_prob",
            self.primary_activity_prob.to_string(),
        );
        kv("learning_rate", self.learning_rate.to_string());
        kv("s_clamp", self.s_clamp.to_string());
        kv(
            "reward_mode",
            match self.reward_mode {
                RewardKind::LocalRate => "local",
                RewardKind::GlobalAse => "global",
            }
            .into(),
        );
        kv("failure_penalty", self.failure_penalty.to_string());
        kv("warmup_epochs", self.warmup_epochs.to_string());
        kv("epochs", self.epochs.to_string());
        kv("slots_per_epoch", self.slots_per_epoch.to_string());
        kv(
            "initial_threshold_dbm",
            self.initial_threshold_dbm.to_string(),
        );
        if let Some(off) = self.threshold_offset_db {
            kv("threshold_offset_db", off.to_string());
        }
        kv("seed", self.seed.to_string());
        kv("optimized_timing", switch(self.optimized_timing).into());
        kv(
            "sense_includes_secondaries",
            switch(self.sense_includes_secondaries).into(),
        );
        kv("faded_sensing", switch(self.faded_sensing).into());
        kv(
            "per_direction_thresholds",
            switch(self.per_direction_thresholds).into(),
        );
        s
    }

    pub fn layout(&self) -> Layout {
        Layout {
            room_width: self.room_width_m,
            room_height: self.room_height_m,
            n_secondary_pairs: self.n_secondary_pairs,
            n_sensors: self.n_sensors,
            pair_link_distance: self.pair_link_distance_m,
        }
    }

    pub fn channel_params(&self) -> ChannelParams {
        ChannelParams {
            pathloss_exponent: self.pathloss_exponent,
            reference_distance: self.reference_distance_m,
            tx_power: dbm_to_watts(self.tx_power_dbm),
            noise_power: dbm_to_watts(self.noise_dbm),
            si_cancellation: db_to_linear(-self.si_cancellation_db),
            fading_enabled: self.fading,
            sinr_threshold: db_to_linear(self.sinr_threshold_db),
        }
    }

    pub fn initial_threshold(&self) -> AccessThreshold {
        AccessThreshold::new(dbm_to_watts(self.initial_threshold_dbm))
            .expect("dBm maps to a nonnegative power")
    }

    pub fn reward_mode(&self) -> RewardMode {
        RewardMode {
            kind: self.reward_mode,
            failure_penalty: self.failure_penalty,
        }
    }
}
