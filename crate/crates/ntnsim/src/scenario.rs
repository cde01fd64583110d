//! Scenario configuration and construction of the moving-constellation
//! experiment.
//!
//! The default configuration reproduces the reference parameter set: three
//! satellites 30 km apart sweeping at 7.56 km/s over a UE field sampled
//! inside the lead satellite's nominal footprint disc, with the first
//! handover midline starting `lead_in_km` behind the field's trailing edge
//! so the run opens with a quiet lead-in.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::des::{DelayModel, EventKind, NodeQueue, PropagationMode, Scheduler, SimTime, Trigger};
use crate::entities::{Core, Derived, GroupPhase, Satellite, Simulation, SourceGroup, Ue, World};
use crate::geometry::{GroundPoint, SatelliteTrack};
use crate::ids::{GroupId, RanId, UeId};
use crate::metrics::MetricsLedger;
use crate::protocol::{generate_shares, SatKeyPair};

/// Which handover protocol a run simulates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    /// Baseline per-UE handover.
    Ho,
    /// Group handover with share aggregation.
    Gho,
}

impl Protocol {
    pub fn label(self) -> &'static str {
        match self {
            Protocol::Ho => "ho",
            Protocol::Gho => "gho",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Protocol {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ho" => Ok(Protocol::Ho),
            "gho" => Ok(Protocol::Gho),
            other => Err(format!("unknown protocol '{other}' (expected ho or gho)")),
        }
    }
}

/// Every tunable of a run. An empty config file reproduces the reference
/// defaults; unknown keys are rejected. Units are embedded in key names.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub protocol: Protocol,
    pub ue_count: u32,
    pub seed: u64,
    /// Seeds used by grid comparisons.
    pub seeds: Vec<u64>,

    // Constellation and coverage.
    pub satellites: u32,
    pub satellite_speed_km_s: f64,
    pub footprint_radius_km: f64,
    pub inter_satellite_distance_km: f64,

    // Protocol timers and limits.
    pub ho_timeout_ms: f64,
    pub gho_timeout_ms: f64,
    pub max_retransmissions: u32,

    // Grouping.
    pub square_width_km: f64,
    pub k_ga: u32,
    pub threshold_fraction: f64,
    pub min_group_size: u32,
    pub notify_lead_km: f64,
    pub monitor_period_ms: u64,
    pub freshness_window_ms: u64,
    pub share_bytes: u32,
    pub idle_fraction: f64,

    // Node model.
    pub queue_capacity: u32,
    pub processors: u32,
    pub packet_bytes: u32,

    // Delay model.
    pub inter_satellite_ms: f64,
    pub ground_satellite_ms: f64,
    pub core_satellite_ms: f64,
    pub transmission_us: f64,
    pub physical_ms: f64,
    pub logic_ms: f64,
    pub encrypt_decrypt_ms: f64,
    pub sign_verify_ms: f64,
    pub hash_ms: f64,
    pub batch_hash_ms: f64,
    pub ground_broadcast_ms: f64,
    pub propagation: PropagationMode,
    pub nominal_altitude_km: f64,

    // UE field placement.
    pub region_width_km: f64,
    pub region_height_km: f64,
    pub region_center_x_km: f64,
    pub region_center_y_km: f64,
    pub lead_in_km: f64,

    // Run shape.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_end_ms: Option<u64>,
    pub bucket_ms: u64,
    pub event_log: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            protocol: Protocol::Ho,
            ue_count: 10_000,
            seed: 10,
            seeds: vec![10, 20, 30, 40, 50],
            satellites: 3,
            satellite_speed_km_s: 7.56,
            footprint_radius_km: 25.0,
            inter_satellite_distance_km: 30.0,
            ho_timeout_ms: 30.0,
            gho_timeout_ms: 35.0,
            max_retransmissions: 15,
            square_width_km: 1.0,
            k_ga: 2,
            threshold_fraction: 0.5,
            min_group_size: 2,
            notify_lead_km: 5.0,
            monitor_period_ms: 100,
            freshness_window_ms: 5_000,
            share_bytes: 16,
            idle_fraction: 0.0,
            queue_capacity: 500,
            processors: 4,
            packet_bytes: 3_000,
            inter_satellite_ms: 1.0,
            ground_satellite_ms: 3.0,
            core_satellite_ms: 10.0,
            transmission_us: 1.0,
            physical_ms: 0.05,
            logic_ms: 0.05,
            encrypt_decrypt_ms: 0.1,
            sign_verify_ms: 0.3,
            hash_ms: 0.05,
            batch_hash_ms: 0.1,
            ground_broadcast_ms: 1.0,
            propagation: PropagationMode::Fixed,
            nominal_altitude_km: 600.0,
            region_width_km: 50.0,
            // Kept inside the continuous-coverage band of the default
            // constellation (|y| < sqrt(R^2 - (spacing/2)^2) = 20 km) with a
            // guard margin: at |y| = 18.5 km a terminal still has ~240 ms of
            // source coverage past its handover point, enough for a whole
            // square of group members to trigger and aggregate.
            region_height_km: 37.0,
            region_center_x_km: 0.0,
            region_center_y_km: 0.0,
            lead_in_km: 40.0,
            t_end_ms: None,
            bucket_ms: 200,
            event_log: false,
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Invalid(Vec<String>),
    #[error("override for unknown config key '{0}'")]
    UnknownKey(String),
    #[error("bad override value '{value}' for key '{key}'")]
    BadOverride { key: String, value: String },
}

/// Parse a TOML document, apply `NTNSIM_*` environment overrides, and
/// validate. An empty document yields the reference defaults.
pub fn load_config(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let mut cfg: ScenarioConfig =
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    cfg.apply_overrides(env_overrides())?;
    cfg.validate()?;
    Ok(cfg)
}

/// Collect `NTNSIM_<KEY>=<value>` environment overrides.
pub fn env_overrides() -> Vec<(String, String)> {
    let mut pairs: Vec<(String, String)> = std::env::vars()
        .filter_map(|(k, v)| {
            k.strip_prefix("NTNSIM_").map(|key| (key.to_ascii_lowercase(), v))
        })
        .collect();
    pairs.sort();
    pairs
}

impl ScenarioConfig {
    /// Apply key/value overrides, typed against the existing field.
    pub fn apply_overrides(
        &mut self,
        pairs: impl IntoIterator<Item = (String, String)>,
    ) -> Result<(), ConfigError> {
        let mut table =
            toml::Table::try_from(&*self).map_err(|e| ConfigError::Parse(e.to_string()))?;
        for (key, value) in pairs {
            let bad = || ConfigError::BadOverride { key: key.clone(), value: value.clone() };
            let parsed = match table.get(&key) {
                Some(toml::Value::Integer(_)) => {
                    toml::Value::Integer(value.parse().map_err(|_| bad())?)
                }
                Some(toml::Value::Float(_)) => {
                    toml::Value::Float(value.parse().map_err(|_| bad())?)
                }
                Some(toml::Value::Boolean(_)) => {
                    toml::Value::Boolean(value.parse().map_err(|_| bad())?)
                }
                Some(toml::Value::String(_)) => toml::Value::String(value.clone()),
                Some(toml::Value::Array(_)) => toml::Value::Array(
                    value
                        .split(',')
                        .map(|s| s.trim().parse().map(toml::Value::Integer).map_err(|_| bad()))
                        .collect::<Result<_, _>>()?,
                ),
                None if key == "t_end_ms" => {
                    toml::Value::Integer(value.parse().map_err(|_| bad())?)
                }
                _ => return Err(ConfigError::UnknownKey(key)),
            };
            table.insert(key, parsed);
        }
        *self = table.try_into().map_err(|e| ConfigError::Parse(e.to_string()))?;
        Ok(())
    }

    /// Collect every range violation at once.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut errors = Vec::new();
        let mut require = |ok: bool, msg: &str| {
            if !ok {
                errors.push(msg.to_string());
            }
        };
        require(self.ue_count >= 1, "ue_count must be >= 1");
        require(self.satellites >= 2, "satellites must be >= 2 (handover needs a target)");
        require(self.satellite_speed_km_s > 0.0, "satellite_speed_km_s must be > 0");
        require(self.footprint_radius_km > 0.0, "footprint_radius_km must be > 0");
        require(
            self.inter_satellite_distance_km > 0.0,
            "inter_satellite_distance_km must be > 0",
        );
        require(
            self.inter_satellite_distance_km < 2.0 * self.footprint_radius_km,
            "inter_satellite_distance_km must be < 2*footprint_radius_km for continuous coverage",
        );
        require(self.square_width_km > 0.0, "square_width_km must be > 0");
        require(self.queue_capacity >= 1, "queue_capacity must be >= 1");
        require(self.processors >= 1, "processors must be >= 1");
        require(self.packet_bytes >= 1, "packet_bytes must be >= 1");
        require(self.ho_timeout_ms > 0.0, "ho_timeout_ms must be > 0");
        require(self.gho_timeout_ms > 0.0, "gho_timeout_ms must be > 0");
        require(self.k_ga >= 1, "k_ga must be >= 1");
        require(
            self.threshold_fraction > 0.0 && self.threshold_fraction < 1.0,
            "threshold_fraction must lie in (0, 1)",
        );
        require(self.min_group_size >= 1, "min_group_size must be >= 1");
        require(self.share_bytes >= 1, "share_bytes must be >= 1");
        require(
            (0.0..1.0).contains(&self.idle_fraction),
            "idle_fraction must lie in [0, 1)",
        );
        require(self.region_width_km > 0.0, "region_width_km must be > 0");
        require(self.region_height_km > 0.0, "region_height_km must be > 0");
        require(
            self.region_height_km / 2.0 <= self.footprint_radius_km,
            "region_height_km/2 must not exceed footprint_radius_km (region outside footprint)",
        );
        require(self.lead_in_km >= 0.0, "lead_in_km must be >= 0");
        require(self.monitor_period_ms >= 1, "monitor_period_ms must be >= 1");
        require(self.bucket_ms >= 1, "bucket_ms must be >= 1");
        require(!self.seeds.is_empty(), "seeds must not be empty");
        for (name, v) in [
            ("inter_satellite_ms", self.inter_satellite_ms),
            ("ground_satellite_ms", self.ground_satellite_ms),
            ("core_satellite_ms", self.core_satellite_ms),
            ("transmission_us", self.transmission_us),
            ("physical_ms", self.physical_ms),
            ("logic_ms", self.logic_ms),
            ("encrypt_decrypt_ms", self.encrypt_decrypt_ms),
            ("sign_verify_ms", self.sign_verify_ms),
            ("hash_ms", self.hash_ms),
            ("batch_hash_ms", self.batch_hash_ms),
            ("ground_broadcast_ms", self.ground_broadcast_ms),
        ] {
            if v < 0.0 || !v.is_finite() {
                errors.push(format!("{name} must be a finite non-negative value"));
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(errors))
        }
    }

    pub fn delay_model(&self) -> DelayModel {
        DelayModel {
            inter_satellite: SimTime::from_ms_f64(self.inter_satellite_ms),
            ground_satellite: SimTime::from_ms_f64(self.ground_satellite_ms),
            core_satellite: SimTime::from_ms_f64(self.core_satellite_ms),
            transmission: SimTime::from_us(self.transmission_us.round() as u64),
            physical: SimTime::from_ms_f64(self.physical_ms),
            logic: SimTime::from_ms_f64(self.logic_ms),
            encrypt_decrypt: SimTime::from_ms_f64(self.encrypt_decrypt_ms),
            sign_verify: SimTime::from_ms_f64(self.sign_verify_ms),
            hash: SimTime::from_ms_f64(self.hash_ms),
            batch_hash: SimTime::from_ms_f64(self.batch_hash_ms),
            ground_broadcast: SimTime::from_ms_f64(self.ground_broadcast_ms),
            propagation: self.propagation,
            nominal_altitude_km: self.nominal_altitude_km,
            nominal_spacing_km: self.inter_satellite_distance_km,
        }
    }

    /// Trailing (minimum-x) edge of the UE field.
    fn region_trailing_x(&self) -> f64 {
        self.region_center_x_km
            - (self.region_width_km / 2.0).min(self.footprint_radius_km)
    }

    /// Sweep extent of the UE field along the velocity axis.
    fn region_extent_x(&self) -> f64 {
        self.region_width_km.min(2.0 * self.footprint_radius_km)
    }

    /// End of run: both sweeps complete, plus a response tail.
    pub fn t_end(&self) -> SimTime {
        if let Some(ms) = self.t_end_ms {
            return SimTime::from_ms(ms);
        }
        let sweeps = self.lead_in_km
            + self.region_extent_x()
            + self.inter_satellite_distance_km * (self.satellites.saturating_sub(2)) as f64;
        let ms = (sweeps / self.satellite_speed_km_s * 1_000.0).ceil() as u64 + 2_500;
        SimTime::from_ms(ms.div_ceil(100) * 100)
    }
}

/// Uniform i.i.d. deployment over the region rectangle, optionally
/// rejection-sampled into a disc around the region center.
pub fn deploy_ues(
    n: u32,
    width: f64,
    height: f64,
    center: GroundPoint,
    disc_radius: Option<f64>,
    rng: &mut impl Rng,
) -> Vec<GroundPoint> {
    assert!(n >= 1 && width > 0.0 && height > 0.0);
    let mut out = Vec::with_capacity(n as usize);
    while out.len() < n as usize {
        let x = center.x + rng.gen_range(-width / 2.0..width / 2.0);
        let y = center.y + rng.gen_range(-height / 2.0..height / 2.0);
        let p = GroundPoint::new(x, y);
        if let Some(r) = disc_radius {
            if p.distance(&center) > r {
                continue;
            }
        }
        out.push(p);
    }
    out
}

/// Fixed-square group membership.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupAssignment {
    pub gid: GroupId,
    pub square: (i64, i64),
    pub members: Vec<UeId>,
}

/// Partition UEs into fixed squares of the given width. Squares with fewer
/// than `min_group_size` eligible members yield ungrouped UEs, which run the
/// individual protocol even in a group run. Idle UEs are never grouped.
pub fn assign_groups(
    positions: &[GroundPoint],
    square_width: f64,
    min_group_size: u32,
    idle: &[bool],
) -> (Vec<GroupAssignment>, Vec<UeId>) {
    assert!(square_width > 0.0);
    let mut squares: std::collections::BTreeMap<(i64, i64), Vec<UeId>> =
        std::collections::BTreeMap::new();
    let mut ungrouped = Vec::new();
    for (i, p) in positions.iter().enumerate() {
        let id = UeId(i as u32);
        if idle.get(i).copied().unwrap_or(false) {
            ungrouped.push(id);
            continue;
        }
        let square = ((p.x / square_width).floor() as i64, (p.y / square_width).floor() as i64);
        squares.entry(square).or_default().push(id);
    }
    let mut groups = Vec::new();
    let mut gid = 0u32;
    for (square, members) in squares {
        if members.len() >= min_group_size as usize {
            groups.push(GroupAssignment { gid: GroupId(gid), square, members });
            gid += 1;
        } else {
            ungrouped.extend(members);
        }
    }
    ungrouped.sort();
    (groups, ungrouped)
}

/// Construct the runnable simulation: satellites on a line along the
/// velocity axis, UEs sampled inside the lead satellite's footprint disc,
/// groups bootstrapped with their first-epoch shares, and all analytic
/// trigger/exit events scheduled.
pub fn build_simulation(cfg: &ScenarioConfig) -> Result<Simulation, ConfigError> {
    cfg.validate()?;
    let delay = cfg.delay_model();
    let t_end = cfg.t_end();
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);

    let speed = cfg.satellite_speed_km_s;
    let spacing = cfg.inter_satellite_distance_km;
    let radius = cfg.footprint_radius_km;
    let sat_y = cfg.region_center_y_km;
    let midline0_first = cfg.region_trailing_x() - cfg.lead_in_km;
    let lead_x = midline0_first + spacing / 2.0;

    let mut tracks = Vec::with_capacity(cfg.satellites as usize);
    let mut sats = Vec::with_capacity(cfg.satellites as usize);
    for i in 0..cfg.satellites as usize {
        let x = lead_x - spacing * i as f64;
        let track = SatelliteTrack::new(
            RanId(i as u32 + 1),
            GroundPoint::new(x, sat_y),
            (speed, 0.0),
            radius,
        );
        tracks.push(track);
        sats.push(Satellite {
            index: i,
            ran_id: RanId(i as u32 + 1),
            keys: SatKeyPair::generate(&mut rng),
            queue: NodeQueue::new(cfg.queue_capacity as usize, cfg.processors as usize),
            groups: Default::default(),
            served_ho: Default::default(),
        });
    }
    let midline0: Vec<f64> = (0..cfg.satellites as usize)
        .map(|i| tracks[i].initial_position.x - spacing / 2.0)
        .collect();

    let derived = Derived {
        tracks,
        velocity_x: speed,
        midline0,
        sat_y,
        t_end,
        ho_timeout: SimTime::from_ms_f64(cfg.ho_timeout_ms),
        gho_timeout: SimTime::from_ms_f64(cfg.gho_timeout_ms),
        monitor_period: SimTime::from_ms(cfg.monitor_period_ms),
    };

    let positions = deploy_ues(
        cfg.ue_count,
        cfg.region_width_km,
        cfg.region_height_km,
        GroundPoint::new(cfg.region_center_x_km, cfg.region_center_y_km),
        Some(radius),
        &mut rng,
    );
    let idle: Vec<bool> =
        positions.iter().map(|_| rng.gen_bool(cfg.idle_fraction)).collect();

    let sat1_pk = sats[0].keys.public();
    let mut ues: Vec<Ue> = positions
        .iter()
        .enumerate()
        .map(|(i, &position)| Ue::new(UeId(i as u32), position, idle[i], sat1_pk))
        .collect();

    // Group bootstrap: the lead satellite plays the role of the previous
    // handover's target, so it already holds shares, commitments, and the
    // epoch RAND for every group; UEs hold their shares.
    if cfg.protocol == Protocol::Gho {
        let (groups, _ungrouped) =
            assign_groups(&positions, cfg.square_width_km, cfg.min_group_size, &idle);
        for g in groups {
            let mut rand = [0u8; 16];
            rng.fill_bytes(&mut rand);
            let (shares, commitment_map, share_map) = generate_shares(
                g.gid,
                &rand,
                g.members.len(),
                cfg.share_bytes as usize,
                &mut rng,
            );
            let centroid_x =
                g.members.iter().map(|u| positions[u.0 as usize].x).sum::<f64>()
                    / g.members.len() as f64;
            for (slot, &member) in g.members.iter().enumerate() {
                let ue = &mut ues[member.0 as usize];
                ue.gid = Some(g.gid);
                ue.slot = slot as u32;
                ue.share = Some(shares[slot].clone());
                ue.rand = rand;
            }
            sats[0].groups.insert(
                g.gid,
                SourceGroup {
                    members: g.members,
                    centroid_x,
                    rand,
                    commitment_map,
                    share_map,
                    threshold: 0,
                    gas: Vec::new(),
                    phase: GroupPhase::Monitoring,
                },
            );
        }
    }

    let ledger = MetricsLedger::new(
        cfg.protocol.label(),
        cfg.ue_count,
        cfg.seed,
        cfg.satellites as usize,
        cfg.bucket_ms,
        t_end,
        cfg.event_log,
    );

    let world = World::new(
        cfg.clone(),
        delay,
        derived,
        sats,
        Core { queue: NodeQueue::new(cfg.queue_capacity as usize, cfg.processors as usize) },
        ues,
        ledger,
        rng,
    );
    let mut sim = Simulation { sched: Scheduler::new(), world, t_end };

    for i in 0..sim.world.ues.len() {
        if !sim.world.ues[i].idle {
            sim.schedule_epoch_events(i, 1);
        }
    }
    if sim.world.cfg.protocol == Protocol::Gho {
        let period = sim.world.derived.monitor_period;
        for s in 0..sim.world.sats.len().saturating_sub(1) {
            sim.sched
                .schedule(period, EventKind::Trigger(Trigger::GroupMonitor { sat: s }))
                .expect("first tick");
        }
    }
    Ok(sim)
}
