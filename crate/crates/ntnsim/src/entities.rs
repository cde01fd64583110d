//! UE, satellite, and core state machines for both handover protocols,
//! wired to the discrete-event engine.
//!
//! A UE walks through the handover in epochs: epoch 1 is the handover from
//! the first satellite to the second, epoch 2 from the second to the third.
//! Handover triggers and footprint exits are computed analytically from the
//! linear constellation motion and scheduled as events rather than polled.
//!
//! The baseline protocol sends one request per UE; the source satellite
//! fetches configuration from the target and answers each UE individually,
//! notifying the core per UE. The group protocol pre-notifies suitable
//! groups, provisions aggregators with the commitment list, accepts one
//! verified group request, fetches the whole group's configuration in one
//! round trip, and notifies the core once per group.

use std::collections::{BTreeMap, HashMap};

use ed25519_dalek::VerifyingKey;
use rand::RngCore;
use rand_chacha::ChaCha12Rng;

use crate::des::{
    link_class, link_delay, link_delay_distance, op_cost, service_time, CryptoOp, DelayModel,
    Endpoint, Enqueue, EventKind, Message, MessageClass, NodeQueue, Payload, PropagationMode,
    Scheduler, SimTime, Trigger, UeHandoverConfig,
};
use crate::geometry::{self, GroundPoint, SatelliteTrack};
use crate::ids::{GroupId, RanId, UeId};
use crate::metrics::{MetricsLedger, RunReport};
use crate::protocol::{
    self, decide_threshold, decode_group_request, decode_share_broadcast, encode_group_request,
    encode_share_broadcast, ga_on_broadcast, generate_shares, make_notification,
    select_aggregators, verify_ticket, CommitmentMap, CommitmentShareMap, EpochRand, GaState,
    NotifyAction, SatKeyPair, SeenNotifications, Share,
};
use crate::scenario::{Protocol, ScenarioConfig};

/// Protocol position of one UE.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UePhase {
    /// Attached to its serving satellite, no handover under way.
    Connected,
    /// Individual request sent, waiting for configuration.
    AwaitingHoResponse,
    /// Received a signed SwitchToGroupHandover, waiting for its own trigger.
    GroupNotified,
    /// Share broadcast, waiting for the group configuration.
    ShareBroadcast,
    /// Aggregator that submitted its group request, waiting for config.
    AwaitingGroupConfig,
    /// Configuration received.
    Configured,
    /// Attach request sent to the target.
    Attaching,
    /// Attached to the final satellite.
    Attached,
    /// Lost coverage without a configuration.
    Failed,
}

/// Per-UE state machine plus retransmission bookkeeping.
#[derive(Debug, Clone)]
pub struct Ue {
    pub id: UeId,
    pub position: GroundPoint,
    pub gid: Option<GroupId>,
    /// Member slot in the group's commitment map for the current epoch.
    pub slot: u32,
    pub is_ga: bool,
    /// Idle terminals generate no handover signaling.
    pub idle: bool,
    pub phase: UePhase,
    /// Serving satellite index.
    pub serving: usize,
    /// Handover epoch, 1-based: epoch e hands over from satellite e-1 to e.
    pub epoch: u32,
    pub retransmit_count: u32,
    timer_generation: u64,
    pub share: Option<Share>,
    pub rand: EpochRand,
    pub serving_pk: VerifyingKey,
    pub seen: SeenNotifications,
    pub ga_state: Option<GaState>,
    last_ga_request: Option<Vec<u8>>,
    pending_config: Option<UeHandoverConfig>,
    /// Target chosen at trigger time (individual handover).
    target: Option<usize>,
    // First-epoch milestones for the run report.
    pub triggered_at: Option<SimTime>,
    pub request_sent_at: Option<SimTime>,
    pub config_received_at: Option<SimTime>,
    pub failed_at: Option<SimTime>,
    trigger_counted: bool,
    configured_counted: bool,
    /// Requests sent in the current awaiting phase (initial + retransmissions).
    pub requests_sent: u32,
}

impl Ue {
    /// A freshly deployed terminal, attached to the first satellite.
    pub fn new(id: UeId, position: GroundPoint, idle: bool, serving_pk: VerifyingKey) -> Self {
        Ue {
            id,
            position,
            gid: None,
            slot: 0,
            is_ga: false,
            idle,
            phase: UePhase::Connected,
            serving: 0,
            epoch: 1,
            retransmit_count: 0,
            timer_generation: 0,
            share: None,
            rand: [0u8; 16],
            serving_pk,
            seen: SeenNotifications::default(),
            ga_state: None,
            last_ga_request: None,
            pending_config: None,
            target: None,
            triggered_at: None,
            request_sent_at: None,
            config_received_at: None,
            failed_at: None,
            trigger_counted: false,
            configured_counted: false,
            requests_sent: 0,
        }
    }
}

/// Group handover progress as tracked by its serving satellite.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupPhase {
    Monitoring,
    Notified,
    Requested,
    Configured,
}

/// Everything a serving satellite knows about one group for the current
/// epoch. The satellite that generated the shares holds the share map and
/// verifies tickets against it.
#[derive(Debug, Clone)]
pub struct SourceGroup {
    pub members: Vec<UeId>,
    pub centroid_x: f64,
    pub rand: EpochRand,
    pub commitment_map: CommitmentMap,
    pub share_map: CommitmentShareMap,
    pub threshold: u32,
    pub gas: Vec<UeId>,
    pub phase: GroupPhase,
}

/// Individual-handover bookkeeping for one UE at the source satellite.
#[derive(Debug, Clone)]
pub enum HoServe {
    /// Config requested from the target; duplicates are suppressed.
    InFlight,
    /// Config cached; duplicates are answered without another round trip.
    Served(Box<UeHandoverConfig>),
}

pub struct Satellite {
    pub index: usize,
    pub ran_id: RanId,
    pub keys: SatKeyPair,
    pub queue: NodeQueue,
    pub groups: BTreeMap<GroupId, SourceGroup>,
    pub served_ho: HashMap<UeId, HoServe>,
}

pub struct Core {
    pub queue: NodeQueue,
}

/// Geometry constants precomputed at build time.
#[derive(Debug, Clone)]
pub struct Derived {
    pub tracks: Vec<SatelliteTrack>,
    pub velocity_x: f64,
    /// Initial x of the midline between satellite `s` and `s+1`.
    pub midline0: Vec<f64>,
    pub sat_y: f64,
    pub t_end: SimTime,
    pub ho_timeout: SimTime,
    pub gho_timeout: SimTime,
    pub monitor_period: SimTime,
}

/// Full mutable simulation state.
pub struct World {
    pub cfg: ScenarioConfig,
    pub delay: DelayModel,
    pub derived: Derived,
    pub sats: Vec<Satellite>,
    pub core: Core,
    pub ues: Vec<Ue>,
    pub ledger: MetricsLedger,
    pub rng: ChaCha12Rng,
    next_msg_id: u64,
    notif_sig_cache: HashMap<[u8; 64], bool>,
}

/// A runnable simulation: scheduler plus world.
pub struct Simulation {
    pub sched: Scheduler,
    pub world: World,
    pub t_end: SimTime,
}

/// Output of serving one message: outbound messages plus the sender-side
/// crypto work charged to the processor that handled the trigger.
struct Served {
    outputs: Vec<Message>,
    tx_ops: Vec<CryptoOp>,
}

impl Served {
    fn none() -> Self {
        Served { outputs: Vec::new(), tx_ops: Vec::new() }
    }
}

fn connected_phase(phase: UePhase) -> bool {
    matches!(
        phase,
        UePhase::Connected
            | UePhase::GroupNotified
            | UePhase::ShareBroadcast
            | UePhase::AwaitingHoResponse
            | UePhase::AwaitingGroupConfig
    )
}

impl World {
    pub fn new(
        cfg: ScenarioConfig,
        delay: DelayModel,
        derived: Derived,
        sats: Vec<Satellite>,
        core: Core,
        ues: Vec<Ue>,
        ledger: MetricsLedger,
        rng: ChaCha12Rng,
    ) -> Self {
        World {
            cfg,
            delay,
            derived,
            sats,
            core,
            ues,
            ledger,
            rng,
            next_msg_id: 0,
            notif_sig_cache: HashMap::new(),
        }
    }

    fn make_msg(
        &mut self,
        class: MessageClass,
        sender: Endpoint,
        receiver: Endpoint,
        rx_ops: Vec<CryptoOp>,
        payload: Payload,
        now: SimTime,
    ) -> Message {
        let id = self.next_msg_id;
        self.next_msg_id += 1;
        Message {
            id,
            class,
            sender,
            receiver,
            size_bytes: self.cfg.packet_bytes,
            rx_ops,
            created_at: now,
            enqueued_at: None,
            service_start_at: None,
            payload,
        }
    }

    fn node_index(&self, ep: Endpoint) -> usize {
        match ep {
            Endpoint::Sat(i) => i,
            Endpoint::Core => self.sats.len(),
            Endpoint::Ue(_) => unreachable!("UEs are not queued nodes"),
        }
    }

    /// Count of members still connected to satellite `s`.
    fn connected_members(&self, s: usize, members: &[UeId]) -> Vec<UeId> {
        members
            .iter()
            .copied()
            .filter(|u| {
                let ue = &self.ues[u.0 as usize];
                ue.serving == s && connected_phase(ue.phase)
            })
            .collect()
    }

    fn verify_notification_at_ue(&mut self, ue_idx: usize, n: &protocol::Notification, now: SimTime) -> bool {
        let sig_bytes = n.signature.to_bytes();
        let ue = &self.ues[ue_idx];
        let pk = ue.serving_pk;
        let rand = ue.rand;
        let sig_ok = *self
            .notif_sig_cache
            .entry(sig_bytes)
            .or_insert_with(|| protocol::verify_signature(&pk, n, &rand));
        if !sig_ok {
            return false;
        }
        let ue = &mut self.ues[ue_idx];
        protocol::register_fresh(n, self.cfg.freshness_window_ms, now.as_ms_floor(), &mut ue.seen)
            .is_ok()
    }
}

impl Simulation {
    /// Drive the event loop to `t_end` and return the run report.
    pub fn run(&mut self) -> RunReport {
        let t_end = self.t_end;
        self.run_until(t_end);
        self.world.ledger.report()
    }

    /// Process every event up to `t` (capped at the configured end).
    pub fn run_until(&mut self, t: SimTime) {
        let cap = t.min(self.t_end);
        while let Some((_, kind)) = self.sched.pop_due(cap) {
            self.dispatch(kind);
        }
    }

    pub fn now(&self) -> SimTime {
        self.sched.now()
    }

    fn dispatch(&mut self, kind: EventKind) {
        match kind {
            EventKind::MessageArrival(msg) => self.on_arrival(msg),
            EventKind::ServiceComplete { node, msg, outputs } => {
                self.on_service_complete(node, msg, outputs)
            }
            EventKind::TimerExpiry { ue, generation } => self.on_timer(ue, generation),
            EventKind::Trigger(Trigger::UeHandover { ue, epoch }) => self.on_ue_trigger(ue, epoch),
            EventKind::Trigger(Trigger::FootprintExit { ue, epoch }) => {
                self.on_footprint_exit(ue, epoch)
            }
            EventKind::Trigger(Trigger::GroupMonitor { sat }) => self.on_group_monitor(sat),
        }
    }

    // -- transport ---------------------------------------------------------

    /// Schedule a message's arrival after its link delay.
    fn send(&mut self, msg: Message, extra: SimTime) {
        let now = self.sched.now();
        let link = link_class(msg.sender, msg.receiver).expect("routable endpoints");
        let delay = match self.world.delay.propagation {
            PropagationMode::Fixed => link_delay(&self.world.delay, link),
            PropagationMode::Distance => {
                let d = self.endpoint_distance(msg.sender, msg.receiver, now);
                link_delay_distance(&self.world.delay, link, d)
            }
        };
        self.sched.schedule_in(delay + extra, EventKind::MessageArrival(msg));
    }

    fn endpoint_distance(&self, a: Endpoint, b: Endpoint, now: SimTime) -> f64 {
        let t = now.as_us() as f64 / 1e6;
        let pos = |ep: Endpoint| -> GroundPoint {
            match ep {
                Endpoint::Sat(i) => geometry::position_at(&self.world.derived.tracks[i], t),
                Endpoint::Ue(u) => self.world.ues[u.0 as usize].position,
                Endpoint::Core => GroundPoint::new(0.0, 0.0),
            }
        };
        pos(a).distance(&pos(b))
    }

    // -- node service ------------------------------------------------------

    fn on_arrival(&mut self, msg: Message) {
        let now = self.sched.now();
        match msg.receiver {
            Endpoint::Sat(i) => {
                let internal = msg.sender == msg.receiver;
                if !internal {
                    self.world.ledger.on_received(i, Some(i), msg.class, now);
                }
                match self.world.sats[i].queue.offer_with(msg, now, internal) {
                    Enqueue::StartService(m) => self.begin_service(Endpoint::Sat(i), m),
                    Enqueue::Queued => {}
                    Enqueue::Dropped(m) => {
                        self.world.ledger.on_dropped(i, Some(i), m.class, now);
                    }
                }
            }
            Endpoint::Core => {
                let node = self.world.sats.len();
                self.world.ledger.on_received(node, None, msg.class, now);
                match self.world.core.queue.offer(msg, now) {
                    Enqueue::StartService(m) => self.begin_service(Endpoint::Core, m),
                    Enqueue::Queued => {}
                    Enqueue::Dropped(m) => {
                        self.world.ledger.on_dropped(node, None, m.class, now);
                    }
                }
            }
            Endpoint::Ue(id) => self.on_ue_message(id, msg),
        }
    }

    /// Run the entity handler and hold the processor for the service time
    /// plus any sender-side crypto work on the outputs.
    fn begin_service(&mut self, node: Endpoint, msg: Message) {
        let served = match node {
            Endpoint::Sat(i) => self.serve_at_sat(i, &msg),
            Endpoint::Core => self.serve_at_core(&msg),
            Endpoint::Ue(_) => unreachable!(),
        };
        let mut duration = service_time(&self.world.delay, &msg);
        for &op in &served.tx_ops {
            duration += op_cost(&self.world.delay, op);
        }
        self.sched
            .schedule_in(duration, EventKind::ServiceComplete { node, msg, outputs: served.outputs });
    }

    fn on_service_complete(&mut self, node: Endpoint, msg: Message, outputs: Vec<Message>) {
        let now = self.sched.now();
        let idx = self.world.node_index(node);
        self.world.ledger.on_serviced(idx, msg.class, now);
        for out in outputs {
            self.send(out, SimTime::ZERO);
        }
        let queue = match node {
            Endpoint::Sat(i) => &mut self.world.sats[i].queue,
            Endpoint::Core => &mut self.world.core.queue,
            Endpoint::Ue(_) => unreachable!(),
        };
        if let Some(next) = queue.complete(now) {
            self.begin_service(node, next);
        }
    }

    fn serve_at_sat(&mut self, s: usize, msg: &Message) -> Served {
        match &msg.payload {
            Payload::HoRequest { target } => {
                let Endpoint::Ue(ue) = msg.sender else { return Served::none() };
                self.sat_on_ho_request(s, ue, *target)
            }
            Payload::HoConfigRequest { ue } => self.sat_on_ho_config_request(s, msg.sender, *ue),
            Payload::HoConfigResponse { ue, config } => {
                self.sat_on_ho_config_response(s, *ue, (**config).clone())
            }
            Payload::GaRequest { bytes } => self.sat_on_ga_request(s, bytes.clone()),
            Payload::GroupConfigRequest { gid, members } => {
                self.sat_on_group_config_request(s, msg.sender, *gid, members.clone())
            }
            Payload::GroupConfigResponse { gid, configs } => {
                self.sat_on_group_config_response(s, *gid, configs.clone())
            }
            Payload::MonitorWork { gid, action } => self.sat_on_monitor_work(s, *gid, *action),
            Payload::AttachRequest => {
                let Endpoint::Ue(ue) = msg.sender else { return Served::none() };
                self.sat_on_attach(s, ue)
            }
            Payload::CoreAck => Served::none(),
            other => {
                debug_assert!(false, "unexpected payload at satellite: {other:?}");
                Served::none()
            }
        }
    }

    fn serve_at_core(&mut self, msg: &Message) -> Served {
        let now = self.sched.now();
        match &msg.payload {
            Payload::CoreNotify => {
                let ack = self.world.make_msg(
                    MessageClass::CoreResponse,
                    Endpoint::Core,
                    msg.sender,
                    vec![CryptoOp::Decrypt],
                    Payload::CoreAck,
                    now,
                );
                Served { outputs: vec![ack], tx_ops: vec![] }
            }
            other => {
                debug_assert!(false, "unexpected payload at core: {other:?}");
                Served::none()
            }
        }
    }

    // -- satellite handlers --------------------------------------------------

    fn sat_on_ho_request(&mut self, s: usize, ue: UeId, target: usize) -> Served {
        let now = self.sched.now();
        match self.world.sats[s].served_ho.get(&ue) {
            None => {
                self.world.sats[s].served_ho.insert(ue, HoServe::InFlight);
                let req = self.world.make_msg(
                    MessageClass::InterSatellite,
                    Endpoint::Sat(s),
                    Endpoint::Sat(target),
                    vec![CryptoOp::Decrypt],
                    Payload::HoConfigRequest { ue },
                    now,
                );
                Served { outputs: vec![req], tx_ops: vec![] }
            }
            // Retransmission of an in-flight request: no duplicate
            // inter-satellite traffic.
            Some(HoServe::InFlight) => Served::none(),
            Some(HoServe::Served(config)) => {
                let config = config.clone();
                let delivery = self.world.make_msg(
                    MessageClass::ConfigDelivery,
                    Endpoint::Sat(s),
                    Endpoint::Ue(ue),
                    vec![],
                    Payload::UeConfig(config),
                    now,
                );
                Served { outputs: vec![delivery], tx_ops: vec![CryptoOp::Encrypt] }
            }
        }
    }

    fn sat_on_ho_config_request(&mut self, s: usize, from: Endpoint, ue: UeId) -> Served {
        let now = self.sched.now();
        let mut kgnb_token = [0u8; 32];
        self.world.rng.fill_bytes(&mut kgnb_token);
        let config = UeHandoverConfig {
            target: s,
            target_ran_id: self.world.sats[s].ran_id,
            share: None,
            rand: [0u8; 16],
            slot: 0,
            target_pk: self.world.sats[s].keys.public(),
            kgnb_token,
        };
        let resp = self.world.make_msg(
            MessageClass::InterSatellite,
            Endpoint::Sat(s),
            from,
            vec![CryptoOp::Decrypt],
            Payload::HoConfigResponse { ue, config: Box::new(config) },
            now,
        );
        Served { outputs: vec![resp], tx_ops: vec![] }
    }

    fn sat_on_ho_config_response(&mut self, s: usize, ue: UeId, config: UeHandoverConfig) -> Served {
        let now = self.sched.now();
        self.world.sats[s].served_ho.insert(ue, HoServe::Served(Box::new(config.clone())));
        let delivery = self.world.make_msg(
            MessageClass::ConfigDelivery,
            Endpoint::Sat(s),
            Endpoint::Ue(ue),
            vec![],
            Payload::UeConfig(Box::new(config)),
            now,
        );
        let notify = self.world.make_msg(
            MessageClass::InterSatellite,
            Endpoint::Sat(s),
            Endpoint::Core,
            vec![CryptoOp::Decrypt],
            Payload::CoreNotify,
            now,
        );
        Served { outputs: vec![delivery, notify], tx_ops: vec![CryptoOp::Encrypt] }
    }

    fn sat_on_ga_request(&mut self, s: usize, bytes: Vec<u8>) -> Served {
        let now = self.sched.now();
        let Ok(req) = decode_group_request(&bytes) else {
            self.world.ledger.verification_failures += 1;
            return Served::none();
        };
        let Some(group) = self.world.sats[s].groups.get(&req.gid) else {
            self.world.ledger.verification_failures += 1;
            return Served::none();
        };
        match group.phase {
            GroupPhase::Notified => {
                // Enforce the threshold and index distinctness at the source
                // as well; a compromised aggregator must not be able to
                // trigger an early handover with a short or padded list.
                let mut indices = req.aggregated_commitment.clone();
                indices.sort_unstable();
                indices.dedup();
                let distinct = indices.len() == req.aggregated_commitment.len();
                let above_threshold = req.aggregated_commitment.len() as u32 > group.threshold;
                if distinct
                    && above_threshold
                    && verify_ticket(&req, &group.share_map, &group.commitment_map)
                {
                    let members = self.world.connected_members(s, &group.members.clone());
                    let group = self.world.sats[s].groups.get_mut(&req.gid).unwrap();
                    group.phase = GroupPhase::Requested;
                    let fwd = self.world.make_msg(
                        MessageClass::InterSatellite,
                        Endpoint::Sat(s),
                        Endpoint::Sat(s + 1),
                        vec![CryptoOp::Decrypt, CryptoOp::BatchHash],
                        Payload::GroupConfigRequest { gid: req.gid, members },
                        now,
                    );
                    Served { outputs: vec![fwd], tx_ops: vec![] }
                } else {
                    self.world.ledger.verification_failures += 1;
                    Served::none()
                }
            }
            // Another aggregator already got the group forwarded; the
            // duplicate is acknowledged by doing nothing.
            GroupPhase::Requested | GroupPhase::Configured => Served::none(),
            GroupPhase::Monitoring => {
                self.world.ledger.verification_failures += 1;
                Served::none()
            }
        }
    }

    fn sat_on_group_config_request(
        &mut self,
        s: usize,
        from: Endpoint,
        gid: GroupId,
        members: Vec<UeId>,
    ) -> Served {
        let now = self.sched.now();
        if members.is_empty() {
            return Served::none();
        }
        let mut rand = [0u8; 16];
        self.world.rng.fill_bytes(&mut rand);
        let share_len = self.world.cfg.share_bytes as usize;
        let (shares, commitment_map, share_map) =
            generate_shares(gid, &rand, members.len(), share_len, &mut self.world.rng);
        let centroid_x = members
            .iter()
            .map(|u| self.world.ues[u.0 as usize].position.x)
            .sum::<f64>()
            / members.len() as f64;
        let pk = self.world.sats[s].keys.public();
        let ran_id = self.world.sats[s].ran_id;
        let mut configs = Vec::with_capacity(members.len());
        for (slot, &ue) in members.iter().enumerate() {
            let mut kgnb_token = [0u8; 32];
            self.world.rng.fill_bytes(&mut kgnb_token);
            configs.push((
                ue,
                UeHandoverConfig {
                    target: s,
                    target_ran_id: ran_id,
                    share: Some(shares[slot].clone()),
                    rand,
                    slot: slot as u32,
                    target_pk: pk,
                    kgnb_token,
                },
            ));
        }
        // The issuing satellite keeps the share map for its own source role
        // in the next epoch.
        self.world.sats[s].groups.insert(
            gid,
            SourceGroup {
                members,
                centroid_x,
                rand,
                commitment_map,
                share_map,
                threshold: 0,
                gas: Vec::new(),
                phase: GroupPhase::Monitoring,
            },
        );
        let resp = self.world.make_msg(
            MessageClass::InterSatellite,
            Endpoint::Sat(s),
            from,
            vec![CryptoOp::Decrypt],
            Payload::GroupConfigResponse { gid, configs },
            now,
        );
        Served { outputs: vec![resp], tx_ops: vec![] }
    }

    fn sat_on_group_config_response(
        &mut self,
        s: usize,
        gid: GroupId,
        configs: Vec<(UeId, UeHandoverConfig)>,
    ) -> Served {
        let now = self.sched.now();
        if let Some(group) = self.world.sats[s].groups.get_mut(&gid) {
            group.phase = GroupPhase::Configured;
        }
        let mut outputs = Vec::with_capacity(configs.len() + 1);
        let mut tx_ops = Vec::with_capacity(configs.len() + 1);
        for (ue, config) in configs {
            outputs.push(self.world.make_msg(
                MessageClass::ConfigDelivery,
                Endpoint::Sat(s),
                Endpoint::Ue(ue),
                vec![],
                Payload::UeConfig(Box::new(config)),
                now,
            ));
            tx_ops.push(CryptoOp::Encrypt);
        }
        outputs.push(self.world.make_msg(
            MessageClass::InterSatellite,
            Endpoint::Sat(s),
            Endpoint::Core,
            vec![CryptoOp::Decrypt],
            Payload::CoreNotify,
            now,
        ));
        Served { outputs, tx_ops }
    }

    fn sat_on_monitor_work(&mut self, s: usize, gid: GroupId, action: NotifyAction) -> Served {
        let now = self.sched.now();
        let Some(group) = self.world.sats[s].groups.get(&gid) else { return Served::none() };
        let members = group.members.clone();
        let rand = group.rand;
        let connected = self.world.connected_members(s, &members);
        let ran_id = self.world.sats[s].ran_id;
        match action {
            NotifyAction::SwitchToGroupHandover => {
                if (connected.len() as u32) < self.world.cfg.min_group_size {
                    let group = self.world.sats[s].groups.get_mut(&gid).unwrap();
                    group.phase = GroupPhase::Monitoring;
                    return Served::none();
                }
                let threshold =
                    decide_threshold(connected.len() as u32, self.world.cfg.threshold_fraction);
                let k = (self.world.cfg.k_ga as usize).min(connected.len());
                let gas = select_aggregators(&connected, k, &mut self.world.rng)
                    .expect("k clamped to connected");
                let notif = make_notification(
                    &self.world.sats[s].keys,
                    ran_id,
                    &rand,
                    gid,
                    NotifyAction::SwitchToGroupHandover,
                    now.as_ms_floor(),
                );
                {
                    let group = self.world.sats[s].groups.get_mut(&gid).unwrap();
                    group.threshold = threshold;
                    group.gas = gas.clone();
                }
                let mut outputs = Vec::with_capacity(connected.len() + gas.len());
                let mut tx_ops = vec![CryptoOp::Sign];
                for &ue in &connected {
                    outputs.push(self.world.make_msg(
                        MessageClass::NotificationBroadcast,
                        Endpoint::Sat(s),
                        Endpoint::Ue(ue),
                        vec![],
                        Payload::GroupNotification(notif.clone()),
                        now,
                    ));
                }
                let commitment_map = self.world.sats[s].groups[&gid].commitment_map.clone();
                for &ga in &gas {
                    outputs.push(self.world.make_msg(
                        MessageClass::ConfigDelivery,
                        Endpoint::Sat(s),
                        Endpoint::Ue(ga),
                        vec![],
                        Payload::GaProvision {
                            gid,
                            commitment_map: commitment_map.clone(),
                            threshold,
                        },
                        now,
                    ));
                    tx_ops.push(CryptoOp::Encrypt);
                }
                Served { outputs, tx_ops }
            }
            NotifyAction::CancelGroupHandover => {
                let notif = make_notification(
                    &self.world.sats[s].keys,
                    ran_id,
                    &rand,
                    gid,
                    NotifyAction::CancelGroupHandover,
                    now.as_ms_floor(),
                );
                {
                    let group = self.world.sats[s].groups.get_mut(&gid).unwrap();
                    group.threshold = 0;
                    group.gas.clear();
                }
                let outputs = connected
                    .iter()
                    .map(|&ue| {
                        self.world.make_msg(
                            MessageClass::NotificationBroadcast,
                            Endpoint::Sat(s),
                            Endpoint::Ue(ue),
                            vec![],
                            Payload::GroupNotification(notif.clone()),
                            now,
                        )
                    })
                    .collect();
                Served { outputs, tx_ops: vec![CryptoOp::Sign] }
            }
        }
    }

    fn sat_on_attach(&mut self, s: usize, ue: UeId) -> Served {
        let now = self.sched.now();
        let accept = self.world.make_msg(
            MessageClass::ConfigDelivery,
            Endpoint::Sat(s),
            Endpoint::Ue(ue),
            vec![],
            Payload::AttachAccept,
            now,
        );
        Served { outputs: vec![accept], tx_ops: vec![] }
    }

    // -- group monitoring ----------------------------------------------------

    fn on_group_monitor(&mut self, s: usize) {
        let now = self.sched.now();
        if self.world.cfg.protocol == Protocol::Gho && s + 1 < self.world.sats.len() {
            let t_s = now.as_us() as f64 / 1e6;
            let midline_x = self.world.derived.midline0[s] + self.world.derived.velocity_x * t_s;
            let notify_lead = self.world.cfg.notify_lead_km;
            let min_group = self.world.cfg.min_group_size;
            let mut work: Vec<(GroupId, NotifyAction)> = Vec::new();
            let gids: Vec<GroupId> = self.world.sats[s].groups.keys().copied().collect();
            for gid in gids {
                let group = &self.world.sats[s].groups[&gid];
                let phase = group.phase;
                let centroid_x = group.centroid_x;
                let members = group.members.clone();
                let connected = self.world.connected_members(s, &members).len() as u32;
                match phase {
                    GroupPhase::Monitoring
                        if connected >= min_group && centroid_x - midline_x <= notify_lead =>
                    {
                        self.world.sats[s].groups.get_mut(&gid).unwrap().phase =
                            GroupPhase::Notified;
                        work.push((gid, NotifyAction::SwitchToGroupHandover));
                    }
                    GroupPhase::Notified if connected < min_group => {
                        self.world.sats[s].groups.get_mut(&gid).unwrap().phase =
                            GroupPhase::Monitoring;
                        work.push((gid, NotifyAction::CancelGroupHandover));
                    }
                    _ => {}
                }
            }
            for (gid, action) in work {
                let item = self.world.make_msg(
                    MessageClass::NotificationBroadcast,
                    Endpoint::Sat(s),
                    Endpoint::Sat(s),
                    vec![],
                    Payload::MonitorWork { gid, action },
                    now,
                );
                self.sched.schedule_in(SimTime::ZERO, EventKind::MessageArrival(item));
            }
        }
        let next = now + self.world.derived.monitor_period;
        if next <= self.t_end {
            self.sched
                .schedule(next, EventKind::Trigger(Trigger::GroupMonitor { sat: s }))
                .expect("future tick");
        }
    }

    // -- UE side -------------------------------------------------------------

    fn arm_timer(&mut self, ue_idx: usize, timeout: SimTime) {
        let ue = &mut self.world.ues[ue_idx];
        ue.timer_generation += 1;
        let generation = ue.timer_generation;
        let id = ue.id;
        self.sched.schedule_in(timeout, EventKind::TimerExpiry { ue: id, generation });
    }

    fn cancel_timer(&mut self, ue_idx: usize) {
        self.world.ues[ue_idx].timer_generation += 1;
    }

    fn protocol_timeout(&self) -> SimTime {
        match self.world.cfg.protocol {
            Protocol::Ho => self.world.derived.ho_timeout,
            Protocol::Gho => self.world.derived.gho_timeout,
        }
    }

    fn on_ue_trigger(&mut self, id: UeId, event_epoch: u32) {
        let idx = id.0 as usize;
        let now = self.sched.now();
        if self.world.ues[idx].idle {
            return;
        }

        // First-epoch demand accounting happens at the scheduled crossing
        // regardless of how far the UE has advanced: group members can be
        // configured (even attached) before their own trigger fires.
        if event_epoch == 1 {
            let phase = self.world.ues[idx].phase;
            let past_epoch_one = self.world.ues[idx].epoch > 1
                || matches!(phase, UePhase::Configured | UePhase::Attaching | UePhase::Attached);
            if !self.world.ues[idx].trigger_counted && phase != UePhase::Failed {
                self.world.ues[idx].trigger_counted = true;
                self.world.ues[idx].triggered_at = Some(now);
                self.world.ledger.ue_triggered(id, now);
            }
            if past_epoch_one && !self.world.ues[idx].configured_counted {
                if let Some(t_cfg) = self.world.ues[idx].config_received_at {
                    // Configured before its own trigger: successful, but no
                    // waiting time is defined.
                    self.world.ues[idx].configured_counted = true;
                    self.world.ledger.ue_configured(id, t_cfg, None);
                }
            }
        }
        if self.world.ues[idx].epoch != event_epoch {
            return; // stale event from an already-completed epoch
        }

        let serving = self.world.ues[idx].serving;
        let t_s = now.as_us() as f64 / 1e6;
        let tracks = &self.world.derived.tracks;
        let others: Vec<SatelliteTrack> = tracks
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != serving)
            .map(|(_, t)| *t)
            .collect();
        let position = self.world.ues[idx].position;
        let Some(target_ran) = geometry::needs_handover(&position, &tracks[serving], &others, t_s)
        else {
            // Scheduled fractionally early; check again shortly.
            self.sched.schedule_in(
                SimTime::from_ms(1),
                EventKind::Trigger(Trigger::UeHandover { ue: id, epoch: event_epoch }),
            );
            return;
        };
        let target = (target_ran.0 - 1) as usize;

        match self.world.ues[idx].phase {
            UePhase::Connected => {
                // Individual handover (baseline protocol, or fallback for
                // ungrouped and un-notified members in a group run).
                let msg = self.world.make_msg(
                    MessageClass::UeRequest,
                    Endpoint::Ue(id),
                    Endpoint::Sat(serving),
                    vec![CryptoOp::Decrypt],
                    Payload::HoRequest { target },
                    now,
                );
                self.send(msg, SimTime::ZERO);
                let ue = &mut self.world.ues[idx];
                ue.target = Some(target);
                ue.phase = UePhase::AwaitingHoResponse;
                ue.retransmit_count = 0;
                ue.requests_sent = 1;
                if ue.epoch == 1 && ue.request_sent_at.is_none() {
                    ue.request_sent_at = Some(now);
                    self.world.ledger.ue_request_sent(id, now);
                }
                self.arm_timer(idx, self.world.derived.ho_timeout);
            }
            UePhase::GroupNotified | UePhase::AwaitingGroupConfig => {
                self.broadcast_share(idx);
                let ue = &mut self.world.ues[idx];
                if ue.phase == UePhase::GroupNotified {
                    ue.phase = UePhase::ShareBroadcast;
                }
                ue.retransmit_count = 0;
                if ue.epoch == 1 && ue.request_sent_at.is_none() {
                    ue.request_sent_at = Some(now);
                    self.world.ledger.ue_request_sent(id, now);
                }
                self.arm_timer(idx, self.world.derived.gho_timeout);
            }
            UePhase::Configured
            | UePhase::Attaching
            | UePhase::Attached
            | UePhase::Failed
            | UePhase::AwaitingHoResponse
            | UePhase::ShareBroadcast => {}
        }
    }

    /// Publicly broadcast `(GID, share)`; every provisioned aggregator of
    /// the group hears it after the ground broadcast delay plus one hash
    /// verification.
    fn broadcast_share(&mut self, ue_idx: usize) {
        let now = self.sched.now();
        let ue = &self.world.ues[ue_idx];
        let id = ue.id;
        let serving = ue.serving;
        let Some(gid) = ue.gid else { return };
        let Some(share) = ue.share.clone() else { return };
        let Some(group) = self.world.sats[serving].groups.get(&gid) else { return };
        let gas = group.gas.clone();
        let bytes = encode_share_broadcast(gid, &share);
        let hash_cost = self.world.delay.hash;
        for ga in gas {
            let msg = self.world.make_msg(
                MessageClass::ShareBroadcast,
                Endpoint::Ue(id),
                Endpoint::Ue(ga),
                vec![CryptoOp::Hash],
                Payload::ShareBroadcast { bytes: bytes.clone() },
                now,
            );
            self.send(msg, hash_cost);
        }
    }

    fn on_ue_message(&mut self, id: UeId, msg: Message) {
        let idx = id.0 as usize;
        let now = self.sched.now();
        match msg.payload {
            Payload::GroupNotification(n) => {
                if self.world.ues[idx].gid != Some(n.gid) {
                    return;
                }
                if !self.world.verify_notification_at_ue(idx, &n, now) {
                    return;
                }
                let ue = &mut self.world.ues[idx];
                match n.action {
                    NotifyAction::SwitchToGroupHandover => {
                        if ue.phase == UePhase::Connected {
                            ue.phase = UePhase::GroupNotified;
                        }
                    }
                    NotifyAction::CancelGroupHandover => match ue.phase {
                        UePhase::GroupNotified => {
                            ue.phase = UePhase::Connected;
                            ue.is_ga = false;
                            ue.ga_state = None;
                        }
                        // Already triggered: fall back to an individual
                        // handover immediately.
                        UePhase::ShareBroadcast | UePhase::AwaitingGroupConfig => {
                            ue.is_ga = false;
                            ue.ga_state = None;
                            ue.phase = UePhase::Connected;
                            let epoch = ue.epoch;
                            self.cancel_timer(idx);
                            let ue_id = self.world.ues[idx].id;
                            self.sched.schedule_in(
                                SimTime::ZERO,
                                EventKind::Trigger(Trigger::UeHandover { ue: ue_id, epoch }),
                            );
                        }
                        _ => {}
                    },
                }
            }
            Payload::GaProvision { gid, commitment_map, threshold } => {
                let ue = &mut self.world.ues[idx];
                if ue.gid == Some(gid) && connected_phase(ue.phase) {
                    ue.is_ga = true;
                    ue.ga_state = Some(GaState::new(
                        gid,
                        ue.rand,
                        threshold,
                        commitment_map,
                        self.world.cfg.share_bytes as usize,
                    ));
                }
            }
            Payload::ShareBroadcast { bytes } => self.ga_on_share(idx, &bytes),
            Payload::UeConfig(config) => self.ue_on_config(idx, *config),
            Payload::AttachAccept => self.ue_on_attach_accept(idx),
            other => debug_assert!(false, "unexpected payload at UE: {other:?}"),
        }
    }

    fn ga_on_share(&mut self, idx: usize, bytes: &[u8]) {
        let now = self.sched.now();
        let Ok((gid, share)) = decode_share_broadcast(bytes) else { return };
        let Some(ga) = self.world.ues[idx].ga_state.as_mut() else { return };
        if let Some(req) = ga_on_broadcast(ga, gid, &share) {
            let encoded = encode_group_request(&req);
            let id = self.world.ues[idx].id;
            let serving = self.world.ues[idx].serving;
            let msg = self.world.make_msg(
                MessageClass::GaRequest,
                Endpoint::Ue(id),
                Endpoint::Sat(serving),
                vec![CryptoOp::BatchHash],
                Payload::GaRequest { bytes: encoded.clone() },
                now,
            );
            self.send(msg, SimTime::ZERO);
            let ue = &mut self.world.ues[idx];
            ue.last_ga_request = Some(encoded);
            if ue.request_sent_at.is_none() && ue.epoch == 1 {
                ue.request_sent_at = Some(now);
                self.world.ledger.ue_request_sent(id, now);
            }
            let ue = &mut self.world.ues[idx];
            if matches!(ue.phase, UePhase::GroupNotified | UePhase::ShareBroadcast) {
                ue.phase = UePhase::AwaitingGroupConfig;
                ue.retransmit_count = 0;
            }
            self.arm_timer(idx, self.world.derived.gho_timeout);
        }
    }

    fn ue_on_config(&mut self, idx: usize, config: UeHandoverConfig) {
        let now = self.sched.now();
        let id = self.world.ues[idx].id;
        match self.world.ues[idx].phase {
            UePhase::Failed => {
                self.world.ledger.late_configs += 1;
            }
            UePhase::Configured | UePhase::Attaching | UePhase::Attached => {}
            _ => {
                let epoch = self.world.ues[idx].epoch;
                let request_sent = self.world.ues[idx].request_sent_at;
                if epoch == 1 {
                    self.world.ues[idx].config_received_at = Some(now);
                    if let Some(sent) = request_sent {
                        self.world.ues[idx].configured_counted = true;
                        self.world.ledger.ue_configured(id, now, Some(sent));
                    }
                    // Configured before triggering: counted when the trigger
                    // arrives, so success never exceeds demand.
                }
                self.cancel_timer(idx);
                let target = config.target;
                self.world.ues[idx].pending_config = Some(config);
                self.world.ues[idx].phase = UePhase::Configured;
                let attach = self.world.make_msg(
                    MessageClass::AttachRequest,
                    Endpoint::Ue(id),
                    Endpoint::Sat(target),
                    vec![CryptoOp::Decrypt],
                    Payload::AttachRequest,
                    now,
                );
                self.send(attach, SimTime::ZERO);
                let ue = &mut self.world.ues[idx];
                ue.phase = UePhase::Attaching;
                ue.retransmit_count = 0;
                self.arm_timer(idx, self.protocol_timeout());
            }
        }
    }

    fn ue_on_attach_accept(&mut self, idx: usize) {
        if self.world.ues[idx].phase != UePhase::Attaching {
            return;
        }
        self.cancel_timer(idx);
        let Some(config) = self.world.ues[idx].pending_config.take() else { return };
        let ue = &mut self.world.ues[idx];
        ue.serving = config.target;
        ue.epoch += 1;
        ue.serving_pk = config.target_pk;
        ue.rand = config.rand;
        ue.slot = config.slot;
        ue.share = config.share;
        ue.is_ga = false;
        ue.ga_state = None;
        ue.last_ga_request = None;
        ue.retransmit_count = 0;
        if config.target + 1 < self.world.sats.len() {
            ue.phase = UePhase::Connected;
            let epoch = ue.epoch;
            self.schedule_epoch_events(idx, epoch);
        } else {
            ue.phase = UePhase::Attached;
        }
    }

    fn on_timer(&mut self, id: UeId, generation: u64) {
        let idx = id.0 as usize;
        let now = self.sched.now();
        if self.world.ues[idx].timer_generation != generation {
            return; // cancelled or superseded
        }
        let max = self.world.cfg.max_retransmissions;
        let phase = self.world.ues[idx].phase;
        match phase {
            UePhase::AwaitingHoResponse => {
                if self.world.ues[idx].retransmit_count < max {
                    let serving = self.world.ues[idx].serving;
                    let target = self.world.ues[idx].target.unwrap_or(serving + 1);
                    let msg = self.world.make_msg(
                        MessageClass::UeRetransmission,
                        Endpoint::Ue(id),
                        Endpoint::Sat(serving),
                        vec![CryptoOp::Decrypt],
                        Payload::HoRequest { target },
                        now,
                    );
                    self.send(msg, SimTime::ZERO);
                    let ue = &mut self.world.ues[idx];
                    ue.retransmit_count += 1;
                    ue.requests_sent += 1;
                    self.arm_timer(idx, self.world.derived.ho_timeout);
                }
            }
            UePhase::ShareBroadcast => {
                if self.world.ues[idx].retransmit_count < max {
                    self.broadcast_share(idx);
                    self.world.ues[idx].retransmit_count += 1;
                    self.arm_timer(idx, self.world.derived.gho_timeout);
                }
            }
            UePhase::AwaitingGroupConfig => {
                if self.world.ues[idx].retransmit_count < max {
                    if let Some(bytes) = self.world.ues[idx].last_ga_request.clone() {
                        let serving = self.world.ues[idx].serving;
                        let msg = self.world.make_msg(
                            MessageClass::GaRequest,
                            Endpoint::Ue(id),
                            Endpoint::Sat(serving),
                            vec![CryptoOp::BatchHash],
                            Payload::GaRequest { bytes },
                            now,
                        );
                        self.send(msg, SimTime::ZERO);
                    }
                    self.world.ues[idx].retransmit_count += 1;
                    self.arm_timer(idx, self.world.derived.gho_timeout);
                }
            }
            UePhase::Attaching => {
                if self.world.ues[idx].retransmit_count < max {
                    if let Some(cfg) = &self.world.ues[idx].pending_config {
                        let target = cfg.target;
                        let msg = self.world.make_msg(
                            MessageClass::AttachRequest,
                            Endpoint::Ue(id),
                            Endpoint::Sat(target),
                            vec![CryptoOp::Decrypt],
                            Payload::AttachRequest,
                            now,
                        );
                        self.send(msg, SimTime::ZERO);
                    }
                    self.world.ues[idx].retransmit_count += 1;
                    self.arm_timer(idx, self.protocol_timeout());
                }
            }
            _ => {}
        }
    }

    fn on_footprint_exit(&mut self, id: UeId, epoch: u32) {
        let idx = id.0 as usize;
        let now = self.sched.now();
        let ue = &self.world.ues[idx];
        if ue.epoch != epoch || !connected_phase(ue.phase) {
            return;
        }
        let request_sent = ue.request_sent_at;
        let first_epoch = epoch == 1;
        let ue = &mut self.world.ues[idx];
        ue.phase = UePhase::Failed;
        self.cancel_timer(idx);
        if first_epoch {
            self.world.ues[idx].failed_at = Some(now);
            self.world.ledger.ue_failed(id, now, request_sent);
        }
    }

    /// Schedule the analytically computed midline-crossing and
    /// footprint-exit instants for one UE's current epoch.
    pub fn schedule_epoch_events(&mut self, ue_idx: usize, epoch: u32) {
        let now = self.sched.now();
        let d = &self.world.derived;
        let ue = &self.world.ues[ue_idx];
        let serving = ue.serving;
        if serving + 1 >= d.tracks.len() {
            return;
        }
        let id = ue.id;
        let vx = d.velocity_x;
        // Midline crossing: strictly past the crossing one microsecond later.
        let t_trigger_s = (ue.position.x - d.midline0[serving]) / vx;
        let trigger_at = SimTime::from_us((t_trigger_s.max(0.0) * 1e6).ceil() as u64 + 1);
        let trigger_at = trigger_at.max(now);
        self.sched
            .schedule(trigger_at, EventKind::Trigger(Trigger::UeHandover { ue: id, epoch }))
            .expect("future trigger");
        // Footprint exit of the serving satellite.
        let dy = ue.position.y - d.sat_y;
        let radius = d.tracks[serving].footprint_radius;
        let half_chord = (radius * radius - dy * dy).max(0.0).sqrt();
        let x_sat_exit = ue.position.x + half_chord;
        let t_exit_s = (x_sat_exit - d.tracks[serving].initial_position.x) / vx;
        let exit_at = SimTime::from_us((t_exit_s.max(0.0) * 1e6).ceil() as u64 + 1);
        let exit_at = exit_at.max(now);
        self.sched
            .schedule(exit_at, EventKind::Trigger(Trigger::FootprintExit { ue: id, epoch }))
            .expect("future exit");
    }
}
