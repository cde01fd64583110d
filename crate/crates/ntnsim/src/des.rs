//! Deterministic discrete-event mechanisms.
//!
//! Simulated time is an integer microsecond counter, which keeps every
//! delay in the default parameter set exact. Events are totally ordered by
//! `(fire_time, scheduling sequence)`, so ties fire in scheduling order and
//! two runs with the same inputs produce the same trace.
//!
//! Each satellite and the core carry a [`NodeQueue`]: a bounded
//! priority queue in front of a small processor pool. A message arriving at
//! a node either starts service immediately, waits in priority order, or is
//! dropped when the queue is full. Service time is the sum of fixed
//! physical-layer and logic components plus the message's cryptographic
//! work items.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fmt;
use std::ops::{Add, AddAssign, Sub};

use ed25519_dalek::VerifyingKey;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{GroupId, RanId, UeId};
use crate::protocol::{CommitmentMap, EpochRand, Notification, Share};

/// Simulated time in integer microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub fn from_us(us: u64) -> Self {
        SimTime(us)
    }

    pub fn from_ms(ms: u64) -> Self {
        SimTime(ms * 1_000)
    }

    /// Fractional milliseconds, rounded to the nearest microsecond.
    pub fn from_ms_f64(ms: f64) -> Self {
        assert!(ms >= 0.0 && ms.is_finite(), "delay must be a finite non-negative ms value");
        SimTime((ms * 1_000.0).round() as u64)
    }

    pub fn as_us(self) -> u64 {
        self.0
    }

    pub fn as_ms_f64(self) -> f64 {
        self.0 as f64 / 1_000.0
    }

    pub fn as_ms_floor(self) -> u64 {
        self.0 / 1_000
    }

    pub fn saturating_sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(rhs.0))
    }
}

impl Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl AddAssign for SimTime {
    fn add_assign(&mut self, rhs: SimTime) {
        self.0 += rhs.0;
    }
}

impl Sub for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 - rhs.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.3}ms", self.as_ms_f64())
    }
}

/// Anything that can send or receive a simulated message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Endpoint {
    /// Satellite node, by constellation index.
    Sat(usize),
    /// The 5G core (AMF).
    Core,
    /// A terminal. Terminals have no queue or processor pool.
    Ue(UeId),
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Sat(i) => write!(f, "sat{}", i + 1),
            Endpoint::Core => write!(f, "core"),
            Endpoint::Ue(id) => write!(f, "{id}"),
        }
    }
}

/// Signaling classes, which double as queueing priorities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MessageClass {
    UeRequest,
    UeRetransmission,
    ShareBroadcast,
    GaRequest,
    InterSatellite,
    CoreResponse,
    AttachRequest,
    ConfigDelivery,
    NotificationBroadcast,
}

impl MessageClass {
    /// Dequeue priority, lower first: inter-satellite traffic, core
    /// responses, and attachment requests jump ahead of fresh UE requests.
    pub fn priority(self) -> u8 {
        match self {
            MessageClass::InterSatellite => 0,
            MessageClass::CoreResponse => 1,
            MessageClass::AttachRequest => 2,
            MessageClass::GaRequest => 3,
            MessageClass::ConfigDelivery => 4,
            MessageClass::NotificationBroadcast => 5,
            MessageClass::UeRequest | MessageClass::UeRetransmission => 6,
            MessageClass::ShareBroadcast => 7,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            MessageClass::UeRequest => "ue-request",
            MessageClass::UeRetransmission => "ue-retransmission",
            MessageClass::ShareBroadcast => "share-broadcast",
            MessageClass::GaRequest => "ga-request",
            MessageClass::InterSatellite => "inter-satellite",
            MessageClass::CoreResponse => "core-response",
            MessageClass::AttachRequest => "attach-request",
            MessageClass::ConfigDelivery => "config-delivery",
            MessageClass::NotificationBroadcast => "notification-broadcast",
        }
    }
}

/// Cryptographic work items charged against a node processor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CryptoOp {
    Encrypt,
    Decrypt,
    Sign,
    Verify,
    Hash,
    /// One batched hash pass over any number of values, flat cost.
    BatchHash,
}

/// All delay parameters. Times are stored at microsecond precision.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayModel {
    pub inter_satellite: SimTime,
    pub ground_satellite: SimTime,
    pub core_satellite: SimTime,
    pub transmission: SimTime,
    pub physical: SimTime,
    pub logic: SimTime,
    pub encrypt_decrypt: SimTime,
    pub sign_verify: SimTime,
    pub hash: SimTime,
    pub batch_hash: SimTime,
    /// UE-to-aggregator ground broadcast; never touches a satellite queue.
    pub ground_broadcast: SimTime,
    pub propagation: PropagationMode,
    /// Nominal orbit altitude used only by distance-based propagation.
    pub nominal_altitude_km: f64,
    /// Nominal spacing used only by distance-based propagation.
    pub nominal_spacing_km: f64,
}

/// Propagation delay mode. `Fixed` reproduces the declared per-link-class
/// constants; `Distance` scales them with live geometry for sensitivity
/// studies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PropagationMode {
    Fixed,
    Distance,
}

impl Default for DelayModel {
    fn default() -> Self {
        DelayModel {
            inter_satellite: SimTime::from_ms(1),
            ground_satellite: SimTime::from_ms(3),
            core_satellite: SimTime::from_ms(10),
            transmission: SimTime::from_us(1),
            physical: SimTime::from_us(50),
            logic: SimTime::from_us(50),
            encrypt_decrypt: SimTime::from_us(100),
            sign_verify: SimTime::from_us(300),
            hash: SimTime::from_us(50),
            batch_hash: SimTime::from_us(100),
            ground_broadcast: SimTime::from_ms(1),
            propagation: PropagationMode::Fixed,
            nominal_altitude_km: 600.0,
            nominal_spacing_km: 30.0,
        }
    }
}

/// Link classes with distinct propagation characteristics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkClass {
    GroundSatellite,
    InterSatellite,
    CoreSatellite,
    GroundBroadcast,
}

#[derive(Debug, Error, PartialEq)]
pub enum DesError {
    #[error("cannot schedule event at {at} before current time {now}")]
    PastEvent { at: SimTime, now: SimTime },
    #[error("no link between {a} and {b}")]
    UnknownLink { a: String, b: String },
}

/// Classify the link between two endpoints.
pub fn link_class(a: Endpoint, b: Endpoint) -> Result<LinkClass, DesError> {
    match (a, b) {
        (Endpoint::Ue(_), Endpoint::Sat(_)) | (Endpoint::Sat(_), Endpoint::Ue(_)) => {
            Ok(LinkClass::GroundSatellite)
        }
        (Endpoint::Sat(_), Endpoint::Sat(_)) => Ok(LinkClass::InterSatellite),
        (Endpoint::Sat(_), Endpoint::Core) | (Endpoint::Core, Endpoint::Sat(_)) => {
            Ok(LinkClass::CoreSatellite)
        }
        (Endpoint::Ue(_), Endpoint::Ue(_)) => Ok(LinkClass::GroundBroadcast),
        _ => Err(DesError::UnknownLink { a: a.to_string(), b: b.to_string() }),
    }
}

/// End-to-end link delay: fixed per-class propagation plus transmission.
pub fn link_delay(model: &DelayModel, link: LinkClass) -> SimTime {
    let propagation = match link {
        LinkClass::GroundSatellite => model.ground_satellite,
        LinkClass::InterSatellite => model.inter_satellite,
        LinkClass::CoreSatellite => model.core_satellite,
        LinkClass::GroundBroadcast => model.ground_broadcast,
    };
    propagation + model.transmission
}

/// Distance-scaled variant: the declared per-class delay is scaled by the
/// ratio of the live range to the nominal range (slant range through the
/// nominal altitude for ground links, configured spacing for inter-satellite
/// links). Core links have no modeled position and stay fixed.
pub fn link_delay_distance(model: &DelayModel, link: LinkClass, ground_distance_km: f64) -> SimTime {
    let scaled = match link {
        LinkClass::GroundSatellite => {
            let alt = model.nominal_altitude_km;
            let slant = (alt * alt + ground_distance_km * ground_distance_km).sqrt();
            model.ground_satellite.as_ms_f64() * slant / alt
        }
        LinkClass::InterSatellite => {
            model.inter_satellite.as_ms_f64() * ground_distance_km / model.nominal_spacing_km
        }
        LinkClass::CoreSatellite => return link_delay(model, link),
        LinkClass::GroundBroadcast => return link_delay(model, link),
    };
    SimTime::from_ms_f64(scaled) + model.transmission
}

/// Cost of one crypto work item.
pub fn op_cost(model: &DelayModel, op: CryptoOp) -> SimTime {
    match op {
        CryptoOp::Encrypt | CryptoOp::Decrypt => model.encrypt_decrypt,
        CryptoOp::Sign | CryptoOp::Verify => model.sign_verify,
        CryptoOp::Hash => model.hash,
        CryptoOp::BatchHash => model.batch_hash,
    }
}

/// Receiver-side service time: physical layer + logic execution + the
/// message's crypto work items.
pub fn service_time(model: &DelayModel, msg: &Message) -> SimTime {
    let mut t = model.physical + model.logic;
    for &op in &msg.rx_ops {
        t += op_cost(model, op);
    }
    t
}

/// Protocol payloads carried by simulated messages.
#[derive(Debug, Clone)]
pub enum Payload {
    /// Individual handover request (baseline protocol or group fallback),
    /// naming the target cell the UE measured as nearest.
    HoRequest { target: usize },
    /// Source asks target for one UE's configuration.
    HoConfigRequest { ue: UeId },
    /// Target returns one UE's configuration to the source.
    HoConfigResponse { ue: UeId, config: Box<UeHandoverConfig> },
    /// Wire-encoded `GID || share` ground broadcast.
    ShareBroadcast { bytes: Vec<u8> },
    /// Wire-encoded aggregated group request.
    GaRequest { bytes: Vec<u8> },
    /// Source asks target to configure a whole group.
    GroupConfigRequest { gid: GroupId, members: Vec<UeId> },
    /// Target returns the per-member configuration batch.
    GroupConfigResponse { gid: GroupId, configs: Vec<(UeId, UeHandoverConfig)> },
    /// Encrypted per-UE configuration delivery.
    UeConfig(Box<UeHandoverConfig>),
    /// Signed group notification broadcast to one member.
    GroupNotification(Notification),
    /// Commitment list and threshold provisioning for one aggregator.
    GaProvision { gid: GroupId, commitment_map: CommitmentMap, threshold: u32 },
    /// Handover completion notice to the core (per UE or per group).
    CoreNotify,
    /// Core acknowledgement back to the source satellite.
    CoreAck,
    /// Random-access attach to the target satellite.
    AttachRequest,
    /// Attach accept back to the UE.
    AttachAccept,
    /// Internal work item: sign and broadcast a group notification.
    MonitorWork { gid: GroupId, action: crate::protocol::NotifyAction },
}

/// Configuration material a UE receives for its next cell.
#[derive(Debug, Clone)]
pub struct UeHandoverConfig {
    pub target: usize,
    pub target_ran_id: RanId,
    /// Share for the next handover epoch; absent for individually served UEs.
    pub share: Option<Share>,
    pub rand: EpochRand,
    /// Member slot in the next epoch's commitment map.
    pub slot: u32,
    pub target_pk: VerifyingKey,
    /// Opaque stand-in for the derived session key material.
    pub kgnb_token: [u8; 32],
}

/// A simulated signaling unit.
#[derive(Debug, Clone)]
pub struct Message {
    pub id: u64,
    pub class: MessageClass,
    pub sender: Endpoint,
    pub receiver: Endpoint,
    pub size_bytes: u32,
    /// Work the receiving node performs while serving this message.
    pub rx_ops: Vec<CryptoOp>,
    pub created_at: SimTime,
    pub enqueued_at: Option<SimTime>,
    pub service_start_at: Option<SimTime>,
    pub payload: Payload,
}

/// Simulator events, ordered by `(fire_time, sequence)`.
///
/// Entity handlers run when service starts; their outbound messages ride on
/// the `ServiceComplete` event and enter the network when the processor
/// finishes, after the service time (including any sender-side crypto work)
/// has elapsed.
#[derive(Debug)]
pub enum EventKind {
    /// A message reaches its receiver after the link delay.
    MessageArrival(Message),
    /// A node processor finishes the given message and emits its outputs.
    ServiceComplete { node: Endpoint, msg: Message, outputs: Vec<Message> },
    /// A UE retransmission timer fires. Stale generations are ignored.
    TimerExpiry { ue: UeId, generation: u64 },
    /// Scheduled state checks.
    Trigger(Trigger),
}

#[derive(Debug, Clone, Copy)]
pub enum Trigger {
    /// The UE crosses the midline to its next satellite. The epoch tag
    /// makes stale events harmless when the UE has already moved on.
    UeHandover { ue: UeId, epoch: u32 },
    /// The UE leaves its serving footprint.
    FootprintExit { ue: UeId, epoch: u32 },
    /// Periodic group-suitability scan at a satellite.
    GroupMonitor { sat: usize },
}

struct HeapEntry {
    at: SimTime,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.at == other.at && self.seq == other.seq
    }
}

impl Eq for HeapEntry {}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.at, self.seq).cmp(&(other.at, other.seq))
    }
}

/// The future event set plus the simulated clock.
#[derive(Default)]
pub struct Scheduler {
    now: SimTime,
    seq: u64,
    heap: BinaryHeap<Reverse<HeapEntry>>,
}

impl Scheduler {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn pending(&self) -> usize {
        self.heap.len()
    }

    /// Schedule an event. Past-dated events are rejected.
    pub fn schedule(&mut self, at: SimTime, kind: EventKind) -> Result<(), DesError> {
        if at < self.now {
            return Err(DesError::PastEvent { at, now: self.now });
        }
        let seq = self.seq;
        self.seq += 1;
        self.heap.push(Reverse(HeapEntry { at, seq, kind }));
        Ok(())
    }

    pub fn schedule_in(&mut self, delay: SimTime, kind: EventKind) {
        let at = self.now + delay;
        self.schedule(at, kind).expect("future event");
    }

    /// Pop the next event with `fire_time <= t_end`, advancing the clock to
    /// its fire time. Once exhausted, the clock rests at `t_end`.
    pub fn pop_due(&mut self, t_end: SimTime) -> Option<(SimTime, EventKind)> {
        match self.heap.peek() {
            Some(Reverse(entry)) if entry.at <= t_end => {
                let Reverse(entry) = self.heap.pop().unwrap();
                self.now = entry.at;
                Some((entry.at, entry.kind))
            }
            _ => {
                if self.now < t_end {
                    self.now = t_end;
                }
                None
            }
        }
    }
}

/// Outcome of offering a message to a node.
#[derive(Debug)]
pub enum Enqueue {
    /// An idle processor takes the message immediately.
    StartService(Message),
    /// The message waits in the priority queue.
    Queued,
    /// Queue full; the message is lost.
    Dropped(Message),
}

struct QueuedMsg {
    priority: u8,
    arrival: u64,
    msg: Message,
}

impl PartialEq for QueuedMsg {
    fn eq(&self, other: &Self) -> bool {
        self.arrival == other.arrival
    }
}

impl Eq for QueuedMsg {}

impl PartialOrd for QueuedMsg {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for QueuedMsg {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.priority, self.arrival).cmp(&(other.priority, other.arrival))
    }
}

/// Bounded priority queue plus processor pool for one node.
pub struct NodeQueue {
    capacity: usize,
    processors: usize,
    busy: usize,
    arrivals: u64,
    queued: BinaryHeap<Reverse<QueuedMsg>>,
    /// Messages offered to the node, including drops.
    pub received: u64,
    pub dropped: u64,
    pub serviced: u64,
}

impl NodeQueue {
    pub fn new(capacity: usize, processors: usize) -> Self {
        assert!(processors >= 1);
        Self {
            capacity,
            processors,
            busy: 0,
            arrivals: 0,
            queued: BinaryHeap::new(),
            received: 0,
            dropped: 0,
            serviced: 0,
        }
    }

    pub fn queue_len(&self) -> usize {
        self.queued.len()
    }

    pub fn busy(&self) -> usize {
        self.busy
    }

    /// Offer an arriving message: start service on an idle processor, queue
    /// it in (priority, arrival) order, or drop it when the queue is full.
    pub fn offer(&mut self, msg: Message, now: SimTime) -> Enqueue {
        self.offer_with(msg, now, false)
    }

    /// Like [`NodeQueue::offer`], but `force` exempts the message from the
    /// capacity bound. Used for node-internal work items, which have no
    /// arrival queue to overflow.
    pub fn offer_with(&mut self, mut msg: Message, now: SimTime, force: bool) -> Enqueue {
        self.received += 1;
        msg.enqueued_at = Some(now);
        if self.busy < self.processors {
            self.busy += 1;
            msg.service_start_at = Some(now);
            return Enqueue::StartService(msg);
        }
        if force || self.queued.len() < self.capacity {
            let arrival = self.arrivals;
            self.arrivals += 1;
            self.queued.push(Reverse(QueuedMsg { priority: msg.class.priority(), arrival, msg }));
            Enqueue::Queued
        } else {
            self.dropped += 1;
            Enqueue::Dropped(msg)
        }
    }

    /// A processor finished. Returns the next message to serve, if any;
    /// otherwise the processor idles.
    pub fn complete(&mut self, now: SimTime) -> Option<Message> {
        debug_assert!(self.busy > 0);
        self.serviced += 1;
        match self.queued.pop() {
            Some(Reverse(next)) => {
                let mut msg = next.msg;
                msg.service_start_at = Some(now);
                Some(msg)
            }
            None => {
                self.busy -= 1;
                None
            }
        }
    }

    /// Conservation check: everything offered is accounted for.
    pub fn conserved(&self) -> bool {
        self.received == self.dropped + self.serviced + self.queued.len() as u64 + self.busy as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn msg(class: MessageClass, rx_ops: Vec<CryptoOp>) -> Message {
        Message {
            id: 0,
            class,
            sender: Endpoint::Ue(UeId(1)),
            receiver: Endpoint::Sat(0),
            size_bytes: 3000,
            rx_ops,
            created_at: SimTime::ZERO,
            enqueued_at: None,
            service_start_at: None,
            payload: Payload::HoRequest { target: 1 },
        }
    }

    #[test]
    fn schedule_orders_by_time_then_sequence() {
        let mut s = Scheduler::new();
        s.schedule(SimTime::from_ms(5), EventKind::Trigger(Trigger::UeHandover { ue: UeId(1), epoch: 1 })).unwrap();
        s.schedule(SimTime::from_ms(5), EventKind::Trigger(Trigger::UeHandover { ue: UeId(2), epoch: 1 })).unwrap();
        s.schedule(SimTime::ZERO, EventKind::Trigger(Trigger::UeHandover { ue: UeId(3), epoch: 1 })).unwrap();
        let order: Vec<u32> = std::iter::from_fn(|| s.pop_due(SimTime::from_ms(100)))
            .map(|(_, kind)| match kind {
                EventKind::Trigger(Trigger::UeHandover { ue, .. }) => ue.0,
                _ => unreachable!(),
            })
            .collect();
        assert_eq!(order, vec![3, 1, 2]);
    }

    #[test]
    fn schedule_rejects_past_events() {
        let mut s = Scheduler::new();
        s.schedule(SimTime::from_ms(10), EventKind::Trigger(Trigger::GroupMonitor { sat: 0 })).unwrap();
        assert!(s.pop_due(SimTime::from_ms(20)).is_some());
        assert_eq!(s.now(), SimTime::from_ms(10));
        let err = s.schedule(SimTime::from_ms(9), EventKind::Trigger(Trigger::GroupMonitor { sat: 0 }));
        assert!(err.is_err());
    }

    #[test]
    fn run_until_advances_clock_and_stops_at_t_end() {
        let mut s = Scheduler::new();
        assert!(s.pop_due(SimTime::from_ms(50)).is_none());
        assert_eq!(s.now(), SimTime::from_ms(50));

        for t in [55u64, 60, 65] {
            s.schedule(SimTime::from_ms(t), EventKind::Trigger(Trigger::GroupMonitor { sat: 0 })).unwrap();
        }
        let mut fired = 0;
        while s.pop_due(SimTime::from_ms(62)).is_some() {
            fired += 1;
        }
        assert_eq!(fired, 2);
        assert_eq!(s.now(), SimTime::from_ms(62));
        assert_eq!(s.pending(), 1);
    }

    #[test]
    fn link_delays_match_parameter_table() {
        let m = DelayModel::default();
        let ue_sat = link_delay(&m, link_class(Endpoint::Ue(UeId(0)), Endpoint::Sat(0)).unwrap());
        assert_eq!(ue_sat.as_us(), 3001);
        let sat_sat = link_delay(&m, link_class(Endpoint::Sat(0), Endpoint::Sat(1)).unwrap());
        assert_eq!(sat_sat.as_us(), 1001);
        let sat_core = link_delay(&m, link_class(Endpoint::Sat(0), Endpoint::Core).unwrap());
        assert_eq!(sat_core.as_us(), 10001);
        assert!(link_class(Endpoint::Core, Endpoint::Ue(UeId(0))).is_err());
    }

    #[test]
    fn distance_mode_reduces_to_fixed_at_nominal_geometry() {
        let m = DelayModel::default();
        let nominal = link_delay_distance(&m, LinkClass::GroundSatellite, 0.0);
        assert_eq!(nominal.as_us(), 3001);
        let spaced = link_delay_distance(&m, LinkClass::InterSatellite, 30.0);
        assert_eq!(spaced.as_us(), 1001);
        let farther = link_delay_distance(&m, LinkClass::GroundSatellite, 25.0);
        assert!(farther > nominal);
    }

    #[test]
    fn service_time_sums_components() {
        let m = DelayModel::default();
        let decrypt = msg(MessageClass::UeRequest, vec![CryptoOp::Decrypt]);
        assert_eq!(service_time(&m, &decrypt).as_us(), 200);
        let batch = msg(MessageClass::GaRequest, vec![CryptoOp::BatchHash]);
        assert_eq!(service_time(&m, &batch).as_us(), 200);
        let bare = msg(MessageClass::CoreResponse, vec![]);
        assert_eq!(service_time(&m, &bare).as_us(), 100);
    }

    #[test]
    fn empty_node_starts_service_immediately() {
        let mut q = NodeQueue::new(500, 4);
        match q.offer(msg(MessageClass::UeRequest, vec![]), SimTime::from_ms(1)) {
            Enqueue::StartService(m) => {
                assert_eq!(m.enqueued_at, Some(SimTime::from_ms(1)));
                assert_eq!(m.service_start_at, Some(SimTime::from_ms(1)));
            }
            other => panic!("expected immediate service, got {other:?}"),
        }
        assert_eq!(q.busy(), 1);
        assert!(q.conserved());
    }

    #[test]
    fn full_queue_drops() {
        let mut q = NodeQueue::new(500, 4);
        for _ in 0..4 {
            assert!(matches!(q.offer(msg(MessageClass::UeRequest, vec![]), SimTime::ZERO), Enqueue::StartService(_)));
        }
        for _ in 0..500 {
            assert!(matches!(q.offer(msg(MessageClass::UeRequest, vec![]), SimTime::ZERO), Enqueue::Queued));
        }
        assert!(matches!(q.offer(msg(MessageClass::UeRequest, vec![]), SimTime::ZERO), Enqueue::Dropped(_)));
        assert_eq!(q.dropped, 1);
        assert_eq!(q.queue_len(), 500);
        assert!(q.conserved());
    }

    #[test]
    fn priority_classes_jump_the_queue() {
        let mut q = NodeQueue::new(500, 1);
        assert!(matches!(q.offer(msg(MessageClass::UeRequest, vec![]), SimTime::ZERO), Enqueue::StartService(_)));
        for _ in 0..100 {
            assert!(matches!(q.offer(msg(MessageClass::UeRequest, vec![]), SimTime::ZERO), Enqueue::Queued));
        }
        assert!(matches!(q.offer(msg(MessageClass::InterSatellite, vec![]), SimTime::ZERO), Enqueue::Queued));
        let next = q.complete(SimTime::from_ms(1)).expect("queued work");
        assert_eq!(next.class, MessageClass::InterSatellite);
        assert_eq!(next.service_start_at, Some(SimTime::from_ms(1)));
        assert!(next.service_start_at.unwrap() >= next.enqueued_at.unwrap());
    }

    #[test]
    fn processors_idle_when_queue_empties() {
        let mut q = NodeQueue::new(10, 2);
        assert!(matches!(q.offer(msg(MessageClass::UeRequest, vec![]), SimTime::ZERO), Enqueue::StartService(_)));
        assert!(q.complete(SimTime::from_ms(1)).is_none());
        assert_eq!(q.busy(), 0);
        assert_eq!(q.serviced, 1);
        assert!(q.conserved());
    }

    #[test]
    fn fifo_within_priority_class() {
        let mut q = NodeQueue::new(10, 1);
        assert!(matches!(q.offer(msg(MessageClass::UeRequest, vec![]), SimTime::ZERO), Enqueue::StartService(_)));
        let mut a = msg(MessageClass::UeRequest, vec![]);
        a.id = 1;
        let mut b = msg(MessageClass::UeRequest, vec![]);
        b.id = 2;
        q.offer(a, SimTime::ZERO);
        q.offer(b, SimTime::ZERO);
        assert_eq!(q.complete(SimTime::from_ms(1)).unwrap().id, 1);
        assert_eq!(q.complete(SimTime::from_ms(2)).unwrap().id, 2);
    }
}
