//! Group-handover protocol values and logic.
//!
//! The group handover replaces per-UE signaling with an additive threshold
//! scheme. Each group member holds a random secret share issued by the
//! satellite that configured it; the issuing satellite keeps the
//! share-by-commitment map. When members want to hand over they broadcast
//! `(GID, share)` on the ground. Designated group aggregators check each
//! share against a commitment list `Hash(GID || RAND || share)`, XOR the
//! accepted shares into a ticket, and submit one group request once strictly
//! more than `threshold` distinct members have spoken. The source satellite
//! recomputes the XOR from its share map to verify majority intent.
//!
//! Everything here is pure or operates on an explicitly passed state value;
//! the simulator charges the processing costs separately.

use std::collections::HashSet;

use ed25519_dalek::{Signature, Signer, SigningKey, Verifier, VerifyingKey};
use rand::{CryptoRng, Rng, RngCore};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ids::{GroupId, RanId};

/// Default share length in bytes.
pub const DEFAULT_SHARE_BYTES: usize = 16;
/// Epoch nonce length in bytes.
pub const RAND_BYTES: usize = 16;

/// Per-epoch random nonce distributed with the shares.
pub type EpochRand = [u8; RAND_BYTES];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("byte length mismatch: ticket {ticket} vs share {share}")]
    LengthMismatch { ticket: usize, share: usize },
    #[error("requested {requested} aggregators from {available} members")]
    TooFewMembers { requested: usize, available: usize },
    #[error("malformed wire payload: {0}")]
    Malformed(&'static str),
}

/// One member's secret share: a fixed-length random byte string.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Share(pub Vec<u8>);

impl Share {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Hash binding of a share to its group and epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Commitment(pub [u8; 32]);

/// Member-ordered commitment list handed to each aggregator. The position
/// of a commitment is the member's slot index.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CommitmentMap(pub Vec<Commitment>);

impl CommitmentMap {
    pub fn index_of(&self, c: &Commitment) -> Option<u32> {
        self.0.iter().position(|x| x == c).map(|i| i as u32)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Commitment-to-share association held by the issuing satellite, used to
/// recompute tickets during verification.
#[derive(Debug, Clone, Default)]
pub struct CommitmentShareMap {
    entries: Vec<(Commitment, Share)>,
}

impl CommitmentShareMap {
    pub fn get(&self, c: &Commitment) -> Option<&Share> {
        self.entries.iter().find(|(k, _)| k == c).map(|(_, s)| s)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// XOR aggregate of the accepted shares.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ticket(pub Vec<u8>);

impl Ticket {
    pub fn zero(len: usize) -> Self {
        Ticket(vec![0; len])
    }
}

/// The aggregated request a GA submits to the source satellite.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupHandoverRequest {
    pub gid: GroupId,
    pub ticket: Ticket,
    /// Slot indices of the members whose shares were verified and counted.
    pub aggregated_commitment: Vec<u32>,
}

/// Broadcast actions a source satellite can sign.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NotifyAction {
    SwitchToGroupHandover,
    CancelGroupHandover,
}

impl NotifyAction {
    pub fn wire_byte(self) -> u8 {
        match self {
            NotifyAction::SwitchToGroupHandover => 0x01,
            NotifyAction::CancelGroupHandover => 0x02,
        }
    }

    pub fn from_wire_byte(b: u8) -> Option<Self> {
        match b {
            0x01 => Some(NotifyAction::SwitchToGroupHandover),
            0x02 => Some(NotifyAction::CancelGroupHandover),
            _ => None,
        }
    }
}

/// A signed group-handover notification broadcast to members.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Notification {
    pub ran_id: RanId,
    pub gid: GroupId,
    pub action: NotifyAction,
    pub timestamp_ms: u64,
    pub signature: Signature,
}

/// Satellite signing keys.
#[derive(Debug, Clone)]
pub struct SatKeyPair {
    signing: SigningKey,
}

impl SatKeyPair {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        Self { signing: SigningKey::generate(rng) }
    }

    pub fn public(&self) -> VerifyingKey {
        self.signing.verifying_key()
    }
}

/// Reasons a notification is rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RejectReason {
    BadSignature,
    StaleTimestamp,
    Replay,
}

/// Per-receiver record of accepted notifications, for replay rejection.
#[derive(Debug, Clone, Default)]
pub struct SeenNotifications {
    seen: HashSet<(RanId, GroupId, u8, u64)>,
}

/// Aggregator-side protocol state for one group and epoch.
#[derive(Debug, Clone)]
pub struct GaState {
    pub gid: GroupId,
    pub rand: EpochRand,
    pub threshold: u32,
    pub commitment_map: CommitmentMap,
    pub ticket: Ticket,
    pub aggregated_commitment: Vec<u32>,
    pub fired: bool,
}

impl GaState {
    pub fn new(
        gid: GroupId,
        rand: EpochRand,
        threshold: u32,
        commitment_map: CommitmentMap,
        share_len: usize,
    ) -> Self {
        Self {
            gid,
            rand,
            threshold,
            commitment_map,
            ticket: Ticket::zero(share_len),
            aggregated_commitment: Vec::new(),
            fired: false,
        }
    }

    pub fn count(&self) -> u32 {
        self.aggregated_commitment.len() as u32
    }
}

fn push_field(out: &mut Vec<u8>, field: &[u8]) {
    out.extend_from_slice(&(field.len() as u32).to_be_bytes());
    out.extend_from_slice(field);
}

/// Canonical hash input: every field is 4-byte big-endian length prefixed,
/// so variable-length concatenation is unambiguous.
pub fn commitment_over_bytes(gid: &[u8], rand: &[u8], share: &[u8]) -> Commitment {
    let mut input = Vec::with_capacity(12 + gid.len() + rand.len() + share.len());
    push_field(&mut input, gid);
    push_field(&mut input, rand);
    push_field(&mut input, share);
    let digest = Sha256::digest(&input);
    Commitment(digest.into())
}

/// `Hash(GID || RAND || Share)` in the canonical encoding.
pub fn commitment(gid: GroupId, rand: &EpochRand, share: &Share) -> Commitment {
    commitment_over_bytes(&gid.to_bytes(), rand, &share.0)
}

/// Generate `n` independent random shares plus their commitment structures.
/// The commitment list is in member-slot order; the share map is what the
/// issuing satellite keeps for later ticket verification.
pub fn generate_shares<R: Rng>(
    gid: GroupId,
    rand: &EpochRand,
    n: usize,
    share_len: usize,
    rng: &mut R,
) -> (Vec<Share>, CommitmentMap, CommitmentShareMap) {
    assert!(n >= 1, "at least one member share");
    let mut shares = Vec::with_capacity(n);
    let mut commitments = Vec::with_capacity(n);
    let mut entries = Vec::with_capacity(n);
    for _ in 0..n {
        let mut bytes = vec![0u8; share_len];
        rng.fill_bytes(&mut bytes);
        let share = Share(bytes);
        let c = commitment(gid, rand, &share);
        commitments.push(c);
        entries.push((c, share.clone()));
        shares.push(share);
    }
    (shares, CommitmentMap(commitments), CommitmentShareMap { entries })
}

/// Bytewise XOR of a share into a ticket.
pub fn xor_aggregate(ticket: &Ticket, share: &Share) -> Result<Ticket, ProtocolError> {
    if ticket.0.len() != share.0.len() {
        return Err(ProtocolError::LengthMismatch { ticket: ticket.0.len(), share: share.0.len() });
    }
    Ok(Ticket(ticket.0.iter().zip(&share.0).map(|(a, b)| a ^ b).collect()))
}

/// Aggregator transition on one received broadcast.
///
/// Broadcasts for other groups, shares that do not match any commitment, and
/// duplicate member slots are silently ignored. The request is emitted
/// exactly once, at the first instant the verified count strictly exceeds
/// the threshold.
pub fn ga_on_broadcast(
    state: &mut GaState,
    gid: GroupId,
    share: &Share,
) -> Option<GroupHandoverRequest> {
    if gid != state.gid {
        return None;
    }
    let c = commitment(state.gid, &state.rand, share);
    let Some(index) = state.commitment_map.index_of(&c) else {
        return None;
    };
    if state.aggregated_commitment.contains(&index) {
        return None;
    }
    let Ok(next) = xor_aggregate(&state.ticket, share) else {
        return None;
    };
    state.ticket = next;
    state.aggregated_commitment.push(index);
    if state.count() > state.threshold && !state.fired {
        state.fired = true;
        return Some(GroupHandoverRequest {
            gid: state.gid,
            ticket: state.ticket.clone(),
            aggregated_commitment: state.aggregated_commitment.clone(),
        });
    }
    None
}

/// Source-satellite check of a group request: recompute the XOR of the
/// claimed members' shares from the share map and compare. Unknown indices
/// or missing shares fail verification.
pub fn verify_ticket(
    req: &GroupHandoverRequest,
    csm: &CommitmentShareMap,
    cm: &CommitmentMap,
) -> bool {
    let mut expected = Ticket::zero(req.ticket.0.len());
    for &index in &req.aggregated_commitment {
        let Some(c) = cm.0.get(index as usize) else {
            return false;
        };
        let Some(share) = csm.get(c) else {
            return false;
        };
        match xor_aggregate(&expected, share) {
            Ok(next) => expected = next,
            Err(_) => return false,
        }
    }
    expected == req.ticket
}

/// Message actually signed: `action || nonce` with
/// `nonce = RAN-ID || RAND || GID || TimeStamp`, canonically encoded.
fn notification_message(
    ran_id: RanId,
    rand: &EpochRand,
    gid: GroupId,
    action: NotifyAction,
    timestamp_ms: u64,
) -> Vec<u8> {
    let mut m = Vec::with_capacity(64);
    push_field(&mut m, &[action.wire_byte()]);
    push_field(&mut m, &ran_id.to_bytes());
    push_field(&mut m, rand);
    push_field(&mut m, &gid.to_bytes());
    push_field(&mut m, &timestamp_ms.to_be_bytes());
    m
}

/// Sign a group-handover notification. The epoch RAND enters the signed
/// message but is never transmitted; receivers know it from share delivery.
pub fn make_notification(
    keys: &SatKeyPair,
    ran_id: RanId,
    rand: &EpochRand,
    gid: GroupId,
    action: NotifyAction,
    timestamp_ms: u64,
) -> Notification {
    let m = notification_message(ran_id, rand, gid, action, timestamp_ms);
    Notification { ran_id, gid, action, timestamp_ms, signature: keys.signing.sign(&m) }
}

/// Signature check alone, reconstructing the signed message from the
/// receiver's known epoch RAND.
pub fn verify_signature(pk: &VerifyingKey, notif: &Notification, rand: &EpochRand) -> bool {
    let m = notification_message(notif.ran_id, rand, notif.gid, notif.action, notif.timestamp_ms);
    pk.verify(&m, &notif.signature).is_ok()
}

/// Freshness-window and replay check; accepted notifications are recorded
/// in the seen-set.
pub fn register_fresh(
    notif: &Notification,
    freshness_window_ms: u64,
    now_ms: u64,
    seen: &mut SeenNotifications,
) -> Result<(), RejectReason> {
    if now_ms.abs_diff(notif.timestamp_ms) > freshness_window_ms {
        return Err(RejectReason::StaleTimestamp);
    }
    let key = (notif.ran_id, notif.gid, notif.action.wire_byte(), notif.timestamp_ms);
    if !seen.seen.insert(key) {
        return Err(RejectReason::Replay);
    }
    Ok(())
}

/// Verify signature, freshness, and replay status of a notification.
/// Accepted notifications are recorded in the seen-set.
pub fn verify_notification(
    pk: &VerifyingKey,
    notif: &Notification,
    rand: &EpochRand,
    freshness_window_ms: u64,
    now_ms: u64,
    seen: &mut SeenNotifications,
) -> Result<(), RejectReason> {
    if !verify_signature(pk, notif, rand) {
        return Err(RejectReason::BadSignature);
    }
    register_fresh(notif, freshness_window_ms, now_ms, seen)
}

/// `floor(fraction * connected)`. With the strict `count > threshold` gate
/// this requires a strict majority at fraction 0.5.
pub fn decide_threshold(connected: u32, fraction: f64) -> u32 {
    assert!(connected >= 1);
    assert!(fraction > 0.0 && fraction < 1.0);
    (fraction * connected as f64).floor() as u32
}

/// Choose `k` distinct aggregators uniformly at random (seeded by the run).
pub fn select_aggregators<T: Copy, R: Rng>(
    members: &[T],
    k: usize,
    rng: &mut R,
) -> Result<Vec<T>, ProtocolError> {
    if k < 1 || k > members.len() {
        return Err(ProtocolError::TooFewMembers { requested: k, available: members.len() });
    }
    // Partial Fisher-Yates over a scratch index vector.
    let mut indices: Vec<usize> = (0..members.len()).collect();
    let mut picked = Vec::with_capacity(k);
    for i in 0..k {
        let j = rng.gen_range(i..indices.len());
        indices.swap(i, j);
        picked.push(members[indices[i]]);
    }
    Ok(picked)
}

// ---------------------------------------------------------------------------
// Wire encodings
// ---------------------------------------------------------------------------
//
// Exact byte layouts used inside simulator message payloads and pinned by
// golden tests. Variable-length fields carry a 4-byte big-endian length
// prefix; counts and indices are 4-byte big-endian integers.

fn read_field<'a>(buf: &'a [u8], pos: &mut usize) -> Result<&'a [u8], ProtocolError> {
    if buf.len() < *pos + 4 {
        return Err(ProtocolError::Malformed("truncated length prefix"));
    }
    let len = u32::from_be_bytes(buf[*pos..*pos + 4].try_into().unwrap()) as usize;
    *pos += 4;
    if buf.len() < *pos + len {
        return Err(ProtocolError::Malformed("truncated field"));
    }
    let field = &buf[*pos..*pos + len];
    *pos += len;
    Ok(field)
}

fn read_u32(buf: &[u8], pos: &mut usize) -> Result<u32, ProtocolError> {
    if buf.len() < *pos + 4 {
        return Err(ProtocolError::Malformed("truncated u32"));
    }
    let v = u32::from_be_bytes(buf[*pos..*pos + 4].try_into().unwrap());
    *pos += 4;
    Ok(v)
}

/// Share broadcast: `GID (length-prefixed) || Share`. Deliberately carries
/// nothing else; the broadcast leaks no 5G identifier.
pub fn encode_share_broadcast(gid: GroupId, share: &Share) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + share.0.len());
    push_field(&mut out, &gid.to_bytes());
    out.extend_from_slice(&share.0);
    out
}

pub fn decode_share_broadcast(buf: &[u8]) -> Result<(GroupId, Share), ProtocolError> {
    let mut pos = 0;
    let gid_bytes = read_field(buf, &mut pos)?;
    if gid_bytes.len() != 4 {
        return Err(ProtocolError::Malformed("gid must be 4 bytes"));
    }
    let gid = GroupId(u32::from_be_bytes(gid_bytes.try_into().unwrap()));
    Ok((gid, Share(buf[pos..].to_vec())))
}

/// Group request: `GID || Ticket || count || index list`, all 4-byte
/// big-endian, GID and ticket length-prefixed.
pub fn encode_group_request(req: &GroupHandoverRequest) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + req.ticket.0.len() + 4 * req.aggregated_commitment.len());
    push_field(&mut out, &req.gid.to_bytes());
    push_field(&mut out, &req.ticket.0);
    out.extend_from_slice(&(req.aggregated_commitment.len() as u32).to_be_bytes());
    for index in &req.aggregated_commitment {
        out.extend_from_slice(&index.to_be_bytes());
    }
    out
}

pub fn decode_group_request(buf: &[u8]) -> Result<GroupHandoverRequest, ProtocolError> {
    let mut pos = 0;
    let gid_bytes = read_field(buf, &mut pos)?;
    if gid_bytes.len() != 4 {
        return Err(ProtocolError::Malformed("gid must be 4 bytes"));
    }
    let gid = GroupId(u32::from_be_bytes(gid_bytes.try_into().unwrap()));
    let ticket = Ticket(read_field(buf, &mut pos)?.to_vec());
    let count = read_u32(buf, &mut pos)? as usize;
    let mut indices = Vec::with_capacity(count);
    for _ in 0..count {
        indices.push(read_u32(buf, &mut pos)?);
    }
    if pos != buf.len() {
        return Err(ProtocolError::Malformed("trailing bytes"));
    }
    Ok(GroupHandoverRequest { gid, ticket, aggregated_commitment: indices })
}

/// Notification: `RAN-ID || GID || action byte || timestamp (8-byte BE ms)
/// || signature (64 bytes)`.
pub fn encode_notification(n: &Notification) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + 64);
    push_field(&mut out, &n.ran_id.to_bytes());
    push_field(&mut out, &n.gid.to_bytes());
    out.push(n.action.wire_byte());
    out.extend_from_slice(&n.timestamp_ms.to_be_bytes());
    out.extend_from_slice(&n.signature.to_bytes());
    out
}

pub fn decode_notification(buf: &[u8]) -> Result<Notification, ProtocolError> {
    let mut pos = 0;
    let ran_bytes = read_field(buf, &mut pos)?;
    if ran_bytes.len() != 4 {
        return Err(ProtocolError::Malformed("ran id must be 4 bytes"));
    }
    let ran_id = RanId(u32::from_be_bytes(ran_bytes.try_into().unwrap()));
    let gid_bytes = read_field(buf, &mut pos)?;
    if gid_bytes.len() != 4 {
        return Err(ProtocolError::Malformed("gid must be 4 bytes"));
    }
    let gid = GroupId(u32::from_be_bytes(gid_bytes.try_into().unwrap()));
    if buf.len() < pos + 1 + 8 + 64 {
        return Err(ProtocolError::Malformed("truncated notification"));
    }
    let action = NotifyAction::from_wire_byte(buf[pos]).ok_or(ProtocolError::Malformed("bad action byte"))?;
    pos += 1;
    let timestamp_ms = u64::from_be_bytes(buf[pos..pos + 8].try_into().unwrap());
    pos += 8;
    let sig_bytes: [u8; 64] =
        buf[pos..pos + 64].try_into().map_err(|_| ProtocolError::Malformed("bad signature length"))?;
    if pos + 64 != buf.len() {
        return Err(ProtocolError::Malformed("trailing bytes"));
    }
    Ok(Notification { ran_id, gid, action, timestamp_ms, signature: Signature::from_bytes(&sig_bytes) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;
    use std::collections::HashSet;

    const RAND: EpochRand = [0u8; RAND_BYTES];

    fn rng(seed: u64) -> ChaCha12Rng {
        ChaCha12Rng::seed_from_u64(seed)
    }

    #[test]
    fn generate_shares_basics() {
        let (shares, cm, csm) =
            generate_shares(GroupId(1), &RAND, 1, DEFAULT_SHARE_BYTES, &mut rng(1));
        assert_eq!(shares.len(), 1);
        assert_eq!(cm.len(), 1);
        assert_eq!(csm.len(), 1);
        assert_eq!(csm.get(&cm.0[0]), Some(&shares[0]));
    }

    #[test]
    fn generate_shares_deterministic_per_seed() {
        let a = generate_shares(GroupId(1), &RAND, 5, DEFAULT_SHARE_BYTES, &mut rng(42));
        let b = generate_shares(GroupId(1), &RAND, 5, DEFAULT_SHARE_BYTES, &mut rng(42));
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn generate_shares_distinct() {
        // 16-byte shares: collision probability < 2^-90 for 100 draws.
        let (shares, _, _) = generate_shares(GroupId(1), &RAND, 100, DEFAULT_SHARE_BYTES, &mut rng(2));
        let set: HashSet<_> = shares.iter().collect();
        assert_eq!(set.len(), 100);
    }

    #[test]
    fn commitment_is_deterministic_and_sensitive() {
        let share = Share(vec![1, 2, 3, 4]);
        let a = commitment(GroupId(7), &RAND, &share);
        let b = commitment(GroupId(7), &RAND, &share);
        assert_eq!(a, b);
        let mut flipped = share.clone();
        flipped.0[0] ^= 0x01;
        assert_ne!(a, commitment(GroupId(7), &RAND, &flipped));
        assert_ne!(a, commitment(GroupId(8), &RAND, &share));
    }

    #[test]
    fn commitment_matches_reference_hash_oracle() {
        // Independent path: a from-scratch SHA-256 over the canonical
        // encoding of gid="G1", rand=0x0102, share=0x0A0B, plus the digest
        // frozen from that oracle.
        let c = commitment_over_bytes(b"G1", &[0x01, 0x02], &[0x0A, 0x0B]);
        let frozen = hex::decode("d956567573614a6ee03e65d109d615a971e02ff3ce46d4402fb97c19da39c8be").unwrap();
        assert_eq!(c.0.as_slice(), frozen.as_slice());

        let mut canonical = Vec::new();
        push_field(&mut canonical, b"G1");
        push_field(&mut canonical, &[0x01, 0x02]);
        push_field(&mut canonical, &[0x0A, 0x0B]);
        assert_eq!(reference_sha256(&canonical).as_slice(), frozen.as_slice());
    }

    #[test]
    fn xor_examples() {
        let t = xor_aggregate(&Ticket(vec![0x0F]), &Share(vec![0xF0])).unwrap();
        assert_eq!(t.0, vec![0xFF]);
        let s = Share(vec![0xAB, 0xCD]);
        let z = xor_aggregate(&Ticket(s.0.clone()), &s).unwrap();
        assert_eq!(z.0, vec![0, 0]);
        assert!(xor_aggregate(&Ticket(vec![0; 2]), &Share(vec![0; 3])).is_err());
    }

    #[test]
    fn xor_order_independent() {
        let a = Share(vec![1, 2]);
        let b = Share(vec![3, 4]);
        let c = Share(vec![5, 6]);
        let abc = xor_aggregate(&xor_aggregate(&xor_aggregate(&Ticket::zero(2), &a).unwrap(), &b).unwrap(), &c).unwrap();
        let cab = xor_aggregate(&xor_aggregate(&xor_aggregate(&Ticket::zero(2), &c).unwrap(), &a).unwrap(), &b).unwrap();
        assert_eq!(abc, cab);
    }

    fn fixture(n: usize, threshold: u32) -> (Vec<Share>, CommitmentMap, CommitmentShareMap, GaState) {
        let gid = GroupId(9);
        let (shares, cm, csm) = generate_shares(gid, &RAND, n, DEFAULT_SHARE_BYTES, &mut rng(5));
        let ga = GaState::new(gid, RAND, threshold, cm.clone(), DEFAULT_SHARE_BYTES);
        (shares, cm, csm, ga)
    }

    #[test]
    fn ga_ignores_wrong_gid_and_unknown_shares() {
        let (shares, _, _, mut ga) = fixture(4, 1);
        assert!(ga_on_broadcast(&mut ga, GroupId(8), &shares[0]).is_none());
        assert_eq!(ga.count(), 0);
        assert!(ga_on_broadcast(&mut ga, GroupId(9), &Share(vec![0xEE; DEFAULT_SHARE_BYTES])).is_none());
        assert_eq!(ga.count(), 0);
    }

    #[test]
    fn ga_fires_strictly_above_threshold_with_xor_of_counted() {
        let (shares, _, _, mut ga) = fixture(5, 2);
        assert!(ga_on_broadcast(&mut ga, GroupId(9), &shares[0]).is_none());
        assert!(ga_on_broadcast(&mut ga, GroupId(9), &shares[1]).is_none()); // count == threshold
        let req = ga_on_broadcast(&mut ga, GroupId(9), &shares[3]).expect("fires at threshold+1");
        // Brute-force XOR of the accepted multiset.
        let mut expect = Ticket::zero(DEFAULT_SHARE_BYTES);
        for s in [&shares[0], &shares[1], &shares[3]] {
            expect = xor_aggregate(&expect, s).unwrap();
        }
        assert_eq!(req.ticket, expect);
        assert_eq!(req.aggregated_commitment, vec![0, 1, 3]);
    }

    #[test]
    fn ga_counts_duplicates_once_and_fires_once() {
        let (shares, _, _, mut ga) = fixture(3, 0);
        let first = ga_on_broadcast(&mut ga, GroupId(9), &shares[2]);
        assert!(first.is_some());
        assert!(ga_on_broadcast(&mut ga, GroupId(9), &shares[2]).is_none());
        assert!(ga_on_broadcast(&mut ga, GroupId(9), &shares[0]).is_none());
        assert_eq!(ga.count(), 2);
        assert!(ga.fired);
    }

    #[test]
    fn verify_ticket_accepts_exact_subset_and_rejects_tampering() {
        let (shares, cm, csm, _) = fixture(5, 0);
        let mut ticket = Ticket::zero(DEFAULT_SHARE_BYTES);
        for s in &shares[0..3] {
            ticket = xor_aggregate(&ticket, s).unwrap();
        }
        let req = GroupHandoverRequest { gid: GroupId(9), ticket, aggregated_commitment: vec![0, 1, 2] };
        assert!(verify_ticket(&req, &csm, &cm));

        let mut bad = req.clone();
        bad.ticket.0[0] ^= 0x80;
        assert!(!verify_ticket(&bad, &csm, &cm));

        let mut unknown = req.clone();
        unknown.aggregated_commitment.push(99);
        assert!(!verify_ticket(&unknown, &csm, &cm));
    }

    #[test]
    fn verify_ticket_empty_zero_is_structurally_true() {
        // Degenerate case: rejected upstream by the threshold gate.
        let (_, cm, csm, _) = fixture(3, 0);
        let req = GroupHandoverRequest {
            gid: GroupId(9),
            ticket: Ticket::zero(DEFAULT_SHARE_BYTES),
            aggregated_commitment: vec![],
        };
        assert!(verify_ticket(&req, &csm, &cm));
    }

    #[test]
    fn notification_round_trip_and_distinct_signatures() {
        let keys = SatKeyPair::generate(&mut rng(3));
        let n1 = make_notification(&keys, RanId(1), &RAND, GroupId(4), NotifyAction::SwitchToGroupHandover, 100);
        let mut seen = SeenNotifications::default();
        assert_eq!(verify_notification(&keys.public(), &n1, &RAND, 5000, 120, &mut seen), Ok(()));

        let cancel = make_notification(&keys, RanId(1), &RAND, GroupId(4), NotifyAction::CancelGroupHandover, 100);
        assert_ne!(encode_notification(&n1), encode_notification(&cancel));

        let later = make_notification(&keys, RanId(1), &RAND, GroupId(4), NotifyAction::SwitchToGroupHandover, 101);
        assert_ne!(n1.signature, later.signature);
    }

    #[test]
    fn notification_rejects_replay_stale_and_forgery() {
        let keys = SatKeyPair::generate(&mut rng(4));
        let n = make_notification(&keys, RanId(2), &RAND, GroupId(1), NotifyAction::SwitchToGroupHandover, 1000);
        let mut seen = SeenNotifications::default();
        assert_eq!(verify_notification(&keys.public(), &n, &RAND, 5000, 1500, &mut seen), Ok(()));
        assert_eq!(
            verify_notification(&keys.public(), &n, &RAND, 5000, 1500, &mut seen),
            Err(RejectReason::Replay)
        );

        let mut fresh_seen = SeenNotifications::default();
        assert_eq!(
            verify_notification(&keys.public(), &n, &RAND, 5000, 10_000, &mut fresh_seen),
            Err(RejectReason::StaleTimestamp)
        );

        let mut forged = n.clone();
        let mut sig = forged.signature.to_bytes();
        sig[0] ^= 0x01;
        forged.signature = Signature::from_bytes(&sig);
        assert_eq!(
            verify_notification(&keys.public(), &forged, &RAND, 5000, 1500, &mut fresh_seen),
            Err(RejectReason::BadSignature)
        );
    }

    #[test]
    fn threshold_majority_semantics() {
        assert_eq!(decide_threshold(10, 0.5), 5); // 6 shares trigger
        assert_eq!(decide_threshold(1, 0.5), 0); // singleton triggers itself
        assert_eq!(decide_threshold(7, 0.5), 3); // 4 shares trigger
    }

    #[test]
    fn aggregator_selection() {
        let members: Vec<u32> = (0..10).collect();
        let picked = select_aggregators(&members, 2, &mut rng(6)).unwrap();
        assert_eq!(picked.len(), 2);
        assert_ne!(picked[0], picked[1]);

        let all = select_aggregators(&members, 10, &mut rng(6)).unwrap();
        let set: HashSet<_> = all.iter().collect();
        assert_eq!(set.len(), 10);

        let again = select_aggregators(&members, 2, &mut rng(6)).unwrap();
        assert_eq!(picked, again);

        assert!(select_aggregators(&members, 11, &mut rng(6)).is_err());
    }

    #[test]
    fn share_broadcast_wire_is_gid_and_share_only() {
        let share = Share(vec![0xAA; DEFAULT_SHARE_BYTES]);
        let buf = encode_share_broadcast(GroupId(300), &share);
        // 4-byte length + 4-byte gid + raw share, nothing else.
        assert_eq!(buf.len(), 8 + DEFAULT_SHARE_BYTES);
        let (gid, decoded) = decode_share_broadcast(&buf).unwrap();
        assert_eq!(gid, GroupId(300));
        assert_eq!(decoded, share);
    }

    #[test]
    fn wire_golden_vectors() {
        let share = Share(vec![0x0A, 0x0B]);
        let buf = encode_share_broadcast(GroupId(1), &share);
        assert_eq!(hex::encode(&buf), "00000004000000010a0b");

        let req = GroupHandoverRequest {
            gid: GroupId(2),
            ticket: Ticket(vec![0xFF, 0x00]),
            aggregated_commitment: vec![0, 3],
        };
        let buf = encode_group_request(&req);
        assert_eq!(hex::encode(&buf), "000000040000000200000002ff00000000020000000000000003");
        assert_eq!(decode_group_request(&buf).unwrap(), req);
    }

    #[test]
    fn group_request_round_trip_and_malformed() {
        let req = GroupHandoverRequest {
            gid: GroupId(77),
            ticket: Ticket(vec![1; DEFAULT_SHARE_BYTES]),
            aggregated_commitment: vec![5, 1, 9],
        };
        let buf = encode_group_request(&req);
        assert_eq!(decode_group_request(&buf).unwrap(), req);
        assert!(decode_group_request(&buf[..buf.len() - 1]).is_err());
        assert!(decode_group_request(&[]).is_err());
    }

    #[test]
    fn notification_wire_round_trip() {
        let keys = SatKeyPair::generate(&mut rng(9));
        let n = make_notification(&keys, RanId(3), &RAND, GroupId(12), NotifyAction::CancelGroupHandover, 4242);
        let buf = encode_notification(&n);
        assert_eq!(decode_notification(&buf).unwrap(), n);
        assert!(decode_notification(&buf[..20]).is_err());
    }

    // Minimal from-scratch SHA-256 (FIPS 180-4), used only as the
    // independent oracle for the commitment hash.
    fn reference_sha256(data: &[u8]) -> [u8; 32] {
        const K: [u32; 64] = [
            0x428a2f98, 0x71374491, 0xb5c0fbcf, 0xe9b5dba5, 0x3956c25b, 0x59f111f1, 0x923f82a4,
            0xab1c5ed5, 0xd807aa98, 0x12835b01, 0x243185be, 0x550c7dc3, 0x72be5d74, 0x80deb1fe,
            0x9bdc06a7, 0xc19bf174, 0xe49b69c1, 0xefbe4786, 0x0fc19dc6, 0x240ca1cc, 0x2de92c6f,
            0x4a7484aa, 0x5cb0a9dc, 0x76f988da, 0x983e5152, 0xa831c66d, 0xb00327c8, 0xbf597fc7,
            0xc6e00bf3, 0xd5a79147, 0x06ca6351, 0x14292967, 0x27b70a85, 0x2e1b2138, 0x4d2c6dfc,
            0x53380d13, 0x650a7354, 0x766a0abb, 0x81c2c92e, 0x92722c85, 0xa2bfe8a1, 0xa81a664b,
            0xc24b8b70, 0xc76c51a3, 0xd192e819, 0xd6990624, 0xf40e3585, 0x106aa070, 0x19a4c116,
            0x1e376c08, 0x2748774c, 0x34b0bcb5, 0x391c0cb3, 0x4ed8aa4a, 0x5b9cca4f, 0x682e6ff3,
            0x748f82ee, 0x78a5636f, 0x84c87814, 0x8cc70208, 0x90befffa, 0xa4506ceb, 0xbef9a3f7,
            0xc67178f2,
        ];
        let mut h: [u32; 8] = [
            0x6a09e667, 0xbb67ae85, 0x3c6ef372, 0xa54ff53a, 0x510e527f, 0x9b05688c, 0x1f83d9ab,
            0x5be0cd19,
        ];
        let mut msg = data.to_vec();
        let bit_len = (data.len() as u64) * 8;
        msg.push(0x80);
        while msg.len() % 64 != 56 {
            msg.push(0);
        }
        msg.extend_from_slice(&bit_len.to_be_bytes());
        for block in msg.chunks(64) {
            let mut w = [0u32; 64];
            for (i, word) in block.chunks(4).enumerate() {
                w[i] = u32::from_be_bytes(word.try_into().unwrap());
            }
            for i in 16..64 {
                let s0 = w[i - 15].rotate_right(7) ^ w[i - 15].rotate_right(18) ^ (w[i - 15] >> 3);
                let s1 = w[i - 2].rotate_right(17) ^ w[i - 2].rotate_right(19) ^ (w[i - 2] >> 10);
                w[i] = w[i - 16]
                    .wrapping_add(s0)
                    .wrapping_add(w[i - 7])
                    .wrapping_add(s1);
            }
            let [mut a, mut b, mut c, mut d, mut e, mut f, mut g, mut hh] = h;
            for i in 0..64 {
                let s1 = e.rotate_right(6) ^ e.rotate_right(11) ^ e.rotate_right(25);
                let ch = (e & f) ^ ((!e) & g);
                let t1 = hh
                    .wrapping_add(s1)
                    .wrapping_add(ch)
                    .wrapping_add(K[i])
                    .wrapping_add(w[i]);
                let s0 = a.rotate_right(2) ^ a.rotate_right(13) ^ a.rotate_right(22);
                let maj = (a & b) ^ (a & c) ^ (b & c);
                let t2 = s0.wrapping_add(maj);
                hh = g;
                g = f;
                f = e;
                e = d.wrapping_add(t1);
                d = c;
                c = b;
                b = a;
                a = t1.wrapping_add(t2);
            }
            h[0] = h[0].wrapping_add(a);
            h[1] = h[1].wrapping_add(b);
            h[2] = h[2].wrapping_add(c);
            h[3] = h[3].wrapping_add(d);
            h[4] = h[4].wrapping_add(e);
            h[5] = h[5].wrapping_add(f);
            h[6] = h[6].wrapping_add(g);
            h[7] = h[7].wrapping_add(hh);
        }
        let mut out = [0u8; 32];
        for (i, word) in h.iter().enumerate() {
            out[i * 4..i * 4 + 4].copy_from_slice(&word.to_be_bytes());
        }
        out
    }
}
