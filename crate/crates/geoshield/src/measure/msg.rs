//! Signed measurement messages and their validity rules.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::core::{Digest, DigestWriter, NodeId, RegionId, Signature, Signer, SimDuration, Verifier};

/// Digest every measurer of `region` signs in round `n`; `extras` covers PoCs and RP payloads.
pub fn round_payload(region: RegionId, n: u64, extras: &Digest) -> Digest {
    let mut w = DigestWriter::new("round");
    w.u32(region.0).u64(n).digest(extras);
    w.finish()
}

/// Round signature share.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SigShare {
    pub region: RegionId,
    pub n: u64,
    pub extras: Digest,
    pub sig: Signature,
}

impl SigShare {
    pub fn new(signer: &Signer, region: RegionId, n: u64, extras: Digest) -> Self {
        SigShare { region, n, extras, sig: signer.sign_digest(&round_payload(region, n, &extras)) }
    }

    pub fn is_valid(&self, verifier: &Verifier) -> bool {
        verifier.check(&round_payload(self.region, self.n, &self.extras), &self.sig)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeartbeatError {
    /// Fewer than `f + 1` distinct measurer signatures verify on the round payload.
    TooFewSignatures { valid: usize, needed: usize },
    /// The sender's outer signature does not verify or the sender is not a measurer.
    BadOuterSignature,
}

impl fmt::Display for HeartbeatError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HeartbeatError::TooFewSignatures { valid, needed } => write!(f, "{valid} of {needed} signatures"),
            HeartbeatError::BadOuterSignature => write!(f, "bad outer signature"),
        }
    }
}

/// Multi-signed round message sent from an upstream measurer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Heartbeat {
    pub sender: NodeId,
    pub region: RegionId,
    pub n: u64,
    pub extras: Digest,
    pub sigs: Vec<Signature>,
    pub outer: Signature,
}

impl Heartbeat {
    fn body_digest(sender: NodeId, region: RegionId, n: u64, extras: &Digest, sigs: &[Signature]) -> Digest {
        let mut w = DigestWriter::new("hb");
        w.u32(sender.0).u32(region.0).u64(n).digest(extras).u64(sigs.len() as u64);
        for s in sigs {
            w.u32(s.signer.0).digest(&s.tag);
        }
        w.finish()
    }

    pub fn build(signer: &Signer, region: RegionId, n: u64, extras: Digest, sigs: Vec<Signature>) -> Self {
        let body = Self::body_digest(signer.node(), region, n, &extras, &sigs);
        Heartbeat { sender: signer.node(), region, n, extras, sigs, outer: signer.sign_digest(&body) }
    }

    pub fn digest(&self) -> Digest {
        let mut w = DigestWriter::new("hb-full");
        w.digest(&Self::body_digest(self.sender, self.region, self.n, &self.extras, &self.sigs))
            .u32(self.outer.signer.0)
            .digest(&self.outer.tag);
        w.finish()
    }

    /// Number of distinct `measurers` whose signature verifies on this round's payload.
    pub fn valid_signers(&self, verifier: &Verifier, measurers: &[NodeId]) -> usize {
        let payload = round_payload(self.region, self.n, &self.extras);
        let mut seen = BTreeSet::new();
        for s in &self.sigs {
            if measurers.contains(&s.signer) && verifier.check(&payload, s) {
                seen.insert(s.signer);
            }
        }
        seen.len()
    }

    /// Valid iff `f + 1` measurer signatures verify and the sender's outer signature verifies.
    pub fn validate(&self, verifier: &Verifier, measurers: &[NodeId], f: usize) -> Result<(), HeartbeatError> {
        if !measurers.contains(&self.sender) || self.outer.signer != self.sender {
            return Err(HeartbeatError::BadOuterSignature);
        }
        let body = Self::body_digest(self.sender, self.region, self.n, &self.extras, &self.sigs);
        if !verifier.check(&body, &self.outer) {
            return Err(HeartbeatError::BadOuterSignature);
        }
        let valid = self.valid_signers(verifier, measurers);
        if valid < f + 1 {
            return Err(HeartbeatError::TooFewSignatures { valid, needed: f + 1 });
        }
        Ok(())
    }
}

/// A downstream measurer's latency claim for one received heartbeat.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Proposal {
    pub proposer: NodeId,
    pub n: u64,
    pub latency: SimDuration,
    pub hb: Heartbeat,
    pub sig: Signature,
}

impl Proposal {
    fn body_digest(proposer: NodeId, n: u64, latency: SimDuration, hb: &Digest) -> Digest {
        let mut w = DigestWriter::new("prop");
        w.u32(proposer.0).u64(n).u64(latency.as_nanos()).digest(hb);
        w.finish()
    }

    pub fn build(signer: &Signer, n: u64, latency: SimDuration, hb: Heartbeat) -> Self {
        let sig = signer.sign_digest(&Self::body_digest(signer.node(), n, latency, &hb.digest()));
        Proposal { proposer: signer.node(), n, latency, hb, sig }
    }

    /// Upstream measurer whose heartbeat this proposal measures.
    pub fn upstream(&self) -> NodeId {
        self.hb.sender
    }

    pub fn signature_ok(&self, verifier: &Verifier) -> bool {
        self.sig.signer == self.proposer
            && verifier.check(&Self::body_digest(self.proposer, self.n, self.latency, &self.hb.digest()), &self.sig)
    }

    /// Signature, proposer role and embedded heartbeat all check out.
    pub fn is_valid(&self, verifier: &Verifier, up: &[NodeId], f_up: usize, down: &[NodeId]) -> bool {
        down.contains(&self.proposer)
            && self.hb.n == self.n
            && self.signature_ok(verifier)
            && self.hb.validate(verifier, up, f_up).is_ok()
    }

    pub fn digest(&self) -> Digest {
        let mut w = DigestWriter::new("prop-full");
        w.digest(&Self::body_digest(self.proposer, self.n, self.latency, &self.hb.digest()))
            .digest(&self.sig.tag);
        w.finish()
    }
}

/// Value carried by an accept message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AcceptValue {
    Latency(SimDuration),
    Timeout,
}

impl fmt::Display for AcceptValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AcceptValue::Latency(d) => write!(f, "{d}"),
            AcceptValue::Timeout => write!(f, "TIMEOUT"),
        }
    }
}

impl AcceptValue {
    pub fn latency(self) -> Option<SimDuration> {
        match self {
            AcceptValue::Latency(d) => Some(d),
            AcceptValue::Timeout => None,
        }
    }

    fn encode(self, w: &mut DigestWriter) {
        match self {
            AcceptValue::Latency(d) => w.u8(0).u64(d.as_nanos()),
            AcceptValue::Timeout => w.u8(1),
        };
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcceptMsg {
    pub sender: NodeId,
    pub n: u64,
    pub value: AcceptValue,
    pub sig: Signature,
}

impl AcceptMsg {
    fn body_digest(sender: NodeId, n: u64, value: AcceptValue) -> Digest {
        let mut w = DigestWriter::new("acc");
        w.u32(sender.0).u64(n);
        value.encode(&mut w);
        w.finish()
    }

    pub fn build(signer: &Signer, n: u64, value: AcceptValue) -> Self {
        AcceptMsg { sender: signer.node(), n, value, sig: signer.sign_digest(&Self::body_digest(signer.node(), n, value)) }
    }

    pub fn is_valid(&self, verifier: &Verifier) -> bool {
        self.sig.signer == self.sender && verifier.check(&Self::body_digest(self.sender, self.n, self.value), &self.sig)
    }

    pub fn digest(&self) -> Digest {
        let mut w = DigestWriter::new("acc-full");
        w.digest(&Self::body_digest(self.sender, self.n, self.value)).digest(&self.sig.tag);
        w.finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::KeyStore;

    fn setup() -> (KeyStore, Vec<NodeId>) {
        let ids: Vec<NodeId> = (0..6).map(NodeId).collect();
        (KeyStore::new(11, ids.clone()), ids)
    }

    fn hb(ks: &KeyStore, signers: &[u32], sender: u32, n: u64) -> Heartbeat {
        let region = RegionId(0);
        let extras = Digest::default();
        let sigs = signers
            .iter()
            .map(|s| SigShare::new(&ks.signer(NodeId(*s)).unwrap(), region, n, extras).sig)
            .collect();
        Heartbeat::build(&ks.signer(NodeId(sender)).unwrap(), region, n, extras, sigs)
    }

    #[test]
    fn full_signature_set_is_valid() {
        let (ks, _) = setup();
        let up = [NodeId(0), NodeId(1)];
        assert!(hb(&ks, &[0, 1], 0, 3).validate(&ks.verifier(), &up, 1).is_ok());
    }

    #[test]
    fn only_f_signatures_is_invalid() {
        let (ks, _) = setup();
        let up = [NodeId(0), NodeId(1)];
        assert_eq!(
            hb(&ks, &[0], 0, 3).validate(&ks.verifier(), &up, 1),
            Err(HeartbeatError::TooFewSignatures { valid: 1, needed: 2 })
        );
        // Duplicates of one signer do not count twice.
        assert!(hb(&ks, &[0, 0], 0, 3).validate(&ks.verifier(), &up, 1).is_err());
        // Non-measurer signatures do not count.
        assert!(hb(&ks, &[0, 4], 0, 3).validate(&ks.verifier(), &up, 1).is_err());
    }

    #[test]
    fn stale_round_signatures_do_not_verify() {
        let (ks, _) = setup();
        let up = [NodeId(0), NodeId(1)];
        let mut h = hb(&ks, &[0, 1], 0, 3);
        let old = hb(&ks, &[0, 1], 0, 2);
        h.sigs = old.sigs;
        let h = Heartbeat::build(&ks.signer(NodeId(0)).unwrap(), h.region, h.n, h.extras, h.sigs);
        assert!(h.validate(&ks.verifier(), &up, 1).is_err());
    }

    #[test]
    fn tampered_outer_signature_is_invalid() {
        let (ks, _) = setup();
        let up = [NodeId(0), NodeId(1)];
        let mut h = hb(&ks, &[0, 1], 0, 3);
        h.sender = NodeId(1);
        assert_eq!(h.validate(&ks.verifier(), &up, 1), Err(HeartbeatError::BadOuterSignature));
    }

    #[test]
    fn proposal_and_accept_signatures() {
        let (ks, _) = setup();
        let v = ks.verifier();
        let up = [NodeId(0), NodeId(1)];
        let down = [NodeId(2), NodeId(3)];
        let p = Proposal::build(&ks.signer(NodeId(2)).unwrap(), 3, SimDuration::from_millis(43), hb(&ks, &[0, 1], 1, 3));
        assert!(p.is_valid(&v, &up, 1, &down));
        let mut forged = p.clone();
        forged.latency = SimDuration::from_millis(1);
        assert!(!forged.is_valid(&v, &up, 1, &down));
        let a = AcceptMsg::build(&ks.signer(NodeId(3)).unwrap(), 3, AcceptValue::Timeout);
        assert!(a.is_valid(&v));
        let mut b = a.clone();
        b.value = AcceptValue::Latency(SimDuration::from_millis(40));
        assert!(!b.is_valid(&v));
    }
}
