//! Keyed-hash signatures.
//!
//! Each node's secret is derived from a trial-wide master seed. A [`Signer`] holds one
//! secret and is the only way to produce tags under it, so an adversary that is handed
//! the signers of compromised nodes cannot sign for anyone else. A [`Verifier`] checks
//! tags for every node but exposes no signing capability.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use super::ids::NodeId;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AuthError {
    #[error("no key registered for node {0}")]
    UnknownNode(NodeId),
}

/// SHA-256 output.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct Digest(pub [u8; 32]);

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({self})")
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.0[..8] {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

/// Canonical byte encoder feeding a running SHA-256.
#[derive(Clone, Default)]
pub struct DigestWriter(Sha256);

impl DigestWriter {
    pub fn new(domain: &str) -> Self {
        let mut w = DigestWriter(Sha256::new());
        w.bytes(domain.as_bytes());
        w
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.0.update([v]);
        self
    }

    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.0.update(v.to_le_bytes());
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.0.update(v.to_le_bytes());
        self
    }

    /// Length-prefixed byte string.
    pub fn bytes(&mut self, v: &[u8]) -> &mut Self {
        self.0.update((v.len() as u64).to_le_bytes());
        self.0.update(v);
        self
    }

    pub fn digest(&mut self, d: &Digest) -> &mut Self {
        self.0.update(d.0);
        self
    }

    pub fn finish(self) -> Digest {
        Digest(self.0.finalize().into())
    }
}

pub fn digest_of(payload: &[u8]) -> Digest {
    let mut w = DigestWriter::new("payload");
    w.bytes(payload);
    w.finish()
}

/// A tag binding `signer` to a payload digest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Signature {
    pub signer: NodeId,
    pub tag: Digest,
}

fn tag(secret: &[u8; 32], signer: NodeId, payload: &Digest) -> Digest {
    let mut w = DigestWriter::new("sig");
    w.bytes(secret).u32(signer.0).digest(payload);
    w.finish()
}

/// The secret of one node.
#[derive(Clone)]
pub struct Signer {
    node: NodeId,
    secret: [u8; 32],
}

impl fmt::Debug for Signer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Signer").field("node", &self.node).finish_non_exhaustive()
    }
}

impl Signer {
    pub fn node(&self) -> NodeId {
        self.node
    }

    pub fn sign_digest(&self, payload: &Digest) -> Signature {
        Signature { signer: self.node, tag: tag(&self.secret, self.node, payload) }
    }

    pub fn sign(&self, payload: &[u8]) -> Signature {
        self.sign_digest(&digest_of(payload))
    }
}

/// Checks signatures of any registered node.
#[derive(Clone)]
pub struct Verifier {
    secrets: Arc<BTreeMap<NodeId, [u8; 32]>>,
}

impl fmt::Debug for Verifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Verifier").field("nodes", &self.secrets.len()).finish()
    }
}

impl Verifier {
    pub fn verify_digest(&self, signer: NodeId, payload: &Digest, sig: &Signature) -> Result<bool, AuthError> {
        let secret = self.secrets.get(&signer).ok_or(AuthError::UnknownNode(signer))?;
        Ok(sig.signer == signer && sig.tag == tag(secret, signer, payload))
    }

    pub fn verify(&self, signer: NodeId, payload: &[u8], sig: &Signature) -> Result<bool, AuthError> {
        self.verify_digest(signer, &digest_of(payload), sig)
    }

    /// `true` iff the signature is by its claimed signer over `payload`.
    pub fn check(&self, payload: &Digest, sig: &Signature) -> bool {
        self.verify_digest(sig.signer, payload, sig).unwrap_or(false)
    }

    pub fn knows(&self, node: NodeId) -> bool {
        self.secrets.contains_key(&node)
    }
}

/// Per-trial key material.
#[derive(Clone)]
pub struct KeyStore {
    secrets: Arc<BTreeMap<NodeId, [u8; 32]>>,
}

impl KeyStore {
    pub fn new(master_seed: u64, nodes: impl IntoIterator<Item = NodeId>) -> Self {
        let secrets = nodes
            .into_iter()
            .map(|n| {
                let mut w = DigestWriter::new("key");
                w.u64(master_seed).u32(n.0);
                (n, w.finish().0)
            })
            .collect();
        KeyStore { secrets: Arc::new(secrets) }
    }

    pub fn signer(&self, node: NodeId) -> Result<Signer, AuthError> {
        let secret = *self.secrets.get(&node).ok_or(AuthError::UnknownNode(node))?;
        Ok(Signer { node, secret })
    }

    pub fn verifier(&self) -> Verifier {
        Verifier { secrets: Arc::clone(&self.secrets) }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> KeyStore {
        KeyStore::new(7, (1..=4).map(NodeId))
    }

    #[test]
    fn round_trip() {
        let ks = store();
        let sig = ks.signer(NodeId(1)).unwrap().sign(b"hello");
        assert!(ks.verifier().verify(NodeId(1), b"hello", &sig).unwrap());
    }

    #[test]
    fn wrong_signer_fails() {
        let ks = store();
        let sig = ks.signer(NodeId(1)).unwrap().sign(b"hello");
        assert!(!ks.verifier().verify(NodeId(2), b"hello", &sig).unwrap());
    }

    #[test]
    fn tampered_payload_fails() {
        let ks = store();
        let sig = ks.signer(NodeId(1)).unwrap().sign(b"hello");
        assert!(!ks.verifier().verify(NodeId(1), b"hellO", &sig).unwrap());
    }

    #[test]
    fn unknown_node_is_an_error() {
        let ks = store();
        assert_eq!(ks.signer(NodeId(9)).unwrap_err(), AuthError::UnknownNode(NodeId(9)));
        let sig = ks.signer(NodeId(1)).unwrap().sign(b"x");
        assert!(ks.verifier().verify(NodeId(9), b"x", &sig).is_err());
    }

    #[test]
    fn relabelled_signature_fails() {
        let ks = store();
        let mut sig = ks.signer(NodeId(1)).unwrap().sign(b"m");
        sig.signer = NodeId(2);
        assert!(!ks.verifier().check(&digest_of(b"m"), &sig));
    }

    #[test]
    fn exhaustive_cross_check() {
        let ks = store();
        let v = ks.verifier();
        let payloads: [&[u8]; 3] = [b"a", b"b", b""];
        for s in 1..=4 {
            for (pi, p) in payloads.iter().enumerate() {
                let sig = ks.signer(NodeId(s)).unwrap().sign(p);
                for c in 1..=4 {
                    for (qi, q) in payloads.iter().enumerate() {
                        let ok = v.verify(NodeId(c), q, &sig).unwrap();
                        assert_eq!(ok, s == c && pi == qi);
                    }
                }
            }
        }
    }

    #[test]
    fn different_seeds_give_different_keys() {
        let a = KeyStore::new(1, [NodeId(1)]).signer(NodeId(1)).unwrap().sign(b"m");
        let b = KeyStore::new(2, [NodeId(1)]).signer(NodeId(1)).unwrap().sign(b"m");
        assert_ne!(a, b);
    }
}
