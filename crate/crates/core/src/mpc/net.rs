//! Lockstep broadcast rounds and the in-process transport.
//!
//! Every round each party sends one frame to every peer and then waits for
//! exactly one frame from each peer. Frames carry the round number, so a
//! party that falls out of step is detected instead of silently mixing
//! rounds.

use std::sync::mpsc::{channel, Receiver, RecvTimeoutError, Sender};
use std::time::Duration;

use sha2::{Digest, Sha256};
use thiserror::Error;

/// Message tags on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Tag {
    Request = 1,
    Status = 2,
    Masks = 3,
    DecShares = 4,
    Open = 5,
    Reveal = 6,
    Products = 7,
    Triple = 8,
    Signature = 9,
    Abort = 10,
}

impl Tag {
    pub fn from_byte(b: u8) -> Option<Self> {
        use Tag::*;
        [Request, Status, Masks, DecShares, Open, Reveal, Products, Triple, Signature, Abort]
            .into_iter()
            .find(|t| *t as u8 == b)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NetError {
    #[error("party {0} disconnected")]
    Disconnected(u16),
    #[error("timed out waiting for party {0}")]
    Timeout(u16),
    #[error("party {party} sent a malformed frame: {reason}")]
    Malformed { party: u16, reason: String },
    #[error("party {party} is out of step: expected {expected:?} in round {round}, got {got:?} in round {got_round}")]
    OutOfStep { party: u16, expected: Tag, round: u32, got: Tag, got_round: u32 },
    #[error("party {party} aborted: {reason}")]
    Aborted { party: u16, reason: String },
    #[error("i/o: {0}")]
    Io(String),
}

/// One decoded frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub tag: Tag,
    pub round: u32,
    pub sender: u16,
    pub items: Vec<Vec<u8>>,
}

impl Frame {
    /// `len(4) | tag(1) | round(4) | sender(2) | (item_len(2) | item)*`,
    /// all big-endian; `len` counts the bytes after itself.
    pub fn encode(&self) -> Vec<u8> {
        let body_len: usize = 7 + self.items.iter().map(|i| 2 + i.len()).sum::<usize>();
        let mut out = Vec::with_capacity(4 + body_len);
        out.extend_from_slice(&(body_len as u32).to_be_bytes());
        out.push(self.tag as u8);
        out.extend_from_slice(&self.round.to_be_bytes());
        out.extend_from_slice(&self.sender.to_be_bytes());
        for item in &self.items {
            assert!(item.len() <= u16::MAX as usize, "frame item of {} bytes", item.len());
            out.extend_from_slice(&(item.len() as u16).to_be_bytes());
            out.extend_from_slice(item);
        }
        out
    }

    /// Decodes the bytes after the length prefix.
    pub fn decode_body(body: &[u8]) -> Result<Self, String> {
        if body.len() < 7 {
            return Err("frame shorter than its header".into());
        }
        let tag = Tag::from_byte(body[0]).ok_or_else(|| format!("unknown tag {}", body[0]))?;
        let round = u32::from_be_bytes(body[1..5].try_into().unwrap());
        let sender = u16::from_be_bytes(body[5..7].try_into().unwrap());
        let mut items = Vec::new();
        let mut rest = &body[7..];
        while !rest.is_empty() {
            if rest.len() < 2 {
                return Err("truncated item length".into());
            }
            let len = u16::from_be_bytes([rest[0], rest[1]]) as usize;
            if rest.len() < 2 + len {
                return Err("truncated item".into());
            }
            items.push(rest[2..2 + len].to_vec());
            rest = &rest[2 + len..];
        }
        Ok(Frame { tag, round, sender, items })
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, String> {
        if bytes.len() < 4 {
            return Err("missing length prefix".into());
        }
        let len = u32::from_be_bytes(bytes[..4].try_into().unwrap()) as usize;
        if bytes.len() != 4 + len {
            return Err("length prefix does not match frame size".into());
        }
        Self::decode_body(&bytes[4..])
    }
}

/// A party's view of the network.
pub trait Transport: Send {
    /// This party's id in `1..=n_parties`.
    fn party(&self) -> u16;
    fn n_parties(&self) -> u16;

    /// Sends `items` to every peer and returns every party's items for this
    /// round, indexed by `party - 1` (this party's own entry included).
    fn exchange(&mut self, tag: Tag, items: Vec<Vec<u8>>) -> Result<Vec<Vec<Vec<u8>>>, NetError>;

    /// Best-effort notification to peers that this party is giving up.
    fn abort(&mut self, reason: &str);

    /// SHA-256 over every frame sent and received so far.
    fn transcript_digest(&self) -> [u8; 32];
}

/// Shared round bookkeeping for transports: round counter, frame checks
/// and the transcript hash.
#[derive(Debug, Clone)]
pub(crate) struct RoundState {
    pub party: u16,
    pub n: u16,
    pub round: u32,
    transcript: Sha256,
}

impl RoundState {
    pub fn new(party: u16, n: u16) -> Self {
        Self { party, n, round: 0, transcript: Sha256::new() }
    }

    pub fn outgoing(&mut self, tag: Tag, items: Vec<Vec<u8>>) -> Frame {
        Frame { tag, round: self.round, sender: self.party, items }
    }

    pub fn record(&mut self, frame_bytes: &[u8]) {
        self.transcript.update(frame_bytes);
    }

    pub fn check(&self, from: u16, expected: Tag, frame: &Frame) -> Result<(), NetError> {
        if frame.tag == Tag::Abort {
            let reason = frame
                .items
                .first()
                .map(|b| String::from_utf8_lossy(b).into_owned())
                .unwrap_or_default();
            return Err(NetError::Aborted { party: from, reason });
        }
        if frame.sender != from {
            return Err(NetError::Malformed { party: from, reason: format!("claims to be party {}", frame.sender) });
        }
        if frame.tag != expected || frame.round != self.round {
            return Err(NetError::OutOfStep {
                party: from,
                expected,
                round: self.round,
                got: frame.tag,
                got_round: frame.round,
            });
        }
        Ok(())
    }

    pub fn digest(&self) -> [u8; 32] {
        self.transcript.clone().finalize().into()
    }
}

/// In-process endpoint: one channel per ordered pair of parties.
pub struct LocalEndpoint {
    state: RoundState,
    senders: Vec<Option<Sender<Vec<u8>>>>,
    receivers: Vec<Option<Receiver<Vec<u8>>>>,
    timeout: Duration,
}

/// Creates `n` connected endpoints for parties `1..=n`.
pub fn local_bus(n: u16) -> Vec<LocalEndpoint> {
    local_bus_with_timeout(n, Duration::from_secs(600))
}

pub fn local_bus_with_timeout(n: u16, timeout: Duration) -> Vec<LocalEndpoint> {
    let k = n as usize;
    let mut senders: Vec<Vec<Option<Sender<Vec<u8>>>>> = (0..k).map(|_| (0..k).map(|_| None).collect()).collect();
    let mut receivers: Vec<Vec<Option<Receiver<Vec<u8>>>>> = (0..k).map(|_| (0..k).map(|_| None).collect()).collect();
    for from in 0..k {
        for to in 0..k {
            if from != to {
                let (tx, rx) = channel();
                senders[from][to] = Some(tx);
                receivers[to][from] = Some(rx);
            }
        }
    }
    senders
        .into_iter()
        .zip(receivers)
        .enumerate()
        .map(|(i, (senders, receivers))| LocalEndpoint {
            state: RoundState::new(i as u16 + 1, n),
            senders,
            receivers,
            timeout,
        })
        .collect()
}

impl Transport for LocalEndpoint {
    fn party(&self) -> u16 {
        self.state.party
    }

    fn n_parties(&self) -> u16 {
        self.state.n
    }

    fn exchange(&mut self, tag: Tag, items: Vec<Vec<u8>>) -> Result<Vec<Vec<Vec<u8>>>, NetError> {
        let me = self.state.party;
        let frame = self.state.outgoing(tag, items);
        let bytes = frame.encode();
        for tx in self.senders.iter().flatten() {
            // a closed channel surfaces when we wait for that party
            let _ = tx.send(bytes.clone());
        }
        let mut out = Vec::with_capacity(self.state.n as usize);
        for from in 1..=self.state.n {
            if from == me {
                self.state.record(&bytes);
                out.push(frame.items.clone());
                continue;
            }
            let rx = self.receivers[from as usize - 1].as_ref().expect("peer channel");
            let data = match rx.recv_timeout(self.timeout) {
                Ok(d) => d,
                Err(RecvTimeoutError::Timeout) => return Err(NetError::Timeout(from)),
                Err(RecvTimeoutError::Disconnected) => return Err(NetError::Disconnected(from)),
            };
            self.state.record(&data);
            let got = Frame::decode(&data).map_err(|reason| NetError::Malformed { party: from, reason })?;
            self.state.check(from, tag, &got)?;
            out.push(got.items);
        }
        self.state.round += 1;
        Ok(out)
    }

    fn abort(&mut self, reason: &str) {
        let frame = self.state.outgoing(Tag::Abort, vec![reason.as_bytes().to_vec()]);
        let bytes = frame.encode();
        for tx in self.senders.iter().flatten() {
            let _ = tx.send(bytes.clone());
        }
    }

    fn transcript_digest(&self) -> [u8; 32] {
        self.state.digest()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_round_trip() {
        let f = Frame { tag: Tag::Open, round: 7, sender: 2, items: vec![vec![1, 2, 3], vec![], vec![0xff; 300]] };
        let bytes = f.encode();
        assert_eq!(&bytes[..4], &((bytes.len() - 4) as u32).to_be_bytes());
        assert_eq!(bytes[4], Tag::Open as u8);
        assert_eq!(Frame::decode(&bytes).unwrap(), f);
        assert!(Frame::decode(&bytes[..bytes.len() - 1]).is_err());
        let mut bad_tag = bytes.clone();
        bad_tag[4] = 200;
        assert!(Frame::decode(&bad_tag).is_err());
    }

    #[test]
    fn local_bus_exchanges_in_lockstep() {
        let endpoints = local_bus(3);
        let results: Vec<_> = std::thread::scope(|s| {
            let handles: Vec<_> = endpoints
                .into_iter()
                .map(|mut ep| {
                    s.spawn(move || {
                        let me = ep.party() as u8;
                        let a = ep.exchange(Tag::Open, vec![vec![me]]).unwrap();
                        let b = ep.exchange(Tag::Reveal, vec![vec![me * 10], vec![me]]).unwrap();
                        (a, b, ep.transcript_digest())
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
        for (a, b, _) in &results {
            assert_eq!(a, &vec![vec![vec![1]], vec![vec![2]], vec![vec![3]]]);
            assert_eq!(b[2], vec![vec![30], vec![3]]);
        }
    }

    #[test]
    fn dropped_party_is_named() {
        let mut endpoints = local_bus(3);
        let third = endpoints.pop().unwrap();
        drop(third);
        let errs: Vec<_> = std::thread::scope(|s| {
            let hs: Vec<_> = endpoints
                .into_iter()
                .map(|mut ep| s.spawn(move || ep.exchange(Tag::Reveal, vec![vec![1]]).unwrap_err()))
                .collect();
            hs.into_iter().map(|h| h.join().unwrap()).collect()
        });
        assert!(errs.iter().all(|e| *e == NetError::Disconnected(3)));
    }

    #[test]
    fn out_of_step_is_detected() {
        let endpoints = local_bus(2);
        let errs: Vec<_> = std::thread::scope(|s| {
            let hs: Vec<_> = endpoints
                .into_iter()
                .map(|mut ep| {
                    s.spawn(move || {
                        let tag = if ep.party() == 1 { Tag::Open } else { Tag::Reveal };
                        ep.exchange(tag, vec![]).unwrap_err()
                    })
                })
                .collect();
            hs.into_iter().map(|h| h.join().unwrap()).collect()
        });
        assert!(matches!(errs[0], NetError::OutOfStep { party: 2, .. }));
        assert!(matches!(errs[1], NetError::OutOfStep { party: 1, .. }));
    }

    #[test]
    fn abort_reaches_peers() {
        let mut endpoints = local_bus(2);
        let mut second = endpoints.pop().unwrap();
        let mut first = endpoints.pop().unwrap();
        second.abort("bad share");
        let err = first.exchange(Tag::Reveal, vec![]).unwrap_err();
        assert_eq!(err, NetError::Aborted { party: 2, reason: "bad share".into() });
    }
}
