//! Length-prefixed TCP transport with the same per-round barrier as the
//! in-process bus.
//!
//! Parties form a full mesh: party `i` dials every lower-numbered party and
//! accepts connections from every higher-numbered one. After a one-frame
//! handshake each connection gets a reader thread that forwards whole frames
//! into a channel, so a round simply writes to all peers and then takes one
//! frame from each channel.

use std::io::{Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::mpsc::{channel, Receiver, RecvTimeoutError};
use std::thread;
use std::time::{Duration, Instant};

use super::net::{Frame, NetError, RoundState, Tag, Transport};

const MAX_FRAME: usize = 64 << 20;

pub struct TcpTransport {
    state: RoundState,
    writers: Vec<Option<TcpStream>>,
    readers: Vec<Option<Receiver<Result<Vec<u8>, String>>>>,
    timeout: Duration,
}

fn io(e: std::io::Error) -> NetError {
    NetError::Io(e.to_string())
}

fn read_frame(stream: &mut TcpStream) -> std::io::Result<Vec<u8>> {
    let mut len = [0u8; 4];
    stream.read_exact(&mut len)?;
    let n = u32::from_be_bytes(len) as usize;
    if n > MAX_FRAME {
        return Err(std::io::Error::new(std::io::ErrorKind::InvalidData, "frame too large"));
    }
    let mut out = vec![0u8; 4 + n];
    out[..4].copy_from_slice(&len);
    stream.read_exact(&mut out[4..])?;
    Ok(out)
}

impl TcpTransport {
    /// Joins the mesh as `party` (1-based) where `addrs[i]` is party
    /// `i + 1`'s listening address. Dials retry until `connect_timeout`.
    pub fn connect(
        party: u16,
        listener: TcpListener,
        addrs: &[SocketAddr],
        connect_timeout: Duration,
        round_timeout: Duration,
    ) -> Result<Self, NetError> {
        let n = addrs.len() as u16;
        if party == 0 || party > n {
            return Err(NetError::Io(format!("party {party} outside 1..={n}")));
        }
        let mut streams: Vec<Option<TcpStream>> = (0..n).map(|_| None).collect();
        let deadline = Instant::now() + connect_timeout;
        for peer in 1..party {
            let stream = loop {
                match TcpStream::connect(addrs[peer as usize - 1]) {
                    Ok(s) => break s,
                    Err(_) if Instant::now() < deadline => thread::sleep(Duration::from_millis(50)),
                    Err(e) => return Err(io(e)),
                }
            };
            stream.set_nodelay(true).map_err(io)?;
            let mut s = stream;
            let hello = Frame { tag: Tag::Status, round: 0, sender: party, items: vec![] }.encode();
            s.write_all(&hello).map_err(io)?;
            streams[peer as usize - 1] = Some(s);
        }
        listener.set_nonblocking(false).map_err(io)?;
        for _ in party + 1..=n {
            let (mut s, _) = listener.accept().map_err(io)?;
            s.set_nodelay(true).map_err(io)?;
            s.set_read_timeout(Some(connect_timeout)).map_err(io)?;
            let hello = read_frame(&mut s).map_err(io)?;
            s.set_read_timeout(None).map_err(io)?;
            let f = Frame::decode(&hello).map_err(|reason| NetError::Malformed { party: 0, reason })?;
            if f.sender <= party || f.sender > n || streams[f.sender as usize - 1].is_some() {
                return Err(NetError::Malformed { party: f.sender, reason: "unexpected handshake".into() });
            }
            streams[f.sender as usize - 1] = Some(s);
        }
        let mut readers = Vec::with_capacity(n as usize);
        let mut writers = Vec::with_capacity(n as usize);
        for s in streams {
            match s {
                None => {
                    readers.push(None);
                    writers.push(None);
                }
                Some(s) => {
                    let mut r = s.try_clone().map_err(io)?;
                    let (tx, rx) = channel();
                    thread::spawn(move || loop {
                        match read_frame(&mut r) {
                            Ok(f) => {
                                if tx.send(Ok(f)).is_err() {
                                    return;
                                }
                            }
                            Err(e) => {
                                let _ = tx.send(Err(e.to_string()));
                                return;
                            }
                        }
                    });
                    readers.push(Some(rx));
                    writers.push(Some(s));
                }
            }
        }
        Ok(Self { state: RoundState::new(party, n), writers, readers, timeout: round_timeout })
    }
}

impl Transport for TcpTransport {
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
        for (i, w) in self.writers.iter_mut().enumerate() {
            if let Some(w) = w {
                w.write_all(&bytes).map_err(|_| NetError::Disconnected(i as u16 + 1))?;
            }
        }
        let mut out = Vec::with_capacity(self.state.n as usize);
        for from in 1..=self.state.n {
            if from == me {
                self.state.record(&bytes);
                out.push(frame.items.clone());
                continue;
            }
            let rx = self.readers[from as usize - 1].as_ref().expect("peer stream");
            let data = match rx.recv_timeout(self.timeout) {
                Ok(Ok(d)) => d,
                Ok(Err(_)) | Err(RecvTimeoutError::Disconnected) => return Err(NetError::Disconnected(from)),
                Err(RecvTimeoutError::Timeout) => return Err(NetError::Timeout(from)),
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
        let bytes = self.state.outgoing(Tag::Abort, vec![reason.as_bytes().to_vec()]).encode();
        for w in self.writers.iter_mut().flatten() {
            let _ = w.write_all(&bytes);
        }
    }

    fn transcript_digest(&self) -> [u8; 32] {
        self.state.digest()
    }
}

/// Binds `n` listeners on ephemeral localhost ports.
pub fn localhost_listeners(n: u16) -> std::io::Result<(Vec<TcpListener>, Vec<SocketAddr>)> {
    let listeners: Vec<TcpListener> = (0..n).map(|_| TcpListener::bind("127.0.0.1:0")).collect::<Result<_, _>>()?;
    let addrs = listeners.iter().map(|l| l.local_addr()).collect::<Result<_, _>>()?;
    Ok((listeners, addrs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mesh_exchanges() {
        let (listeners, addrs) = localhost_listeners(3).unwrap();
        let out: Vec<_> = thread::scope(|s| {
            let hs: Vec<_> = listeners
                .into_iter()
                .enumerate()
                .map(|(i, l)| {
                    let addrs = addrs.clone();
                    s.spawn(move || {
                        let mut t = TcpTransport::connect(
                            i as u16 + 1,
                            l,
                            &addrs,
                            Duration::from_secs(10),
                            Duration::from_secs(10),
                        )
                        .unwrap();
                        let a = t.exchange(Tag::Open, vec![vec![i as u8; 3]]).unwrap();
                        let b = t.exchange(Tag::Reveal, vec![vec![], vec![7]]).unwrap();
                        (a, b)
                    })
                })
                .collect();
            hs.into_iter().map(|h| h.join().unwrap()).collect()
        });
        for (a, b) in out {
            assert_eq!(a, vec![vec![vec![0; 3]], vec![vec![1; 3]], vec![vec![2; 3]]]);
            assert_eq!(b[1], vec![vec![], vec![7]]);
        }
    }
}
