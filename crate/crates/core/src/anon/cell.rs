//! Cell framing and per-hop layer encryption.

use chacha20poly1305::aead::{Aead, KeyInit};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use hkdf::Hkdf;
use sha2::Sha256;

pub const CELL_CREATE: u8 = 0x10;
pub const CELL_CREATED: u8 = 0x11;
pub const CELL_EXTEND: u8 = 0x12;
pub const CELL_EXTENDED: u8 = 0x13;
pub const CELL_DATA: u8 = 0x14;
pub const CELL_DESTROY: u8 = 0x15;
pub const CELL_INTRO_ESTABLISH: u8 = 0x16;
pub const CELL_RENDEZVOUS: u8 = 0x17;

/// Largest body a cell can carry (2-byte length field).
pub const MAX_CELL_BODY: usize = u16::MAX as usize;

/// Bytes in front of the ciphertext of a layered body: origin hop and counter.
pub const LAYER_HEADER: usize = 7;
pub const LAYER_TAG: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cell {
    pub circuit_id: u32,
    pub cell_type: u8,
    pub body: Vec<u8>,
}

impl Cell {
    pub fn new(circuit_id: u32, cell_type: u8, body: Vec<u8>) -> Self {
        Cell { circuit_id, cell_type, body }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut v = Vec::with_capacity(7 + self.body.len());
        v.extend_from_slice(&self.circuit_id.to_be_bytes());
        v.push(self.cell_type);
        v.extend_from_slice(&(self.body.len() as u16).to_be_bytes());
        v.extend_from_slice(&self.body);
        v
    }

    pub fn from_bytes(b: &[u8]) -> Option<Self> {
        if b.len() < 7 {
            return None;
        }
        let circuit_id = u32::from_be_bytes(b[..4].try_into().ok()?);
        let cell_type = b[4];
        if !(CELL_CREATE..=CELL_RENDEZVOUS).contains(&cell_type) {
            return None;
        }
        let len = u16::from_be_bytes([b[5], b[6]]) as usize;
        (b.len() == 7 + len).then(|| Cell { circuit_id, cell_type, body: b[7..].to_vec() })
    }

    /// Whether the body is onion-layered.
    pub fn is_layered(&self) -> bool {
        !matches!(self.cell_type, CELL_CREATE | CELL_CREATED | CELL_DESTROY)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward = 0,
    Backward = 1,
}

/// The two directional keys of one hop, derived from its 32-byte hop key.
#[derive(Clone)]
pub struct LayerKeys {
    pub hop_key: [u8; 32],
    forward: ChaCha20Poly1305,
    backward: ChaCha20Poly1305,
}

impl std::fmt::Debug for LayerKeys {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("LayerKeys(..)")
    }
}

impl LayerKeys {
    pub fn derive(shared: &[u8; 32], client_eph: &[u8; 32], relay_eph: &[u8; 32], index: u8) -> Self {
        let hk = Hkdf::<Sha256>::new(Some(b"ipv8-circuit"), shared);
        let mut info = Vec::with_capacity(65);
        info.extend_from_slice(client_eph);
        info.extend_from_slice(relay_eph);
        info.push(index);
        let mut hop_key = [0u8; 32];
        hk.expand(&info, &mut hop_key).expect("valid length");
        Self::from_hop_key(hop_key)
    }

    pub fn from_hop_key(hop_key: [u8; 32]) -> Self {
        let hk = Hkdf::<Sha256>::from_prk(&hop_key).expect("32-byte prk");
        let (mut f, mut b) = ([0u8; 32], [0u8; 32]);
        hk.expand(b"forward", &mut f).expect("valid length");
        hk.expand(b"backward", &mut b).expect("valid length");
        LayerKeys {
            hop_key,
            forward: ChaCha20Poly1305::new(Key::from_slice(&f)),
            backward: ChaCha20Poly1305::new(Key::from_slice(&b)),
        }
    }

    fn cipher(&self, dir: Direction) -> &ChaCha20Poly1305 {
        match dir {
            Direction::Forward => &self.forward,
            Direction::Backward => &self.backward,
        }
    }

    /// Adds one layer to the ciphertext part of a layered body.
    pub fn seal(&self, link_cid: u32, dir: Direction, origin: u8, counter: u64, data: &[u8]) -> Vec<u8> {
        self.cipher(dir).encrypt(&nonce(link_cid, dir, origin, counter), data).expect("in-memory encryption")
    }

    pub fn open(&self, link_cid: u32, dir: Direction, origin: u8, counter: u64, data: &[u8]) -> Option<Vec<u8>> {
        self.cipher(dir).decrypt(&nonce(link_cid, dir, origin, counter), data).ok()
    }
}

fn nonce(link_cid: u32, dir: Direction, origin: u8, counter: u64) -> Nonce {
    let mut n = [0u8; 12];
    n[..4].copy_from_slice(&link_cid.to_be_bytes());
    n[4] = dir as u8;
    n[5] = origin;
    n[6..].copy_from_slice(&counter.to_be_bytes()[2..]);
    *Nonce::from_slice(&n)
}

/// Splits a layered body into (origin, counter, ciphertext).
pub fn split_layered(body: &[u8]) -> Option<(u8, u64, &[u8])> {
    if body.len() < LAYER_HEADER {
        return None;
    }
    let mut c = [0u8; 8];
    c[2..].copy_from_slice(&body[1..7]);
    Some((body[0], u64::from_be_bytes(c), &body[7..]))
}

pub fn join_layered(origin: u8, counter: u64, ct: &[u8]) -> Vec<u8> {
    let mut v = Vec::with_capacity(LAYER_HEADER + ct.len());
    v.push(origin);
    v.extend_from_slice(&counter.to_be_bytes()[2..]);
    v.extend_from_slice(ct);
    v
}

/// End-to-end keys of a rendezvous channel.
#[derive(Clone)]
pub struct EndToEnd {
    send: ChaCha20Poly1305,
    recv: ChaCha20Poly1305,
    send_counter: u64,
}

impl EndToEnd {
    pub fn derive(shared: &[u8; 32], client_eph: &[u8; 32], service_eph: &[u8; 32], is_client: bool) -> Self {
        let hk = Hkdf::<Sha256>::new(Some(b"ipv8-e2e"), shared);
        let mut info = client_eph.to_vec();
        info.extend_from_slice(service_eph);
        let mut okm = [0u8; 64];
        hk.expand(&info, &mut okm).expect("valid length");
        let c2s = ChaCha20Poly1305::new(Key::from_slice(&okm[..32]));
        let s2c = ChaCha20Poly1305::new(Key::from_slice(&okm[32..]));
        let (send, recv) = if is_client { (c2s, s2c) } else { (s2c, c2s) };
        EndToEnd { send, recv, send_counter: 0 }
    }

    fn nonce(counter: u64) -> Nonce {
        let mut n = [0u8; 12];
        n[4..].copy_from_slice(&counter.to_be_bytes());
        *Nonce::from_slice(&n)
    }

    pub fn seal(&mut self, data: &[u8]) -> Vec<u8> {
        let c = self.send_counter;
        self.send_counter += 1;
        let mut out = c.to_be_bytes().to_vec();
        out.extend(self.send.encrypt(&Self::nonce(c), data).expect("in-memory encryption"));
        out
    }

    pub fn open(&self, data: &[u8]) -> Option<Vec<u8>> {
        if data.len() < 8 {
            return None;
        }
        let c = u64::from_be_bytes(data[..8].try_into().ok()?);
        self.recv.decrypt(&Self::nonce(c), &data[8..]).ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_codec() {
        let c = Cell::new(0xdeadbeef, CELL_DATA, b"abc".to_vec());
        let b = c.to_bytes();
        assert_eq!(b.len(), 10);
        assert_eq!(Cell::from_bytes(&b), Some(c));
        assert_eq!(Cell::from_bytes(&b[..9]), None);
        let mut bad = b.clone();
        bad[4] = 0x30;
        assert_eq!(Cell::from_bytes(&bad), None);
    }

    #[test]
    fn layers_peel_in_order() {
        let k1 = LayerKeys::from_hop_key([1; 32]);
        let k2 = LayerKeys::from_hop_key([2; 32]);
        let inner = k2.seal(22, Direction::Forward, 0, 5, b"hello");
        let outer = k1.seal(11, Direction::Forward, 0, 5, &inner);
        assert!(k2.open(22, Direction::Forward, 0, 5, &outer).is_none());
        let peeled = k1.open(11, Direction::Forward, 0, 5, &outer).unwrap();
        assert_eq!(peeled, inner);
        assert_eq!(k2.open(22, Direction::Forward, 0, 5, &peeled).unwrap(), b"hello");
        assert!(k1.open(11, Direction::Backward, 0, 5, &outer).is_none());
    }

    #[test]
    fn end_to_end_directions() {
        let mut c = EndToEnd::derive(&[7; 32], &[1; 32], &[2; 32], true);
        let mut s = EndToEnd::derive(&[7; 32], &[1; 32], &[2; 32], false);
        assert_eq!(s.open(&c.seal(b"hi")).unwrap(), b"hi");
        assert_eq!(c.open(&s.seal(b"yo")).unwrap(), b"yo");
        let mut other = EndToEnd::derive(&[8; 32], &[1; 32], &[2; 32], false);
        assert!(other.open(&c.seal(b"hi")).is_none());
        let _ = other.seal(b"");
    }
}
