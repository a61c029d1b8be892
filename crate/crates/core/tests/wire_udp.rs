use std::collections::HashSet;
use std::net::{Ipv4Addr, SocketAddrV4};
use std::sync::mpsc;
use std::time::Duration;

use ipv8_core::dpki::generate_keypair;
use ipv8_core::wire::{decode_envelope, encode_envelope, open_endpoint, EndpointConfig, Message, OverlayId, WireError};
use proptest::prelude::*;

fn overlays() -> HashSet<OverlayId> {
    [OverlayId::from_name("test")].into_iter().collect()
}

fn loopback() -> EndpointConfig {
    EndpointConfig::Udp { bind: SocketAddrV4::new(Ipv4Addr::LOCALHOST, 0) }
}

#[test]
fn golden_bytes_cross_a_real_socket() {
    let golden = hex::decode(include_str!("data/golden_envelope.hex").trim()).unwrap();
    let (tx, rx) = mpsc::channel();
    let a = open_endpoint(loopback(), Box::new(|_, _| {})).unwrap();
    let b = open_endpoint(loopback(), Box::new(move |from, bytes| tx.send((from, bytes)).unwrap())).unwrap();
    a.send(&b.local_address(), &golden);
    let (from, bytes) = rx.recv_timeout(Duration::from_secs(5)).expect("datagram arrived");
    assert_eq!(from, a.local_address());
    assert_eq!(bytes, golden);
    let env = decode_envelope(&bytes, &overlays()).unwrap();
    assert_eq!(env.payload, b"hi");
    assert_eq!(env.sender_key, generate_keypair(Some([0; 32])).public());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn roundtrip_and_any_flipped_bit_rejected(
        seed in any::<[u8; 32]>(),
        msg_type in any::<u8>(),
        seq in any::<u64>(),
        payload in proptest::collection::vec(any::<u8>(), 0..512),
        bit in any::<prop::sample::Index>(),
    ) {
        let k = generate_keypair(Some(seed));
        let m = Message { overlay: OverlayId::from_name("test"), msg_type, seq, payload: payload.clone() };
        let bytes = encode_envelope(&m, &k).unwrap();
        prop_assert_eq!(bytes.len(), 130 + payload.len());
        let env = decode_envelope(&bytes, &overlays()).unwrap();
        prop_assert_eq!((env.msg_type, env.seq, env.payload, env.sender_key), (msg_type, seq, payload, k.public()));

        let i = bit.index(bytes.len() * 8);
        let mut bad = bytes;
        bad[i / 8] ^= 1 << (i % 8);
        let err = decode_envelope(&bad, &overlays()).unwrap_err();
        prop_assert!(matches!(err, WireError::BadSignature | WireError::Truncated | WireError::UnsupportedVersion(_) | WireError::UnknownOverlay));
    }
}
