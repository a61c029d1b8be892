mod common;

use std::fs;

use common::{Trio, VERIFIER};
use ipv8_core::dpki::generate_keypair;
use ipv8_core::store::{verify_audit, verify_log_file, AuditLog, AuditRecord, StoreError};
use ipv8_core::zkp::ALG_RANGE;

fn two_sessions() -> Vec<AuditRecord> {
    let mut t = Trio::new(true);
    let age = t.add("age", ALG_RANGE, 45);
    t.attest(&age);
    assert!(t.verify("age", ALG_RANGE, Some((18, 130)), 0).unwrap().accepted);
    assert!(t.verify("age", ALG_RANGE, Some((30, 50)), 0).unwrap().accepted);
    t.svc[VERIFIER].audit_records().to_vec()
}

#[test]
fn records_replay_offline() {
    for rec in two_sessions() {
        assert_eq!(verify_audit(&rec), Ok(true));
    }
}

#[test]
fn edited_record_is_caught() {
    let verifier = generate_keypair(Some([VERIFIER as u8 + 1; 32]));
    let mut rec = two_sessions().remove(0);
    rec.outcome.accepted = false;
    assert_eq!(verify_audit(&rec), Err(StoreError::SignatureInvalid));
    // Re-signing does not help: the replay disagrees with the stored outcome.
    let mut forged = rec.clone();
    forged.signature = verifier.sign(&forged.body());
    assert_eq!(verify_audit(&forged), Ok(false));
}

#[test]
fn log_detects_flipped_byte_and_truncation() {
    let owner = generate_keypair(Some([42; 32]));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("audit.log");
    let mut log = AuditLog::open(&path, &owner).unwrap();
    for rec in two_sessions() {
        log.append(&rec).unwrap();
    }
    assert_eq!(verify_log_file(&path, &owner), Ok(2));
    // Reopening picks up where it left off.
    assert_eq!(AuditLog::open(&path, &owner).unwrap().len(), 2);

    let clean = fs::read(&path).unwrap();
    let mut bad = clean.clone();
    bad[40] ^= 0x04;
    fs::write(&path, &bad).unwrap();
    assert_eq!(verify_log_file(&path, &owner), Err(StoreError::Corrupt));

    // Cut at the record boundary: the chain is intact, the head is not.
    let first_len = 4 + u32::from_be_bytes(clean[..4].try_into().unwrap()) as usize + 32;
    fs::write(&path, &clean[..first_len]).unwrap();
    assert_eq!(verify_log_file(&path, &owner), Err(StoreError::Truncated));

    fs::write(&path, &clean).unwrap();
    let stranger = generate_keypair(Some([43; 32]));
    assert!(verify_log_file(&path, &stranger).is_err());
}
