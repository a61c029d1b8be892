mod common;

use common::{Trio, ATTESTER, SUBJECT, VERIFIER};
use ipv8_core::ssi::{SsiMessage, VerifyError};
use ipv8_core::zkp::{ALG_RANGE, ALG_SIGMA};

#[test]
fn attest_then_verify_range_and_sigma() {
    let mut t = Trio::new(true);
    let age = t.add("age", ALG_RANGE, 34);
    let nationality = t.add("nationality", ALG_SIGMA, 528);
    t.attest(&age);
    t.attest(&nationality);
    let sp = t.subject_pseudonym;
    assert_eq!(t.svc[SUBJECT].pseudonym(&sp).unwrap().attestations().count(), 2);

    let o = t.verify("age", ALG_RANGE, Some((18, 130)), 0).unwrap();
    assert!(o.accepted && o.error.is_none());
    let o = t.verify("age", ALG_RANGE, Some((40, 130)), 0).unwrap();
    assert!(!o.accepted);
    let o = t.verify("nationality", ALG_SIGMA, None, 9).unwrap();
    assert!(o.accepted);
    assert_eq!(o.confidence, 1.0 - 0.5f64.powi(9));
    assert_eq!(t.verify("height", ALG_RANGE, Some((0, 300)), 0).unwrap().error, Some(VerifyError::NoAttribute));
    // Only sessions that reached a disclosure check leave a record.
    assert_eq!(t.svc[VERIFIER].audit_records().len(), 2);
}

#[test]
fn subject_decides_each_request() {
    let mut t = Trio::new(false);
    let age = t.add("age", ALG_RANGE, 21);
    t.attest(&age);
    let pending = t.svc[ATTESTER].outstanding();
    assert_eq!(pending.len(), 1);
    t.svc[ATTESTER].allow(0, pending[0].request_id).unwrap();
    t.pump();

    assert!(t.verify("age", ALG_RANGE, Some((18, 99)), 0).is_none());
    let req = t.svc[SUBJECT].outstanding()[0].request_id;
    t.svc[SUBJECT].deny(req).unwrap();
    t.pump();
    let (_, denied) = *t.outcomes.last().unwrap();
    assert_eq!(denied.error, Some(VerifyError::Denied));

    assert!(t.verify("age", ALG_RANGE, Some((18, 99)), 0).is_none());
    let req = t.svc[SUBJECT].outstanding()[0].request_id;
    t.svc[SUBJECT].allow(0, req).unwrap();
    t.pump();
    assert!(t.outcomes.last().unwrap().1.accepted);
}

#[test]
fn mutated_chain_in_flight_is_rejected() {
    let mut t = Trio::new(true);
    t.add("name", ALG_SIGMA, 7);
    let age = t.add("age", ALG_RANGE, 50);
    t.attest(&age);
    t.tamper = Some(Box::new(|from, to, payload| {
        if (from, to) != (SUBJECT, VERIFIER) {
            return payload;
        }
        match SsiMessage::from_bytes(&payload) {
            Some(SsiMessage::Disclosure(mut d)) => {
                d.chain[0].public_data_hash[5] ^= 0x20;
                SsiMessage::Disclosure(d).to_bytes()
            }
            _ => payload,
        }
    }));
    let o = t.verify("age", ALG_RANGE, Some((18, 130)), 0).unwrap();
    assert!(!o.accepted);
    assert_eq!(o.error, Some(VerifyError::ChainInvalid));
}

#[test]
fn unattested_attribute_fails_attestation_check() {
    let mut t = Trio::new(true);
    t.add("age", ALG_RANGE, 30);
    let o = t.verify("age", ALG_RANGE, Some((18, 130)), 0).unwrap();
    assert!(!o.accepted);
    assert_eq!(o.error, Some(VerifyError::AttestationInvalid));
}
