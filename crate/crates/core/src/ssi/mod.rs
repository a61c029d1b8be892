//! Attribute-based pseudonyms and the claim, attestation and verification flows.

mod model;
mod persist;
mod service;
mod verify;

pub use model::{
    attest, chain_anchor, ownership_message, verify_chain, Attestation, Attribute, AttributeOptions, Metadata,
    Pseudonym, Triple, SUPPORTED_ALGORITHMS,
};
pub use persist::PseudonymFile;
pub use service::{
    Channel, IdentityService, PendingKind, PendingRequest, SsiAction, SsiConfig, SsiMessage,
};
pub use verify::{
    check_disclosure, evaluate, Disclosure, Outcome, ProofTranscript, VerificationInput, VerificationRequest,
    VerifierPolicy, VerifyError,
};

use crate::zkp::ZkpError;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum SsiError {
    #[error("unknown-algorithm: {0}")]
    UnknownAlgorithm(String),
    #[error("attestation-invalid")]
    AttestationInvalid,
    #[error("unknown attribute")]
    UnknownAttribute,
    #[error("unknown pseudonym")]
    UnknownPseudonym,
    #[error("unknown request")]
    UnknownRequest,
    #[error("chain-invalid")]
    ChainInvalid,
    #[error("covert channel required")]
    CovertRequired,
    #[error("ownership already proven in this session")]
    OwnershipAlreadyProven,
    #[error("prover refused: value outside requested range")]
    ProofRefused,
    #[error("channel-down")]
    ChannelDown,
    #[error("storage: {0}")]
    Storage(String),
    #[error(transparent)]
    Zkp(#[from] ZkpError),
}

impl From<std::io::Error> for SsiError {
    fn from(e: std::io::Error) -> Self {
        SsiError::Storage(e.to_string())
    }
}
