//! Accountability: audit records and revocation.

mod audit;
mod revocation;

pub use audit::{record_audit, verify_audit, verify_log_file, AuditLog, AuditRecord};
pub use revocation::{
    check_revocation_local, declared_modes, revoke, RegisterRequest, RegisterResponse, RevocationEntry,
    RevocationMode, RevocationSet, RevocationStatus, META_REVOCATION_MODE, META_REVOCATION_REGISTER,
    SHARED_LOG_CAPACITY,
};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("signature-invalid")]
    SignatureInvalid,
    #[error("transcript-incomplete")]
    TranscriptIncomplete,
    #[error("unauthorized-revoker")]
    UnauthorizedRevoker,
    #[error("register-unreachable")]
    RegisterUnreachable,
    #[error("unknown revocation mode {0:?}")]
    UnknownMode(String),
    #[error("log corrupt")]
    Corrupt,
    #[error("log truncated")]
    Truncated,
    #[error("replayed outcome differs from recorded outcome")]
    ReplayMismatch,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl PartialEq for StoreError {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (StoreError::UnknownMode(a), StoreError::UnknownMode(b)) => a == b,
            (StoreError::Io(a), StoreError::Io(b)) => a.kind() == b.kind(),
            _ => std::mem::discriminant(self) == std::mem::discriminant(other),
        }
    }
}
