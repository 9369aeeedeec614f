use std::io;
use std::path::PathBuf;

use thiserror::Error;

use crate::codec::CodecError;
use crate::schema::SchemaError;
use crate::value::{Oid, ValueError};

/// Error raised by user-supplied init and migration hooks.
pub type HookError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown class {0:?}")]
    UnknownClass(String),
    #[error("class {class:?} has no slot {slot:?}")]
    UnknownSlot { class: String, slot: String },
    #[error("unknown object {0}")]
    UnknownOid(Oid),
    #[error("object {0} is deleted")]
    Deleted(Oid),
    /// Reading a slot that holds no value.
    #[error("slot {slot:?} of {class:?} is unbound")]
    UnboundSlot { class: String, slot: String },
    #[error("value at {path} is not serializable")]
    NonSerializable { path: String },
    #[error("slot {slot:?} of {class:?} does not hold a reference")]
    NotARef { class: String, slot: String },
    #[error("{kind} hook for {class:?} failed")]
    HookFailure {
        class: String,
        kind: &'static str,
        #[source]
        source: HookError,
    },
    #[error("a hook is already registered for {0}")]
    DuplicateHook(String),
    #[error("migration hooks target version 2 or later, got {0}")]
    InvalidHookTarget(u32),
    #[error("migration of {class:?} aborted after {completed} upgrades")]
    MigrationAborted {
        class: String,
        completed: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("record of {class:?} at v{record} cannot step from v{from} to v{to}")]
    VersionSkew {
        class: String,
        record: u32,
        from: u32,
        to: u32,
    },
    #[error("the session has staged changes")]
    DirtySession,
    #[error("handle belongs to another session")]
    ForeignHandle,
    #[error("not a store file (bad magic)")]
    BadMagic,
    #[error("unsupported store format version {0}")]
    UnsupportedFormat(u16),
    #[error("store {0} is locked by another session")]
    Locked(PathBuf),
    #[error("store is corrupt at offset {offset}: {reason}")]
    Corrupt { offset: u64, reason: String },
    #[error("object {from} references missing object {to}")]
    DanglingRef { from: Oid, to: Oid },
    #[error("class {0:?} conflicts with the store's definition")]
    SchemaConflict(String),
    #[error("malformed graph blob: {0}")]
    Malformed(String),
    #[error(transparent)]
    Schema(SchemaError),
    #[error(transparent)]
    Codec(CodecError),
    #[error(transparent)]
    Value(#[from] ValueError),
    #[error("i/o failure: {0}")]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl From<CodecError> for Error {
    fn from(e: CodecError) -> Self {
        match e {
            CodecError::NonSerializable { path } => Error::NonSerializable { path },
            other => Error::Codec(other),
        }
    }
}

impl From<SchemaError> for Error {
    fn from(e: SchemaError) -> Self {
        match e {
            SchemaError::UnknownClass(name) => Error::UnknownClass(name),
            SchemaError::Codec(c) => c.into(),
            other => Error::Schema(other),
        }
    }
}
