//! C ABI for the pachyderm object store.
//!
//! Stores are reached through an opaque `PchSession*`. Every call returns a
//! [`PchStatus`]; on failure a description is available from
//! [`pch_last_error_message`] on the same thread. Slot values cross the
//! boundary in the store's binary value encoding, so a caller needs exactly
//! one encoder/decoder for the value model.
//!
//! A session may be handed between threads but not used from two at once:
//! a call that finds the session in use fails with `PCH_STATUS_BUSY`
//! instead of waiting.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::{Mutex, TryLockError};

use pachyderm::codec::{decode_value_exact, encode_value};
use pachyderm::{
    export_subgraph, import_subgraph, parse_schema_text, Error, Oid, OpenOptionsExt, Session,
};

/// Result of every call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PchStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Busy = 3,
    UnknownClass = 4,
    UnknownSlot = 5,
    UnknownOid = 6,
    Deleted = 7,
    UnboundSlot = 8,
    NonSerializable = 9,
    Codec = 10,
    Schema = 11,
    Hook = 12,
    Locked = 13,
    BadMagic = 14,
    Io = 15,
    Dirty = 16,
    Graph = 17,
    BufferTooSmall = 18,
    Panic = 19,
    Other = 20,
}

/// Opaque session handle.
pub struct PchSession {
    inner: Mutex<Session>,
}

/// Bytes owned by the library; release with [`pch_buffer_free`].
#[repr(C)]
pub struct PchBuffer {
    pub data: *mut u8,
    pub len: usize,
}

impl PchBuffer {
    fn from_vec(bytes: Vec<u8>) -> PchBuffer {
        let boxed = bytes.into_boxed_slice();
        let len = boxed.len();
        PchBuffer {
            data: Box::into_raw(boxed) as *mut u8,
            len,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Failure {
    status: PchStatus,
    message: String,
}

impl Failure {
    fn new(status: PchStatus, message: impl Into<String>) -> Failure {
        Failure {
            status,
            message: message.into(),
        }
    }
}

fn status_of(e: &Error) -> PchStatus {
    match e {
        Error::UnknownClass(_) => PchStatus::UnknownClass,
        Error::UnknownSlot { .. } => PchStatus::UnknownSlot,
        Error::UnknownOid(_) => PchStatus::UnknownOid,
        Error::Deleted(_) => PchStatus::Deleted,
        Error::UnboundSlot { .. } => PchStatus::UnboundSlot,
        Error::NonSerializable { .. } => PchStatus::NonSerializable,
        Error::Codec(_) | Error::Value(_) | Error::NotARef { .. } => PchStatus::Codec,
        Error::Schema(_) | Error::VersionSkew { .. } | Error::SchemaConflict(_) => {
            PchStatus::Schema
        }
        Error::HookFailure { .. }
        | Error::DuplicateHook(_)
        | Error::InvalidHookTarget(_)
        | Error::MigrationAborted { .. } => PchStatus::Hook,
        Error::Locked(_) => PchStatus::Locked,
        Error::BadMagic | Error::UnsupportedFormat(_) => PchStatus::BadMagic,
        Error::Io(_) | Error::Corrupt { .. } => PchStatus::Io,
        Error::DirtySession => PchStatus::Dirty,
        Error::DanglingRef { .. } | Error::Malformed(_) => PchStatus::Graph,
        _ => PchStatus::Other,
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Failure {
        let mut message = e.to_string();
        let mut source = std::error::Error::source(&e);
        while let Some(s) = source {
            message.push_str(": ");
            message.push_str(&s.to_string());
            source = s.source();
        }
        Failure::new(status_of(&e), message)
    }
}

type Outcome = Result<(), Failure>;

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', "\\0")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Outcome) -> PchStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            PchStatus::Ok
        }
        Ok(Err(fail)) => {
            set_last_error(&fail.message);
            fail.status
        }
        Err(_) => {
            set_last_error("panic inside pachyderm");
            PchStatus::Panic
        }
    }
}

fn with_session(session: *mut PchSession, f: impl FnOnce(&mut Session) -> Outcome) -> PchStatus {
    guard(|| {
        // SAFETY: the caller passes a pointer obtained from `pch_open` that
        // has not been closed.
        let s = unsafe { session.as_ref() }
            .ok_or_else(|| Failure::new(PchStatus::NullArgument, "session is null"))?;
        let mut inner = match s.inner.try_lock() {
            Ok(g) => g,
            Err(TryLockError::WouldBlock) => {
                return Err(Failure::new(
                    PchStatus::Busy,
                    "session is in use by another thread",
                ))
            }
            // A panic in an earlier call; the session itself is still
            // consistent because every mutation is staged.
            Err(TryLockError::Poisoned(p)) => p.into_inner(),
        };
        f(&mut inner)
    })
}

fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::new(
            PchStatus::NullArgument,
            format!("{what} is null"),
        ));
    }
    // SAFETY: non-null and NUL-terminated per the API contract.
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| Failure::new(PchStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

fn bytes<'a>(p: *const u8, len: usize, what: &str) -> Result<&'a [u8], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::new(
            PchStatus::NullArgument,
            format!("{what} is null"),
        ));
    }
    // SAFETY: the caller guarantees `len` readable bytes at `p`.
    Ok(unsafe { std::slice::from_raw_parts(p, len) })
}

fn oid(n: u64) -> Result<Oid, Failure> {
    Oid::new(n).ok_or_else(|| Failure::new(PchStatus::UnknownOid, "oid 0 is never allocated"))
}

fn put<T>(out: *mut T, value: T, what: &str) -> Outcome {
    if out.is_null() {
        return Err(Failure::new(
            PchStatus::NullArgument,
            format!("{what} is null"),
        ));
    }
    // SAFETY: non-null, and the caller provides writable storage.
    unsafe { out.write(value) };
    Ok(())
}

/// Copies `oids` into the caller's array. `*out_len` always receives the
/// full count; fails with `BUFFER_TOO_SMALL` if `cap` is not enough.
fn put_oids(oids: &[Oid], out: *mut u64, cap: usize, out_len: *mut usize) -> Outcome {
    put(out_len, oids.len(), "out_len")?;
    if oids.len() > cap {
        return Err(Failure::new(
            PchStatus::BufferTooSmall,
            format!("{} oids do not fit in {cap}", oids.len()),
        ));
    }
    if oids.is_empty() {
        return Ok(());
    }
    if out.is_null() {
        return Err(Failure::new(PchStatus::NullArgument, "out is null"));
    }
    for (i, o) in oids.iter().enumerate() {
        // SAFETY: i < oids.len() <= cap.
        unsafe { out.add(i).write(o.get()) };
    }
    Ok(())
}

/// Message for the last failed call on this thread, or an empty string.
/// Valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn pch_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Opens (creating if needed) the store at `path`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pch_open(
    path: *const c_char,
    force_unlock: bool,
    out: *mut *mut PchSession,
) -> PchStatus {
    guard(|| {
        let path = text(path, "path")?;
        if out.is_null() {
            return Err(Failure::new(PchStatus::NullArgument, "out is null"));
        }
        let session = Session::open_with(path, OpenOptionsExt { force_unlock })?;
        let handle = Box::new(PchSession {
            inner: Mutex::new(session),
        });
        put(out, Box::into_raw(handle), "out")
    })
}

/// Closes a session, discarding staged changes. Null is ignored.
///
/// # Safety
/// `session` must come from [`pch_open`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pch_close(session: *mut PchSession) {
    if !session.is_null() {
        drop(Box::from_raw(session));
    }
}

/// Makes staged changes durable. `out_seq` (may be null) receives the
/// commit sequence number.
///
/// # Safety
/// `session` must be live; `out_seq` null or writable.
#[no_mangle]
pub unsafe extern "C" fn pch_commit(session: *mut PchSession, out_seq: *mut u64) -> PchStatus {
    with_session(session, |s| {
        let seq = s.commit()?;
        if !out_seq.is_null() {
            put(out_seq, seq, "out_seq")?;
        }
        Ok(())
    })
}

/// Discards staged changes.
///
/// # Safety
/// `session` must be live.
#[no_mangle]
pub unsafe extern "C" fn pch_rollback(session: *mut PchSession) -> PchStatus {
    with_session(session, |s| {
        s.rollback();
        Ok(())
    })
}

/// Defines or redefines every class in a schema text. Unchanged classes
/// are left alone. Staged until the next commit.
///
/// # Safety
/// `session` must be live; `schema` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn pch_set_schema(
    session: *mut PchSession,
    schema: *const c_char,
) -> PchStatus {
    with_session(session, |s| {
        let defs = parse_schema_text(text(schema, "schema")?).map_err(Error::from)?;
        for def in defs {
            match s.current_descriptor(&def.name) {
                Err(Error::UnknownClass(_)) => {
                    s.define_class(&def.name, def.slots)?;
                }
                Err(e) => return Err(e.into()),
                Ok(d) if d.same_slots(&def.slots) => {}
                Ok(_) => {
                    s.redefine_class(&def.name, def.slots)?;
                }
            }
        }
        Ok(())
    })
}

/// Current version of `class_name` into `out_version`.
///
/// # Safety
/// `session` must be live; `class_name` NUL-terminated; `out_version` writable.
#[no_mangle]
pub unsafe extern "C" fn pch_class_version(
    session: *mut PchSession,
    class_name: *const c_char,
    out_version: *mut u32,
) -> PchStatus {
    with_session(session, |s| {
        let v = s.current_descriptor(text(class_name, "class")?)?.version;
        put(out_version, v, "out_version")
    })
}

/// Creates an instance of `class_name` with its slot defaults.
///
/// # Safety
/// `session` must be live; `class_name` NUL-terminated; `out_oid` writable.
#[no_mangle]
pub unsafe extern "C" fn pch_create(
    session: *mut PchSession,
    class_name: *const c_char,
    out_oid: *mut u64,
) -> PchStatus {
    with_session(session, |s| {
        let class = text(class_name, "class")?;
        let h = s.create_instance(class, std::iter::empty::<(String, pachyderm::Value)>())?;
        put(out_oid, h.oid().get(), "out_oid")
    })
}

/// Stages deletion of an object.
///
/// # Safety
/// `session` must be live.
#[no_mangle]
pub unsafe extern "C" fn pch_delete(session: *mut PchSession, oid_: u64) -> PchStatus {
    with_session(session, |s| {
        let h = s.lookup_instance(oid(oid_)?)?;
        s.delete_instance(h)?;
        Ok(())
    })
}

/// Writes an encoded value into a slot.
///
/// # Safety
/// `session` must be live; `slot` NUL-terminated; `value` points at `len`
/// readable bytes.
#[no_mangle]
pub unsafe extern "C" fn pch_slot_write(
    session: *mut PchSession,
    oid_: u64,
    slot: *const c_char,
    value: *const u8,
    len: usize,
) -> PchStatus {
    with_session(session, |s| {
        let slot = text(slot, "slot")?;
        let v = decode_value_exact(bytes(value, len, "value")?).map_err(Error::from)?;
        let h = s.lookup_instance(oid(oid_)?)?;
        s.slot_write(h, slot, v)?;
        Ok(())
    })
}

/// Reads a slot as an encoded value. An unbound slot fails with
/// `UNBOUND_SLOT` and leaves `out` untouched.
///
/// # Safety
/// `session` must be live; `slot` NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pch_slot_read(
    session: *mut PchSession,
    oid_: u64,
    slot: *const c_char,
    out: *mut PchBuffer,
) -> PchStatus {
    with_session(session, |s| {
        let slot = text(slot, "slot")?;
        if out.is_null() {
            return Err(Failure::new(PchStatus::NullArgument, "out is null"));
        }
        let h = s.lookup_instance(oid(oid_)?)?;
        let v = s.slot_read(h, slot)?;
        let encoded = encode_value(&v).map_err(Error::from)?;
        put(out, PchBuffer::from_vec(encoded), "out")
    })
}

/// Makes a slot unbound.
///
/// # Safety
/// `session` must be live; `slot` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn pch_slot_unbind(
    session: *mut PchSession,
    oid_: u64,
    slot: *const c_char,
) -> PchStatus {
    with_session(session, |s| {
        let slot = text(slot, "slot")?;
        let h = s.lookup_instance(oid(oid_)?)?;
        s.slot_unbind(h, slot)?;
        Ok(())
    })
}

/// Releases a buffer returned by this library. Null data is ignored.
///
/// # Safety
/// `buffer` must have come from this library and not been freed before.
#[no_mangle]
pub unsafe extern "C" fn pch_buffer_free(buffer: PchBuffer) {
    if !buffer.data.is_null() {
        drop(Box::from_raw(ptr::slice_from_raw_parts_mut(
            buffer.data,
            buffer.len,
        )));
    }
}

/// Oids of the live instances of `class_name`, ascending.
///
/// # Safety
/// `session` must be live; `class_name` NUL-terminated; `out` has room for
/// `cap` values; `out_len` writable.
#[no_mangle]
pub unsafe extern "C" fn pch_extent(
    session: *mut PchSession,
    class_name: *const c_char,
    out: *mut u64,
    cap: usize,
    out_len: *mut usize,
) -> PchStatus {
    with_session(session, |s| {
        let oids = s.extent(text(class_name, "class")?)?;
        put_oids(&oids, out, cap, out_len)
    })
}

/// Upgrades every instance of `class_name` to the current version.
///
/// # Safety
/// `session` must be live; `class_name` NUL-terminated; `out_count` null or
/// writable.
#[no_mangle]
pub unsafe extern "C" fn pch_migrate_eager(
    session: *mut PchSession,
    class_name: *const c_char,
    out_count: *mut u64,
) -> PchStatus {
    with_session(session, |s| {
        let n = s.migrate_eager(text(class_name, "class")?)?;
        if !out_count.is_null() {
            put(out_count, n as u64, "out_count")?;
        }
        Ok(())
    })
}

/// Serializes the closure of `roots` into a graph blob.
///
/// # Safety
/// `session` must be live; `roots` points at `n` oids; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pch_export(
    session: *mut PchSession,
    roots: *const u64,
    n: usize,
    out: *mut PchBuffer,
) -> PchStatus {
    with_session(session, |s| {
        if out.is_null() {
            return Err(Failure::new(PchStatus::NullArgument, "out is null"));
        }
        let raw: &[u64] = if n == 0 {
            &[]
        } else if roots.is_null() {
            return Err(Failure::new(PchStatus::NullArgument, "roots is null"));
        } else {
            std::slice::from_raw_parts(roots, n)
        };
        let roots = raw.iter().map(|&r| oid(r)).collect::<Result<Vec<_>, _>>()?;
        let blob = export_subgraph(s, &roots)?;
        put(out, PchBuffer::from_vec(blob), "out")
    })
}

/// Stages the objects of a graph blob under fresh oids. The new oids are
/// written in blob order: the i-th exported root first.
///
/// # Safety
/// `session` must be live; `blob` points at `len` bytes; `out` has room
/// for `cap` values; `out_len` writable.
#[no_mangle]
pub unsafe extern "C" fn pch_import(
    session: *mut PchSession,
    blob: *const u8,
    len: usize,
    out: *mut u64,
    cap: usize,
    out_len: *mut usize,
) -> PchStatus {
    with_session(session, |s| {
        let blob = bytes(blob, len, "blob")?;
        if out_len.is_null() || (cap > 0 && out.is_null()) {
            return Err(Failure::new(PchStatus::NullArgument, "out is null"));
        }
        // Check room before staging anything.
        let count = pachyderm::graph::GraphBlob::parse(blob)?.records.len();
        if count > cap {
            put(out_len, count, "out_len")?;
            return Err(Failure::new(
                PchStatus::BufferTooSmall,
                format!("{count} oids do not fit in {cap}"),
            ));
        }
        let map = import_subgraph(s, blob)?;
        let oids: Vec<Oid> = map.into_values().collect();
        put_oids(&oids, out, cap, out_len)
    })
}

/// Rewrites the log keeping only live data. Fails with `DIRTY` if
/// anything is staged.
///
/// # Safety
/// `session` must be live.
#[no_mangle]
pub unsafe extern "C" fn pch_compact(session: *mut PchSession) -> PchStatus {
    with_session(session, |s| {
        s.compact()?;
        Ok(())
    })
}

/// Checks the store. `out_findings` receives the number of problems;
/// `out_report` (may be null) one line per problem.
///
/// # Safety
/// `session` must be live; `out_findings` writable; `out_report` null or
/// writable.
#[no_mangle]
pub unsafe extern "C" fn pch_verify(
    session: *mut PchSession,
    out_findings: *mut usize,
    out_report: *mut PchBuffer,
) -> PchStatus {
    with_session(session, |s| {
        let report = s.verify()?;
        put(out_findings, report.findings.len(), "out_findings")?;
        if !out_report.is_null() {
            let text: String = report.findings.iter().map(|f| format!("{f}\n")).collect();
            put(
                out_report,
                PchBuffer::from_vec(text.into_bytes()),
                "out_report",
            )?;
        }
        Ok(())
    })
}

/// Renders an encoded value in literal syntax (for logs and debugging).
///
/// # Safety
/// `value` points at `len` bytes; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pch_value_display(
    value: *const u8,
    len: usize,
    out: *mut PchBuffer,
) -> PchStatus {
    guard(|| {
        let v = decode_value_exact(bytes(value, len, "value")?).map_err(Error::from)?;
        put(out, PchBuffer::from_vec(v.to_string().into_bytes()), "out")
    })
}
