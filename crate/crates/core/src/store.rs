//! Single-file append-only log and the session that owns it.
//!
//! File layout: a 16-byte header (`PCHYDRM1`, format version u16 BE = 1, six
//! zero bytes) followed by log records:
//!
//! ```text
//! length: u32 BE (payload bytes) | kind: u8 | payload | crc: u32 BE
//! ```
//!
//! The CRC-32 covers kind and payload. A transaction is a run of non-commit
//! records closed by one commit record; anything after the last complete
//! commit is a torn tail and is ignored on open and cut off on the next
//! commit. Indexes are rebuilt by scanning the log on every open.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use crate::codec::{self, InstanceRecord, Reader};
use crate::error::{Error, Result};
use crate::migration::{MigrationHook, UpgradeCounter};
use crate::objects::{HandleEntry, HandleState, InitHook};
use crate::schema::{ClassDescriptor, ClassDiff, Registry, SlotSpec};
use crate::value::Oid;

pub const MAGIC: &[u8; 8] = b"PCHYDRM1";
pub const FORMAT_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 16;

/// Bytes of framing around each payload: length, kind and crc.
const FRAME_OVERHEAD: usize = 4 + 1 + 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum RecordKind {
    SchemaDefine = 0x01,
    SchemaRedefine = 0x02,
    InstanceWrite = 0x03,
    InstanceDelete = 0x04,
    Commit = 0x05,
}

impl RecordKind {
    pub fn from_byte(b: u8) -> Option<RecordKind> {
        Some(match b {
            0x01 => RecordKind::SchemaDefine,
            0x02 => RecordKind::SchemaRedefine,
            0x03 => RecordKind::InstanceWrite,
            0x04 => RecordKind::InstanceDelete,
            0x05 => RecordKind::Commit,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            RecordKind::SchemaDefine => "schema-define",
            RecordKind::SchemaRedefine => "schema-redefine",
            RecordKind::InstanceWrite => "instance-write",
            RecordKind::InstanceDelete => "instance-delete",
            RecordKind::Commit => "txn-commit",
        }
    }
}

pub fn header_bytes() -> [u8; HEADER_LEN] {
    let mut h = [0u8; HEADER_LEN];
    h[..8].copy_from_slice(MAGIC);
    h[8..10].copy_from_slice(&FORMAT_VERSION.to_be_bytes());
    h
}

fn crc(kind: u8, payload: &[u8]) -> u32 {
    let mut hasher = crc32fast::Hasher::new();
    hasher.update(&[kind]);
    hasher.update(payload);
    hasher.finalize()
}

/// Appends one framed record; returns the offset of its payload within `out`.
pub fn append_record(out: &mut Vec<u8>, kind: RecordKind, payload: &[u8]) -> usize {
    let len = u32::try_from(payload.len()).expect("log payloads are below 4 GiB");
    out.extend_from_slice(&len.to_be_bytes());
    out.push(kind as u8);
    let at = out.len();
    out.extend_from_slice(payload);
    out.extend_from_slice(&crc(kind as u8, payload).to_be_bytes());
    at
}

/// One framed record found while scanning.
#[derive(Clone, Copy, Debug)]
struct Frame {
    offset: usize,
    kind: u8,
    payload: (usize, usize),
    end: usize,
}

#[derive(Clone, Copy, Debug)]
enum FrameError {
    /// Not enough bytes for the frame; nothing after this can be read.
    Truncated { offset: usize },
    /// Complete frame whose checksum does not match.
    Crc { offset: usize, next: usize },
}

fn read_frame(bytes: &[u8], offset: usize) -> std::result::Result<Frame, FrameError> {
    let truncated = FrameError::Truncated { offset };
    let len_bytes = bytes.get(offset..offset + 4).ok_or(truncated)?;
    let len = u32::from_be_bytes(len_bytes.try_into().expect("4 bytes")) as usize;
    let end = offset
        .checked_add(FRAME_OVERHEAD + len)
        .filter(|&e| e <= bytes.len())
        .ok_or(truncated)?;
    let kind = bytes[offset + 4];
    let payload = (offset + 5, offset + 5 + len);
    let stored = u32::from_be_bytes(bytes[end - 4..end].try_into().expect("4 bytes"));
    if stored != crc(kind, &bytes[payload.0..payload.1]) {
        return Err(FrameError::Crc { offset, next: end });
    }
    Ok(Frame {
        offset,
        kind,
        payload,
        end,
    })
}

/// Where the latest committed version of an object lives in the log.
#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct RecordLocation {
    pub(crate) offset: u64,
    pub(crate) len: u32,
    pub(crate) class: String,
    pub(crate) version: u32,
}

/// Committed logical state rebuilt from the log.
#[derive(Debug, Default)]
struct Replay {
    registry: Registry,
    index: HashMap<Oid, RecordLocation>,
    extents: BTreeMap<String, BTreeSet<Oid>>,
    deleted: HashSet<Oid>,
    max_oid: u64,
    seq: u64,
    end: usize,
}

enum LogOp {
    Schema(ClassDescriptor),
    Write(RecordLocation, Oid),
    Delete(Oid),
}

fn corrupt(offset: usize, reason: impl fmt::Display) -> Error {
    Error::Corrupt {
        offset: offset as u64,
        reason: reason.to_string(),
    }
}

fn parse_op(bytes: &[u8], frame: &Frame) -> Result<Option<LogOp>> {
    let payload = &bytes[frame.payload.0..frame.payload.1];
    let kind = RecordKind::from_byte(frame.kind)
        .ok_or_else(|| corrupt(frame.offset, format!("unknown record kind {}", frame.kind)))?;
    Ok(Some(match kind {
        RecordKind::SchemaDefine | RecordKind::SchemaRedefine => {
            let desc = ClassDescriptor::decode(payload).map_err(|e| corrupt(frame.offset, e))?;
            if (desc.version == 1) != (kind == RecordKind::SchemaDefine) {
                return Err(corrupt(
                    frame.offset,
                    "schema record kind disagrees with version",
                ));
            }
            LogOp::Schema(desc)
        }
        RecordKind::InstanceWrite => {
            let header =
                codec::decode_record_header(payload).map_err(|e| corrupt(frame.offset, e))?;
            LogOp::Write(
                RecordLocation {
                    offset: frame.payload.0 as u64,
                    len: payload.len() as u32,
                    class: header.class,
                    version: header.version,
                },
                header.oid,
            )
        }
        RecordKind::InstanceDelete => {
            let mut r = Reader::new(payload);
            let oid = r.oid().map_err(|e| corrupt(frame.offset, e))?;
            r.finish().map_err(|e| corrupt(frame.offset, e))?;
            LogOp::Delete(oid)
        }
        RecordKind::Commit => return Ok(None),
    }))
}

impl Replay {
    fn apply(&mut self, op: LogOp, at: usize) -> Result<()> {
        match op {
            LogOp::Schema(desc) => self.registry.install(desc).map_err(|e| corrupt(at, e))?,
            LogOp::Write(loc, oid) => {
                if !self.registry.contains(&loc.class) {
                    return Err(corrupt(
                        at,
                        format!("record of undefined class {:?}", loc.class),
                    ));
                }
                if self.deleted.contains(&oid) {
                    return Err(corrupt(at, format!("write to deleted object {oid}")));
                }
                if let Some(old) = self.index.get(&oid) {
                    if old.class != loc.class {
                        return Err(corrupt(at, format!("object {oid} changed class")));
                    }
                }
                self.max_oid = self.max_oid.max(oid.get());
                self.extents
                    .entry(loc.class.clone())
                    .or_default()
                    .insert(oid);
                self.index.insert(oid, loc);
            }
            LogOp::Delete(oid) => {
                if let Some(loc) = self.index.remove(&oid) {
                    if let Some(ext) = self.extents.get_mut(&loc.class) {
                        ext.remove(&oid);
                    }
                }
                self.max_oid = self.max_oid.max(oid.get());
                self.deleted.insert(oid);
            }
        }
        Ok(())
    }

    /// Replays every complete transaction, stopping at the first frame that
    /// is incomplete or fails its checksum.
    fn scan(bytes: &[u8]) -> Result<Replay> {
        let mut state = Replay {
            end: HEADER_LEN,
            ..Replay::default()
        };
        let mut txn: Vec<(LogOp, usize)> = Vec::new();
        let mut at = HEADER_LEN;
        while at < bytes.len() {
            let Ok(frame) = read_frame(bytes, at) else {
                break;
            };
            match parse_op(bytes, &frame)? {
                Some(op) => txn.push((op, frame.offset)),
                None => {
                    let seq = Reader::new(&bytes[frame.payload.0..frame.payload.1])
                        .u64_be()
                        .map_err(|e| corrupt(frame.offset, e))?;
                    if seq <= state.seq {
                        return Err(corrupt(frame.offset, "commit sequence went backwards"));
                    }
                    for (op, offset) in txn.drain(..) {
                        state.apply(op, offset)?;
                    }
                    state.seq = seq;
                    state.end = frame.end;
                }
            }
            at = frame.end;
        }
        state.registry.mark_committed();
        Ok(state)
    }
}

/// One problem found by [`Session::verify`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Finding {
    CrcMismatch {
        offset: u64,
    },
    TornTail {
        offset: u64,
        bytes: u64,
    },
    UncommittedTail {
        offset: u64,
        records: usize,
    },
    Undecodable {
        oid: Oid,
        reason: String,
    },
    DanglingRef {
        from: Oid,
        to: Oid,
    },
    VersionAhead {
        oid: Oid,
        class: String,
        version: u32,
        current: u32,
    },
    UnknownClass {
        oid: Oid,
        class: String,
    },
    ExtentMismatch {
        oid: Oid,
        class: String,
    },
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Finding::CrcMismatch { offset } => write!(f, "CrcMismatch offset={offset}"),
            Finding::TornTail { offset, bytes } => {
                write!(f, "TornTail offset={offset} bytes={bytes}")
            }
            Finding::UncommittedTail { offset, records } => {
                write!(f, "UncommittedTail offset={offset} records={records}")
            }
            Finding::Undecodable { oid, reason } => {
                write!(f, "Undecodable oid={oid} reason={reason}")
            }
            Finding::DanglingRef { from, to } => write!(f, "DanglingRef from={from} to={to}"),
            Finding::VersionAhead {
                oid,
                class,
                version,
                current,
            } => write!(
                f,
                "VersionAhead oid={oid} class={class} version={version} current={current}"
            ),
            Finding::UnknownClass { oid, class } => {
                write!(f, "UnknownClass oid={oid} class={class}")
            }
            Finding::ExtentMismatch { oid, class } => {
                write!(f, "ExtentMismatch oid={oid} class={class}")
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct VerifyReport {
    pub findings: Vec<Finding>,
}

impl VerifyReport {
    pub fn is_clean(&self) -> bool {
        self.findings.is_empty()
    }
}

/// Sentinel file beside the store naming the process that holds it.
#[derive(Debug)]
struct LockFile {
    path: PathBuf,
    token: String,
}

fn lock_path(store: &Path) -> PathBuf {
    let mut p = store.as_os_str().to_owned();
    p.push(".lock");
    PathBuf::from(p)
}

/// Kernel start time of a process, so a recycled pid is not mistaken for
/// the original holder. `None` where /proc is unavailable.
fn process_start(pid: u32) -> Option<u64> {
    let stat = fs::read_to_string(format!("/proc/{pid}/stat")).ok()?;
    let after_comm = &stat[stat.rfind(')')? + 1..];
    // Fields after the command name start at field 3; starttime is field 22.
    after_comm.split_whitespace().nth(19)?.parse().ok()
}

fn own_token() -> String {
    let pid = std::process::id();
    format!("pid {pid} start {}\n", process_start(pid).unwrap_or(0))
}

fn token_is_stale(token: &str) -> bool {
    let mut parts = token.split_whitespace();
    let (Some("pid"), Some(pid), Some("start"), Some(start)) =
        (parts.next(), parts.next(), parts.next(), parts.next())
    else {
        return false;
    };
    let (Ok(pid), Ok(start)) = (pid.parse::<u32>(), start.parse::<u64>()) else {
        return false;
    };
    if !Path::new("/proc/self/stat").exists() {
        return false;
    }
    match process_start(pid) {
        None => true,
        Some(actual) => start != 0 && actual != start,
    }
}

impl LockFile {
    fn acquire(store: &Path, force: bool) -> Result<LockFile> {
        let path = lock_path(store);
        let token = own_token();
        for _ in 0..2 {
            match OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(mut f) => {
                    f.write_all(token.as_bytes())?;
                    f.sync_all()?;
                    return Ok(LockFile { path, token });
                }
                Err(e) if e.kind() == io::ErrorKind::AlreadyExists => {
                    let held = fs::read_to_string(&path).unwrap_or_default();
                    if force || token_is_stale(&held) {
                        match fs::remove_file(&path) {
                            Ok(()) => continue,
                            Err(e) if e.kind() == io::ErrorKind::NotFound => continue,
                            Err(e) => return Err(e.into()),
                        }
                    }
                    return Err(Error::Locked(store.to_path_buf()));
                }
                Err(e) => return Err(e.into()),
            }
        }
        Err(Error::Locked(store.to_path_buf()))
    }
}

impl Drop for LockFile {
    fn drop(&mut self) {
        if fs::read_to_string(&self.path).is_ok_and(|t| t == self.token) {
            let _ = fs::remove_file(&self.path);
        }
    }
}

fn sync_parent(path: &Path) {
    // Directory fsync makes a create or rename durable; not every platform
    // allows opening a directory, so failures are ignored.
    if let Some(parent) = path.parent() {
        let dir = if parent.as_os_str().is_empty() {
            Path::new(".")
        } else {
            parent
        };
        if let Ok(d) = File::open(dir) {
            let _ = d.sync_all();
        }
    }
}

/// Options for [`Session::open_with`].
#[derive(Clone, Copy, Debug, Default)]
pub struct OpenOptionsExt {
    /// Take over the lock sentinel even if it looks live.
    pub force_unlock: bool,
}

static NEXT_SESSION_ID: AtomicU64 = AtomicU64::new(1);

/// An open store: the log file plus everything staged against it.
///
/// All operations take `&mut self` or `&self`, so a session cannot be used
/// from two threads at once; it may move between threads as a whole.
pub struct Session {
    pub(crate) id: u64,
    path: PathBuf,
    file: File,
    _lock: LockFile,
    log_end: u64,
    seq: u64,
    next_oid: u64,
    pub(crate) pending_next_oid: u64,
    pub(crate) index: HashMap<Oid, RecordLocation>,
    pub(crate) extents: BTreeMap<String, BTreeSet<Oid>>,
    pub(crate) deleted: HashSet<Oid>,
    pub(crate) registry: Registry,
    pub(crate) handles: Vec<HandleEntry>,
    pub(crate) by_oid: HashMap<Oid, usize>,
    pub(crate) created: BTreeMap<Oid, String>,
    pub(crate) tombstones: BTreeSet<Oid>,
    pub(crate) init_hooks: HashMap<String, InitHook>,
    pub(crate) migration_hooks: HashMap<(String, u32), MigrationHook>,
    pub(crate) init_calls: BTreeMap<String, u64>,
    pub(crate) counter: UpgradeCounter,
    pub(crate) diagnostics: Vec<String>,
    pub(crate) warned: HashSet<(String, u32)>,
}

impl fmt::Debug for Session {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Session")
            .field("path", &self.path)
            .field("seq", &self.seq)
            .field("objects", &self.index.len())
            .finish_non_exhaustive()
    }
}

/// Opens the store at `path`, creating and initializing it if absent.
pub fn open_store(path: impl AsRef<Path>) -> Result<Session> {
    Session::open(path)
}

impl Session {
    pub fn open(path: impl AsRef<Path>) -> Result<Session> {
        Self::open_with(path, OpenOptionsExt::default())
    }

    pub fn open_with(path: impl AsRef<Path>, opts: OpenOptionsExt) -> Result<Session> {
        let path = path.as_ref().to_path_buf();
        let lock = LockFile::acquire(&path, opts.force_unlock)?;
        let mut file = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(false)
            .open(&path)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes)?;

        let header = header_bytes();
        let replay = if bytes.len() < HEADER_LEN && header.starts_with(&bytes) {
            // Absent, empty, or cut inside the header: (re)initialize.
            let mut init = header.to_vec();
            append_record(&mut init, RecordKind::Commit, &1u64.to_be_bytes());
            file.set_len(0)?;
            file.seek(SeekFrom::Start(0))?;
            file.write_all(&init)?;
            file.sync_all()?;
            sync_parent(&path);
            Replay::scan(&init)?
        } else {
            if bytes.len() < HEADER_LEN || &bytes[..8] != MAGIC {
                return Err(Error::BadMagic);
            }
            let version = u16::from_be_bytes([bytes[8], bytes[9]]);
            if version != FORMAT_VERSION {
                return Err(Error::UnsupportedFormat(version));
            }
            Replay::scan(&bytes)?
        };

        let next_oid = replay.max_oid + 1;
        Ok(Session {
            id: NEXT_SESSION_ID.fetch_add(1, Ordering::Relaxed),
            path,
            file,
            _lock: lock,
            log_end: replay.end as u64,
            seq: replay.seq,
            next_oid,
            pending_next_oid: next_oid,
            index: replay.index,
            extents: replay.extents,
            deleted: replay.deleted,
            registry: replay.registry,
            handles: Vec::new(),
            by_oid: HashMap::new(),
            created: BTreeMap::new(),
            tombstones: BTreeSet::new(),
            init_hooks: HashMap::new(),
            migration_hooks: HashMap::new(),
            init_calls: BTreeMap::new(),
            counter: UpgradeCounter::default(),
            diagnostics: Vec::new(),
            warned: HashSet::new(),
        })
    }

    /// Ends the session, releasing the lock. Staged changes are discarded.
    pub fn close(self) {}

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    /// Sequence number of the last durable commit.
    pub fn sequence(&self) -> u64 {
        self.seq
    }

    /// Number of live committed objects.
    pub fn object_count(&self) -> usize {
        self.index.len()
    }

    /// Live committed oids, ascending.
    pub fn committed_oids(&self) -> Vec<Oid> {
        let mut oids: Vec<Oid> = self.index.keys().copied().collect();
        oids.sort_unstable();
        oids
    }

    /// Class version of the committed record for `oid`.
    pub fn stored_version(&self, oid: Oid) -> Option<u32> {
        self.index.get(&oid).map(|loc| loc.version)
    }

    /// Bytes of the log covered by durable commits.
    pub fn log_len(&self) -> u64 {
        self.log_end
    }

    pub fn define_class(&mut self, name: &str, slots: Vec<SlotSpec>) -> Result<ClassDescriptor> {
        Ok(self.registry.define_class(name, slots)?.clone())
    }

    /// Registers the next version of `name`. Existing instances are left
    /// alone until they are accessed or eagerly migrated.
    pub fn redefine_class(
        &mut self,
        name: &str,
        slots: Vec<SlotSpec>,
    ) -> Result<(ClassDescriptor, ClassDiff)> {
        let (desc, diff) = self.registry.redefine_class(name, slots)?;
        Ok((desc.clone(), diff))
    }

    pub fn get_descriptor(&self, name: &str, version: u32) -> Result<&ClassDescriptor> {
        Ok(self.registry.get_descriptor(name, version)?)
    }

    pub fn current_descriptor(&self, name: &str) -> Result<&ClassDescriptor> {
        Ok(self.registry.current(name)?)
    }

    pub fn has_staged_changes(&self) -> bool {
        self.registry.has_pending()
            || !self.created.is_empty()
            || !self.tombstones.is_empty()
            || self.handles.iter().any(HandleEntry::is_dirty)
    }

    fn read_at(&self, offset: u64, len: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; len];
        let mut f = &self.file;
        f.seek(SeekFrom::Start(offset))?;
        f.read_exact(&mut buf)?;
        Ok(buf)
    }

    /// The latest committed record of `oid`, straight from the log.
    pub(crate) fn read_committed(&self, oid: Oid) -> Result<InstanceRecord> {
        let loc = self.index.get(&oid).ok_or(Error::UnknownOid(oid))?;
        let bytes = self.read_at(loc.offset, loc.len as usize)?;
        Ok(codec::decode_record(&bytes)?)
    }

    /// The record as this session currently sees it, without loading it
    /// into a handle or migrating it. `Ok(None)` for deleted objects.
    pub(crate) fn view_record(
        &self,
        oid: Oid,
    ) -> Result<Option<std::borrow::Cow<'_, InstanceRecord>>> {
        if self.tombstones.contains(&oid) || self.deleted.contains(&oid) {
            return Ok(None);
        }
        if let Some(&idx) = self.by_oid.get(&oid) {
            match &self.handles[idx].state {
                HandleState::Loaded { record, .. } => {
                    return Ok(Some(std::borrow::Cow::Borrowed(record)))
                }
                HandleState::Deleted => return Ok(None),
                HandleState::Gone | HandleState::NotLoaded => {}
            }
        }
        if self.index.contains_key(&oid) {
            return Ok(Some(std::borrow::Cow::Owned(self.read_committed(oid)?)));
        }
        Err(Error::UnknownOid(oid))
    }

    /// Copy of `record` without its transient slots.
    pub(crate) fn persistent_part(&self, record: &InstanceRecord) -> Result<InstanceRecord> {
        let desc = self
            .registry
            .get_descriptor(&record.class, record.version)?;
        Ok(InstanceRecord {
            oid: record.oid,
            class: record.class.clone(),
            version: record.version,
            slots: record
                .slots
                .iter()
                .filter(|(name, _)| desc.is_persistent(name))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        })
    }

    /// Appends all staged schema changes, dirty records and deletions as one
    /// transaction and flushes it. Returns the new sequence number, or the
    /// previous one if nothing was staged.
    pub fn commit(&mut self) -> Result<u64> {
        if !self.has_staged_changes() {
            return Ok(self.seq);
        }
        let mut buf = Vec::new();
        for desc in self.registry.pending() {
            let kind = if desc.version == 1 {
                RecordKind::SchemaDefine
            } else {
                RecordKind::SchemaRedefine
            };
            append_record(&mut buf, kind, &desc.encode());
        }

        let mut dirty: Vec<usize> = (0..self.handles.len())
            .filter(|&i| {
                self.handles[i].is_dirty() && !self.tombstones.contains(&self.handles[i].oid)
            })
            .collect();
        dirty.sort_unstable_by_key(|&i| self.handles[i].oid);
        let mut writes = Vec::with_capacity(dirty.len());
        for &i in &dirty {
            let record = self.handles[i].record().expect("dirty entries are loaded");
            let stored = self.persistent_part(record)?;
            let payload = codec::encode_record(&stored)?;
            let at = append_record(&mut buf, RecordKind::InstanceWrite, &payload);
            writes.push((
                stored.oid,
                RecordLocation {
                    offset: at as u64,
                    len: payload.len() as u32,
                    class: stored.class,
                    version: stored.version,
                },
            ));
        }
        for oid in &self.tombstones {
            append_record(
                &mut buf,
                RecordKind::InstanceDelete,
                &oid.get().to_be_bytes(),
            );
        }
        let seq = self.seq + 1;
        append_record(&mut buf, RecordKind::Commit, &seq.to_be_bytes());

        self.write_transaction(&buf)?;

        let base = self.log_end;
        self.log_end += buf.len() as u64;
        self.seq = seq;
        for (oid, mut loc) in writes {
            loc.offset += base;
            self.extents
                .entry(loc.class.clone())
                .or_default()
                .insert(oid);
            self.index.insert(oid, loc);
        }
        for oid in std::mem::take(&mut self.tombstones) {
            if let Some(loc) = self.index.remove(&oid) {
                if let Some(ext) = self.extents.get_mut(&loc.class) {
                    ext.remove(&oid);
                }
            }
            self.deleted.insert(oid);
            if let Some(&idx) = self.by_oid.get(&oid) {
                self.handles[idx].state = HandleState::Deleted;
            }
        }
        for &i in &dirty {
            if let HandleState::Loaded { dirty, .. } = &mut self.handles[i].state {
                *dirty = false;
            }
        }
        self.created.clear();
        self.registry.mark_committed();
        self.next_oid = self.pending_next_oid;
        Ok(seq)
    }

    fn write_transaction(&mut self, buf: &[u8]) -> Result<()> {
        let result = (|| -> io::Result<()> {
            if self.file.metadata()?.len() != self.log_end {
                self.file.set_len(self.log_end)?;
            }
            self.file.seek(SeekFrom::Start(self.log_end))?;
            self.file.write_all(buf)?;
            self.file.sync_data()
        })();
        if result.is_err() {
            let _ = self.file.set_len(self.log_end);
        }
        Ok(result?)
    }

    /// Discards everything staged since the last commit. Handles of
    /// committed objects revert to not-loaded.
    pub fn rollback(&mut self) {
        self.registry.discard_pending();
        for (oid, _) in std::mem::take(&mut self.created) {
            if let Some(idx) = self.by_oid.remove(&oid) {
                self.handles[idx].state = HandleState::Gone;
            }
        }
        self.tombstones.clear();
        self.pending_next_oid = self.next_oid;
        for entry in &mut self.handles {
            entry.state = match entry.state {
                HandleState::Gone => HandleState::Gone,
                _ if self.index.contains_key(&entry.oid) => HandleState::NotLoaded,
                _ => HandleState::Deleted,
            };
        }
        let registry = &self.registry;
        self.init_hooks.retain(|class, _| registry.contains(class));
        self.migration_hooks
            .retain(|(class, _), _| registry.contains(class));
    }

    /// Rewrites the log with only the latest version of each live record,
    /// the full schema history and deletion markers, then swaps it in.
    /// Returns the file size before and after.
    pub fn compact(&mut self) -> Result<(u64, u64)> {
        if self.has_staged_changes() {
            return Err(Error::DirtySession);
        }
        let old_size = self.file.metadata()?.len();
        let mut buf = header_bytes().to_vec();
        for desc in self.registry.all_descriptors() {
            let kind = if desc.version == 1 {
                RecordKind::SchemaDefine
            } else {
                RecordKind::SchemaRedefine
            };
            append_record(&mut buf, kind, &desc.encode());
        }
        let mut index = HashMap::with_capacity(self.index.len());
        for oid in self.committed_oids() {
            let loc = &self.index[&oid];
            let payload = self.read_at(loc.offset, loc.len as usize)?;
            let at = append_record(&mut buf, RecordKind::InstanceWrite, &payload);
            index.insert(
                oid,
                RecordLocation {
                    offset: at as u64,
                    ..loc.clone()
                },
            );
        }
        // Deletion markers keep deleted oids reporting as deleted and keep
        // the allocator from handing them out again.
        let mut deleted: Vec<Oid> = self.deleted.iter().copied().collect();
        deleted.sort_unstable();
        for oid in deleted {
            append_record(
                &mut buf,
                RecordKind::InstanceDelete,
                &oid.get().to_be_bytes(),
            );
        }
        append_record(&mut buf, RecordKind::Commit, &self.seq.to_be_bytes());

        let mut tmp = self.path.as_os_str().to_owned();
        tmp.push(".compact");
        let tmp = PathBuf::from(tmp);
        let written = (|| -> io::Result<File> {
            let mut f = OpenOptions::new()
                .read(true)
                .write(true)
                .create(true)
                .truncate(true)
                .open(&tmp)?;
            f.write_all(&buf)?;
            f.sync_all()?;
            fs::rename(&tmp, &self.path)?;
            Ok(f)
        })();
        let file = match written {
            Ok(f) => f,
            Err(e) => {
                let _ = fs::remove_file(&tmp);
                return Err(e.into());
            }
        };
        sync_parent(&self.path);
        self.file = file;
        self.index = index;
        self.log_end = buf.len() as u64;
        Ok((old_size, self.log_end))
    }

    /// Audits the log and the committed state. Findings are data, not errors.
    pub fn verify(&self) -> Result<VerifyReport> {
        let mut findings = Vec::new();
        let mut bytes = Vec::new();
        let mut f = &self.file;
        f.seek(SeekFrom::Start(0))?;
        f.read_to_end(&mut bytes)?;

        let mut at = HEADER_LEN;
        let mut since_commit: Option<(usize, usize)> = None;
        while at < bytes.len() {
            match read_frame(&bytes, at) {
                Ok(frame) => {
                    if frame.kind == RecordKind::Commit as u8 {
                        since_commit = None;
                    } else {
                        let e = since_commit.get_or_insert((frame.offset, 0));
                        e.1 += 1;
                    }
                    at = frame.end;
                }
                Err(FrameError::Crc { offset, next }) => {
                    findings.push(Finding::CrcMismatch {
                        offset: offset as u64,
                    });
                    since_commit = None;
                    at = next;
                }
                Err(FrameError::Truncated { offset }) => {
                    findings.push(Finding::TornTail {
                        offset: offset as u64,
                        bytes: (bytes.len() - offset) as u64,
                    });
                    break;
                }
            }
        }
        if let Some((offset, records)) = since_commit {
            findings.push(Finding::UncommittedTail {
                offset: offset as u64,
                records,
            });
        }

        for oid in self.committed_oids() {
            let loc = &self.index[&oid];
            let Some(current) = self.registry.current_version(&loc.class) else {
                findings.push(Finding::UnknownClass {
                    oid,
                    class: loc.class.clone(),
                });
                continue;
            };
            if loc.version > current {
                findings.push(Finding::VersionAhead {
                    oid,
                    class: loc.class.clone(),
                    version: loc.version,
                    current,
                });
            }
            if !self
                .extents
                .get(&loc.class)
                .is_some_and(|e| e.contains(&oid))
            {
                findings.push(Finding::ExtentMismatch {
                    oid,
                    class: loc.class.clone(),
                });
            }
            match self.read_committed(oid) {
                Ok(record) => {
                    let mut targets = Vec::new();
                    for v in record.slots.values() {
                        v.for_each_ref(&mut |to| targets.push(to));
                    }
                    for to in targets {
                        if !self.index.contains_key(&to) {
                            findings.push(Finding::DanglingRef { from: oid, to });
                        }
                    }
                }
                Err(e) => findings.push(Finding::Undecodable {
                    oid,
                    reason: e.to_string(),
                }),
            }
        }
        for (class, members) in &self.extents {
            for &oid in members {
                if self.index.get(&oid).is_none_or(|loc| &loc.class != class) {
                    findings.push(Finding::ExtentMismatch {
                        oid,
                        class: class.clone(),
                    });
                }
            }
        }
        Ok(VerifyReport { findings })
    }
}
