//! Handles: the mediators through which every slot access goes.
//!
//! A session keeps exactly one handle entry per oid it has touched. A
//! [`Handle`] is a small copyable token naming that entry, so two lookups of
//! the same oid yield equal handles. Accessing a slot through a handle loads
//! the record on first use, brings it to the current class version, and
//! tracks whether it needs writing at the next commit.

use std::collections::BTreeMap;

use crate::codec::InstanceRecord;
use crate::error::{Error, HookError, Result};
use crate::migration::Draft;
use crate::schema::SlotDefault;
use crate::store::Session;
use crate::value::{Oid, Value};

/// Runs once when an instance is created, after defaults and init-args are
/// in place. Never runs when a stored instance is loaded.
pub type InitHook =
    Box<dyn FnMut(&mut Draft<'_>, &BTreeMap<String, Value>) -> Result<(), HookError> + Send>;

/// Token for one persistent object within one session.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Handle {
    session: u64,
    index: u32,
    oid: Oid,
}

impl Handle {
    pub fn oid(&self) -> Oid {
        self.oid
    }

    /// True if both handles denote the same session entry.
    pub fn same_as(&self, other: &Handle) -> bool {
        self == other
    }
}

#[derive(Debug)]
pub(crate) enum HandleState {
    NotLoaded,
    Loaded {
        record: InstanceRecord,
        dirty: bool,
    },
    /// Deletion committed.
    Deleted,
    /// Creation rolled back; the token is dead.
    Gone,
}

#[derive(Debug)]
pub(crate) struct HandleEntry {
    pub(crate) oid: Oid,
    pub(crate) state: HandleState,
}

impl HandleEntry {
    pub(crate) fn record(&self) -> Option<&InstanceRecord> {
        match &self.state {
            HandleState::Loaded { record, .. } => Some(record),
            _ => None,
        }
    }

    pub(crate) fn is_dirty(&self) -> bool {
        matches!(self.state, HandleState::Loaded { dirty: true, .. })
    }

    pub(crate) fn replace_record(&mut self, record: InstanceRecord) {
        self.state = HandleState::Loaded {
            record,
            dirty: true,
        };
    }

    fn record_mut(&mut self) -> Option<(&mut InstanceRecord, &mut bool)> {
        match &mut self.state {
            HandleState::Loaded { record, dirty } => Some((record, dirty)),
            _ => None,
        }
    }
}

impl Session {
    fn handle_for(&self, index: usize) -> Handle {
        Handle {
            session: self.id,
            index: index as u32,
            oid: self.handles[index].oid,
        }
    }

    pub(crate) fn entry_index(&self, handle: Handle) -> Result<usize> {
        if handle.session != self.id {
            return Err(Error::ForeignHandle);
        }
        Ok(handle.index as usize)
    }

    /// Index of a handle that may be read or written.
    pub(crate) fn live_entry(&self, handle: Handle) -> Result<usize> {
        let idx = self.entry_index(handle)?;
        let entry = &self.handles[idx];
        match entry.state {
            HandleState::Gone => Err(Error::UnknownOid(entry.oid)),
            HandleState::Deleted => Err(Error::Deleted(entry.oid)),
            _ if self.tombstones.contains(&entry.oid) => Err(Error::Deleted(entry.oid)),
            _ => Ok(idx),
        }
    }

    pub(crate) fn load_entry(&mut self, idx: usize) -> Result<()> {
        if matches!(self.handles[idx].state, HandleState::NotLoaded) {
            let oid = self.handles[idx].oid;
            let record = self.read_committed(oid)?;
            self.handles[idx].state = HandleState::Loaded {
                record,
                dirty: false,
            };
        }
        Ok(())
    }

    fn new_entry(&mut self, oid: Oid, state: HandleState) -> usize {
        let idx = self.handles.len();
        self.handles.push(HandleEntry { oid, state });
        self.by_oid.insert(oid, idx);
        idx
    }

    /// Creates and initializes a new instance of the current version of
    /// `class`. The init hook, if any, runs exactly once here.
    pub fn create_instance<I, K>(&mut self, class: &str, init_args: I) -> Result<Handle>
    where
        I: IntoIterator<Item = (K, Value)>,
        K: Into<String>,
    {
        let desc = self.registry.current(class)?;
        let init_args: BTreeMap<String, Value> =
            init_args.into_iter().map(|(k, v)| (k.into(), v)).collect();
        let mut slots = BTreeMap::new();
        for spec in &desc.slots {
            if let SlotDefault::Constant(v) = &spec.default {
                slots.insert(spec.name.clone(), v.clone());
            }
        }
        for (name, value) in &init_args {
            let spec = desc.slot(name).ok_or_else(|| Error::UnknownSlot {
                class: class.to_owned(),
                slot: name.clone(),
            })?;
            if spec.persistent && value.contains_opaque() {
                return Err(Error::NonSerializable {
                    path: format!(".{name}"),
                });
            }
            slots.insert(name.clone(), value.clone());
        }
        if let Some(hook) = self.init_hooks.get_mut(class) {
            *self.init_calls.entry(class.to_owned()).or_default() += 1;
            let mut draft = Draft::new(desc, &mut slots);
            hook(&mut draft, &init_args).map_err(|source| Error::HookFailure {
                class: class.to_owned(),
                kind: "init",
                source,
            })?;
        }
        // Allocate only once initialization has succeeded, so a failing
        // hook never consumes an oid.
        let version = desc.version;
        let oid = Oid::new(self.pending_next_oid).expect("oids start at 1");
        self.pending_next_oid += 1;
        let record = InstanceRecord {
            oid,
            class: class.to_owned(),
            version,
            slots,
        };
        self.created.insert(oid, class.to_owned());
        let idx = self.new_entry(
            oid,
            HandleState::Loaded {
                record,
                dirty: true,
            },
        );
        Ok(self.handle_for(idx))
    }

    /// Stages a record that arrives already initialized (graph import).
    pub(crate) fn stage_imported(&mut self, record: InstanceRecord) {
        self.created.insert(record.oid, record.class.clone());
        self.new_entry(
            record.oid,
            HandleState::Loaded {
                record,
                dirty: true,
            },
        );
    }

    /// The session's unique handle for `oid`.
    pub fn lookup_instance(&mut self, oid: Oid) -> Result<Handle> {
        if let Some(&idx) = self.by_oid.get(&oid) {
            let h = self.handle_for(idx);
            self.live_entry(h)?;
            return Ok(h);
        }
        if self.index.contains_key(&oid) {
            let idx = self.new_entry(oid, HandleState::NotLoaded);
            return Ok(self.handle_for(idx));
        }
        if self.deleted.contains(&oid) {
            return Err(Error::Deleted(oid));
        }
        Err(Error::UnknownOid(oid))
    }

    /// Reads a slot of the current class version. Unbound slots raise
    /// [`Error::UnboundSlot`]; references are returned as-is.
    pub fn slot_read(&mut self, handle: Handle, slot: &str) -> Result<Value> {
        let idx = self.live_entry(handle)?;
        self.load_entry(idx)?;
        self.upgrade_entry(idx)?;
        let record = self.handles[idx].record().expect("loaded");
        let desc = self.registry.current(&record.class)?;
        if desc.slot(slot).is_none() {
            return Err(Error::UnknownSlot {
                class: record.class.clone(),
                slot: slot.to_owned(),
            });
        }
        record
            .slots
            .get(slot)
            .cloned()
            .ok_or_else(|| Error::UnboundSlot {
                class: record.class.clone(),
                slot: slot.to_owned(),
            })
    }

    /// Stages a slot value; durable at the next commit. Opaque values are
    /// only accepted by transient slots.
    pub fn slot_write(&mut self, handle: Handle, slot: &str, value: Value) -> Result<()> {
        let idx = self.live_entry(handle)?;
        self.load_entry(idx)?;
        self.upgrade_entry(idx)?;
        let class = self.handles[idx].record().expect("loaded").class.clone();
        let spec = self
            .registry
            .current(&class)?
            .slot(slot)
            .ok_or_else(|| Error::UnknownSlot {
                class: class.clone(),
                slot: slot.to_owned(),
            })?;
        if spec.persistent && value.contains_opaque() {
            return Err(Error::NonSerializable {
                path: format!(".{slot}"),
            });
        }
        let (record, dirty) = self.handles[idx].record_mut().expect("loaded");
        record.slots.insert(slot.to_owned(), value);
        *dirty = true;
        Ok(())
    }

    /// Makes a slot unbound again.
    pub fn slot_unbind(&mut self, handle: Handle, slot: &str) -> Result<()> {
        let idx = self.live_entry(handle)?;
        self.load_entry(idx)?;
        self.upgrade_entry(idx)?;
        let class = self.handles[idx].record().expect("loaded").class.clone();
        if self.registry.current(&class)?.slot(slot).is_none() {
            return Err(Error::UnknownSlot {
                class,
                slot: slot.to_owned(),
            });
        }
        let (record, dirty) = self.handles[idx].record_mut().expect("loaded");
        if record.slots.remove(slot).is_some() {
            *dirty = true;
        }
        Ok(())
    }

    /// Reads a reference slot and returns the handle of its target. A target
    /// that was deleted or never existed is reported as
    /// [`Error::DanglingRef`].
    pub fn deref(&mut self, handle: Handle, slot: &str) -> Result<Handle> {
        match self.slot_read(handle, slot)? {
            Value::Ref(to) => match self.lookup_instance(to) {
                Err(Error::Deleted(_)) | Err(Error::UnknownOid(_)) => Err(Error::DanglingRef {
                    from: handle.oid(),
                    to,
                }),
                other => other,
            },
            _ => Err(Error::NotARef {
                class: self.handle_class(handle)?,
                slot: slot.to_owned(),
            }),
        }
    }

    /// Stages deletion of the object. References to it are not touched.
    pub fn delete_instance(&mut self, handle: Handle) -> Result<()> {
        let idx = self.live_entry(handle)?;
        self.tombstones.insert(self.handles[idx].oid);
        Ok(())
    }

    pub fn register_init_hook<F>(&mut self, class: &str, hook: F) -> Result<()>
    where
        F: FnMut(&mut Draft<'_>, &BTreeMap<String, Value>) -> Result<(), HookError>
            + Send
            + 'static,
    {
        if !self.registry.contains(class) {
            return Err(Error::UnknownClass(class.to_owned()));
        }
        if self.init_hooks.contains_key(class) {
            return Err(Error::DuplicateHook(format!("init of {class}")));
        }
        self.init_hooks.insert(class.to_owned(), Box::new(hook));
        Ok(())
    }

    /// Registers the hook run when records of `class` are upgraded to
    /// `target_version`. The version need not exist yet.
    pub fn register_migration_hook<F>(
        &mut self,
        class: &str,
        target_version: u32,
        hook: F,
    ) -> Result<()>
    where
        F: FnMut(&mut Draft<'_>, &[String], &BTreeMap<String, Value>) -> Result<(), HookError>
            + Send
            + 'static,
    {
        if !self.registry.contains(class) {
            return Err(Error::UnknownClass(class.to_owned()));
        }
        if target_version < 2 {
            return Err(Error::InvalidHookTarget(target_version));
        }
        let key = (class.to_owned(), target_version);
        if self.migration_hooks.contains_key(&key) {
            return Err(Error::DuplicateHook(format!(
                "migration of {class} to v{target_version}"
            )));
        }
        self.migration_hooks.insert(key, Box::new(hook));
        Ok(())
    }

    /// How many times the init hook of `class` has run in this session.
    pub fn init_hook_calls(&self, class: &str) -> u64 {
        self.init_calls.get(class).copied().unwrap_or(0)
    }

    pub fn handle_class(&mut self, handle: Handle) -> Result<String> {
        let idx = self.live_entry(handle)?;
        self.load_entry(idx)?;
        Ok(self.handles[idx].record().expect("loaded").class.clone())
    }

    pub fn is_loaded(&self, handle: Handle) -> Result<bool> {
        let idx = self.entry_index(handle)?;
        Ok(matches!(
            self.handles[idx].state,
            HandleState::Loaded { .. }
        ))
    }

    pub fn is_dirty(&self, handle: Handle) -> Result<bool> {
        let idx = self.entry_index(handle)?;
        Ok(self.handles[idx].is_dirty())
    }

    /// Class version of the in-memory record, if loaded.
    pub fn loaded_version(&self, handle: Handle) -> Result<Option<u32>> {
        let idx = self.entry_index(handle)?;
        Ok(self.handles[idx].record().map(|r| r.version))
    }

    /// Snapshot of the in-memory record, loading it if needed but without
    /// migrating it.
    pub fn record(&mut self, handle: Handle) -> Result<InstanceRecord> {
        let idx = self.live_entry(handle)?;
        self.load_entry(idx)?;
        Ok(self.handles[idx].record().expect("loaded").clone())
    }
}
