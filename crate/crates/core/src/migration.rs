//! Bringing records written under old class versions up to date.
//!
//! Upgrades are stepwise: a record at v1 of a class now at v3 goes through
//! v2 first, and the hook registered for each target version sees exactly
//! the diff between two adjacent versions.

use std::collections::{BTreeMap, HashSet};

use thiserror::Error;

use crate::codec::InstanceRecord;
use crate::error::{Error, HookError, Result};
use crate::objects::Handle;
use crate::schema::{class_diff, ClassDescriptor, SlotDefault};
use crate::store::Session;
use crate::value::{Oid, Value};

/// Hook run for each record upgraded to a given version. Receives the
/// upgraded draft, the names of added slots and the values of discarded
/// slots.
pub type MigrationHook = Box<
    dyn FnMut(&mut Draft<'_>, &[String], &BTreeMap<String, Value>) -> Result<(), HookError> + Send,
>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DraftError {
    #[error("no slot {0:?}")]
    UnknownSlot(String),
    #[error("slot {0:?} is persistent and cannot hold an opaque value")]
    NonSerializable(String),
}

/// Mutable view of a record being initialized or upgraded, restricted to
/// the slots of one class version.
pub struct Draft<'a> {
    descriptor: &'a ClassDescriptor,
    slots: &'a mut BTreeMap<String, Value>,
}

impl<'a> Draft<'a> {
    pub(crate) fn new(
        descriptor: &'a ClassDescriptor,
        slots: &'a mut BTreeMap<String, Value>,
    ) -> Self {
        Draft { descriptor, slots }
    }

    pub fn descriptor(&self) -> &ClassDescriptor {
        self.descriptor
    }

    pub fn get(&self, slot: &str) -> Option<&Value> {
        self.slots.get(slot)
    }

    pub fn is_bound(&self, slot: &str) -> bool {
        self.slots.contains_key(slot)
    }

    pub fn set(&mut self, slot: &str, value: Value) -> Result<(), DraftError> {
        let spec = self
            .descriptor
            .slot(slot)
            .ok_or_else(|| DraftError::UnknownSlot(slot.to_owned()))?;
        if spec.persistent && value.contains_opaque() {
            return Err(DraftError::NonSerializable(slot.to_owned()));
        }
        self.slots.insert(slot.to_owned(), value);
        Ok(())
    }

    pub fn unbind(&mut self, slot: &str) -> Option<Value> {
        self.slots.remove(slot)
    }
}

/// Per-session tally of record upgrades, one count per version step.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct UpgradeCounter {
    per_class: BTreeMap<String, u64>,
}

impl UpgradeCounter {
    pub fn record(&mut self, class: &str) {
        *self.per_class.entry(class.to_owned()).or_default() += 1;
    }

    pub fn get(&self, class: &str) -> u64 {
        self.per_class.get(class).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.per_class.values().sum()
    }

    pub fn reset(&mut self) {
        self.per_class.clear();
    }
}

/// Upgrades `record` from `from` to the next version `to`.
///
/// Retained slots are copied, added slots take their constant default (or
/// stay unbound), discarded values are handed to the hook, and the hook's
/// mutations are applied last. On error the input record is unchanged.
pub fn upgrade_record(
    record: &InstanceRecord,
    from: &ClassDescriptor,
    to: &ClassDescriptor,
    hook: Option<&mut MigrationHook>,
) -> Result<InstanceRecord> {
    let skew = || Error::VersionSkew {
        class: record.class.clone(),
        record: record.version,
        from: from.version,
        to: to.version,
    };
    if record.class != from.name
        || from.name != to.name
        || record.version != from.version
        || to.version != from.version + 1
    {
        return Err(skew());
    }
    let diff = class_diff(from, to)?;

    let mut slots = BTreeMap::new();
    for name in &diff.retained {
        if let Some(v) = record.slots.get(name) {
            slots.insert(name.clone(), v.clone());
        }
    }
    let discarded: BTreeMap<String, Value> = diff
        .discarded
        .iter()
        .filter_map(|name| record.slots.get(name).map(|v| (name.clone(), v.clone())))
        .collect();
    let mut added = Vec::with_capacity(diff.added.len());
    for spec in &to.slots {
        if diff.added.contains(&spec.name) {
            if let SlotDefault::Constant(v) = &spec.default {
                slots.insert(spec.name.clone(), v.clone());
            }
            added.push(spec.name.clone());
        }
    }

    if let Some(hook) = hook {
        let mut draft = Draft::new(to, &mut slots);
        hook(&mut draft, &added, &discarded).map_err(|source| Error::HookFailure {
            class: to.name.clone(),
            kind: "migration",
            source,
        })?;
    }

    Ok(InstanceRecord {
        oid: record.oid,
        class: record.class.clone(),
        version: to.version,
        slots,
    })
}

impl Session {
    /// Upgrades the handle's record through every version up to the
    /// current one. Returns the number of steps applied; the handle is
    /// marked dirty iff that is nonzero.
    ///
    /// If a hook fails, the record stays at the last version reached.
    pub fn ensure_current(&mut self, handle: Handle) -> Result<u32> {
        let idx = self.live_entry(handle)?;
        self.load_entry(idx)?;
        self.upgrade_entry(idx)
    }

    pub(crate) fn upgrade_entry(&mut self, idx: usize) -> Result<u32> {
        let (class, mut version) = {
            let rec = self.handles[idx].record().expect("entry is loaded");
            (rec.class.clone(), rec.version)
        };
        let current = self
            .registry
            .current_version(&class)
            .ok_or_else(|| Error::UnknownClass(class.clone()))?;
        if version > current {
            return Err(Error::VersionSkew {
                class,
                record: version,
                from: current,
                to: current,
            });
        }
        let mut steps = 0;
        while version < current {
            let from = self.registry.get_descriptor(&class, version)?;
            let to = self.registry.get_descriptor(&class, version + 1)?;
            let hook = self.migration_hooks.get_mut(&(class.clone(), to.version));
            if hook.is_none() && !class_diff(from, to)?.discarded.is_empty() {
                note_missing_hook(&mut self.warned, &mut self.diagnostics, &class, to.version);
            }
            let rec = self.handles[idx].record().expect("entry is loaded");
            // Each completed step is kept, so a failing hook leaves the
            // record at the last version reached.
            let upgraded = upgrade_record(rec, from, to, hook)?;
            self.handles[idx].replace_record(upgraded);
            self.counter.record(&class);
            steps += 1;
            version += 1;
        }
        Ok(steps)
    }

    /// Upgrades every member of the class extent; returns how many records
    /// needed at least one step.
    pub fn migrate_eager(&mut self, class: &str) -> Result<usize> {
        let current = self
            .registry
            .current_version(class)
            .ok_or_else(|| Error::UnknownClass(class.to_owned()))?;
        let mut completed = 0;
        for oid in self.extent(class)? {
            // Records the index already knows to be current need no load.
            if !self.by_oid.contains_key(&oid)
                && self
                    .index
                    .get(&oid)
                    .is_some_and(|loc| loc.version == current)
            {
                continue;
            }
            let result = self
                .lookup_instance(oid)
                .and_then(|h| self.ensure_current(h));
            match result {
                Ok(0) => {}
                Ok(_) => completed += 1,
                Err(source) => {
                    return Err(Error::MigrationAborted {
                        class: class.to_owned(),
                        completed,
                        source: Box::new(source),
                    })
                }
            }
        }
        Ok(completed)
    }

    /// Live oids of `class` in this session (committed, plus staged
    /// creations, minus staged deletions), ascending.
    pub fn extent(&self, class: &str) -> Result<Vec<Oid>> {
        if !self.registry.contains(class) {
            return Err(Error::UnknownClass(class.to_owned()));
        }
        let mut oids: Vec<Oid> = self
            .extents
            .get(class)
            .into_iter()
            .flatten()
            .copied()
            .chain(
                self.created
                    .iter()
                    .filter(|(_, c)| c.as_str() == class)
                    .map(|(oid, _)| *oid),
            )
            .filter(|oid| !self.tombstones.contains(oid))
            .collect();
        oids.sort_unstable();
        Ok(oids)
    }

    pub fn upgrade_counter(&self) -> &UpgradeCounter {
        &self.counter
    }

    pub fn upgrade_counter_mut(&mut self) -> &mut UpgradeCounter {
        &mut self.counter
    }

    /// Warnings collected since the last call, e.g. slots discarded by a
    /// redefinition with no hook registered to carry them over.
    pub fn take_diagnostics(&mut self) -> Vec<String> {
        std::mem::take(&mut self.diagnostics)
    }
}

fn note_missing_hook(
    warned: &mut HashSet<(String, u32)>,
    diagnostics: &mut Vec<String>,
    class: &str,
    version: u32,
) {
    if warned.insert((class.to_owned(), version)) {
        diagnostics.push(format!(
            "no migration hook for {class} v{version}; discarded slot values are dropped"
        ));
    }
}
