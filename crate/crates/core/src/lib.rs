//! An embedded persistent object store whose data model can change while
//! data exists.
//!
//! Classes are registered as versioned descriptors. Instances live in an
//! append-only log and are reached through [`Handle`]s, which load records
//! lazily, upgrade them to the current class version on first access, and
//! track what needs writing at the next [`Session::commit`].
//!
//! ```no_run
//! use pachyderm::{open_store, SlotSpec, Value};
//!
//! # fn main() -> pachyderm::Result<()> {
//! let mut s = open_store("photos.pdb")?;
//! s.define_class("photo", vec![SlotSpec::unbound("filename")])?;
//! let p = s.create_instance("photo", [("filename", Value::text("1.jpg"))])?;
//! s.commit()?;
//!
//! // Later: add a slot. Existing photos are upgraded when touched.
//! s.redefine_class(
//!     "photo",
//!     vec![SlotSpec::unbound("filename"), SlotSpec::with_default("thumbnail", Value::text(""))],
//! )?;
//! assert_eq!(s.slot_read(p, "thumbnail")?, Value::text(""));
//! # Ok(())
//! # }
//! ```

pub mod cli;
pub mod codec;
mod error;
pub mod graph;
pub mod migration;
pub mod objects;
pub mod schema;
pub mod store;
pub mod value;

#[cfg(test)]
mod testgen;

pub use codec::{decode_record, decode_value, encode_record, encode_value, InstanceRecord};
pub use error::{Error, HookError, Result};
pub use graph::{export_subgraph, graphs_isomorphic, import_subgraph, reachable_closure};
pub use migration::{upgrade_record, Draft, MigrationHook, UpgradeCounter};
pub use objects::{Handle, InitHook};
pub use schema::{
    class_diff, parse_schema_text, ClassDescriptor, ClassDiff, Registry, SlotDefault, SlotSpec,
};
pub use store::{open_store, Finding, OpenOptionsExt, Session, VerifyReport};
pub use value::{is_scalar, value_equal, Oid, Value, ValueMap, ValueSet};
