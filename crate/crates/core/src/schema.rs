//! Versioned class registry.
//!
//! A class is a named list of slots. Redefining a class registers a new
//! descriptor at the next version; old descriptors stay available forever
//! because records written under them still need decoding and upgrading.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use thiserror::Error;

use crate::codec::{self, CodecError, Reader};
use crate::value::Value;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SchemaError {
    #[error("class {0:?} is already defined")]
    AlreadyDefined(String),
    #[error("invalid slot specification: {0}")]
    InvalidSlotSpec(String),
    #[error("unknown class {0:?}")]
    UnknownClass(String),
    #[error("class {class:?} has no version {version}")]
    UnknownVersion { class: String, version: u32 },
    #[error("cannot diff {old:?} against {new:?}")]
    NameMismatch { old: String, new: String },
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("descriptor for {class:?} v{version} does not extend the registry")]
    OutOfOrder { class: String, version: u32 },
    #[error(transparent)]
    Codec(#[from] CodecError),
}

pub type Result<T, E = SchemaError> = std::result::Result<T, E>;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SlotDefault {
    Unbound,
    Constant(Value),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SlotSpec {
    pub name: String,
    pub default: SlotDefault,
    /// Transient slots live only in memory and read as unbound after reload.
    pub persistent: bool,
}

impl SlotSpec {
    pub fn unbound(name: impl Into<String>) -> Self {
        SlotSpec {
            name: name.into(),
            default: SlotDefault::Unbound,
            persistent: true,
        }
    }

    pub fn with_default(name: impl Into<String>, default: Value) -> Self {
        SlotSpec {
            name: name.into(),
            default: SlotDefault::Constant(default),
            persistent: true,
        }
    }

    pub fn transient(mut self) -> Self {
        self.persistent = false;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassDescriptor {
    pub name: String,
    pub version: u32,
    pub slots: Vec<SlotSpec>,
}

impl ClassDescriptor {
    pub fn slot(&self, name: &str) -> Option<&SlotSpec> {
        self.slots.iter().find(|s| s.name == name)
    }

    pub fn slot_names(&self) -> impl Iterator<Item = &str> {
        self.slots.iter().map(|s| s.name.as_str())
    }

    pub fn is_persistent(&self, name: &str) -> bool {
        self.slot(name).is_some_and(|s| s.persistent)
    }

    /// True if both list the same slots with the same defaults and flags.
    pub fn same_slots(&self, slots: &[SlotSpec]) -> bool {
        self.slots == slots
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.encode_into(&mut out);
        out
    }

    /// Durable layout: name, version, slot count, then per slot its name, a
    /// default flag (0x00 unbound, 0x01 followed by the value) and a
    /// persistent flag byte.
    pub fn encode_into(&self, out: &mut Vec<u8>) {
        codec::write_str(out, &self.name);
        codec::write_varint(out, u64::from(self.version));
        codec::write_varint(out, self.slots.len() as u64);
        for slot in &self.slots {
            codec::write_str(out, &slot.name);
            match &slot.default {
                SlotDefault::Unbound => out.push(0x00),
                SlotDefault::Constant(v) => {
                    out.push(0x01);
                    codec::encode_value_into(v, out)
                        .expect("registered defaults never contain opaque values");
                }
            }
            out.push(u8::from(slot.persistent));
        }
    }

    pub fn read(r: &mut Reader<'_>) -> Result<ClassDescriptor> {
        let name = r.string()?;
        let version = r.u32_varint()?;
        let count = r.length()?;
        let mut slots = Vec::with_capacity(count);
        for _ in 0..count {
            let slot_name = r.string()?;
            let flag_at = r.position();
            let default = match r.u8()? {
                0x00 => SlotDefault::Unbound,
                0x01 => SlotDefault::Constant(codec::read_value(r, 0)?),
                _ => return Err(CodecError::NonCanonical { offset: flag_at }.into()),
            };
            let flag_at = r.position();
            let persistent = match r.u8()? {
                0 => false,
                1 => true,
                _ => return Err(CodecError::NonCanonical { offset: flag_at }.into()),
            };
            slots.push(SlotSpec {
                name: slot_name,
                default,
                persistent,
            });
        }
        validate_slots(&slots)?;
        if version == 0 {
            return Err(SchemaError::InvalidSlotSpec("version 0".into()));
        }
        Ok(ClassDescriptor {
            name,
            version,
            slots,
        })
    }

    pub fn decode(bytes: &[u8]) -> Result<ClassDescriptor> {
        let mut r = Reader::new(bytes);
        let d = Self::read(&mut r)?;
        r.finish()?;
        Ok(d)
    }
}

/// Slot-name partition between two versions of a class.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ClassDiff {
    pub added: BTreeSet<String>,
    pub discarded: BTreeSet<String>,
    pub retained: BTreeSet<String>,
}

impl ClassDiff {
    pub fn is_empty(&self) -> bool {
        self.added.is_empty() && self.discarded.is_empty()
    }
}

/// Diffs two descriptors of the same class by slot name.
pub fn class_diff(old: &ClassDescriptor, new: &ClassDescriptor) -> Result<ClassDiff> {
    if old.name != new.name {
        return Err(SchemaError::NameMismatch {
            old: old.name.clone(),
            new: new.name.clone(),
        });
    }
    Ok(diff_slots(&old.slots, &new.slots))
}

fn diff_slots(old: &[SlotSpec], new: &[SlotSpec]) -> ClassDiff {
    let old_names: BTreeSet<String> = old.iter().map(|s| s.name.clone()).collect();
    let new_names: BTreeSet<String> = new.iter().map(|s| s.name.clone()).collect();
    ClassDiff {
        added: new_names.difference(&old_names).cloned().collect(),
        discarded: old_names.difference(&new_names).cloned().collect(),
        retained: old_names.intersection(&new_names).cloned().collect(),
    }
}

pub fn validate_slots(slots: &[SlotSpec]) -> Result<()> {
    let mut seen = HashSet::new();
    for slot in slots {
        if slot.name.is_empty() {
            return Err(SchemaError::InvalidSlotSpec("empty slot name".into()));
        }
        if !seen.insert(slot.name.as_str()) {
            return Err(SchemaError::InvalidSlotSpec(format!(
                "duplicate slot {:?}",
                slot.name
            )));
        }
        if let SlotDefault::Constant(v) = &slot.default {
            if v.contains_opaque() {
                return Err(SchemaError::InvalidSlotSpec(format!(
                    "default of {:?} is not serializable",
                    slot.name
                )));
            }
            if v.contains_ref() {
                return Err(SchemaError::InvalidSlotSpec(format!(
                    "default of {:?} holds an object reference",
                    slot.name
                )));
            }
        }
    }
    Ok(())
}

/// All versions of every known class, plus a record of which versions were
/// registered since the last commit.
#[derive(Clone, Debug, Default)]
pub struct Registry {
    classes: BTreeMap<String, Vec<ClassDescriptor>>,
    pending: Vec<(String, u32)>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn define_class(&mut self, name: &str, slots: Vec<SlotSpec>) -> Result<&ClassDescriptor> {
        if self.classes.contains_key(name) {
            return Err(SchemaError::AlreadyDefined(name.to_owned()));
        }
        if name.is_empty() {
            return Err(SchemaError::InvalidSlotSpec("empty class name".into()));
        }
        validate_slots(&slots)?;
        let desc = ClassDescriptor {
            name: name.to_owned(),
            version: 1,
            slots,
        };
        self.pending.push((name.to_owned(), 1));
        let versions = self.classes.entry(name.to_owned()).or_default();
        versions.push(desc);
        Ok(&versions[0])
    }

    pub fn redefine_class(
        &mut self,
        name: &str,
        slots: Vec<SlotSpec>,
    ) -> Result<(&ClassDescriptor, ClassDiff)> {
        validate_slots(&slots)?;
        let versions = self
            .classes
            .get_mut(name)
            .ok_or_else(|| SchemaError::UnknownClass(name.to_owned()))?;
        let current = versions.last().expect("defined classes have a version");
        let diff = diff_slots(&current.slots, &slots);
        let version = current.version + 1;
        versions.push(ClassDescriptor {
            name: name.to_owned(),
            version,
            slots,
        });
        self.pending.push((name.to_owned(), version));
        Ok((versions.last().expect("just pushed"), diff))
    }

    pub fn get_descriptor(&self, name: &str, version: u32) -> Result<&ClassDescriptor> {
        let versions = self
            .classes
            .get(name)
            .ok_or_else(|| SchemaError::UnknownClass(name.to_owned()))?;
        version
            .checked_sub(1)
            .and_then(|i| versions.get(i as usize))
            .ok_or_else(|| SchemaError::UnknownVersion {
                class: name.to_owned(),
                version,
            })
    }

    pub fn current(&self, name: &str) -> Result<&ClassDescriptor> {
        self.classes
            .get(name)
            .and_then(|v| v.last())
            .ok_or_else(|| SchemaError::UnknownClass(name.to_owned()))
    }

    pub fn current_version(&self, name: &str) -> Option<u32> {
        self.classes
            .get(name)
            .and_then(|v| v.last())
            .map(|d| d.version)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.classes.contains_key(name)
    }

    pub fn class_names(&self) -> impl Iterator<Item = &str> {
        self.classes.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    /// Every version of `name`, oldest first.
    pub fn history(&self, name: &str) -> Result<&[ClassDescriptor]> {
        self.classes
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| SchemaError::UnknownClass(name.to_owned()))
    }

    /// Every registered descriptor, class by class, oldest version first.
    pub fn all_descriptors(&self) -> impl Iterator<Item = &ClassDescriptor> {
        self.classes.values().flatten()
    }

    /// Installs a descriptor read back from durable storage (or an import);
    /// it must be exactly the next version of its class.
    pub fn install(&mut self, desc: ClassDescriptor) -> Result<()> {
        let next = self.current_version(&desc.name).unwrap_or(0) + 1;
        if desc.version != next {
            return Err(SchemaError::OutOfOrder {
                class: desc.name,
                version: desc.version,
            });
        }
        validate_slots(&desc.slots)?;
        self.classes
            .entry(desc.name.clone())
            .or_default()
            .push(desc);
        Ok(())
    }

    /// Like [`Registry::install`], but the descriptor counts as staged
    /// until the next commit.
    pub fn install_pending(&mut self, desc: ClassDescriptor) -> Result<()> {
        let key = (desc.name.clone(), desc.version);
        self.install(desc)?;
        self.pending.push(key);
        Ok(())
    }

    pub fn has_pending(&self) -> bool {
        !self.pending.is_empty()
    }

    /// Descriptors registered since the last commit, in registration order.
    pub fn pending(&self) -> impl Iterator<Item = &ClassDescriptor> {
        self.pending.iter().map(|(name, version)| {
            self.get_descriptor(name, *version)
                .expect("pending descriptors are registered")
        })
    }

    pub fn mark_committed(&mut self) {
        self.pending.clear();
    }

    /// Drops every descriptor registered since the last commit.
    pub fn discard_pending(&mut self) {
        for (name, version) in self.pending.drain(..).rev() {
            if let Some(versions) = self.classes.get_mut(&name) {
                if versions.last().is_some_and(|d| d.version == version) {
                    versions.pop();
                }
                if versions.is_empty() {
                    self.classes.remove(&name);
                }
            }
        }
    }
}

/// One `class ... end` block from a schema file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassDefinition {
    pub name: String,
    pub slots: Vec<SlotSpec>,
}

/// Parses the line-oriented schema grammar:
///
/// ```text
/// class photo
///   slot filename
///   slot thumbnail default "" transient
/// end
/// ```
///
/// Literals: `unit`, `true`, `false`, integers, floats (must contain `.`),
/// double-quoted strings with `\"` and `\\` escapes, and `:symbol`.
pub fn parse_schema_text(text: &str) -> Result<Vec<ClassDefinition>> {
    let mut defs = Vec::new();
    let mut open: Option<(usize, ClassDefinition)> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let err = |reason: String| SchemaError::Parse { line, reason };
        let tokens = tokenize(raw).map_err(err)?;
        let Some(first) = tokens.first() else {
            continue;
        };
        match (first.as_str(), open.as_mut()) {
            ("class", None) => {
                let [_, name] = tokens.as_slice() else {
                    return Err(err("expected `class <name>`".into()));
                };
                check_ident(name).map_err(err)?;
                open = Some((
                    line,
                    ClassDefinition {
                        name: name.clone(),
                        slots: Vec::new(),
                    },
                ));
            }
            ("class", Some(_)) => return Err(err("`class` inside an open class".into())),
            ("slot", Some((_, def))) => {
                let slot = parse_slot(&tokens[1..]).map_err(err)?;
                if def.slots.iter().any(|s| s.name == slot.name) {
                    return Err(err(format!("duplicate slot {:?}", slot.name)));
                }
                def.slots.push(slot);
            }
            ("slot", None) => return Err(err("`slot` outside a class".into())),
            ("end", Some(_)) => {
                if tokens.len() != 1 {
                    return Err(err("unexpected tokens after `end`".into()));
                }
                let (_, def) = open.take().expect("matched Some");
                if def.slots.is_empty() {
                    return Err(err(format!("class {:?} has no slots", def.name)));
                }
                defs.push(def);
            }
            ("end", None) => return Err(err("`end` without `class`".into())),
            (other, _) => return Err(err(format!("unexpected {other:?}"))),
        }
    }
    if let Some((line, def)) = open {
        return Err(SchemaError::Parse {
            line,
            reason: format!("class {:?} is missing `end`", def.name),
        });
    }
    Ok(defs)
}

fn check_ident(name: &str) -> std::result::Result<(), String> {
    if name.starts_with('"') || name.starts_with(':') {
        Err(format!("invalid name {name:?}"))
    } else {
        Ok(())
    }
}

fn parse_slot(tokens: &[String]) -> std::result::Result<SlotSpec, String> {
    let Some((name, mut rest)) = tokens.split_first() else {
        return Err("expected `slot <name>`".into());
    };
    check_ident(name)?;
    let mut slot = SlotSpec::unbound(name.clone());
    if let Some(("default", tail)) = rest.split_first().map(|(h, t)| (h.as_str(), t)) {
        let Some((lit, tail)) = tail.split_first() else {
            return Err("`default` needs a literal".into());
        };
        slot.default = SlotDefault::Constant(parse_literal(lit)?);
        rest = tail;
    }
    match rest {
        [] => {}
        [t] if t == "transient" => slot.persistent = false,
        [t, ..] => return Err(format!("unexpected {t:?}")),
    }
    Ok(slot)
}

/// Parses one literal token.
pub fn parse_literal(tok: &str) -> std::result::Result<Value, String> {
    match tok {
        "unit" => return Ok(Value::Unit),
        "true" => return Ok(Value::Bool(true)),
        "false" => return Ok(Value::Bool(false)),
        _ => {}
    }
    if let Some(body) = tok.strip_prefix('"') {
        return unquote(body).map(Value::Text);
    }
    if let Some(sym) = tok.strip_prefix(':') {
        if sym.is_empty() {
            return Err("empty symbol".into());
        }
        return Ok(Value::Symbol(sym.to_owned()));
    }
    if tok.contains('.') {
        return tok
            .parse::<f64>()
            .map(Value::Float)
            .map_err(|_| format!("bad float literal {tok:?}"));
    }
    tok.parse::<i64>()
        .map(Value::Int)
        .map_err(|_| format!("bad literal {tok:?}"))
}

// `body` is the token after the opening quote, closing quote included.
fn unquote(body: &str) -> std::result::Result<String, String> {
    let mut out = String::new();
    let mut chars = body.chars();
    while let Some(c) = chars.next() {
        match c {
            '\\' => match chars.next() {
                Some(e @ ('"' | '\\')) => out.push(e),
                Some(e) => return Err(format!("unknown escape \\{e}")),
                None => return Err("unterminated string".into()),
            },
            '"' => {
                return if chars.next().is_none() {
                    Ok(out)
                } else {
                    Err("text after closing quote".into())
                }
            }
            c => out.push(c),
        }
    }
    Err("unterminated string".into())
}

/// Whitespace-separated tokens; a double-quoted string is one token
/// (quotes and escapes kept for `parse_literal`).
fn tokenize(line: &str) -> std::result::Result<Vec<String>, String> {
    let mut tokens = Vec::new();
    let mut chars = line.chars().peekable();
    while let Some(&c) = chars.peek() {
        if c.is_whitespace() {
            chars.next();
            continue;
        }
        let mut tok = String::new();
        if c == '"' {
            tok.push(chars.next().expect("peeked"));
            let mut closed = false;
            while let Some(c) = chars.next() {
                tok.push(c);
                match c {
                    '\\' => {
                        if let Some(e) = chars.next() {
                            tok.push(e);
                        }
                    }
                    '"' => {
                        closed = true;
                        break;
                    }
                    _ => {}
                }
            }
            if !closed {
                return Err("unterminated string".into());
            }
            if chars.peek().is_some_and(|c| !c.is_whitespace()) {
                return Err("text after closing quote".into());
            }
        } else {
            while let Some(&c) = chars.peek() {
                if c.is_whitespace() {
                    break;
                }
                tok.push(c);
                chars.next();
            }
        }
        tokens.push(tok);
    }
    Ok(tokens)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn names(xs: &[&str]) -> BTreeSet<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    fn point_slots() -> Vec<SlotSpec> {
        vec![
            SlotSpec::with_default("x", Value::Int(0)),
            SlotSpec::with_default("y", Value::Int(0)),
        ]
    }

    #[test]
    fn define_registers_version_one() {
        let mut reg = Registry::new();
        let d = reg.define_class("point", point_slots()).unwrap();
        assert_eq!(d.version, 1);
        assert_eq!(reg.get_descriptor("point", 1).unwrap().slots, point_slots());
        assert_eq!(reg.pending().count(), 1);
    }

    #[test]
    fn define_twice_fails() {
        let mut reg = Registry::new();
        reg.define_class("point", point_slots()).unwrap();
        assert_eq!(
            reg.define_class("point", point_slots()).unwrap_err(),
            SchemaError::AlreadyDefined("point".into())
        );
    }

    #[test]
    fn duplicate_slot_names_rejected() {
        let mut reg = Registry::new();
        let err = reg
            .define_class("p", vec![SlotSpec::unbound("a"), SlotSpec::unbound("a")])
            .unwrap_err();
        assert!(matches!(err, SchemaError::InvalidSlotSpec(_)));
    }

    #[test]
    fn ref_and_opaque_defaults_rejected() {
        let mut reg = Registry::new();
        let r = Value::Ref(crate::value::Oid::new(1).unwrap());
        assert!(matches!(
            reg.define_class("p", vec![SlotSpec::with_default("a", r)]),
            Err(SchemaError::InvalidSlotSpec(_))
        ));
        assert!(matches!(
            reg.define_class(
                "p",
                vec![SlotSpec::with_default(
                    "a",
                    Value::List(vec![Value::Opaque("f".into())])
                )]
            ),
            Err(SchemaError::InvalidSlotSpec(_))
        ));
    }

    #[test]
    fn redefine_adds_thumbnail() {
        let mut reg = Registry::new();
        reg.define_class("photo", vec![SlotSpec::unbound("filename")])
            .unwrap();
        let (d, diff) = reg
            .redefine_class(
                "photo",
                vec![
                    SlotSpec::unbound("filename"),
                    SlotSpec::unbound("thumbnail"),
                ],
            )
            .unwrap();
        assert_eq!(d.version, 2);
        assert_eq!(diff.added, names(&["thumbnail"]));
        assert!(diff.discarded.is_empty());
        assert_eq!(diff.retained, names(&["filename"]));
    }

    #[test]
    fn redefine_identical_still_bumps() {
        let mut reg = Registry::new();
        reg.define_class("point", point_slots()).unwrap();
        let (d, diff) = reg.redefine_class("point", point_slots()).unwrap();
        assert_eq!(d.version, 2);
        assert!(diff.is_empty());
    }

    #[test]
    fn redefine_ab_to_bc() {
        let mut reg = Registry::new();
        reg.define_class("k", vec![SlotSpec::unbound("a"), SlotSpec::unbound("b")])
            .unwrap();
        let (_, diff) = reg
            .redefine_class("k", vec![SlotSpec::unbound("b"), SlotSpec::unbound("c")])
            .unwrap();
        assert_eq!(diff.added, names(&["c"]));
        assert_eq!(diff.discarded, names(&["a"]));
        assert_eq!(diff.retained, names(&["b"]));
        let old = reg.get_descriptor("k", 1).unwrap();
        let new = reg.get_descriptor("k", 2).unwrap();
        assert_eq!(class_diff(old, new).unwrap(), diff);
    }

    #[test]
    fn redefine_unknown() {
        let mut reg = Registry::new();
        assert_eq!(
            reg.redefine_class("nope", vec![]).unwrap_err(),
            SchemaError::UnknownClass("nope".into())
        );
    }

    #[test]
    fn retained_slot_with_changed_default_stays_retained() {
        let old = ClassDescriptor {
            name: "c".into(),
            version: 1,
            slots: vec![SlotSpec::unbound("a")],
        };
        let new = ClassDescriptor {
            name: "c".into(),
            version: 2,
            slots: vec![SlotSpec::with_default("a", Value::Int(1)).transient()],
        };
        let diff = class_diff(&old, &new).unwrap();
        assert_eq!(diff.retained, names(&["a"]));
        assert!(diff.is_empty());
    }

    #[test]
    fn diff_name_mismatch() {
        let a = ClassDescriptor {
            name: "a".into(),
            version: 1,
            slots: vec![],
        };
        let b = ClassDescriptor {
            name: "b".into(),
            version: 1,
            slots: vec![],
        };
        assert!(matches!(
            class_diff(&a, &b),
            Err(SchemaError::NameMismatch { .. })
        ));
    }

    #[test]
    fn get_descriptor_versions() {
        let mut reg = Registry::new();
        reg.define_class("point", point_slots()).unwrap();
        assert_eq!(reg.get_descriptor("point", 1).unwrap().version, 1);
        assert_eq!(
            reg.get_descriptor("point", 2).unwrap_err(),
            SchemaError::UnknownVersion {
                class: "point".into(),
                version: 2
            }
        );
        assert!(matches!(
            reg.get_descriptor("point", 0),
            Err(SchemaError::UnknownVersion { .. })
        ));
        reg.redefine_class("point", vec![]).unwrap();
        assert_eq!(
            reg.current("point").unwrap(),
            reg.get_descriptor("point", 2).unwrap()
        );
    }

    #[test]
    fn discard_pending_reverts() {
        let mut reg = Registry::new();
        reg.define_class("a", vec![]).unwrap();
        reg.mark_committed();
        reg.redefine_class("a", vec![SlotSpec::unbound("x")])
            .unwrap();
        reg.define_class("b", vec![]).unwrap();
        reg.discard_pending();
        assert_eq!(reg.current_version("a"), Some(1));
        assert!(!reg.contains("b"));
        assert!(!reg.has_pending());
    }

    #[test]
    fn descriptor_layout() {
        let d = ClassDescriptor {
            name: "p".into(),
            version: 2,
            slots: vec![
                SlotSpec::unbound("a"),
                SlotSpec::with_default("b", Value::Int(0)).transient(),
            ],
        };
        let bytes = d.encode();
        assert_eq!(
            bytes,
            [1, b'p', 2, 2, 1, b'a', 0x00, 1, 1, b'b', 0x01, 0x02, 0x00, 0]
        );
        assert_eq!(ClassDescriptor::decode(&bytes).unwrap(), d);
    }

    #[test]
    fn parse_point() {
        let defs =
            parse_schema_text("class point\n  slot x default 0\n  slot y default 0\nend").unwrap();
        assert_eq!(
            defs,
            vec![ClassDefinition {
                name: "point".into(),
                slots: point_slots()
            }]
        );
    }

    #[test]
    fn parse_unbound_slot() {
        let defs = parse_schema_text("class p\n  slot s\nend").unwrap();
        assert_eq!(defs[0].slots, vec![SlotSpec::unbound("s")]);
    }

    #[test]
    fn parse_default_without_literal() {
        assert_eq!(
            parse_schema_text("class p\n  slot s default\nend").unwrap_err(),
            SchemaError::Parse {
                line: 2,
                reason: "`default` needs a literal".into()
            }
        );
    }

    #[test]
    fn parse_literals_and_transient() {
        let text = r#"
class all
  slot u default unit
  slot t default true
  slot f default false
  slot i default -42
  slot x default 1.5
  slot s default "a \"q\" \\ b"
  slot y default :sym
  slot h transient
  slot z default "two words" transient
end

class second
  slot a
end
"#;
        let defs = parse_schema_text(text).unwrap();
        assert_eq!(defs.len(), 2);
        let s = &defs[0].slots;
        let defaults: Vec<_> = s.iter().map(|s| s.default.clone()).collect();
        assert_eq!(
            defaults,
            vec![
                SlotDefault::Constant(Value::Unit),
                SlotDefault::Constant(Value::Bool(true)),
                SlotDefault::Constant(Value::Bool(false)),
                SlotDefault::Constant(Value::Int(-42)),
                SlotDefault::Constant(Value::Float(1.5)),
                SlotDefault::Constant(Value::text("a \"q\" \\ b")),
                SlotDefault::Constant(Value::symbol("sym")),
                SlotDefault::Unbound,
                SlotDefault::Constant(Value::text("two words")),
            ]
        );
        assert!(!s[7].persistent);
        assert!(!s[8].persistent);
        assert!(s[0].persistent);
    }

    #[test]
    fn parse_errors_carry_line() {
        let cases = [
            ("slot a\n", 1),
            ("class a\nclass b\n", 2),
            ("class a\n  slot b\n", 1),
            ("class a\n  slot b default \"open\nend\n", 2),
            ("class a\n  slot b bogus\nend\n", 2),
            ("class a\nend\n", 2),
            ("end\n", 1),
            ("class a\n  slot b\n  slot b\nend\n", 3),
            ("class a\n  slot b default 1x\nend\n", 2),
        ];
        for (text, line) in cases {
            match parse_schema_text(text) {
                Err(SchemaError::Parse { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
    }

    proptest! {
        #[test]
        fn diff_partitions(
            old in proptest::collection::btree_set("[a-e]", 0..5),
            new in proptest::collection::btree_set("[a-e]", 0..5),
        ) {
            let mk = |names: &BTreeSet<String>, v| ClassDescriptor {
                name: "c".into(),
                version: v,
                slots: names.iter().map(SlotSpec::unbound).collect(),
            };
            let diff = class_diff(&mk(&old, 1), &mk(&new, 2)).unwrap();
            prop_assert!(diff.added.is_disjoint(&diff.discarded));
            prop_assert!(diff.added.is_disjoint(&diff.retained));
            prop_assert!(diff.discarded.is_disjoint(&diff.retained));
            let added_retained: BTreeSet<_> = diff.added.union(&diff.retained).cloned().collect();
            let discarded_retained: BTreeSet<_> = diff.discarded.union(&diff.retained).cloned().collect();
            prop_assert_eq!(added_retained, new);
            prop_assert_eq!(discarded_retained, old);
        }

        #[test]
        fn versions_stay_contiguous(ops in proptest::collection::vec((0u8..3, 0usize..3), 0..30)) {
            let mut reg = Registry::new();
            let classes = ["a", "b", "c"];
            for (op, which) in ops {
                let name = classes[which];
                let _ = match op {
                    0 => reg.define_class(name, vec![]).map(|_| ()),
                    1 => reg.redefine_class(name, vec![SlotSpec::unbound("s")]).map(|_| ()),
                    _ => { reg.discard_pending(); Ok(()) }
                };
                if op == 1 && which == 0 { reg.mark_committed(); }
            }
            for name in classes {
                if let Ok(history) = reg.history(name) {
                    for (i, d) in history.iter().enumerate() {
                        prop_assert_eq!(d.version as usize, i + 1);
                    }
                }
            }
        }
    }
}
