//! The closed universe of storable values.
//!
//! Everything a slot can hold is a [`Value`]. Composite values nest freely,
//! except that map keys and set members must be scalar so that the binary
//! encoding has exactly one canonical form. [`Value::Opaque`] stands for host
//! resources (file handles, closures, ...) that can live in memory but can
//! never be written to a store.

use std::cmp::Ordering;
use std::fmt;
use std::num::NonZeroU64;

use thiserror::Error;

use crate::codec;

/// Store-unique object identifier. Never zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Oid(NonZeroU64);

impl Oid {
    pub fn new(id: u64) -> Option<Oid> {
        NonZeroU64::new(id).map(Oid)
    }

    pub fn get(self) -> u64 {
        self.0.get()
    }
}

impl fmt::Display for Oid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ValueError {
    #[error("map keys and set members must be scalar, got {0}")]
    NonScalarKey(&'static str),
    #[error("duplicate key {0}")]
    DuplicateKey(String),
}

/// A storable value.
///
/// Equality is structural: floats compare by bit pattern, maps and sets
/// ignore insertion order, references compare by oid.
#[derive(Clone, Debug)]
pub enum Value {
    Unit,
    Bool(bool),
    Int(i64),
    Float(f64),
    Text(String),
    Bytes(Vec<u8>),
    Symbol(String),
    List(Vec<Value>),
    Map(ValueMap),
    Set(ValueSet),
    Ref(Oid),
    /// A non-serializable host resource, identified only by a descriptive tag.
    Opaque(String),
}

impl Value {
    /// True for the kinds that may appear as map keys or set members.
    pub fn is_scalar(&self) -> bool {
        matches!(
            self,
            Value::Unit
                | Value::Bool(_)
                | Value::Int(_)
                | Value::Float(_)
                | Value::Text(_)
                | Value::Bytes(_)
                | Value::Symbol(_)
        )
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Value::Unit => "unit",
            Value::Bool(_) => "bool",
            Value::Int(_) => "int",
            Value::Float(_) => "float",
            Value::Text(_) => "text",
            Value::Bytes(_) => "bytes",
            Value::Symbol(_) => "symbol",
            Value::List(_) => "list",
            Value::Map(_) => "map",
            Value::Set(_) => "set",
            Value::Ref(_) => "ref",
            Value::Opaque(_) => "opaque",
        }
    }

    pub fn text(s: impl Into<String>) -> Value {
        Value::Text(s.into())
    }

    pub fn symbol(s: impl Into<String>) -> Value {
        Value::Symbol(s.into())
    }

    pub fn map<I>(entries: I) -> Result<Value, ValueError>
    where
        I: IntoIterator<Item = (Value, Value)>,
    {
        ValueMap::new(entries).map(Value::Map)
    }

    pub fn set<I>(members: I) -> Result<Value, ValueError>
    where
        I: IntoIterator<Item = Value>,
    {
        ValueSet::new(members).map(Value::Set)
    }

    /// True if an `Opaque` is reachable anywhere inside this value.
    pub fn contains_opaque(&self) -> bool {
        match self {
            Value::Opaque(_) => true,
            Value::List(items) => items.iter().any(Value::contains_opaque),
            Value::Map(m) => m.values().any(Value::contains_opaque),
            _ => false,
        }
    }

    /// True if a `Ref` is reachable anywhere inside this value.
    pub fn contains_ref(&self) -> bool {
        match self {
            Value::Ref(_) => true,
            Value::List(items) => items.iter().any(Value::contains_ref),
            Value::Map(m) => m.values().any(Value::contains_ref),
            _ => false,
        }
    }

    /// Calls `f` for every oid referenced from inside this value, in
    /// encoding order.
    pub fn for_each_ref(&self, f: &mut impl FnMut(Oid)) {
        match self {
            Value::Ref(oid) => f(*oid),
            Value::List(items) => items.iter().for_each(|v| v.for_each_ref(f)),
            Value::Map(m) => m.values().for_each(|v| v.for_each_ref(f)),
            _ => {}
        }
    }

    /// Returns a copy with every `Ref` rewritten through `f`.
    pub fn map_refs<E>(&self, f: &mut impl FnMut(Oid) -> Result<Oid, E>) -> Result<Value, E> {
        Ok(match self {
            Value::Ref(oid) => Value::Ref(f(*oid)?),
            Value::List(items) => Value::List(
                items
                    .iter()
                    .map(|v| v.map_refs(f))
                    .collect::<Result<_, _>>()?,
            ),
            Value::Map(m) => {
                let mut entries = Vec::with_capacity(m.len());
                for (k, v) in m.iter() {
                    entries.push((k.clone(), v.map_refs(f)?));
                }
                Value::Map(ValueMap::from_sorted_unchecked(entries))
            }
            other => other.clone(),
        })
    }
}

/// Structural equality over values (floats by bits, maps/sets unordered).
pub fn value_equal(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Unit, Value::Unit) => true,
        (Value::Bool(x), Value::Bool(y)) => x == y,
        (Value::Int(x), Value::Int(y)) => x == y,
        (Value::Float(x), Value::Float(y)) => x.to_bits() == y.to_bits(),
        (Value::Text(x), Value::Text(y)) => x == y,
        (Value::Bytes(x), Value::Bytes(y)) => x == y,
        (Value::Symbol(x), Value::Symbol(y)) => x == y,
        (Value::List(x), Value::List(y)) => {
            x.len() == y.len() && x.iter().zip(y).all(|(p, q)| value_equal(p, q))
        }
        // Both sides are kept in canonical key order, so pairwise comparison
        // is order-insensitive equality.
        (Value::Map(x), Value::Map(y)) => {
            x.len() == y.len()
                && x.iter()
                    .zip(y.iter())
                    .all(|((k1, v1), (k2, v2))| value_equal(k1, k2) && value_equal(v1, v2))
        }
        (Value::Set(x), Value::Set(y)) => {
            x.len() == y.len() && x.iter().zip(y.iter()).all(|(p, q)| value_equal(p, q))
        }
        (Value::Ref(x), Value::Ref(y)) => x == y,
        (Value::Opaque(x), Value::Opaque(y)) => x == y,
        _ => false,
    }
}

/// True iff `v` is Unit/Bool/Int/Float/Text/Bytes/Symbol.
pub fn is_scalar(v: &Value) -> bool {
    v.is_scalar()
}

impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        value_equal(self, other)
    }
}

impl Eq for Value {}

impl From<i64> for Value {
    fn from(n: i64) -> Self {
        Value::Int(n)
    }
}

impl From<bool> for Value {
    fn from(b: bool) -> Self {
        Value::Bool(b)
    }
}

impl From<f64> for Value {
    fn from(x: f64) -> Self {
        Value::Float(x)
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::Text(s.to_owned())
    }
}

impl From<Oid> for Value {
    fn from(oid: Oid) -> Self {
        Value::Ref(oid)
    }
}

fn check_scalar(v: &Value) -> Result<(), ValueError> {
    if v.is_scalar() {
        Ok(())
    } else {
        Err(ValueError::NonScalarKey(v.kind_name()))
    }
}

fn key_order(a: &[u8], b: &[u8]) -> Ordering {
    a.cmp(b)
}

/// Association from scalar keys to values, held in canonical order
/// (ascending encoded-key bytes).
#[derive(Clone, Debug, Default)]
pub struct ValueMap {
    entries: Vec<(Value, Value)>,
}

impl ValueMap {
    pub fn new<I>(entries: I) -> Result<ValueMap, ValueError>
    where
        I: IntoIterator<Item = (Value, Value)>,
    {
        let mut keyed = Vec::new();
        for (k, v) in entries {
            check_scalar(&k)?;
            keyed.push((codec::encode_scalar(&k), k, v));
        }
        keyed.sort_by(|a, b| key_order(&a.0, &b.0));
        for pair in keyed.windows(2) {
            if pair[0].0 == pair[1].0 {
                return Err(ValueError::DuplicateKey(pair[0].1.to_string()));
            }
        }
        Ok(ValueMap {
            entries: keyed.into_iter().map(|(_, k, v)| (k, v)).collect(),
        })
    }

    /// Caller guarantees `entries` are scalar-keyed, distinct and in
    /// canonical order (used by the decoder after it has checked exactly that).
    pub(crate) fn from_sorted_unchecked(entries: Vec<(Value, Value)>) -> ValueMap {
        ValueMap { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, key: &Value) -> Option<&Value> {
        self.entries
            .iter()
            .find(|(k, _)| value_equal(k, key))
            .map(|(_, v)| v)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Value, &Value)> {
        self.entries.iter().map(|(k, v)| (k, v))
    }

    pub fn keys(&self) -> impl Iterator<Item = &Value> {
        self.entries.iter().map(|(k, _)| k)
    }

    pub fn values(&self) -> impl Iterator<Item = &Value> {
        self.entries.iter().map(|(_, v)| v)
    }
}

/// Collection of distinct scalar values in canonical order.
#[derive(Clone, Debug, Default)]
pub struct ValueSet {
    members: Vec<Value>,
}

impl ValueSet {
    pub fn new<I>(members: I) -> Result<ValueSet, ValueError>
    where
        I: IntoIterator<Item = Value>,
    {
        let mut keyed = Vec::new();
        for m in members {
            check_scalar(&m)?;
            keyed.push((codec::encode_scalar(&m), m));
        }
        keyed.sort_by(|a, b| key_order(&a.0, &b.0));
        for pair in keyed.windows(2) {
            if pair[0].0 == pair[1].0 {
                return Err(ValueError::DuplicateKey(pair[0].1.to_string()));
            }
        }
        Ok(ValueSet {
            members: keyed.into_iter().map(|(_, m)| m).collect(),
        })
    }

    pub(crate) fn from_sorted_unchecked(members: Vec<Value>) -> ValueSet {
        ValueSet { members }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, v: &Value) -> bool {
        self.members.iter().any(|m| value_equal(m, v))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Value> {
        self.members.iter()
    }
}

fn write_quoted(f: &mut fmt::Formatter<'_>, s: &str) -> fmt::Result {
    f.write_str("\"")?;
    for c in s.chars() {
        match c {
            '"' => f.write_str("\\\"")?,
            '\\' => f.write_str("\\\\")?,
            c => write!(f, "{c}")?,
        }
    }
    f.write_str("\"")
}

/// Literal-style rendering. Scalars other than bytes use the same spelling
/// as schema-file literals.
impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Unit => f.write_str("unit"),
            Value::Bool(b) => write!(f, "{b}"),
            Value::Int(n) => write!(f, "{n}"),
            Value::Float(x) => write!(f, "{x:?}"),
            Value::Text(s) => write_quoted(f, s),
            Value::Bytes(b) => {
                f.write_str("#x")?;
                b.iter().try_for_each(|byte| write!(f, "{byte:02x}"))
            }
            Value::Symbol(s) => write!(f, ":{s}"),
            Value::List(items) => {
                f.write_str("[")?;
                for (i, v) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{v}")?;
                }
                f.write_str("]")
            }
            Value::Map(m) => {
                f.write_str("{")?;
                for (i, (k, v)) in m.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{k} => {v}")?;
                }
                f.write_str("}")
            }
            Value::Set(s) => {
                f.write_str("#{")?;
                for (i, v) in s.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{v}")?;
                }
                f.write_str("}")
            }
            Value::Ref(oid) => write!(f, "@{oid}"),
            Value::Opaque(tag) => write!(f, "#<opaque {tag}>"),
        }
    }
}
