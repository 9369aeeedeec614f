//! Canonical, self-delimiting binary encoding of values and instance records.
//!
//! Every value is a tag byte followed by a payload:
//!
//! | tag  | kind   | payload                                   |
//! |------|--------|-------------------------------------------|
//! | 0x00 | Unit   | none                                      |
//! | 0x01 | Bool   | one byte, 0x00 or 0x01                    |
//! | 0x02 | Int    | zigzag, then unsigned LEB128              |
//! | 0x03 | Float  | 8 bytes, IEEE 754 big-endian              |
//! | 0x04 | Text   | LEB128 byte length + UTF-8                |
//! | 0x05 | Bytes  | LEB128 length + raw bytes                 |
//! | 0x06 | Symbol | LEB128 byte length + UTF-8                |
//! | 0x07 | List   | LEB128 count + elements                   |
//! | 0x08 | Map    | LEB128 count + key/value pairs            |
//! | 0x09 | Set    | LEB128 count + members                    |
//! | 0x0A | Ref    | 8 bytes, oid big-endian                   |
//!
//! Map entries are ordered by their encoded key bytes and set members by
//! their encoded bytes, both strictly ascending. The decoder rejects anything
//! else, so each value has exactly one encoding.
//!
//! An instance record is `oid (8 BE) | class name | class version (LEB128) |
//! slot count (LEB128) | (slot name, value)*` with slots in ascending
//! name-byte order.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::value::{Oid, Value, ValueMap, ValueSet};

pub const TAG_UNIT: u8 = 0x00;
pub const TAG_BOOL: u8 = 0x01;
pub const TAG_INT: u8 = 0x02;
pub const TAG_FLOAT: u8 = 0x03;
pub const TAG_TEXT: u8 = 0x04;
pub const TAG_BYTES: u8 = 0x05;
pub const TAG_SYMBOL: u8 = 0x06;
pub const TAG_LIST: u8 = 0x07;
pub const TAG_MAP: u8 = 0x08;
pub const TAG_SET: u8 = 0x09;
pub const TAG_REF: u8 = 0x0A;

/// Nesting limit on decode, so hostile input cannot exhaust the stack.
pub const MAX_DECODE_DEPTH: usize = 512;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("value at {path} is not serializable")]
    NonSerializable { path: String },
    #[error("unknown tag 0x{tag:02x} at offset {offset}")]
    UnknownTag { tag: u8, offset: usize },
    #[error("input truncated at offset {offset}")]
    Truncated { offset: usize },
    #[error("malformed UTF-8 at offset {offset}")]
    MalformedUtf8 { offset: usize },
    #[error("non-canonical encoding at offset {offset}")]
    NonCanonical { offset: usize },
    #[error("varint overflows 64 bits at offset {offset}")]
    VarintOverflow { offset: usize },
    #[error("zero oid at offset {offset}")]
    ZeroOid { offset: usize },
    #[error("nesting deeper than {MAX_DECODE_DEPTH} at offset {offset}")]
    TooDeep { offset: usize },
    #[error("duplicate slot {name:?}")]
    DuplicateSlot { name: String },
    #[error("{count} trailing bytes at offset {offset}")]
    TrailingBytes { offset: usize, count: usize },
}

pub type Result<T, E = CodecError> = std::result::Result<T, E>;

/// Persisted snapshot of one object.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InstanceRecord {
    pub oid: Oid,
    pub class: String,
    pub version: u32,
    /// Bound slots only; an unbound slot is simply absent.
    pub slots: BTreeMap<String, Value>,
}

impl InstanceRecord {
    pub fn new(oid: Oid, class: impl Into<String>, version: u32) -> Self {
        InstanceRecord {
            oid,
            class: class.into(),
            version,
            slots: BTreeMap::new(),
        }
    }

    pub fn with_slot(mut self, name: impl Into<String>, value: Value) -> Self {
        self.slots.insert(name.into(), value);
        self
    }
}

/// Leading fields of a record, enough to index it without decoding slots.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RecordHeader {
    pub oid: Oid,
    pub class: String,
    pub version: u32,
}

pub fn zigzag(n: i64) -> u64 {
    ((n << 1) ^ (n >> 63)) as u64
}

pub fn unzigzag(n: u64) -> i64 {
    ((n >> 1) as i64) ^ -((n & 1) as i64)
}

pub fn write_varint(out: &mut Vec<u8>, mut n: u64) {
    loop {
        let byte = (n & 0x7f) as u8;
        n >>= 7;
        if n == 0 {
            out.push(byte);
            return;
        }
        out.push(byte | 0x80);
    }
}

pub fn write_str(out: &mut Vec<u8>, s: &str) {
    write_varint(out, s.len() as u64);
    out.extend_from_slice(s.as_bytes());
}

/// Cursor over an input buffer. Offsets in errors are absolute.
#[derive(Debug, Clone)]
pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub fn at(buf: &'a [u8], pos: usize) -> Self {
        Reader { buf, pos }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.buf.len().saturating_sub(self.pos)
    }

    pub fn is_empty(&self) -> bool {
        self.remaining() == 0
    }

    pub fn u8(&mut self) -> Result<u8> {
        let b = *self
            .buf
            .get(self.pos)
            .ok_or(CodecError::Truncated { offset: self.pos })?;
        self.pos += 1;
        Ok(b)
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(CodecError::Truncated {
                offset: self.buf.len(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u64_be(&mut self) -> Result<u64> {
        let raw = self.take(8)?;
        Ok(u64::from_be_bytes(raw.try_into().expect("8 bytes")))
    }

    pub fn oid(&mut self) -> Result<Oid> {
        let start = self.pos;
        Oid::new(self.u64_be()?).ok_or(CodecError::ZeroOid { offset: start })
    }

    /// Unsigned LEB128, rejecting overlong forms and values past 64 bits.
    pub fn varint(&mut self) -> Result<u64> {
        let start = self.pos;
        let mut result = 0u64;
        let mut shift = 0u32;
        loop {
            let byte = self.u8()?;
            let data = u64::from(byte & 0x7f);
            if shift == 63 && data > 1 {
                return Err(CodecError::VarintOverflow { offset: start });
            }
            result |= data << shift;
            if byte & 0x80 == 0 {
                if byte == 0 && shift > 0 {
                    return Err(CodecError::NonCanonical { offset: start });
                }
                return Ok(result);
            }
            shift += 7;
            if shift > 63 {
                return Err(CodecError::VarintOverflow { offset: start });
            }
        }
    }

    pub fn length(&mut self) -> Result<usize> {
        let start = self.pos;
        let n = self.varint()?;
        // A length can never exceed the bytes left; checking early avoids
        // huge allocations on garbage input.
        usize::try_from(n)
            .ok()
            .filter(|&n| n <= self.remaining())
            .ok_or(CodecError::Truncated { offset: start })
    }

    pub fn u32_varint(&mut self) -> Result<u32> {
        let start = self.pos;
        u32::try_from(self.varint()?).map_err(|_| CodecError::VarintOverflow { offset: start })
    }

    pub fn string(&mut self) -> Result<String> {
        let len = self.length()?;
        let start = self.pos;
        let raw = self.take(len)?;
        std::str::from_utf8(raw)
            .map(str::to_owned)
            .map_err(|e| CodecError::MalformedUtf8 {
                offset: start + e.valid_up_to(),
            })
    }

    pub fn finish(&self) -> Result<()> {
        if self.is_empty() {
            Ok(())
        } else {
            Err(CodecError::TrailingBytes {
                offset: self.pos,
                count: self.remaining(),
            })
        }
    }
}

/// Encodes a value, failing with the location of any reachable `Opaque`.
pub fn encode_value(v: &Value) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    encode_value_into(v, &mut out)?;
    Ok(out)
}

pub fn encode_value_into(v: &Value, out: &mut Vec<u8>) -> Result<()> {
    let mut path = String::from("$");
    encode_at(v, out, &mut path)
}

/// Encoding of a scalar; scalars cannot hold an `Opaque`, so this is total.
pub(crate) fn encode_scalar(v: &Value) -> Vec<u8> {
    debug_assert!(v.is_scalar());
    encode_value(v).expect("scalar values are always serializable")
}

fn encode_at(v: &Value, out: &mut Vec<u8>, path: &mut String) -> Result<()> {
    match v {
        Value::Unit => out.push(TAG_UNIT),
        Value::Bool(b) => {
            out.push(TAG_BOOL);
            out.push(u8::from(*b));
        }
        Value::Int(n) => {
            out.push(TAG_INT);
            write_varint(out, zigzag(*n));
        }
        Value::Float(x) => {
            out.push(TAG_FLOAT);
            out.extend_from_slice(&x.to_bits().to_be_bytes());
        }
        Value::Text(s) => {
            out.push(TAG_TEXT);
            write_str(out, s);
        }
        Value::Bytes(b) => {
            out.push(TAG_BYTES);
            write_varint(out, b.len() as u64);
            out.extend_from_slice(b);
        }
        Value::Symbol(s) => {
            out.push(TAG_SYMBOL);
            write_str(out, s);
        }
        Value::List(items) => {
            out.push(TAG_LIST);
            write_varint(out, items.len() as u64);
            for (i, item) in items.iter().enumerate() {
                let mark = path.len();
                path.push_str(&format!("[{i}]"));
                encode_at(item, out, path)?;
                path.truncate(mark);
            }
        }
        Value::Map(m) => {
            out.push(TAG_MAP);
            write_varint(out, m.len() as u64);
            for (k, val) in m.iter() {
                encode_at(k, out, path)?;
                let mark = path.len();
                path.push_str(&format!("{{{k}}}"));
                encode_at(val, out, path)?;
                path.truncate(mark);
            }
        }
        Value::Set(s) => {
            out.push(TAG_SET);
            write_varint(out, s.len() as u64);
            for m in s.iter() {
                encode_at(m, out, path)?;
            }
        }
        Value::Ref(oid) => {
            out.push(TAG_REF);
            out.extend_from_slice(&oid.get().to_be_bytes());
        }
        Value::Opaque(_) => {
            return Err(CodecError::NonSerializable { path: path.clone() });
        }
    }
    Ok(())
}

/// Decodes one value starting at `offset`; returns it with the number of
/// bytes consumed. Bytes after the value are not examined.
pub fn decode_value(bytes: &[u8], offset: usize) -> Result<(Value, usize)> {
    let mut r = Reader::at(bytes, offset);
    let v = read_value(&mut r, 0)?;
    Ok((v, r.position() - offset))
}

/// Decodes a buffer holding exactly one value.
pub fn decode_value_exact(bytes: &[u8]) -> Result<Value> {
    let mut r = Reader::new(bytes);
    let v = read_value(&mut r, 0)?;
    r.finish()?;
    Ok(v)
}

pub fn read_value(r: &mut Reader<'_>, depth: usize) -> Result<Value> {
    let start = r.position();
    if depth > MAX_DECODE_DEPTH {
        return Err(CodecError::TooDeep { offset: start });
    }
    let tag = r.u8()?;
    Ok(match tag {
        TAG_UNIT => Value::Unit,
        TAG_BOOL => match r.u8()? {
            0 => Value::Bool(false),
            1 => Value::Bool(true),
            _ => return Err(CodecError::NonCanonical { offset: start + 1 }),
        },
        TAG_INT => Value::Int(unzigzag(r.varint()?)),
        TAG_FLOAT => Value::Float(f64::from_bits(r.u64_be()?)),
        TAG_TEXT => Value::Text(r.string()?),
        TAG_BYTES => {
            let len = r.length()?;
            Value::Bytes(r.take(len)?.to_vec())
        }
        TAG_SYMBOL => Value::Symbol(r.string()?),
        TAG_LIST => {
            let count = r.length()?;
            let mut items = Vec::with_capacity(count);
            for _ in 0..count {
                items.push(read_value(r, depth + 1)?);
            }
            Value::List(items)
        }
        TAG_MAP => {
            let count = r.length()?;
            let mut entries = Vec::with_capacity(count);
            let mut prev: Option<&[u8]> = None;
            for _ in 0..count {
                let key_start = r.position();
                let key = read_scalar(r, depth + 1)?;
                let key_bytes = &r.buf[key_start..r.position()];
                if prev.is_some_and(|p| p >= key_bytes) {
                    return Err(CodecError::NonCanonical { offset: key_start });
                }
                prev = Some(key_bytes);
                let val = read_value(r, depth + 1)?;
                entries.push((key, val));
            }
            Value::Map(ValueMap::from_sorted_unchecked(entries))
        }
        TAG_SET => {
            let count = r.length()?;
            let mut members = Vec::with_capacity(count);
            let mut prev: Option<&[u8]> = None;
            for _ in 0..count {
                let m_start = r.position();
                let m = read_scalar(r, depth + 1)?;
                let m_bytes = &r.buf[m_start..r.position()];
                if prev.is_some_and(|p| p >= m_bytes) {
                    return Err(CodecError::NonCanonical { offset: m_start });
                }
                prev = Some(m_bytes);
                members.push(m);
            }
            Value::Set(ValueSet::from_sorted_unchecked(members))
        }
        TAG_REF => Value::Ref(r.oid()?),
        other => {
            return Err(CodecError::UnknownTag {
                tag: other,
                offset: start,
            })
        }
    })
}

fn read_scalar(r: &mut Reader<'_>, depth: usize) -> Result<Value> {
    let start = r.position();
    let v = read_value(r, depth)?;
    if v.is_scalar() {
        Ok(v)
    } else {
        Err(CodecError::NonCanonical { offset: start })
    }
}

pub fn encode_record(rec: &InstanceRecord) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    encode_record_into(rec, &mut out)?;
    Ok(out)
}

pub fn encode_record_into(rec: &InstanceRecord, out: &mut Vec<u8>) -> Result<()> {
    out.extend_from_slice(&rec.oid.get().to_be_bytes());
    write_str(out, &rec.class);
    write_varint(out, u64::from(rec.version));
    write_varint(out, rec.slots.len() as u64);
    // BTreeMap<String, _> iterates in byte order of the names.
    for (name, value) in &rec.slots {
        write_str(out, name);
        let mut path = format!(".{name}");
        encode_at(value, out, &mut path)?;
    }
    Ok(())
}

pub fn read_record_header(r: &mut Reader<'_>) -> Result<RecordHeader> {
    let oid = r.oid()?;
    let class = r.string()?;
    let version = r.u32_varint()?;
    Ok(RecordHeader {
        oid,
        class,
        version,
    })
}

pub fn decode_record_header(bytes: &[u8]) -> Result<RecordHeader> {
    read_record_header(&mut Reader::new(bytes))
}

pub fn read_record(r: &mut Reader<'_>) -> Result<InstanceRecord> {
    let RecordHeader {
        oid,
        class,
        version,
    } = read_record_header(r)?;
    let count = r.length()?;
    let mut slots = BTreeMap::new();
    let mut prev: Option<String> = None;
    for _ in 0..count {
        let name_at = r.position();
        let name = r.string()?;
        if let Some(p) = &prev {
            if p.as_bytes() == name.as_bytes() {
                return Err(CodecError::DuplicateSlot { name });
            }
            if p.as_bytes() > name.as_bytes() {
                return Err(CodecError::NonCanonical { offset: name_at });
            }
        }
        let value = read_value(r, 0)?;
        prev = Some(name.clone());
        slots.insert(name, value);
    }
    Ok(InstanceRecord {
        oid,
        class,
        version,
        slots,
    })
}

/// Decodes a buffer holding exactly one record.
pub fn decode_record(bytes: &[u8]) -> Result<InstanceRecord> {
    let mut r = Reader::new(bytes);
    let rec = read_record(&mut r)?;
    r.finish()?;
    Ok(rec)
}
