// Shared by several test targets; not every target uses every helper.
#![allow(dead_code)]

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use pachyderm::codec::encode_value;
use pachyderm::{InstanceRecord, Oid, Session, Value};
use rand::Rng;
use tempfile::TempDir;

pub struct TempStore {
    pub dir: TempDir,
    pub path: PathBuf,
}

impl TempStore {
    pub fn new() -> TempStore {
        let dir = tempfile::tempdir().expect("tempdir");
        let path = dir.path().join("store.pdb");
        TempStore { dir, path }
    }

    pub fn open(&self) -> Session {
        Session::open(&self.path).expect("open store")
    }

    pub fn sibling(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
}

pub fn oid(n: u64) -> Oid {
    Oid::new(n).expect("nonzero")
}

pub fn random_scalar<R: Rng>(rng: &mut R) -> Value {
    match rng.random_range(0..7) {
        0 => Value::Unit,
        1 => Value::Bool(rng.random()),
        2 => Value::Int(match rng.random_range(0..4) {
            0 => rng.random_range(-64..64),
            1 => i64::MIN,
            2 => i64::MAX,
            _ => rng.random(),
        }),
        3 => Value::Float(f64::from_bits(match rng.random_range(0..3) {
            0 => f64::NAN.to_bits() | rng.random_range(0..16),
            1 => (-0.0f64).to_bits(),
            _ => rng.random(),
        })),
        4 => Value::Text(random_text(rng)),
        5 => {
            let n = rng.random_range(0..12);
            Value::Bytes((0..n).map(|_| rng.random()).collect())
        }
        _ => Value::Symbol(random_text(rng)),
    }
}

pub fn random_text<R: Rng>(rng: &mut R) -> String {
    const POOL: &[char] = &[
        'a', 'b', 'z', ' ', '"', '\\', 'é', 'λ', '中', '🦣', '\0', '\n',
    ];
    let n = rng.random_range(0..10);
    (0..n)
        .map(|_| POOL[rng.random_range(0..POOL.len())])
        .collect()
}

/// A random value with at most `depth` levels of nesting below it, spending
/// nodes from `budget`.
pub fn random_value<R: Rng>(rng: &mut R, depth: usize, budget: &mut usize) -> Value {
    *budget = budget.saturating_sub(1);
    if depth == 0 || *budget == 0 || rng.random_range(0..10) < 4 {
        return if rng.random_range(0..12) == 0 {
            Value::Ref(oid(rng.random_range(1..=u64::MAX)))
        } else {
            random_scalar(rng)
        };
    }
    let width = rng.random_range(0..8);
    match rng.random_range(0..3) {
        0 => {
            let mut items = Vec::new();
            while items.len() < width && *budget > 0 {
                items.push(random_value(rng, depth - 1, budget));
            }
            Value::List(items)
        }
        1 => {
            let keys = distinct_scalars(rng, width, budget);
            let entries: Vec<_> = keys
                .into_iter()
                .map(|k| (k, random_value(rng, depth - 1, budget)))
                .collect();
            Value::map(entries).expect("distinct scalar keys")
        }
        _ => Value::set(distinct_scalars(rng, width, budget)).expect("distinct scalars"),
    }
}

fn distinct_scalars<R: Rng>(rng: &mut R, n: usize, budget: &mut usize) -> Vec<Value> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for _ in 0..n {
        if *budget == 0 {
            break;
        }
        *budget -= 1;
        let k = random_scalar(rng);
        if seen.insert(encode_value(&k).expect("scalar encodes")) {
            out.push(k);
        }
    }
    out
}

pub fn count_nodes(v: &Value) -> usize {
    1 + match v {
        Value::List(items) => items.iter().map(count_nodes).sum(),
        Value::Map(m) => m.iter().map(|(k, v)| count_nodes(k) + count_nodes(v)).sum(),
        Value::Set(s) => s.len(),
        _ => 0,
    }
}

pub fn depth(v: &Value) -> usize {
    match v {
        Value::List(items) => 1 + items.iter().map(depth).max().unwrap_or(0),
        Value::Map(m) => 1 + m.values().map(depth).max().unwrap_or(0),
        Value::Set(s) if !s.is_empty() => 1,
        _ => 0,
    }
}

/// Everything a reader can observe about committed objects: for each live
/// oid, its class, stored version and persistent slots, plus the schema.
#[derive(Debug, PartialEq)]
pub struct Snapshot {
    pub sequence: u64,
    pub schema: Vec<(String, u32, Vec<String>)>,
    pub records: BTreeMap<u64, InstanceRecord>,
}

pub fn snapshot(s: &mut Session) -> Snapshot {
    let mut schema = Vec::new();
    for d in s.registry().all_descriptors() {
        schema.push((
            d.name.clone(),
            d.version,
            d.slot_names().map(str::to_owned).collect(),
        ));
    }
    let mut records = BTreeMap::new();
    for o in s.committed_oids() {
        let h = s.lookup_instance(o).expect("committed oid resolves");
        records.insert(o.get(), s.record(h).expect("record loads"));
    }
    Snapshot {
        sequence: s.sequence(),
        schema,
        records,
    }
}

/// Frame boundaries of a store file, found by walking the length prefixes
/// directly: `(offset, kind, payload_len)`.
pub fn frames(bytes: &[u8]) -> Vec<(usize, u8, usize)> {
    let mut out = Vec::new();
    let mut pos = 16;
    while pos + 5 <= bytes.len() {
        let len = u32::from_be_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize;
        let end = pos + 4 + 1 + len + 4;
        if end > bytes.len() {
            break;
        }
        out.push((pos, bytes[pos + 4], len));
        pos = end;
    }
    out
}

pub fn file_len(path: &Path) -> u64 {
    std::fs::metadata(path).expect("stat").len()
}
