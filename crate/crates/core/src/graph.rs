//! Object-graph traversal and identity-preserving export/import.
//!
//! A graph blob holds a closed subgraph: `PGRF`, the class descriptors its
//! records need (every version from 1 up, so the importing registry stays
//! contiguous), then the records with oids renumbered densely from 1 in
//! breadth-first order from the roots. Sharing and cycles survive because
//! every object appears once and references point at dense ids.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use crate::codec::{self, InstanceRecord, Reader};
use crate::error::{Error, Result};
use crate::schema::{ClassDescriptor, Registry};
use crate::store::Session;
use crate::value::{Oid, Value};

pub const GRAPH_MAGIC: &[u8; 4] = b"PGRF";

fn live_record(session: &Session, oid: Oid) -> Result<std::borrow::Cow<'_, InstanceRecord>> {
    session.view_record(oid)?.ok_or(Error::Deleted(oid))
}

fn refs_of(record: &InstanceRecord) -> Vec<Oid> {
    let mut out = Vec::new();
    for v in record.slots.values() {
        v.for_each_ref(&mut |oid| out.push(oid));
    }
    out
}

/// Breadth-first visit order of everything reachable from `roots`. Each oid
/// appears exactly once.
pub fn visit_order(session: &Session, roots: &[Oid]) -> Result<Vec<Oid>> {
    let mut seen = BTreeSet::new();
    let mut order = Vec::new();
    let mut queue = VecDeque::new();
    for &root in roots {
        match session.view_record(root) {
            Ok(Some(_)) => {}
            Ok(None) => return Err(Error::Deleted(root)),
            Err(e) => return Err(e),
        }
        if seen.insert(root) {
            queue.push_back(root);
        }
    }
    while let Some(oid) = queue.pop_front() {
        order.push(oid);
        let record = live_record(session, oid)?;
        for to in refs_of(&record) {
            if seen.contains(&to) {
                continue;
            }
            match session.view_record(to) {
                Ok(Some(_)) => {}
                Ok(None) | Err(Error::UnknownOid(_)) => {
                    return Err(Error::DanglingRef { from: oid, to })
                }
                Err(e) => return Err(e),
            }
            seen.insert(to);
            queue.push_back(to);
        }
    }
    Ok(order)
}

/// Oids reachable from `roots` through references, roots included.
pub fn reachable_closure(session: &Session, roots: &[Oid]) -> Result<BTreeSet<Oid>> {
    Ok(visit_order(session, roots)?.into_iter().collect())
}

/// Serializes the closure of `roots`. Root `i` (first occurrence) gets dense
/// id `i + 1`.
pub fn export_subgraph(session: &Session, roots: &[Oid]) -> Result<Vec<u8>> {
    let order = visit_order(session, roots)?;
    let dense: HashMap<Oid, Oid> = order
        .iter()
        .enumerate()
        .map(|(i, &oid)| (oid, Oid::new(i as u64 + 1).expect("nonzero")))
        .collect();

    let mut records = Vec::with_capacity(order.len());
    let mut classes = BTreeSet::new();
    for &oid in &order {
        let record = live_record(session, oid)?;
        let stored = session.persistent_part(&record)?;
        let slots = stored
            .slots
            .iter()
            .map(|(name, v)| {
                let v = v.map_refs(&mut |to| Ok::<_, Error>(dense[&to]))?;
                Ok((name.clone(), v))
            })
            .collect::<Result<BTreeMap<_, _>>>()?;
        classes.insert(stored.class.clone());
        records.push(InstanceRecord {
            oid: dense[&oid],
            class: stored.class,
            version: stored.version,
            slots,
        });
    }

    let mut out = GRAPH_MAGIC.to_vec();
    let descriptors: Vec<&ClassDescriptor> = classes
        .iter()
        .map(|c| session.registry().history(c))
        .collect::<std::result::Result<Vec<_>, _>>()?
        .into_iter()
        .flatten()
        .collect();
    codec::write_varint(&mut out, descriptors.len() as u64);
    for d in descriptors {
        d.encode_into(&mut out);
    }
    codec::write_varint(&mut out, records.len() as u64);
    for r in &records {
        codec::encode_record_into(r, &mut out)?;
    }
    Ok(out)
}

/// Parsed and validated graph blob.
#[derive(Debug, Clone)]
pub struct GraphBlob {
    pub descriptors: Vec<ClassDescriptor>,
    /// Records in dense-id order; `records[i].oid == i + 1`.
    pub records: Vec<InstanceRecord>,
}

fn malformed(e: impl std::fmt::Display) -> Error {
    Error::Malformed(e.to_string())
}

impl GraphBlob {
    pub fn parse(bytes: &[u8]) -> Result<GraphBlob> {
        if !bytes.starts_with(GRAPH_MAGIC) {
            return Err(malformed("missing PGRF magic"));
        }
        let mut r = Reader::at(bytes, GRAPH_MAGIC.len());
        let n = r.length().map_err(malformed)?;
        let mut descriptors = Vec::with_capacity(n);
        let mut scratch = Registry::new();
        for _ in 0..n {
            let d = ClassDescriptor::read(&mut r).map_err(malformed)?;
            scratch.install(d.clone()).map_err(malformed)?;
            descriptors.push(d);
        }
        let count = r.length().map_err(malformed)?;
        let mut records: Vec<Option<InstanceRecord>> = vec![None; count];
        for _ in 0..count {
            let rec = codec::read_record(&mut r).map_err(malformed)?;
            let id = rec.oid.get();
            let slot = usize::try_from(id - 1)
                .ok()
                .and_then(|i| records.get_mut(i))
                .ok_or_else(|| malformed(format!("dense id {id} out of range")))?;
            if slot.is_some() {
                return Err(malformed(format!("dense id {id} appears twice")));
            }
            let desc = scratch
                .get_descriptor(&rec.class, rec.version)
                .map_err(malformed)?;
            for name in rec.slots.keys() {
                if !desc.is_persistent(name) {
                    return Err(malformed(format!(
                        "{} v{} has no persistent slot {name:?}",
                        rec.class, rec.version
                    )));
                }
            }
            for to in refs_of(&rec) {
                if to.get() as usize > count {
                    return Err(malformed(format!("reference to {to} leaves the blob")));
                }
            }
            *slot = Some(rec);
        }
        r.finish().map_err(malformed)?;
        Ok(GraphBlob {
            descriptors,
            records: records
                .into_iter()
                .map(|r| r.expect("all ids seen"))
                .collect(),
        })
    }
}

/// Adds the blob's objects to the session under fresh oids. Returns the
/// dense-id to oid mapping. Nothing is staged unless the whole blob is
/// acceptable.
pub fn import_subgraph(session: &mut Session, bytes: &[u8]) -> Result<BTreeMap<u64, Oid>> {
    let blob = GraphBlob::parse(bytes)?;

    let mut to_install = Vec::new();
    for d in &blob.descriptors {
        match session.registry().get_descriptor(&d.name, d.version) {
            Ok(existing) if existing == d => {}
            Ok(_) => return Err(Error::SchemaConflict(d.name.clone())),
            Err(_) => to_install.push(d.clone()),
        }
    }
    for d in to_install {
        session.registry.install_pending(d).map_err(|e| match e {
            crate::schema::SchemaError::OutOfOrder { class, .. } => Error::SchemaConflict(class),
            other => other.into(),
        })?;
    }

    let base = session.pending_next_oid;
    let fresh = |dense: Oid| Oid::new(base + dense.get() - 1).expect("nonzero");
    let mut mapping = BTreeMap::new();
    for rec in blob.records {
        let oid = fresh(rec.oid);
        let slots = rec
            .slots
            .into_iter()
            .map(|(k, v)| Ok((k, v.map_refs(&mut |to| Ok::<_, Error>(fresh(to)))?)))
            .collect::<Result<BTreeMap<String, Value>>>()?;
        mapping.insert(rec.oid.get(), oid);
        session.stage_imported(InstanceRecord {
            oid,
            class: rec.class,
            version: rec.version,
            slots,
        });
    }
    session.pending_next_oid = base + mapping.len() as u64;
    Ok(mapping)
}

/// Pairs up refs met while comparing two values, failing on any mismatch.
struct Matcher {
    forward: HashMap<Oid, Oid>,
    backward: HashMap<Oid, Oid>,
    queue: VecDeque<(Oid, Oid)>,
}

impl Matcher {
    fn pair(&mut self, a: Oid, b: Oid) -> bool {
        match (self.forward.get(&a), self.backward.get(&b)) {
            (Some(&x), Some(&y)) => x == b && y == a,
            (None, None) => {
                self.forward.insert(a, b);
                self.backward.insert(b, a);
                self.queue.push_back((a, b));
                true
            }
            _ => false,
        }
    }

    fn values(&mut self, a: &Value, b: &Value) -> bool {
        match (a, b) {
            (Value::Ref(x), Value::Ref(y)) => self.pair(*x, *y),
            (Value::List(xs), Value::List(ys)) => {
                xs.len() == ys.len() && xs.iter().zip(ys).all(|(x, y)| self.values(x, y))
            }
            (Value::Map(xs), Value::Map(ys)) => {
                xs.len() == ys.len()
                    && xs
                        .iter()
                        .zip(ys.iter())
                        .all(|((k1, v1), (k2, v2))| k1 == k2 && self.values(v1, v2))
            }
            _ => a == b,
        }
    }
}

/// True iff the closures of the two root lists are isomorphic: same shape,
/// same class, version and slot values everywhere, with root `i` matched to
/// root `i`.
pub fn graphs_isomorphic(
    left: &Session,
    left_roots: &[Oid],
    right: &Session,
    right_roots: &[Oid],
) -> Result<bool> {
    if left_roots.len() != right_roots.len() {
        return Ok(false);
    }
    // Surfaces unknown roots and dangling references as errors.
    let left_size = visit_order(left, left_roots)?.len();
    let right_size = visit_order(right, right_roots)?.len();
    if left_size != right_size {
        return Ok(false);
    }
    let mut m = Matcher {
        forward: HashMap::new(),
        backward: HashMap::new(),
        queue: VecDeque::new(),
    };
    for (&a, &b) in left_roots.iter().zip(right_roots) {
        if !m.pair(a, b) {
            return Ok(false);
        }
    }
    while let Some((a, b)) = m.queue.pop_front() {
        let ra = live_record(left, a)?;
        let rb = live_record(right, b)?;
        if ra.class != rb.class || ra.version != rb.version || ra.slots.len() != rb.slots.len() {
            return Ok(false);
        }
        for ((na, va), (nb, vb)) in ra.slots.iter().zip(rb.slots.iter()) {
            if na != nb || !m.values(va, vb) {
                return Ok(false);
            }
        }
    }
    Ok(true)
}
