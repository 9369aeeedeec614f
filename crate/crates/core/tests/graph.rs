mod common;

use std::collections::BTreeSet;

use common::TempStore;
use pachyderm::graph::{GraphBlob, GRAPH_MAGIC};
use pachyderm::{
    export_subgraph, graphs_isomorphic, import_subgraph, reachable_closure, Error, Handle, Oid,
    Session, SlotSpec, Value,
};

fn node_store(t: &TempStore) -> Session {
    let mut s = t.open();
    s.define_class(
        "node",
        vec![
            SlotSpec::unbound("label"),
            SlotSpec::with_default("out", Value::List(vec![])),
        ],
    )
    .unwrap();
    s
}

fn node(s: &mut Session, label: &str) -> Handle {
    s.create_instance("node", [("label", Value::text(label))])
        .unwrap()
}

fn link(s: &mut Session, from: Handle, to: &[Handle]) {
    let refs = to.iter().map(|h| Value::Ref(h.oid())).collect();
    s.slot_write(from, "out", Value::List(refs)).unwrap();
}

fn diamond(s: &mut Session) -> [Handle; 4] {
    let a = node(s, "a");
    let b = node(s, "b");
    let c = node(s, "c");
    let d = node(s, "d");
    link(s, a, &[b, c]);
    link(s, b, &[d]);
    link(s, c, &[d]);
    s.commit().unwrap();
    [a, b, c, d]
}

fn oids(hs: &[Handle]) -> BTreeSet<Oid> {
    hs.iter().map(Handle::oid).collect()
}

#[test]
fn closure_of_isolated_object() {
    let t = TempStore::new();
    let mut s = node_store(&t);
    let a = node(&mut s, "a");
    s.commit().unwrap();
    assert_eq!(reachable_closure(&s, &[a.oid()]).unwrap(), oids(&[a]));
}

#[test]
fn closure_terminates_on_cycle() {
    let t = TempStore::new();
    let mut s = node_store(&t);
    let a = node(&mut s, "a");
    let b = node(&mut s, "b");
    link(&mut s, a, &[b]);
    link(&mut s, b, &[a]);
    s.commit().unwrap();
    assert_eq!(reachable_closure(&s, &[a.oid()]).unwrap(), oids(&[a, b]));
}

#[test]
fn closure_counts_shared_node_once() {
    let t = TempStore::new();
    let mut s = node_store(&t);
    let all = diamond(&mut s);
    assert_eq!(reachable_closure(&s, &[all[0].oid()]).unwrap(), oids(&all));
}

#[test]
fn closure_reports_dangling_reference() {
    let t = TempStore::new();
    let mut s = node_store(&t);
    let a = node(&mut s, "a");
    let b = node(&mut s, "b");
    link(&mut s, a, &[b]);
    s.commit().unwrap();
    s.delete_instance(b).unwrap();
    s.commit().unwrap();
    assert!(matches!(
        reachable_closure(&s, &[a.oid()]),
        Err(Error::DanglingRef { .. })
    ));
}

#[test]
fn empty_export_and_import() {
    let t = TempStore::new();
    let s = node_store(&t);
    let blob = export_subgraph(&s, &[]).unwrap();
    assert_eq!(&blob[..4], GRAPH_MAGIC);
    assert!(GraphBlob::parse(&blob).unwrap().records.is_empty());
    drop(s);

    let u = TempStore::new();
    let mut other = u.open();
    assert!(import_subgraph(&mut other, &blob).unwrap().is_empty());
}

#[test]
fn two_cycle_survives_round_trip() {
    let t = TempStore::new();
    let mut s = node_store(&t);
    let a = node(&mut s, "a");
    let b = node(&mut s, "b");
    link(&mut s, a, &[b]);
    link(&mut s, b, &[a]);
    s.commit().unwrap();
    let blob = export_subgraph(&s, &[a.oid()]).unwrap();

    let u = TempStore::new();
    let mut other = u.open();
    let map = import_subgraph(&mut other, &blob).unwrap();
    other.commit().unwrap();
    assert_eq!(map.len(), 2);
    let a2 = other.lookup_instance(map[&1]).unwrap();
    let b2 = other.lookup_instance(map[&2]).unwrap();
    let out = other.slot_read(a2, "out").unwrap();
    assert_eq!(out, Value::List(vec![Value::Ref(b2.oid())]));
    let back = other.slot_read(b2, "out").unwrap();
    assert_eq!(back, Value::List(vec![Value::Ref(a2.oid())]));
    assert!(graphs_isomorphic(&s, &[a.oid()], &other, &[a2.oid()]).unwrap());
}

#[test]
fn shared_diamond_imports_four_objects() {
    let t = TempStore::new();
    let mut s = node_store(&t);
    let [a, ..] = diamond(&mut s);
    let blob = export_subgraph(&s, &[a.oid()]).unwrap();
    assert_eq!(GraphBlob::parse(&blob).unwrap().records.len(), 4);

    let u = TempStore::new();
    let mut other = node_store(&u);
    other.commit().unwrap();
    let map = import_subgraph(&mut other, &blob).unwrap();
    assert_eq!(map.len(), 4);
    assert_eq!(other.extent("node").unwrap().len(), 4);
    let root = map[&1];
    assert_eq!(reachable_closure(&other, &[root]).unwrap().len(), 4);
    // Import, export again, import again: still the same graph.
    let again = export_subgraph(&other, &[root]).unwrap();
    let w = TempStore::new();
    let mut third = w.open();
    let map3 = import_subgraph(&mut third, &again).unwrap();
    assert!(graphs_isomorphic(&s, &[a.oid()], &third, &[map3[&1]]).unwrap());
}

#[test]
fn import_adds_to_existing_objects_under_fresh_oids() {
    let t = TempStore::new();
    let mut s = node_store(&t);
    let [a, ..] = diamond(&mut s);
    let blob = export_subgraph(&s, &[a.oid()]).unwrap();
    let map = import_subgraph(&mut s, &blob).unwrap();
    s.commit().unwrap();
    assert_eq!(s.extent("node").unwrap().len(), 8);
    assert!(map.values().all(|o| *o > Oid::new(4).unwrap()));
    assert!(graphs_isomorphic(&s, &[a.oid()], &s, &[map[&1]]).unwrap());
}

#[test]
fn conflicting_schema_is_rejected() {
    let t = TempStore::new();
    let mut s = node_store(&t);
    let a = node(&mut s, "a");
    s.commit().unwrap();
    let blob = export_subgraph(&s, &[a.oid()]).unwrap();

    let u = TempStore::new();
    let mut other = u.open();
    other
        .define_class("node", vec![SlotSpec::unbound("name")])
        .unwrap();
    other.commit().unwrap();
    assert!(matches!(
        import_subgraph(&mut other, &blob),
        Err(Error::SchemaConflict(_))
    ));
    assert!(other.extent("node").unwrap().is_empty());
}

#[test]
fn truncated_blob_is_malformed() {
    let t = TempStore::new();
    let mut s = node_store(&t);
    let [a, ..] = diamond(&mut s);
    let blob = export_subgraph(&s, &[a.oid()]).unwrap();
    for cut in 0..blob.len() {
        assert!(GraphBlob::parse(&blob[..cut]).is_err(), "cut at {cut}");
    }
}

#[test]
fn isomorphism_is_reflexive() {
    let t = TempStore::new();
    let mut s = node_store(&t);
    let [a, ..] = diamond(&mut s);
    assert!(graphs_isomorphic(&s, &[a.oid()], &s, &[a.oid()]).unwrap());
}

#[test]
fn sharing_is_not_duplication() {
    let t = TempStore::new();
    let mut s = node_store(&t);
    // Shared: a -> [d, d]. Duplicated: a' -> [d1, d2] with equal values.
    let a = node(&mut s, "a");
    let d = node(&mut s, "d");
    link(&mut s, a, &[d, d]);
    let a2 = node(&mut s, "a");
    let d1 = node(&mut s, "d");
    let d2 = node(&mut s, "d");
    link(&mut s, a2, &[d1, d2]);
    s.commit().unwrap();
    assert!(!graphs_isomorphic(&s, &[a.oid()], &s, &[a2.oid()]).unwrap());
}

#[test]
fn differing_slot_breaks_isomorphism() {
    let t = TempStore::new();
    let mut s = node_store(&t);
    let a = node(&mut s, "a");
    let b = node(&mut s, "b");
    link(&mut s, a, &[b]);
    let a2 = node(&mut s, "a");
    let b2 = node(&mut s, "B");
    link(&mut s, a2, &[b2]);
    s.commit().unwrap();
    assert!(!graphs_isomorphic(&s, &[a.oid()], &s, &[a2.oid()]).unwrap());
}

#[test]
fn export_carries_old_versions() {
    let t = TempStore::new();
    let mut s = node_store(&t);
    let a = node(&mut s, "old");
    s.commit().unwrap();
    s.redefine_class(
        "node",
        vec![
            SlotSpec::unbound("label"),
            SlotSpec::with_default("out", Value::List(vec![])),
            SlotSpec::with_default("weight", Value::Int(1)),
        ],
    )
    .unwrap();
    let b = node(&mut s, "new");
    link(&mut s, b, &[a]);
    s.commit().unwrap();
    let blob = export_subgraph(&s, &[b.oid()]).unwrap();
    let parsed = GraphBlob::parse(&blob).unwrap();
    assert_eq!(parsed.descriptors.len(), 2);

    let u = TempStore::new();
    let mut other = u.open();
    let map = import_subgraph(&mut other, &blob).unwrap();
    other.commit().unwrap();
    assert_eq!(other.current_descriptor("node").unwrap().version, 2);
    let old = other.lookup_instance(map[&2]).unwrap();
    assert_eq!(other.stored_version(old.oid()), Some(1));
    assert_eq!(other.slot_read(old, "weight").unwrap(), Value::Int(1));
}
