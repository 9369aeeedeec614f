//! Proptest strategies shared by unit tests.

use proptest::prelude::*;

use crate::value::{value_equal, Oid, Value, ValueMap, ValueSet};

pub fn arb_scalar() -> impl Strategy<Value = Value> {
    prop_oneof![
        Just(Value::Unit),
        any::<bool>().prop_map(Value::Bool),
        any::<i64>().prop_map(Value::Int),
        any::<u64>().prop_map(|b| Value::Float(f64::from_bits(b))),
        ".{0,8}".prop_map(Value::Text),
        proptest::collection::vec(any::<u8>(), 0..8).prop_map(Value::Bytes),
        "[a-z-]{0,6}".prop_map(Value::Symbol),
    ]
}

fn dedup_keys<T>(items: Vec<(Value, T)>) -> Vec<(Value, T)> {
    let mut out: Vec<(Value, T)> = Vec::new();
    for (k, v) in items {
        if !out.iter().any(|(seen, _)| value_equal(seen, &k)) {
            out.push((k, v));
        }
    }
    out
}

pub fn arb_value() -> impl Strategy<Value = Value> {
    let leaf = prop_oneof![
        4 => arb_scalar(),
        1 => (1u64..50).prop_map(|n| Value::Ref(Oid::new(n).unwrap())),
    ];
    leaf.prop_recursive(5, 200, 6, |inner| {
        prop_oneof![
            proptest::collection::vec(inner.clone(), 0..6).prop_map(Value::List),
            proptest::collection::vec((arb_scalar(), inner), 0..6)
                .prop_map(|entries| { Value::Map(ValueMap::new(dedup_keys(entries)).unwrap()) }),
            proptest::collection::vec(arb_scalar(), 0..6).prop_map(|members| {
                let members = dedup_keys(members.into_iter().map(|m| (m, ())).collect());
                Value::Set(ValueSet::new(members.into_iter().map(|(m, _)| m)).unwrap())
            }),
        ]
    })
}
