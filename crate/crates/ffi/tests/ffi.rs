use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use pachyderm::codec::{decode_value_exact, encode_value};
use pachyderm::Value;
use pachyderm_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn open(path: &Path) -> *mut PchSession {
    let mut s = ptr::null_mut();
    let p = c(path.to_str().unwrap());
    assert_eq!(
        unsafe { pch_open(p.as_ptr(), false, &mut s) },
        PchStatus::Ok
    );
    assert!(!s.is_null());
    s
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(pch_last_error_message()) }
        .to_string_lossy()
        .into_owned()
}

fn write(s: *mut PchSession, oid: u64, slot: &str, v: &Value) -> PchStatus {
    let bytes = encode_value(v).unwrap();
    let slot = c(slot);
    unsafe { pch_slot_write(s, oid, slot.as_ptr(), bytes.as_ptr(), bytes.len()) }
}

fn read(s: *mut PchSession, oid: u64, slot: &str) -> Result<Value, PchStatus> {
    let slot = c(slot);
    let mut buf = PchBuffer {
        data: ptr::null_mut(),
        len: 0,
    };
    let st = unsafe { pch_slot_read(s, oid, slot.as_ptr(), &mut buf) };
    if st != PchStatus::Ok {
        return Err(st);
    }
    let bytes = unsafe { std::slice::from_raw_parts(buf.data, buf.len) }.to_vec();
    unsafe { pch_buffer_free(buf) };
    Ok(decode_value_exact(&bytes).unwrap())
}

const PHOTO: &str = "class photo\n  slot filename\nend\n";
const PHOTO_V2: &str = "class photo\n  slot filename\n  slot caption\nend\n";

#[test]
fn create_write_commit_reopen() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.pdb");
    let s = open(&path);
    let schema = c(PHOTO);
    assert_eq!(unsafe { pch_set_schema(s, schema.as_ptr()) }, PchStatus::Ok);
    let class = c("photo");
    let mut oid = 0;
    assert_eq!(
        unsafe { pch_create(s, class.as_ptr(), &mut oid) },
        PchStatus::Ok
    );
    assert_eq!(oid, 1);
    assert_eq!(read(s, oid, "filename"), Err(PchStatus::UnboundSlot));
    assert!(last_error().contains("filename"));
    assert_eq!(
        write(s, oid, "filename", &Value::text("1.jpg")),
        PchStatus::Ok
    );
    let mut seq = 0;
    assert_eq!(unsafe { pch_commit(s, &mut seq) }, PchStatus::Ok);
    assert_eq!(seq, 2);
    unsafe { pch_close(s) };

    let s = open(&path);
    assert_eq!(read(s, oid, "filename"), Ok(Value::text("1.jpg")));
    assert_eq!(read(s, 99, "filename"), Err(PchStatus::UnknownOid));
    assert_eq!(read(s, oid, "nope"), Err(PchStatus::UnknownSlot));
    unsafe { pch_close(s) };
}

#[test]
fn schema_evolution_and_eager_migration() {
    let dir = tempfile::tempdir().unwrap();
    let s = open(&dir.path().join("s.pdb"));
    let class = c("photo");
    unsafe {
        assert_eq!(pch_set_schema(s, c(PHOTO).as_ptr()), PchStatus::Ok);
        for _ in 0..3 {
            let mut oid = 0;
            assert_eq!(pch_create(s, class.as_ptr(), &mut oid), PchStatus::Ok);
        }
        assert_eq!(pch_commit(s, ptr::null_mut()), PchStatus::Ok);
        assert_eq!(pch_set_schema(s, c(PHOTO_V2).as_ptr()), PchStatus::Ok);
        let mut version = 0;
        assert_eq!(
            pch_class_version(s, class.as_ptr(), &mut version),
            PchStatus::Ok
        );
        assert_eq!(version, 2);
        let mut n = 0;
        assert_eq!(pch_migrate_eager(s, class.as_ptr(), &mut n), PchStatus::Ok);
        assert_eq!(n, 3);
        assert_eq!(pch_migrate_eager(s, class.as_ptr(), &mut n), PchStatus::Ok);
        assert_eq!(n, 0);

        let mut oids = [0u64; 2];
        let mut len = 0;
        assert_eq!(
            pch_extent(s, class.as_ptr(), oids.as_mut_ptr(), 2, &mut len),
            PchStatus::BufferTooSmall
        );
        assert_eq!(len, 3);
        let mut oids = [0u64; 3];
        assert_eq!(
            pch_extent(s, class.as_ptr(), oids.as_mut_ptr(), 3, &mut len),
            PchStatus::Ok
        );
        assert_eq!(oids, [1, 2, 3]);
        pch_close(s);
    }
}

#[test]
fn errors_map_to_status_codes() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.pdb");
    unsafe {
        let mut s = ptr::null_mut();
        assert_eq!(
            pch_open(ptr::null(), false, &mut s),
            PchStatus::NullArgument
        );
        let bad = [0xffu8, 0];
        assert_eq!(
            pch_open(bad.as_ptr().cast(), false, &mut s),
            PchStatus::InvalidUtf8
        );
        std::fs::write(&path, b"not a store at all").unwrap();
        let p = c(path.to_str().unwrap());
        assert_eq!(pch_open(p.as_ptr(), false, &mut s), PchStatus::BadMagic);
        std::fs::remove_file(&path).unwrap();

        let s = open(&path);
        let mut other = ptr::null_mut();
        assert_eq!(pch_open(p.as_ptr(), false, &mut other), PchStatus::Locked);
        let mut oid = 0;
        assert_eq!(
            pch_create(s, c("ghost").as_ptr(), &mut oid),
            PchStatus::UnknownClass
        );
        assert_eq!(
            pch_set_schema(s, c("class p\n  slot s default\nend\n").as_ptr()),
            PchStatus::Schema
        );
        assert_eq!(pch_set_schema(s, c(PHOTO).as_ptr()), PchStatus::Ok);
        assert_eq!(pch_create(s, c("photo").as_ptr(), &mut oid), PchStatus::Ok);
        assert_eq!(pch_compact(s), PchStatus::Dirty);
        let garbage = [0xfeu8];
        assert_eq!(
            pch_slot_write(s, oid, c("filename").as_ptr(), garbage.as_ptr(), 1),
            PchStatus::Codec
        );
        assert_eq!(pch_commit(s, ptr::null_mut()), PchStatus::Ok);
        assert_eq!(pch_delete(s, oid), PchStatus::Ok);
        assert_eq!(pch_delete(s, oid), PchStatus::Deleted);
        assert_eq!(pch_rollback(s), PchStatus::Ok);
        assert_eq!(
            pch_commit(ptr::null_mut(), ptr::null_mut()),
            PchStatus::NullArgument
        );
        pch_close(s);
        pch_close(ptr::null_mut());
    }
}

#[test]
fn export_import_between_stores() {
    let dir = tempfile::tempdir().unwrap();
    let a = open(&dir.path().join("a.pdb"));
    let b = open(&dir.path().join("b.pdb"));
    let schema = c("class node\n  slot next\nend\n");
    let class = c("node");
    unsafe {
        assert_eq!(pch_set_schema(a, schema.as_ptr()), PchStatus::Ok);
        let (mut x, mut y) = (0, 0);
        pch_create(a, class.as_ptr(), &mut x);
        pch_create(a, class.as_ptr(), &mut y);
        assert_eq!(
            write(a, x, "next", &Value::Ref(pachyderm::Oid::new(y).unwrap())),
            PchStatus::Ok
        );
        assert_eq!(
            write(a, y, "next", &Value::Ref(pachyderm::Oid::new(x).unwrap())),
            PchStatus::Ok
        );
        pch_commit(a, ptr::null_mut());

        let mut blob = PchBuffer {
            data: ptr::null_mut(),
            len: 0,
        };
        let roots = [x];
        assert_eq!(pch_export(a, roots.as_ptr(), 1, &mut blob), PchStatus::Ok);
        let mut new = [0u64; 4];
        let mut len = 0;
        assert_eq!(
            pch_import(b, blob.data, blob.len, new.as_mut_ptr(), 1, &mut len),
            PchStatus::BufferTooSmall
        );
        assert_eq!(len, 2);
        assert_eq!(
            pch_import(b, blob.data, blob.len, new.as_mut_ptr(), 4, &mut len),
            PchStatus::Ok
        );
        pch_buffer_free(blob);
        assert_eq!(len, 2);
        assert_eq!(pch_commit(b, ptr::null_mut()), PchStatus::Ok);
        let (nx, ny) = (new[0], new[1]);
        assert_eq!(
            read(b, nx, "next"),
            Ok(Value::Ref(pachyderm::Oid::new(ny).unwrap()))
        );
        assert_eq!(
            read(b, ny, "next"),
            Ok(Value::Ref(pachyderm::Oid::new(nx).unwrap()))
        );

        let mut findings = 99;
        assert_eq!(pch_verify(b, &mut findings, ptr::null_mut()), PchStatus::Ok);
        assert_eq!(findings, 0);
        pch_close(a);
        pch_close(b);
    }
}

#[test]
fn verify_reports_findings_as_text() {
    let dir = tempfile::tempdir().unwrap();
    let s = open(&dir.path().join("s.pdb"));
    unsafe {
        pch_set_schema(s, c("class node\n  slot next\nend\n").as_ptr());
        let (mut x, mut y) = (0, 0);
        pch_create(s, c("node").as_ptr(), &mut x);
        pch_create(s, c("node").as_ptr(), &mut y);
        write(s, x, "next", &Value::Ref(pachyderm::Oid::new(y).unwrap()));
        pch_commit(s, ptr::null_mut());
        pch_delete(s, y);
        pch_commit(s, ptr::null_mut());
        let mut n = 0;
        let mut report = PchBuffer {
            data: ptr::null_mut(),
            len: 0,
        };
        assert_eq!(pch_verify(s, &mut n, &mut report), PchStatus::Ok);
        assert_eq!(n, 1);
        let text = std::slice::from_raw_parts(report.data, report.len);
        assert_eq!(text, format!("DanglingRef from={x} to={y}\n").as_bytes());
        pch_buffer_free(report);
        pch_close(s);
    }
}

#[test]
fn busy_session_fails_fast() {
    let dir = tempfile::tempdir().unwrap();
    let s = open(&dir.path().join("s.pdb"));
    let schema = c(PHOTO);
    unsafe { pch_set_schema(s, schema.as_ptr()) };
    struct Shared(*mut PchSession);
    unsafe impl Send for Shared {}
    unsafe impl Sync for Shared {}
    let shared = Shared(s);
    let class = c("photo");
    // Hammer the session from two threads; every call either succeeds or
    // reports BUSY, and nothing else goes wrong.
    let (ok, busy) = std::thread::scope(|scope| {
        let workers: Vec<_> = (0..2)
            .map(|_| {
                let shared = &shared;
                let class = &class;
                scope.spawn(move || {
                    let (mut ok, mut busy) = (0, 0);
                    for _ in 0..500 {
                        let mut oid = 0;
                        match unsafe { pch_create(shared.0, class.as_ptr(), &mut oid) } {
                            PchStatus::Ok => ok += 1,
                            PchStatus::Busy => busy += 1,
                            other => panic!("unexpected {other:?}"),
                        }
                    }
                    (ok, busy)
                })
            })
            .collect();
        workers
            .into_iter()
            .map(|w| w.join().unwrap())
            .fold((0, 0), |a, b| (a.0 + b.0, a.1 + b.1))
    });
    assert_eq!(ok + busy, 1000);
    let mut len = 0;
    unsafe {
        pch_extent(s, class.as_ptr(), ptr::null_mut(), 0, &mut len);
        pch_close(s);
    }
    assert_eq!(len, ok);
}

#[test]
fn value_display() {
    let v = Value::List(vec![Value::Int(1), Value::symbol("x")]);
    let bytes = encode_value(&v).unwrap();
    let mut out = PchBuffer {
        data: ptr::null_mut(),
        len: 0,
    };
    unsafe {
        assert_eq!(
            pch_value_display(bytes.as_ptr(), bytes.len(), &mut out),
            PchStatus::Ok
        );
        let text = std::str::from_utf8(std::slice::from_raw_parts(out.data, out.len)).unwrap();
        assert_eq!(text, "[1, :x]");
        pch_buffer_free(out);
    }
}
