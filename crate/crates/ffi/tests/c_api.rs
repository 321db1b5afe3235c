use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use freshmem_ffi::*;

const GIB: u64 = 1 << 30;

fn last_error() -> String {
    let p = fm_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn new_store(reset_exp: u32, protected: u64, capacity: u64) -> *mut FmStore {
    let mut s = ptr::null_mut();
    let rc = unsafe { fm_store_new(27, 37, reset_exp, protected, capacity, 5, &mut s) };
    assert_eq!(rc, FM_OK, "{}", last_error());
    s
}

#[test]
fn store_roundtrip_through_handles() {
    let s = new_store(20, GIB, GIB);
    unsafe {
        let mut before = 0u64;
        assert_eq!(fm_store_read_version(s, 0x1040, &mut before), FM_OK);
        let mut up = std::mem::zeroed::<FmUpdate>();
        assert_eq!(fm_store_update_version(s, 0x1040, &mut up), FM_OK);
        assert_eq!(up.new_version, (before + 1) & ((1 << 27) - 1));
        assert_eq!(up.format_after, FmFormat::Flat);
        assert!(up.leading_advanced);
        let mut after = 0u64;
        assert_eq!(fm_store_read_version(s, 0x1040, &mut after), FM_OK);
        assert_eq!(after, up.new_version);
        for _ in 0..64 {
            assert_eq!(fm_store_update_version(s, 0x1040, ptr::null_mut()), FM_OK);
        }
        let mut u = FmUsage::default();
        assert_eq!(fm_store_usage(s, &mut u), FM_OK);
        assert_eq!((u.pages_touched, u.pages_uneven), (1, 1));
        assert_eq!(u.dynamic_bytes, 56);
        let mut base = 0u64;
        assert_eq!(fm_store_reset_page(s, 1, &mut base), FM_OK);
        let mut v = 0u64;
        assert_eq!(fm_store_read_version(s, 0x1040, &mut v), FM_OK);
        assert_eq!(v, base);
        fm_store_free(s);
    }
}

#[test]
fn store_errors_map_to_codes() {
    unsafe {
        let mut s = ptr::null_mut();
        assert_eq!(fm_store_new(0, 37, 20, GIB, GIB, 1, &mut s), FM_ERR_INVALID_ARG);
        assert!(s.is_null());
        assert_eq!(fm_store_new(27, 37, 20, GIB, 100, 1, &mut s), FM_ERR_CAPACITY);
        assert!(last_error().contains("capacity"));
        assert_eq!(fm_store_new(27, 37, 20, GIB, GIB, 1, ptr::null_mut()), FM_ERR_NULL);
        let s = new_store(20, 1 << 20, 1 << 20);
        let mut v = 0;
        assert_eq!(fm_store_read_version(s, 1 << 20, &mut v), FM_ERR_OUT_OF_RANGE);
        assert_eq!(fm_store_read_version(ptr::null_mut(), 0, &mut v), FM_ERR_NULL);
        assert_eq!(fm_store_read_version(s, 0, ptr::null_mut()), FM_ERR_NULL);
        fm_store_free(s);
        fm_store_free(ptr::null_mut());
    }
}

#[test]
fn store_rejects_when_device_is_full() {
    // 2 pages: 24 B flat array plus room for one uneven entry, taken by page 0
    let s = new_store(20, 2 * 4096, 24 + 56);
    unsafe {
        for _ in 0..2 {
            assert_eq!(fm_store_update_version(s, 0, ptr::null_mut()), FM_OK);
        }
        assert_eq!(fm_store_update_version(s, 4096, ptr::null_mut()), FM_OK);
        assert_eq!(fm_store_update_version(s, 4096, ptr::null_mut()), FM_ERR_CAPACITY);
        fm_store_free(s);
    }
}

#[test]
fn simulator_runs_and_reports_json() {
    let cfg =
        CString::new(r#"{"mode":"toleo","engine":{"protected_bytes":1073741824,"device_capacity_bytes":268435456}}"#)
            .unwrap();
    unsafe {
        let mut sim = ptr::null_mut();
        assert_eq!(fm_simulator_new_json(cfg.as_ptr(), &mut sim), FM_OK, "{}", last_error());
        let mut a = FmAccess::default();
        assert_eq!(fm_simulator_access(sim, true, 0x2000, &mut a), FM_OK);
        assert_eq!(a.data_bytes, 64);
        assert_eq!(a.device_transactions, 1);
        assert_eq!(fm_simulator_access(sim, false, 0x2000, &mut a), FM_OK);
        assert_eq!(fm_simulator_access(sim, false, 1 << 40, &mut a), FM_ERR_OUT_OF_RANGE);
        assert_eq!(fm_simulator_access(sim, false, 0x2000, &mut a), FM_ERR_HALTED);
        let mut json = ptr::null_mut();
        assert_eq!(fm_simulator_stats_json(sim, &mut json), FM_OK);
        let v: serde_json::Value = serde_json::from_str(CStr::from_ptr(json).to_str().unwrap()).unwrap();
        assert_eq!(v["mode"], "toleo");
        assert_eq!(v["events"], 2);
        assert_eq!(v["halt"]["event_index"], 2);
        fm_string_free(json);
        fm_simulator_free(sim);
    }
}

#[test]
fn simulator_rejects_bad_json() {
    let bad = CString::new(r#"{"mode":"sgx"}"#).unwrap();
    let mut sim = ptr::null_mut();
    assert_eq!(unsafe { fm_simulator_new_json(bad.as_ptr(), &mut sim) }, FM_ERR_PARSE);
    assert!(sim.is_null());
    assert_eq!(unsafe { fm_simulator_new_json(ptr::null(), &mut sim) }, FM_ERR_NULL);
}

#[test]
fn probability_entry_points() {
    let p = fm_no_reset_prob(128.0, 7);
    let oracle = (1.0 - 1.0 / 128.0f64).powi(128);
    assert!((p - oracle).abs() < 1e-12);
    let mut b = 0.0;
    let rc = unsafe { fm_exhaustion_bound(2f64.powi(56), 2f64.powi(26), 2f64.powi(30), 20, &mut b) };
    assert_eq!(rc, FM_OK);
    assert!((1.6e-19..=1.8e-19).contains(&b), "{b}");
    let rc = unsafe { fm_exhaustion_bound(-1.0, 1.0, 1.0, 20, &mut b) };
    assert_eq!(rc, FM_ERR_INVALID_ARG);
}

fn header() -> String {
    std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/freshmem.h")).unwrap()
}

#[test]
fn header_declares_every_entry_point() {
    let h = header();
    for sym in [
        "fm_last_error_message",
        "fm_store_new",
        "fm_store_free",
        "fm_store_read_version",
        "fm_store_update_version",
        "fm_store_reset_page",
        "fm_store_usage",
        "fm_simulator_new_json",
        "fm_simulator_free",
        "fm_simulator_access",
        "fm_simulator_stats_json",
        "fm_string_free",
        "fm_no_reset_prob",
        "fm_exhaustion_bound",
        "typedef struct FmStore FmStore;",
        "typedef struct FmSimulator FmSimulator;",
        "#define FM_ERR_HALTED -6",
    ] {
        assert!(h.contains(sym), "header lacks {sym}");
    }
}

#[test]
fn header_compiles_as_c() {
    let Ok(cc) = which_cc() else { return };
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("probe.c");
    std::fs::write(
        &src,
        "#include \"freshmem.h\"\nint main(void) { FmStore *s = 0; uint64_t v; \
         return fm_store_read_version(s, 0, &v) == FM_ERR_NULL ? 0 : 1; }\n",
    )
    .unwrap();
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let out = Command::new(cc).arg("-std=c99").arg("-fsyntax-only").arg("-I").arg(include).arg(&src).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn which_cc() -> Result<&'static str, ()> {
    ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| Command::new(c).arg("--version").output().is_ok_and(|o| o.status.success()))
        .ok_or(())
}
