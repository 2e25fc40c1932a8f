use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use pcit::scenario::{write_synthetic, Defaults};
use pcit::synthetic::{generate, SynthParams};
use pcit_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    let p = pcit_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn synthetic_scenario(dir: &Path) -> PathBuf {
    let g = generate(&SynthParams {
        families: 2,
        configs: 2,
        instances: 8,
        numeric: false,
        ..SynthParams::default()
    })
    .unwrap();
    write_synthetic(dir, "ffi", &g, 2, Defaults::default()).unwrap()
}

fn load(path: &Path) -> *mut PcitScenario {
    let mut sc = ptr::null_mut();
    let p = c(path.to_str().unwrap());
    assert_eq!(unsafe { pcit_scenario_load(p.as_ptr(), &mut sc) }, PcitStatus::Ok);
    assert!(!sc.is_null());
    sc
}

#[test]
fn construct_test_and_inspect() {
    let dir = tempfile::tempdir().unwrap();
    let sc = load(&synthetic_scenario(dir.path()));
    assert_eq!(unsafe { pcit_scenario_k(sc) }, 2);
    assert_eq!(unsafe { pcit_scenario_train_count(sc) }, 8);

    let mut pf = ptr::null_mut();
    let method = c("pcit");
    let st = unsafe { pcit_construct(sc, method.as_ptr(), 40.0, 5.0, 2, 2, 1, 7, &mut pf) };
    assert_eq!(st, PcitStatus::Ok, "{}", if st == PcitStatus::Ok { String::new() } else { last_error() });
    assert_eq!(unsafe { pcit_portfolio_len(pf) }, 2);
    assert!(unsafe { pcit_portfolio_cpu_time(pf) } > 0.0);

    let mut need = 0usize;
    let st = unsafe { pcit_portfolio_component(pf, 0, ptr::null_mut(), 0, &mut need) };
    assert_eq!(st, PcitStatus::BufferTooSmall);
    let mut buf = vec![0 as std::ffi::c_char; need];
    let st = unsafe { pcit_portfolio_component(pf, 0, buf.as_mut_ptr(), buf.len(), &mut need) };
    assert_eq!(st, PcitStatus::Ok);
    let text = unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap();
    assert!(text.starts_with("heuristic=h"), "{text}");
    assert_eq!(
        unsafe { pcit_portfolio_component(pf, 5, buf.as_mut_ptr(), buf.len(), ptr::null_mut()) },
        PcitStatus::InvalidArgument
    );
    assert!(last_error().contains("out of range"));

    let mut summary = PcitSummary::default();
    assert_eq!(unsafe { pcit_test(sc, pf, 3, 0, &mut summary) }, PcitStatus::Ok);
    assert_eq!(summary.instances, 8);
    assert!(summary.par1 <= summary.par10);

    // Save and reload gives the same components.
    let file = c(dir.path().join("p.json").to_str().unwrap());
    assert_eq!(unsafe { pcit_portfolio_save(sc, pf, file.as_ptr()) }, PcitStatus::Ok);
    let mut again = ptr::null_mut();
    assert_eq!(unsafe { pcit_portfolio_load(sc, file.as_ptr(), &mut again) }, PcitStatus::Ok);
    let mut summary2 = PcitSummary::default();
    assert_eq!(unsafe { pcit_test(sc, again, 3, 0, &mut summary2) }, PcitStatus::Ok);
    assert_eq!(summary, summary2);

    unsafe {
        pcit_portfolio_free(again);
        pcit_portfolio_free(pf);
        pcit_scenario_free(sc);
    }
}

#[test]
fn error_codes() {
    let mut sc = ptr::null_mut();
    assert_eq!(unsafe { pcit_scenario_load(ptr::null(), &mut sc) }, PcitStatus::NullPointer);
    let missing = c("/nonexistent/scenario.toml");
    assert_eq!(unsafe { pcit_scenario_load(missing.as_ptr(), &mut sc) }, PcitStatus::Io);
    assert!(last_error().contains("/nonexistent/scenario.toml"));
    assert!(sc.is_null());

    let bad = [0xffu8, 0];
    assert_eq!(
        unsafe { pcit_scenario_load(bad.as_ptr().cast(), &mut sc) },
        PcitStatus::InvalidUtf8
    );

    let mut out = 0.0;
    let m = c("nonsense");
    assert_eq!(
        unsafe { pcit_plan_total(m.as_ptr(), 2, 1.0, 1.0, 1, 1, 1, &mut out) },
        PcitStatus::InvalidArgument
    );
    let mut pf = ptr::null_mut();
    let pcit = c("pcit");
    assert_eq!(
        unsafe { pcit_construct(ptr::null(), pcit.as_ptr(), 1.0, 1.0, 1, 1, 1, 0, &mut pf) },
        PcitStatus::NullPointer
    );

    // Null handles are harmless for the free and query functions.
    unsafe {
        pcit_scenario_free(ptr::null_mut());
        pcit_portfolio_free(ptr::null_mut());
        assert_eq!(pcit_portfolio_len(ptr::null()), 0);
    }
    // A successful call clears the message.
    assert_eq!(
        unsafe { pcit_plan_total(pcit.as_ptr(), 8, 36.0, 4.0, 10, 4, 1, &mut out) },
        PcitStatus::Ok
    );
    assert!(pcit_last_error().is_null());
}

#[test]
fn plan_totals() {
    let mut out = 0.0;
    for (m, b, expect) in [("pcit", 1, 3200.0), ("global", 1, 3200.0), ("parhydra", 2, 10.0 * 40.0 * 20.0)] {
        let m = c(m);
        assert_eq!(
            unsafe { pcit_plan_total(m.as_ptr(), 8, 36.0, 4.0, 10, 4, b, &mut out) },
            PcitStatus::Ok
        );
        assert!((out - expect).abs() < 1e-9, "{out} vs {expect}");
    }
}

#[test]
fn par_score_matches_definition() {
    let rt = [1.0, 2.0, 100.0];
    let solved = [1u8, 1, 0];
    let mut out = 0.0;
    assert_eq!(
        unsafe { pcit_par_score(rt.as_ptr(), solved.as_ptr(), 3, 10.0, 10, &mut out) },
        PcitStatus::Ok
    );
    assert!((out - 103.0 / 3.0).abs() < 1e-12);
    assert_eq!(
        unsafe { pcit_par_score(ptr::null(), ptr::null(), 0, 10.0, 10, &mut out) },
        PcitStatus::Scenario
    );
    assert_eq!(
        unsafe { pcit_par_score(rt.as_ptr(), solved.as_ptr(), 3, 10.0, 0, &mut out) },
        PcitStatus::InvalidArgument
    );
}

#[test]
fn version_is_set() {
    let v = unsafe { CStr::from_ptr(pcit_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

/// The generated header is valid C and C++.
#[test]
fn header_compiles() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/pcit.h");
    assert!(header.exists());
    let dir = tempfile::tempdir().unwrap();
    for (compiler, ext) in [("cc", "c"), ("c++", "cpp")] {
        if Command::new(compiler).arg("--version").output().is_err() {
            eprintln!("{compiler} not found; skipping");
            continue;
        }
        let src = dir.path().join(format!("t.{ext}"));
        std::fs::write(
            &src,
            format!(
                "#include \"{}\"\nint main(void) {{ PcitScenario *s = 0; return (int)pcit_scenario_k(s); }}\n",
                header.display()
            ),
        )
        .unwrap();
        let out = Command::new(compiler)
            .args(["-fsyntax-only", "-Wall", "-Werror"])
            .arg(&src)
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
}
