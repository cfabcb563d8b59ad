use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

fn crate_dir() -> &'static Path {
    Path::new(env!("CARGO_MANIFEST_DIR"))
}

fn header() -> String {
    fs::read_to_string(crate_dir().join("include/spmis.h")).expect("header generated by build.rs")
}

fn exported_fns() -> Vec<String> {
    let src = fs::read_to_string(crate_dir().join("src/lib.rs")).unwrap();
    src.lines()
        .filter_map(|l| l.trim().split_once("extern \"C\" fn "))
        .map(|(_, rest)| rest.split('(').next().unwrap().to_owned())
        .collect()
}

#[test]
fn every_export_is_declared() {
    let h = header();
    let fns = exported_fns();
    assert!(fns.len() >= 15, "{fns:?}");
    for f in &fns {
        assert!(f.starts_with("spmis_"), "{f}");
        assert!(h.contains(&format!(" {f}(")) || h.contains(&format!("*{f}(")), "{f} missing");
    }
    for ty in ["SpmisSpeakerDb", "SpmisTopicModel", "SpmisDetector"] {
        assert!(h.contains(&format!("typedef struct {ty} {ty};")), "{ty} not opaque");
    }
    for code in ["SPMIS_STATUS_OK = 0", "SPMIS_STATUS_INTERNAL = 9", "SPMIS_TOPIC_OTHER = 5"] {
        assert!(h.contains(code), "{code}");
    }
}

fn target_dir() -> PathBuf {
    // deps/<test-binary> sits two levels below the profile directory.
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

fn cc() -> Option<String> {
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    Command::new(&cc).arg("--version").output().ok()?;
    Some(cc)
}

#[test]
fn header_compiles_as_c_and_cpp() {
    let Some(cc) = cc() else {
        eprintln!("no C compiler; skipping");
        return;
    };
    let include = crate_dir().join("include");
    for lang in ["c", "c++"] {
        let out = Command::new(&cc)
            .args(["-x", lang, "-fsyntax-only", "-Wall", "-Werror", "-I"])
            .arg(&include)
            .arg(crate_dir().join("tests/c/smoke.c"))
            .output()
            .unwrap();
        assert!(out.status.success(), "{lang}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn c_program_links_and_runs() {
    let Some(cc) = cc() else {
        eprintln!("no C compiler; skipping");
        return;
    };
    let lib = target_dir().join("libspmis_ffi.a");
    assert!(lib.exists(), "{} not built", lib.display());
    let tmp = tempfile::tempdir().unwrap();
    let exe = tmp.path().join("smoke");
    let out = Command::new(&cc)
        .arg("-I")
        .arg(crate_dir().join("include"))
        .arg(crate_dir().join("tests/c/smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&exe).output().unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let stdout = String::from_utf8(run.stdout).unwrap();
    assert_eq!(stdout.trim(), format!("ok {}", env!("CARGO_PKG_VERSION")));
}
