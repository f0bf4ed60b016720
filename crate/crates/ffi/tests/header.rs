use std::path::{Path, PathBuf};
use std::process::Command;

fn manifest_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn cc() -> Option<String> {
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    Command::new(&cc).arg("--version").output().ok().filter(|o| o.status.success()).map(|_| cc)
}

// The static library sits next to the deps/ directory holding this test.
fn static_lib() -> Option<PathBuf> {
    let exe = std::env::current_exe().ok()?;
    let lib = exe.parent()?.parent()?.join("libmodedbm_ffi.a");
    lib.exists().then_some(lib)
}

#[test]
fn header_is_current() {
    let header = std::fs::read_to_string(manifest_dir().join("include/modedbm.h")).unwrap();
    let src = std::fs::read_to_string(manifest_dir().join("src/lib.rs")).unwrap();
    for line in src.lines() {
        if let Some(rest) = line.trim().strip_prefix("pub unsafe extern \"C\" fn ").or(line.trim().strip_prefix("pub extern \"C\" fn ")) {
            let name = rest.split('(').next().unwrap();
            assert!(header.contains(&format!("{name}(")), "{name} missing from header");
        }
    }
    assert!(header.contains("typedef struct ModedbmModel ModedbmModel;"));
    assert!(header.contains("MODEDBM_STATUS_CAPACITY = 3"));
}

#[test]
fn c_program_compiles_links_and_runs() {
    let Some(cc) = cc() else {
        eprintln!("no C compiler; skipping");
        return;
    };
    let dir = tempfile::tempdir().unwrap();
    let include = manifest_dir().join("include");
    let src = manifest_dir().join("tests/c/smoke.c");
    let syntax = Command::new(&cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(&include)
        .arg(&src)
        .status()
        .unwrap();
    assert!(syntax.success(), "header does not compile as C99");

    let Some(lib) = static_lib() else {
        eprintln!("static library not built; skipping link step");
        return;
    };
    let exe = dir.path().join("smoke");
    let link = Command::new(&cc)
        .args(["-std=c99", "-I"])
        .arg(&include)
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(link.success(), "link against {} failed", lib.display());
    run(&exe);
}

fn run(exe: &Path) {
    let out = Command::new(exe).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    let mut parts = stdout.split_whitespace();
    assert_eq!(parts.next(), Some(env!("CARGO_PKG_VERSION")));
    let ll: f64 = parts.next().unwrap().parse().unwrap();
    assert!((ll + 9.0 * 2f64.ln() - 5.0 * 2f64.ln()).abs() < 1e-6, "{ll}");
}
