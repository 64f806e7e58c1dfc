use std::process::{Command, Output};

fn skewtile(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_skewtile"))
        .args(args)
        .output()
        .expect("run skewtile")
}

fn value<'a>(out: &'a Output, key: &str) -> Option<&'a str> {
    std::str::from_utf8(&out.stdout)
        .unwrap()
        .lines()
        .find_map(|l| l.strip_prefix(key)?.strip_prefix('='))
}

#[test]
fn verify_run_matches_reference() {
    let out = skewtile(&["--app", "jacobi2d", "--size", "64,64", "--iters", "10", "--tile", "16,16", "--verify"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let diff: f64 = value(&out, "max_abs_diff").unwrap().parse().unwrap();
    assert_eq!(diff, 0.0);
}

#[test]
fn minihydro_verifies_under_every_mode() {
    for extra in [&["--untiled"][..], &["--tile", "8,16"], &["--tile", "16,16", "--ranks", "2,2"], &["--ranks", "2,1"]] {
        let mut args = vec!["--app", "minihydro", "--size", "32,32", "--iters", "2", "--verify"];
        args.extend_from_slice(extra);
        let out = skewtile(&args);
        assert_eq!(out.status.code(), Some(0), "{extra:?}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(value(&out, "iteration.1.reduction").is_some());
    }
}

#[test]
fn plan_dump_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let paths = [dir.path().join("a.txt"), dir.path().join("b.txt")];
    for p in &paths {
        let out = skewtile(&["--app", "minihydro", "--size", "40,24", "--iters", "2", "--tile", "8,8", "--dump-plan", p.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let a = std::fs::read_to_string(&paths[0]).unwrap();
    assert!(a.starts_with("tile=0 loop=0 d=0 ["));
    assert_eq!(a, std::fs::read_to_string(&paths[1]).unwrap());
}

#[test]
fn auto_tile_satisfies_sizer_constraints() {
    let out = skewtile(&["--app", "jacobi2d", "--size", "512,512", "--iters", "2", "--auto-tile", "--cache-kb", "20480", "--threads", "20", "--report"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(value(&out, "sizer_constraints"), Some("ok"));
    let tile: Vec<i64> = value(&out, "tile").unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(tile.len(), 2);
    assert!(tile[0] >= 2 * tile[1]);
    assert_eq!(tile[1] % 20, 0);
    assert!((tile[0] * tile[1]) as u64 * 16 <= 20480 * 1024);
}

#[test]
fn usage_and_runtime_errors_have_distinct_codes() {
    assert_eq!(skewtile(&["--tile", "4,4", "--untiled"]).status.code(), Some(2));
    assert_eq!(skewtile(&["--bogus"]).status.code(), Some(2));
    assert_eq!(skewtile(&["--size", "8,8,8"]).status.code(), Some(1));
    assert_eq!(skewtile(&["--untiled", "--dump-plan", "/nonexistent/x"]).status.code(), Some(1));
}

#[test]
fn report_lists_key_values() {
    let out = skewtile(&["--size", "32,32", "--iters", "3", "--tile", "8,8", "--ranks", "2,1", "--report"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(value(&out, "mode"), Some("distributed-tiled"));
    assert_eq!(value(&out, "exchanges_during_execution"), Some("0"));
    assert!(value(&out, "messages_sent").unwrap().parse::<u64>().unwrap() > 0);
}
