mod common;

use std::fs;

use common::{build_fixtures, fixtures};

/// Rewrites the committed fixtures: `cargo test -p bnne-cli --test fixtures -- --ignored`.
#[test]
#[ignore]
fn regenerate_fixtures() {
    build_fixtures(&fixtures());
}

#[test]
fn committed_fixtures_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    build_fixtures(dir.path());
    for entry in fs::read_dir(dir.path()).unwrap() {
        let entry = entry.unwrap();
        let name = entry.file_name();
        let fresh = fs::read(entry.path()).unwrap();
        let committed = fs::read(fixtures().join(&name))
            .unwrap_or_else(|e| panic!("missing fixture {name:?}: {e}"));
        assert!(fresh == committed, "fixture {name:?} is stale");
    }
}
