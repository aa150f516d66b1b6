//! Replays every bundled verification experiment end to end through the
//! binary, prints one verdict line per criterion, and checks that two
//! independent replays produce byte-identical artifact trees.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;

fn collect_files(dir: &Path, base: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
    for entry in std::fs::read_dir(dir).expect("listable directory") {
        let path = entry.expect("directory entry").path();
        if path.is_dir() {
            collect_files(&path, base, out);
        } else {
            let rel = path
                .strip_prefix(base)
                .expect("path under base")
                .to_string_lossy()
                .into_owned();
            out.insert(rel, std::fs::read(&path).expect("readable file"));
        }
    }
}

#[test]
fn acceptance_criteria() {
    let root = tempfile::tempdir().expect("tempdir");
    let run_a = root.path().join("a");
    let run_b = root.path().join("b");
    for dir in [&run_a, &run_b] {
        let output = Command::new(env!("CARGO_BIN_EXE_rescomp"))
            .args(["--out", dir.to_str().unwrap(), "repro", "all"])
            .output()
            .expect("binary runs");
        assert_eq!(
            output.status.code(),
            Some(0),
            "repro all failed:\nstdout: {}\nstderr: {}",
            String::from_utf8_lossy(&output.stdout),
            String::from_utf8_lossy(&output.stderr)
        );
    }

    let summary: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(run_a.join("summary.json")).expect("summary written"),
    )
    .expect("summary parses");
    let results = summary["results"].as_array().expect("results array");
    assert_eq!(results.len(), 10, "expected ten criteria");

    let mut failures = Vec::new();
    for result in results {
        let criterion = result["criterion"].as_u64().expect("criterion id");
        let name = result["name"].as_str().expect("criterion name");
        let status = result["status"].as_str().expect("criterion status");
        println!("criterion {criterion:2} {name}: {status}");
        for detail in result["details"].as_array().expect("details array") {
            println!("    {}", detail.as_str().unwrap_or(""));
        }
        if status != "pass" {
            failures.push(format!("criterion {criterion} {name}"));
        }
    }

    let mut tree_a = BTreeMap::new();
    let mut tree_b = BTreeMap::new();
    collect_files(&run_a, &run_a, &mut tree_a);
    collect_files(&run_b, &run_b, &mut tree_b);
    assert!(!tree_a.is_empty(), "replay produced no artifacts");
    let independent = tree_a == tree_b;
    println!(
        "independent process replays byte-identical: {}",
        if independent { "pass" } else { "fail" }
    );

    assert!(failures.is_empty(), "failed: {}", failures.join(", "));
    assert!(independent, "independent replays produced different artifacts");
}
