//! Shared helpers for binary-level tests.
#![allow(dead_code)] // each test target uses a different subset

use std::path::Path;
use std::process::{Command, Output};

pub fn minivp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_minivp"))
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn run_ok(args: &[&str]) {
    let out = minivp(args);
    assert!(
        out.status.success(),
        "command failed: {:?}\nstderr: {}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
}

pub fn write_json(path: &Path, v: &serde_json::Value) {
    std::fs::write(path, serde_json::to_string_pretty(v).unwrap()).unwrap();
}

/// CSV with every wall-time column blanked; header names the columns.
pub fn mask_wall_csv(text: &str) -> String {
    let mut lines = text.lines();
    let Some(header) = lines.next() else {
        return String::new();
    };
    let wall_cols: Vec<usize> = header
        .split(',')
        .enumerate()
        .filter(|(_, name)| name.starts_with("wall"))
        .map(|(i, _)| i)
        .collect();
    let mut out = String::from(header);
    out.push('\n');
    for line in lines {
        let cells: Vec<String> = line
            .split(',')
            .enumerate()
            .map(|(i, c)| {
                if wall_cols.contains(&i) {
                    "_".to_string()
                } else {
                    c.to_string()
                }
            })
            .collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn assert_bitwise_equal(a: &Path, b: &Path) {
    let (da, db) = (std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    assert_eq!(da, db, "{} differs from {}", a.display(), b.display());
}

pub fn assert_equal_masking_wall(a: &Path, b: &Path) {
    let (ta, tb) = (
        std::fs::read_to_string(a).unwrap(),
        std::fs::read_to_string(b).unwrap(),
    );
    assert_eq!(
        mask_wall_csv(&ta),
        mask_wall_csv(&tb),
        "{} differs from {} outside wall columns",
        a.display(),
        b.display()
    );
}
