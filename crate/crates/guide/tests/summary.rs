//! Every chapter linked from SUMMARY.md must be compiled as doctests.

use std::collections::BTreeSet;

fn linked_chapters(summary: &str) -> BTreeSet<String> {
    summary
        .split("](")
        .skip(1)
        .filter_map(|rest| rest.split(')').next())
        .map(str::to_owned)
        .collect()
}

fn included_chapters(lib: &str) -> BTreeSet<String> {
    lib.lines()
        .filter_map(|l| l.split("book/src/").nth(1))
        .filter_map(|rest| rest.split('"').next())
        .map(str::to_owned)
        .collect()
}

#[test]
fn summary_and_doctest_modules_agree() {
    let summary = include_str!("../../../book/src/SUMMARY.md");
    let lib = include_str!("../src/lib.rs");
    let linked = linked_chapters(summary);
    assert!(!linked.is_empty());
    assert_eq!(linked, included_chapters(lib));
}
