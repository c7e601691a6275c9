use std::path::PathBuf;

use aipaging_core::{oracle_check, Trace, ViolationClass};

fn load(name: &str) -> Trace {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("testdata/defects")
        .join(format!("{name}.trace"));
    let text = std::fs::read_to_string(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    Trace::parse(&text).unwrap()
}

#[test]
fn conforming_trace_is_clean() {
    let v = oracle_check(&load("conforming")).unwrap();
    assert!(v.is_empty(), "{v:?}");
}

#[test]
fn each_defect_is_named() {
    let cases = [
        ("late-removal", ViolationClass::ExpiryRemoval),
        ("early-release", ViolationClass::MakeBeforeBreak),
        ("flip-before-install", ViolationClass::MakeBeforeBreak),
        ("double-terminal", ViolationClass::DoubleTerminal),
        ("post-tc-attempt", ViolationClass::CommitTimeout),
        ("aisi-reissue", ViolationClass::AisiStability),
        ("overlap-bound", ViolationClass::OverlapBound),
    ];
    for (name, class) in cases {
        let v = oracle_check(&load(name)).unwrap();
        assert!(
            v.iter().any(|x| x.class == class),
            "{name}: expected {class}, got {v:?}"
        );
    }
}

#[test]
fn late_removal_also_breaks_the_gate() {
    let v = oracle_check(&load("late-removal")).unwrap();
    assert!(v.iter().any(|x| x.class == ViolationClass::LeaseGate));
}

#[test]
fn text_round_trip() {
    let text = std::fs::read_to_string(
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("testdata/defects/conforming.trace"),
    )
    .unwrap();
    assert_eq!(Trace::parse(&text).unwrap().to_text(), text);
}
