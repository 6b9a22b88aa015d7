use ts3d_core::gradsuite::{describe, run, Scope};

fn scope(s: Scope) {
    let outcomes = run(s, None).unwrap();
    assert!(!outcomes.is_empty());
    let mut failed = Vec::new();
    for o in &outcomes {
        println!("{}", describe(o));
        if !o.passed() {
            failed.push(o.name);
        }
    }
    assert!(failed.is_empty(), "gradient mismatch in {failed:?}");
}

#[test]
fn operators_match_finite_differences() {
    scope(Scope::Ops);
}

#[test]
fn modules_match_finite_differences() {
    scope(Scope::Modules);
}

#[test]
fn full_loss_matches_finite_differences() {
    scope(Scope::EndToEnd);
}

#[test]
fn scope_names_round_trip() {
    for s in Scope::ALL {
        assert_eq!(Scope::parse(s.name()), Some(s));
    }
    assert_eq!(Scope::parse("everything"), None);
}
