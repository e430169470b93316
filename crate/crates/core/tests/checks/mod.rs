//! Checks shared by the library test targets and the acceptance runner. Every check
//! returns what it measured so callers decide how to report it.
#![allow(dead_code)]

pub mod oracles;
pub mod properties;

/// Label and error of one checked case.
pub type Case = (String, f64);

/// The case with the largest error (NaN counts as largest).
pub fn worst(cases: &[Case]) -> Case {
    cases
        .iter()
        .cloned()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap_or_else(|| ("no cases".into(), f64::INFINITY))
}

/// Panics naming the first case above `tol`.
pub fn assert_within(cases: &[Case], tol: f64) {
    assert!(!cases.is_empty(), "no cases checked");
    for (label, err) in cases {
        assert!(*err <= tol, "{label}: error {err:e} exceeds {tol:e}");
    }
}
