use matspec_core::error::SpecError;
use matspec_core::io::{read_problem_str, read_spectral_str, write_problem_string, write_spectral_string};
use matspec_core::linalg::{CMat, C64};
use matspec_core::model::{model_spectral_data, ModelProblem};
use matspec_core::problem::BoundaryProblem;
use matspec_core::tolerances::Tolerances;
use proptest::prelude::*;

fn random_problem(seed: &[f64]) -> BoundaryProblem {
    let s = seed.to_vec();
    let q = move |x: f64| {
        CMat::from_fn(2, 2, |i, j| C64::new(s[i + 2 * j] * (x * (1.0 + i as f64)).sin(), s[(i + j + 1) % 4] * x.cos() / 3.0))
    };
    let h = CMat::from_fn(2, 2, |i, j| C64::new(seed[(i + j) % 4], -seed[(2 * i + j) % 4]));
    BoundaryProblem::from_fn(2, 65, q, h.clone(), h.transpose(), false).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]
    #[test]
    fn problem_roundtrip_is_bit_exact(seed in prop::collection::vec(-10.0f64..10.0, 4)) {
        let p = random_problem(&seed);
        let text = write_problem_string(&p).unwrap();
        let back = read_problem_str(&text).unwrap();
        prop_assert_eq!(&back, &p);
        prop_assert_eq!(write_problem_string(&back).unwrap(), text);
    }
}

#[test]
fn spectral_roundtrip_is_bit_exact() {
    let tol = Tolerances::default();
    let data = model_spectral_data(&ModelProblem::new(vec![C64::new(0.1, 0.2), C64::new(0.1, 0.2), C64::new(1.0 / 3.0, 0.0)]), 5, &tol).unwrap();
    let text = write_spectral_string(&data).unwrap();
    let back = read_spectral_str(&text, &tol).unwrap();
    assert_eq!(back, data);
    assert_eq!(write_spectral_string(&back).unwrap(), text);
}

fn spectral_doc() -> serde_json::Value {
    let tol = Tolerances::default();
    let data = model_spectral_data(&ModelProblem::new(vec![C64::new(0.5, 0.0), C64::new(1.0, 0.0)]), 4, &tol).unwrap();
    serde_json::from_str(&write_spectral_string(&data).unwrap()).unwrap()
}

#[test]
fn missing_alpha_names_the_entry() {
    let tol = Tolerances::default();
    let mut doc = spectral_doc();
    // (3, 2) sits at index 3 * 2 + 1
    doc["entries"][7].as_object_mut().unwrap().remove("alpha");
    match read_spectral_str(&doc.to_string(), &tol) {
        Err(SpecError::DimensionMismatch(msg)) => assert!(msg.contains("entries[7]"), "{msg}"),
        other => panic!("{other:?}"),
    }
    let mut doc = spectral_doc();
    doc["entries"].as_array_mut().unwrap().remove(7);
    match read_spectral_str(&doc.to_string(), &tol) {
        Err(SpecError::DimensionMismatch(msg)) => assert!(msg.contains("entries[7]"), "{msg}"),
        other => panic!("{other:?}"),
    }
    let mut doc = spectral_doc();
    doc["entries"][2]["alpha"][1] = serde_json::json!([[0.0, 0.0]]);
    match read_spectral_str(&doc.to_string(), &tol) {
        Err(SpecError::DimensionMismatch(msg)) => assert!(msg.contains("entries[2].alpha[1]"), "{msg}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn legacy_version_is_refused() {
    let tol = Tolerances::default();
    let mut doc = spectral_doc();
    doc["version"] = serde_json::json!("0");
    assert_eq!(read_spectral_str(&doc.to_string(), &tol).unwrap_err(), SpecError::UnsupportedVersion("0".into()));
    let mut doc = spectral_doc();
    doc.as_object_mut().unwrap().remove("version");
    assert!(matches!(read_spectral_str(&doc.to_string(), &tol), Err(SpecError::ParseError { .. })));
}

#[test]
fn syntax_errors_carry_a_line() {
    let text = "{\n  \"version\": \"1\",\n  \"m\": 1,\n  \"grid\": [0.0, \n}\n";
    match read_problem_str(text) {
        Err(SpecError::ParseError { line, .. }) => assert_eq!(line, 5),
        other => panic!("{other:?}"),
    }
    let text = "{\"version\": \"1\", \"m\": \"two\"}";
    match read_problem_str(text) {
        Err(SpecError::ParseError { path, .. }) => assert_eq!(path, "m"),
        other => panic!("{other:?}"),
    }
}
