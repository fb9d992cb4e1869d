mod common;

use std::sync::OnceLock;

use common::oracles::rel_close;
use nestcall::registry::ToolRegistry;
use nestcall::units::{UnitError, UnitTable};
use proptest::prelude::*;

fn tables() -> &'static [UnitTable] {
    static TABLES: OnceLock<Vec<UnitTable>> = OnceLock::new();
    TABLES.get_or_init(|| ToolRegistry::builtin().unit_tables().cloned().collect())
}

fn table(name: &str) -> UnitTable {
    tables()
        .iter()
        .find(|t| t.tool_name == name)
        .unwrap()
        .clone()
}

#[test]
fn cholesterol_goldens() {
    // mg/dL per mmol/L = molar mass (g/mol) / 10; cholesterol 386.65 g/mol.
    let oracle = |mmol: f64| mmol * 386.65 / 10.0;
    let tc = table("Total Cholesterol")
        .convert_labels(8.3, "mmol/L", "mg/dL")
        .unwrap();
    assert!(rel_close(tc, 320.9195, 1e-12), "{tc}");
    assert!(rel_close(tc, oracle(8.3), 1e-12));
    let hdl = table("High-density lipoprotein cholesterol")
        .convert_labels(0.2, "mmol/L", "mg/dL")
        .unwrap();
    assert!(rel_close(hdl, 7.733, 1e-12), "{hdl}");
    assert!(rel_close(hdl, oracle(0.2), 1e-12));
}

#[test]
fn independent_factor_goldens() {
    let cases = [
        ("Glucose", 5.5, "mmol/L", "mg/dL", 5.5 * 180.16 / 10.0),
        ("Length", 1.57, "m", "cm", 157.0),
        ("Length", 12.0, "in", "cm", 30.48),
        ("Weight", 1.0, "lb", "kg", 0.45359237),
    ];
    for (tool, v, from, to, expect) in cases {
        let got = table(tool).convert_labels(v, from, to).unwrap();
        assert!(
            rel_close(got, expect, 1e-9),
            "{tool} {v} {from}->{to}: {got} vs {expect}"
        );
    }
}

#[test]
fn labels_resolve_to_their_own_index() {
    for t in tables() {
        for (i, label) in t.unit_labels.iter().enumerate() {
            assert_eq!(t.parse_unit_label(label).unwrap(), i, "{}", t.tool_name);
            assert_eq!(
                t.parse_unit_label(&format!(" {} ", label.to_uppercase()))
                    .unwrap(),
                i
            );
        }
        assert!(matches!(
            t.parse_unit_label("furlong"),
            Err(UnitError::UnknownUnit { .. })
        ));
        assert!(matches!(
            t.convert(1.0, 0, t.len()),
            Err(UnitError::IndexOutOfRange { .. })
        ));
    }
}

#[test]
fn invalid_tables_rejected() {
    let l = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    assert!(UnitTable::new("x", l(&["a", "b"]), vec![1.0]).is_err());
    assert!(UnitTable::new("x", l(&["a", "b"]), vec![2.0, 1.0]).is_err());
    assert!(UnitTable::new("x", l(&["a", "b"]), vec![1.0, 0.0]).is_err());
    assert!(UnitTable::new("x", l(&["mg/dL", "MG/dl"]), vec![1.0, 2.0]).is_err());
    assert!(UnitTable::new("x", l(&["a", "b"]), vec![1.0, 3.0]).is_ok());
}

fn table_and_units() -> impl Strategy<Value = (usize, usize, usize, usize)> {
    let n = tables().len();
    (0..n).prop_flat_map(|t| {
        let m = tables()[t].len();
        (Just(t), 0..m, 0..m, 0..m)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn round_trip((t, a, b, _c) in table_and_units(), v in 1e-3f64..1e4) {
        let table = &tables()[t];
        let there = table.convert(v, a, b).unwrap();
        let back = table.convert(there, b, a).unwrap();
        prop_assert!(rel_close(back, v, 1e-12), "{} {a}->{b}: {v} -> {there} -> {back}", table.tool_name);
    }

    #[test]
    fn transitive((t, a, b, c) in table_and_units(), v in 1e-3f64..1e4) {
        let table = &tables()[t];
        let direct = table.convert(v, a, c).unwrap();
        let hop = table.convert(table.convert(v, a, b).unwrap(), b, c).unwrap();
        prop_assert!(rel_close(direct, hop, 1e-12), "{} {a}->{b}->{c}", table.tool_name);
    }

    #[test]
    fn identity((t, a, _b, _c) in table_and_units(), v in -1e4f64..1e4) {
        prop_assert_eq!(tables()[t].convert(v, a, a).unwrap(), v);
    }
}
