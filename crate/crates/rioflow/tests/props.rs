//! Property tests: fixed-point narrowing against a big-integer oracle, and
//! literal/parse round trips for generated constants.

use proptest::prelude::*;
use rioflow::gtext::{format_project, normalize, parse};
use rioflow::ir::{bport, nport, Node, Port, PrimOp, Project, ViGraph, Wire};
use rioflow::value::{FxpValue, OverflowMode, Value, WireType};

/// Independent i128 model of two's-complement narrowing.
fn oracle_fit(raw: i128, w: u32, mode: OverflowMode) -> i128 {
    let max = if w == 64 { i64::MAX as i128 } else { (1i128 << (w - 1)) - 1 };
    let min = if w == 64 { i64::MIN as i128 } else { -(1i128 << (w - 1)) };
    if raw >= min && raw <= max {
        return raw;
    }
    match mode {
        OverflowMode::Saturate => {
            if raw > max {
                max
            } else {
                min
            }
        }
        OverflowMode::Wrap => {
            let modulus = 1i128 << w;
            let mut r = raw.rem_euclid(modulus);
            if r > max {
                r -= modulus;
            }
            r
        }
    }
}

proptest! {
    #[test]
    fn fit_matches_big_integer_oracle(
        raw in any::<i64>().prop_map(|x| x as i128 * 3),
        w in 1u32..=64,
        sat in any::<bool>(),
    ) {
        let mode = if sat { OverflowMode::Saturate } else { OverflowMode::Wrap };
        let int_bits = (w as i32).min(32);
        let got = FxpValue::fit(raw, w, int_bits, mode).raw as i128;
        prop_assert_eq!(got, oracle_fit(raw, w, mode));
    }

    #[test]
    fn quantization_is_idempotent(
        x in -1e12f64..1e12,
        w in 2u32..=32,
        i in 0i32..=16,
    ) {
        prop_assume!(i <= w as i32);
        let q1 = FxpValue::from_f64(x, w, i, OverflowMode::Saturate);
        let q2 = FxpValue::from_f64(q1.to_f64(), w, i, OverflowMode::Saturate);
        prop_assert_eq!(q1, q2);
    }

    #[test]
    fn fxp_add_stays_in_range(
        ra in any::<i32>(),
        rb in any::<i32>(),
        w in 2u32..=32,
    ) {
        let max = FxpValue::max_raw(w);
        let min = FxpValue::min_raw(w);
        let a = FxpValue { word_bits: w, int_bits: w as i32 / 2, raw: oracle_fit(ra as i128, w, OverflowMode::Wrap) as i64 };
        let b = FxpValue { word_bits: w, int_bits: w as i32 / 2, raw: oracle_fit(rb as i128, w, OverflowMode::Wrap) as i64 };
        let sum = FxpValue::fit(a.raw as i128 + b.raw as i128, w, a.int_bits, OverflowMode::Saturate);
        prop_assert!(sum.raw <= max && sum.raw >= min);
    }

    /// Any finite f64 constant survives format -> parse exactly, because the
    /// formatter prints shortest-round-trip literals.
    #[test]
    fn f64_const_literals_round_trip(x in any::<f64>()) {
        prop_assume!(x.is_finite());
        let mut project = Project::default();
        let diagram = rioflow::ir::Diagram {
            controls: vec![],
            indicators: vec![Port { name: "y".into(), ty: WireType::Float64 }],
            nodes: vec![Node::prim("k", PrimOp::Const(Value::Float64(x)))],
            wires: vec![Wire::simple(nport("k", "out"), bport("y"))],
        };
        project.vis.insert("V".into(), ViGraph { name: "V".into(), diagram, target: None });
        project.top = "V".into();
        let text = format_project(&project);
        let p2 = parse(&text, "t").unwrap();
        prop_assert_eq!(normalize(&p2), normalize(&project));
    }

    /// Any representable fixed-point constant round trips, whether printed
    /// as a decimal or in raw form.
    #[test]
    fn fxp_const_literals_round_trip(raw in any::<i64>(), w in 1u32..=64, i in -16i32..=16) {
        prop_assume!(i <= w as i32);
        let raw = oracle_fit(raw as i128, w, OverflowMode::Wrap) as i64;
        let fx = FxpValue { word_bits: w, int_bits: i, raw };
        let mut project = Project::default();
        let ty = WireType::Fxp { word_bits: w, int_bits: i };
        let diagram = rioflow::ir::Diagram {
            controls: vec![],
            indicators: vec![Port { name: "y".into(), ty }],
            nodes: vec![Node::prim("k", PrimOp::Const(Value::Fxp(fx)))],
            wires: vec![Wire::simple(nport("k", "out"), bport("y"))],
        };
        project.vis.insert("V".into(), ViGraph { name: "V".into(), diagram, target: None });
        project.top = "V".into();
        let text = format_project(&project);
        let p2 = parse(&text, "t").unwrap();
        prop_assert_eq!(normalize(&p2), normalize(&project));
    }
}
