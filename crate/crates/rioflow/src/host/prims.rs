//! Pure primitive evaluation: the single kernel shared by the host firing
//! engine and the fabric netlist simulator, so both targets compute with
//! the same bit-exact semantics.
//!
//! i32 arithmetic wraps (two's complement). Fixed-point arithmetic runs at
//! full precision in i128 and narrows back: Add/Sub saturate to the operand
//! type, Mul widens to the exact product type. f64 follows IEEE 754.

use crate::diag::{Error, ErrorCode, Result};
use crate::ir::PrimOp;
use crate::value::{ArrayValue, FxpValue, OverflowMode, Value, WireType};
use std::sync::Arc;

fn fault(node_hint: &str, cause: &str) -> Error {
    Error::Fault(
        crate::diag::Diagnostic::new(ErrorCode::Runtime, cause.to_string())
            .with_node(node_hint.to_string()),
    )
}

/// Numeric value-level conversion with an explicit overflow mode. Rounds to
/// nearest, ties to even, where narrowing is needed.
pub fn convert_value(v: &Value, to: &WireType, mode: OverflowMode) -> Result<Value> {
    Ok(match (v, to) {
        (Value::Int32(x), WireType::Int32) => Value::Int32(*x),
        (Value::Int32(x), WireType::Float64) => Value::Float64(*x as f64),
        (Value::Int32(x), WireType::Fxp { word_bits, int_bits }) => {
            // Treat the integer as fxp<33,33> (scale 1) and re-scale.
            let src = FxpValue { word_bits: 33, int_bits: 33, raw: *x as i64 };
            Value::Fxp(src.convert(*word_bits, *int_bits, mode))
        }
        (Value::Float64(x), WireType::Float64) => Value::Float64(*x),
        (Value::Float64(x), WireType::Int32) => {
            if x.is_nan() {
                Value::Int32(0)
            } else {
                let r = x.round_ties_even();
                match mode {
                    OverflowMode::Saturate => {
                        Value::Int32(r.clamp(i32::MIN as f64, i32::MAX as f64) as i32)
                    }
                    OverflowMode::Wrap => {
                        if r.abs() < 2f64.powi(63) {
                            Value::Int32((r as i64) as i32)
                        } else {
                            Value::Int32(0)
                        }
                    }
                }
            }
        }
        (Value::Float64(x), WireType::Fxp { word_bits, int_bits }) => {
            Value::Fxp(FxpValue::from_f64(*x, *word_bits, *int_bits, mode))
        }
        (Value::Fxp(fx), WireType::Fxp { word_bits, int_bits }) => {
            Value::Fxp(fx.convert(*word_bits, *int_bits, mode))
        }
        (Value::Fxp(fx), WireType::Float64) => Value::Float64(fx.to_f64()),
        (Value::Fxp(fx), WireType::Int32) => {
            // Integer part, round half to even, then fit into 32 bits.
            let rounded =
                crate::value::shift_round_half_even(fx.raw as i128, fx.frac_bits().min(127));
            let fitted = FxpValue::fit(rounded, 32, 32, mode);
            Value::Int32(fitted.raw as i32)
        }
        (v, t) => {
            return Err(Error::fault(
                ErrorCode::TypeMismatch,
                format!("cannot convert {} to {}", v.ty(), t),
            ))
        }
    })
}

fn fxp_same(a: &FxpValue, b: &FxpValue) -> bool {
    a.word_bits == b.word_bits && a.int_bits == b.int_bits
}

fn scalar_add(node: &str, x: &Value, y: &Value) -> Result<Value> {
    Ok(match (x, y) {
        (Value::Int32(a), Value::Int32(b)) => Value::Int32(a.wrapping_add(*b)),
        (Value::Float64(a), Value::Float64(b)) => Value::Float64(a + b),
        (Value::Fxp(a), Value::Fxp(b)) if fxp_same(a, b) => Value::Fxp(FxpValue::fit(
            a.raw as i128 + b.raw as i128,
            a.word_bits,
            a.int_bits,
            OverflowMode::Saturate,
        )),
        _ => return Err(fault(node, "Add operand kinds differ")),
    })
}

fn scalar_sub(node: &str, x: &Value, y: &Value) -> Result<Value> {
    Ok(match (x, y) {
        (Value::Int32(a), Value::Int32(b)) => Value::Int32(a.wrapping_sub(*b)),
        (Value::Float64(a), Value::Float64(b)) => Value::Float64(a - b),
        (Value::Fxp(a), Value::Fxp(b)) if fxp_same(a, b) => Value::Fxp(FxpValue::fit(
            a.raw as i128 - b.raw as i128,
            a.word_bits,
            a.int_bits,
            OverflowMode::Saturate,
        )),
        _ => return Err(fault(node, "Sub operand kinds differ")),
    })
}

fn scalar_mul(node: &str, x: &Value, y: &Value) -> Result<Value> {
    Ok(match (x, y) {
        (Value::Int32(a), Value::Int32(b)) => Value::Int32(a.wrapping_mul(*b)),
        (Value::Float64(a), Value::Float64(b)) => Value::Float64(a * b),
        (Value::Fxp(a), Value::Fxp(b)) => {
            // Exact product in the widened format; inference guarantees the
            // widened word width fits 64 bits.
            let w = a.word_bits + b.word_bits;
            let i = a.int_bits + b.int_bits;
            Value::Fxp(FxpValue::fit(
                a.raw as i128 * b.raw as i128,
                w,
                i,
                OverflowMode::Saturate,
            ))
        }
        _ => return Err(fault(node, "Mul operand kinds differ")),
    })
}

/// Elementwise map over arrays with scalar broadcast on either side.
fn elementwise(
    node: &str,
    x: &Value,
    y: &Value,
    f: &dyn Fn(&str, &Value, &Value) -> Result<Value>,
) -> Result<Value> {
    match (x, y) {
        (Value::Array(a), Value::Array(b)) => {
            if a.items.len() != b.items.len() {
                return Err(fault(node, "array length mismatch"));
            }
            let items: Result<Vec<Value>> = a
                .items
                .iter()
                .zip(b.items.iter())
                .map(|(xa, xb)| elementwise(node, xa, xb, f))
                .collect();
            let items = items?;
            let elem = items.first().map(|v| v.ty()).unwrap_or_else(|| a.elem.clone());
            Ok(Value::Array(ArrayValue { elem, items: Arc::new(items) }))
        }
        (Value::Array(a), s) => {
            let items: Result<Vec<Value>> =
                a.items.iter().map(|xa| elementwise(node, xa, s, f)).collect();
            let items = items?;
            let elem = items.first().map(|v| v.ty()).unwrap_or_else(|| a.elem.clone());
            Ok(Value::Array(ArrayValue { elem, items: Arc::new(items) }))
        }
        (s, Value::Array(b)) => {
            let items: Result<Vec<Value>> =
                b.items.iter().map(|xb| elementwise(node, s, xb, f)).collect();
            let items = items?;
            let elem = items.first().map(|v| v.ty()).unwrap_or_else(|| b.elem.clone());
            Ok(Value::Array(ArrayValue { elem, items: Arc::new(items) }))
        }
        (a, b) => f(node, a, b),
    }
}

fn compare(node: &str, op: &PrimOp, x: &Value, y: &Value) -> Result<Value> {
    let res = match (x, y) {
        (Value::Int32(a), Value::Int32(b)) => match op {
            PrimOp::Gt => a > b,
            PrimOp::Lt => a < b,
            _ => a == b,
        },
        (Value::Float64(a), Value::Float64(b)) => match op {
            PrimOp::Gt => a > b,
            PrimOp::Lt => a < b,
            _ => a == b,
        },
        (Value::Fxp(a), Value::Fxp(b)) if fxp_same(a, b) => match op {
            PrimOp::Gt => a.raw > b.raw,
            PrimOp::Lt => a.raw < b.raw,
            _ => a.raw == b.raw,
        },
        (Value::Bool(a), Value::Bool(b)) if *op == PrimOp::Eq => a == b,
        _ => return Err(fault(node, "comparison operand kinds differ")),
    };
    Ok(Value::Bool(res))
}

/// Evaluates one pure primitive. Inputs arrive in the primitive's declared
/// port order. Repeated calls with equal inputs return bitwise-equal
/// outputs. Channel, scan and file primitives are not pure and are handled
/// by the execution engines instead.
pub fn fire(prim: &PrimOp, ins: &[Value]) -> Result<Vec<Value>> {
    fire_named(prim, ins, "?")
}

/// [`fire`] with a node id for error attribution.
pub fn fire_named(prim: &PrimOp, ins: &[Value], node: &str) -> Result<Vec<Value>> {
    let one = |v: Value| Ok(vec![v]);
    match prim {
        PrimOp::Add => one(elementwise(node, &ins[0], &ins[1], &scalar_add)?),
        PrimOp::Sub => one(elementwise(node, &ins[0], &ins[1], &scalar_sub)?),
        PrimOp::Mul => one(elementwise(node, &ins[0], &ins[1], &scalar_mul)?),
        PrimOp::Div => match (&ins[0], &ins[1]) {
            (Value::Int32(a), Value::Int32(b)) => {
                if *b == 0 {
                    Err(fault(node, "div_by_zero"))
                } else {
                    one(Value::Int32(a.wrapping_div(*b)))
                }
            }
            (Value::Float64(a), Value::Float64(b)) => one(Value::Float64(a / b)),
            _ => Err(fault(node, "Div operand kinds differ")),
        },
        PrimOp::Gt | PrimOp::Lt | PrimOp::Eq => one(compare(node, prim, &ins[0], &ins[1])?),
        PrimOp::And => match (&ins[0], &ins[1]) {
            (Value::Bool(a), Value::Bool(b)) => one(Value::Bool(*a && *b)),
            _ => Err(fault(node, "And requires bool operands")),
        },
        PrimOp::Or => match (&ins[0], &ins[1]) {
            (Value::Bool(a), Value::Bool(b)) => one(Value::Bool(*a || *b)),
            _ => Err(fault(node, "Or requires bool operands")),
        },
        PrimOp::Not => match &ins[0] {
            Value::Bool(a) => one(Value::Bool(!a)),
            _ => Err(fault(node, "Not requires a bool operand")),
        },
        PrimOp::Select => match &ins[0] {
            Value::Bool(true) => one(ins[1].clone()),
            Value::Bool(false) => one(ins[2].clone()),
            _ => Err(fault(node, "Select requires a bool selector")),
        },
        PrimOp::Const(v) => one(v.clone()),
        PrimOp::Convert { to, mode } => one(convert_value(&ins[0], to, *mode)?),
        PrimOp::Biquad => {
            let Value::Array(xs) = &ins[0] else {
                return Err(fault(node, "Biquad requires an f64 array input"));
            };
            let coeff = |i: usize| -> Result<f64> {
                ins[i].as_f64().ok_or_else(|| fault(node, "Biquad coefficients must be f64"))
            };
            let x: Vec<f64> = xs.items.iter().filter_map(|v| v.as_f64()).collect();
            if x.len() != xs.items.len() {
                return Err(fault(node, "Biquad requires an f64 array input"));
            }
            let coeffs = super::biquad::BiquadCoeffs {
                b0: coeff(1)?,
                b1: coeff(2)?,
                b2: coeff(3)?,
                a1: coeff(4)?,
                a2: coeff(5)?,
            };
            let mut state = super::biquad::BiquadState::default();
            let y = super::biquad::biquad(&x, &coeffs, &mut state);
            one(Value::array(WireType::Float64, y.into_iter().map(Value::Float64).collect()))
        }
        PrimOp::ArrayIndex => {
            let Value::Array(a) = &ins[0] else {
                return Err(fault(node, "ArrayIndex requires an array"));
            };
            let Some(idx) = ins[1].as_i32() else {
                return Err(fault(node, "ArrayIndex requires an i32 index"));
            };
            if idx < 0 || idx as usize >= a.items.len() {
                return Err(fault(node, "index_out_of_bounds"));
            }
            one(a.items[idx as usize].clone())
        }
        PrimOp::ArrayBuild(n) => {
            let items: Vec<Value> = ins.iter().take(*n).cloned().collect();
            let elem = items.first().map(|v| v.ty()).unwrap_or(WireType::Float64);
            one(Value::array(elem, items))
        }
        other => Err(Error::fault(
            ErrorCode::Runtime,
            format!("primitive `{}` is not pure and needs an execution engine", other.name()),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn select_picks_true_branch() {
        let out = fire(&PrimOp::Select, &[Value::Bool(true), Value::Int32(7), Value::Int32(9)])
            .unwrap();
        assert_eq!(out, vec![Value::Int32(7)]);
    }

    #[test]
    fn fxp_add_saturates_to_max_representable() {
        // Big-integer oracle: 7.9375 + 0.0625 = 8.0 = raw 128 in fxp<8,4>,
        // above max raw 127, so the saturating result is 7.9375.
        let a = Value::Fxp(FxpValue::from_f64(7.9375, 8, 4, OverflowMode::Saturate));
        let b = Value::Fxp(FxpValue::from_f64(0.0625, 8, 4, OverflowMode::Saturate));
        let out = fire(&PrimOp::Add, &[a, b]).unwrap();
        match &out[0] {
            Value::Fxp(fx) => {
                assert_eq!(fx.raw, 127);
                assert_eq!(fx.to_f64(), 7.9375);
            }
            other => panic!("unexpected {:?}", other),
        }
    }

    #[test]
    fn fxp_mul_widens_exactly() {
        // Big-integer oracle over a sweep: products in fxp<16,8> are exact.
        for ra in [-128i64, -37, 0, 64, 127] {
            for rb in [-128i64, -1, 0, 99, 127] {
                let a = Value::Fxp(FxpValue { word_bits: 8, int_bits: 4, raw: ra });
                let b = Value::Fxp(FxpValue { word_bits: 8, int_bits: 4, raw: rb });
                let out = fire(&PrimOp::Mul, &[a, b]).unwrap();
                match &out[0] {
                    Value::Fxp(fx) => {
                        assert_eq!(fx.word_bits, 16);
                        assert_eq!(fx.int_bits, 8);
                        assert_eq!(fx.raw, ra * rb, "exact product, no rounding");
                    }
                    other => panic!("unexpected {:?}", other),
                }
            }
        }
    }

    #[test]
    fn i32_div_by_zero_is_a_runtime_fault() {
        let err = fire(&PrimOp::Div, &[Value::Int32(1), Value::Int32(0)]).unwrap_err();
        assert_eq!(err.code(), ErrorCode::Runtime);
        assert!(err.to_string().contains("div_by_zero"));
    }

    #[test]
    fn i32_arithmetic_wraps() {
        let out = fire(&PrimOp::Add, &[Value::Int32(i32::MAX), Value::Int32(1)]).unwrap();
        assert_eq!(out, vec![Value::Int32(i32::MIN)]);
    }

    #[test]
    fn fire_is_pure_bitwise() {
        let ins = [Value::Float64(0.1), Value::Float64(0.2)];
        let a = fire(&PrimOp::Add, &ins).unwrap();
        let b = fire(&PrimOp::Add, &ins).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn elementwise_ops_on_empty_arrays_are_empty() {
        let e = Value::array(WireType::Float64, vec![]);
        let out = fire(&PrimOp::Add, &[e.clone(), e]).unwrap();
        match &out[0] {
            Value::Array(a) => assert!(a.items.is_empty()),
            other => panic!("unexpected {:?}", other),
        }
    }

    #[test]
    fn broadcast_scales_array_by_scalar() {
        let xs = Value::array(
            WireType::Float64,
            vec![Value::Float64(1.0), Value::Float64(-2.0), Value::Float64(0.5)],
        );
        let out = fire(&PrimOp::Mul, &[xs, Value::Float64(2.0)]).unwrap();
        match &out[0] {
            Value::Array(a) => {
                let got: Vec<f64> = a.items.iter().map(|v| v.as_f64().unwrap()).collect();
                assert_eq!(got, vec![2.0, -4.0, 1.0]);
            }
            other => panic!("unexpected {:?}", other),
        }
    }

    #[test]
    fn array_index_out_of_bounds_faults() {
        let xs = Value::array(WireType::Int32, vec![Value::Int32(5)]);
        let err = fire(&PrimOp::ArrayIndex, &[xs, Value::Int32(1)]).unwrap_err();
        assert!(err.to_string().contains("index_out_of_bounds"));
    }

    #[test]
    fn convert_f64_to_i32_rounds_ties_even_and_saturates() {
        let c = |x: f64| {
            convert_value(&Value::Float64(x), &WireType::Int32, OverflowMode::Saturate).unwrap()
        };
        assert_eq!(c(2.5), Value::Int32(2));
        assert_eq!(c(3.5), Value::Int32(4));
        assert_eq!(c(1e300), Value::Int32(i32::MAX));
        assert_eq!(c(-1e300), Value::Int32(i32::MIN));
    }

    #[test]
    fn convert_i32_to_fxp_and_back() {
        let v = convert_value(
            &Value::Int32(3),
            &WireType::fxp(8, 4).unwrap(),
            OverflowMode::Saturate,
        )
        .unwrap();
        match &v {
            Value::Fxp(fx) => assert_eq!(fx.to_f64(), 3.0),
            other => panic!("unexpected {:?}", other),
        }
        let back = convert_value(&v, &WireType::Int32, OverflowMode::Saturate).unwrap();
        assert_eq!(back, Value::Int32(3));
    }
}
