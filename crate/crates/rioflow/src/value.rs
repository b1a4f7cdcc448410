//! Wire types and runtime values.
//!
//! A wire carries exactly one of: bool, i32, f64, a fixed-point word, a
//! fixed-length array, or a positional cluster. Fixed-point payloads are
//! W-bit two's-complement integers interpreted with scale `2^(I-W)` where
//! `I` is the (signed) integer-bit position. Arithmetic on fixed-point runs
//! at full precision in `i128` and is narrowed back per the overflow mode.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::Arc;

/// Static type of a wire. Array lengths are fixed before execution; there
/// are no strings or variable-length collections, so every type has a known
/// bit width on both the host and the fabric.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum WireType {
    Bool,
    Int32,
    Float64,
    Fxp { word_bits: u32, int_bits: i32 },
    Array { elem: Box<WireType>, len: usize },
    Cluster(Vec<WireType>),
}

impl WireType {
    /// Fixed-point constructor enforcing `0 < W <= 64` and `-64 <= I <= W`.
    /// The lower bound on `I` keeps every scale representable without
    /// arbitrary-precision shifts.
    pub fn fxp(word_bits: u32, int_bits: i32) -> Option<WireType> {
        if word_bits == 0 || word_bits > 64 {
            return None;
        }
        if int_bits > word_bits as i32 || int_bits < -64 {
            return None;
        }
        Some(WireType::Fxp { word_bits, int_bits })
    }

    pub fn array(elem: WireType, len: usize) -> WireType {
        WireType::Array { elem: Box::new(elem), len }
    }

    pub fn width_bits(&self) -> u64 {
        match self {
            WireType::Bool => 1,
            WireType::Int32 => 32,
            WireType::Float64 => 64,
            WireType::Fxp { word_bits, .. } => *word_bits as u64,
            WireType::Array { elem, len } => elem.width_bits() * *len as u64,
            WireType::Cluster(fields) => fields.iter().map(|f| f.width_bits()).sum(),
        }
    }

    pub fn is_numeric_scalar(&self) -> bool {
        matches!(self, WireType::Int32 | WireType::Float64 | WireType::Fxp { .. })
    }

    /// The zero/default value of this type.
    pub fn default_value(&self) -> Value {
        match self {
            WireType::Bool => Value::Bool(false),
            WireType::Int32 => Value::Int32(0),
            WireType::Float64 => Value::Float64(0.0),
            WireType::Fxp { word_bits, int_bits } => {
                Value::Fxp(FxpValue { word_bits: *word_bits, int_bits: *int_bits, raw: 0 })
            }
            WireType::Array { elem, len } => {
                let items = vec![elem.default_value(); *len];
                Value::Array(ArrayValue { elem: (**elem).clone(), items: Arc::new(items) })
            }
            WireType::Cluster(fields) => {
                Value::Cluster(Arc::new(fields.iter().map(|f| f.default_value()).collect()))
            }
        }
    }
}

impl fmt::Display for WireType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WireType::Bool => write!(f, "bool"),
            WireType::Int32 => write!(f, "i32"),
            WireType::Float64 => write!(f, "f64"),
            WireType::Fxp { word_bits, int_bits } => write!(f, "fxp<{},{}>", word_bits, int_bits),
            WireType::Array { elem, len } => write!(f, "[{}; {}]", elem, len),
            WireType::Cluster(fields) => {
                write!(f, "(")?;
                for (i, t) in fields.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{}", t)?;
                }
                write!(f, ")")
            }
        }
    }
}

/// Narrowing behavior when a full-precision result does not fit the target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum OverflowMode {
    #[default]
    Saturate,
    Wrap,
}

/// A fixed-point word: `raw * 2^(int_bits - word_bits)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FxpValue {
    pub word_bits: u32,
    pub int_bits: i32,
    pub raw: i64,
}

impl FxpValue {
    pub fn ty(&self) -> WireType {
        WireType::Fxp { word_bits: self.word_bits, int_bits: self.int_bits }
    }

    /// Fractional bit count `W - I`; always >= 0 given the type invariants.
    pub fn frac_bits(&self) -> u32 {
        (self.word_bits as i64 - self.int_bits as i64) as u32
    }

    pub fn max_raw(word_bits: u32) -> i64 {
        if word_bits == 64 {
            i64::MAX
        } else {
            (1i64 << (word_bits - 1)) - 1
        }
    }

    pub fn min_raw(word_bits: u32) -> i64 {
        if word_bits == 64 {
            i64::MIN
        } else {
            -(1i64 << (word_bits - 1))
        }
    }

    /// Narrows a full-precision raw value to `word_bits` per `mode`.
    pub fn fit(raw: i128, word_bits: u32, int_bits: i32, mode: OverflowMode) -> FxpValue {
        let max = Self::max_raw(word_bits) as i128;
        let min = Self::min_raw(word_bits) as i128;
        let fitted = if raw > max || raw < min {
            match mode {
                OverflowMode::Saturate => {
                    if raw > max {
                        max
                    } else {
                        min
                    }
                }
                OverflowMode::Wrap => wrap_to_bits(raw, word_bits),
            }
        } else {
            raw
        };
        FxpValue { word_bits, int_bits, raw: fitted as i64 }
    }

    pub fn to_f64(&self) -> f64 {
        let scale = self.int_bits as i64 - self.word_bits as i64;
        (self.raw as f64) * exp2i(scale)
    }

    /// Quantizes `x` into the given format: scale, round to nearest (ties to
    /// even), then saturate or wrap. NaN quantizes to zero.
    pub fn from_f64(x: f64, word_bits: u32, int_bits: i32, mode: OverflowMode) -> FxpValue {
        if x.is_nan() {
            return FxpValue { word_bits, int_bits, raw: 0 };
        }
        let frac = word_bits as i64 - int_bits as i64;
        let scaled = x * exp2i(frac);
        let max = Self::max_raw(word_bits);
        let min = Self::min_raw(word_bits);
        // Compare in f64 space first so huge magnitudes never hit the cast.
        if scaled >= (max as f64) + 1.0 || scaled == f64::INFINITY {
            return match mode {
                OverflowMode::Saturate => FxpValue { word_bits, int_bits, raw: max },
                OverflowMode::Wrap => {
                    let r = scaled.round_ties_even();
                    if r.abs() < 2f64.powi(110) {
                        Self::fit(r as i128, word_bits, int_bits, mode)
                    } else {
                        FxpValue { word_bits, int_bits, raw: 0 }
                    }
                }
            };
        }
        if scaled <= (min as f64) - 1.0 || scaled == f64::NEG_INFINITY {
            return match mode {
                OverflowMode::Saturate => FxpValue { word_bits, int_bits, raw: min },
                OverflowMode::Wrap => {
                    let r = scaled.round_ties_even();
                    if r.abs() < 2f64.powi(110) {
                        Self::fit(r as i128, word_bits, int_bits, mode)
                    } else {
                        FxpValue { word_bits, int_bits, raw: 0 }
                    }
                }
            };
        }
        let rounded = scaled.round_ties_even() as i128;
        Self::fit(rounded, word_bits, int_bits, mode)
    }

    /// Re-scales into another fixed-point format. Right shifts round ties to
    /// even; left shifts that overflow the target saturate or wrap.
    pub fn convert(&self, word_bits: u32, int_bits: i32, mode: OverflowMode) -> FxpValue {
        let from_frac = self.frac_bits() as i64;
        let to_frac = word_bits as i64 - int_bits as i64;
        let diff = to_frac - from_frac;
        if diff == 0 {
            return Self::fit(self.raw as i128, word_bits, int_bits, mode);
        }
        if diff > 0 {
            // Left shift. Anything shifted by >= 64 with a nonzero raw is
            // guaranteed out of range for a <= 64-bit target.
            if diff >= 64 {
                if self.raw == 0 {
                    return FxpValue { word_bits, int_bits, raw: 0 };
                }
                return match mode {
                    OverflowMode::Saturate => {
                        let raw = if self.raw > 0 {
                            Self::max_raw(word_bits)
                        } else {
                            Self::min_raw(word_bits)
                        };
                        FxpValue { word_bits, int_bits, raw }
                    }
                    OverflowMode::Wrap => {
                        // Low target bits of raw << diff; diff >= 64 clears
                        // all 64-bit words, so the wrapped value is zero.
                        FxpValue { word_bits, int_bits, raw: 0 }
                    }
                };
            }
            let shifted = (self.raw as i128) << diff as u32;
            Self::fit(shifted, word_bits, int_bits, mode)
        } else {
            let shift = (-diff).min(127) as u32;
            let rounded = shift_round_half_even(self.raw as i128, shift);
            Self::fit(rounded, word_bits, int_bits, mode)
        }
    }
}

/// `x >> shift` rounding to nearest, ties to even.
pub fn shift_round_half_even(x: i128, shift: u32) -> i128 {
    if shift == 0 {
        return x;
    }
    if shift >= 127 {
        // Magnitude below half of 2^127 rounds to 0; i128 can't exceed it.
        return 0;
    }
    let floor = x >> shift;
    let rem = x - (floor << shift);
    let half = 1i128 << (shift - 1);
    if rem > half || (rem == half && (floor & 1) == 1) {
        floor + 1
    } else {
        floor
    }
}

/// Keeps the low `bits` of `raw`, sign-extended.
fn wrap_to_bits(raw: i128, bits: u32) -> i128 {
    if bits >= 128 {
        return raw;
    }
    let mask = if bits == 128 { u128::MAX } else { (1u128 << bits) - 1 };
    let low = (raw as u128) & mask;
    let sign_bit = 1u128 << (bits - 1);
    if low & sign_bit != 0 {
        (low | !mask) as i128
    } else {
        low as i128
    }
}

/// Exact power of two as f64 for exponents far beyond `powi`'s comfortable
/// range (subnormals included).
fn exp2i(e: i64) -> f64 {
    if (-1022..=1023).contains(&e) {
        f64::from_bits(((e + 1023) as u64) << 52)
    } else if (-1074..-1022).contains(&e) {
        f64::from_bits(1u64 << (e + 1074) as u64)
    } else if e < 0 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Fixed-length array payload. The element type is carried explicitly so a
/// zero-length array still knows its type.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArrayValue {
    pub elem: WireType,
    pub items: Arc<Vec<Value>>,
}

impl PartialEq for ArrayValue {
    fn eq(&self, other: &Self) -> bool {
        self.elem == other.elem && self.items == other.items
    }
}

/// A runtime token. Equality is bitwise: two f64 payloads compare equal iff
/// their bit patterns are equal (so NaN == NaN and 0.0 != -0.0), which is
/// what the determinacy tests need.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Value {
    Bool(bool),
    Int32(i32),
    Float64(f64),
    Fxp(FxpValue),
    Array(ArrayValue),
    Cluster(Arc<Vec<Value>>),
}

impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Value::Bool(a), Value::Bool(b)) => a == b,
            (Value::Int32(a), Value::Int32(b)) => a == b,
            (Value::Float64(a), Value::Float64(b)) => a.to_bits() == b.to_bits(),
            (Value::Fxp(a), Value::Fxp(b)) => a == b,
            (Value::Array(a), Value::Array(b)) => a == b,
            (Value::Cluster(a), Value::Cluster(b)) => a == b,
            _ => false,
        }
    }
}

impl Eq for Value {}

impl Value {
    pub fn ty(&self) -> WireType {
        match self {
            Value::Bool(_) => WireType::Bool,
            Value::Int32(_) => WireType::Int32,
            Value::Float64(_) => WireType::Float64,
            Value::Fxp(v) => v.ty(),
            Value::Array(a) => WireType::array(a.elem.clone(), a.items.len()),
            Value::Cluster(fields) => WireType::Cluster(fields.iter().map(|v| v.ty()).collect()),
        }
    }

    pub fn array(elem: WireType, items: Vec<Value>) -> Value {
        Value::Array(ArrayValue { elem, items: Arc::new(items) })
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Value::Bool(b) => Some(*b),
            _ => None,
        }
    }

    pub fn as_i32(&self) -> Option<i32> {
        match self {
            Value::Int32(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Float64(v) => Some(*v),
            _ => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Bool(b) => write!(f, "{}", b),
            Value::Int32(v) => write!(f, "{}", v),
            Value::Float64(v) => write!(f, "{:?}", v),
            Value::Fxp(v) => write!(f, "{:?}:fxp<{},{}>", v.to_f64(), v.word_bits, v.int_bits),
            Value::Array(a) => {
                write!(f, "[")?;
                for (i, item) in a.items.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{}", item)?;
                }
                write!(f, "]")
            }
            Value::Cluster(fields) => {
                write!(f, "(")?;
                for (i, item) in fields.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{}", item)?;
                }
                write!(f, ")")
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Independent big-integer model of fixed-point narrowing used as the
    // oracle for the implementation above.
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

    #[test]
    fn fxp_add_saturates_at_max() {
        // 7.9375 + 0.0625 in fxp<8,4>: exact sum is 8.0 = raw 128, one past
        // the max raw 127, so saturating add returns 7.9375.
        let a = FxpValue::from_f64(7.9375, 8, 4, OverflowMode::Saturate);
        let b = FxpValue::from_f64(0.0625, 8, 4, OverflowMode::Saturate);
        assert_eq!(a.raw, 127);
        assert_eq!(b.raw, 1);
        let sum = a.raw as i128 + b.raw as i128;
        let fitted = FxpValue::fit(sum, 8, 4, OverflowMode::Saturate);
        assert_eq!(fitted.raw, 127);
        assert_eq!(fitted.to_f64(), 7.9375);
    }

    #[test]
    fn fxp_add_wraps_when_asked() {
        let sum = 128i128; // 8.0 in fxp<8,4> raw units
        let fitted = FxpValue::fit(sum, 8, 4, OverflowMode::Wrap);
        assert_eq!(fitted.raw as i128, oracle_fit(sum, 8, OverflowMode::Wrap));
        assert_eq!(fitted.raw, -128);
        assert_eq!(fitted.to_f64(), -8.0);
    }

    #[test]
    fn fxp_mul_is_exact_in_widened_type() {
        // fxp<8,4> x fxp<8,4> -> fxp<16,8>, no rounding possible.
        let a = FxpValue::from_f64(3.25, 8, 4, OverflowMode::Saturate);
        let b = FxpValue::from_f64(-1.5, 8, 4, OverflowMode::Saturate);
        let raw = a.raw as i128 * b.raw as i128;
        let prod = FxpValue::fit(raw, 16, 8, OverflowMode::Saturate);
        assert_eq!(prod.to_f64(), 3.25 * -1.5);
        // Oracle: every representable pair multiplies exactly.
        for ra in [-128i64, -1, 0, 1, 77, 127] {
            for rb in [-128i64, -3, 0, 2, 127] {
                let a = FxpValue { word_bits: 8, int_bits: 4, raw: ra };
                let b = FxpValue { word_bits: 8, int_bits: 4, raw: rb };
                let p = FxpValue::fit(ra as i128 * rb as i128, 16, 8, OverflowMode::Saturate);
                assert_eq!(p.to_f64(), a.to_f64() * b.to_f64());
            }
        }
    }

    #[test]
    fn fit_matches_oracle_on_sweep() {
        for w in [1u32, 4, 8, 16, 33, 64] {
            for raw in [-(1i128 << 70), -129, -128, -1, 0, 1, 127, 128, 1i128 << 70] {
                for mode in [OverflowMode::Saturate, OverflowMode::Wrap] {
                    let got = FxpValue::fit(raw, w, w.min(32) as i32, mode).raw as i128;
                    assert_eq!(got, oracle_fit(raw, w, mode), "raw={} w={} {:?}", raw, w, mode);
                }
            }
        }
    }

    #[test]
    fn convert_rounds_half_to_even() {
        // raw 6 in fxp<8,2> (frac 6) -> fxp<8,4> (frac 4): 6/4 = 1.5 -> 2 (even).
        let v = FxpValue { word_bits: 8, int_bits: 2, raw: 6 };
        assert_eq!(v.convert(8, 4, OverflowMode::Saturate).raw, 2);
        // raw 10 -> 10/4 = 2.5 -> 2 (even), not 3.
        let v = FxpValue { word_bits: 8, int_bits: 2, raw: 10 };
        assert_eq!(v.convert(8, 4, OverflowMode::Saturate).raw, 2);
        // raw 14 -> 3.5 -> 4.
        let v = FxpValue { word_bits: 8, int_bits: 2, raw: 14 };
        assert_eq!(v.convert(8, 4, OverflowMode::Saturate).raw, 4);
    }

    #[test]
    fn from_f64_handles_extremes() {
        assert_eq!(FxpValue::from_f64(f64::NAN, 8, 4, OverflowMode::Saturate).raw, 0);
        assert_eq!(FxpValue::from_f64(f64::INFINITY, 8, 4, OverflowMode::Saturate).raw, 127);
        assert_eq!(FxpValue::from_f64(-1e300, 8, 4, OverflowMode::Saturate).raw, -128);
    }

    #[test]
    fn from_f64_ties_to_even() {
        // 0.5 raw units exactly: rounds to even (0).
        assert_eq!(FxpValue::from_f64(0.03125, 8, 4, OverflowMode::Saturate).raw, 0);
        // 1.5 raw units: rounds to 2.
        assert_eq!(FxpValue::from_f64(0.09375, 8, 4, OverflowMode::Saturate).raw, 2);
    }

    #[test]
    fn value_equality_is_bitwise_for_floats() {
        assert_eq!(Value::Float64(f64::NAN), Value::Float64(f64::NAN));
        assert_ne!(Value::Float64(0.0), Value::Float64(-0.0));
    }

    #[test]
    fn zero_length_arrays_carry_their_type() {
        let v = Value::array(WireType::Float64, vec![]);
        assert_eq!(v.ty(), WireType::array(WireType::Float64, 0));
    }

    #[test]
    fn width_bits_compose() {
        let t = WireType::Cluster(vec![
            WireType::Bool,
            WireType::array(WireType::Int32, 3),
            WireType::fxp(16, 16).unwrap(),
        ]);
        assert_eq!(t.width_bits(), 1 + 96 + 16);
    }

    #[test]
    fn fxp_type_bounds() {
        assert!(WireType::fxp(0, 0).is_none());
        assert!(WireType::fxp(65, 0).is_none());
        assert!(WireType::fxp(8, 9).is_none());
        assert!(WireType::fxp(8, -65).is_none());
        assert!(WireType::fxp(64, 64).is_some());
        assert!(WireType::fxp(8, -4).is_some());
    }
}
