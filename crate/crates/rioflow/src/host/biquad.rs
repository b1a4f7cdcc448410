//! Second-order IIR section in direct form II transposed.

/// Normalized coefficients (a0 = 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiquadCoeffs {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

/// The two delay elements of one section.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BiquadState {
    pub s1: f64,
    pub s2: f64,
}

/// Filters `x` through one biquad section, updating `state` in place:
///
/// ```text
/// y[n]  = b0*x[n] + s1
/// s1'   = b1*x[n] - a1*y[n] + s2
/// s2'   = b2*x[n] - a2*y[n]
/// ```
pub fn biquad(x: &[f64], c: &BiquadCoeffs, state: &mut BiquadState) -> Vec<f64> {
    let mut y = Vec::with_capacity(x.len());
    for &xn in x {
        let yn = c.b0 * xn + state.s1;
        state.s1 = c.b1 * xn - c.a1 * yn + state.s2;
        state.s2 = c.b2 * xn - c.a2 * yn;
        y.push(yn);
    }
    y
}

/// One sample through a section (used by streaming callers).
pub fn biquad_step(xn: f64, c: &BiquadCoeffs, state: &mut BiquadState) -> f64 {
    let yn = c.b0 * xn + state.s1;
    state.s1 = c.b1 * xn - c.a1 * yn + state.s2;
    state.s2 = c.b2 * xn - c.a2 * yn;
    yn
}
