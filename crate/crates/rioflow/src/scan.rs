//! Scan engine and virtual analog I/O.
//!
//! The scan engine publishes a coherent snapshot of every configured I/O
//! channel into a global memory map once per scan period: all inputs are
//! read at the same instant, the snapshot is published atomically, then all
//! outputs are driven from the map within the same cycle. Engineering-unit
//! conversion is a linear map `eng = raw * gain + offset` with a
//! rounds-to-nearest, saturating inverse.
//!
//! [`VirtualAo`] models a DAC bound to a fabric clock: it consumes exactly
//! one sample from its buffer every `ticks_per_sample = round(f_clk / f_s)`
//! ticks, with zero jitter; on underrun it holds the previous sample and
//! logs the event.

use crate::ir::{DacDecl, ScanConfig, ScanDir};
use crate::value::{Value, WireType};
use serde::Serialize;
use std::collections::BTreeMap;
use std::collections::VecDeque;

/// Raw engineering-unit conversion: `eng = raw * gain + offset`.
pub fn eng_convert(raw: i32, gain: f64, offset: f64) -> f64 {
    raw as f64 * gain + offset
}

/// Inverse conversion: rounds to nearest and saturates to the signed code
/// range of `bits` (e.g. 16 for a 16-bit converter).
pub fn eng_invert(eng: f64, gain: f64, offset: f64, bits: u32) -> i32 {
    let max = ((1i64 << (bits - 1)) - 1) as f64;
    let min = (-(1i64 << (bits - 1))) as f64;
    if gain == 0.0 {
        return 0;
    }
    let raw = ((eng - offset) / gain).round_ties_even();
    raw.clamp(min, max) as i32
}

/// One coherent reading of every scan channel, stamped with the scan index.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanSnapshot {
    pub index: u64,
    pub values: BTreeMap<String, Value>,
    pub timestamp_us: u64,
}

/// The simulated physical side of the I/O: raw input codes driven by a
/// stimulus, and the raw output codes the engine last drove.
#[derive(Debug, Default)]
pub struct IoState {
    pub ai_raw: BTreeMap<String, i32>,
    pub ao_raw: BTreeMap<String, i32>,
}

/// Periodic scan engine. The host side reads the published map and stages
/// output values; `scan_tick` performs one full scan cycle.
#[derive(Debug)]
pub struct ScanEngine {
    pub cfg: ScanConfig,
    next_index: u64,
    published: BTreeMap<String, Value>,
    staged_out: BTreeMap<String, Value>,
    pub overruns: u64,
    pub snapshots: u64,
}

impl ScanEngine {
    pub fn new(cfg: ScanConfig) -> ScanEngine {
        let mut published = BTreeMap::new();
        for c in &cfg.channels {
            published.insert(c.name.clone(), c.ty.default_value());
        }
        ScanEngine {
            cfg,
            next_index: 0,
            published,
            staged_out: BTreeMap::new(),
            overruns: 0,
            snapshots: 0,
        }
    }

    /// Host-side read of the published map (last snapshot).
    pub fn host_read(&self, channel: &str) -> Option<Value> {
        self.published.get(channel).cloned()
    }

    /// Host-side write: staged into the map, driven out at the next scan.
    pub fn host_write(&mut self, channel: &str, v: Value) {
        self.staged_out.insert(channel.to_string(), v);
    }

    fn raw_to_value(ty: &WireType, raw: i32, gain: f64, offset: f64) -> Value {
        match ty {
            WireType::Float64 => Value::Float64(eng_convert(raw, gain, offset)),
            WireType::Int32 => Value::Int32(raw),
            WireType::Bool => Value::Bool(raw != 0),
            other => other.default_value(),
        }
    }

    fn value_to_raw(ty: &WireType, v: &Value, gain: f64, offset: f64) -> i32 {
        match (ty, v) {
            (WireType::Float64, Value::Float64(x)) => eng_invert(*x, gain, offset, 16),
            (WireType::Int32, Value::Int32(x)) => *x,
            (WireType::Bool, Value::Bool(b)) => *b as i32,
            _ => 0,
        }
    }

    /// One scan cycle: read every input channel from `io` at this instant,
    /// publish one snapshot, then drive every output channel from the map.
    /// The snapshot is coherent by construction: no value can originate
    /// from a different cycle.
    pub fn scan_tick(&mut self, io: &mut IoState) -> ScanSnapshot {
        let index = self.next_index;
        self.next_index += 1;
        self.snapshots += 1;

        let mut values = BTreeMap::new();
        for c in &self.cfg.channels {
            match c.dir {
                ScanDir::In => {
                    let raw = io.ai_raw.get(&c.name).copied().unwrap_or(0);
                    let v = Self::raw_to_value(&c.ty, raw, c.gain, c.offset);
                    values.insert(c.name.clone(), v);
                }
                ScanDir::Out => {
                    let v = self
                        .staged_out
                        .get(&c.name)
                        .cloned()
                        .unwrap_or_else(|| c.ty.default_value());
                    values.insert(c.name.clone(), v);
                }
            }
        }
        // Atomic publication: the host map flips to the new snapshot at once.
        self.published = values.clone();

        // Drive outputs from the freshly published map.
        for c in &self.cfg.channels {
            if c.dir == ScanDir::Out {
                let v = &values[&c.name];
                io.ao_raw.insert(c.name.clone(), Self::value_to_raw(&c.ty, v, c.gain, c.offset));
            }
        }

        ScanSnapshot { index, values, timestamp_us: index * self.cfg.period_us }
    }

    /// Records a scan cycle that could not run on time.
    pub fn record_overrun(&mut self) {
        self.overruns += 1;
    }
}

/// A simulated DAC bound to a fabric clock.
#[derive(Debug)]
pub struct VirtualAo {
    pub decl: DacDecl,
    pub clock_hz: u64,
    pub ticks_per_sample: u64,
    buffer: VecDeque<i32>,
    capacity: usize,
    last_code: i32,
    reserved: u64,
    pub underruns: u64,
    /// Emission log: (clock tick, 16-bit code).
    pub emitted: Vec<(u64, i16)>,
}

impl VirtualAo {
    pub fn new(decl: DacDecl, clock_hz: u64) -> VirtualAo {
        let tps = ((clock_hz as f64) / (decl.sample_rate_hz as f64)).round().max(1.0) as u64;
        let capacity = decl.buffer.max(1);
        VirtualAo {
            decl,
            clock_hz,
            ticks_per_sample: tps,
            buffer: VecDeque::new(),
            capacity,
            last_code: 0,
            reserved: 0,
            underruns: 0,
            emitted: Vec::new(),
        }
    }

    pub fn has_space(&self) -> bool {
        (self.buffer.len() + self.reserved as usize) < self.capacity
    }

    /// Reserve + commit mirror the channel write protocol so a fabric write
    /// can report its accepted flag during evaluation and land during latch.
    pub fn reserve(&mut self) -> bool {
        if self.has_space() {
            self.reserved += 1;
            true
        } else {
            false
        }
    }

    pub fn commit(&mut self, code: i32) {
        debug_assert!(self.reserved > 0);
        self.reserved -= 1;
        self.buffer.push_back(code);
    }

    pub fn push(&mut self, code: i32) -> bool {
        if self.buffer.len() < self.capacity {
            self.buffer.push_back(code);
            true
        } else {
            false
        }
    }

    /// Emission tick check: fires at clock ticks `k * ticks_per_sample` for
    /// k >= 1, giving exactly `ticks_per_sample` between emissions. An empty
    /// buffer holds the previous sample and logs an underrun.
    pub fn emit(&mut self, clock_tick: u64) -> Option<i16> {
        if clock_tick == 0 || !clock_tick.is_multiple_of(self.ticks_per_sample) {
            return None;
        }
        let code = match self.buffer.pop_front() {
            Some(c) => c,
            None => {
                self.underruns += 1;
                self.last_code
            }
        };
        self.last_code = code;
        let q = code.clamp(i16::MIN as i32, i16::MAX as i32) as i16;
        self.emitted.push((clock_tick, q));
        Some(q)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::ScanChannel;

    fn cfg(channels: Vec<ScanChannel>) -> ScanConfig {
        ScanConfig { period_us: 1000, channels }
    }

    fn ai(name: &str, gain: f64, offset: f64) -> ScanChannel {
        ScanChannel {
            name: name.into(),
            dir: ScanDir::In,
            ty: WireType::Float64,
            gain,
            offset,
        }
    }

    #[test]
    fn eng_convert_basics() {
        assert_eq!(eng_convert(0, 1.0, 0.0), 0.0);
        // 16-bit full scale at 10 V range.
        let v = eng_convert(32767, 10.0 / 32768.0, 0.0);
        assert!((v - 9.99969482421875).abs() < 1e-12, "{}", v);
    }

    #[test]
    fn eng_invert_round_trips_all_16_bit_codes() {
        // Exhaustive 65536-case check with offset 0 and gain > 0.
        let gain = 10.0 / 32768.0;
        for r in i16::MIN as i32..=i16::MAX as i32 {
            let eng = eng_convert(r, gain, 0.0);
            assert_eq!(eng_invert(eng, gain, 0.0, 16), r);
        }
    }

    #[test]
    fn eng_invert_saturates() {
        assert_eq!(eng_invert(1e9, 1.0, 0.0, 16), 32767);
        assert_eq!(eng_invert(-1e9, 1.0, 0.0, 16), -32768);
    }

    #[test]
    fn snapshots_are_coherent_and_indices_consecutive() {
        // Two inputs ramp in lockstep with the tick; a snapshot must never
        // mix codes from different instants.
        let mut eng = ScanEngine::new(cfg(vec![ai("a", 1.0, 0.0), ai("b", 1.0, 0.0)]));
        let mut io = IoState::default();
        let mut last_index = None;
        for t in 0..100i32 {
            io.ai_raw.insert("a".into(), t);
            io.ai_raw.insert("b".into(), 1000 + t);
            let snap = eng.scan_tick(&mut io);
            let a = snap.values["a"].as_f64().unwrap() as i32;
            let b = snap.values["b"].as_f64().unwrap() as i32;
            assert_eq!(b - a, 1000, "mixed-cycle snapshot");
            if let Some(prev) = last_index {
                assert_eq!(snap.index, prev + 1);
            }
            last_index = Some(snap.index);
        }
    }

    #[test]
    fn zero_channel_scan_still_counts() {
        let mut eng = ScanEngine::new(cfg(vec![]));
        let mut io = IoState::default();
        let s0 = eng.scan_tick(&mut io);
        let s1 = eng.scan_tick(&mut io);
        assert!(s0.values.is_empty());
        assert_eq!((s0.index, s1.index), (0, 1));
    }

    #[test]
    fn outputs_drive_after_publication() {
        let mut eng = ScanEngine::new(cfg(vec![ScanChannel {
            name: "ao0".into(),
            dir: ScanDir::Out,
            ty: WireType::Float64,
            gain: 1.0,
            offset: 0.0,
        }]));
        let mut io = IoState::default();
        eng.host_write("ao0", Value::Float64(42.0));
        let snap = eng.scan_tick(&mut io);
        assert_eq!(snap.values["ao0"], Value::Float64(42.0));
        assert_eq!(io.ao_raw["ao0"], 42);
    }

    fn dac(rate: u64, buffer: usize) -> DacDecl {
        DacDecl { name: "aout".into(), sample_rate_hz: rate, clock: "fck".into(), buffer }
    }

    #[test]
    fn ticks_per_sample_follows_the_rounding_rule() {
        assert_eq!(VirtualAo::new(dac(44100, 8), 40_000_000).ticks_per_sample, 907);
        assert_eq!(VirtualAo::new(dac(44100, 8), 1_000_000).ticks_per_sample, 23);
        assert_eq!(VirtualAo::new(dac(44100, 8), 44100).ticks_per_sample, 1);
    }

    #[test]
    fn emissions_have_exactly_zero_jitter() {
        let mut ao = VirtualAo::new(dac(44100, 64), 1_000_000);
        let mut next = 0i32;
        for t in 0..=23 * 100u64 {
            while ao.has_space() {
                ao.push(next);
                next += 1;
            }
            ao.emit(t);
        }
        assert_eq!(ao.emitted.len(), 100);
        for w in ao.emitted.windows(2) {
            assert_eq!(w[1].0 - w[0].0, 23);
        }
        assert_eq!(ao.underruns, 0);
        // Values drain in order.
        for (k, (_, code)) in ao.emitted.iter().enumerate() {
            assert_eq!(*code as i32, k as i32);
        }
    }

    #[test]
    fn underrun_holds_last_sample() {
        let mut ao = VirtualAo::new(dac(44100, 4), 44100);
        ao.push(5);
        assert_eq!(ao.emit(1), Some(5));
        // Buffer now empty: next emission holds 5 and logs an underrun.
        assert_eq!(ao.emit(2), Some(5));
        assert_eq!(ao.underruns, 1);
    }
}
