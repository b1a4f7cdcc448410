//! Bundled wireless-music-system demo: PCM file in, 3-band equalizer on the
//! host, DMA FIFO across the boundary, a single-cycle loop pumping samples
//! into a 44.1 kHz DAC model, PCM file out.

use crate::cosim::{Cosim, CosimInputs, CosimSummary};
use crate::diag::{Error, ErrorCode, Result};
use crate::elaborate::{elaborate, DepthTable};
use crate::fabric::sim::TickSink;
use crate::host::{BiquadCoeffs, BiquadState, ExecConfig};
use crate::ir::Project;
use crate::value::Value;
use serde::Serialize;
use std::collections::BTreeMap;
use std::sync::Arc;

/// The bundled demo project source.
pub const WMS_PROJECT: &str = include_str!("../projects/wms.gtext");

/// Demo band coefficients, identical to the literals in the project file.
pub fn band_coeffs() -> [BiquadCoeffs; 3] {
    [
        BiquadCoeffs {
            b0: 0.0004432730224944949,
            b1: 0.0008865460449889898,
            b2: 0.0004432730224944949,
            a1: -1.9395702073516703,
            a2: 0.9413432994416484,
        },
        BiquadCoeffs {
            b0: 0.16090296343040275,
            b1: 0.0,
            b2: -0.16090296343040275,
            a1: -1.6628875708421709,
            a2: 0.6781940731391944,
        },
        BiquadCoeffs {
            b0: 0.7385387093993099,
            b1: -1.4770774187986198,
            b2: 0.7385387093993099,
            a1: -1.4075053439151433,
            a2: 0.5466494936820964,
        },
    ]
}

/// Double-precision reference of the whole host pipeline: the three band
/// filters run as direct-form-I difference equations (independent of the
/// engine's transposed implementation), scaled, summed, and quantized to
/// 16-bit codes exactly like the project's Convert node.
pub fn oracle_codes(input: &[f64], gains: [f64; 3]) -> Vec<i16> {
    struct Df1 {
        c: BiquadCoeffs,
        x1: f64,
        x2: f64,
        y1: f64,
        y2: f64,
    }
    impl Df1 {
        fn step(&mut self, xn: f64) -> f64 {
            let yn = self.c.b0 * xn + self.c.b1 * self.x1 + self.c.b2 * self.x2
                - self.c.a1 * self.y1
                - self.c.a2 * self.y2;
            self.x2 = self.x1;
            self.x1 = xn;
            self.y2 = self.y1;
            self.y1 = yn;
            yn
        }
    }
    let mut bands: Vec<Df1> = band_coeffs()
        .into_iter()
        .map(|c| Df1 { c, x1: 0.0, x2: 0.0, y1: 0.0, y2: 0.0 })
        .collect();
    input
        .iter()
        .map(|&xn| {
            let mix: f64 = bands
                .iter_mut()
                .zip(gains)
                .map(|(b, g)| b.step(xn) * g)
                .sum();
            quantize16(mix)
        })
        .collect()
}

/// 16-bit quantization used at the FIFO boundary: scale by 32768, round to
/// nearest (ties to even), saturate.
pub fn quantize16(x: f64) -> i16 {
    let scaled = (x * 32768.0).round_ties_even();
    scaled.clamp(i16::MIN as f64, i16::MAX as f64) as i16
}

/// Alternative reference path using the engine's own biquad kernel
/// (transposed form); used to cross-check the two filter routes.
pub fn reference_codes_df2t(input: &[f64], gains: [f64; 3]) -> Vec<i16> {
    let coeffs = band_coeffs();
    let mut states = [BiquadState::default(); 3];
    let mut bands: Vec<Vec<f64>> = Vec::new();
    for (c, st) in coeffs.iter().zip(states.iter_mut()) {
        bands.push(crate::host::biquad(input, c, st));
    }
    (0..input.len())
        .map(|i| {
            let mix = bands[0][i] * gains[0] + bands[1][i] * gains[1] + bands[2][i] * gains[2];
            quantize16(mix)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct DemoOptions {
    /// Normalized input samples (code / 32768).
    pub input: Vec<f64>,
    pub gains: [f64; 3],
    /// Output sample budget; defaults to the input length.
    pub samples: Option<usize>,
    pub seed: u64,
    pub clock_overrides: BTreeMap<String, u64>,
    /// Exit-with-error threshold on DAC underruns.
    pub underrun_limit: u64,
}

impl Default for DemoOptions {
    fn default() -> Self {
        DemoOptions {
            input: Vec::new(),
            gains: [1.0, 1.0, 1.0],
            samples: None,
            seed: 0,
            clock_overrides: BTreeMap::new(),
            underrun_limit: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DemoReport {
    pub samples_in: usize,
    pub samples_emitted: usize,
    pub ticks: u64,
    pub fabric_clock_hz: u64,
    pub ticks_per_sample: u64,
    /// True iff every emission-tick delta equals `ticks_per_sample`.
    pub zero_jitter: bool,
    pub underruns: u64,
    pub overflow_drops: u64,
    pub host_sent: Option<String>,
    pub summary: CosimSummary,
}

pub struct DemoRun {
    pub report: DemoReport,
    /// Emitted DAC codes, in order.
    pub output: Vec<i16>,
    /// (clock tick, code) emission log.
    pub emissions: Vec<(u64, i16)>,
}

/// Parses the bundled project with optional clock overrides applied.
pub fn demo_project(clock_overrides: &BTreeMap<String, u64>) -> Result<Project> {
    let mut p = crate::gtext::parse(WMS_PROJECT, "wms.gtext").map_err(Error::Check)?;
    for (name, hz) in clock_overrides {
        p.clocks.insert(name.clone(), *hz);
    }
    Ok(p)
}

/// Runs the demo pipeline end to end, streaming trace records into `sink`.
pub fn run_demo(opts: &DemoOptions, sink: &mut dyn TickSink) -> Result<DemoRun> {
    let project = demo_project(&opts.clock_overrides)?;
    let n = opts.samples.unwrap_or(opts.input.len()).min(opts.input.len());
    let input: Vec<f64> = opts.input[..n].to_vec();

    let dac = project
        .dacs
        .first()
        .ok_or_else(|| Error::fault(ErrorCode::Type, "demo project declares no dac"))?
        .clone();
    let clock_hz = crate::elaborate::resolve_clock(&project, &dac.clock);
    let tps = ((clock_hz as f64) / (dac.sample_rate_hz as f64)).round().max(1.0) as u64;
    // Emissions happen at clock ticks k * tps for k = 1..=n.
    let ticks = tps * (n as u64 + 1);

    let mut pcm_lens = BTreeMap::new();
    pcm_lens.insert("music".to_string(), n);
    let elab = elaborate(&project, &BTreeMap::new(), &pcm_lens)?;

    let mut controls = BTreeMap::new();
    controls.insert("g_low".to_string(), Value::Float64(opts.gains[0]));
    controls.insert("g_mid".to_string(), Value::Float64(opts.gains[1]));
    controls.insert("g_high".to_string(), Value::Float64(opts.gains[2]));
    controls.insert("tps_in".to_string(), Value::Int32(tps as i32));
    let mut pcm = BTreeMap::new();
    pcm.insert("music".to_string(), Arc::new(input.clone()));

    let cfg = ExecConfig {
        seed: opts.seed,
        max_firings: 100_000_000,
        trace: false,
        sctl_iters: ticks,
    };
    let inputs = CosimInputs { controls, pcm, ..Default::default() };
    let mut cosim =
        Cosim::new(&project, &elab, &DepthTable::new(), &BTreeMap::new(), inputs, cfg)?;
    let summary = cosim.run(ticks, sink)?;

    let ao = cosim.engine.aos.get("aout").expect("demo dac");
    let emissions = ao.emitted.clone();
    let output: Vec<i16> = emissions.iter().map(|(_, c)| *c).collect();
    let zero_jitter = emissions.windows(2).all(|w| w[1].0 - w[0].0 == tps);

    let report = DemoReport {
        samples_in: n,
        samples_emitted: output.len(),
        ticks,
        fabric_clock_hz: clock_hz,
        ticks_per_sample: tps,
        zero_jitter,
        underruns: summary.underruns,
        overflow_drops: summary.overflows,
        host_sent: summary.host_outputs.as_ref().and_then(|o| o.get("sent").cloned()),
        summary,
    };
    Ok(DemoRun { report, output, emissions })
}

/// Generates a sine test signal as normalized samples.
pub fn sine(freq_hz: f64, sample_rate_hz: f64, amplitude: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| amplitude * (2.0 * std::f64::consts::PI * freq_hz * k as f64 / sample_rate_hz).sin())
        .collect()
}
