//! Audio to event rasters: a bank of second-order band-pass sections on a
//! geometric frequency grid, full-wave rectification, a one-pole smoother,
//! and linear 4-bit quantization of the per-bin mean.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{EventRaster, FRONTEND_EVENT_CAP};

/// Minimum accepted audio sample rate.
pub const MIN_SAMPLE_RATE: u32 = 16_000;

/// Highest design frequency as a fraction of the sample rate. A band-pass
/// section centred on Nyquist has no passband.
const MAX_DESIGN_FRACTION: f64 = 0.45;

/// Reference amplitude that maps to the event cap.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FullScale {
    /// Per channel: a 0 dBFS tone at the channel centre saturates the channel
    /// in steady state.
    ToneCalibrated,
    /// One smoothed-amplitude value shared by all channels.
    Fixed(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterBankSpec {
    pub n_channels: usize,
    pub f_lo: f64,
    pub f_hi: f64,
    pub sample_rate: u32,
    /// Output bin width, seconds.
    pub bin_dt: f64,
    pub max_events_per_bin: u32,
    /// Time constant of the envelope smoother, seconds.
    pub smoothing_tau: f64,
    pub full_scale: FullScale,
}

impl Default for FilterBankSpec {
    fn default() -> Self {
        Self {
            n_channels: 16,
            f_lo: 50.0,
            f_hi: 8000.0,
            sample_rate: 32_000,
            bin_dt: 1e-3,
            max_events_per_bin: FRONTEND_EVENT_CAP,
            smoothing_tau: 2e-3,
            full_scale: FullScale::ToneCalibrated,
        }
    }
}

impl FilterBankSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_channels < 2 {
            return Err(Error::invalid("filter bank needs at least two channels"));
        }
        if !(self.f_lo > 0.0 && self.f_lo < self.f_hi) {
            return Err(Error::invalid(format!(
                "need 0 < f_lo < f_hi, got f_lo={} f_hi={}",
                self.f_lo, self.f_hi
            )));
        }
        if self.sample_rate < MIN_SAMPLE_RATE {
            return Err(Error::invalid(format!(
                "sample rate {} Hz is below the {MIN_SAMPLE_RATE} Hz minimum",
                self.sample_rate
            )));
        }
        if f64::from(self.sample_rate) < 2.0 * self.f_hi {
            return Err(Error::invalid(format!(
                "sample rate {} Hz must be at least 2·f_hi = {} Hz (Nyquist)",
                self.sample_rate,
                2.0 * self.f_hi
            )));
        }
        if !(self.bin_dt > 0.0 && self.bin_dt * f64::from(self.sample_rate) >= 1.0) {
            return Err(Error::invalid(format!("bin_dt = {} is shorter than one sample", self.bin_dt)));
        }
        if !(1..=FRONTEND_EVENT_CAP).contains(&self.max_events_per_bin) {
            return Err(Error::invalid(format!(
                "max_events_per_bin must be in 1..={FRONTEND_EVENT_CAP}, got {}",
                self.max_events_per_bin
            )));
        }
        if !(self.smoothing_tau > 0.0 && self.smoothing_tau.is_finite()) {
            return Err(Error::invalid("smoothing_tau must be positive"));
        }
        if let FullScale::Fixed(v) = self.full_scale {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("full-scale reference {v} must be positive")));
            }
        }
        Ok(())
    }

    /// Geometric channel centres from `f_lo` to `f_hi`.
    pub fn centers(&self) -> Vec<f64> {
        let n = self.n_channels;
        let ratio = self.f_hi / self.f_lo;
        (0..n)
            .map(|i| match i {
                0 => self.f_lo,
                _ if i == n - 1 => self.f_hi,
                _ => self.f_lo * ratio.powf(i as f64 / (n - 1) as f64),
            })
            .collect()
    }

    fn samples_per_bin(&self) -> f64 {
        self.bin_dt * f64::from(self.sample_rate)
    }
}

/// Biquad in transposed direct form II.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Biquad {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Biquad {
    /// Band-pass with unit gain at `f0` (bilinear transform, pre-warped).
    pub fn bandpass(f0: f64, q: f64, fs: f64) -> Self {
        let w0 = 2.0 * std::f64::consts::PI * f0 / fs;
        let alpha = w0.sin() / (2.0 * q);
        let a0 = 1.0 + alpha;
        Self {
            b0: alpha / a0,
            b1: 0.0,
            b2: -alpha / a0,
            a1: -2.0 * w0.cos() / a0,
            a2: (1.0 - alpha) / a0,
        }
    }

    pub fn filter(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.reserve(x.len());
        let (mut z1, mut z2) = (0.0, 0.0);
        for &xn in x {
            let y = self.b0 * xn + z1;
            z1 = self.b1 * xn - self.a1 * y + z2;
            z2 = self.b2 * xn - self.a2 * y;
            out.push(y);
        }
    }
}

#[derive(Clone, Debug)]
pub struct FilterBank {
    pub spec: FilterBankSpec,
    pub centers: Vec<f64>,
    /// Frequencies the sections are actually tuned to (centres capped below
    /// Nyquist).
    pub design_freqs: Vec<f64>,
    pub q: Vec<f64>,
    pub sections: Vec<Biquad>,
    /// Smoothed amplitude that maps to `max_events_per_bin`, per channel.
    pub full_scale: Vec<f64>,
}

/// Designs the band-pass bank and calibrates its full-scale references.
pub fn design_filterbank(spec: &FilterBankSpec) -> Result<FilterBank> {
    spec.validate()?;
    let fs = f64::from(spec.sample_rate);
    let centers = spec.centers();
    // Band edges sit at geometric midpoints between neighbouring centres; the
    // grid is uniform in log frequency so every channel has the same Q.
    let ratio = (spec.f_hi / spec.f_lo).powf(1.0 / (spec.n_channels - 1) as f64);
    let half = ratio.sqrt();
    let q_all = 1.0 / (half - 1.0 / half);
    let design_freqs: Vec<f64> = centers.iter().map(|&f| f.min(MAX_DESIGN_FRACTION * fs)).collect();
    let sections: Vec<Biquad> = design_freqs.iter().map(|&f| Biquad::bandpass(f, q_all, fs)).collect();
    let mut bank = FilterBank {
        spec: spec.clone(),
        centers,
        design_freqs,
        q: vec![q_all; spec.n_channels],
        sections,
        full_scale: Vec::new(),
    };
    bank.full_scale = match spec.full_scale {
        FullScale::Fixed(v) => vec![v; spec.n_channels],
        FullScale::ToneCalibrated => (0..spec.n_channels).map(|c| bank.calibrate(c)).collect(),
    };
    Ok(bank)
}

/// Convenience wrapper: design the bank for `spec` and encode `audio`.
pub fn encode_events(audio: &[f64], spec: &FilterBankSpec) -> Result<EventRaster> {
    design_filterbank(spec)?.encode(audio)
}

const CALIBRATION_PHASES: usize = 64;
const CALIBRATION_SETTLE: f64 = 0.15;
const CALIBRATION_MEASURE: f64 = 0.1;
const CALIBRATION_MARGIN: f64 = 0.95;

impl FilterBank {
    pub fn n_channels(&self) -> usize {
        self.sections.len()
    }

    /// Lowest steady-state bin mean of a unit tone at the channel centre, over
    /// a sweep of starting phases, less a small margin.
    fn calibrate(&self, channel: usize) -> f64 {
        let fs = f64::from(self.spec.sample_rate);
        let f = self.design_freqs[channel];
        let n = ((CALIBRATION_SETTLE + CALIBRATION_MEASURE) * fs) as usize;
        let first_bin = (CALIBRATION_SETTLE / self.spec.bin_dt).ceil() as usize;
        let mut lowest = f64::INFINITY;
        let mut tone = vec![0.0; n];
        for p in 0..CALIBRATION_PHASES {
            let phase = 2.0 * std::f64::consts::PI * p as f64 / CALIBRATION_PHASES as f64;
            for (i, s) in tone.iter_mut().enumerate() {
                *s = (2.0 * std::f64::consts::PI * f * i as f64 / fs + phase).sin();
            }
            let means = self.bin_means(channel, &tone);
            if let Some(m) = means[first_bin.min(means.len())..].iter().copied().reduce(f64::min) {
                lowest = lowest.min(m);
            }
        }
        lowest * CALIBRATION_MARGIN
    }

    /// Filter → rectify → smooth → mean per bin, for one channel.
    pub fn bin_means(&self, channel: usize, audio: &[f64]) -> Vec<f64> {
        let mut filtered = Vec::new();
        self.sections[channel].filter(audio, &mut filtered);
        let fs = f64::from(self.spec.sample_rate);
        let k = 1.0 - (-1.0 / (fs * self.spec.smoothing_tau)).exp();
        let mut y = 0.0;
        for s in filtered.iter_mut() {
            y += k * (s.abs() - y);
            *s = y;
        }
        let spb = self.spec.samples_per_bin();
        let n_bins = (audio.len() as f64 / spb).floor() as usize;
        (0..n_bins)
            .map(|b| {
                let lo = (b as f64 * spb).round() as usize;
                let hi = (((b + 1) as f64 * spb).round() as usize).min(filtered.len());
                let seg = &filtered[lo..hi];
                seg.iter().sum::<f64>() / seg.len().max(1) as f64
            })
            .collect()
    }

    pub fn encode(&self, audio: &[f64]) -> Result<EventRaster> {
        if audio.is_empty() {
            return Err(Error::invalid("audio is empty"));
        }
        if let Some(i) = audio.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFinite(format!("audio sample {i}")));
        }
        let spb = self.spec.samples_per_bin();
        let n_bins = (audio.len() as f64 / spb).floor() as usize;
        if n_bins == 0 {
            return Err(Error::invalid(format!(
                "audio of {} samples is shorter than one {}-sample bin",
                audio.len(),
                spb
            )));
        }
        let cap = self.spec.max_events_per_bin;
        let mut raster = EventRaster::zeros(n_bins, self.n_channels(), self.spec.bin_dt);
        for c in 0..self.n_channels() {
            let gain = f64::from(cap) / self.full_scale[c];
            for (b, m) in self.bin_means(c, audio).into_iter().enumerate() {
                let level = (m * gain).floor();
                raster.set(b, c, level.clamp(0.0, f64::from(cap)) as u32);
            }
        }
        Ok(raster)
    }
}

/// Reads a mono 16-bit PCM WAV file as samples in `[-1, 1)`.
pub fn read_wav(path: impl AsRef<Path>) -> Result<(Vec<f64>, u32)> {
    let path = path.as_ref();
    let fmt_err = |msg: String| Error::Format {
        path: path.into(),
        msg,
    };
    let mut reader = hound::WavReader::open(path).map_err(|e| fmt_err(e.to_string()))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(fmt_err(format!("expected mono audio, found {} channels", spec.channels)));
    }
    if spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(fmt_err(format!(
            "expected 16-bit integer PCM, found {}-bit {:?}",
            spec.bits_per_sample, spec.sample_format
        )));
    }
    if spec.sample_rate < MIN_SAMPLE_RATE {
        return Err(fmt_err(format!(
            "sample rate {} Hz is below the {MIN_SAMPLE_RATE} Hz minimum",
            spec.sample_rate
        )));
    }
    let samples = reader
        .samples::<i16>()
        .map(|s| s.map(|v| f64::from(v) / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| fmt_err(e.to_string()))?;
    Ok((samples, spec.sample_rate))
}

/// Writes samples as mono 16-bit PCM, clipping to full scale.
pub fn write_wav(path: impl AsRef<Path>, samples: &[f64], sample_rate: u32) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let io = |e: hound::Error| Error::Format {
        path: path.into(),
        msg: e.to_string(),
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(io)?;
    for &s in samples {
        w.write_sample((s.clamp(-1.0, 1.0) * 32767.0).round() as i16).map_err(io)?;
    }
    w.finalize().map_err(io)
}
