//! Time-binned event counts, the signal representation shared by every stage.
//!
//! Text format (one header line, then one line per timestep):
//!
//! ```text
//! raster v1 dt=0.001 channels=3
//! 0 2 15
//! 1 0 0
//! ```

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Cap on events per bin produced by the audio front end.
pub const FRONTEND_EVENT_CAP: u32 = 15;
/// Cap on spikes per step produced by a hardware neuron.
pub const NEURON_SPIKE_CAP: u32 = 31;

#[derive(Clone, Debug, PartialEq)]
pub struct EventRaster {
    timesteps: usize,
    channels: usize,
    dt: f64,
    counts: Vec<u32>,
}

impl EventRaster {
    pub fn zeros(timesteps: usize, channels: usize, dt: f64) -> Self {
        Self {
            timesteps,
            channels,
            dt,
            counts: vec![0; timesteps * channels],
        }
    }

    /// Builds a raster from row-major counts.
    pub fn from_counts(timesteps: usize, channels: usize, dt: f64, counts: Vec<u32>) -> Result<Self> {
        crate::error::check_len("raster counts", timesteps * channels, counts.len())?;
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::invalid(format!("raster dt must be positive, got {dt}")));
        }
        Ok(Self {
            timesteps,
            channels,
            dt,
            counts,
        })
    }

    pub fn from_rows(rows: &[Vec<u32>], dt: f64) -> Result<Self> {
        let channels = rows.first().map_or(0, Vec::len);
        let mut counts = Vec::with_capacity(rows.len() * channels);
        for row in rows {
            crate::error::check_len("raster row", channels, row.len())?;
            counts.extend_from_slice(row);
        }
        Self::from_counts(rows.len(), channels, dt, counts)
    }

    pub fn timesteps(&self) -> usize {
        self.timesteps
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn get(&self, t: usize, c: usize) -> u32 {
        self.counts[t * self.channels + c]
    }

    pub fn set(&mut self, t: usize, c: usize, value: u32) {
        self.counts[t * self.channels + c] = value;
    }

    pub fn row(&self, t: usize) -> &[u32] {
        &self.counts[t * self.channels..(t + 1) * self.channels]
    }

    pub fn row_mut(&mut self, t: usize) -> &mut [u32] {
        &mut self.counts[t * self.channels..(t + 1) * self.channels]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u32]> {
        // chunks_exact panics on a zero chunk size
        self.counts.chunks_exact(self.channels.max(1)).take(self.timesteps)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| u64::from(c)).sum()
    }

    pub fn channel_totals(&self) -> Vec<u64> {
        let mut totals = vec![0u64; self.channels];
        for row in self.rows() {
            for (acc, &c) in totals.iter_mut().zip(row) {
                *acc += u64::from(c);
            }
        }
        totals
    }

    /// First timestep with a nonzero count in `channel`.
    pub fn first_event(&self, channel: usize) -> Option<usize> {
        (0..self.timesteps).find(|&t| self.get(t, channel) > 0)
    }

    pub fn max_count(&self) -> u32 {
        self.counts.iter().copied().max().unwrap_or(0)
    }

    /// Rejects rasters with any count above `cap`.
    pub fn check_cap(&self, cap: u32) -> Result<()> {
        match self.counts.iter().position(|&c| c > cap) {
            None => Ok(()),
            Some(i) => Err(Error::invalid(format!(
                "raster count {} at step {} channel {} exceeds cap {cap}",
                self.counts[i],
                i / self.channels,
                i % self.channels
            ))),
        }
    }

    /// Appends `other` after the last timestep of `self`.
    pub fn concat(&self, other: &EventRaster) -> Result<EventRaster> {
        crate::error::check_len("raster concat channels", self.channels, other.channels)?;
        let mut counts = self.counts.clone();
        counts.extend_from_slice(&other.counts);
        EventRaster::from_counts(self.timesteps + other.timesteps, self.channels, self.dt, counts)
    }

    /// Returns a copy with `extra` all-zero timesteps appended.
    pub fn padded(&self, extra: usize) -> EventRaster {
        let mut counts = self.counts.clone();
        counts.resize(counts.len() + extra * self.channels, 0);
        EventRaster {
            timesteps: self.timesteps + extra,
            channels: self.channels,
            dt: self.dt,
            counts,
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.counts.len() * 3 + 64);
        let _ = writeln!(out, "raster v1 dt={} channels={}", self.dt, self.channels);
        for row in self.rows() {
            let mut first = true;
            for c in row {
                if !first {
                    out.push(' ');
                }
                first = false;
                let _ = write!(out, "{c}");
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        text.parse()
    }
}

impl FromStr for EventRaster {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            msg: "empty raster document".into(),
        })?;
        let perr = |line: usize, msg: String| Error::Parse { line: line + 1, msg };

        let mut fields = header.split_whitespace();
        if fields.next() != Some("raster") || fields.next() != Some("v1") {
            return Err(perr(0, format!("expected `raster v1` header, got `{header}`")));
        }
        let mut dt = None;
        let mut channels = None;
        for field in fields {
            let (key, value) = field
                .split_once('=')
                .ok_or_else(|| perr(0, format!("malformed header field `{field}`")))?;
            match key {
                "dt" => dt = Some(value.parse::<f64>().map_err(|e| perr(0, e.to_string()))?),
                "channels" => {
                    channels = Some(value.parse::<usize>().map_err(|e| perr(0, e.to_string()))?)
                }
                _ => return Err(perr(0, format!("unknown header field `{key}`"))),
            }
        }
        let dt = dt.ok_or_else(|| perr(0, "header is missing dt".into()))?;
        let channels = channels.ok_or_else(|| perr(0, "header is missing channels".into()))?;

        let mut counts = Vec::new();
        let mut timesteps = 0;
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let before = counts.len();
            for tok in line.split_whitespace() {
                counts.push(tok.parse::<u32>().map_err(|e| perr(i, format!("`{tok}`: {e}")))?);
            }
            if counts.len() - before != channels {
                return Err(perr(
                    i,
                    format!("expected {channels} counts, found {}", counts.len() - before),
                ));
            }
            timesteps += 1;
        }
        EventRaster::from_counts(timesteps, channels, dt, counts)
    }
}
