//! Gridded meteorological fields and the `MVGR` binary container.
//!
//! Layout: magic `MVGR`; `T, C, H, W` as little-endian `u32`; a `u32`
//! byte length followed by UTF-8 JSON metadata (variable names, grid spec,
//! timestamps); then `T·C·H·W` little-endian `f32` values in `[t][c][h][w]`
//! order.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::data::time::Timestamp;
use crate::error::{MvarError, Result};
use crate::numerics::DenseMatrix;

pub const MVGR_MAGIC: &[u8; 4] = b"MVGR";

/// Upper-air T/U/V/Q at 1000/925/850 hPa followed by the seven surface fields.
pub const STANDARD_VARIABLES: [&str; 19] = [
    "t1000", "t925", "t850", "u1000", "u925", "u850", "v1000", "v925", "v850", "q1000", "q925", "q850",
    "t2m", "d2m", "u10", "v10", "u100", "v100", "tp",
];

/// Regular lat/lon grid; point `(h, w)` sits at `(lat0 + h·dlat, lon0 + w·dlon)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lat0: f64,
    pub lon0: f64,
    pub dlat: f64,
    pub dlon: f64,
    pub height: usize,
    pub width: usize,
}

impl GridSpec {
    pub fn point(&self, h: usize, w: usize) -> (f64, f64) {
        (self.lat0 + h as f64 * self.dlat, self.lon0 + w as f64 * self.dlon)
    }

    /// Coordinates of every grid point in row-major (pixel) order.
    pub fn points(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(self.height * self.width);
        for h in 0..self.height {
            for w in 0..self.width {
                out.push(self.point(h, w));
            }
        }
        out
    }

    /// Nearest grid index to a location, clamped to the grid.
    pub fn nearest(&self, lat: f64, lon: f64) -> (usize, usize) {
        let h = ((lat - self.lat0) / self.dlat).round().clamp(0.0, (self.height - 1) as f64);
        let w = ((lon - self.lon0) / self.dlon).round().clamp(0.0, (self.width - 1) as f64);
        (h as usize, w as usize)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct GridMetadata {
    variables: Vec<String>,
    lat0: f64,
    lon0: f64,
    dlat: f64,
    dlon: f64,
    times: Vec<Timestamp>,
}

/// `T × C × H × W` hourly fields in physical units.
#[derive(Debug, Clone, PartialEq)]
pub struct MeteoGrid {
    pub variables: Vec<String>,
    pub grid: GridSpec,
    pub times: Vec<Timestamp>,
    values: Vec<f32>,
}

impl MeteoGrid {
    pub fn new(variables: Vec<String>, grid: GridSpec, times: Vec<Timestamp>, values: Vec<f32>) -> Result<Self> {
        let expected = times.len() * variables.len() * grid.height * grid.width;
        if values.len() != expected {
            return Err(MvarError::shape(format!(
                "{} values for a {}x{}x{}x{} grid",
                values.len(),
                times.len(),
                variables.len(),
                grid.height,
                grid.width
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(MvarError::NonFinite("meteorological grid contains non-finite values".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(MvarError::invalid("meteorological timestamps must be strictly increasing"));
        }
        Ok(Self {
            variables,
            grid,
            times,
            values,
        })
    }

    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    pub fn n_channels(&self) -> usize {
        self.variables.len()
    }

    fn plane(&self) -> usize {
        self.grid.height * self.grid.width
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, t: usize, c: usize, h: usize, w: usize) -> f32 {
        self.values[((t * self.n_channels() + c) * self.grid.height + h) * self.grid.width + w]
    }

    pub fn time_index(&self, ts: Timestamp) -> Option<usize> {
        self.times.binary_search(&ts).ok()
    }

    /// Normalized pixel-major frame (`H·W × C`) at time index `t`.
    pub fn frame(&self, t: usize, stats: &MeteoStats) -> Result<DenseMatrix> {
        if stats.mean.len() != self.n_channels() {
            return Err(MvarError::shape(format!(
                "meteo stats cover {} channels, grid has {}",
                stats.mean.len(),
                self.n_channels()
            )));
        }
        let plane = self.plane();
        let c = self.n_channels();
        let base = t * c * plane;
        Ok(DenseMatrix::from_fn(plane, c, |p, ch| {
            (self.values[base + ch * plane + p] as f64 - stats.mean[ch]) / stats.std[ch]
        }))
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MVGR_MAGIC)?;
        for n in [self.n_times(), self.n_channels(), self.grid.height, self.grid.width] {
            let n = u32::try_from(n).map_err(|_| MvarError::Format("dimension exceeds u32".into()))?;
            w.write_all(&n.to_le_bytes())?;
        }
        let meta = GridMetadata {
            variables: self.variables.clone(),
            lat0: self.grid.lat0,
            lon0: self.grid.lon0,
            dlat: self.grid.dlat,
            dlon: self.grid.dlon,
            times: self.times.clone(),
        };
        let meta = serde_json::to_vec(&meta)?;
        w.write_all(&(meta.len() as u32).to_le_bytes())?;
        w.write_all(&meta)?;
        let mut buf = Vec::with_capacity(self.values.len() * 4);
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        w.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MVGR_MAGIC {
            return Err(MvarError::Format(format!("bad magic {magic:?}, expected MVGR")));
        }
        let mut dims = [0usize; 4];
        for d in dims.iter_mut() {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            *d = u32::from_le_bytes(b) as usize;
        }
        let [t, c, h, w] = dims;
        let mut lb = [0u8; 4];
        r.read_exact(&mut lb)?;
        let mut meta = vec![0u8; u32::from_le_bytes(lb) as usize];
        r.read_exact(&mut meta)?;
        let meta: GridMetadata = serde_json::from_slice(&meta)?;
        if meta.variables.len() != c || meta.times.len() != t {
            return Err(MvarError::Format(format!(
                "metadata lists {} variables and {} times, header says {c} and {t}",
                meta.variables.len(),
                meta.times.len()
            )));
        }
        let mut raw = vec![0u8; t * c * h * w * 4];
        r.read_exact(&mut raw)?;
        let values = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let grid = GridSpec {
            lat0: meta.lat0,
            lon0: meta.lon0,
            dlat: meta.dlat,
            dlon: meta.dlon,
            height: h,
            width: w,
        };
        Self::new(meta.variables, grid, meta.times, values)
    }
}

/// Per-channel standardization of meteorological inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeteoStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl MeteoStats {
    /// Population statistics over the time indices `[from, to)`.
    pub fn compute(grid: &MeteoGrid, from: usize, to: usize) -> Result<Self> {
        if from >= to || to > grid.n_times() {
            return Err(MvarError::EmptyDataset("empty time window for meteo statistics".into()));
        }
        let plane = grid.plane();
        let c = grid.n_channels();
        let mut mean = vec![0.0; c];
        let mut std = vec![1.0; c];
        for ch in 0..c {
            let mut sum = 0.0;
            let mut sq = 0.0;
            let n = ((to - from) * plane) as f64;
            for t in from..to {
                let base = (t * c + ch) * plane;
                for &v in &grid.values[base..base + plane] {
                    sum += v as f64;
                }
            }
            let m = sum / n;
            for t in from..to {
                let base = (t * c + ch) * plane;
                for &v in &grid.values[base..base + plane] {
                    sq += (v as f64 - m).powi(2);
                }
            }
            let s = (sq / n).sqrt();
            mean[ch] = m;
            std[ch] = if s < crate::data::norm::DEGENERATE_STD { 1.0 } else { s };
        }
        Ok(Self { mean, std })
    }
}
