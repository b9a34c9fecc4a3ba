//! `MVCK` checkpoints: magic, a version byte, a little-endian `u32` header
//! length, a JSON header, then every tensor as little-endian `f32` in
//! manifest order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::city::CityInfo;
use crate::data::meteo::{GridSpec, MeteoStats};
use crate::data::norm::NormStats;
use crate::error::{MvarError, Result};
use crate::model::hyper::HyperParams;
use crate::model::network::Mvar;
use crate::numerics::{DenseMatrix, ParamStore};

pub const MVCK_MAGIC: &[u8; 4] = b"MVCK";
pub const MVCK_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    /// Byte offset from the start of the tensor section.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    hyper: HyperParams,
    cities: Vec<CityInfo>,
    grid: Option<GridSpec>,
    lead_hours: u32,
    norm: Option<NormStats>,
    meteo_stats: Option<MeteoStats>,
    tensors: Vec<TensorEntry>,
}

/// A trained network together with everything needed to run it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Mvar,
    pub params: ParamStore,
    /// Hours between the input snapshot and the forecast snapshot.
    pub lead_hours: u32,
    pub norm: Option<NormStats>,
    pub meteo_stats: Option<MeteoStats>,
}

impl Checkpoint {
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        let mut tensors = Vec::with_capacity(self.params.len());
        let mut offset = 0;
        for (_, name, t) in self.params.iter() {
            tensors.push(TensorEntry {
                name: name.to_string(),
                rows: t.rows(),
                cols: t.cols(),
                offset,
            });
            offset += t.len() * 4;
        }
        let header = Header {
            hyper: self.model.hyper,
            cities: self.model.cities.clone(),
            grid: self.model.grid,
            lead_hours: self.lead_hours,
            norm: self.norm.clone(),
            meteo_stats: self.meteo_stats.clone(),
            tensors,
        };
        let json = serde_json::to_vec(&header)?;
        let len = u32::try_from(json.len()).map_err(|_| MvarError::Format("checkpoint header too large".into()))?;
        w.write_all(MVCK_MAGIC)?;
        w.write_all(&[MVCK_VERSION])?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(&json)?;
        let mut buf = Vec::with_capacity(offset);
        for (_, _, t) in self.params.iter() {
            for v in t.values() {
                buf.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        w.write_all(&buf)?;
        w.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MVCK_MAGIC {
            return Err(MvarError::Format(format!("bad magic {magic:?}, expected MVCK")));
        }
        let mut version = [0u8; 1];
        r.read_exact(&mut version)?;
        if version[0] != MVCK_VERSION {
            return Err(MvarError::Format(format!("unsupported checkpoint version {}", version[0])));
        }
        let mut lb = [0u8; 4];
        r.read_exact(&mut lb)?;
        let mut json = vec![0u8; u32::from_le_bytes(lb) as usize];
        r.read_exact(&mut json)?;
        let header: Header = serde_json::from_slice(&json)?;
        let model = Mvar::new(header.hyper, header.cities, header.grid)?;
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        let mut params = ParamStore::new();
        for e in header.tensors {
            let n = e.rows * e.cols;
            let bytes = rest
                .get(e.offset..e.offset + n * 4)
                .ok_or_else(|| MvarError::Format(format!("tensor {} runs past the end of the file", e.name)))?;
            let values: Vec<f64> = bytes
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
                .collect();
            params.insert(e.name, DenseMatrix::new(e.rows, e.cols, values)?)?;
        }
        model.check_params(&params)?;
        Ok(Self {
            model,
            params,
            lead_hours: header.lead_hours,
            norm: header.norm,
            meteo_stats: header.meteo_stats,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(BufReader::new(File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut h = HyperParams::new(2, 2).with_widths(8, 2);
        h.heads = 2;
        h.blocks = 1;
        let cities = vec![
            CityInfo { id: "a".into(), lat: 39.9, lon: 116.4 },
            CityInfo { id: "b".into(), lat: 39.1, lon: 117.2 },
        ];
        let model = Mvar::new(h, cities, None).unwrap();
        let params = model.init_params(5);
        Checkpoint { model, params, lead_hours: 6, norm: None, meteo_stats: None }
    }

    #[test]
    fn round_trip_preserves_forecasts() {
        let ck = sample();
        let mut buf = Vec::new();
        ck.write(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"MVCK");
        assert_eq!(buf[4], MVCK_VERSION);
        let back = Checkpoint::read(buf.as_slice()).unwrap();
        assert_eq!(back.model, ck.model);
        assert_eq!(back.lead_hours, 6);
        let x = DenseMatrix::from_fn(2, 2, |r, c| r as f64 - 0.3 * c as f64);
        let a = ck.model.predict(&ck.params, &x, &x, None).unwrap();
        let b = back.model.predict(&back.params, &x, &x, None).unwrap();
        assert!(a.max_abs_diff(&b) <= 1e-6);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let mut buf = Vec::new();
        sample().write(&mut buf).unwrap();
        let mut bad = buf.clone();
        bad[1] = b'X';
        assert!(matches!(Checkpoint::read(bad.as_slice()), Err(MvarError::Format(_))));
        let mut bad = buf.clone();
        bad[4] = 99;
        assert!(matches!(Checkpoint::read(bad.as_slice()), Err(MvarError::Format(_))));
        assert!(Checkpoint::read(&buf[..buf.len() - 4]).is_err());
    }
}
