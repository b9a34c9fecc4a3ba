use std::path::{Path, PathBuf};

use mvar_core::model::HyperParams;
use mvar_core::train::TrainConfig;
use serde::Deserialize;

use crate::error::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// City CSV written by `mvar qc`; its `.json` sidecar must sit next to it.
    pub city_csv: PathBuf,
    pub meteo: Option<PathBuf>,
    pub out_dir: PathBuf,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
    #[serde(default = "default_stride")]
    pub stride_hours: u32,
}

fn default_train_fraction() -> f64 {
    0.7
}

fn default_val_fraction() -> f64 {
    0.1
}

fn default_stride() -> u32 {
    1
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub blocks: usize,
    pub d_e: usize,
    pub d_pa: usize,
    pub d_t: usize,
    pub heads: usize,
    pub ds_hidden: usize,
    pub use_meteo: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let h = HyperParams::new(1, 1);
        Self {
            blocks: h.blocks,
            d_e: h.d_e,
            d_pa: h.d_pa,
            d_t: h.d_t,
            heads: h.heads,
            ds_hidden: h.ds_hidden,
            use_meteo: false,
        }
    }
}

impl ModelConfig {
    /// Widths from the config, dimensions from the data.
    pub fn hyper(&self, n_cities: usize, n_pollutants: usize, meteo: Option<(usize, usize, usize)>) -> HyperParams {
        let mut h = HyperParams::new(n_cities, n_pollutants).with_widths(self.d_e, self.d_pa);
        h.blocks = self.blocks;
        h.d_t = self.d_t;
        h.heads = self.heads;
        h.ds_hidden = self.ds_hidden;
        match meteo {
            Some((c, hh, w)) if self.use_meteo => h.with_meteo(c, hh, w),
            _ => h,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_lead")]
    pub lead_hours: u32,
}

fn default_lead() -> u32 {
    6
}

impl RunConfig {
    /// Parses `path` and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::missing(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.data.city_csv);
        resolve(&mut cfg.data.out_dir);
        if let Some(m) = cfg.data.meteo.as_mut() {
            resolve(m);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let d = &self.data;
        if !(d.train_fraction > 0.0 && d.val_fraction >= 0.0 && d.train_fraction + d.val_fraction <= 1.0) {
            return Err(CliError::Input(format!(
                "train_fraction {} and val_fraction {} must be positive and sum to at most 1",
                d.train_fraction, d.val_fraction
            )));
        }
        if d.stride_hours == 0 || self.lead_hours == 0 {
            return Err(CliError::Input("stride_hours and lead_hours must be positive".into()));
        }
        if self.model.use_meteo && d.meteo.is_none() {
            return Err(CliError::Input("model.use_meteo needs data.meteo".into()));
        }
        self.train.validate()?;
        for p in std::iter::once(&d.city_csv).chain(d.meteo.as_ref()) {
            if !p.exists() {
                return Err(CliError::missing(format!("{} does not exist", p.display())));
            }
        }
        Ok(())
    }
}
