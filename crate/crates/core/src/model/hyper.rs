use serde::{Deserialize, Serialize};

use crate::error::{MvarError, Result};

/// Shape of one MVAR network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HyperParams {
    pub n_cities: usize,
    pub n_pollutants: usize,
    /// Meteorological channels per frame (0 without meteorology).
    pub n_channels: usize,
    pub height: usize,
    pub width: usize,
    /// Number of stacked MCST blocks.
    pub blocks: usize,
    pub d_in: usize,
    /// City position-encoding width.
    pub d_pa: usize,
    /// Grid position-encoding width; equals `d_pa` because the projector is shared.
    pub d_pm: usize,
    pub d_e: usize,
    pub d_t: usize,
    pub heads: usize,
    /// Channels after the first downsampling block.
    pub ds_hidden: usize,
    pub use_meteo: bool,
}

impl HyperParams {
    /// Default widths for a model without meteorology.
    pub fn new(n_cities: usize, n_pollutants: usize) -> Self {
        Self {
            n_cities,
            n_pollutants,
            n_channels: 0,
            height: 0,
            width: 0,
            blocks: 3,
            d_in: 112,
            d_pa: 16,
            d_pm: 16,
            d_e: 128,
            d_t: 32,
            heads: 4,
            ds_hidden: 64,
            use_meteo: false,
        }
    }

    pub fn with_meteo(mut self, channels: usize, height: usize, width: usize) -> Self {
        self.n_channels = channels;
        self.height = height;
        self.width = width;
        self.use_meteo = true;
        self
    }

    /// Sets `d_e` and the position-encoding width, deriving `d_in`.
    pub fn with_widths(mut self, d_e: usize, d_pa: usize) -> Self {
        self.d_e = d_e;
        self.d_pa = d_pa;
        self.d_pm = d_pa;
        self.d_in = d_e.saturating_sub(d_pa);
        self
    }

    /// Meteo tokens after two stride-2 halvings.
    pub fn meteo_tokens(&self) -> usize {
        (self.height / 4) * (self.width / 4)
    }

    pub fn head_width(&self) -> usize {
        self.d_e / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(MvarError::Config(m));
        if self.n_cities == 0 || self.n_pollutants == 0 {
            return fail("model needs at least one city and one pollutant".into());
        }
        if self.blocks == 0 {
            return fail("at least one MCST block is required".into());
        }
        if self.d_in == 0 || self.d_pa == 0 || self.d_in + self.d_pa != self.d_e {
            return fail(format!(
                "token width {} must equal embedding {} plus position encoding {}",
                self.d_e, self.d_in, self.d_pa
            ));
        }
        if self.d_pm != self.d_pa {
            return fail(format!(
                "grid position width {} must equal city position width {} (shared projector)",
                self.d_pm, self.d_pa
            ));
        }
        if self.heads == 0 || self.d_e % self.heads != 0 {
            return fail(format!("token width {} is not divisible by {} heads", self.d_e, self.heads));
        }
        if self.use_meteo {
            if self.n_channels == 0 || self.ds_hidden == 0 {
                return fail("meteorology needs channels and a downsampler width".into());
            }
            if self.height == 0 || self.width == 0 || self.height % 4 != 0 || self.width % 4 != 0 {
                return fail(format!("grid {}x{} must be a positive multiple of 4", self.height, self.width));
            }
            if self.d_t == 0 || self.d_t % 4 != 0 {
                return fail(format!("time-encoding width {} must be a positive multiple of 4", self.d_t));
            }
        }
        Ok(())
    }
}
