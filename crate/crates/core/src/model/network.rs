//! The MVAR forward pass, recorded on a [`Tape`].
//!
//! Tokens are rows: cities are `N × width` matrices and meteorological
//! feature maps are pixel-major `H·W × C` matrices. Weights are stored
//! input-major so every affine map is `x · W + b`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::city::CityInfo;
use crate::data::meteo::GridSpec;
use crate::data::time::Timestamp;
use crate::error::{MvarError, Result};
use crate::model::hyper::HyperParams;
use crate::model::time_encoding::time_encoding;
use crate::numerics::{ConvGeometry, DenseMatrix, ParamStore, Tape, Var};

const LN_EPS: f64 = 1e-5;
const FFD_EXPANSION: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Uniform on `±1/√fan_in`.
    Uniform { fan_in: usize },
    Ones,
    Zeros,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub init: Init,
}

fn spec(out: &mut Vec<ParamSpec>, name: String, rows: usize, cols: usize, init: Init) {
    out.push(ParamSpec { name, rows, cols, init });
}

fn affine(out: &mut Vec<ParamSpec>, prefix: &str, w: &str, b: &str, fan_in: usize, width: usize) {
    spec(out, format!("{prefix}.{w}"), fan_in, width, Init::Uniform { fan_in });
    spec(out, format!("{prefix}.{b}"), 1, width, Init::Uniform { fan_in });
}

fn norm(out: &mut Vec<ParamSpec>, prefix: &str, width: usize) {
    spec(out, format!("{prefix}.gain"), 1, width, Init::Ones);
    spec(out, format!("{prefix}.bias"), 1, width, Init::Zeros);
}

fn ffd_specs(out: &mut Vec<ParamSpec>, prefix: &str, d: usize) {
    norm(out, &format!("{prefix}.norm"), d);
    affine(out, prefix, "w1", "b1", d, FFD_EXPANSION * d);
    affine(out, prefix, "w2", "b2", FFD_EXPANSION * d, d);
}

fn qkv(out: &mut Vec<ParamSpec>, prefix: &str, q_in: usize, kv_in: usize, d: usize) {
    spec(out, format!("{prefix}.q"), q_in, d, Init::Uniform { fan_in: q_in });
    spec(out, format!("{prefix}.k"), kv_in, d, Init::Uniform { fan_in: kv_in });
    spec(out, format!("{prefix}.v"), kv_in, d, Init::Uniform { fan_in: kv_in });
}

fn resnet_specs(out: &mut Vec<ParamSpec>, prefix: &str, c_in: usize, c_out: usize, d_t: usize) {
    spec(out, format!("{prefix}.conv1"), c_out, c_in * 9, Init::Uniform { fan_in: c_in * 9 });
    spec(out, format!("{prefix}.conv1_bias"), 1, c_out, Init::Uniform { fan_in: c_in * 9 });
    spec(out, format!("{prefix}.time"), d_t, c_out, Init::Uniform { fan_in: d_t });
    norm(out, &format!("{prefix}.norm"), c_out);
    spec(out, format!("{prefix}.conv2"), c_out, c_out * 9, Init::Uniform { fan_in: c_out * 9 });
    spec(out, format!("{prefix}.conv2_bias"), 1, c_out, Init::Uniform { fan_in: c_out * 9 });
    spec(out, format!("{prefix}.skip"), c_out, c_in, Init::Uniform { fan_in: c_in });
}

/// Every trainable tensor of a network with shape `h`, in a fixed order.
pub fn param_layout(h: &HyperParams) -> Vec<ParamSpec> {
    let mut out = Vec::new();
    affine(&mut out, "embed", "w", "b", 2 * h.n_pollutants, h.d_in);
    affine(&mut out, "pos", "w", "b", 2, h.d_pa);
    qkv(&mut out, "embed_attn", h.d_e, h.d_e, h.d_e);
    spec(&mut out, "embed_attn.out".into(), h.d_e, h.d_in, Init::Uniform { fan_in: h.d_e });
    if h.use_meteo {
        resnet_specs(&mut out, "down0", 2 * h.n_channels + h.d_pm, h.ds_hidden, h.d_t);
        resnet_specs(&mut out, "down1", h.ds_hidden, h.d_e, h.d_t);
    }
    for j in 0..h.blocks {
        let q_in = if j == 0 { h.d_in } else { h.d_e };
        let kv_in = if h.use_meteo { h.d_e } else { q_in };
        let p = format!("block{j}");
        qkv(&mut out, &format!("{p}.cross"), q_in, kv_in, h.d_e);
        norm(&mut out, &format!("{p}.cross_norm"), h.d_e);
        ffd_specs(&mut out, &format!("{p}.ffd1"), h.d_e);
        qkv(&mut out, &format!("{p}.self"), h.d_e, h.d_e, h.d_e);
        ffd_specs(&mut out, &format!("{p}.ffd2"), h.d_e);
    }
    affine(&mut out, "head", "w1", "b1", h.blocks * h.d_e, h.d_e);
    spec(&mut out, "head.w2".into(), h.d_e, h.n_pollutants, Init::Uniform { fan_in: h.d_e });
    out
}

/// Normalized meteorological frames at the current and next time step.
#[derive(Debug, Clone, Copy)]
pub struct MeteoInput<'a> {
    /// `H·W × C`.
    pub current: &'a DenseMatrix,
    pub next: &'a DenseMatrix,
    /// Time of the current pollutant snapshot.
    pub time: Timestamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionStage {
    Embedding,
    Cross,
    SelfAttention,
}

#[derive(Debug, Clone, Copy)]
pub struct AttentionMap {
    pub stage: AttentionStage,
    pub block: usize,
    pub head: usize,
    pub weights: Var,
}

/// Handles to the interesting values of one forward step.
#[derive(Debug, Clone)]
pub struct StepTrace {
    pub prediction: Var,
    pub delta: Var,
    /// Output of each MCST block.
    pub blocks: Vec<Var>,
    pub attention: Vec<AttentionMap>,
}

/// Architecture of one network: shape plus the fixed city and grid
/// geometry. Parameters live in a separate [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Mvar {
    pub hyper: HyperParams,
    pub cities: Vec<CityInfo>,
    pub grid: Option<GridSpec>,
}

/// Coordinates fed to the position projector, scaled to roughly unit range.
pub fn scaled_coords(points: &[(f64, f64)]) -> DenseMatrix {
    DenseMatrix::from_fn(points.len(), 2, |r, c| {
        if c == 0 {
            points[r].0 / 90.0
        } else {
            points[r].1 / 180.0
        }
    })
}

impl Mvar {
    pub fn new(hyper: HyperParams, cities: Vec<CityInfo>, grid: Option<GridSpec>) -> Result<Self> {
        hyper.validate()?;
        if cities.len() != hyper.n_cities {
            return Err(MvarError::shape(format!(
                "{} cities for a model of {}",
                cities.len(),
                hyper.n_cities
            )));
        }
        match (hyper.use_meteo, &grid) {
            (true, Some(g)) if g.height == hyper.height && g.width == hyper.width => {}
            (true, Some(g)) => {
                return Err(MvarError::shape(format!(
                    "grid is {}x{}, model expects {}x{}",
                    g.height, g.width, hyper.height, hyper.width
                )))
            }
            (true, None) => return Err(MvarError::Config("meteorology model needs a grid".into())),
            (false, _) => {}
        }
        Ok(Self { hyper, cities, grid })
    }

    /// Seeded initialization of every tensor in [`param_layout`].
    pub fn init_params(&self, seed: u64) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        for s in param_layout(&self.hyper) {
            let m = match s.init {
                Init::Uniform { fan_in } => {
                    let a = 1.0 / (fan_in as f64).sqrt();
                    DenseMatrix::from_fn(s.rows, s.cols, |_, _| rng.random_range(-a..a))
                }
                Init::Ones => DenseMatrix::filled(s.rows, s.cols, 1.0),
                Init::Zeros => DenseMatrix::zeros(s.rows, s.cols),
            };
            store.insert(s.name, m).expect("layout names are unique");
        }
        store
    }

    /// Checks that `params` holds exactly the layout tensors with the right shapes.
    pub fn check_params(&self, params: &ParamStore) -> Result<()> {
        let layout = param_layout(&self.hyper);
        if layout.len() != params.len() {
            return Err(MvarError::shape(format!(
                "expected {} parameter tensors, found {}",
                layout.len(),
                params.len()
            )));
        }
        for s in layout {
            let t = params
                .by_name(&s.name)
                .ok_or_else(|| MvarError::shape(format!("missing parameter {}", s.name)))?;
            if t.shape() != (s.rows, s.cols) {
                return Err(MvarError::shape(format!(
                    "parameter {} is {:?}, expected {:?}",
                    s.name,
                    t.shape(),
                    (s.rows, s.cols)
                )));
            }
            if !t.is_finite() {
                return Err(MvarError::NonFinite(format!("parameter {}", s.name)));
            }
        }
        Ok(())
    }

    pub fn city_coords(&self) -> DenseMatrix {
        let pts: Vec<(f64, f64)> = self.cities.iter().map(|c| (c.lat, c.lon)).collect();
        scaled_coords(&pts)
    }

    fn p(&self, tape: &mut Tape, name: &str) -> Result<Var> {
        let id = tape.params().require(name)?;
        Ok(tape.param(id))
    }

    fn linear(&self, tape: &mut Tape, x: Var, w: &str, b: Option<&str>) -> Result<Var> {
        let wv = self.p(tape, w)?;
        let y = tape.matmul(x, wv)?;
        match b {
            Some(b) => {
                let bv = self.p(tape, b)?;
                tape.add_row(y, bv)
            }
            None => Ok(y),
        }
    }

    fn norm(&self, tape: &mut Tape, x: Var, prefix: &str) -> Result<Var> {
        let g = self.p(tape, &format!("{prefix}.gain"))?;
        let b = self.p(tape, &format!("{prefix}.bias"))?;
        tape.layer_norm(x, g, b, LN_EPS)
    }

    /// `y + W2·GELU(W1·LN(y) + b1) + b2`.
    fn ffd(&self, tape: &mut Tape, y: Var, prefix: &str) -> Result<Var> {
        let n = self.norm(tape, y, &format!("{prefix}.norm"))?;
        let h = self.linear(tape, n, &format!("{prefix}.w1"), Some(&format!("{prefix}.b1")))?;
        let h = tape.gelu(h);
        let o = self.linear(tape, h, &format!("{prefix}.w2"), Some(&format!("{prefix}.b2")))?;
        tape.add(y, o)
    }

    /// Multi-head scaled dot-product attention over already projected Q, K, V.
    #[allow(clippy::too_many_arguments)]
    fn attend(
        &self,
        tape: &mut Tape,
        q: Var,
        k: Var,
        v: Var,
        stage: AttentionStage,
        block: usize,
        maps: &mut Vec<AttentionMap>,
    ) -> Result<Var> {
        let heads = self.hyper.heads;
        let dh = self.hyper.head_width();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(heads);
        for head in 0..heads {
            let (qh, kh, vh) = if heads == 1 {
                (q, k, v)
            } else {
                (
                    tape.slice_cols(q, head * dh, dh)?,
                    tape.slice_cols(k, head * dh, dh)?,
                    tape.slice_cols(v, head * dh, dh)?,
                )
            };
            let kt = tape.transpose(kh);
            let s = tape.matmul(qh, kt)?;
            let s = tape.scale(s, scale);
            let a = tape.softmax_rows(s)?;
            maps.push(AttentionMap {
                stage,
                block,
                head,
                weights: a,
            });
            outs.push(tape.matmul_canonical(a, vh)?);
        }
        if heads == 1 {
            Ok(outs[0])
        } else {
            tape.concat_cols(&outs)
        }
    }

    fn project_qkv(&self, tape: &mut Tape, xq: Var, xkv: Var, prefix: &str) -> Result<(Var, Var, Var)> {
        let q = self.linear(tape, xq, &format!("{prefix}.q"), None)?;
        let k = self.linear(tape, xkv, &format!("{prefix}.k"), None)?;
        let v = self.linear(tape, xkv, &format!("{prefix}.v"), None)?;
        Ok((q, k, v))
    }

    /// City tokens `X^{cp}` (`N × d_e`): GELU affine of both snapshots, then
    /// the position encoding.
    pub fn embed(&self, tape: &mut Tape, x_prev: Var, x_curr: Var) -> Result<Var> {
        let (n, d) = (self.hyper.n_cities, self.hyper.n_pollutants);
        for x in [x_prev, x_curr] {
            if tape.value(x).shape() != (n, d) {
                return Err(MvarError::shape(format!(
                    "pollutant snapshot is {:?}, expected {:?}",
                    tape.value(x).shape(),
                    (n, d)
                )));
            }
        }
        let both = tape.concat_cols(&[x_prev, x_curr])?;
        let h = self.linear(tape, both, "embed.w", Some("embed.b"))?;
        let h = tape.gelu(h);
        let coords = tape.input(self.city_coords());
        let pe = self.linear(tape, coords, "pos.w", Some("pos.b"))?;
        tape.concat_cols(&[h, pe])
    }

    fn resnet_block(
        &self,
        tape: &mut Tape,
        x: Var,
        (height, width): (usize, usize),
        (c_in, c_out): (usize, usize),
        te: Var,
        prefix: &str,
    ) -> Result<Var> {
        let g1 = ConvGeometry {
            in_channels: c_in,
            out_channels: c_out,
            height,
            width,
            kernel: 3,
            stride: 2,
        };
        let k1 = self.p(tape, &format!("{prefix}.conv1"))?;
        let y = tape.conv2d(x, k1, g1)?;
        let b1 = self.p(tape, &format!("{prefix}.conv1_bias"))?;
        let y = tape.add_row(y, b1)?;
        let t = self.linear(tape, te, &format!("{prefix}.time"), None)?;
        let y = tape.add_row(y, t)?;
        let y = self.norm(tape, y, &format!("{prefix}.norm"))?;
        let y = tape.gelu(y);
        let g2 = ConvGeometry {
            in_channels: c_out,
            out_channels: c_out,
            height: height / 2,
            width: width / 2,
            kernel: 3,
            stride: 1,
        };
        let k2 = self.p(tape, &format!("{prefix}.conv2"))?;
        let y = tape.conv2d(y, k2, g2)?;
        let b2 = self.p(tape, &format!("{prefix}.conv2_bias"))?;
        let y = tape.add_row(y, b2)?;
        let gs = ConvGeometry {
            in_channels: c_in,
            out_channels: c_out,
            height,
            width,
            kernel: 1,
            stride: 2,
        };
        let ks = self.p(tape, &format!("{prefix}.skip"))?;
        let s = tape.conv2d(x, ks, gs)?;
        tape.add(y, s)
    }

    /// Meteo tokens `M^d` (`(H/4)·(W/4) × d_e`).
    pub fn encode_meteo(&self, tape: &mut Tape, meteo: &MeteoInput) -> Result<Var> {
        let h = &self.hyper;
        let grid = self
            .grid
            .as_ref()
            .ok_or_else(|| MvarError::Config("meteorology model needs a grid".into()))?;
        let want = (h.height * h.width, h.n_channels);
        for f in [meteo.current, meteo.next] {
            if f.shape() != want {
                return Err(MvarError::shape(format!(
                    "meteo frame is {:?}, expected {want:?}",
                    f.shape()
                )));
            }
        }
        let mc = tape.input(meteo.current.clone());
        let mn = tape.input(meteo.next.clone());
        let pts = tape.input(scaled_coords(&grid.points()));
        let pe = self.linear(tape, pts, "pos.w", Some("pos.b"))?;
        let m_in = tape.concat_cols(&[mc, mn, pe])?;
        let te = tape.input(time_encoding(meteo.time, h.d_t));
        let c_in = 2 * h.n_channels + h.d_pm;
        let y = self.resnet_block(tape, m_in, (h.height, h.width), (c_in, h.ds_hidden), te, "down0")?;
        self.resnet_block(
            tape,
            y,
            (h.height / 2, h.width / 2),
            (h.ds_hidden, h.d_e),
            te,
            "down1",
        )
    }

    /// One MCST block. `kv` is the meteo tokens, or `None` to attend over `x` itself.
    pub fn mcst_block(
        &self,
        tape: &mut Tape,
        x: Var,
        kv: Option<Var>,
        j: usize,
        maps: &mut Vec<AttentionMap>,
    ) -> Result<Var> {
        let p = format!("block{j}");
        let (q, k, v) = self.project_qkv(tape, x, kv.unwrap_or(x), &format!("{p}.cross"))?;
        let zca = self.attend(tape, q, k, v, AttentionStage::Cross, j, maps)?;
        let r = tape.add(q, zca)?;
        let r = self.norm(tape, r, &format!("{p}.cross_norm"))?;
        let zcf = self.ffd(tape, r, &format!("{p}.ffd1"))?;
        let (q, k, v) = self.project_qkv(tape, zcf, zcf, &format!("{p}.self"))?;
        let zsa = self.attend(tape, q, k, v, AttentionStage::SelfAttention, j, maps)?;
        let s = tape.add(zcf, zsa)?;
        self.ffd(tape, s, &format!("{p}.ffd2"))
    }

    /// Records one forecast step `x̂_{t+1} = x_t + X^Δ` on the tape.
    pub fn step(&self, tape: &mut Tape, x_prev: Var, x_curr: Var, meteo: Option<&MeteoInput>) -> Result<StepTrace> {
        let mut maps = Vec::new();
        let xcp = self.embed(tape, x_prev, x_curr)?;
        let (q, k, v) = self.project_qkv(tape, xcp, xcp, "embed_attn")?;
        let a = self.attend(tape, q, k, v, AttentionStage::Embedding, 0, &mut maps)?;
        let mut x = self.linear(tape, a, "embed_attn.out", None)?;
        let kv = if self.hyper.use_meteo {
            let m = meteo.ok_or_else(|| MvarError::MissingMeteo("meteorology model called without frames".into()))?;
            Some(self.encode_meteo(tape, m)?)
        } else {
            None
        };
        let mut blocks = Vec::with_capacity(self.hyper.blocks);
        for j in 0..self.hyper.blocks {
            x = self.mcst_block(tape, x, kv, j, &mut maps)?;
            blocks.push(x);
        }
        let o = if blocks.len() == 1 { blocks[0] } else { tape.concat_cols(&blocks)? };
        let h = self.linear(tape, o, "head.w1", Some("head.b1"))?;
        let h = tape.gelu(h);
        let delta = self.linear(tape, h, "head.w2", None)?;
        let prediction = tape.add(x_curr, delta)?;
        Ok(StepTrace {
            prediction,
            delta,
            blocks,
            attention: maps,
        })
    }

    /// Plain evaluation of one step.
    pub fn predict(
        &self,
        params: &ParamStore,
        x_prev: &DenseMatrix,
        x_curr: &DenseMatrix,
        meteo: Option<&MeteoInput>,
    ) -> Result<DenseMatrix> {
        let mut tape = Tape::new(params);
        let a = tape.input(x_prev.clone());
        let b = tape.input(x_curr.clone());
        let trace = self.step(&mut tape, a, b, meteo)?;
        let out = tape.value(trace.prediction).clone();
        if !out.is_finite() {
            return Err(MvarError::NonFinite("forecast step produced non-finite values".into()));
        }
        Ok(out)
    }
}
