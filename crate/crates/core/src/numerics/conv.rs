//! Strided 2-D convolution with "same" zero padding.
//!
//! Inside the tape, feature maps travel as pixel-major matrices (`H·W × C`,
//! one row per grid point) so that per-pixel normalization and the final
//! flatten into tokens are plain row operations. [`FeatureMap`] is the
//! channel-major `C × H × W` view used at API boundaries.

use crate::error::{MvarError, Result};
use crate::numerics::matrix::{matmul_transa, matmul_transb, DenseMatrix};

/// Static shape information for one convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvGeometry {
    pub fn validate(&self) -> Result<()> {
        if self.kernel % 2 == 0 {
            return Err(MvarError::shape(format!(
                "kernel size {} must be odd",
                self.kernel
            )));
        }
        if self.stride == 0 || self.height % self.stride != 0 || self.width % self.stride != 0 {
            return Err(MvarError::shape(format!(
                "grid {}x{} is not divisible by stride {}",
                self.height, self.width, self.stride
            )));
        }
        Ok(())
    }

    pub fn out_height(&self) -> usize {
        self.height / self.stride
    }

    pub fn out_width(&self) -> usize {
        self.width / self.stride
    }

    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }
}

/// Gathers every receptive field into one row: `(H'·W') × (C_in·k·k)`,
/// column order `(channel, ky, kx)`.
pub(crate) fn im2col(x: &DenseMatrix, g: &ConvGeometry) -> Result<DenseMatrix> {
    g.validate()?;
    if x.rows() != g.height * g.width || x.cols() != g.in_channels {
        return Err(MvarError::shape(format!(
            "conv input is {}x{}, expected {}x{} (pixels x channels)",
            x.rows(),
            x.cols(),
            g.height * g.width,
            g.in_channels
        )));
    }
    let (oh, ow, k) = (g.out_height(), g.out_width(), g.kernel);
    let pad = (k / 2) as isize;
    let patch = g.patch_len();
    let mut cols = vec![0.0; oh * ow * patch];
    for oy in 0..oh {
        for ox in 0..ow {
            let dst = &mut cols[(oy * ow + ox) * patch..(oy * ow + ox + 1) * patch];
            for ky in 0..k {
                let iy = (oy * g.stride) as isize + ky as isize - pad;
                if iy < 0 || iy >= g.height as isize {
                    continue;
                }
                for kx in 0..k {
                    let ix = (ox * g.stride) as isize + kx as isize - pad;
                    if ix < 0 || ix >= g.width as isize {
                        continue;
                    }
                    let src = x.row(iy as usize * g.width + ix as usize);
                    for (c, &v) in src.iter().enumerate() {
                        dst[(c * k + ky) * k + kx] = v;
                    }
                }
            }
        }
    }
    DenseMatrix::new(oh * ow, patch, cols)
}

/// Scatter-adds patch gradients back onto the input grid (adjoint of [`im2col`]).
pub(crate) fn col2im(dcols: &DenseMatrix, g: &ConvGeometry) -> DenseMatrix {
    let (oh, ow, k) = (g.out_height(), g.out_width(), g.kernel);
    let pad = (k / 2) as isize;
    let mut dx = DenseMatrix::zeros(g.height * g.width, g.in_channels);
    for oy in 0..oh {
        for ox in 0..ow {
            let src = dcols.row(oy * ow + ox);
            for ky in 0..k {
                let iy = (oy * g.stride) as isize + ky as isize - pad;
                if iy < 0 || iy >= g.height as isize {
                    continue;
                }
                for kx in 0..k {
                    let ix = (ox * g.stride) as isize + kx as isize - pad;
                    if ix < 0 || ix >= g.width as isize {
                        continue;
                    }
                    let dst = dx.row_mut(iy as usize * g.width + ix as usize);
                    for (c, d) in dst.iter_mut().enumerate() {
                        *d += src[(c * k + ky) * k + kx];
                    }
                }
            }
        }
    }
    dx
}

/// Pixel-major convolution: `x` is `H·W × C_in`, `kernel` is
/// `C_out × (C_in·k·k)`. Returns the output and the patch matrix.
pub(crate) fn conv2d_pixel_major(
    x: &DenseMatrix,
    kernel: &DenseMatrix,
    g: &ConvGeometry,
) -> Result<(DenseMatrix, DenseMatrix)> {
    if kernel.rows() != g.out_channels || kernel.cols() != g.patch_len() {
        return Err(MvarError::shape(format!(
            "kernel is {}x{}, expected {}x{}",
            kernel.rows(),
            kernel.cols(),
            g.out_channels,
            g.patch_len()
        )));
    }
    let cols = im2col(x, g)?;
    let out = matmul_transb(&cols, kernel)?;
    Ok((out, cols))
}

/// Gradients of [`conv2d_pixel_major`] with respect to input and kernel.
pub(crate) fn conv2d_backward(
    grad_out: &DenseMatrix,
    cols: &DenseMatrix,
    kernel: &DenseMatrix,
    g: &ConvGeometry,
) -> Result<(DenseMatrix, DenseMatrix)> {
    let dkernel = matmul_transa(grad_out, cols)?;
    let dcols = crate::numerics::matrix::matmul(grad_out, kernel)?;
    Ok((col2im(&dcols, g), dkernel))
}

/// Channel-major `C × H × W` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// `[c][h][w]` order.
    pub values: Vec<f64>,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != channels * height * width || channels * height * width == 0 {
            return Err(MvarError::shape(format!(
                "{} values for a {channels}x{height}x{width} feature map",
                values.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            values,
        })
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.values[(c * self.height + y) * self.width + x]
    }

    /// `H·W × C` pixel-major matrix.
    pub fn to_pixel_major(&self) -> DenseMatrix {
        let hw = self.height * self.width;
        DenseMatrix::from_fn(hw, self.channels, |p, c| self.values[c * hw + p])
    }

    pub fn from_pixel_major(m: &DenseMatrix, height: usize, width: usize) -> Result<Self> {
        if m.rows() != height * width {
            return Err(MvarError::shape(format!(
                "{} pixel rows for a {height}x{width} grid",
                m.rows()
            )));
        }
        Ok(Self {
            channels: m.cols(),
            height,
            width,
            values: m.transpose().into_values(),
        })
    }
}

/// Four-axis kernel `[out][in][ky][kx]`, square and odd-sized.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernel {
    pub out_channels: usize,
    pub in_channels: usize,
    pub size: usize,
    pub values: Vec<f64>,
}

impl ConvKernel {
    pub fn new(out_channels: usize, in_channels: usize, size: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != out_channels * in_channels * size * size {
            return Err(MvarError::shape(format!(
                "{} values for a {out_channels}x{in_channels}x{size}x{size} kernel",
                values.len()
            )));
        }
        Ok(Self {
            out_channels,
            in_channels,
            size,
            values,
        })
    }

    pub fn get(&self, o: usize, i: usize, ky: usize, kx: usize) -> f64 {
        self.values[((o * self.in_channels + i) * self.size + ky) * self.size + kx]
    }

    /// Row-major memory is already `C_out × (C_in·k·k)`.
    pub fn as_matrix(&self) -> DenseMatrix {
        DenseMatrix::new(
            self.out_channels,
            self.in_channels * self.size * self.size,
            self.values.clone(),
        )
        .expect("kernel dims")
    }
}

/// Zero-padded ("same") convolution followed by striding: output is
/// `C_out × H/stride × W/stride`.
pub fn strided_conv2d(x: &FeatureMap, kernels: &ConvKernel, stride: usize) -> Result<FeatureMap> {
    if kernels.in_channels != x.channels {
        return Err(MvarError::shape(format!(
            "kernel expects {} input channels, feature map has {}",
            kernels.in_channels, x.channels
        )));
    }
    let g = ConvGeometry {
        in_channels: x.channels,
        out_channels: kernels.out_channels,
        height: x.height,
        width: x.width,
        kernel: kernels.size,
        stride,
    };
    g.validate()?;
    let (out, _) = conv2d_pixel_major(&x.to_pixel_major(), &kernels.as_matrix(), &g)?;
    FeatureMap::from_pixel_major(&out, g.out_height(), g.out_width())
}
