//! Patch embedding for a 4-channel (RGB + sparse depth) input built by
//! extending 3-channel pretrained weights.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::GrayImage;
use crate::sparse::SparseDepthChannel;

/// Channel-major image tensor `[channels, height, width]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::invalid(format!(
                "image [{channels}, {height}, {width}] needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    /// Replicates a grayscale image into three channels.
    pub fn from_gray(gray: &GrayImage) -> Self {
        let mut data = Vec::with_capacity(3 * gray.data.len());
        for _ in 0..3 {
            data.extend_from_slice(&gray.data);
        }
        Self {
            channels: 3,
            height: gray.height,
            width: gray.width,
            data,
        }
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    /// Bilinear resampling to `width × height` (pixel-center aligned, edges clamped).
    pub fn resize_bilinear(&self, width: usize, height: usize) -> Self {
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let mut data = Vec::with_capacity(self.channels * width * height);
        for c in 0..self.channels {
            for y in 0..height {
                let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (self.height - 1) as f64);
                let y0 = fy.floor() as usize;
                let y1 = (y0 + 1).min(self.height - 1);
                let ty = fy - y0 as f64;
                for x in 0..width {
                    let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (self.width - 1) as f64);
                    let x0 = fx.floor() as usize;
                    let x1 = (x0 + 1).min(self.width - 1);
                    let tx = fx - x0 as f64;
                    let top = self.at(c, y0, x0) * (1.0 - tx) + self.at(c, y0, x1) * tx;
                    let bot = self.at(c, y1, x0) * (1.0 - tx) + self.at(c, y1, x1) * tx;
                    data.push(top * (1.0 - ty) + bot * ty);
                }
            }
        }
        Self {
            channels: self.channels,
            height,
            width,
            data,
        }
    }
}

/// Largest dimensions not exceeding `(width, height)` that are multiples of `patch`.
pub fn patch_aligned_size(width: usize, height: usize, patch: usize) -> (usize, usize) {
    (width / patch * patch, height / patch * patch)
}

/// Non-overlapping patch convolution weights, kernel laid out
/// `[embed_dim, in_channels, patch, patch]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbedWeights {
    pub embed_dim: usize,
    pub in_channels: usize,
    pub patch: usize,
    pub kernel: Vec<f64>,
    pub bias: Vec<f64>,
}

impl EmbedWeights {
    pub fn new(
        embed_dim: usize,
        in_channels: usize,
        patch: usize,
        kernel: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        let w = Self {
            embed_dim,
            in_channels,
            patch,
            kernel,
            bias,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.in_channels, 3 | 4) || self.patch == 0 || self.embed_dim == 0 {
            return Err(Error::invalid(format!(
                "unsupported embedding shape [{}, {}, {p}, {p}]",
                self.embed_dim,
                self.in_channels,
                p = self.patch
            )));
        }
        if self.kernel.len() != self.embed_dim * self.in_channels * self.patch * self.patch
            || self.bias.len() != self.embed_dim
        {
            return Err(Error::invalid("kernel or bias length does not match the shape"));
        }
        if !self.kernel.iter().chain(&self.bias).all(|v| v.is_finite()) {
            return Err(Error::invalid("embedding weights must be finite"));
        }
        Ok(())
    }

    /// Gaussian-initialized weights, for tests and tooling.
    pub fn random<R: Rng>(embed_dim: usize, in_channels: usize, patch: usize, scale: f64, rng: &mut R) -> Self {
        let n = embed_dim * in_channels * patch * patch;
        let mut draw = || scale * rng.sample::<f64, _>(StandardNormal);
        let kernel = (0..n).map(|_| draw()).collect();
        let bias = (0..embed_dim).map(|_| draw()).collect();
        Self {
            embed_dim,
            in_channels,
            patch,
            kernel,
            bias,
        }
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.embed_dim, self.in_channels, self.patch, self.patch]
    }

    #[inline]
    fn kernel_index(&self, e: usize, c: usize, i: usize, j: usize) -> usize {
        ((e * self.in_channels + c) * self.patch + i) * self.patch + j
    }
}

pub const DEFAULT_INIT_SCALE: f64 = 0.02;

/// Extends 3-channel weights with a fourth input channel drawn from
/// `N(0, init_scale²)`. Channels 0–2 and the bias are copied unchanged.
pub fn concat_weights<R: Rng>(w3: &EmbedWeights, init_scale: f64, rng: &mut R) -> Result<EmbedWeights> {
    w3.validate()?;
    if w3.in_channels != 3 {
        return Err(Error::invalid(format!(
            "expected 3 input channels, got {}",
            w3.in_channels
        )));
    }
    let pp = w3.patch * w3.patch;
    let mut kernel = Vec::with_capacity(w3.embed_dim * 4 * pp);
    for e in 0..w3.embed_dim {
        kernel.extend_from_slice(&w3.kernel[e * 3 * pp..(e + 1) * 3 * pp]);
        for _ in 0..pp {
            kernel.push(init_scale * rng.sample::<f64, _>(StandardNormal));
        }
    }
    Ok(EmbedWeights {
        embed_dim: w3.embed_dim,
        in_channels: 4,
        patch: w3.patch,
        kernel,
        bias: w3.bias.clone(),
    })
}

/// Token embeddings, one row per patch in row-major patch order.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenGrid {
    pub cols: usize,
    pub rows: usize,
    pub embed_dim: usize,
    pub tokens: Vec<f64>,
}

impl TokenGrid {
    pub fn n_patches(&self) -> usize {
        self.cols * self.rows
    }

    pub fn token(&self, p: usize) -> &[f64] {
        &self.tokens[p * self.embed_dim..(p + 1) * self.embed_dim]
    }
}

/// Stride-`patch` convolution: each token is `bias + Σ kernel · patch pixels`.
pub fn embed(image: &Image, w: &EmbedWeights) -> Result<TokenGrid> {
    if image.channels != w.in_channels {
        return Err(Error::invalid(format!(
            "image has {} channels, weights expect {}",
            image.channels, w.in_channels
        )));
    }
    let p = w.patch;
    if !image.width.is_multiple_of(p) || !image.height.is_multiple_of(p) {
        return Err(Error::invalid(format!(
            "{}x{} is not divisible into {p}-pixel patches",
            image.width, image.height
        )));
    }
    let (cols, rows) = (image.width / p, image.height / p);
    let mut tokens = Vec::with_capacity(cols * rows * w.embed_dim);
    for py in 0..rows {
        for px in 0..cols {
            for e in 0..w.embed_dim {
                let mut acc = w.bias[e];
                for c in 0..w.in_channels {
                    for i in 0..p {
                        for j in 0..p {
                            acc += w.kernel[w.kernel_index(e, c, i, j)]
                                * image.at(c, py * p + i, px * p + j);
                        }
                    }
                }
                tokens.push(acc);
            }
        }
    }
    Ok(TokenGrid {
        cols,
        rows,
        embed_dim: w.embed_dim,
        tokens,
    })
}

/// Stacks RGB (values in `[0, 1]`) and the sparse depth channel into a 4-channel input.
pub fn assemble_input(rgb: &Image, channel: &SparseDepthChannel) -> Result<Image> {
    if rgb.channels != 3 || rgb.width != channel.width() || rgb.height != channel.height() {
        return Err(Error::invalid(format!(
            "cannot stack [{}, {}, {}] image with {}x{} depth channel",
            rgb.channels,
            rgb.height,
            rgb.width,
            channel.width(),
            channel.height()
        )));
    }
    let mut data = Vec::with_capacity(rgb.data.len() + channel.values.data.len());
    data.extend_from_slice(&rgb.data);
    data.extend_from_slice(&channel.values.data);
    Ok(Image {
        channels: 4,
        height: rgb.height,
        width: rgb.width,
        data,
    })
}

/// Shape sidecar for a flat little-endian f32 weights file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsMeta {
    pub embed_dim: usize,
    pub in_channels: usize,
    pub patch: usize,
    pub dtype: String,
    /// Kernel values first, then the bias.
    pub layout: String,
}

/// Writes `<path>` (kernel then bias as LE f32) and `<path>.json` with the shape.
pub fn save_weights(path: &Path, w: &EmbedWeights) -> Result<()> {
    let mut bytes = Vec::with_capacity(4 * (w.kernel.len() + w.bias.len()));
    for v in w.kernel.iter().chain(&w.bias) {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let meta = WeightsMeta {
        embed_dim: w.embed_dim,
        in_channels: w.in_channels,
        patch: w.patch,
        dtype: "f32le".into(),
        layout: "kernel[embed_dim,in_channels,patch,patch],bias[embed_dim]".into(),
    };
    crate::io::write_json(&sidecar_path(path), &meta)
}

pub fn load_weights(path: &Path) -> Result<EmbedWeights> {
    let meta: WeightsMeta = crate::io::read_json(&sidecar_path(path))?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let values: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let n_kernel = meta.embed_dim * meta.in_channels * meta.patch * meta.patch;
    if bytes.len() % 4 != 0 || values.len() != n_kernel + meta.embed_dim {
        return Err(Error::Parse {
            path: path.into(),
            line: 0,
            message: format!(
                "expected {} f32 values for the declared shape, found {} bytes",
                n_kernel + meta.embed_dim,
                bytes.len()
            ),
        });
    }
    let (kernel, bias) = values.split_at(n_kernel);
    EmbedWeights::new(meta.embed_dim, meta.in_channels, meta.patch, kernel.to_vec(), bias.to_vec())
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}
