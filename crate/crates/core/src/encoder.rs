//! Gabor phase encoding of normalized iris textures.
//!
//! The texture is mean-centred over its usable pixels, then each patch
//! centre of the target grid is projected onto a complex Gabor kernel. Rows
//! (radial direction) are zero-padded; columns (angular direction) wrap.
//! The response phasor is quantized to a Gray-coded quadrant, giving one
//! real and one imaginary bit per patch.

use std::f64::consts::PI;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::template::{BitGrid, PackedTemplate, ResolutionMode, TemplateGeometry};

/// Kernel shapes of the three-filter bank, `(rows, cols)`.
pub const DEFAULT_KERNEL_SIZES: [(usize, usize); 3] = [(9, 51), (9, 27), (9, 15)];

/// Patches need at least this fraction of usable kernel support.
pub const MIN_USABLE_SUPPORT: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaborParams {
    pub rows: usize,
    pub cols: usize,
    /// Carrier wavelength in pixels.
    pub wavelength: f64,
    pub sigma_rows: f64,
    pub sigma_cols: f64,
    /// Carrier direction in radians; 0 runs along the angular axis.
    pub orientation: f64,
}

impl GaborParams {
    /// Wavelength of half the kernel width and envelope widths of a quarter
    /// of each kernel side, carrier along the angular axis.
    pub fn for_kernel(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            wavelength: cols as f64 / 2.0,
            sigma_rows: rows as f64 / 4.0,
            sigma_cols: cols as f64 / 4.0,
            orientation: 0.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::Parameter(
                "kernel dimensions must be positive".into(),
            ));
        }
        for (name, v) in [
            ("wavelength", self.wavelength),
            ("sigma_rows", self.sigma_rows),
            ("sigma_cols", self.sigma_cols),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Parameter(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if !self.orientation.is_finite() {
            return Err(Error::Parameter("orientation must be finite".into()));
        }
        Ok(())
    }
}

/// A DC-free complex Gabor kernel, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GaborKernel {
    params: GaborParams,
    re: Vec<f64>,
    im: Vec<f64>,
}

impl GaborKernel {
    pub fn new(params: GaborParams) -> Result<Self> {
        params.validate()?;
        let (rows, cols) = (params.rows, params.cols);
        let cy = (rows as f64 - 1.0) / 2.0;
        let cx = (cols as f64 - 1.0) / 2.0;
        let (sin_o, cos_o) = params.orientation.sin_cos();
        let mut re = Vec::with_capacity(rows * cols);
        let mut im = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                let y = r as f64 - cy;
                let x = c as f64 - cx;
                let envelope = (-(y * y) / (2.0 * params.sigma_rows.powi(2))
                    - (x * x) / (2.0 * params.sigma_cols.powi(2)))
                .exp();
                let phase = 2.0 * PI * (x * cos_o + y * sin_o) / params.wavelength;
                re.push(envelope * phase.cos());
                im.push(envelope * phase.sin());
            }
        }
        remove_mean(&mut re);
        remove_mean(&mut im);
        Ok(Self { params, re, im })
    }

    pub fn params(&self) -> &GaborParams {
        &self.params
    }

    pub fn rows(&self) -> usize {
        self.params.rows
    }

    pub fn cols(&self) -> usize {
        self.params.cols
    }

    pub fn real(&self) -> &[f64] {
        &self.re
    }

    pub fn imag(&self) -> &[f64] {
        &self.im
    }

    pub fn at(&self, row: usize, col: usize) -> Complex64 {
        let i = row * self.params.cols + col;
        Complex64::new(self.re[i], self.im[i])
    }
}

fn remove_mean(values: &mut [f64]) {
    // Two passes so the residual mean sits at rounding level.
    for _ in 0..2 {
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        values.iter_mut().for_each(|v| *v -= mean);
    }
}

/// Three-scale filter bank; index 0 is the single-resolution filter.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    kernels: Vec<GaborKernel>,
}

impl FilterBank {
    pub fn new(params: [GaborParams; 3]) -> Result<Self> {
        let kernels = params
            .into_iter()
            .map(GaborKernel::new)
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { kernels })
    }

    pub fn default_params() -> [GaborParams; 3] {
        DEFAULT_KERNEL_SIZES.map(|(r, c)| GaborParams::for_kernel(r, c))
    }

    pub fn kernels(&self) -> &[GaborKernel] {
        &self.kernels
    }

    pub fn kernel(&self, index: usize) -> Result<&GaborKernel> {
        self.kernels.get(index).ok_or_else(|| {
            Error::Parameter(format!(
                "filter index {index} out of range for {} filters",
                self.kernels.len()
            ))
        })
    }
}

impl Default for FilterBank {
    fn default() -> Self {
        Self::new(Self::default_params()).expect("default filter parameters are valid")
    }
}

/// Unwrapped iris texture: intensities in [0, 1] plus a usable-pixel map.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedTexture {
    rows: usize,
    cols: usize,
    pixels: Vec<f64>,
    usable: Vec<bool>,
}

impl NormalizedTexture {
    pub fn new(rows: usize, cols: usize, pixels: Vec<f64>, usable: Vec<bool>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Dimension {
                expected: "a non-empty texture".into(),
                actual: format!("{rows}x{cols}"),
            });
        }
        for (what, len) in [("pixels", pixels.len()), ("occlusion map", usable.len())] {
            if len != rows * cols {
                return Err(Error::Dimension {
                    expected: format!("{} {what} ({rows}x{cols})", rows * cols),
                    actual: format!("{len} {what}"),
                });
            }
        }
        Ok(Self {
            rows,
            cols,
            pixels,
            usable,
        })
    }

    /// A fully usable texture.
    pub fn unoccluded(rows: usize, cols: usize, pixels: Vec<f64>) -> Result<Self> {
        Self::new(rows, cols, pixels, vec![true; rows * cols])
    }

    /// Reads an 8-bit grayscale PGM, plus an optional 0/255 occlusion PGM
    /// where nonzero marks usable pixels.
    pub fn from_pgm(texture: impl AsRef<Path>, occlusion: Option<&Path>) -> Result<Self> {
        let img = image::open(texture.as_ref())?.into_luma8();
        let (cols, rows) = (img.width() as usize, img.height() as usize);
        let pixels = img.as_raw().iter().map(|&v| v as f64 / 255.0).collect();
        let usable = match occlusion {
            Some(path) => {
                let m = image::open(path)?.into_luma8();
                if (m.width() as usize, m.height() as usize) != (cols, rows) {
                    return Err(Error::Dimension {
                        expected: format!("{rows}x{cols} occlusion map"),
                        actual: format!("{}x{}", m.height(), m.width()),
                    });
                }
                m.as_raw().iter().map(|&v| v != 0).collect()
            }
            None => vec![true; rows * cols],
        };
        Self::new(rows, cols, pixels, usable)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn pixel(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.cols + col]
    }

    pub fn is_usable(&self, row: usize, col: usize) -> bool {
        self.usable[row * self.cols + col]
    }

    /// Pixel values minus the usable-pixel mean; occluded pixels become 0.
    fn centred(&self) -> Vec<f64> {
        let (sum, n) = self
            .pixels
            .iter()
            .zip(&self.usable)
            .filter(|(_, &u)| u)
            .fold((0.0, 0usize), |(s, n), (&p, _)| (s + p, n + 1));
        let mean = if n == 0 { 0.0 } else { sum / n as f64 };
        self.pixels
            .iter()
            .zip(&self.usable)
            .map(|(&p, &u)| if u { p - mean } else { 0.0 })
            .collect()
    }

    /// Texture pixel under patch centre `(row, col)` of `geometry`'s grid.
    pub fn patch_centre(
        &self,
        geometry: &TemplateGeometry,
        row: usize,
        col: usize,
    ) -> (usize, usize) {
        (
            (2 * row + 1) * self.rows / (2 * geometry.rows()),
            (2 * col + 1) * self.cols / (2 * geometry.cols()),
        )
    }
}

/// Gray-coded quadrant of a phasor: `(Re >= 0, Im >= 0)`.
///
/// First quadrant `11`, second `01`, third `00`, fourth `10`; a zero part
/// counts as non-negative.
pub fn quantize_phase(response: Complex64) -> (bool, bool) {
    (response.re >= 0.0, response.im >= 0.0)
}

/// Inner product of the kernel with the centred texture around `(cy, cx)`.
fn response_at(
    centred: &[f64],
    tex_rows: usize,
    tex_cols: usize,
    kernel: &GaborKernel,
    cy: usize,
    cx: usize,
) -> Complex64 {
    let half_r = kernel.rows() / 2;
    let half_c = kernel.cols() / 2;
    let mut acc = Complex64::new(0.0, 0.0);
    for kr in 0..kernel.rows() {
        let ty = cy as isize + kr as isize - half_r as isize;
        if ty < 0 || ty >= tex_rows as isize {
            continue;
        }
        let row = &centred[ty as usize * tex_cols..(ty as usize + 1) * tex_cols];
        for kc in 0..kernel.cols() {
            let tx = (cx as isize + kc as isize - half_c as isize).rem_euclid(tex_cols as isize)
                as usize;
            let v = row[tx];
            let i = kr * kernel.cols() + kc;
            // conj(k) * v
            acc.re += kernel.re[i] * v;
            acc.im -= kernel.im[i] * v;
        }
    }
    acc
}

/// Complex filter response at a texture pixel.
pub fn filter_response(
    texture: &NormalizedTexture,
    kernel: &GaborKernel,
    row: usize,
    col: usize,
) -> Complex64 {
    let centred = texture.centred();
    response_at(&centred, texture.rows, texture.cols, kernel, row, col)
}

fn usable_fraction(texture: &NormalizedTexture, kernel: &GaborKernel, cy: usize, cx: usize) -> f64 {
    let half_r = kernel.rows() / 2;
    let half_c = kernel.cols() / 2;
    let mut usable = 0usize;
    for kr in 0..kernel.rows() {
        let ty = cy as isize + kr as isize - half_r as isize;
        if ty < 0 || ty >= texture.rows as isize {
            continue;
        }
        for kc in 0..kernel.cols() {
            let tx = (cx as isize + kc as isize - half_c as isize).rem_euclid(texture.cols as isize)
                as usize;
            if texture.is_usable(ty as usize, tx) {
                usable += 1;
            }
        }
    }
    usable as f64 / (kernel.rows() * kernel.cols()) as f64
}

/// Encodes a texture with one filter of the bank into an extracted-geometry
/// (pre-stripping) single-resolution template.
pub fn encode(
    texture: &NormalizedTexture,
    bank: &FilterBank,
    filter_index: usize,
    geometry: &TemplateGeometry,
) -> Result<PackedTemplate> {
    let kernel = bank.kernel(filter_index)?;
    if geometry.is_stripped() || geometry.resolution() != ResolutionMode::Single {
        return Err(Error::Dimension {
            expected: format!(
                "extracted single-resolution geometry {}",
                TemplateGeometry::extracted(geometry.dimension(), ResolutionMode::Single)
            ),
            actual: geometry.to_string(),
        });
    }
    let centred = texture.centred();
    let (rows, cols) = (geometry.rows(), geometry.cols());
    let mut code = BitGrid::filled(2, rows, cols, false);
    let mut mask = BitGrid::filled(2, rows, cols, false);
    for r in 0..rows {
        for c in 0..cols {
            let (cy, cx) = texture.patch_centre(geometry, r, c);
            let (re_bit, im_bit) = quantize_phase(response_at(
                &centred,
                texture.rows,
                texture.cols,
                kernel,
                cy,
                cx,
            ));
            code.set(0, r, c, re_bit);
            code.set(1, r, c, im_bit);
            let ok = usable_fraction(texture, kernel, cy, cx) >= MIN_USABLE_SUPPORT;
            mask.set(0, r, c, ok);
            mask.set(1, r, c, ok);
        }
    }
    PackedTemplate::pack(&code, &mask, *geometry)
}

/// Encodes with all three filters, strips boundaries, and stacks: returns
/// the three single-resolution templates and the multi-resolution one.
pub fn encode_all(
    texture: &NormalizedTexture,
    bank: &FilterBank,
    geometry: &TemplateGeometry,
    identity_id: &str,
    sample_id: &str,
) -> Result<([PackedTemplate; 3], PackedTemplate)> {
    let single = (0..3)
        .map(|i| {
            encode(texture, bank, i, geometry)?
                .strip_boundaries()
                .map(|t| t.with_ids(identity_id, sample_id))
        })
        .collect::<Result<Vec<_>>>()?;
    let multi = PackedTemplate::stack_resolutions(&single[0], &single[1], &single[2])?;
    let single: [PackedTemplate; 3] = single.try_into().expect("three filters");
    Ok((single, multi))
}
