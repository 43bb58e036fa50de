//! Dense feature-grid kernels: bilinear sampling, the four-level feature
//! pyramid, deformable multi-level fusion with its gradient, and ROI
//! feature extraction.
//!
//! Grid coordinates put the center of cell `(i, j)` at `(x = j, y = i)`.
//! Pixel coordinates relate to grid coordinates of a map with stride `s`
//! through `grid = pixel / s - 0.5`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{arg, Result};
use crate::geometry::BBox;

/// `height x width x channels` grid, channel-fastest layout.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub stride: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(stride: usize, height: usize, width: usize, channels: usize) -> Result<Self> {
        if stride == 0 || height == 0 || width == 0 || channels == 0 {
            return Err(arg(format!(
                "feature map dimensions must be positive, got stride {stride}, {height}x{width}x{channels}"
            )));
        }
        Ok(Self {
            stride,
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        })
    }

    pub fn from_fn(
        stride: usize,
        height: usize,
        width: usize,
        channels: usize,
        f: impl Fn(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut m = Self::zeros(stride, height, width, channels)?;
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    m.data[(y * width + x) * channels + c] = f(y, x, c);
                }
            }
        }
        Ok(m)
    }

    pub fn cell(&self, y: usize, x: usize) -> &[f64] {
        let o = (y * self.width + x) * self.channels;
        &self.data[o..o + self.channels]
    }

    pub fn cell_mut(&mut self, y: usize, x: usize) -> &mut [f64] {
        let o = (y * self.width + x) * self.channels;
        &mut self.data[o..o + self.channels]
    }

    fn cell_checked(&self, y: isize, x: isize) -> Option<&[f64]> {
        (y >= 0 && x >= 0 && (y as usize) < self.height && (x as usize) < self.width)
            .then(|| self.cell(y as usize, x as usize))
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        let mut m = self.clone();
        m.data.iter_mut().for_each(|v| *v *= alpha);
        m
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

fn corners(x: f64, y: f64) -> ([isize; 2], [isize; 2], f64, f64) {
    let x0 = libm::floor(x);
    let y0 = libm::floor(y);
    ([x0 as isize, x0 as isize + 1], [y0 as isize, y0 as isize + 1], x - x0, y - y0)
}

/// Bilinear interpolation of the four surrounding cells; cells outside the
/// grid count as zero.
pub fn bilinear_sample(map: &FeatureMap, x: f64, y: f64) -> Vec<f64> {
    let mut out = vec![0.0; map.channels];
    if !(x.is_finite() && y.is_finite()) {
        return out;
    }
    let (xs, ys, fx, fy) = corners(x, y);
    let wx = [1.0 - fx, fx];
    let wy = [1.0 - fy, fy];
    for (a, &yy) in ys.iter().enumerate() {
        for (b, &xx) in xs.iter().enumerate() {
            let w = wy[a] * wx[b];
            if w == 0.0 {
                continue;
            }
            if let Some(cell) = map.cell_checked(yy, xx) {
                for (o, &v) in out.iter_mut().zip(cell) {
                    *o += w * v;
                }
            }
        }
    }
    out
}

/// Partial derivatives of [`bilinear_sample`] with respect to `x` and `y`.
fn bilinear_sample_grad(map: &FeatureMap, x: f64, y: f64) -> (Vec<f64>, Vec<f64>) {
    let mut dx = vec![0.0; map.channels];
    let mut dy = vec![0.0; map.channels];
    let (xs, ys, fx, fy) = corners(x, y);
    let wx = [1.0 - fx, fx];
    let wy = [1.0 - fy, fy];
    let dwx = [-1.0, 1.0];
    let dwy = [-1.0, 1.0];
    for (a, &yy) in ys.iter().enumerate() {
        for (b, &xx) in xs.iter().enumerate() {
            if let Some(cell) = map.cell_checked(yy, xx) {
                for ((gx, gy), &v) in dx.iter_mut().zip(dy.iter_mut()).zip(cell) {
                    *gx += wy[a] * dwx[b] * v;
                    *gy += dwy[a] * wx[b] * v;
                }
            }
        }
    }
    (dx, dy)
}

/// Source coordinate for output index `i` when resampling by `factor`.
fn source_coord(i: usize, factor: usize, len: usize) -> (usize, usize, f64) {
    let s = (i as f64 + 0.5) / factor as f64 - 0.5;
    let s = s.clamp(0.0, (len - 1) as f64);
    let lo = libm::floor(s) as usize;
    let hi = (lo + 1).min(len - 1);
    (lo, hi, s - lo as f64)
}

/// Half-pixel-aligned bilinear upsampling with edge clamping.
fn upsample(map: &FeatureMap, factor: usize) -> FeatureMap {
    let (h, w, c) = (map.height * factor, map.width * factor, map.channels);
    let mut out = FeatureMap {
        stride: map.stride / factor,
        height: h,
        width: w,
        channels: c,
        data: vec![0.0; h * w * c],
    };
    for y in 0..h {
        let (y0, y1, fy) = source_coord(y, factor, map.height);
        for x in 0..w {
            let (x0, x1, fx) = source_coord(x, factor, map.width);
            let cell = out.cell_mut(y, x);
            for (k, o) in cell.iter_mut().enumerate() {
                let v00 = map.cell(y0, x0)[k];
                let v01 = map.cell(y0, x1)[k];
                let v10 = map.cell(y1, x0)[k];
                let v11 = map.cell(y1, x1)[k];
                *o = (1.0 - fy) * ((1.0 - fx) * v00 + fx * v01) + fy * ((1.0 - fx) * v10 + fx * v11);
            }
        }
    }
    out
}

/// 2x2 max pooling with stride 2; trailing odd rows/columns form partial windows.
fn max_pool2(map: &FeatureMap) -> FeatureMap {
    let (h, w, c) = (map.height.div_ceil(2), map.width.div_ceil(2), map.channels);
    let mut out = FeatureMap {
        stride: map.stride * 2,
        height: h,
        width: w,
        channels: c,
        data: vec![f64::NEG_INFINITY; h * w * c],
    };
    for y in 0..map.height {
        for x in 0..map.width {
            let src = map.cell(y, x).to_vec();
            for (o, v) in out.cell_mut(y / 2, x / 2).iter_mut().zip(src) {
                *o = o.max(v);
            }
        }
    }
    out
}

/// Feature maps at strides 4, 8, 16 and 32.
#[derive(Debug, Clone, PartialEq)]
pub struct Pyramid {
    levels: Vec<FeatureMap>,
}

impl Pyramid {
    pub fn levels(&self) -> &[FeatureMap] {
        &self.levels
    }
}

impl core::ops::Deref for Pyramid {
    type Target = [FeatureMap];

    fn deref(&self) -> &[FeatureMap] {
        &self.levels
    }
}

/// Builds the stride 4/8/16/32 pyramid from a single stride-16 map:
/// x4 and x2 bilinear upsampling, passthrough, 2x2 max pooling.
pub fn build_pyramid(base: &FeatureMap) -> Result<Pyramid> {
    if base.stride != 16 {
        return Err(arg(format!("pyramid base must have stride 16, got {}", base.stride)));
    }
    Ok(Pyramid {
        levels: vec![upsample(base, 4), upsample(base, 2), base.clone(), max_pool2(base)],
    })
}

/// Sampling pattern and per-level learned terms of the deformable fusion.
/// Per-level arrays are indexed `level * K + k`.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformableParams {
    pub base_offsets: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    pub offsets: Vec<[f64; 2]>,
    pub modulation: Vec<f64>,
}

impl DeformableParams {
    /// One tap at the query point on every level, unit weight and modulation.
    pub fn identity(levels: usize) -> Self {
        Self {
            base_offsets: vec![[0.0, 0.0]],
            weights: vec![1.0],
            offsets: vec![[0.0, 0.0]; levels],
            modulation: vec![1.0; levels],
        }
    }

    /// Regular 3x3 kernel with uniform weights and no learned offsets.
    pub fn grid3x3(levels: usize) -> Self {
        let base_offsets: Vec<[f64; 2]> = (-1..=1)
            .flat_map(|dy| (-1..=1).map(move |dx| [dx as f64, dy as f64]))
            .collect();
        Self {
            weights: vec![1.0 / 9.0; 9],
            offsets: vec![[0.0, 0.0]; 9 * levels],
            modulation: vec![1.0; 9 * levels],
            base_offsets,
        }
    }

    pub fn kernel_size(&self) -> usize {
        self.base_offsets.len()
    }

    pub fn levels(&self) -> usize {
        self.offsets.len() / self.kernel_size().max(1)
    }

    /// Modulation in (0, 1) from unconstrained logits.
    pub fn modulation_from_logits(logits: &[f64]) -> Vec<f64> {
        logits.iter().map(|&z| 1.0 / (1.0 + libm::exp(-z))).collect()
    }

    pub fn validate(&self, levels: usize) -> Result<()> {
        let k = self.kernel_size();
        if k == 0 {
            return Err(arg("kernel needs at least one sampling location"));
        }
        if self.weights.len() != k {
            return Err(arg(format!("{} weights for {k} sampling locations", self.weights.len())));
        }
        if self.offsets.len() != k * levels || self.modulation.len() != k * levels {
            return Err(arg(format!(
                "per-level terms must have {} entries for {levels} levels",
                k * levels
            )));
        }
        if let Some(m) = self.modulation.iter().find(|m| !(**m >= 0.0)) {
            return Err(arg(format!("modulation {m} is negative")));
        }
        Ok(())
    }
}

fn check_levels(levels: &[FeatureMap]) -> Result<()> {
    let first = levels
        .first()
        .ok_or_else(|| arg("deformable fusion needs at least one level"))?;
    if levels.iter().any(|l| l.channels != first.channels) {
        return Err(arg("all levels must share the channel count"));
    }
    Ok(())
}

/// Position on level `j` of a point given in grid coordinates of the
/// reference level (the first one), aligned on cell centers.
fn rescale(point: f64, ref_stride: usize, stride: usize) -> f64 {
    (point + 0.5) * ref_stride as f64 / stride as f64 - 0.5
}

fn sample_point(levels: &[FeatureMap], params: &DeformableParams, j: usize, k: usize, p: (f64, f64)) -> (f64, f64) {
    let kk = params.kernel_size();
    let (rs, s) = (levels[0].stride, levels[j].stride);
    let off = params.offsets[j * kk + k];
    let base = params.base_offsets[k];
    (
        rescale(p.0, rs, s) + base[0] + off[0],
        rescale(p.1, rs, s) + base[1] + off[1],
    )
}

/// `(1/L) Σ_j Σ_k w_k · F^j(p + p_k + Δp_k^j) · Δm_k^j`.
pub fn deformable_fuse(levels: &[FeatureMap], params: &DeformableParams, p: (f64, f64)) -> Result<Vec<f64>> {
    check_levels(levels)?;
    params.validate(levels.len())?;
    let kk = params.kernel_size();
    let mut out = vec![0.0; levels[0].channels];
    for (j, level) in levels.iter().enumerate() {
        for k in 0..kk {
            let (x, y) = sample_point(levels, params, j, k, p);
            let scale = params.weights[k] * params.modulation[j * kk + k];
            if scale == 0.0 {
                continue;
            }
            for (o, v) in out.iter_mut().zip(bilinear_sample(level, x, y)) {
                *o += scale * v;
            }
        }
    }
    let inv_l = 1.0 / levels.len() as f64;
    out.iter_mut().for_each(|v| *v *= inv_l);
    Ok(out)
}

/// Gradients of `Σ_c upstream[c] · fuse(p)[c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformableGrads {
    pub offsets: Vec<[f64; 2]>,
    pub modulation: Vec<f64>,
    pub weights: Vec<f64>,
}

pub fn deformable_fuse_grad(
    levels: &[FeatureMap],
    params: &DeformableParams,
    p: (f64, f64),
    upstream: &[f64],
) -> Result<DeformableGrads> {
    check_levels(levels)?;
    params.validate(levels.len())?;
    if upstream.len() != levels[0].channels {
        return Err(arg(format!(
            "upstream has {} channels, maps have {}",
            upstream.len(),
            levels[0].channels
        )));
    }
    let kk = params.kernel_size();
    let inv_l = 1.0 / levels.len() as f64;
    let mut g = DeformableGrads {
        offsets: vec![[0.0, 0.0]; params.offsets.len()],
        modulation: vec![0.0; params.modulation.len()],
        weights: vec![0.0; kk],
    };
    let proj = |v: &[f64]| -> f64 { v.iter().zip(upstream).map(|(a, b)| a * b).sum() };
    for (j, level) in levels.iter().enumerate() {
        for k in 0..kk {
            let idx = j * kk + k;
            let (x, y) = sample_point(levels, params, j, k, p);
            let f = proj(&bilinear_sample(level, x, y));
            let (dx, dy) = bilinear_sample_grad(level, x, y);
            let w = params.weights[k];
            let m = params.modulation[idx];
            g.weights[k] += f * m * inv_l;
            g.modulation[idx] = w * f * inv_l;
            g.offsets[idx] = [w * m * proj(&dx) * inv_l, w * m * proj(&dy) * inv_l];
        }
    }
    Ok(g)
}

/// `out_size x out_size x channels` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub size: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Patch {
    pub fn at(&self, row: usize, col: usize) -> &[f64] {
        let o = (row * self.size + col) * self.channels;
        &self.data[o..o + self.channels]
    }
}

/// Samples one bilinear point at every bin center of an `out_size` grid laid
/// over `bbox` (pixel coordinates).
pub fn roi_extract(map: &FeatureMap, bbox: &BBox, out_size: usize) -> Result<Patch> {
    if !bbox.is_valid() {
        return Err(arg(format!("degenerate box {bbox:?}")));
    }
    if out_size == 0 {
        return Err(arg("ROI output size must be positive"));
    }
    let s = map.stride as f64;
    let (bw, bh) = (bbox.w / out_size as f64, bbox.h / out_size as f64);
    let mut data = Vec::with_capacity(out_size * out_size * map.channels);
    for r in 0..out_size {
        let py = bbox.y + (r as f64 + 0.5) * bh;
        for c in 0..out_size {
            let px = bbox.x + (c as f64 + 0.5) * bw;
            data.extend(bilinear_sample(map, px / s - 0.5, py / s - 0.5));
        }
    }
    Ok(Patch {
        size: out_size,
        channels: map.channels,
        data,
    })
}

/// Channel-wise spatial mean followed by channel-wise max; length `2C`.
pub fn patch_to_feature(patch: &Patch) -> Vec<f64> {
    let c = patch.channels;
    let mut mean = vec![0.0; c];
    let mut max = vec![f64::NEG_INFINITY; c];
    for cell in patch.data.chunks_exact(c) {
        for k in 0..c {
            mean[k] += cell[k];
            max[k] = max[k].max(cell[k]);
        }
    }
    let n = (patch.size * patch.size).max(1) as f64;
    mean.iter_mut().for_each(|v| *v /= n);
    mean.extend(max);
    mean
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(stride: usize, h: usize, w: usize, c: usize) -> FeatureMap {
        FeatureMap::from_fn(stride, h, w, c, |y, x, k| (y * 7 + x * 3 + k) as f64 * 0.1 - 1.0).unwrap()
    }

    #[test]
    fn bilinear_hits_cells_exactly() {
        let m = ramp(16, 5, 6, 2);
        assert_eq!(bilinear_sample(&m, 2.0, 3.0), m.cell(3, 2).to_vec());
    }

    #[test]
    fn bilinear_midpoint() {
        let m = FeatureMap::from_fn(16, 1, 2, 1, |_, x, _| x as f64).unwrap();
        assert_eq!(bilinear_sample(&m, 0.5, 0.0), vec![0.5]);
    }

    #[test]
    fn bilinear_far_outside_is_zero() {
        let m = ramp(16, 4, 4, 3);
        assert_eq!(bilinear_sample(&m, -50.0, 2.0), vec![0.0; 3]);
        assert_eq!(bilinear_sample(&m, 1.0, 1e6), vec![0.0; 3]);
    }

    #[test]
    fn pyramid_sizes() {
        let p = build_pyramid(&ramp(16, 16, 16, 2)).unwrap();
        let sizes: Vec<(usize, usize, usize)> = p.iter().map(|l| (l.stride, l.height, l.width)).collect();
        assert_eq!(sizes, vec![(4, 64, 64), (8, 32, 32), (16, 16, 16), (32, 8, 8)]);
        assert!(p.iter().all(|l| l.channels == 2));
    }

    #[test]
    fn pyramid_rejects_wrong_stride() {
        assert!(build_pyramid(&ramp(8, 4, 4, 1)).is_err());
    }

    #[test]
    fn pyramid_of_constant_is_constant() {
        let base = FeatureMap::from_fn(16, 6, 10, 3, |_, _, _| 2.5).unwrap();
        for l in build_pyramid(&base).unwrap().iter() {
            assert!(l.data.iter().all(|&v| (v - 2.5).abs() < 1e-12));
        }
    }

    #[test]
    fn max_pool_keeps_peak() {
        let base = FeatureMap::from_fn(16, 8, 8, 1, |y, x, _| if (y, x) == (5, 2) { 9.0 } else { 0.0 }).unwrap();
        let p = build_pyramid(&base).unwrap();
        assert_eq!(p[3].cell(2, 1), &[9.0]);
        assert_eq!(p[3].data.iter().copied().fold(f64::MIN, f64::max), 9.0);
    }

    #[test]
    fn upsampling_preserves_mean() {
        let base = ramp(16, 6, 10, 2);
        let p = build_pyramid(&base).unwrap();
        assert!((p[0].mean() - base.mean()).abs() < 1e-9);
        assert!((p[1].mean() - base.mean()).abs() < 1e-9);
        assert!(p[3].mean() >= base.mean());
    }

    #[test]
    fn identity_fusion_is_plain_sampling() {
        let m = ramp(16, 7, 9, 3);
        let levels = [m.clone()];
        let params = DeformableParams::identity(1);
        for &(x, y) in &[(2.0, 3.0), (1.25, 4.75), (0.0, 0.0), (7.9, 5.1)] {
            assert_eq!(deformable_fuse(&levels, &params, (x, y)).unwrap(), bilinear_sample(&m, x, y));
        }
    }

    #[test]
    fn zero_modulation_gives_zero() {
        let levels = [ramp(16, 5, 5, 2), ramp(32, 3, 3, 2)];
        let mut params = DeformableParams::grid3x3(2);
        params.modulation.iter_mut().for_each(|m| *m = 0.0);
        assert_eq!(deformable_fuse(&levels, &params, (2.0, 2.0)).unwrap(), vec![0.0; 2]);
    }

    #[test]
    fn two_constant_levels_average() {
        let a = FeatureMap::from_fn(16, 6, 6, 1, |_, _, _| 3.0).unwrap();
        let b = FeatureMap::from_fn(32, 3, 3, 1, |_, _, _| -1.0).unwrap();
        let out = deformable_fuse(&[a, b], &DeformableParams::identity(2), (2.0, 2.0)).unwrap();
        assert!((out[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn fusion_errors() {
        assert!(deformable_fuse(&[], &DeformableParams::identity(0), (0.0, 0.0)).is_err());
        let m = ramp(16, 4, 4, 1);
        let mut p = DeformableParams::identity(1);
        p.modulation[0] = -0.5;
        assert!(deformable_fuse(core::slice::from_ref(&m), &p, (0.0, 0.0)).is_err());
        assert!(deformable_fuse(&[m], &DeformableParams::identity(2), (0.0, 0.0)).is_err());
    }

    #[test]
    fn modulation_gradient_is_weighted_sample() {
        let levels = [ramp(16, 6, 6, 2), ramp(32, 3, 3, 2)];
        let mut params = DeformableParams::grid3x3(2);
        params.weights[4] = 0.7;
        let p = (2.3, 2.6);
        for c in 0..2 {
            let mut up = vec![0.0; 2];
            up[c] = 1.0;
            let g = deformable_fuse_grad(&levels, &params, p, &up).unwrap();
            for j in 0..2 {
                let (x, y) = sample_point(&levels, &params, j, 4, p);
                let f = bilinear_sample(&levels[j], x, y)[c];
                assert!((g.modulation[j * 9 + 4] - 0.7 * f / 2.0).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn weight_gradient_on_constant_maps() {
        let levels = [
            FeatureMap::from_fn(16, 8, 8, 1, |_, _, _| 1.5).unwrap(),
            FeatureMap::from_fn(32, 4, 4, 1, |_, _, _| 1.5).unwrap(),
        ];
        let mut params = DeformableParams::identity(2);
        params.modulation = vec![0.4, 0.9];
        let g = deformable_fuse_grad(&levels, &params, (3.0, 3.0), &[1.0]).unwrap();
        assert!((g.weights[0] - (0.4 + 0.9) * 1.5 / 2.0).abs() < 1e-14);
    }

    #[test]
    fn roi_of_constant_map() {
        let m = FeatureMap::from_fn(16, 8, 8, 2, |_, _, k| k as f64 + 0.5).unwrap();
        let patch = roi_extract(&m, &BBox::new(20.0, 30.0, 40.0, 25.0), 3).unwrap();
        for r in 0..3 {
            for c in 0..3 {
                let v = patch.at(r, c);
                assert!((v[0] - 0.5).abs() < 1e-14 && (v[1] - 1.5).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn roi_single_cell() {
        let m = ramp(16, 6, 6, 2);
        let patch = roi_extract(&m, &BBox::new(2.0 * 16.0, 3.0 * 16.0, 16.0, 16.0), 1).unwrap();
        assert_eq!(patch.at(0, 0), m.cell(3, 2));
    }

    #[test]
    fn roi_two_cells() {
        // columns valued 0 and 1; bin centers at grid x = 0.25 and 0.75
        let m = FeatureMap::from_fn(1, 2, 2, 1, |_, x, _| x as f64).unwrap();
        let patch = roi_extract(&m, &BBox::new(0.5, 0.5, 1.0, 1.0), 2).unwrap();
        assert!((patch.at(0, 0)[0] - 0.25).abs() < 1e-15);
        assert!((patch.at(0, 1)[0] - 0.75).abs() < 1e-15);
        assert!(roi_extract(&m, &BBox::new(0.0, 0.0, 0.0, 1.0), 2).is_err());
    }

    #[test]
    fn patch_feature_mean_and_max() {
        let constant = Patch {
            size: 2,
            channels: 2,
            data: vec![3.0, -1.0, 3.0, -1.0, 3.0, -1.0, 3.0, -1.0],
        };
        assert_eq!(patch_to_feature(&constant), vec![3.0, -1.0, 3.0, -1.0]);
        let peak = Patch {
            size: 2,
            channels: 1,
            data: vec![0.0, 0.0, 4.0, 0.0],
        };
        assert_eq!(patch_to_feature(&peak), vec![1.0, 4.0]);
        let permuted = Patch {
            size: 2,
            channels: 1,
            data: vec![4.0, 0.0, 0.0, 0.0],
        };
        assert_eq!(patch_to_feature(&permuted), patch_to_feature(&peak));
    }
}
