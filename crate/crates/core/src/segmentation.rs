//! Two-layer foreground/background labeling posed as MAP inference on a
//! 4-connected MRF and solved with max-product (min-sum) loopy belief
//! propagation.
//!
//! Unaries come from a per-pixel background depth model (color similarity for
//! depth holes); pairwise terms are a contrast-sensitive Potts penalty. The
//! exhaustive [`brute_force_map`] solver doubles as the test oracle.

use std::io::{self, Write};

use thiserror::Error;

use crate::geometry::{RgbdFrame, MAX_DEPTH_MM};

pub const BACKGROUND: u8 = 0;
pub const FOREGROUND: u8 = 1;

/// Largest grid the exhaustive solver will accept.
pub const BRUTE_FORCE_MAX_PIXELS: usize = 20;

#[derive(Debug, Error)]
pub enum SegmentationError {
    #[error("background model error: {0}")]
    Model(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("grid of {pixels} pixels too large for exhaustive solver (max {BRUTE_FORCE_MAX_PIXELS})")]
    OracleTooLarge { pixels: usize },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Per-pixel foreground/background assignment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelField {
    pub width: u32,
    pub height: u32,
    /// Row-major labels, each [`BACKGROUND`] or [`FOREGROUND`].
    pub labels: Vec<u8>,
}

impl LabelField {
    pub fn all_background(width: u32, height: u32) -> Self {
        Self { width, height, labels: vec![BACKGROUND; width as usize * height as usize] }
    }

    pub fn from_labels(width: u32, height: u32, labels: Vec<u8>) -> Result<Self, SegmentationError> {
        if labels.len() != width as usize * height as usize {
            return Err(SegmentationError::ShapeMismatch(format!(
                "{} labels for {width}x{height} field",
                labels.len()
            )));
        }
        if labels.iter().any(|&l| l > 1) {
            return Err(SegmentationError::ShapeMismatch("labels must be 0 or 1".into()));
        }
        Ok(Self { width, height, labels })
    }

    #[inline]
    pub fn index(&self, u: u32, v: u32) -> usize {
        v as usize * self.width as usize + u as usize
    }

    #[inline]
    pub fn label_at(&self, u: u32, v: u32) -> u8 {
        self.labels[self.index(u, v)]
    }

    #[inline]
    pub fn is_foreground(&self, u: u32, v: u32) -> bool {
        self.label_at(u, v) == FOREGROUND
    }

    pub fn set_foreground(&mut self, u: u32, v: u32) {
        let i = self.index(u, v);
        self.labels[i] = FOREGROUND;
    }

    pub fn foreground_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l == FOREGROUND).count()
    }
}

/// Per-pixel background depth statistics in millimeters.
#[derive(Debug, Clone)]
pub struct BackgroundModel {
    pub width: u32,
    pub height: u32,
    pub mean_depth: Vec<f64>,
    pub depth_sigma: Vec<f64>,
}

/// Tunables for unary and pairwise potential construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationParams {
    /// Scale on the clipped depth residual cost.
    pub lambda_d: f64,
    /// Residual clip, in background sigmas.
    pub tau_d: f64,
    /// Potts penalty at zero contrast.
    pub w_p: f64,
    /// Depth-contrast attenuation scale, millimeters.
    pub sigma_depth_mm: f64,
    /// Color-contrast attenuation scale (L1 over RGB).
    pub sigma_color: f64,
    /// Lower bound on fitted background sigma, millimeters.
    pub sigma_floor_mm: f64,
    /// Sigma assigned to never-observed background pixels, millimeters.
    pub default_sigma_mm: f64,
    /// Half-width of the window used to gather background color samples
    /// around a depth hole.
    pub hole_window_radius: u32,
    /// Default message-passing rounds for [`lbp_map`].
    pub iterations: u32,
}

impl Default for SegmentationParams {
    fn default() -> Self {
        Self {
            lambda_d: 1.0,
            tau_d: 3.0,
            w_p: 2.0,
            sigma_depth_mm: 30.0,
            sigma_color: 30.0,
            sigma_floor_mm: 5.0,
            default_sigma_mm: 50.0,
            hole_window_radius: 2,
            iterations: 10,
        }
    }
}

/// Pairwise-grid MRF over {background, foreground} labels.
///
/// Horizontal edge `(u,v)-(u+1,v)` weights live at `h_weights[v*(w-1)+u]`,
/// vertical edge `(u,v)-(u,v+1)` weights at `v_weights[v*w+u]`.
#[derive(Debug, Clone)]
pub struct MrfModel {
    pub width: u32,
    pub height: u32,
    /// Row-major `[background, foreground]` costs.
    pub unary: Vec<[f64; 2]>,
    pub h_weights: Vec<f64>,
    pub v_weights: Vec<f64>,
}

impl MrfModel {
    pub fn new(
        width: u32,
        height: u32,
        unary: Vec<[f64; 2]>,
        h_weights: Vec<f64>,
        v_weights: Vec<f64>,
    ) -> Result<Self, SegmentationError> {
        let (w, h) = (width as usize, height as usize);
        if unary.len() != w * h {
            return Err(SegmentationError::ShapeMismatch(format!(
                "{} unary entries for {w}x{h} grid",
                unary.len()
            )));
        }
        if h_weights.len() != w.saturating_sub(1) * h || v_weights.len() != w * h.saturating_sub(1) {
            return Err(SegmentationError::ShapeMismatch("edge array sizes do not match grid".into()));
        }
        let finite_nonneg = |x: &f64| x.is_finite() && *x >= 0.0;
        if !unary.iter().flatten().all(finite_nonneg)
            || !h_weights.iter().all(finite_nonneg)
            || !v_weights.iter().all(finite_nonneg)
        {
            return Err(SegmentationError::InvalidModel("costs must be finite and non-negative".into()));
        }
        Ok(Self { width, height, unary, h_weights, v_weights })
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// `2wh − w − h` for a full 4-connected grid.
    pub fn edge_count(&self) -> usize {
        self.h_weights.len() + self.v_weights.len()
    }
}

/// Fits per-pixel mean and standard deviation of the observed nonzero depths.
///
/// Pixels never observed get the default sigma and the maximum depth as mean;
/// all sigmas are floored at `sigma_floor_mm`.
pub fn fit_background(
    frames: &[RgbdFrame],
    params: &SegmentationParams,
) -> Result<BackgroundModel, SegmentationError> {
    let first = frames
        .first()
        .ok_or_else(|| SegmentationError::Model("no frames to fit".into()))?;
    let (width, height) = (first.intrinsics.width, first.intrinsics.height);
    let n = width as usize * height as usize;
    for f in frames {
        if f.intrinsics.width != width || f.intrinsics.height != height {
            return Err(SegmentationError::ShapeMismatch(format!(
                "frame {}x{} does not match {}x{}",
                f.intrinsics.width, f.intrinsics.height, width, height
            )));
        }
    }
    let mut count = vec![0u32; n];
    let mut sum = vec![0.0f64; n];
    let mut sumsq = vec![0.0f64; n];
    for f in frames {
        for (i, &d) in f.depth.iter().enumerate() {
            if d != 0 {
                let d = d as f64;
                count[i] += 1;
                sum[i] += d;
                sumsq[i] += d * d;
            }
        }
    }
    let mut mean_depth = vec![0.0f64; n];
    let mut depth_sigma = vec![0.0f64; n];
    for i in 0..n {
        if count[i] == 0 {
            mean_depth[i] = MAX_DEPTH_MM as f64;
            depth_sigma[i] = params.default_sigma_mm;
        } else {
            let c = count[i] as f64;
            let mean = sum[i] / c;
            mean_depth[i] = mean;
            let var = if count[i] >= 2 {
                ((sumsq[i] - sum[i] * mean).max(0.0)) / (c - 1.0)
            } else {
                0.0
            };
            depth_sigma[i] = var.sqrt();
        }
        depth_sigma[i] = depth_sigma[i].max(params.sigma_floor_mm);
    }
    Ok(BackgroundModel { width, height, mean_depth, depth_sigma })
}

/// Builds unary and pairwise potentials for one frame against the background
/// model.
///
/// Valid-depth pixels get a clipped depth-residual unary; holes fall back to
/// color similarity against confident background samples in a local window.
/// Edge weights are `w_p · exp(−|Δd|/σ_d − ‖Δc‖₁/σ_c)`.
pub fn build_model(
    frame: &RgbdFrame,
    bg: &BackgroundModel,
    params: &SegmentationParams,
) -> Result<MrfModel, SegmentationError> {
    let (width, height) = (frame.intrinsics.width, frame.intrinsics.height);
    if bg.width != width || bg.height != height {
        return Err(SegmentationError::ShapeMismatch(format!(
            "background model {}x{} does not match frame {}x{}",
            bg.width, bg.height, width, height
        )));
    }
    let (w, h) = (width as usize, height as usize);
    let clip = |resid: f64| resid.min(params.tau_d);
    let mut unary = vec![[0.0f64; 2]; w * h];
    for v in 0..h {
        for u in 0..w {
            let i = v * w + u;
            let d = frame.depth[i];
            let costs = if d != 0 {
                let resid = (d as f64 - bg.mean_depth[i]).abs() / bg.depth_sigma[i];
                let c = params.lambda_d * clip(resid);
                [c, params.lambda_d * params.tau_d - c]
            } else {
                hole_unary(frame, bg, params, u as u32, v as u32)
            };
            unary[i] = costs;
        }
    }

    let contrast = |i: usize, j: usize| -> f64 {
        let (di, dj) = (frame.depth[i], frame.depth[j]);
        // A hole on either side leaves only color evidence for the edge.
        let depth_term = if di != 0 && dj != 0 {
            (di as f64 - dj as f64).abs() / params.sigma_depth_mm
        } else {
            0.0
        };
        let color_term = color_l1(&frame.color, i, j) / params.sigma_color;
        params.w_p * (-(depth_term + color_term)).exp()
    };
    let mut h_weights = vec![0.0f64; (w - 1) * h];
    let mut v_weights = vec![0.0f64; w * (h - 1)];
    for v in 0..h {
        for u in 0..w - 1 {
            h_weights[v * (w - 1) + u] = contrast(v * w + u, v * w + u + 1);
        }
    }
    for v in 0..h - 1 {
        for u in 0..w {
            v_weights[v * w + u] = contrast(v * w + u, (v + 1) * w + u);
        }
    }
    MrfModel::new(width, height, unary, h_weights, v_weights)
}

fn color_l1(color: &[u8], i: usize, j: usize) -> f64 {
    let (a, b) = (&color[3 * i..3 * i + 3], &color[3 * j..3 * j + 3]);
    (a[0] as i32 - b[0] as i32).abs() as f64
        + (a[1] as i32 - b[1] as i32).abs() as f64
        + (a[2] as i32 - b[2] as i32).abs() as f64
}

/// Color-similarity unary for a depth hole, from confident background samples
/// in the surrounding window. No samples yields a neutral cost pair.
fn hole_unary(frame: &RgbdFrame, bg: &BackgroundModel, params: &SegmentationParams, u: u32, v: u32) -> [f64; 2] {
    let (w, h) = (frame.intrinsics.width as i64, frame.intrinsics.height as i64);
    let r = params.hole_window_radius as i64;
    let (cu, cv) = (u as i64, v as i64);
    let mut sum = [0.0f64; 3];
    let mut n = 0u32;
    for q in (cv - r).max(0)..=(cv + r).min(h - 1) {
        for p in (cu - r).max(0)..=(cu + r).min(w - 1) {
            let i = (q * w + p) as usize;
            let d = frame.depth[i];
            if d != 0 && (d as f64 - bg.mean_depth[i]).abs() <= bg.depth_sigma[i] {
                sum[0] += frame.color[3 * i] as f64;
                sum[1] += frame.color[3 * i + 1] as f64;
                sum[2] += frame.color[3 * i + 2] as f64;
                n += 1;
            }
        }
    }
    let neutral = params.lambda_d * params.tau_d / 2.0;
    if n == 0 {
        return [neutral, neutral];
    }
    let i = (cv * w + cu) as usize;
    let dist = (frame.color[3 * i] as f64 - sum[0] / n as f64).abs()
        + (frame.color[3 * i + 1] as f64 - sum[1] / n as f64).abs()
        + (frame.color[3 * i + 2] as f64 - sum[2] / n as f64).abs();
    let c = params.lambda_d * (dist / params.sigma_color).min(params.tau_d);
    [c, params.lambda_d * params.tau_d - c]
}

/// Min-sum loopy belief propagation on the 4-connected grid, synchronous
/// schedule, decoded after `iterations` rounds. Ties decode as background.
///
/// With two labels and Potts edges, a normalized message reduces to the single
/// scalar `clamp(Δunary + Σ incoming, ±weight)`, which this implementation
/// exploits; decisions match two-vector min-sum with per-round normalization.
pub fn lbp_map(model: &MrfModel, iterations: u32) -> LabelField {
    let (w, h) = (model.width as usize, model.height as usize);
    let n = w * h;
    // Foreground-minus-background unary differences.
    let delta: Vec<f64> = model.unary.iter().map(|u| u[1] - u[0]).collect();

    // Incoming message per direction, indexed by recipient pixel.
    let mut from_left = vec![0.0f64; n];
    let mut from_right = vec![0.0f64; n];
    let mut from_up = vec![0.0f64; n];
    let mut from_down = vec![0.0f64; n];
    let mut next_left = vec![0.0f64; n];
    let mut next_right = vec![0.0f64; n];
    let mut next_up = vec![0.0f64; n];
    let mut next_down = vec![0.0f64; n];

    for _ in 0..iterations {
        for v in 0..h {
            let row = v * w;
            for u in 0..w {
                let i = row + u;
                let total = delta[i] + from_left[i] + from_right[i] + from_up[i] + from_down[i];
                if u + 1 < w {
                    let lam = model.h_weights[v * (w - 1) + u];
                    next_left[i + 1] = (total - from_right[i]).clamp(-lam, lam);
                }
                if u > 0 {
                    let lam = model.h_weights[v * (w - 1) + u - 1];
                    next_right[i - 1] = (total - from_left[i]).clamp(-lam, lam);
                }
                if v + 1 < h {
                    let lam = model.v_weights[i];
                    next_up[i + w] = (total - from_down[i]).clamp(-lam, lam);
                }
                if v > 0 {
                    let lam = model.v_weights[i - w];
                    next_down[i - w] = (total - from_up[i]).clamp(-lam, lam);
                }
            }
        }
        std::mem::swap(&mut from_left, &mut next_left);
        std::mem::swap(&mut from_right, &mut next_right);
        std::mem::swap(&mut from_up, &mut next_up);
        std::mem::swap(&mut from_down, &mut next_down);
    }

    let mut labels = vec![BACKGROUND; n];
    for i in 0..n {
        let belief = delta[i] + from_left[i] + from_right[i] + from_up[i] + from_down[i];
        if belief < 0.0 {
            labels[i] = FOREGROUND;
        }
    }
    LabelField { width: model.width, height: model.height, labels }
}

/// Exhaustive minimum-energy labeling for grids of at most
/// [`BRUTE_FORCE_MAX_PIXELS`] pixels; ties resolve to the lexicographically
/// first labeling.
pub fn brute_force_map(model: &MrfModel) -> Result<LabelField, SegmentationError> {
    let n = model.pixel_count();
    if n > BRUTE_FORCE_MAX_PIXELS {
        return Err(SegmentationError::OracleTooLarge { pixels: n });
    }
    let mut best = vec![BACKGROUND; n];
    let mut best_energy = f64::INFINITY;
    let mut labels = vec![BACKGROUND; n];
    for code in 0u32..(1u32 << n) {
        for (i, l) in labels.iter_mut().enumerate() {
            *l = ((code >> (n - 1 - i)) & 1) as u8;
        }
        let e = energy_of(model, &labels);
        if e < best_energy {
            best_energy = e;
            best.copy_from_slice(&labels);
        }
    }
    Ok(LabelField { width: model.width, height: model.height, labels: best })
}

/// Total cost of a labeling: selected unaries plus the weight of every edge
/// whose endpoints disagree.
pub fn energy(model: &MrfModel, labels: &LabelField) -> Result<f64, SegmentationError> {
    if labels.width != model.width || labels.height != model.height {
        return Err(SegmentationError::ShapeMismatch(format!(
            "labels {}x{} vs model {}x{}",
            labels.width, labels.height, model.width, model.height
        )));
    }
    Ok(energy_of(model, &labels.labels))
}

fn energy_of(model: &MrfModel, labels: &[u8]) -> f64 {
    let (w, h) = (model.width as usize, model.height as usize);
    let mut e = 0.0;
    for (i, &l) in labels.iter().enumerate() {
        e += model.unary[i][l as usize];
    }
    for v in 0..h {
        for u in 0..w - 1 {
            if labels[v * w + u] != labels[v * w + u + 1] {
                e += model.h_weights[v * (w - 1) + u];
            }
        }
    }
    for v in 0..h - 1 {
        for u in 0..w {
            if labels[v * w + u] != labels[(v + 1) * w + u] {
                e += model.v_weights[v * w + u];
            }
        }
    }
    e
}

/// Writes a binary PGM (P5) mask, foreground as 255.
pub fn write_pgm<W: Write>(w: &mut W, field: &LabelField) -> Result<(), SegmentationError> {
    write!(w, "P5\n{} {}\n255\n", field.width, field.height)?;
    let bytes: Vec<u8> = field.labels.iter().map(|&l| if l == FOREGROUND { 255 } else { 0 }).collect();
    w.write_all(&bytes)?;
    Ok(())
}

const BGM_MAGIC: &[u8] = b"BGM1\n";

/// Background-model dump: magic, ASCII dimensions, then mean and sigma rasters
/// as little-endian f64.
pub fn write_background<W: Write>(w: &mut W, bg: &BackgroundModel) -> Result<(), SegmentationError> {
    w.write_all(BGM_MAGIC)?;
    writeln!(w, "{} {}", bg.width, bg.height)?;
    for value in bg.mean_depth.iter().chain(bg.depth_sigma.iter()) {
        w.write_all(&value.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_background<R: io::Read>(r: &mut R) -> Result<BackgroundModel, SegmentationError> {
    let mut reader = io::BufReader::new(r);
    let mut magic = [0u8; 5];
    io::Read::read_exact(&mut reader, &mut magic)?;
    if magic != BGM_MAGIC {
        return Err(SegmentationError::Model("bad magic, not a .bgm file".into()));
    }
    let mut header = String::new();
    io::BufRead::read_line(&mut reader, &mut header)?;
    let dims: Vec<&str> = header.split_whitespace().collect();
    if dims.len() != 2 {
        return Err(SegmentationError::Model("bad .bgm header".into()));
    }
    let width: u32 = dims[0].parse().map_err(|_| SegmentationError::Model("bad width".into()))?;
    let height: u32 = dims[1].parse().map_err(|_| SegmentationError::Model("bad height".into()))?;
    let n = width as usize * height as usize;
    let mut read_raster = || -> Result<Vec<f64>, SegmentationError> {
        let mut buf = vec![0u8; 8 * n];
        io::Read::read_exact(&mut reader, &mut buf)?;
        Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    };
    let mean_depth = read_raster()?;
    let depth_sigma = read_raster()?;
    Ok(BackgroundModel { width, height, mean_depth, depth_sigma })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::CameraIntrinsics;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_frame(width: u32, height: u32, depth: impl Fn(u32, u32) -> u16) -> RgbdFrame {
        let k = CameraIntrinsics::new(100.0, 100.0, width as f64 / 2.0, height as f64 / 2.0, width, height).unwrap();
        let mut f = RgbdFrame::blank(k, 0, 0);
        for v in 0..height {
            for u in 0..width {
                let i = f.index(u, v);
                f.depth[i] = depth(u, v);
                f.color[3 * i] = 100;
                f.color[3 * i + 1] = 100;
                f.color[3 * i + 2] = 100;
            }
        }
        f
    }

    /// Reference two-vector min-sum message passing, optionally normalized by
    /// subtracting each message's minimum. Used to pin down the optimized
    /// scalar implementation.
    fn reference_lbp(model: &MrfModel, iterations: u32, normalize: bool) -> LabelField {
        let (w, h) = (model.width as usize, model.height as usize);
        let n = w * h;
        let neighbor = |u: usize, v: usize, dir: usize| -> Option<(usize, f64)> {
            match dir {
                0 if u > 0 => Some((v * w + u - 1, model.h_weights[v * (w - 1) + u - 1])),
                1 if u + 1 < w => Some((v * w + u + 1, model.h_weights[v * (w - 1) + u])),
                2 if v > 0 => Some(((v - 1) * w + u, model.v_weights[(v - 1) * w + u])),
                3 if v + 1 < h => Some(((v + 1) * w + u, model.v_weights[v * w + u])),
                _ => None,
            }
        };
        // msgs[dir][recipient] = two-vector message arriving from direction dir.
        let mut msgs = vec![vec![[0.0f64; 2]; n]; 4];
        let opposite = [1usize, 0, 3, 2];
        for _ in 0..iterations {
            let mut next = vec![vec![[0.0f64; 2]; n]; 4];
            for v in 0..h {
                for u in 0..w {
                    let s = v * w + u;
                    for dir in 0..4 {
                        let Some((t, lam)) = neighbor(u, v, dir) else { continue };
                        let mut base = [model.unary[s][0], model.unary[s][1]];
                        for d2 in 0..4 {
                            if d2 != opposite[dir] {
                                base[0] += msgs[d2][s][0];
                                base[1] += msgs[d2][s][1];
                            }
                        }
                        let mut m = [
                            base[0].min(base[1] + lam),
                            base[1].min(base[0] + lam),
                        ];
                        if normalize {
                            let lo = m[0].min(m[1]);
                            m = [m[0] - lo, m[1] - lo];
                        }
                        next[dir][t] = m;
                    }
                }
            }
            msgs = next;
        }
        let mut labels = vec![BACKGROUND; n];
        for i in 0..n {
            let mut b = [model.unary[i][0], model.unary[i][1]];
            for dir in 0..4 {
                b[0] += msgs[dir][i][0];
                b[1] += msgs[dir][i][1];
            }
            if b[1] < b[0] {
                labels[i] = FOREGROUND;
            }
        }
        LabelField { width: model.width, height: model.height, labels }
    }

    fn random_model(rng: &mut ChaCha8Rng, w: u32, h: u32) -> MrfModel {
        let n = (w * h) as usize;
        let unary: Vec<[f64; 2]> = (0..n).map(|_| [rng.gen_range(0.0..4.0), rng.gen_range(0.0..4.0)]).collect();
        let hw: Vec<f64> = (0..(w - 1) * h).map(|_| rng.gen_range(0.0..2.0)).collect();
        let vw: Vec<f64> = (0..w * (h - 1)).map(|_| rng.gen_range(0.0..2.0)).collect();
        MrfModel::new(w, h, unary, hw, vw).unwrap()
    }

    #[test]
    fn single_observation_floors_sigma() {
        let frame = small_frame(4, 3, |_, _| 2000);
        let bg = fit_background(&[frame], &SegmentationParams::default()).unwrap();
        assert!(bg.mean_depth.iter().all(|&m| m == 2000.0));
        assert!(bg.depth_sigma.iter().all(|&s| s == 5.0));
    }

    #[test]
    fn two_observations_average() {
        let a = small_frame(2, 2, |_, _| 1990);
        let b = small_frame(2, 2, |_, _| 2010);
        let bg = fit_background(&[a, b], &SegmentationParams::default()).unwrap();
        assert!(bg.mean_depth.iter().all(|&m| m == 2000.0));
    }

    #[test]
    fn never_observed_pixels_get_defaults() {
        let frame = small_frame(2, 2, |u, _| if u == 0 { 1500 } else { 0 });
        let bg = fit_background(&[frame], &SegmentationParams::default()).unwrap();
        assert_eq!(bg.mean_depth[1], MAX_DEPTH_MM as f64);
        assert_eq!(bg.depth_sigma[1], 50.0);
    }

    #[test]
    fn gaussian_noise_sigma_recovered_statistically() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let frames: Vec<RgbdFrame> = (0..10)
            .map(|_| {
                let noise: Vec<f64> = (0..16 * 16)
                    .map(|_| {
                        // Box-Muller keeps this oracle free of distribution deps.
                        let u1: f64 = rng.gen_range(1e-12..1.0);
                        let u2: f64 = rng.gen_range(0.0..1.0);
                        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
                    })
                    .collect();
                small_frame(16, 16, |u, v| {
                    let d = 2000.0 + 10.0 * noise[(v * 16 + u) as usize];
                    d.round().max(1.0) as u16
                })
            })
            .collect();
        let bg = fit_background(&frames, &SegmentationParams::default()).unwrap();
        let mean_sigma: f64 = bg.depth_sigma.iter().sum::<f64>() / bg.depth_sigma.len() as f64;
        assert!((mean_sigma - 10.0).abs() < 3.0, "mean fitted sigma {mean_sigma}");
    }

    #[test]
    fn empty_input_rejected() {
        assert!(matches!(
            fit_background(&[], &SegmentationParams::default()),
            Err(SegmentationError::Model(_))
        ));
    }

    #[test]
    fn pixel_at_background_mean_has_zero_cost() {
        let frame = small_frame(3, 3, |_, _| 2000);
        let params = SegmentationParams::default();
        let bg = fit_background(&[frame.clone()], &params).unwrap();
        let model = build_model(&frame, &bg, &params).unwrap();
        for costs in &model.unary {
            assert_eq!(costs[0], 0.0);
            assert_eq!(costs[1], params.lambda_d * params.tau_d);
        }
    }

    #[test]
    fn zero_contrast_edge_gets_full_weight() {
        let frame = small_frame(3, 3, |_, _| 2000);
        let params = SegmentationParams::default();
        let bg = fit_background(&[frame.clone()], &params).unwrap();
        let model = build_model(&frame, &bg, &params).unwrap();
        for &lam in model.h_weights.iter().chain(model.v_weights.iter()) {
            assert_eq!(lam, params.w_p);
        }
    }

    #[test]
    fn bump_pixel_favors_foreground_with_hand_computed_costs() {
        let bg_frame = small_frame(3, 3, |_, _| 2000);
        let params = SegmentationParams::default();
        let bg = fit_background(&[bg_frame], &params).unwrap();
        let frame = small_frame(3, 3, |u, v| if (u, v) == (1, 1) { 1500 } else { 2000 });
        let model = build_model(&frame, &bg, &params).unwrap();
        // Center pixel: |1500-2000|/5 = 100 sigmas, clipped at tau_d=3.
        let center = model.unary[4];
        assert_eq!(center[0], 3.0);
        assert_eq!(center[1], 0.0);
        assert!(center[1] < center[0]);
        // Neighbors sit exactly on the mean.
        assert_eq!(model.unary[1], [0.0, 3.0]);
        // Center-adjacent edge: |Δd| = 500mm, identical color.
        let lam = model.h_weights[1 * 2 + 0]; // edge (0,1)-(1,1)
        let expect = 2.0 * (-(500.0f64 / 30.0)).exp();
        assert!((lam - expect).abs() < 1e-12);
    }

    #[test]
    fn zero_pairwise_decodes_unary_argmin() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 30usize;
        let unary: Vec<[f64; 2]> = (0..n).map(|_| [rng.gen_range(0.0..4.0), rng.gen_range(0.0..4.0)]).collect();
        let model = MrfModel::new(6, 5, unary.clone(), vec![0.0; 25], vec![0.0; 24]).unwrap();
        let out = lbp_map(&model, 10);
        for i in 0..n {
            let expect = if unary[i][1] < unary[i][0] { FOREGROUND } else { BACKGROUND };
            assert_eq!(out.labels[i], expect);
        }
        // Exact tie decodes background.
        let tied = MrfModel::new(1, 1, vec![[1.5, 1.5]], vec![], vec![]).unwrap();
        assert_eq!(lbp_map(&tied, 5).labels[0], BACKGROUND);
    }

    #[test]
    fn chains_are_solved_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for len in [2u32, 3, 5, 8, 12] {
            for _ in 0..20 {
                let model = random_model(&mut rng, len, 1);
                let lbp = lbp_map(&model, len + 2);
                let exact = brute_force_map(&model).unwrap();
                let el = energy(&model, &lbp).unwrap();
                let eb = energy(&model, &exact).unwrap();
                assert_eq!(el, eb, "chain of {len} not exact");
            }
        }
    }

    #[test]
    fn small_grids_land_within_five_percent_of_optimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for trial in 0..100 {
            let w = rng.gen_range(2..=4);
            let h = rng.gen_range(2..=4);
            let model = random_model(&mut rng, w, h);
            let lbp = lbp_map(&model, 10);
            let exact = brute_force_map(&model).unwrap();
            let el = energy(&model, &lbp).unwrap();
            let eb = energy(&model, &exact).unwrap();
            assert!(el <= 1.05 * eb + 1e-12, "trial {trial}: {el} vs {eb}");
        }
    }

    #[test]
    fn scalar_and_reference_messages_decode_identically() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..25 {
            let model = random_model(&mut rng, 4, 3);
            let fast = lbp_map(&model, 8);
            let slow = reference_lbp(&model, 8, true);
            assert_eq!(fast.labels, slow.labels);
        }
    }

    #[test]
    fn normalization_leaves_decoded_energy_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        for _ in 0..25 {
            let model = random_model(&mut rng, 4, 4);
            let with = reference_lbp(&model, 6, true);
            let without = reference_lbp(&model, 6, false);
            let ew = energy(&model, &with).unwrap();
            let ewo = energy(&model, &without).unwrap();
            assert_eq!(ew, ewo);
        }
    }

    #[test]
    fn brute_force_ties_break_lexicographically() {
        let model = MrfModel::new(2, 2, vec![[0.0, 0.0]; 4], vec![0.0; 2], vec![0.0; 2]).unwrap();
        let out = brute_force_map(&model).unwrap();
        assert!(out.labels.iter().all(|&l| l == BACKGROUND));
    }

    #[test]
    fn brute_force_single_pixel_argmin() {
        let model = MrfModel::new(1, 1, vec![[2.0, 1.0]], vec![], vec![]).unwrap();
        assert_eq!(brute_force_map(&model).unwrap().labels, vec![FOREGROUND]);
    }

    #[test]
    fn brute_force_beats_sampled_labelings() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let model = random_model(&mut rng, 4, 4);
        let best = brute_force_map(&model).unwrap();
        let eb = energy(&model, &best).unwrap();
        for _ in 0..500 {
            let labels: Vec<u8> = (0..16).map(|_| rng.gen_range(0..=1u8)).collect();
            let field = LabelField::from_labels(4, 4, labels).unwrap();
            assert!(eb <= energy(&model, &field).unwrap() + 1e-12);
        }
    }

    #[test]
    fn brute_force_rejects_large_grids() {
        let model = MrfModel::new(5, 5, vec![[0.0, 0.0]; 25], vec![0.0; 20], vec![0.0; 20]).unwrap();
        assert!(matches!(brute_force_map(&model), Err(SegmentationError::OracleTooLarge { .. })));
    }

    #[test]
    fn energy_matches_independent_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let model = random_model(&mut rng, 5, 4);
        let labels: Vec<u8> = (0..20).map(|_| rng.gen_range(0..=1u8)).collect();
        let field = LabelField::from_labels(5, 4, labels.clone()).unwrap();

        // Second, independently structured summation: walk every pixel pair.
        let mut expect = 0.0;
        for (i, &l) in labels.iter().enumerate() {
            expect += model.unary[i][l as usize];
        }
        for v in 0..4usize {
            for u in 0..5usize {
                let i = v * 5 + u;
                if u + 1 < 5 && labels[i] != labels[i + 1] {
                    expect += model.h_weights[v * 4 + u];
                }
                if v + 1 < 4 && labels[i] != labels[i + 5] {
                    expect += model.v_weights[i];
                }
            }
        }
        assert_eq!(energy(&model, &field).unwrap(), expect);
    }

    #[test]
    fn energy_of_all_background_on_zero_model_is_zero() {
        let model = MrfModel::new(3, 3, vec![[0.0, 1.0]; 9], vec![0.5; 6], vec![0.5; 6]).unwrap();
        let field = LabelField::all_background(3, 3);
        assert_eq!(energy(&model, &field).unwrap(), 0.0);
    }

    #[test]
    fn single_differing_edge_adds_its_weight() {
        let mut hw = vec![0.25; 2];
        hw[0] = 0.75;
        let model = MrfModel::new(3, 1, vec![[0.0, 0.0]; 3], hw, vec![]).unwrap();
        let field = LabelField::from_labels(3, 1, vec![1, 0, 0]).unwrap();
        assert_eq!(energy(&model, &field).unwrap(), 0.75);
    }

    #[test]
    fn energy_shape_mismatch_rejected() {
        let model = MrfModel::new(2, 2, vec![[0.0, 0.0]; 4], vec![0.0; 2], vec![0.0; 2]).unwrap();
        let field = LabelField::all_background(3, 3);
        assert!(matches!(energy(&model, &field), Err(SegmentationError::ShapeMismatch(_))));
    }

    #[test]
    fn lbp_output_dimensions_match_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let model = random_model(&mut rng, 7, 3);
        let out = lbp_map(&model, 3);
        assert_eq!((out.width, out.height), (7, 3));
        assert_eq!(out.labels.len(), 21);
    }

    #[test]
    fn background_model_file_round_trip() {
        let frame = small_frame(4, 3, |u, v| (1000 + u * 10 + v) as u16);
        let bg = fit_background(&[frame], &SegmentationParams::default()).unwrap();
        let mut buf = Vec::new();
        write_background(&mut buf, &bg).unwrap();
        let back = read_background(&mut buf.as_slice()).unwrap();
        assert_eq!(back.mean_depth, bg.mean_depth);
        assert_eq!(back.depth_sigma, bg.depth_sigma);
    }

    #[test]
    fn pgm_header_and_payload() {
        let mut field = LabelField::all_background(2, 2);
        field.set_foreground(1, 0);
        let mut buf = Vec::new();
        write_pgm(&mut buf, &field).unwrap();
        assert_eq!(buf, b"P5\n2 2\n255\n\x00\xff\x00\x00");
    }
}
