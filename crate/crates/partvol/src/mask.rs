//! 3D-aware semantic mask rendering.
//!
//! Per pixel, each part k accumulates an initial mask value
//! `m_init_k = sum_i w_i * sigma_k_i` from its own sampled density, where
//! the weights come from the transmittance profile of the fused density.
//! A softmax over parts turns the initial values into the mask vector. The
//! uniform mode (`w_i = 1`) is the ablation baseline: it ignores occlusion,
//! so parts hidden behind others still accumulate mask mass.
//!
//! The high-resolution mask is composed as `upsample(m) + delta`, where the
//! residual is an input here (a learned network produces it upstream in the
//! full system). No renormalization is applied after composition.

use crate::error::{Error, Result};
use crate::render::WeightProfile;

/// Weighting mode for the initial mask accumulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskWeightMode {
    /// Transmittance-based weights from the fused density volume.
    NerfWeights,
    /// All weights 1, the occlusion-unaware ablation.
    Uniform,
}

/// Initial (pre-softmax) mask values for one pixel.
///
/// `part_densities` holds K lists of per-sample densities, one per part,
/// each of the profile's length. Inactive parts pass all-zero lists.
pub fn init_mask_pixel(
    part_densities: &[Vec<f64>],
    weights: &WeightProfile,
    mode: MaskWeightMode,
) -> Result<Vec<f64>> {
    let n = weights.weights.len();
    let mut m_init = Vec::with_capacity(part_densities.len());
    for dens in part_densities {
        if dens.len() != n {
            return Err(Error::LengthMismatch {
                what: "per-part density list",
                expected: n,
                got: dens.len(),
            });
        }
        let acc = match mode {
            MaskWeightMode::NerfWeights => dens
                .iter()
                .zip(&weights.weights)
                .map(|(d, w)| d * w)
                .sum(),
            MaskWeightMode::Uniform => dens.iter().sum(),
        };
        m_init.push(acc);
    }
    Ok(m_init)
}

/// Numerically stable softmax over the per-part initial mask values.
pub fn softmax_mask(m_init: &[f64]) -> Vec<f64> {
    let max = m_init.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = m_init.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / total).collect()
}

/// Per-pixel mask vectors for a frame, h x w x K, row-major with the part
/// channel fastest. Each pixel sums to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskStack {
    w: usize,
    h: usize,
    k: usize,
    data: Vec<f64>,
    pub mode: MaskWeightMode,
}

impl MaskStack {
    pub fn new(w: usize, h: usize, k: usize, data: Vec<f64>, mode: MaskWeightMode) -> Result<Self> {
        if data.len() != w * h * k {
            return Err(Error::LengthMismatch {
                what: "mask stack",
                expected: w * h * k,
                got: data.len(),
            });
        }
        Ok(Self { w, h, k, data, mode })
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn parts(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn at(&self, v: usize, u: usize, part: usize) -> f64 {
        self.data[(v * self.w + u) * self.k + part]
    }

    /// Mask vector of one pixel, K contiguous values.
    #[inline]
    pub fn pixel(&self, v: usize, u: usize) -> &[f64] {
        let base = (v * self.w + u) * self.k;
        &self.data[base..base + self.k]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Per-pixel index of the strongest part; ties go to the lowest index.
    pub fn argmax_labels(&self) -> Vec<usize> {
        argmax_grid(&self.data, self.w, self.h, self.k)
    }

    /// Total mask mass per part (sum of the channel over all pixels).
    pub fn channel_areas(&self) -> Vec<f64> {
        let mut areas = vec![0.0; self.k];
        for px in self.data.chunks_exact(self.k) {
            for (a, v) in areas.iter_mut().zip(px) {
                *a += v;
            }
        }
        areas
    }
}

/// High-resolution mask stack composed from an upsampled stack and a
/// residual. Values may leave (0, 1); label export tolerates that.
#[derive(Debug, Clone, PartialEq)]
pub struct HiResMask {
    w: usize,
    h: usize,
    k: usize,
    pub scale: usize,
    data: Vec<f64>,
}

impl HiResMask {
    pub fn width(&self) -> usize {
        self.w
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn parts(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn at(&self, v: usize, u: usize, part: usize) -> f64 {
        self.data[(v * self.w + u) * self.k + part]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn argmax_labels(&self) -> Vec<usize> {
        argmax_grid(&self.data, self.w, self.h, self.k)
    }
}

/// Channelwise bilinear upsampling by an integer factor, with sample centers
/// at (i + 0.5) / n (align-corners = false). s = 1 is the identity.
pub fn upsample_bilinear(m: &MaskStack, s: usize) -> Result<Vec<f64>> {
    if s < 1 {
        return Err(Error::Config("upsample scale must be at least 1".into()));
    }
    let (w_in, h_in, k) = (m.w, m.h, m.k);
    let (w_out, h_out) = (w_in * s, h_in * s);
    let mut out = vec![0.0; w_out * h_out * k];
    let scale_inv = 1.0 / s as f64;
    for v_out in 0..h_out {
        let src_y = (v_out as f64 + 0.5) * scale_inv - 0.5;
        let y_clamped = src_y.clamp(0.0, (h_in - 1) as f64);
        let y0 = y_clamped.floor() as usize;
        let y1 = (y0 + 1).min(h_in - 1);
        let fy = y_clamped - y0 as f64;
        for u_out in 0..w_out {
            let src_x = (u_out as f64 + 0.5) * scale_inv - 0.5;
            let x_clamped = src_x.clamp(0.0, (w_in - 1) as f64);
            let x0 = x_clamped.floor() as usize;
            let x1 = (x0 + 1).min(w_in - 1);
            let fx = x_clamped - x0 as f64;
            let base = (v_out * w_out + u_out) * k;
            for ch in 0..k {
                let c00 = m.at(y0, x0, ch);
                let c10 = m.at(y0, x1, ch);
                let c01 = m.at(y1, x0, ch);
                let c11 = m.at(y1, x1, ch);
                let top = c00 + (c10 - c00) * fx;
                let bot = c01 + (c11 - c01) * fx;
                out[base + ch] = top + (bot - top) * fy;
            }
        }
    }
    Ok(out)
}

/// Composes the high-resolution mask `upsample(m) + delta`, elementwise,
/// without clamping or renormalization.
pub fn compose_hires_mask(m: &MaskStack, delta: &[f64], s: usize) -> Result<HiResMask> {
    let mut data = upsample_bilinear(m, s)?;
    if delta.len() != data.len() {
        return Err(Error::LengthMismatch {
            what: "mask residual",
            expected: data.len(),
            got: delta.len(),
        });
    }
    for (d, r) in data.iter_mut().zip(delta) {
        *d += r;
    }
    Ok(HiResMask {
        w: m.w * s,
        h: m.h * s,
        k: m.k,
        scale: s,
        data,
    })
}

fn argmax_grid(data: &[f64], w: usize, h: usize, k: usize) -> Vec<usize> {
    let mut labels = Vec::with_capacity(w * h);
    for px in data.chunks_exact(k) {
        let mut best = 0usize;
        for (i, &v) in px.iter().enumerate() {
            if v > px[best] {
                best = i;
            }
        }
        labels.push(best);
    }
    labels
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn profile(weights: Vec<f64>) -> WeightProfile {
        let transmittance = vec![1.0; weights.len()];
        WeightProfile {
            transmittance,
            weights,
        }
    }

    #[test]
    fn zero_densities_give_a_zero_init_vector() {
        let densities = vec![vec![0.0; 4]; 3];
        let p = profile(vec![0.25; 4]);
        let m = init_mask_pixel(&densities, &p, MaskWeightMode::NerfWeights).unwrap();
        assert_eq!(m, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn uniform_mode_sums_raw_densities() {
        let densities = vec![vec![0.5; 4]];
        let p = profile(vec![0.1; 4]);
        let m = init_mask_pixel(&densities, &p, MaskWeightMode::Uniform).unwrap();
        assert_eq!(m, vec![2.0]);
        let m = init_mask_pixel(&densities, &p, MaskWeightMode::NerfWeights).unwrap();
        assert!((m[0] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn length_mismatch_is_a_usage_error() {
        let densities = vec![vec![0.5; 3]];
        let p = profile(vec![0.1; 4]);
        assert!(matches!(
            init_mask_pixel(&densities, &p, MaskWeightMode::Uniform),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn softmax_of_equal_entries_is_uniform() {
        let m = softmax_mask(&[3.7; 13]);
        for v in &m {
            assert!((v - 1.0 / 13.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_hand_case() {
        let m = softmax_mask(&[std::f64::consts::LN_2, 0.0]);
        assert!((m[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((m[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let base = [0.1, 2.3, -1.0, 0.7];
        let shifted: Vec<f64> = base.iter().map(|v| v + 123.456).collect();
        let a = softmax_mask(&base);
        let b = softmax_mask(&shifted);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn upsample_identity_at_scale_one() {
        let stack = MaskStack::new(
            2,
            2,
            2,
            vec![0.1, 0.9, 0.4, 0.6, 0.8, 0.2, 0.3, 0.7],
            MaskWeightMode::NerfWeights,
        )
        .unwrap();
        let up = upsample_bilinear(&stack, 1).unwrap();
        assert_eq!(up, stack.data);
    }

    #[test]
    fn upsample_of_a_constant_stack_is_constant() {
        let stack =
            MaskStack::new(3, 3, 1, vec![0.25; 9], MaskWeightMode::Uniform).unwrap();
        let up = upsample_bilinear(&stack, 3).unwrap();
        assert!(up.iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn upsample_hand_case_with_half_pixel_centers() {
        // 2x2 single channel [[0, 1], [0, 1]] at s = 2: each row becomes
        // (0, 0.25, 0.75, 1).
        let stack = MaskStack::new(
            2,
            2,
            1,
            vec![0.0, 1.0, 0.0, 1.0],
            MaskWeightMode::Uniform,
        )
        .unwrap();
        let up = upsample_bilinear(&stack, 2).unwrap();
        for row in 0..4 {
            let r = &up[row * 4..(row + 1) * 4];
            assert_eq!(r, &[0.0, 0.25, 0.75, 1.0], "row {row}");
        }
    }

    #[test]
    fn zero_scale_is_rejected() {
        let stack = MaskStack::new(1, 1, 1, vec![1.0], MaskWeightMode::Uniform).unwrap();
        assert!(upsample_bilinear(&stack, 0).is_err());
    }

    #[test]
    fn compose_with_zero_residual_is_the_upsample() {
        let stack = MaskStack::new(
            2,
            2,
            1,
            vec![0.0, 1.0, 0.5, 0.25],
            MaskWeightMode::NerfWeights,
        )
        .unwrap();
        let up = upsample_bilinear(&stack, 2).unwrap();
        let hires = compose_hires_mask(&stack, &vec![0.0; up.len()], 2).unwrap();
        assert_eq!(hires.data(), up.as_slice());
    }

    #[test]
    fn compose_adds_the_residual_elementwise() {
        let stack = MaskStack::new(1, 1, 2, vec![0.4, 0.6], MaskWeightMode::Uniform).unwrap();
        let hires = compose_hires_mask(&stack, &[-0.1, 0.05], 1).unwrap();
        assert!((hires.at(0, 0, 0) - 0.3).abs() < 1e-15);
        assert!((hires.at(0, 0, 1) - 0.65).abs() < 1e-15);
    }

    #[test]
    fn compose_rejects_mismatched_residuals() {
        let stack = MaskStack::new(1, 1, 2, vec![0.4, 0.6], MaskWeightMode::Uniform).unwrap();
        assert!(matches!(
            compose_hires_mask(&stack, &[0.0; 3], 1),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn modes_agree_on_transparent_scenes() {
        // With per-sample optical depth at most 1e-6 the weights barely
        // deviate from their uniform-mode counterparts, so both modes
        // softmax to the uniform vector within 1e-4.
        let n = 16;
        let k = 5;
        let sigma_scale = 1e-6 / 0.1; // sigma * delta <= 1e-6
        let part_densities: Vec<Vec<f64>> = (0..k)
            .map(|part| {
                (0..n)
                    .map(|i| sigma_scale * ((part + i) % 3) as f64 / 3.0)
                    .collect()
            })
            .collect();
        let fused: Vec<f64> = (0..n)
            .map(|i| part_densities.iter().map(|d| d[i]).sum())
            .collect();
        let delta = vec![0.1; n];
        let profile = crate::render::nerf_weights(&fused, &delta).unwrap();
        let uniform_share = 1.0 / k as f64;
        for mode in [MaskWeightMode::NerfWeights, MaskWeightMode::Uniform] {
            let m_init = init_mask_pixel(&part_densities, &profile, mode).unwrap();
            let m = softmax_mask(&m_init);
            for &value in &m {
                assert!(
                    (value - uniform_share).abs() <= 1e-4,
                    "{mode:?}: {value} deviates from uniform"
                );
            }
        }
    }

    #[test]
    fn argmax_breaks_ties_toward_the_lowest_index() {
        let stack = MaskStack::new(
            1,
            3,
            8,
            [
                // one-hot at 5
                [0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0],
                // two-way tie between 3 and 7
                [0.0, 0.0, 0.0, 0.5, 0.0, 0.0, 0.0, 0.5],
                // uniform
                [0.125; 8],
            ]
            .concat(),
            MaskWeightMode::Uniform,
        )
        .unwrap();
        assert_eq!(stack.argmax_labels(), vec![5, 3, 0]);
    }

    proptest! {
        #[test]
        fn softmax_always_sums_to_one(values in proptest::collection::vec(-50.0f64..50.0, 1..20)) {
            let m = softmax_mask(&values);
            let total: f64 = m.iter().sum();
            prop_assert!((total - 1.0).abs() <= 1e-12);
            prop_assert!(m.iter().all(|&v| v > 0.0 && v <= 1.0));
        }

        #[test]
        fn upsampled_sum_to_one_survives_within_bilinear_tolerance(
            raw in proptest::collection::vec(0.01f64..5.0, 4 * 3),
            s in 1usize..4,
        ) {
            // Build a 2x2, 3-part stack of softmaxed pixels.
            let mut data = Vec::with_capacity(12);
            for px in raw.chunks_exact(3) {
                data.extend(softmax_mask(px));
            }
            let stack = MaskStack::new(2, 2, 3, data, MaskWeightMode::NerfWeights).unwrap();
            let hires = compose_hires_mask(&stack, &vec![0.0; 4 * s * s * 3], s).unwrap();
            for v in 0..hires.height() {
                for u in 0..hires.width() {
                    let total: f64 = (0..3).map(|k| hires.at(v, u, k)).sum();
                    prop_assert!((total - 1.0).abs() <= 1e-6);
                }
            }
        }
    }
}
