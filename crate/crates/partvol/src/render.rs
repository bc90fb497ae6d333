//! NeRF-style transmittance weighting and frame rendering.
//!
//! Along a ray with sampled densities sigma_i and spacings delta_i,
//!
//! ```text
//!   T_i = exp(-sum_{j<i} sigma_j * delta_j)
//!   w_i = T_i * (1 - exp(-sigma_i * delta_i))
//! ```
//!
//! and the rendered feature is `sum_i w_i * f_i` over the fused volume. The
//! weights always satisfy `sum_i w_i + T_{N+1} = 1`, so a transparent scene
//! renders to zero and an opaque one to a convex combination of sample
//! features.
//!
//! [`render_frame`] runs the whole per-pixel pipeline: ray generation,
//! sample placement, feature compositing and the semantic mask stack over
//! the same samples and weights. Pixels are independent; work is
//! parallelized per row and the output is bit-identical for any thread
//! count.

use rayon::prelude::*;

use crate::camera::{place_samples, CameraConfig, CameraPose, RayCaster, RaySampleBatch};
use crate::error::{Error, Result};
use crate::lifting::{
    sample_density, sample_feature, FeatureVolume, FusedVolume, GridGeom, LiftedPartVolume,
    MappingFn,
};
use crate::mask::{init_mask_pixel, softmax_mask, MaskStack, MaskWeightMode};
use crate::part::PartSet;

/// Transmittance and compositing weights along one ray.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightProfile {
    /// T_i, starting at exactly 1 and non-increasing.
    pub transmittance: Vec<f64>,
    /// w_i = T_i * (1 - exp(-sigma_i * delta_i)); sums to at most 1.
    pub weights: Vec<f64>,
}

fn validate_profile_inputs(sigma: &[f64], delta: &[f64]) -> Result<()> {
    if sigma.len() != delta.len() {
        return Err(Error::LengthMismatch {
            what: "sigma/delta lists",
            expected: sigma.len(),
            got: delta.len(),
        });
    }
    for (i, &s) in sigma.iter().enumerate() {
        if !s.is_finite() {
            return Err(Error::NonFinite("sampled density"));
        }
        if s < 0.0 {
            return Err(Error::NegativeDensity { index: i, value: s });
        }
    }
    for &d in delta {
        if !d.is_finite() || d <= 0.0 {
            return Err(Error::Config(format!(
                "sample spacing must be positive and finite, got {d}"
            )));
        }
    }
    Ok(())
}

/// Transmittance T_i = exp(-sum_{j<i} sigma_j delta_j); T_1 is exactly 1.
pub fn transmittance(sigma: &[f64], delta: &[f64]) -> Result<Vec<f64>> {
    validate_profile_inputs(sigma, delta)?;
    let mut out = Vec::with_capacity(sigma.len());
    let mut optical_depth = 0.0f64;
    for (&s, &d) in sigma.iter().zip(delta) {
        out.push((-optical_depth).exp());
        optical_depth += s * d;
    }
    Ok(out)
}

/// Compositing weights w_i = T_i (1 - exp(-sigma_i delta_i)).
pub fn nerf_weights(sigma: &[f64], delta: &[f64]) -> Result<WeightProfile> {
    let transmittance = transmittance(sigma, delta)?;
    let weights = sigma
        .iter()
        .zip(delta)
        .zip(&transmittance)
        .map(|((&s, &d), &t)| t * -(-s * d).exp_m1())
        .collect();
    Ok(WeightProfile {
        transmittance,
        weights,
    })
}

/// Composites the fused feature along a ray: samples fused density and
/// feature at every point, derives the weights from the fused density and
/// returns `sum_i w_i f_i`. A miss batch yields the zero vector.
pub fn render_pixel_feature(batch: &RaySampleBatch, fused: &FusedVolume<'_>) -> Result<Vec<f64>> {
    let channels = fused.channels();
    if !batch.hit {
        return Ok(vec![0.0; channels]);
    }
    let mut sigma = Vec::with_capacity(batch.points.len());
    for p in &batch.points {
        sigma.push(sample_density(fused, *p)?);
    }
    let profile = nerf_weights(&sigma, &batch.delta)?;
    let mut out = vec![0.0; channels];
    let mut feat = vec![0.0; channels];
    for (p, &w) in batch.points.iter().zip(&profile.weights) {
        sample_feature(fused, *p, &mut feat)?;
        for (o, f) in out.iter_mut().zip(&feat) {
            *o += w * f;
        }
    }
    Ok(out)
}

/// Which parts participate in fusion and mask rendering.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ActiveParts {
    All,
    /// Part indices; deduplicated and sorted on resolution.
    Subset(Vec<usize>),
}

impl ActiveParts {
    pub fn resolve(&self, part_count: usize) -> Result<Vec<usize>> {
        let mut indices = match self {
            ActiveParts::All => (0..part_count).collect::<Vec<_>>(),
            ActiveParts::Subset(list) => {
                let mut v = list.clone();
                v.sort_unstable();
                v.dedup();
                v
            }
        };
        if indices.is_empty() {
            return Err(Error::EmptyActiveSet);
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= part_count) {
            return Err(Error::Config(format!(
                "active part index {bad} out of range for {part_count} parts"
            )));
        }
        indices.shrink_to_fit();
        Ok(indices)
    }
}

/// Rendering switches: mapping function, mask weighting, active subset,
/// grid depth and worker count.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderOptions {
    pub mapping: MappingFn,
    pub mask_mode: MaskWeightMode,
    pub active: ActiveParts,
    /// Depth resolution of the lifted grid (z extent).
    pub grid_z: usize,
    /// Worker threads; 0 uses the global rayon pool.
    pub threads: usize,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            mapping: MappingFn::default(),
            mask_mode: MaskWeightMode::NerfWeights,
            active: ActiveParts::All,
            grid_z: 32,
            threads: 0,
        }
    }
}

/// A posed render: feature map, per-part mask stack and coverage flags.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedFrame {
    w: usize,
    h: usize,
    channels: usize,
    feature: Vec<f64>,
    pub mask: MaskStack,
    coverage: Vec<bool>,
    pub pose: CameraPose,
}

impl RenderedFrame {
    pub fn width(&self) -> usize {
        self.w
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn feature_at(&self, v: usize, u: usize, ch: usize) -> f64 {
        self.feature[(v * self.w + u) * self.channels + ch]
    }

    #[inline]
    pub fn feature_pixel(&self, v: usize, u: usize) -> &[f64] {
        let base = (v * self.w + u) * self.channels;
        &self.feature[base..base + self.channels]
    }

    pub fn feature(&self) -> &[f64] {
        &self.feature
    }

    #[inline]
    pub fn covered(&self, v: usize, u: usize) -> bool {
        self.coverage[v * self.w + u]
    }

    pub fn coverage(&self) -> &[bool] {
        &self.coverage
    }

    /// Number of pixels whose ray hit the volume.
    pub fn covered_pixels(&self) -> usize {
        self.coverage.iter().filter(|&&c| c).count()
    }
}

struct PixelOut {
    feature: Vec<f64>,
    mask: Vec<f64>,
    covered: bool,
}

/// Renders a posed frame from a part set.
///
/// Deterministic given (parts, pose, cfg, opts): rerunning, reordering the
/// active list or changing the thread count never changes a byte.
pub fn render_frame(
    parts: &PartSet,
    pose: CameraPose,
    cfg: &CameraConfig,
    opts: &RenderOptions,
) -> Result<RenderedFrame> {
    let active = opts.active.resolve(parts.part_count())?;
    let geom = GridGeom::new(parts.width(), parts.height(), opts.grid_z)?;
    let caster = RayCaster::new(pose, cfg)?;
    let face_base_depth = parts.face_base_depth();

    let lifted: Vec<LiftedPartVolume<'_>> = active
        .iter()
        .map(|&k| LiftedPartVolume::new(parts.part(k), face_base_depth, opts.mapping, geom))
        .collect::<Result<_>>()?;
    let fused = FusedVolume::new(lifted.iter().collect())?;

    let k_total = parts.part_count();
    let channels = parts.channels();
    let n = cfg.n_samples;
    let (w, h) = (cfg.image_w, cfg.image_h);

    let render_pixel = |u: usize, v: usize| -> Result<PixelOut> {
        let ray = caster.ray(u, v);
        let batch = place_samples(&ray, geom, n);
        if !batch.hit {
            return Ok(PixelOut {
                feature: vec![0.0; channels],
                mask: vec![1.0 / k_total as f64; k_total],
                covered: false,
            });
        }

        // Per-part densities along the ray feed the mask path; parts
        // outside the active set contribute zero.
        let mut part_densities = vec![vec![0.0f64; n]; k_total];
        for volume in &lifted {
            let dens = &mut part_densities[volume.part_index()];
            for (slot, p) in dens.iter_mut().zip(&batch.points) {
                *slot = sample_density(volume, *p)?;
            }
        }

        let mut sigma_fused = Vec::with_capacity(n);
        for p in &batch.points {
            sigma_fused.push(sample_density(&fused, *p)?);
        }
        let profile = nerf_weights(&sigma_fused, &batch.delta)?;

        let feature = render_pixel_feature(&batch, &fused)?;
        let m_init = init_mask_pixel(&part_densities, &profile, opts.mask_mode)?;
        let mask = softmax_mask(&m_init);

        Ok(PixelOut {
            feature,
            mask,
            covered: true,
        })
    };

    let render_rows = || -> Result<Vec<Vec<PixelOut>>> {
        (0..h)
            .into_par_iter()
            .map(|v| (0..w).map(|u| render_pixel(u, v)).collect())
            .collect()
    };

    let rows = if opts.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(opts.threads)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(render_rows)
    } else {
        render_rows()
    }?;

    let mut feature = Vec::with_capacity(w * h * channels);
    let mut mask = Vec::with_capacity(w * h * k_total);
    let mut coverage = Vec::with_capacity(w * h);
    for row in rows {
        for px in row {
            feature.extend_from_slice(&px.feature);
            mask.extend_from_slice(&px.mask);
            coverage.push(px.covered);
        }
    }

    Ok(RenderedFrame {
        w,
        h,
        channels,
        feature,
        mask: MaskStack::new(w, h, k_total, mask, opts.mask_mode)?,
        coverage,
        pose: CameraPose {
            yaw: pose.yaw,
            pitch: pose.pitch,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::Ray;
    use crate::part::{synth_part_set, DepthMode, PartId, PartKind, PartMaps2D, SynthConfig};
    use std::f64::consts::LN_2;

    #[test]
    fn transparent_volume_has_unit_transmittance_and_zero_weights() {
        let sigma = vec![0.0; 5];
        let delta = vec![0.2; 5];
        let t = transmittance(&sigma, &delta).unwrap();
        assert!(t.iter().all(|&v| v == 1.0));
        let p = nerf_weights(&sigma, &delta).unwrap();
        assert!(p.weights.iter().all(|&w| w == 0.0));
    }

    #[test]
    fn transmittance_halves_per_ln2_of_optical_depth() {
        let t = transmittance(&[LN_2, LN_2, 0.0], &[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(t[0], 1.0);
        assert!((t[1] - 0.5).abs() < 1e-15);
        assert!((t[2] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn weights_match_hand_values() {
        let p = nerf_weights(&[LN_2], &[1.0]).unwrap();
        assert!((p.weights[0] - 0.5).abs() < 1e-15);
        let p = nerf_weights(&[LN_2, LN_2], &[1.0, 1.0]).unwrap();
        assert!((p.weights[0] - 0.5).abs() < 1e-15);
        assert!((p.weights[1] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn negative_density_is_a_domain_error() {
        assert!(matches!(
            transmittance(&[-0.1], &[1.0]),
            Err(Error::NegativeDensity { .. })
        ));
        assert!(matches!(
            nerf_weights(&[0.5, -2.0], &[1.0, 1.0]),
            Err(Error::NegativeDensity { index: 1, .. })
        ));
    }

    #[test]
    fn weight_conservation_holds() {
        let sigma = [0.3, 1.7, 0.0, 2.5, 0.01];
        let delta = [0.2, 0.05, 0.4, 0.7, 1.0];
        let p = nerf_weights(&sigma, &delta).unwrap();
        let total_depth: f64 = sigma.iter().zip(&delta).map(|(s, d)| s * d).sum();
        let residual = (-total_depth).exp();
        let sum_w: f64 = p.weights.iter().sum();
        assert!((sum_w + residual - 1.0).abs() <= 1e-9);
        for (w, t) in p.weights.iter().zip(&p.transmittance) {
            assert!(*w >= 0.0 && w <= t);
        }
        assert!(p.transmittance.windows(2).all(|w| w[1] <= w[0]));
    }

    /// Two-part set: zero-density background plus a face base whose density
    /// and features cover only the four central columns.
    fn central_column_set(
        base_density: f32,
        base_depth: f32,
        base_feature: [f32; 2],
    ) -> PartSet {
        let size = 64;
        let n_px = size * size;
        let background = PartMaps2D::new(
            PartId {
                index: 0,
                kind: PartKind::Background,
            },
            size,
            size,
            2,
            vec![0.0; n_px * 2],
            vec![30.0; n_px],
            vec![0.0; n_px],
            DepthMode::Absolute,
        )
        .unwrap();
        let mut density = vec![0.0f32; n_px];
        let mut feature = vec![0.0f32; n_px * 2];
        for y in [31usize, 32] {
            for x in [31usize, 32] {
                density[y * size + x] = base_density;
                feature[(y * size + x) * 2] = base_feature[0];
                feature[(y * size + x) * 2 + 1] = base_feature[1];
            }
        }
        let face = PartMaps2D::new(
            PartId {
                index: 1,
                kind: PartKind::FaceBase,
            },
            size,
            size,
            2,
            feature,
            vec![base_depth; n_px],
            density,
            DepthMode::Absolute,
        )
        .unwrap();
        PartSet::new(vec![background, face]).unwrap()
    }

    /// Central ray straight down -z: with N = 32 its samples land exactly on
    /// integer grid z = 0..31 at the grid-center column (31.5, 31.5).
    fn central_ray() -> Ray {
        Ray {
            origin: [0.0, 0.0, 3.0],
            dir: [0.0, 0.0, -1.0],
            pixel: (0, 0),
        }
    }

    #[test]
    fn zero_density_scene_renders_the_zero_vector() {
        let set = central_column_set(0.0, 16.0, [1.0, -1.0]);
        let geom = GridGeom::new(64, 64, 32).unwrap();
        let lifted: Vec<LiftedPartVolume> = set
            .parts()
            .iter()
            .map(|p| {
                LiftedPartVolume::new(p, set.face_base_depth(), MappingFn::default(), geom)
                    .unwrap()
            })
            .collect();
        let fused = FusedVolume::new(lifted.iter().collect()).unwrap();
        let batch = place_samples(&central_ray(), geom, 32);
        let out = render_pixel_feature(&batch, &fused).unwrap();
        assert_eq!(out, vec![0.0, 0.0]);
    }

    #[test]
    fn near_opaque_sample_dominates_the_composite() {
        // sigma * delta = 20 at the sample that lands exactly at the part
        // depth; every other sample is negligible under alpha = 30.
        let set = central_column_set(640.0, 16.0, [0.5, -1.0]);
        let geom = GridGeom::new(64, 64, 32).unwrap();
        let mapping = MappingFn::gaussian(30.0).unwrap();
        let lifted: Vec<LiftedPartVolume> = set
            .parts()
            .iter()
            .map(|p| LiftedPartVolume::new(p, set.face_base_depth(), mapping, geom).unwrap())
            .collect();
        let fused = FusedVolume::new(lifted.iter().collect()).unwrap();
        let batch = place_samples(&central_ray(), geom, 32);
        let out = render_pixel_feature(&batch, &fused).unwrap();
        let opacity = -(-20.0f64).exp_m1();
        assert!((out[0] - 0.5 * opacity).abs() <= 1e-8, "got {}", out[0]);
        assert!((out[1] + 1.0 * opacity).abs() <= 1e-8, "got {}", out[1]);
    }

    /// Three-part scene with two opaque-ish slabs at depths 10 and 12 whose
    /// per-sample optical depth is ln 2 each.
    fn two_slab_set() -> PartSet {
        let size = 64;
        let n_px = size * size;
        let sigma_2d = (LN_2 * 32.0) as f32;
        let column_map = |value: f32| {
            let mut m = vec![0.0f32; n_px];
            for y in [31usize, 32] {
                for x in [31usize, 32] {
                    m[y * size + x] = value;
                }
            }
            m
        };
        let feature_map = |e: [f32; 2]| {
            let mut m = vec![0.0f32; n_px * 2];
            for y in [31usize, 32] {
                for x in [31usize, 32] {
                    m[(y * size + x) * 2] = e[0];
                    m[(y * size + x) * 2 + 1] = e[1];
                }
            }
            m
        };
        let background = PartMaps2D::new(
            PartId {
                index: 0,
                kind: PartKind::Background,
            },
            size,
            size,
            2,
            vec![0.0; n_px * 2],
            vec![30.0; n_px],
            vec![0.0; n_px],
            DepthMode::Absolute,
        )
        .unwrap();
        let front = PartMaps2D::new(
            PartId {
                index: 1,
                kind: PartKind::FaceBase,
            },
            size,
            size,
            2,
            feature_map([1.0, 0.0]),
            vec![10.0; n_px],
            column_map(sigma_2d),
            DepthMode::Absolute,
        )
        .unwrap();
        let rear = PartMaps2D::new(
            PartId {
                index: 2,
                kind: PartKind::Facial("slab".into()),
            },
            size,
            size,
            2,
            feature_map([0.0, 1.0]),
            vec![2.0; n_px], // relative: 10 + 2 = 12
            column_map(sigma_2d),
            DepthMode::Relative,
        )
        .unwrap();
        PartSet::new(vec![background, front, rear]).unwrap()
    }

    #[test]
    fn two_sample_composite_matches_hand_weights() {
        let set = two_slab_set();
        let geom = GridGeom::new(64, 64, 32).unwrap();
        let mapping = MappingFn::gaussian(30.0).unwrap();
        let lifted: Vec<LiftedPartVolume> = set
            .parts()
            .iter()
            .map(|p| LiftedPartVolume::new(p, set.face_base_depth(), mapping, geom).unwrap())
            .collect();
        let fused = FusedVolume::new(lifted.iter().collect()).unwrap();
        let batch = place_samples(&central_ray(), geom, 32);
        let out = render_pixel_feature(&batch, &fused).unwrap();
        // w = (0.5, 0.25) on features e1, e2.
        assert!((out[0] - 0.5).abs() <= 1e-6, "got {}", out[0]);
        assert!((out[1] - 0.25).abs() <= 1e-6, "got {}", out[1]);
    }

    fn small_camera(n_samples: usize) -> CameraConfig {
        CameraConfig {
            image_w: 16,
            image_h: 16,
            n_samples,
            ..CameraConfig::default()
        }
    }

    #[test]
    fn frames_are_bit_identical_across_runs_and_thread_counts() {
        let set = synth_part_set(&SynthConfig::portrait_sized(11, 5, 32, 3)).unwrap();
        let cfg = CameraConfig {
            image_w: 32,
            image_h: 32,
            n_samples: 12,
            ..CameraConfig::default()
        };
        let pose = CameraPose::frontal();
        let base = render_frame(&set, pose, &cfg, &RenderOptions::default()).unwrap();
        let again = render_frame(&set, pose, &cfg, &RenderOptions::default()).unwrap();
        assert_eq!(base, again);
        for threads in [1, 2, 16] {
            let opts = RenderOptions {
                threads,
                ..RenderOptions::default()
            };
            let frame = render_frame(&set, pose, &cfg, &opts).unwrap();
            assert_eq!(base, frame, "threads={threads}");
        }
    }

    #[test]
    fn active_order_does_not_change_the_frame() {
        let set = synth_part_set(&SynthConfig::portrait_sized(3, 5, 32, 2)).unwrap();
        let cfg = small_camera(8);
        let pose = CameraPose::frontal();
        let a = render_frame(
            &set,
            pose,
            &cfg,
            &RenderOptions {
                active: ActiveParts::Subset(vec![0, 3, 1, 2]),
                ..RenderOptions::default()
            },
        )
        .unwrap();
        let b = render_frame(
            &set,
            pose,
            &cfg,
            &RenderOptions {
                active: ActiveParts::Subset(vec![3, 2, 1, 0]),
                ..RenderOptions::default()
            },
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn background_only_render_labels_everything_background() {
        let set = synth_part_set(&SynthConfig::portrait_sized(9, 6, 32, 2)).unwrap();
        let cfg = small_camera(12);
        let frame = render_frame(
            &set,
            CameraPose::frontal(),
            &cfg,
            &RenderOptions {
                active: ActiveParts::Subset(vec![0]),
                ..RenderOptions::default()
            },
        )
        .unwrap();
        let labels = frame.mask.argmax_labels();
        assert!(labels.iter().all(|&l| l == 0));
        // Covered pixels put strictly more mass on the background channel
        // than on any inactive part.
        for v in 0..frame.height() {
            for u in 0..frame.width() {
                if frame.covered(v, u) {
                    let px = frame.mask.pixel(v, u);
                    assert!(px[0] > px[1]);
                }
            }
        }
    }

    #[test]
    fn miss_pixels_are_zero_featured_with_uniform_masks() {
        // A tight fov from far away leaves corner rays off the box.
        let set = synth_part_set(&SynthConfig::portrait_sized(2, 4, 32, 2)).unwrap();
        let cfg = CameraConfig {
            orbit_radius: 8.0,
            fov_y: 0.35,
            image_w: 16,
            image_h: 16,
            n_samples: 8,
        };
        let frame =
            render_frame(&set, CameraPose::frontal(), &cfg, &RenderOptions::default()).unwrap();
        let k = frame.mask.parts() as f64;
        let mut misses = 0;
        for v in 0..frame.height() {
            for u in 0..frame.width() {
                if !frame.covered(v, u) {
                    misses += 1;
                    assert!(frame.feature_pixel(v, u).iter().all(|&f| f == 0.0));
                    for part in 0..frame.mask.parts() {
                        assert_eq!(frame.mask.at(v, u, part), 1.0 / k);
                    }
                }
            }
        }
        assert!(misses > 0, "expected at least one miss pixel");
    }

    #[test]
    fn mask_rows_sum_to_one_everywhere() {
        let set = synth_part_set(&SynthConfig::portrait_sized(21, 13, 32, 2)).unwrap();
        let cfg = small_camera(12);
        for mode in [MaskWeightMode::NerfWeights, MaskWeightMode::Uniform] {
            let frame = render_frame(
                &set,
                crate::camera::pose_from_std_normals(0.8, -0.5),
                &cfg,
                &RenderOptions {
                    mask_mode: mode,
                    ..RenderOptions::default()
                },
            )
            .unwrap();
            for v in 0..frame.height() {
                for u in 0..frame.width() {
                    let total: f64 = frame.mask.pixel(v, u).iter().sum();
                    assert!((total - 1.0).abs() <= 1e-6);
                }
            }
        }
    }

    #[test]
    fn rendered_feature_norm_is_bounded_by_the_strongest_sample() {
        let set = synth_part_set(&SynthConfig::portrait_sized(5, 5, 32, 3)).unwrap();
        let cfg = small_camera(16);
        let opts = RenderOptions::default();
        let frame = render_frame(&set, CameraPose::frontal(), &cfg, &opts).unwrap();

        let geom = GridGeom::new(set.width(), set.height(), opts.grid_z).unwrap();
        let lifted: Vec<LiftedPartVolume> = set
            .parts()
            .iter()
            .map(|p| {
                LiftedPartVolume::new(p, set.face_base_depth(), opts.mapping, geom).unwrap()
            })
            .collect();
        let fused = FusedVolume::new(lifted.iter().collect()).unwrap();
        let caster = RayCaster::new(CameraPose::frontal(), &cfg).unwrap();

        let norm = |f: &[f64]| f.iter().map(|v| v * v).sum::<f64>().sqrt();
        for v in 0..frame.height() {
            for u in 0..frame.width() {
                let batch = place_samples(&caster.ray(u, v), geom, cfg.n_samples);
                if !batch.hit {
                    continue;
                }
                let mut feat = vec![0.0; fused.channels()];
                let mut max_norm = 0.0f64;
                for p in &batch.points {
                    sample_feature(&fused, *p, &mut feat).unwrap();
                    max_norm = max_norm.max(norm(&feat));
                }
                assert!(norm(frame.feature_pixel(v, u)) <= max_norm + 1e-12);
            }
        }
    }

    #[test]
    fn per_pixel_error_shrinks_as_sample_count_grows() {
        // A moderately broad lifting bell keeps the density smooth along
        // each ray, so the midpoint rule converges monotonically. Narrow
        // bells alias at coarse sample counts, and very broad ones spill
        // past the far grid boundary where the clipped bell makes the
        // quadrature error phase-sensitive.
        let set = synth_part_set(&SynthConfig::portrait_sized(17, 6, 16, 2)).unwrap();
        let opts = RenderOptions {
            mapping: MappingFn::gaussian(0.3).unwrap(),
            ..RenderOptions::default()
        };
        let pose = CameraPose::frontal();
        let reference = render_frame(&set, pose, &small_camera(1152), &opts).unwrap();
        let mean_err = |n: usize| -> f64 {
            let frame = render_frame(&set, pose, &small_camera(n), &opts).unwrap();
            let total: f64 = frame
                .feature()
                .iter()
                .zip(reference.feature())
                .map(|(a, b)| (a - b).abs())
                .sum();
            total / frame.feature().len() as f64
        };
        let errs: Vec<f64> = [6, 12, 24, 36, 72].iter().map(|&n| mean_err(n)).collect();
        for pair in errs.windows(2) {
            assert!(
                pair[1] < pair[0],
                "sample-count refinement not monotone: {errs:?}"
            );
        }
    }

    #[test]
    fn empty_active_subset_is_rejected() {
        let set = synth_part_set(&SynthConfig::portrait_sized(2, 4, 32, 2)).unwrap();
        let err = render_frame(
            &set,
            CameraPose::frontal(),
            &small_camera(8),
            &RenderOptions {
                active: ActiveParts::Subset(vec![]),
                ..RenderOptions::default()
            },
        )
        .unwrap_err();
        assert!(matches!(err, Error::EmptyActiveSet));
    }
}
