//! Depth smoothness regularizer, gradient checking and difference metrics.
//!
//! The smoothness term penalizes squared depth differences between each
//! pixel and its 8 neighbors, summed over all parts and normalized by
//! `A = 8 * K * H * W`. Out-of-bounds neighbor terms are skipped but A is
//! not adjusted, so the loss is slightly biased low at map borders. Each
//! unordered neighbor pair is counted from both sides, which is why the
//! analytic gradient carries a factor 4.
//!
//! Difference-map metrics compare two renders channel-wise: `diff_map` is
//! the per-pixel mean absolute RGB difference, `d_mean` its mean over all
//! pixels and `d_mean_masked` its mean over the non-edited region only.

use crate::error::{Error, Result};
use crate::part::{PartSet, DEFAULT_PART_COUNT};

/// Weight of the depth smoothness term in the total loss.
pub const DEFAULT_LAMBDA_DS: f64 = 0.1;

/// Depth smoothness loss value plus its weighted contribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub l_ds: f64,
    pub weighted: f64,
    pub lambda_ds: f64,
}

const NEIGHBOR_OFFSETS: [(isize, isize); 8] = [
    (-1, -1),
    (0, -1),
    (1, -1),
    (-1, 0),
    (1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
];

/// Smoothness loss over explicit f64 depth grids, all of size h x w.
/// The part count only enters through the normalization term.
pub fn depth_smoothness_loss_grids(depths: &[Vec<f64>], h: usize, w: usize) -> f64 {
    let k = depths.len();
    let mut total = 0.0f64;
    for depth in depths {
        for y in 0..h {
            for x in 0..w {
                let center = depth[y * w + x];
                for (dx, dy) in NEIGHBOR_OFFSETS {
                    let nx = x as isize + dx;
                    let ny = y as isize + dy;
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let d = center - depth[ny as usize * w + nx as usize];
                    total += d * d;
                }
            }
        }
    }
    let normalization = (8 * k * h * w) as f64;
    total / normalization
}

/// Analytic gradient of [`depth_smoothness_loss_grids`] with respect to
/// every depth value: `(4 / A) * sum_neighbors (d - d_neighbor)`.
pub fn depth_smoothness_grad_grids(depths: &[Vec<f64>], h: usize, w: usize) -> Vec<Vec<f64>> {
    let k = depths.len();
    let normalization = (8 * k * h * w) as f64;
    let scale = 4.0 / normalization;
    depths
        .iter()
        .map(|depth| {
            let mut grad = vec![0.0f64; h * w];
            for y in 0..h {
                for x in 0..w {
                    let center = depth[y * w + x];
                    let mut acc = 0.0;
                    for (dx, dy) in NEIGHBOR_OFFSETS {
                        let nx = x as isize + dx;
                        let ny = y as isize + dy;
                        if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                            continue;
                        }
                        acc += center - depth[ny as usize * w + nx as usize];
                    }
                    grad[y * w + x] = scale * acc;
                }
            }
            grad
        })
        .collect()
}

fn widen_depths(parts: &PartSet) -> Vec<Vec<f64>> {
    parts
        .parts()
        .iter()
        .map(|p| p.depth().iter().map(|&d| f64::from(d)).collect())
        .collect()
}

/// Depth smoothness loss of a part set, weighted by the default lambda.
pub fn depth_smoothness_loss(parts: &PartSet) -> LossReport {
    let l_ds = depth_smoothness_loss_grids(&widen_depths(parts), parts.height(), parts.width());
    LossReport {
        l_ds,
        weighted: DEFAULT_LAMBDA_DS * l_ds,
        lambda_ds: DEFAULT_LAMBDA_DS,
    }
}

/// Per-part gradient grids of the smoothness loss of a part set.
pub fn depth_smoothness_grad(parts: &PartSet) -> Vec<Vec<f64>> {
    depth_smoothness_grad_grids(&widen_depths(parts), parts.height(), parts.width())
}

/// Smoothness loss under an explicit weight.
pub fn regularized_loss_term(parts: &PartSet, lambda_ds: f64) -> Result<LossReport> {
    if !lambda_ds.is_finite() || lambda_ds < 0.0 {
        return Err(Error::Config(format!(
            "lambda_ds must be non-negative and finite, got {lambda_ds}"
        )));
    }
    let l_ds = depth_smoothness_loss_grids(&widen_depths(parts), parts.height(), parts.width());
    Ok(LossReport {
        l_ds,
        weighted: lambda_ds * l_ds,
        lambda_ds,
    })
}

/// Outcome of comparing an analytic gradient against central differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    pub n_probes: usize,
    pub pass: bool,
}

/// Compares `analytic` against central finite differences of `f` at a
/// deterministic probe subset (every ceil(len / max_probes)-th entry).
///
/// The relative error uses max(|fd|, |analytic|) as the denominator and is
/// zero when both sides vanish.
pub fn finite_diff_check<F>(
    f: F,
    x: &[f64],
    analytic: &[f64],
    step: f64,
    tolerance: f64,
    max_probes: usize,
) -> Result<GradCheckReport>
where
    F: Fn(&[f64]) -> f64,
{
    if analytic.len() != x.len() {
        return Err(Error::LengthMismatch {
            what: "analytic gradient",
            expected: x.len(),
            got: analytic.len(),
        });
    }
    if !step.is_finite() || step <= 0.0 {
        return Err(Error::Config(format!("step must be positive, got {step}")));
    }
    if max_probes == 0 {
        return Err(Error::Config("at least one probe required".into()));
    }
    let stride = x.len().div_ceil(max_probes).max(1);
    let mut probe = x.to_vec();
    let mut max_abs_err = 0.0f64;
    let mut max_rel_err = 0.0f64;
    let mut n_probes = 0usize;
    for i in (0..x.len()).step_by(stride) {
        probe[i] = x[i] + step;
        let f_plus = f(&probe);
        probe[i] = x[i] - step;
        let f_minus = f(&probe);
        probe[i] = x[i];
        if !f_plus.is_finite() || !f_minus.is_finite() {
            return Err(Error::NonFinite("finite-difference function value"));
        }
        let fd = (f_plus - f_minus) / (2.0 * step);
        let abs_err = (fd - analytic[i]).abs();
        let denom = fd.abs().max(analytic[i].abs());
        let rel_err = if denom > 0.0 { abs_err / denom } else { 0.0 };
        max_abs_err = max_abs_err.max(abs_err);
        max_rel_err = max_rel_err.max(rel_err);
        n_probes += 1;
    }
    Ok(GradCheckReport {
        max_abs_err,
        max_rel_err,
        n_probes,
        pass: max_rel_err <= tolerance,
    })
}

/// Difference map plus its scalar summaries.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffMetrics {
    pub w: usize,
    pub h: usize,
    /// Per-pixel mean absolute RGB difference, in [0, 1] for [0, 1] inputs.
    pub map: Vec<f64>,
    pub d_mean: f64,
    pub d_mean_masked: f64,
    /// Edited region excluded by the masked mean.
    pub mask: Vec<bool>,
    pub masked_pixel_count: usize,
}

/// Per-pixel mean absolute difference of the three channels of two
/// w x h x 3 images stored row-major, channel fastest.
pub fn diff_map(a: &[f64], b: &[f64], w: usize, h: usize) -> Result<Vec<f64>> {
    let expected = w * h * 3;
    if a.len() != expected || b.len() != expected {
        return Err(Error::ShapeMismatch(format!(
            "diff_map expects two {w}x{h}x3 images ({expected} values), got {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(a.chunks_exact(3)
        .zip(b.chunks_exact(3))
        .map(|(pa, pb)| {
            (pa[0] - pb[0]).abs() + (pa[1] - pb[1]).abs() + (pa[2] - pb[2]).abs()
        })
        .map(|sum| sum / 3.0)
        .collect())
}

/// Mean of a difference map over every pixel.
pub fn d_mean(map: &[f64]) -> f64 {
    map.iter().sum::<f64>() / map.len() as f64
}

/// Mean of a difference map over the pixels outside the edited region.
pub fn d_mean_masked(map: &[f64], edited: &[bool]) -> Result<f64> {
    if edited.len() != map.len() {
        return Err(Error::LengthMismatch {
            what: "edited mask",
            expected: map.len(),
            got: edited.len(),
        });
    }
    let mut total = 0.0f64;
    let mut count = 0usize;
    for (&v, &is_edited) in map.iter().zip(edited) {
        if !is_edited {
            total += v;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptyRegion);
    }
    Ok(total / count as f64)
}

/// Full difference-map record between two images; an absent edited mask
/// means nothing is excluded and both means coincide.
pub fn diff_metrics(
    a: &[f64],
    b: &[f64],
    w: usize,
    h: usize,
    edited: Option<&[bool]>,
) -> Result<DiffMetrics> {
    let map = diff_map(a, b, w, h)?;
    let mask = match edited {
        Some(m) => m.to_vec(),
        None => vec![false; w * h],
    };
    let mean = d_mean(&map);
    let mean_masked = d_mean_masked(&map, &mask)?;
    let masked_pixel_count = mask.iter().filter(|&&e| e).count();
    Ok(DiffMetrics {
        w,
        h,
        map,
        d_mean: mean,
        d_mean_masked: mean_masked,
        mask,
        masked_pixel_count,
    })
}

/// Reference loss landscape used by the gradient-check CLI command and the
/// acceptance suite: random depth grids for `trials` part sets of the given
/// side length, each checked at every entry.
pub fn l_ds_gradient_suite(
    seed: u64,
    trials: usize,
    size: usize,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut worst = GradCheckReport {
        max_abs_err: 0.0,
        max_rel_err: 0.0,
        n_probes: 0,
        pass: true,
    };
    for _ in 0..trials {
        let depths: Vec<Vec<f64>> = (0..2)
            .map(|_| (0..size * size).map(|_| rng.gen_range(0.0..31.0)).collect())
            .collect();
        let grads = depth_smoothness_grad_grids(&depths, size, size);
        for part in 0..depths.len() {
            let loss_of = |flat: &[f64]| {
                let mut local = depths.clone();
                local[part] = flat.to_vec();
                depth_smoothness_loss_grids(&local, size, size)
            };
            let report = finite_diff_check(
                loss_of,
                &depths[part],
                &grads[part],
                step,
                tolerance,
                size * size,
            )?;
            worst.max_abs_err = worst.max_abs_err.max(report.max_abs_err);
            worst.max_rel_err = worst.max_rel_err.max(report.max_rel_err);
            worst.n_probes += report.n_probes;
            worst.pass &= report.pass;
        }
    }
    Ok(worst)
}

/// Normalization constant of the smoothness loss for the default layout,
/// kept for documentation value: 8 neighbors x K parts x H x W pixels.
pub fn default_normalization(h: usize, w: usize) -> usize {
    8 * DEFAULT_PART_COUNT * h * w
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::part::{synth_part_set, SynthConfig};

    #[test]
    fn constant_depth_maps_have_zero_loss_and_gradient() {
        let depths = vec![vec![7.5; 16]; 3];
        assert_eq!(depth_smoothness_loss_grids(&depths, 4, 4), 0.0);
        let grads = depth_smoothness_grad_grids(&depths, 4, 4);
        assert!(grads.iter().flatten().all(|&g| g == 0.0));
    }

    #[test]
    fn hand_enumerated_2x2_case() {
        // depth [[0, 1], [0, 1]]: 12 in-bounds ordered neighbor pairs, 8 of
        // them with squared difference 1 -> total 8, A = 32, L = 0.25.
        let depths = vec![vec![0.0, 1.0, 0.0, 1.0]];
        let l = depth_smoothness_loss_grids(&depths, 2, 2);
        assert_eq!(l, 0.25);
    }

    #[test]
    fn loss_is_quadratic_in_depth_scale() {
        let depths = vec![vec![0.0, 1.0, 2.0, 0.5, 1.5, 2.5, 3.0, 0.25, 1.0]];
        let base = depth_smoothness_loss_grids(&depths, 3, 3);
        let scaled: Vec<Vec<f64>> = depths
            .iter()
            .map(|d| d.iter().map(|v| v * 3.0).collect())
            .collect();
        let l = depth_smoothness_loss_grids(&scaled, 3, 3);
        assert!((l - 9.0 * base).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences_on_the_2x2_case() {
        let depths = vec![vec![0.0, 1.0, 0.0, 1.0]];
        let grads = depth_smoothness_grad_grids(&depths, 2, 2);
        let loss_of =
            |flat: &[f64]| depth_smoothness_loss_grids(&[flat.to_vec()], 2, 2);
        let report =
            finite_diff_check(loss_of, &depths[0], &grads[0], 1e-4, 1e-6, 4).unwrap();
        assert!(report.pass, "{report:?}");
        assert_eq!(report.n_probes, 4);
    }

    #[test]
    fn gradient_sums_to_zero_per_part() {
        let set = synth_part_set(&SynthConfig::portrait_sized(13, 6, 16, 2)).unwrap();
        for grad in depth_smoothness_grad(&set) {
            let total: f64 = grad.iter().sum();
            assert!(total.abs() < 1e-12, "gradient sum {total}");
        }
    }

    #[test]
    fn weighted_loss_scales_linearly_in_lambda() {
        let set = synth_part_set(&SynthConfig::portrait_sized(5, 4, 16, 2)).unwrap();
        let zero = regularized_loss_term(&set, 0.0).unwrap();
        assert_eq!(zero.weighted, 0.0);
        let one = regularized_loss_term(&set, 0.1).unwrap();
        let two = regularized_loss_term(&set, 0.2).unwrap();
        assert!((two.weighted - 2.0 * one.weighted).abs() < 1e-15);
        assert!((one.weighted - 0.1 * one.l_ds).abs() < 1e-15);
        let default = depth_smoothness_loss(&set);
        assert_eq!(default.lambda_ds, DEFAULT_LAMBDA_DS);
        assert!((default.weighted - DEFAULT_LAMBDA_DS * default.l_ds).abs() < 1e-18);
    }

    #[test]
    fn quadratic_function_passes_the_check() {
        let f = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
        let x = [1.0, -2.0, 3.5, 0.0];
        let grad: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let report = finite_diff_check(f, &x, &grad, 1e-5, 1e-6, 16).unwrap();
        assert!(report.pass, "{report:?}");
    }

    #[test]
    fn corrupted_gradient_fails_the_check() {
        let f = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
        let x = [1.0, -2.0, 3.5];
        let wrong: Vec<f64> = x.iter().map(|v| 4.0 * v).collect();
        let report = finite_diff_check(f, &x, &wrong, 1e-5, 1e-4, 16).unwrap();
        assert!(!report.pass);
        assert!(report.max_rel_err > 0.4);
    }

    #[test]
    fn random_l_ds_gradients_match_finite_differences() {
        for size in [4usize, 8, 16] {
            let report = l_ds_gradient_suite(99, 5, size, 1e-4, 1e-4).unwrap();
            assert!(report.pass, "size {size}: {report:?}");
        }
    }

    #[test]
    fn loss_is_zero_only_for_constant_maps() {
        let constant = vec![vec![3.0; 9], vec![7.0; 9]];
        assert_eq!(depth_smoothness_loss_grids(&constant, 3, 3), 0.0);
        let mut bumped = constant;
        bumped[1][4] += 1e-3;
        assert!(depth_smoothness_loss_grids(&bumped, 3, 3) > 0.0);
    }

    #[test]
    fn diff_map_hand_case_and_symmetry() {
        let a = vec![0.2, 0.4, 0.6];
        let b = vec![0.5, 0.4, 0.0];
        let map = diff_map(&a, &b, 1, 1).unwrap();
        assert!((map[0] - 0.3).abs() < 1e-15);
        // Symmetric in its arguments.
        let ba = diff_map(&b, &a, 1, 1).unwrap();
        assert_eq!(map, ba);
        // Identical images give exact zeros.
        let same = diff_map(&a, &a, 1, 1).unwrap();
        assert_eq!(same, vec![0.0]);
    }

    #[test]
    fn diff_map_rejects_shape_mismatch() {
        assert!(matches!(
            diff_map(&[0.0; 3], &[0.0; 6], 1, 1),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn d_mean_hand_cases() {
        assert_eq!(d_mean(&[0.0, 0.0]), 0.0);
        assert_eq!(d_mean(&[0.3]), 0.3);
        assert!((d_mean(&[0.1, 0.2, 0.3, 0.4]) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn d_mean_masked_hand_cases() {
        let map = [1.0, 1.0, 0.0, 0.0];
        let none_edited = [false; 4];
        assert_eq!(d_mean_masked(&map, &none_edited).unwrap(), d_mean(&map));
        let first_two = [true, true, false, false];
        assert_eq!(d_mean_masked(&map, &first_two).unwrap(), 0.0);
        let all_but_one = [true, true, true, false];
        let map2 = [0.0, 0.0, 0.0, 0.7];
        assert_eq!(d_mean_masked(&map2, &all_but_one).unwrap(), 0.7);
        let all = [true; 4];
        assert!(matches!(d_mean_masked(&map, &all), Err(Error::EmptyRegion)));
    }

    #[test]
    fn diff_metrics_bundles_map_and_means() {
        let a = vec![0.0; 2 * 3];
        let mut b = a.clone();
        b[0] = 0.9;
        let edited = [true, false];
        let m = diff_metrics(&a, &b, 2, 1, Some(&edited)).unwrap();
        assert!((m.map[0] - 0.3).abs() < 1e-15);
        assert_eq!(m.map[1], 0.0);
        assert!((m.d_mean - 0.15).abs() < 1e-15);
        assert_eq!(m.d_mean_masked, 0.0);
        assert_eq!(m.masked_pixel_count, 1);
    }
}
