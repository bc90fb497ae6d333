//! Per-part 2D inputs and the part-set container.
//!
//! A part carries three aligned 2D maps: a feature map (H x W x C), a depth
//! map (H x W) and a non-negative density map (H x W). Depth values are
//! expressed in grid-z index units. The background and the face base store
//! absolute depths; every other (facial) part stores its depth relative to
//! the face base, so the absolute depth of a facial part is
//! `depth + face_base_depth`.
//!
//! The procedural generator in [`SynthConfig`]/[`synth_part_set`] stands in
//! for learned 2D generators: it lays out a portrait-like scene from smooth
//! ellipse and Gaussian-profile blobs, fully determined by a seed.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of semantic parts in the default portrait layout.
pub const DEFAULT_PART_COUNT: usize = 13;
/// Default side length of the square 2D maps.
pub const DEFAULT_MAP_SIZE: usize = 64;
/// Default feature channel count for desk-scale runs (256 is supported).
pub const DEFAULT_CHANNELS: usize = 16;
/// Default absolute depth of the face base, mid-grid for a 32-deep volume.
pub const DEFAULT_FACE_BASE_DEPTH: f64 = 16.0;
/// Default absolute depth of the background, near the far plane.
pub const DEFAULT_BACKGROUND_DEPTH: f64 = 30.0;

const PARTSET_FORMAT_VERSION: u32 = 1;

/// Role of a part within the portrait.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PartKind {
    Background,
    FaceBase,
    Facial(String),
}

impl PartKind {
    pub fn name(&self) -> &str {
        match self {
            PartKind::Background => "background",
            PartKind::FaceBase => "face_base",
            PartKind::Facial(name) => name,
        }
    }
}

/// Identity of a part: dense index in `[0, K)` plus its role.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartId {
    pub index: usize,
    pub kind: PartKind,
}

impl PartId {
    pub fn name(&self) -> &str {
        self.kind.name()
    }
}

/// Whether a depth map stores absolute grid-z values or offsets from the
/// face base.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DepthMode {
    Relative,
    Absolute,
}

/// One semantic part's 2D maps. Immutable after construction.
///
/// Storage is row-major: y-major, then x, then channel for the feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct PartMaps2D {
    pub id: PartId,
    h: usize,
    w: usize,
    c: usize,
    feature: Vec<f32>,
    depth: Vec<f32>,
    density: Vec<f32>,
    pub depth_mode: DepthMode,
}

impl PartMaps2D {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: PartId,
        h: usize,
        w: usize,
        c: usize,
        feature: Vec<f32>,
        depth: Vec<f32>,
        density: Vec<f32>,
        depth_mode: DepthMode,
    ) -> Result<Self> {
        if h != w {
            return Err(Error::Config(format!("part maps must be square, got {h}x{w}")));
        }
        if h == 0 {
            return Err(Error::Config("part maps must be non-empty".into()));
        }
        if c == 0 {
            return Err(Error::Config("feature channel count must be >= 1".into()));
        }
        if feature.len() != h * w * c {
            return Err(Error::LengthMismatch {
                what: "feature map",
                expected: h * w * c,
                got: feature.len(),
            });
        }
        if depth.len() != h * w {
            return Err(Error::LengthMismatch {
                what: "depth map",
                expected: h * w,
                got: depth.len(),
            });
        }
        if density.len() != h * w {
            return Err(Error::LengthMismatch {
                what: "density map",
                expected: h * w,
                got: density.len(),
            });
        }
        for v in feature.iter().chain(depth.iter()) {
            if !v.is_finite() {
                return Err(Error::NonFinite("part maps"));
            }
        }
        for (i, &v) in density.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite("density map"));
            }
            if v < 0.0 {
                return Err(Error::NegativeDensity {
                    index: i,
                    value: f64::from(v),
                });
            }
        }
        let expected_mode = match id.kind {
            PartKind::Background | PartKind::FaceBase => DepthMode::Absolute,
            PartKind::Facial(_) => DepthMode::Relative,
        };
        if depth_mode != expected_mode {
            return Err(Error::Config(format!(
                "part '{}' must use {:?} depth",
                id.name(),
                expected_mode
            )));
        }
        Ok(Self {
            id,
            h,
            w,
            c,
            feature,
            depth,
            density,
            depth_mode,
        })
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn channels(&self) -> usize {
        self.c
    }

    #[inline]
    pub fn depth_at(&self, y: usize, x: usize) -> f32 {
        self.depth[y * self.w + x]
    }

    #[inline]
    pub fn density_at(&self, y: usize, x: usize) -> f32 {
        self.density[y * self.w + x]
    }

    #[inline]
    pub fn feature_at(&self, y: usize, x: usize, ch: usize) -> f32 {
        self.feature[(y * self.w + x) * self.c + ch]
    }

    /// Feature vector slice for a pixel, C contiguous channels.
    #[inline]
    pub fn feature_pixel(&self, y: usize, x: usize) -> &[f32] {
        let base = (y * self.w + x) * self.c;
        &self.feature[base..base + self.c]
    }

    pub fn feature(&self) -> &[f32] {
        &self.feature
    }

    pub fn depth(&self) -> &[f32] {
        &self.depth
    }

    pub fn density(&self) -> &[f32] {
        &self.density
    }
}

/// Absolute depth of a part in grid-z units.
///
/// Relative parts get `depth + face_base_depth` elementwise; absolute parts
/// pass through unchanged. Always widens to f64.
pub fn absolute_depth(part: &PartMaps2D, face_base_depth: f64) -> Vec<f64> {
    match part.depth_mode {
        DepthMode::Absolute => part.depth.iter().map(|&d| f64::from(d)).collect(),
        DepthMode::Relative => part
            .depth
            .iter()
            .map(|&d| f64::from(d) + face_base_depth)
            .collect(),
    }
}

/// An ordered, validated collection of parts sharing H, W and C.
#[derive(Debug, Clone, PartialEq)]
pub struct PartSet {
    parts: Vec<PartMaps2D>,
}

impl PartSet {
    pub fn new(parts: Vec<PartMaps2D>) -> Result<Self> {
        if parts.len() < 2 {
            return Err(Error::Config(format!(
                "a part set needs at least background and face base, got {} parts",
                parts.len()
            )));
        }
        let (h, w, c) = (parts[0].h, parts[0].w, parts[0].c);
        let mut n_background = 0usize;
        let mut n_face_base = 0usize;
        for (i, p) in parts.iter().enumerate() {
            if (p.h, p.w, p.c) != (h, w, c) {
                return Err(Error::ShapeMismatch(format!(
                    "part {} is {}x{}x{}, expected {}x{}x{}",
                    i, p.h, p.w, p.c, h, w, c
                )));
            }
            if p.id.index != i {
                return Err(Error::Config(format!(
                    "part indices must be dense and ordered; slot {} holds index {}",
                    i, p.id.index
                )));
            }
            match p.id.kind {
                PartKind::Background => n_background += 1,
                PartKind::FaceBase => n_face_base += 1,
                PartKind::Facial(_) => {}
            }
        }
        if n_background != 1 || n_face_base != 1 {
            return Err(Error::Config(format!(
                "a part set needs exactly one background and one face base, got {n_background} and {n_face_base}"
            )));
        }
        Ok(Self { parts })
    }

    pub fn part_count(&self) -> usize {
        self.parts.len()
    }

    pub fn height(&self) -> usize {
        self.parts[0].h
    }

    pub fn width(&self) -> usize {
        self.parts[0].w
    }

    pub fn channels(&self) -> usize {
        self.parts[0].c
    }

    pub fn parts(&self) -> &[PartMaps2D] {
        &self.parts
    }

    pub fn part(&self, index: usize) -> &PartMaps2D {
        &self.parts[index]
    }

    pub fn index_of_name(&self, name: &str) -> Option<usize> {
        self.parts.iter().position(|p| p.id.name() == name)
    }

    /// Scalar face-base depth used to resolve relative depths: the mean of
    /// the face-base part's absolute depth map. Exact for constant maps.
    pub fn face_base_depth(&self) -> f64 {
        let base = self
            .parts
            .iter()
            .find(|p| p.id.kind == PartKind::FaceBase)
            .expect("validated part set has a face base");
        let sum: f64 = base.depth.iter().map(|&d| f64::from(d)).sum();
        sum / base.depth.len() as f64
    }
}

/// Ellipse-profile blob that stands in for one facial part.
#[derive(Debug, Clone, PartialEq)]
pub struct BlobSpec {
    pub name: String,
    /// Center in normalized map coordinates, (x, y) in (0, 1).
    pub center: (f64, f64),
    /// Ellipse radii in normalized map coordinates.
    pub radii: (f64, f64),
    /// Peak density at the blob center.
    pub density_peak: f64,
    /// Depth offset from the face base; negative is toward the camera.
    pub depth_offset: f64,
}

/// Configuration for the procedural part generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub k: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub face_base_depth: f64,
    pub background_depth: f64,
    /// One blob per facial part; must hold `k - 2` entries.
    pub blobs: Vec<BlobSpec>,
}

/// Canonical facial layout, jittered per seed. Centers and radii are in
/// normalized map coordinates with y increasing upward in the portrait;
/// depth offsets are a gentle relief around the face plane, negative toward
/// the camera.
const FACIAL_LAYOUT: [(&str, f64, f64, f64, f64, f64, f64); 11] = [
    ("hair", 0.50, 0.80, 0.340, 0.170, 2.2, -1.5),
    ("ear_l", 0.175, 0.50, 0.035, 0.070, 2.0, 0.5),
    ("ear_r", 0.825, 0.50, 0.035, 0.070, 2.0, 0.5),
    ("eye_l", 0.37, 0.60, 0.070, 0.035, 3.0, -0.6),
    ("eye_r", 0.63, 0.60, 0.070, 0.035, 3.0, -0.6),
    ("brow_l", 0.37, 0.68, 0.085, 0.022, 2.5, -1.0),
    ("brow_r", 0.63, 0.68, 0.085, 0.022, 2.5, -1.0),
    ("mouth", 0.50, 0.30, 0.100, 0.045, 2.5, -1.5),
    ("lip_u", 0.50, 0.335, 0.095, 0.020, 2.8, -1.4),
    ("lip_l", 0.50, 0.265, 0.095, 0.025, 2.8, -1.4),
    ("nose", 0.50, 0.47, 0.055, 0.100, 3.0, -2.5),
];

impl SynthConfig {
    /// Portrait layout for the given seed with default sizes
    /// (K=13, 64x64 maps, 16 channels).
    pub fn portrait(seed: u64) -> Self {
        Self::portrait_sized(
            seed,
            DEFAULT_PART_COUNT,
            DEFAULT_MAP_SIZE,
            DEFAULT_CHANNELS,
        )
    }

    /// Portrait layout with explicit part count, map size and channels.
    pub fn portrait_sized(seed: u64, k: usize, size: usize, channels: usize) -> Self {
        let n_facial = k.saturating_sub(2);
        Self {
            seed,
            k,
            h: size,
            w: size,
            c: channels,
            face_base_depth: DEFAULT_FACE_BASE_DEPTH,
            background_depth: DEFAULT_BACKGROUND_DEPTH,
            blobs: facial_blobs(seed, n_facial),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::Config("part count must be at least 2".into()));
        }
        if self.h != self.w || self.h < 2 {
            return Err(Error::Config(format!(
                "map size must be square and at least 2, got {}x{}",
                self.h, self.w
            )));
        }
        if self.c == 0 {
            return Err(Error::Config("channel count must be >= 1".into()));
        }
        if !(0.0..=31.0).contains(&self.face_base_depth) {
            return Err(Error::Config(format!(
                "face base depth {} outside the default grid depth range [0, 31]",
                self.face_base_depth
            )));
        }
        if !(0.0..=31.0).contains(&self.background_depth) {
            return Err(Error::Config(format!(
                "background depth {} outside the default grid depth range [0, 31]",
                self.background_depth
            )));
        }
        if self.blobs.len() != self.k - 2 {
            return Err(Error::Config(format!(
                "expected {} blob specs for {} parts, got {}",
                self.k - 2,
                self.k,
                self.blobs.len()
            )));
        }
        for b in &self.blobs {
            if b.radii.0 <= 0.0 || b.radii.1 <= 0.0 {
                return Err(Error::Config(format!("blob '{}' has non-positive radii", b.name)));
            }
            if b.density_peak < 0.0 {
                return Err(Error::Config(format!(
                    "blob '{}' has negative density peak",
                    b.name
                )));
            }
        }
        Ok(())
    }
}

/// Seed-jittered facial blob specs. Layout entries beyond the canonical
/// table are placed on a golden-angle ring so any part count stays valid.
fn facial_blobs(seed: u64, count: usize) -> Vec<BlobSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut blobs = Vec::with_capacity(count);
    for i in 0..count {
        let (name, cx, cy, rx, ry, peak, offset) = if let Some(entry) = FACIAL_LAYOUT.get(i) {
            let (name, cx, cy, rx, ry, peak, offset) = *entry;
            (name.to_string(), cx, cy, rx, ry, peak, offset)
        } else {
            let theta = 2.399_963_229_728_653 * i as f64;
            let extra = (i - FACIAL_LAYOUT.len() + 1) as f64;
            (
                format!("part{}", i + 2),
                0.5 + 0.22 * theta.cos(),
                0.5 + 0.22 * theta.sin(),
                0.06,
                0.05,
                2.0,
                (-0.4 * extra).max(-14.0),
            )
        };
        blobs.push(BlobSpec {
            name,
            center: (
                cx + rng.gen_range(-0.02..=0.02),
                cy + rng.gen_range(-0.02..=0.02),
            ),
            radii: (
                rx * rng.gen_range(0.9..=1.1),
                ry * rng.gen_range(0.9..=1.1),
            ),
            density_peak: peak * rng.gen_range(0.85..=1.15),
            // Jitter stays well below the inter-part depth gaps so the
            // front-to-back ordering survives every seed.
            depth_offset: offset + rng.gen_range(-0.15..=0.15),
        });
    }
    blobs
}

/// Squared elliptical distance of normalized pixel center (xn, yn) from a
/// blob: 0 at the center, 1 on the ellipse boundary.
fn ellipse_r2(xn: f64, yn: f64, blob_center: (f64, f64), radii: (f64, f64)) -> f64 {
    let dx = (xn - blob_center.0) / radii.0;
    let dy = (yn - blob_center.1) / radii.1;
    dx * dx + dy * dy
}

/// Deterministic procedural part set: background plane, face-base ellipse
/// and Gaussian-profile facial blobs with relative depths.
pub fn synth_part_set(config: &SynthConfig) -> Result<PartSet> {
    config.validate()?;
    let (h, w, c) = (config.h, config.w, config.c);
    let n_px = h * w;

    // Feature RNG stream is independent of the blob jitter stream.
    let mut feat_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x5eed_f00d));
    let mut part_feature = |_: usize| -> Vec<f32> {
        let base: Vec<f64> = (0..c).map(|_| feat_rng.gen_range(-1.0..=1.0)).collect();
        let grad_x: Vec<f64> = (0..c).map(|_| feat_rng.gen_range(-0.2..=0.2)).collect();
        let grad_y: Vec<f64> = (0..c).map(|_| feat_rng.gen_range(-0.2..=0.2)).collect();
        let mut data = Vec::with_capacity(n_px * c);
        for y in 0..h {
            let yn = (y as f64 + 0.5) / h as f64 - 0.5;
            for x in 0..w {
                let xn = (x as f64 + 0.5) / w as f64 - 0.5;
                for ch in 0..c {
                    data.push((base[ch] + grad_x[ch] * xn + grad_y[ch] * yn) as f32);
                }
            }
        }
        data
    };

    let mut parts = Vec::with_capacity(config.k);

    // Part 0: background, full-plane density at an absolute far depth.
    parts.push(PartMaps2D::new(
        PartId {
            index: 0,
            kind: PartKind::Background,
        },
        h,
        w,
        c,
        part_feature(0),
        vec![config.background_depth as f32; n_px],
        vec![1.0; n_px],
        DepthMode::Absolute,
    )?);

    // Part 1: face base, a large flat-topped ellipse at the absolute
    // face-base depth.
    let mut base_density = Vec::with_capacity(n_px);
    for y in 0..h {
        let yn = (y as f64 + 0.5) / h as f64;
        for x in 0..w {
            let xn = (x as f64 + 0.5) / w as f64;
            let r2 = ellipse_r2(xn, yn, (0.5, 0.5), (0.30, 0.40));
            base_density.push((2.5 * (-(r2 * r2)).exp()) as f32);
        }
    }
    parts.push(PartMaps2D::new(
        PartId {
            index: 1,
            kind: PartKind::FaceBase,
        },
        h,
        w,
        c,
        part_feature(1),
        vec![config.face_base_depth as f32; n_px],
        base_density,
        DepthMode::Absolute,
    )?);

    // Facial parts: Gaussian-profile density, relative depth that eases to
    // zero away from the blob center.
    for (i, blob) in config.blobs.iter().enumerate() {
        let mut density = Vec::with_capacity(n_px);
        let mut depth = Vec::with_capacity(n_px);
        for y in 0..h {
            let yn = (y as f64 + 0.5) / h as f64;
            for x in 0..w {
                let xn = (x as f64 + 0.5) / w as f64;
                let r2 = ellipse_r2(xn, yn, blob.center, blob.radii);
                density.push((blob.density_peak * (-2.0 * r2).exp()) as f32);
                depth.push((blob.depth_offset * (-r2).exp()) as f32);
            }
        }
        parts.push(PartMaps2D::new(
            PartId {
                index: i + 2,
                kind: PartKind::Facial(blob.name.clone()),
            },
            h,
            w,
            c,
            part_feature(i + 2),
            depth,
            density,
            DepthMode::Relative,
        )?);
    }

    PartSet::new(parts)
}

// ---------------------------------------------------------------------------
// On-disk container: a directory with manifest.json plus raw f32 tensors.
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: u32,
    k: usize,
    h: usize,
    w: usize,
    c: usize,
    parts: Vec<ManifestPart>,
}

#[derive(Serialize, Deserialize)]
struct ManifestPart {
    index: usize,
    kind: String,
    name: String,
    depth_mode: String,
    stem: String,
}

fn write_f32_tensor(path: &Path, data: &[f32]) -> Result<()> {
    let mut bytes = Vec::with_capacity(data.len() * 4);
    for v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&bytes)?;
    Ok(())
}

fn read_f32_tensor(dir: &Path, stem: &str, tensor: &str, index: usize, expected: usize) -> Result<Vec<f32>> {
    let path = dir.join(format!("{stem}.{tensor}.f32"));
    let bytes = fs::read(&path).map_err(|e| {
        Error::Format(format!(
            "tensor {stem}.{tensor}.f32 for part {index}: {e}"
        ))
    })?;
    if bytes.len() != expected * 4 {
        return Err(Error::Format(format!(
            "tensor {stem}.{tensor}.f32 for part {index}: expected {} bytes, got {}",
            expected * 4,
            bytes.len()
        )));
    }
    let mut data = Vec::with_capacity(expected);
    for chunk in bytes.chunks_exact(4) {
        let v = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
        if !v.is_finite() {
            return Err(Error::Format(format!(
                "tensor {stem}.{tensor}.f32 for part {index}: non-finite value"
            )));
        }
        data.push(v);
    }
    Ok(data)
}

/// Writes a part set to a directory: `manifest.json` plus per-part
/// `part<k>.{feat,depth,dens}.f32` raw little-endian tensors.
pub fn save_part_set(set: &PartSet, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let manifest = Manifest {
        version: PARTSET_FORMAT_VERSION,
        k: set.part_count(),
        h: set.height(),
        w: set.width(),
        c: set.channels(),
        parts: set
            .parts()
            .iter()
            .map(|p| ManifestPart {
                index: p.id.index,
                kind: match p.id.kind {
                    PartKind::Background => "background",
                    PartKind::FaceBase => "face_base",
                    PartKind::Facial(_) => "facial",
                }
                .to_string(),
                name: p.id.name().to_string(),
                depth_mode: match p.depth_mode {
                    DepthMode::Relative => "relative",
                    DepthMode::Absolute => "absolute",
                }
                .to_string(),
                stem: format!("part{}", p.id.index),
            })
            .collect(),
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Format(format!("manifest serialization: {e}")))?;
    fs::write(dir.join("manifest.json"), json)?;
    for p in set.parts() {
        let stem = format!("part{}", p.id.index);
        write_f32_tensor(&dir.join(format!("{stem}.feat.f32")), p.feature())?;
        write_f32_tensor(&dir.join(format!("{stem}.depth.f32")), p.depth())?;
        write_f32_tensor(&dir.join(format!("{stem}.dens.f32")), p.density())?;
    }
    Ok(())
}

/// Loads a part set from a directory written by [`save_part_set`].
/// Round-trips bit-exactly.
pub fn load_part_set(dir: &Path) -> Result<PartSet> {
    let manifest_path = dir.join("manifest.json");
    let json = fs::read_to_string(&manifest_path)
        .map_err(|e| Error::Format(format!("manifest.json: {e}")))?;
    let manifest: Manifest =
        serde_json::from_str(&json).map_err(|e| Error::Format(format!("manifest.json: {e}")))?;
    if manifest.version != PARTSET_FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported part-set version {} (expected {PARTSET_FORMAT_VERSION})",
            manifest.version
        )));
    }
    if manifest.parts.len() != manifest.k {
        return Err(Error::Format(format!(
            "manifest declares {} parts but lists {}",
            manifest.k,
            manifest.parts.len()
        )));
    }
    let (h, w, c) = (manifest.h, manifest.w, manifest.c);
    let mut parts = Vec::with_capacity(manifest.k);
    for mp in &manifest.parts {
        let kind = match mp.kind.as_str() {
            "background" => PartKind::Background,
            "face_base" => PartKind::FaceBase,
            "facial" => PartKind::Facial(mp.name.clone()),
            other => return Err(Error::Format(format!("unknown part kind '{other}'"))),
        };
        let depth_mode = match mp.depth_mode.as_str() {
            "relative" => DepthMode::Relative,
            "absolute" => DepthMode::Absolute,
            other => return Err(Error::Format(format!("unknown depth mode '{other}'"))),
        };
        let feature = read_f32_tensor(dir, &mp.stem, "feat", mp.index, h * w * c)?;
        let depth = read_f32_tensor(dir, &mp.stem, "depth", mp.index, h * w)?;
        let density = read_f32_tensor(dir, &mp.stem, "dens", mp.index, h * w)?;
        parts.push(PartMaps2D::new(
            PartId {
                index: mp.index,
                kind,
            },
            h,
            w,
            c,
            feature,
            depth,
            density,
            depth_mode,
        )?);
    }
    PartSet::new(parts)
}
