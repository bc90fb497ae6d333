//! Depth-guided 2D-to-3D lifting, fusion and trilinear sampling.
//!
//! A part's 3D volume is never stored: its voxel at (x, y, z) is
//!
//! ```text
//!   feature(x, y, z) = psi(d_hat(x, y), z) * feature2d(x, y)
//!   density(x, y, z) = psi(d_hat(x, y), z) * density2d(x, y)
//! ```
//!
//! where `psi` peaks at `z = d_hat(x, y)`, the part's absolute depth. The
//! lazy view is the production path; [`materialize`] exists as an oracle and
//! for small grids. Voxel values are rounded to f32 (the storage precision
//! of a materialized grid) so the lazy and materialized paths agree
//! bit-exactly; all downstream arithmetic is f64.

use crate::error::{Error, Result};
use crate::part::{absolute_depth, PartMaps2D};

/// Depth-guided mapping function `psi`, the soft-unprojection weight.
///
/// Both variants are symmetric in `d_hat - z`, take values in (0, 1] and
/// attain 1 exactly at `z = d_hat`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MappingFn {
    /// `exp(-alpha * (d_hat - z)^2)`; alpha controls the bell width.
    Gaussian { alpha: f64 },
    /// `1 / (1 + beta * (d_hat - z)^2)`, the symmetric inverse-proportional
    /// alternative.
    InverseProportional { beta: f64 },
}

impl MappingFn {
    pub fn gaussian(alpha: f64) -> Result<Self> {
        if !alpha.is_finite() || alpha <= 0.0 {
            return Err(Error::Config(format!("gaussian alpha must be positive, got {alpha}")));
        }
        Ok(MappingFn::Gaussian { alpha })
    }

    pub fn inverse_proportional(beta: f64) -> Result<Self> {
        if !beta.is_finite() || beta <= 0.0 {
            return Err(Error::Config(format!(
                "inverse-proportional beta must be positive, got {beta}"
            )));
        }
        Ok(MappingFn::InverseProportional { beta })
    }

    /// The lifting weight at depth coordinate `z` for a pixel whose absolute
    /// depth is `d_hat`.
    #[inline]
    pub fn weight(&self, d_hat: f64, z: f64) -> f64 {
        let d = d_hat - z;
        match *self {
            MappingFn::Gaussian { alpha } => (-alpha * d * d).exp(),
            MappingFn::InverseProportional { beta } => 1.0 / (1.0 + beta * d * d),
        }
    }
}

impl Default for MappingFn {
    fn default() -> Self {
        MappingFn::Gaussian { alpha: 1.0 }
    }
}

/// Dimensions of the 3D grid a part is lifted into.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridGeom {
    pub x: usize,
    pub y: usize,
    pub z: usize,
}

impl GridGeom {
    pub fn new(x: usize, y: usize, z: usize) -> Result<Self> {
        if x < 2 || y < 2 || z < 2 {
            return Err(Error::Config(format!(
                "grid dimensions must each be at least 2, got {x}x{y}x{z}"
            )));
        }
        Ok(Self { x, y, z })
    }
}

impl Default for GridGeom {
    /// The canonical 64 x 64 x 32 grid.
    fn default() -> Self {
        Self { x: 64, y: 64, z: 32 }
    }
}

/// Read access to a density volume at integer voxels, in f64.
///
/// Implementations must be pure: repeated reads return identical values, so
/// concurrent sampling is safe.
pub trait DensityVolume: Sync {
    fn geom(&self) -> GridGeom;
    fn density(&self, x: usize, y: usize, z: usize) -> f64;
}

/// Read access to a feature volume at integer voxels, in f64.
pub trait FeatureVolume: DensityVolume {
    fn channels(&self) -> usize;
    /// Writes the C-channel feature vector of voxel (x, y, z) into `out`.
    fn feature_into(&self, x: usize, y: usize, z: usize, out: &mut [f64]);
}

/// Lazy view of one part's lifted 3D volume.
#[derive(Debug, Clone)]
pub struct LiftedPartVolume<'a> {
    part: &'a PartMaps2D,
    d_hat: Vec<f64>,
    mapping: MappingFn,
    geom: GridGeom,
}

impl<'a> LiftedPartVolume<'a> {
    /// Lifts `part` onto `geom`. The grid's x/y extents must match the 2D
    /// map so that grid (x, y) indexes pixels directly.
    pub fn new(
        part: &'a PartMaps2D,
        face_base_depth: f64,
        mapping: MappingFn,
        geom: GridGeom,
    ) -> Result<Self> {
        if geom.x != part.width() || geom.y != part.height() {
            return Err(Error::ShapeMismatch(format!(
                "grid plane {}x{} does not match part maps {}x{}",
                geom.x,
                geom.y,
                part.width(),
                part.height()
            )));
        }
        Ok(Self {
            part,
            d_hat: absolute_depth(part, face_base_depth),
            mapping,
            geom,
        })
    }

    pub fn part(&self) -> &PartMaps2D {
        self.part
    }

    pub fn part_index(&self) -> usize {
        self.part.id.index
    }

    pub fn mapping(&self) -> MappingFn {
        self.mapping
    }

    /// Precomputed absolute depth of pixel (x, y).
    #[inline]
    pub fn d_hat(&self, x: usize, y: usize) -> f64 {
        self.d_hat[y * self.geom.x + x]
    }

    #[inline]
    fn psi(&self, x: usize, y: usize, z: usize) -> f64 {
        self.mapping.weight(self.d_hat(x, y), z as f64)
    }

    fn check_bounds(&self, x: usize, y: usize, z: usize) -> Result<()> {
        let g = self.geom;
        if x >= g.x || y >= g.y || z >= g.z {
            return Err(Error::OutOfBounds {
                x,
                y,
                z,
                dims_x: g.x,
                dims_y: g.y,
                dims_z: g.z,
            });
        }
        Ok(())
    }

    /// Density voxel, rounded to f32 storage precision.
    #[inline]
    pub fn voxel_density(&self, x: usize, y: usize, z: usize) -> Result<f32> {
        self.check_bounds(x, y, z)?;
        Ok(self.voxel_density_unchecked(x, y, z))
    }

    #[inline]
    fn voxel_density_unchecked(&self, x: usize, y: usize, z: usize) -> f32 {
        (self.psi(x, y, z) * f64::from(self.part.density_at(y, x))) as f32
    }

    /// Feature voxel (all C channels) plus density, rounded to f32.
    pub fn voxel(&self, x: usize, y: usize, z: usize) -> Result<(Vec<f32>, f32)> {
        self.check_bounds(x, y, z)?;
        let psi = self.psi(x, y, z);
        let feat = self
            .part
            .feature_pixel(y, x)
            .iter()
            .map(|&f| (psi * f64::from(f)) as f32)
            .collect();
        Ok((feat, self.voxel_density_unchecked(x, y, z)))
    }
}

impl DensityVolume for LiftedPartVolume<'_> {
    fn geom(&self) -> GridGeom {
        self.geom
    }

    #[inline]
    fn density(&self, x: usize, y: usize, z: usize) -> f64 {
        f64::from(self.voxel_density_unchecked(x, y, z))
    }
}

impl FeatureVolume for LiftedPartVolume<'_> {
    fn channels(&self) -> usize {
        self.part.channels()
    }

    #[inline]
    fn feature_into(&self, x: usize, y: usize, z: usize, out: &mut [f64]) {
        let psi = self.psi(x, y, z);
        for (o, &f) in out.iter_mut().zip(self.part.feature_pixel(y, x)) {
            *o = f64::from((psi * f64::from(f)) as f32);
        }
    }
}

/// Fully evaluated copy of a lifted volume. f32 storage; one part at the
/// default geometry with 256 channels takes ~134 MB.
#[derive(Debug, Clone, PartialEq)]
pub struct MaterializedVolume {
    geom: GridGeom,
    channels: usize,
    feature: Vec<f32>,
    density: Vec<f32>,
}

impl MaterializedVolume {
    /// Bytes a materialized volume of this size would occupy. Saturates on
    /// overflow, which then fails allocation with the saturated count.
    pub fn required_bytes(geom: GridGeom, channels: usize) -> usize {
        geom.x
            .saturating_mul(geom.y)
            .saturating_mul(geom.z)
            .saturating_mul(channels.saturating_add(1))
            .saturating_mul(std::mem::size_of::<f32>())
    }

    #[inline]
    fn voxel_index(&self, x: usize, y: usize, z: usize) -> usize {
        (y * self.geom.x + x) * self.geom.z + z
    }
}

/// Evaluates every voxel of `part` into a [`MaterializedVolume`].
/// Fails up front, reporting the required byte count, if the allocation is
/// not possible.
pub fn materialize(part: &LiftedPartVolume<'_>) -> Result<MaterializedVolume> {
    let geom = part.geom();
    let channels = part.channels();
    let required_bytes = MaterializedVolume::required_bytes(geom, channels);
    let n_voxels = geom.x * geom.y * geom.z;

    let mut density = Vec::new();
    let mut feature = Vec::new();
    density
        .try_reserve_exact(n_voxels)
        .map_err(|_| Error::Allocation { required_bytes })?;
    feature
        .try_reserve_exact(n_voxels * channels)
        .map_err(|_| Error::Allocation { required_bytes })?;

    for y in 0..geom.y {
        for x in 0..geom.x {
            let feat2d = part.part().feature_pixel(y, x);
            let dens2d = f64::from(part.part().density_at(y, x));
            for z in 0..geom.z {
                let psi = part.psi(x, y, z);
                density.push((psi * dens2d) as f32);
                for &f in feat2d {
                    feature.push((psi * f64::from(f)) as f32);
                }
            }
        }
    }

    Ok(MaterializedVolume {
        geom,
        channels,
        feature,
        density,
    })
}

impl DensityVolume for MaterializedVolume {
    fn geom(&self) -> GridGeom {
        self.geom
    }

    #[inline]
    fn density(&self, x: usize, y: usize, z: usize) -> f64 {
        f64::from(self.density[self.voxel_index(x, y, z)])
    }
}

impl FeatureVolume for MaterializedVolume {
    fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    fn feature_into(&self, x: usize, y: usize, z: usize, out: &mut [f64]) {
        let base = self.voxel_index(x, y, z) * self.channels;
        for (o, &f) in out.iter_mut().zip(&self.feature[base..base + self.channels]) {
            *o = f64::from(f);
        }
    }
}

/// Elementwise sum of a set of lifted parts.
///
/// Parts are always accumulated in ascending part-index order, so the fused
/// values do not depend on the order the volumes were supplied in.
pub struct FusedVolume<'a> {
    parts: Vec<&'a LiftedPartVolume<'a>>,
    geom: GridGeom,
    channels: usize,
}

impl<'a> FusedVolume<'a> {
    pub fn new(parts: Vec<&'a LiftedPartVolume<'a>>) -> Result<Self> {
        if parts.is_empty() {
            return Err(Error::EmptyActiveSet);
        }
        let geom = parts[0].geom();
        let channels = parts[0].channels();
        for p in &parts {
            if p.geom() != geom || p.channels() != channels {
                return Err(Error::ShapeMismatch(
                    "fused parts must share grid geometry and channel count".into(),
                ));
            }
        }
        let mut parts = parts;
        parts.sort_by_key(|p| p.part_index());
        Ok(Self {
            parts,
            geom,
            channels,
        })
    }

    pub fn parts(&self) -> &[&'a LiftedPartVolume<'a>] {
        &self.parts
    }

    /// Fused feature vector and density at an integer voxel.
    pub fn fuse_at(&self, x: usize, y: usize, z: usize) -> Result<(Vec<f64>, f64)> {
        let g = self.geom;
        if x >= g.x || y >= g.y || z >= g.z {
            return Err(Error::OutOfBounds {
                x,
                y,
                z,
                dims_x: g.x,
                dims_y: g.y,
                dims_z: g.z,
            });
        }
        let mut feat = vec![0.0; self.channels];
        let mut scratch = vec![0.0; self.channels];
        let mut dens = 0.0;
        for p in &self.parts {
            dens += p.density(x, y, z);
            p.feature_into(x, y, z, &mut scratch);
            for (acc, v) in feat.iter_mut().zip(&scratch) {
                *acc += v;
            }
        }
        Ok((feat, dens))
    }
}

impl DensityVolume for FusedVolume<'_> {
    fn geom(&self) -> GridGeom {
        self.geom
    }

    #[inline]
    fn density(&self, x: usize, y: usize, z: usize) -> f64 {
        self.parts.iter().map(|p| p.density(x, y, z)).sum()
    }
}

impl FeatureVolume for FusedVolume<'_> {
    fn channels(&self) -> usize {
        self.channels
    }

    fn feature_into(&self, x: usize, y: usize, z: usize, out: &mut [f64]) {
        out.fill(0.0);
        let mut scratch = vec![0.0; self.channels];
        for p in &self.parts {
            p.feature_into(x, y, z, &mut scratch);
            for (acc, v) in out.iter_mut().zip(&scratch) {
                *acc += v;
            }
        }
    }
}

/// The 2 x 2 x 2 cell around a continuous grid point, with interpolation
/// fractions. Out-of-grid points clamp to the boundary.
#[derive(Debug, Clone, Copy)]
pub struct TrilinearCell {
    pub x0: usize,
    pub x1: usize,
    pub y0: usize,
    pub y1: usize,
    pub z0: usize,
    pub z1: usize,
    pub fx: f64,
    pub fy: f64,
    pub fz: f64,
}

impl TrilinearCell {
    pub fn locate(geom: GridGeom, p: [f64; 3]) -> Result<Self> {
        if !p.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("sample point"));
        }
        let clamp = |v: f64, n: usize| v.clamp(0.0, (n - 1) as f64);
        let (px, py, pz) = (clamp(p[0], geom.x), clamp(p[1], geom.y), clamp(p[2], geom.z));
        let x0 = px.floor() as usize;
        let y0 = py.floor() as usize;
        let z0 = pz.floor() as usize;
        Ok(Self {
            x0,
            x1: (x0 + 1).min(geom.x - 1),
            y0,
            y1: (y0 + 1).min(geom.y - 1),
            z0,
            z1: (z0 + 1).min(geom.z - 1),
            fx: px - x0 as f64,
            fy: py - y0 as f64,
            fz: pz - z0 as f64,
        })
    }

    /// Canonical nested-lerp combination of the 8 corner values, ordered
    /// c[zyx] with x fastest.
    #[inline]
    pub fn interp(&self, c: [f64; 8]) -> f64 {
        let (fx, fy, fz) = (self.fx, self.fy, self.fz);
        let c00 = c[0] + (c[1] - c[0]) * fx;
        let c10 = c[2] + (c[3] - c[2]) * fx;
        let c01 = c[4] + (c[5] - c[4]) * fx;
        let c11 = c[6] + (c[7] - c[6]) * fx;
        let c0 = c00 + (c10 - c00) * fy;
        let c1 = c01 + (c11 - c01) * fy;
        c0 + (c1 - c0) * fz
    }

    /// The 8 corner coordinates in the fixed c[zyx] order used by
    /// [`Self::interp`].
    #[inline]
    pub fn corners(&self) -> [(usize, usize, usize); 8] {
        [
            (self.x0, self.y0, self.z0),
            (self.x1, self.y0, self.z0),
            (self.x0, self.y1, self.z0),
            (self.x1, self.y1, self.z0),
            (self.x0, self.y0, self.z1),
            (self.x1, self.y0, self.z1),
            (self.x0, self.y1, self.z1),
            (self.x1, self.y1, self.z1),
        ]
    }
}

/// Trilinear density sample at a continuous grid point.
pub fn sample_density<V: DensityVolume + ?Sized>(volume: &V, p: [f64; 3]) -> Result<f64> {
    let cell = TrilinearCell::locate(volume.geom(), p)?;
    let mut c = [0.0; 8];
    for (slot, (x, y, z)) in c.iter_mut().zip(cell.corners()) {
        *slot = volume.density(x, y, z);
    }
    Ok(cell.interp(c))
}

/// Trilinear feature sample at a continuous grid point; writes C channels
/// into `out`.
pub fn sample_feature<V: FeatureVolume + ?Sized>(
    volume: &V,
    p: [f64; 3],
    out: &mut [f64],
) -> Result<()> {
    if out.len() != volume.channels() {
        return Err(Error::LengthMismatch {
            what: "feature output buffer",
            expected: volume.channels(),
            got: out.len(),
        });
    }
    let cell = TrilinearCell::locate(volume.geom(), p)?;
    let mut corner = vec![0.0; volume.channels() * 8];
    for (i, (x, y, z)) in cell.corners().iter().enumerate() {
        volume.feature_into(*x, *y, *z, &mut corner[i * volume.channels()..(i + 1) * volume.channels()]);
    }
    for (ch, o) in out.iter_mut().enumerate() {
        let mut c = [0.0; 8];
        for (i, slot) in c.iter_mut().enumerate() {
            *slot = corner[i * volume.channels() + ch];
        }
        *o = cell.interp(c);
    }
    Ok(())
}
