//! Regular scalar grids and ensembles of them.
//!
//! Samples are stored x-fastest: `index = x + nx * (y + ny * z)`.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl Dims {
    pub fn new(nx: usize, ny: usize, nz: usize) -> Result<Self> {
        if nx == 0 || ny == 0 || nz == 0 {
            return Err(Error::Dimension(format!(
                "dims must be at least 1 along every axis, got {nx}x{ny}x{nz}"
            )));
        }
        Ok(Self { nx, ny, nz })
    }

    pub fn planar(nx: usize, ny: usize) -> Result<Self> {
        Self::new(nx, ny, 1)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.nx * (y + self.ny * z)
    }

    #[inline]
    pub fn coords(&self, index: usize) -> (usize, usize, usize) {
        let x = index % self.nx;
        let y = (index / self.nx) % self.ny;
        let z = index / (self.nx * self.ny);
        (x, y, z)
    }

    pub fn is_2d(&self) -> bool {
        self.nz == 1
    }
}

/// One scalar field sample of the ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarGrid {
    dims: Dims,
    spacing: [f64; 3],
    values: Vec<f32>,
    pub field_name: String,
    pub time_index: u32,
    pub member_id: u32,
}

impl ScalarGrid {
    /// Builds a grid, rejecting a length mismatch or any non-finite sample.
    pub fn new(dims: Dims, values: Vec<f32>) -> Result<Self> {
        Dims::new(dims.nx, dims.ny, dims.nz)?;
        if values.len() != dims.len() {
            return Err(Error::Dimension(format!(
                "expected {} samples for {}x{}x{}, got {}",
                dims.len(),
                dims.nx,
                dims.ny,
                dims.nz,
                values.len()
            )));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self {
            dims,
            spacing: [1.0; 3],
            values,
            field_name: String::new(),
            time_index: 0,
            member_id: 0,
        })
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> f32) -> Result<Self> {
        let mut values = Vec::with_capacity(dims.len());
        for z in 0..dims.nz {
            for y in 0..dims.ny {
                for x in 0..dims.nx {
                    values.push(f(x, y, z));
                }
            }
        }
        Self::new(dims, values)
    }

    pub fn with_spacing(mut self, spacing: [f64; 3]) -> Result<Self> {
        if spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Dimension(format!("spacing must be positive, got {spacing:?}")));
        }
        self.spacing = spacing;
        Ok(self)
    }

    pub fn with_meta(mut self, field_name: &str, time_index: u32, member_id: u32) -> Self {
        self.field_name = String::from(field_name);
        self.time_index = time_index;
        self.member_id = member_id;
        self
    }

    #[inline]
    pub fn dims(&self) -> Dims {
        self.dims
    }

    #[inline]
    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    #[inline]
    pub fn values(&self) -> &[f32] {
        &self.values
    }

    #[inline]
    pub fn value(&self, x: usize, y: usize, z: usize) -> f32 {
        self.values[self.dims.index(x, y, z)]
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    /// The plane at depth `z` as a 2D grid.
    pub fn slice_z(&self, z: usize) -> Result<Self> {
        if z >= self.dims.nz {
            return Err(Error::Index(format!("z = {z} outside 0..{}", self.dims.nz)));
        }
        let plane = self.dims.nx * self.dims.ny;
        let values = self.values[z * plane..(z + 1) * plane].to_vec();
        Ok(Self {
            dims: Dims { nz: 1, ..self.dims },
            spacing: self.spacing,
            values,
            field_name: self.field_name.clone(),
            time_index: self.time_index,
            member_id: self.member_id,
        })
    }

    pub fn negate(&self) -> Self {
        Self {
            values: self.values.iter().map(|v| -v).collect(),
            ..self.clone()
        }
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Result<Self> {
        let values = self.values.iter().map(|&v| f(v)).collect();
        let mut out = Self::new(self.dims, values)?;
        out.spacing = self.spacing;
        out.field_name = self.field_name.clone();
        out.time_index = self.time_index;
        out.member_id = self.member_id;
        Ok(out)
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.values
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

/// Velocity components sharing one grid layout.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorGrid {
    pub u: ScalarGrid,
    pub v: ScalarGrid,
    pub w: ScalarGrid,
}

impl VectorGrid {
    pub fn new(u: ScalarGrid, v: ScalarGrid, w: ScalarGrid) -> Result<Self> {
        if u.dims() != v.dims() || u.dims() != w.dims() {
            return Err(Error::Dimension(String::from("vector components differ in dims")));
        }
        Ok(Self { u, v, w })
    }

    /// Pointwise `sqrt(u² + v² + w²)`.
    pub fn magnitude(&self) -> Result<ScalarGrid> {
        velocity_magnitude(self)
    }
}

pub fn velocity_magnitude(field: &VectorGrid) -> Result<ScalarGrid> {
    let (u, v, w) = (&field.u, &field.v, &field.w);
    if u.dims() != v.dims() || u.dims() != w.dims() {
        return Err(Error::Dimension(String::from("vector components differ in dims")));
    }
    let values = u
        .values()
        .iter()
        .zip(v.values())
        .zip(w.values())
        .map(|((&a, &b), &c)| {
            let (a, b, c) = (a as f64, b as f64, c as f64);
            libm::sqrt(a * a + b * b + c * c) as f32
        })
        .collect();
    let mut out = ScalarGrid::new(u.dims(), values)?;
    out.spacing = u.spacing();
    out.time_index = u.time_index;
    out.member_id = u.member_id;
    out.field_name = String::from("velocity_magnitude");
    Ok(out)
}

/// Ordered members that share dims, spacing, field name and time step.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    members: Vec<ScalarGrid>,
}

impl Ensemble {
    pub fn new(members: Vec<ScalarGrid>) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| Error::Argument(String::from("an ensemble needs at least one member")))?;
        for m in &members[1..] {
            if m.dims() != first.dims() {
                return Err(Error::Dimension(format!(
                    "member {} has dims {:?}, expected {:?}",
                    m.member_id,
                    m.dims(),
                    first.dims()
                )));
            }
            if m.spacing() != first.spacing() {
                return Err(Error::Dimension(format!("member {} differs in spacing", m.member_id)));
            }
            if m.field_name != first.field_name || m.time_index != first.time_index {
                return Err(Error::Data(format!(
                    "member {} differs in field name or time step",
                    m.member_id
                )));
            }
        }
        Ok(Self { members })
    }

    #[inline]
    pub fn members(&self) -> &[ScalarGrid] {
        &self.members
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn dims(&self) -> Dims {
        self.members[0].dims()
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.members[0].spacing()
    }

    pub fn time_index(&self) -> u32 {
        self.members[0].time_index
    }

    pub fn field_name(&self) -> &str {
        &self.members[0].field_name
    }

    /// Per-voxel samples gathered across members, in member order.
    pub fn samples_at(&self, voxel: usize, out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.members.iter().map(|m| m.values()[voxel] as f64));
    }

    pub fn slice_z(&self, z: usize) -> Result<Self> {
        let members = self.members.iter().map(|m| m.slice_z(z)).collect::<Result<_>>()?;
        Ok(Self { members })
    }

    pub fn negate(&self) -> Self {
        Self { members: self.members.iter().map(ScalarGrid::negate).collect() }
    }

    /// Seeded choice of `n` members without replacement; original order is kept.
    pub fn subsample(&self, n: usize, seed: u64) -> Result<Self> {
        let m = self.members.len();
        if n == 0 || n > m {
            return Err(Error::Argument(format!("subsample size {n} outside 1..={m}")));
        }
        if n == m {
            return Ok(self.clone());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked = rand::seq::index::sample(&mut rng, m, n).into_vec();
        picked.sort_unstable();
        Ok(Self { members: picked.into_iter().map(|i| self.members[i].clone()).collect() })
    }

    pub fn into_members(self) -> Vec<ScalarGrid> {
        self.members
    }
}
