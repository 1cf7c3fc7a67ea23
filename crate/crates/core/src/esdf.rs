//! Occupancy grids and Euclidean distance fields.
//!
//! Voxel `(i, j, k)` covers `origin + res * [i, i+1) x [j, j+1) x [k, k+1)`
//! and its center sits at `origin + res * (i + 0.5, j + 0.5, k + 0.5)`.
//! Flat storage is x-fastest: `i + nx * (j + ny * k)`.
//!
//! Distances are measured between voxel centers, computed exactly from
//! integer squared voxel offsets with separable lower-envelope passes.

use std::io::{self, BufRead, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec3;
use crate::scalar::Real;

#[derive(Debug, Error)]
pub enum MapError {
    #[error("grid dimensions must be positive, got {0:?}")]
    EmptyDims([usize; 3]),
    #[error("resolution must be positive and finite")]
    BadResolution,
    #[error("invalid obstacle: {0}")]
    BadObstacle(String),
    #[error("point cloud line {line}: {msg}")]
    PointCloud { line: usize, msg: String },
    #[error("malformed grid dump: {0}")]
    Dump(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridGeometry<T> {
    /// Minimum corner of the grid box (m).
    pub origin: Vec3<T>,
    /// Voxel edge length (m).
    pub resolution: T,
    pub dims: [usize; 3],
}

impl<T: Real> GridGeometry<T> {
    pub fn new(origin: Vec3<T>, resolution: T, dims: [usize; 3]) -> Result<Self, MapError> {
        if dims.contains(&0) {
            return Err(MapError::EmptyDims(dims));
        }
        if !(resolution > T::zero() && resolution.is_finite()) {
            return Err(MapError::BadResolution);
        }
        Ok(Self {
            origin,
            resolution,
            dims,
        })
    }

    /// Grid covering the box `[min, max]` (max rounded up to whole voxels).
    pub fn covering(min: Vec3<T>, max: Vec3<T>, resolution: T) -> Result<Self, MapError> {
        if !(resolution > T::zero() && resolution.is_finite()) {
            return Err(MapError::BadResolution);
        }
        let ext = max - min;
        let n = |e: T| {
            ((e / resolution) - T::lit(1e-9))
                .ceil()
                .max(T::one())
                .to_usize()
                .unwrap_or(1)
        };
        Self::new(min, resolution, [n(ext.x), n(ext.y), n(ext.z)])
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn flat(&self, v: [usize; 3]) -> usize {
        v[0] + self.dims[0] * (v[1] + self.dims[1] * v[2])
    }

    #[inline]
    pub fn unflat(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.dims[0];
        let j = (idx / self.dims[0]) % self.dims[1];
        let k = idx / (self.dims[0] * self.dims[1]);
        [i, j, k]
    }

    pub fn center(&self, v: [usize; 3]) -> Vec3<T> {
        let h = T::lit(0.5);
        self.origin
            + Vec3::new(
                (T::lit(v[0] as f64) + h) * self.resolution,
                (T::lit(v[1] as f64) + h) * self.resolution,
                (T::lit(v[2] as f64) + h) * self.resolution,
            )
    }

    pub fn max_corner(&self) -> Vec3<T> {
        self.origin
            + Vec3::new(
                T::lit(self.dims[0] as f64),
                T::lit(self.dims[1] as f64),
                T::lit(self.dims[2] as f64),
            ) * self.resolution
    }

    pub fn contains(&self, p: Vec3<T>) -> bool {
        let hi = self.max_corner();
        (0..3).all(|a| p[a] >= self.origin[a] && p[a] <= hi[a])
    }

    /// Voxel containing `p`, if inside the grid box.
    pub fn voxel_of(&self, p: Vec3<T>) -> Option<[usize; 3]> {
        if !self.contains(p) {
            return None;
        }
        let mut out = [0usize; 3];
        for a in 0..3 {
            let u = ((p[a] - self.origin[a]) / self.resolution).floor();
            out[a] = u.to_usize().unwrap_or(0).min(self.dims[a] - 1);
        }
        Some(out)
    }

    pub fn cast<U: Real>(&self) -> GridGeometry<U> {
        GridGeometry {
            origin: self.origin.cast(),
            resolution: U::lit(self.resolution.as_f64()),
            dims: self.dims,
        }
    }
}

/// Obstacle primitives understood by the rasteriser.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Obstacle {
    /// Axis-aligned box.
    Box { min: [f64; 3], max: [f64; 3] },
    /// Vertical cylinder.
    Cylinder {
        center: [f64; 2],
        radius: f64,
        z_min: f64,
        z_max: f64,
    },
    /// Torus around `center` with symmetry axis `normal`.
    Ring {
        center: [f64; 3],
        normal: [f64; 3],
        major_radius: f64,
        minor_radius: f64,
    },
}

impl Obstacle {
    pub fn validate(&self) -> Result<(), MapError> {
        match self {
            Obstacle::Box { min, max } => {
                if (0..3).any(|a| !(max[a] > min[a])) {
                    return Err(MapError::BadObstacle(format!(
                        "box max {max:?} not above min {min:?}"
                    )));
                }
            }
            Obstacle::Cylinder {
                radius,
                z_min,
                z_max,
                ..
            } => {
                if !(*radius > 0.0) || !(z_max > z_min) {
                    return Err(MapError::BadObstacle(
                        "cylinder needs radius > 0 and z_max > z_min".into(),
                    ));
                }
            }
            Obstacle::Ring {
                normal,
                major_radius,
                minor_radius,
                ..
            } => {
                let n = Vec3::from(*normal);
                if n.norm() == 0.0 || !(*minor_radius > 0.0) || !(*major_radius > *minor_radius) {
                    return Err(MapError::BadObstacle(
                        "ring needs a nonzero normal and major > minor > 0".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Conservative voxel test: true whenever the voxel with the given center
    /// and edge length may intersect the primitive.
    pub fn touches_voxel(&self, c: Vec3<f64>, res: f64) -> bool {
        let h = 0.5 * res;
        match self {
            Obstacle::Box { min, max } => (0..3).all(|a| min[a] < c[a] + h && max[a] > c[a] - h),
            Obstacle::Cylinder {
                center,
                radius,
                z_min,
                z_max,
            } => {
                if !(*z_min < c.z + h && *z_max > c.z - h) {
                    return false;
                }
                // Closest point of the voxel's xy square to the axis.
                let dx = (center[0] - c.x).abs() - h;
                let dy = (center[1] - c.y).abs() - h;
                let (dx, dy) = (dx.max(0.0), dy.max(0.0));
                dx * dx + dy * dy < radius * radius
            }
            Obstacle::Ring {
                center,
                normal,
                major_radius,
                minor_radius,
            } => {
                let n = Vec3::from(*normal).normalized().expect("validated");
                let q = c - Vec3::from(*center);
                let along = q.dot(&n);
                let radial = (q - n * along).norm();
                let core = ((radial - major_radius).powi(2) + along * along).sqrt();
                core <= minor_radius + h * 3f64.sqrt()
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct OccupancyGrid<T> {
    geometry: GridGeometry<T>,
    occupied: Vec<bool>,
}

impl<T: Real> OccupancyGrid<T> {
    pub fn new(geometry: GridGeometry<T>) -> Self {
        Self {
            occupied: vec![false; geometry.len()],
            geometry,
        }
    }

    #[inline]
    pub fn geometry(&self) -> &GridGeometry<T> {
        &self.geometry
    }

    #[inline]
    pub fn is_occupied(&self, v: [usize; 3]) -> bool {
        self.occupied[self.geometry.flat(v)]
    }

    #[inline]
    pub fn set(&mut self, v: [usize; 3], occ: bool) {
        let i = self.geometry.flat(v);
        self.occupied[i] = occ;
    }

    pub fn occupancy(&self) -> &[bool] {
        &self.occupied
    }

    pub fn occupied_count(&self) -> usize {
        self.occupied.iter().filter(|o| **o).count()
    }

    /// Marks every voxel that may intersect `obs`. Returns how many voxels
    /// were newly marked.
    pub fn add_obstacle(&mut self, obs: &Obstacle) -> Result<usize, MapError> {
        obs.validate()?;
        let g = self.geometry.cast::<f64>();
        let mut added = 0;
        for idx in 0..g.len() {
            if self.occupied[idx] {
                continue;
            }
            let c = g.center(g.unflat(idx));
            if obs.touches_voxel(c, g.resolution) {
                self.occupied[idx] = true;
                added += 1;
            }
        }
        Ok(added)
    }

    /// Marks the voxel containing each point; points outside the grid are
    /// ignored. Returns the number of points that landed in the grid.
    pub fn add_points(&mut self, points: &[Vec3<T>]) -> usize {
        let mut inside = 0;
        for p in points {
            if let Some(v) = self.geometry.voxel_of(*p) {
                self.set(v, true);
                inside += 1;
            }
        }
        inside
    }

    /// Copy with every voxel cleared except those for which `keep` is true.
    pub fn masked(&self, keep: impl Fn([usize; 3]) -> bool) -> Self {
        let mut out = Self::new(self.geometry);
        for idx in 0..self.occupied.len() {
            if self.occupied[idx] && keep(self.geometry.unflat(idx)) {
                out.occupied[idx] = true;
            }
        }
        out
    }
}

/// Reads an `x y z` point cloud (meters, one point per line; blank lines and
/// `#` comments are skipped).
pub fn read_point_cloud<T: Real, R: BufRead>(reader: R) -> Result<Vec<Vec3<T>>, MapError> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        let s = line.trim();
        if s.is_empty() || s.starts_with('#') {
            continue;
        }
        let vals: Result<Vec<f64>, _> = s.split_whitespace().map(str::parse::<f64>).collect();
        let vals = vals.map_err(|e| MapError::PointCloud {
            line: n + 1,
            msg: e.to_string(),
        })?;
        if vals.len() != 3 {
            return Err(MapError::PointCloud {
                line: n + 1,
                msg: format!("expected 3 values, got {}", vals.len()),
            });
        }
        out.push(Vec3::new(T::lit(vals[0]), T::lit(vals[1]), T::lit(vals[2])));
    }
    Ok(out)
}

/// Distance field over the same voxels as an [`OccupancyGrid`].
#[derive(Clone, Debug)]
pub struct EsdfGrid<T> {
    geometry: GridGeometry<T>,
    distance: Vec<T>,
    /// `distance` outside obstacles, minus the distance to the nearest free
    /// voxel center inside them.
    signed: Vec<T>,
    occupied: Vec<bool>,
    sentinel: T,
}

/// Interpolated distance lookup.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DistanceQuery<T> {
    pub distance: T,
    /// Gradient of the trilinear interpolant (unitless).
    pub gradient: Vec3<T>,
    /// Set when the query point lay outside the grid box and was clamped.
    pub out_of_bounds: bool,
    /// The point actually interpolated at.
    pub clamped: Vec3<T>,
}

const FAR: f64 = f64::INFINITY;

/// One-dimensional squared distance transform of sampled function `f`
/// (lower envelope of parabolas). Sites with `f = inf` are skipped.
fn edt_1d(f: &[f64], out: &mut [f64], sites: &mut Vec<usize>, bounds: &mut Vec<f64>) {
    sites.clear();
    bounds.clear();
    for (q, fq) in f.iter().enumerate() {
        if !fq.is_finite() {
            continue;
        }
        let qf = q as f64;
        loop {
            match sites.last() {
                None => {
                    sites.push(q);
                    bounds.push(f64::NEG_INFINITY);
                    break;
                }
                Some(&v) => {
                    let vf = v as f64;
                    let s = ((fq + qf * qf) - (f[v] + vf * vf)) / (2.0 * qf - 2.0 * vf);
                    if s <= *bounds.last().unwrap() {
                        sites.pop();
                        bounds.pop();
                    } else {
                        sites.push(q);
                        bounds.push(s);
                        break;
                    }
                }
            }
        }
    }
    if sites.is_empty() {
        out.iter_mut().for_each(|o| *o = FAR);
        return;
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        let qf = q as f64;
        while k + 1 < sites.len() && bounds[k + 1] < qf {
            k += 1;
        }
        let v = sites[k];
        let d = qf - v as f64;
        *o = d * d + f[v];
    }
}

/// Squared distances in voxel units (exact integers stored as `f64`).
pub(crate) fn squared_voxel_distances(dims: [usize; 3], occupied: &[bool]) -> Vec<f64> {
    let [nx, ny, nz] = dims;
    let mut g: Vec<f64> = occupied
        .iter()
        .map(|o| if *o { 0.0 } else { FAR })
        .collect();
    let mut sites = Vec::new();
    let mut bounds = Vec::new();
    let longest = nx.max(ny).max(nz);
    let mut line = vec![0.0; longest];
    let mut out = vec![0.0; longest];
    let idx = |i: usize, j: usize, k: usize| i + nx * (j + ny * k);
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                line[i] = g[idx(i, j, k)];
            }
            edt_1d(&line[..nx], &mut out[..nx], &mut sites, &mut bounds);
            for i in 0..nx {
                g[idx(i, j, k)] = out[i];
            }
        }
    }
    for k in 0..nz {
        for i in 0..nx {
            for j in 0..ny {
                line[j] = g[idx(i, j, k)];
            }
            edt_1d(&line[..ny], &mut out[..ny], &mut sites, &mut bounds);
            for j in 0..ny {
                g[idx(i, j, k)] = out[j];
            }
        }
    }
    for j in 0..ny {
        for i in 0..nx {
            for k in 0..nz {
                line[k] = g[idx(i, j, k)];
            }
            edt_1d(&line[..nz], &mut out[..nz], &mut sites, &mut bounds);
            for k in 0..nz {
                g[idx(i, j, k)] = out[k];
            }
        }
    }
    g
}

/// Exact Euclidean distance from every voxel center to the nearest occupied
/// voxel center. An all-free grid yields `sentinel` everywhere.
pub fn build_esdf<T: Real>(grid: &OccupancyGrid<T>, sentinel: T) -> EsdfGrid<T> {
    let geometry = grid.geometry;
    let res = geometry.resolution;
    let metric = |sq: &[f64]| -> Vec<T> {
        sq.iter()
            .map(|d| {
                if d.is_finite() {
                    res * T::lit(d.sqrt())
                } else {
                    sentinel
                }
            })
            .collect()
    };
    let distance = metric(&squared_voxel_distances(geometry.dims, &grid.occupied));
    let free: Vec<bool> = grid.occupied.iter().map(|o| !o).collect();
    let interior = metric(&squared_voxel_distances(geometry.dims, &free));
    let signed = distance
        .iter()
        .zip(&interior)
        .zip(&grid.occupied)
        .map(|((d, i), occ)| if *occ { -*i } else { *d })
        .collect();
    EsdfGrid {
        geometry,
        distance,
        signed,
        occupied: grid.occupied.clone(),
        sentinel,
    }
}

impl<T: Real> EsdfGrid<T> {
    #[inline]
    pub fn geometry(&self) -> &GridGeometry<T> {
        &self.geometry
    }

    #[inline]
    pub fn distances(&self) -> &[T] {
        &self.distance
    }

    #[inline]
    pub fn sentinel(&self) -> T {
        self.sentinel
    }

    #[inline]
    pub fn voxel_distance(&self, v: [usize; 3]) -> T {
        self.distance[self.geometry.flat(v)]
    }

    #[inline]
    pub fn is_occupied(&self, v: [usize; 3]) -> bool {
        self.occupied[self.geometry.flat(v)]
    }

    /// Distance of the voxel containing `p` (no interpolation). Points outside
    /// the grid report zero.
    pub fn nearest_voxel_distance(&self, p: Vec3<T>) -> T {
        self.geometry
            .voxel_of(p)
            .map(|v| self.voxel_distance(v))
            .unwrap_or_else(T::zero)
    }

    /// Signed value at a voxel: negative inside obstacles.
    #[inline]
    pub fn signed_voxel_distance(&self, v: [usize; 3]) -> T {
        self.signed[self.geometry.flat(v)]
    }

    /// Trilinear distance and its analytic gradient at `p`.
    pub fn query(&self, p: Vec3<T>) -> DistanceQuery<T> {
        self.interpolate(&self.distance, p)
    }

    /// Like [`query`](Self::query) over the signed field, whose gradient
    /// stays informative inside obstacles.
    pub fn query_signed(&self, p: Vec3<T>) -> DistanceQuery<T> {
        self.interpolate(&self.signed, p)
    }

    fn interpolate(&self, field: &[T], p: Vec3<T>) -> DistanceQuery<T> {
        let g = &self.geometry;
        let hi = g.max_corner();
        let mut clamped = p;
        let mut out_of_bounds = false;
        for a in 0..3 {
            if !(p[a] >= g.origin[a]) {
                clamped[a] = g.origin[a];
                out_of_bounds = true;
            } else if !(p[a] <= hi[a]) {
                clamped[a] = hi[a];
                out_of_bounds = true;
            }
        }
        let half = T::lit(0.5);
        let mut base = [0usize; 3];
        let mut frac = [T::zero(); 3];
        let mut active = [false; 3];
        for a in 0..3 {
            let n = g.dims[a];
            let u = (clamped[a] - g.origin[a]) / g.resolution - half;
            // Rounding noise at voxel centers would otherwise blend in neighbours.
            let u = if (u - u.round()).abs() < T::lit(1e-9) {
                u.round()
            } else {
                u
            };
            let upper = T::lit((n - 1) as f64);
            let u = u.max(T::zero()).min(upper);
            if n == 1 {
                base[a] = 0;
                frac[a] = T::zero();
                continue;
            }
            let i0 = u.floor().to_usize().unwrap_or(0).min(n - 2);
            base[a] = i0;
            frac[a] = u - T::lit(i0 as f64);
            // Interior of the center lattice along this axis.
            let raw = (clamped[a] - g.origin[a]) / g.resolution - half;
            active[a] = raw > T::zero() && raw < upper;
        }
        let corner = |dx: usize, dy: usize, dz: usize| -> T {
            let v = [
                (base[0] + dx).min(g.dims[0] - 1),
                (base[1] + dy).min(g.dims[1] - 1),
                (base[2] + dz).min(g.dims[2] - 1),
            ];
            field[g.flat(v)]
        };
        let (fx, fy, fz) = (frac[0], frac[1], frac[2]);
        let one = T::one();
        let c000 = corner(0, 0, 0);
        let c100 = corner(1, 0, 0);
        let c010 = corner(0, 1, 0);
        let c110 = corner(1, 1, 0);
        let c001 = corner(0, 0, 1);
        let c101 = corner(1, 0, 1);
        let c011 = corner(0, 1, 1);
        let c111 = corner(1, 1, 1);

        let c00 = c000 * (one - fx) + c100 * fx;
        let c10 = c010 * (one - fx) + c110 * fx;
        let c01 = c001 * (one - fx) + c101 * fx;
        let c11 = c011 * (one - fx) + c111 * fx;
        let c0 = c00 * (one - fy) + c10 * fy;
        let c1 = c01 * (one - fy) + c11 * fy;
        let distance = c0 * (one - fz) + c1 * fz;

        let inv = one / g.resolution;
        let dx = ((c100 - c000) * (one - fy) * (one - fz)
            + (c110 - c010) * fy * (one - fz)
            + (c101 - c001) * (one - fy) * fz
            + (c111 - c011) * fy * fz)
            * inv;
        let dy = ((c10 - c00) * (one - fz) + (c11 - c01) * fz) * inv;
        let dz = (c1 - c0) * inv;
        let mut gradient = Vec3::new(dx, dy, dz);
        // Outside the center lattice the interpolant is constant along that axis.
        for a in 0..3 {
            if !active[a] {
                gradient[a] = T::zero();
            }
        }
        DistanceQuery {
            distance,
            gradient,
            out_of_bounds,
            clamped,
        }
    }

    /// Minimum interpolated distance over a set of points (bounds violations
    /// count as zero clearance).
    pub fn min_clearance<'a>(&self, points: impl IntoIterator<Item = &'a Vec3<T>>) -> T {
        points
            .into_iter()
            .map(|p| {
                let q = self.query(*p);
                if q.out_of_bounds {
                    T::zero()
                } else {
                    q.distance
                }
            })
            .fold(T::infinity(), T::min)
    }

    /// Text header line followed by little-endian `f32` distances, x-fastest.
    pub fn write_dump<W: Write>(&self, mut w: W) -> Result<(), MapError> {
        let g = &self.geometry;
        writeln!(
            w,
            "esdf origin {} {} {} resolution {} dims {} {} {}",
            g.origin.x.as_f64(),
            g.origin.y.as_f64(),
            g.origin.z.as_f64(),
            g.resolution.as_f64(),
            g.dims[0],
            g.dims[1],
            g.dims[2]
        )?;
        let mut buf = Vec::with_capacity(self.distance.len() * 4);
        for d in &self.distance {
            buf.extend_from_slice(&(d.as_f64() as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }
}

/// Parsed grid dump: geometry and the raw `f32` distances.
#[derive(Clone, Debug)]
pub struct GridDump {
    pub geometry: GridGeometry<f64>,
    pub distances: Vec<f32>,
}

pub fn read_dump<R: Read>(mut r: R) -> Result<GridDump, MapError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let nl = bytes
        .iter()
        .position(|b| *b == b'\n')
        .ok_or_else(|| MapError::Dump("missing header line".into()))?;
    let header = std::str::from_utf8(&bytes[..nl]).map_err(|e| MapError::Dump(e.to_string()))?;
    let tok: Vec<&str> = header.split_whitespace().collect();
    if tok.len() != 11
        || tok[0] != "esdf"
        || tok[1] != "origin"
        || tok[5] != "resolution"
        || tok[7] != "dims"
    {
        return Err(MapError::Dump(format!("unexpected header `{header}`")));
    }
    let f = |s: &str| s.parse::<f64>().map_err(|e| MapError::Dump(e.to_string()));
    let u = |s: &str| {
        s.parse::<usize>()
            .map_err(|e| MapError::Dump(e.to_string()))
    };
    let geometry = GridGeometry::new(
        Vec3::new(f(tok[2])?, f(tok[3])?, f(tok[4])?),
        f(tok[6])?,
        [u(tok[8])?, u(tok[9])?, u(tok[10])?],
    )?;
    let body = &bytes[nl + 1..];
    if body.len() != geometry.len() * 4 {
        return Err(MapError::Dump(format!(
            "expected {} bytes of distances, found {}",
            geometry.len() * 4,
            body.len()
        )));
    }
    let distances = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(GridDump {
        geometry,
        distances,
    })
}
