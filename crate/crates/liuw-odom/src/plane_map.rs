//! Incremental voxel-hash map of global-frame LiDAR points with
//! nearest-neighbor plane extraction.

use crate::error::{Error, Result};
use nalgebra::{Matrix3, Vector3};
use std::collections::{HashMap, HashSet};
use std::hash::{BuildHasherDefault, Hasher};
use std::io::Write;

/// One raw LiDAR return in the sensor frame, timestamped relative to the
/// scan end (`t_offset <= 0`).
#[derive(Clone, Copy, Debug)]
pub struct ScanPoint {
    pub pos: Vector3<f64>,
    pub t_offset: f64,
}

/// A full sweep ending at `t_end`.
#[derive(Clone, Debug)]
pub struct LidarScan {
    pub t_end: f64,
    pub points: Vec<ScanPoint>,
}

/// A fitted local plane: unit normal, an anchor point on the plane, and
/// the fit residual.
#[derive(Clone, Copy, Debug)]
pub struct PlaneFeature {
    pub normal: Vector3<f64>,
    pub point: Vector3<f64>,
    pub rms: f64,
}

/// Matching parameters (values follow common tightly-coupled LIO practice).
#[derive(Clone, Copy, Debug)]
pub struct MapConfig {
    pub voxel_size: f64,
    pub knn: usize,
    pub search_radius: f64,
    pub rms_gate: f64,
    pub planarity_ratio: f64,
    /// Insertion downsampling grid (one stored point per cell).
    pub downsample_res: f64,
}

impl Default for MapConfig {
    fn default() -> Self {
        MapConfig {
            voxel_size: 0.5,
            knn: 5,
            search_radius: 1.0,
            rms_gate: 0.1,
            planarity_ratio: 25.0,
            downsample_res: 0.1,
        }
    }
}

// Cheap deterministic hasher for voxel keys; std SipHash dominates query
// time otherwise.
#[derive(Default)]
struct KeyHasher(u64);

impl Hasher for KeyHasher {
    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 = (self.0 ^ b as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        }
    }
    fn write_i32(&mut self, i: i32) {
        self.0 = (self.0 ^ (i as u32 as u64)).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    }
    fn write_i64(&mut self, i: i64) {
        self.0 = (self.0 ^ (i as u64)).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    }
    fn finish(&self) -> u64 {
        self.0 ^ (self.0 >> 31)
    }
}

type Key = (i32, i32, i32);
type FastBuild = BuildHasherDefault<KeyHasher>;

/// Spatial index over inserted global-frame points.
pub struct VoxelPlaneMap {
    cfg: MapConfig,
    points: Vec<Vector3<f64>>,
    cells: HashMap<Key, Vec<u32>, FastBuild>,
    /// 1 mm dedup grid.
    dedup: HashSet<(i64, i64, i64), FastBuild>,
    /// Occupied downsampling cells.
    coarse: HashSet<Key, FastBuild>,
}

impl VoxelPlaneMap {
    pub fn new(cfg: MapConfig) -> Self {
        VoxelPlaneMap {
            cfg,
            points: Vec::new(),
            cells: HashMap::default(),
            dedup: HashSet::default(),
            coarse: HashSet::default(),
        }
    }

    pub fn config(&self) -> &MapConfig {
        &self.cfg
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn key(&self, p: &Vector3<f64>) -> Key {
        let s = 1.0 / self.cfg.voxel_size;
        (
            (p.x * s).floor() as i32,
            (p.y * s).floor() as i32,
            (p.z * s).floor() as i32,
        )
    }

    /// Insert global-frame points. Duplicates are removed at 1 mm resolution.
    pub fn insert(&mut self, pts: &[Vector3<f64>]) {
        for p in pts {
            let mm = (
                (p.x * 1000.0).round() as i64,
                (p.y * 1000.0).round() as i64,
                (p.z * 1000.0).round() as i64,
            );
            if !self.dedup.insert(mm) {
                continue;
            }
            let idx = self.points.len() as u32;
            self.points.push(*p);
            self.cells.entry(self.key(p)).or_default().push(idx);
        }
    }

    /// Insert with the configured downsampling grid: at most one stored
    /// point per `downsample_res` cell, map-wide.
    pub fn insert_downsampled(&mut self, pts: &[Vector3<f64>]) {
        let s = 1.0 / self.cfg.downsample_res;
        let mut keep = Vec::with_capacity(pts.len());
        for p in pts {
            let k = (
                (p.x * s).floor() as i32,
                (p.y * s).floor() as i32,
                (p.z * s).floor() as i32,
            );
            if self.coarse.insert(k) {
                keep.push(*p);
            }
        }
        self.insert(&keep);
    }

    /// k nearest neighbors within `radius`, sorted by distance (ties broken
    /// by insertion order, so results are deterministic).
    pub fn nearest_k(&self, q: &Vector3<f64>, k: usize, radius: f64) -> Vec<Vector3<f64>> {
        let (cx, cy, cz) = self.key(q);
        let r2 = radius * radius;
        let mut found: Vec<(f64, u32)> = Vec::with_capacity(16);

        let gather = |m: i32, found: &mut Vec<(f64, u32)>, ring_only: bool| {
            for dx in -m..=m {
                for dy in -m..=m {
                    for dz in -m..=m {
                        if ring_only && dx.abs() != m && dy.abs() != m && dz.abs() != m {
                            continue;
                        }
                        if let Some(idxs) = self.cells.get(&(cx + dx, cy + dy, cz + dz)) {
                            for &i in idxs {
                                let d2 = (self.points[i as usize] - q).norm_squared();
                                if d2 <= r2 {
                                    found.push((d2, i));
                                }
                            }
                        }
                    }
                }
            }
        };

        // Stage 1: the 27-cell block is guaranteed to contain every point
        // within one voxel size of the query.
        gather(1, &mut found, false);
        let near = self.cfg.voxel_size * self.cfg.voxel_size;
        let enough = found.len() >= k && {
            let mut ds: Vec<f64> = found.iter().map(|f| f.0).collect();
            ds.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
            ds[k - 1] <= near
        };
        if !enough {
            // Expand ring by ring until the covered ball exceeds the radius.
            let mut m = 2;
            loop {
                gather(m, &mut found, true);
                let covered = (m as f64) * self.cfg.voxel_size;
                if covered >= radius {
                    break;
                }
                m += 1;
            }
        }
        found.sort_unstable_by(|a, b| {
            a.0.partial_cmp(&b.0)
                .unwrap()
                .then_with(|| a.1.cmp(&b.1))
        });
        found
            .into_iter()
            .take(k)
            .map(|(_, i)| self.points[i as usize])
            .collect()
    }

    /// Match the local plane around `query`: k nearest neighbors within the
    /// search radius, fitted and gated. Absence is a value.
    pub fn match_plane(&self, query: &Vector3<f64>) -> Option<PlaneFeature> {
        let nb = self.nearest_k(query, self.cfg.knn, self.cfg.search_radius);
        if nb.len() < self.cfg.knn {
            return None;
        }
        match fit_plane(&nb, self.cfg.rms_gate, self.cfg.planarity_ratio) {
            Ok(opt) => opt,
            Err(_) => None,
        }
    }

    /// ASCII export, "x y z" per line, meters, 6 decimals, insertion order.
    pub fn export_ascii<W: Write>(&self, mut w: W) -> Result<()> {
        for p in &self.points {
            writeln!(w, "{:.6} {:.6} {:.6}", p.x, p.y, p.z)?;
        }
        Ok(())
    }

    /// Brute-force scan over every stored point (test oracle).
    pub fn nearest_k_exhaustive(&self, q: &Vector3<f64>, k: usize, radius: f64) -> Vec<Vector3<f64>> {
        let mut all: Vec<(f64, u32)> = self
            .points
            .iter()
            .enumerate()
            .map(|(i, p)| ((p - q).norm_squared(), i as u32))
            .filter(|(d2, _)| *d2 <= radius * radius)
            .collect();
        all.sort_unstable_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then_with(|| a.1.cmp(&b.1)));
        all.into_iter().take(k).map(|(_, i)| self.points[i as usize]).collect()
    }
}

/// Least-squares plane through >= 5 points: centroid plus smallest
/// principal direction of the point scatter.
///
/// Returns `Ok(None)` when the fit is rejected (high rms or a non-planar
/// neighborhood whose two smallest principal values are within
/// `planarity_ratio` of each other).
pub fn fit_plane(
    neighbors: &[Vector3<f64>],
    rms_gate: f64,
    planarity_ratio: f64,
) -> Result<Option<PlaneFeature>> {
    if neighbors.len() < 5 {
        return Err(Error::Degenerate);
    }
    let n = neighbors.len() as f64;
    let centroid: Vector3<f64> = neighbors.iter().sum::<Vector3<f64>>() / n;
    let mut scatter = Matrix3::zeros();
    for p in neighbors {
        let d = p - centroid;
        scatter += d * d.transpose();
    }
    scatter /= n;
    let eig = scatter.symmetric_eigen();
    // Sort eigenpairs ascending.
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    let l_min = eig.eigenvalues[order[0]].max(0.0);
    let l_mid = eig.eigenvalues[order[1]].max(0.0);
    let spread = scatter.trace();
    if l_mid <= 1e-12 * spread.max(1e-12) {
        // Collinear or coincident points: no unique plane.
        return Err(Error::Degenerate);
    }
    let rms = l_min.sqrt();
    if rms > rms_gate || l_mid < planarity_ratio * l_min {
        return Ok(None);
    }
    let normal = eig.eigenvectors.column(order[0]).into_owned().normalize();
    Ok(Some(PlaneFeature {
        normal,
        point: centroid,
        rms,
    }))
}
