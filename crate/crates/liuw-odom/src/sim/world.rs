//! Synthetic tunnel world and ray casting.
//!
//! The tunnel is a long axis-aligned box: floor z = 0, ceiling z = height,
//! walls y = ±width/2, end caps at `x_min`/`x_max`. The outer segment
//! (`x_min`..`outer_end`) carries clutter boxes attached to the walls and
//! floor which break the translational symmetry; the inner segment is bare,
//! so every surface there is invariant under translation along x — the
//! degeneracy this crate's detector must expose is geometric fact, not an
//! assumption.

use nalgebra::Vector3;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

/// Axis-aligned box, used for clutter.
#[derive(Clone, Copy, Debug)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    /// Slab-method ray intersection; returns the entry distance if the ray
    /// hits the box at positive range.
    pub fn ray_hit(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        let mut t_near = f64::NEG_INFINITY;
        let mut t_far = f64::INFINITY;
        for i in 0..3 {
            if dir[i].abs() < 1e-12 {
                if origin[i] < self.min[i] || origin[i] > self.max[i] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / dir[i];
            let (t0, t1) = {
                let a = (self.min[i] - origin[i]) * inv;
                let b = (self.max[i] - origin[i]) * inv;
                if a < b {
                    (a, b)
                } else {
                    (b, a)
                }
            };
            t_near = t_near.max(t0);
            t_far = t_far.min(t1);
            if t_near > t_far {
                return None;
            }
        }
        (t_near > 1e-9).then_some(t_near)
    }
}

/// Tunnel geometry; see the module docs for the layout.
#[derive(Clone, Debug)]
pub struct TunnelWorld {
    pub x_min: f64,
    pub x_max: f64,
    /// End of the cluttered outer segment; bare tunnel beyond.
    pub outer_end: f64,
    pub half_width: f64,
    pub height: f64,
    pub clutter: Vec<Aabb>,
}

impl TunnelWorld {
    /// Standard world: tunnel x ∈ [5, 195], 4 m wide, 3 m tall, 20 clutter
    /// boxes in the outer segment x ∈ [5, 36.5]. The clutter layout is a
    /// fixed pseudo-random arrangement, identical for every simulation seed.
    pub fn standard() -> Self {
        let mut w = TunnelWorld {
            x_min: 5.0,
            x_max: 195.0,
            outer_end: 36.5,
            half_width: 2.0,
            height: 3.0,
            clutter: Vec::new(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0xC1);
        for i in 0..20 {
            let x = rng.gen_range(6.0..35.5);
            let sx = rng.gen_range(0.2..0.6);
            let sy = rng.gen_range(0.2..0.5);
            let sz = rng.gen_range(0.3..1.2);
            let aabb = match i % 3 {
                // Left wall, right wall, floor post.
                0 => Aabb {
                    min: Vector3::new(x, w.half_width - sy, 0.0),
                    max: Vector3::new(x + sx, w.half_width, sz),
                },
                1 => Aabb {
                    min: Vector3::new(x, -w.half_width, 0.0),
                    max: Vector3::new(x + sx, -w.half_width + sy, sz),
                },
                _ => {
                    let y = rng.gen_range(-1.2..0.8);
                    Aabb {
                        min: Vector3::new(x, y, 0.0),
                        max: Vector3::new(x + sx, y + sy, sz),
                    }
                }
            };
            w.clutter.push(aabb);
        }
        w
    }

    /// Distance along `dir` (unit) from `origin` (inside the tunnel) to the
    /// first surface, or `None` beyond `max_range`.
    pub fn cast_ray(
        &self,
        origin: &Vector3<f64>,
        dir: &Vector3<f64>,
        max_range: f64,
    ) -> Option<f64> {
        // Exit distance through the tunnel shell (ray starts inside the box).
        let mut t_shell = f64::INFINITY;
        let bounds = [
            (0, self.x_min, self.x_max),
            (1, -self.half_width, self.half_width),
            (2, 0.0, self.height),
        ];
        for (axis, lo, hi) in bounds {
            if dir[axis] > 1e-12 {
                t_shell = t_shell.min((hi - origin[axis]) / dir[axis]);
            } else if dir[axis] < -1e-12 {
                t_shell = t_shell.min((lo - origin[axis]) / dir[axis]);
            }
        }
        let mut best = t_shell;
        for b in &self.clutter {
            if let Some(t) = b.ray_hit(origin, dir) {
                if t < best {
                    best = t;
                }
            }
        }
        (best.is_finite() && best > 1e-9 && best <= max_range).then_some(best)
    }

    /// True if `p` lies strictly inside the free space of the tunnel.
    pub fn inside(&self, p: &Vector3<f64>) -> bool {
        p.x > self.x_min
            && p.x < self.x_max
            && p.y.abs() < self.half_width
            && p.z > 0.0
            && p.z < self.height
            && !self
                .clutter
                .iter()
                .any(|b| (0..3).all(|i| p[i] > b.min[i] && p[i] < b.max[i]))
    }
}
