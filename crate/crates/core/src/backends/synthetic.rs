//! Ground-truth scenes for testing.
//!
//! A scene is a height field `z = h(x, y)` in world coordinates, textured
//! procedurally in `(x, y)`. Cameras look roughly along world `+z`. Every
//! pixel ray is intersected with the surface, which gives exact point maps
//! and exact correspondences for any set of camera poses.

use nalgebra::{Point3, Rotation3, Vector3};
use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CameraIntrinsics, ImageFrame, Pose};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SurfaceGeometry {
    /// Fronto-parallel plane at the middle of the depth range.
    Plane,
    /// Sum of random Gaussian bumps.
    RandomCloud,
    /// Separable sinusoidal relief.
    TexturedHeightField,
}

/// Geometry of a synthetic scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSurface {
    pub geometry: SurfaceGeometry,
    /// World-z interval the surface stays within.
    pub depth_range: (f64, f64),
    pub seed: u64,
}

impl SceneSurface {
    pub fn plane(z: f64) -> Self {
        Self {
            geometry: SurfaceGeometry::Plane,
            depth_range: (z, z),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.depth_range;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::Config(format!("invalid depth range {:?}", self.depth_range)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct Bump {
    x: f64,
    y: f64,
    inv_two_sigma2: f64,
    amp: f64,
}

/// Evaluable form of a [`SceneSurface`].
#[derive(Clone, Debug)]
pub struct Surface {
    kind: SurfaceGeometry,
    mid: f64,
    half: f64,
    freq: (f64, f64),
    phase: (f64, f64),
    bumps: Vec<Bump>,
}

const MARCH_STEPS: usize = 96;
const REFINE_STEPS: usize = 100;

impl Surface {
    pub fn new(spec: &SceneSurface) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let (lo, hi) = spec.depth_range;
        let bumps = (0..10)
            .map(|_| {
                let sigma: f64 = rng.random_range(0.3..0.9);
                Bump {
                    x: rng.random_range(-2.5..2.5),
                    y: rng.random_range(-2.5..2.5),
                    inv_two_sigma2: 1.0 / (2.0 * sigma * sigma),
                    amp: rng.random_range(-1.5..1.5),
                }
            })
            .collect();
        Ok(Self {
            kind: spec.geometry,
            mid: 0.5 * (lo + hi),
            half: 0.5 * (hi - lo),
            freq: (rng.random_range(0.8..1.6), rng.random_range(0.8..1.6)),
            phase: (rng.random_range(0.0..6.3), rng.random_range(0.0..6.3)),
            bumps,
        })
    }

    pub fn height(&self, x: f64, y: f64) -> f64 {
        match self.kind {
            SurfaceGeometry::Plane => self.mid,
            SurfaceGeometry::TexturedHeightField => {
                self.mid
                    + self.half * (self.freq.0 * x + self.phase.0).sin() * (self.freq.1 * y + self.phase.1).cos()
            }
            SurfaceGeometry::RandomCloud => {
                let s: f64 = self
                    .bumps
                    .iter()
                    .map(|b| {
                        let d2 = (x - b.x).powi(2) + (y - b.y).powi(2);
                        b.amp * (-d2 * b.inv_two_sigma2).exp()
                    })
                    .sum();
                self.mid + self.half * s.tanh()
            }
        }
    }

    /// Ray parameter of the first surface hit along `origin + t·dir`.
    pub fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        if !(dir.z > 0.0) {
            return None;
        }
        if self.kind == SurfaceGeometry::Plane || self.half == 0.0 {
            let t = (self.mid - origin.z) / dir.z;
            return (t > 0.0).then_some(t);
        }
        let g = |t: f64| {
            let p = origin + dir * t;
            p.z - self.height(p.x, p.y)
        };
        let t_lo = ((self.mid - self.half - origin.z) / dir.z).max(0.0);
        let t_hi = (self.mid + self.half - origin.z) / dir.z;
        if t_hi <= t_lo || g(t_lo) > 0.0 {
            return None;
        }
        let step = (t_hi - t_lo) / MARCH_STEPS as f64;
        let mut a = t_lo;
        for k in 1..=MARCH_STEPS {
            let b = if k == MARCH_STEPS { t_hi } else { t_lo + step * k as f64 };
            let gb = g(b);
            if gb >= 0.0 {
                // Illinois variant of regula falsi on the bracket [a, b]
                let (mut lo, mut hi, mut glo, mut ghi) = (a, b, g(a), gb);
                let mut last = 0i8;
                for _ in 0..REFINE_STEPS {
                    if hi - lo <= 1e-15 * hi.max(1.0) {
                        break;
                    }
                    let m = (lo * ghi - hi * glo) / (ghi - glo);
                    let m = if m > lo && m < hi { m } else { 0.5 * (lo + hi) };
                    let gm = g(m);
                    if gm == 0.0 {
                        return Some(m);
                    }
                    if gm > 0.0 {
                        hi = m;
                        ghi = gm;
                        if last == 1 {
                            glo *= 0.5;
                        }
                        last = 1;
                    } else {
                        lo = m;
                        glo = gm;
                        if last == -1 {
                            ghi *= 0.5;
                        }
                        last = -1;
                    }
                }
                return Some(hi);
            }
            a = b;
        }
        None
    }
}

/// Smooth procedural RGB texture over world `(x, y)`.
#[derive(Clone, Debug)]
pub struct Texture {
    // per channel: (kx, ky, phase, amplitude)
    waves: [[(f64, f64, f64, f64); 3]; 3],
}

impl Texture {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_7E57_u64);
        let mut waves = [[(0.0, 0.0, 0.0, 0.0); 3]; 3];
        for channel in waves.iter_mut() {
            for w in channel.iter_mut() {
                let freq: f64 = rng.random_range(0.4..1.6);
                let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                *w = (
                    std::f64::consts::TAU * freq * angle.cos(),
                    std::f64::consts::TAU * freq * angle.sin(),
                    rng.random_range(0.0..std::f64::consts::TAU),
                    rng.random_range(0.08..0.14),
                );
            }
        }
        Self { waves }
    }

    pub fn color(&self, x: f64, y: f64) -> [f64; 3] {
        let mut out = [0.5; 3];
        for (c, channel) in self.waves.iter().enumerate() {
            for (kx, ky, phase, amp) in channel {
                out[c] += amp * (kx * x + ky * y + phase).sin();
            }
            out[c] = out[c].clamp(0.02, 0.98);
        }
        out
    }
}

/// Evaluates `f(col, row)` for every pixel, rows in parallel, flattened row-major.
fn cast_rows<F>(width: usize, height: usize, f: F) -> Result<Vec<f64>>
where
    F: Fn(usize, usize) -> Option<Vector3<f64>> + Sync,
{
    let rows: Vec<Vec<f64>> = (0..height)
        .into_par_iter()
        .map(|r| {
            let mut row = Vec::with_capacity(width * 3);
            for c in 0..width {
                let p = f(c, r).ok_or_else(|| {
                    Error::BackendUnavailable(format!("synthetic ray through pixel ({c}, {r}) misses the surface"))
                })?;
                row.extend_from_slice(&[p.x, p.y, p.z]);
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;
    Ok(rows.concat())
}

/// World-space surface hit for every pixel of a camera, or an error if any ray misses.
pub fn cast_view(
    surface: &Surface,
    pose: &Pose,
    k: &CameraIntrinsics,
    width: usize,
    height: usize,
) -> Result<Array3<f64>> {
    let rot = pose.rotation();
    let origin = pose.center();
    let rows = cast_rows(width, height, |c, r| {
        let dir = rot * k.ray(c as f64, r as f64);
        let t = surface.intersect(&origin, &dir)?;
        Some(origin + dir * t)
    })?;
    let world = Array3::from_shape_vec((height, width, 3), rows).expect("row layout");
    Ok(world)
}

/// Point map of one camera expressed in the `reference` camera frame.
///
/// When the frame is its own reference the points are formed as `t·ray`
/// directly, so they reproject onto their pixel centers to rounding precision.
pub fn point_map(
    surface: &Surface,
    pose: &Pose,
    k: &CameraIntrinsics,
    width: usize,
    height: usize,
    reference: &Pose,
) -> Result<Array3<f64>> {
    let own = pose == reference;
    let rot = pose.rotation();
    let origin = pose.center();
    let rows = cast_rows(width, height, |c, r| {
        let ray = k.ray(c as f64, r as f64);
        let dir = rot * ray;
        let t = surface.intersect(&origin, &dir)?;
        Some(if own {
            ray * t
        } else {
            reference.world_to_camera(&Point3::from(origin + dir * t)).coords
        })
    })?;
    let out = Array3::from_shape_vec((height, width, 3), rows).expect("row layout");
    Ok(out)
}

/// Renders a view; `repaint` marks linear pixel indices that take their
/// color from `fresh` instead of `texture`.
pub fn render(
    world: &Array3<f64>,
    texture: &Texture,
    fresh: &Texture,
    repaint: &[bool],
) -> Array3<f64> {
    let (h, w, _) = world.dim();
    let mut px = Array3::zeros((h, w, 3));
    for r in 0..h {
        for c in 0..w {
            let (x, y) = (world[[r, c, 0]], world[[r, c, 1]]);
            let tex = if repaint.get(r * w + c).copied().unwrap_or(false) { fresh } else { texture };
            let rgb = tex.color(x, y);
            for k in 0..3 {
                px[[r, c, k]] = rgb[k];
            }
        }
    }
    px
}

/// Chooses exactly `round(ε·N)` of `N` pixels to repaint.
pub fn repaint_mask(n: usize, epsilon: f64, seed: u64) -> Vec<bool> {
    let count = ((epsilon * n as f64).round() as usize).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xE95_1105);
    let mut mask = vec![false; n];
    for i in rand::seq::index::sample(&mut rng, n, count) {
        mask[i] = true;
    }
    mask
}

fn fresh_seed(texture_seed: u64) -> u64 {
    texture_seed.wrapping_add(0x9E37_79B9_7F4A_7C15)
}

/// A two-view ground-truth scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSceneSpec {
    pub surface: SceneSurface,
    pub width: usize,
    pub height: usize,
    pub intrinsics: CameraIntrinsics,
    pub poses: [Pose; 2],
    pub texture_seed: u64,
    /// Fraction of view-2 pixels repainted with an unrelated texture.
    pub inconsistency: f64,
}

impl SyntheticSceneSpec {
    /// A textured height field seen by two cameras with a small baseline and yaw.
    pub fn standard(seed: u64, width: usize, height: usize, inconsistency: f64) -> Self {
        let f = 0.9 * width as f64;
        let yaw = Rotation3::from_euler_angles(0.0, -0.03, 0.0);
        Self {
            surface: SceneSurface {
                geometry: SurfaceGeometry::TexturedHeightField,
                depth_range: (2.6, 3.4),
                seed,
            },
            width,
            height,
            intrinsics: CameraIntrinsics {
                fx: f,
                fy: f,
                cx: (width as f64 - 1.0) / 2.0,
                cy: (height as f64 - 1.0) / 2.0,
            },
            poses: [
                Pose::identity(),
                Pose::from_parts(yaw.matrix(), &Vector3::new(0.12, 0.02, 0.05)),
            ],
            texture_seed: seed.wrapping_mul(31).wrapping_add(7),
            inconsistency,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.surface.validate()?;
        if !(0.0..=1.0).contains(&self.inconsistency) {
            return Err(Error::Range(format!("inconsistency {} outside [0, 1]", self.inconsistency)));
        }
        self.intrinsics.validate(self.width, self.height)
    }

    /// The same scene sampled at another resolution.
    pub fn rescaled(&self, width: usize, height: usize) -> Self {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Self {
            width,
            height,
            intrinsics: self.intrinsics.rescaled(sx, sy),
            ..self.clone()
        }
    }

    /// Renders both views. View 2 is repainted according to the inconsistency dial.
    pub fn render(&self) -> Result<(ImageFrame, ImageFrame)> {
        self.validate()?;
        let surface = Surface::new(&self.surface)?;
        let texture = Texture::new(self.texture_seed);
        let fresh = Texture::new(fresh_seed(self.texture_seed));
        let (w, h, k) = (self.width, self.height, self.intrinsics);
        let world1 = cast_view(&surface, &self.poses[0], &k, w, h)?;
        let world2 = cast_view(&surface, &self.poses[1], &k, w, h)?;
        let repaint = repaint_mask(w * h, self.inconsistency, self.texture_seed);
        let f1 = ImageFrame::new(render(&world1, &texture, &fresh, &[]), 0).with_pose(self.poses[0], k);
        let f2 = ImageFrame::new(render(&world2, &texture, &fresh, &repaint), 1).with_pose(self.poses[1], k);
        Ok((f1, f2))
    }
}

/// A camera trajectory over one synthetic scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSequenceSpec {
    pub surface: SceneSurface,
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    /// Focal length as a multiple of the image width.
    pub focal_scale: f64,
    /// Camera translation between consecutive frames.
    pub step: [f64; 3],
    /// Yaw increment between consecutive frames, radians.
    pub yaw_step: f64,
    pub texture_seed: u64,
    /// Repaint fraction of the first and last frame; frames in between are
    /// interpolated linearly. Frame 0 is never repainted.
    pub inconsistency: (f64, f64),
}

impl SyntheticSequenceSpec {
    pub fn standard(seed: u64, frames: usize, size: usize) -> Self {
        Self {
            surface: SceneSurface {
                geometry: SurfaceGeometry::TexturedHeightField,
                depth_range: (2.6, 3.4),
                seed,
            },
            frames,
            width: size,
            height: size,
            focal_scale: 0.9,
            step: [0.04, 0.0, 0.01],
            yaw_step: -0.005,
            texture_seed: seed.wrapping_mul(31).wrapping_add(7),
            inconsistency: (0.0, 0.0),
        }
    }

    pub fn intrinsics(&self) -> CameraIntrinsics {
        let f = self.focal_scale * self.width as f64;
        CameraIntrinsics {
            fx: f,
            fy: f,
            cx: (self.width as f64 - 1.0) / 2.0,
            cy: (self.height as f64 - 1.0) / 2.0,
        }
    }

    pub fn pose(&self, index: usize) -> Pose {
        let k = index as f64;
        let rot = Rotation3::from_euler_angles(0.0, self.yaw_step * k, 0.0);
        Pose::from_parts(
            rot.matrix(),
            &Vector3::new(self.step[0] * k, self.step[1] * k, self.step[2] * k),
        )
    }

    pub fn inconsistency_at(&self, index: usize) -> f64 {
        if index == 0 || self.frames < 2 {
            return 0.0;
        }
        let (a, b) = self.inconsistency;
        let t = index as f64 / (self.frames - 1) as f64;
        a + (b - a) * t
    }

    pub fn render(&self) -> Result<Vec<ImageFrame>> {
        if self.frames == 0 {
            return Err(Error::EmptySequence("synthetic sequence with zero frames".into()));
        }
        let surface = Surface::new(&self.surface)?;
        let texture = Texture::new(self.texture_seed);
        let k = self.intrinsics();
        k.validate(self.width, self.height)?;
        (0..self.frames)
            .map(|i| {
                let pose = self.pose(i);
                let world = cast_view(&surface, &pose, &k, self.width, self.height)?;
                let eps = self.inconsistency_at(i);
                let repaint = repaint_mask(
                    self.width * self.height,
                    eps,
                    self.texture_seed.wrapping_add(i as u64),
                );
                // each frame repaints from its own texture so repaints never agree across frames
                let fresh = Texture::new(fresh_seed(self.texture_seed).wrapping_add(i as u64));
                Ok(ImageFrame::new(render(&world, &texture, &fresh, &repaint), i).with_pose(pose, k))
            })
            .collect()
    }
}

/// Pixel correspondence `(u1, v1) ↔ (u2, v2)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub u1: f64,
    pub v1: f64,
    pub u2: f64,
    pub v2: f64,
}

/// Exact correspondences for surface points visible in both frames.
pub fn exact_matches(
    surface: &Surface,
    frame1: (&Pose, &CameraIntrinsics, usize, usize),
    frame2: (&Pose, &CameraIntrinsics, usize, usize),
    count: usize,
    seed: u64,
) -> Vec<Match> {
    let (p1, k1, w1, h1) = frame1;
    let (p2, k2, w2, h2) = frame2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    let (r1, o1) = (p1.rotation(), p1.center());
    let (r2, o2) = (p2.rotation(), p2.center());
    for _ in 0..count.saturating_mul(50) {
        if out.len() == count {
            break;
        }
        let u1 = rng.random_range(0.0..(w1 - 1) as f64);
        let v1 = rng.random_range(0.0..(h1 - 1) as f64);
        let d1 = r1 * k1.ray(u1, v1);
        let Some(t1) = surface.intersect(&o1, &d1) else { continue };
        let world = Point3::from(o1 + d1 * t1);
        let Some((u2, v2)) = k2.project(&p2.world_to_camera(&world).coords) else { continue };
        if !(0.0..=(w2 - 1) as f64).contains(&u2) || !(0.0..=(h2 - 1) as f64).contains(&v2) {
            continue;
        }
        // occlusion test: view 2 must see the same surface point
        let d2 = r2 * k2.ray(u2, v2);
        let Some(t2) = surface.intersect(&o2, &d2) else { continue };
        let seen = o2 + d2 * t2;
        if (seen - world.coords).norm() > 1e-6 * t2.max(1.0) {
            continue;
        }
        out.push(Match { u1, v1, u2, v2 });
    }
    out
}
