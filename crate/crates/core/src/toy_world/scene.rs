//! Procedural "real" videos in two scene families.
//!
//! Family 0: vertical background gradient, striped circles, bright on dark.
//! Family 1: horizontal background gradient, checkered rectangles, dark on bright.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::video::VideoTensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum MotionProgram {
    Still,
    /// Constant velocity in pixels per frame; objects reflect off the frame border.
    Velocity {
        vx: f64,
        vy: f64,
    },
    /// Sinusoidal displacement along one axis.
    Oscillation {
        amplitude: f64,
        period: f64,
        horizontal: bool,
    },
}

impl MotionProgram {
    pub fn is_still(&self) -> bool {
        matches!(self, MotionProgram::Still)
    }

    fn displacement(&self, frame: usize) -> (f64, f64) {
        let f = frame as f64;
        match *self {
            MotionProgram::Still => (0.0, 0.0),
            MotionProgram::Velocity { vx, vy } => (vx * f, vy * f),
            MotionProgram::Oscillation {
                amplitude,
                period,
                horizontal,
            } => {
                let d = amplitude * (std::f64::consts::TAU * f / period).sin();
                if horizontal {
                    (d, 0.0)
                } else {
                    (0.0, d)
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ShapeKind {
    Circle { radius: f64 },
    Rect { half_width: f64, half_height: f64 },
}

impl ShapeKind {
    fn extent(&self) -> (f64, f64) {
        match *self {
            ShapeKind::Circle { radius } => (radius, radius),
            ShapeKind::Rect {
                half_width,
                half_height,
            } => (half_width, half_height),
        }
    }

    fn contains(&self, u: f64, v: f64) -> bool {
        match *self {
            ShapeKind::Circle { radius } => u * u + v * v <= radius * radius,
            ShapeKind::Rect {
                half_width,
                half_height,
            } => u.abs() <= half_width && v.abs() <= half_height,
        }
    }
}

/// Pattern evaluated in object coordinates so it travels with the object.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Texture {
    Flat,
    Stripes { period: f64, angle: f64 },
    Checker { cell: f64 },
}

impl Texture {
    fn value(&self, u: f64, v: f64) -> f64 {
        match *self {
            Texture::Flat => 0.0,
            Texture::Stripes { period, angle } => {
                (std::f64::consts::TAU * (u * angle.cos() + v * angle.sin()) / period).sin()
            }
            Texture::Checker { cell } => {
                if ((u / cell).floor() + (v / cell).floor()).rem_euclid(2.0) < 1.0 {
                    1.0
                } else {
                    -1.0
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub shape: ShapeKind,
    pub cx: f64,
    pub cy: f64,
    pub intensity: f64,
    pub texture: Texture,
    pub texture_amplitude: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Background {
    /// Level at the start of the gradient axis.
    pub base: f64,
    /// Change in level across the full gradient axis.
    pub slope: f64,
    pub vertical: bool,
    /// Faint two-dimensional ripple that gives flat regions some texture.
    pub ripple_amplitude: f64,
    pub ripple_period: f64,
}

impl Background {
    fn value(&self, x: f64, y: f64, w: f64, h: f64) -> f64 {
        let along = if self.vertical { y / h } else { x / w };
        let ripple = (std::f64::consts::TAU * x / self.ripple_period).sin()
            * (std::f64::consts::TAU * y / self.ripple_period).cos();
        self.base + self.slope * along + self.ripple_amplitude * ripple
    }
}

/// Full description of a rendered scene on a `height × width` canvas.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub family: u32,
    pub height: usize,
    pub width: usize,
    pub objects: Vec<SceneObject>,
    pub motion: MotionProgram,
    pub background: Background,
    /// Standard deviation of independent per-frame sensor noise.
    pub noise_std: f64,
    pub seed: u64,
}

impl SceneSpec {
    /// Random scene of `family`, fully determined by `seed`.
    pub fn random(family: u32, seed: u64, height: usize, width: usize) -> Result<Self> {
        if family > 1 {
            return Err(Error::invalid(format!("unknown scene family {family}")));
        }
        let mut r = ChaCha8Rng::seed_from_u64(seed ^ 0x5ce2_e000 ^ ((family as u64) << 40));
        let motion = match r.random_range(0..3) {
            0 => MotionProgram::Still,
            1 => {
                let speed = r.random_range(0.5..1.5);
                let angle: f64 = r.random_range(0.0..std::f64::consts::TAU);
                MotionProgram::Velocity {
                    vx: speed * angle.cos(),
                    vy: speed * angle.sin(),
                }
            }
            _ => MotionProgram::Oscillation {
                amplitude: r.random_range(1.5..4.0),
                period: r.random_range(6.0..16.0),
                horizontal: r.random_bool(0.5),
            },
        };
        Self::random_with_motion(family, seed, height, width, motion, &mut r)
    }

    /// Random scene with the given motion program.
    pub fn random_with_program(
        family: u32,
        seed: u64,
        height: usize,
        width: usize,
        motion: MotionProgram,
    ) -> Result<Self> {
        if family > 1 {
            return Err(Error::invalid(format!("unknown scene family {family}")));
        }
        let mut r = ChaCha8Rng::seed_from_u64(seed ^ 0x5ce2_e001 ^ ((family as u64) << 40));
        Self::random_with_motion(family, seed, height, width, motion, &mut r)
    }

    fn random_with_motion(
        family: u32,
        seed: u64,
        height: usize,
        width: usize,
        motion: MotionProgram,
        r: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if height < 8 || width < 8 {
            return Err(Error::invalid(format!(
                "scene canvas {height}x{width} is below 8x8"
            )));
        }
        let scale = height.min(width) as f64 / 32.0;
        let count = r.random_range(1..=3);
        let mut objects = Vec::with_capacity(count);
        for _ in 0..count {
            let (shape, intensity, texture) = if family == 0 {
                (
                    ShapeKind::Circle {
                        radius: r.random_range(3.0..7.0) * scale,
                    },
                    r.random_range(0.65..0.9),
                    Texture::Stripes {
                        period: r.random_range(3.0..6.0) * scale,
                        angle: r.random_range(0.0..std::f64::consts::PI),
                    },
                )
            } else {
                (
                    ShapeKind::Rect {
                        half_width: r.random_range(3.0..7.0) * scale,
                        half_height: r.random_range(2.5..6.0) * scale,
                    },
                    r.random_range(0.1..0.35),
                    Texture::Checker {
                        cell: r.random_range(2.0..4.0) * scale,
                    },
                )
            };
            let (ex, ey) = shape.extent();
            let cx = r.random_range(ex + 1.0..(width as f64 - 1.0 - ex).max(ex + 1.5));
            let cy = r.random_range(ey + 1.0..(height as f64 - 1.0 - ey).max(ey + 1.5));
            objects.push(SceneObject {
                shape,
                cx,
                cy,
                intensity,
                texture,
                texture_amplitude: r.random_range(0.06..0.12),
            });
        }
        let background = if family == 0 {
            Background {
                base: r.random_range(0.1..0.25),
                slope: r.random_range(0.2..0.35),
                vertical: true,
                ripple_amplitude: 0.03,
                ripple_period: r.random_range(7.0..11.0) * scale,
            }
        } else {
            Background {
                base: r.random_range(0.55..0.7),
                slope: r.random_range(0.15..0.25),
                vertical: false,
                ripple_amplitude: 0.03,
                ripple_period: r.random_range(5.0..8.0) * scale,
            }
        };
        Ok(SceneSpec {
            family,
            height,
            width,
            objects,
            motion,
            background,
            noise_std: 0.004,
            seed,
        })
    }

    /// Object centre at `frame`, reflected so the shape stays inside the canvas.
    pub fn object_centre(&self, obj: &SceneObject, frame: usize) -> (f64, f64) {
        let (dx, dy) = self.motion.displacement(frame);
        let (ex, ey) = obj.shape.extent();
        (
            reflect(obj.cx + dx, ex, self.width as f64 - 1.0 - ex),
            reflect(obj.cy + dy, ey, self.height as f64 - 1.0 - ey),
        )
    }

    /// Noise-free background at the render resolution.
    pub fn render_background(&self, height: usize, width: usize) -> Vec<f64> {
        let (sx, sy) = (
            self.width as f64 / width as f64,
            self.height as f64 / height as f64,
        );
        let mut out = Vec::with_capacity(height * width);
        for i in 0..height {
            for j in 0..width {
                out.push(self.background.value(
                    j as f64 * sx,
                    i as f64 * sy,
                    self.width as f64,
                    self.height as f64,
                ));
            }
        }
        out
    }
}

/// Folds `p` back into `[lo, hi]` as if bouncing off both ends.
fn reflect(p: f64, lo: f64, hi: f64) -> f64 {
    let span = hi - lo;
    if span <= 0.0 {
        return lo;
    }
    let m = (p - lo).rem_euclid(2.0 * span);
    lo + if m <= span { m } else { 2.0 * span - m }
}

/// Renders `frames` frames of `scene` at `height × width`, values clamped to `[0, 1]`.
pub fn render_real_video(
    scene: &SceneSpec,
    frames: usize,
    height: usize,
    width: usize,
) -> Result<VideoTensor> {
    if frames == 0 || height == 0 || width == 0 {
        return Err(Error::invalid("render size must be positive"));
    }
    let (sx, sy) = (
        scene.width as f64 / width as f64,
        scene.height as f64 / height as f64,
    );
    let bg = scene.render_background(height, width);
    let noise =
        Normal::new(0.0, scene.noise_std.max(0.0)).map_err(|e| Error::invalid(e.to_string()))?;
    let mut r = ChaCha8Rng::seed_from_u64(scene.seed ^ 0x0005_e550_0000);
    let mut data = Vec::with_capacity(frames * height * width);
    for t in 0..frames {
        let centres: Vec<(f64, f64)> = scene
            .objects
            .iter()
            .map(|o| scene.object_centre(o, t))
            .collect();
        for i in 0..height {
            for j in 0..width {
                let (x, y) = (j as f64 * sx, i as f64 * sy);
                let mut v = bg[i * width + j];
                for (o, &(cx, cy)) in scene.objects.iter().zip(&centres) {
                    let (u, w) = (x - cx, y - cy);
                    if o.shape.contains(u, w) {
                        v = o.intensity + o.texture_amplitude * o.texture.value(u, w);
                    }
                }
                if scene.noise_std > 0.0 {
                    v += noise.sample(&mut r);
                }
                data.push(v);
            }
        }
    }
    VideoTensor::from_clamped(frames, 1, height, width, data)
}
