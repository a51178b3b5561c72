//! Deterministic synthetic target images for tests, benchmarks, and demos.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::io::RgbImage;

/// Smoothstep-interpolated value noise on a coarse lattice.
struct ValueNoise {
    cells: usize,
    values: Vec<f64>,
}

impl ValueNoise {
    fn new(cells: usize, rng: &mut ChaCha8Rng) -> Self {
        ValueNoise {
            cells,
            values: (0..(cells + 1) * (cells + 1))
                .map(|_| rng.random_range(-1.0..1.0))
                .collect(),
        }
    }

    fn at(&self, u: f64, v: f64) -> f64 {
        let fu = u * self.cells as f64;
        let fv = v * self.cells as f64;
        let iu = (fu.floor() as usize).min(self.cells - 1);
        let iv = (fv.floor() as usize).min(self.cells - 1);
        let du = smooth(fu - iu as f64);
        let dv = smooth(fv - iv as f64);
        let stride = self.cells + 1;
        let a = self.values[iv * stride + iu];
        let b = self.values[iv * stride + iu + 1];
        let c0 = self.values[(iv + 1) * stride + iu];
        let d = self.values[(iv + 1) * stride + iu + 1];
        let top = a + (b - a) * du;
        let bottom = c0 + (d - c0) * du;
        top + (bottom - top) * dv
    }
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// A natural-image stand-in: smooth color gradients, multi-octave texture,
/// sharp-edged shapes, and a high-frequency striped patch. Deterministic in
/// `(width, height, seed)`.
pub fn natural_crop(width: usize, height: usize, seed: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Pink-ish spectrum: amplitude falls off with octave frequency.
    let octaves: Vec<(ValueNoise, f64)> = [4usize, 8, 16, 32, 64, 128]
        .iter()
        .map(|&cells| {
            let amp = 1.0 / (cells as f64).powf(0.6);
            (ValueNoise::new(cells, &mut rng), amp)
        })
        .collect();
    let chroma: Vec<ValueNoise> = (0..3).map(|_| ValueNoise::new(8, &mut rng)).collect();

    let base_a: [f64; 3] = [rng.random_range(0.2..0.8), rng.random_range(0.2..0.8), rng.random_range(0.2..0.8)];
    let base_b: [f64; 3] = [rng.random_range(0.2..0.8), rng.random_range(0.2..0.8), rng.random_range(0.2..0.8)];

    struct Shape {
        center: (f64, f64),
        radius: f64,
        color: [f64; 3],
        round: bool,
    }
    let shapes: Vec<Shape> = (0..10)
        .map(|_| Shape {
            center: (rng.random_range(0.1..0.9), rng.random_range(0.1..0.9)),
            radius: rng.random_range(0.04..0.18),
            color: [rng.random(), rng.random(), rng.random()],
            round: rng.random(),
        })
        .collect();
    let stripe_angle: f64 = rng.random_range(0.0..std::f64::consts::PI);
    let stripe_freq: f64 = rng.random_range(40.0..70.0);
    let stripe_center = (rng.random_range(0.2..0.8), rng.random_range(0.2..0.8));

    let mut img = RgbImage::filled(width, height, [0.0; 3]);
    for py in 0..height {
        for px in 0..width {
            let u = (px as f64 + 0.5) / width as f64;
            let v = (py as f64 + 0.5) / height as f64;

            let t = (u + v) / 2.0;
            let mut rgb = [
                base_a[0] + (base_b[0] - base_a[0]) * t,
                base_a[1] + (base_b[1] - base_a[1]) * t,
                base_a[2] + (base_b[2] - base_a[2]) * t,
            ];

            let mut tex = 0.0;
            for (noise, amp) in &octaves {
                tex += amp * noise.at(u, v);
            }
            for ch in 0..3 {
                rgb[ch] += 0.9 * tex + 0.15 * chroma[ch].at(u, v);
            }

            for s in &shapes {
                let (dx, dy) = (u - s.center.0, v - s.center.1);
                let inside = if s.round {
                    dx * dx + dy * dy < s.radius * s.radius
                } else {
                    dx.abs() < s.radius && dy.abs() < s.radius
                };
                if inside {
                    for ch in 0..3 {
                        rgb[ch] = 0.15 * rgb[ch] + 0.85 * s.color[ch];
                    }
                }
            }

            let (dx, dy) = (u - stripe_center.0, v - stripe_center.1);
            if dx * dx + dy * dy < 0.03 {
                let phase = stripe_freq * (dx * stripe_angle.cos() + dy * stripe_angle.sin());
                let stripe = 0.5 + 0.5 * (std::f64::consts::TAU * phase).sin();
                for ch in 0..3 {
                    rgb[ch] = 0.4 * rgb[ch] + 0.6 * stripe;
                }
            }

            img.set_pixel(px, py, [
                rgb[0].clamp(0.0, 1.0) as f32,
                rgb[1].clamp(0.0, 1.0) as f32,
                rgb[2].clamp(0.0, 1.0) as f32,
            ]);
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_in_seed() {
        let a = natural_crop(32, 32, 3);
        let b = natural_crop(32, 32, 3);
        assert_eq!(a.data, b.data);
        let c = natural_crop(32, 32, 4);
        assert_ne!(a.data, c.data);
    }

    #[test]
    fn values_in_range() {
        let img = natural_crop(64, 48, 1);
        assert!(img.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
        // Should have non-trivial variation.
        let mean: f32 = img.data.iter().sum::<f32>() / img.data.len() as f32;
        let var: f32 = img.data.iter().map(|v| (v - mean).powi(2)).sum::<f32>() / img.data.len() as f32;
        assert!(var > 0.005, "variance {var}");
    }
}
