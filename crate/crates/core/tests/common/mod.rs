//! Synthetic bar images and on-disk datasets shared by the integration
//! tests and the acceptance suite.

#![allow(dead_code)]

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use deepboost::imageio::{GrayImage120, CANONICAL_PIXELS, CANONICAL_SIDE};
use rand::Rng;
use rand_xoshiro::Xoshiro256PlusPlus;

pub type TestRng = Xoshiro256PlusPlus;

/// A solid bar with anti-aliased edges.
#[derive(Clone, Copy, Debug)]
pub struct Bar {
    pub cx: f64,
    pub cy: f64,
    /// Direction of the long axis, radians; 0 is horizontal.
    pub angle: f64,
    pub length: f64,
    pub width: f64,
}

impl Bar {
    /// Coverage of the pixel centred at `(x, y)`, in `[0, 1]`.
    fn coverage(&self, x: f64, y: f64) -> f64 {
        let (s, c) = self.angle.sin_cos();
        let (dx, dy) = (x - self.cx, y - self.cy);
        let along = dx * c + dy * s;
        let across = -dx * s + dy * c;
        let a = (0.5 + self.length / 2.0 - along.abs()).clamp(0.0, 1.0);
        let b = (0.5 + self.width / 2.0 - across.abs()).clamp(0.0, 1.0);
        a * b
    }
}

/// Background `0.3`, bars add `contrast`, plus uniform noise of amplitude
/// `noise`; clamped to `[0, 1]`.
pub fn render(bars: &[Bar], contrast: f64, noise: f64, rng: &mut TestRng) -> Vec<f64> {
    let mut px = vec![0.0; CANONICAL_PIXELS];
    for r in 0..CANONICAL_SIDE {
        for c in 0..CANONICAL_SIDE {
            let cover = bars
                .iter()
                .map(|b| b.coverage(c as f64, r as f64))
                .fold(0.0, f64::max);
            let v = 0.3 + contrast * cover + noise * (rng.random::<f64>() - 0.5);
            px[r * CANONICAL_SIDE + c] = v.clamp(0.0, 1.0);
        }
    }
    px
}

pub fn gray(px: Vec<f64>) -> GrayImage120 {
    GrayImage120::from_pixels(px).unwrap()
}

/// Two bars forming a fixed pair (45 and 135 degrees); `near` puts their
/// centres 20 px apart, otherwise 60 px. The pair is shifted by up to
/// `jitter` px in each direction.
pub fn bar_pair(rng: &mut TestRng, near: bool, jitter: f64) -> Vec<f64> {
    let half_gap = if near { 10.0 } else { 30.0 };
    let cx = 60.0 + rng.random_range(-jitter..=jitter);
    let cy = 60.0 + rng.random_range(-jitter..=jitter);
    let bars = [
        Bar {
            cx: cx - half_gap,
            cy,
            angle: PI / 4.0,
            length: 22.0,
            width: 3.0,
        },
        Bar {
            cx: cx + half_gap,
            cy,
            angle: 3.0 * PI / 4.0,
            length: 22.0,
            width: 3.0,
        },
    ];
    render(&bars, 0.4, 0.3, rng)
}

/// A single long bar at `angle`, centre shifted by up to `jitter` px.
pub fn oriented_bar(rng: &mut TestRng, angle: f64, jitter: f64) -> Vec<f64> {
    let bar = Bar {
        cx: 60.0 + rng.random_range(-jitter..=jitter),
        cy: 60.0 + rng.random_range(-jitter..=jitter),
        angle,
        length: 44.0,
        width: 4.0,
    };
    render(&[bar], 0.4, 0.3, rng)
}

/// Smooth random texture with values in `[0, max]`.
pub fn random_texture(rng: &mut TestRng, max: f64) -> Vec<f64> {
    let coarse: Vec<f64> = (0..16 * 16).map(|_| rng.random::<f64>()).collect();
    let mut px = vec![0.0; CANONICAL_PIXELS];
    for r in 0..CANONICAL_SIDE {
        for c in 0..CANONICAL_SIDE {
            let (fy, fx) = (r as f64 * 15.0 / 119.0, c as f64 * 15.0 / 119.0);
            let (y0, x0) = (fy.floor() as usize, fx.floor() as usize);
            let (y1, x1) = ((y0 + 1).min(15), (x0 + 1).min(15));
            let (ty, tx) = (fy - y0 as f64, fx - x0 as f64);
            let smooth = coarse[y0 * 16 + x0] * (1.0 - ty) * (1.0 - tx)
                + coarse[y0 * 16 + x1] * (1.0 - ty) * tx
                + coarse[y1 * 16 + x0] * ty * (1.0 - tx)
                + coarse[y1 * 16 + x1] * ty * tx;
            let v = 0.7 * smooth + 0.3 * rng.random::<f64>();
            px[r * CANONICAL_SIDE + c] = max * v;
        }
    }
    px
}

/// Writes an 8-bit grayscale PNG of a 120x120 image in `[0, 1]`.
pub fn write_png(path: &Path, px: &[f64]) {
    let bytes: Vec<u8> = px
        .iter()
        .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    let img =
        image::GrayImage::from_raw(CANONICAL_SIDE as u32, CANONICAL_SIDE as u32, bytes).unwrap();
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).unwrap();
    }
    img.save(path).unwrap();
}

/// Writes `root/<class>/img_<i>.png` for every image of every class.
pub fn write_dataset(root: &Path, classes: &[(&str, Vec<Vec<f64>>)]) {
    for (name, images) in classes {
        for (i, px) in images.iter().enumerate() {
            write_png(&root.join(name).join(format!("img_{i:03}.png")), px);
        }
    }
}

/// Small two-class dataset of horizontal and vertical bars.
pub fn write_toy_dataset(root: &Path, per_class: usize, seed: u64) {
    use rand::SeedableRng;
    let mut rng = TestRng::seed_from_u64(seed);
    let horizontal: Vec<Vec<f64>> = (0..per_class)
        .map(|_| oriented_bar(&mut rng, 0.0, 10.0))
        .collect();
    let vertical: Vec<Vec<f64>> = (0..per_class)
        .map(|_| oriented_bar(&mut rng, PI / 2.0, 10.0))
        .collect();
    write_dataset(root, &[("horizontal", horizontal), ("vertical", vertical)]);
}

/// Config for fast end-to-end runs on the toy dataset.
pub fn write_toy_config(dir: &Path, dataset: &Path, out: &Path) -> PathBuf {
    let text = format!(
        "seed = 11\n\n[dataset]\nroot = {:?}\n\n[split]\ntrain_per_class = 6\nrepeats = 3\n\n\
         [gabor]\nstride = 8\n\n[boost]\nrounds = [12, 6]\nquantile_count = 8\n\n\
         [compose]\ncell_size = 24\nmax_composites = 200\n\n[output]\ndir = {:?}\n",
        dataset, out
    );
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path
}
