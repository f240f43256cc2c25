//! Synthetic chest phantoms: a bright field with two dark elliptical lungs,
//! additive Gaussian noise, and exact truth masks.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::error::Result;
use crate::imgio::{
    write_gray_png, write_mask_png, BinaryMask, DatasetEntry, GrayImage, ManifestRow,
};

/// Axis-aligned ellipse in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipse {
    pub cx: f64,
    pub cy: f64,
    pub rx: f64,
    pub ry: f64,
}

impl Ellipse {
    /// Whether the center of pixel `(x, y)` lies inside.
    pub fn contains(&self, x: usize, y: usize) -> bool {
        let dx = (x as f64 + 0.5 - self.cx) / self.rx;
        let dy = (y as f64 + 0.5 - self.cy) / self.ry;
        dx * dx + dy * dy <= 1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhantomConfig {
    pub size: usize,
    pub noise_sigma: f64,
    pub field: (f64, f64),
    pub lung: (f64, f64),
    /// Join the lungs with a dark horizontal strip of this many pixels.
    pub bridge: Option<usize>,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            size: 128,
            noise_sigma: 0.05,
            field: (0.60, 0.75),
            lung: (0.30, 0.45),
            bridge: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub image: GrayImage,
    pub mask: BinaryMask,
    pub lungs: [Ellipse; 2],
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    rng.gen_range(lo..=hi)
}

/// One phantom, fully determined by `cfg` and `seed`.
pub fn generate(cfg: &PhantomConfig, seed: u64) -> Phantom {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let s = cfg.size as f64;
    let lung = |side: f64, rng: &mut Xoshiro256PlusPlus| Ellipse {
        cx: s * (0.5 + side * uniform(rng, (0.17, 0.23))),
        cy: s * uniform(rng, (0.44, 0.52)),
        rx: s * uniform(rng, (0.10, 0.14)),
        ry: s * uniform(rng, (0.24, 0.32)),
    };
    let lungs = [lung(-1.0, &mut rng), lung(1.0, &mut rng)];
    let field = uniform(&mut rng, cfg.field);
    let dark = uniform(&mut rng, cfg.lung);
    let bridge_rows = cfg.bridge.map(|t| {
        let mid = (lungs[0].cy + lungs[1].cy) / 2.0;
        let top = (mid - t as f64 / 2.0).floor().max(0.0) as usize;
        (top, top + t, lungs[0].cx, lungs[1].cx)
    });
    let inside = |x: usize, y: usize| {
        lungs.iter().any(|e| e.contains(x, y))
            || bridge_rows.is_some_and(|(top, bottom, left, right)| {
                (top..bottom).contains(&y) && (x as f64 + 0.5) > left && (x as f64 + 0.5) < right
            })
    };
    let mask = BinaryMask::from_fn(cfg.size, cfg.size, inside);
    let noise = Normal::new(0.0, cfg.noise_sigma).expect("finite sigma");
    let image = GrayImage::from_fn(cfg.size, cfg.size, |x, y| {
        let base = if mask.get(x, y) { dark } else { field };
        (base + noise.sample(&mut rng)) as f32
    });
    Phantom { image, mask, lungs }
}

/// `n` phantoms; entry `i` is seeded with `seed + i`.
pub fn generate_set(cfg: &PhantomConfig, n: usize, seed: u64) -> Vec<(String, Phantom)> {
    (0..n)
        .map(|i| {
            (
                format!("phantom_{i:04}"),
                generate(cfg, seed.wrapping_add(i as u64)),
            )
        })
        .collect()
}

pub fn to_entries(set: &[(String, Phantom)]) -> Vec<DatasetEntry> {
    set.iter()
        .map(|(id, p)| DatasetEntry {
            id: id.clone(),
            image: p.image.clone(),
            mask: Some(p.mask.clone()),
        })
        .collect()
}

/// Writes `images/<id>.png` and `masks/<id>.png` under `root`.
pub fn write_dataset(root: &Path, set: &[(String, Phantom)]) -> Result<Vec<ManifestRow>> {
    let images = root.join("images");
    let masks = root.join("masks");
    std::fs::create_dir_all(&images)?;
    std::fs::create_dir_all(&masks)?;
    set.iter()
        .map(|(id, p)| {
            let image_path = images.join(format!("{id}.png"));
            let mask_path = masks.join(format!("{id}.png"));
            write_gray_png(&p.image, &image_path)?;
            write_mask_png(&p.mask, &mask_path)?;
            Ok(ManifestRow {
                id: id.clone(),
                image_path: image_path.to_string_lossy().into_owned(),
                mask_path: mask_path.to_string_lossy().into_owned(),
                width: p.image.width(),
                height: p.image.height(),
            })
        })
        .collect()
}
