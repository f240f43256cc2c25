//! Classical lung segmenters: Otsu + connected components, and marker-based
//! watershed, plus the raster primitives they are built from.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, VecDeque};

use crate::error::{Error, Result};
use crate::imgio::{BinaryMask, GrayImage};

/// 256-bin intensity histogram.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Histogram256 {
    pub bins: [u64; 256],
}

impl Histogram256 {
    pub fn of(img: &GrayImage) -> Self {
        let mut bins = [0u64; 256];
        for &v in img.data() {
            bins[level(v) as usize] += 1;
        }
        Self { bins }
    }

    pub fn total(&self) -> u64 {
        self.bins.iter().sum()
    }
}

/// Quantizes an intensity in `[0, 1]` to a level in `0..=255` (`floor(255 v)`).
pub fn level(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).floor() as u8
}

/// `a * b` as a 192-bit value `(high, low 64 bits)`, for exact comparisons.
fn widening_mul(a: u128, b: u64) -> (u128, u64) {
    let lo = (a as u64 as u128) * b as u128;
    let hi = (a >> 64) * b as u128 + (lo >> 64);
    (hi, lo as u64)
}

/// Between-class variance up to the positive factor `1 / N^2`, kept as the
/// exact fraction `(N*S0 - n0*S)^2 / (n0*n1)`.
#[derive(Debug, Clone, Copy)]
struct Separation {
    num: u128,
    den: u64,
}

impl Separation {
    fn cmp_exact(&self, other: &Self) -> Ordering {
        widening_mul(self.num, other.den).cmp(&widening_mul(other.num, self.den))
    }
}

/// Otsu threshold over a histogram: the level `t` maximizing the between-class
/// variance with class 0 = levels `<= t`. Ties resolve to the smallest `t`; a
/// histogram with a single occupied level returns that level.
pub fn otsu_from_histogram(hist: &Histogram256) -> Result<u8> {
    let n = hist.total();
    if n == 0 {
        return Err(Error::EmptyImage);
    }
    assert!(
        n <= 1 << 27,
        "histogram too large for exact Otsu arithmetic"
    );
    let occupied: Vec<usize> = (0..256).filter(|&i| hist.bins[i] > 0).collect();
    if occupied.len() == 1 {
        return Ok(occupied[0] as u8);
    }
    let total_sum: i128 = (0..256).map(|i| i as i128 * hist.bins[i] as i128).sum();
    let (mut n0, mut s0) = (0u64, 0i128);
    let mut best: Option<(u8, Separation)> = None;
    for t in 0..255usize {
        n0 += hist.bins[t];
        s0 += t as i128 * hist.bins[t] as i128;
        let n1 = n - n0;
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let x = (n as i128 * s0 - n0 as i128 * total_sum).unsigned_abs();
        let cand = Separation {
            num: x * x,
            den: n0 * n1,
        };
        match &best {
            Some((_, b)) if cand.cmp_exact(b) != Ordering::Greater => {}
            _ => best = Some((t as u8, cand)),
        }
    }
    Ok(best.map(|(t, _)| t).unwrap_or(0))
}

pub fn otsu_threshold(img: &GrayImage) -> Result<u8> {
    otsu_from_histogram(&Histogram256::of(img))
}

/// Which side of the threshold is foreground.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Polarity {
    /// Foreground = levels `<= t`.
    #[default]
    LungsDark,
    /// Foreground = levels `> t`.
    LungsBright,
}

pub fn binarize(img: &GrayImage, t: u8, polarity: Polarity) -> BinaryMask {
    let data = img
        .data()
        .iter()
        .map(|&v| match polarity {
            Polarity::LungsDark => level(v) <= t,
            Polarity::LungsBright => level(v) > t,
        })
        .collect();
    BinaryMask::new(img.width(), img.height(), data).expect("same dims as image")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Connectivity {
    Four,
    #[default]
    Eight,
}

impl Connectivity {
    /// Neighbor offsets `(dx, dy)` already visited in a raster scan.
    fn backward_offsets(&self) -> &'static [(isize, isize)] {
        match self {
            Connectivity::Four => &[(-1, 0), (0, -1)],
            Connectivity::Eight => &[(-1, 0), (-1, -1), (0, -1), (1, -1)],
        }
    }

    pub fn offsets(&self) -> &'static [(isize, isize)] {
        match self {
            Connectivity::Four => &[(1, 0), (-1, 0), (0, 1), (0, -1)],
            Connectivity::Eight => &[
                (1, 0),
                (-1, 0),
                (0, 1),
                (0, -1),
                (1, 1),
                (1, -1),
                (-1, 1),
                (-1, -1),
            ],
        }
    }
}

/// Region labels; 0 is background, positive labels are `1..=num_labels`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u32>,
    pub num_labels: u32,
}

impl LabelMap {
    pub fn get(&self, x: usize, y: usize) -> u32 {
        self.labels[y * self.width + x]
    }

    /// Pixel count per label, indexed by label (entry 0 counts background).
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.num_labels as usize + 1];
        for &l in &self.labels {
            sizes[l as usize] += 1;
        }
        sizes
    }

    /// Whether each label has a pixel on the image border (index 0 unused).
    pub fn touches_border(&self) -> Vec<bool> {
        let mut touch = vec![false; self.num_labels as usize + 1];
        let (w, h) = (self.width, self.height);
        for y in 0..h {
            for x in 0..w {
                if x == 0 || y == 0 || x + 1 == w || y + 1 == h {
                    touch[self.labels[y * w + x] as usize] = true;
                }
            }
        }
        touch[0] = false;
        touch
    }

    pub fn mask_of(&self, keep: impl Fn(u32) -> bool) -> BinaryMask {
        BinaryMask::new(
            self.width,
            self.height,
            self.labels.iter().map(|&l| l != 0 && keep(l)).collect(),
        )
        .expect("same dims")
    }
}

struct DisjointSet {
    parent: Vec<u32>,
}

impl DisjointSet {
    fn new() -> Self {
        Self { parent: vec![0] }
    }

    fn make(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        id
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let grand = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = grand;
            x = grand;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi as usize] = lo;
        }
    }
}

/// Two-pass union-find labeling. Labels are numbered in order of first
/// appearance in a raster scan, starting at 1.
pub fn connected_components(mask: &BinaryMask, connectivity: Connectivity) -> LabelMap {
    let (w, h) = mask.dims();
    let mut provisional = vec![0u32; w * h];
    let mut sets = DisjointSet::new();
    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) {
                continue;
            }
            let mut label = 0u32;
            for &(dx, dy) in connectivity.backward_offsets() {
                let (nx, ny) = (x as isize + dx, y as isize + dy);
                if nx < 0 || ny < 0 || nx as usize >= w {
                    continue;
                }
                let l = provisional[ny as usize * w + nx as usize];
                if l == 0 {
                    continue;
                }
                if label == 0 {
                    label = l;
                } else {
                    sets.union(label, l);
                }
            }
            provisional[y * w + x] = if label == 0 { sets.make() } else { label };
        }
    }
    let mut remap = vec![0u32; sets.parent.len()];
    let mut next = 0u32;
    let labels = provisional
        .iter()
        .map(|&l| {
            if l == 0 {
                return 0;
            }
            let root = sets.find(l) as usize;
            if remap[root] == 0 {
                next += 1;
                remap[root] = next;
            }
            remap[root]
        })
        .collect();
    LabelMap {
        width: w,
        height: h,
        labels,
        num_labels: next,
    }
}

/// Fills background regions not 4-connected to the image border.
pub fn fill_holes(mask: &BinaryMask) -> BinaryMask {
    let (w, h) = mask.dims();
    let mut outside = vec![false; w * h];
    let mut queue = VecDeque::new();
    for y in 0..h {
        for x in 0..w {
            let border = x == 0 || y == 0 || x + 1 == w || y + 1 == h;
            if border && !mask.get(x, y) {
                outside[y * w + x] = true;
                queue.push_back((x, y));
            }
        }
    }
    while let Some((x, y)) = queue.pop_front() {
        for &(dx, dy) in Connectivity::Four.offsets() {
            let (nx, ny) = (x as isize + dx, y as isize + dy);
            if nx < 0 || ny < 0 || nx as usize >= w || ny as usize >= h {
                continue;
            }
            let i = ny as usize * w + nx as usize;
            if !outside[i] && !mask.data()[i] {
                outside[i] = true;
                queue.push_back((nx as usize, ny as usize));
            }
        }
    }
    BinaryMask::new(w, h, outside.iter().map(|o| !o).collect()).expect("same dims")
}

/// Labels of the (at most) `k` largest entries of `candidates`, ties broken by
/// the smaller label.
fn largest_labels(sizes: &[usize], candidates: impl Iterator<Item = u32>, k: usize) -> Vec<u32> {
    let mut ranked: Vec<u32> = candidates.collect();
    ranked.sort_by_key(|&l| (Reverse(sizes[l as usize]), l));
    ranked.truncate(k);
    ranked
}

/// Stage parameters shared by both classical pipelines.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassicalConfig {
    /// Pixels farther than this fraction of the maximum distance from the
    /// background seed the watershed lung markers.
    pub sure_fg_factor: f64,
    /// Number of lung regions kept.
    pub keep: usize,
}

impl Default for ClassicalConfig {
    fn default() -> Self {
        Self {
            sure_fg_factor: 0.4,
            keep: 2,
        }
    }
}

/// Otsu, dark-side binarization, 8-connected components, border suppression,
/// the two largest survivors with their holes filled.
pub fn cca_lung_pipeline(img: &GrayImage, cfg: &ClassicalConfig) -> Result<BinaryMask> {
    let t = otsu_threshold(img)?;
    let fg = binarize(img, t, Polarity::LungsDark);
    let labels = connected_components(&fg, Connectivity::Eight);
    let sizes = labels.sizes();
    let border = labels.touches_border();
    let kept = largest_labels(
        &sizes,
        (1..=labels.num_labels).filter(|&l| !border[l as usize]),
        cfg.keep,
    );
    let (w, h) = img.dims();
    let mut out = BinaryMask::filled(w, h, false);
    for l in kept {
        let filled = fill_holes(&labels.mask_of(|x| x == l));
        for (o, &f) in (0..w * h).zip(filled.data()) {
            if f {
                out.set(o % w, o / w, true);
            }
        }
    }
    Ok(out)
}

/// City-block distance of every pixel to the nearest background pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DistanceMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u32>,
}

impl DistanceMap {
    pub fn get(&self, x: usize, y: usize) -> u32 {
        self.data[y * self.width + x]
    }

    pub fn max(&self) -> u32 {
        self.data.iter().copied().max().unwrap_or(0)
    }
}

/// Two-pass L1 chamfer transform. Distances are to the nearest background
/// pixel inside the image; a mask without any background pixel measures to
/// the outside of the image instead.
pub fn distance_transform_l1(mask: &BinaryMask) -> DistanceMap {
    let (w, h) = mask.dims();
    let outside = if mask.data().iter().all(|&v| v) {
        0
    } else {
        u32::MAX
    };
    let mut d: Vec<u32> = mask
        .data()
        .iter()
        .map(|&v| if v { u32::MAX } else { 0 })
        .collect();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if d[i] == 0 {
                continue;
            }
            let up = if y == 0 { outside } else { d[i - w] };
            let left = if x == 0 { outside } else { d[i - 1] };
            d[i] = d[i].min(up.saturating_add(1)).min(left.saturating_add(1));
        }
    }
    for y in (0..h).rev() {
        for x in (0..w).rev() {
            let i = y * w + x;
            if d[i] == 0 {
                continue;
            }
            let down = if y + 1 == h { outside } else { d[i + w] };
            let right = if x + 1 == w { outside } else { d[i + 1] };
            d[i] = d[i]
                .min(down.saturating_add(1))
                .min(right.saturating_add(1));
        }
    }
    DistanceMap {
        width: w,
        height: h,
        data: d,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MorphOp {
    Erode,
    Dilate,
    Open,
}

fn cross_filter(mask: &BinaryMask, erode: bool) -> BinaryMask {
    let (w, h) = mask.dims();
    BinaryMask::from_fn(w, h, |x, y| {
        let mut acc = mask.get(x, y);
        for &(dx, dy) in Connectivity::Four.offsets() {
            let (nx, ny) = (x as isize + dx, y as isize + dy);
            let inside = nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h;
            if erode {
                // outside the image counts as background
                acc &= inside && mask.get(nx as usize, ny as usize);
            } else if inside {
                acc |= mask.get(nx as usize, ny as usize);
            }
        }
        acc
    })
}

/// Binary morphology with the 3x3 cross structuring element.
pub fn morphology(mask: &BinaryMask, op: MorphOp) -> BinaryMask {
    match op {
        MorphOp::Erode => cross_filter(mask, true),
        MorphOp::Dilate => cross_filter(mask, false),
        MorphOp::Open => cross_filter(&cross_filter(mask, true), false),
    }
}

/// Meyer priority flood from the positive labels of `markers` over
/// `elevation`, 4-connected. Equal elevations pop in insertion order.
pub fn watershed(elevation: &GrayImage, markers: &LabelMap) -> Result<LabelMap> {
    let (w, h) = elevation.dims();
    if (markers.width, markers.height) != (w, h) {
        return Err(Error::DimMismatch(format!(
            "elevation {:?} vs markers {:?}",
            (w, h),
            (markers.width, markers.height)
        )));
    }
    if !markers.labels.iter().any(|&l| l > 0) {
        return Err(Error::NoMarkers);
    }
    let elev = elevation.data();
    let mut labels = markers.labels.clone();
    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    let mut push = |heap: &mut BinaryHeap<_>, i: usize| {
        // non-negative floats order like their bit patterns
        heap.push(Reverse(((elev[i] + 0.0).to_bits(), seq, i)));
        seq += 1;
    };
    for (i, &l) in labels.iter().enumerate() {
        if l > 0 {
            push(&mut heap, i);
        }
    }
    while let Some(Reverse((_, _, i))) = heap.pop() {
        let (x, y) = (i % w, i / w);
        for &(dx, dy) in Connectivity::Four.offsets() {
            let (nx, ny) = (x as isize + dx, y as isize + dy);
            if nx < 0 || ny < 0 || nx as usize >= w || ny as usize >= h {
                continue;
            }
            let j = ny as usize * w + nx as usize;
            if labels[j] == 0 {
                labels[j] = labels[i];
                push(&mut heap, j);
            }
        }
    }
    Ok(LabelMap {
        width: w,
        height: h,
        labels,
        num_labels: markers.num_labels,
    })
}

/// Lung regions found by the watershed pipeline, relabeled `1..=k` from
/// largest to smallest.
pub fn watershed_lung_regions(img: &GrayImage, cfg: &ClassicalConfig) -> Result<LabelMap> {
    let (w, h) = img.dims();
    let empty = LabelMap {
        width: w,
        height: h,
        labels: vec![0; w * h],
        num_labels: 0,
    };
    let t = otsu_threshold(img)?;
    let opened = fill_holes(&morphology(
        &binarize(img, t, Polarity::LungsDark),
        MorphOp::Open,
    ));
    let dist = distance_transform_l1(&opened);
    let max_d = dist.max();
    if max_d == 0 {
        return Ok(empty);
    }
    let cut = cfg.sure_fg_factor * f64::from(max_d);
    let sure = BinaryMask::new(
        w,
        h,
        dist.data.iter().map(|&d| f64::from(d) > cut).collect(),
    )?;
    let mut markers = connected_components(&sure, Connectivity::Eight);
    let lung_markers = markers.num_labels;
    let background = lung_markers + 1;
    let dilated = morphology(&opened, MorphOp::Dilate);
    let mut has_background = false;
    for (l, &d) in markers.labels.iter_mut().zip(dilated.data()) {
        if !d {
            *l = background;
            has_background = true;
        }
    }
    if has_background {
        markers.num_labels = background;
    }
    // dark lungs sit in the valleys of the intensity surface
    let flooded = watershed(img, &markers)?;
    let sizes = flooded.sizes();
    let border = flooded.touches_border();
    let kept = largest_labels(
        &sizes,
        (1..=lung_markers).filter(|&l| !border[l as usize]),
        cfg.keep,
    );
    let mut out = empty;
    for (rank, &l) in kept.iter().enumerate() {
        for (o, &f) in out.labels.iter_mut().zip(&flooded.labels) {
            if f == l {
                *o = rank as u32 + 1;
            }
        }
    }
    out.num_labels = kept.len() as u32;
    Ok(out)
}

/// Otsu, dark-side binarization, opening, hole filling, distance-transform markers,
/// watershed flooding, border suppression, the two largest regions.
pub fn watershed_lung_pipeline(img: &GrayImage, cfg: &ClassicalConfig) -> Result<BinaryMask> {
    Ok(watershed_lung_regions(img, cfg)?.mask_of(|_| true))
}
