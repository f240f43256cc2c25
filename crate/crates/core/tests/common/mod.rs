//! Shared fixtures and independent oracles for the integration tests.
#![allow(dead_code)]

pub mod grad;

use std::collections::VecDeque;

use lungseg::classical::{level, LabelMap};
use lungseg::tensorcore::Tensor;
use lungseg::{BinaryMask, GrayImage};
use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

pub fn rng(seed: u64) -> Xoshiro256PlusPlus {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

pub fn uniform_tensor(rng: &mut impl Rng, shape: [usize; 4], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

/// Uniform values in `(-hi, -lo) U (lo, hi)`.
pub fn away_from_zero(rng: &mut impl Rng, shape: [usize; 4], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let v = rng.gen_range(lo..hi);
        if rng.gen_bool(0.5) {
            v
        } else {
            -v
        }
    })
}

pub fn random_mask(rng: &mut impl Rng, w: usize, h: usize, p: f64) -> BinaryMask {
    BinaryMask::from_fn(w, h, |_, _| rng.gen_bool(p))
}

pub fn random_image(rng: &mut impl Rng, w: usize, h: usize) -> GrayImage {
    GrayImage::from_fn(w, h, |_, _| rng.gen_range(0.0f32..=1.0))
}

pub fn neighbors(eight: bool) -> &'static [(isize, isize)] {
    if eight {
        &[
            (1, 0),
            (-1, 0),
            (0, 1),
            (0, -1),
            (1, 1),
            (1, -1),
            (-1, 1),
            (-1, -1),
        ]
    } else {
        &[(1, 0), (-1, 0), (0, 1), (0, -1)]
    }
}

/// Breadth-first flood-fill labeling, labels in raster order of each region's
/// first pixel.
pub fn flood_labels(mask: &BinaryMask, eight: bool) -> (Vec<u32>, u32) {
    let (w, h) = mask.dims();
    let mut labels = vec![0u32; w * h];
    let mut next = 0;
    for start in 0..w * h {
        if !mask.data()[start] || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        let mut queue = VecDeque::from([start]);
        while let Some(i) = queue.pop_front() {
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            for &(dx, dy) in neighbors(eight) {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if mask.data()[j] && labels[j] == 0 {
                    labels[j] = next;
                    queue.push_back(j);
                }
            }
        }
    }
    (labels, next)
}

/// Renames labels in order of first appearance so partitions compare equal.
pub fn canonical(labels: &[u32]) -> Vec<u32> {
    let mut map = std::collections::HashMap::new();
    labels
        .iter()
        .map(|&l| {
            if l == 0 {
                0
            } else {
                let n = map.len() as u32 + 1;
                *map.entry(l).or_insert(n)
            }
        })
        .collect()
}

pub fn label_map_mask(labels: &LabelMap) -> BinaryMask {
    BinaryMask::from_fn(labels.width, labels.height, |x, y| labels.get(x, y) != 0)
}

/// Forward pass assembled layer by layer from tensorcore ops, independent of
/// the model's own forward. `params` are in the model's declaration order.
pub struct Trace {
    pub probs: Tensor<f64>,
    /// ReLU activity and max-pool winners: the piecewise-linear region.
    pub pattern: Vec<usize>,
}

pub fn reference_forward(params: &[Tensor<f64>], depth: usize, x: &Tensor<f64>) -> Trace {
    use lungseg::tensorcore::{
        concat_channels, conv2d, conv_transpose2d, maxpool2d, relu, sigmoid,
    };
    let mut it = params.iter();
    let mut pattern = Vec::new();
    let conv_relu =
        |x: &Tensor<f64>, it: &mut std::slice::Iter<Tensor<f64>>, pattern: &mut Vec<usize>| {
            let (w, b) = (it.next().unwrap(), it.next().unwrap());
            let pre = conv2d(x, w, b.data(), 1, 1).unwrap();
            pattern.extend(pre.data().iter().map(|&v| usize::from(v > 0.0)));
            relu(&pre)
        };
    let mut skips = Vec::new();
    let mut cur = x.clone();
    for _ in 0..depth {
        let a = conv_relu(&cur, &mut it, &mut pattern);
        let a = conv_relu(&a, &mut it, &mut pattern);
        let pooled = maxpool2d(&a).unwrap();
        pattern.extend(&pooled.argmax);
        skips.push(a);
        cur = pooled.output;
    }
    let a = conv_relu(&cur, &mut it, &mut pattern);
    cur = conv_relu(&a, &mut it, &mut pattern);
    for level in (0..depth).rev() {
        let (uw, ub) = (it.next().unwrap(), it.next().unwrap());
        let up = conv_transpose2d(&cur, uw, ub.data()).unwrap();
        let joined = concat_channels(&up, &skips[level]).unwrap();
        let a = conv_relu(&joined, &mut it, &mut pattern);
        cur = conv_relu(&a, &mut it, &mut pattern);
    }
    let (hw, hb) = (it.next().unwrap(), it.next().unwrap());
    assert!(it.next().is_none(), "unused parameters");
    let logits = conv2d(&cur, hw, hb.data(), 0, 1).unwrap();
    Trace {
        probs: sigmoid(&logits),
        pattern,
    }
}

pub struct UnetGradReport {
    pub worst: f64,
    pub checked: usize,
    /// Coordinates whose `±h` stencil changes the piecewise-linear region.
    pub straddling: usize,
}

/// Backprop versus central differences for every parameter of a depth-2,
/// base-2 network on a 2×1×16×16 batch. Coordinates whose stencil crosses a
/// ReLU or max-pool boundary have no two-sided derivative to compare against
/// and are counted rather than scored.
pub fn unet_grad_report(seed: u64, h: f64) -> UnetGradReport {
    use lungseg::tensorcore::relative_error;
    use lungseg::unet::{mixed_loss, UNet, UNetConfig};
    let cfg = UNetConfig {
        depth: 2,
        base_channels: 2,
        input_size: 16,
        ..Default::default()
    };
    let mut model = UNet::<f64>::new(cfg, seed).unwrap();
    let mut g = rng(700 + seed);
    // zero biases put dead-channel pre-activations exactly on the ReLU kink
    for p in model.params_mut() {
        if p.shape()[1..] == [1, 1, 1] {
            for v in p.value.data_mut() {
                *v = g.gen_range(0.05..0.2);
            }
        }
    }
    let x = uniform_tensor(&mut g, [2, 1, 16, 16], 0.0, 1.0);
    let y = Tensor::from_fn([2, 1, 16, 16], |_| if g.gen_bool(0.4) { 1.0 } else { 0.0 });
    model.zero_grad();
    model.loss_and_backward(&x, &y, 0.5).unwrap();
    let theta = model.flat_params();
    let analytic = model.flat_grads();
    let tensors = |m: &UNet<f64>| {
        m.params()
            .iter()
            .map(|p| p.value.clone())
            .collect::<Vec<_>>()
    };
    let base = reference_forward(&tensors(&model), 2, &x).pattern;
    let mut probe = model.clone();
    let mut v = theta.clone();
    let mut eval = |v: &[f64]| {
        probe.set_flat_params(v);
        let trace = reference_forward(&tensors(&probe), 2, &x);
        (mixed_loss(&trace.probs, &y, 0.5).unwrap(), trace.pattern)
    };
    let mut report = UnetGradReport {
        worst: 0.0,
        checked: 0,
        straddling: 0,
    };
    for i in 0..theta.len() {
        v[i] = theta[i] + h;
        let (up, pu) = eval(&v);
        v[i] = theta[i] - h;
        let (dn, pd) = eval(&v);
        v[i] = theta[i];
        if pu != base || pd != base {
            report.straddling += 1;
            continue;
        }
        report.checked += 1;
        report.worst = report
            .worst
            .max(relative_error(analytic[i], (up - dn) / (2.0 * h)));
    }
    report
}

/// Between-class variance `w0 w1 (mu0 - mu1)^2` in exact rationals, scanned
/// over all 256 cuts; the first maximum wins.
pub fn otsu_oracle(img: &GrayImage) -> u8 {
    let levels: Vec<i128> = img.data().iter().map(|&v| i128::from(level(v))).collect();
    let n = levels.len() as i128;
    let first = levels[0];
    if levels.iter().all(|&l| l == first) {
        return first as u8;
    }
    let mut best: Option<(u8, Ratio<i128>)> = None;
    for t in 0..256i128 {
        let (lo, hi): (Vec<i128>, Vec<i128>) = levels.iter().partition(|&&l| l <= t);
        if lo.is_empty() || hi.is_empty() {
            continue;
        }
        let (n0, n1) = (lo.len() as i128, hi.len() as i128);
        let mu0 = Ratio::new(lo.iter().sum(), n0);
        let mu1 = Ratio::new(hi.iter().sum(), n1);
        let d = mu0 - mu1;
        let var = Ratio::new(n0, n) * Ratio::new(n1, n) * d * d;
        if best.as_ref().is_none_or(|(_, b)| var > *b) {
            best = Some((t as u8, var));
        }
    }
    best.unwrap().0
}

/// Images whose intensities cluster on a few levels, which makes ties likely.
pub fn clustered_image(g: &mut impl Rng, w: usize, h: usize) -> GrayImage {
    let k = g.gen_range(2..6);
    let centers: Vec<f32> = (0..k).map(|_| g.gen_range(0.0..1.0)).collect();
    GrayImage::from_fn(w, h, |_, _| {
        let c = centers[g.gen_range(0..k)];
        (c + g.gen_range(-0.02f32..0.02)).clamp(0.0, 1.0)
    })
}

pub fn brute_distance(mask: &BinaryMask) -> Vec<u32> {
    let (w, h) = mask.dims();
    let bg: Vec<(usize, usize)> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .filter(|&(x, y)| !mask.get(x, y))
        .collect();
    (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .map(|(x, y)| {
            if bg.is_empty() {
                // nearest pixel just outside the image
                (x + 1).min(y + 1).min(w - x).min(h - y) as u32
            } else {
                bg.iter()
                    .map(|&(bx, by)| (x.abs_diff(bx) + y.abs_diff(by)) as u32)
                    .min()
                    .unwrap()
            }
        })
        .collect()
}

/// Priority flood with a linear scan for the lowest `(elevation, arrival)`.
pub fn flood_oracle(elev: &GrayImage, markers: &[u32]) -> Vec<u32> {
    let (w, h) = elev.dims();
    let mut labels = markers.to_vec();
    let mut pending: Vec<(f32, usize, usize)> = Vec::new();
    let mut arrival = 0;
    for (i, &l) in markers.iter().enumerate() {
        if l > 0 {
            pending.push((elev.data()[i], arrival, i));
            arrival += 1;
        }
    }
    while !pending.is_empty() {
        let k = (0..pending.len())
            .min_by(|&a, &b| {
                let (ea, sa, _) = pending[a];
                let (eb, sb, _) = pending[b];
                ea.partial_cmp(&eb).unwrap().then(sa.cmp(&sb))
            })
            .unwrap();
        let (_, _, i) = pending.swap_remove(k);
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        for &(dx, dy) in neighbors(false) {
            let (nx, ny) = (x + dx, y + dy);
            if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                continue;
            }
            let j = ny as usize * w + nx as usize;
            if labels[j] == 0 {
                labels[j] = labels[i];
                pending.push((elev.data()[j], arrival, j));
                arrival += 1;
            }
        }
    }
    labels
}

pub fn random_markers(g: &mut impl Rng, w: usize, h: usize) -> LabelMap {
    let k = g.gen_range(1..5u32);
    let mut labels = vec![0u32; w * h];
    for l in 1..=k {
        for _ in 0..g.gen_range(1..4) {
            labels[g.gen_range(0..w * h)] = l;
        }
    }
    LabelMap {
        width: w,
        height: h,
        labels,
        num_labels: k,
    }
}

/// One random elevation/marker pair: the flood must equal [`flood_oracle`],
/// keep marker pixels, use only marker labels, and give every region a
/// 4-connected path to one of its own seeds.
pub fn check_watershed(seed: u64) -> Result<(), String> {
    use lungseg::classical::watershed;
    let mut g = rng(seed);
    let (w, h) = (g.gen_range(2..16), g.gen_range(2..16));
    // coarse levels make plateaus and exercise the arrival-order tie-break
    let elev = GrayImage::from_fn(w, h, |_, _| g.gen_range(0..6) as f32 / 5.0);
    let markers = random_markers(&mut g, w, h);
    let out = watershed(&elev, &markers).map_err(|e| format!("seed {seed}: {e}"))?;
    if out.labels != flood_oracle(&elev, &markers.labels) {
        return Err(format!("seed {seed}: differs from oracle flood"));
    }
    if !out
        .labels
        .iter()
        .all(|&l| l >= 1 && l <= markers.num_labels)
    {
        return Err(format!("seed {seed}: label outside marker set"));
    }
    if out
        .labels
        .iter()
        .zip(&markers.labels)
        .any(|(&o, &m)| m != 0 && o != m)
    {
        return Err(format!("seed {seed}: marker pixel relabeled"));
    }
    for l in 1..=markers.num_labels {
        let region = BinaryMask::from_fn(w, h, |x, y| out.get(x, y) == l);
        let (comp, _) = flood_labels(&region, false);
        let seeded: std::collections::HashSet<u32> = (0..w * h)
            .filter(|&i| markers.labels[i] == l)
            .map(|i| comp[i])
            .collect();
        if !(0..w * h).all(|i| comp[i] == 0 || seeded.contains(&comp[i])) {
            return Err(format!("seed {seed}: region {l} has a part without a seed"));
        }
    }
    Ok(())
}

/// Metric identities for one mask pair, checked against exact rationals.
pub fn check_metric_pair(a: &BinaryMask, b: &BinaryMask) -> Result<(), String> {
    use lungseg::metrics::{dice, iou};
    let d = dice(a, b).map_err(|e| e.to_string())?;
    let j = iou(a, b).map_err(|e| e.to_string())?;
    let (mut tp, mut fp, mut fn_) = (0i64, 0i64, 0i64);
    for (&p, &t) in a.data().iter().zip(b.data()) {
        tp += i64::from(p && t);
        fp += i64::from(p && !t);
        fn_ += i64::from(!p && t);
    }
    let (exact_d, exact_j) = if tp + fp + fn_ == 0 {
        (Ratio::from_integer(1), Ratio::from_integer(1))
    } else {
        (
            Ratio::new(2 * tp, 2 * tp + fp + fn_),
            Ratio::new(tp, tp + fp + fn_),
        )
    };
    if exact_j != exact_d / (Ratio::from_integer(2) - exact_d) {
        return Err("rational identity iou = dice / (2 - dice) fails".into());
    }
    let to_f = |r: Ratio<i64>| *r.numer() as f64 / *r.denom() as f64;
    if (d - to_f(exact_d)).abs() > 1e-12 || (j - to_f(exact_j)).abs() > 1e-12 {
        return Err(format!("dice {d} / iou {j} differ from exact values"));
    }
    if (j - d / (2.0 - d)).abs() > 1e-12 {
        return Err(format!("iou {j} vs dice/(2-dice) {}", d / (2.0 - d)));
    }
    if !(0.0 <= j && j <= d && d <= 1.0) {
        return Err(format!("ordering 0 <= iou <= dice <= 1 fails: {j}, {d}"));
    }
    if dice(b, a).unwrap() != d || iou(b, a).unwrap() != j {
        return Err("not symmetric".into());
    }
    for m in [a, b] {
        if !m.is_empty() && (dice(m, m).unwrap() != 1.0 || iou(m, m).unwrap() != 1.0) {
            return Err("self-overlap is not 1".into());
        }
    }
    let empty_a = a.is_empty();
    let empty_b = b.is_empty();
    if empty_a && empty_b && (d, j) != (1.0, 1.0) {
        return Err("both empty must score 1".into());
    }
    if empty_a != empty_b && (d, j) != (0.0, 0.0) {
        return Err("exactly one empty must score 0".into());
    }
    Ok(())
}

/// A random mask pair; every eighth pair has one or both sides empty.
pub fn random_mask_pair(g: &mut impl Rng, k: u64) -> (BinaryMask, BinaryMask) {
    let (w, h) = (g.gen_range(1..24), g.gen_range(1..24));
    let p = g.gen_range(0.05..0.95);
    let mut a = random_mask(g, w, h, p);
    let mut b = random_mask(g, w, h, p);
    match k % 8 {
        5 => a = BinaryMask::filled(w, h, false),
        6 => b = BinaryMask::filled(w, h, false),
        7 => {
            a = BinaryMask::filled(w, h, false);
            b = a.clone();
        }
        _ => {}
    }
    (a, b)
}

pub const GOLDEN_TABLE: &str = "\
| Name of Approach | IoU Metric | DICE Score |
|---|---|---|
| Connected Component Analysis | 42.6 | 46.2 |
| Watershed Algorithm | 52.8 | 59.7 |
| U-Net Model | 78.4 | 82.7 |
";

/// Aggregates that render to [`GOLDEN_TABLE`].
pub fn golden_rows() -> [lungseg::metrics::SummaryRow; 3] {
    use lungseg::metrics::{Method, SummaryRow};
    [
        SummaryRow {
            method: Method::Cca,
            iou_pct: 42.6,
            dice_pct: 46.2,
        },
        SummaryRow {
            method: Method::Watershed,
            iou_pct: 52.8,
            dice_pct: 59.7,
        },
        SummaryRow {
            method: Method::UNet,
            iou_pct: 78.4,
            dice_pct: 82.7,
        },
    ]
}
