//! Raw decoding, raster I/O, resampling, splitting and dataset pairing.

mod common;

use std::fs;

use common::{random_image, random_mask, rng};
use lungseg::imgio::*;
use lungseg::{BinaryMask, Error, GrayImage};
use num_rational::Ratio;
use proptest::prelude::*;
use rand::Rng;

fn opts(w: usize, h: usize, invert: bool) -> JsrtOptions {
    JsrtOptions {
        width: w,
        height: h,
        invert,
    }
}

fn words_to_bytes(words: &[u16]) -> Vec<u8> {
    words.iter().flat_map(|w| w.to_be_bytes()).collect()
}

#[test]
fn every_twelve_bit_word_round_trips() {
    let words: Vec<u16> = (0..=4095).collect();
    let bytes = words_to_bytes(&words);
    for invert in [false, true] {
        let img = decode_jsrt(&bytes, &opts(64, 64, invert)).unwrap();
        assert_eq!(encode_jsrt(&img, invert), bytes, "invert {invert}");
        assert!(img.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn out_of_range_words_clamp_to_4095() {
    let bytes = words_to_bytes(&[4096, 65535, 12, 4095]);
    let img = decode_jsrt(&bytes, &opts(2, 2, false)).unwrap();
    assert_eq!(img.data()[..2], [1.0, 1.0]);
    assert_eq!(
        encode_jsrt(&img, false),
        words_to_bytes(&[4095, 4095, 12, 4095])
    );
}

#[test]
fn raw_file_errors() {
    let dir = tempfile::tempdir().unwrap();
    let short = dir.path().join("short.raw");
    fs::write(&short, vec![0u8; 100]).unwrap();
    match read_jsrt_raw(&short, &JsrtOptions::default()) {
        Err(Error::SizeMismatch { expected, actual }) => {
            assert_eq!((expected, actual), (8_388_608, 100));
        }
        other => panic!("expected SizeMismatch, got {other:?}"),
    }
    let missing = dir.path().join("none.raw");
    assert!(matches!(
        read_jsrt_raw(&missing, &JsrtOptions::default()),
        Err(Error::FileMissing(_))
    ));
    let small = dir.path().join("small.raw");
    fs::write(&small, words_to_bytes(&[0, 4095, 2047, 4095])).unwrap();
    let img = read_jsrt_raw(&small, &opts(2, 2, false)).unwrap();
    assert_eq!(img.data(), &[0.0, 1.0, 2047.0 / 4095.0, 1.0]);
}

#[test]
fn mask_formats() {
    let dir = tempfile::tempdir().unwrap();
    let pgm = dir.path().join("m.pgm");
    let mut bytes = b"P5\n2 2\n255\n".to_vec();
    bytes.extend([255, 255, 0, 0]);
    fs::write(&pgm, bytes).unwrap();
    assert_eq!(read_mask(&pgm).unwrap().data(), &[true, true, false, false]);

    let png = dir.path().join("z.png");
    write_mask_png(&BinaryMask::filled(3, 2, false), &png).unwrap();
    let back = read_mask(&png).unwrap();
    assert_eq!(back.dims(), (3, 2));
    assert!(back.is_empty());

    let txt = dir.path().join("notes.png");
    fs::write(&txt, "not an image").unwrap();
    assert!(matches!(read_mask(&txt), Err(Error::UnsupportedFormat(_))));
}

#[test]
fn mask_png_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.png");
    let mut g = rng(3);
    let m = random_mask(&mut g, 17, 9, 0.4);
    write_mask_png(&m, &path).unwrap();
    assert_eq!(read_mask(&path).unwrap(), m);
}

/// Bilinear sample of `img` at output pixel `(x, y)`, half-pixel centers,
/// coordinates clamped to the source extent.
fn bilinear_oracle(img: &GrayImage, ow: usize, oh: usize, x: usize, y: usize) -> f64 {
    let (w, h) = img.dims();
    let sx = ((x as f64 + 0.5) * w as f64 / ow as f64 - 0.5).clamp(0.0, (w - 1) as f64);
    let sy = ((y as f64 + 0.5) * h as f64 / oh as f64 - 0.5).clamp(0.0, (h - 1) as f64);
    let mut acc = 0.0;
    for j in 0..h {
        for i in 0..w {
            let wx = (1.0 - (sx - i as f64).abs()).max(0.0);
            let wy = (1.0 - (sy - j as f64).abs()).max(0.0);
            acc += wx * wy * f64::from(img.get(i, j));
        }
    }
    acc
}

#[test]
fn bilinear_matches_tent_filter_oracle() {
    for seed in 0..40 {
        let mut g = rng(seed);
        let (w, h) = (g.gen_range(1..9), g.gen_range(1..9));
        let img = random_image(&mut g, w, h);
        let (ow, oh) = (g.gen_range(1..14), g.gen_range(1..14));
        let out = resize_bilinear(&img, ow, oh).unwrap();
        for y in 0..oh {
            for x in 0..ow {
                let want = bilinear_oracle(&img, ow, oh, x, y);
                assert!(
                    (f64::from(out.get(x, y)) - want).abs() < 1e-6,
                    "seed {seed} ({x}, {y})"
                );
            }
        }
    }
}

#[test]
fn bilinear_examples() {
    let c = GrayImage::filled(2, 2, 0.7).unwrap();
    assert_eq!(resize_bilinear(&c, 1, 1).unwrap().data(), &[0.7]);
    let diag = GrayImage::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    assert_eq!(resize_bilinear(&diag, 1, 1).unwrap().data(), &[0.5]);
    let mut g = rng(9);
    let img = random_image(&mut g, 3, 3);
    assert_eq!(resize_bilinear(&img, 3, 3).unwrap(), img);
    assert!(matches!(
        resize_bilinear(&img, 0, 3),
        Err(Error::ZeroDimension)
    ));
}

/// Nearest source index by exact rational distance, ties to the smaller index.
fn nearest_oracle(i: usize, in_len: usize, out_len: usize) -> usize {
    let src = Ratio::new((2 * i as i64 + 1) * in_len as i64, 2 * out_len as i64) - Ratio::new(1, 2);
    (0..in_len)
        .min_by_key(|&j| {
            let d = src - Ratio::from_integer(j as i64);
            (if d < Ratio::from_integer(0) { -d } else { d }, j)
        })
        .unwrap()
}

#[test]
fn nearest_matches_rational_oracle() {
    for seed in 0..40 {
        let mut g = rng(100 + seed);
        let (w, h) = (g.gen_range(1..10), g.gen_range(1..10));
        let m = random_mask(&mut g, w, h, 0.5);
        let (ow, oh) = (g.gen_range(1..16), g.gen_range(1..16));
        let out = resize_nearest(&m, ow, oh).unwrap();
        for y in 0..oh {
            for x in 0..ow {
                let want = m.get(nearest_oracle(x, w, ow), nearest_oracle(y, h, oh));
                assert_eq!(out.get(x, y), want, "seed {seed} ({x}, {y})");
            }
        }
    }
}

#[test]
fn nearest_examples() {
    let m = BinaryMask::new(2, 2, vec![true, false, false, true]).unwrap();
    assert_eq!(resize_nearest(&m, 1, 1).unwrap().data(), &[true]);
    let one = BinaryMask::filled(1, 1, true);
    assert_eq!(resize_nearest(&one, 4, 4).unwrap().count(), 16);
    assert_eq!(resize_nearest(&m, 2, 2).unwrap(), m);
    assert!(matches!(
        resize_nearest(&m, 2, 0),
        Err(Error::ZeroDimension)
    ));
}

proptest! {
    #[test]
    fn bilinear_preserves_constants(v in 0.0f32..=1.0, w in 1usize..9, h in 1usize..9, ow in 1usize..20, oh in 1usize..20) {
        let img = GrayImage::filled(w, h, v).unwrap();
        let out = resize_bilinear(&img, ow, oh).unwrap();
        prop_assert!(out.data().iter().all(|&o| o == v));
    }

    #[test]
    fn bilinear_stays_within_source_range(seed in any::<u64>(), ow in 1usize..20, oh in 1usize..20) {
        let mut g = rng(seed);
        let (w, h) = (g.gen_range(1..8), g.gen_range(1..8));
        let img = random_image(&mut g, w, h);
        let lo = img.data().iter().copied().fold(f32::INFINITY, f32::min);
        let hi = img.data().iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let out = resize_bilinear(&img, ow, oh).unwrap();
        prop_assert!(out.data().iter().all(|&o| o >= lo && o <= hi));
    }

    #[test]
    fn split_is_a_partition(n in 3usize..400, seed in any::<u64>()) {
        let s = split_dataset(n, seed).unwrap();
        prop_assert!(s.validate(n).is_ok());
        let (tr, va, te) = split_sizes(n);
        prop_assert_eq!((s.train.len(), s.val.len(), s.test.len()), (tr, va, te));
        prop_assert_eq!(va, n / 10);
        prop_assert_eq!(te, n / 10);
        prop_assert_eq!(&s, &split_dataset(n, seed).unwrap());
    }
}

#[test]
fn split_examples() {
    assert_eq!(split_sizes(10), (8, 1, 1));
    assert_eq!(split_sizes(247), (199, 24, 24));
    assert!(matches!(split_dataset(2, 0), Err(Error::TooFewEntries(2))));
    let s = split_dataset(20, 1).unwrap();
    let json = serde_json::to_string(&s).unwrap();
    let back: SplitSpec = serde_json::from_str(&json).unwrap();
    assert_eq!(back, s);
    let mut broken = s.clone();
    broken.test.push(broken.train[0]);
    assert!(broken.validate(20).is_err());
}

#[test]
fn overlay_panel_layout_and_hues() {
    let style = OverlayStyle::default();
    let img = GrayImage::filled(8, 8, 0.5).unwrap();
    let truth = BinaryMask::from_fn(8, 8, |x, y| (2..6).contains(&x) && (2..6).contains(&y));
    let panel = render_overlay_panel(&img, &truth, &truth, &style).unwrap();
    assert_eq!(
        (panel.width() as usize, panel.height()),
        (4 * 8 + 3 * style.gutter, 8)
    );
    let second = |x: usize, y: usize| panel.get_pixel((8 + style.gutter + x) as u32, y as u32).0;
    for y in 0..8 {
        for x in 0..8 {
            if truth.get(x, y) {
                assert_eq!(second(x, y), style.agreement);
            } else {
                assert_ne!(second(x, y), style.truth_only);
                assert_ne!(second(x, y), style.predicted_only);
            }
        }
    }
    let empty = BinaryMask::filled(8, 8, false);
    let panel = render_overlay_panel(&img, &empty, &truth, &style).unwrap();
    let second = |x: usize, y: usize| panel.get_pixel((8 + style.gutter + x) as u32, y as u32).0;
    assert_eq!(second(3, 3), style.truth_only);
    assert_eq!(second(0, 0), [128, 128, 128]);
    let small = BinaryMask::filled(4, 8, false);
    assert!(matches!(
        render_overlay_panel(&img, &small, &truth, &style),
        Err(Error::DimMismatch(_))
    ));
}

#[test]
fn pairing_by_stem() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    fs::create_dir_all(root.join("images")).unwrap();
    fs::create_dir_all(root.join("masks")).unwrap();
    let img = GrayImage::filled(4, 4, 0.25).unwrap();
    for id in ["a", "b", "c"] {
        write_gray_png(&img, &root.join("images").join(format!("{id}.png"))).unwrap();
    }
    for id in ["a", "c"] {
        write_mask_png(
            &BinaryMask::filled(2, 2, true),
            &root.join("masks").join(format!("{id}.png")),
        )
        .unwrap();
    }
    fs::write(root.join("images").join("readme.txt"), "x").unwrap();
    let pairs = pair_dataset(root).unwrap();
    let ids: Vec<&str> = pairs.iter().map(|p| p.id.as_str()).collect();
    assert_eq!(ids, ["a", "b", "c"]);
    assert!(pairs[1].mask_path.is_none() && pairs[0].mask_path.is_some());

    // masks are resampled to the image dims at load time
    let e = load_entry(
        "a",
        &pairs[0].image_path,
        pairs[0].mask_path.as_deref(),
        &JsrtOptions::default(),
    )
    .unwrap();
    assert_eq!(e.mask.unwrap().dims(), (4, 4));
    assert!((e.image.get(0, 0) - 0.25).abs() < 1.0 / 255.0);

    assert!(matches!(
        pair_dataset(&root.join("nowhere")),
        Err(Error::MissingImagesDir(_))
    ));
}

#[test]
fn manifest_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("manifest.csv");
    let rows = vec![
        ManifestRow {
            id: "x, with comma".into(),
            image_path: "/d/images/x.raw".into(),
            mask_path: String::new(),
            width: 2048,
            height: 2048,
        },
        ManifestRow {
            id: "y".into(),
            image_path: "/d/images/y.png".into(),
            mask_path: "/d/masks/y.png".into(),
            width: 3,
            height: 5,
        },
    ];
    write_manifest(&rows, &path).unwrap();
    let back = read_manifest(&path).unwrap();
    assert_eq!(back, rows);
    assert!(back[0].mask().is_none());
    write_manifest(&[], &path).unwrap();
    assert!(read_manifest(&path).unwrap().is_empty());
}
