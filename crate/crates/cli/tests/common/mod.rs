#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use tfformer::color::RgbImage;
use tfformer::data::save_image;

/// Flags that shrink the network so CLI tests train and infer quickly.
pub const SMALL: &[&str] = &[
    "--set",
    "base_width=4",
    "--set",
    "heads_per_stage=1,1,1",
    "--set",
    "bottleneck_heads=1",
    "--set",
    "refine_width=4",
    "--set",
    "refine_heads=1",
];

pub fn run(args: &[&str]) -> i32 {
    tfformer_cli::run(std::iter::once("tfformer").chain(args.iter().copied()))
}

pub fn run_with(out: &Path, small: bool, args: &[&str]) -> i32 {
    let out = out.to_str().unwrap();
    let mut all = vec!["--out", out];
    if small {
        all.extend_from_slice(SMALL);
    }
    all.extend_from_slice(args);
    run(&all)
}

pub fn parse(args: &[&str]) -> tfformer_cli::Cli {
    use clap::Parser;
    tfformer_cli::Cli::try_parse_from(std::iter::once("tfformer").chain(args.iter().copied())).unwrap()
}

/// Deterministic texture with values in `[lo, hi]`, already on the 8-bit grid.
pub fn textured(h: usize, w: usize, seed: usize, lo: f64, hi: f64) -> RgbImage {
    RgbImage::from_fn(h, w, |c, y, x| {
        let k = (c * 131 + y * 7919 + x * 104_729 + seed * 31 + (y * x) % 17) % 97;
        let v = lo + (hi - lo) * k as f64 / 96.0;
        (v * 255.0).round() / 255.0
    })
}

pub fn checkerboard(h: usize, w: usize, a: f64, b: f64) -> RgbImage {
    RgbImage::from_fn(h, w, |_, y, x| if (x + y) % 2 == 0 { a } else { b })
}

pub fn write_pair(corpus: &Path, name: &str, low: &RgbImage, reference: &RgbImage) {
    for (sub, img) in [("low", low), ("ref", reference)] {
        std::fs::create_dir_all(corpus.join(sub)).unwrap();
        save_image(img, corpus.join(sub).join(name)).unwrap();
    }
}

fn darken(img: &RgbImage) -> RgbImage {
    RgbImage::from_fn(img.height(), img.width(), |c, y, x| (img.get(c, y, x) * 0.1 * 255.0).round() / 255.0)
}

/// Six 16×16 pairs: two dark references that fail the brightness filter,
/// two flat ones that fail the confidence filter and two textured ones that
/// pass both.
pub fn filter_fixture(corpus: &Path) -> Vec<&'static str> {
    let refs = [
        ("dark_a.png", checkerboard(16, 16, 0.0, 10.0 / 255.0)),
        ("dark_b.png", checkerboard(16, 16, 10.0 / 255.0, 0.0)),
        ("flat_a.png", RgbImage::filled(16, 16, [128.0 / 255.0; 3])),
        ("flat_b.png", RgbImage::filled(16, 16, [64.0 / 255.0, 128.0 / 255.0, 192.0 / 255.0])),
        ("tex_a.png", textured(16, 16, 1, 0.2, 0.8)),
        ("tex_b.png", textured(16, 16, 2, 0.2, 0.8)),
    ];
    for (name, r) in &refs {
        write_pair(corpus, name, &darken(r), r);
    }
    vec!["tex_a.png", "tex_b.png"]
}

/// Every file under `dir` with its bytes, keyed by relative path.
pub fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}
