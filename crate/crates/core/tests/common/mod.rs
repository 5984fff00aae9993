#![allow(dead_code)]

use mipcnet::data::SyntheticSpec;
use mipcnet::metrics::{BinaryMask, Spacing};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use mipcnet::harness::{AblationAxis, AblationSpec};
use mipcnet::training::TrainConfig;
use mipcnet::ModelConfig;

/// Cells of a markdown table body, header and separator excluded.
pub fn markdown_rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .filter(|l| l.starts_with('|'))
        .skip(2)
        .map(|l| l.trim().trim_matches('|').split(" | ").map(|c| c.trim().trim_matches('`').to_string()).collect())
        .collect()
}

pub fn csv_rows(text: &str) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.records().map(|rec| rec.unwrap().iter().map(str::to_string).collect()).collect()
}

/// Numeric columns (means, stds, counts) of a parsed row; missing values as None.
pub fn numeric(row: &[String]) -> Vec<Option<f64>> {
    row[1..8].iter().map(|c| c.parse::<f64>().ok()).collect()
}

/// A few-second grid on the micro network.
pub fn micro_spec(axis: AblationAxis) -> AblationSpec {
    AblationSpec {
        axis,
        model: ModelConfig::micro(),
        train: TrainConfig { batch_size: 2, max_iterations: 3, ..TrainConfig::default() },
        seeds: vec![0, 1],
        data: SyntheticSpec { num_samples: 6, num_classes: 3, image_size: 32, channels: 1, shapes_per_class: (1, 2), noise_sigma: 0.05, seed: 4 },
        train_fraction: 0.67,
        split_seed: 0,
    }
}

/// Boundary by direct neighbour inspection, then every pairwise distance.
pub fn brute_force_hd(a: &BinaryMask, b: &BinaryMask, sp: Spacing) -> f64 {
    let edge = |m: &BinaryMask| {
        let (h, w) = (m.height() as i64, m.width() as i64);
        let mut pts = Vec::new();
        for r in 0..h {
            for c in 0..w {
                if !m.get(r as usize, c as usize) {
                    continue;
                }
                let mut outside = false;
                for dr in -1..=1i64 {
                    for dc in -1..=1i64 {
                        let (rr, cc) = (r + dr, c + dc);
                        if rr < 0 || cc < 0 || rr >= h || cc >= w || !m.get(rr as usize, cc as usize) {
                            outside = true;
                        }
                    }
                }
                if outside {
                    pts.push((r as f64 * sp.row, c as f64 * sp.col));
                }
            }
        }
        pts
    };
    let (pa, pb) = (edge(a), edge(b));
    let directed = |from: &[(f64, f64)], to: &[(f64, f64)]| {
        from.iter()
            .map(|p| to.iter().map(|q| (p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max)
    };
    directed(&pa, &pb).max(directed(&pb, &pa)).sqrt()
}

pub fn random_mask(rng: &mut ChaCha8Rng, n: usize) -> BinaryMask {
    // a few random rectangles plus speckle, so boundaries are non-trivial
    let mut data = vec![0u8; n * n];
    for _ in 0..rng.gen_range(1..4) {
        let (r0, c0) = (rng.gen_range(0..n), rng.gen_range(0..n));
        let (r1, c1) = (rng.gen_range(r0..n), rng.gen_range(c0..n));
        for r in r0..=r1 {
            for c in c0..=c1 {
                data[r * n + c] = 1;
            }
        }
    }
    for v in data.iter_mut() {
        if rng.gen_bool(0.05) {
            *v ^= 1;
        }
    }
    BinaryMask::new(n, n, data).unwrap()
}
