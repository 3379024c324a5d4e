//! Small synthetic split dataset and a matching fast configuration.
#![allow(dead_code)]

use std::path::Path;

use snncl::config::ExperimentConfig;
use snncl::idx::{split_paths, write_idx};
use snncl_core::dataset::Dataset;

pub const SIDE: usize = 6;

/// Ten classes; class `c` lights its own band of pixels, with a little
/// per-sample jitter so samples differ.
pub fn synthetic(per_class: usize, salt: usize) -> Dataset {
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for k in 0..per_class {
        for c in 0..10u8 {
            for p in 0..SIDE * SIDE {
                let lit = (p * 7 + c as usize * 11) % 10 < 4;
                let jitter = ((p * 31 + k * 17 + salt * 13 + c as usize) % 5) as u8 * 12;
                pixels.push(if lit { 255 - jitter } else { jitter });
            }
            labels.push(c);
        }
    }
    Dataset::new(SIDE, SIDE, pixels, labels).unwrap()
}

/// Writes a train/test pair in the standard IDX file names under `root`.
pub fn write_dataset(root: &Path) {
    std::fs::create_dir_all(root).unwrap();
    for (train, ds) in [(true, synthetic(8, 0)), (false, synthetic(4, 1))] {
        let (images, labels) = split_paths(root, train);
        write_idx(&ds, &images, &labels).unwrap();
    }
}

/// A configuration that finishes five tasks in well under a second. The
/// gains are raised so the tiny network is active at all.
pub fn tiny_config(data_root: &Path, output_dir: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.name = "tiny".into();
    cfg.seeds = vec![3];
    cfg.output_dir = output_dir.to_path_buf();
    cfg.data.root = Some(data_root.to_path_buf());
    cfg.network.hidden = vec![16];
    cfg.network.init_gain = 8.0;
    cfg.plasticity.lr = 0.1;
    cfg.encoding.f_input = 500.0;
    cfg.encoding.sample_duration = 50.0;
    cfg.encoding.eval_duration = 50.0;
    cfg
}

/// Parses a CSV file into a header and rows, without quoting support (the
/// synthetic runs never need it).
pub fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    (header, rows)
}
