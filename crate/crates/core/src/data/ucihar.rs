use std::collections::BTreeMap;
use std::path::Path;

use super::{ClientDataset, Samples};
use crate::error::{Error, Result};

pub const UCIHAR_WINDOW: usize = 128;
pub const UCIHAR_CHANNELS: usize = 9;

/// Inertial signal files, in channel order.
pub const UCIHAR_SIGNALS: [&str; 9] = [
    "body_acc_x",
    "body_acc_y",
    "body_acc_z",
    "body_gyro_x",
    "body_gyro_y",
    "body_gyro_z",
    "total_acc_x",
    "total_acc_y",
    "total_acc_z",
];

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn read_matrix(path: &Path, width: usize) -> Result<Vec<Vec<f64>>> {
    read_text(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            let row = line
                .split_whitespace()
                .map(|v| v.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::data(format!("{}:{}: {e}", path.display(), i + 1)))?;
            if row.len() != width {
                return Err(Error::data(format!(
                    "{}:{}: expected {width} values, found {}",
                    path.display(),
                    i + 1,
                    row.len()
                )));
            }
            Ok(row)
        })
        .collect()
}

fn read_ints(path: &Path) -> Result<Vec<usize>> {
    read_text(path)?
        .split_whitespace()
        .map(|v| {
            v.parse::<f64>()
                .ok()
                .filter(|f| f.fract() == 0.0 && *f >= 0.0)
                .map(|f| f as usize)
                .ok_or_else(|| Error::data(format!("{}: bad integer {v:?}", path.display())))
        })
        .collect()
}

fn load_split(
    root: &Path,
    split: &str,
    by_subject: &mut BTreeMap<usize, Samples>,
) -> Result<usize> {
    let dir = root.join(split);
    let labels = read_ints(&dir.join(format!("y_{split}.txt")))?;
    let subjects = read_ints(&dir.join(format!("subject_{split}.txt")))?;
    if labels.len() != subjects.len() {
        return Err(Error::data(format!(
            "{split}: {} labels but {} subject ids",
            labels.len(),
            subjects.len()
        )));
    }
    let mut channels = Vec::with_capacity(UCIHAR_CHANNELS);
    for signal in UCIHAR_SIGNALS {
        let file = dir
            .join("Inertial Signals")
            .join(format!("{signal}_{split}.txt"));
        let m = read_matrix(&file, UCIHAR_WINDOW)?;
        if m.len() != labels.len() {
            return Err(Error::data(format!(
                "{}: {} rows but {} labels",
                file.display(),
                m.len(),
                labels.len()
            )));
        }
        channels.push(m);
    }
    let mut window = vec![0.0; UCIHAR_WINDOW * UCIHAR_CHANNELS];
    for (i, (&label, &subject)) in labels.iter().zip(&subjects).enumerate() {
        if !(1..=6).contains(&label) {
            return Err(Error::data(format!(
                "{split}: activity label {label} outside 1..=6"
            )));
        }
        for (c, m) in channels.iter().enumerate() {
            for (t, v) in m[i].iter().enumerate() {
                window[t * UCIHAR_CHANNELS + c] = *v;
            }
        }
        by_subject
            .entry(subject)
            .or_insert_with(|| Samples::new(UCIHAR_WINDOW, UCIHAR_CHANNELS))
            .push(&window, label - 1);
    }
    Ok(labels.len())
}

/// Loads both official splits and regroups every window by subject; all
/// samples land in the train split pending a per-client re-split.
pub fn load_ucihar(root: impl AsRef<Path>) -> Result<Vec<ClientDataset>> {
    let root = root.as_ref();
    let mut by_subject = BTreeMap::new();
    let n =
        load_split(root, "train", &mut by_subject)? + load_split(root, "test", &mut by_subject)?;
    log::info!("ucihar: {n} windows from {} subjects", by_subject.len());
    Ok(by_subject
        .into_iter()
        .map(|(subject, samples)| ClientDataset::new(subject, samples))
        .collect())
}
