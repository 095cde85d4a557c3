use std::collections::BTreeMap;
use std::path::Path;

use super::{ClientDataset, Samples};
use crate::error::{Error, Result};

pub const WISDM_WINDOW: usize = 200;
pub const WISDM_STRIDE: usize = 100;

/// Class order: alphabetical activity names.
pub const WISDM_ACTIVITIES: [&str; 6] = [
    "Downstairs",
    "Jogging",
    "Sitting",
    "Standing",
    "Upstairs",
    "Walking",
];

#[derive(Debug, Clone)]
pub struct WisdmData {
    /// One client per user with at least one window, ordered by user id.
    pub clients: Vec<ClientDataset>,
    pub malformed_records: usize,
    /// Users whose streams yielded no complete window.
    pub dropped_users: Vec<usize>,
}

impl WisdmData {
    pub fn total_windows(&self) -> usize {
        self.clients.iter().map(|c| c.total_size()).sum()
    }
}

/// Windows a contiguous run of `rows` samples produces.
pub fn windows_in_run(rows: usize) -> usize {
    if rows < WISDM_WINDOW {
        0
    } else {
        (rows - WISDM_WINDOW) / WISDM_STRIDE + 1
    }
}

pub fn load_wisdm(path: impl AsRef<Path>) -> Result<WisdmData> {
    let path = path.as_ref();
    let text = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_wisdm(&String::from_utf8_lossy(&text)))
}

/// An activity label and its contiguous rows.
type ActivityRun = (usize, Vec<[f64; 3]>);

struct Record {
    user: usize,
    activity: usize,
    xyz: [f64; 3],
}

fn parse_record(raw: &str) -> Option<Record> {
    let mut fields: Vec<&str> = raw.split(',').map(str::trim).collect();
    while fields.last() == Some(&"") {
        fields.pop();
    }
    if fields.len() != 6 {
        return None;
    }
    let user = fields[0].parse().ok()?;
    let activity = WISDM_ACTIVITIES.iter().position(|a| *a == fields[1])?;
    fields[2].parse::<i64>().ok()?;
    let mut xyz = [0.0f64; 3];
    for (v, s) in xyz.iter_mut().zip(&fields[3..]) {
        *v = s.parse().ok()?;
        if !v.is_finite() {
            return None;
        }
    }
    Some(Record {
        user,
        activity,
        xyz,
    })
}

/// Parses raw `user,activity,timestamp,x,y,z;` records and windows each
/// user's activity-contiguous runs (window 200, stride 100).
///
/// Records may share a line or span several; the `;` terminator is optional.
/// All windows land in the train split.
pub fn parse_wisdm(text: &str) -> WisdmData {
    let mut malformed = 0;
    // per user, in file order: runs of (activity, rows)
    let mut runs: BTreeMap<usize, Vec<ActivityRun>> = BTreeMap::new();
    for raw in text.split(['\n', '\r', ';']) {
        let raw = raw.trim();
        if raw.is_empty() {
            continue;
        }
        let Some(rec) = parse_record(raw) else {
            malformed += 1;
            continue;
        };
        let user_runs = runs.entry(rec.user).or_default();
        match user_runs.last_mut() {
            Some((activity, rows)) if *activity == rec.activity => rows.push(rec.xyz),
            _ => user_runs.push((rec.activity, vec![rec.xyz])),
        }
    }
    if malformed > 0 {
        log::warn!("wisdm: skipped {malformed} malformed records");
    }

    let mut clients = Vec::new();
    let mut dropped = Vec::new();
    for (user, user_runs) in runs {
        let mut train = Samples::new(WISDM_WINDOW, 3);
        let mut window = Vec::with_capacity(WISDM_WINDOW * 3);
        for (activity, rows) in &user_runs {
            for w in 0..windows_in_run(rows.len()) {
                window.clear();
                let start = w * WISDM_STRIDE;
                for row in &rows[start..start + WISDM_WINDOW] {
                    window.extend_from_slice(row);
                }
                train.push(&window, *activity);
            }
        }
        if train.is_empty() {
            log::warn!("wisdm: user {user} has no complete window; dropped");
            dropped.push(user);
        } else {
            clients.push(ClientDataset::new(user, train));
        }
    }
    WisdmData {
        clients,
        malformed_records: malformed,
        dropped_users: dropped,
    }
}
