//! Portable population files.
//!
//! Schema (JSON): `{"format": "caafp-population", "version": 1,
//! "num_classes": N, "clients": [ClientDataset, ...]}` where each client is
//! `{"id", "group", "train": Samples, "test": Samples}` and a `Samples` is
//! `{"window", "channels", "inputs": [f64; n*window*channels], "labels": [n]}`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ClientDataset;
use crate::error::{Error, Result};

pub const POPULATION_FORMAT: &str = "caafp-population";
pub const POPULATION_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub format: String,
    pub version: u32,
    pub num_classes: usize,
    pub clients: Vec<ClientDataset>,
}

impl Population {
    pub fn new(num_classes: usize, clients: Vec<ClientDataset>) -> Self {
        Self {
            format: POPULATION_FORMAT.into(),
            version: POPULATION_VERSION,
            num_classes,
            clients,
        }
    }
}

pub fn save_population(path: impl AsRef<Path>, population: &Population) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer(std::io::BufWriter::new(file), population)?;
    Ok(())
}

pub fn load_population(path: impl AsRef<Path>) -> Result<Population> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let pop: Population = serde_json::from_reader(std::io::BufReader::new(file))?;
    if pop.format != POPULATION_FORMAT {
        return Err(Error::data(format!(
            "unexpected format tag {:?}",
            pop.format
        )));
    }
    if pop.version != POPULATION_VERSION {
        return Err(Error::data(format!(
            "unsupported population version {}",
            pop.version
        )));
    }
    for c in &pop.clients {
        c.validate(pop.num_classes)?;
    }
    Ok(pop)
}
