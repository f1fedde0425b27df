use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DatasetStats, SequenceDataset};
use crate::error::{Error, Result};

const MAGIC: &str = "ECHOMAMBA-DATASET 1";

#[derive(Serialize, Deserialize)]
struct CacheBody {
    stats: DatasetStats,
    dataset: SequenceDataset,
}

/// Writes a magic line followed by a JSON body holding the id maps,
/// sequences and a stats block.
pub fn write_cache(path: &Path, ds: &SequenceDataset) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let body = CacheBody {
        stats: ds.stats(),
        dataset: ds.clone(),
    };
    writeln!(w, "{MAGIC}").map_err(|e| Error::io(path, e))?;
    serde_json::to_writer(&mut w, &body).map_err(|e| Error::Format(e.to_string()))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_cache(path: &Path) -> Result<SequenceDataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut header = String::new();
    r.read_line(&mut header).map_err(|e| Error::io(path, e))?;
    if header.trim_end() != MAGIC {
        return Err(Error::Format(format!("{}: not a dataset cache", path.display())));
    }
    let body: CacheBody = serde_json::from_reader(r).map_err(|e| Error::Format(e.to_string()))?;
    Ok(body.dataset)
}
