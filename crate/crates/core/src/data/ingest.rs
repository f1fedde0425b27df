use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Interaction, InteractionLog};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputFormat {
    /// `user::item::rating::timestamp`, rating ignored.
    MovielensDat,
    /// Header line then `user_id,item_id,timestamp`.
    CsvTriples,
}

/// Reads a log file. Duplicate triples are dropped; record order is file order.
pub fn ingest(path: &Path, format: InputFormat) -> Result<InteractionLog> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::with_capacity(1 << 20, file);
    let mut log = match format {
        InputFormat::MovielensDat => parse_movielens(reader, path)?,
        InputFormat::CsvTriples => parse_csv_triples(reader, path)?,
    };
    if log.is_empty() {
        return Err(Error::EmptyInput(path.to_path_buf()));
    }
    log.dedup();
    Ok(log)
}

fn parse_timestamp(s: &str, path: &Path, line: usize) -> Result<i64> {
    s.trim().parse().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: format!("bad timestamp {s:?}"),
    })
}

pub fn parse_movielens(reader: impl BufRead, path: &Path) -> Result<InteractionLog> {
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split("::").collect();
        if fields.len() != 4 || fields[0].is_empty() || fields[1].is_empty() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: format!("expected user::item::rating::timestamp, got {line:?}"),
            });
        }
        records.push(Interaction {
            user: fields[0].to_string(),
            item: fields[1].to_string(),
            timestamp: parse_timestamp(fields[3], path, i + 1)?,
        });
    }
    Ok(InteractionLog { records })
}

pub fn parse_csv_triples(reader: impl Read, path: &Path) -> Result<InteractionLog> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut records = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.position().map_or(0, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        if row.len() == 1 && row[0].is_empty() {
            continue;
        }
        if row.len() != 3 || row[0].is_empty() || row[1].is_empty() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: "expected user_id,item_id,timestamp".into(),
            });
        }
        records.push(Interaction {
            user: row[0].to_string(),
            item: row[1].to_string(),
            timestamp: parse_timestamp(&row[2], path, line)?,
        });
    }
    Ok(InteractionLog { records })
}
