use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use crate::error::{DrimError, Result};

/// One user–item event.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Interaction {
    pub user_id: String,
    pub item_id: String,
    pub timestamp: u64,
}

impl Interaction {
    pub fn new(user_id: impl Into<String>, item_id: impl Into<String>, timestamp: u64) -> Self {
        Self {
            user_id: user_id.into(),
            item_id: item_id.into(),
            timestamp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Tsv,
    Csv,
}

impl Format {
    pub fn delimiter(self) -> char {
        match self {
            Format::Tsv => '\t',
            Format::Csv => ',',
        }
    }

    /// Guess from the file extension; anything but `.csv` is TSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => Format::Csv,
            _ => Format::Tsv,
        }
    }
}

impl FromStr for Format {
    type Err = DrimError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tsv" => Ok(Format::Tsv),
            "csv" => Ok(Format::Csv),
            other => Err(DrimError::Config(format!("unknown format {other:?}"))),
        }
    }
}

/// Reads `user_id, item_id, timestamp` rows in file order.
///
/// A first line whose timestamp column is not an integer is taken as a
/// header. Blank lines are skipped; columns past the third are ignored.
pub fn load_interactions(path: &Path, format: Format) -> Result<Vec<Interaction>> {
    let file = File::open(path).map_err(|e| DrimError::io(path, e))?;
    let reader = BufReader::new(file);
    let delim = format.delimiter();
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| DrimError::io(path, e))?;
        let line_no = i + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| DrimError::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message,
        };
        let mut cols = line.split(delim);
        let (user, item, ts) = match (cols.next(), cols.next(), cols.next()) {
            (Some(u), Some(i), Some(t)) => (u.trim(), i.trim(), t.trim()),
            _ => return Err(parse_err(format!("expected 3 columns in {line:?}"))),
        };
        let timestamp = match ts.parse::<u64>() {
            Ok(t) => t,
            Err(_) if line_no == 1 => continue,
            Err(_) => return Err(parse_err(format!("timestamp {ts:?} is not a non-negative integer"))),
        };
        if user.is_empty() || item.is_empty() {
            return Err(parse_err("empty user or item id".into()));
        }
        out.push(Interaction::new(user, item, timestamp));
    }
    Ok(out)
}

/// Writes interactions without a header.
pub fn write_interactions(path: &Path, data: &[Interaction], format: Format) -> Result<()> {
    let file = File::create(path).map_err(|e| DrimError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let d = format.delimiter();
    for it in data {
        writeln!(w, "{}{d}{}{d}{}", it.user_id, it.item_id, it.timestamp)
            .map_err(|e| DrimError::io(path, e))?;
    }
    w.flush().map_err(|e| DrimError::io(path, e))
}
