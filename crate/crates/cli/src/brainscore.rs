//! Brain-Score leaderboard CSV ingestion.

use std::collections::BTreeSet;
use std::io::Read;
use std::path::Path;

use texgram_core::stats::BrainScoreRecord;

use crate::error::{PipelineError, Result};

pub const HEADER: [&str; 8] = ["model", "average_vision", "neural_vision", "behavior_vision", "V1", "V2", "V4", "IT"];

pub fn ingest_brainscore_csv(path: &Path) -> Result<Vec<BrainScoreRecord>> {
    let file = std::fs::File::open(path).map_err(PipelineError::io(path))?;
    parse_brainscore(file).map_err(|e| match e {
        PipelineError::Data(m) => PipelineError::Data(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn parse_brainscore<R: Read>(input: R) -> Result<Vec<BrainScoreRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header = rdr.headers()?.clone();
    if header.is_empty() || header.iter().all(str::is_empty) {
        return Err(PipelineError::Data("missing header".into()));
    }
    if let Some(col) = HEADER.iter().find(|c| !header.iter().any(|h| h == **c)) {
        return Err(PipelineError::Data(format!("missing column `{col}`")));
    }
    if header.len() != HEADER.len() || header.iter().zip(HEADER).any(|(a, b)| a != b) {
        return Err(PipelineError::Data(format!("header must be exactly `{}`", HEADER.join(","))));
    }
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (line, row) in rdr.records().enumerate() {
        let row = row?;
        let num = |i: usize| -> Result<f64> {
            let cell = &row[i];
            cell.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                PipelineError::Data(format!("row {}: `{cell}` in column {} is not a number", line + 2, HEADER[i]))
            })
        };
        let rec = BrainScoreRecord {
            model: row[0].to_string(),
            average_vision: num(1)?,
            neural_vision: num(2)?,
            behavior_vision: num(3)?,
            v1: num(4)?,
            v2: num(5)?,
            v4: num(6)?,
            it: num(7)?,
        };
        if !seen.insert(rec.model.clone()) {
            return Err(PipelineError::Data(format!("duplicate model `{}`", rec.model)));
        }
        out.push(rec);
    }
    Ok(out)
}
