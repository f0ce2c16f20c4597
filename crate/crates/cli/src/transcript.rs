//! `id<TAB>word word ...` transcript files for the `wer` subcommand.

use std::path::Path;

use spikealign::{Error, Result};

pub fn read_transcripts(path: &Path) -> Result<Vec<(String, Vec<String>)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out: Vec<(String, Vec<String>)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (id, words) = line.split_once('\t').unwrap_or((line, ""));
        if id.is_empty() || out.iter().any(|(seen, _)| seen == id) {
            return Err(Error::Parse {
                file: path.display().to_string(),
                line: i + 1,
                msg: format!("missing or duplicate utterance id {id:?}"),
            });
        }
        out.push((id.to_string(), words.split_whitespace().map(str::to_string).collect()));
    }
    Ok(out)
}
