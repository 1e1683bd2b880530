//! Dataset directory format: `dataset.json` header plus one TSV per split.
//!
//! Each TSV line is `input tokens<TAB>target tokens<TAB>attention indices`,
//! tokens space separated.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::*;
use crate::util::write_atomic;

pub const HEADER_FILE: &str = "dataset.json";
const FORMAT: &str = "attnguide-dataset";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TableRecord {
    id: usize,
    /// Images of `000`, `001`, ... in order.
    outputs: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SplitRecord {
    name: String,
    file: String,
    count: usize,
    /// Distinct table sequences present in the split.
    compositions: Vec<Vec<usize>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    seed: u64,
    string_length: usize,
    config: SplitConfig,
    encoder_vocab: Vec<String>,
    decoder_vocab: Vec<String>,
    tables: Vec<TableRecord>,
    splits: Vec<SplitRecord>,
}

fn line_of(ex: &Example) -> String {
    let join = |v: Vec<String>| v.join(" ");
    format!(
        "{}\t{}\t{}\n",
        join(ex.input.iter().map(ToString::to_string).collect()),
        join(ex.target.iter().map(ToString::to_string).collect()),
        join(ex.attention.iter().map(ToString::to_string).collect()),
    )
}

/// Writes `bundle` into directory `dir` (created if missing).
pub fn write_dataset(bundle: &DatasetBundle, dir: &Path) -> Result<(), TaskError> {
    fs::create_dir_all(dir)?;
    let mut splits = Vec::new();
    for split in Split::ALL {
        let examples = bundle.split(split);
        let body: String = examples.iter().map(line_of).collect();
        write_atomic(&dir.join(split.file_name()), body.as_bytes())?;
        let mut comps: Vec<Vec<usize>> = examples.iter().map(Example::tables).collect();
        comps.sort();
        comps.dedup();
        splits.push(SplitRecord {
            name: split.short().to_string(),
            file: split.file_name().to_string(),
            count: examples.len(),
            compositions: comps,
        });
    }
    let header = Header {
        format: FORMAT.to_string(),
        version: VERSION,
        seed: bundle.seed,
        string_length: STRING_LEN,
        config: bundle.config,
        encoder_vocab: encoder_vocab(),
        decoder_vocab: decoder_vocab(),
        tables: bundle
            .tables
            .iter()
            .map(|t| TableRecord { id: t.id, outputs: t.mapping.iter().map(|&m| Bits(m).to_string()).collect() })
            .collect(),
        splits,
    };
    let mut json = serde_json::to_string_pretty(&header)?;
    json.push('\n');
    write_atomic(&dir.join(HEADER_FILE), json.as_bytes())?;
    Ok(())
}

fn parse_line(file: &str, line_no: usize, line: &str) -> Result<Example, TaskError> {
    let perr = |msg: String| TaskError::Parse { file: file.to_string(), line: line_no, msg };
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 3 {
        return Err(perr(format!("expected 3 tab-separated fields, found {}", fields.len())));
    }
    let unknown = |tok: &str| TaskError::UnknownToken { file: file.to_string(), line: line_no, token: tok.to_string() };
    let input = fields[0]
        .split_whitespace()
        .map(|t| EncToken::parse(t).ok_or_else(|| unknown(t)))
        .collect::<Result<Vec<_>, _>>()?;
    let target = fields[1]
        .split_whitespace()
        .map(|t| DecToken::parse(t).ok_or_else(|| unknown(t)))
        .collect::<Result<Vec<_>, _>>()?;
    let attention = fields[2]
        .split_whitespace()
        .map(|t| t.parse::<usize>().map_err(|_| perr(format!("bad attention index {t:?}"))))
        .collect::<Result<Vec<_>, _>>()?;
    if input.is_empty() || !matches!(input[0], EncToken::Bits(_)) {
        return Err(perr("input must start with a binary string".into()));
    }
    if target.last() != Some(&DecToken::Eos) {
        return Err(perr("target must end with <eos>".into()));
    }
    if attention.len() != target.len() || attention.iter().any(|&a| a >= input.len()) {
        return Err(perr("attention indices do not match the sequence lengths".into()));
    }
    Ok(Example { input, target, attention })
}

/// Reads a dataset directory written by [`write_dataset`].
pub fn read_dataset(dir: &Path) -> Result<DatasetBundle, TaskError> {
    let text = fs::read_to_string(dir.join(HEADER_FILE))?;
    let header: Header = serde_json::from_str(&text)?;
    if header.format != FORMAT || header.version != VERSION {
        return Err(TaskError::Header(format!("unsupported format {} v{}", header.format, header.version)));
    }
    if header.string_length != STRING_LEN
        || header.encoder_vocab != encoder_vocab()
        || header.decoder_vocab != decoder_vocab()
    {
        return Err(TaskError::Header("vocabulary does not match this build".into()));
    }
    let tables = header
        .tables
        .iter()
        .map(|r| {
            let mapping = r.outputs.iter().map(|s| Bits::parse(s).map(|b| b.0)).collect::<Result<Vec<_>, _>>()?;
            LookupTable::new(r.id, STRING_LEN, mapping)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut bundle = DatasetBundle {
        seed: header.seed,
        config: header.config,
        tables,
        train: Vec::new(),
        heldout_inputs: Vec::new(),
        heldout_compositions: Vec::new(),
        heldout_tables: Vec::new(),
        new_compositions: Vec::new(),
    };
    for rec in &header.splits {
        let split = Split::parse(&rec.name).ok_or_else(|| TaskError::Header(format!("unknown split {}", rec.name)))?;
        let body = fs::read_to_string(dir.join(&rec.file))?;
        let mut examples = Vec::with_capacity(rec.count);
        for (i, line) in body.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            examples.push(parse_line(&rec.file, i + 1, line)?);
        }
        if examples.len() != rec.count {
            return Err(TaskError::Parse {
                file: rec.file.clone(),
                line: body.lines().count(),
                msg: format!("expected {} examples, found {} (truncated file?)", rec.count, examples.len()),
            });
        }
        *bundle.split_mut(split) = examples;
    }
    Ok(bundle)
}
