//! JSONL dialogue files: one dialogue per line.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::Deserialize;

use super::types::{Dialogue, HandoffLabel, Role, SatisfactionLabel, SentimentLabel, Utterance};
use crate::error::{Error, Result};

#[derive(Deserialize)]
struct RawUtterance {
    role: Option<String>,
    tokens: Option<Vec<String>>,
    handoff: Option<String>,
    sentiment: Option<String>,
}

#[derive(Deserialize)]
struct RawDialogue {
    id: Option<String>,
    satisfaction: Option<String>,
    utterances: Option<Vec<RawUtterance>>,
}

/// Parses and validates a single dialogue record.
pub fn parse_dialogue(line: &str) -> std::result::Result<Dialogue, String> {
    let raw: RawDialogue = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let id = raw.id.ok_or("missing field `id`")?;
    let satisfaction = raw
        .satisfaction
        .ok_or_else(|| format!("dialogue `{id}`: missing field `satisfaction`"))?;
    let satisfaction = SatisfactionLabel::parse(&satisfaction)
        .ok_or_else(|| format!("dialogue `{id}`: unknown satisfaction `{satisfaction}`"))?;
    let raw_utts = raw
        .utterances
        .ok_or_else(|| format!("dialogue `{id}`: missing field `utterances`"))?;
    if raw_utts.is_empty() {
        return Err(format!("dialogue `{id}`: no utterances"));
    }
    let mut utterances = Vec::with_capacity(raw_utts.len());
    for (i, u) in raw_utts.into_iter().enumerate() {
        utterances.push(parse_utterance(u).map_err(|e| format!("dialogue `{id}`: utterances[{i}].{e}"))?);
    }
    Ok(Dialogue {
        id,
        satisfaction,
        utterances,
    })
}

/// Parses a standalone utterance record (used by streaming prediction).
pub fn parse_utterance_line(line: &str) -> std::result::Result<Utterance, String> {
    let raw: RawUtterance = serde_json::from_str(line).map_err(|e| e.to_string())?;
    parse_utterance(raw)
}

/// Like [`parse_utterance_line`] but the handoff label may be omitted
/// (it then defaults to normal and is never read).
pub fn parse_unlabeled_utterance_line(line: &str) -> std::result::Result<Utterance, String> {
    let mut raw: RawUtterance = serde_json::from_str(line).map_err(|e| e.to_string())?;
    raw.handoff.get_or_insert_with(|| "normal".into());
    parse_utterance(raw)
}

fn parse_utterance(u: RawUtterance) -> std::result::Result<Utterance, String> {
    let role = u.role.ok_or("role: missing")?;
    let role = Role::parse(&role).ok_or_else(|| format!("role: unknown role `{role}`"))?;
    let tokens: Vec<String> = u
        .tokens
        .ok_or("tokens: missing")?
        .into_iter()
        .flat_map(|t| t.split_whitespace().map(str::to_owned).collect::<Vec<_>>())
        .collect();
    if tokens.is_empty() {
        return Err("tokens: empty token list".into());
    }
    let handoff = match u.handoff {
        None => return Err("handoff: missing".into()),
        Some(h) => HandoffLabel::parse(&h).ok_or_else(|| format!("handoff: unknown label `{h}`"))?,
    };
    let sentiment = match u.sentiment {
        None => None,
        Some(s) => Some(
            SentimentLabel::parse(&s).ok_or_else(|| format!("sentiment: unknown label `{s}`"))?,
        ),
    };
    if sentiment.is_some() && role == Role::Agent {
        return Err("sentiment: only customer utterances may carry a sentiment label".into());
    }
    Ok(Utterance {
        role,
        tokens,
        handoff,
        sentiment,
    })
}

/// Reads a JSONL corpus, rejecting dialogues longer than `max_dialogue_len`
/// and dialogues without any customer utterance.
pub fn load_corpus(path: impl AsRef<Path>, max_dialogue_len: usize) -> Result<Vec<Dialogue>> {
    let path = path.as_ref();
    let file = File::open(path)?;
    read_corpus(BufReader::new(file), path, max_dialogue_len)
}

pub fn read_corpus(reader: impl BufRead, path: &Path, max_dialogue_len: usize) -> Result<Vec<Dialogue>> {
    let mut dialogues = Vec::new();
    let mut too_long = Vec::new();
    let mut no_customer = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let d = parse_dialogue(&line).map_err(|message| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        })?;
        if d.len() > max_dialogue_len {
            too_long.push(d.id.clone());
        }
        if !d.has_customer() {
            no_customer.push(d.id.clone());
        }
        dialogues.push(d);
    }
    if !too_long.is_empty() {
        return Err(Error::data(format!(
            "{}: {} dialogue(s) exceed the maximum length {max_dialogue_len}: {}",
            path.display(),
            too_long.len(),
            too_long.join(", ")
        )));
    }
    if !no_customer.is_empty() {
        return Err(Error::data(format!(
            "{}: dialogue(s) without a customer utterance: {}",
            path.display(),
            no_customer.join(", ")
        )));
    }
    Ok(dialogues)
}

pub fn to_jsonl_line(d: &Dialogue) -> String {
    serde_json::to_string(d).expect("dialogue serializes")
}

pub fn write_corpus(path: impl AsRef<Path>, corpus: &[Dialogue]) -> Result<()> {
    let mut w = std::io::BufWriter::new(File::create(path)?);
    for d in corpus {
        writeln!(w, "{}", to_jsonl_line(d))?;
    }
    w.flush()?;
    Ok(())
}
