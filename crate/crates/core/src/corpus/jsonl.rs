use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::vocab::{Vocab, EOS};
use super::{CorpusError, Dataset, QuestionType, Sample, Split};

#[derive(Serialize, Deserialize)]
struct Row {
    id: u64,
    prompt: String,
    answer: String,
    qtype: QuestionType,
    difficulty: u32,
}

/// Writes one JSON object per line. The answer text omits the trailing EOS.
pub fn write_jsonl<W: Write>(dataset: &Dataset, mut out: W) -> Result<(), CorpusError> {
    let vocab = Vocab::new();
    for s in dataset.samples() {
        let row = Row {
            id: s.id,
            prompt: vocab.detokenize(&s.prompt_tokens),
            answer: vocab.detokenize(s.answer_body()),
            qtype: s.question_type,
            difficulty: s.difficulty_tag,
        };
        let line = serde_json::to_string(&row).map_err(std::io::Error::other)?;
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn save_jsonl(dataset: &Dataset, path: &Path) -> Result<(), CorpusError> {
    let mut buf = Vec::new();
    write_jsonl(dataset, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_jsonl(path: &Path, split: Split) -> Result<Dataset, CorpusError> {
    let vocab = Vocab::new();
    let reader = BufReader::new(fs::File::open(path)?);
    let mut samples = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: Row = serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
            line: line_no,
            reason: e.to_string(),
        })?;
        if row.prompt.is_empty() || row.answer.is_empty() {
            return Err(CorpusError::Malformed {
                line: line_no,
                reason: "empty prompt or answer".into(),
            });
        }
        if !seen.insert(row.id) {
            return Err(CorpusError::DuplicateId(row.id));
        }
        let mut answer_tokens = vocab.tokenize(&row.answer);
        answer_tokens.push(EOS);
        samples.push(Sample {
            id: row.id,
            prompt_tokens: vocab.tokenize(&row.prompt),
            answer_tokens,
            question_type: row.qtype,
            difficulty_tag: row.difficulty,
        });
    }
    Ok(Dataset::new(samples, split))
}
