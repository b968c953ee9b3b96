use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One question with the story sentences that preceded it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawSample {
    pub story: Vec<Vec<String>>,
    pub query: Vec<String>,
    pub answer: String,
    pub task_id: u32,
    /// Line numbers of the supporting facts. Diagnostics only.
    pub supporting_ids: Vec<u32>,
}

/// Lowercases, splits on whitespace and `?`, and drops trailing periods.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| c.is_whitespace() || c == '?')
        .map(|t| t.trim_end_matches('.').to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}

/// Parses a bAbI v1.2 task file into one sample per question line.
pub fn parse_babi(text: &str, task_id: u32) -> Result<Vec<RawSample>> {
    let mut samples = Vec::new();
    let mut story: Vec<Vec<String>> = Vec::new();
    let mut prev_id: Option<u32> = None;
    let mut saw_line = false;

    for (i, raw_line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw_line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        saw_line = true;
        let err = |msg: String| Error::Parse { line: line_no, msg };

        let (id_str, rest) = line
            .trim_start()
            .split_once(' ')
            .ok_or_else(|| err("expected `<number> <text>`".into()))?;
        let id: u32 = id_str
            .parse()
            .map_err(|_| err(format!("bad line number {id_str:?}")))?;
        match (id, prev_id) {
            (1, _) => story.clear(),
            (n, Some(p)) if n == p + 1 => {}
            (n, _) => return Err(err(format!("line number {n} does not follow {prev_id:?}"))),
        }
        prev_id = Some(id);

        if rest.contains('\t') {
            let fields: Vec<&str> = rest.split('\t').collect();
            if fields.len() < 3 {
                return Err(err("question line needs question, answer and support fields".into()));
            }
            let query = tokenize(fields[0]);
            if query.is_empty() {
                return Err(err("empty question".into()));
            }
            let answer = fields[1].trim().to_lowercase();
            if answer.is_empty() || answer.contains(char::is_whitespace) {
                return Err(err(format!("answer {:?} is not a single token", fields[1])));
            }
            let supporting_ids = fields[2]
                .split_whitespace()
                .map(|s| s.parse::<u32>().map_err(|_| err(format!("bad support id {s:?}"))))
                .collect::<Result<Vec<_>>>()?;
            if story.is_empty() {
                return Err(err("question before any story sentence".into()));
            }
            samples.push(RawSample {
                story: story.clone(),
                query,
                answer,
                task_id,
                supporting_ids,
            });
        } else {
            if rest.contains('?') {
                return Err(err("question line without tab-separated answer".into()));
            }
            let tokens = tokenize(rest);
            if tokens.is_empty() {
                return Err(err("empty sentence".into()));
            }
            story.push(tokens);
        }
    }

    if !saw_line {
        return Err(Error::Parse {
            line: 0,
            msg: "empty input".into(),
        });
    }
    Ok(samples)
}
