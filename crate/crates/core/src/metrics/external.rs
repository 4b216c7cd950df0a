//! Client side of the line-oriented scorer protocol.
//!
//! ```text
//! <- HELLO <name> <version>
//! -> SCORE <n>
//! -> <source>\t<hypothesis>\t<reference>      (n lines)
//! <- SEG <i> <score>                          (n lines, i from 0)
//! <- SYS <mean>
//! ```
//!
//! A scorer may answer a batch with a single `ERR <reason>` line instead.
//! Backslash, tab, newline and carriage return in text fields are escaped
//! as `\\`, `\t`, `\n` and `\r`.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};

use super::{validate_pairs, EvalPair, MetricError, MetricKind, MetricReport};

pub fn escape_field(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

/// Inverse of [`escape_field`]; unknown escapes are kept verbatim.
pub fn unescape_field(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut chars = text.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some(other) => {
                out.push('\\');
                out.push(other);
            }
            None => out.push('\\'),
        }
    }
    out
}

fn violation(reason: impl Into<String>, line: &str) -> MetricError {
    MetricError::ProtocolViolation { reason: reason.into(), line: line.to_string() }
}

/// A connected scorer that has completed the handshake.
pub struct ScorerClient<R: BufRead, W: Write> {
    reader: R,
    writer: W,
    name: String,
    version: String,
    child: Option<Child>,
}

impl<R: BufRead, W: Write> ScorerClient<R, W> {
    /// Reads the `HELLO` line from `reader`.
    pub fn connect(mut reader: R, writer: W) -> Result<Self, MetricError> {
        let line = read_line(&mut reader)?;
        let mut parts = line.split(' ');
        match (parts.next(), parts.next(), parts.next(), parts.next()) {
            (Some("HELLO"), Some(name), Some(version), None) if !name.is_empty() && !version.is_empty() => {
                Ok(ScorerClient { name: name.to_string(), version: version.to_string(), reader, writer, child: None })
            }
            _ => Err(violation("expected `HELLO <name> <version>`", &line)),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    /// Scores one batch of `(source, hypothesis, reference)` triples and
    /// returns the segment scores and the scorer-reported system score.
    pub fn score_batch(&mut self, triples: &[(&str, &str, &str)]) -> Result<(Vec<f64>, f64), MetricError> {
        if triples.is_empty() {
            return Err(MetricError::EmptyCorpus);
        }
        let mut request = format!("SCORE {}\n", triples.len());
        for (src, hyp, reference) in triples {
            request.push_str(&format!("{}\t{}\t{}\n", escape_field(src), escape_field(hyp), escape_field(reference)));
        }
        self.writer
            .write_all(request.as_bytes())
            .and_then(|_| self.writer.flush())
            .map_err(|e| MetricError::ScorerUnavailable(format!("write failed: {e}")))?;

        let mut scores = Vec::with_capacity(triples.len());
        for i in 0..triples.len() {
            let line = read_line(&mut self.reader)?;
            if i == 0 {
                if let Some(reason) = line.strip_prefix("ERR") {
                    return Err(MetricError::ScorerRejected(reason.trim().to_string()));
                }
            }
            let mut parts = line.split(' ');
            match (parts.next(), parts.next(), parts.next(), parts.next()) {
                (Some("SEG"), Some(idx), Some(score), None) => {
                    if idx.parse::<usize>().ok() != Some(i) {
                        return Err(violation(format!("expected segment index {i}"), &line));
                    }
                    let score: f64 = score.parse().map_err(|_| violation("unparsable score", &line))?;
                    scores.push(score);
                }
                _ => return Err(violation(format!("expected SEG line {i} of {}", triples.len()), &line)),
            }
        }
        let line = read_line(&mut self.reader)?;
        let sys = match line.strip_prefix("SYS ") {
            Some(v) => v.trim().parse::<f64>().map_err(|_| violation("unparsable system score", &line))?,
            None => return Err(violation("expected SYS line", &line)),
        };
        Ok((scores, sys))
    }
}

impl ScorerClient<BufReader<ChildStdout>, ChildStdin> {
    /// Spawns `program` and talks to it over its stdin and stdout.
    pub fn spawn(program: &str, args: &[String]) -> Result<Self, MetricError> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| MetricError::ScorerUnavailable(format!("cannot start `{program}`: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        match ScorerClient::connect(BufReader::new(stdout), stdin) {
            Ok(mut client) => {
                client.child = Some(child);
                Ok(client)
            }
            Err(e) => {
                let _ = child.kill();
                let _ = child.wait();
                Err(e)
            }
        }
    }
}

impl<R: BufRead, W: Write> Drop for ScorerClient<R, W> {
    fn drop(&mut self) {
        if let Some(child) = self.child.as_mut() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

fn read_line<R: BufRead>(reader: &mut R) -> Result<String, MetricError> {
    let mut line = String::new();
    match reader.read_line(&mut line) {
        Ok(0) => Err(MetricError::ScorerUnavailable("scorer closed the connection".into())),
        Ok(_) => Ok(line.trim_end_matches(['\n', '\r']).to_string()),
        Err(e) => Err(MetricError::ScorerUnavailable(format!("read failed: {e}"))),
    }
}

/// Scores `pairs` with an external scorer in a single batch. The corpus score
/// is the mean of the returned segment scores.
pub fn external_score<R: BufRead, W: Write>(
    pairs: &[EvalPair],
    sources: &[String],
    scorer: &mut ScorerClient<R, W>,
) -> Result<MetricReport, MetricError> {
    validate_pairs(pairs)?;
    if pairs.len() != sources.len() {
        return Err(MetricError::LengthMismatch { what: "pairs vs sources", left: pairs.len(), right: sources.len() });
    }
    let triples: Vec<(&str, &str, &str)> =
        pairs.iter().zip(sources).map(|(p, s)| (s.as_str(), p.hypothesis.as_str(), p.reference.as_str())).collect();
    let (scores, sys) = scorer.score_batch(&triples)?;
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    let mut details = BTreeMap::new();
    details.insert("reported_system_score".to_string(), sys);
    details.insert("segments".to_string(), scores.len() as f64);
    Ok(MetricReport { metric: MetricKind::External, corpus_score: mean, segment_scores: Some(scores), details })
}
