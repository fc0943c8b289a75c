use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{tokenize, TokenSequence, EOS};
use crate::error::{Error, Result};

/// One instruction-tuning example. The response always ends with EOS.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SftSample {
    pub prompt: TokenSequence,
    pub response: TokenSequence,
    /// Free-form group label (synthetic task name, suite section).
    pub task: Option<String>,
}

impl SftSample {
    pub fn from_text(prompt: &str, response: &str) -> Self {
        let mut resp = tokenize(response.as_bytes());
        resp.push(EOS);
        Self {
            prompt: tokenize(prompt.as_bytes()),
            response: resp,
            task: None,
        }
    }

    pub fn with_task(mut self, task: impl Into<String>) -> Self {
        self.task = Some(task.into());
        self
    }

    /// Prompt followed by response.
    pub fn sequence(&self) -> TokenSequence {
        let mut s = self.prompt.clone();
        s.extend_from_slice(&self.response);
        s
    }

    pub fn len(&self) -> usize {
        self.prompt.len() + self.response.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Index range of the response inside [`sequence`](Self::sequence).
    pub fn response_range(&self) -> std::ops::Range<usize> {
        self.prompt.len()..self.len()
    }

    pub fn fits(&self, max_positions: usize) -> bool {
        !self.prompt.is_empty() && self.len() < max_positions
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Corpus {
    pub name: String,
    pub source: String,
    pub samples: Vec<SftSample>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn split_off(&mut self, at: usize) -> Corpus {
        Corpus {
            name: format!("{}[{at}..]", self.name),
            source: self.source.clone(),
            samples: self.samples.split_off(at),
        }
    }

    /// Concatenates several corpora, keeping sample order.
    pub fn concat(name: &str, parts: &[Corpus]) -> Corpus {
        Corpus {
            name: name.to_string(),
            source: parts.iter().map(|c| c.source.as_str()).collect::<Vec<_>>().join("+"),
            samples: parts.iter().flat_map(|c| c.samples.iter().cloned()).collect(),
        }
    }

    /// Writes the corpus as JSONL. Responses are written without their EOS.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(File::create(path)?);
        for s in &self.samples {
            let strip = |t: &[u32]| {
                let bytes: Vec<u8> = t.iter().filter(|&&x| x < 256).map(|&x| x as u8).collect();
                String::from_utf8_lossy(&bytes).into_owned()
            };
            let rec = Record {
                prompt: strip(&s.prompt),
                response: strip(&s.response),
                task: s.task.clone(),
            };
            serde_json::to_writer(&mut f, &rec).map_err(std::io::Error::other)?;
            f.write_all(b"\n")?;
        }
        f.flush()?;
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct Record {
    prompt: String,
    response: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    task: Option<String>,
}

/// Reads one `{"prompt": .., "response": ..}` object per line. Blank lines
/// are skipped; samples that do not fit `max_positions - 1` tokens are
/// reported together with their (1-based) line numbers.
pub fn load_jsonl(path: &Path, max_positions: usize) -> Result<Corpus> {
    let reader = BufReader::new(File::open(path)?);
    let mut samples = Vec::new();
    let mut oversized = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| Error::Corpus {
            path: path.to_path_buf(),
            line: line_no,
            message: e.to_string(),
        })?;
        if rec.prompt.is_empty() {
            return Err(Error::Corpus {
                path: path.to_path_buf(),
                line: line_no,
                message: "empty prompt".into(),
            });
        }
        let mut sample = SftSample::from_text(&rec.prompt, &rec.response);
        sample.task = rec.task;
        if !sample.fits(max_positions) {
            oversized.push(line_no);
        }
        samples.push(sample);
    }
    if !oversized.is_empty() {
        return Err(Error::Oversized {
            path: path.to_path_buf(),
            lines: oversized,
        });
    }
    if samples.is_empty() {
        return Err(Error::EmptyCorpus(path.display().to_string()));
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "corpus".into());
    Ok(Corpus {
        name,
        source: path.display().to_string(),
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(lines: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(lines.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_in_order() {
        let f = write("{\"prompt\":\"a\",\"response\":\"b\"}\n{\"prompt\":\"c\",\"response\":\"d\"}\n");
        let c = load_jsonl(f.path(), 64).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.samples[0], SftSample::from_text("a", "b"));
        assert_eq!(c.samples[1].prompt, vec![99]);
        assert_eq!(c.samples[1].response, vec![100, EOS]);
    }

    #[test]
    fn missing_field_names_the_line() {
        let f = write("{\"prompt\":\"a\"}\n");
        match load_jsonl(f.path(), 64) {
            Err(Error::Corpus { line, message, .. }) => {
                assert_eq!(line, 1);
                assert!(message.contains("response"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn oversized_lines_are_listed() {
        let long = "x".repeat(20);
        let body = format!("{{\"prompt\":\"a\",\"response\":\"b\"}}\n{{\"prompt\":\"{long}\",\"response\":\"b\"}}\n");
        let f = write(&body);
        match load_jsonl(f.path(), 16) {
            Err(Error::Oversized { lines, .. }) => assert_eq!(lines, vec![2]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_file_is_an_error() {
        let f = write("\n");
        assert!(matches!(load_jsonl(f.path(), 16), Err(Error::EmptyCorpus(_))));
    }

    #[test]
    fn write_then_load() {
        let corpus = Corpus {
            name: "t".into(),
            source: "mem".into(),
            samples: vec![
                SftSample::from_text("COPY:ab→", "ab").with_task("copy"),
                SftSample::from_text("1+2=", "3"),
            ],
        };
        let f = tempfile::NamedTempFile::new().unwrap();
        corpus.write_jsonl(f.path()).unwrap();
        let back = load_jsonl(f.path(), 64).unwrap();
        assert_eq!(back.samples, corpus.samples);
    }
}
