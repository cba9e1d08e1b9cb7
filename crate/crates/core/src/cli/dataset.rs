//! Plain-text label datasets: an optional header `# n=<n> c=<c>` followed by
//! one configuration per line as space-separated 1-based class indices.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::meta_simplex::LabelConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub n: usize,
    pub c: usize,
    pub records: Vec<LabelConfig>,
    pub provenance: String,
}

fn parse_header(line: &str) -> Option<(usize, usize)> {
    let body = line.strip_prefix('#')?.trim();
    let mut n = None;
    let mut c = None;
    for tok in body.split_whitespace() {
        if let Some(v) = tok.strip_prefix("n=") {
            n = v.parse().ok();
        } else if let Some(v) = tok.strip_prefix("c=") {
            c = v.parse().ok();
        }
    }
    Some((n?, c?))
}

impl Dataset {
    /// Parses `text`. Without a header the shape must be supplied by the
    /// caller through `shape`; with both, they must agree.
    pub fn parse(text: &str, path: &Path, shape: Option<(usize, usize)>) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Parse { path: path.to_path_buf(), line, msg };
        let mut dims = None;
        let mut records = Vec::new();
        for (k, raw) in text.lines().enumerate() {
            let line_no = k + 1;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if line.starts_with('#') {
                if let Some(h) = parse_header(line) {
                    if dims.is_some() || !records.is_empty() {
                        return Err(err(line_no, "header must precede all records".into()));
                    }
                    if let Some(s) = shape {
                        if s != h {
                            return Err(err(line_no, format!("header n={} c={} differs from expected n={} c={}", h.0, h.1, s.0, s.1)));
                        }
                    }
                    dims = Some(h);
                }
                continue;
            }
            let (n, c) = match dims.or(shape) {
                Some(d) => d,
                None => return Err(err(line_no, "missing header `# n=<n> c=<c>`".into())),
            };
            dims = Some((n, c));
            let labels = line
                .split_whitespace()
                .map(|t| t.parse::<usize>().map_err(|_| err(line_no, format!("invalid class index `{t}`"))))
                .collect::<Result<Vec<_>>>()?;
            if labels.len() != n {
                return Err(err(line_no, format!("expected {n} labels, found {}", labels.len())));
            }
            let beta = LabelConfig::from_one_based(&labels, c).map_err(|e| err(line_no, e.to_string()))?;
            records.push(beta);
        }
        let (n, c) = dims.or(shape).ok_or_else(|| err(0, "missing header `# n=<n> c=<c>`".into()))?;
        if n == 0 || c < 2 {
            return Err(err(0, format!("invalid shape n={n} c={c}")));
        }
        Ok(Self { n, c, records, provenance: path.display().to_string() })
    }

    pub fn read(path: &Path, shape: Option<(usize, usize)>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, path, shape)
    }

    /// Requires at least one record.
    pub fn non_empty(self) -> Result<Self> {
        if self.records.is_empty() {
            return Err(Error::Config(format!("dataset {} has no records", self.provenance)));
        }
        Ok(self)
    }

    /// Serialized form with header.
    pub fn to_text(&self) -> String {
        let mut out = format!("# n={} c={}\n", self.n, self.c);
        out.push_str(&records_to_text(&self.records));
        out
    }
}

/// Records only, one per line.
pub fn records_to_text(records: &[LabelConfig]) -> String {
    let mut out = String::with_capacity(records.len() * 8);
    for r in records {
        let _ = writeln!(out, "{r}");
    }
    out
}
