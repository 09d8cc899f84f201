use std::fmt::{self, Write as _};
use std::path::Path;

use super::gamlp::{Combiner, Gamlp, Stacks};
use crate::error::{Error, Result};
use crate::graph::DegreeVector;

/// Inclusive degree range, printed as `lo-hi`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DegreeBucket {
    pub lo: usize,
    pub hi: usize,
}

impl DegreeBucket {
    pub fn contains(&self, degree: usize) -> bool {
        (self.lo..=self.hi).contains(&degree)
    }
}

impl fmt::Display for DegreeBucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.lo, self.hi)
    }
}

/// Parses `"1-4,5-8,9-12"`.
pub fn parse_buckets(spec: &str) -> Result<Vec<DegreeBucket>> {
    spec.split(',')
        .map(|part| {
            let part = part.trim();
            let (lo, hi) = part
                .split_once('-')
                .ok_or_else(|| Error::invalid(format!("bucket {part:?} is not lo-hi")))?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::invalid(format!("bad bucket bound {s:?}")))
            };
            let (lo, hi) = (parse(lo)?, parse(hi)?);
            if lo > hi {
                return Err(Error::invalid(format!("bucket {part:?} is empty")));
            }
            Ok(DegreeBucket { lo, hi })
        })
        .collect()
}

/// Feature-branch attention weights per node and averaged per degree bucket.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionExport {
    /// `(node, degree, w(0)…w(K))`
    pub per_node: Vec<(usize, usize, Vec<f64>)>,
    /// `(bucket, node count, mean weights divided by their maximum)`. Empty
    /// buckets carry zeros.
    pub buckets: Vec<(DegreeBucket, usize, Vec<f64>)>,
}

impl AttentionExport {
    fn header(first: &str, steps: usize) -> String {
        let mut h = first.to_string();
        for k in 0..steps {
            let _ = write!(h, ",w{k}");
        }
        h.push('\n');
        h
    }

    pub fn per_node_csv(&self) -> String {
        let steps = self.per_node.first().map_or(0, |r| r.2.len());
        let mut out = Self::header("node,degree", steps);
        for (node, degree, w) in &self.per_node {
            let _ = write!(out, "{node},{degree}");
            for v in w {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn bucket_csv(&self) -> String {
        let steps = self.buckets.first().map_or(0, |r| r.2.len());
        let mut out = Self::header("bucket,nodes", steps);
        for (bucket, count, w) in &self.buckets {
            let _ = write!(out, "{bucket},{count}");
            for v in w {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    /// Writes `attention_nodes.csv` and `attention_buckets.csv` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("attention_nodes.csv"), self.per_node_csv())?;
        std::fs::write(dir.join("attention_buckets.csv"), self.bucket_csv())?;
        Ok(())
    }
}

/// Evaluation-mode feature attention for `rows`, tabulated by `degrees`.
pub fn export_attention(
    model: &Gamlp,
    stacks: &Stacks<'_>,
    rows: &[usize],
    degrees: &DegreeVector,
    buckets: &[DegreeBucket],
) -> Result<AttentionExport> {
    if matches!(model.feature_combiner, Combiner::Baseline(_)) {
        return Err(Error::invalid("a baseline combiner has no attention weights to export"));
    }
    let mut per_node = Vec::with_capacity(rows.len());
    for chunk in rows.chunks(4096) {
        let (w, _) = model.attention_weights(&stacks.gather(chunk))?;
        let w = w.expect("attention combiners report weights");
        for (r, &node) in chunk.iter().enumerate() {
            let degree = *degrees.0.get(node).ok_or(Error::NodeOutOfRange {
                id: node,
                n: degrees.0.len(),
            })?;
            per_node.push((node, degree, w.row(r).to_vec()));
        }
    }
    let steps = stacks.features.len();
    let buckets = buckets
        .iter()
        .map(|&b| {
            let mut mean = vec![0.0; steps];
            let mut count = 0;
            for (_, degree, w) in &per_node {
                if b.contains(*degree) {
                    count += 1;
                    for (m, v) in mean.iter_mut().zip(w) {
                        *m += v;
                    }
                }
            }
            let max = mean.iter().copied().fold(0.0, f64::max);
            if max > 0.0 {
                mean.iter_mut().for_each(|m| *m /= max);
            }
            (b, count, mean)
        })
        .collect();
    Ok(AttentionExport { per_node, buckets })
}
