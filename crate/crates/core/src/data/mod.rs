//! Datasets on disk, a synthetic block-model generator, and the sparsity
//! perturbations used by the sweeps.
//!
//! Directory layout read by [`load_dataset`]:
//!
//! ```text
//! edges.tsv          src<TAB>dst per line, 0-based, either orientation
//! features.bin       "GMFX", u64 n, u64 f, row-major little-endian f32
//!   or features.csv  one comma-separated row per node
//! labels.tsv         node<TAB>class per line; unlisted nodes are unlabeled
//! splits/train.txt   one node id per line (likewise val.txt, test.txt)
//! ```
//!
//! The node count is the number of feature rows.

mod io;
mod synthetic;

pub use io::{load_dataset, read_features, save_dataset, write_features, FEATURES_MAGIC};
pub use synthetic::{drop_edges, generate_sbm, sample_labels_per_class, SbmConfig};

use crate::error::{Error, Result};
use crate::graph::CsrGraph;
use crate::matrix::Matrix;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Splits {
    /// `(name, ids)` for the three splits in a fixed order.
    pub fn named(&self) -> [(&'static str, &[usize]); 3] {
        [("train", &self.train), ("val", &self.val), ("test", &self.test)]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    /// Adjacency without added self loops.
    pub graph: CsrGraph,
    pub features: Matrix,
    pub labels: Vec<Option<usize>>,
    pub splits: Splits,
    pub num_classes: usize,
}

impl Dataset {
    pub fn num_nodes(&self) -> usize {
        self.graph.num_nodes()
    }

    /// Checks sizes, ranges, split disjointness and that training nodes are
    /// labeled.
    pub fn validate(&self) -> Result<()> {
        let n = self.num_nodes();
        if self.features.rows() != n || self.labels.len() != n {
            return Err(Error::Inconsistent(format!(
                "{n} nodes but {} feature rows and {} label slots",
                self.features.rows(),
                self.labels.len()
            )));
        }
        for (node, label) in self.labels.iter().enumerate() {
            if let Some(c) = label {
                if *c >= self.num_classes {
                    return Err(Error::Inconsistent(format!(
                        "node {node} has class {c} but there are {} classes",
                        self.num_classes
                    )));
                }
            }
        }
        let mut owner: Vec<Option<&str>> = vec![None; n];
        for (name, ids) in self.splits.named() {
            for &id in ids {
                if id >= n {
                    return Err(Error::NodeOutOfRange { id, n });
                }
                if let Some(other) = owner[id] {
                    return Err(Error::Inconsistent(format!("node {id} is in both {other} and {name}")));
                }
                owner[id] = Some(name);
            }
        }
        if let Some(&t) = self.splits.train.iter().find(|&&t| self.labels[t].is_none()) {
            return Err(Error::Inconsistent(format!("training node {t} is unlabeled")));
        }
        Ok(())
    }
}
