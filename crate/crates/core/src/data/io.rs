use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use super::{Dataset, Splits};
use crate::error::{Error, Result};
use crate::graph::build_graph;
use crate::matrix::Matrix;

pub const FEATURES_MAGIC: &[u8; 4] = b"GMFX";

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    })
}

/// Non-blank lines of a text file with 1-based line numbers.
fn lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(open(path)?).lines().enumerate() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push((i + 1, line));
        }
    }
    Ok(out)
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn id(path: &Path, line: usize, field: &str, n: usize) -> Result<usize> {
    let v: usize = field
        .trim()
        .parse()
        .map_err(|_| parse_err(path, line, format!("{field:?} is not a node id")))?;
    if v >= n {
        return Err(parse_err(path, line, format!("node {v} out of range for {n} nodes")));
    }
    Ok(v)
}

fn pair(path: &Path, line: usize, text: &str) -> Result<(String, String)> {
    let mut it = text.split('\t');
    match (it.next(), it.next(), it.next()) {
        (Some(a), Some(b), None) => Ok((a.to_string(), b.to_string())),
        _ => Err(parse_err(path, line, "expected two tab-separated fields")),
    }
}

/// Reads a `GMFX` binary feature file.
pub fn read_features(path: impl AsRef<Path>) -> Result<Matrix> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 20 || &bytes[..4] != FEATURES_MAGIC {
        return Err(Error::Format(format!("{} is not a GMFX feature file", path.display())));
    }
    let n = u64::from_le_bytes(bytes[4..12].try_into().unwrap()) as usize;
    let f = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let expect = n
        .checked_mul(f)
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| Error::Format("implausible feature shape".into()))?;
    if bytes.len() - 20 != expect {
        return Err(Error::Corrupt(format!(
            "{} holds {} payload bytes, expected {expect}",
            path.display(),
            bytes.len() - 20
        )));
    }
    let data = bytes[20..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Matrix::from_vec(n, f, data)
}

/// Writes a `GMFX` binary feature file; values are narrowed to `f32`.
pub fn write_features(path: impl AsRef<Path>, x: &Matrix) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(FEATURES_MAGIC)?;
    w.write_all(&(x.rows() as u64).to_le_bytes())?;
    w.write_all(&(x.cols() as u64).to_le_bytes())?;
    for &v in x.as_slice() {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn read_features_csv(path: &Path) -> Result<Matrix> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, text) in lines(path)? {
        let row = text
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| parse_err(path, line, format!("{v:?} is not a number")))
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(parse_err(
                    path,
                    line,
                    format!("{} values, expected {}", row.len(), first.len()),
                ));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::EmptyGraph);
    }
    Ok(Matrix::from_rows(&rows))
}

fn read_split(path: &Path, n: usize) -> Result<Vec<usize>> {
    lines(path)?
        .into_iter()
        .map(|(line, text)| id(path, line, &text, n))
        .collect()
}

/// Loads and validates a dataset directory. The name is the directory name.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let bin = dir.join("features.bin");
    let features = if bin.exists() {
        read_features(&bin)?
    } else {
        let csv = dir.join("features.csv");
        if !csv.exists() {
            return Err(Error::MissingFile(bin));
        }
        read_features_csv(&csv)?
    };
    let n = features.rows();
    if n == 0 {
        return Err(Error::EmptyGraph);
    }

    let path = dir.join("edges.tsv");
    let mut edges = Vec::new();
    for (line, text) in lines(&path)? {
        let (a, b) = pair(&path, line, &text)?;
        edges.push((id(&path, line, &a, n)?, id(&path, line, &b, n)?));
    }
    let graph = build_graph(&edges, n, true)?;

    let path = dir.join("labels.tsv");
    let mut labels = vec![None; n];
    for (line, text) in lines(&path)? {
        let (a, b) = pair(&path, line, &text)?;
        let node = id(&path, line, &a, n)?;
        let class: usize = b
            .trim()
            .parse()
            .map_err(|_| parse_err(&path, line, format!("{b:?} is not a class id")))?;
        if labels[node].replace(class).is_some() {
            return Err(parse_err(&path, line, format!("node {node} labeled twice")));
        }
    }
    let num_classes = labels.iter().flatten().max().map_or(0, |c| c + 1);

    let split_dir = dir.join("splits");
    let splits = Splits {
        train: read_split(&split_dir.join("train.txt"), n)?,
        val: read_split(&split_dir.join("val.txt"), n)?,
        test: read_split(&split_dir.join("test.txt"), n)?,
    };
    let name = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let ds = Dataset {
        name,
        graph,
        features,
        labels,
        splits,
        num_classes,
    };
    ds.validate()?;
    Ok(ds)
}

/// Writes `ds` in the layout [`load_dataset`] reads, with binary features.
pub fn save_dataset(ds: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    ds.validate()?;
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir.join("splits"))?;
    let text = |path: PathBuf, body: String| std::fs::write(path, body);

    let mut edges = String::new();
    for (u, v) in ds.graph.undirected_edges() {
        edges.push_str(&format!("{u}\t{v}\n"));
    }
    text(dir.join("edges.tsv"), edges)?;
    write_features(dir.join("features.bin"), &ds.features)?;
    let mut labels = String::new();
    for (node, c) in ds.labels.iter().enumerate() {
        if let Some(c) = c {
            labels.push_str(&format!("{node}\t{c}\n"));
        }
    }
    text(dir.join("labels.tsv"), labels)?;
    for (name, ids) in ds.splits.named() {
        let body: String = ids.iter().map(|i| format!("{i}\n")).collect();
        text(dir.join("splits").join(format!("{name}.txt")), body)?;
    }
    Ok(())
}
