//! Plain-text dataset files.
//!
//! * edges: one `src dst` pair per line, `#` starts a comment
//! * features: header `n d`, then `n` rows of `d` decimals
//! * labels: `node_id class_id`; nodes absent from the file are unlabeled
//! * splits (optional): `node_id {train|val|test}`

use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::{assign_splits, Dataset, Split};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub enum SplitSpec {
    Ratios {
        train: f64,
        val: f64,
        test: f64,
        seed: u64,
    },
    File(PathBuf),
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec::Ratios {
            train: 0.7,
            val: 0.1,
            test: 0.2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub self_loops_skipped: usize,
    pub duplicates_merged: usize,
    pub unlabeled_nodes: usize,
}

/// Loads and validates a dataset from its text files.
///
/// `num_classes` pins the class count; when `None` it is one past the
/// largest class id seen.
pub fn load_dataset<T: Scalar>(
    edge_path: &Path,
    feature_path: &Path,
    label_path: &Path,
    split: &SplitSpec,
    num_classes: Option<usize>,
) -> Result<(Dataset<T>, LoadReport)> {
    let (features, n, dim) = read_features::<T>(feature_path)?;
    let edges = read_edges(edge_path)?;
    if let Some(&(line, u, v)) = edges.iter().find(|(_, u, v)| *u >= n || *v >= n) {
        return Err(Error::Validation(format!(
            "{}:{line}: edge ({u}, {v}) refers to a node id outside 0..{n} (ids must be dense)",
            edge_path.display()
        )));
    }
    let pairs: Vec<(usize, usize)> = edges.iter().map(|&(_, u, v)| (u, v)).collect();

    let labels = read_labels(label_path, n)?;
    let inferred = labels.iter().flatten().max().map_or(0, |m| m + 1);
    let classes = num_classes.unwrap_or(inferred);
    if let Some(v) = (0..n).find(|&v| labels[v].is_some_and(|c| c >= classes)) {
        return Err(Error::Validation(format!(
            "{}: node {v} has class {} but the class count is {classes}",
            label_path.display(),
            labels[v].unwrap()
        )));
    }

    let splits = match split {
        SplitSpec::Ratios {
            train,
            val,
            test,
            seed,
        } => assign_splits(&labels, (*train, *val, *test), *seed)?,
        SplitSpec::File(path) => read_splits(path, n)?,
    };

    let (ds, edge_report) = Dataset::new(n, &pairs, features, dim, labels, classes, splits)?;
    if edge_report.self_loops_skipped > 0 {
        log::warn!(
            "{}: skipped {} self-loop line(s)",
            edge_path.display(),
            edge_report.self_loops_skipped
        );
    }
    let report = LoadReport {
        self_loops_skipped: edge_report.self_loops_skipped,
        duplicates_merged: edge_report.duplicates_merged,
        unlabeled_nodes: n - ds.num_labeled(),
    };
    Ok((ds, report))
}

/// Writes the dataset in the same formats [`load_dataset`] reads.
pub fn save_dataset<T: Scalar>(
    ds: &Dataset<T>,
    edge_path: &Path,
    feature_path: &Path,
    label_path: &Path,
    split_path: Option<&Path>,
) -> Result<()> {
    write_with(edge_path, |w| {
        for (u, v) in ds.edges() {
            writeln!(w, "{u} {v}")?;
        }
        Ok(())
    })?;
    write_with(feature_path, |w| {
        writeln!(w, "{} {}", ds.num_nodes(), ds.dim())?;
        for v in 0..ds.num_nodes() {
            let row = ds.feature_row(v);
            for (j, x) in row.iter().enumerate() {
                if j > 0 {
                    w.write_all(b" ")?;
                }
                write!(w, "{x}")?;
            }
            w.write_all(b"\n")?;
        }
        Ok(())
    })?;
    write_with(label_path, |w| {
        for (v, l) in ds.labels().iter().enumerate() {
            if let Some(c) = l {
                writeln!(w, "{v} {c}")?;
            }
        }
        Ok(())
    })?;
    if let Some(path) = split_path {
        write_with(path, |w| {
            for (v, s) in ds.splits().iter().enumerate() {
                if let Some(s) = s {
                    writeln!(w, "{v} {s}")?;
                }
            }
            Ok(())
        })?;
    }
    Ok(())
}

fn write_with(path: &Path, body: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    body(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// Non-empty, comment-stripped lines with 1-based line numbers.
fn content_lines(path: &Path) -> Result<Vec<(usize, Vec<String>)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .enumerate()
        .filter_map(|(i, line)| {
            let body = line.split('#').next().unwrap_or("");
            let tokens: Vec<String> = body.split_whitespace().map(str::to_owned).collect();
            (!tokens.is_empty()).then_some((i + 1, tokens))
        })
        .collect())
}

fn parse_id(path: &Path, line: usize, tok: &str) -> Result<usize> {
    tok.parse::<usize>()
        .map_err(|_| Error::parse(path, line, format!("expected a node id, found {tok:?}")))
}

fn read_edges(path: &Path) -> Result<Vec<(usize, usize, usize)>> {
    content_lines(path)?
        .into_iter()
        .map(|(line, toks)| {
            if toks.len() != 2 {
                return Err(Error::parse(
                    path,
                    line,
                    format!("expected \"src dst\", found {} field(s)", toks.len()),
                ));
            }
            Ok((
                line,
                parse_id(path, line, &toks[0])?,
                parse_id(path, line, &toks[1])?,
            ))
        })
        .collect()
}

fn read_features<T: Scalar>(path: &Path) -> Result<(Vec<T>, usize, usize)> {
    let lines = content_lines(path)?;
    let mut it = lines.into_iter();
    let (hline, header) = it
        .next()
        .ok_or_else(|| Error::parse(path, 1, "missing \"n d\" header"))?;
    if header.len() != 2 {
        return Err(Error::parse(path, hline, "header must be \"n d\""));
    }
    let n = parse_id(path, hline, &header[0])?;
    let d = parse_id(path, hline, &header[1])?;
    let mut features = Vec::with_capacity(n * d);
    let mut rows = 0;
    for (line, toks) in it {
        if rows == n {
            return Err(Error::parse(path, line, format!("more than {n} feature rows")));
        }
        if toks.len() != d {
            return Err(Error::parse(
                path,
                line,
                format!("expected {d} values, found {}", toks.len()),
            ));
        }
        for tok in &toks {
            let x: T = tok
                .parse()
                .map_err(|_| Error::parse(path, line, format!("bad number {tok:?}")))?;
            features.push(x);
        }
        rows += 1;
    }
    if rows != n {
        return Err(Error::Validation(format!(
            "{}: header declares {n} rows, found {rows}",
            path.display()
        )));
    }
    Ok((features, n, d))
}

fn read_labels(path: &Path, n: usize) -> Result<Vec<Option<usize>>> {
    let mut labels = vec![None; n];
    for (line, toks) in content_lines(path)? {
        if toks.len() != 2 {
            return Err(Error::parse(path, line, "expected \"node_id class_id\""));
        }
        let v = parse_id(path, line, &toks[0])?;
        let c: usize = toks[1]
            .parse()
            .map_err(|_| Error::parse(path, line, format!("bad class id {:?}", toks[1])))?;
        if v >= n {
            return Err(Error::Validation(format!(
                "{}:{line}: node {v} outside 0..{n}",
                path.display()
            )));
        }
        labels[v] = Some(c);
    }
    Ok(labels)
}

fn read_splits(path: &Path, n: usize) -> Result<Vec<Option<Split>>> {
    let mut splits = vec![None; n];
    for (line, toks) in content_lines(path)? {
        if toks.len() != 2 {
            return Err(Error::parse(path, line, "expected \"node_id split\""));
        }
        let v = parse_id(path, line, &toks[0])?;
        if v >= n {
            return Err(Error::Validation(format!(
                "{}:{line}: node {v} outside 0..{n}",
                path.display()
            )));
        }
        splits[v] = Some(
            toks[1]
                .parse::<Split>()
                .map_err(|msg| Error::parse(path, line, msg))?,
        );
    }
    Ok(splits)
}

/// Dense renumbering of arbitrary string node ids, in first-seen order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdMap {
    originals: Vec<String>,
    index: HashMap<String, usize>,
}

impl IdMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get_or_insert(&mut self, original: &str) -> usize {
        if let Some(&id) = self.index.get(original) {
            return id;
        }
        let id = self.originals.len();
        self.originals.push(original.to_owned());
        self.index.insert(original.to_owned(), id);
        id
    }

    pub fn dense(&self, original: &str) -> Option<usize> {
        self.index.get(original).copied()
    }

    pub fn original(&self, dense: usize) -> Option<&str> {
        self.originals.get(dense).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.originals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.originals.is_empty()
    }

    /// Rewrites an edge file with string ids into dense ids, growing the map.
    pub fn remap_edge_file(&mut self, input: &Path, output: &Path) -> Result<()> {
        let lines = content_lines(input)?;
        let mut pairs = Vec::with_capacity(lines.len());
        for (line, toks) in lines {
            if toks.len() != 2 {
                return Err(Error::parse(input, line, "expected \"src dst\""));
            }
            pairs.push((self.get_or_insert(&toks[0]), self.get_or_insert(&toks[1])));
        }
        write_with(output, |w| {
            for (u, v) in pairs {
                writeln!(w, "{u} {v}")?;
            }
            Ok(())
        })
    }

    /// Persists the map as `dense_id original_id` lines.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_with(path, |w| {
            for (i, orig) in self.originals.iter().enumerate() {
                writeln!(w, "{i} {orig}")?;
            }
            Ok(())
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut map = IdMap::new();
        for (line, toks) in content_lines(path)? {
            if toks.len() != 2 {
                return Err(Error::parse(path, line, "expected \"dense_id original_id\""));
            }
            let dense = parse_id(path, line, &toks[0])?;
            if dense != map.len() {
                return Err(Error::parse(path, line, "dense ids must be consecutive from 0"));
            }
            map.get_or_insert(&toks[1]);
        }
        Ok(map)
    }
}
