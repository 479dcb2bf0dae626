//! CSV matrices, label files and key=value manifests.
//!
//! Matrix files have a header row (first cell names the row-id column, the
//! rest name the data columns) and one row per object whose first cell is
//! the object id. Empty cells are missing values.
//!
//! A manifest is a text file of `key=value` lines (`#` starts a comment):
//!
//! ```text
//! kind=network            # or multitask
//! symmetric=true          # networks only
//! snapshot=wave1.csv,0    # path,time ; one line per time point
//! source=task1.csv        # multitask: one line per source
//! locations=0,1,2         # optional covariates for multitask sources
//! standardize=true        # multitask only, default true
//! truth=truth.csv         # optional ground-truth labels
//! ```
//!
//! Relative paths are resolved against the manifest's directory.

use std::fs;
use std::path::{Path, PathBuf};

use super::Dataset;
use crate::error::{Error, Result};
use crate::likelihoods::{MaskedMatrix, ObservationSet};

fn parse_err(path: &Path, line: u64, column: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        column,
        message: message.into(),
    }
}

/// A matrix together with its row ids and column names.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledMatrix {
    pub matrix: MaskedMatrix,
    pub row_ids: Vec<String>,
    pub columns: Vec<String>,
}

fn reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).flexible(false).from_reader(file))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.kind() {
        csv::ErrorKind::Io(_) => {
            let csv::ErrorKind::Io(io) = e.into_kind() else { unreachable!() };
            Error::io(path, io)
        }
        _ => parse_err(path, line, 0, e.to_string()),
    }
}

pub fn read_matrix_csv(path: &Path) -> Result<LabeledMatrix> {
    let mut rdr = reader(path)?;
    let header = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.is_empty() {
        return Err(parse_err(path, 1, 1, "missing header row"));
    }
    let columns: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut rows = Vec::new();
    let mut row_ids = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        row_ids.push(record.get(0).unwrap_or_default().to_string());
        let mut row = Vec::with_capacity(columns.len());
        for (j, cell) in record.iter().enumerate().skip(1) {
            let cell = cell.trim();
            if cell.is_empty() {
                row.push(None);
                continue;
            }
            let v: f64 = cell
                .parse()
                .map_err(|_| parse_err(path, line, j + 1, format!("'{cell}' is not a number")))?;
            if !v.is_finite() {
                return Err(parse_err(path, line, j + 1, format!("'{cell}' is not finite")));
            }
            row.push(Some(v));
        }
        rows.push(row);
    }
    let matrix = if rows.is_empty() {
        MaskedMatrix::missing(0, columns.len())
    } else {
        MaskedMatrix::from_rows(rows)?
    };
    Ok(LabeledMatrix {
        matrix,
        row_ids,
        columns,
    })
}

fn fmt_value(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

pub fn write_matrix_csv(path: &Path, m: &LabeledMatrix) -> Result<()> {
    let mut out = String::new();
    out.push_str("id");
    for c in &m.columns {
        out.push(',');
        out.push_str(c);
    }
    out.push('\n');
    for i in 0..m.matrix.rows() {
        out.push_str(&m.row_ids[i]);
        for j in 0..m.matrix.cols() {
            out.push(',');
            if let Some(v) = m.matrix.get(i, j) {
                out.push_str(&fmt_value(v));
            }
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Default ids `o1, o2, ...` and columns `<prefix>1, ...`.
pub fn labeled(matrix: MaskedMatrix, prefix: &str) -> LabeledMatrix {
    LabeledMatrix {
        row_ids: (1..=matrix.rows()).map(|i| format!("o{i}")).collect(),
        columns: (1..=matrix.cols()).map(|j| format!("{prefix}{j}")).collect(),
        matrix,
    }
}

/// Rescales every column to mean 0 and variance 1 over its observed
/// entries; returns (mean, sd) per column. Constant columns are only centred.
pub fn standardize(m: &mut MaskedMatrix) -> Vec<(f64, f64)> {
    let (rows, cols) = (m.rows(), m.cols());
    (0..cols)
        .map(|j| {
            let vals: Vec<f64> = (0..rows).filter_map(|i| m.get(i, j)).collect();
            if vals.is_empty() {
                return (0.0, 1.0);
            }
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
            for i in 0..rows {
                if let Some(v) = m.get(i, j) {
                    m.set(i, j, Some((v - mean) / sd));
                }
            }
            (mean, sd)
        })
        .collect()
}

/// Reads a label file (rows = objects, columns = locations, 1-based labels).
pub fn read_labels_csv(path: &Path) -> Result<Vec<Vec<usize>>> {
    let lm = read_matrix_csv(path)?;
    let m = &lm.matrix;
    (0..m.cols())
        .map(|j| {
            (0..m.rows())
                .map(|i| match m.get(i, j) {
                    Some(v) if v >= 1.0 && v.fract() == 0.0 => Ok(v as usize - 1),
                    _ => Err(parse_err(path, i as u64 + 2, j + 2, "labels must be positive integers")),
                })
                .collect()
        })
        .collect()
}

/// Writes labels per location as columns, 1-based.
pub fn write_labels_csv(path: &Path, rows: &[Vec<usize>], column_names: &[String]) -> Result<()> {
    let n = rows.first().map_or(0, Vec::len);
    let mut m = MaskedMatrix::missing(n, rows.len());
    for (j, r) in rows.iter().enumerate() {
        for (i, &c) in r.iter().enumerate() {
            m.set(i, j, Some((c + 1) as f64));
        }
    }
    let mut lm = labeled(m, "t");
    if column_names.len() == rows.len() {
        lm.columns = column_names.to_vec();
    }
    write_matrix_csv(path, &lm)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ManifestKind {
    Multitask,
    Network,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub kind: ManifestKind,
    pub sources: Vec<PathBuf>,
    /// Network snapshots with their time covariate.
    pub snapshots: Vec<(PathBuf, f64)>,
    pub symmetric: bool,
    pub locations: Option<Vec<f64>>,
    pub standardize: bool,
    pub truth: Option<PathBuf>,
}

fn parse_bool(path: &Path, line: u64, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(parse_err(path, line, 1, format!("expected a boolean, got '{v}'"))),
    }
}

impl Manifest {
    pub fn parse(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &str| {
            let p = Path::new(p.trim());
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base.join(p)
            }
        };
        let mut kind = None;
        let mut m = Manifest {
            kind: ManifestKind::Multitask,
            sources: Vec::new(),
            snapshots: Vec::new(),
            symmetric: true,
            locations: None,
            standardize: true,
            truth: None,
        };
        for (i, raw) in text.lines().enumerate() {
            let line = i as u64 + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| parse_err(path, line, 1, "expected key=value"))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "kind" => {
                    kind = Some(match value {
                        "multitask" => ManifestKind::Multitask,
                        "network" => ManifestKind::Network,
                        _ => return Err(parse_err(path, line, key.len() + 2, format!("unknown kind '{value}'"))),
                    })
                }
                "source" => m.sources.push(resolve(value)),
                "snapshot" => {
                    let (p, t) = value
                        .rsplit_once(',')
                        .ok_or_else(|| parse_err(path, line, key.len() + 2, "expected snapshot=path,time"))?;
                    let t: f64 = t
                        .trim()
                        .parse()
                        .map_err(|_| parse_err(path, line, key.len() + 2, format!("bad time '{t}'")))?;
                    m.snapshots.push((resolve(p), t));
                }
                "symmetric" => m.symmetric = parse_bool(path, line, value)?,
                "standardize" => m.standardize = parse_bool(path, line, value)?,
                "locations" => {
                    let locs = value
                        .split(',')
                        .map(|x| x.trim().parse::<f64>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|_| parse_err(path, line, key.len() + 2, "locations must be numbers"))?;
                    m.locations = Some(locs);
                }
                "truth" => m.truth = Some(resolve(value)),
                _ => return Err(parse_err(path, line, 1, format!("unknown key '{key}'"))),
            }
        }
        m.kind = kind.ok_or_else(|| parse_err(path, 0, 0, "manifest has no kind= line"))?;
        match m.kind {
            ManifestKind::Multitask if m.sources.is_empty() => Err(parse_err(path, 0, 0, "no source= lines")),
            ManifestKind::Network if m.snapshots.is_empty() => Err(parse_err(path, 0, 0, "no snapshot= lines")),
            _ => Ok(m),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let name = |p: &Path| p.file_name().map_or_else(|| p.display().to_string(), |f| f.to_string_lossy().into_owned());
        let mut out = String::new();
        match self.kind {
            ManifestKind::Multitask => {
                out.push_str("kind=multitask\n");
                out.push_str(&format!("standardize={}\n", self.standardize));
                for s in &self.sources {
                    out.push_str(&format!("source={}\n", name(s)));
                }
                if let Some(l) = &self.locations {
                    let l: Vec<String> = l.iter().map(|x| x.to_string()).collect();
                    out.push_str(&format!("locations={}\n", l.join(",")));
                }
            }
            ManifestKind::Network => {
                out.push_str("kind=network\n");
                out.push_str(&format!("symmetric={}\n", self.symmetric));
                for (s, t) in &self.snapshots {
                    out.push_str(&format!("snapshot={},{t}\n", name(s)));
                }
            }
        }
        if let Some(t) = &self.truth {
            out.push_str(&format!("truth={}\n", name(t)));
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// Loads every file the manifest names.
    pub fn load(&self) -> Result<Dataset> {
        let truth = self.truth.as_deref().map(read_labels_csv).transpose()?;
        let mut dataset = match self.kind {
            ManifestKind::Multitask => load_multitask_csv(&self.sources, self.standardize)?,
            ManifestKind::Network => load_network_csv(&self.snapshots, self.symmetric)?,
        };
        if let Some(l) = &self.locations {
            if l.len() != dataset.data.n_sources() {
                return Err(Error::Shape(format!(
                    "{} locations for {} sources",
                    l.len(),
                    dataset.data.n_sources()
                )));
            }
            dataset.locations = l.clone();
        }
        if let Some(t) = &truth {
            if t.len() != dataset.data.n_sources() || t.iter().any(|r| r.len() != dataset.data.n_objects()) {
                return Err(Error::Shape("truth file does not match the data shape".into()));
            }
        }
        dataset.truth = truth;
        Ok(dataset)
    }
}

pub fn load_manifest(path: &Path) -> Result<Dataset> {
    Manifest::parse(path)?.load()
}

pub fn load_multitask_csv(paths: &[PathBuf], standardize_columns: bool) -> Result<Dataset> {
    let mut sources = Vec::with_capacity(paths.len());
    let mut params = Vec::with_capacity(paths.len());
    for p in paths {
        let mut m = read_matrix_csv(p)?.matrix;
        if let Some(first) = sources.first().map(MaskedMatrix::rows) {
            if m.rows() != first {
                return Err(Error::GroundSetMismatch(first, m.rows()));
            }
        }
        params.push(if standardize_columns {
            standardize(&mut m)
        } else {
            vec![(0.0, 1.0); m.cols()]
        });
        sources.push(m);
    }
    Ok(Dataset {
        locations: (0..sources.len()).map(|s| s as f64).collect(),
        data: ObservationSet::multitask(sources)?,
        truth: None,
        standardization: standardize_columns.then_some(params),
    })
}

pub fn load_network_csv(snapshots: &[(PathBuf, f64)], symmetric: bool) -> Result<Dataset> {
    let mut mats = Vec::with_capacity(snapshots.len());
    for (p, _) in snapshots {
        let m = read_matrix_csv(p)?.matrix;
        if m.rows() != m.cols() {
            return Err(Error::Shape(format!("{}: {}x{} is not square", p.display(), m.rows(), m.cols())));
        }
        if let Some((i, j, v)) = m.entries().find(|&(_, _, v)| v != 0.0 && v != 1.0) {
            return Err(parse_err(p, i as u64 + 2, j + 2, format!("network entry {v} is not 0 or 1")));
        }
        if let Some(first) = mats.first().map(MaskedMatrix::rows) {
            if m.rows() != first {
                return Err(Error::GroundSetMismatch(first, m.rows()));
            }
        }
        mats.push(m);
    }
    Ok(Dataset {
        data: ObservationSet::network(mats, symmetric)?,
        locations: snapshots.iter().map(|(_, t)| *t).collect(),
        truth: None,
        standardization: None,
    })
}

/// Writes every source as CSV plus a manifest (and truth labels if known)
/// into `dir`; returns the manifest path.
pub fn write_dataset(dir: &Path, dataset: &Dataset) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let network = dataset.data.is_network();
    let mut files = Vec::new();
    for (s, m) in dataset.data.sources().iter().enumerate() {
        let file = dir.join(if network {
            format!("snapshot{}.csv", s + 1)
        } else {
            format!("source{}.csv", s + 1)
        });
        let lm = if network {
            let mut lm = labeled(m.clone(), "o");
            lm.columns = lm.row_ids.clone();
            lm
        } else {
            labeled(m.clone(), "x")
        };
        write_matrix_csv(&file, &lm)?;
        files.push(file);
    }
    let truth = match &dataset.truth {
        Some(t) => {
            let p = dir.join("truth.csv");
            let names: Vec<String> = (1..=t.len()).map(|s| format!("s{s}")).collect();
            write_labels_csv(&p, t, &names)?;
            Some(p)
        }
        None => None,
    };
    let manifest = Manifest {
        kind: if network { ManifestKind::Network } else { ManifestKind::Multitask },
        snapshots: if network {
            files.iter().cloned().zip(dataset.locations.iter().copied()).collect()
        } else {
            Vec::new()
        },
        sources: if network { Vec::new() } else { files },
        symmetric: dataset.data.is_symmetric(),
        locations: (!network).then(|| dataset.locations.clone()),
        standardize: false,
        truth,
    };
    let path = dir.join("manifest.txt");
    manifest.write(&path)?;
    Ok(path)
}
