//! Preprocessing of friendship-survey waves coded on a 0-9 scale.
//!
//! Each wave is a square matrix of codes, one row per respondent. The
//! default coding treats 1-3 (best friend, friend, friendly) as a link,
//! 0 and 4-6 (no relation, neutral, unknown, troubled) as no link and 9
//! as nonresponse. A pair is linked if either person reported a link, and
//! observed if either person responded.
//!
//! Wave files are plain text, one row per line, codes separated by
//! whitespace or written as consecutive digits.

use std::fs;
use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};
use crate::likelihoods::{MaskedMatrix, ObservationSet};

/// Survey times in weeks.
pub const VDB_TIMES: [f64; 7] = [0.0, 2.0, 4.0, 6.0, 9.0, 12.0, 15.0];
pub const VDB_SIZE: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VdbCoding {
    pub link: Vec<u8>,
    pub no_link: Vec<u8>,
    pub missing: Vec<u8>,
}

impl Default for VdbCoding {
    fn default() -> Self {
        VdbCoding {
            link: vec![1, 2, 3],
            no_link: vec![0, 4, 5, 6],
            missing: vec![9],
        }
    }
}

impl VdbCoding {
    fn decode(&self, code: u8) -> Option<Option<bool>> {
        if self.link.contains(&code) {
            Some(Some(true))
        } else if self.no_link.contains(&code) {
            Some(Some(false))
        } else if self.missing.contains(&code) {
            Some(None)
        } else {
            None
        }
    }
}

/// Binarises and OR-symmetrises the waves. `times` must have one entry per wave.
pub fn vdb_preprocess(waves: &[Vec<Vec<u8>>], times: &[f64], coding: &VdbCoding) -> Result<Dataset> {
    if waves.len() != times.len() {
        return Err(Error::Shape(format!("{} waves but {} times", waves.len(), times.len())));
    }
    let n = waves.first().map_or(0, Vec::len);
    let mut snapshots = Vec::with_capacity(waves.len());
    for (w, wave) in waves.iter().enumerate() {
        if wave.len() != n || wave.iter().any(|r| r.len() != n) {
            return Err(Error::Shape(format!("wave {} is not {n}x{n}", w + 1)));
        }
        let decoded = |i: usize, j: usize| {
            coding.decode(wave[i][j]).ok_or_else(|| {
                Error::Config(format!(
                    "wave {}: unknown code {} at row {}, column {}",
                    w + 1,
                    wave[i][j],
                    i + 1,
                    j + 1
                ))
            })
        };
        let mut m = MaskedMatrix::missing(n, n);
        for i in 0..n {
            for j in i + 1..n {
                let value = match (decoded(i, j)?, decoded(j, i)?) {
                    (None, None) => None,
                    (a, b) => Some(f64::from(u8::from(a == Some(true) || b == Some(true)))),
                };
                m.set(i, j, value);
                m.set(j, i, value);
            }
            // self-reports are validated but never observed
            decoded(i, i)?;
        }
        snapshots.push(m);
    }
    Ok(Dataset {
        data: ObservationSet::network(snapshots, true)?,
        locations: times.to_vec(),
        truth: None,
        standardization: None,
    })
}

/// Reads one wave file of codes.
pub fn read_vdb_wave(path: &Path) -> Result<Vec<Vec<u8>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let bad = |col: usize, tok: &str| Error::Parse {
            path: path.to_path_buf(),
            line: i as u64 + 1,
            column: col,
            message: format!("'{tok}' is not a code"),
        };
        let row: Vec<u8> = if line.contains(char::is_whitespace) {
            line.split_whitespace()
                .enumerate()
                .map(|(c, tok)| tok.parse::<u8>().map_err(|_| bad(c + 1, tok)))
                .collect::<Result<_>>()?
        } else {
            line.chars()
                .enumerate()
                .map(|(c, ch)| ch.to_digit(10).map(|d| d as u8).ok_or_else(|| bad(c + 1, &ch.to_string())))
                .collect::<Result<_>>()?
        };
        rows.push(row);
    }
    Ok(rows)
}

/// Loads the seven waves from the `.dat` files of a directory (sorted by
/// name) and preprocesses them with the default coding.
pub fn load_vdb_dir(dir: &Path) -> Result<Dataset> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("dat")))
        .collect();
    files.sort();
    if files.len() != VDB_TIMES.len() {
        return Err(Error::Shape(format!(
            "{}: expected {} wave files, found {}",
            dir.display(),
            VDB_TIMES.len(),
            files.len()
        )));
    }
    let waves = files.iter().map(|p| read_vdb_wave(p)).collect::<Result<Vec<_>>>()?;
    vdb_preprocess(&waves, &VDB_TIMES, &VdbCoding::default())
}
