//! Genetic distance matrices from aligned ITS sequences.
//!
//! Alignment itself is out of scope: inputs are pre-aligned FASTA or
//! externally computed matrices arriving as CSV. Matrices are square,
//! symmetric, zero-diagonal, and nonnegative; CSV ingestion symmetrizes
//! rounding-level asymmetry (up to `1e-6`) by averaging and rejects worse.

mod distance;
mod fasta;

pub use distance::{
    bootstrap_uncertainty, distance_matrix, jc69_distance, jc69_from_p, p_distance,
    tn93_distance, DistanceModel,
};
pub use fasta::{emit_fasta, parse_fasta, AlignedSequenceSet, SeqRecord, ALPHABET};

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

// Float provides abs on f64 in no_std builds.
#[allow(unused_imports)]
use num_traits::Float;
use thiserror::Error;

/// Asymmetry below this is treated as rounding and averaged away.
pub const SYMMETRY_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("genetics: empty input")]
    EmptyInput,
    #[error("genetics: empty sequence for {0}")]
    EmptySequence(String),
    #[error("genetics: malformed input at line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("genetics: duplicate name {0}")]
    DuplicateName(String),
    #[error("genetics: {name}: sequence length {got}, expected {expected}")]
    UnequalLength {
        name: String,
        got: usize,
        expected: usize,
    },
    #[error("genetics: {name}: illegal character {ch:?}")]
    IllegalCharacter { name: String, ch: char },
    #[error("genetics: no comparable sites after pairwise deletion")]
    NoComparableSites,
    #[error("genetics: saturated distance under {model:?} (log argument <= 0)")]
    SaturatedDistance { model: DistanceModel },
    #[error("genetics: bootstrap needs at least 2 replicates, got {0}")]
    TooFewReps(usize),
    #[error("genetics: column {column} out of range for alignment length {length}")]
    ColumnOutOfRange { column: usize, length: usize },
    #[error("genetics: matrix is not square: {rows} rows, {cols} columns")]
    NotSquare { rows: usize, cols: usize },
    #[error("genetics: asymmetry {delta} at ({i},{j}) exceeds tolerance {SYMMETRY_TOLERANCE}")]
    Asymmetric { i: usize, j: usize, delta: f64 },
    #[error("genetics: nonzero diagonal {value} at row {i}")]
    NonZeroDiagonal { i: usize, value: f64 },
    #[error("genetics: negative entry {value} at ({i},{j})")]
    NegativeEntry { i: usize, j: usize, value: f64 },
    #[error("genetics: species {0} not found")]
    UnknownSpecies(String),
    #[error("genetics: csv line {line}: {msg}")]
    Csv { line: usize, msg: String },
    #[error("genetics: non-finite value at ({i},{j})")]
    NonFinite { i: usize, j: usize },
}

pub type Result<T> = core::result::Result<T, Error>;

/// Square symmetric matrix of pairwise species distances with name labels.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneticDistanceMatrix {
    names: Vec<String>,
    /// row-major `n * n`
    values: Vec<f64>,
}

impl GeneticDistanceMatrix {
    /// Build from exact values; validates every invariant (symmetry here is
    /// exact — use [`GeneticDistanceMatrix::from_rows_tolerant`] for data
    /// from text sources).
    pub fn new(names: Vec<String>, values: Vec<f64>) -> Result<Self> {
        let n = names.len();
        if values.len() != n * n {
            return Err(Error::NotSquare {
                rows: values.len() / n.max(1),
                cols: n,
            });
        }
        let m = GeneticDistanceMatrix { names, values };
        m.validate()?;
        Ok(m)
    }

    /// Build from parsed rows, averaging asymmetry within tolerance and
    /// zeroing a within-tolerance diagonal.
    pub fn from_rows_tolerant(names: Vec<String>, mut values: Vec<f64>) -> Result<Self> {
        let n = names.len();
        if values.len() != n * n {
            return Err(Error::NotSquare {
                rows: values.len() / n.max(1),
                cols: n,
            });
        }
        for i in 0..n {
            let d = values[i * n + i];
            if d.abs() > SYMMETRY_TOLERANCE {
                return Err(Error::NonZeroDiagonal { i, value: d });
            }
            values[i * n + i] = 0.0;
            for j in (i + 1)..n {
                let a = values[i * n + j];
                let b = values[j * n + i];
                let delta = (a - b).abs();
                if delta > SYMMETRY_TOLERANCE {
                    return Err(Error::Asymmetric { i, j, delta });
                }
                let avg = 0.5 * (a + b);
                values[i * n + j] = avg;
                values[j * n + i] = avg;
            }
        }
        let m = GeneticDistanceMatrix { names, values };
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> Result<()> {
        let n = self.size();
        let mut seen: Vec<&str> = Vec::with_capacity(n);
        for name in &self.names {
            if seen.contains(&name.as_str()) {
                return Err(Error::DuplicateName(name.clone()));
            }
            seen.push(name);
        }
        for i in 0..n {
            for j in 0..n {
                let v = self.values[i * n + j];
                if !v.is_finite() {
                    return Err(Error::NonFinite { i, j });
                }
                if v < 0.0 {
                    return Err(Error::NegativeEntry { i, j, value: v });
                }
            }
            if self.values[i * n + i] != 0.0 {
                return Err(Error::NonZeroDiagonal {
                    i,
                    value: self.values[i * n + i],
                });
            }
            for j in (i + 1)..n {
                let a = self.values[i * n + j];
                let b = self.values[j * n + i];
                if (a - b).abs() > 1e-9 {
                    return Err(Error::Asymmetric {
                        i,
                        j,
                        delta: (a - b).abs(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn size(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.size() + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.size();
        &self.values[i * n..(i + 1) * n]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn distance_between(&self, a: &str, b: &str) -> Result<f64> {
        let i = self
            .index_of(a)
            .ok_or_else(|| Error::UnknownSpecies(a.to_string()))?;
        let j = self
            .index_of(b)
            .ok_or_else(|| Error::UnknownSpecies(b.to_string()))?;
        Ok(self.get(i, j))
    }

    /// Matrix restricted to the named species, in the given order.
    pub fn submatrix(&self, keep: &[String]) -> Result<GeneticDistanceMatrix> {
        let idx: Vec<usize> = keep
            .iter()
            .map(|name| {
                self.index_of(name)
                    .ok_or_else(|| Error::UnknownSpecies(name.clone()))
            })
            .collect::<Result<_>>()?;
        let k = idx.len();
        let mut values = alloc::vec![0.0f64; k * k];
        for (a, &i) in idx.iter().enumerate() {
            for (b, &j) in idx.iter().enumerate() {
                values[a * k + b] = self.get(i, j);
            }
        }
        GeneticDistanceMatrix::new(keep.to_vec(), values)
    }

    /// Matrix with one species removed.
    pub fn drop_species(&self, name: &str) -> Result<GeneticDistanceMatrix> {
        if self.index_of(name).is_none() {
            return Err(Error::UnknownSpecies(name.to_string()));
        }
        let keep: Vec<String> = self
            .names
            .iter()
            .filter(|n| n.as_str() != name)
            .cloned()
            .collect();
        self.submatrix(&keep)
    }

    pub fn to_csv(&self) -> String {
        matrix_csv(&self.names, |i, j| self.get(i, j))
    }

    /// Parse the `species,<name1>,...` CSV layout. Row labels must repeat
    /// the header order.
    pub fn from_csv(text: &str) -> Result<GeneticDistanceMatrix> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(Error::EmptyInput)?;
        let mut cols = header.split(',');
        let tag = cols.next().unwrap_or_default().trim();
        if tag != "species" {
            return Err(Error::Csv {
                line: 1,
                msg: format!("header must start with 'species', got {tag:?}"),
            });
        }
        let names: Vec<String> = cols.map(|c| c.trim().to_string()).collect();
        let n = names.len();
        if n == 0 {
            return Err(Error::EmptyInput);
        }
        let mut values = alloc::vec![0.0f64; n * n];
        let mut row_count = 0usize;
        for (lineno, line) in lines {
            if row_count >= n {
                return Err(Error::Csv {
                    line: lineno + 1,
                    msg: format!("more rows than the {n} header species"),
                });
            }
            let mut fields = line.split(',');
            let label = fields.next().unwrap_or_default().trim();
            if label != names[row_count] {
                return Err(Error::Csv {
                    line: lineno + 1,
                    msg: format!(
                        "row label {label:?} does not match header order ({:?} expected)",
                        names[row_count]
                    ),
                });
            }
            let mut col = 0usize;
            for field in fields {
                if col >= n {
                    return Err(Error::Csv {
                        line: lineno + 1,
                        msg: format!("more than {n} values in row"),
                    });
                }
                let v: f64 = field.trim().parse().map_err(|_| Error::Csv {
                    line: lineno + 1,
                    msg: format!("bad number {:?}", field.trim()),
                })?;
                values[row_count * n + col] = v;
                col += 1;
            }
            if col != n {
                return Err(Error::Csv {
                    line: lineno + 1,
                    msg: format!("expected {n} values, got {col}"),
                });
            }
            row_count += 1;
        }
        if row_count != n {
            return Err(Error::NotSquare {
                rows: row_count,
                cols: n,
            });
        }
        GeneticDistanceMatrix::from_rows_tolerant(names, values)
    }
}

/// Shared CSV layout for square name-labelled matrices:
/// `species,<name1>,...` then one row per species.
pub fn matrix_csv(names: &[String], value: impl Fn(usize, usize) -> f64) -> String {
    let mut out = String::from("species");
    for name in names {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for (i, name) in names.iter().enumerate() {
        out.push_str(name);
        for j in 0..names.len() {
            out.push(',');
            out.push_str(&format!("{}", value(i, j)));
        }
        out.push('\n');
    }
    out
}
