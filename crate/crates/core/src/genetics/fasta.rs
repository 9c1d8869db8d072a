//! FASTA ingestion for pre-aligned sequence sets.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::genetics::{Error, Result};

/// Characters a record may contain after uppercase normalization.
pub const ALPHABET: &[u8] = b"ACGT-N";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeqRecord {
    pub name: String,
    pub seq: Vec<u8>,
}

/// Pre-aligned sequences: equal lengths, unique names, uppercase.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignedSequenceSet {
    records: Vec<SeqRecord>,
    length: usize,
}

impl AlignedSequenceSet {
    pub fn new(records: Vec<SeqRecord>) -> Result<Self> {
        let first = records.first().ok_or(Error::EmptyInput)?;
        if first.seq.is_empty() {
            return Err(Error::EmptySequence(first.name.clone()));
        }
        let length = first.seq.len();
        let mut seen: Vec<&str> = Vec::with_capacity(records.len());
        for rec in &records {
            if rec.seq.len() != length {
                return Err(Error::UnequalLength {
                    name: rec.name.clone(),
                    got: rec.seq.len(),
                    expected: length,
                });
            }
            if let Some(&bad) = rec.seq.iter().find(|b| !ALPHABET.contains(b)) {
                return Err(Error::IllegalCharacter {
                    name: rec.name.clone(),
                    ch: bad as char,
                });
            }
            if seen.contains(&rec.name.as_str()) {
                return Err(Error::DuplicateName(rec.name.clone()));
            }
            seen.push(&rec.name);
        }
        let _ = seen;
        Ok(AlignedSequenceSet { records, length })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Alignment length (columns).
    pub fn alignment_length(&self) -> usize {
        self.length
    }

    pub fn records(&self) -> &[SeqRecord] {
        &self.records
    }

    pub fn names(&self) -> Vec<String> {
        self.records.iter().map(|r| r.name.clone()).collect()
    }

    /// New set keeping only the given alignment columns (with repetition),
    /// as bootstrap resampling needs.
    pub fn select_columns(&self, columns: &[usize]) -> Result<Self> {
        for &c in columns {
            if c >= self.length {
                return Err(Error::ColumnOutOfRange {
                    column: c,
                    length: self.length,
                });
            }
        }
        let records = self
            .records
            .iter()
            .map(|r| SeqRecord {
                name: r.name.clone(),
                seq: columns.iter().map(|&c| r.seq[c]).collect(),
            })
            .collect();
        AlignedSequenceSet::new(records)
    }
}

/// Parse FASTA text into an aligned set. Sequences may span multiple lines;
/// lowercase is normalized to uppercase.
pub fn parse_fasta(text: &str) -> Result<AlignedSequenceSet> {
    let mut records: Vec<SeqRecord> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(header) = line.strip_prefix('>') {
            let name = header.trim().to_string();
            if name.is_empty() {
                return Err(Error::Malformed {
                    line: lineno + 1,
                    msg: "empty record name".to_string(),
                });
            }
            records.push(SeqRecord {
                name,
                seq: Vec::new(),
            });
        } else {
            let rec = records.last_mut().ok_or(Error::Malformed {
                line: lineno + 1,
                msg: "sequence data before the first '>' header".to_string(),
            })?;
            rec.seq
                .extend(line.bytes().map(|b| b.to_ascii_uppercase()));
        }
    }
    AlignedSequenceSet::new(records)
}

/// Emit FASTA, one line per sequence.
pub fn emit_fasta(set: &AlignedSequenceSet) -> String {
    let mut out = String::new();
    for rec in set.records() {
        out.push('>');
        out.push_str(&rec.name);
        out.push('\n');
        out.push_str(core::str::from_utf8(&rec.seq).expect("validated ASCII"));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_two_records_with_gaps() {
        let set = parse_fasta(">a\nACGT\n>b\nAC-T\n").unwrap();
        assert_eq!(set.len(), 2);
        assert_eq!(set.alignment_length(), 4);
        assert_eq!(set.records()[1].seq, b"AC-T");
    }

    #[test]
    fn unequal_lengths_error() {
        assert!(matches!(
            parse_fasta(">a\nACGT\n>b\nACG\n"),
            Err(Error::UnequalLength { .. })
        ));
    }

    #[test]
    fn illegal_character_and_duplicate_name_error() {
        assert!(matches!(
            parse_fasta(">a\nACXT\n"),
            Err(Error::IllegalCharacter { .. })
        ));
        assert!(matches!(
            parse_fasta(">a\nACGT\n>a\nACGT\n"),
            Err(Error::DuplicateName(_))
        ));
    }

    #[test]
    fn lowercase_is_normalized_and_multiline_joined() {
        let set = parse_fasta(">a\nacg\nt-n\n").unwrap();
        assert_eq!(set.records()[0].seq, b"ACGT-N");
    }

    #[test]
    fn round_trip_is_identity() {
        let text = ">a\nACGT\n>b\nAC-T\n";
        let set = parse_fasta(text).unwrap();
        let emitted = emit_fasta(&set);
        assert_eq!(parse_fasta(&emitted).unwrap(), set);
        assert_eq!(emitted, text);
    }
}
