//! Binary symptom datasets and the shared coordinate system (cause list and
//! symptom dictionary) every domain indexes into.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("unknown cause {cause:?} for death {death_id:?}")]
    UnknownCause { death_id: String, cause: String },
    #[error("symptom column {position} is {found:?}, expected {expected:?}")]
    UnknownSymptomColumn {
        position: usize,
        found: String,
        expected: String,
    },
    #[error("duplicate death id {0:?}")]
    DuplicateDeathId(String),
    #[error("malformed cell {value:?} for death {death_id:?}, symptom {symptom:?}")]
    MalformedCell {
        death_id: String,
        symptom: String,
        value: String,
    },
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("row {row} has {found} fields, expected {expected}")]
    RowLength {
        row: usize,
        found: usize,
        expected: usize,
    },
    #[error("invalid identifier list: {0}")]
    InvalidIdentifiers(String),
}

fn fingerprint_of(ids: &[String]) -> String {
    let mut hasher = Sha256::new();
    for id in ids {
        hasher.update(id.as_bytes());
        hasher.update(b"\n");
    }
    hex::encode(hasher.finalize())
}

fn parse_identifier_lines(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_owned)
        .collect()
}

fn check_identifiers(ids: &[String], min_len: usize, what: &str) -> Result<(), DataError> {
    if ids.len() < min_len {
        return Err(DataError::InvalidIdentifiers(format!(
            "{what} needs at least {min_len} entries, got {}",
            ids.len()
        )));
    }
    let mut seen = HashSet::new();
    for id in ids {
        if id.is_empty() {
            return Err(DataError::InvalidIdentifiers(format!("empty {what} entry")));
        }
        if !seen.insert(id.as_str()) {
            return Err(DataError::InvalidIdentifiers(format!(
                "duplicate {what} entry {id:?}"
            )));
        }
    }
    Ok(())
}

/// Ordered list of mutually exclusive causes. Position is the cause index used
/// everywhere else in the crate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CauseList {
    causes: Vec<String>,
    index: HashMap<String, usize>,
    fingerprint: String,
}

impl CauseList {
    pub fn new(causes: Vec<String>) -> Result<Self, DataError> {
        check_identifiers(&causes, 2, "cause list")?;
        let index = causes
            .iter()
            .enumerate()
            .map(|(i, c)| (c.clone(), i))
            .collect();
        let fingerprint = fingerprint_of(&causes);
        Ok(Self {
            causes,
            index,
            fingerprint,
        })
    }

    /// Newline-delimited file, one identifier per line. Blank lines are ignored.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, DataError> {
        Self::new(parse_identifier_lines(&std::fs::read_to_string(path)?))
    }

    pub fn len(&self) -> usize {
        self.causes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.causes.is_empty()
    }

    pub fn name(&self, index: usize) -> &str {
        &self.causes[index]
    }

    pub fn names(&self) -> &[String] {
        &self.causes
    }

    pub fn index_of(&self, cause: &str) -> Option<usize> {
        self.index.get(cause).copied()
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn to_text(&self) -> String {
        self.causes.iter().map(|c| format!("{c}\n")).collect()
    }
}

/// Ordered list of symptom identifiers plus a content hash of that order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymptomDictionary {
    symptoms: Vec<String>,
    fingerprint: String,
}

impl SymptomDictionary {
    pub fn new(symptoms: Vec<String>) -> Result<Self, DataError> {
        check_identifiers(&symptoms, 1, "symptom dictionary")?;
        let fingerprint = fingerprint_of(&symptoms);
        Ok(Self {
            symptoms,
            fingerprint,
        })
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, DataError> {
        Self::new(parse_identifier_lines(&std::fs::read_to_string(path)?))
    }

    pub fn len(&self) -> usize {
        self.symptoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symptoms.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.symptoms
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn to_text(&self) -> String {
        self.symptoms.iter().map(|s| format!("{s}\n")).collect()
    }
}

/// One symptom response. `Missing` is nonresponse, not a "no".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SymptomValue {
    Yes,
    No,
    Missing,
}

impl SymptomValue {
    pub fn parse(cell: &str) -> Option<Self> {
        match cell.trim() {
            "Y" => Some(Self::Yes),
            "N" => Some(Self::No),
            "." => Some(Self::Missing),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Yes => "Y",
            Self::No => "N",
            Self::Missing => ".",
        }
    }
}

impl fmt::Display for SymptomValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub death_id: String,
    pub symptoms: Vec<SymptomValue>,
    pub cause: Option<usize>,
}

/// Deaths from one domain. Immutable once built; clones share the cause list
/// and dictionary.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    domain_id: String,
    records: Vec<Record>,
    causes: Arc<CauseList>,
    dict: Arc<SymptomDictionary>,
}

impl Dataset {
    /// Validates every record against the cause list and dictionary.
    pub fn new(
        domain_id: impl Into<String>,
        records: Vec<Record>,
        causes: Arc<CauseList>,
        dict: Arc<SymptomDictionary>,
    ) -> Result<Self, DataError> {
        let mut seen = HashSet::with_capacity(records.len());
        for (row, r) in records.iter().enumerate() {
            if !seen.insert(r.death_id.as_str()) {
                return Err(DataError::DuplicateDeathId(r.death_id.clone()));
            }
            if r.symptoms.len() != dict.len() {
                return Err(DataError::RowLength {
                    row,
                    found: r.symptoms.len(),
                    expected: dict.len(),
                });
            }
            if let Some(c) = r.cause {
                if c >= causes.len() {
                    return Err(DataError::UnknownCause {
                        death_id: r.death_id.clone(),
                        cause: c.to_string(),
                    });
                }
            }
        }
        Ok(Self {
            domain_id: domain_id.into(),
            records,
            causes,
            dict,
        })
    }

    pub fn domain_id(&self) -> &str {
        &self.domain_id
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn causes(&self) -> &Arc<CauseList> {
        &self.causes
    }

    pub fn dict(&self) -> &Arc<SymptomDictionary> {
        &self.dict
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn n_causes(&self) -> usize {
        self.causes.len()
    }

    pub fn n_symptoms(&self) -> usize {
        self.dict.len()
    }

    pub fn labels(&self) -> Vec<Option<usize>> {
        self.records.iter().map(|r| r.cause).collect()
    }

    pub fn n_labeled(&self) -> usize {
        self.records.iter().filter(|r| r.cause.is_some()).count()
    }

    pub fn is_fully_labeled(&self) -> bool {
        self.records.iter().all(|r| r.cause.is_some())
    }

    /// New dataset sharing this one's coordinate system.
    pub fn with_records(&self, domain_id: impl Into<String>, records: Vec<Record>) -> Result<Self, DataError> {
        Self::new(domain_id, records, self.causes.clone(), self.dict.clone())
    }

    /// Records at `indices`, in the order given.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            domain_id: self.domain_id.clone(),
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            causes: self.causes.clone(),
            dict: self.dict.clone(),
        }
    }

    /// Same deaths with every label removed.
    pub fn unlabeled_copy(&self) -> Dataset {
        Dataset {
            domain_id: self.domain_id.clone(),
            records: self
                .records
                .iter()
                .map(|r| Record {
                    cause: None,
                    ..r.clone()
                })
                .collect(),
            causes: self.causes.clone(),
            dict: self.dict.clone(),
        }
    }

    pub fn read_csv<R: Read>(
        domain_id: impl Into<String>,
        reader: R,
        causes: Arc<CauseList>,
        dict: Arc<SymptomDictionary>,
    ) -> Result<Self, DataError> {
        let mut csv = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_reader(reader);
        let mut rows = csv.records();
        let header = rows
            .next()
            .ok_or_else(|| DataError::MalformedHeader("empty file".into()))??;
        let header: Vec<&str> = header.iter().map(str::trim).collect();
        if header.len() < 2 || header[0] != "death_id" || header[1] != "cause" {
            return Err(DataError::MalformedHeader(
                "header must start with death_id,cause".into(),
            ));
        }
        let symptom_cols = &header[2..];
        for (position, expected) in dict.names().iter().enumerate() {
            match symptom_cols.get(position) {
                Some(found) if found == expected => {}
                found => {
                    return Err(DataError::UnknownSymptomColumn {
                        position,
                        found: found.map(|s| s.to_string()).unwrap_or_default(),
                        expected: expected.clone(),
                    })
                }
            }
        }
        if let Some(extra) = symptom_cols.get(dict.len()) {
            return Err(DataError::UnknownSymptomColumn {
                position: dict.len(),
                found: extra.to_string(),
                expected: String::new(),
            });
        }
        let width = dict.len() + 2;
        let mut records = Vec::new();
        for (row, line) in rows.enumerate() {
            let line = line?;
            if line.len() == 1 && line.get(0).is_some_and(|s| s.trim().is_empty()) {
                continue;
            }
            if line.len() != width {
                return Err(DataError::RowLength {
                    row: row + 1,
                    found: line.len(),
                    expected: width,
                });
            }
            let death_id = line[0].trim().to_string();
            let cause_cell = line[1].trim();
            let cause = if cause_cell.is_empty() {
                None
            } else {
                Some(causes.index_of(cause_cell).ok_or_else(|| DataError::UnknownCause {
                    death_id: death_id.clone(),
                    cause: cause_cell.to_string(),
                })?)
            };
            let mut symptoms = Vec::with_capacity(dict.len());
            for (j, cell) in line.iter().skip(2).enumerate() {
                symptoms.push(SymptomValue::parse(cell).ok_or_else(|| DataError::MalformedCell {
                    death_id: death_id.clone(),
                    symptom: dict.names()[j].clone(),
                    value: cell.to_string(),
                })?);
            }
            records.push(Record {
                death_id,
                symptoms,
                cause,
            });
        }
        Self::new(domain_id, records, causes, dict)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), DataError> {
        let mut out = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(writer);
        let mut header = vec!["death_id".to_string(), "cause".to_string()];
        header.extend(self.dict.names().iter().cloned());
        out.write_record(&header)?;
        for r in &self.records {
            let mut row: Vec<&str> = Vec::with_capacity(header.len());
            row.push(&r.death_id);
            row.push(r.cause.map(|c| self.causes.name(c)).unwrap_or(""));
            row.extend(r.symptoms.iter().map(|s| s.as_str()));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("utf-8 identifiers")
    }
}

/// Load a dataset CSV. The domain id is the file stem.
pub fn load_dataset(
    path: impl AsRef<Path>,
    causes: Arc<CauseList>,
    dict: Arc<SymptomDictionary>,
) -> Result<Dataset, DataError> {
    let path = path.as_ref();
    let domain_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let file = std::fs::File::open(path)?;
    Dataset::read_csv(domain_id, std::io::BufReader::new(file), causes, dict)
}

/// Split into (labeled, unlabeled), preserving relative order in each part.
pub fn partition_by_label(d: &Dataset) -> (Dataset, Dataset) {
    let (labeled, unlabeled): (Vec<usize>, Vec<usize>) =
        (0..d.len()).partition(|&i| d.records[i].cause.is_some());
    (d.subset(&labeled), d.subset(&unlabeled))
}

/// Number of labeled records per cause.
pub fn cause_counts(d: &Dataset) -> Vec<usize> {
    let mut counts = vec![0; d.n_causes()];
    for r in &d.records {
        if let Some(c) = r.cause {
            counts[c] += 1;
        }
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;

    fn coords(c: usize, p: usize) -> (Arc<CauseList>, Arc<SymptomDictionary>) {
        let causes = CauseList::new((0..c).map(|i| format!("cause{i}")).collect()).unwrap();
        let dict = SymptomDictionary::new((0..p).map(|j| format!("s{j}")).collect()).unwrap();
        (Arc::new(causes), Arc::new(dict))
    }

    fn parse(text: &str, c: usize, p: usize) -> Result<Dataset, DataError> {
        let (causes, dict) = coords(c, p);
        Dataset::read_csv("d", text.as_bytes(), causes, dict)
    }

    #[test]
    fn parses_three_states() {
        let d = parse(
            "death_id,cause,s0,s1,s2\na,cause0,Y,N,.\nb,cause1, N ,.,Y\nc,,.,.,.\n",
            2,
            3,
        )
        .unwrap();
        assert_eq!(d.len(), 3);
        use SymptomValue::*;
        assert_eq!(d.records()[0].symptoms, vec![Yes, No, Missing]);
        assert_eq!(d.records()[1].symptoms, vec![No, Missing, Yes]);
        assert_eq!(d.records()[0].cause, Some(0));
        assert_eq!(d.records()[2].cause, None);
    }

    #[test]
    fn unknown_cause_rejected() {
        let err = parse("death_id,cause,s0\na,causeX,Y\n", 2, 1).unwrap_err();
        assert!(matches!(err, DataError::UnknownCause { .. }));
    }

    #[test]
    fn all_unlabeled_is_fine() {
        let d = parse("death_id,cause,s0\na,,Y\nb,,N\n", 2, 1).unwrap();
        assert!(d.labels().iter().all(Option::is_none));
        assert_eq!(cause_counts(&d), vec![0, 0]);
    }

    #[test]
    fn header_and_cell_errors() {
        assert!(matches!(
            parse("death_id,cause,s1\na,,Y\n", 2, 1).unwrap_err(),
            DataError::UnknownSymptomColumn { .. }
        ));
        assert!(matches!(
            parse("death_id,cause,s0,extra\na,,Y,N\n", 2, 1).unwrap_err(),
            DataError::UnknownSymptomColumn { .. }
        ));
        assert!(matches!(
            parse("death_id,cause,s0\na,,yes\n", 2, 1).unwrap_err(),
            DataError::MalformedCell { .. }
        ));
        assert!(matches!(
            parse("death_id,cause,s0\na,,Y\na,,N\n", 2, 1).unwrap_err(),
            DataError::DuplicateDeathId(_)
        ));
        assert!(matches!(
            parse("id,cause,s0\n", 2, 1).unwrap_err(),
            DataError::MalformedHeader(_)
        ));
        assert!(matches!(
            parse("death_id,cause,s0\na,,Y,N\n", 2, 1).unwrap_err(),
            DataError::RowLength { .. }
        ));
    }

    #[test]
    fn identifier_lists_validate() {
        assert!(CauseList::new(vec!["a".into()]).is_err());
        assert!(CauseList::new(vec!["a".into(), "a".into()]).is_err());
        assert!(SymptomDictionary::new(vec![]).is_err());
        let a = SymptomDictionary::new(vec!["x".into(), "y".into()]).unwrap();
        let b = SymptomDictionary::new(vec!["y".into(), "x".into()]).unwrap();
        assert_ne!(a.fingerprint(), b.fingerprint());
        let a2 = SymptomDictionary::new(vec!["x".into(), "y".into()]).unwrap();
        assert_eq!(a.fingerprint(), a2.fingerprint());
    }

    #[test]
    fn partition_and_counts() {
        let (causes, dict) = coords(3, 1);
        let records: Vec<Record> = (0..10)
            .map(|i| Record {
                death_id: format!("d{i}"),
                symptoms: vec![SymptomValue::Yes],
                cause: if i % 3 == 0 { Some(i % 2) } else { None },
            })
            .collect();
        let d = Dataset::new("x", records, causes, dict).unwrap();
        let (l, u) = partition_by_label(&d);
        assert_eq!((l.len(), u.len()), (4, 6));
        let ids: HashSet<_> = l.records().iter().map(|r| &r.death_id).collect();
        assert!(u.records().iter().all(|r| !ids.contains(&r.death_id)));
        assert_eq!(cause_counts(&d), vec![2, 2, 0]);
        assert_eq!(cause_counts(&l).iter().sum::<usize>(), 4);

        let all = d.subset(&[0, 3, 6, 9]);
        let (l, u) = partition_by_label(&all);
        assert_eq!((l.len(), u.len()), (4, 0));
        let (l, u) = partition_by_label(&all.unlabeled_copy());
        assert_eq!((l.len(), u.len()), (0, 4));
    }

    #[test]
    fn counts_examples() {
        let (causes, dict) = coords(3, 1);
        let mk = |labels: &[usize]| {
            let recs = labels
                .iter()
                .enumerate()
                .map(|(i, &c)| Record {
                    death_id: i.to_string(),
                    symptoms: vec![SymptomValue::No],
                    cause: Some(c),
                })
                .collect();
            Dataset::new("x", recs, causes.clone(), dict.clone()).unwrap()
        };
        assert_eq!(cause_counts(&mk(&[0, 0, 1])), vec![2, 1, 0]);
        assert_eq!(cause_counts(&mk(&[2, 2, 2, 2])), vec![0, 0, 4]);
    }
}
