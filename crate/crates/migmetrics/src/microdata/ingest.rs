//! Streaming ingestion of delimited microdata.
//!
//! The input format is UTF-8 delimited text with a header row. Fields
//! may not contain the delimiter or newlines (there is no quoting),
//! which lets the reader cut the stream at arbitrary byte positions
//! and hand fixed-size chunks to worker threads. Chunk results are
//! merged in chunk order, so a pass produces the same answer for any
//! worker count.
//!
//! Rejected rows never abort a run; they are counted by reason in the
//! [`IngestReport`]. Only I/O failures abort.

use std::collections::BTreeMap;
use std::io::{BufRead, Read};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::hierarchy::{RegionHierarchy, RegionId};
use super::schema::Schema;
use super::{Education, PersonRecord, Reason, Scale, Sex, UrbanStatus};

/// Target chunk size handed to one worker task.
const CHUNK_BYTES: usize = 4 << 20;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("ingest i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("input has no header row")]
    NoHeader,
    #[error("bound column '{0}' not found in header")]
    MissingColumn(String),
    #[error("worker pool: {0}")]
    Pool(String),
}

/// Why a row was rejected. Labels are stable output strings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RejectReason {
    FieldCount,
    InvalidUtf8,
    AgeOutOfRange,
    InvalidWeight,
    UnknownEducationCode,
    UnknownSexCode,
    UnknownUrbanCode,
    UnknownReasonCode,
    UnknownRegion,
    MissingRegion,
    NestingViolation,
    InvalidYearsSchooling,
    InvalidDuration,
}

impl RejectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::FieldCount => "missing fields",
            RejectReason::InvalidUtf8 => "invalid utf-8",
            RejectReason::AgeOutOfRange => "age out of range",
            RejectReason::InvalidWeight => "invalid weight",
            RejectReason::UnknownEducationCode => "unknown education code",
            RejectReason::UnknownSexCode => "unknown sex code",
            RejectReason::UnknownUrbanCode => "unknown urban code",
            RejectReason::UnknownReasonCode => "unknown reason code",
            RejectReason::UnknownRegion => "unknown region",
            RejectReason::MissingRegion => "missing region",
            RejectReason::NestingViolation => "region nesting violation",
            RejectReason::InvalidYearsSchooling => "invalid years of schooling",
            RejectReason::InvalidDuration => "invalid duration",
        }
    }
}

/// Commutative tally of an ingestion pass; merging partial reports in
/// any order gives the same totals.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub rows_read: u64,
    pub accepted: u64,
    pub rejected: u64,
    pub reject_reasons: BTreeMap<String, u64>,
}

impl IngestReport {
    pub fn note_reject(&mut self, reason: RejectReason) {
        self.rejected += 1;
        *self
            .reject_reasons
            .entry(reason.as_str().to_string())
            .or_insert(0) += 1;
    }

    pub fn merge(&mut self, other: IngestReport) {
        self.rows_read += other.rows_read;
        self.accepted += other.accepted;
        self.rejected += other.rejected;
        for (k, v) in other.reject_reasons {
            *self.reject_reasons.entry(k).or_insert(0) += v;
        }
    }
}

/// Which optional fields the schema binds; consumed by indicator
/// operations whose preconditions name a binding.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct FieldPresence {
    pub weight: bool,
    pub sex: bool,
    pub years_schooling: bool,
    pub minor_now: bool,
    pub major_now: bool,
    pub minor_prev: bool,
    pub major_prev: bool,
    pub urban_now: bool,
    pub urban_prev: bool,
    pub duration: bool,
    pub reason: bool,
}

impl FieldPresence {
    pub fn from_schema(schema: &Schema) -> Self {
        let c = &schema.columns;
        FieldPresence {
            weight: c.weight.is_some(),
            sex: c.sex.is_some(),
            years_schooling: c.years_schooling.is_some(),
            minor_now: c.region_minor_now.is_some(),
            major_now: c.region_major_now.is_some(),
            minor_prev: c.region_minor_prev.is_some(),
            major_prev: c.region_major_prev.is_some(),
            urban_now: c.urban_now.is_some(),
            urban_prev: c.urban_prev.is_some(),
            duration: c.duration_years.is_some(),
            reason: c.reason.is_some(),
        }
    }

    /// Everything bound; the right presence for corpora built in code.
    pub fn all() -> Self {
        FieldPresence {
            weight: true,
            sex: true,
            years_schooling: true,
            minor_now: true,
            major_now: true,
            minor_prev: true,
            major_prev: true,
            urban_now: true,
            urban_prev: true,
            duration: true,
            reason: true,
        }
    }

    /// Can migration be classified at this scale for any record?
    pub fn scale_available(&self, scale: Scale) -> bool {
        match scale {
            Scale::Minor => self.minor_now && self.minor_prev,
            Scale::Major => {
                (self.major_now || self.minor_now) && (self.major_prev || self.minor_prev)
            }
        }
    }
}

/// Streaming aggregation state fed one record at a time. Partition
/// results must merge commutatively up to floating-point compensation.
pub trait Accumulate: Send {
    fn absorb(&mut self, rec: &PersonRecord);
    fn merge(&mut self, other: Self);
}

impl Accumulate for Vec<PersonRecord> {
    fn absorb(&mut self, rec: &PersonRecord) {
        self.push(rec.clone());
    }
    fn merge(&mut self, mut other: Self) {
        self.append(&mut other);
    }
}

impl<A: Accumulate, B: Accumulate> Accumulate for (A, B) {
    fn absorb(&mut self, rec: &PersonRecord) {
        self.0.absorb(rec);
        self.1.absorb(rec);
    }
    fn merge(&mut self, other: Self) {
        self.0.merge(other.0);
        self.1.merge(other.1);
    }
}

#[derive(Clone, Copy)]
enum Slot {
    Weight,
    Age,
    Sex,
    Education,
    YearsSchooling,
    MinorNow,
    MajorNow,
    MinorPrev,
    MajorPrev,
    UrbanNow,
    UrbanPrev,
    Duration,
    Reason,
}

const N_SLOTS: usize = 13;

struct CodeTable<T: Copy> {
    entries: Vec<(Box<str>, T)>,
}

impl<T: Copy> CodeTable<T> {
    fn get(&self, code: &str) -> Option<T> {
        self.entries
            .iter()
            .find(|(k, _)| k.as_ref() == code)
            .map(|(_, v)| *v)
    }
    fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn code_table<T: Copy>(map: &BTreeMap<String, T>) -> CodeTable<T> {
    CodeTable {
        entries: map
            .iter()
            .map(|(k, v)| (k.clone().into_boxed_str(), *v))
            .collect(),
    }
}

/// A schema resolved against a header row and a hierarchy: knows the
/// column index of every bound field and how to decode each cell.
pub struct RowParser<'h> {
    hierarchy: &'h RegionHierarchy,
    delimiter: u8,
    missing: Vec<Box<str>>,
    // (column index, slot), ascending by column index.
    wanted: Vec<(usize, Slot)>,
    last_wanted_col: usize,
    education: CodeTable<Education>,
    sex: CodeTable<Sex>,
    urban_now: CodeTable<UrbanStatus>,
    urban_prev: CodeTable<UrbanStatus>,
    reason: CodeTable<Reason>,
    top_code: Option<u32>,
    presence: FieldPresence,
}

impl<'h> RowParser<'h> {
    pub fn new(
        schema: &Schema,
        hierarchy: &'h RegionHierarchy,
        header_line: &str,
    ) -> Result<Self, IngestError> {
        let delimiter = schema.delimiter_byte();
        let header: Vec<&str> = header_line
            .trim_end_matches(['\r', '\n'])
            .split(schema.delimiter)
            .collect();
        let find = |name: &Option<String>| -> Result<Option<usize>, IngestError> {
            match name {
                None => Ok(None),
                Some(n) => header
                    .iter()
                    .position(|h| h == n)
                    .map(Some)
                    .ok_or_else(|| IngestError::MissingColumn(n.clone())),
            }
        };
        let c = &schema.columns;
        let mut wanted: Vec<(usize, Slot)> = Vec::new();
        let age_col = find(&Some(c.age.clone()))?.unwrap();
        wanted.push((age_col, Slot::Age));
        let edu_col = find(&Some(c.education_level.clone()))?.unwrap();
        wanted.push((edu_col, Slot::Education));
        for (name, slot) in [
            (&c.weight, Slot::Weight),
            (&c.sex, Slot::Sex),
            (&c.years_schooling, Slot::YearsSchooling),
            (&c.region_minor_now, Slot::MinorNow),
            (&c.region_major_now, Slot::MajorNow),
            (&c.region_minor_prev, Slot::MinorPrev),
            (&c.region_major_prev, Slot::MajorPrev),
            (&c.urban_now, Slot::UrbanNow),
            (&c.urban_prev, Slot::UrbanPrev),
            (&c.duration_years, Slot::Duration),
            (&c.reason, Slot::Reason),
        ] {
            if let Some(idx) = find(name)? {
                wanted.push((idx, slot));
            }
        }
        wanted.sort_by_key(|&(idx, _)| idx);
        let last_wanted_col = wanted.last().map(|&(i, _)| i).unwrap_or(0);
        Ok(RowParser {
            hierarchy,
            delimiter,
            missing: schema
                .missing_values
                .iter()
                .map(|s| s.clone().into_boxed_str())
                .collect(),
            wanted,
            last_wanted_col,
            education: code_table(&schema.codes.education_level),
            sex: code_table(&schema.codes.sex),
            urban_now: code_table(&schema.codes.urban_now),
            urban_prev: code_table(&schema.codes.urban_prev),
            reason: code_table(&schema.codes.reason),
            top_code: schema.duration_top_code,
            presence: FieldPresence::from_schema(schema),
        })
    }

    pub fn presence(&self) -> FieldPresence {
        self.presence
    }

    #[inline]
    fn is_missing(&self, cell: &str) -> bool {
        cell.is_empty() || self.missing.iter().any(|m| m.as_ref() == cell)
    }

    pub fn parse_line<'a>(&self, line: &'a str) -> Result<PersonRecord, RejectReason> {
        let mut slots: [Option<&'a str>; N_SLOTS] = [None; N_SLOTS];
        {
            let bytes = line.as_bytes();
            let mut field_idx = 0usize;
            let mut start = 0usize;
            let mut want_iter = self.wanted.iter();
            let mut next_want = want_iter.next();
            let mut pos = 0usize;
            loop {
                let (end, at_end) = match bytes[pos..].iter().position(|&b| b == self.delimiter) {
                    Some(off) => (pos + off, false),
                    None => (bytes.len(), true),
                };
                while let Some(&(col, slot)) = next_want {
                    if col != field_idx {
                        break;
                    }
                    slots[slot as usize] = Some(&line[start..end]);
                    next_want = want_iter.next();
                }
                if next_want.is_none() || at_end {
                    break;
                }
                pos = end + 1;
                start = pos;
                field_idx += 1;
                if field_idx > self.last_wanted_col {
                    break;
                }
            }
            if next_want.is_some() {
                return Err(RejectReason::FieldCount);
            }
        }

        let take = |slot: Slot| -> Option<&'a str> {
            slots[slot as usize].filter(|cell| !self.is_missing(cell))
        };

        let weight = match take(Slot::Weight) {
            None if !self.presence.weight => 1.0,
            None => return Err(RejectReason::InvalidWeight),
            Some(cell) => {
                let w: f64 = cell.parse().map_err(|_| RejectReason::InvalidWeight)?;
                if !w.is_finite() || w < 0.0 {
                    return Err(RejectReason::InvalidWeight);
                }
                w
            }
        };

        let age = match take(Slot::Age) {
            None => return Err(RejectReason::AgeOutOfRange),
            Some(cell) => {
                let a: i64 = cell.parse().map_err(|_| RejectReason::AgeOutOfRange)?;
                if !(0..=130).contains(&a) {
                    return Err(RejectReason::AgeOutOfRange);
                }
                a as u16
            }
        };

        let education = match take(Slot::Education) {
            None => Education::Unknown,
            Some(cell) => self.decode_education(cell)?,
        };

        let sex = match take(Slot::Sex) {
            None => Sex::Unknown,
            Some(cell) => {
                if self.sex.is_empty() {
                    match cell {
                        "male" => Sex::Male,
                        "female" => Sex::Female,
                        "unknown" => Sex::Unknown,
                        _ => return Err(RejectReason::UnknownSexCode),
                    }
                } else {
                    self.sex.get(cell).ok_or(RejectReason::UnknownSexCode)?
                }
            }
        };

        let years_schooling = match take(Slot::YearsSchooling) {
            None => None,
            Some(cell) => {
                let y: f64 = cell
                    .parse()
                    .map_err(|_| RejectReason::InvalidYearsSchooling)?;
                if !y.is_finite() || y < 0.0 {
                    return Err(RejectReason::InvalidYearsSchooling);
                }
                Some(y)
            }
        };

        // Current residence must resolve to at least a major region.
        let minor_now = match take(Slot::MinorNow) {
            None => None,
            Some(cell) => Some(
                self.hierarchy
                    .lookup(Scale::Minor, cell)
                    .ok_or(RejectReason::UnknownRegion)?,
            ),
        };
        let major_now = self.resolve_major(take(Slot::MajorNow), minor_now)?;
        if major_now.is_none() {
            return Err(RejectReason::MissingRegion);
        }
        let minor_prev = match take(Slot::MinorPrev) {
            None => None,
            Some(cell) => Some(
                self.hierarchy
                    .lookup(Scale::Minor, cell)
                    .ok_or(RejectReason::UnknownRegion)?,
            ),
        };
        let major_prev = self.resolve_major(take(Slot::MajorPrev), minor_prev)?;

        let urban_now = self.decode_urban(take(Slot::UrbanNow), &self.urban_now)?;
        let urban_prev = self.decode_urban(take(Slot::UrbanPrev), &self.urban_prev)?;

        let (duration_years, duration_top_coded) = match take(Slot::Duration) {
            None => (None, false),
            Some(cell) => {
                let d: u32 = cell.parse().map_err(|_| RejectReason::InvalidDuration)?;
                if d > 200 {
                    return Err(RejectReason::InvalidDuration);
                }
                let top = self.top_code.map(|t| d >= t).unwrap_or(false);
                (Some(d.min(255) as u8), top)
            }
        };

        let reason = if !self.presence.reason {
            None
        } else {
            match take(Slot::Reason) {
                None => Some(Reason::Unknown),
                Some(cell) => {
                    if self.reason.is_empty() {
                        Some(cell.parse().map_err(|_| RejectReason::UnknownReasonCode)?)
                    } else {
                        Some(self.reason.get(cell).ok_or(RejectReason::UnknownReasonCode)?)
                    }
                }
            }
        };

        Ok(PersonRecord {
            weight,
            age,
            sex,
            education,
            years_schooling,
            minor_now,
            major_now,
            minor_prev,
            major_prev,
            urban_now,
            urban_prev,
            duration_years,
            duration_top_coded,
            reason,
        })
    }

    fn decode_education(&self, cell: &str) -> Result<Education, RejectReason> {
        if self.education.is_empty() {
            cell.parse().map_err(|_| RejectReason::UnknownEducationCode)
        } else {
            self.education
                .get(cell)
                .ok_or(RejectReason::UnknownEducationCode)
        }
    }

    fn decode_urban(
        &self,
        cell: Option<&str>,
        table: &CodeTable<UrbanStatus>,
    ) -> Result<UrbanStatus, RejectReason> {
        match cell {
            None => Ok(UrbanStatus::Unknown),
            Some(cell) => {
                if table.is_empty() {
                    match cell {
                        "urban" => Ok(UrbanStatus::Urban),
                        "rural" => Ok(UrbanStatus::Rural),
                        "unknown" => Ok(UrbanStatus::Unknown),
                        _ => Err(RejectReason::UnknownUrbanCode),
                    }
                } else {
                    table.get(cell).ok_or(RejectReason::UnknownUrbanCode)
                }
            }
        }
    }

    /// Major region from its own cell, falling back to the minor
    /// region's parent; checks nesting when both are present.
    fn resolve_major(
        &self,
        cell: Option<&str>,
        minor: Option<RegionId>,
    ) -> Result<Option<RegionId>, RejectReason> {
        let explicit = match cell {
            None => None,
            Some(code) => Some(
                self.hierarchy
                    .lookup(Scale::Major, code)
                    .ok_or(RejectReason::UnknownRegion)?,
            ),
        };
        let derived = minor.and_then(|m| self.hierarchy.major_of(m));
        match (explicit, derived) {
            (Some(e), Some(d)) if e != d => Err(RejectReason::NestingViolation),
            (Some(e), _) => Ok(Some(e)),
            (None, d) => Ok(d),
        }
    }
}

fn parse_chunk<A: Accumulate>(
    parser: &RowParser<'_>,
    bytes: &[u8],
    acc: &mut A,
    report: &mut IngestReport,
) {
    for raw in bytes.split(|&b| b == b'\n') {
        let raw = match raw.last() {
            Some(b'\r') => &raw[..raw.len() - 1],
            _ => raw,
        };
        if raw.is_empty() {
            continue;
        }
        report.rows_read += 1;
        match std::str::from_utf8(raw) {
            Ok(line) => match parser.parse_line(line) {
                Ok(rec) => {
                    report.accepted += 1;
                    acc.absorb(&rec);
                }
                Err(reason) => report.note_reject(reason),
            },
            Err(_) => report.note_reject(RejectReason::InvalidUtf8),
        }
    }
}

/// One streaming pass over a delimited input: parse rows, feed them to
/// per-chunk accumulators, merge in chunk order. Memory stays bounded
/// by `workers` chunks regardless of input size, and results do not
/// depend on the worker count.
pub fn stream_pass<R, A, F>(
    reader: R,
    schema: &Schema,
    hierarchy: &RegionHierarchy,
    workers: usize,
    make: F,
) -> Result<(A, IngestReport), IngestError>
where
    R: Read,
    A: Accumulate,
    F: Fn() -> A + Sync,
{
    let workers = workers.max(1);
    let mut reader = std::io::BufReader::with_capacity(1 << 20, reader);

    let mut header = Vec::new();
    reader.read_until(b'\n', &mut header)?;
    if header.is_empty() {
        return Err(IngestError::NoHeader);
    }
    let header_line =
        std::str::from_utf8(&header).map_err(|_| IngestError::MissingColumn("header".into()))?;
    let parser = RowParser::new(schema, hierarchy, header_line)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| IngestError::Pool(e.to_string()))?;

    let mut acc = make();
    let mut report = IngestReport::default();
    let batch_target = workers * 2;
    let mut done = false;
    while !done {
        let mut batch: Vec<Vec<u8>> = Vec::with_capacity(batch_target);
        for _ in 0..batch_target {
            let mut chunk = Vec::with_capacity(CHUNK_BYTES + 4096);
            let read = (&mut reader)
                .take(CHUNK_BYTES as u64)
                .read_to_end(&mut chunk)?;
            if read == CHUNK_BYTES {
                // Complete the trailing partial line.
                reader.read_until(b'\n', &mut chunk)?;
            }
            if chunk.is_empty() {
                done = true;
                break;
            }
            batch.push(chunk);
        }
        if batch.is_empty() {
            break;
        }
        let results: Vec<(A, IngestReport)> = pool.install(|| {
            batch
                .par_iter()
                .map(|chunk| {
                    let mut a = make();
                    let mut rep = IngestReport::default();
                    parse_chunk(&parser, chunk, &mut a, &mut rep);
                    (a, rep)
                })
                .collect()
        });
        for (a, rep) in results {
            acc.merge(a);
            report.merge(rep);
        }
    }
    Ok((acc, report))
}

/// Sequential record iterator over a delimited input. Yields parsed
/// records; rejected rows are tallied into the report available from
/// [`RecordStream::finish`].
pub struct RecordStream<'h, R: BufRead> {
    parser: RowParser<'h>,
    reader: R,
    buf: Vec<u8>,
    report: IngestReport,
    io_failed: bool,
}

impl<'h, R: BufRead> RecordStream<'h, R> {
    pub fn new(
        mut reader: R,
        schema: &Schema,
        hierarchy: &'h RegionHierarchy,
    ) -> Result<Self, IngestError> {
        let mut header = String::new();
        reader.read_line(&mut header)?;
        if header.is_empty() {
            return Err(IngestError::NoHeader);
        }
        let parser = RowParser::new(schema, hierarchy, &header)?;
        Ok(RecordStream {
            parser,
            reader,
            buf: Vec::new(),
            report: IngestReport::default(),
            io_failed: false,
        })
    }

    pub fn presence(&self) -> FieldPresence {
        self.parser.presence()
    }

    pub fn finish(self) -> IngestReport {
        self.report
    }
}

impl<R: BufRead> Iterator for RecordStream<'_, R> {
    type Item = std::io::Result<PersonRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.io_failed {
            return None;
        }
        loop {
            self.buf.clear();
            match self.reader.read_until(b'\n', &mut self.buf) {
                Err(e) => {
                    self.io_failed = true;
                    return Some(Err(e));
                }
                Ok(0) => return None,
                Ok(_) => {}
            }
            let mut end = self.buf.len();
            while end > 0 && (self.buf[end - 1] == b'\n' || self.buf[end - 1] == b'\r') {
                end -= 1;
            }
            if end == 0 {
                continue;
            }
            self.report.rows_read += 1;
            match std::str::from_utf8(&self.buf[..end]) {
                Ok(line) => match self.parser.parse_line(line) {
                    Ok(rec) => {
                        self.report.accepted += 1;
                        return Some(Ok(rec));
                    }
                    Err(reason) => self.report.note_reject(reason),
                },
                Err(_) => self.report.note_reject(RejectReason::InvalidUtf8),
            }
        }
    }
}

/// Read an entire input into memory. Convenience for tests and small
/// extracts; large files should go through [`stream_pass`].
pub fn collect_records<R: BufRead>(
    reader: R,
    schema: &Schema,
    hierarchy: &RegionHierarchy,
) -> Result<(Vec<PersonRecord>, IngestReport), IngestError> {
    let mut stream = RecordStream::new(reader, schema, hierarchy)?;
    let mut records = Vec::new();
    for rec in &mut stream {
        records.push(rec?);
    }
    Ok((records, stream.finish()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::microdata::schema::parse_schema;
    use std::io::Cursor;

    fn schema() -> Schema {
        parse_schema(
            r#"{
            "columns": {
                "weight": "wt", "age": "age", "sex": "sex",
                "education_level": "edu",
                "region_minor_now": "geo2", "region_major_now": "geo1",
                "region_minor_prev": "geo2p", "region_major_prev": "geo1p"
            },
            "codes": {
                "education_level": {"1": "lt_primary", "2": "primary", "3": "secondary", "4": "tertiary", "9": "unknown"},
                "sex": {"1": "male", "2": "female"}
            },
            "missing_values": ["."]
        }"#,
        )
        .unwrap()
    }

    fn hierarchy() -> RegionHierarchy {
        RegionHierarchy::from_reader(Cursor::new(
            "region_id,level,parent_id,area_km2,population\n\
             100,major,,5000,200000\n\
             101,major,,12000,60000\n\
             1,minor,100,2000,150000\n\
             2,minor,100,3000,50000\n\
             3,minor,101,12000,60000\n",
        ))
        .unwrap()
    }

    const HEADER: &str = "wt,age,sex,edu,geo2,geo1,geo2p,geo1p\n";

    #[test]
    fn valid_rows_accepted() {
        let h = hierarchy();
        let data = format!(
            "{HEADER}1,30,1,2,1,100,1,100\n2.5,22,2,3,2,100,3,101\n1,15,1,9,3,101,.,.\n"
        );
        let (records, report) = collect_records(Cursor::new(data), &schema(), &h).unwrap();
        assert_eq!(report.rows_read, 3);
        assert_eq!(report.accepted, 3);
        assert_eq!(report.rejected, 0);
        assert_eq!(records[0].education, Education::Primary);
        assert_eq!(records[1].weight, 2.5);
        // Missing previous residence stays unknown.
        assert_eq!(records[2].major_prev, None);
        assert_eq!(records[2].education, Education::Unknown);
    }

    #[test]
    fn negative_age_rejected_with_reason() {
        let h = hierarchy();
        let data = format!("{HEADER}1,-1,1,2,1,100,1,100\n");
        let (records, report) = collect_records(Cursor::new(data), &schema(), &h).unwrap();
        assert!(records.is_empty());
        assert_eq!(report.reject_reasons.get("age out of range"), Some(&1));
    }

    #[test]
    fn unknown_codes_rejected() {
        let h = hierarchy();
        let data = format!(
            "{HEADER}1,30,1,7,1,100,1,100\n1,30,5,2,1,100,1,100\nx,30,1,2,1,100,1,100\n1,30,1,2,99,100,1,100\n"
        );
        let (_, report) = collect_records(Cursor::new(data), &schema(), &h).unwrap();
        assert_eq!(report.rejected, 4);
        assert_eq!(report.reject_reasons.get("unknown education code"), Some(&1));
        assert_eq!(report.reject_reasons.get("unknown sex code"), Some(&1));
        assert_eq!(report.reject_reasons.get("invalid weight"), Some(&1));
        assert_eq!(report.reject_reasons.get("unknown region"), Some(&1));
    }

    #[test]
    fn nesting_violation_rejected() {
        let h = hierarchy();
        // minor 3 belongs to major 101, row claims 100.
        let data = format!("{HEADER}1,30,1,2,3,100,1,100\n");
        let (_, report) = collect_records(Cursor::new(data), &schema(), &h).unwrap();
        assert_eq!(report.reject_reasons.get("region nesting violation"), Some(&1));
    }

    #[test]
    fn major_derived_from_minor_parent() {
        let h = hierarchy();
        let s = parse_schema(
            r#"{
            "columns": {
                "age": "age", "education_level": "edu",
                "region_minor_now": "geo2", "region_minor_prev": "geo2p"
            }
        }"#,
        )
        .unwrap();
        let data = "age,edu,geo2,geo2p\n30,secondary,3,1\n";
        let (records, _) = collect_records(Cursor::new(data), &s, &h).unwrap();
        let r = &records[0];
        assert_eq!(h.region(r.major_now.unwrap()).code, "101");
        assert_eq!(h.region(r.major_prev.unwrap()).code, "100");
        assert_eq!(r.weight, 1.0);
    }

    #[test]
    fn bound_column_absent_from_header_errors() {
        let h = hierarchy();
        let data = "wt,age,edu\n1,30,2\n";
        let err = collect_records(Cursor::new(data), &schema(), &h).unwrap_err();
        assert!(matches!(err, IngestError::MissingColumn(_)));
    }

    #[test]
    fn stream_pass_matches_sequential_and_worker_counts_agree() {
        let h = hierarchy();
        let mut data = String::from(HEADER);
        for i in 0..5000 {
            let (minor, major) = match i % 3 {
                0 => (1, 100),
                1 => (2, 100),
                _ => (3, 101),
            };
            data.push_str(&format!("1,{},1,2,{},{},1,100\n", 15 + (i % 50), minor, major));
        }
        // A couple of dirty rows.
        data.push_str("1,bad,1,2,1,100,1,100\n");
        data.push_str("1,30,1,777,1,100,1,100\n");

        let (seq, seq_rep) = collect_records(Cursor::new(&data), &schema(), &h).unwrap();
        let (one, rep1) = stream_pass(Cursor::new(data.as_bytes()), &schema(), &h, 1, Vec::new).unwrap();
        let (eight, rep8) =
            stream_pass(Cursor::new(data.as_bytes()), &schema(), &h, 8, Vec::new).unwrap();
        assert_eq!(seq, one);
        assert_eq!(one, eight);
        assert_eq!(seq_rep, rep1);
        assert_eq!(rep1, rep8);
        assert_eq!(rep1.rejected, 2);
    }
}
