//! Document schema, JSON-lines corpus ingestion and the segment to partition plan.

use std::fs::File;
use std::io::{self, BufRead, BufReader, Read};
use std::path::Path;

use flate2::read::MultiGzDecoder;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DocError {
    #[error("malformed JSON: {0}")]
    MalformedJson(String),
    #[error("missing field `{0}`")]
    MissingField(&'static str),
    #[error("field `{0}` has the wrong type")]
    InvalidField(&'static str),
    #[error("segment must be a non-negative integer, got {0}")]
    InvalidSegment(i64),
    #[error("line {line}: {source}")]
    Line {
        line: usize,
        #[source]
        source: Box<DocError>,
    },
    #[error("io error: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PartitionError {
    #[error("invalid partition arguments: {0}")]
    InvalidArgs(String),
    #[error("segment {segment} outside 0..{num_segments}")]
    OutOfRange { segment: u32, num_segments: u32 },
}

/// The unit of ingestion, indexing and storage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub segment: u32,
    pub url: String,
    pub title: String,
    pub body: String,
}

impl Document {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("document serializes")
    }
}

fn string_field(obj: &Map<String, Value>, name: &'static str) -> Result<String, DocError> {
    match obj.get(name) {
        None => Err(DocError::MissingField(name)),
        Some(Value::String(s)) => Ok(s.clone()),
        Some(_) => Err(DocError::InvalidField(name)),
    }
}

/// Parses one corpus record. Unknown fields are ignored; `url` and `title`
/// may be empty but must be present.
pub fn parse_document(line: &str) -> Result<Document, DocError> {
    let value: Value =
        serde_json::from_str(line).map_err(|e| DocError::MalformedJson(e.to_string()))?;
    let Value::Object(obj) = value else {
        return Err(DocError::MalformedJson("record is not a JSON object".into()));
    };
    let id = string_field(&obj, "id")?;
    if id.is_empty() {
        return Err(DocError::InvalidField("id"));
    }
    let segment = match obj.get("segment") {
        None => return Err(DocError::MissingField("segment")),
        Some(v) => match (v.as_i64(), v.as_u64()) {
            (_, Some(u)) => u32::try_from(u).map_err(|_| DocError::InvalidField("segment"))?,
            (Some(neg), None) => return Err(DocError::InvalidSegment(neg)),
            _ => return Err(DocError::InvalidField("segment")),
        },
    };
    Ok(Document {
        id,
        segment,
        url: string_field(&obj, "url")?,
        title: string_field(&obj, "title")?,
        body: string_field(&obj, "body")?,
    })
}

/// Opens a corpus file, transparently decompressing when the name ends in `.gz`.
pub fn open_corpus(path: &Path) -> io::Result<Box<dyn BufRead + Send>> {
    let file = File::open(path)?;
    let gz = path.extension().is_some_and(|ext| ext == "gz");
    let reader: Box<dyn Read + Send> = if gz {
        Box::new(MultiGzDecoder::new(file))
    } else {
        Box::new(file)
    };
    Ok(Box::new(BufReader::new(reader)))
}

/// Streams documents from JSON-lines input. Blank lines are skipped; errors
/// carry the 1-based line number.
pub fn read_documents<R: BufRead>(reader: R) -> impl Iterator<Item = Result<Document, DocError>> {
    reader
        .lines()
        .enumerate()
        .filter_map(|(i, line)| match line {
            Err(e) => Some(Err(DocError::Io(e))),
            Ok(l) if l.trim().is_empty() => None,
            Ok(l) => Some(parse_document(&l).map_err(|e| DocError::Line {
                line: i + 1,
                source: Box::new(e),
            })),
        })
}

pub fn read_corpus(path: &Path) -> Result<Vec<Document>, DocError> {
    read_documents(open_corpus(path)?).collect()
}

/// Contiguous, inclusive segment ranges, one per partition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionPlan {
    num_segments: u32,
    ranges: Vec<(u32, u32)>,
}

impl PartitionPlan {
    /// Splits `num_segments` into `num_partitions` contiguous ranges. The
    /// leading `num_segments % num_partitions` partitions take one extra
    /// segment, so (47, 4) gives 12/12/12/11.
    pub fn new(num_segments: u32, num_partitions: u32) -> Result<Self, PartitionError> {
        if num_segments == 0 || num_partitions == 0 {
            return Err(PartitionError::InvalidArgs(
                "num_segments and num_partitions must be positive".into(),
            ));
        }
        if num_partitions > num_segments {
            return Err(PartitionError::InvalidArgs(format!(
                "{num_partitions} partitions exceed {num_segments} segments"
            )));
        }
        let base = num_segments / num_partitions;
        let extra = num_segments % num_partitions;
        let mut ranges = Vec::with_capacity(num_partitions as usize);
        let mut first = 0;
        for p in 0..num_partitions {
            let len = base + u32::from(p < extra);
            ranges.push((first, first + len - 1));
            first += len;
        }
        Ok(Self {
            num_segments,
            ranges,
        })
    }

    pub fn num_segments(&self) -> u32 {
        self.num_segments
    }

    pub fn num_partitions(&self) -> usize {
        self.ranges.len()
    }

    pub fn ranges(&self) -> &[(u32, u32)] {
        &self.ranges
    }

    pub fn assign(&self, segment: u32) -> Result<usize, PartitionError> {
        if segment >= self.num_segments {
            return Err(PartitionError::OutOfRange {
                segment,
                num_segments: self.num_segments,
            });
        }
        // ranges are ascending by last segment
        Ok(self.ranges.partition_point(|&(_, last)| last < segment))
    }
}

pub fn make_partition_plan(
    num_segments: u32,
    num_partitions: u32,
) -> Result<PartitionPlan, PartitionError> {
    PartitionPlan::new(num_segments, num_partitions)
}

pub fn assign_partition(segment: u32, plan: &PartitionPlan) -> Result<usize, PartitionError> {
    plan.assign(segment)
}
