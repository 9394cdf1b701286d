use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{GazeVector, NormalizationResult};

pub const GZDS_MAGIC: [u8; 4] = *b"GZDS";
pub const GZDS_VERSION: u32 = 1;

/// magic, version, count, face H/W/C, eye H/W (all `u32`), subjects (`u16`).
const HEADER_LEN: usize = 4 + 4 * 7 + 2;

/// Image sizes shared by every record of a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Geometry {
    /// `(height, width, channels)`.
    pub face: (usize, usize, usize),
    /// `(height, width)`, one channel.
    pub eye: (usize, usize),
}

impl Geometry {
    pub fn face_len(&self) -> usize {
        self.face.0 * self.face.1 * self.face.2
    }

    pub fn eye_len(&self) -> usize {
        self.eye.0 * self.eye.1
    }

    /// Bytes of one serialized record.
    pub fn record_len(&self) -> usize {
        2 + 4 + 12 + self.face_len() + 2 * self.eye_len()
    }

    fn describe(&self) -> String {
        format!(
            "face {}x{}x{}, eyes {}x{}",
            self.face.0, self.face.1, self.face.2, self.eye.0, self.eye.1
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub subject_id: u16,
    pub sample_id: u32,
    /// Unit gaze direction in the normalized camera frame.
    pub gaze: [f32; 3],
    /// Row-major `H × W × C`.
    pub face: Vec<u8>,
    pub left_eye: Vec<u8>,
    pub right_eye: Vec<u8>,
}

impl SampleRecord {
    pub fn gaze_vector(&self) -> GazeVector {
        GazeVector::new(self.gaze[0] as f64, self.gaze[1] as f64, self.gaze[2] as f64)
    }

    /// Packs a normalized capture. The face keeps its channel count; the eye
    /// crops must be single-channel.
    pub fn from_normalized(n: &NormalizationResult, subject_id: u16, sample_id: u32) -> Result<Self> {
        let gaze = n
            .gaze
            .ok_or_else(|| Error::InvalidArgument("normalized sample has no gaze label".into()))?
            .normalized()?;
        if n.left_eye.channels != 1 || n.right_eye.channels != 1 {
            return Err(Error::InvalidArgument("eye crops must be grayscale".into()));
        }
        Ok(SampleRecord {
            subject_id,
            sample_id,
            gaze: gaze.to_array().map(|v| v as f32),
            face: n.face.data.clone(),
            left_eye: n.left_eye.data.clone(),
            right_eye: n.right_eye.data.clone(),
        })
    }

    fn validate(&self, geometry: &Geometry) -> Result<()> {
        let sizes = [self.face.len(), self.left_eye.len(), self.right_eye.len()];
        if sizes != [geometry.face_len(), geometry.eye_len(), geometry.eye_len()] {
            return Err(Error::GeometryMismatch {
                expected: geometry.describe(),
                actual: format!(
                    "record {} with {} face bytes and {}/{} eye bytes",
                    self.sample_id, sizes[0], sizes[1], sizes[2]
                ),
            });
        }
        let norm = self.gaze.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
        if norm.is_nan() || (norm - 1.0).abs() > 1e-4 {
            return Err(Error::Malformed(format!("record {} gaze norm {norm}", self.sample_id)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetHeader {
    pub version: u32,
    pub count: u32,
    pub geometry: Geometry,
    pub subjects: u16,
}

/// In-memory sample set with a fixed image geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    geometry: Geometry,
    records: Vec<SampleRecord>,
}

impl Dataset {
    pub fn new(geometry: Geometry) -> Self {
        Dataset {
            geometry,
            records: Vec::new(),
        }
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn records(&self) -> &[SampleRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Appends a record after checking it against the dataset geometry.
    pub fn push(&mut self, record: SampleRecord) -> Result<()> {
        record.validate(&self.geometry)?;
        self.records.push(record);
        Ok(())
    }

    /// Distinct subject ids in ascending order.
    pub fn subjects(&self) -> Vec<u16> {
        let mut s: Vec<u16> = self.records.iter().map(|r| r.subject_id).collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    pub fn header(&self) -> DatasetHeader {
        DatasetHeader {
            version: GZDS_VERSION,
            count: self.records.len() as u32,
            geometry: self.geometry,
            subjects: self.subjects().len() as u16,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let g = self.geometry;
        let h = self.header();
        let mut out = Vec::with_capacity(HEADER_LEN + self.records.len() * g.record_len());
        out.extend_from_slice(&GZDS_MAGIC);
        for v in [h.version, h.count, g.face.0 as u32, g.face.1 as u32, g.face.2 as u32, g.eye.0 as u32, g.eye.1 as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&h.subjects.to_le_bytes());
        for r in &self.records {
            out.extend_from_slice(&r.subject_id.to_le_bytes());
            out.extend_from_slice(&r.sample_id.to_le_bytes());
            for v in r.gaze {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out.extend_from_slice(&r.face);
            out.extend_from_slice(&r.left_eye);
            out.extend_from_slice(&r.right_eye);
        }
        out
    }

    /// Parses a complete file image, validating every record.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let truncated = |expected: usize| Error::Truncated {
            what: "GZDS file".into(),
            expected: expected as u64,
            actual: bytes.len() as u64,
        };
        if bytes.len() < 4 {
            return Err(truncated(HEADER_LEN));
        }
        if bytes[..4] != GZDS_MAGIC {
            return Err(Error::BadMagic {
                expected: "GZDS".into(),
                found: String::from_utf8_lossy(&bytes[..4]).into_owned(),
            });
        }
        if bytes.len() < HEADER_LEN {
            return Err(truncated(HEADER_LEN));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
        let version = word(0);
        if version != GZDS_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let count = word(1) as usize;
        let geometry = Geometry {
            face: (word(2) as usize, word(3) as usize, word(4) as usize),
            eye: (word(5) as usize, word(6) as usize),
        };
        if geometry.face_len() == 0 || geometry.eye_len() == 0 {
            return Err(Error::Malformed(format!("empty image geometry ({})", geometry.describe())));
        }
        let subjects = u16::from_le_bytes([bytes[HEADER_LEN - 2], bytes[HEADER_LEN - 1]]);
        let expected = HEADER_LEN + count * geometry.record_len();
        if bytes.len() < expected {
            return Err(truncated(expected));
        }
        if bytes.len() > expected {
            return Err(Error::Malformed(format!(
                "{} trailing bytes after {count} records",
                bytes.len() - expected
            )));
        }
        let mut ds = Dataset::new(geometry);
        ds.records.reserve(count);
        let (fl, el) = (geometry.face_len(), geometry.eye_len());
        for chunk in bytes[HEADER_LEN..].chunks_exact(geometry.record_len()) {
            let f32_at = |i: usize| f32::from_le_bytes(chunk[6 + 4 * i..10 + 4 * i].try_into().unwrap());
            let body = &chunk[18..];
            ds.push(SampleRecord {
                subject_id: u16::from_le_bytes([chunk[0], chunk[1]]),
                sample_id: u32::from_le_bytes(chunk[2..6].try_into().unwrap()),
                gaze: [f32_at(0), f32_at(1), f32_at(2)],
                face: body[..fl].to_vec(),
                left_eye: body[fl..fl + el].to_vec(),
                right_eye: body[fl + el..].to_vec(),
            })?;
        }
        let found = ds.subjects().len();
        if found != subjects as usize {
            return Err(Error::Malformed(format!("header declares {subjects} subjects, records hold {found}")));
        }
        Ok(ds)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        f.sync_all()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
