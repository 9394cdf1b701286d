//! `CANW` weight files.
//!
//! Layout (little-endian): `"CANW"`, `u32` version, `u32` tensor count, then
//! per tensor a `u16` name length, the UTF-8 name and a `T32` tensor record.
//! An optional trailer `"META"`, `u32` length, UTF-8 `key=value` lines
//! carries model metadata such as the variant kind and width scale.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{read_tensor, write_tensor, Scalar, Tensor};

pub const WEIGHTS_MAGIC: [u8; 4] = *b"CANW";
pub const WEIGHTS_VERSION: u32 = 1;
const META_MAGIC: [u8; 4] = *b"META";

#[derive(Debug, Clone, PartialEq)]
pub struct WeightFile<T: Scalar = f32> {
    pub tensors: Vec<(String, Tensor<T>)>,
    pub metadata: BTreeMap<String, String>,
}

impl<T: Scalar> WeightFile<T> {
    pub fn from_store(store: &ParamStore<T>) -> Self {
        WeightFile {
            tensors: store
                .named_tensors()
                .map(|(n, t)| (n.to_string(), t.clone().with_requires_grad(false)))
                .collect(),
            metadata: BTreeMap::new(),
        }
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(&WEIGHTS_MAGIC)?;
        w.write_all(&WEIGHTS_VERSION.to_le_bytes())?;
        w.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for (name, t) in &self.tensors {
            let len = u16::try_from(name.len())
                .map_err(|_| Error::InvalidArgument(format!("tensor name too long: {name}")))?;
            w.write_all(&len.to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            write_tensor(w, t)?;
        }
        if !self.metadata.is_empty() {
            let text: String = self.metadata.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
            w.write_all(&META_MAGIC)?;
            w.write_all(&(text.len() as u32).to_le_bytes())?;
            w.write_all(text.as_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        use crate::tensor::serialize_read_exact as read_exact;
        let mut magic = [0u8; 4];
        read_exact(r, &mut magic, "weight file header")?;
        if magic != WEIGHTS_MAGIC {
            return Err(Error::BadMagic {
                expected: "CANW".into(),
                found: String::from_utf8_lossy(&magic).into_owned(),
            });
        }
        let mut word = [0u8; 4];
        read_exact(r, &mut word, "weight file version")?;
        let version = u32::from_le_bytes(word);
        if version != WEIGHTS_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        read_exact(r, &mut word, "weight file tensor count")?;
        let count = u32::from_le_bytes(word);
        let mut tensors = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let mut len = [0u8; 2];
            read_exact(r, &mut len, "tensor name length")?;
            let mut name = vec![0u8; u16::from_le_bytes(len) as usize];
            read_exact(r, &mut name, "tensor name")?;
            let name = String::from_utf8(name).map_err(|_| Error::Malformed("tensor name is not UTF-8".into()))?;
            tensors.push((name, read_tensor(r)?));
        }
        let mut metadata = BTreeMap::new();
        let mut tag = Vec::with_capacity(4);
        r.take(4).read_to_end(&mut tag)?;
        if tag.as_slice() == META_MAGIC {
            read_exact(r, &mut word, "metadata length")?;
            let mut text = vec![0u8; u32::from_le_bytes(word) as usize];
            read_exact(r, &mut text, "metadata")?;
            let text = String::from_utf8(text).map_err(|_| Error::Malformed("metadata is not UTF-8".into()))?;
            for line in text.lines() {
                let (k, v) = line
                    .split_once('=')
                    .ok_or_else(|| Error::Malformed(format!("metadata line `{line}`")))?;
                metadata.insert(k.to_string(), v.to_string());
            }
        } else if !tag.is_empty() {
            return Err(Error::Malformed("unexpected bytes after tensors".into()));
        }
        Ok(WeightFile { tensors, metadata })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        Self::read_from(&mut r)
    }
}
