use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Class {
    #[serde(rename = "PMW")]
    Pmw,
    #[serde(rename = "not-PMW")]
    NotPmw,
}

impl Class {
    pub const ALL: [Class; 2] = [Class::Pmw, Class::NotPmw];

    pub fn name(self) -> &'static str {
        match self {
            Class::Pmw => "PMW",
            Class::NotPmw => "not-PMW",
        }
    }

    /// Training target: 1 for the positive class.
    pub fn label(self) -> f32 {
        match self {
            Class::Pmw => 1.0,
            Class::NotPmw => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TypeTag {
    Pmw,
    Person,
    Ship,
    Illustration,
    Tattoo,
    Velella,
    Jellyfish,
    Random,
}

impl TypeTag {
    pub const ALL: [TypeTag; 8] = [
        TypeTag::Pmw,
        TypeTag::Person,
        TypeTag::Ship,
        TypeTag::Illustration,
        TypeTag::Tattoo,
        TypeTag::Velella,
        TypeTag::Jellyfish,
        TypeTag::Random,
    ];

    /// The seven image types that make up the negative class.
    pub const NEGATIVE: [TypeTag; 7] = [
        TypeTag::Person,
        TypeTag::Ship,
        TypeTag::Illustration,
        TypeTag::Tattoo,
        TypeTag::Velella,
        TypeTag::Jellyfish,
        TypeTag::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TypeTag::Pmw => "pmw",
            TypeTag::Person => "person",
            TypeTag::Ship => "ship",
            TypeTag::Illustration => "illustration",
            TypeTag::Tattoo => "tattoo",
            TypeTag::Velella => "velella",
            TypeTag::Jellyfish => "jellyfish",
            TypeTag::Random => "random",
        }
    }

    pub fn class(self) -> Class {
        if self == TypeTag::Pmw {
            Class::Pmw
        } else {
            Class::NotPmw
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Instagram,
    Inaturalist,
    Bing,
    Other,
}

impl Source {
    pub const ALL: [Source; 4] = [Source::Instagram, Source::Inaturalist, Source::Bing, Source::Other];

    pub fn name(self) -> &'static str {
        match self {
            Source::Instagram => "instagram",
            Source::Inaturalist => "inaturalist",
            Source::Bing => "bing",
            Source::Other => "other",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
    Unassigned,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Train, Split::Val, Split::Test, Split::Unassigned];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Unassigned => "unassigned",
        }
    }
}

macro_rules! name_impls {
    ($($t:ty),*) => {$(
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }

        impl FromStr for $t {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                <$t>::ALL
                    .into_iter()
                    .find(|v| v.name().eq_ignore_ascii_case(s))
                    .ok_or_else(|| Error::Data(format!("unknown {} `{s}`", stringify!($t))))
            }
        }
    )*};
}

name_impls!(Class, TypeTag, Source, Split);

/// 64-bit content hash, serialized as 16 lowercase hex digits so that JSON
/// readers without 64-bit integers keep it intact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ContentHash(pub u64);

impl fmt::Display for ContentHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

impl FromStr for ContentHash {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let s = s.strip_prefix("0x").unwrap_or(s);
        u64::from_str_radix(s, 16)
            .map(ContentHash)
            .map_err(|_| Error::Data(format!("invalid content hash `{s}`")))
    }
}

impl Serialize for ContentHash {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for ContentHash {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub image_path: String,
    pub class: Class,
    pub type_tag: TypeTag,
    pub source: Source,
    pub split: Split,
    pub content_hash: ContentHash,
}

impl SampleRecord {
    pub fn new(image_path: impl Into<String>, type_tag: TypeTag, source: Source, content_hash: u64) -> Self {
        SampleRecord {
            image_path: image_path.into(),
            class: type_tag.class(),
            type_tag,
            source,
            split: Split::Unassigned,
            content_hash: ContentHash(content_hash),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_path.is_empty() {
            return Err(Error::Data("record with empty image_path".into()));
        }
        if (self.class == Class::Pmw) != (self.type_tag == TypeTag::Pmw) {
            return Err(Error::Data(format!(
                "{}: class {} is inconsistent with type {}",
                self.image_path, self.class, self.type_tag
            )));
        }
        Ok(())
    }

    /// Stratification key, e.g. `not-PMW/velella`.
    pub fn stratum(&self) -> String {
        format!("{}/{}", self.class, self.type_tag)
    }
}

/// Ordered collection of records plus free-form provenance notes. Stored as
/// JSON lines (one record per line); notes and the split seed go to a
/// `<name>.meta.json` sidecar.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SampleManifest {
    pub records: Vec<SampleRecord>,
    pub notes: Vec<String>,
    pub split_seed: Option<u64>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct ManifestMeta {
    notes: Vec<String>,
    split_seed: Option<u64>,
}

fn meta_path(path: &Path) -> PathBuf {
    let mut name = path.file_stem().map(|s| s.to_os_string()).unwrap_or_default();
    name.push(".meta.json");
    path.with_file_name(name)
}

impl SampleManifest {
    pub fn new(records: Vec<SampleRecord>) -> Self {
        SampleManifest {
            records,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn extend(&mut self, other: SampleManifest) {
        self.records.extend(other.records);
        self.notes.extend(other.notes);
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let r: SampleRecord = serde_json::from_str(line)
                .map_err(|e| Error::Data(format!("manifest line {}: {e}", i + 1)))?;
            r.validate()
                .map_err(|e| Error::Data(format!("manifest line {}: {e}", i + 1)))?;
            records.push(r);
        }
        Ok(SampleManifest::new(records))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_jsonl()?.as_bytes()).map_err(|e| Error::io(path, e))?;
        let meta = ManifestMeta {
            notes: self.notes.clone(),
            split_seed: self.split_seed,
        };
        let mp = meta_path(path);
        fs::write(&mp, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&mp, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut text = String::new();
        for line in BufReader::new(f).lines() {
            text.push_str(&line.map_err(|e| Error::io(path, e))?);
            text.push('\n');
        }
        let mut m = Self::from_jsonl(&text)?;
        let mp = meta_path(path);
        if let Ok(meta) = fs::read_to_string(&mp) {
            let meta: ManifestMeta = serde_json::from_str(&meta)?;
            m.notes = meta.notes;
            m.split_seed = meta.split_seed;
        }
        Ok(m)
    }

    pub fn in_split(&self, split: Split) -> impl Iterator<Item = &SampleRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }
}

/// Resolves a record path relative to the manifest's directory.
pub fn resolve_path(base: &Path, image_path: &str) -> PathBuf {
    let p = Path::new(image_path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}
