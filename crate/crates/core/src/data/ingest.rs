//! Building manifest fragments from image directories and iNaturalist exports.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};

use super::image::decode_any;
use super::record::{Class, ContentHash, SampleManifest, SampleRecord, Source, TypeTag};
use crate::error::{Error, Result};
use crate::rng::hash64;

/// Files that could not be ingested, with the reason.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub ingested: usize,
    pub skipped: Vec<(PathBuf, String)>,
}

fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    entries.sort();
    for p in entries {
        let hidden = p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with('.'));
        if hidden {
            continue;
        }
        if p.is_dir() {
            walk(&p, out)?;
        } else {
            out.push(p);
        }
    }
    Ok(())
}

/// One record per decodable file under `dir` (recursively, sorted by path).
/// Undecodable files are skipped with a warning and listed in the summary.
pub fn ingest_directory(
    dir: &Path,
    class: Class,
    type_tag: TypeTag,
    source: Source,
) -> Result<(SampleManifest, IngestSummary)> {
    if type_tag.class() != class {
        return Err(Error::Data(format!("type {type_tag} does not belong to class {class}")));
    }
    let mut files = Vec::new();
    walk(dir, &mut files)?;
    let mut records = Vec::new();
    let mut summary = IngestSummary::default();
    for path in files {
        let checked = fs::read(&path)
            .map_err(|e| e.to_string())
            .and_then(|bytes| decode_any(&path, &bytes).map(|_| bytes).map_err(|e| e.to_string()));
        match checked {
            Ok(bytes) => {
                records.push(SampleRecord::new(path.to_string_lossy(), type_tag, source, hash64(&bytes)));
            }
            Err(reason) => {
                warn!("skipping {}: {reason}", path.display());
                summary.skipped.push((path, reason));
            }
        }
    }
    summary.ingested = records.len();
    Ok((SampleManifest::new(records), summary))
}

/// Maps taxon names to image types. Matching is case-insensitive; a `*`
/// pattern catches every taxon not matched by an exact entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaxonMap {
    pub entries: Vec<(String, TypeTag)>,
}

impl Default for TaxonMap {
    fn default() -> Self {
        TaxonMap {
            entries: vec![
                ("Physalia physalis".into(), TypeTag::Pmw),
                ("Velella velella".into(), TypeTag::Velella),
                ("*".into(), TypeTag::Jellyfish),
            ],
        }
    }
}

impl TaxonMap {
    pub fn lookup(&self, taxon: &str) -> Option<TypeTag> {
        let taxon = taxon.trim();
        self.entries
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(taxon))
            .or_else(|| self.entries.iter().find(|(k, _)| k == "*"))
            .map(|(_, t)| *t)
    }

    /// Reads a `taxon,class,type_tag` CSV. The class column is checked
    /// against the type.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, 0, e))?;
        let cols = Columns::new(path, rdr.headers().map_err(|e| csv_err(path, 1, e))?);
        let taxon = cols.require(&["taxon"])?;
        let class = cols.require(&["class"])?;
        let type_tag = cols.require(&["type_tag"])?;
        let mut entries = Vec::new();
        for row in rdr.records() {
            let row = row.map_err(|e| csv_err(path, 0, e))?;
            let line = line_of(&row);
            let field = |i: usize| row.get(i).unwrap_or("").trim();
            let bad = |reason: String| Error::Csv {
                path: path.to_path_buf(),
                line,
                reason,
            };
            let t: TypeTag = field(type_tag).parse().map_err(|e: Error| bad(e.to_string()))?;
            let c: Class = field(class).parse().map_err(|e: Error| bad(e.to_string()))?;
            if t.class() != c {
                return Err(bad(format!("type {t} does not belong to class {c}")));
            }
            if field(taxon).is_empty() {
                return Err(bad("empty taxon".into()));
            }
            entries.push((field(taxon).to_string(), t));
        }
        Ok(TaxonMap { entries })
    }
}

fn line_of(row: &csv::StringRecord) -> u64 {
    row.position().map_or(0, |p| p.line())
}

fn csv_err(path: &Path, line: u64, e: csv::Error) -> Error {
    let line = e.position().map_or(line, |p| p.line());
    Error::Csv {
        path: path.to_path_buf(),
        line,
        reason: e.to_string(),
    }
}

struct Columns<'a> {
    path: &'a Path,
    names: Vec<String>,
}

impl<'a> Columns<'a> {
    fn new(path: &'a Path, headers: &csv::StringRecord) -> Self {
        Columns {
            path,
            names: headers.iter().map(|h| h.trim().to_ascii_lowercase()).collect(),
        }
    }

    fn find(&self, aliases: &[&str]) -> Option<usize> {
        aliases.iter().find_map(|a| self.names.iter().position(|n| n == a))
    }

    fn require(&self, aliases: &[&str]) -> Result<usize> {
        self.find(aliases).ok_or_else(|| Error::Csv {
            path: self.path.to_path_buf(),
            line: 1,
            reason: format!("missing column `{}` (accepted names: {})", aliases[0], aliases.join(", ")),
        })
    }
}

const TAXON_COLUMNS: [&str; 3] = ["scientific_name", "taxon_name", "taxon"];
const PATH_COLUMNS: [&str; 3] = ["local_path", "path", "file"];
const URL_COLUMNS: [&str; 2] = ["image_url", "url"];

/// Parses an iNaturalist-style export. Required columns: a taxon name
/// (`scientific_name`, `taxon_name` or `taxon`) and an image reference
/// (`local_path`/`path`/`file` or `image_url`/`url`). Local paths resolve
/// against the CSV's directory; the content hash covers the file bytes when
/// the file exists and the reference string otherwise. Rows whose taxon the
/// map does not cover are skipped.
pub fn ingest_inaturalist_csv(path: &Path, map: &TaxonMap) -> Result<(SampleManifest, IngestSummary)> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, 0, e))?;
    let cols = Columns::new(path, rdr.headers().map_err(|e| csv_err(path, 1, e))?);
    let taxon_col = cols.require(&TAXON_COLUMNS)?;
    let local_col = cols.find(&PATH_COLUMNS);
    let url_col = cols.find(&URL_COLUMNS);
    if local_col.is_none() && url_col.is_none() {
        cols.require(&["image_url", "local_path", "path", "file", "url"])?;
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let mut records = Vec::new();
    let mut summary = IngestSummary::default();
    for row in rdr.records() {
        let row = row.map_err(|e| csv_err(path, 0, e))?;
        let line = line_of(&row);
        let get = |c: Option<usize>| c.and_then(|i| row.get(i)).map(str::trim).filter(|s| !s.is_empty());
        let taxon = get(Some(taxon_col)).ok_or_else(|| Error::Csv {
            path: path.to_path_buf(),
            line,
            reason: "empty taxon name".into(),
        })?;
        let reference = get(local_col).or(get(url_col)).ok_or_else(|| Error::Csv {
            path: path.to_path_buf(),
            line,
            reason: "row has neither a local path nor an image URL".into(),
        })?;
        let Some(type_tag) = map.lookup(taxon) else {
            let reason = format!("line {line}: taxon `{taxon}` is not mapped");
            warn!("{}: {reason}", path.display());
            summary.skipped.push((PathBuf::from(reference), reason));
            continue;
        };
        let local = get(local_col).map(|p| super::record::resolve_path(base, p));
        let hash = match local.as_deref().map(fs::read) {
            Some(Ok(bytes)) => hash64(&bytes),
            _ => hash64(reference.as_bytes()),
        };
        let image_path = match &local {
            Some(p) => p.to_string_lossy().into_owned(),
            None => reference.to_string(),
        };
        records.push(SampleRecord::new(image_path, type_tag, Source::Inaturalist, hash));
    }
    summary.ingested = records.len();
    Ok((SampleManifest::new(records), summary))
}

/// Drops records whose content hash was already seen, keeping the first
/// occurrence. Returns the number removed.
pub fn dedupe(manifest: &SampleManifest) -> (SampleManifest, usize) {
    let mut seen = HashSet::new();
    let mut out = manifest.clone();
    out.records.retain(|r| seen.insert(r.content_hash));
    let removed = manifest.len() - out.len();
    (out, removed)
}

/// Reads an exclude list: one hex content hash per line, `#` comments.
pub fn read_exclude_list(path: &Path) -> Result<BTreeSet<ContentHash>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let h = line.parse().map_err(|e: Error| Error::Csv {
            path: path.to_path_buf(),
            line: i as u64 + 1,
            reason: e.to_string(),
        })?;
        out.insert(h);
    }
    Ok(out)
}

/// Removes excluded hashes; returns the number removed.
pub fn apply_exclude(manifest: &SampleManifest, exclude: &BTreeSet<ContentHash>) -> (SampleManifest, usize) {
    let mut out = manifest.clone();
    out.records.retain(|r| !exclude.contains(&r.content_hash));
    let removed = manifest.len() - out.len();
    (out, removed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::image::{write_ppm, Rgb8};

    fn ppm(dir: &Path, name: &str, shade: u8) {
        let img = Rgb8 {
            width: 2,
            height: 2,
            pixels: vec![shade; 12],
        };
        write_ppm(&dir.join(name), &img).unwrap();
    }

    #[test]
    fn directory_ingestion() {
        let dir = tempfile::tempdir().unwrap();
        let (m, s) = ingest_directory(dir.path(), Class::NotPmw, TypeTag::Ship, Source::Bing).unwrap();
        assert!(m.is_empty() && s.skipped.is_empty());

        for i in 0..5 {
            ppm(dir.path(), &format!("{i}.ppm"), i * 10);
        }
        ppm(dir.path(), "copy.ppm", 0);
        fs::write(dir.path().join("notes.txt"), "not an image").unwrap();
        let (m, s) = ingest_directory(dir.path(), Class::NotPmw, TypeTag::Ship, Source::Bing).unwrap();
        assert_eq!(m.len(), 6);
        assert_eq!(s.skipped.len(), 1);
        assert!(m.records.iter().all(|r| r.type_tag == TypeTag::Ship && r.source == Source::Bing));
        let copy = m.records.iter().find(|r| r.image_path.ends_with("copy.ppm")).unwrap();
        let orig = m.records.iter().find(|r| r.image_path.ends_with("0.ppm")).unwrap();
        assert_eq!(copy.content_hash, orig.content_hash);

        let (d, removed) = dedupe(&m);
        assert_eq!(removed, 1);
        assert!(d.records[0].image_path.ends_with("0.ppm"));
        assert_eq!(dedupe(&d).1, 0);

        assert!(ingest_directory(dir.path(), Class::Pmw, TypeTag::Ship, Source::Bing).is_err());
    }

    #[test]
    fn inaturalist_csv() {
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("export.csv");
        fs::write(
            &csv,
            "id,scientific_name,image_url\n1,Physalia physalis,https://x/1.jpg\n2,Velella velella,https://x/2.jpg\n3,Aurelia aurita,https://x/3.jpg\n",
        )
        .unwrap();
        let (m, _) = ingest_inaturalist_csv(&csv, &TaxonMap::default()).unwrap();
        let tags: Vec<_> = m.records.iter().map(|r| (r.class, r.type_tag)).collect();
        assert_eq!(
            tags,
            vec![
                (Class::Pmw, TypeTag::Pmw),
                (Class::NotPmw, TypeTag::Velella),
                (Class::NotPmw, TypeTag::Jellyfish)
            ]
        );

        fs::write(&csv, "id,image_url\n1,https://x/1.jpg\n").unwrap();
        let err = ingest_inaturalist_csv(&csv, &TaxonMap::default()).unwrap_err();
        assert!(err.to_string().contains("scientific_name"), "{err}");

        fs::write(&csv, "scientific_name,image_url\nPhysalia physalis,u1\nVelella velella\n").unwrap();
        let err = ingest_inaturalist_csv(&csv, &TaxonMap::default()).unwrap_err();
        assert!(matches!(err, Error::Csv { line: 3, .. }), "{err}");
    }

    #[test]
    fn exclude_list() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("exclude.txt");
        fs::write(&p, "# bad crops\n0000000000000002\n0x3 # dup\n").unwrap();
        let ex = read_exclude_list(&p).unwrap();
        let m = SampleManifest::new((1..=4).map(|h| SampleRecord::new(format!("{h}"), TypeTag::Pmw, Source::Other, h)).collect());
        let (out, removed) = apply_exclude(&m, &ex);
        assert_eq!(removed, 2);
        assert_eq!(out.len(), 2);
    }
}
