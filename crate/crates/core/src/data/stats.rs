use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::record::{Class, SampleManifest, Source, Split, TypeTag};

/// Record counts along each manifest dimension. Every known category is
/// present, with zero when absent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub total: usize,
    pub by_class: BTreeMap<String, usize>,
    pub by_type: BTreeMap<String, usize>,
    pub by_source: BTreeMap<String, usize>,
    pub by_split: BTreeMap<String, usize>,
    /// `(source, type)` counts, as in a source breakdown table.
    pub by_source_type: BTreeMap<String, usize>,
}

fn zeros<I: IntoIterator<Item = S>, S: ToString>(keys: I) -> BTreeMap<String, usize> {
    keys.into_iter().map(|k| (k.to_string(), 0)).collect()
}

pub fn dataset_stats(manifest: &SampleManifest) -> DatasetStats {
    let mut s = DatasetStats {
        total: manifest.len(),
        by_class: zeros(Class::ALL),
        by_type: zeros(TypeTag::ALL),
        by_source: zeros(Source::ALL),
        by_split: zeros(Split::ALL),
        by_source_type: BTreeMap::new(),
    };
    for r in &manifest.records {
        *s.by_class.entry(r.class.to_string()).or_default() += 1;
        *s.by_type.entry(r.type_tag.to_string()).or_default() += 1;
        *s.by_source.entry(r.source.to_string()).or_default() += 1;
        *s.by_split.entry(r.split.to_string()).or_default() += 1;
        *s.by_source_type.entry(format!("{}/{}", r.source, r.type_tag)).or_default() += 1;
    }
    s
}

impl DatasetStats {
    pub fn count(&self, type_tag: TypeTag) -> usize {
        self.by_type[type_tag.name()]
    }

    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let sections = [
            ("class", &self.by_class),
            ("type", &self.by_type),
            ("source", &self.by_source),
            ("split", &self.by_split),
            ("source/type", &self.by_source_type),
        ];
        let width = sections
            .iter()
            .flat_map(|(_, m)| m.keys().map(String::len))
            .max()
            .unwrap_or(0)
            .max(5);
        for (title, map) in sections {
            if map.is_empty() {
                continue;
            }
            let _ = writeln!(out, "{title}");
            for (k, v) in map {
                let _ = writeln!(out, "  {k:<width$}  {v:>7}");
            }
        }
        let _ = writeln!(out, "{:<w$}  {:>7}", "total", self.total, w = width + 2);
        out
    }
}
