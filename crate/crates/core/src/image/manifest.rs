//! Dataset manifests: tab-separated entries grouping images (and optional
//! masks) into named datasets.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{io_err, Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub dataset_id: u32,
    pub image_path: PathBuf,
    pub mask_path: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub dataset_names: BTreeMap<u32, String>,
}

impl DatasetManifest {
    /// Distinct dataset ids, ascending.
    pub fn dataset_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.entries.iter().map(|e| e.dataset_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn entries_for(&self, dataset_id: u32) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.dataset_id == dataset_id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn manifest_err(path: &Path, line: usize, detail: impl Into<String>) -> Error {
    Error::Manifest {
        path: path.to_path_buf(),
        line,
        detail: detail.into(),
    }
}

/// Parses and validates a manifest. Lines are either comments (`#`), blank,
/// a preamble `dataset <id> <name>`, or an entry
/// `<dataset_id>\t<image_path>[\t<mask_path>]`. Relative paths resolve
/// against the manifest's directory; every referenced file must exist and
/// every referenced dataset id must be declared.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let base = path.parent().unwrap_or(Path::new("."));

    let mut manifest = DatasetManifest::default();
    let mut entry_lines = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        if let Some(rest) = line.strip_prefix("dataset ") {
            let mut parts = rest.splitn(2, char::is_whitespace);
            let id: u32 = parts
                .next()
                .unwrap_or("")
                .parse()
                .map_err(|_| manifest_err(path, line_no, "dataset preamble needs a numeric id"))?;
            let name = parts.next().map(str::trim).unwrap_or("");
            if name.is_empty() {
                return Err(manifest_err(path, line_no, "dataset preamble needs a name"));
            }
            manifest.dataset_names.insert(id, name.to_string());
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 2 || fields.len() > 3 {
            return Err(manifest_err(
                path,
                line_no,
                format!("expected 2 or 3 tab-separated fields, got {}", fields.len()),
            ));
        }
        let dataset_id: u32 = fields[0].trim().parse().map_err(|_| {
            manifest_err(path, line_no, format!("bad dataset id {:?}", fields[0]))
        })?;
        if fields[1].is_empty() {
            return Err(manifest_err(path, line_no, "empty image path"));
        }
        let resolve = |p: &str| {
            let pb = PathBuf::from(p);
            if pb.is_absolute() {
                pb
            } else {
                base.join(pb)
            }
        };
        let mask_path = match fields.get(2) {
            Some(m) if !m.is_empty() => Some(resolve(m)),
            _ => None,
        };
        manifest.entries.push(ManifestEntry {
            dataset_id,
            image_path: resolve(fields[1]),
            mask_path,
        });
        entry_lines.push(line_no);
    }

    for (entry, &line_no) in manifest.entries.iter().zip(&entry_lines) {
        if !manifest.dataset_names.contains_key(&entry.dataset_id) {
            return Err(manifest_err(
                path,
                line_no,
                format!("dataset id {} has no `dataset` preamble line", entry.dataset_id),
            ));
        }
        if !entry.image_path.is_file() {
            return Err(manifest_err(
                path,
                line_no,
                format!("image file not found: {}", entry.image_path.display()),
            ));
        }
        if let Some(mask) = &entry.mask_path {
            if !mask.is_file() {
                return Err(manifest_err(
                    path,
                    line_no,
                    format!("mask file not found: {}", mask.display()),
                ));
            }
        }
    }
    Ok(manifest)
}

/// Writes a manifest; paths under the manifest's directory come out
/// relative, others absolute.
pub fn write_manifest(manifest: &DatasetManifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (id, name) in &manifest.dataset_names {
        writeln!(out, "dataset {id} {name}").expect("vec write");
    }
    let rel = |p: &Path| p.strip_prefix(base).unwrap_or(p).display().to_string();
    for e in &manifest.entries {
        match &e.mask_path {
            Some(m) => writeln!(out, "{}\t{}\t{}", e.dataset_id, rel(&e.image_path), rel(m)),
            None => writeln!(out, "{}\t{}", e.dataset_id, rel(&e.image_path)),
        }
        .expect("vec write");
    }
    fs::write(path, out).map_err(io_err(path))
}
