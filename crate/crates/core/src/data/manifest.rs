use std::path::{Path, PathBuf};

use super::{load_image, save_image, ImagePair};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Reads a dataset manifest: one `id x1_path x2_path` line per pair,
/// whitespace separated, with paths relative to the manifest's directory.
/// Blank lines and lines starting with `#` are skipped.
pub fn load_manifest<T: Scalar>(path: impl AsRef<Path>) -> Result<Vec<ImagePair<T>>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut pairs = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [id, p1, p2] = fields[..] else {
            return Err(Error::Manifest {
                line: k + 1,
                message: format!("expected `id x1_path x2_path`, found {} fields", fields.len()),
            });
        };
        let wrap = |e: Error| Error::Manifest {
            line: k + 1,
            message: e.to_string(),
        };
        let x1 = load_image(base.join(p1)).map_err(wrap)?;
        let x2 = load_image(base.join(p2)).map_err(wrap)?;
        pairs.push(ImagePair::new(id, x1, x2).map_err(wrap)?);
    }
    if pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(pairs)
}

/// Writes every pair as two PGM files plus `manifest.txt` into `dir`,
/// returning the manifest path.
pub fn write_manifest<T: Scalar>(dir: impl AsRef<Path>, pairs: &[ImagePair<T>]) -> Result<PathBuf> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut text = String::new();
    for pair in pairs {
        if pair.id.is_empty() || pair.id.contains(char::is_whitespace) {
            return Err(Error::InvalidConfig(format!("pair id {:?} must be a non-empty word", pair.id)));
        }
        let (n1, n2) = (format!("{}_x1.pgm", pair.id), format!("{}_x2.pgm", pair.id));
        save_image(&pair.x1, dir.join(&n1))?;
        save_image(&pair.x2, dir.join(&n2))?;
        text.push_str(&format!("{} {n1} {n2}\n", pair.id));
    }
    let path = dir.join("manifest.txt");
    std::fs::write(&path, text)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_pairs, SyntheticSpec};

    #[test]
    fn round_trip_preserves_quantized_pairs() {
        let dir = tempfile::tempdir().unwrap();
        let pairs: Vec<ImagePair<f64>> = synth_pairs(&SyntheticSpec::new(32, 7), 3).unwrap();
        let path = write_manifest(dir.path(), &pairs).unwrap();
        let back: Vec<ImagePair<f64>> = load_manifest(&path).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in pairs.iter().zip(&back) {
            assert_eq!(a.id, b.id);
            let q = |v: f64| (v * 255.0).round() / 255.0;
            assert_eq!(a.x1.map(q), b.x1);
            assert_eq!(a.x2.map(q), b.x2);
        }
    }

    #[test]
    fn malformed_line_reports_its_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.txt");
        std::fs::write(&path, "# header\n\nonly two\n").unwrap();
        match load_manifest::<f64>(&path) {
            Err(Error::Manifest { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_manifest_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.txt");
        std::fs::write(&path, "# nothing\n").unwrap();
        assert!(matches!(load_manifest::<f64>(&path), Err(Error::EmptyDataset)));
    }
}
