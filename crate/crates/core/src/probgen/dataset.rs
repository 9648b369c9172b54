use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{generate, GenSpec, ProblemClass};
use crate::error::{Error, Result};
use crate::io::save_problem;
use crate::oracle::{oracle_solve, ORACLE_MAX_M, ORACLE_MAX_N};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub class: ProblemClass,
    pub seed: u64,
    pub name: String,
    pub n: usize,
    pub m: usize,
    pub p: usize,
    /// Relative to the manifest's directory.
    pub path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_path: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub problems: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn resolve(&self, manifest_dir: &Path, entry: &ManifestEntry) -> PathBuf {
        manifest_dir.join(&entry.path)
    }
}

/// Generates every spec into `dir`, plus `manifest.json`. Small instances
/// (within the oracle's limits) also get a reference solution file.
pub fn write_dataset(dir: impl AsRef<Path>, specs: &[GenSpec]) -> Result<DatasetManifest> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let problems = specs
        .par_iter()
        .map(|spec| -> Result<ManifestEntry> {
            let prob = generate(spec)?;
            let name = spec.name();
            let file = format!("{name}.json");
            save_problem(&prob, dir.join(&file))?;
            let (n, m, p) = prob.dims();
            let oracle_path = if n <= ORACLE_MAX_N && m <= ORACLE_MAX_M {
                let sol = oracle_solve(&prob)?;
                let f = format!("{name}.oracle.json");
                std::fs::write(dir.join(&f), serde_json::to_string(&sol)?)?;
                Some(f)
            } else {
                None
            };
            Ok(ManifestEntry { class: spec.class, seed: spec.seed, name, n, m, p, path: file, oracle_path })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = DatasetManifest { problems };
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    if manifest.problems.is_empty() {
        return Err(Error::Empty("no problems requested".into()));
    }
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::load_problem;

    #[test]
    fn writes_problems_manifest_and_small_oracles() {
        let dir = tempfile::tempdir().unwrap();
        let specs = vec![
            GenSpec::new(ProblemClass::RandomQP, 1).with_size("n", 6).with_size("m", 4),
            GenSpec::new(ProblemClass::Svm, 2),
        ];
        let man = write_dataset(dir.path(), &specs).unwrap();
        assert_eq!(man.problems.len(), 2);
        assert!(man.problems[0].oracle_path.is_some());
        assert!(man.problems[1].oracle_path.is_none());
        let back = DatasetManifest::load(dir.path().join("manifest.json")).unwrap();
        assert_eq!(back, man);
        let prob = load_problem(back.resolve(dir.path(), &back.problems[1])).unwrap();
        assert_eq!(prob.dims(), (210, 400, 0));
    }
}
