//! Content-addressed stage cache.
//!
//! An entry lives at `<root>/<stage>/<key>/`, where the key hashes the stage
//! name, the stage's settings and the keys of its upstream entries. A
//! `manifest.json` written last lists every artifact with its SHA-256; an
//! entry whose manifest disagrees with the files or with [`CACHE_VERSION`] is
//! rejected rather than reused.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{PipelineError, Result};

pub const CACHE_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";

#[derive(Debug, Serialize, Deserialize)]
struct EntryManifest {
    cache_version: u32,
    stage: String,
    key: String,
    files: BTreeMap<String, String>,
}

#[derive(Debug, Clone)]
pub struct Entry {
    pub dir: PathBuf,
    pub key: String,
    pub hit: bool,
}

impl Entry {
    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }
}

#[derive(Debug, Clone)]
pub struct Cache {
    root: PathBuf,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let mut f = fs::File::open(path).map_err(PipelineError::io(path))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(PipelineError::io(path))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

/// Relative paths of all regular files under `dir`, sorted.
fn list_files(dir: &Path) -> Result<Vec<String>> {
    fn walk(base: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
        for e in fs::read_dir(dir).map_err(PipelineError::io(dir))? {
            let p = e.map_err(PipelineError::io(dir))?.path();
            if p.is_dir() {
                walk(base, &p, out)?;
            } else {
                let rel = p.strip_prefix(base).expect("under base");
                out.push(rel.to_string_lossy().replace('\\', "/"));
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out)?;
    out.sort();
    Ok(out)
}

/// SHA-256 over every file of a directory tree, names included.
pub fn dir_fingerprint(dir: &Path) -> Result<String> {
    let mut h = Sha256::new();
    for rel in list_files(dir)? {
        h.update(rel.as_bytes());
        h.update([0]);
        h.update(file_sha256(&dir.join(&rel))?.as_bytes());
    }
    Ok(hex::encode(h.finalize()))
}

fn hash_files(dir: &Path) -> Result<BTreeMap<String, String>> {
    use rayon::prelude::*;
    let names: Vec<String> = list_files(dir)?.into_iter().filter(|n| n != MANIFEST).collect();
    let hashes = names.par_iter().map(|n| file_sha256(&dir.join(n))).collect::<Result<Vec<_>>>()?;
    Ok(names.into_iter().zip(hashes).collect())
}

impl Cache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Key for `stage` given serializable settings and upstream keys.
    pub fn key<T: Serialize>(stage: &str, parts: &T) -> String {
        let body = serde_json::to_vec(&(CACHE_VERSION, stage, parts)).expect("serializable key parts");
        sha256_hex(&body)
    }

    pub fn entry_dir(&self, stage: &str, key: &str) -> PathBuf {
        self.root.join(stage).join(key)
    }

    /// Returns the verified entry for `(stage, key)`, running `build` in a
    /// scratch directory on a miss.
    pub fn get_or_build<F>(&self, stage: &str, key: &str, build: F) -> Result<Entry>
    where
        F: FnOnce(&Path) -> Result<()>,
    {
        let dir = self.entry_dir(stage, key);
        if dir.join(MANIFEST).is_file() {
            self.verify(stage, key, &dir)?;
            return Ok(Entry { dir, key: key.to_string(), hit: true });
        }
        let parent = self.root.join(stage);
        let scratch = parent.join(format!(".build-{key}-{}", std::process::id()));
        if scratch.exists() {
            fs::remove_dir_all(&scratch).map_err(PipelineError::io(&scratch))?;
        }
        fs::create_dir_all(&scratch).map_err(PipelineError::io(&scratch))?;
        if let Err(e) = build(&scratch) {
            let _ = fs::remove_dir_all(&scratch);
            return Err(e);
        }
        let manifest = EntryManifest {
            cache_version: CACHE_VERSION,
            stage: stage.to_string(),
            key: key.to_string(),
            files: hash_files(&scratch)?,
        };
        let mpath = scratch.join(MANIFEST);
        fs::write(&mpath, serde_json::to_vec_pretty(&manifest).expect("serializable"))
            .map_err(PipelineError::io(&mpath))?;
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(PipelineError::io(&dir))?;
        }
        fs::rename(&scratch, &dir).map_err(PipelineError::io(&dir))?;
        Ok(Entry { dir, key: key.to_string(), hit: false })
    }

    fn verify(&self, stage: &str, key: &str, dir: &Path) -> Result<()> {
        let stale = |reason: String| PipelineError::StaleCache { path: dir.to_path_buf(), reason };
        let mpath = dir.join(MANIFEST);
        let text = fs::read_to_string(&mpath).map_err(PipelineError::io(&mpath))?;
        let m: EntryManifest = serde_json::from_str(&text).map_err(|e| stale(format!("unreadable manifest: {e}")))?;
        if m.cache_version != CACHE_VERSION {
            return Err(stale(format!("cache version {} (expected {CACHE_VERSION})", m.cache_version)));
        }
        if m.stage != stage || m.key != key {
            return Err(stale(format!("manifest is for {}/{}", m.stage, m.key)));
        }
        let actual = hash_files(dir)?;
        for (name, want) in &m.files {
            match actual.get(name) {
                None => return Err(stale(format!("missing artifact `{name}`"))),
                Some(got) if got != want => return Err(stale(format!("artifact `{name}` was modified"))),
                _ => {}
            }
        }
        if let Some(extra) = actual.keys().find(|n| !m.files.contains_key(*n)) {
            return Err(stale(format!("unexpected artifact `{extra}`")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn build_ab(dir: &Path) -> Result<()> {
        fs::write(dir.join("a.csv"), "x\n1\n").unwrap();
        fs::create_dir(dir.join("sub")).unwrap();
        fs::write(dir.join("sub").join("b.bin"), [1u8, 2, 3]).unwrap();
        Ok(())
    }

    #[test]
    fn miss_then_hit() {
        let root = tempfile::tempdir().unwrap();
        let cache = Cache::new(root.path());
        let key = Cache::key("rdm", &("m", 1));
        let e = cache.get_or_build("rdm", &key, build_ab).unwrap();
        assert!(!e.hit);
        assert_eq!(fs::read(e.path("sub/b.bin")).unwrap(), [1, 2, 3]);
        let again = cache.get_or_build("rdm", &key, |_| panic!("must not rebuild")).unwrap();
        assert!(again.hit);
        assert_eq!(again.dir, e.dir);
    }

    #[test]
    fn keys_depend_on_every_part() {
        assert_ne!(Cache::key("rdm", &("m", 1)), Cache::key("rdm", &("m", 2)));
        assert_ne!(Cache::key("rdm", &("m", 1)), Cache::key("cluster", &("m", 1)));
        assert_eq!(Cache::key("rdm", &("m", 1)), Cache::key("rdm", &("m", 1)));
    }

    #[test]
    fn tampered_entries_are_rejected() {
        let root = tempfile::tempdir().unwrap();
        let cache = Cache::new(root.path());
        let key = Cache::key("s", &0);
        let e = cache.get_or_build("s", &key, build_ab).unwrap();
        fs::write(e.path("a.csv"), "x\n2\n").unwrap();
        let err = cache.get_or_build("s", &key, build_ab).unwrap_err();
        assert!(matches!(err, PipelineError::StaleCache { .. }), "{err}");
        assert_eq!(err.exit_code(), 3);

        fs::write(e.path("a.csv"), "x\n1\n").unwrap();
        cache.get_or_build("s", &key, build_ab).unwrap();
        let text = fs::read_to_string(e.path(MANIFEST)).unwrap();
        fs::write(e.path(MANIFEST), text.replace("\"cache_version\": 1", "\"cache_version\": 0")).unwrap();
        assert!(cache.get_or_build("s", &key, build_ab).unwrap_err().to_string().contains("cache version 0"));
    }

    #[test]
    fn failed_build_leaves_nothing() {
        let root = tempfile::tempdir().unwrap();
        let cache = Cache::new(root.path());
        let key = Cache::key("s", &1);
        assert!(cache.get_or_build("s", &key, |_| Err(PipelineError::Data("boom".into()))).is_err());
        assert_eq!(fs::read_dir(root.path().join("s")).unwrap().count(), 0);
        assert!(!cache.get_or_build("s", &key, build_ab).unwrap().hit);
    }

    #[test]
    fn fingerprint_sees_names_and_bytes() {
        let a = tempfile::tempdir().unwrap();
        build_ab(a.path()).unwrap();
        let f1 = dir_fingerprint(a.path()).unwrap();
        fs::rename(a.path().join("a.csv"), a.path().join("c.csv")).unwrap();
        assert_ne!(f1, dir_fingerprint(a.path()).unwrap());
    }
}
