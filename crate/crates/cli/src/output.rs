//! Staged outputs: every file of a run is built in memory, then written to a
//! temporary name and renamed into place, so a failed run leaves nothing.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Default)]
pub struct Staged {
    // relative path (forward slashes) -> contents, in insertion order
    files: Vec<(String, Vec<u8>)>,
}

pub fn to_json<T: Serialize + ?Sized>(value: &T) -> Vec<u8> {
    let mut text = serde_json::to_string_pretty(value).expect("output types serialize");
    text.push('\n');
    text.into_bytes()
}

impl Staged {
    pub fn add(&mut self, rel: impl Into<String>, bytes: impl Into<Vec<u8>>) {
        let rel = rel.into();
        self.files.retain(|(r, _)| *r != rel);
        self.files.push((rel, bytes.into()));
    }

    pub fn add_json<T: Serialize + ?Sized>(&mut self, rel: impl Into<String>, value: &T) {
        self.add(rel, to_json(value));
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.files.iter().map(|(r, _)| r.as_str())
    }

    pub fn get(&self, rel: &str) -> Option<&[u8]> {
        self.files.iter().find(|(r, _)| r == rel).map(|(_, b)| b.as_slice())
    }

    /// sha256 per staged file, keyed by relative path.
    pub fn checksums(&self) -> BTreeMap<String, String> {
        self.files
            .iter()
            .map(|(r, b)| (r.clone(), hex::encode(Sha256::digest(b))))
            .collect()
    }

    /// Write everything under `out`. All temporaries are written before any
    /// rename; on failure the temporaries are removed.
    pub fn commit(self, out: &Path) -> Result<Vec<PathBuf>, CliError> {
        let io = |p: &Path, e: std::io::Error| CliError::Runtime(format!("writing {}: {e}", p.display()));
        let mut pending: Vec<(PathBuf, PathBuf)> = Vec::with_capacity(self.files.len());
        let cleanup = |pending: &[(PathBuf, PathBuf)]| {
            for (tmp, _) in pending {
                let _ = std::fs::remove_file(tmp);
            }
        };
        for (rel, bytes) in &self.files {
            let dest = out.join(rel);
            let dir = dest.parent().unwrap_or(out).to_path_buf();
            let name = dest.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
            let written = std::fs::create_dir_all(&dir).and_then(|()| std::fs::write(&tmp, bytes));
            if let Err(e) = written {
                cleanup(&pending);
                let _ = std::fs::remove_file(&tmp);
                return Err(io(&tmp, e));
            }
            pending.push((tmp, dest));
        }
        let mut done = Vec::with_capacity(pending.len());
        for (i, (tmp, dest)) in pending.iter().enumerate() {
            if let Err(e) = std::fs::rename(tmp, dest) {
                cleanup(&pending[i..]);
                return Err(io(dest, e));
            }
            done.push(dest.clone());
        }
        Ok(done)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn commit_writes_all_and_leaves_no_temporaries() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = Staged::default();
        s.add("a.txt", "one");
        s.add("sub/b.txt", "two");
        s.add("a.txt", "three");
        let sums = s.checksums();
        assert_eq!(sums.len(), 2);
        assert_eq!(sums["a.txt"], hex::encode(Sha256::digest(b"three")));
        let written = s.commit(dir.path()).unwrap();
        assert_eq!(written.len(), 2);
        assert_eq!(std::fs::read_to_string(dir.path().join("a.txt")).unwrap(), "three");
        assert_eq!(std::fs::read_to_string(dir.path().join("sub/b.txt")).unwrap(), "two");
        let stray: Vec<_> = walk(dir.path()).into_iter().filter(|p| p.contains(".tmp-")).collect();
        assert!(stray.is_empty(), "{stray:?}");
    }

    #[test]
    fn failed_commit_leaves_nothing_new() {
        let dir = tempfile::tempdir().unwrap();
        // a file where a directory is needed makes the second write fail
        std::fs::write(dir.path().join("blocker"), "x").unwrap();
        let mut s = Staged::default();
        s.add("ok.txt", "fine");
        s.add("blocker/inner.txt", "nope");
        assert!(s.commit(dir.path()).is_err());
        let mut left = walk(dir.path());
        left.sort();
        assert_eq!(left, vec!["blocker".to_string()]);
    }

    fn walk(root: &Path) -> Vec<String> {
        let mut out = Vec::new();
        for e in std::fs::read_dir(root).unwrap() {
            let e = e.unwrap();
            let name = e.file_name().to_string_lossy().into_owned();
            if e.path().is_dir() {
                out.extend(walk(&e.path()).into_iter().map(|n| format!("{name}/{n}")));
            } else {
                out.push(name);
            }
        }
        out
    }
}
