//! Staged artifact writes: files land under temporary names and are renamed
//! into place on [`Staging::commit`]. Dropping an uncommitted stage deletes
//! everything it wrote.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

pub struct Staging {
    dir: PathBuf,
    pending: Vec<(PathBuf, PathBuf)>,
    committed: bool,
}

impl Staging {
    pub fn new(dir: &Path) -> io::Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            pending: Vec::new(),
            committed: false,
        })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> io::Result<()> {
        let target = self.dir.join(name);
        let tmp = self.dir.join(format!(".{name}.partial"));
        fs::write(&tmp, bytes)?;
        self.pending.retain(|(_, t)| *t != target);
        self.pending.push((tmp, target));
        Ok(())
    }

    /// Renames every staged file into place and returns the final paths.
    pub fn commit(mut self) -> io::Result<Vec<PathBuf>> {
        let mut done = Vec::with_capacity(self.pending.len());
        for (tmp, target) in &self.pending {
            fs::rename(tmp, target)?;
            done.push(target.clone());
        }
        self.committed = true;
        Ok(done)
    }
}

impl Drop for Staging {
    fn drop(&mut self) {
        if !self.committed {
            for (tmp, _) in &self.pending {
                let _ = fs::remove_file(tmp);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn commit_moves_files_into_place() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = Staging::new(dir.path()).unwrap();
        s.write("a.txt", b"one").unwrap();
        s.write("a.txt", b"two").unwrap();
        assert!(!dir.path().join("a.txt").exists());
        let paths = s.commit().unwrap();
        assert_eq!(paths, vec![dir.path().join("a.txt")]);
        assert_eq!(fs::read(dir.path().join("a.txt")).unwrap(), b"two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn dropped_stage_leaves_nothing() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut s = Staging::new(dir.path()).unwrap();
            s.write("a.txt", b"x").unwrap();
            s.write("b.txt", b"y").unwrap();
        }
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
    }
}
