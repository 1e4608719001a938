use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::CliError;

/// Files written by one command. Each file goes through a temporary name and
/// a rename; [`OutputSet::discard`] removes everything written so far.
#[derive(Debug)]
pub struct OutputSet {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl OutputSet {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: dir.into(),
            written: Vec::new(),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    pub fn write(&mut self, name: &str, contents: &[u8]) -> Result<PathBuf, CliError> {
        let io =
            |e: std::io::Error, what: &Path| CliError::Config(format!("{}: {e}", what.display()));
        fs::create_dir_all(&self.dir).map_err(|e| io(e, &self.dir))?;
        let target = self.dir.join(name);
        let tmp = self.dir.join(format!(".{name}.tmp{}", std::process::id()));
        let result = fs::File::create(&tmp)
            .and_then(|mut f| f.write_all(contents).and_then(|_| f.sync_all()))
            .and_then(|_| fs::rename(&tmp, &target));
        if let Err(e) = result {
            let _ = fs::remove_file(&tmp);
            return Err(io(e, &target));
        }
        self.written.push(target.clone());
        Ok(target)
    }

    pub fn discard(&mut self) {
        for p in self.written.drain(..) {
            let _ = fs::remove_file(p);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn write_then_discard() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutputSet::new(dir.path().join("nested"));
        let p = out.write("a.csv", b"t\n0\n").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"t\n0\n");
        out.discard();
        assert!(!p.exists());
        assert_eq!(fs::read_dir(out.dir()).unwrap().count(), 0);
    }
}
