pub mod build_kg;
pub mod classify;
pub mod data;
pub mod export;
pub mod query;
pub mod train;

use std::path::{Path, PathBuf};

use batik_core::Error;

/// Advisory write lock: created exclusively next to the store while a
/// writer holds it. Readers do not take it (single writer, many readers).
pub struct StoreLock {
    path: PathBuf,
}

impl StoreLock {
    pub fn acquire(store_path: &Path) -> Result<Self, Error> {
        let mut os = store_path.as_os_str().to_os_string();
        os.push(".lock");
        let path = PathBuf::from(os);
        match std::fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
        {
            Ok(_) => Ok(StoreLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Config(format!(
                "store is locked by another writer ({} exists)",
                path.display()
            ))),
            Err(e) => Err(Error::io(path.display().to_string(), e)),
        }
    }
}

impl Drop for StoreLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}
