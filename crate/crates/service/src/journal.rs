//! Append-only JSON-lines journal, one file per series.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{ServiceError, ServiceResult};
use crate::state::Event;

const SUFFIX: &str = "jsonl";

#[derive(Debug, Clone)]
pub struct Journal {
    dir: PathBuf,
}

impl Journal {
    pub fn open(data_dir: &Path) -> ServiceResult<Self> {
        let dir = data_dir.join("series");
        fs::create_dir_all(&dir).map_err(|e| ServiceError::io(&dir, e))?;
        Ok(Self { dir })
    }

    fn path(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.{SUFFIX}"))
    }

    /// Writes one event as a single line and syncs it before returning.
    pub fn append(&self, id: &str, event: &Event) -> ServiceResult<()> {
        let path = self.path(id);
        let mut line =
            serde_json::to_vec(event).map_err(|e| ServiceError::Journal(e.to_string()))?;
        line.push(b'\n');
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| ServiceError::io(&path, e))?;
        f.write_all(&line).map_err(|e| ServiceError::io(&path, e))?;
        f.sync_data().map_err(|e| ServiceError::io(&path, e))
    }

    /// All journals in id order. A final line without its newline is the
    /// trace of an interrupted write and is dropped.
    pub fn read_all(&self) -> ServiceResult<Vec<(String, Vec<Event>)>> {
        let mut out = Vec::new();
        let entries = fs::read_dir(&self.dir).map_err(|e| ServiceError::io(&self.dir, e))?;
        let mut paths: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().and_then(|x| x.to_str()) == Some(SUFFIX))
            .collect();
        paths.sort();
        for path in paths {
            let id = path
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| {
                    ServiceError::Journal(format!("bad journal name {}", path.display()))
                })?
                .to_string();
            let text = fs::read_to_string(&path).map_err(|e| ServiceError::io(&path, e))?;
            let complete = match text.rfind('\n') {
                Some(end) => &text[..end],
                None => "",
            };
            let mut events = Vec::new();
            for (n, line) in complete
                .lines()
                .enumerate()
                .filter(|(_, l)| !l.trim().is_empty())
            {
                let event = serde_json::from_str(line).map_err(|e| {
                    ServiceError::Journal(format!("{}:{}: {e}", path.display(), n + 1))
                })?;
                events.push(event);
            }
            if !events.is_empty() {
                out.push((id, events));
            }
        }
        Ok(out)
    }
}
