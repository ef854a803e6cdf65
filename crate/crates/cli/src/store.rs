//! On-disk service state: raw profiles plus the promise ledger.
//!
//! Layout under the state directory:
//! `profiles/<device-id>.json`, `non-local.json` (device ids) and
//! `promises.json` (the fulfilment ledger).

use std::collections::BTreeSet;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use mudscope_core::topology::PromiseLedger;
use mudscope_core::{parse_mud_file, ConnectivityGraph, GraphOptions};

pub struct Store {
    root: PathBuf,
}

fn write_atomic(path: &Path, contents: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents)?;
    fs::rename(tmp, path)
}

impl Store {
    pub fn open(root: PathBuf) -> io::Result<Self> {
        fs::create_dir_all(root.join("profiles"))?;
        Ok(Store { root })
    }

    fn profile_path(&self, id: &str) -> PathBuf {
        self.root.join("profiles").join(format!("{id}.json"))
    }

    pub fn save_profile(&self, id: &str, text: &str, local: bool) -> io::Result<()> {
        write_atomic(&self.profile_path(id), text.as_bytes())?;
        let mut non_local = self.non_local();
        let changed = if local { non_local.remove(id) } else { non_local.insert(id.to_string()) };
        if changed {
            self.save_non_local(&non_local)?;
        }
        Ok(())
    }

    pub fn delete_profile(&self, id: &str) -> io::Result<()> {
        match fs::remove_file(self.profile_path(id)) {
            Err(e) if e.kind() != io::ErrorKind::NotFound => return Err(e),
            _ => {}
        }
        let mut non_local = self.non_local();
        if non_local.remove(id) {
            self.save_non_local(&non_local)?;
        }
        Ok(())
    }

    fn non_local(&self) -> BTreeSet<String> {
        fs::read_to_string(self.root.join("non-local.json"))
            .ok()
            .and_then(|t| serde_json::from_str(&t).ok())
            .unwrap_or_default()
    }

    fn save_non_local(&self, ids: &BTreeSet<String>) -> io::Result<()> {
        write_atomic(&self.root.join("non-local.json"), serde_json::to_string_pretty(ids)?.as_bytes())
    }

    pub fn save_ledger(&self, ledger: &PromiseLedger) -> io::Result<()> {
        write_atomic(&self.root.join("promises.json"), serde_json::to_string_pretty(ledger)?.as_bytes())
    }

    /// Rebuilds the graph from disk. Files that no longer parse are skipped
    /// with a warning.
    pub fn load(&self) -> io::Result<ConnectivityGraph> {
        let mut graph = ConnectivityGraph::new(GraphOptions::default());
        let non_local = self.non_local();
        let mut paths: Vec<PathBuf> = fs::read_dir(self.root.join("profiles"))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        for path in paths {
            let text = fs::read_to_string(&path)?;
            match parse_mud_file(&text) {
                Ok((mut profile, _)) => {
                    profile.local = !non_local.contains(&profile.id);
                    if let Err(e) = graph.add_profile(profile) {
                        tracing::warn!("skipping {}: {e}", path.display());
                    }
                }
                Err(report) => tracing::warn!("skipping {}: {} errors", path.display(), report.errors().count()),
            }
        }
        if let Ok(text) = fs::read_to_string(self.root.join("promises.json")) {
            match serde_json::from_str::<PromiseLedger>(&text) {
                Ok(ledger) => {
                    for (id, e) in graph.apply_ledger(&ledger) {
                        tracing::warn!("ledger entry {id} not replayed: {e}");
                    }
                }
                Err(e) => tracing::warn!("ignoring unreadable promise ledger: {e}"),
            }
        }
        Ok(graph)
    }
}
