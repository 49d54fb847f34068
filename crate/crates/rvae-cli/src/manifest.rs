//! Run manifests: a JSON record written atomically next to every command's
//! outputs (command line, config snapshot, seed, checkpoint content hash,
//! timestamp).

use anyhow::Context as _;
use sha2::Digest as _;
use std::path::Path;

#[derive(serde::Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub command: String,
    pub seed: u64,
    pub config: serde_json::Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint_sha256: Option<String>,
    pub created_unix: u64,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, config: serde_json::Value) -> Self {
        RunManifest {
            tool: format!("rvae {}", env!("CARGO_PKG_VERSION")),
            command: command.to_string(),
            seed,
            config,
            checkpoint_sha256: None,
            created_unix: timestamp(),
        }
    }

    pub fn with_checkpoint(mut self, dir: &Path) -> anyhow::Result<Self> {
        self.checkpoint_sha256 = Some(checkpoint_hash(dir)?);
        Ok(self)
    }

    /// Write via a temp file + rename in the target directory.
    pub fn write(&self, path: &Path) -> anyhow::Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, json.as_bytes())
            .with_context(|| format!("writing {}", tmp.display()))?;
        std::fs::rename(&tmp, path)
            .with_context(|| format!("renaming into {}", path.display()))?;
        Ok(())
    }
}

/// SHA-256 over the checkpoint files (manifest.json, then weights.bin).
pub fn checkpoint_hash(dir: &Path) -> anyhow::Result<String> {
    let mut hasher = sha2::Sha256::new();
    for name in ["manifest.json", "weights.bin"] {
        let bytes = std::fs::read(dir.join(name))
            .with_context(|| format!("reading {}/{name}", dir.display()))?;
        hasher.update(&bytes);
    }
    Ok(format!("{:x}", hasher.finalize()))
}

/// Wall-clock seconds, overridable through SOURCE_DATE_EPOCH for
/// byte-reproducible runs.
pub fn timestamp() -> u64 {
    if let Ok(v) = std::env::var("SOURCE_DATE_EPOCH") {
        if let Ok(parsed) = v.parse() {
            return parsed;
        }
    }
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}
