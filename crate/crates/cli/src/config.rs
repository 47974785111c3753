//! Flat key=value configuration files.
//!
//! One `key = value` pair per line; `#` starts a comment; blank lines are
//! ignored. Only known keys are accepted, and duplicates are rejected, so a
//! typo fails loudly instead of silently falling back to a default.
//! Precedence is: command-line flag, then config file, then built-in default.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use groce_core::{Error, Result};

/// Every key a config file may define. Parameters mirror the command-line
/// flags; `table` and `graph` supply default input paths; `threads` matches
/// the global flag.
const KNOWN_KEYS: &[&str] = &[
    "tau0",
    "sigma",
    "lambda",
    "radius",
    "top_k",
    "t",
    "tol",
    "sigma_p",
    "attach_threshold",
    "passes",
    "threads",
    "table",
    "graph",
];

#[derive(Debug, Default)]
pub struct FileConfig {
    values: HashMap<String, String>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            msg: if e.kind() == std::io::ErrorKind::NotFound {
                "file not found".to_string()
            } else {
                e.to_string()
            },
        })?;
        let mut values = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(at) => &raw[..at],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Parse {
                path: path.display().to_string(),
                line: i + 1,
                msg,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err("expected key = value".to_string()))?;
            let key = key.trim();
            let value = value.trim();
            if !KNOWN_KEYS.contains(&key) {
                return Err(err(format!(
                    "unknown key {key:?}; known keys: {}",
                    KNOWN_KEYS.join(", ")
                )));
            }
            if value.is_empty() {
                return Err(err(format!("key {key:?} has no value")));
            }
            if values.insert(key.to_string(), value.to_string()).is_some() {
                return Err(err(format!("duplicate key {key:?}")));
            }
        }
        Ok(FileConfig { values })
    }

    /// Typed lookup; a present-but-unparsable value is an error, a missing
    /// key is simply `None`.
    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        debug_assert!(KNOWN_KEYS.contains(&key));
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|_| {
                Error::Validation(format!(
                    "config key {key:?}: cannot parse {raw:?} as {}",
                    std::any::type_name::<T>()
                ))
            }),
        }
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        debug_assert!(KNOWN_KEYS.contains(&key));
        self.values.get(key).map(PathBuf::from)
    }
}

/// Flag, then config file, then default.
pub fn resolve<T: FromStr + Copy>(
    flag: Option<T>,
    cfg: &FileConfig,
    key: &str,
    default: T,
) -> Result<T> {
    if let Some(v) = flag {
        return Ok(v);
    }
    if let Some(v) = cfg.get::<T>(key)? {
        return Ok(v);
    }
    Ok(default)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load_str(text: &str) -> Result<FileConfig> {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("groce.conf");
        std::fs::write(&path, text).unwrap();
        FileConfig::load(&path)
    }

    #[test]
    fn parses_comments_blanks_and_values() {
        let cfg = load_str("# header\n\n tau0 = 0.4 # trailing\ntable = tab.bin\n").unwrap();
        assert_eq!(cfg.get::<f64>("tau0").unwrap(), Some(0.4));
        assert_eq!(cfg.path("table"), Some(PathBuf::from("tab.bin")));
        assert_eq!(cfg.get::<f64>("sigma").unwrap(), None);
    }

    #[test]
    fn rejects_malformed_lines() {
        for (text, needle) in [
            ("tau0 0.4\n", "expected key = value"),
            ("bogus = 1\n", "unknown key"),
            ("tau0 =\n", "has no value"),
            ("tau0 = 0.3\ntau0 = 0.4\n", "duplicate key"),
        ] {
            let err = load_str(text).unwrap_err().to_string();
            assert!(err.contains(needle), "{text:?} -> {err}");
            assert!(err.contains(":1:") || err.contains(":2:"), "line number: {err}");
        }
    }

    #[test]
    fn typed_lookup_rejects_wrong_types() {
        let cfg = load_str("radius = fast\n").unwrap();
        let err = cfg.get::<usize>("radius").unwrap_err().to_string();
        assert!(err.contains("cannot parse"), "{err}");
    }

    #[test]
    fn resolve_applies_precedence() {
        let cfg = load_str("tau0 = 0.45\n").unwrap();
        assert_eq!(resolve(Some(0.25), &cfg, "tau0", 0.3).unwrap(), 0.25);
        assert_eq!(resolve(None::<f64>, &cfg, "tau0", 0.3).unwrap(), 0.45);
        assert_eq!(resolve(None::<f64>, &cfg, "sigma", 0.1).unwrap(), 0.1);
    }
}
