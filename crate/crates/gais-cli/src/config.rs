//! Optional JSON config file merged underneath command-line flags.

use std::path::{Path, PathBuf};

use gais::{GaisError, Result};
use serde_json::{Map, Value};

/// Flat JSON object supplying defaults for any flag, keyed by the flag name
/// with dashes replaced by underscores (`"heads_in": 8`). Explicit flags
/// always win over file values.
pub struct FileConfig(Map<String, Value>);

impl FileConfig {
    pub fn empty() -> Self {
        FileConfig(Map::new())
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::empty());
        };
        let text = std::fs::read_to_string(path).map_err(|source| GaisError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let value: Value = serde_json::from_str(&text).map_err(|e| {
            GaisError::InvalidConfig(format!("config file {}: {e}", path.display()))
        })?;
        match value {
            Value::Object(map) => Ok(FileConfig(map)),
            _ => Err(GaisError::InvalidConfig(format!(
                "config file {} must hold a JSON object",
                path.display()
            ))),
        }
    }

    fn lookup<T>(&self, key: &str, convert: impl FnOnce(&Value) -> Option<T>) -> Result<Option<T>> {
        match self.0.get(key) {
            None => Ok(None),
            Some(value) => match convert(value) {
                Some(v) => Ok(Some(v)),
                None => Err(GaisError::InvalidConfig(format!(
                    "config key {key:?} has the wrong type"
                ))),
            },
        }
    }

    pub fn string(&self, key: &str) -> Result<Option<String>> {
        self.lookup(key, |v| v.as_str().map(str::to_string))
    }

    pub fn path(&self, key: &str) -> Result<Option<PathBuf>> {
        Ok(self.string(key)?.map(PathBuf::from))
    }

    pub fn u64(&self, key: &str) -> Result<Option<u64>> {
        self.lookup(key, Value::as_u64)
    }

    pub fn usize(&self, key: &str) -> Result<Option<usize>> {
        Ok(self.u64(key)?.map(|v| v as usize))
    }

    pub fn f64(&self, key: &str) -> Result<Option<f64>> {
        self.lookup(key, Value::as_f64)
    }

    pub fn flag(&self, key: &str) -> Result<bool> {
        Ok(self.lookup(key, Value::as_bool)?.unwrap_or(false))
    }
}

/// Flag value, then config value, then the built-in default.
pub fn pick<T>(flag: Option<T>, file: Result<Option<T>>, default: T) -> Result<T> {
    Ok(flag.or(file?).unwrap_or(default))
}

/// Flag value, then config value; absent is fine.
pub fn pick_opt<T>(flag: Option<T>, file: Result<Option<T>>) -> Result<Option<T>> {
    Ok(flag.or(file?))
}

/// Flag value, then config value; absent is an error.
pub fn pick_required<T>(flag: Option<T>, file: Result<Option<T>>, name: &str) -> Result<T> {
    flag.or(file?)
        .ok_or_else(|| GaisError::InvalidConfig(format!("missing required option --{name}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn config_from(text: &str) -> FileConfig {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        file.write_all(text.as_bytes()).unwrap();
        FileConfig::load(Some(file.path())).unwrap()
    }

    #[test]
    fn absent_path_yields_empty_config() {
        let cfg = FileConfig::load(None).unwrap();
        assert_eq!(cfg.string("method").unwrap(), None);
        assert!(!cfg.flag("no_timing").unwrap());
    }

    #[test]
    fn values_parse_by_type() {
        let cfg = config_from(r#"{"seed": 7, "lr": 0.01, "method": "cnn", "no_timing": true}"#);
        assert_eq!(cfg.u64("seed").unwrap(), Some(7));
        assert_eq!(cfg.f64("lr").unwrap(), Some(0.01));
        assert_eq!(cfg.string("method").unwrap(), Some("cnn".into()));
        assert!(cfg.flag("no_timing").unwrap());
        assert_eq!(cfg.usize("window").unwrap(), None);
    }

    #[test]
    fn wrong_type_is_rejected() {
        let cfg = config_from(r#"{"seed": "seven"}"#);
        assert!(matches!(
            cfg.u64("seed"),
            Err(GaisError::InvalidConfig(_))
        ));
    }

    #[test]
    fn non_object_file_is_rejected() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        file.write_all(b"[1, 2, 3]").unwrap();
        assert!(matches!(
            FileConfig::load(Some(file.path())),
            Err(GaisError::InvalidConfig(_))
        ));
    }

    #[test]
    fn flags_override_file_values() {
        let cfg = config_from(r#"{"seed": 7}"#);
        assert_eq!(pick(Some(3u64), cfg.u64("seed"), 0).unwrap(), 3);
        assert_eq!(pick(None, cfg.u64("seed"), 0).unwrap(), 7);
        assert_eq!(pick(None, cfg.u64("window"), 42).unwrap(), 42);
    }

    #[test]
    fn required_reports_the_flag_name() {
        let cfg = FileConfig::empty();
        let err = pick_required::<u64>(None, cfg.u64("budget"), "budget").unwrap_err();
        assert!(err.to_string().contains("--budget"));
    }
}
