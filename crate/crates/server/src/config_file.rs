//! Loading the declarative TOML configuration.

use std::path::{Path, PathBuf};

use stagegate_core::EngineConfig;
use thiserror::Error;

pub const ENV_LISTEN: &str = "STAGEGATE_LISTEN";
pub const ENV_STORAGE: &str = "STAGEGATE_STORAGE";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("parse error at line {line}: {message}")]
    ParseError { line: usize, message: String },
    #[error("invalid configuration: {}", .0.join("; "))]
    ValidationError(Vec<String>),
}

impl ConfigError {
    pub fn code(&self) -> &'static str {
        match self {
            ConfigError::Read { .. } => "ConfigUnreadable",
            ConfigError::ParseError { .. } => "ParseError",
            ConfigError::ValidationError(_) => "ValidationError",
        }
    }
}

/// Parses configuration text. Does not consult the environment.
pub fn parse_config(text: &str) -> Result<EngineConfig, ConfigError> {
    let config: EngineConfig = toml::from_str(text).map_err(|e| {
        let line = e
            .span()
            .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
            .unwrap_or(1);
        ConfigError::ParseError {
            line,
            message: e.message().to_string(),
        }
    })?;
    let violations = config.violations();
    if !violations.is_empty() {
        return Err(ConfigError::ValidationError(violations));
    }
    Ok(config)
}

/// Reads, parses and validates `path`, then applies environment overrides
/// for the listen address and storage path. A relative storage path is
/// resolved against the directory holding the file.
pub fn load_config(path: &Path) -> Result<EngineConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    let mut config = parse_config(&text)?;
    apply_overrides(&mut config, |k| std::env::var(k).ok());
    if let Some(p) = &config.storage_path {
        if p.is_relative() {
            let base = path.parent().unwrap_or(Path::new("."));
            config.storage_path = Some(base.join(p));
        }
    }
    let violations = config.violations();
    if !violations.is_empty() {
        return Err(ConfigError::ValidationError(violations));
    }
    Ok(config)
}

pub fn apply_overrides(config: &mut EngineConfig, env: impl Fn(&str) -> Option<String>) {
    if let Some(addr) = env(ENV_LISTEN).filter(|s| !s.is_empty()) {
        config.listen_address = addr;
    }
    if let Some(dir) = env(ENV_STORAGE).filter(|s| !s.is_empty()) {
        config.storage_path = Some(PathBuf::from(dir));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SHIPPED: &str = include_str!("../../../config/stagegate.toml");

    #[test]
    fn shipped_config_is_valid() {
        let c = parse_config(SHIPPED).unwrap();
        assert!(c.principals.len() >= 3);
        assert!(!c.drift_rules.is_empty());
    }

    #[test]
    fn parse_error_reports_line() {
        let err = parse_config("listen_address = \"127.0.0.1:1\"\n\n[gates\nquorum = 1\n").unwrap_err();
        match err {
            ConfigError::ParseError { line, .. } => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_key_is_a_parse_error() {
        assert!(matches!(
            parse_config("listen_adress = \"x\"\n"),
            Err(ConfigError::ParseError { line: 1, .. })
        ));
    }

    #[test]
    fn g2_without_mandatory_items_is_rejected() {
        let text = r#"
[[gates.checklists.G2]]
item_id = "lab_tests"
description = "Lab tests"
mandatory = false
"#;
        match parse_config(text).unwrap_err() {
            ConfigError::ValidationError(v) => assert!(v.iter().any(|m| m.contains("G2")), "{v:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_accountable_role_at_vi_is_rejected() {
        let mut c = EngineConfig::default();
        c.matrix.0.get_mut(&"VI".parse().unwrap()).unwrap().accountable = None;
        let text = toml::to_string(&c).unwrap();
        match parse_config(&text).unwrap_err() {
            ConfigError::ValidationError(v) => assert!(v.iter().any(|m| m.contains("VI")), "{v:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn removing_quality_inspector_from_update_gate_is_rejected() {
        let mut c = EngineConfig::default();
        let x = c.matrix.0.get_mut(&"X".parse().unwrap()).unwrap();
        assert!(x.responsible.iter().any(|r| r.as_str() == "QualityInspector"));
        x.responsible.retain(|r| r.as_str() != "QualityInspector");
        let text = toml::to_string(&c).unwrap();
        assert!(matches!(parse_config(&text), Err(ConfigError::ValidationError(_))));
    }

    #[test]
    fn default_config_round_trips_through_toml() {
        let c = EngineConfig::default();
        let back = parse_config(&toml::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn environment_overrides() {
        let mut c = EngineConfig::default();
        apply_overrides(&mut c, |k| match k {
            ENV_LISTEN => Some("0.0.0.0:9000".into()),
            ENV_STORAGE => Some("/var/lib/stagegate".into()),
            _ => None,
        });
        assert_eq!(c.listen_address, "0.0.0.0:9000");
        assert_eq!(c.storage_path.as_deref(), Some(Path::new("/var/lib/stagegate")));
    }

    #[test]
    fn relative_storage_resolves_next_to_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("engine.toml");
        std::fs::write(&path, "storage_path = \"state\"\n").unwrap();
        let c = load_config(&path).unwrap();
        if std::env::var(ENV_STORAGE).is_err() {
            assert_eq!(c.storage_path, Some(dir.path().join("state")));
        }
    }
}
