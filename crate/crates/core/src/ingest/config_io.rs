use std::path::Path;

use serde::de::DeserializeOwned;

use crate::error::{Error, Result};
use crate::roipool::SarfeConfig;

pub(crate) fn parse_toml<T: DeserializeOwned>(text: &str, path: &Path) -> Result<T> {
    toml::from_str(text).map_err(|e| {
        let line = e
            .span()
            .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
            .unwrap_or(0);
        Error::Parse {
            path: path.to_path_buf(),
            line,
            reason: e.message().to_owned(),
        }
    })
}

/// Parses and validates a config. Missing keys take their defaults;
/// unknown keys are rejected.
pub fn parse_config(text: &str, path: &Path) -> Result<SarfeConfig> {
    let cfg: SarfeConfig = parse_toml(text, path)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<SarfeConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text, path)
}

pub fn config_to_string(cfg: &SarfeConfig) -> String {
    toml::to_string(cfg).expect("config serializes")
}

pub fn save_config(cfg: &SarfeConfig, path: &Path) -> Result<()> {
    std::fs::write(path, config_to_string(cfg)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = parse_config("", Path::new("c.toml")).unwrap();
        assert_eq!(c, SarfeConfig::default());
    }

    #[test]
    fn unknown_key_rejected_with_line() {
        let err = parse_config("grid_resolution = 6\nbogus = 1\n", Path::new("c.toml")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bogus") && msg.contains("c.toml:2"), "{msg}");
    }

    #[test]
    fn invariant_violation_names_field() {
        let text = "[[sources]]\nname = \"a\"\nradii = [1.6, 0.4]\n";
        let err = parse_config(text, Path::new("c.toml")).unwrap_err();
        assert!(matches!(&err, Error::Config { field, .. } if field == "sources[0].radii"), "{err}");
        let err = parse_config("grid_resolution = 0", Path::new("c.toml")).unwrap_err();
        assert!(matches!(&err, Error::Config { field, .. } if field == "grid_resolution"));
    }

    #[test]
    fn string_roundtrip() {
        let mut c = SarfeConfig::default();
        c.sources[1].mlp_widths = vec![32];
        c.norm_eps = 3.3e-7;
        let back = parse_config(&config_to_string(&c), Path::new("c.toml")).unwrap();
        assert_eq!(back, c);
    }
}
