//! Structured config files with command-line overrides.

use std::path::Path;

use bvda_core::{Error, Result};
use serde::de::DeserializeOwned;
use toml::{Table, Value};

/// Key/value pairs given on the command line.
#[derive(Default)]
pub struct Overrides(Vec<(&'static str, Value)>);

impl Overrides {
    pub fn set(&mut self, key: &'static str, v: Option<impl Into<Value>>) -> &mut Self {
        if let Some(v) = v {
            self.0.push((key, v.into()));
        }
        self
    }

    pub fn set_u64(&mut self, key: &'static str, v: Option<u64>) -> &mut Self {
        self.set(key, v.map(|x| x as i64))
    }

    pub fn set_usize(&mut self, key: &'static str, v: Option<usize>) -> &mut Self {
        self.set(key, v.map(|x| x as i64))
    }
}

/// Reads `file` (TOML) if given, applies `overrides` on top, and
/// deserializes the result. Missing keys take their defaults.
pub fn load<T: DeserializeOwned>(file: Option<&Path>, overrides: Overrides) -> Result<T> {
    let mut table = match file {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            text.parse::<Table>()
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => Table::new(),
    };
    for (k, v) in overrides.0 {
        table.insert(k.to_string(), v);
    }
    T::deserialize(Value::Table(table)).map_err(|e| Error::Config(e.to_string()))
}

pub fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .filter(|x| !x.trim().is_empty())
        .map(|x| {
            x.trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad {what} entry `{x}`")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use bvda_core::trainer::AdaptConfig;

    #[test]
    fn flags_win_over_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.toml");
        std::fs::write(&p, "lr = 0.2\nepochs = 7\n").unwrap();
        let mut o = Overrides::default();
        o.set_usize("epochs", Some(3)).set("mi", Some(false)).set("lr", None::<f64>);
        let cfg: AdaptConfig = load(Some(&p), o).unwrap();
        assert_eq!((cfg.epochs, cfg.lr, cfg.mi), (3, 0.2, false));
        assert_eq!(cfg.alpha_v, AdaptConfig::default().alpha_v);
    }

    #[test]
    fn bad_input_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.toml");
        std::fs::write(&p, "lr = \n").unwrap();
        assert!(matches!(load::<AdaptConfig>(Some(&p), Overrides::default()), Err(Error::Config(_))));
        let missing = dir.path().join("none.toml");
        assert!(matches!(load::<AdaptConfig>(Some(&missing), Overrides::default()), Err(Error::Config(_))));
        assert_eq!(parse_list::<u64>("0, 1,2,", "seed").unwrap(), vec![0, 1, 2]);
        assert!(parse_list::<f64>("0.1,x", "beta").is_err());
    }
}
