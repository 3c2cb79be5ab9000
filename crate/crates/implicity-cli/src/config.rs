//! Flat key=value config files plus flag > file > default resolution.
//!
//! Every resolved value is recorded so the manifest can snapshot the
//! effective configuration, not just what the user typed.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use anyhow::{bail, Context, Result};

#[derive(Debug, Default)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<ConfigFile> {
        let Some(path) = path else {
            return Ok(ConfigFile::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config file {}", path.display()))?;
        let mut values = BTreeMap::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                bail!("{}:{}: expected key=value, got {line:?}", path.display(), ln + 1);
            };
            values.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(ConfigFile { values })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }
}

/// Resolves values with flag > file > default precedence and keeps a
/// snapshot of everything that was asked for.
pub struct Resolver<'a> {
    file: &'a ConfigFile,
    pub snapshot: BTreeMap<String, String>,
}

impl<'a> Resolver<'a> {
    pub fn new(file: &'a ConfigFile) -> Self {
        Resolver { file, snapshot: BTreeMap::new() }
    }

    pub fn get<T>(&mut self, flag: Option<T>, key: &str, default: T) -> Result<T>
    where
        T: FromStr + ToString,
        T::Err: std::fmt::Display,
    {
        let v = match flag {
            Some(v) => v,
            None => match self.file.get(key) {
                Some(raw) => raw
                    .parse::<T>()
                    .map_err(|e| anyhow::anyhow!("config key {key}={raw}: {e}"))?,
                None => default,
            },
        };
        self.snapshot.insert(key.to_string(), v.to_string());
        Ok(v)
    }

    /// Like `get` but the value may legitimately be absent.
    pub fn get_opt<T>(&mut self, flag: Option<T>, key: &str) -> Result<Option<T>>
    where
        T: FromStr + ToString,
        T::Err: std::fmt::Display,
    {
        let v = match flag {
            Some(v) => Some(v),
            None => match self.file.get(key) {
                Some(raw) => Some(
                    raw.parse::<T>()
                        .map_err(|e| anyhow::anyhow!("config key {key}={raw}: {e}"))?,
                ),
                None => None,
            },
        };
        if let Some(ref v) = v {
            self.snapshot.insert(key.to_string(), v.to_string());
        }
        Ok(v)
    }

    pub fn note(&mut self, key: &str, value: impl ToString) {
        self.snapshot.insert(key.to_string(), value.to_string());
    }
}

/// "x0,y0,x1,y1" -> RegionRect.
pub fn parse_region(s: &str) -> Result<implicity::patch::RegionRect> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 4 {
        bail!("region {s:?}: expected x0,y0,x1,y1");
    }
    let mut v = [0.0f64; 4];
    for (i, p) in parts.iter().enumerate() {
        v[i] = p.trim().parse().with_context(|| format!("region component {p:?}"))?;
    }
    if !(v[2] > v[0] && v[3] > v[1]) {
        bail!("region {s:?}: max must exceed min on both axes");
    }
    Ok(implicity::patch::RegionRect { x_min: v[0], y_min: v[1], x_max: v[2], y_max: v[3] })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn precedence_is_flag_then_file_then_default() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "# comment\nalpha = 2.5\nbeta=7").unwrap();
        let cfg = ConfigFile::load(Some(f.path())).unwrap();
        let mut r = Resolver::new(&cfg);
        assert_eq!(r.get(Some(9.0f64), "alpha", 1.0).unwrap(), 9.0);
        assert_eq!(r.get(None::<f64>, "alpha", 1.0).unwrap(), 2.5);
        assert_eq!(r.get(None::<u64>, "gamma", 3).unwrap(), 3);
        assert_eq!(r.snapshot.get("alpha").unwrap(), "2.5");
    }

    #[test]
    fn malformed_lines_and_regions_are_rejected() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "no_equals_here").unwrap();
        assert!(ConfigFile::load(Some(f.path())).is_err());
        assert!(parse_region("1,2,3").is_err());
        assert!(parse_region("0,0,0,5").is_err());
        let r = parse_region("1, 2, 9, 10").unwrap();
        assert_eq!((r.x_min, r.y_max), (1.0, 10.0));
    }
}
