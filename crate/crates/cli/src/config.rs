//! Flat key = value configuration files with dotted section prefixes
//! (e.g. `problem.alpha = 0.8`), ASCII, '#' comments.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use tempered_dg::estimate::{AdaptConfig, Scheme};

#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn err<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

/// Parsed key/value table with typed, range-checked accessors.
pub struct Config {
    values: HashMap<String, String>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut values = HashMap::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return err(format!("line {}: expected 'key = value'", ln + 1));
            };
            let (k, v) = (k.trim().to_string(), v.trim().to_string());
            if k.is_empty() || v.is_empty() {
                return err(format!("line {}: empty key or value", ln + 1));
            }
            if values.insert(k.clone(), v).is_some() {
                return err(format!("line {}: duplicate key '{k}'", ln + 1));
            }
        }
        Ok(Self { values })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn str(&self, key: &str) -> Result<&str, ConfigError> {
        self.values
            .get(key)
            .map(|s| s.as_str())
            .ok_or_else(|| ConfigError(format!("missing key '{key}'")))
    }

    pub fn str_or<'a>(&'a self, key: &str, default: &'a str) -> &'a str {
        self.values.get(key).map_or(default, |s| s.as_str())
    }

    pub fn f64(&self, key: &str) -> Result<f64, ConfigError> {
        let s = self.str(key)?;
        s.parse()
            .map_err(|_| ConfigError(format!("key '{key}': '{s}' is not a number")))
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        match self.values.get(key) {
            Some(_) => self.f64(key),
            None => Ok(default),
        }
    }

    pub fn usize(&self, key: &str) -> Result<usize, ConfigError> {
        let s = self.str(key)?;
        s.parse()
            .map_err(|_| ConfigError(format!("key '{key}': '{s}' is not a count")))
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize, ConfigError> {
        match self.values.get(key) {
            Some(_) => self.usize(key),
            None => Ok(default),
        }
    }

    pub fn f64_in(&self, key: &str, lo: f64, hi: f64) -> Result<f64, ConfigError> {
        let v = self.f64(key)?;
        if v < lo || v > hi {
            return err(format!("key '{key}': {v} outside [{lo}, {hi}]"));
        }
        Ok(v)
    }

    /// Adaptivity block with the library defaults for absent keys.
    pub fn adapt(&self) -> Result<AdaptConfig, ConfigError> {
        let d = AdaptConfig::default();
        let cfg = AdaptConfig {
            theta1: self.f64_or("adapt.theta1", d.theta1)?,
            theta2: self.f64_or("adapt.theta2", d.theta2)?,
            tol_space: self.f64_or("adapt.tol_space", d.tol_space)?,
            tol_time: self.f64_or("adapt.tol_time", d.tol_time)?,
            max_iterations: self.usize_or("adapt.max_iterations", d.max_iterations)?,
            coarsen_fraction: self.f64_or("adapt.coarsen_fraction", d.coarsen_fraction)?,
            timestep_growth: self.f64_or("adapt.timestep_growth", d.timestep_growth)?,
            dof_cap: self.usize_or("adapt.dof_cap", d.dof_cap)?,
        };
        cfg.validate()
            .map_err(|e| ConfigError(format!("adaptivity block: {e}")))?;
        Ok(cfg)
    }

    pub fn scheme(&self) -> Result<Scheme, ConfigError> {
        match self.str_or("adapt.scheme", "energy") {
            "energy" => Ok(Scheme::Energy),
            "dwr" => Ok(Scheme::Dwr),
            other => err(format!("adapt.scheme: '{other}' is not energy|dwr")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_flat_keys() {
        let c = Config::parse("problem.alpha = 0.8\nmesh.k = 8 # comment\n\n# full comment\n")
            .unwrap();
        assert_eq!(c.f64("problem.alpha").unwrap(), 0.8);
        assert_eq!(c.usize("mesh.k").unwrap(), 8);
        assert_eq!(c.str_or("absent", "x"), "x");
    }

    #[test]
    fn rejects_bad_lines() {
        assert!(Config::parse("just words").is_err());
        assert!(Config::parse("a = 1\na = 2").is_err());
        assert!(Config::parse("a =").is_err());
        let c = Config::parse("a = b").unwrap();
        assert!(c.f64("a").is_err());
        assert!(c.f64("missing").is_err());
    }

    #[test]
    fn range_checks() {
        let c = Config::parse("x = 3.0").unwrap();
        assert!(c.f64_in("x", 0.0, 1.0).is_err());
        assert!(c.f64_in("x", 0.0, 5.0).is_ok());
    }

    #[test]
    fn adapt_block_defaults_and_validation() {
        let c = Config::parse("adapt.theta1 = 0.6").unwrap();
        let a = c.adapt().unwrap();
        assert_eq!(a.theta1, 0.6);
        assert_eq!(a.theta2, 0.5);
        let bad = Config::parse("adapt.theta1 = 1.5").unwrap();
        assert!(bad.adapt().is_err());
        assert!(Config::parse("adapt.scheme = foo").unwrap().scheme().is_err());
    }
}
