//! Flat `key = value` experiment configs.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use kinetic_core::coefficients::FieldParams;
use kinetic_core::{Error, Result};

pub const KEYS: [&str; 15] = [
    "experiment",
    "seed",
    "d",
    "T",
    "dt",
    "N",
    "p",
    "lambda",
    "n_ladder",
    "mollify",
    "field.name",
    "field.kappa",
    "field.support_radius",
    "field.K",
    "output",
];

pub const EXPERIMENTS: [&str; 7] = ["kernel", "flow", "converge", "zvonkin", "krylov", "fokker-planck", "spaces"];

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentConfig {
    entries: BTreeMap<String, String>,
}

fn parse_line(line: &str, origin: &str) -> Result<Option<(String, String)>> {
    let content = line.split('#').next().unwrap_or("").trim();
    if content.is_empty() {
        return Ok(None);
    }
    let (key, value) =
        content.split_once('=').ok_or_else(|| Error::validation(format!("{origin}: expected `key = value`, found `{content}`")))?;
    let (key, value) = (key.trim(), value.trim());
    if !KEYS.contains(&key) {
        return Err(Error::validation(format!("{origin}: unknown key `{key}`")));
    }
    if value.is_empty() {
        return Err(Error::validation(format!("{origin}: empty value for `{key}`")));
    }
    Ok(Some((key.to_string(), value.to_string())))
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let origin = format!("line {}", i + 1);
            if let Some((k, v)) = parse_line(line, &origin)? {
                if entries.insert(k.clone(), v).is_some() {
                    return Err(Error::validation(format!("{origin}: duplicate key `{k}`")));
                }
            }
        }
        Ok(ExperimentConfig { entries })
    }

    /// Applies command-line `key=value` overrides.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for (i, o) in overrides.iter().enumerate() {
            match parse_line(o, &format!("override {}", i + 1))? {
                Some((k, v)) => {
                    self.entries.insert(k, v);
                }
                None => return Err(Error::validation(format!("override {}: empty", i + 1))),
            }
        }
        Ok(())
    }

    /// Canonical form: one `key = value` line per entry, sorted by key.
    /// Parsing the echo gives back an equal config.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.raw(key).ok_or_else(|| Error::validation(format!("missing required key `{key}`")))
    }

    pub fn experiment(&self) -> Result<&str> {
        let e = self.require("experiment")?;
        if EXPERIMENTS.contains(&e) {
            Ok(e)
        } else {
            Err(Error::validation(format!("unknown experiment `{e}` (expected one of {})", EXPERIMENTS.join(", "))))
        }
    }

    pub fn seed(&self) -> Result<u64> {
        let s = self.require("seed")?;
        s.parse().map_err(|_| Error::validation(format!("seed `{s}` is not a 64-bit unsigned integer")))
    }

    /// Accepts decimals and simple fractions such as `1/64`.
    pub fn real(&self, key: &str, default: f64) -> Result<f64> {
        let Some(s) = self.raw(key) else { return Ok(default) };
        let bad = || Error::validation(format!("`{key}` = `{s}` is not a number"));
        let x = match s.split_once('/') {
            Some((a, b)) => a.trim().parse::<f64>().map_err(|_| bad())? / b.trim().parse::<f64>().map_err(|_| bad())?,
            None => s.parse::<f64>().map_err(|_| bad())?,
        };
        if x.is_finite() {
            Ok(x)
        } else {
            Err(bad())
        }
    }

    pub fn positive(&self, key: &str, default: f64) -> Result<f64> {
        let x = self.real(key, default)?;
        if x > 0.0 {
            Ok(x)
        } else {
            Err(Error::validation(format!("`{key}` must be positive, got {x}")))
        }
    }

    pub fn count(&self, key: &str, default: usize) -> Result<usize> {
        let Some(s) = self.raw(key) else { return Ok(default) };
        s.parse().map_err(|_| Error::validation(format!("`{key}` = `{s}` is not a non-negative integer")))
    }

    pub fn field_name(&self, default: &str) -> String {
        self.raw("field.name").unwrap_or(default).to_string()
    }

    pub fn field_params(&self) -> Result<FieldParams> {
        let base = FieldParams::default();
        Ok(FieldParams {
            d: self.count("d", base.d)?,
            kappa: self.real("field.kappa", base.kappa)?,
            support_radius: self.real("field.support_radius", base.support_radius)?,
            ellipticity_k: self.raw("field.K").map(|_| self.real("field.K", 0.0)).transpose()?,
            horizon: self.positive("T", base.horizon)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comments_and_fractions() {
        let c = ExperimentConfig::parse("# header\nexperiment = kernel  # trailing\n\ndt = 1/64\nseed=3\n").unwrap();
        assert_eq!(c.experiment().unwrap(), "kernel");
        assert_eq!(c.real("dt", 0.0).unwrap(), 1.0 / 64.0);
        assert_eq!(c.seed().unwrap(), 3);
    }

    #[test]
    fn unknown_key_reports_line() {
        let e = ExperimentConfig::parse("seed = 1\n\nbogus = 2\n").unwrap_err();
        assert!(e.is_validation());
        assert!(e.to_string().contains("line 3"), "{e}");
    }

    #[test]
    fn echo_round_trips() {
        let c = ExperimentConfig::parse("seed = 9\nexperiment = flow\nfield.name = langevin\n").unwrap();
        assert_eq!(ExperimentConfig::parse(&c.echo()).unwrap(), c);
    }

    #[test]
    fn overrides_replace_values() {
        let mut c = ExperimentConfig::parse("seed = 9\n").unwrap();
        c.apply_overrides(&["seed=10".into()]).unwrap();
        assert_eq!(c.seed().unwrap(), 10);
        assert!(c.apply_overrides(&["nope=1".into()]).unwrap_err().is_validation());
    }

    #[test]
    fn duplicates_and_bad_numbers_rejected() {
        assert!(ExperimentConfig::parse("seed = 1\nseed = 2\n").unwrap_err().is_validation());
        let c = ExperimentConfig::parse("dt = fast\nseed = -1\n").unwrap();
        assert!(c.real("dt", 0.0).unwrap_err().is_validation());
        assert!(c.seed().unwrap_err().is_validation());
    }
}
