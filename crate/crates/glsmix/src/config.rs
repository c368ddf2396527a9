//! Flat key=value run-configuration files with dotted section prefixes,
//! e.g. `model.name = lm1` or `condsim.burnin = 5000`. Blank lines and
//! `#` comments are ignored.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::correlation::{MaternParams, SiteSet};
use crate::error::{Error, Result};
use crate::mixing::{spec_from_name, MixingSpec};

/// Side length of the square study region sites are sampled from.
pub const REGION_SIDE: f64 = 200.0;

/// Parsed run configuration.
#[derive(Debug, Clone, Default)]
pub struct RunConfig {
    map: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Data(format!(
                    "config line {}: expected key = value, got {raw:?}",
                    lineno + 1
                )));
            };
            let key = key.trim().to_string();
            if key.is_empty() {
                return Err(Error::Data(format!("config line {}: empty key", lineno + 1)));
            }
            map.insert(key, value.trim().to_string());
        }
        Ok(Self { map })
    }

    pub fn set(&mut self, key: &str, value: &str) {
        self.map.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(|s| s.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::InvalidArgument(format!("missing config key `{key}`")))
    }

    pub fn get_f64(&self, key: &str) -> Result<Option<f64>> {
        self.get(key)
            .map(|v| {
                v.parse::<f64>().map_err(|_| {
                    Error::Data(format!("config key `{key}`: `{v}` is not a number"))
                })
            })
            .transpose()
    }

    pub fn get_usize(&self, key: &str) -> Result<Option<usize>> {
        self.get(key)
            .map(|v| {
                v.parse::<usize>().map_err(|_| {
                    Error::Data(format!("config key `{key}`: `{v}` is not a whole number"))
                })
            })
            .transpose()
    }

    pub fn get_u64(&self, key: &str) -> Result<Option<u64>> {
        self.get(key)
            .map(|v| {
                v.parse::<u64>().map_err(|_| {
                    Error::Data(format!("config key `{key}`: `{v}` is not a whole number"))
                })
            })
            .transpose()
    }

    pub fn get_bool(&self, key: &str) -> Result<Option<bool>> {
        self.get(key)
            .map(|v| match v.to_ascii_lowercase().as_str() {
                "true" | "yes" | "1" => Ok(true),
                "false" | "no" | "0" => Ok(false),
                _ => Err(Error::Data(format!(
                    "config key `{key}`: `{v}` is not a boolean"
                ))),
            })
            .transpose()
    }

    /// Comma-separated list of numbers.
    pub fn get_f64_list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        self.get(key)
            .map(|v| {
                v.split(',')
                    .map(|p| {
                        p.trim().parse::<f64>().map_err(|_| {
                            Error::Data(format!("config key `{key}`: `{p}` is not a number"))
                        })
                    })
                    .collect()
            })
            .transpose()
    }

    /// Mixing spec from `model.name` plus `model.<param>` entries.
    pub fn mixing_spec(&self) -> Result<MixingSpec> {
        let name = self.require("model.name")?;
        spec_from_name(name, |p| {
            self.get(&format!("model.{p}")).and_then(|v| v.parse().ok())
        })
    }

    /// Matern parameters from `corr.range` and `corr.smoothness`.
    pub fn matern(&self) -> Result<MaternParams> {
        let range = self
            .get_f64("corr.range")?
            .ok_or_else(|| Error::InvalidArgument("missing config key `corr.range`".into()))?;
        let smoothness = self.get_f64("corr.smoothness")?.ok_or_else(|| {
            Error::InvalidArgument("missing config key `corr.smoothness`".into())
        })?;
        MaternParams::new(range, smoothness)
    }

    /// Study dimensions (m, n) from `study.label` or explicit
    /// `study.m` / `study.n` keys.
    pub fn study_dims(&self) -> Result<(usize, usize)> {
        if let Some(label) = self.get("study.label") {
            return config_label_dims(label);
        }
        let m = self
            .get_usize("study.m")?
            .ok_or_else(|| Error::InvalidArgument("need `study.label` or `study.m`".into()))?;
        let n = self
            .get_usize("study.n")?
            .ok_or_else(|| Error::InvalidArgument("need `study.label` or `study.n`".into()))?;
        Ok((m, n))
    }
}

/// Expand a study configuration label into (m sites, n replicates).
pub fn config_label_dims(label: &str) -> Result<(usize, usize)> {
    match label.trim().to_ascii_uppercase().as_str() {
        "A" => Ok((50, 100)),
        "B" => Ok((100, 500)),
        "C" => Ok((200, 1000)),
        "D" => Ok((400, 2000)),
        other => Err(Error::InvalidArgument(format!(
            "unknown study label `{other}`; expected A, B, C or D"
        ))),
    }
}

/// Sample `m` sites uniformly on the study square.
pub fn random_sites(m: usize, seed: u64) -> Result<SiteSet> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    SiteSet::new(
        (0..m)
            .map(|_| {
                [
                    rng.gen::<f64>() * REGION_SIDE,
                    rng.gen::<f64>() * REGION_SIDE,
                ]
            })
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_flat_key_values() {
        let cfg = RunConfig::parse(
            "# comment\n\nmodel.name = lm1\nmodel.lambda = 1.5\ncorr.range=50\ncorr.smoothness=0.5\nstudy.label = b\n",
        )
        .unwrap();
        assert_eq!(cfg.get("model.name"), Some("lm1"));
        assert_eq!(
            cfg.mixing_spec().unwrap(),
            MixingSpec::Lm1 { lambda: 1.5 }
        );
        let matern = cfg.matern().unwrap();
        assert_eq!((matern.range, matern.smoothness), (50.0, 0.5));
        assert_eq!(cfg.study_dims().unwrap(), (100, 500));
    }

    #[test]
    fn label_expansion() {
        assert_eq!(config_label_dims("A").unwrap(), (50, 100));
        assert_eq!(config_label_dims("b").unwrap(), (100, 500));
        assert_eq!(config_label_dims("C").unwrap(), (200, 1000));
        assert_eq!(config_label_dims("D").unwrap(), (400, 2000));
        assert!(config_label_dims("E").is_err());
    }

    #[test]
    fn explicit_dims_and_errors() {
        let cfg = RunConfig::parse("study.m = 20\nstudy.n = 40\n").unwrap();
        assert_eq!(cfg.study_dims().unwrap(), (20, 40));
        assert!(RunConfig::parse("no equals sign").is_err());
        assert!(RunConfig::parse("= empty\n").is_err());
        let bad = RunConfig::parse("study.m = x\n").unwrap();
        assert!(bad.get_usize("study.m").is_err());
        assert!(RunConfig::default().study_dims().is_err());
    }

    #[test]
    fn random_sites_deterministic_and_in_region() {
        let a = random_sites(50, 9).unwrap();
        let b = random_sites(50, 9).unwrap();
        assert_eq!(a, b);
        assert!(a
            .coords()
            .iter()
            .all(|c| (0.0..=REGION_SIDE).contains(&c[0]) && (0.0..=REGION_SIDE).contains(&c[1])));
        assert_ne!(a, random_sites(50, 10).unwrap());
    }

    #[test]
    fn list_and_bool_parsing() {
        let cfg = RunConfig::parse("chi.thresholds = 0.5, 0.75,0.9\nfit.copula = true\n").unwrap();
        assert_eq!(
            cfg.get_f64_list("chi.thresholds").unwrap().unwrap(),
            vec![0.5, 0.75, 0.9]
        );
        assert_eq!(cfg.get_bool("fit.copula").unwrap(), Some(true));
        assert!(cfg.get_f64_list("missing").unwrap().is_none());
    }
}
