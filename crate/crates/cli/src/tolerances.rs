use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

const DEFAULTS: &str = include_str!("../defaults/tolerances.toml");

#[derive(Debug, Clone, Deserialize)]
pub struct Tolerances {
    pub version: u32,
    pub estimates: EstimateTolerance,
}

#[derive(Debug, Clone, Copy, Deserialize, Serialize)]
pub struct EstimateTolerance {
    pub se_multiple: f64,
    pub abs_floor: f64,
}

impl EstimateTolerance {
    pub fn band(&self, se: f64) -> f64 {
        (self.se_multiple * se).max(self.abs_floor)
    }
}

impl Tolerances {
    pub fn load(path: Option<&std::path::Path>) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
            None => DEFAULTS.to_string(),
        };
        let t: Tolerances = toml::from_str(&text)?;
        if t.version != 1 {
            bail!("unsupported tolerance file version {}", t.version);
        }
        Ok(t)
    }
}
