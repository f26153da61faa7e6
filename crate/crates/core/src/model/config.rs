use serde::{Deserialize, Serialize};

use crate::error::{GraftError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub dim: usize,
    pub layers: usize,
    pub lambda: f64,
    pub heterogeneous: bool,
    pub directed: bool,
    pub relation_attention: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            layers: 3,
            lambda: 0.5,
            heterogeneous: true,
            directed: true,
            relation_attention: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(GraftError::config("model.n", "must be at least 1"));
        }
        if self.layers == 0 {
            return Err(GraftError::config("model.L", "must be at least 1"));
        }
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return Err(GraftError::config("model.lambda", "must lie in (0, 1)"));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> String {
        format!(
            "model.n = {}\nmodel.L = {}\nmodel.lambda = {}\nmodel.heterogeneous = {}\nmodel.directed = {}\nmodel.relation_attention = {}\n",
            self.dim, self.layers, self.lambda, self.heterogeneous, self.directed, self.relation_attention
        )
    }

    /// Sets one `model.*` key; returns false when the key is not a model key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let bad = |e: &dyn std::fmt::Display| GraftError::config(key, format!("{value:?}: {e}"));
        match key {
            "model.n" => self.dim = value.parse().map_err(|e| bad(&e))?,
            "model.L" => self.layers = value.parse().map_err(|e| bad(&e))?,
            "model.lambda" => self.lambda = value.parse().map_err(|e| bad(&e))?,
            "model.heterogeneous" => self.heterogeneous = value.parse().map_err(|e| bad(&e))?,
            "model.directed" => self.directed = value.parse().map_err(|e| bad(&e))?,
            "model.relation_attention" => self.relation_attention = value.parse().map_err(|e| bad(&e))?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for line in text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
        {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| GraftError::config(line, "expected key = value"))?;
            if !cfg.set(k.trim(), v.trim())? {
                return Err(GraftError::config(k.trim(), "unknown key"));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_round_trip() {
        let cfg = ModelConfig {
            dim: 7,
            layers: 2,
            lambda: 0.25,
            heterogeneous: false,
            ..Default::default()
        };
        assert_eq!(ModelConfig::from_kv(&cfg.to_kv()).unwrap(), cfg);
        assert!(ModelConfig::from_kv("model.bogus = 1").is_err());
        assert!(ModelConfig::from_kv("model.lambda = 1.0").is_err());
    }
}
