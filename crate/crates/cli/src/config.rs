//! Flat `key = value` run configuration with dotted sections.
//!
//! Blank lines and lines starting with `#` are ignored. Every key may appear at
//! most once; keys not listed in [`KEYS`] are rejected. Missing keys take the
//! reference defaults.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;
use vpsaddle::{GridMode, SimConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: `{key}` already set on line {first}")]
    Duplicate {
        line: usize,
        key: String,
        first: usize,
    },
    #[error("line {line}: {key}: {reason}")]
    Value {
        line: usize,
        key: String,
        reason: String,
    },
    #[error("{location}{key}: {reason}")]
    Invalid {
        location: String,
        key: String,
        reason: String,
    },
    #[error("cannot read {path}: {reason}")]
    Read { path: String, reason: String },
}

/// Options of the `scatter` command stored with the run.
#[derive(Debug, Clone, PartialEq)]
pub struct ScatterConfig {
    /// Earliest sample time at which particle snapshots are written.
    pub snapshot_from: f64,
    /// Extraction times; `None` picks the last sample time and the one
    /// `EXTRACTION_LAG` before it.
    pub t1: Option<f64>,
    pub t2: Option<f64>,
    /// Most particles listed in the per-particle coordinate table.
    pub tracked: usize,
}

impl Default for ScatterConfig {
    fn default() -> Self {
        Self {
            snapshot_from: 3.0,
            t1: None,
            t2: None,
            tracked: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub sim: SimConfig,
    pub scatter: ScatterConfig,
}

pub const KEYS: &[&str] = &[
    "physics.mu",
    "physics.epsilon",
    "physics.coupling",
    "initial.sigma_s",
    "initial.sigma_u",
    "particles.n",
    "sampling.seed",
    "grid.n",
    "grid.mode",
    "grid.max_extent",
    "time.dt",
    "time.t_final",
    "time.sample_times",
    "norms.M",
    "scatter.snapshot_from",
    "scatter.t1",
    "scatter.t2",
    "scatter.tracked",
];

fn parse_f64(s: &str) -> Result<f64, String> {
    s.parse::<f64>().map_err(|_| format!("not a number: {s:?}"))
}

fn parse_opt_f64(s: &str) -> Result<Option<f64>, String> {
    if s == "auto" {
        Ok(None)
    } else {
        parse_f64(s).map(Some)
    }
}

fn parse_int<T: std::str::FromStr>(s: &str) -> Result<T, String> {
    s.replace('_', "")
        .parse::<T>()
        .map_err(|_| format!("not a non-negative integer: {s:?}"))
}

fn parse_bool(s: &str) -> Result<bool, String> {
    match s {
        "true" | "on" | "1" => Ok(true),
        "false" | "off" | "0" => Ok(false),
        _ => Err(format!("not a boolean: {s:?}")),
    }
}

fn parse_list(s: &str) -> Result<Vec<f64>, String> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',').map(|t| parse_f64(t.trim())).collect()
}

impl RunConfig {
    fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let sim = &mut self.sim;
        match key {
            "physics.mu" => sim.mu = parse_f64(value)?,
            "physics.epsilon" => sim.epsilon = parse_f64(value)?,
            "physics.coupling" => sim.coupling = parse_bool(value)?,
            "initial.sigma_s" => sim.sigma_s = parse_f64(value)?,
            "initial.sigma_u" => sim.sigma_u = parse_f64(value)?,
            "particles.n" => sim.n_particles = parse_int(value)?,
            "sampling.seed" => sim.seed = parse_int(value)?,
            "grid.n" => sim.grid_n = parse_int(value)?,
            "grid.mode" => {
                sim.grid_mode = GridMode::parse(value)
                    .ok_or_else(|| format!("expected comoving or bbox, got {value:?}"))?
            }
            "grid.max_extent" => sim.max_extent = parse_f64(value)?,
            "time.dt" => sim.dt = parse_f64(value)?,
            "time.t_final" => sim.t_final = parse_f64(value)?,
            "time.sample_times" => sim.sample_times = parse_list(value)?,
            "norms.M" => sim.norm_m = parse_int(value)?,
            "scatter.snapshot_from" => self.scatter.snapshot_from = parse_f64(value)?,
            "scatter.t1" => self.scatter.t1 = parse_opt_f64(value)?,
            "scatter.t2" => self.scatter.t2 = parse_opt_f64(value)?,
            "scatter.tracked" => self.scatter.tracked = parse_int(value)?,
            _ => unreachable!("key checked against KEYS"),
        }
        Ok(())
    }

    /// Parse and validate; errors carry the line of the offending key when it
    /// was set explicitly.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        let mut seen: Vec<(&str, usize)> = Vec::new();
        for (k, raw) in text.lines().enumerate() {
            let line = k + 1;
            let body = raw.trim();
            if body.is_empty() || body.starts_with('#') {
                continue;
            }
            let Some((key, value)) = body.split_once('=') else {
                return Err(ConfigError::Syntax {
                    line,
                    text: body.to_string(),
                });
            };
            let (key, value) = (key.trim(), value.trim());
            let Some(&canon) = KEYS.iter().find(|&&c| c == key) else {
                return Err(ConfigError::UnknownKey {
                    line,
                    key: key.to_string(),
                });
            };
            if let Some(&(_, first)) = seen.iter().find(|(c, _)| *c == canon) {
                return Err(ConfigError::Duplicate {
                    line,
                    key: key.to_string(),
                    first,
                });
            }
            seen.push((canon, line));
            cfg.set(canon, value).map_err(|reason| ConfigError::Value {
                line,
                key: key.to_string(),
                reason,
            })?;
        }
        cfg.validate().map_err(|(key, reason)| {
            let location = seen
                .iter()
                .find(|(c, _)| *c == key)
                .map(|(_, l)| format!("line {l}: "))
                .unwrap_or_default();
            ConfigError::Invalid {
                location,
                key,
                reason,
            }
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::parse(&text)
    }

    /// Semantic checks; the error names the offending key.
    pub fn validate(&self) -> Result<(), (String, String)> {
        if let Err(vpsaddle::Error::InvalidConfig { field, reason }) = self.sim.validate() {
            return Err((field, reason));
        }
        let sc = &self.scatter;
        if !(sc.snapshot_from >= 0.0 && sc.snapshot_from.is_finite()) {
            return Err((
                "scatter.snapshot_from".into(),
                "must be finite and >= 0".into(),
            ));
        }
        if let (Some(t1), Some(t2)) = (sc.t1, sc.t2) {
            if t2 <= t1 {
                return Err(("scatter.t2".into(), "must exceed scatter.t1".into()));
            }
        }
        if sc.tracked == 0 {
            return Err(("scatter.tracked".into(), "must be positive".into()));
        }
        Ok(())
    }

    /// Canonical text form; `parse(serialize(c)) == c`.
    pub fn serialize(&self) -> String {
        let s = &self.sim;
        let opt = |v: Option<f64>| v.map_or_else(|| "auto".to_string(), |x| format!("{x:?}"));
        let times: Vec<String> = s.sample_times.iter().map(|t| format!("{t:?}")).collect();
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        put("physics.mu", format!("{:?}", s.mu));
        put("physics.epsilon", format!("{:?}", s.epsilon));
        put("physics.coupling", s.coupling.to_string());
        put("initial.sigma_s", format!("{:?}", s.sigma_s));
        put("initial.sigma_u", format!("{:?}", s.sigma_u));
        put("particles.n", s.n_particles.to_string());
        put("sampling.seed", s.seed.to_string());
        put("grid.n", s.grid_n.to_string());
        put("grid.mode", s.grid_mode.as_str().to_string());
        put("grid.max_extent", format!("{:?}", s.max_extent));
        put("time.dt", format!("{:?}", s.dt));
        put("time.t_final", format!("{:?}", s.t_final));
        put("time.sample_times", times.join(","));
        put("norms.M", s.norm_m.to_string());
        put(
            "scatter.snapshot_from",
            format!("{:?}", self.scatter.snapshot_from),
        );
        put("scatter.t1", opt(self.scatter.t1));
        put("scatter.t2", opt(self.scatter.t2));
        put("scatter.tracked", self.scatter.tracked.to_string());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        assert_eq!(
            RunConfig::parse("# nothing\n\n").unwrap(),
            RunConfig::default()
        );
    }

    #[test]
    fn every_key_is_serialized() {
        let text = RunConfig::default().serialize();
        for k in KEYS {
            assert!(
                text.lines().any(|l| l.starts_with(&format!("{k} ="))),
                "{k}"
            );
        }
    }
}
