//! Benchmark configuration: a plain TOML file with the documented keys;
//! unknown keys are rejected to prevent silent typos.

use serde::Deserialize;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Case {
    Poisson2d,
    Poisson3d,
    Heat3d,
}

impl Case {
    pub fn name(&self) -> &'static str {
        match self {
            Case::Poisson2d => "poisson2d",
            Case::Poisson3d => "poisson3d",
            Case::Heat3d => "heat3d",
        }
    }

    pub fn d(&self) -> usize {
        match self {
            Case::Poisson2d => 2,
            _ => 3,
        }
    }

    pub fn transient(&self) -> bool {
        matches!(self, Case::Heat3d)
    }

    pub fn n_params(&self) -> usize {
        match self {
            Case::Heat3d => 6,
            _ => 5,
        }
    }

    fn default_m(&self) -> usize {
        match self {
            Case::Poisson2d => 30,
            _ => 12,
        }
    }
}

impl std::str::FromStr for Case {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "poisson2d" => Ok(Case::Poisson2d),
            "poisson3d" => Ok(Case::Poisson3d),
            "heat3d" => Ok(Case::Heat3d),
            other => Err(format!("unknown case {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ttrb,
    Strb,
    Both,
}

impl Method {
    pub fn list(&self) -> Vec<&'static str> {
        match self {
            Method::Ttrb => vec!["ttrb"],
            Method::Strb => vec!["strb"],
            Method::Both => vec!["ttrb", "strb"],
        }
    }
}

impl std::str::FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ttrb" => Ok(Method::Ttrb),
            "strb" => Ok(Method::Strb),
            "both" => Ok(Method::Both),
            other => Err(format!("unknown method {other:?}")),
        }
    }
}

/// Raw file keys; everything except `case` is optional.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    case: Case,
    m: Option<usize>,
    nt: Option<usize>,
    t_final: Option<f64>,
    eps: Option<Vec<f64>>,
    n_offline: Option<usize>,
    n_online: Option<usize>,
    seed: Option<u64>,
    method: Option<Method>,
    theta: Option<f64>,
    out_dir: Option<PathBuf>,
}

/// Resolved benchmark configuration.
#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub case: Case,
    pub m: usize,
    pub nt: usize,
    pub t_final: f64,
    pub eps: Vec<f64>,
    pub n_offline: usize,
    pub n_online: usize,
    pub seed: u64,
    pub method: Method,
    pub theta: f64,
    pub out_dir: PathBuf,
}

impl BenchConfig {
    pub fn for_case(case: Case) -> Self {
        BenchConfig {
            case,
            m: case.default_m(),
            nt: if case.transient() { 10 } else { 0 },
            t_final: if case.transient() { 0.1 } else { 0.0 },
            eps: vec![1e-2, 1e-3, 1e-4],
            n_offline: 20,
            n_online: 5,
            seed: 0,
            method: Method::Both,
            theta: 0.5,
            out_dir: PathBuf::from("out"),
        }
    }

    pub fn from_file(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("reading {path:?}: {e}"))?;
        let raw: RawConfig = toml::from_str(&text).map_err(|e| format!("parsing {path:?}: {e}"))?;
        let mut cfg = BenchConfig::for_case(raw.case);
        if let Some(m) = raw.m {
            cfg.m = m;
        }
        if let Some(nt) = raw.nt {
            cfg.nt = nt;
        }
        if let Some(t) = raw.t_final {
            cfg.t_final = t;
        }
        if let Some(e) = raw.eps {
            cfg.eps = e;
        }
        if let Some(n) = raw.n_offline {
            cfg.n_offline = n;
        }
        if let Some(n) = raw.n_online {
            cfg.n_online = n;
        }
        if let Some(s) = raw.seed {
            cfg.seed = s;
        }
        if let Some(m) = raw.method {
            cfg.method = m;
        }
        if let Some(t) = raw.theta {
            cfg.theta = t;
        }
        if let Some(o) = raw.out_dir {
            cfg.out_dir = o;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.eps.is_empty() || self.eps.iter().any(|&e| !(e > 0.0)) {
            return Err("eps values must be positive".into());
        }
        if self.m < 4 {
            return Err("m must be at least 4".into());
        }
        if self.n_online == 0 || self.n_offline < self.n_online {
            return Err("need n_offline >= n_online >= 1 (disjoint train/eval sets)".into());
        }
        if self.case.transient() {
            if self.nt == 0 || !(self.t_final > 0.0) {
                return Err("transient cases need nt >= 1 and t_final > 0".into());
            }
            if self.theta != 1.0 && self.theta != 0.5 {
                return Err("theta must be 1 or 0.5".into());
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_minimal_config() {
        let dir = std::env::temp_dir().join("ttrb_cfg_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("ok.toml");
        std::fs::write(&path, "case = \"poisson2d\"\nm = 12\neps = [1e-2]\n").unwrap();
        let cfg = BenchConfig::from_file(&path).unwrap();
        assert_eq!(cfg.case, Case::Poisson2d);
        assert_eq!(cfg.m, 12);
        assert_eq!(cfg.eps, vec![1e-2]);
        assert_eq!(cfg.n_offline, 20);
    }

    #[test]
    fn unknown_keys_rejected() {
        let dir = std::env::temp_dir().join("ttrb_cfg_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.toml");
        std::fs::write(&path, "case = \"heat3d\"\nepss = [1e-2]\n").unwrap();
        assert!(BenchConfig::from_file(&path).is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        let mut cfg = BenchConfig::for_case(Case::Poisson2d);
        cfg.eps = vec![-1.0];
        assert!(cfg.validate().is_err());
        let mut cfg = BenchConfig::for_case(Case::Poisson2d);
        cfg.m = 3;
        assert!(cfg.validate().is_err());
        let mut cfg = BenchConfig::for_case(Case::Heat3d);
        cfg.n_online = cfg.n_offline + 1;
        assert!(cfg.validate().is_err());
    }
}
