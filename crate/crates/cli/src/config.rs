//! Config file and flag merging. Precedence: record fields, then flags,
//! then the config file, then built-in defaults.

use std::path::Path;
use std::sync::Arc;

use serde::Deserialize;

use costeer_core::jobs::{JobDefaults, LambdaRange};
use costeer_core::reference::ToyModel;
use costeer_core::remote::{RemoteConfig, RemoteModel};
use costeer_core::LanguageModel;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RemoteSection {
    pub top_k: Option<usize>,
    pub floor_gap: Option<f64>,
    pub max_retries: Option<u32>,
    pub timeout_secs: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceSection {
    pub bind: Option<String>,
    pub token: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub model: Option<String>,
    pub jobs: Option<usize>,
    pub format: Option<String>,
    pub defaults: JobDefaults,
    pub remote: RemoteSection,
    pub service: ServiceSection,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}

/// Comma list of reals, e.g. `-1,0,3`.
pub fn parse_list(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("bad number {p:?}: {e}")))
        .collect()
}

/// `lo:hi:step`.
pub fn parse_range(s: &str) -> Result<LambdaRange, String> {
    let parts = parse_colon(s)?;
    match parts[..] {
        [lo, hi, step] => Ok(LambdaRange { lo, hi, step }),
        _ => Err(format!("expected lo:hi:step, got {s:?}")),
    }
}

fn parse_colon(s: &str) -> Result<Vec<f64>, String> {
    s.split(':')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("bad number {p:?}: {e}")))
        .collect()
}

/// A grid is either `lo:hi:step` or a comma list.
pub fn parse_grid(s: &str) -> Result<Vec<f64>, String> {
    if s.contains(':') {
        let r = parse_range(s)?;
        costeer_core::inference::LambdaGrid::range(r.lo, r.hi, r.step)
            .map(Vec::from)
            .map_err(|e| e.to_string())
    } else {
        parse_list(s)
    }
}

/// `toy:<path>`, `remote:<url>`, `remote` (URL from the environment), or a
/// bare path to a toy table file.
pub fn load_model(uri: &str, remote: &RemoteSection) -> Result<Arc<dyn LanguageModel>, String> {
    if let Some(rest) = uri.strip_prefix("remote") {
        let url = rest.strip_prefix(':').filter(|u| !u.is_empty());
        if url.is_none() && !rest.is_empty() {
            return Err(format!("bad model uri {uri:?}"));
        }
        let mut cfg = RemoteConfig::from_env(url).map_err(|e| e.to_string())?;
        if let Some(k) = remote.top_k {
            cfg.top_k = Some(k);
        }
        if let Some(g) = remote.floor_gap {
            cfg.floor_gap = g;
        }
        if let Some(r) = remote.max_retries {
            cfg.max_retries = r;
        }
        if let Some(t) = remote.timeout_secs {
            cfg.timeout = std::time::Duration::from_secs_f64(t);
        }
        let m = RemoteModel::connect(cfg).map_err(|e| format!("{uri}: {e}"))?;
        return Ok(Arc::new(m));
    }
    let path = uri.strip_prefix("toy:").unwrap_or(uri);
    let m = ToyModel::load(Path::new(path)).map_err(|e| format!("{path}: {e}"))?;
    Ok(Arc::new(m))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_flags() {
        assert_eq!(parse_list("-1, 0,3").unwrap(), vec![-1.0, 0.0, 3.0]);
        let r = parse_range("-1:3:1").unwrap();
        assert_eq!((r.lo, r.hi, r.step), (-1.0, 3.0, 1.0));
        assert_eq!(parse_grid("0:1:0.5").unwrap(), vec![0.0, 0.5, 1.0]);
        assert!(parse_range("1:2").is_err());
        assert!(parse_list("a").is_err());
    }

    #[test]
    fn config_file_shape() {
        let c: FileConfig = toml::from_str(
            "model = \"toy:m.tsv\"\njobs = 3\n[defaults]\nlambda = 1.5\nseed = 9\n[remote]\ntop_k = 5\n",
        )
        .unwrap();
        assert_eq!(c.jobs, Some(3));
        assert_eq!(c.defaults.lambda, 1.5);
        assert_eq!(c.defaults.classify_lambda, -0.5);
        assert_eq!(c.remote.top_k, Some(5));
        assert!(toml::from_str::<FileConfig>("modle = 1").is_err());
    }
}
