//! Experiment descriptions for `simulate`, from TOML or a named preset.

use serde::Deserialize;
use simavg::averaging::Method;
use simavg::monte_carlo::{DgpSpec, ExperimentSettings, Link, Situation};

use crate::failure::{Failure, Outcome};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_link")]
    pub link: String,
    pub situations: Vec<String>,
    pub n: Vec<usize>,
    pub r_squared: Vec<f64>,
    pub replications: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub methods: Option<Vec<String>>,
    #[serde(default)]
    pub block_size: Option<usize>,
    #[serde(default)]
    pub kappa_grid: Option<Vec<f64>>,
    #[serde(default)]
    pub lambda_min: Option<f64>,
    #[serde(default)]
    pub lambda_max: Option<f64>,
    #[serde(default)]
    pub lambda_count: Option<usize>,
    #[serde(default)]
    pub n_test: Option<usize>,
}

fn default_link() -> String {
    "sin".into()
}

pub const PRESETS: [(&str, &str); 4] = [
    (
        "smoke",
        r#"
situations = ["1"]
n = [100]
r_squared = [0.5]
replications = 5
seed = 1
"#,
    ),
    (
        "loss-trend",
        r#"
situations = ["1"]
n = [100, 200, 300]
r_squared = [0.5]
replications = 100
seed = 101
"#,
    ),
    (
        "weight-trend",
        r#"
situations = ["2"]
n = [100, 200, 300]
r_squared = [0.5, 0.7]
replications = 100
seed = 202
"#,
    ),
    (
        "p-gt-n",
        r#"
situations = ["p>n"]
n = [100]
r_squared = [0.3, 0.5, 0.7]
replications = 50
seed = 303
"#,
    ),
];

impl ExperimentConfig {
    pub fn parse(text: &str) -> Outcome<Self> {
        toml::from_str(text).map_err(|e| Failure::usage(format!("invalid experiment config: {e}")))
    }

    pub fn preset(name: &str) -> Outcome<Self> {
        let (_, text) = PRESETS.iter().find(|(k, _)| *k == name).ok_or_else(|| {
            let names: Vec<&str> = PRESETS.iter().map(|(k, _)| *k).collect();
            Failure::usage(format!("unknown preset '{name}'; available: {}", names.join(", ")))
        })?;
        Self::parse(text)
    }

    pub fn settings(&self) -> Outcome<ExperimentSettings> {
        let mut s = ExperimentSettings::default();
        if let Some(m) = &self.methods {
            s.methods = Method::parse_list(&m.join(","))?;
        }
        if let Some(b) = self.block_size {
            s.block_size = b;
        }
        if let Some(k) = &self.kappa_grid {
            s.kappa_grid = k.clone();
        }
        if let Some(v) = self.lambda_min {
            s.lambda_min = v;
        }
        if let Some(v) = self.lambda_max {
            s.lambda_max = v;
        }
        if let Some(v) = self.lambda_count {
            s.lambda_count = v;
        }
        if s.block_size < 2 {
            return Err(Failure::usage("block size must be at least 2"));
        }
        Ok(s)
    }

    /// Grid cells in situation, n, R^2 order.
    pub fn cells(&self) -> Outcome<Vec<DgpSpec>> {
        let link: Link = self.link.parse()?;
        if self.replications == 0 {
            return Err(Failure::usage("replications must be positive"));
        }
        if self.situations.is_empty() || self.n.is_empty() || self.r_squared.is_empty() {
            return Err(Failure::usage("situations, n and r_squared must be nonempty"));
        }
        let mut out = Vec::new();
        for name in &self.situations {
            let situation: Situation = name.parse()?;
            for &n in &self.n {
                for &r2 in &self.r_squared {
                    let mut spec = DgpSpec::new(link, situation, n, r2);
                    if let Some(m) = self.n_test {
                        spec.n_test = m;
                    }
                    out.push(spec);
                }
            }
        }
        Ok(out)
    }
}
