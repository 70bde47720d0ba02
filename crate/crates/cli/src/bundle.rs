//! Fitted-model bundle: a directory holding `manifest.toml` and CSV members.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use simavg::averaging::Method;
use simavg::data::{fmt_f64, CandidateSpec, CsvTable, Dataset};
use simavg::estimator::IndexCoefficients;

use crate::failure::{Failure, Outcome};

pub const FORMAT: &str = "simavg-model";
pub const VERSION: u32 = 1;
pub const DIR: &str = "model";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub response: String,
    pub covariates: Vec<String>,
    pub n_train: usize,
    pub block_size: usize,
    pub seed: u64,
    pub screen: String,
    pub methods: Vec<String>,
    pub members: Members,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Members {
    pub train: String,
    pub candidates: String,
    pub coefficients: String,
    pub weights: String,
}

impl Default for Members {
    fn default() -> Self {
        Members {
            train: "train.csv".into(),
            candidates: "candidates.csv".into(),
            coefficients: "coefficients.csv".into(),
            weights: "weights.csv".into(),
        }
    }
}

/// One stored candidate.
#[derive(Debug, Clone)]
pub struct StoredCandidate {
    pub spec: CandidateSpec,
    pub beta: IndexCoefficients,
    pub h: f64,
}

#[derive(Debug, Clone)]
pub struct Bundle {
    pub manifest: Manifest,
    pub train: Dataset,
    pub candidates: Vec<StoredCandidate>,
    /// Weight vector of each stored method over the candidates.
    pub weights: Vec<(Method, Vec<f64>)>,
}

fn bad(path: &Path, msg: impl std::fmt::Display) -> Failure {
    Failure::data(format!("{}: {msg}", path.display()))
}

impl Bundle {
    pub fn write(&self, dir: &Path) -> Outcome<()> {
        fs::create_dir_all(dir)?;
        let m = &self.manifest;
        let text = toml::to_string_pretty(m).map_err(|e| Failure::data(e.to_string()))?;
        fs::write(dir.join("manifest.toml"), text)?;
        self.train.write_csv(fs::File::create(dir.join(&m.members.train))?)?;

        let mut w = csv::Writer::from_path(dir.join(&m.members.candidates))?;
        w.write_record(["candidate", "indices", "h"])?;
        for (s, c) in self.candidates.iter().enumerate() {
            w.write_record([s.to_string(), c.spec.label(), fmt_f64(c.h)])?;
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join(&m.members.coefficients))?;
        w.write_record(["candidate", "covariate", "beta"])?;
        for (s, c) in self.candidates.iter().enumerate() {
            for (&j, &b) in c.spec.indices().iter().zip(c.beta.as_slice()) {
                w.write_record([s.to_string(), j.to_string(), fmt_f64(b)])?;
            }
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join(&m.members.weights))?;
        let mut header = vec!["candidate".to_string()];
        header.extend(self.weights.iter().map(|(k, _)| k.name().to_string()));
        w.write_record(&header)?;
        for s in 0..self.candidates.len() {
            let mut row = vec![s.to_string()];
            row.extend(self.weights.iter().map(|(_, v)| fmt_f64(v[s])));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Accepts the bundle directory or a fit output directory holding it.
    pub fn read(path: &Path) -> Outcome<Bundle> {
        let dir: PathBuf = if path.join("manifest.toml").is_file() {
            path.to_path_buf()
        } else if path.join(DIR).join("manifest.toml").is_file() {
            path.join(DIR)
        } else {
            return Err(bad(path, "no manifest.toml found"));
        };
        let manifest_path = dir.join("manifest.toml");
        let text = fs::read_to_string(&manifest_path)?;
        let manifest: Manifest = toml::from_str(&text).map_err(|e| bad(&manifest_path, e))?;
        if manifest.format != FORMAT {
            return Err(bad(&manifest_path, format!("unknown format '{}'", manifest.format)));
        }
        if manifest.version != VERSION {
            return Err(bad(
                &manifest_path,
                format!("unsupported bundle version {}", manifest.version),
            ));
        }
        let train = Dataset::from_csv_path(dir.join(&manifest.members.train))?;
        if train.names() != manifest.covariates.as_slice() || train.response_name() != manifest.response {
            return Err(bad(&dir, "training data columns disagree with the manifest"));
        }
        let p = train.p();

        let cand_path = dir.join(&manifest.members.candidates);
        let mut rdr = csv::Reader::from_path(&cand_path)?;
        let mut specs = Vec::new();
        let mut hs = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() != 3 {
                return Err(bad(&cand_path, "expected 3 fields per row"));
            }
            let indices = parse_label(&rec[1]).ok_or_else(|| bad(&cand_path, "bad index list"))?;
            specs.push(CandidateSpec::new(indices, p)?);
            hs.push(rec[2].parse::<f64>().map_err(|e| bad(&cand_path, e))?);
        }

        let coef_path = dir.join(&manifest.members.coefficients);
        let coef = CsvTable::from_path(&coef_path)?;
        let mut betas: Vec<Vec<f64>> = vec![Vec::new(); specs.len()];
        for row in &coef.rows {
            let s = row[0] as usize;
            let j = row[1] as usize;
            let spec = specs.get(s).ok_or_else(|| bad(&coef_path, format!("unknown candidate {s}")))?;
            if spec.indices().get(betas[s].len()) != Some(&j) {
                return Err(bad(&coef_path, format!("coefficients of candidate {s} out of order")));
            }
            betas[s].push(row[2]);
        }
        let candidates = specs
            .into_iter()
            .zip(betas)
            .zip(hs)
            .map(|((spec, beta), h)| {
                Ok(StoredCandidate {
                    beta: IndexCoefficients::new(beta)?,
                    spec,
                    h,
                })
            })
            .collect::<Outcome<Vec<_>>>()?;

        let weights_path = dir.join(&manifest.members.weights);
        let table = CsvTable::from_path(&weights_path)?;
        if table.rows.len() != candidates.len() {
            return Err(bad(&weights_path, "one weight row per candidate is required"));
        }
        let mut weights = Vec::new();
        for (c, name) in table.headers.iter().enumerate().skip(1) {
            let m: Method = name.parse().map_err(|e| bad(&weights_path, e))?;
            weights.push((m, table.column(c)));
        }
        Ok(Bundle {
            manifest,
            train,
            candidates,
            weights,
        })
    }
}

/// Parses a space-separated index list such as `0 2 5`.
fn parse_label(s: &str) -> Option<Vec<usize>> {
    let out: Option<Vec<usize>> = s.split_whitespace().map(|t| t.parse().ok()).collect();
    out.filter(|v| !v.is_empty())
}
