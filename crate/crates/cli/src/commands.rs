use std::fs;
use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use simavg::averaging::{combine, fit_ensemble, lambda_path_plan, weigh, CandidateFit, Method};
use simavg::data::{enumerate_candidates, fmt_f64, make_partition, CandidateSpec, CsvTable, Dataset};
use simavg::estimator::{predict_index_model, CoordinateDescentOptions, FitOptions};
use simavg::monte_carlo::{
    metric_misspecified_relative_loss, metric_nmspe, metric_relative_loss, metric_weight_consistency,
    run_experiment, segment_length, time_split_mspe, ExperimentSettings, ReplicationResult,
};
use simavg::screening::screen_by_correlation;

use crate::args::{Command, FitArgs, ModelArgs, PredictArgs, Screen, SimulateArgs, TimeSplitArgs};
use crate::bundle::{self, Bundle, Manifest, Members, StoredCandidate};
use crate::config::ExperimentConfig;
use crate::failure::{Failure, Outcome};

pub fn run(command: Command) -> Outcome<()> {
    match command {
        Command::Fit(a) => cmd_fit(&a),
        Command::Predict(a) => cmd_predict(&a),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::TimeSplit(a) => cmd_time_split(&a),
    }
}

/// Covariates named in a comma list, by name or by 0-based position.
fn resolve_covariates(list: &str, data: &Dataset) -> Outcome<Vec<usize>> {
    let mut out = Vec::new();
    for token in list.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        let j = match data.names().iter().position(|n| n == token) {
            Some(j) => j,
            None => match token.parse::<usize>() {
                Ok(j) if j < data.p() => j,
                _ => return Err(Failure::usage(format!("unknown covariate '{token}'"))),
            },
        };
        if !out.contains(&j) {
            out.push(j);
        }
    }
    Ok(out)
}

fn dedup_methods(methods: &[Method]) -> Vec<Method> {
    let mut out = Vec::new();
    for &m in methods {
        if !out.contains(&m) {
            out.push(m);
        }
    }
    out
}

fn check_model_args(m: &ModelArgs) -> Outcome<()> {
    if m.block_size < 2 {
        return Err(Failure::usage("--block-size must be at least 2"));
    }
    if m.kappa_grid.iter().any(|&k| !(k > 0.0 && k.is_finite())) {
        return Err(Failure::usage("--kappa-grid values must be positive"));
    }
    Ok(())
}

/// Anchor first, then the forced covariates, then one candidate per
/// nonempty subset of the remaining covariates.
fn enumerated(data: &Dataset, include: &[usize], exclude: &[usize]) -> Outcome<Vec<CandidateSpec>> {
    if include.is_empty() {
        return Err(Failure::usage("--include must name the anchor covariate"));
    }
    let uncertain: Vec<usize> = (0..data.p())
        .filter(|j| !include.contains(j) && !exclude.contains(j))
        .collect();
    Ok(enumerate_candidates(data.p(), include, exclude, &uncertain)?)
}

fn create_out(dir: &Path) -> Outcome<()> {
    fs::create_dir_all(dir)
        .map_err(|e| Failure::data(format!("cannot create output directory {}: {e}", dir.display())))
}

fn cmd_fit(a: &FitArgs) -> Outcome<()> {
    let m = &a.model;
    check_model_args(m)?;
    let data = Dataset::from_csv_path(&m.data)?;
    let include = resolve_covariates(&m.include, &data)?;
    let exclude = resolve_covariates(&m.exclude, &data)?;
    if let Some(j) = include.iter().find(|j| exclude.contains(j)) {
        return Err(Failure::usage(format!(
            "covariate '{}' is both included and excluded",
            data.names()[*j]
        )));
    }
    let methods = dedup_methods(&m.methods);
    let partition = make_partition(data.n(), m.block_size)?;
    let opts = FitOptions {
        kappa_grid: m.kappa_grid.clone(),
        cd: CoordinateDescentOptions {
            max_sweeps: a.max_sweeps,
            warm_steps: a.warm_steps,
            ..CoordinateDescentOptions::default()
        },
        ..FitOptions::default()
    };
    create_out(&a.out)?;

    let (specs, kinds): (Vec<CandidateSpec>, Option<Vec<CandidateFit>>) = match a.screen {
        Screen::None => (enumerated(&data, &include, &exclude)?, None),
        Screen::Correlation => {
            if include.is_empty() {
                return Err(Failure::usage("--include must name the anchor covariate"));
            }
            let count = a.count.unwrap_or_else(|| segment_length(data.n()));
            let screen = screen_by_correlation(&data, &include, &exclude, count)?;
            screen.write_csv(fs::File::create(a.out.join("screen.csv"))?)?;
            (screen.candidates, None)
        }
        Screen::LambdaPath => {
            if include != [0] {
                return Err(Failure::usage(
                    "lambda-path screening anchors on the first covariate and forces no others",
                ));
            }
            let (screen, fits) = lambda_path_plan(
                &data,
                &exclude,
                a.lambda_min,
                a.lambda_max,
                a.lambda_count,
                &partition,
                &opts,
            )?;
            screen.write_csv(fs::File::create(a.out.join("screen.csv"))?)?;
            (screen.candidates, Some(fits))
        }
    };
    log::info!("fitting {} candidates", specs.len());
    let ensemble = fit_ensemble(&data, &specs, kinds.as_deref(), &partition, &opts)?;
    let weighting = weigh(&data, &ensemble, &methods)?;
    let methods: Vec<Method> = weighting.weights.iter().map(|(k, _)| *k).collect();

    let names = |spec: &CandidateSpec| -> String {
        spec.indices()
            .iter()
            .map(|&j| data.names()[j].as_str())
            .collect::<Vec<_>>()
            .join(" ")
    };

    let mut w = csv::Writer::from_path(a.out.join("weights.csv"))?;
    let mut header: Vec<String> = vec!["candidate".into(), "indices".into(), "covariates".into()];
    header.extend(methods.iter().map(|k| k.name().to_string()));
    header.extend(["aic_score", "bic_score", "aicc_score", "converged"].map(String::from));
    w.write_record(&header)?;
    for (s, fit) in ensemble.fits.iter().enumerate() {
        let mut row = vec![s.to_string(), fit.spec.label(), names(&fit.spec)];
        for &k in &methods {
            row.push(fmt_f64(weighting.weights_of(k).expect("weights of each method")[s]));
        }
        match weighting.scores[s] {
            Some(sc) => row.extend([fmt_f64(sc.aic), fmt_f64(sc.bic), fmt_f64(sc.aicc)]),
            None => row.extend(["NA", "NA", "NA"].map(String::from)),
        }
        row.push(fit.converged.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(a.out.join("fits.csv"))?;
    w.write_record(["candidate", "covariate", "name", "beta", "h", "kappa", "objective", "converged", "lambda"])?;
    for (s, fit) in ensemble.fits.iter().enumerate() {
        for (&j, &b) in fit.spec.indices().iter().zip(fit.beta_hat.as_slice()) {
            w.write_record([
                s.to_string(),
                j.to_string(),
                data.names()[j].clone(),
                fmt_f64(b),
                fmt_f64(fit.bandwidth.h),
                fmt_f64(fit.bandwidth.kappa),
                fmt_f64(fit.objective),
                fit.converged.to_string(),
                fit.lambda.map(fmt_f64).unwrap_or_default(),
            ])?;
        }
    }
    w.flush()?;

    // In-sample averaged fitted means.
    let mu = DMatrix::from_fn(ensemble.len(), data.n(), |s, i| ensemble.fits[s].mu_hat[i]);
    let mut w = csv::Writer::from_path(a.out.join("fitted.csv"))?;
    let mut header = vec!["row".to_string(), data.response_name().to_string()];
    header.extend(methods.iter().map(|k| k.name().to_string()));
    w.write_record(&header)?;
    let fitted: Vec<Vec<f64>> = methods
        .iter()
        .map(|&k| combine(weighting.weights_of(k).expect("weights of each method"), &mu))
        .collect();
    for i in 0..data.n() {
        let mut row = vec![i.to_string(), fmt_f64(data.y()[i])];
        row.extend(fitted.iter().map(|f| fmt_f64(f[i])));
        w.write_record(&row)?;
    }
    w.flush()?;

    if !ensemble.dropped.is_empty() {
        let mut w = csv::Writer::from_path(a.out.join("dropped.csv"))?;
        w.write_record(["indices", "reason"])?;
        for (k, reason) in &ensemble.dropped {
            w.write_record([specs[*k].label(), reason.clone()])?;
        }
        w.flush()?;
    }

    let bundle = Bundle {
        manifest: Manifest {
            format: bundle::FORMAT.into(),
            version: bundle::VERSION,
            response: data.response_name().to_string(),
            covariates: data.names().to_vec(),
            n_train: data.n(),
            block_size: m.block_size,
            seed: a.seed,
            screen: format!("{:?}", a.screen).to_lowercase(),
            methods: methods.iter().map(|k| k.name().to_string()).collect(),
            members: Members::default(),
        },
        train: data.clone(),
        candidates: ensemble
            .fits
            .iter()
            .map(|f| StoredCandidate {
                spec: f.spec.clone(),
                beta: f.beta_hat.clone(),
                h: f.bandwidth.h,
            })
            .collect(),
        weights: weighting.weights.clone(),
    };
    bundle.write(&a.out.join(bundle::DIR))?;
    Ok(())
}

fn cmd_predict(a: &PredictArgs) -> Outcome<()> {
    let bundle = Bundle::read(&a.model)?;
    let table = CsvTable::from_path(&a.test)?;
    let covs = &bundle.manifest.covariates;
    let position = |name: &str| table.headers.iter().position(|h| h == name);
    let missing: Vec<&str> = covs.iter().filter(|c| position(c).is_none()).map(String::as_str).collect();
    if !missing.is_empty() {
        return Err(Failure::data(format!(
            "test data lacks covariates: {}",
            missing.join(", ")
        )));
    }
    let cols: Vec<usize> = covs.iter().map(|c| position(c).expect("checked")).collect();
    let y_col = position(&bundle.manifest.response);
    let m = table.rows.len();
    let x_new = DMatrix::from_fn(m, cols.len(), |i, j| table.rows[i][cols[j]]);

    let methods = match &a.methods {
        Some(list) => dedup_methods(list),
        None => bundle.weights.iter().map(|(k, _)| *k).collect(),
    };
    let weights: Vec<&[f64]> = methods
        .iter()
        .map(|k| {
            bundle
                .weights
                .iter()
                .find(|(j, _)| j == k)
                .map(|(_, w)| w.as_slice())
                .ok_or_else(|| Failure::usage(format!("the bundle holds no weights for '{k}'")))
        })
        .collect::<Outcome<_>>()?;

    let per_candidate: Vec<Vec<f64>> = bundle
        .candidates
        .iter()
        .map(|c| {
            predict_index_model(&bundle.train, &c.spec, &c.beta, c.h, &x_new.select_columns(c.spec.indices()))
        })
        .collect::<simavg::Result<_>>()?;
    let preds = DMatrix::from_fn(per_candidate.len(), m, |s, i| per_candidate[s][i]);
    let averaged: Vec<Vec<f64>> = weights.iter().map(|w| combine(w, &preds)).collect();

    create_out(&a.out)?;
    let mut w = csv::Writer::from_path(a.out.join("predictions.csv"))?;
    let mut header = vec!["row".to_string()];
    if y_col.is_some() {
        header.push(bundle.manifest.response.clone());
    }
    header.extend(methods.iter().map(|k| k.name().to_string()));
    header.extend((0..per_candidate.len()).map(|s| format!("candidate_{s}")));
    w.write_record(&header)?;
    for i in 0..m {
        let mut row = vec![i.to_string()];
        if let Some(c) = y_col {
            row.push(fmt_f64(table.rows[i][c]));
        }
        row.extend(averaged.iter().map(|v| fmt_f64(v[i])));
        row.extend(per_candidate.iter().map(|v| fmt_f64(v[i])));
        w.write_record(&row)?;
    }
    w.flush()?;

    if let (Some(c), true) = (y_col, m > 0) {
        let mut w = csv::Writer::from_path(a.out.join("mspe.csv"))?;
        w.write_record(["method", "mspe"])?;
        for (k, v) in methods.iter().zip(&averaged) {
            let mse = (0..m).map(|i| (table.rows[i][c] - v[i]).powi(2)).sum::<f64>() / m as f64;
            w.write_record([k.name().to_string(), fmt_f64(mse)])?;
        }
        w.flush()?;
    }
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_else(|| "NA".into())
}

fn cmd_simulate(a: &SimulateArgs) -> Outcome<()> {
    let mut config = match (&a.config, &a.preset) {
        (Some(path), _) => ExperimentConfig::parse(&fs::read_to_string(path)?)?,
        (None, Some(name)) => ExperimentConfig::preset(name)?,
        (None, None) => return Err(Failure::usage("either --config or --preset is required")),
    };
    if let Some(d) = a.replications {
        config.replications = d;
    }
    if let Some(s) = a.seed {
        config.seed = s;
    }
    let settings = config.settings()?;
    let cells = config.cells()?;
    create_out(&a.out)?;

    let mut reps = csv::Writer::from_path(a.out.join("replications.csv"))?;
    reps.write_record([
        "link",
        "situation",
        "n",
        "r_squared",
        "replication",
        "method",
        "loss",
        "relative_loss",
        "candidate_ratio",
        "selected",
        "n_candidates",
        "dropped",
        "inf_loss",
        "inf_loss_misspecified",
        "l_min",
        "w_delta",
    ])?;
    let mut agg = csv::Writer::from_path(a.out.join("aggregate.csv"))?;
    agg.write_record([
        "link",
        "situation",
        "n",
        "r_squared",
        "method",
        "replications",
        "relative_loss",
        "nmspe",
        "misspecified_relative_loss",
        "weight_consistency",
    ])?;
    for spec in &cells {
        let start = Instant::now();
        let results = run_experiment(spec, &settings, config.replications, config.seed)?;
        if results.is_empty() {
            return Err(Failure::Numerical(format!(
                "every replication failed for situation {} n={} R2={}",
                spec.situation, spec.n_train, spec.r_squared
            )));
        }
        log::info!(
            "situation {} n={} R2={}: {} replications in {:.1?}",
            spec.situation,
            spec.n_train,
            spec.r_squared,
            results.len(),
            start.elapsed()
        );
        let key = [
            spec.link.to_string(),
            spec.situation.to_string(),
            spec.n_train.to_string(),
            fmt_f64(spec.r_squared),
        ];
        write_replications(&mut reps, &key, &results, &settings)?;
        let w_delta = metric_weight_consistency(&results).ok();
        for &m in &settings.methods {
            let mut row = key.to_vec();
            row.extend([
                m.name().to_string(),
                results.len().to_string(),
                opt(metric_relative_loss(&results, m).ok()),
                opt(metric_nmspe(&results, m).ok()),
                opt(metric_misspecified_relative_loss(&results, m).ok()),
                opt(if m == Method::Jcvma { w_delta } else { None }),
            ]);
            agg.write_record(&row)?;
        }
    }
    reps.flush()?;
    agg.flush()?;
    Ok(())
}

fn write_replications<W: std::io::Write>(
    w: &mut csv::Writer<W>,
    key: &[String; 4],
    results: &[ReplicationResult],
    settings: &ExperimentSettings,
) -> Outcome<()> {
    for r in results {
        for &m in &settings.methods {
            let Some(o) = r.outcome(m) else { continue };
            let mut row = key.to_vec();
            row.extend([
                r.replication.to_string(),
                m.name().to_string(),
                fmt_f64(o.loss),
                fmt_f64(o.loss / r.inf_loss),
                fmt_f64(o.loss / r.l_min),
                o.selected.map(|s| s.to_string()).unwrap_or_default(),
                r.n_candidates.to_string(),
                r.dropped.to_string(),
                fmt_f64(r.inf_loss),
                opt(r.inf_loss_misspecified),
                fmt_f64(r.l_min),
                opt(r.w_delta),
            ]);
            w.write_record(&row)?;
        }
    }
    Ok(())
}

fn cmd_time_split(a: &TimeSplitArgs) -> Outcome<()> {
    let m = &a.model;
    check_model_args(m)?;
    let data = Dataset::from_csv_path(&m.data)?;
    let include = resolve_covariates(&m.include, &data)?;
    let exclude = resolve_covariates(&m.exclude, &data)?;
    let candidates = enumerated(&data, &include, &exclude)?;
    let settings = ExperimentSettings {
        methods: dedup_methods(&m.methods),
        block_size: m.block_size,
        kappa_grid: m.kappa_grid.clone(),
        ..ExperimentSettings::default()
    };
    let table = time_split_mspe(&data, &candidates, &a.fractions, &settings)?;
    let normalized = table.normalized()?;
    create_out(&a.out)?;
    let mut w = csv::Writer::from_path(a.out.join("mspe.csv"))?;
    w.write_record(["method", "fraction", "n_train", "mspe", "normalized"])?;
    for (k, method) in table.methods.iter().enumerate() {
        for (c, &f) in table.fractions.iter().enumerate() {
            w.write_record([
                method.name().to_string(),
                fmt_f64(f),
                table.train_sizes[c].to_string(),
                fmt_f64(table.mspe[k][c]),
                fmt_f64(normalized[k][c]),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
