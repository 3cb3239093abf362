use crate::config::RunConfig;
use crate::{Cli, Command, EvalModel, Split, StorageArgs};
use gale_core::cove::{self, CoveCheckpoint, CoveModel, CoveTrainer};
use gale_core::dispatch::{simulate, BaseloadPolicy, DispatchTrace};
use gale_core::econ::{
    annual_report, AnnualMetrics, StorageCatalog, StorageSpec, COVE_DISPLAY_SCALE,
};
use gale_core::error::{Error, Result};
use gale_core::metrics::{
    cross_correlation, pair_series, power_curve_similarity, rmse, BinEdges, JointDensity,
    DEFAULT_BINS,
};
use gale_core::nqf::{self, NqfCheckpoint, NqfModel, NqfTrainer};
use gale_core::series::{ingest_csv, synth_dataset, Channel, SeriesFrame, SynthConfig};
use gale_core::tuner::{
    append_search_log_row, cove_hyper_search, read_search_log, storage_grid_search,
    write_search_log, write_search_log_header, HyperRanges, StorageSearchSpace,
};
use std::fs;
use std::path::{Path, PathBuf};

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::from_path(path)?,
        None => RunConfig::empty(),
    };
    if let Some(seed) = cli.seed {
        cfg.set("data.seed", seed.to_string());
        cfg.set("nqf.seed", seed.to_string());
        cfg.set("cove.seed", seed.to_string());
    }
    fs::create_dir_all(&cli.out_dir)?;

    match &cli.command {
        Command::Synth { years, out } => cmd_synth(&cli, &cfg, *years, out.clone()),
        Command::TrainGen { data, resume, stop_after, epochs, seq_len } => {
            if let Some(e) = epochs {
                cfg.set("nqf.epochs", e.to_string());
            }
            if let Some(s) = seq_len {
                cfg.set("nqf.seq_len", s.to_string());
            }
            cmd_train_gen(&cli, &cfg, data.clone(), resume.clone(), *stop_after)
        }
        Command::TrainDispatch { data, resume, stop_after, epochs, storage } => {
            if let Some(e) = epochs {
                cfg.set("cove.epochs", e.to_string());
            }
            cmd_train_dispatch(&cli, &cfg, data.clone(), resume.clone(), *stop_after, storage)
        }
        Command::Eval { model, ckpt, data, split, target, trace_out, storage } => {
            cmd_eval(&cli, &cfg, *model, ckpt.clone(), data.clone(), *split, *target, trace_out.clone(), storage)
        }
        Command::SearchStorage { data, split, catalog } => {
            cmd_search_storage(&cli, &cfg, data.clone(), *split, catalog.clone())
        }
        Command::SearchHp { data, trials, probe_epochs, storage } => {
            cmd_search_hp(&cli, &cfg, data.clone(), *trials, *probe_epochs, storage)
        }
        Command::Plotdata { data, gen_ckpt, dispatch_ckpt, overlay_hours, storage } => cmd_plotdata(
            &cli,
            &cfg,
            data.clone(),
            gen_ckpt.clone(),
            dispatch_ckpt.clone(),
            *overlay_hours,
            storage,
        ),
    }
}

fn load_frame(cfg: &RunConfig, flag: Option<PathBuf>) -> Result<SeriesFrame> {
    let path = flag
        .or_else(|| cfg.data_path())
        .ok_or_else(|| Error::Config("no dataset given (use --data or data.path)".into()))?;
    if !path.exists() {
        return Err(Error::Config(format!("dataset {} does not exist", path.display())));
    }
    ingest_csv(&path, &cfg.csv_schema())
}

fn pick_split(frame: &SeriesFrame, split: Split, fraction: f64) -> Result<SeriesFrame> {
    match split {
        Split::All => Ok(frame.clone()),
        Split::Train => Ok(frame.split_train_test(fraction)?.0),
        Split::Test => Ok(frame.split_train_test(fraction)?.1),
    }
}

fn load_catalog(cfg: &RunConfig, flag: &Option<PathBuf>) -> Result<StorageCatalog> {
    match flag.clone().or_else(|| cfg.catalog_path()) {
        Some(path) => StorageCatalog::from_path(&path),
        None => Ok(StorageCatalog::builtin()),
    }
}

/// Storage from flags, falling back to config keys.
fn resolve_storage(cfg: &RunConfig, args: &StorageArgs) -> Result<Option<StorageSpec>> {
    let catalog = load_catalog(cfg, &args.catalog)?;
    let choice = match (&args.storage_tech, args.storage_rating, args.storage_duration) {
        (Some(tech), rating, duration) => {
            Some((tech.clone(), rating.unwrap_or(100.0), duration.unwrap_or(24.0)))
        }
        _ => cfg.storage_choice()?,
    };
    match choice {
        Some((tech, rating, duration)) => Ok(Some(catalog.resolve(&tech, rating, duration)?)),
        None => Ok(None),
    }
}

fn require_storage(cfg: &RunConfig, args: &StorageArgs) -> Result<StorageSpec> {
    resolve_storage(cfg, args)?.ok_or_else(|| {
        Error::Config("no storage configured (use --storage-tech or cove.storage.*)".into())
    })
}

fn write_rows(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

// ---------------------------------------------------------------------
// synth

fn cmd_synth(cli: &Cli, cfg: &RunConfig, years: usize, out: Option<PathBuf>) -> Result<()> {
    if years == 0 {
        return Err(Error::Config("--years must be at least 1".into()));
    }
    let farm = cfg.farm()?;
    let frame = synth_dataset(years, cfg.data_seed()?, &farm, &SynthConfig::default())?;
    let path = out.unwrap_or_else(|| cli.out_dir.join("synth.csv"));
    frame.write_csv_path(&path)?;
    println!("wrote {} rows to {}", frame.len(), path.display());
    Ok(())
}

// ---------------------------------------------------------------------
// train-gen

fn write_gen_epochs(path: &Path, metrics: &[nqf::EpochMetric]) -> Result<()> {
    let rows: Vec<Vec<String>> = metrics
        .iter()
        .map(|m| {
            vec![
                m.epoch.to_string(),
                m.train_loss.map(fmt).unwrap_or_default(),
                fmt(m.valid_loss),
            ]
        })
        .collect();
    write_rows(path, &["epoch", "train_loss", "valid_loss"], &rows)
}

fn cmd_train_gen(
    cli: &Cli,
    cfg: &RunConfig,
    data: Option<PathBuf>,
    resume: Option<PathBuf>,
    stop_after: Option<usize>,
) -> Result<()> {
    let frame = load_frame(cfg, data)?;
    let (train, valid) = frame.split_train_test(cfg.train_fraction()?)?;
    let mut trainer = match resume {
        Some(path) => {
            let ckpt: NqfCheckpoint = read_json(&path)?;
            NqfTrainer::from_checkpoint(ckpt)?
        }
        None => NqfTrainer::new(cfg.nqf_config()?, &cfg.farm()?, &train)?,
    };
    let until = stop_after.unwrap_or(usize::MAX);
    let metrics = trainer.run_until(&train, &valid, until)?;

    let ckpt_path = cli.out_dir.join("nqf.ckpt");
    write_json(&ckpt_path, &trainer.checkpoint())?;
    write_gen_epochs(&cli.out_dir.join("nqf_epochs.csv"), &metrics)?;
    println!(
        "trained through epoch {} ({} rows); checkpoint at {}",
        trainer.next_epoch() - 1,
        metrics.len(),
        ckpt_path.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------
// train-dispatch

fn write_cove_epochs(path: &Path, metrics: &[cove::EpochMetric]) -> Result<()> {
    let rows: Vec<Vec<String>> = metrics
        .iter()
        .map(|m| {
            vec![
                m.epoch.to_string(),
                m.train_loss.map(fmt).unwrap_or_default(),
                fmt(m.valid_cove),
            ]
        })
        .collect();
    write_rows(path, &["epoch", "train_loss", "valid_cove"], &rows)
}

fn cmd_train_dispatch(
    cli: &Cli,
    cfg: &RunConfig,
    data: Option<PathBuf>,
    resume: Option<PathBuf>,
    stop_after: Option<usize>,
    storage: &StorageArgs,
) -> Result<()> {
    let frame = load_frame(cfg, data)?;
    let (train, valid) = frame.split_train_test(cfg.train_fraction()?)?;
    let mut trainer = match resume {
        Some(path) => {
            let ckpt: CoveCheckpoint = read_json(&path)?;
            CoveTrainer::from_checkpoint(ckpt)?
        }
        None => {
            let spec = require_storage(cfg, storage)?;
            CoveTrainer::new(cfg.cove_config()?, cfg.farm()?, spec, &train)?
        }
    };
    let until = stop_after.unwrap_or(usize::MAX);
    let metrics = trainer.run_until(&train, &valid, until)?;

    let ckpt_path = cli.out_dir.join("cove.ckpt");
    write_json(&ckpt_path, &trainer.checkpoint())?;
    write_cove_epochs(&cli.out_dir.join("cove_epochs.csv"), &metrics)?;
    println!(
        "trained through epoch {} ({} rows); checkpoint at {}",
        trainer.next_epoch() - 1,
        metrics.len(),
        ckpt_path.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------
// eval

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)
        .map_err(|_| Error::Dependency(format!("missing artifact {}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string(value).map_err(|e| Error::Checkpoint(e.to_string()))?;
    fs::write(path, text)?;
    Ok(())
}

/// Year-chunked windows plus the whole range, labeled for reports.
fn year_windows(len: usize) -> Vec<(String, usize, usize)> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut year = 0;
    while start < len {
        let end = (start + 8760).min(len);
        out.push((format!("year{year}"), start, end));
        start = end;
        year += 1;
    }
    out.push(("all".to_string(), 0, len));
    out
}

fn cmd_eval_gen(cli: &Cli, cfg: &RunConfig, ckpt: Option<PathBuf>, data: Option<PathBuf>, split: Split) -> Result<()> {
    let path = ckpt.ok_or_else(|| Error::Config("--ckpt is required for --model gen".into()))?;
    let checkpoint: NqfCheckpoint = read_json(&path)?;
    let model: NqfModel = checkpoint.model;
    let frame = load_frame(cfg, data)?;
    let eval = pick_split(&frame, split, cfg.train_fraction()?)?;
    let v = eval.require(Channel::WindSpeed)?;
    let g = eval.require(Channel::Generation)?;
    let predicted = nqf::generate(&model, v, cfg.data_seed()?)?;

    let cap = model.capacity_mw;
    let obs_cf: Vec<f64> = g.iter().map(|x| x / cap).collect();
    let pred_cf: Vec<f64> = predicted.iter().map(|x| x / cap).collect();

    let mut rows = Vec::new();
    for (label, lo, hi) in year_windows(eval.len()) {
        let r = rmse(&pred_cf[lo..hi], &obs_cf[lo..hi])?;
        let xc = cross_correlation(&pred_cf[lo..hi], &obs_cf[lo..hi]).ok();
        let sim = power_curve_similarity(
            &pair_series(&v[lo..hi], &obs_cf[lo..hi])?,
            &pair_series(&v[lo..hi], &pred_cf[lo..hi])?,
            DEFAULT_BINS,
            DEFAULT_BINS,
        )?;
        rows.push(vec![
            "gen".to_string(),
            label,
            fmt(r),
            xc.map(fmt).unwrap_or_default(),
            fmt(sim),
        ]);
    }
    let out = cli.out_dir.join("gen_metrics.csv");
    write_rows(&out, &["model", "window", "rmse", "xcorr", "similarity"], &rows)?;

    // Sampled series export alongside the metrics.
    let series_rows: Vec<Vec<String>> = (0..eval.len())
        .map(|t| {
            vec![
                eval.timestamp(t).format("%Y-%m-%dT%H:%M:%S").to_string(),
                fmt(v[t]),
                fmt(predicted[t]),
            ]
        })
        .collect();
    write_rows(&cli.out_dir.join("gen_series.csv"), &["time", "v", "p_pred"], &series_rows)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn population_std(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / values.len() as f64).sqrt()
}

fn dispatch_metric_rows(strategy: &str, report: &[AnnualMetrics]) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for m in report {
        rows.push(vec![
            strategy.to_string(),
            format!("year{}", m.year_index),
            m.hours.to_string(),
            fmt(m.aep_mwh),
            fmt(m.curtailment_mwh),
            fmt(m.storage_utilization),
            m.value_factor.map(fmt).unwrap_or_default(),
            m.cove.map(fmt).unwrap_or_default(),
            m.cove.map(|c| fmt(c * COVE_DISPLAY_SCALE)).unwrap_or_default(),
            m.lcoe.map(fmt).unwrap_or_default(),
        ]);
    }
    // Mean and population-std summary rows over the fully defined years.
    let collect = |f: &dyn Fn(&AnnualMetrics) -> Option<f64>| -> Vec<f64> {
        report.iter().filter_map(f).collect()
    };
    let columns: Vec<(&str, Vec<f64>)> = vec![
        ("aep", collect(&|m| Some(m.aep_mwh))),
        ("curtailment", collect(&|m| Some(m.curtailment_mwh))),
        ("utilization", collect(&|m| Some(m.storage_utilization))),
        ("vf", collect(&|m| m.value_factor)),
        ("cove", collect(&|m| m.cove)),
        ("lcoe", collect(&|m| m.lcoe)),
    ];
    for (stat, pick) in [("mean", 0usize), ("std", 1usize)] {
        let value = |vs: &Vec<f64>| -> String {
            if vs.is_empty() {
                return String::new();
            }
            match pick {
                0 => fmt(vs.iter().sum::<f64>() / vs.len() as f64),
                _ => fmt(population_std(vs)),
            }
        };
        let by_name = |name: &str| -> String {
            value(&columns.iter().find(|(n, _)| *n == name).unwrap().1)
        };
        let cove_scaled = {
            let vs = &columns.iter().find(|(n, _)| *n == "cove").unwrap().1;
            if vs.is_empty() {
                String::new()
            } else {
                let scaled: Vec<f64> = vs.iter().map(|c| c * COVE_DISPLAY_SCALE).collect();
                match pick {
                    0 => fmt(scaled.iter().sum::<f64>() / scaled.len() as f64),
                    _ => fmt(population_std(&scaled)),
                }
            }
        };
        rows.push(vec![
            strategy.to_string(),
            stat.to_string(),
            String::new(),
            by_name("aep"),
            by_name("curtailment"),
            by_name("utilization"),
            by_name("vf"),
            by_name("cove"),
            cove_scaled,
            by_name("lcoe"),
        ]);
    }
    rows
}

const DISPATCH_HEADER: &[&str] = &[
    "strategy",
    "window",
    "hours",
    "aep_mwh",
    "curtailment_mwh",
    "storage_utilization",
    "value_factor",
    "cove",
    "cove_per_kwh_yr",
    "lcoe",
];

fn export_trace(path: &Path, frame: &SeriesFrame, trace: &DispatchTrace) -> Result<()> {
    let g = frame.require(Channel::Generation)?;
    let mut rows = Vec::with_capacity(trace.len());
    for t in 0..trace.len() {
        rows.push(vec![
            frame.timestamp(t).format("%Y-%m-%dT%H:%M:%S").to_string(),
            fmt(g[t]),
            fmt(trace.r_raw[t]),
            fmt(trace.r_prime[t]),
            fmt(trace.s[t]),
            fmt(trace.curtailed[t]),
        ]);
    }
    write_rows(path, &["time", "g", "r_raw", "r_prime", "s", "curtailed"], &rows)
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    cli: &Cli,
    cfg: &RunConfig,
    model: EvalModel,
    ckpt: Option<PathBuf>,
    data: Option<PathBuf>,
    split: Split,
    target: Option<f64>,
    trace_out: Option<PathBuf>,
    storage: &StorageArgs,
) -> Result<()> {
    if model == EvalModel::Gen {
        return cmd_eval_gen(cli, cfg, ckpt, data, split);
    }
    let frame = load_frame(cfg, data)?;
    let fraction = cfg.train_fraction()?;
    let eval = pick_split(&frame, split, fraction)?;

    let (strategy, trace, farm, spec) = match model {
        EvalModel::Dispatch => {
            let path = ckpt.ok_or_else(|| Error::Config("--ckpt is required for --model dispatch".into()))?;
            let checkpoint: CoveCheckpoint = read_json(&path)?;
            let mut m: CoveModel = checkpoint.model;
            // A different storage may be swapped in at evaluation time.
            if let Some(spec) = resolve_storage(cfg, storage)? {
                m.storage = spec;
            }
            let trace = cove::cove_forward(&m, &eval, 0.0)?;
            ("cove-nn", trace, m.farm, m.storage)
        }
        EvalModel::Baseload => {
            let farm = cfg.farm()?;
            let spec = require_storage(cfg, storage)?;
            let train = frame.split_train_test(fraction)?.0;
            let mut policy = match target {
                Some(t) => BaseloadPolicy::new(t, &farm)?,
                None => BaseloadPolicy::from_mean_generation(&train, &farm)?,
            };
            let trace = simulate(&mut policy, &eval, &farm, &spec, 0.0)?;
            ("baseload", trace, farm, spec)
        }
        EvalModel::Gen => unreachable!(),
    };

    let report = annual_report(
        &trace,
        eval.require(Channel::Generation)?,
        &farm,
        &spec,
        eval.require(Channel::Price)?,
    )?;
    let rows = dispatch_metric_rows(strategy, &report);
    let out = cli.out_dir.join("dispatch_metrics.csv");
    write_rows(&out, DISPATCH_HEADER, &rows)?;
    if let Some(path) = trace_out {
        export_trace(&path, &eval, &trace)?;
    }
    println!("wrote {}", out.display());
    Ok(())
}

// ---------------------------------------------------------------------
// search-storage

fn cmd_search_storage(
    cli: &Cli,
    cfg: &RunConfig,
    data: Option<PathBuf>,
    split: Split,
    catalog_flag: Option<PathBuf>,
) -> Result<()> {
    let frame = load_frame(cfg, data)?;
    let eval = pick_split(&frame, split, cfg.train_fraction()?)?;
    let catalog = load_catalog(cfg, &catalog_flag)?;
    let space = StorageSearchSpace::standard();
    let rows = storage_grid_search(&eval, &cfg.farm()?, &catalog, &space)?;
    let out = cli.out_dir.join("storage_search.csv");
    let csv_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.technology.clone(),
                fmt(r.rating_mw),
                fmt(r.duration_h),
                fmt(r.avg_cove),
                fmt(r.avg_cove * COVE_DISPLAY_SCALE),
            ]
        })
        .collect();
    write_rows(
        &out,
        &["technology", "rating_mw", "duration_h", "avg_cove", "avg_cove_per_kwh_yr"],
        &csv_rows,
    )?;
    println!("ranked {} storage configurations into {}", rows.len(), out.display());
    Ok(())
}

// ---------------------------------------------------------------------
// search-hp

fn cmd_search_hp(
    cli: &Cli,
    cfg: &RunConfig,
    data: Option<PathBuf>,
    trials: Option<usize>,
    probe_epochs: Option<usize>,
    storage: &StorageArgs,
) -> Result<()> {
    let frame = load_frame(cfg, data)?;
    let (train, valid) = frame.split_train_test(cfg.train_fraction()?)?;
    let spec = require_storage(cfg, storage)?;
    let base = cfg.cove_config()?;
    let trials = trials.map(Ok).unwrap_or_else(|| cfg.search_trials())?;
    let probe = probe_epochs.map(Ok).unwrap_or_else(|| cfg.search_probe_epochs())?;

    // Resume from an existing log, skipping completed trials. Each new
    // trial is appended to the log as it finishes, so an interrupted
    // search resumes without repeating work; the finished log is then
    // rewritten once with the best flag set.
    let log_path = cli.out_dir.join("hp_search.csv");
    let existing = if log_path.exists() {
        read_search_log(fs::File::open(&log_path)?)?
    } else {
        write_search_log_header(fs::File::create(&log_path)?)?;
        Vec::new()
    };
    let done = existing.len();

    let append_log = std::sync::Mutex::new(fs::OpenOptions::new().append(true).open(&log_path)?);
    let sink = |record: &gale_core::tuner::TrialRecord| {
        let file = append_log.lock().expect("log lock");
        if let Err(e) = append_search_log_row(&*file, record) {
            eprintln!("warning: could not append to search log: {e}");
        }
    };

    let outcome = cove_hyper_search(
        &train,
        &valid,
        &base,
        &cfg.farm()?,
        &spec,
        &HyperRanges::default(),
        trials,
        probe,
        base.seed,
        cli.serial,
        &existing,
        Some(&sink),
    )?;
    drop(append_log);
    write_search_log(fs::File::create(&log_path)?, &outcome.records)?;
    println!(
        "search complete: {} trials ({} resumed), log at {}",
        outcome.records.len(),
        done,
        log_path.display()
    );
    if let Some(best) = outcome.best_trial {
        let r = &outcome.records[best];
        println!(
            "best trial {} (cove {:.6}): gamma={:.3} Gamma={:.3} omega={:.3} Omega={:.3} Lambda={:.3}",
            r.trial,
            r.best_cove().unwrap_or(f64::NAN),
            r.hp.peaking_prefactor,
            r.hp.peaking_degree,
            r.hp.baseload_prefactor,
            r.hp.baseload_degree,
            r.hp.adaptive_degree,
        );
    }
    Ok(())
}

// ---------------------------------------------------------------------
// plotdata

#[allow(clippy::too_many_arguments)]
fn cmd_plotdata(
    cli: &Cli,
    cfg: &RunConfig,
    data: Option<PathBuf>,
    gen_ckpt: Option<PathBuf>,
    dispatch_ckpt: Option<PathBuf>,
    overlay_hours: usize,
    storage: &StorageArgs,
) -> Result<()> {
    if gen_ckpt.is_none() && dispatch_ckpt.is_none() {
        return Err(Error::Config(
            "plotdata needs --gen-ckpt and/or --dispatch-ckpt".into(),
        ));
    }
    let frame = load_frame(cfg, data)?;
    let fraction = cfg.train_fraction()?;
    let eval = pick_split(&frame, Split::Test, fraction)?;

    if let Some(path) = gen_ckpt {
        let checkpoint: NqfCheckpoint = read_json(&path)?;
        let model = checkpoint.model;
        let v = eval.require(Channel::WindSpeed)?;
        let g = eval.require(Channel::Generation)?;
        let predicted = nqf::generate(&model, v, cfg.data_seed()?)?;

        // Time-series overlay.
        let keep = overlay_hours.min(eval.len());
        let mut rows = Vec::with_capacity(keep);
        for t in 0..keep {
            rows.push(vec![
                eval.timestamp(t).format("%Y-%m-%dT%H:%M:%S").to_string(),
                fmt(v[t]),
                fmt(g[t]),
                fmt(predicted[t]),
            ]);
        }
        write_rows(&cli.out_dir.join("overlay.csv"), &["time", "v", "g_obs", "g_pred"], &rows)?;

        // Joint densities on shared bins, log-transformed, plus the
        // mass difference.
        let cap = model.capacity_mw;
        let obs_pairs = pair_series(v, &g.iter().map(|x| x / cap).collect::<Vec<_>>())?;
        let pred_pairs = pair_series(v, &predicted.iter().map(|x| x / cap).collect::<Vec<_>>())?;
        let edges = BinEdges::spanning(&obs_pairs, &pred_pairs, DEFAULT_BINS, DEFAULT_BINS)?;
        let hist = JointDensity::from_points(&obs_pairs, &edges)?;
        let pred = JointDensity::from_points(&pred_pairs, &edges)?;
        let ny = edges.y.len() - 1;
        let mut rows = Vec::new();
        let log10 = |m: f64| fmt((m + 1e-12).log10());
        for i in 0..edges.x.len() - 1 {
            for j in 0..ny {
                let a = hist.mass[i * ny + j];
                let b = pred.mass[i * ny + j];
                rows.push(vec![
                    fmt(edges.x[i]),
                    fmt(edges.x[i + 1]),
                    fmt(edges.y[j]),
                    fmt(edges.y[j + 1]),
                    fmt(a),
                    fmt(b),
                    log10(a),
                    log10(b),
                    fmt(a - b),
                ]);
            }
        }
        write_rows(
            &cli.out_dir.join("densities.csv"),
            &["v_lo", "v_hi", "p_lo", "p_hi", "hist_mass", "pred_mass", "log_hist", "log_pred", "diff"],
            &rows,
        )?;
    }

    if let Some(path) = dispatch_ckpt {
        let checkpoint: CoveCheckpoint = read_json(&path)?;
        let mut model: CoveModel = checkpoint.model;
        if let Some(spec) = resolve_storage(cfg, storage)? {
            model.storage = spec;
        }
        let farm = model.farm;
        let spec = model.storage.clone();
        let g = eval.require(Channel::Generation)?;
        let p = eval.require(Channel::Price)?;

        let model_trace = cove::cove_forward(&model, &eval, 0.0)?;
        let train = frame.split_train_test(fraction)?.0;
        let mut policy = BaseloadPolicy::from_mean_generation(&train, &farm)?;
        let base_trace = simulate(&mut policy, &eval, &farm, &spec, 0.0)?;

        let keep = overlay_hours.min(eval.len());
        let mut rows = Vec::with_capacity(keep);
        for t in 0..keep {
            rows.push(vec![
                eval.timestamp(t).format("%Y-%m-%dT%H:%M:%S").to_string(),
                fmt(g[t]),
                fmt(model_trace.r_prime[t]),
                fmt(base_trace.r_prime[t]),
            ]);
        }
        write_rows(
            &cli.out_dir.join("dispatch_overlay.csv"),
            &["time", "g", "r_prime_cove_nn", "r_prime_baseload"],
            &rows,
        )?;

        let mut rows = Vec::with_capacity(keep);
        for t in 0..keep {
            rows.push(vec![
                eval.timestamp(t).format("%Y-%m-%dT%H:%M:%S").to_string(),
                fmt(model_trace.s[t]),
                fmt(base_trace.s[t]),
                fmt(spec.capacity_mwh()),
            ]);
        }
        write_rows(
            &cli.out_dir.join("storage_trace.csv"),
            &["time", "s_cove_nn", "s_baseload", "capacity_mwh"],
            &rows,
        )?;

        // Per-year metrics for both strategies, then mean/std bars.
        let model_report = annual_report(&model_trace, g, &farm, &spec, p)?;
        let base_report = annual_report(&base_trace, g, &farm, &spec, p)?;
        let mut rows = Vec::new();
        for (strategy, report) in [("cove-nn", &model_report), ("baseload", &base_report)] {
            for m in report {
                rows.push(vec![
                    strategy.to_string(),
                    m.year_index.to_string(),
                    m.cove.map(fmt).unwrap_or_default(),
                    m.value_factor.map(fmt).unwrap_or_default(),
                    fmt(m.aep_mwh),
                    fmt(m.curtailment_mwh),
                    fmt(m.storage_utilization),
                ]);
            }
        }
        write_rows(
            &cli.out_dir.join("cove_by_year.csv"),
            &["strategy", "year", "cove", "vf", "aep_mwh", "curtailment_mwh", "utilization"],
            &rows,
        )?;

        let mut rows = Vec::new();
        for (strategy, report) in [("cove-nn", &model_report), ("baseload", &base_report)] {
            let metrics: Vec<(&str, Vec<f64>)> = vec![
                ("cove", report.iter().filter_map(|m| m.cove).collect()),
                ("vf", report.iter().filter_map(|m| m.value_factor).collect()),
                ("aep_mwh", report.iter().map(|m| m.aep_mwh).collect()),
                ("curtailment_mwh", report.iter().map(|m| m.curtailment_mwh).collect()),
                ("utilization", report.iter().map(|m| m.storage_utilization).collect()),
            ];
            for (name, values) in metrics {
                if values.is_empty() {
                    continue;
                }
                let mean = values.iter().sum::<f64>() / values.len() as f64;
                rows.push(vec![
                    strategy.to_string(),
                    name.to_string(),
                    fmt(mean),
                    fmt(population_std(&values)),
                ]);
            }
        }
        write_rows(&cli.out_dir.join("cove_bars.csv"), &["strategy", "metric", "mean", "std"], &rows)?;
    }

    println!("plot data written to {}", cli.out_dir.display());
    Ok(())
}
