//! Search procedures: exhaustive storage grid search under the baseload
//! policy, and random hyperparameter search for the dispatch network
//! with COVE-based early termination.

use crate::cove::{baseload_average_cove, CoveConfig, CoveTrainer, LossHyperparams};
use crate::econ::{FarmSpec, StorageCatalog, StorageSpec};
use crate::error::{Error, Result};
use crate::exec;
use crate::rng::mix_seed;
use crate::series::SeriesFrame;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::sync::Mutex;

/// Candidate (technology, rating, duration) triples.
#[derive(Debug, Clone, PartialEq)]
pub struct StorageSearchSpace {
    pub candidates: Vec<(String, f64, f64)>,
}

impl StorageSearchSpace {
    /// The full grid: both ratings crossed with each technology's
    /// duration set.
    pub fn standard() -> Self {
        let table: &[(&str, &[f64])] = &[
            ("Lithium-Ion", &[2.0, 4.0, 6.0, 8.0, 10.0, 24.0, 100.0]),
            ("Hydropower", &[4.0, 10.0, 24.0, 100.0]),
            ("CAES", &[4.0, 10.0, 24.0, 100.0]),
            ("Hydrogen", &[10.0, 24.0, 100.0]),
            ("Gravitational", &[2.0, 4.0, 6.0, 8.0, 10.0, 24.0, 100.0]),
            ("Thermal", &[4.0, 6.0, 8.0, 10.0, 24.0, 100.0]),
        ];
        let mut candidates = Vec::new();
        for (tech, durations) in table {
            for rating in [100.0, 1000.0] {
                for d in *durations {
                    candidates.push((tech.to_string(), rating, *d));
                }
            }
        }
        Self { candidates }
    }

    pub fn single(technology: &str, rating_mw: f64, duration_h: f64) -> Self {
        Self { candidates: vec![(technology.to_string(), rating_mw, duration_h)] }
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }
}

/// One grid-search result row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StorageRanking {
    pub technology: String,
    pub rating_mw: f64,
    pub duration_h: f64,
    pub avg_cove: f64,
}

/// Simulates the baseload policy against every candidate storage system
/// and returns the candidates ranked by ascending average annual COVE.
pub fn storage_grid_search(
    frame: &SeriesFrame,
    farm: &FarmSpec,
    catalog: &StorageCatalog,
    space: &StorageSearchSpace,
) -> Result<Vec<StorageRanking>> {
    if space.is_empty() {
        return Err(Error::Config("storage search space is empty".into()));
    }
    // Resolve everything up front so a catalog miss fails fast.
    let specs: Vec<StorageSpec> = space
        .candidates
        .iter()
        .map(|(tech, rating, duration)| catalog.resolve(tech, *rating, *duration))
        .collect::<Result<_>>()?;

    let results = exec::map_collect(&specs, |spec| -> Result<StorageRanking> {
        let avg = baseload_average_cove(frame, frame, farm, spec)?;
        Ok(StorageRanking {
            technology: spec.technology.clone(),
            rating_mw: spec.rating_mw,
            duration_h: spec.duration_h,
            avg_cove: avg,
        })
    });
    let mut rows = Vec::with_capacity(specs.len());
    for r in results {
        rows.push(r?);
    }
    rows.sort_by(|a, b| a.avg_cove.partial_cmp(&b.avg_cove).expect("finite COVE"));
    Ok(rows)
}

/// Uniform sampling ranges for the searched loss hyperparameters. The
/// adaptive pre-factor and delay are held fixed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperRanges {
    pub peaking_prefactor: (f64, f64),
    pub peaking_degree: (f64, f64),
    pub baseload_prefactor: (f64, f64),
    pub baseload_degree: (f64, f64),
    pub adaptive_degree: (f64, f64),
    pub adaptive_prefactor: f64,
    pub adaptive_delay: usize,
}

impl Default for HyperRanges {
    fn default() -> Self {
        Self {
            peaking_prefactor: (0.0, 3.0),
            peaking_degree: (0.0, 3.0),
            baseload_prefactor: (0.0, 5.0),
            baseload_degree: (0.0, 5.0),
            adaptive_degree: (0.125, 0.25),
            adaptive_prefactor: 1.0,
            adaptive_delay: 8,
        }
    }
}

impl HyperRanges {
    pub fn validate(&self) -> Result<()> {
        for (lo, hi) in [
            self.peaking_prefactor,
            self.peaking_degree,
            self.baseload_prefactor,
            self.baseload_degree,
            self.adaptive_degree,
        ] {
            if !(lo < hi) {
                return Err(Error::Config(format!("range ({lo}, {hi}) is empty")));
            }
        }
        Ok(())
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> LossHyperparams {
        // Strictly inside the open interval.
        let mut draw = |lo: f64, hi: f64| loop {
            let x = rng.random_range(lo..hi);
            if x > lo {
                return x;
            }
        };
        LossHyperparams {
            peaking_prefactor: draw(self.peaking_prefactor.0, self.peaking_prefactor.1),
            peaking_degree: draw(self.peaking_degree.0, self.peaking_degree.1),
            baseload_prefactor: draw(self.baseload_prefactor.0, self.baseload_prefactor.1),
            baseload_degree: draw(self.baseload_degree.0, self.baseload_degree.1),
            adaptive_degree: draw(self.adaptive_degree.0, self.adaptive_degree.1),
            adaptive_prefactor: self.adaptive_prefactor,
            adaptive_delay: self.adaptive_delay,
        }
    }
}

/// Outcome of one search trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    pub hp: LossHyperparams,
    /// Validation COVE after each completed epoch (1-based epochs).
    pub epoch_coves: Vec<f64>,
    pub epochs_run: usize,
    pub terminated_early: bool,
    pub failed: bool,
    pub best: bool,
}

impl TrialRecord {
    /// Lowest validation COVE the trial reached.
    pub fn best_cove(&self) -> Option<f64> {
        self.epoch_coves.iter().copied().fold(None, |acc: Option<f64>, v| {
            Some(acc.map_or(v, |a| a.min(v)))
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub records: Vec<TrialRecord>,
    /// Index into `records` of the best trial, if any succeeded.
    pub best_trial: Option<usize>,
}

/// Random hyperparameter search. Each trial trains with freshly sampled
/// loss hyperparameters; at the probe epoch its validation COVE must
/// strictly beat the incumbent minimum or the trial stops early.
/// Surviving trials update the incumbent after every later epoch.
///
/// Trials run in parallel unless `serial` is set; the shared incumbent
/// makes parallel termination decisions order-dependent, so only serial
/// runs are exactly reproducible. `on_trial`, when given, sees every
/// record as it completes (callers use it to append to a crash-safe
/// log); records from `existing` are treated as already logged and
/// resumed past.
#[allow(clippy::too_many_arguments)]
pub fn cove_hyper_search(
    train: &SeriesFrame,
    valid: &SeriesFrame,
    base_config: &CoveConfig,
    farm: &FarmSpec,
    storage: &StorageSpec,
    ranges: &HyperRanges,
    trials: usize,
    probe_epochs: usize,
    seed: u64,
    serial: bool,
    existing: &[TrialRecord],
    on_trial: Option<&(dyn Fn(&TrialRecord) + Sync)>,
) -> Result<SearchOutcome> {
    if trials == 0 {
        return Err(Error::Config("need at least one trial".into()));
    }
    ranges.validate()?;
    base_config.validate()?;
    let next_trial = existing.iter().map(|r| r.trial + 1).max().unwrap_or(0);
    if next_trial >= trials {
        return Ok(finish(existing.to_vec()));
    }

    let incumbent = Mutex::new(replay_incumbent(existing, probe_epochs));
    let run_trial = |offset: usize| -> TrialRecord {
        let trial = next_trial + offset;
        let trial_seed = seed.wrapping_add(trial as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(trial_seed, 0xA11CE));
        let hp = ranges.sample(&mut rng);
        let config = CoveConfig { hp, seed: trial_seed, ..base_config.clone() };
        let epochs = config.epochs;

        let mut record = TrialRecord {
            trial,
            seed: trial_seed,
            hp,
            epoch_coves: Vec::new(),
            epochs_run: 0,
            terminated_early: false,
            failed: false,
            best: false,
        };

        let trainer = CoveTrainer::new(config, *farm, storage.clone(), train);
        let outcome = trainer.and_then(|mut t| {
            t.run_with_callback(train, valid, epochs, |m| {
                if m.epoch == 0 {
                    return true;
                }
                record.epoch_coves.push(m.valid_cove);
                record.epochs_run = m.epoch;
                if m.epoch == probe_epochs {
                    let mut best = incumbent.lock().expect("incumbent lock");
                    if m.valid_cove < *best {
                        *best = m.valid_cove;
                        true
                    } else {
                        record.terminated_early = true;
                        false
                    }
                } else {
                    if m.epoch > probe_epochs {
                        let mut best = incumbent.lock().expect("incumbent lock");
                        if m.valid_cove < *best {
                            *best = m.valid_cove;
                        }
                    }
                    true
                }
            })
        });
        if outcome.is_err() {
            record.failed = true;
        }
        if let Some(sink) = on_trial {
            sink(&record);
        }
        record
    };

    let remaining = trials - next_trial;
    let fresh = if serial {
        exec::map_indices_seq(remaining, run_trial)
    } else {
        exec::map_indices(remaining, run_trial)
    };
    let mut records = existing.to_vec();
    records.extend(fresh);
    Ok(finish(records))
}

fn finish(mut records: Vec<TrialRecord>) -> SearchOutcome {
    for r in &mut records {
        r.best = false;
    }
    let best_trial = records
        .iter()
        .enumerate()
        .filter(|(_, r)| !r.failed)
        .filter_map(|(i, r)| r.best_cove().map(|c| (i, c)))
        .min_by(|a, b| a.1.partial_cmp(&b.1).expect("finite COVE"))
        .map(|(i, _)| i);
    if let Some(i) = best_trial {
        records[i].best = true;
    }
    SearchOutcome { records, best_trial }
}

/// Reconstructs the incumbent minimum from completed trial records:
/// early-terminated trials never updated it; surviving trials
/// contributed their probe-and-later epoch values.
fn replay_incumbent(records: &[TrialRecord], probe_epochs: usize) -> f64 {
    let mut incumbent = f64::INFINITY;
    for r in records {
        if r.failed || r.terminated_early {
            continue;
        }
        for (i, cove) in r.epoch_coves.iter().enumerate() {
            if i + 1 >= probe_epochs && *cove < incumbent {
                incumbent = *cove;
            }
        }
    }
    incumbent
}

const LOG_HEADER: &[&str] = &[
    "trial",
    "seed",
    "peaking_prefactor",
    "peaking_degree",
    "baseload_prefactor",
    "baseload_degree",
    "adaptive_prefactor",
    "adaptive_degree",
    "adaptive_delay",
    "epochs_run",
    "terminated_early",
    "failed",
    "best",
    "best_cove",
    "epoch_coves",
];

fn record_row(r: &TrialRecord) -> Vec<String> {
    let coves: Vec<String> = r.epoch_coves.iter().map(|c| format!("{c}")).collect();
    vec![
        r.trial.to_string(),
        r.seed.to_string(),
        format!("{}", r.hp.peaking_prefactor),
        format!("{}", r.hp.peaking_degree),
        format!("{}", r.hp.baseload_prefactor),
        format!("{}", r.hp.baseload_degree),
        format!("{}", r.hp.adaptive_prefactor),
        format!("{}", r.hp.adaptive_degree),
        r.hp.adaptive_delay.to_string(),
        r.epochs_run.to_string(),
        r.terminated_early.to_string(),
        r.failed.to_string(),
        r.best.to_string(),
        r.best_cove().map(|c| format!("{c}")).unwrap_or_default(),
        coves.join(";"),
    ]
}

/// Writes trial records as the search-log CSV.
pub fn write_search_log<W: Write>(writer: W, records: &[TrialRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(LOG_HEADER)?;
    for r in records {
        w.write_record(&record_row(r))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes only the log header (the start of an incremental log).
pub fn write_search_log_header<W: Write>(writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(LOG_HEADER)?;
    w.flush()?;
    Ok(())
}

/// Appends one record to an incremental log opened without a header.
pub fn append_search_log_row<W: Write>(writer: W, record: &TrialRecord) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    w.write_record(&record_row(record))?;
    w.flush()?;
    Ok(())
}

/// Reads a search-log CSV back into records (for resuming).
pub fn read_search_log<R: Read>(reader: R) -> Result<Vec<TrialRecord>> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(reader);
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let field = |i: usize| -> &str { record.get(i).unwrap_or("") };
        let num = |i: usize| -> Result<f64> {
            field(i)
                .parse()
                .map_err(|_| Error::Schema(format!("search log: bad number `{}`", field(i))))
        };
        let epoch_coves = if field(14).is_empty() {
            Vec::new()
        } else {
            field(14)
                .split(';')
                .map(|s| s.parse::<f64>().map_err(|_| Error::Schema("search log: bad epoch cove".into())))
                .collect::<Result<Vec<f64>>>()?
        };
        out.push(TrialRecord {
            trial: field(0).parse().map_err(|_| Error::Schema("bad trial index".into()))?,
            seed: field(1).parse().map_err(|_| Error::Schema("bad seed".into()))?,
            hp: LossHyperparams {
                peaking_prefactor: num(2)?,
                peaking_degree: num(3)?,
                baseload_prefactor: num(4)?,
                baseload_degree: num(5)?,
                adaptive_prefactor: num(6)?,
                adaptive_degree: num(7)?,
                adaptive_delay: field(8).parse().map_err(|_| Error::Schema("bad delay".into()))?,
            },
            epochs_run: field(9).parse().map_err(|_| Error::Schema("bad epochs_run".into()))?,
            terminated_early: field(10) == "true",
            failed: field(11) == "true",
            best: field(12) == "true",
            epoch_coves,
        });
    }
    Ok(out)
}
