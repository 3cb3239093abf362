//! Aligned hourly multivariate time series: ingestion, validation,
//! splitting, batching, and deterministic synthetic data.

use crate::econ::FarmSpec;
use crate::error::{Error, Result};
use chrono::{Duration, NaiveDate, NaiveDateTime};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

/// The four channels a frame can carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Channel {
    /// Wind speed, m/s.
    WindSpeed,
    /// Generated power, MW.
    Generation,
    /// Electricity price, $/MWh (may be negative).
    Price,
    /// User load, MW.
    Load,
}

impl Channel {
    pub const ALL: [Channel; 4] = [Channel::WindSpeed, Channel::Generation, Channel::Price, Channel::Load];

    pub fn key(&self) -> &'static str {
        match self {
            Channel::WindSpeed => "v",
            Channel::Generation => "g",
            Channel::Price => "p",
            Channel::Load => "u",
        }
    }

    pub fn from_key(key: &str) -> Option<Channel> {
        match key {
            "v" => Some(Channel::WindSpeed),
            "g" => Some(Channel::Generation),
            "p" => Some(Channel::Price),
            "u" => Some(Channel::Load),
            _ => None,
        }
    }

    /// Negative values are legal only for prices.
    fn allows_negative(&self) -> bool {
        matches!(self, Channel::Price)
    }
}

/// Gaps longer than this many consecutive hours are a data-quality error
/// rather than something to interpolate over.
pub const MAX_GAP_HOURS: usize = 6;
/// More than this fraction of gap cells in a channel is a data-quality error.
pub const MAX_GAP_FRACTION: f64 = 0.05;

/// An aligned hourly multivariate series. All present channels share one
/// length; timestamps are hourly from `start`. Immutable after
/// construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesFrame {
    start: NaiveDateTime,
    len: usize,
    channels: BTreeMap<Channel, Vec<f64>>,
}

/// Default start timestamp for frames built without one (synthetic data,
/// tests). A non-leap year keeps "one year" at exactly 8760 rows.
fn default_start() -> NaiveDateTime {
    NaiveDate::from_ymd_opt(2001, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap()
}

pub struct SeriesFrameBuilder {
    start: NaiveDateTime,
    channels: BTreeMap<Channel, Vec<f64>>,
}

impl SeriesFrameBuilder {
    pub fn start(mut self, start: NaiveDateTime) -> Self {
        self.start = start;
        self
    }

    pub fn channel(mut self, channel: Channel, values: Vec<f64>) -> Self {
        self.channels.insert(channel, values);
        self
    }

    pub fn wind_speed(self, values: Vec<f64>) -> Self {
        self.channel(Channel::WindSpeed, values)
    }

    pub fn generation(self, values: Vec<f64>) -> Self {
        self.channel(Channel::Generation, values)
    }

    pub fn price(self, values: Vec<f64>) -> Self {
        self.channel(Channel::Price, values)
    }

    pub fn load(self, values: Vec<f64>) -> Self {
        self.channel(Channel::Load, values)
    }

    pub fn build(self) -> Result<SeriesFrame> {
        let mut len = None;
        for (channel, values) in &self.channels {
            if values.is_empty() {
                return Err(Error::Size(format!("channel {} is empty", channel.key())));
            }
            match len {
                None => len = Some(values.len()),
                Some(l) if l != values.len() => {
                    return Err(Error::Size(format!(
                        "channel {} has length {}, expected {}",
                        channel.key(),
                        values.len(),
                        l
                    )))
                }
                _ => {}
            }
            for (i, v) in values.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::NonFinite(format!("channel {} at row {i}", channel.key())));
                }
                if *v < 0.0 && !channel.allows_negative() {
                    return Err(Error::DataQuality(format!(
                        "channel {} has negative value {v} at row {i}",
                        channel.key()
                    )));
                }
            }
        }
        let len = len.ok_or_else(|| Error::Size("frame has no channels".into()))?;
        Ok(SeriesFrame { start: self.start, len, channels: self.channels })
    }
}

impl SeriesFrame {
    pub fn builder() -> SeriesFrameBuilder {
        SeriesFrameBuilder { start: default_start(), channels: BTreeMap::new() }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn start(&self) -> NaiveDateTime {
        self.start
    }

    pub fn timestamp(&self, index: usize) -> NaiveDateTime {
        self.start + Duration::hours(index as i64)
    }

    pub fn channel(&self, channel: Channel) -> Option<&[f64]> {
        self.channels.get(&channel).map(|v| v.as_slice())
    }

    pub fn has(&self, channel: Channel) -> bool {
        self.channels.contains_key(&channel)
    }

    pub fn wind_speed(&self) -> Option<&[f64]> {
        self.channel(Channel::WindSpeed)
    }

    pub fn generation(&self) -> Option<&[f64]> {
        self.channel(Channel::Generation)
    }

    pub fn price(&self) -> Option<&[f64]> {
        self.channel(Channel::Price)
    }

    pub fn load(&self) -> Option<&[f64]> {
        self.channel(Channel::Load)
    }

    pub fn require(&self, channel: Channel) -> Result<&[f64]> {
        self.channel(channel)
            .ok_or_else(|| Error::Schema(format!("frame is missing channel {}", channel.key())))
    }

    /// Contiguous sub-frame `[from, to)`.
    pub fn slice(&self, from: usize, to: usize) -> Result<SeriesFrame> {
        if from >= to || to > self.len {
            return Err(Error::Size(format!("slice [{from}, {to}) outside frame of length {}", self.len)));
        }
        let channels = self
            .channels
            .iter()
            .map(|(c, v)| (*c, v[from..to].to_vec()))
            .collect();
        Ok(SeriesFrame { start: self.timestamp(from), len: to - from, channels })
    }

    /// Chronological prefix/suffix split at the nearest hour boundary.
    pub fn split_train_test(&self, train_fraction: f64) -> Result<(SeriesFrame, SeriesFrame)> {
        if !(0.0..1.0).contains(&train_fraction) || train_fraction == 0.0 {
            return Err(Error::Contract(format!("train fraction {train_fraction} outside (0, 1)")));
        }
        if self.len < 2 {
            return Err(Error::Size("cannot split a frame shorter than 2 steps".into()));
        }
        let cut = ((self.len as f64) * train_fraction).round() as usize;
        let cut = cut.clamp(1, self.len - 1);
        Ok((self.slice(0, cut)?, self.slice(cut, self.len)?))
    }

    /// Repeats every channel cyclically to reach `target_len` rows (used
    /// to stretch shorter co-variate histories over a longer generation
    /// record).
    pub fn tile_to(&self, target_len: usize) -> Result<SeriesFrame> {
        if target_len == 0 {
            return Err(Error::Size("target length must be positive".into()));
        }
        let channels = self
            .channels
            .iter()
            .map(|(c, v)| {
                let tiled: Vec<f64> = v.iter().cycle().take(target_len).copied().collect();
                (*c, tiled)
            })
            .collect();
        Ok(SeriesFrame { start: self.start, len: target_len, channels })
    }

    /// Appends `other`; timestamps must continue seamlessly and the
    /// channel sets must match.
    pub fn concat(&self, other: &SeriesFrame) -> Result<SeriesFrame> {
        if other.start != self.timestamp(self.len) {
            return Err(Error::Alignment("frames are not contiguous in time".into()));
        }
        if self.channels.keys().ne(other.channels.keys()) {
            return Err(Error::Schema("frames carry different channels".into()));
        }
        let channels = self
            .channels
            .iter()
            .map(|(c, v)| {
                let mut joined = v.clone();
                joined.extend_from_slice(&other.channels[c]);
                (*c, joined)
            })
            .collect();
        Ok(SeriesFrame { start: self.start, len: self.len + other.len, channels })
    }

    /// Writes the frame as CSV with an ISO-8601 `time` column followed by
    /// one column per present channel (keys v, g, p, u).
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["time".to_string()];
        for c in Channel::ALL {
            if self.has(c) {
                header.push(c.key().to_string());
            }
        }
        w.write_record(&header)?;
        for i in 0..self.len {
            let mut row = vec![self.timestamp(i).format("%Y-%m-%dT%H:%M:%S").to_string()];
            for c in Channel::ALL {
                if let Some(values) = self.channel(c) {
                    row.push(format!("{}", values[i]));
                }
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv_path(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(file)
    }
}

/// Maps channels to CSV column names. Channels absent from the map are
/// not ingested.
#[derive(Debug, Clone, Default)]
pub struct CsvSchema {
    pub columns: BTreeMap<Channel, String>,
}

impl CsvSchema {
    /// Column names equal to the channel keys v, g, p, u.
    pub fn standard() -> Self {
        let mut columns = BTreeMap::new();
        for c in Channel::ALL {
            columns.insert(c, c.key().to_string());
        }
        Self { columns }
    }

    pub fn with_column(mut self, channel: Channel, column: &str) -> Self {
        self.columns.insert(channel, column.to_string());
        self
    }

    pub fn only(channels: &[Channel]) -> Self {
        let mut columns = BTreeMap::new();
        for c in channels {
            columns.insert(*c, c.key().to_string());
        }
        Self { columns }
    }
}

fn parse_timestamp(raw: &str) -> Result<NaiveDateTime> {
    let raw = raw.trim().trim_end_matches('Z');
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"] {
        if let Ok(ts) = NaiveDateTime::parse_from_str(raw, fmt) {
            return Ok(ts);
        }
    }
    Err(Error::Alignment(format!("unparseable timestamp `{raw}`")))
}

/// Reads a CSV file into a validated frame. The `time` column must be
/// complete, strictly increasing, and hourly. Unparseable or empty value
/// cells become gaps; interior gaps of at most [`MAX_GAP_HOURS`] are
/// linearly interpolated, anything worse is an error.
pub fn ingest_csv(path: &Path, schema: &CsvSchema) -> Result<SeriesFrame> {
    let file = std::fs::File::open(path)?;
    ingest_csv_reader(file, schema)
}

pub fn ingest_csv_reader<R: Read>(reader: R, schema: &CsvSchema) -> Result<SeriesFrame> {
    if schema.columns.is_empty() {
        return Err(Error::Schema("schema maps no channels".into()));
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let time_idx = headers
        .iter()
        .position(|h| h == "time")
        .ok_or_else(|| Error::Schema("missing column `time`".into()))?;
    let mut channel_idx: BTreeMap<Channel, usize> = BTreeMap::new();
    for (channel, column) in &schema.columns {
        let idx = headers
            .iter()
            .position(|h| h == column)
            .ok_or_else(|| Error::Schema(format!("missing column `{column}`")))?;
        channel_idx.insert(*channel, idx);
    }

    let mut timestamps: Vec<NaiveDateTime> = Vec::new();
    let mut raw: BTreeMap<Channel, Vec<f64>> = channel_idx.keys().map(|c| (*c, Vec::new())).collect();
    for record in rdr.records() {
        let record = record?;
        timestamps.push(parse_timestamp(&record[time_idx])?);
        for (channel, idx) in &channel_idx {
            let cell = record.get(*idx).unwrap_or("");
            let value = cell.parse::<f64>().unwrap_or(f64::NAN);
            raw.get_mut(channel).unwrap().push(value);
        }
    }
    if timestamps.is_empty() {
        return Err(Error::Size("file has no data rows".into()));
    }
    for pair in timestamps.windows(2) {
        let delta = pair[1] - pair[0];
        if delta != Duration::hours(1) {
            return Err(Error::Alignment(format!(
                "timestamps {} -> {} are not consecutive hours",
                pair[0], pair[1]
            )));
        }
    }

    let mut builder = SeriesFrame::builder().start(timestamps[0]);
    for (channel, mut values) in raw {
        fill_gaps(channel, &mut values)?;
        builder = builder.channel(channel, values);
    }
    builder.build()
}

/// Linear interpolation over interior NaN runs of bounded length.
fn fill_gaps(channel: Channel, values: &mut [f64]) -> Result<()> {
    let n = values.len();
    let gap_count = values.iter().filter(|v| v.is_nan()).count();
    if gap_count == 0 {
        return Ok(());
    }
    // The fraction limit gets an absolute floor of one maximal run so a
    // single short gap in a small file remains interpolatable.
    let allowed = (MAX_GAP_FRACTION * n as f64).max(MAX_GAP_HOURS as f64);
    if gap_count as f64 > allowed {
        return Err(Error::DataQuality(format!(
            "channel {}: {gap_count}/{n} cells are gaps (limit {:.0}%)",
            channel.key(),
            MAX_GAP_FRACTION * 100.0
        )));
    }
    let mut i = 0;
    while i < n {
        if !values[i].is_nan() {
            i += 1;
            continue;
        }
        let run_start = i;
        while i < n && values[i].is_nan() {
            i += 1;
        }
        let run_len = i - run_start;
        if run_start == 0 || i == n {
            return Err(Error::DataQuality(format!(
                "channel {}: gap at series edge cannot be interpolated",
                channel.key()
            )));
        }
        if run_len > MAX_GAP_HOURS {
            return Err(Error::DataQuality(format!(
                "channel {}: gap of {run_len} hours exceeds the {MAX_GAP_HOURS}-hour limit",
                channel.key()
            )));
        }
        let before = values[run_start - 1];
        let after = values[i];
        for (k, v) in values[run_start..i].iter_mut().enumerate() {
            let w = (k + 1) as f64 / (run_len + 1) as f64;
            *v = before + (after - before) * w;
        }
    }
    Ok(())
}

/// A batch of equal-length windows into a source frame, identified by
/// their start offsets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleBatch {
    pub starts: Vec<usize>,
    pub seq_len: usize,
}

/// Tiles the frame with windows of `seq_len` (stride defaults to
/// `seq_len`, i.e. non-overlapping), shuffles them with the seed, and
/// groups them into batches. The final partial batch is retained; the
/// tail shorter than `seq_len` is dropped.
pub fn make_batches(
    frame: &SeriesFrame,
    seq_len: usize,
    batch_size: usize,
    seed: u64,
    stride: Option<usize>,
) -> Result<Vec<SampleBatch>> {
    if seq_len == 0 || batch_size == 0 {
        return Err(Error::Contract("seq_len and batch_size must be positive".into()));
    }
    if seq_len > frame.len() {
        return Err(Error::Size(format!(
            "seq_len {seq_len} exceeds frame length {}",
            frame.len()
        )));
    }
    let stride = stride.unwrap_or(seq_len).max(1);
    let mut starts: Vec<usize> = (0..=(frame.len() - seq_len)).step_by(stride).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Fisher-Yates with an explicit RNG keeps the order reproducible.
    for i in (1..starts.len()).rev() {
        let j = rng.random_range(0..=i);
        starts.swap(i, j);
    }
    Ok(starts
        .chunks(batch_size)
        .map(|chunk| SampleBatch { starts: chunk.to_vec(), seq_len })
        .collect())
}

/// Shape of the synthetic weather and market process.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Mean wind speed, m/s.
    pub wind_mean: f64,
    /// Seasonal swing amplitude, m/s.
    pub wind_seasonal: f64,
    /// Diurnal swing amplitude, m/s.
    pub wind_diurnal: f64,
    /// Stddev of the slow AR(1) regime component, m/s.
    pub wind_regime_sd: f64,
    /// One-hour autocorrelation of the regime component.
    pub wind_regime_rho: f64,
    /// Fast noise stddev, m/s.
    pub wind_noise_sd: f64,
    /// Rotor-inertia smoothing factor in (0, 1]; 1 disables smoothing.
    pub rotor_alpha: f64,
    /// Weight of the smoothed wind in the effective power-curve input.
    pub rotor_blend: f64,
    /// Power curve cut-in / rated / cut-out speeds, m/s.
    pub cut_in: f64,
    pub rated_speed: f64,
    pub cut_out: f64,
    /// Multiplicative generation noise stddev (0 disables).
    pub generation_noise_sd: f64,
    /// Price base level and diurnal amplitude, $/MWh.
    pub price_base: f64,
    pub price_diurnal: f64,
    /// Per-hour probability and magnitude of price spikes.
    pub price_spike_prob: f64,
    pub price_spike_mwh: f64,
    /// Load base level and diurnal amplitude, MW.
    pub load_base: f64,
    pub load_diurnal: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            wind_mean: 8.0,
            wind_seasonal: 2.0,
            wind_diurnal: 1.5,
            wind_regime_sd: 2.5,
            wind_regime_rho: 0.995,
            wind_noise_sd: 0.4,
            rotor_alpha: 0.04,
            rotor_blend: 0.65,
            cut_in: 3.0,
            rated_speed: 12.0,
            cut_out: 25.0,
            generation_noise_sd: 0.01,
            price_base: 30.0,
            price_diurnal: 12.0,
            price_spike_prob: 0.01,
            price_spike_mwh: 120.0,
            load_base: 900.0,
            load_diurnal: 250.0,
        }
    }
}

/// Saturating cubic power curve on [cut_in, rated], flat at capacity up
/// to cut_out, zero outside.
pub fn power_curve(v: f64, capacity_mw: f64, cfg: &SynthConfig) -> f64 {
    if v < cfg.cut_in || v >= cfg.cut_out {
        return 0.0;
    }
    if v >= cfg.rated_speed {
        return capacity_mw;
    }
    let num = v.powi(3) - cfg.cut_in.powi(3);
    let den = cfg.rated_speed.powi(3) - cfg.cut_in.powi(3);
    capacity_mw * (num / den).clamp(0.0, 1.0)
}

/// Deterministic synthetic dataset: `years` × 8760 hourly steps of wind
/// speed, generation, price, and load. Wind combines seasonal and diurnal
/// sinusoids with a slow AR(1) regime; generation follows a saturating
/// cubic power curve driven by a rotor-smoothed wind so that temporal
/// context carries real signal.
pub fn synth_dataset(years: usize, seed: u64, farm: &FarmSpec, cfg: &SynthConfig) -> Result<SeriesFrame> {
    if years == 0 {
        return Err(Error::Contract("years must be at least 1".into()));
    }
    farm.validate()?;
    let n = years * 8760;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = StandardNormal;

    let mut v = Vec::with_capacity(n);
    let mut g = Vec::with_capacity(n);
    let mut p = Vec::with_capacity(n);
    let mut u = Vec::with_capacity(n);

    let mut regime = 0.0_f64;
    let mut smoothed = cfg.wind_mean;
    let tau = std::f64::consts::TAU;
    for t in 0..n {
        let hour_of_year = (t % 8760) as f64;
        let hour_of_day = (t % 24) as f64;
        let season = cfg.wind_seasonal * (tau * hour_of_year / 8760.0).cos();
        let diurnal = cfg.wind_diurnal * (tau * (hour_of_day - 14.0) / 24.0).cos();
        let eps: f64 = normal.sample(&mut rng);
        regime = cfg.wind_regime_rho * regime
            + (1.0 - cfg.wind_regime_rho.powi(2)).sqrt() * cfg.wind_regime_sd * eps;
        let fast: f64 = normal.sample(&mut rng);
        let wind = (cfg.wind_mean + season + diurnal + regime + cfg.wind_noise_sd * fast).max(0.0);
        v.push(wind);

        smoothed += cfg.rotor_alpha * (wind - smoothed);
        let effective = cfg.rotor_blend * smoothed + (1.0 - cfg.rotor_blend) * wind;
        let mut power = power_curve(effective, farm.capacity_mw, cfg);
        if cfg.generation_noise_sd > 0.0 {
            let gn: f64 = normal.sample(&mut rng);
            power *= 1.0 + cfg.generation_noise_sd * gn;
        }
        g.push(power.clamp(0.0, farm.capacity_mw));

        let peak = (tau * (hour_of_day - 17.0) / 24.0).cos();
        let mut price = cfg.price_base + cfg.price_diurnal * peak;
        let spike: f64 = rng.random_range(0.0..1.0);
        if spike < cfg.price_spike_prob {
            price += cfg.price_spike_mwh * rng.random_range(0.2..1.0);
        }
        p.push(price.max(1.0));

        let weekly = 1.0 - 0.12 * (((t / 24) % 7 >= 5) as u8 as f64);
        u.push((cfg.load_base + cfg.load_diurnal * peak) * weekly);
    }

    SeriesFrame::builder()
        .wind_speed(v)
        .generation(g)
        .price(p)
        .load(u)
        .build()
}
