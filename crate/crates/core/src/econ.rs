//! Energy economics: farm and storage cost parameters, the cost metrics
//! (LCOE, COVE, value factor), and annual reporting over dispatch traces.

use crate::dispatch::DispatchTrace;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

pub const HOURS_PER_YEAR: usize = 8760;

/// Wind farm economic parameters. Capacity in MW, capital expenditure
/// (including balance of system) in $, operating expenditure in $/yr,
/// fixed charge rate as a yearly fraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FarmSpec {
    pub capacity_mw: f64,
    pub capex_usd: f64,
    pub opex_usd_per_yr: f64,
    pub fcr: f64,
}

impl FarmSpec {
    pub fn validate(&self) -> Result<()> {
        if self.capacity_mw <= 0.0 {
            return Err(Error::Contract("farm capacity must be positive".into()));
        }
        if self.capex_usd < 0.0 || self.opex_usd_per_yr < 0.0 {
            return Err(Error::Contract("farm costs must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.fcr) || self.fcr == 0.0 {
            return Err(Error::Contract("fixed charge rate must lie in (0, 1)".into()));
        }
        Ok(())
    }

    /// Annualized fixed cost, $/yr.
    pub fn annual_fixed_cost(&self) -> f64 {
        self.capex_usd * self.fcr + self.opex_usd_per_yr
    }
}

/// A concrete storage system: power rating (MW), duration (h), round-trip
/// efficiency, and its annualized costs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StorageSpec {
    pub technology: String,
    pub rating_mw: f64,
    pub duration_h: f64,
    pub rte: f64,
    pub capex_usd: f64,
    pub opex_usd_per_yr: f64,
}

impl StorageSpec {
    pub fn new(
        technology: &str,
        rating_mw: f64,
        duration_h: f64,
        rte: f64,
        capex_usd: f64,
        opex_usd_per_yr: f64,
    ) -> Result<Self> {
        if rating_mw <= 0.0 || duration_h <= 0.0 {
            return Err(Error::Contract("storage rating and duration must be positive".into()));
        }
        if !(0.0..=1.0).contains(&rte) || rte == 0.0 {
            return Err(Error::Contract("round-trip efficiency must lie in (0, 1]".into()));
        }
        if capex_usd < 0.0 || opex_usd_per_yr < 0.0 {
            return Err(Error::Contract("storage costs must be non-negative".into()));
        }
        Ok(Self {
            technology: technology.to_string(),
            rating_mw,
            duration_h,
            rte,
            capex_usd,
            opex_usd_per_yr,
        })
    }

    /// Energy capacity, always rating × duration.
    pub fn capacity_mwh(&self) -> f64 {
        self.rating_mw * self.duration_h
    }
}

/// Combined annualized fixed cost of farm plus storage, $/yr. The farm's
/// FCR also annualizes the storage capital expenditure.
pub fn annual_fixed_cost(farm: &FarmSpec, storage: &StorageSpec) -> f64 {
    farm.capex_usd * farm.fcr
        + farm.opex_usd_per_yr
        + storage.capex_usd * farm.fcr
        + storage.opex_usd_per_yr
}

/// Levelized cost of energy over one year of hourly dispatch:
/// annualized fixed costs divided by delivered energy.
pub fn lcoe(r_prime: &[f64], farm: &FarmSpec, storage: &StorageSpec) -> Result<f64> {
    let delivered: f64 = r_prime.iter().sum();
    if delivered <= 0.0 {
        return Err(Error::UndefinedMetric("lcoe: total dispatch is zero".into()));
    }
    Ok(annual_fixed_cost(farm, storage) / delivered)
}

/// Cost of valued energy: annualized fixed costs divided by
/// price-weighted delivered energy.
pub fn cove(r_prime: &[f64], prices: &[f64], farm: &FarmSpec, storage: &StorageSpec) -> Result<f64> {
    if r_prime.len() != prices.len() {
        return Err(Error::Size(format!(
            "cove: dispatch length {} != price length {}",
            r_prime.len(),
            prices.len()
        )));
    }
    let valued: f64 = r_prime.iter().zip(prices).map(|(r, p)| r * p).sum();
    if valued <= 0.0 {
        return Err(Error::UndefinedMetric(format!(
            "cove: valued energy {valued} is not positive"
        )));
    }
    Ok(annual_fixed_cost(farm, storage) / valued)
}

/// Scaling between raw COVE (per valued MWh) and the reported
/// $-per-kWh-per-year convention.
pub const COVE_DISPLAY_SCALE: f64 = 1000.0;

/// Value factor: realized average price of delivered energy over the
/// time-average price. Constant dispatch gives exactly 1.
pub fn value_factor(dispatched: &[f64], prices: &[f64]) -> Result<f64> {
    if dispatched.len() != prices.len() || dispatched.is_empty() {
        return Err(Error::Size("value_factor: mismatched or empty series".into()));
    }
    let total: f64 = dispatched.iter().sum();
    if total <= 0.0 {
        return Err(Error::UndefinedMetric("value_factor: zero dispatch".into()));
    }
    let mean_price = prices.iter().sum::<f64>() / prices.len() as f64;
    if mean_price == 0.0 {
        return Err(Error::UndefinedMetric("value_factor: zero mean price".into()));
    }
    let valued: f64 = dispatched.iter().zip(prices).map(|(d, p)| d * p).sum();
    Ok(valued / (total * mean_price))
}

/// Per-year metrics derived from a dispatch trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnualMetrics {
    pub year_index: usize,
    pub hours: usize,
    pub full_year: bool,
    pub aep_mwh: f64,
    pub curtailment_mwh: f64,
    pub storage_utilization: f64,
    pub value_factor: Option<f64>,
    /// Raw COVE for the year; fixed costs scaled by hours/8760 for
    /// partial years.
    pub cove: Option<f64>,
    pub lcoe: Option<f64>,
}

/// Splits a trace into 8760-hour years and reports per-year delivery,
/// curtailment, storage utilization, value factor, and cost metrics.
/// A trailing partial year is reported with `full_year = false` and its
/// fixed costs prorated by hours/8760.
pub fn annual_report(
    trace: &DispatchTrace,
    generation: &[f64],
    farm: &FarmSpec,
    storage: &StorageSpec,
    prices: &[f64],
) -> Result<Vec<AnnualMetrics>> {
    let n = trace.len();
    if generation.len() != n || prices.len() != n {
        return Err(Error::Size("annual_report: series not aligned with trace".into()));
    }
    if n == 0 {
        return Err(Error::Size("annual_report: empty trace".into()));
    }
    let capacity = storage.capacity_mwh();
    let fixed = annual_fixed_cost(farm, storage);
    let mut out = Vec::new();
    let mut start = 0usize;
    let mut year_index = 0usize;
    while start < n {
        let end = (start + HOURS_PER_YEAR).min(n);
        let hours = end - start;
        let full_year = hours == HOURS_PER_YEAR;
        let r = &trace.r_prime[start..end];
        let p = &prices[start..end];
        let g = &generation[start..end];

        let aep: f64 = r.iter().sum();
        let mut curtailment = 0.0;
        for t in start..end {
            let charge = (trace.s[t + 1] - trace.s[t]).max(0.0);
            curtailment += (generation[t] - trace.r_prime[t] - charge).max(0.0);
        }
        let mean_soc = trace.s[start..end].iter().sum::<f64>() / hours as f64;
        let vf = value_factor(r, p).ok();
        let scaled_fixed = fixed * hours as f64 / HOURS_PER_YEAR as f64;
        let valued: f64 = r.iter().zip(p).map(|(a, b)| a * b).sum();
        let cove_y = if valued > 0.0 { Some(scaled_fixed / valued) } else { None };
        let delivered: f64 = aep;
        let lcoe_y = if delivered > 0.0 { Some(scaled_fixed / delivered) } else { None };

        debug_assert!(curtailment >= 0.0 && curtailment <= g.iter().sum::<f64>() + 1e-9);

        out.push(AnnualMetrics {
            year_index,
            hours,
            full_year,
            aep_mwh: aep,
            curtailment_mwh: curtailment,
            storage_utilization: mean_soc / capacity,
            value_factor: vf,
            cove: cove_y,
            lcoe: lcoe_y,
        });
        start = end;
        year_index += 1;
    }
    Ok(out)
}

/// Mean of the per-year COVE values, skipping years where the metric is
/// undefined. Errors if every year is undefined.
pub fn average_annual_cove(report: &[AnnualMetrics]) -> Result<f64> {
    let coves: Vec<f64> = report.iter().filter_map(|m| m.cove).collect();
    if coves.is_empty() {
        return Err(Error::UndefinedMetric("no year with defined COVE".into()));
    }
    Ok(coves.iter().sum::<f64>() / coves.len() as f64)
}

/// Storage technology catalog: exact lookup of (technology, rating,
/// duration) → efficiency and cost parameters. Loaded from a CSV table
/// with columns technology, rating_mw, duration_h, rte, capex_usd,
/// opex_usd_per_yr.
#[derive(Debug, Clone)]
pub struct StorageCatalog {
    entries: Vec<StorageSpec>,
}

/// Placeholder catalog shipped with the crate. The values are synthetic
/// order-of-magnitude figures chosen so searches are exercisable; replace
/// the file with real cost tables for any real analysis.
const BUILTIN_CATALOG: &str = include_str!("../data/storage_catalog.csv");

impl StorageCatalog {
    pub fn from_reader<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let expected = ["technology", "rating_mw", "duration_h", "rte", "capex_usd", "opex_usd_per_yr"];
        for col in expected {
            if !headers.iter().any(|h| h == col) {
                return Err(Error::Schema(format!("catalog missing column `{col}`")));
            }
        }
        let idx = |name: &str| headers.iter().position(|h| h == name).unwrap();
        let (ti, ri, di, ei, ci, oi) = (
            idx("technology"),
            idx("rating_mw"),
            idx("duration_h"),
            idx("rte"),
            idx("capex_usd"),
            idx("opex_usd_per_yr"),
        );
        let mut entries = Vec::new();
        for record in rdr.records() {
            let record = record?;
            let parse = |i: usize| -> Result<f64> {
                record[i]
                    .parse::<f64>()
                    .map_err(|_| Error::Schema(format!("catalog: bad number `{}`", &record[i])))
            };
            entries.push(StorageSpec::new(
                &record[ti],
                parse(ri)?,
                parse(di)?,
                parse(ei)?,
                parse(ci)?,
                parse(oi)?,
            )?);
        }
        Ok(Self { entries })
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let file = std::fs::File::open(path)
            .map_err(|e| Error::Dependency(format!("catalog {}: {e}", path.display())))?;
        Self::from_reader(file)
    }

    /// The catalog bundled with the crate (placeholder values).
    pub fn builtin() -> Self {
        Self::from_reader(BUILTIN_CATALOG.as_bytes()).expect("builtin catalog parses")
    }

    /// Exact lookup; no interpolation.
    pub fn resolve(&self, technology: &str, rating_mw: f64, duration_h: f64) -> Result<StorageSpec> {
        self.entries
            .iter()
            .find(|e| {
                e.technology.eq_ignore_ascii_case(technology)
                    && e.rating_mw == rating_mw
                    && e.duration_h == duration_h
            })
            .cloned()
            .ok_or_else(|| {
                Error::Config(format!(
                    "catalog has no entry for ({technology}, {rating_mw} MW, {duration_h} h)"
                ))
            })
    }

    pub fn technologies(&self) -> Vec<String> {
        let mut t: Vec<String> = Vec::new();
        for e in &self.entries {
            if !t.contains(&e.technology) {
                t.push(e.technology.clone());
            }
        }
        t
    }

    pub fn entries(&self) -> &[StorageSpec] {
        &self.entries
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dispatch::{simulate, DispatchPolicy};
    use crate::series::SeriesFrame;

    fn farm() -> FarmSpec {
        FarmSpec { capacity_mw: 100.0, capex_usd: 1000.0, opex_usd_per_yr: 50.0, fcr: 0.1 }
    }

    fn free_storage() -> StorageSpec {
        StorageSpec::new("free", 1.0, 1.0, 1.0, 0.0, 0.0).unwrap()
    }

    #[test]
    fn lcoe_hand_example() {
        // (1000·0.1 + 50) / 300 = 0.5
        let r = vec![100.0, 100.0, 100.0];
        assert_eq!(lcoe(&r, &farm(), &free_storage()).unwrap(), 0.5);
    }

    #[test]
    fn lcoe_halves_when_dispatch_doubles() {
        let r: Vec<f64> = vec![10.0, 20.0, 30.0];
        let doubled: Vec<f64> = r.iter().map(|v| v * 2.0).collect();
        let a = lcoe(&r, &farm(), &free_storage()).unwrap();
        let b = lcoe(&doubled, &farm(), &free_storage()).unwrap();
        assert!((b - a / 2.0).abs() < 1e-15);
    }

    #[test]
    fn lcoe_with_storage_costs() {
        // Storage adds CAPEX_S·FCR + OPEX_S = 150: (150 + 150) / 300 = 1.
        let storage = StorageSpec::new("s", 1.0, 1.0, 1.0, 1000.0, 50.0).unwrap();
        let r = vec![100.0, 100.0, 100.0];
        assert_eq!(lcoe(&r, &farm(), &storage).unwrap(), 1.0);
    }

    #[test]
    fn lcoe_zero_dispatch_undefined() {
        assert!(matches!(
            lcoe(&[0.0, 0.0], &farm(), &free_storage()),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn cove_reduces_to_lcoe_at_unit_price() {
        let r = vec![13.0, 7.5, 22.0, 1.0];
        let p = vec![1.0; 4];
        let a = cove(&r, &p, &farm(), &free_storage()).unwrap();
        let b = lcoe(&r, &farm(), &free_storage()).unwrap();
        assert!((a - b).abs() / b < 1e-15);
    }

    #[test]
    fn cove_hand_example() {
        // 150 / (10·2 + 20·4) = 1.5
        let v = cove(&[10.0, 20.0], &[2.0, 4.0], &farm(), &free_storage()).unwrap();
        assert_eq!(v, 1.5);
    }

    #[test]
    fn cove_scales_inversely_with_price() {
        let r = vec![10.0, 20.0];
        let p = vec![2.0, 4.0];
        let scaled: Vec<f64> = p.iter().map(|x| x * 3.0).collect();
        let a = cove(&r, &p, &farm(), &free_storage()).unwrap();
        let b = cove(&r, &scaled, &farm(), &free_storage()).unwrap();
        assert!((b - a / 3.0).abs() < 1e-15);
    }

    #[test]
    fn cove_pathological_prices_rejected() {
        let r = vec![10.0, 20.0];
        let p = vec![-5.0, 1.0];
        assert!(matches!(
            cove(&r, &p, &farm(), &free_storage()),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn value_factor_constant_dispatch_is_one() {
        let d = vec![7.0; 5];
        let p = vec![1.0, 9.0, 3.0, 2.0, 30.0];
        let v = value_factor(&d, &p).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn value_factor_hand_examples() {
        assert_eq!(value_factor(&[0.0, 10.0], &[1.0, 3.0]).unwrap(), 1.5);
        assert_eq!(value_factor(&[10.0, 0.0], &[1.0, 3.0]).unwrap(), 0.5);
    }

    #[test]
    fn annual_report_passthrough_has_no_curtailment() {
        let farm = farm();
        let storage = free_storage();
        let g = vec![50.0; 100];
        let frame = SeriesFrame::builder().generation(g.clone()).build().unwrap();
        let mut policy = |_: usize, _: &SeriesFrame, _: f64| 0.5;
        let trace = simulate(&mut policy as &mut dyn DispatchPolicy, &frame, &farm, &storage, 0.0).unwrap();
        let p = vec![20.0; 100];
        let report = annual_report(&trace, &g, &farm, &storage, &p).unwrap();
        assert_eq!(report.len(), 1);
        assert!(!report[0].full_year);
        assert_eq!(report[0].curtailment_mwh, 0.0);
        assert_eq!(report[0].aep_mwh, 5000.0);
    }

    #[test]
    fn curtailment_counts_unused_generation() {
        // One step: g=10, r'=4, storage flat -> curtailed 6.
        let trace = DispatchTrace {
            r_raw: vec![0.04],
            r_prime: vec![4.0],
            s: vec![1.0, 1.0],
            curtailed: vec![6.0],
            clamp_warnings: 0,
        };
        let report =
            annual_report(&trace, &[10.0], &farm(), &free_storage(), &[1.0]).unwrap();
        assert_eq!(report[0].curtailment_mwh, 6.0);
    }

    #[test]
    fn utilization_is_mean_soc_over_capacity() {
        let storage = StorageSpec::new("s", 5.0, 2.0, 1.0, 0.0, 0.0).unwrap();
        let trace = DispatchTrace {
            r_raw: vec![0.0; 4],
            r_prime: vec![1.0; 4],
            s: vec![5.0; 5],
            curtailed: vec![0.0; 4],
            clamp_warnings: 0,
        };
        let report = annual_report(&trace, &[1.0; 4], &farm(), &storage, &[1.0; 4]).unwrap();
        assert_eq!(report[0].storage_utilization, 0.5);
    }

    #[test]
    fn concatenated_years_match_independent_reports() {
        let farm = farm();
        let storage = StorageSpec::new("s", 10.0, 4.0, 0.9, 200.0, 10.0).unwrap();
        let n = HOURS_PER_YEAR * 2;
        let g: Vec<f64> = (0..n).map(|t| 40.0 + 30.0 * ((t as f64) * 0.01).sin().abs()).collect();
        let p: Vec<f64> = (0..n).map(|t| 15.0 + 10.0 * ((t as f64) * 0.02).cos()).collect();
        let frame = SeriesFrame::builder().generation(g.clone()).build().unwrap();
        let mut policy = |t: usize, _: &SeriesFrame, _: f64| if t % 3 == 0 { 0.4 } else { 0.6 };
        let trace = simulate(&mut policy as &mut dyn DispatchPolicy, &frame, &farm, &storage, 0.0).unwrap();

        let combined = annual_report(&trace, &g, &farm, &storage, &p).unwrap();

        // Rebuild year 2 independently, starting from the year-boundary state.
        let y = HOURS_PER_YEAR;
        let sub_trace = DispatchTrace {
            r_raw: trace.r_raw[y..].to_vec(),
            r_prime: trace.r_prime[y..].to_vec(),
            s: trace.s[y..].to_vec(),
            curtailed: trace.curtailed[y..].to_vec(),
            clamp_warnings: 0,
        };
        let solo = annual_report(&sub_trace, &g[y..], &farm, &storage, &p[y..]).unwrap();
        assert_eq!(combined[1].aep_mwh, solo[0].aep_mwh);
        assert_eq!(combined[1].curtailment_mwh, solo[0].curtailment_mwh);
        assert_eq!(combined[1].cove, solo[0].cove);
    }

    #[test]
    fn builtin_catalog_resolves_searched_triples() {
        let catalog = StorageCatalog::builtin();
        let durations: &[(&str, &[f64])] = &[
            ("Lithium-Ion", &[2.0, 4.0, 6.0, 8.0, 10.0, 24.0, 100.0]),
            ("Hydropower", &[4.0, 10.0, 24.0, 100.0]),
            ("CAES", &[4.0, 10.0, 24.0, 100.0]),
            ("Hydrogen", &[10.0, 24.0, 100.0]),
            ("Gravitational", &[2.0, 4.0, 6.0, 8.0, 10.0, 24.0, 100.0]),
            ("Thermal", &[4.0, 6.0, 8.0, 10.0, 24.0, 100.0]),
        ];
        for (tech, ds) in durations {
            for rating in [100.0, 1000.0] {
                for d in *ds {
                    let spec = catalog.resolve(tech, rating, *d).unwrap();
                    assert!(spec.rte > 0.0 && spec.rte <= 1.0);
                    assert!(spec.capex_usd > 0.0);
                }
            }
        }
    }

    #[test]
    fn catalog_miss_names_the_triple() {
        let catalog = StorageCatalog::builtin();
        let err = catalog.resolve("Flywheel", 100.0, 4.0).unwrap_err();
        assert!(err.to_string().contains("Flywheel"));
    }
}
