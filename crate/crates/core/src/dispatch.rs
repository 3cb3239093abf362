//! Storage-constrained dispatch: the per-step settlement that turns a
//! requested capacity factor into delivered power and a storage update,
//! the streaming simulator, and the baseload (peak-shaving) policy.

use crate::econ::{FarmSpec, StorageSpec};
use crate::error::{Error, Result};
use crate::series::SeriesFrame;

/// Per-timestep record of a full dispatch simulation.
///
/// `s` has one more entry than the series: `s[t]` is the stored energy
/// entering step `t`, `s[len]` the final state.
#[derive(Debug, Clone, PartialEq)]
pub struct DispatchTrace {
    /// Requested capacity factors, after any clamping.
    pub r_raw: Vec<f64>,
    /// Delivered power per step (MW).
    pub r_prime: Vec<f64>,
    /// Stored energy (MWh), length `len + 1`.
    pub s: Vec<f64>,
    /// Curtailed energy per step (MWh): generated but neither delivered
    /// nor accepted into storage.
    pub curtailed: Vec<f64>,
    /// Number of policy outputs that had to be clamped into [0, 1].
    pub clamp_warnings: usize,
}

impl DispatchTrace {
    pub fn len(&self) -> usize {
        self.r_prime.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r_prime.is_empty()
    }
}

/// Settles one step: caps the request against available energy, splits
/// delivery into direct and regenerated power (the regenerated share is
/// rate-limited and pays the round-trip efficiency), then updates storage
/// with the signed residual, rate-limited on charge and clamped to
/// [0, C_S].
///
/// Returns `(delivered_mw, stored_next_mwh)`.
pub fn post_process_step(
    r_t: f64,
    g_t: f64,
    s_t: f64,
    farm: &FarmSpec,
    storage: &StorageSpec,
) -> Result<(f64, f64)> {
    check_step_inputs(r_t, g_t, s_t, storage)?;
    let (r_prime, s_next, _) = settle(r_t, g_t, s_t, farm, storage);
    Ok((r_prime, s_next))
}

/// Branch activity recorded by [`settle`], used for reverse-mode
/// differentiation through the piecewise-linear settlement. Ties (exact
/// kink points) deactivate both sides, i.e. subgradient 0.
#[derive(Debug, Clone, Copy)]
pub(crate) struct StepBranches {
    /// Request cap: -1 if r·C_WF strictly binds, +1 if g+s strictly
    /// binds, 0 on a tie.
    pub cap: i8,
    /// Regenerated share strictly inside (0, R_S).
    pub regen_active: bool,
    /// Direct share strictly positive.
    pub direct_active: bool,
    /// Charge limiter: true when g - r' < R_S strictly.
    pub charge_unsaturated: bool,
    /// Storage clamp strictly inside (0, C_S).
    pub store_interior: bool,
}

pub(crate) fn settle(
    r_t: f64,
    g_t: f64,
    s_t: f64,
    farm: &FarmSpec,
    storage: &StorageSpec,
) -> (f64, f64, StepBranches) {
    let requested = r_t * farm.capacity_mw;
    let available = g_t + s_t;
    let capped = requested.min(available);
    let cap = if requested < available {
        -1
    } else if requested > available {
        1
    } else {
        0
    };

    let excess = (capped - g_t).max(0.0);
    let regen = excess.min(storage.rating_mw);
    let regen_active = capped - g_t > 0.0 && excess < storage.rating_mw;

    let direct_raw = capped - regen;
    let direct = direct_raw.max(0.0);
    let direct_active = direct_raw > 0.0;

    let r_prime = direct + regen * storage.rte;

    let residual = (g_t - r_prime).min(storage.rating_mw);
    let charge_unsaturated = g_t - r_prime < storage.rating_mw;
    let mid = s_t + residual;
    let s_next = mid.min(storage.capacity_mwh()).max(0.0);
    let store_interior = mid > 0.0 && mid < storage.capacity_mwh();

    (
        r_prime,
        s_next,
        StepBranches { cap, regen_active, direct_active, charge_unsaturated, store_interior },
    )
}

/// Reverse-mode derivative of one settlement step. Given upstream
/// gradients w.r.t. the outputs `(d_r_prime, d_s_next)`, returns the
/// gradients w.r.t. the inputs `(d_r_t, d_s_t)`.
pub(crate) fn settle_backward(
    branches: &StepBranches,
    farm: &FarmSpec,
    storage: &StorageSpec,
    d_r_prime: f64,
    d_s_next: f64,
) -> (f64, f64) {
    // s_next = clamp(s + min(g - r', R_S), 0, C_S)
    let ds_dmid = if branches.store_interior { 1.0 } else { 0.0 };
    let dmid_drp = if branches.charge_unsaturated { -1.0 } else { 0.0 };
    let d_rp_total = d_r_prime + d_s_next * ds_dmid * dmid_drp;
    let d_s_direct = d_s_next * ds_dmid;

    // r' = direct + rte·regen, direct = max(capped - regen, 0),
    // regen = clamp(capped - g, 0, R_S); both are functions of `capped`.
    let dregen_dcap = if branches.regen_active { 1.0 } else { 0.0 };
    let ddirect_dcap = if branches.direct_active { 1.0 - dregen_dcap } else { 0.0 };
    let drp_dcap = ddirect_dcap + storage.rte * dregen_dcap;

    // capped = min(r·C_WF, g + s)
    let (dcap_dr, dcap_ds) = match branches.cap {
        -1 => (farm.capacity_mw, 0.0),
        1 => (0.0, 1.0),
        _ => (0.0, 0.0),
    };

    let d_r = d_rp_total * drp_dcap * dcap_dr;
    let d_s = d_rp_total * drp_dcap * dcap_ds + d_s_direct;
    (d_r, d_s)
}

fn check_step_inputs(r_t: f64, g_t: f64, s_t: f64, storage: &StorageSpec) -> Result<()> {
    if !(0.0..=1.0).contains(&r_t) {
        return Err(Error::Contract(format!("capacity factor {r_t} outside [0, 1]")));
    }
    if g_t < 0.0 || !g_t.is_finite() {
        return Err(Error::Contract(format!("generation {g_t} invalid")));
    }
    if s_t < 0.0 || s_t > storage.capacity_mwh() || !s_t.is_finite() {
        return Err(Error::Contract(format!(
            "stored energy {s_t} outside [0, {}]",
            storage.capacity_mwh()
        )));
    }
    Ok(())
}

/// A per-step dispatch decision: sees the step index, the frame, and the
/// current stored energy; returns a requested capacity factor.
pub trait DispatchPolicy {
    fn decide(&mut self, step: usize, frame: &SeriesFrame, stored_mwh: f64) -> f64;
}

impl<F: FnMut(usize, &SeriesFrame, f64) -> f64> DispatchPolicy for F {
    fn decide(&mut self, step: usize, frame: &SeriesFrame, stored_mwh: f64) -> f64 {
        self(step, frame, stored_mwh)
    }
}

/// Runs a policy over a frame, feeding the storage state back each step.
/// Policy outputs outside [0, 1] are clamped and counted rather than
/// rejected, since untrained networks are legitimate policies.
pub fn simulate(
    policy: &mut dyn DispatchPolicy,
    frame: &SeriesFrame,
    farm: &FarmSpec,
    storage: &StorageSpec,
    s0: f64,
) -> Result<DispatchTrace> {
    let g = frame
        .generation()
        .ok_or_else(|| Error::Schema("simulate requires a generation channel".into()))?;
    if s0 < 0.0 || s0 > storage.capacity_mwh() {
        return Err(Error::Contract(format!(
            "initial stored energy {s0} outside [0, {}]",
            storage.capacity_mwh()
        )));
    }
    let n = frame.len();
    let mut trace = DispatchTrace {
        r_raw: Vec::with_capacity(n),
        r_prime: Vec::with_capacity(n),
        s: Vec::with_capacity(n + 1),
        curtailed: Vec::with_capacity(n),
        clamp_warnings: 0,
    };
    trace.s.push(s0);
    let mut s_t = s0;
    for t in 0..n {
        let raw = policy.decide(t, frame, s_t);
        let r_t = raw.clamp(0.0, 1.0);
        if raw != r_t {
            trace.clamp_warnings += 1;
        }
        let (r_prime, s_next) = post_process_step(r_t, g[t], s_t, farm, storage)?;
        let charge = (s_next - s_t).max(0.0);
        trace.r_raw.push(r_t);
        trace.r_prime.push(r_prime);
        trace.curtailed.push((g[t] - r_prime - charge).max(0.0));
        trace.s.push(s_next);
        s_t = s_next;
    }
    Ok(trace)
}

/// Fixed-target peak-shaving policy: requests `target` MW each step,
/// bounded by what generation plus storage can supply; the settlement
/// step resolves feasibility (surplus charges, deficit discharges).
pub struct BaseloadPolicy {
    pub target_mw: f64,
    capacity_mw: f64,
}

impl BaseloadPolicy {
    pub fn new(target_mw: f64, farm: &FarmSpec) -> Result<Self> {
        if target_mw <= 0.0 {
            return Err(Error::Contract(format!("baseload target {target_mw} must be positive")));
        }
        Ok(Self { target_mw, capacity_mw: farm.capacity_mw })
    }

    /// Target from the mean of a generation series (the usual default).
    pub fn from_mean_generation(frame: &SeriesFrame, farm: &FarmSpec) -> Result<Self> {
        let g = frame
            .generation()
            .ok_or_else(|| Error::Schema("baseload target needs a generation channel".into()))?;
        let mean = g.iter().sum::<f64>() / g.len() as f64;
        Self::new(mean, farm)
    }
}

impl DispatchPolicy for BaseloadPolicy {
    fn decide(&mut self, step: usize, frame: &SeriesFrame, stored_mwh: f64) -> f64 {
        let g = frame.generation().expect("checked at simulate entry");
        let feasible = self.target_mw.min(g[step] + stored_mwh);
        (feasible / self.capacity_mw).clamp(0.0, 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::SeriesFrame;

    fn specs() -> (FarmSpec, StorageSpec) {
        let farm = FarmSpec { capacity_mw: 100.0, capex_usd: 0.0, opex_usd_per_yr: 0.0, fcr: 0.1 };
        let storage = StorageSpec::new("test", 20.0, 2.0, 0.8, 0.0, 0.0).unwrap();
        (farm, storage)
    }

    fn g_frame(g: Vec<f64>) -> SeriesFrame {
        SeriesFrame::builder().generation(g).build().unwrap()
    }

    #[test]
    fn hand_trace_surplus_step() {
        let (farm, storage) = specs();
        let (rp, s) = post_process_step(0.5, 60.0, 10.0, &farm, &storage).unwrap();
        assert_eq!(rp, 50.0);
        assert_eq!(s, 20.0);
    }

    #[test]
    fn hand_trace_discharge_step() {
        let (farm, storage) = specs();
        let (rp, s) = post_process_step(0.5, 10.0, 30.0, &farm, &storage).unwrap();
        assert_eq!(rp, 36.0);
        assert_eq!(s, 4.0);
    }

    #[test]
    fn zero_request_charges_storage() {
        let (farm, storage) = specs();
        for (g, s) in [(5.0, 0.0), (100.0, 10.0), (0.0, 40.0)] {
            let (rp, s_next) = post_process_step(0.0, g, s, &farm, &storage).unwrap();
            assert_eq!(rp, 0.0);
            let expected = (s + g.min(storage.rating_mw)).min(storage.capacity_mwh());
            assert_eq!(s_next, expected);
        }
    }

    #[test]
    fn precondition_violations_are_contract_errors() {
        let (farm, storage) = specs();
        assert!(matches!(
            post_process_step(1.5, 0.0, 0.0, &farm, &storage),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            post_process_step(0.5, -1.0, 0.0, &farm, &storage),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            post_process_step(0.5, 0.0, 41.0, &farm, &storage),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn simulate_zero_policy_fills_storage() {
        let (farm, storage) = specs();
        let frame = g_frame(vec![30.0; 10]);
        let mut policy = |_: usize, _: &SeriesFrame, _: f64| 0.0;
        let trace = simulate(&mut policy, &frame, &farm, &storage, 0.0).unwrap();
        assert!(trace.r_prime.iter().all(|v| *v == 0.0));
        // Charges at the 20 MW rating until the 40 MWh capacity is hit.
        assert_eq!(trace.s, vec![0.0, 20.0, 40.0, 40.0, 40.0, 40.0, 40.0, 40.0, 40.0, 40.0, 40.0]);
    }

    #[test]
    fn simulate_full_passthrough() {
        let (farm, storage) = specs();
        let frame = g_frame(vec![100.0; 5]);
        let mut policy = |_: usize, _: &SeriesFrame, _: f64| 1.0;
        let trace = simulate(&mut policy, &frame, &farm, &storage, 0.0).unwrap();
        assert!(trace.r_prime.iter().all(|v| *v == 100.0));
        assert!(trace.s.iter().all(|v| *v == 0.0));
        assert!(trace.curtailed.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn simulate_chains_the_hand_trace() {
        let (farm, storage) = specs();
        let frame = g_frame(vec![60.0, 10.0, 0.0]);
        let mut policy = |_: usize, _: &SeriesFrame, _: f64| 0.5;
        let trace = simulate(&mut policy, &frame, &farm, &storage, 10.0).unwrap();
        // Step 0 repeats the surplus hand trace. Step 1 then starts from
        // s=20: capped = min(50, 30) = 30, regen = min(20, 20) = 20,
        // direct = 10, r' = 10 + 16 = 26, s -> 20 + (10 - 26) = 4.
        assert_eq!(trace.r_prime[0], 50.0);
        assert_eq!(trace.s[0..3], [10.0, 20.0, 4.0]);
        assert_eq!(trace.r_prime[1], 26.0);
        // Cross-check against chaining the step function directly.
        let mut s = 10.0;
        for t in 0..3 {
            let (rp, s_next) =
                post_process_step(0.5, frame.generation().unwrap()[t], s, &farm, &storage).unwrap();
            assert_eq!(trace.r_prime[t], rp);
            assert_eq!(trace.s[t + 1], s_next);
            s = s_next;
        }
    }

    #[test]
    fn out_of_range_policy_clamped_and_counted() {
        let (farm, storage) = specs();
        let frame = g_frame(vec![50.0; 4]);
        let mut policy = |t: usize, _: &SeriesFrame, _: f64| if t % 2 == 0 { 1.7 } else { 0.5 };
        let trace = simulate(&mut policy, &frame, &farm, &storage, 0.0).unwrap();
        assert_eq!(trace.clamp_warnings, 2);
        assert!(trace.r_raw.iter().all(|r| (0.0..=1.0).contains(r)));
    }

    #[test]
    fn baseload_constant_generation_matches_target() {
        let (farm, storage) = specs();
        let frame = g_frame(vec![40.0; 8]);
        let mut policy = BaseloadPolicy::from_mean_generation(&frame, &farm).unwrap();
        assert_eq!(policy.target_mw, 40.0);
        let trace = simulate(&mut policy, &frame, &farm, &storage, 0.0).unwrap();
        assert!(trace.r_prime.iter().all(|v| (*v - 40.0).abs() < 1e-12));
        assert!(trace.s.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn baseload_alternating_generation_shaves_peaks() {
        // Lossless storage with ample rating: after the first surplus
        // step the deficit steps are covered from storage.
        let farm = FarmSpec { capacity_mw: 100.0, capex_usd: 0.0, opex_usd_per_yr: 0.0, fcr: 0.1 };
        let storage = StorageSpec::new("ideal", 40.0, 4.0, 1.0, 0.0, 0.0).unwrap();
        let target = 20.0;
        let frame = g_frame(vec![40.0, 0.0, 40.0, 0.0, 40.0, 0.0]);
        let mut policy = BaseloadPolicy::new(target, &farm).unwrap();
        let trace = simulate(&mut policy, &frame, &farm, &storage, 0.0).unwrap();
        for t in 0..trace.len() {
            assert!((trace.r_prime[t] - target).abs() < 1e-12, "step {t}: {}", trace.r_prime[t]);
        }
    }

    #[test]
    fn baseload_infeasible_target_underdelivers() {
        let (farm, storage) = specs();
        let frame = g_frame(vec![10.0; 6]);
        // Even draining storage at full rating cannot reach the target.
        let target = 10.0 + storage.rating_mw * storage.rte + 1.0;
        let mut policy = BaseloadPolicy::new(target, &farm).unwrap();
        let trace = simulate(&mut policy, &frame, &farm, &storage, 0.0).unwrap();
        assert!(trace.r_prime.iter().all(|v| *v < target));
    }
}
