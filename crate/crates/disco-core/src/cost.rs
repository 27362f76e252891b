//! Training-cost accounting over heterogeneous hardware: per-phase dollar
//! costs from (wall time, device rate, device count), staged-run totals
//! where the submodel phase bills all devices for the longest worker, and
//! savings against a full-parameter baseline. Times are measured inputs,
//! never predictions.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceRate {
    pub name: String,
    pub dollars_per_hour: f64,
}

impl DeviceRate {
    pub fn new(name: &str, dollars_per_hour: f64) -> Result<Self> {
        if dollars_per_hour <= 0.0 || !dollars_per_hour.is_finite() {
            return Err(Error::Domain(format!(
                "device rate must be positive, got {dollars_per_hour}"
            )));
        }
        Ok(DeviceRate {
            name: name.to_string(),
            dollars_per_hour,
        })
    }
}

/// Rates file: one device per line, `name<TAB>dollars_per_hour`.
pub fn read_rates(path: &Path) -> Result<Vec<DeviceRate>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Input(format!("cannot read rates {}: {e}", path.display())))?;
    let mut rates = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (name, rate) = line.split_once('\t').ok_or_else(|| {
            Error::Format(format!(
                "rates {}:{}: expected name<TAB>rate",
                path.display(),
                lineno + 1
            ))
        })?;
        let rate: f64 = rate.trim().parse().map_err(|_| {
            Error::Format(format!("rates {}:{}: bad rate", path.display(), lineno + 1))
        })?;
        rates.push(DeviceRate::new(name.trim(), rate)?);
    }
    if rates.is_empty() {
        return Err(Error::Input(format!(
            "rates file {} is empty",
            path.display()
        )));
    }
    Ok(rates)
}

pub fn find_rate<'a>(rates: &'a [DeviceRate], name: &str) -> Result<&'a DeviceRate> {
    rates
        .iter()
        .find(|r| r.name == name)
        .ok_or_else(|| Error::Input(format!("no rate entry for device `{name}`")))
}

/// Phase kinds in execution order: submodel training, fine-tune. A
/// full-parameter baseline is its own single phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Phase {
    S,
    F,
    Full,
}

#[derive(Debug, Clone)]
pub struct PhaseRecord {
    pub phase: Phase,
    pub wall_time_h: f64,
    pub device_count: usize,
    pub rate: DeviceRate,
}

impl PhaseRecord {
    pub fn new(
        phase: Phase,
        wall_time_h: f64,
        device_count: usize,
        rate: DeviceRate,
    ) -> Result<Self> {
        if wall_time_h < 0.0 || !wall_time_h.is_finite() {
            return Err(Error::Domain(format!("negative phase time {wall_time_h}")));
        }
        if device_count == 0 {
            return Err(Error::Domain("device count must be at least 1".to_string()));
        }
        Ok(PhaseRecord {
            phase,
            wall_time_h,
            device_count,
            rate,
        })
    }

    pub fn cost(&self) -> f64 {
        self.wall_time_h * self.rate.dollars_per_hour * self.device_count as f64
    }
}

/// `dollars = time_h x rate x devices`. For the submodel phase, callers pass
/// the maximum worker duration and the worker count, which bills every
/// device for the longest run (a conservative upper bound).
pub fn phase_cost(time_h: f64, rate: &DeviceRate, devices: usize) -> Result<f64> {
    if time_h < 0.0 || !time_h.is_finite() {
        return Err(Error::Domain(format!("negative phase time {time_h}")));
    }
    if devices == 0 {
        return Err(Error::Domain("device count must be at least 1".to_string()));
    }
    Ok(time_h * rate.dollars_per_hour * devices as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StagedTotals {
    pub s_cost: f64,
    pub f_cost: f64,
    pub total_cost: f64,
    pub total_time_h: f64,
}

/// Staged-run totals: the S phase bills `workers` devices for the longest
/// submodel duration, the F phase bills its own devices, and wall time is
/// the sum of the two phase times.
pub fn staged_totals(
    s_max_time_h: f64,
    workers: usize,
    s_rate: &DeviceRate,
    f_time_h: f64,
    f_devices: usize,
    f_rate: &DeviceRate,
) -> Result<StagedTotals> {
    let s_cost = phase_cost(s_max_time_h, s_rate, workers)?;
    let f_cost = phase_cost(f_time_h, f_rate, f_devices)?;
    Ok(StagedTotals {
        s_cost,
        f_cost,
        total_cost: s_cost + f_cost,
        total_time_h: s_max_time_h + f_time_h,
    })
}

/// `(full - staged) / full`; positive when the staged run is cheaper.
pub fn savings(full_cost: f64, staged_cost: f64) -> Result<f64> {
    if full_cost <= 0.0 || !full_cost.is_finite() {
        return Err(Error::Domain(format!(
            "baseline cost must be positive, got {full_cost}"
        )));
    }
    Ok((full_cost - staged_cost) / full_cost)
}

/// Assembled dollar report for one staged run: per-phase costs, totals, and
/// the savings fraction when a baseline cost is known.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CostReport {
    pub s_cost: f64,
    pub f_cost: f64,
    pub total_cost: f64,
    pub total_time_h: f64,
    pub savings_vs_baseline: Option<f64>,
}

impl CostReport {
    pub fn new(totals: StagedTotals, baseline_cost: Option<f64>) -> Result<CostReport> {
        let savings_vs_baseline = match baseline_cost {
            Some(full) => Some(savings(full, totals.total_cost)?),
            None => None,
        };
        let report = CostReport {
            s_cost: totals.s_cost,
            f_cost: totals.f_cost,
            total_cost: totals.total_cost,
            total_time_h: totals.total_time_h,
            savings_vs_baseline,
        };
        report.validate()?;
        Ok(report)
    }

    pub fn validate(&self) -> Result<()> {
        if (self.total_cost - (self.s_cost + self.f_cost)).abs() > 1e-9 {
            return Err(Error::Domain(format!(
                "total {} is not the sum of phase costs {} + {}",
                self.total_cost, self.s_cost, self.f_cost
            )));
        }
        if let Some(s) = self.savings_vs_baseline {
            if s > 0.0 && !(0.0..1.0).contains(&s) {
                return Err(Error::Domain(format!(
                    "savings fraction {s} outside [0, 1)"
                )));
            }
        }
        Ok(())
    }
}

/// Piecewise-linear cumulative cost over back-to-back phases, sampled at
/// `resolution_h` plus every phase boundary. Phases must appear in
/// execution order (S before F; Full stands alone).
pub fn emit_cost_curve(phases: &[PhaseRecord], resolution_h: f64) -> Result<Vec<(f64, f64)>> {
    if phases.is_empty() {
        return Err(Error::Input("no phases".to_string()));
    }
    if resolution_h <= 0.0 || !resolution_h.is_finite() {
        return Err(Error::Input(format!("bad resolution {resolution_h}")));
    }
    for pair in phases.windows(2) {
        if pair[1].phase < pair[0].phase {
            return Err(Error::Input(format!(
                "phases out of order: {:?} after {:?}",
                pair[1].phase, pair[0].phase
            )));
        }
    }
    if phases.iter().any(|p| p.phase == Phase::Full) && phases.len() > 1 {
        return Err(Error::Input(
            "a full-parameter phase cannot mix with staged phases".to_string(),
        ));
    }
    let mut points = vec![(0.0, 0.0)];
    let mut t0 = 0.0f64;
    let mut cost0 = 0.0f64;
    for p in phases {
        let slope = p.rate.dollars_per_hour * p.device_count as f64;
        let t_end = t0 + p.wall_time_h;
        let mut t = t0 + resolution_h;
        while t < t_end - 1e-12 {
            points.push((t, cost0 + (t - t0) * slope));
            t += resolution_h;
        }
        cost0 += p.wall_time_h * slope;
        points.push((t_end, cost0));
        t0 = t_end;
    }
    Ok(points)
}

pub fn curve_csv(points: &[(f64, f64)]) -> String {
    let mut out = String::from("time_h,cumulative_dollars\n");
    for (t, c) in points {
        out.push_str(&format!("{t:?},{c:?}\n"));
    }
    out
}

/// Half-even rounding to 4 decimals, applied only when reports are emitted.
pub fn round_dollars(v: f64) -> f64 {
    let scaled = v * 10_000.0;
    let floor = scaled.floor();
    let frac = scaled - floor;
    let rounded = if (frac - 0.5).abs() < 1e-9 {
        // Ties go to the even neighbor.
        if (floor as i64) % 2 == 0 {
            floor
        } else {
            floor + 1.0
        }
    } else {
        scaled.round()
    };
    rounded / 10_000.0
}

// ---- published reference table -------------------------------------------------

pub const RTX4090_RATE: f64 = 0.35;
pub const A100_RATE: f64 = 2.28;

/// One row of the published staged-vs-full cost comparison: measured times
/// and the reported costs, totals, and savings percentage.
#[derive(Debug, Clone)]
pub struct ReferenceRow {
    pub model: &'static str,
    pub dataset: &'static str,
    pub full_time_h: f64,
    pub full_cost: f64,
    pub s_time_h: f64,
    pub s_cost: f64,
    pub s_workers: usize,
    pub f_time_h: f64,
    pub f_cost: f64,
    pub total_cost: f64,
    pub total_time_h: f64,
    /// Savings percentage as published (one decimal).
    pub published_savings_pct: f64,
}

/// The six published rows: Qwen and Llama on C4, WikiText-2, and
/// OpenWebText, all with four submodel workers on RTX 4090 and the
/// full/fine-tune phases on a single A100.
pub fn reference_rows() -> Vec<ReferenceRow> {
    vec![
        ReferenceRow {
            model: "Qwen",
            dataset: "C4",
            full_time_h: 9.87,
            full_cost: 22.5036,
            s_time_h: 2.09,
            s_cost: 2.9260,
            s_workers: 4,
            f_time_h: 1.73,
            f_cost: 3.9444,
            total_cost: 6.8704,
            total_time_h: 3.82,
            published_savings_pct: 69.5,
        },
        ReferenceRow {
            model: "Qwen",
            dataset: "WikiText-2",
            full_time_h: 3.04,
            full_cost: 6.9312,
            s_time_h: 1.28,
            s_cost: 1.7920,
            s_workers: 4,
            f_time_h: 0.68,
            f_cost: 1.5504,
            total_cost: 3.3424,
            total_time_h: 1.96,
            published_savings_pct: 51.8,
        },
        ReferenceRow {
            model: "Qwen",
            dataset: "OpenWebText",
            full_time_h: 13.12,
            full_cost: 29.9136,
            s_time_h: 3.12,
            s_cost: 4.3680,
            s_workers: 4,
            f_time_h: 2.87,
            f_cost: 6.5436,
            total_cost: 10.9116,
            total_time_h: 5.99,
            published_savings_pct: 63.5,
        },
        ReferenceRow {
            model: "Llama",
            dataset: "C4",
            full_time_h: 5.64,
            full_cost: 12.8592,
            s_time_h: 1.54,
            s_cost: 2.1560,
            s_workers: 4,
            f_time_h: 2.01,
            f_cost: 4.5828,
            total_cost: 6.7388,
            total_time_h: 3.55,
            published_savings_pct: 47.6,
        },
        ReferenceRow {
            model: "Llama",
            dataset: "WikiText-2",
            full_time_h: 7.45,
            full_cost: 16.9860,
            s_time_h: 1.46,
            s_cost: 2.0440,
            s_workers: 4,
            f_time_h: 2.67,
            f_cost: 6.0876,
            total_cost: 8.1316,
            total_time_h: 4.13,
            published_savings_pct: 52.2,
        },
        ReferenceRow {
            model: "Llama",
            dataset: "OpenWebText",
            full_time_h: 14.09,
            full_cost: 32.1252,
            s_time_h: 3.01,
            s_cost: 4.2140,
            s_workers: 4,
            f_time_h: 4.79,
            f_cost: 10.9212,
            total_cost: 15.1352,
            total_time_h: 7.80,
            published_savings_pct: 52.9,
        },
    ]
}

/// A recomputed replay row: every cost derived from the row's times, rates,
/// and device counts, next to the published figures.
#[derive(Debug, Clone)]
pub struct ReplayRow {
    pub reference: ReferenceRow,
    pub full_cost: f64,
    pub totals: StagedTotals,
    pub savings_fraction: f64,
}

pub fn replay_reference_table() -> Result<Vec<ReplayRow>> {
    let rtx = DeviceRate::new("RTX4090", RTX4090_RATE)?;
    let a100 = DeviceRate::new("A100", A100_RATE)?;
    reference_rows()
        .into_iter()
        .map(|row| {
            let full_cost = phase_cost(row.full_time_h, &a100, 1)?;
            let totals = staged_totals(row.s_time_h, row.s_workers, &rtx, row.f_time_h, 1, &a100)?;
            let savings_fraction = savings(full_cost, totals.total_cost)?;
            Ok(ReplayRow {
                reference: row,
                full_cost,
                totals,
                savings_fraction,
            })
        })
        .collect()
}

/// Tab-delimited replay report mirroring the published table's columns,
/// with the savings column carrying both the recomputed and the published
/// percentage.
pub fn replay_report() -> Result<String> {
    let rows = replay_reference_table()?;
    let mut out = String::from(
        "model\tdataset\tfull_cost\tfull_time_h\ts_cost\ts_time_h\tf_cost\tf_time_h\t\
         total_cost\ttotal_time_h\tsavings_pct\tsavings_pct_published\n",
    );
    for r in &rows {
        out.push_str(&format!(
            "{}\t{}\t{:.4}\t{:.2}\t{:.4}\t{:.2}\t{:.4}\t{:.2}\t{:.4}\t{:.2}\t{:.1}\t{:.1}\n",
            r.reference.model,
            r.reference.dataset,
            round_dollars(r.full_cost),
            r.reference.full_time_h,
            round_dollars(r.totals.s_cost),
            r.reference.s_time_h,
            round_dollars(r.totals.f_cost),
            r.reference.f_time_h,
            round_dollars(r.totals.total_cost),
            r.totals.total_time_h,
            r.savings_fraction * 100.0,
            r.reference.published_savings_pct,
        ));
    }
    Ok(out)
}
