//! Benchmark harness: runs both optimizers over case sequences, records
//! wall times, fits exponential and power scaling laws, extrapolates them,
//! and cross-evaluates optimality gaps by re-simulating both designs under
//! the one shared physics engine.

use crate::costing::{total_cost, CostBreakdown, CostMode};
use crate::design::{DesignFile, DesignVector};
use crate::error::{HeatNetError, Result};
use crate::fminlp::{optimize_fminlp, FminlpConfig};
use crate::network::Network;
use crate::pnlp::{delivered_heat, demand_positive_hs, optimize_pnlp, PnlpConfig};
use crate::sim::system::{EdgeClass, SimOptions};
use crate::sim::{solve_system, SimConfig};
use faer::prelude::Solve;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

pub const RESULT_SCHEMA: &str = "heatnet-result/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Pnlp,
    Fminlp,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Method::Pnlp => write!(f, "pnlp"),
            Method::Fminlp => write!(f, "fminlp"),
        }
    }
}

impl std::str::FromStr for Method {
    type Err = HeatNetError;
    fn from_str(s: &str) -> Result<Method> {
        match s {
            "pnlp" => Ok(Method::Pnlp),
            "fminlp" => Ok(Method::Fminlp),
            other => Err(HeatNetError::InvalidParam {
                name: "method",
                reason: format!("unknown method {other}"),
            }),
        }
    }
}

/// One timed optimization run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkRecord {
    pub case_id: String,
    /// Candidate pipe-pair count.
    pub n: u32,
    pub method: Method,
    pub repetition: u32,
    pub wall_time_s: f64,
    pub converged: bool,
    pub total_cost: f64,
    /// Node count for combinatorial runs (search effort indicator).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nodes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub design_ref: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitModel {
    /// w = a e^(b n)
    Exponential,
    /// w = a n^b
    Power,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalingFit {
    pub model: FitModel,
    pub a: f64,
    pub b: f64,
    /// Coefficient of determination on the original (not log) scale; may be
    /// negative for a model family that fits worse than the mean.
    pub r_squared: f64,
}

/// Optimized-result file written by the `optimize` subcommand.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultFile {
    pub schema: String,
    pub method: Method,
    pub case: String,
    pub converged: bool,
    pub cost: CostBreakdown,
    pub outer_iterations: usize,
    pub history: Vec<(usize, f64)>,
    pub design: DesignFile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fminlp: Option<FminlpExtras>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FminlpExtras {
    /// Installed pipe pairs, keyed by feed edge id.
    pub phi: BTreeMap<u32, bool>,
    pub stage_costs: Vec<(String, f64)>,
    pub node_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gap: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl ResultFile {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
    pub fn load(path: &Path) -> Result<ResultFile> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

#[derive(Debug, Clone)]
pub struct BenchmarkSetup {
    pub methods: Vec<Method>,
    pub repetitions: u32,
    pub pnlp: PnlpConfig,
    pub fminlp: FminlpConfig,
}

impl Default for BenchmarkSetup {
    fn default() -> Self {
        BenchmarkSetup {
            methods: vec![Method::Pnlp, Method::Fminlp],
            repetitions: 3,
            pnlp: PnlpConfig::default(),
            fminlp: FminlpConfig::default(),
        }
    }
}

/// Run each method on each case `repetitions` times, single-threaded, and
/// time only the optimize call. Runs that fail or do not converge are kept
/// in the records (flagged) but never enter the fits.
pub fn run_benchmark(
    cases: &[(String, Network)],
    setup: &BenchmarkSetup,
    design_dir: Option<&Path>,
) -> Vec<BenchmarkRecord> {
    // Timed sections are single-threaded by contract.
    std::env::set_var("HEATNET_THREADS", "1");
    faer::set_global_parallelism(faer::Par::Seq);

    let mut records = Vec::new();
    for (case_id, network) in cases {
        let n = network.n_pipe_pairs() as u32;
        for &method in &setup.methods {
            for rep in 0..setup.repetitions.max(1) {
                let start = Instant::now();
                let outcome: std::result::Result<(bool, f64, Option<usize>, DesignVector), String> =
                    match method {
                        Method::Pnlp => optimize_pnlp(network, &setup.pnlp, None)
                            .map(|r| (r.converged, r.cost.total_npv, None, r.design))
                            .map_err(|e| e.to_string()),
                        Method::Fminlp => optimize_fminlp(network, &setup.fminlp)
                            .map(|r| {
                                (
                                    r.result.converged,
                                    r.result.cost.total_npv,
                                    Some(r.node_count),
                                    r.result.design,
                                )
                            })
                            .map_err(|e| e.to_string()),
                    };
                let wall_time_s = start.elapsed().as_secs_f64();
                let record = match outcome {
                    Ok((converged, cost, nodes, design)) => {
                        let design_ref = design_dir.map(|dir| {
                            let name = format!("{case_id}-{method}-rep{rep}.design.json");
                            let path = dir.join(&name);
                            let _ = design.to_file(network).save(&path);
                            name
                        });
                        BenchmarkRecord {
                            case_id: case_id.clone(),
                            n,
                            method,
                            repetition: rep,
                            wall_time_s,
                            converged,
                            total_cost: cost,
                            nodes,
                            design_ref,
                            note: None,
                        }
                    }
                    Err(e) => BenchmarkRecord {
                        case_id: case_id.clone(),
                        n,
                        method,
                        repetition: rep,
                        wall_time_s,
                        converged: false,
                        total_cost: f64::NAN,
                        nodes: None,
                        design_ref: None,
                        note: Some(e),
                    },
                };
                records.push(record);
            }
        }
    }
    records
}

/// Mean wall time per distinct size over converged records only.
fn converged_means(records: &[BenchmarkRecord], method: Method) -> Vec<(f64, f64)> {
    let mut by_n: BTreeMap<u32, (f64, u32)> = BTreeMap::new();
    for r in records {
        if r.method == method && r.converged {
            let entry = by_n.entry(r.n).or_insert((0.0, 0));
            entry.0 += r.wall_time_s;
            entry.1 += 1;
        }
    }
    by_n
        .into_iter()
        .map(|(n, (sum, count))| (n as f64, sum / count as f64))
        .collect()
}

/// Least squares on log-transformed data; R^2 on the original scale.
pub fn fit_scaling(records: &[BenchmarkRecord], method: Method, model: FitModel) -> Result<ScalingFit> {
    let points = converged_means(records, method);
    fit_points(&points, model)
}

pub fn fit_points(points: &[(f64, f64)], model: FitModel) -> Result<ScalingFit> {
    let usable: Vec<(f64, f64)> = points.iter().filter(|(_, w)| *w > 0.0).copied().collect();
    if usable.len() < 3 {
        return Err(HeatNetError::InsufficientData { needed: 3, got: usable.len() });
    }
    let xs: Vec<f64> = usable
        .iter()
        .map(|(n, _)| match model {
            FitModel::Exponential => *n,
            FitModel::Power => n.ln(),
        })
        .collect();
    let ys: Vec<f64> = usable.iter().map(|(_, w)| w.ln()).collect();
    let m = xs.len() as f64;
    let sx: f64 = xs.iter().sum();
    let sy: f64 = ys.iter().sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| x * y).sum();
    let denom = m * sxx - sx * sx;
    if denom.abs() < 1e-12 {
        return Err(HeatNetError::InsufficientData { needed: 3, got: 1 });
    }
    let b = (m * sxy - sx * sy) / denom;
    let ln_a = (sy - b * sx) / m;
    let a = ln_a.exp();

    let mean_w: f64 = usable.iter().map(|(_, w)| w).sum::<f64>() / m;
    let ss_tot: f64 = usable.iter().map(|(_, w)| (w - mean_w).powi(2)).sum();
    let ss_res: f64 = usable
        .iter()
        .map(|(n, w)| {
            let predicted = match model {
                FitModel::Exponential => a * (b * n).exp(),
                FitModel::Power => a * n.powf(b),
            };
            (w - predicted).powi(2)
        })
        .sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok(ScalingFit { model, a, b, r_squared })
}

/// A fitted model evaluated at size `n`, with a human-readable duration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Extrapolation {
    pub n: f64,
    pub seconds: f64,
    pub human: String,
}

pub const SECONDS_PER_HOUR: f64 = 3600.0;
pub const SECONDS_PER_YEAR: f64 = 365.25 * 86400.0;

pub fn extrapolate(fit: &ScalingFit, n: f64) -> Extrapolation {
    let seconds = match fit.model {
        FitModel::Exponential => fit.a * (fit.b * n).exp(),
        FitModel::Power => fit.a * n.powf(fit.b),
    };
    let human = if seconds < SECONDS_PER_HOUR {
        format!("{seconds:.1} s")
    } else if seconds < SECONDS_PER_YEAR {
        format!("{:.1} h", seconds / SECONDS_PER_HOUR)
    } else {
        format!("{:.0} years", seconds / SECONDS_PER_YEAR)
    };
    Extrapolation { n, seconds, human }
}

/// Feasibility, cost and producer attribution of one design under the
/// common physics engine.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub feasible: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost: Option<CostBreakdown>,
    /// Fraction of total served demand attributed to each producer by
    /// water-source tracing, keyed by producer arc edge id.
    #[serde(default)]
    pub producer_demand_share: BTreeMap<u32, f64>,
    /// Same attribution restricted to modern (highest heater coefficient)
    /// houses, present only when the case has mixed house classes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modern_demand_share: Option<BTreeMap<u32, f64>>,
}

/// Componentwise cost difference a - b.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CostDelta {
    pub pipe_capex: f64,
    pub heat_capex: f64,
    pub heat_opex_annualized: f64,
    pub pump_opex_annualized: f64,
    pub total_npv: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Cheaper {
    A,
    B,
    Tie,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GapReport {
    pub a: EvalOutcome,
    pub b: EvalOutcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<CostDelta>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cheaper: Option<Cheaper>,
}

/// Evaluate one design: simulate, check demand, cost at raw mode, attribute
/// served demand to producers by source tracing.
pub fn evaluate_design(network: &Network, design: &DesignVector, sim: &SimConfig) -> EvalOutcome {
    let infeasible = |reason: String| EvalOutcome {
        feasible: false,
        reason: Some(reason),
        cost: None,
        producer_demand_share: BTreeMap::new(),
        modern_demand_share: None,
    };
    let solved = match solve_system(network, design, sim, &SimOptions::standard(), None) {
        Ok(s) => s,
        Err(e) => return infeasible(e.to_string()),
    };
    if !solved.result.converged {
        return infeasible(format!(
            "state solve did not converge (residual {:.3e})",
            solved.result.residual_norm
        ));
    }
    let hs_edges = demand_positive_hs(network);
    let delivered = delivered_heat(network, &solved.result, &hs_edges);
    const EVAL_DEMAND_TOL: f64 = 1e-3;
    for (ci, &e) in hs_edges.iter().enumerate() {
        let demand = network.consumers[&network.edges[e].id].demand;
        if delivered[ci] < demand * (1.0 - EVAL_DEMAND_TOL) {
            return infeasible(format!(
                "demand shortfall at consumer {}: {:.1} of {:.1} W",
                network.edges[e].id, delivered[ci], demand
            ));
        }
    }
    let cost = match total_cost(design, &solved.result, network, CostMode::Raw) {
        Ok(c) => c,
        Err(e) => return infeasible(e.to_string()),
    };

    let shares = producer_demand_shares(network, &solved);
    let producer_demand_share = shares
        .iter()
        .map(|(id, all, _)| (*id, *all))
        .collect::<BTreeMap<_, _>>();
    let has_classes = {
        let coefs: Vec<f64> = network.consumers.values().map(|c| c.heater_coef).collect();
        coefs.iter().any(|&c| c != coefs[0])
    };
    let modern_demand_share = has_classes.then(|| {
        shares
            .iter()
            .map(|(id, _, modern)| (*id, *modern))
            .collect::<BTreeMap<_, _>>()
    });
    EvalOutcome {
        feasible: true,
        reason: None,
        cost: Some(cost),
        producer_demand_share,
        modern_demand_share,
    }
}

/// Water-source tracing: per producer, the fraction of each consumer's feed
/// water that originated at that producer, aggregated into demand shares.
/// Returns (arc edge id, share of all demand, share of modern demand).
fn producer_demand_shares(network: &Network, solved: &crate::sim::Solved) -> Vec<(u32, f64, f64)> {
    use faer::sparse::{SparseColMat, Triplet};
    let layout = &solved.layout;
    let x = &solved.x;
    let n = layout.n_n + layout.n_e;
    let idx_node = |slot: usize| slot;
    let idx_exit = |slot: usize| layout.n_n + slot;

    // One linear tracing system shared by all producers; only the right-hand
    // side (which producer injects "dye") changes.
    let mut trips: Vec<Triplet<usize, usize, f64>> = Vec::new();
    for node in 0..layout.n_n {
        trips.push(Triplet::new(idx_node(node), idx_node(node), 1.0));
    }
    // Mixing rows: frac_node - sum(w frac_exit)/W = rhs 0.
    {
        let mut weights: Vec<Vec<(usize, f64)>> = vec![Vec::new(); layout.n_n];
        for slot in 0..layout.n_e {
            let (tn, hn) = layout.edge_ends(network, slot);
            let q = x[layout.iq(slot)];
            let aq = (q * q + crate::sim::physics::Q_EPS.powi(2)).sqrt();
            let w_head = 0.5 * (aq + q);
            let w_tail = 0.5 * (aq - q);
            weights[hn].push((slot, w_head));
            weights[tn].push((slot, w_tail));
        }
        for node in 0..layout.n_n {
            let total: f64 = weights[node].iter().map(|(_, w)| w).sum();
            for &(slot, w) in &weights[node] {
                trips.push(Triplet::new(idx_node(node), idx_exit(slot), -w / total));
            }
        }
    }
    // Exit rows.
    for slot in 0..layout.n_e {
        let (tn, hn) = layout.edge_ends(network, slot);
        trips.push(Triplet::new(idx_exit(slot), idx_exit(slot), 1.0));
        match layout.class[slot] {
            EdgeClass::Pipe { .. } => {
                let q = x[layout.iq(slot)];
                let aq = (q * q + crate::sim::physics::Q_EPS.powi(2)).sqrt();
                let w_head = 0.5 * (aq + q);
                let w_tail = 0.5 * (aq - q);
                trips.push(Triplet::new(idx_exit(slot), idx_node(tn), -w_head / aq));
                trips.push(Triplet::new(idx_exit(slot), idx_node(hn), -w_tail / aq));
            }
            EdgeClass::HeatingSystem => {
                trips.push(Triplet::new(idx_exit(slot), idx_node(tn), -1.0));
            }
            EdgeClass::ProducerArc { .. } => {
                // frac_exit = 1 or 0 from the rhs.
            }
        }
    }
    let mat = match SparseColMat::try_new_from_triplets(n, n, &trips) {
        Ok(m) => m,
        Err(_) => return Vec::new(),
    };
    let Ok(lu) = mat.sp_lu() else { return Vec::new() };

    let hs_edges = demand_positive_hs(network);
    let max_coef = network
        .consumers
        .values()
        .map(|c| c.heater_coef)
        .fold(0.0f64, f64::max);
    let total_demand: f64 = hs_edges
        .iter()
        .map(|&e| network.consumers[&network.edges[e].id].demand)
        .sum();
    let modern_demand: f64 = hs_edges
        .iter()
        .filter(|&&e| network.consumers[&network.edges[e].id].heater_coef == max_coef)
        .map(|&e| network.consumers[&network.edges[e].id].demand)
        .sum();

    let mut out = Vec::new();
    for (p, &arc) in network.producer_arcs.iter().enumerate() {
        let rhs = faer::Mat::from_fn(n, 1, |i, _| {
            let mut v = 0.0;
            for slot in 0..layout.n_e {
                if let EdgeClass::ProducerArc { producer, .. } = layout.class[slot] {
                    if idx_exit(slot) == i && producer == p {
                        v = 1.0;
                    }
                }
            }
            v
        });
        let sol = lu.solve(&rhs);
        let mut served_all = 0.0;
        let mut served_modern = 0.0;
        for &e in &hs_edges {
            let Some(slot) = layout.edge_slot[e] else { continue };
            let (tn, _) = layout.edge_ends(network, slot);
            let frac = sol[(idx_node(tn), 0)].clamp(0.0, 1.0);
            let spec = &network.consumers[&network.edges[e].id];
            served_all += frac * spec.demand;
            if spec.heater_coef == max_coef {
                served_modern += frac * spec.demand;
            }
        }
        out.push((
            network.edges[arc].id,
            if total_demand > 0.0 { served_all / total_demand } else { 0.0 },
            if modern_demand > 0.0 { served_modern / modern_demand } else { 0.0 },
        ));
    }
    out
}

/// Cross-evaluate two designs on one network with the common simulator and
/// raw costing.
pub fn cross_evaluate(
    network: &Network,
    design_a: &DesignVector,
    design_b: &DesignVector,
    sim: &SimConfig,
) -> GapReport {
    let a = evaluate_design(network, design_a, sim);
    let b = evaluate_design(network, design_b, sim);
    let (delta, cheaper) = match (&a.cost, &b.cost) {
        (Some(ca), Some(cb)) => {
            let delta = CostDelta {
                pipe_capex: ca.pipe_capex - cb.pipe_capex,
                heat_capex: ca.heat_capex - cb.heat_capex,
                heat_opex_annualized: ca.heat_opex_annualized - cb.heat_opex_annualized,
                pump_opex_annualized: ca.pump_opex_annualized - cb.pump_opex_annualized,
                total_npv: ca.total_npv - cb.total_npv,
            };
            let cheaper = if (ca.total_npv - cb.total_npv).abs() <= 1e-9 * ca.total_npv.abs().max(1.0)
            {
                Cheaper::Tie
            } else if ca.total_npv < cb.total_npv {
                Cheaper::A
            } else {
                Cheaper::B
            };
            (Some(delta), Some(cheaper))
        }
        _ => (None, None),
    };
    GapReport { a, b, delta, cheaper }
}

/// Write records (JSONL), a CSV summary, fit parameters and plot-ready
/// scaling series with a stable column order. Re-export of identical inputs
/// is byte-identical.
pub fn export_report(
    records: &[BenchmarkRecord],
    fits: &[(Method, ScalingFit)],
    gaps: &[(String, GapReport)],
    out_dir: &Path,
) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;

    let mut jsonl = String::new();
    for r in records {
        jsonl.push_str(&serde_json::to_string(r)?);
        jsonl.push('\n');
    }
    std::fs::write(out_dir.join("records.jsonl"), jsonl)?;

    let mut csv = String::from("case_id,n,method,repetition,wall_time_s,converged,total_cost\n");
    for r in records {
        writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            r.case_id, r.n, r.method, r.repetition, r.wall_time_s, r.converged, r.total_cost
        )
        .expect("write to string");
    }
    std::fs::write(out_dir.join("summary.csv"), csv)?;

    let fits_json: Vec<serde_json::Value> = fits
        .iter()
        .map(|(method, fit)| {
            serde_json::json!({
                "method": method.to_string(),
                "model": match fit.model { FitModel::Exponential => "exponential", FitModel::Power => "power" },
                "a": fit.a,
                "b": fit.b,
                "r_squared": fit.r_squared,
            })
        })
        .collect();
    std::fs::write(
        out_dir.join("fits.json"),
        serde_json::to_string_pretty(&fits_json)?,
    )?;

    // Plot-ready series: one line per (method, n) with mean wall time, in
    // linear and log coordinates.
    let mut semilog = String::from("method,n,mean_wall_time_s\n");
    let mut loglog = String::from("method,ln_n,ln_mean_wall_time_s\n");
    for method in [Method::Pnlp, Method::Fminlp] {
        for (n, w) in converged_means(records, method) {
            writeln!(semilog, "{method},{n},{w}").expect("write to string");
            writeln!(loglog, "{method},{},{}", n.ln(), w.ln()).expect("write to string");
        }
    }
    std::fs::write(out_dir.join("scaling_semilog.csv"), semilog)?;
    std::fs::write(out_dir.join("scaling_loglog.csv"), loglog)?;

    let mut bars = String::from("case_id,n,method,total_cost\n");
    for r in records {
        if r.converged {
            writeln!(bars, "{},{},{},{}", r.case_id, r.n, r.method, r.total_cost)
                .expect("write to string");
        }
    }
    std::fs::write(out_dir.join("cost_bars.csv"), bars)?;

    if !gaps.is_empty() {
        let entries: Vec<serde_json::Value> = gaps
            .iter()
            .map(|(id, gap)| serde_json::json!({ "case": id, "report": gap }))
            .collect();
        std::fs::write(
            out_dir.join("gaps.json"),
            serde_json::to_string_pretty(&entries)?,
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic_records(points: &[(u32, f64)], method: Method, converged: bool) -> Vec<BenchmarkRecord> {
        points
            .iter()
            .map(|&(n, w)| BenchmarkRecord {
                case_id: format!("case-{n}"),
                n,
                method,
                repetition: 0,
                wall_time_s: w,
                converged,
                total_cost: 1.0,
                nodes: None,
                design_ref: None,
                note: None,
            })
            .collect()
    }

    #[test]
    fn exact_power_law_recovered() {
        let points: Vec<(u32, f64)> =
            [13u32, 63, 113, 213, 313].iter().map(|&n| (n, 0.04 * (n as f64).powf(1.72))).collect();
        let records = synthetic_records(&points, Method::Pnlp, true);
        let fit = fit_scaling(&records, Method::Pnlp, FitModel::Power).unwrap();
        assert!((fit.a - 0.04).abs() < 1e-6 * 0.04, "a = {}", fit.a);
        assert!((fit.b - 1.72).abs() < 1e-6, "b = {}", fit.b);
        assert!((fit.r_squared - 1.0).abs() < 1e-9);
    }

    #[test]
    fn exact_exponential_recovered() {
        let points: Vec<(u32, f64)> =
            [13u32, 38, 63, 88, 113].iter().map(|&n| (n, 51.43 * (0.012 * n as f64).exp())).collect();
        let records = synthetic_records(&points, Method::Fminlp, true);
        let fit = fit_scaling(&records, Method::Fminlp, FitModel::Exponential).unwrap();
        assert!((fit.a - 51.43).abs() < 1e-6 * 51.43, "a = {}", fit.a);
        assert!((fit.b - 0.012).abs() < 1e-9, "b = {}", fit.b);
        assert!((fit.r_squared - 1.0).abs() < 1e-9);
    }

    #[test]
    fn nonconverged_records_never_enter_fits() {
        let mut records = synthetic_records(
            &[(13, 1.0), (63, 2.0), (113, 3.0), (213, 4.0)],
            Method::Pnlp,
            true,
        );
        // A wildly off non-converged record must not perturb the fit.
        let mut bad = synthetic_records(&[(313, 1e9)], Method::Pnlp, false);
        records.append(&mut bad);
        let with = fit_scaling(&records, Method::Pnlp, FitModel::Power).unwrap();
        let without = fit_scaling(&records[..4], Method::Pnlp, FitModel::Power).unwrap();
        assert_eq!(with.a, without.a);
        assert_eq!(with.b, without.b);
    }

    #[test]
    fn insufficient_data_is_an_error() {
        let records = synthetic_records(&[(13, 1.0), (63, 2.0)], Method::Pnlp, true);
        assert!(fit_scaling(&records, Method::Pnlp, FitModel::Power).is_err());
    }

    #[test]
    fn extrapolation_reproduces_reported_horizons() {
        // Exponential a = 51.43 s, b = 0.012 at n = 2000: about 43 000 years.
        let exp_fit =
            ScalingFit { model: FitModel::Exponential, a: 51.43, b: 0.012, r_squared: 1.0 };
        let years = extrapolate(&exp_fit, 2000.0);
        let years_value = years.seconds / SECONDS_PER_YEAR;
        assert!(
            (years_value - 43_000.0).abs() / 43_000.0 < 0.05,
            "extrapolated {years_value} years"
        );
        assert!(years.human.contains("years"));

        // Power a = 0.04 s, b = 1.72 at n = 2000: about 5.3 hours.
        let pow_fit = ScalingFit { model: FitModel::Power, a: 0.04, b: 1.72, r_squared: 1.0 };
        let hours = extrapolate(&pow_fit, 2000.0);
        let hours_value = hours.seconds / SECONDS_PER_HOUR;
        assert!((hours_value - 5.3).abs() / 5.3 < 0.05, "extrapolated {hours_value} hours");
        assert!(hours.human.contains("h"));
    }

    #[test]
    fn extrapolation_at_fitted_sample_uses_model() {
        let fit = ScalingFit { model: FitModel::Power, a: 2.0, b: 1.0, r_squared: 0.5 };
        // Model value 2n even if a sample at n had a different time.
        let e = extrapolate(&fit, 10.0);
        assert!((e.seconds - 20.0).abs() < 1e-12);
    }

    #[test]
    fn power_noise_prefers_power_fit_majority() {
        // Monte-Carlo oracle: data from a power law with 10% multiplicative
        // noise; the power fit should beat the exponential fit on original-
        // scale R^2 in a clear majority of seeds.
        use rand::rngs::StdRng;
        use rand::{Rng, SeedableRng};
        let sizes = [13u32, 63, 113, 163, 213, 263, 313];
        let mut power_wins = 0;
        let trials = 120;
        for seed in 0..trials {
            let mut rng = StdRng::seed_from_u64(seed);
            let points: Vec<(f64, f64)> = sizes
                .iter()
                .map(|&n| {
                    let noise = 1.0 + 0.1 * (2.0 * rng.random::<f64>() - 1.0);
                    (n as f64, 0.04 * (n as f64).powf(1.72) * noise)
                })
                .collect();
            let p = fit_points(&points, FitModel::Power).unwrap();
            let e = fit_points(&points, FitModel::Exponential).unwrap();
            if p.r_squared > e.r_squared {
                power_wins += 1;
            }
        }
        assert!(
            power_wins * 2 > trials,
            "power fit won only {power_wins}/{trials} trials"
        );
    }

    #[test]
    fn export_is_byte_identical(){
        let dir = tempfile::tempdir().unwrap();
        let records = synthetic_records(&[(13, 1.0), (63, 2.0), (113, 3.0)], Method::Pnlp, true);
        let fit = fit_scaling(&records, Method::Pnlp, FitModel::Power).unwrap();
        export_report(&records, &[(Method::Pnlp, fit.clone())], &[], dir.path()).unwrap();
        let first = std::fs::read(dir.path().join("records.jsonl")).unwrap();
        let first_csv = std::fs::read(dir.path().join("summary.csv")).unwrap();
        export_report(&records, &[(Method::Pnlp, fit)], &[], dir.path()).unwrap();
        assert_eq!(first, std::fs::read(dir.path().join("records.jsonl")).unwrap());
        assert_eq!(first_csv, std::fs::read(dir.path().join("summary.csv")).unwrap());
    }

    #[test]
    fn identical_designs_have_zero_gap() {
        use crate::design::uniform_design;
        use crate::network::testutil::toy_network;
        let net = toy_network(15_000.0, 100.0);
        let design = uniform_design(&net, 0.1).unwrap();
        let report = cross_evaluate(&net, &design, &design, &SimConfig::default());
        let delta = report.delta.unwrap();
        assert_eq!(delta.total_npv, 0.0);
        assert_eq!(report.cheaper, Some(Cheaper::Tie));
    }

    #[test]
    fn gap_is_antisymmetric() {
        use crate::design::uniform_design;
        use crate::network::testutil::toy_network;
        let net = toy_network(15_000.0, 100.0);
        let a = uniform_design(&net, 0.08).unwrap();
        let b = uniform_design(&net, 0.12).unwrap();
        let ab = cross_evaluate(&net, &a, &b, &SimConfig::default());
        let ba = cross_evaluate(&net, &b, &a, &SimConfig::default());
        let d_ab = ab.delta.unwrap();
        let d_ba = ba.delta.unwrap();
        assert!((d_ab.total_npv + d_ba.total_npv).abs() < 1e-9 * d_ab.total_npv.abs().max(1.0));
        assert!((d_ab.pipe_capex + d_ba.pipe_capex).abs() < 1e-9 * d_ab.pipe_capex.abs().max(1.0));
        assert!(
            (d_ab.heat_opex_annualized + d_ba.heat_opex_annualized).abs()
                < 1e-9 * d_ab.heat_opex_annualized.abs().max(1.0)
        );
    }

    #[test]
    fn missing_pipe_yields_infeasible_verdict() {
        use crate::design::uniform_design;
        use crate::network::testutil::toy_network;
        let net = toy_network(15_000.0, 100.0);
        let good = uniform_design(&net, 0.1).unwrap();
        let mut broken = good.clone();
        broken.diameters[0] = 0.0;
        let report = cross_evaluate(&net, &good, &broken, &SimConfig::default());
        assert!(report.a.feasible);
        assert!(!report.b.feasible);
        assert!(report.delta.is_none());
    }

    #[test]
    fn single_producer_serves_all_demand() {
        use crate::design::uniform_design;
        use crate::network::testutil::toy_network;
        let net = toy_network(15_000.0, 100.0);
        let design = uniform_design(&net, 0.1).unwrap();
        let outcome = evaluate_design(&net, &design, &SimConfig::default());
        assert!(outcome.feasible);
        let share = outcome.producer_demand_share.values().next().unwrap();
        assert!((share - 1.0).abs() < 1e-6, "share = {share}");
    }
}
