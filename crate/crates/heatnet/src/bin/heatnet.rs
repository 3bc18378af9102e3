//! Command-line front end: case generation, simulation, optimization,
//! benchmarking and cross-evaluation.

use clap::{Parser, Subcommand};
use heatnet::bench::{
    cross_evaluate, export_report, fit_scaling, run_benchmark, BenchmarkSetup, FitModel,
    FminlpExtras, Method, ResultFile, RESULT_SCHEMA,
};
use heatnet::casegen::{gen_circular, gen_two_producer, CircularCaseSpec, TwoProducerCaseSpec};
use heatnet::costing::{total_cost, CostMode};
use heatnet::design::DesignFile;
use heatnet::fminlp::{optimize_fminlp, FminlpConfig};
use heatnet::pnlp::{optimize_pnlp, PnlpConfig};
use heatnet::sim::{solve_state, SimConfig};
use heatnet::{CaseFile, HeatNetError, Network};
use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "heatnet", about = "District heating network topology optimization", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate benchmark cases.
    Casegen {
        #[command(subcommand)]
        family: CasegenFamily,
    },
    /// Steady-state solve of a case under a given design.
    Simulate {
        #[arg(long)]
        case: PathBuf,
        #[arg(long)]
        design: PathBuf,
        /// Output path for the state JSON.
        #[arg(long, default_value = "state.json")]
        state_out: PathBuf,
        /// Output path for the per-edge CSV (q, dp, theta_in, theta_out).
        #[arg(long, default_value = "edges.csv")]
        csv_out: PathBuf,
    },
    /// Optimize a case topology.
    Optimize {
        #[arg(long)]
        method: Method,
        #[arg(long)]
        case: PathBuf,
        /// Optional JSON config overriding optimizer defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Optional design to initialize from (pnlp only).
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long, default_value = "result.json")]
        out: PathBuf,
    },
    /// Run the scaling benchmark over a sequence of circular cases.
    Bench {
        /// Comma-separated methods, e.g. pnlp,fminlp.
        #[arg(long, default_value = "pnlp,fminlp")]
        methods: String,
        /// Segment sequence start:end:step, e.g. 0:190:10.
        #[arg(long, default_value = "0:60:10")]
        sizes: String,
        #[arg(long, default_value_t = 3)]
        reps: u32,
        #[arg(long)]
        out: PathBuf,
        /// Cap combinatorial runs at this many branch-and-bound nodes.
        #[arg(long, default_value_t = 400)]
        fminlp_nodes: usize,
        /// Per-run wall-clock budget for combinatorial runs, seconds.
        #[arg(long, default_value_t = 600.0)]
        fminlp_time_budget: f64,
    },
    /// Cross-evaluate two designs on one case with the common simulator.
    Evaluate {
        #[arg(long)]
        case: PathBuf,
        /// Exactly two design files.
        #[arg(long = "design", num_args = 1)]
        designs: Vec<PathBuf>,
        /// Optional output path for the gap report JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum CasegenFamily {
    /// Single-producer circular case; candidate pipes n = 5s + 13.
    Circular {
        #[arg(long)]
        segments: u32,
        #[arg(long, default_value = "case.json")]
        out: PathBuf,
    },
    /// Two-producer mixed-temperature case; sizes 1..3 give n = 138/298/618.
    TwoProducer {
        #[arg(long)]
        size: u32,
        #[arg(long, default_value = "case.json")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn load_network(path: &PathBuf) -> heatnet::Result<Network> {
    Network::from_case_file(CaseFile::load(path)?)
}

fn parse_sizes(spec: &str) -> heatnet::Result<Vec<u32>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let bad = || HeatNetError::InvalidParam {
        name: "sizes",
        reason: format!("expected start:end:step, got {spec}"),
    };
    if parts.len() != 3 {
        return Err(bad());
    }
    let start: u32 = parts[0].parse().map_err(|_| bad())?;
    let end: u32 = parts[1].parse().map_err(|_| bad())?;
    let step: u32 = parts[2].parse().map_err(|_| bad())?;
    if step == 0 || end < start {
        return Err(bad());
    }
    Ok((start..=end).step_by(step as usize).collect())
}

fn run(cli: Cli) -> heatnet::Result<()> {
    match cli.command {
        Command::Casegen { family } => match family {
            CasegenFamily::Circular { segments, out } => {
                let case = gen_circular(&CircularCaseSpec { segments, ..Default::default() });
                case.save(&out)?;
                println!(
                    "wrote {} ({} candidate pipe connections)",
                    out.display(),
                    heatnet::casegen::candidate_pipe_count(segments)
                );
            }
            CasegenFamily::TwoProducer { size, out } => {
                let case = gen_two_producer(&TwoProducerCaseSpec { size, ..Default::default() })?;
                let n = case.edges.iter().filter(|e| e.kind == heatnet::EdgeKind::PipeFeed).count();
                case.save(&out)?;
                println!("wrote {} ({n} candidate pipe connections)", out.display());
            }
        },
        Command::Simulate { case, design, state_out, csv_out } => {
            let network = load_network(&case)?;
            let design = DesignFile::load(&design)?.to_design(&network)?;
            let result = solve_state(&network, &design, &SimConfig::default())?;
            if !result.converged {
                eprintln!(
                    "warning: solve did not converge (residual {:.3e})",
                    result.residual_norm
                );
            }
            std::fs::write(&state_out, serde_json::to_string_pretty(&result.state)?)?;

            let mut csv = String::from("edge_id,kind,q_m3_s,dp_pa,theta_in_k,theta_out_k\n");
            for (i, edge) in network.edges.iter().enumerate() {
                let tail = network.node_index(edge.tail).unwrap();
                let head = network.node_index(edge.head).unwrap();
                let dp = result.state.pressure[tail] - result.state.pressure[head];
                writeln!(
                    csv,
                    "{},{:?},{},{},{},{}",
                    edge.id,
                    edge.kind,
                    result.state.flow[i],
                    dp,
                    result.state.theta_node[tail],
                    result.state.theta_exit[i]
                )
                .expect("write to string");
            }
            std::fs::write(&csv_out, csv)?;
            let cost = total_cost(&design, &result, &network, CostMode::Raw)?;
            println!(
                "converged: {} | iterations: {} | total NPV cost: {:.0} EUR",
                result.converged, result.iterations, cost.total_npv
            );
        }
        Command::Optimize { method, case, config, init, out } => {
            let network = load_network(&case)?;
            let case_name = network.name.clone();
            match method {
                Method::Pnlp => {
                    let cfg: PnlpConfig = match &config {
                        Some(path) => parse_pnlp_config(path)?,
                        None => PnlpConfig::default(),
                    };
                    let init_design = match &init {
                        Some(path) => Some(DesignFile::load(path)?.to_design(&network)?),
                        None => None,
                    };
                    let result = optimize_pnlp(&network, &cfg, init_design.as_ref())?;
                    let file = ResultFile {
                        schema: RESULT_SCHEMA.to_string(),
                        method,
                        case: case_name,
                        converged: result.converged,
                        cost: result.cost.clone(),
                        outer_iterations: result.outer_iterations,
                        history: result.history.clone(),
                        design: result.design.to_file(&network),
                        fminlp: None,
                    };
                    file.save(&out)?;
                    println!(
                        "pNLP cost {:.0} EUR (converged: {}) -> {}",
                        result.cost.total_npv,
                        result.converged,
                        out.display()
                    );
                }
                Method::Fminlp => {
                    let cfg: FminlpConfig = match &config {
                        Some(path) => parse_fminlp_config(path)?,
                        None => FminlpConfig::default(),
                    };
                    let report = optimize_fminlp(&network, &cfg)?;
                    let phi = network
                        .pipe_pairs
                        .iter()
                        .enumerate()
                        .map(|(slot, &(f, _))| (network.edges[f].id, report.phi[slot]))
                        .collect();
                    let file = ResultFile {
                        schema: RESULT_SCHEMA.to_string(),
                        method,
                        case: case_name,
                        converged: report.result.converged,
                        cost: report.result.cost.clone(),
                        outer_iterations: report.result.outer_iterations,
                        history: report.result.history.clone(),
                        design: report.result.design.to_file(&network),
                        fminlp: Some(FminlpExtras {
                            phi,
                            stage_costs: report.stage_costs.clone(),
                            node_count: report.node_count,
                            gap: report.gap,
                            warnings: report.warnings.clone(),
                        }),
                    };
                    file.save(&out)?;
                    println!(
                        "fMINLP cost {:.0} EUR over {} nodes (converged: {}) -> {}",
                        report.result.cost.total_npv,
                        report.node_count,
                        report.result.converged,
                        out.display()
                    );
                }
            }
        }
        Command::Bench { methods, sizes, reps, out, fminlp_nodes, fminlp_time_budget } => {
            let methods: Vec<Method> = methods
                .split(',')
                .filter(|s| !s.is_empty())
                .map(str::parse)
                .collect::<heatnet::Result<_>>()?;
            let segment_values = parse_sizes(&sizes)?;
            std::fs::create_dir_all(&out)?;

            let mut cases = Vec::new();
            for s in segment_values {
                let case = gen_circular(&CircularCaseSpec { segments: s, ..Default::default() });
                let network = Network::from_case_file(case)?;
                cases.push((network.name.clone(), network));
            }
            let setup = BenchmarkSetup {
                methods: methods.clone(),
                repetitions: reps,
                fminlp: FminlpConfig {
                    max_nodes: fminlp_nodes,
                    time_budget: fminlp_time_budget,
                    ..FminlpConfig::default()
                },
                ..BenchmarkSetup::default()
            };
            let records = run_benchmark(&cases, &setup, Some(&out));
            let mut fits = Vec::new();
            for &method in &methods {
                for model in [FitModel::Exponential, FitModel::Power] {
                    if let Ok(fit) = fit_scaling(&records, method, model) {
                        println!(
                            "{method} {:?}: a = {:.4}, b = {:.4}, R^2 = {:.3}",
                            model, fit.a, fit.b, fit.r_squared
                        );
                        fits.push((method, fit));
                    }
                }
            }
            export_report(&records, &fits, &[], &out)?;
            println!("wrote benchmark report to {}", out.display());
        }
        Command::Evaluate { case, designs, out } => {
            if designs.len() != 2 {
                return Err(HeatNetError::InvalidParam {
                    name: "design",
                    reason: format!("expected exactly two --design arguments, got {}", designs.len()),
                });
            }
            let network = load_network(&case)?;
            let a = DesignFile::load(&designs[0])?.to_design(&network)?;
            let b = DesignFile::load(&designs[1])?.to_design(&network)?;
            let report = cross_evaluate(&network, &a, &b, &SimConfig::default());
            let json = serde_json::to_string_pretty(&report)?;
            match (&report.a.cost, &report.b.cost, &report.delta) {
                (Some(ca), Some(cb), Some(delta)) => {
                    println!(
                        "A: {:.0} EUR | B: {:.0} EUR | delta(total): {:.0} EUR | cheaper: {:?}",
                        ca.total_npv,
                        cb.total_npv,
                        delta.total_npv,
                        report.cheaper.unwrap()
                    );
                }
                _ => {
                    println!(
                        "A feasible: {} ({:?}) | B feasible: {} ({:?})",
                        report.a.feasible, report.a.reason, report.b.feasible, report.b.reason
                    );
                }
            }
            match out {
                Some(path) => std::fs::write(path, json)?,
                None => println!("{json}"),
            }
        }
    }
    Ok(())
}

#[derive(serde::Deserialize, Default)]
#[serde(default)]
struct PnlpConfigFile {
    d_init: Option<f64>,
    k_schedule: Option<Vec<f64>>,
    max_outer: Option<usize>,
    max_inner: Option<usize>,
    tol_opt: Option<f64>,
    demand_tolerance: Option<f64>,
}

fn parse_pnlp_config(path: &PathBuf) -> heatnet::Result<PnlpConfig> {
    let raw: PnlpConfigFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    let mut cfg = PnlpConfig::default();
    if let Some(v) = raw.d_init {
        cfg.d_init = v;
    }
    if let Some(v) = raw.k_schedule {
        cfg.k_schedule = v;
    }
    if let Some(v) = raw.max_outer {
        cfg.max_outer = v;
    }
    if let Some(v) = raw.max_inner {
        cfg.max_inner = v;
    }
    if let Some(v) = raw.tol_opt {
        cfg.tol_opt = v;
    }
    if let Some(v) = raw.demand_tolerance {
        cfg.demand_tolerance = v;
    }
    Ok(cfg)
}

#[derive(serde::Deserialize, Default)]
#[serde(default)]
struct FminlpConfigFile {
    max_nodes: Option<usize>,
    time_budget: Option<f64>,
    nlp_max_inner: Option<usize>,
    tol_opt: Option<f64>,
    gap_tol: Option<f64>,
}

fn parse_fminlp_config(path: &PathBuf) -> heatnet::Result<FminlpConfig> {
    let raw: FminlpConfigFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    let mut cfg = FminlpConfig::default();
    if let Some(v) = raw.max_nodes {
        cfg.max_nodes = v;
    }
    if let Some(v) = raw.time_budget {
        cfg.time_budget = v;
    }
    if let Some(v) = raw.nlp_max_inner {
        cfg.nlp_max_inner = v;
    }
    if let Some(v) = raw.tol_opt {
        cfg.tol_opt = v;
    }
    if let Some(v) = raw.gap_tol {
        cfg.gap_tol = v;
    }
    Ok(cfg)
}
