//! Command-line front end: decompositions, trade-off curves, asymptotics,
//! scavenging, probe construction/optimization, and the verification suite.

use clap::{Args, Parser, Subcommand, ValueEnum};
use qmetro::asymptotics::{
    conjectured_probe, optimal_probe_asymptotic, scaling_laws, sigma_det_asymptotic,
    sigma_opt_det, sigma_ult,
};
use qmetro::fmt::sig12;
use qmetro::probe_opt;
use qmetro::sdp::{self, SdpOptions};
use qmetro::spin::{decompose, DecomposeOptions, NoiseModel, ProbeSpec};
use qmetro::tradeoff::{default_s_grid, plateau_onset, CriticalMode, TradeoffSolver};
use qmetro::{verify, Error};
use std::io::Write;
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "qmetro",
    version,
    about = "Optimal probabilistic (abstention-based) phase estimation under local dephasing",
    after_help = "Exit codes: 0 success, 1 verification failure, 2 input error, 3 solver failure."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Spin-block decomposition summary: one row per block (j, p_j, nu_j,
    /// trace deviation, PSD margin)
    Decompose(CommonArgs),
    /// Fidelity-vs-success trade-off curve over an S grid (the moderate-n
    /// rescaled-precision curves: sigma² against the abstention probability)
    Tradeoff {
        #[command(flatten)]
        common: CommonArgs,
        /// Solver route: the active-set allocation, the reference SDP, or
        /// both side by side
        #[arg(long, value_enum, default_value_t = SolverChoice::Activeset)]
        solver: SolverChoice,
    },
    /// Ultimate-bound report: maximal-block ground energy vs the closed form,
    /// with the critical-probability scaling estimates
    Ultimate(CommonArgs),
    /// Scavenging curves: precision of the failure branch and of the
    /// all-outcomes protocol along the S grid
    Scavenge(CommonArgs),
    /// Closed-form asymptotics vs exact numerics over a sweep of n
    Asymptote {
        #[command(flatten)]
        common: CommonArgs,
        /// Which asymptotic expression to sweep
        #[arg(long, value_enum, default_value_t = AsymptoteKind::Ultimate)]
        quantity: AsymptoteKind,
        /// Comma-separated qubit counts
        #[arg(long, default_value = "25,50,100,200,400")]
        sweep: String,
    },
    /// Emit a probe file (multicopy, closed-form asymptotic, conjectured, or
    /// numerically optimized)
    Probe {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_enum, default_value_t = ProbeMode::Multicopy)]
        mode: ProbeMode,
        /// Success probability for numeric optimization
        #[arg(long, default_value_t = 1.0)]
        s: f64,
    },
    /// Cross-check suite against the dense oracle (n ≤ 4); exits 1 on any
    /// failed check
    Verify {
        #[command(flatten)]
        common: CommonArgs,
        /// Corrupt the named check (negative control for the report pipeline)
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SolverChoice {
    Activeset,
    Sdp,
    Both,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AsymptoteKind {
    /// 1/(n r²) vs the exact deterministic sigma²
    Deterministic,
    /// (1-r²)/(nr)(1+sqrt(2r/n)) vs the maximal-block ground energy
    Ultimate,
    /// The optimal-probe closed form vs the exact probe optimum
    OptProbe,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ProbeMode {
    Multicopy,
    AsymptoticOpt,
    Conjectured,
    NumericOpt,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Qubit count
    #[arg(long)]
    n: Option<u32>,
    /// Dephasing strength r = 1 - 2 p_f (1 noiseless, 0 fully dephased)
    #[arg(long)]
    r: Option<f64>,
    /// Probe source: `multicopy` or a probe file path
    #[arg(long)]
    probe: Option<String>,
    /// S grid: `default:<count>`, `lin:<lo>:<hi>:<count>`, or `list:a,b,c`
    #[arg(long)]
    s_grid: Option<String>,
    /// Output format
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Output path (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker-thread cap for parallel sections
    #[arg(long)]
    threads: Option<usize>,
    /// Seed for randomized cross-checks
    #[arg(long)]
    seed: Option<u64>,
    /// Config file with `key=value` lines (flags take precedence)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dense-materialization cap for PSD reporting
    #[arg(long)]
    dense_cap: Option<usize>,
}

/// Fully resolved run configuration: defaults < config file < flags.
struct RunConfig {
    n: u32,
    r: f64,
    probe: String,
    s_grid: String,
    format: Format,
    out: Option<PathBuf>,
    seed: u64,
    dense_cap: usize,
}

impl RunConfig {
    fn resolve(args: &CommonArgs) -> Result<Self, Error> {
        let mut n: u32 = 6;
        let mut r: f64 = 0.8;
        let mut probe = "multicopy".to_string();
        let mut s_grid = "default:64".to_string();
        let mut format = Format::Csv;
        let mut out = None;
        let mut threads = None;
        let mut seed: u64 = 17;
        let mut dense_cap: usize = 512;

        if let Some(path) = &args.config {
            let text = std::fs::read_to_string(path)?;
            for line in text.lines() {
                let line = line.split('#').next().unwrap_or("").trim();
                if line.is_empty() {
                    continue;
                }
                let (key, value) = line.split_once('=').ok_or_else(|| {
                    Error::Validation(format!("config line without `=`: `{line}`"))
                })?;
                let (key, value) = (key.trim(), value.trim());
                let bad =
                    |e: String| Error::Validation(format!("config `{key}`: {e}"));
                match key {
                    "n" => n = value.parse().map_err(|e| bad(format!("{e}")))?,
                    "r" => r = value.parse().map_err(|e| bad(format!("{e}")))?,
                    "probe" => probe = value.to_string(),
                    "s_grid" => s_grid = value.to_string(),
                    "format" => {
                        format = match value {
                            "csv" => Format::Csv,
                            "json" => Format::Json,
                            other => return Err(bad(format!("unknown format `{other}`"))),
                        }
                    }
                    "out" => out = Some(PathBuf::from(value)),
                    "threads" => {
                        threads = Some(value.parse().map_err(|e| bad(format!("{e}")))?)
                    }
                    "seed" => seed = value.parse().map_err(|e| bad(format!("{e}")))?,
                    "dense_cap" => {
                        dense_cap = value.parse().map_err(|e| bad(format!("{e}")))?
                    }
                    other => {
                        return Err(Error::Validation(format!("unknown config key `{other}`")))
                    }
                }
            }
        }

        if let Some(v) = args.n {
            n = v;
        }
        if let Some(v) = args.r {
            r = v;
        }
        if let Some(v) = &args.probe {
            probe = v.clone();
        }
        if let Some(v) = &args.s_grid {
            s_grid = v.clone();
        }
        if let Some(v) = args.format {
            format = v;
        }
        if let Some(v) = &args.out {
            out = Some(v.clone());
        }
        if let Some(v) = args.threads {
            threads = Some(v);
        }
        if let Some(v) = args.seed {
            seed = v;
        }
        if let Some(v) = args.dense_cap {
            dense_cap = v;
        }

        if n == 0 {
            return Err(Error::Validation("n must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::Validation(format!("r={r} outside [0, 1]")));
        }
        if let Some(t) = threads {
            // the pool can only be initialized once per process; later calls
            // keep the first configuration
            let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
        }
        Ok(RunConfig {
            n,
            r,
            probe,
            s_grid,
            format,
            out,
            seed,
            dense_cap,
        })
    }

    fn load_probe(&self) -> Result<ProbeSpec, Error> {
        if self.probe == "multicopy" {
            ProbeSpec::multicopy(self.n)
        } else {
            let probe = ProbeSpec::load(std::path::Path::new(&self.probe))?;
            if probe.n() != self.n {
                return Err(Error::Validation(format!(
                    "probe file is for n={}, run requested n={}",
                    probe.n(),
                    self.n
                )));
            }
            Ok(probe)
        }
    }

    /// Success-probability grid, descending in S.
    fn grid(&self) -> Result<Vec<f64>, Error> {
        let spec = self.s_grid.as_str();
        let bad = || Error::Validation(format!("bad S grid spec `{spec}`"));
        let values: Vec<f64> = if let Some(count) = spec.strip_prefix("default:") {
            default_s_grid(count.parse().map_err(|_| bad())?)
        } else if let Some(rest) = spec.strip_prefix("lin:") {
            let parts: Vec<&str> = rest.split(':').collect();
            if parts.len() != 3 {
                return Err(bad());
            }
            let lo: f64 = parts[0].parse().map_err(|_| bad())?;
            let hi: f64 = parts[1].parse().map_err(|_| bad())?;
            let count: usize = parts[2].parse().map_err(|_| bad())?;
            if count < 1 {
                return Err(bad());
            }
            let mut v: Vec<f64> = (0..count)
                .map(|i| lo + (hi - lo) * i as f64 / (count.max(2) - 1) as f64)
                .collect();
            v.sort_by(|a, b| b.partial_cmp(a).unwrap());
            v
        } else if let Some(listing) = spec.strip_prefix("list:") {
            let mut v = listing
                .split(',')
                .map(|x| x.trim().parse::<f64>().map_err(|_| bad()))
                .collect::<Result<Vec<f64>, Error>>()?;
            v.sort_by(|a, b| b.partial_cmp(a).unwrap());
            v
        } else {
            return Err(bad());
        };
        if values.is_empty() || values.iter().any(|s| !(*s > 0.0 && *s <= 1.0)) {
            return Err(Error::Validation(
                "S grid must contain at least one point inside (0, 1]".into(),
            ));
        }
        Ok(values)
    }

    fn write_output(&self, content: &str) -> Result<(), Error> {
        match &self.out {
            Some(path) => std::fs::write(path, content)?,
            None => {
                std::io::stdout().write_all(content.as_bytes())?;
            }
        }
        Ok(())
    }
}

fn main() {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    std::process::exit(code);
}

fn run(cli: Cli) -> Result<i32, Error> {
    match cli.command {
        Command::Decompose(common) => cmd_decompose(&RunConfig::resolve(&common)?),
        Command::Tradeoff { common, solver } => {
            cmd_tradeoff(&RunConfig::resolve(&common)?, solver)
        }
        Command::Ultimate(common) => cmd_ultimate(&RunConfig::resolve(&common)?),
        Command::Scavenge(common) => cmd_scavenge(&RunConfig::resolve(&common)?),
        Command::Asymptote {
            common,
            quantity,
            sweep,
        } => cmd_asymptote(&RunConfig::resolve(&common)?, quantity, &sweep),
        Command::Probe { common, mode, s } => cmd_probe(&RunConfig::resolve(&common)?, mode, s),
        Command::Verify {
            common,
            inject_fault,
        } => cmd_verify(&RunConfig::resolve(&common)?, inject_fault.as_deref()),
    }
}

fn cmd_decompose(config: &RunConfig) -> Result<i32, Error> {
    let probe = config.load_probe()?;
    let noise = NoiseModel::new(config.r)?;
    let decomp = decompose(&probe, &noise);
    let opts = DecomposeOptions {
        dense_cap: config.dense_cap,
    };

    #[derive(serde::Serialize)]
    struct Row {
        j: f64,
        p_j: f64,
        nu_j: String,
        trace_dev: f64,
        psd_margin: Option<f64>,
    }
    let mut rows = Vec::new();
    for block in &decomp.blocks {
        let trace_dev = (block.diag.iter().sum::<f64>() - 1.0).abs();
        let psd_margin = qmetro::spin::full_block_matrix(&probe, &noise, block.two_j, &opts)
            .ok()
            .map(|m| m.symmetric_eigen().eigenvalues.min());
        rows.push(Row {
            j: block.j(),
            p_j: block.p,
            nu_j: block.nu.to_string(),
            trace_dev,
            psd_margin,
        });
    }

    let content = match config.format {
        Format::Json => serde_json::to_string_pretty(&rows).expect("serializable") + "\n",
        Format::Csv => {
            let mut out = String::from("j,p_j,nu_j,trace_dev,psd_margin\n");
            for row in &rows {
                out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    sig12(row.j),
                    sig12(row.p_j),
                    row.nu_j,
                    sig12(row.trace_dev),
                    row.psd_margin.map_or("nan".to_string(), sig12),
                ));
            }
            out
        }
    };
    config.write_output(&content)?;
    Ok(0)
}

fn cmd_tradeoff(config: &RunConfig, solver_choice: SolverChoice) -> Result<i32, Error> {
    let probe = config.load_probe()?;
    let noise = NoiseModel::new(config.r)?;
    let decomp = decompose(&probe, &noise);
    let solver = TradeoffSolver::new(decomp.clone())?;
    let grid = config.grid()?;

    let points = if solver_choice != SolverChoice::Sdp {
        solver.curve(&grid)?
    } else {
        Vec::new()
    };
    let sdp_objectives: Vec<Option<f64>> = if solver_choice != SolverChoice::Activeset {
        grid.iter()
            .map(|&s| sdp::solve(&decomp, s, &SdpOptions::default()).map(|sol| sol.objective))
            .collect::<Result<Vec<f64>, Error>>()?
            .into_iter()
            .map(Some)
            .collect()
    } else {
        vec![None; grid.len()]
    };

    let s_star_per = solver.critical_success(CriticalMode::PerBlock);
    let s_star_max = solver.critical_success(CriticalMode::MaxBlock);
    let onset = plateau_onset(&points, solver.deterministic_sigma2(), solver.sigma2_floor());

    let content = match config.format {
        Format::Json => {
            #[derive(serde::Serialize)]
            struct Output<'a> {
                n: u32,
                r: f64,
                s_star_per_block: f64,
                s_star_max_block: f64,
                plateau_onset_s_bar: Option<f64>,
                points: &'a [qmetro::tradeoff::TradeoffPoint],
                sdp_sigma2: &'a [Option<f64>],
            }
            serde_json::to_string_pretty(&Output {
                n: config.n,
                r: config.r,
                s_star_per_block: s_star_per,
                s_star_max_block: s_star_max,
                plateau_onset_s_bar: onset,
                points: &points,
                sdp_sigma2: &sdp_objectives,
            })
            .expect("serializable")
                + "\n"
        }
        Format::Csv => {
            let mut out = String::new();
            out.push_str(&format!(
                "# n={} r={} S_star_per_block={} S_star_max_block={}{}\n",
                config.n,
                sig12(config.r),
                sig12(s_star_per),
                sig12(s_star_max),
                onset.map_or(String::new(), |o| format!(
                    " plateau_onset_S_bar={}",
                    sig12(o)
                )),
            ));
            let want_sdp = solver_choice != SolverChoice::Activeset;
            let want_active = solver_choice != SolverChoice::Sdp;
            out.push_str("S_bar,S,F,sigma2,n_sigma2");
            if want_sdp {
                out.push_str(",sigma2_sdp");
            }
            out.push('\n');
            for (i, &s) in grid.iter().enumerate() {
                if want_active {
                    let p = &points[i];
                    out.push_str(&format!(
                        "{},{},{},{},{}",
                        sig12(p.s_bar),
                        sig12(p.s),
                        sig12(p.fidelity),
                        sig12(p.sigma2),
                        sig12(p.sigma2 * config.n as f64),
                    ));
                } else {
                    let v = sdp_objectives[i].expect("sdp objective");
                    out.push_str(&format!(
                        "{},{},{},{},{}",
                        sig12(1.0 - s),
                        sig12(s),
                        sig12(1.0 - v / 4.0),
                        sig12(v),
                        sig12(v * config.n as f64),
                    ));
                }
                if want_sdp && want_active {
                    out.push_str(&format!(",{}", sig12(sdp_objectives[i].unwrap())));
                }
                out.push('\n');
            }
            out
        }
    };
    config.write_output(&content)?;
    Ok(0)
}

fn cmd_ultimate(config: &RunConfig) -> Result<i32, Error> {
    let probe = config.load_probe()?;
    let noise = NoiseModel::new(config.r)?;
    let solver = TradeoffSolver::new(decompose(&probe, &noise))?;
    let numeric = solver.max_block_ground_energy();
    let formula = sigma_ult(config.n, config.r).ok();
    let laws = scaling_laws(config.n, config.r)?;
    let s_star_max = solver.critical_success(CriticalMode::MaxBlock);

    #[derive(serde::Serialize)]
    struct Output {
        n: u32,
        r: f64,
        sigma2_ult_numeric: f64,
        sigma2_ult_formula: Option<f64>,
        rel_deviation: Option<f64>,
        s_star_max_block: f64,
        ln_p_max_spin_estimate: f64,
        ln_s_star_global_estimate: f64,
    }
    let output = Output {
        n: config.n,
        r: config.r,
        sigma2_ult_numeric: numeric,
        sigma2_ult_formula: formula,
        rel_deviation: formula.map(|f| numeric / f - 1.0),
        s_star_max_block: s_star_max,
        ln_p_max_spin_estimate: laws.ln_p_max_spin,
        ln_s_star_global_estimate: laws.ln_s_star_global,
    };
    let content = match config.format {
        Format::Json => serde_json::to_string_pretty(&output).expect("serializable") + "\n",
        Format::Csv => {
            let mut out = String::from(
                "n,r,sigma2_ult_numeric,sigma2_ult_formula,rel_deviation,s_star_max_block,ln_p_max_spin,ln_s_star_global\n",
            );
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                output.n,
                sig12(output.r),
                sig12(output.sigma2_ult_numeric),
                output.sigma2_ult_formula.map_or("nan".into(), sig12),
                output.rel_deviation.map_or("nan".into(), sig12),
                sig12(output.s_star_max_block),
                sig12(output.ln_p_max_spin_estimate),
                sig12(output.ln_s_star_global_estimate),
            ));
            out
        }
    };
    config.write_output(&content)?;
    Ok(0)
}

fn cmd_scavenge(config: &RunConfig) -> Result<i32, Error> {
    let probe = config.load_probe()?;
    let noise = NoiseModel::new(config.r)?;
    let solver = TradeoffSolver::new(decompose(&probe, &noise))?;
    let grid = config.grid()?;
    let reports = grid
        .iter()
        .map(|&s| solver.scavenge(s))
        .collect::<Result<Vec<_>, Error>>()?;

    let content = match config.format {
        Format::Json => serde_json::to_string_pretty(&reports).expect("serializable") + "\n",
        Format::Csv => {
            let mut out =
                String::from("S_bar,sigma2_succ,sigma2_fail,sigma2_all,sigma2_det,gentle_margin\n");
            for rep in &reports {
                out.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    sig12(rep.s_bar),
                    sig12(rep.sigma2_success),
                    rep.sigma2_fail.map_or("nan".to_string(), sig12),
                    sig12(rep.sigma2_all),
                    sig12(rep.sigma2_det),
                    sig12(rep.gentle_margin),
                ));
            }
            out
        }
    };
    config.write_output(&content)?;
    Ok(0)
}

fn cmd_asymptote(config: &RunConfig, quantity: AsymptoteKind, sweep: &str) -> Result<i32, Error> {
    let ns = sweep
        .split(',')
        .map(|x| {
            x.trim()
                .parse::<u32>()
                .map_err(|e| Error::Validation(format!("bad sweep entry `{x}`: {e}")))
        })
        .collect::<Result<Vec<u32>, Error>>()?;
    let r = config.r;

    #[derive(serde::Serialize)]
    struct Row {
        n: u32,
        formula: f64,
        numeric: f64,
        rel_deviation: f64,
    }
    let mut rows = Vec::new();
    for &n in &ns {
        let (formula, numeric) = match quantity {
            AsymptoteKind::Deterministic => {
                let probe = ProbeSpec::multicopy(n)?;
                let noise = NoiseModel::new(r)?;
                let decomp = decompose(&probe, &noise);
                let numeric: f64 = decomp
                    .blocks
                    .iter()
                    .map(|b| b.p * qmetro::filter::deterministic_precision_band(b))
                    .sum();
                (sigma_det_asymptotic(n, r)?, numeric)
            }
            AsymptoteKind::Ultimate => {
                let probe = ProbeSpec::multicopy(n)?;
                let noise = NoiseModel::new(r)?;
                let solver = TradeoffSolver::new(decompose(&probe, &noise))?;
                (sigma_ult(n, r)?, solver.max_block_ground_energy())
            }
            AsymptoteKind::OptProbe => {
                let (_, numeric) = probe_opt::optimal_deterministic_probe(n, r)?;
                (sigma_opt_det(n, r)?, numeric)
            }
        };
        rows.push(Row {
            n,
            formula,
            numeric,
            rel_deviation: numeric / formula - 1.0,
        });
    }

    let content = match config.format {
        Format::Json => serde_json::to_string_pretty(&rows).expect("serializable") + "\n",
        Format::Csv => {
            let mut out = String::from("n,formula,numeric,rel_deviation\n");
            for row in &rows {
                out.push_str(&format!(
                    "{},{},{},{}\n",
                    row.n,
                    sig12(row.formula),
                    sig12(row.numeric),
                    sig12(row.rel_deviation),
                ));
            }
            out
        }
    };
    config.write_output(&content)?;
    Ok(0)
}

fn cmd_probe(config: &RunConfig, mode: ProbeMode, s: f64) -> Result<i32, Error> {
    let probe = match mode {
        ProbeMode::Multicopy => ProbeSpec::multicopy(config.n)?,
        ProbeMode::AsymptoticOpt => optimal_probe_asymptotic(config.n, config.r)?,
        ProbeMode::Conjectured => conjectured_probe(config.n, config.r)?,
        ProbeMode::NumericOpt => {
            if config.n > 60 {
                return Err(Error::Validation(
                    "numeric probe optimization is limited to n ≤ 60".into(),
                ));
            }
            probe_opt::optimize_probe(config.n, config.r, s, 100)?.probe
        }
    };
    config.write_output(&probe.to_file_string())?;
    Ok(0)
}

fn cmd_verify(config: &RunConfig, inject_fault: Option<&str>) -> Result<i32, Error> {
    let report = verify::run(config.n, config.r, config.seed, inject_fault)?;
    let content = serde_json::to_string_pretty(&report).expect("serializable") + "\n";
    config.write_output(&content)?;
    Ok(if report.all_passed { 0 } else { 1 })
}
