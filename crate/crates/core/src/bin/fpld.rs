use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context};
use clap::{Args, CommandFactory, Parser, Subcommand};
use serde::Serialize;

use fpld::alloc::{integerize, Policy};
use fpld::bounds::{
    lower_bound_fpld, multiround_bound, upper_bound_heterogeneous, upper_bound_homogeneous, BoundEstimates,
};
use fpld::config::{ConfigFile, RunInfo};
use fpld::report::{plot_summaries, write_csv};
use fpld::sim::{
    summarize, sweep_adaptive, sweep_fig1, sweep_fig2, AdaptiveConfig, Fig2Config, PointSummary, ResultRow, SimConfig,
};
use fpld::validate::{run_validation, ValidateOptions};
use fpld::FpldError;

/// Logit distillation over a bandwidth-limited uplink: bounds, allocation
/// and the synthetic experiments.
#[derive(Parser)]
#[command(name = "fpld", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
#[allow(clippy::large_enum_variant)]
enum Cmd {
    /// Evaluate the rate bounds term by term.
    Bounds(BoundsArgs),
    /// Split a bit budget across nodes.
    Allocate(AllocateArgs),
    /// KL versus node count and versus bits per coordinate.
    Fig1(RunArgs),
    /// Allocation policies on heterogeneous nodes.
    Fig2(RunArgs),
    /// Warm-up weight estimation followed by a plug-in allocation.
    Adaptive(RunArgs),
    /// Run the fast invariant suite.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct BoundsArgs {
    #[arg(long = "K")]
    k: Option<usize>,
    #[arg(long = "V")]
    v: Option<usize>,
    /// Bits per coordinate for every node (sets B = bits * V).
    #[arg(long, conflicts_with_all = ["b", "b_list"])]
    bits_per_coord: Option<f64>,
    /// Total bits per probe for every node.
    #[arg(long = "B", conflicts_with = "b_list")]
    b: Option<f64>,
    /// Per-node bits per probe; selects the heterogeneous evaluator.
    #[arg(long = "B-list", value_delimiter = ',')]
    b_list: Option<Vec<f64>>,
    #[arg(long = "L")]
    l: Option<f64>,
    #[arg(long = "L-list", value_delimiter = ',')]
    l_list: Option<Vec<f64>>,
    /// Samples per node; `inf` drops the statistical term.
    #[arg(long)]
    n: Option<f64>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    d: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    c1: Option<f64>,
    #[arg(long)]
    c2: Option<f64>,
    #[arg(long)]
    cp: Option<f64>,
    #[arg(long)]
    eps_opt: Option<f64>,
    #[arg(long)]
    eps_fit: Option<f64>,
    /// Refinement rounds for the multi-round bound.
    #[arg(long = "T")]
    t: Option<usize>,
    #[arg(long)]
    c0: Option<f64>,
    /// TOML file with a [bounds] table; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Also write the estimates as a one-row CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AllocateArgs {
    /// Per-node weights, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    w: Vec<f64>,
    /// Total bits per probe across nodes.
    #[arg(long = "Btot")]
    b_tot: f64,
    #[arg(long = "V")]
    v: usize,
    /// Per-node cap in bits per probe.
    #[arg(long = "Bmax")]
    b_max: Option<f64>,
    #[arg(long, default_value = "optimal")]
    policy: Policy,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Also write SVG plots.
    #[arg(long)]
    plot: bool,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// Run this many seeds, starting at --seed.
    #[arg(long)]
    seeds: Option<usize>,
    /// First seed of the run.
    #[arg(long, env = "FPLD_SEED")]
    seed: Option<u64>,
    #[arg(long)]
    experiment_id: Option<u64>,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long, env = "FPLD_SEED", default_value_t = 0)]
    seed: u64,
    /// Samples per (clip, bits) cell in the dither checks.
    #[arg(long, default_value_t = 200_000)]
    samples: usize,
    #[arg(long, hide = true, default_value_t = 0.0)]
    inject_bias: f64,
}

/// Exit status 2 for anything the user can fix in flags or config.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<FpldError>() {
        Some(
            FpldError::InvalidParameter(_)
            | FpldError::InvalidInput(_)
            | FpldError::InvalidDither { .. }
            | FpldError::Infeasible(_)
            | FpldError::Heterogeneous,
        ) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Bounds(a) => cmd_bounds(a),
        Cmd::Allocate(a) => cmd_allocate(a),
        Cmd::Fig1(a) => cmd_run(Experiment::Fig1, a),
        Cmd::Fig2(a) => cmd_run(Experiment::Fig2, a),
        Cmd::Adaptive(a) => cmd_run(Experiment::Adaptive, a),
        Cmd::Validate(a) => cmd_validate(a),
    };
    match res {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn usage_error(subcommand: &str, msg: &str) -> ! {
    let mut cmd = Cli::command();
    cmd.build();
    let sub = cmd.find_subcommand_mut(subcommand).expect("known subcommand");
    sub.error(clap::error::ErrorKind::MissingRequiredArgument, msg).exit()
}

fn load_config(path: Option<&Path>) -> anyhow::Result<ConfigFile> {
    match path {
        Some(p) => Ok(ConfigFile::load(p)?),
        None => Ok(ConfigFile::default()),
    }
}

fn run_info(subcommand: &str, config: Option<&Path>, out: &Path) -> RunInfo {
    RunInfo {
        subcommand: subcommand.into(),
        config_path: config.map(|p| p.display().to_string()),
        output_dir: out.display().to_string(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
    }
}

fn write_manifest(csv: &Path, manifest: &ConfigFile) -> anyhow::Result<PathBuf> {
    let path = csv.with_extension("manifest.toml");
    std::fs::write(&path, manifest.to_toml()?).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

#[derive(Serialize)]
struct BoundsRow {
    #[serde(rename = "K")]
    k: usize,
    #[serde(rename = "V")]
    v: usize,
    #[serde(rename = "B")]
    b: String,
    #[serde(rename = "L")]
    l: String,
    statistical_term: f64,
    probe_term: f64,
    bandwidth_term: f64,
    slack_term: f64,
    total: f64,
    small_error: bool,
    small_error_calibrated: bool,
    lower_bound: Option<f64>,
    multiround_bandwidth: Option<f64>,
    multiround_remainder: Option<f64>,
}

fn join(xs: &[f64]) -> String {
    xs.iter().map(f64::to_string).collect::<Vec<_>>().join(";")
}

fn cmd_bounds(a: BoundsArgs) -> anyhow::Result<ExitCode> {
    let file = load_config(a.config.as_deref())?;
    let from_file = file.bounds.is_some();
    let mut p = file.bounds.clone().unwrap_or_default();
    match (a.k, a.v, from_file) {
        (Some(_), Some(_), _) | (_, _, true) => {}
        _ => usage_error("bounds", "--K and --V are required unless --config provides a [bounds] table"),
    }
    if let Some(k) = a.k {
        p.k = k;
    }
    if let Some(v) = a.v {
        p.v = v;
        if a.d.is_none() && !from_file {
            p.d = v as f64;
        }
    }
    macro_rules! set {
        ($($f:ident),*) => { $( if let Some(x) = a.$f { p.$f = x; } )* };
    }
    set!(n, m, d, delta, rho, c1, c2, cp, eps_opt, eps_fit, t, c0, l);
    if let Some(bits) = a.bits_per_coord {
        p.b = Some(bits * p.v as f64);
        p.b_list = None;
    }
    if a.b.is_some() {
        p.b = a.b;
        p.b_list = None;
    }
    if a.b_list.is_some() {
        p.b_list = a.b_list;
    }
    if a.l_list.is_some() {
        p.l_list = a.l_list;
    }
    if p.b.is_none() && p.b_list.is_none() {
        usage_error("bounds", "one of --bits-per-coord, --B or --B-list is required");
    }

    let het = p.b_list.is_some() || p.l_list.is_some();
    let est: BoundEstimates = if het { upper_bound_heterogeneous(&p)? } else { upper_bound_homogeneous(&p)? };
    let lower = if het { None } else { Some(lower_bound_fpld(&p)?) };
    let multi = if het || p.t < 2 { None } else { Some(multiround_bound(&p)?) };

    let b_desc = match &p.b_list {
        Some(bs) => join(bs),
        None => p.b.unwrap_or_default().to_string(),
    };
    let l_desc = match &p.l_list {
        Some(ls) => join(ls),
        None => p.l.to_string(),
    };
    println!(
        "{} bound  K={}  V={}  B={}  L={}",
        if het { "heterogeneous" } else { "homogeneous" },
        p.k,
        p.v,
        b_desc.replace(';', ","),
        l_desc.replace(';', ",")
    );
    println!("  statistical term   {:.6e}", est.statistical_term);
    println!("  probe term         {:.6e}", est.probe_term);
    println!("  bandwidth term     {:.6e}", est.bandwidth_term);
    println!("  slack term         {:.6e}", est.slack_term);
    println!("  total              {:.6e}", est.total);
    if let Some(lb) = &lower {
        let note = if lb.below_stated_range { "  (B < V: outside the stated range)" } else { "" };
        println!("  lower bound        {:.6e}{note}", lb.value);
    }
    if let Some(mr) = &multi {
        println!("  {}-round bandwidth  {:.6e}  remainder {:.6e}", p.t, mr.value, mr.remainder);
    }
    println!(
        "  small-error regime {}  calibrated {}",
        est.regime_flags.small_error, est.regime_flags.small_error_calibrated
    );

    if let Some(out) = &a.out {
        if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        let row = BoundsRow {
            k: p.k,
            v: p.v,
            b: b_desc,
            l: l_desc,
            statistical_term: est.statistical_term,
            probe_term: est.probe_term,
            bandwidth_term: est.bandwidth_term,
            slack_term: est.slack_term,
            total: est.total,
            small_error: est.regime_flags.small_error,
            small_error_calibrated: est.regime_flags.small_error_calibrated,
            lower_bound: lower.map(|l| l.value),
            multiround_bandwidth: multi.map(|m| m.value),
            multiround_remainder: multi.map(|m| m.remainder),
        };
        write_csv(out, &[row])?;
        let manifest = ConfigFile {
            run: Some(run_info("bounds", a.config.as_deref(), out.parent().unwrap_or(Path::new(".")))),
            bounds: Some(p),
            ..ConfigFile::default()
        };
        write_manifest(out, &manifest)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_allocate(a: AllocateArgs) -> anyhow::Result<ExitCode> {
    let plan = a.policy.plan(&a.w, a.b_tot, a.v, a.b_max)?;
    let int = integerize(&plan, a.v)?;
    let f_real = plan.objective(a.v);
    let f_int = fpld::alloc::objective_f(&int.b, &a.w, a.v)?;
    println!("policy {}  V={}  B_tot={}", a.policy, a.v, a.b_tot);
    println!("{:>5} {:>12} {:>14} {:>10} {:>8}", "node", "w", "B", "bits/coord", "B_int");
    for i in 0..plan.k() {
        println!(
            "{:>5} {:>12.6} {:>14.6} {:>10} {:>8}{}",
            i,
            a.w[i],
            plan.b[i],
            int.bits_per_coord[i],
            int.b[i],
            if plan.saturated[i] { "  (at bound)" } else { "" }
        );
    }
    println!("F(real)    {f_real:.6e}");
    println!("F(integer) {f_int:.6e}");
    println!("integer plan: {}", join(&int.b).replace(';', ","));
    Ok(ExitCode::SUCCESS)
}

#[derive(Clone, Copy)]
enum Experiment {
    Fig1,
    Fig2,
    Adaptive,
}

impl Experiment {
    fn name(self) -> &'static str {
        match self {
            Experiment::Fig1 => "fig1",
            Experiment::Fig2 => "fig2",
            Experiment::Adaptive => "adaptive",
        }
    }

    fn base_sim(self) -> SimConfig {
        match self {
            Experiment::Fig1 => SimConfig::default(),
            Experiment::Fig2 | Experiment::Adaptive => Fig2Config::default_sim(),
        }
    }
}

fn print_summary(summaries: &[PointSummary]) {
    println!(
        "{:<14} {:>8} {:<10} {:>5} {:>12} {:>10} {:>12} {:>12}",
        "sweep", "value", "policy", "seeds", "mean KL", "stderr", "upper", "lower"
    );
    let opt = |x: Option<f64>| x.map_or_else(|| "-".to_string(), |v| format!("{v:.4e}"));
    for s in summaries {
        println!(
            "{:<14} {:>8} {:<10} {:>5} {:>12.4e} {:>10.2e} {:>12} {:>12}",
            s.sweep_name,
            s.sweep_value,
            s.policy,
            s.seeds,
            s.mean,
            s.stderr,
            opt(s.upper_bound),
            opt(s.lower_bound)
        );
    }
}

fn cmd_run(exp: Experiment, a: RunArgs) -> anyhow::Result<ExitCode> {
    let file = load_config(a.config.as_deref())?;
    let mut sim = file.resolve_sim(exp.base_sim())?;
    if a.seeds.is_some() || a.seed.is_some() {
        let start = a.seed.unwrap_or(0);
        let count = a.seeds.unwrap_or(sim.seeds.len()) as u64;
        sim.seeds = (start..start + count).collect();
    }
    if let Some(id) = a.experiment_id {
        sim.experiment_id = id;
    }
    sim.validate()?;
    if sim.seeds.is_empty() {
        bail!(FpldError::InvalidParameter("no seeds to run".into()));
    }

    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let csv = a.out.join(format!("{}.csv", exp.name()));
    let mut manifest = ConfigFile::manifest(run_info(exp.name(), a.config.as_deref(), &a.out), &sim)?;

    let rows: Vec<ResultRow> = match exp {
        Experiment::Fig1 => {
            let fig = file.fig1.clone().unwrap_or_default();
            let rows = sweep_fig1(&sim, &fig, a.jobs)?;
            manifest.fig1 = Some(fig);
            rows
        }
        Experiment::Fig2 => {
            let fig = file.fig2.clone().unwrap_or_default();
            let rows = sweep_fig2(&sim, &fig, a.jobs)?;
            manifest.fig2 = Some(fig);
            rows
        }
        Experiment::Adaptive => {
            let acfg: AdaptiveConfig = file.adaptive.clone().unwrap_or_default();
            let (rows, diags) = sweep_adaptive(&sim, &acfg, a.jobs)?;
            let dpath = a.out.join("adaptive_diagnostics.csv");
            write_csv(&dpath, &diags)?;
            manifest.adaptive = Some(acfg);
            rows
        }
    };
    write_csv(&csv, &rows)?;
    let mpath = write_manifest(&csv, &manifest)?;

    let summaries = summarize(&rows);
    print_summary(&summaries);
    if a.plot {
        for (sweep, svg) in plot_summaries(exp.name(), &summaries) {
            let path = a.out.join(format!("{}_{}.svg", exp.name(), sweep));
            std::fs::write(&path, svg).with_context(|| format!("writing {}", path.display()))?;
        }
    }
    println!("wrote {} rows to {} (manifest {})", rows.len(), csv.display(), mpath.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_validate(a: ValidateArgs) -> anyhow::Result<ExitCode> {
    let opts = ValidateOptions { seed: a.seed, dither_samples: a.samples, inject_bias: a.inject_bias };
    let results = run_validation(&opts)?;
    for r in &results {
        println!("{r}");
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        println!("{failed} of {} properties failed", results.len());
        return Ok(ExitCode::from(1));
    }
    println!("all {} properties passed", results.len());
    Ok(ExitCode::SUCCESS)
}
