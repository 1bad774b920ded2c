//! Command-line surface: `bounds`, `run`, `sweep`, `reproduce-uav`.
//!
//! Exit codes: 0 ok, 1 usage or config error, 2 infeasible bounds,
//! 3 reproduction failure.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exposure::NormConvention;
use crate::harness::{run_batch, run_episode, EpisodeTrace, Scenario, ScenarioConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;
pub const EXIT_REPRODUCTION: i32 = 3;

/// Environment variable overriding the output directory.
pub const OUT_ENV: &str = "LURE_OUT";

#[derive(Debug, Parser)]
#[command(name = "lure", version, about = "Expose stealthy deception attacks on GNSS/INS fusion")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum NormArg {
    Unit,
    Spectral,
}

impl From<NormArg> for NormConvention {
    fn from(n: NormArg) -> Self {
        match n {
            NormArg::Unit => NormConvention::UnitB,
            NormArg::Spectral => NormConvention::SpectralB,
        }
    }
}

#[derive(Debug, Args)]
struct Common {
    /// Scenario file (TOML). The built-in UAV scenario when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    norm_convention: Option<NormArg>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Shake-budget interval, minimal tolerance and suspect-threshold bound.
    Bounds(Common),
    /// One episode: trace CSV, summary and manifest.
    Run(Common),
    /// Aggregate metrics over a grid of one scalar parameter.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// u_bar, intensity, k_exp, eta, epsilon_tol, rn, w_a_bound, eps_mask_max
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, allow_hyphen_values = true)]
        grid: String,
    },
    /// Full UAV case study against the published figures.
    ReproduceUav(Common),
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_cli<I, S>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = if code == EXIT_OK { write!(out, "{e}") } else { write!(err, "{e}") };
            return code;
        }
    };
    let res = match cli.cmd {
        Command::Bounds(c) => cmd_bounds(&c, out),
        Command::Run(c) => cmd_run(&c, out),
        Command::Sweep { common, param, grid } => cmd_sweep(&common, &param, &grid, out),
        Command::ReproduceUav(c) => cmd_reproduce_uav(&c, out, err),
    };
    match res {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_USAGE
        }
    }
}

fn load_config(c: &Common) -> Result<ScenarioConfig> {
    let mut cfg = match &c.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            ScenarioConfig::from_toml(&text)?
        }
        None => ScenarioConfig::uav_attack(0.6),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(n) = c.norm_convention {
        cfg.exposure.norm_convention = n.into();
    }
    Scenario::build(&cfg)?;
    Ok(cfg)
}

fn out_dir(c: &Common) -> Option<PathBuf> {
    c.out.clone().or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
}

fn write_file(dir: &Path, name: &str, contents: &[u8]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn to_toml<T: Serialize>(v: &T) -> Result<String> {
    toml::to_string(v).map_err(|e| Error::Config(e.to_string()))
}

#[derive(Serialize)]
struct BoundsDoc {
    u_min: f64,
    u_max: f64,
    eps_min: f64,
    eta_bar: f64,
    feasible: bool,
    norm_convention: &'static str,
    c: f64,
    rho: f64,
    b_norm: f64,
    k_inf: f64,
    u_bar: f64,
    epsilon_tol: f64,
}

fn cmd_bounds(c: &Common, out: &mut dyn Write) -> Result<i32> {
    let cfg = load_config(c)?;
    let sc = Scenario::build(&cfg)?;
    let conv = cfg.exposure.norm_convention;
    let p = sc.bound_params(conv)?;
    let rep = sc.bounds(conv)?;
    let doc = BoundsDoc {
        u_min: rep.u_min,
        u_max: rep.u_max,
        eps_min: rep.eps_min,
        eta_bar: rep.eta_bar,
        feasible: rep.feasible,
        norm_convention: conv.as_str(),
        c: p.c,
        rho: p.rho,
        b_norm: p.b_norm,
        k_inf: p.k_inf,
        u_bar: cfg.exposure.u_bar,
        epsilon_tol: cfg.exposure.epsilon_tol,
    };
    let text = to_toml(&doc)?;
    let verdict = if rep.feasible { "feasible" } else { "infeasible: epsilon_tol below eps_min" };
    let _ = writeln!(out, "{text}verdict = \"{verdict}\"");
    if let Some(dir) = out_dir(c) {
        write_file(&dir, "bounds.toml", text.as_bytes())?;
    }
    Ok(if rep.feasible { EXIT_OK } else { EXIT_INFEASIBLE })
}

/// Column names of the trace CSV: `k`, then `x_true`, `x_hat`, `x_hat_a`
/// (n_x each), `u`, `u_shake` (n_u each), `r` (n_x), `q`, `mode`, `frozen`.
/// That is `4·n_x + 2·n_u + 4` columns.
pub fn trace_header(n_x: usize, n_u: usize) -> Vec<String> {
    let mut h = vec!["k".to_string()];
    for (name, n) in [("x_true", n_x), ("x_hat", n_x), ("x_hat_a", n_x), ("u", n_u), ("u_shake", n_u), ("r", n_x)] {
        h.extend((0..n).map(|i| format!("{name}_{i}")));
    }
    h.extend(["q", "mode", "frozen"].map(String::from));
    h
}

pub fn trace_csv(trace: &EpisodeTrace) -> Result<Vec<u8>> {
    let io = |e: csv::Error| Error::Io(e.to_string());
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(trace_header(trace.n_x, trace.n_u)).map_err(io)?;
    for r in &trace.records {
        let mut row = vec![r.k.to_string()];
        for v in [&r.x_true, &r.x_hat, &r.x_hat_a, &r.u, &r.u_shake, &r.r] {
            row.extend(v.iter().map(|x| x.to_string()));
        }
        row.push(r.q.to_string());
        row.push(r.mode.as_str().to_string());
        row.push(r.frozen.to_string());
        w.write_record(&row).map_err(io)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.to_string()))
}

#[derive(Serialize)]
struct RunManifest<'a> {
    artifact_version: &'static str,
    config_path: Option<String>,
    seeds: Vec<u64>,
    output_dir: String,
    config: &'a ScenarioConfig,
}

fn manifest(c: &Common, cfg: &ScenarioConfig, seeds: Vec<u64>, dir: &Path) -> Result<String> {
    to_toml(&RunManifest {
        artifact_version: env!("CARGO_PKG_VERSION"),
        config_path: c.config.as_ref().map(|p| p.display().to_string()),
        seeds,
        output_dir: dir.display().to_string(),
        config: cfg,
    })
}

fn cmd_run(c: &Common, out: &mut dyn Write) -> Result<i32> {
    let cfg = load_config(c)?;
    let (trace, summary) = run_episode(&cfg)?;
    let summary_text = to_toml(&summary)?;
    let _ = write!(out, "{summary_text}");
    let dir = out_dir(c).unwrap_or_else(|| PathBuf::from("out"));
    write_file(&dir, "trace.csv", &trace_csv(&trace)?)?;
    write_file(&dir, "summary.toml", summary_text.as_bytes())?;
    write_file(&dir, "manifest.toml", manifest(c, &cfg, vec![cfg.seed], &dir)?.as_bytes())?;
    Ok(EXIT_OK)
}

pub const SWEEP_PARAMS: [&str; 8] =
    ["u_bar", "intensity", "k_exp", "eta", "epsilon_tol", "rn", "w_a_bound", "eps_mask_max"];

/// Sets one named scalar on a config copy.
pub fn set_param(cfg: &ScenarioConfig, name: &str, value: f64) -> Result<ScenarioConfig> {
    let mut c = cfg.clone();
    fn attack<'a>(c: &'a mut ScenarioConfig, name: &str) -> Result<&'a mut crate::adversary::AttackPlan> {
        c.attack.as_mut().ok_or_else(|| Error::Config(format!("`{name}` needs an attack in the config")))
    }
    match name {
        "u_bar" => c.exposure.u_bar = value,
        "intensity" => attack(&mut c, name)?.intensity = value,
        "w_a_bound" => attack(&mut c, name)?.w_a_bound = value,
        "k_exp" => {
            if value < 1.0 || value.fract() != 0.0 {
                return Err(Error::Config("k_exp must be a positive integer".into()));
            }
            c.exposure.k_exp = value as usize;
            c.exposure.horizon = c.exposure.horizon.max(c.exposure.k_exp + 1);
        }
        "eta" => c.detector.eta = value,
        "epsilon_tol" => c.exposure.epsilon_tol = value,
        "rn" => c.estimator.rn = value,
        "eps_mask_max" => c.exposure.eps_mask_max = value,
        other => {
            return Err(Error::Config(format!(
                "unknown sweep parameter `{other}` (known: {})",
                SWEEP_PARAMS.join(", ")
            )))
        }
    }
    Scenario::build(&c)?;
    Ok(c)
}

fn parse_grid(grid: &str) -> Result<Vec<f64>> {
    let vals: std::result::Result<Vec<f64>, _> =
        grid.split(',').map(str::trim).filter(|s| !s.is_empty()).map(str::parse).collect();
    let vals = vals.map_err(|e| Error::Config(format!("bad grid value: {e}")))?;
    if vals.is_empty() {
        return Err(Error::Config("sweep grid is empty".into()));
    }
    Ok(vals)
}

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map_or_else(|| "-".into(), |x| x.to_string())
}

fn cmd_sweep(c: &Common, param: &str, grid: &str, out: &mut dyn Write) -> Result<i32> {
    let cfg = load_config(c)?;
    if !SWEEP_PARAMS.contains(&param) {
        return Err(Error::Config(format!("unknown sweep parameter `{param}` (known: {})", SWEEP_PARAMS.join(", "))));
    }
    let values = parse_grid(grid)?;
    let seeds = c.seeds.unwrap_or(20);
    let mut table = String::from(
        "value,exposure_rate,false_alarm_rate,latency_median,latency_max,max_q_in_window,true_deviation_median,tail_error_max,infeasible_entries\n",
    );
    for v in values {
        let point = set_param(&cfg, param, v)?;
        let (_, s) = run_batch(&point, seeds)?;
        let _ = writeln!(
            table,
            "{v},{},{},{},{},{},{},{},{}",
            s.exposure_rate,
            s.false_alarm_rate,
            opt(s.latency_median),
            opt(s.latency_max),
            opt(s.max_q_in_window),
            s.true_deviation_median,
            s.tail_error_max,
            s.infeasible_entries
        );
    }
    let _ = write!(out, "{table}");
    if let Some(dir) = out_dir(c) {
        write_file(&dir, "sweep.csv", table.as_bytes())?;
        let seed_list = (0..seeds as u64).map(|i| cfg.seed.wrapping_add(i)).collect();
        write_file(&dir, "manifest.toml", manifest(c, &cfg, seed_list, &dir)?.as_bytes())?;
    }
    Ok(EXIT_OK)
}

/// One line of the reproduction table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub name: String,
    pub reference: String,
    pub measured: String,
    pub pass: bool,
}

fn row(name: &str, reference: impl Into<String>, measured: impl Into<String>, pass: bool) -> ReportRow {
    ReportRow { name: name.into(), reference: reference.into(), measured: measured.into(), pass }
}

/// Published x-deviation for each attack intensity.
pub const PUBLISHED_DEVIATION: [(f64, f64); 2] = [(0.6, 1.641), (0.9, 4.791)];

/// Runs the UAV case study with `n_seeds` seeds per batch.
pub fn reproduce_uav(n_seeds: usize) -> Result<Vec<ReportRow>> {
    let mut rows = Vec::new();

    let published = Scenario::build(&ScenarioConfig::published_bounds())?;
    let unit = published.bounds(NormConvention::UnitB)?;
    let spectral = published.bounds(NormConvention::SpectralB)?;
    rows.push(row(
        "u_min (unit ‖B‖)",
        "0.08418 ± 1e-4",
        format!("{:.5}", unit.u_min),
        (unit.u_min - 0.08418).abs() <= 1e-4,
    ));
    rows.push(row(
        "u_max (spectral ‖B‖, ε=0.4)",
        "0.0905 ± 5e-4",
        format!("{:.5}", spectral.u_max),
        (spectral.u_max - 0.0905).abs() <= 5e-4,
    ));
    rows.push(row("eta_bar", "0.48 ± 1e-6", format!("{:.6}", unit.eta_bar), (unit.eta_bar - 0.48).abs() <= 1e-6));

    let base = ScenarioConfig::uav_default();
    let sc = Scenario::build(&base)?;
    let b = sc.bounds(base.exposure.norm_convention)?;
    let u_bar = base.exposure.u_bar;
    rows.push(row(
        "simulation u_bar inside [u_min, u_max]",
        format!("{u_bar}"),
        format!("[{:.4}, {:.4}] (c={:.4}, ρ={:.4})", b.u_min, b.u_max, sc.cert.c, sc.cert.rho),
        b.feasible && b.u_min <= u_bar && u_bar <= b.u_max,
    ));
    rows.push(row(
        "‖A_clᵏ‖ ≤ c·ρᵏ, k ≤ 200",
        "holds",
        format!("c={:.4}, ρ={:.4}", sc.cert.c, sc.cert.rho),
        sc.cert.holds_for(&sc.a_cl, 200),
    ));

    for (label, (intensity, paper_dev)) in ["A", "B"].iter().zip(PUBLISHED_DEVIATION) {
        let mut stealth = ScenarioConfig::uav_attack(intensity);
        stealth.exposure.enabled = false;
        let (sums, st) = run_batch(&stealth, n_seeds)?;
        let alarms = sums.iter().filter(|s| s.exposed).count();
        rows.push(row(&format!("attack {label} stealth: alarms in window"), "0", alarms.to_string(), alarms == 0));
        let (lo, hi) = (0.75 * paper_dev, 1.25 * paper_dev);
        let med = x_deviation_median(&sums);
        rows.push(row(
            &format!("attack {label} max x-deviation (median)"),
            format!("{paper_dev} ± 25% = [{lo:.3}, {hi:.3}]"),
            format!("{med:.3} (max q in window {})", opt(st.max_q_in_window.map(|q| format!("{q:.3}")))),
            (lo..=hi).contains(&med),
        ));

        let (_, ex) = run_batch(&ScenarioConfig::uav_attack(intensity), n_seeds)?;
        rows.push(row(
            &format!("attack {label} exposure rate"),
            "1.0",
            format!("{}", ex.exposure_rate),
            ex.exposure_rate == 1.0,
        ));
        let lat_ok =
            ex.latency_max.is_some_and(|m| m <= base.exposure.k_exp) && ex.latency_median.is_some_and(|m| m <= 3.0);
        rows.push(row(
            &format!("attack {label} latency"),
            "max ≤ 10, median ≤ 3 (published 2)",
            format!("median {}, max {}", opt(ex.latency_median), opt(ex.latency_max)),
            lat_ok,
        ));
        let q_ok = ex.q_at_alarm_min.is_some_and(|q| q >= 1.0) && ex.q_at_alarm_max.is_some_and(|q| q <= 5.0);
        rows.push(row(
            &format!("attack {label} statistic at alarm"),
            "[1, 5] (published 1.7341 / 2.9412)",
            format!(
                "[{}, {}]",
                opt(ex.q_at_alarm_min.map(|q| format!("{q:.4}"))),
                opt(ex.q_at_alarm_max.map(|q| format!("{q:.4}")))
            ),
            q_ok,
        ));
    }

    let mut comp = ScenarioConfig::uav_default();
    comp.exposure.forced_suspect_step = Some(100);
    let (_, cs) = run_batch(&comp, n_seeds)?;
    rows.push(row(
        "forced shakes, no attack: tail error ≤ ε",
        format!("≤ {}", comp.exposure.epsilon_tol),
        format!("{:.4}", cs.tail_error_max),
        cs.tail_error_max <= comp.exposure.epsilon_tol,
    ));
    rows.push(row(
        "forced shakes, no attack: false alarms",
        "0",
        format!("{}", cs.false_alarm_rate),
        cs.false_alarm_rate == 0.0,
    ));
    Ok(rows)
}

/// Median over seeds of the largest x-position deviation from the goal.
pub fn x_deviation_median(sums: &[crate::harness::EpisodeSummary]) -> f64 {
    let mut v: Vec<f64> = sums.iter().map(|s| s.max_true_x_deviation).collect();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn cmd_reproduce_uav(c: &Common, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let seeds = c.seeds.unwrap_or(100);
    let rows = reproduce_uav(seeds)?;
    let w_name = rows.iter().map(|r| r.name.chars().count()).max().unwrap_or(0);
    let w_ref = rows.iter().map(|r| r.reference.chars().count()).max().unwrap_or(0);
    let mut text = String::new();
    for r in &rows {
        let pad = |s: &str, w: usize| format!("{s}{}", " ".repeat(w.saturating_sub(s.chars().count())));
        let _ = writeln!(
            text,
            "{}  {}  {}  {}",
            pad(&r.name, w_name),
            pad(&r.reference, w_ref),
            if r.pass { "PASS" } else { "FAIL" },
            r.measured
        );
    }
    let _ = write!(out, "{text}");
    if let Some(dir) = out_dir(c) {
        write_file(&dir, "reproduction.txt", text.as_bytes())?;
    }
    let failing: Vec<&ReportRow> = rows.iter().filter(|r| !r.pass).collect();
    if failing.is_empty() {
        return Ok(EXIT_OK);
    }
    for r in failing {
        let _ = writeln!(err, "failing row: {} (reference {}, measured {})", r.name, r.reference, r.measured);
    }
    Ok(EXIT_REPRODUCTION)
}
