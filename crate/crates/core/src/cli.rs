//! Subcommand dispatch and file emission.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::config::{load_config, ConfigError, LoadedConfig, RunConfig};
use crate::energy::{
    build_ledger, energy_inequality_check, gevrey_weight, EnergyError, EnergyLedger, LambdaProfile,
    LedgerOptions,
};
use crate::equation::{uniform_grid, CoefficientEvalError, CoefficientSpec, SpecError};
use crate::json::encode;
use crate::quasisym::{
    build_quasi_symmetrizer, verify_quasi_symmetrizer, QuasiSymError, SymmetrizerCertificate,
};
use crate::radius::{fit_decay_default, mode_amplitudes};
use crate::spectral::{companion_matrix, simulate, write_spectrum_csv, Abort, SpectralError, Trajectory};
use crate::symbol::{characteristic_roots, check_diam, discriminant_check, SymbolError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_BLOW_UP: i32 = 2;
pub const EXIT_STABILITY: i32 = 3;
pub const EXIT_CONTINUATION: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "weakhyp",
    version,
    about = "Spectral laboratory for weakly hyperbolic semilinear equations"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Root-separation report for the coefficients.
    Check(CommonArgs),
    /// Integrate the mode system and write the spectrum.
    Simulate(CommonArgs),
    /// Simulate, then evaluate energies, super-energies and radius fits.
    Analyze(CommonArgs),
    /// Certify the quasi-symmetrizer along the coefficient path.
    Symmetrizer(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error(transparent)]
    Symbol(#[from] SymbolError),
    #[error(transparent)]
    Coefficient(#[from] CoefficientEvalError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error(transparent)]
    QuasiSym(#[from] QuasiSymError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("thread pool: {0}")]
    Pool(String),
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Spec(_) => "spec",
            CliError::Symbol(_) => "symbol",
            CliError::Coefficient(_) => "coefficient",
            CliError::Spectral(_) => "spectral",
            CliError::Energy(_) => "energy",
            CliError::QuasiSym(_) => "quasisym",
            CliError::Io { .. } => "io",
            CliError::Pool(_) => "threads",
        }
    }
}

/// Parse arguments, run one command and return the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_FAIL } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{}", json!({ "error": e.kind(), "message": e.to_string() }));
            EXIT_FAIL
        }
    }
}

struct Context {
    cfg: RunConfig,
    hash: String,
    command: &'static str,
    out: PathBuf,
}

impl Context {
    fn metadata(&self, constants: Value) -> Value {
        json!({
            "program": env!("CARGO_PKG_NAME"),
            "version": env!("CARGO_PKG_VERSION"),
            "command": self.command,
            "config_sha256": self.hash,
            "config": self.cfg,
            "constants": constants,
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write_json(&self, name: &str, value: &Value) -> Result<(), CliError> {
        let path = self.path(name);
        let text = serde_json::to_string_pretty(value).expect("json values serialize");
        fs::write(&path, text + "\n").map_err(|source| CliError::Io { path, source })
    }

    fn create(&self, name: &str) -> Result<BufWriter<File>, CliError> {
        let path = self.path(name);
        File::create(&path).map(BufWriter::new).map_err(|source| CliError::Io { path, source })
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

pub fn dispatch(command: &Command) -> Result<i32, CliError> {
    let (name, args) = match command {
        Command::Check(a) => ("check", a),
        Command::Simulate(a) => ("simulate", a),
        Command::Analyze(a) => ("analyze", a),
        Command::Symmetrizer(a) => ("symmetrizer", a),
    };
    let LoadedConfig { mut config, hash } = load_config(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(threads) = args.threads {
        config.threads = threads;
    }
    if let Some(out) = &args.output {
        config.output = out.clone();
    }
    fs::create_dir_all(&config.output).map_err(io_err(&config.output))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
        .map_err(|e| CliError::Pool(e.to_string()))?;
    let ctx = Context { out: config.output.clone(), cfg: config, hash, command: name };
    pool.install(|| match name {
        "check" => run_check(&ctx),
        "simulate" => run_simulate(&ctx),
        "analyze" => run_analyze(&ctx),
        _ => run_symmetrizer(&ctx),
    })
}

fn run_check(ctx: &Context) -> Result<i32, CliError> {
    let spec = ctx.cfg.spec()?;
    let grid = uniform_grid(spec.horizon, 1000);
    let diam = check_diam(&spec, &grid)?;
    let c = ctx.cfg.constants.c;
    let discriminant = if matches!(spec.order, 2 | 3) {
        let mut min_ratio = f64::INFINITY;
        let mut failures = Vec::new();
        for &t in &grid {
            let r = discriminant_check(&spec.coeffs_at(t)?, c)?;
            min_ratio = min_ratio.min(r.ratio);
            if !r.holds {
                failures.push(t);
            }
        }
        json!({ "c": c, "holds": failures.is_empty(), "min_ratio": encode(min_ratio), "failure_times": failures })
    } else {
        Value::Null
    };
    let report = json!({
        "metadata": ctx.metadata(json!({ "c": c })),
        "diam": diam,
        "discriminant": discriminant,
    });
    ctx.write_json("report.json", &report)?;
    println!("{}", serde_json::to_string_pretty(&report).expect("json values serialize"));
    Ok(if diam.satisfied { EXIT_OK } else { EXIT_FAIL })
}

fn abort_json(traj: &Trajectory) -> Value {
    match &traj.abort {
        None => json!({ "status": "completed" }),
        Some(Abort::BlowUp { t, sup }) => {
            json!({ "status": "blow_up", "last_valid_time": t, "sup": encode(*sup) })
        }
        Some(Abort::NonFinite { t }) => json!({ "status": "non_finite", "last_valid_time": t }),
    }
}

/// Runs the simulation, mapping a stability-guard violation to its own report.
fn simulate_or_report(
    ctx: &Context,
    spec: &CoefficientSpec,
    record_forcing: bool,
) -> Result<Result<Trajectory, i32>, CliError> {
    match simulate(spec, &ctx.cfg.settings(record_forcing)) {
        Ok(t) => Ok(Ok(t)),
        Err(e @ SpectralError::Stability { .. }) => {
            let report = json!({
                "metadata": ctx.metadata(json!({})),
                "status": "stability_abort",
                "message": e.to_string(),
            });
            ctx.write_json("report.json", &report)?;
            eprintln!("{}", json!({ "error": "stability", "message": e.to_string() }));
            Ok(Err(EXIT_STABILITY))
        }
        Err(e) => Err(e.into()),
    }
}

fn run_simulate(ctx: &Context) -> Result<i32, CliError> {
    let spec = ctx.cfg.spec()?;
    let traj = match simulate_or_report(ctx, &spec, false)? {
        Ok(t) => t,
        Err(code) => return Ok(code),
    };
    let mut w = ctx.create("spectrum.csv")?;
    write_spectrum_csv(&mut w, &traj).and_then(|_| w.flush()).map_err(io_err(&ctx.path("spectrum.csv")))?;
    let defect = traj.snapshots.iter().map(|s| s.state.conjugate_symmetry_defect()).fold(0.0, f64::max);
    let report = json!({
        "metadata": ctx.metadata(json!({})),
        "run": abort_json(&traj),
        "final_time": traj.last().t,
        "snapshots": traj.snapshots.len(),
        "sup_norm_final": traj.last().sup_norm(),
        "conjugate_symmetry_defect": defect,
    });
    ctx.write_json("report.json", &report)?;
    Ok(if traj.abort.is_some() { EXIT_BLOW_UP } else { EXIT_OK })
}

fn ledger_options(cfg: &RunConfig) -> LedgerOptions {
    let k = &cfg.constants;
    LedgerOptions {
        c0: k.c0,
        n_loss: k.n_loss,
        c: k.c_linear,
        r0: k.r0,
        jmax: k.j_max,
        eta: k.eta,
        tail_target: k.tail_target,
    }
}

fn ledger_constants(l: &EnergyLedger) -> Value {
    json!({
        "C0": l.params.c0,
        "N": l.params.n_loss,
        "C": l.c,
        "M0": encode(l.m0),
        "K_N": encode(l.k_n),
        "M": encode(l.m_const),
        "L": encode(l.l),
        "r0": l.r0,
        "eta": l.eta,
        "phi_L": encode(l.phi),
        "J_max": l.jmax,
        "nu": l.nu,
    })
}

fn run_analyze(ctx: &Context) -> Result<i32, CliError> {
    let cfg = &ctx.cfg;
    let spec = cfg.spec()?;
    let traj = match simulate_or_report(ctx, &spec, true)? {
        Ok(t) => t,
        Err(code) => return Ok(code),
    };
    if traj.abort.is_some() {
        let report = json!({ "metadata": ctx.metadata(json!({})), "run": abort_json(&traj) });
        ctx.write_json("report.json", &report)?;
        return Ok(EXIT_BLOW_UP);
    }
    let ledger = build_ledger(&traj, &spec, &ledger_options(cfg))?;
    let k = &cfg.constants;

    if cfg.diagnostics.energies {
        let lambda = k.lambda_k.clone().unwrap_or(LambdaProfile::Constant(1.0));
        let mut w = ctx.create("energies.csv")?;
        let path = ctx.path("energies.csv");
        let mut header = String::from("t,E");
        for j in &k.energy_columns {
            header.push_str(&format!(",E_{j}"));
        }
        header.push_str(",F,G,L,r,master_ratio");
        if k.k_gevrey.is_some() {
            header.push_str(",E_gevrey");
        }
        writeln!(w, "{header}").map_err(io_err(&path))?;
        for (i, snap) in traj.snapshots.iter().enumerate() {
            let mut line = format!("{:.16e},{:.16e}", ledger.times[i], ledger.cinf[i]);
            for &j in &k.energy_columns {
                line.push_str(&format!(",{:.16e}", ledger.energies[i][j]));
            }
            let se = &ledger.super_energies;
            line.push_str(&format!(
                ",{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                se.f[i], se.g[i], ledger.l, ledger.radius[i], ledger.master_series[i]
            ));
            if let Some(kg) = k.k_gevrey {
                let s = &snap.state;
                let e: f64 = s
                    .ks()
                    .map(|q| {
                        gevrey_weight(s.t, q as f64, kg, &lambda, spec.order, spec.horizon).value.exp()
                            * s.mode_norm(q)
                    })
                    .sum();
                line.push_str(&format!(",{e:.16e}"));
            }
            writeln!(w, "{line}").map_err(io_err(&path))?;
        }
        w.flush().map_err(io_err(&path))?;
    }

    let mut radius_summary = Value::Null;
    if cfg.diagnostics.radius {
        let path = ctx.path("radius.csv");
        let mut w = ctx.create("radius.csv")?;
        writeln!(w, "t,r_hat,residual,band_lo,band_hi,s").map_err(io_err(&path))?;
        let mut min_r = f64::INFINITY;
        let mut fitted = 0usize;
        for snap in &traj.snapshots {
            match fit_decay_default(&mode_amplitudes(&snap.state), k.s) {
                Ok(e) => {
                    fitted += 1;
                    min_r = min_r.min(e.r_hat);
                    writeln!(
                        w,
                        "{:.16e},{:.16e},{:.16e},{},{},{:.16e}",
                        snap.t(),
                        e.r_hat,
                        e.residual,
                        e.band_lo,
                        e.band_hi,
                        e.s
                    )
                }
                Err(_) => writeln!(w, "{:.16e},nan,nan,0,0,{:.16e}", snap.t(), k.s),
            }
            .map_err(io_err(&path))?;
        }
        w.flush().map_err(io_err(&path))?;
        radius_summary = json!({ "fitted_snapshots": fitted, "min_r_hat": encode(min_r) });
    }

    let energy_inequality = energy_inequality_check(&traj, &spec, ledger.params.c0, 1.05)?;
    let se = &ledger.super_energies;
    let gevrey =
        k.k_gevrey.map(|kg| json!({ "k": kg, "below_threshold": (kg as usize) < 2 * (spec.order - 1) }));
    let mut report = json!({
        "metadata": ctx.metadata(ledger_constants(&ledger)),
        "run": abort_json(&traj),
        "tail_ratio_initial": se.tail_g.first().copied().unwrap_or(0.0),
        "tail_ratio_max": se.tail_g.iter().copied().fold(0.0, f64::max),
        "diverged": se.diverged,
        "energy_inequality": energy_inequality,
        "radius": radius_summary,
        "gevrey": gevrey,
    });
    if cfg.diagnostics.master_check {
        report["master"] = serde_json::to_value(&ledger.master).expect("serializable");
    }
    if cfg.diagnostics.super_energies {
        report["continuation"] = serde_json::to_value(&ledger.continuation).expect("serializable");
    }
    ctx.write_json("report.json", &report)?;
    if cfg.diagnostics.symmetrizer_certificate {
        write_certificates(ctx, &spec)?;
    }
    let ok = !cfg.diagnostics.super_energies || ledger.continuation.pass;
    if !ok {
        eprintln!(
            "{}",
            json!({ "error": "continuation", "first_crossing": ledger.continuation.first_crossing })
        );
    }
    Ok(if ok { EXIT_OK } else { EXIT_CONTINUATION })
}

#[derive(Serialize)]
struct TimedCertificate {
    t: f64,
    certificate: SymmetrizerCertificate,
}

fn write_certificates(ctx: &Context, spec: &CoefficientSpec) -> Result<(Value, bool), CliError> {
    let k = &ctx.cfg.constants;
    let n = k.certificate_times.max(2) - 1;
    let mut certs = Vec::new();
    for t in uniform_grid(spec.horizon, n) {
        let coeffs = spec.coeffs_at(t)?;
        let roots = characteristic_roots(&coeffs)?;
        let q = build_quasi_symmetrizer(&roots)?;
        let certificate =
            verify_quasi_symmetrizer(&q, &companion_matrix(&coeffs), &k.eps_set, k.samples, ctx.cfg.seed)?;
        certs.push(TimedCertificate { t, certificate });
    }
    let pass = certs.iter().all(|c| c.certificate.pass);
    let value = json!({
        "metadata": ctx.metadata(json!({ "eps_set": k.eps_set, "samples": k.samples, "seed": ctx.cfg.seed })),
        "pass": pass,
        "certificates": certs,
    });
    ctx.write_json("certificate.json", &value)?;
    Ok((value, pass))
}

fn run_symmetrizer(ctx: &Context) -> Result<i32, CliError> {
    let spec = ctx.cfg.spec()?;
    let (value, pass) = write_certificates(ctx, &spec)?;
    println!("{}", serde_json::to_string_pretty(&value).expect("json values serialize"));
    Ok(if pass { EXIT_OK } else { EXIT_FAIL })
}
