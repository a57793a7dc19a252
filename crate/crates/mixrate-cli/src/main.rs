//! Command-line front end: every experiment is a pure function of its
//! arguments and the seed, results go to `--out` as JSON (CSV for replicate
//! streams), and errors leave as one-line JSON on stderr with a coded exit
//! status (2 validation, 3 numerical, 4 I/O).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use serde_json::json;

use mixrate::error::Error as MixError;
use mixrate::estimator::{fit_min_distance, FitOptions};
use mixrate::experiments::{dkw_calibration, lan_simulate, rate_sweep, RateSweepConfig};
use mixrate::hard_instances::{build_gn, HardInstanceSpec};
use mixrate::identifiability::{identifiability_margin, separation_ratio, MarginQuery};
use mixrate::measures::{wasserstein_w1, MixingDistribution, DEFAULT_THETA_BOUNDS};
use mixrate::mixture_model::GaussianLocationFamily;
use mixrate::moment_problem::{hankel_determinants, solve_moment_problem, MomentSequence};
use mixrate::scaling_tree::{check_scw, ScaledPairFamily, ScwOptions};

#[derive(Parser)]
#[command(
    name = "mixrate",
    version,
    about = "Mixing-distribution geometry and rate experiments"
)]
struct Cli {
    /// Output path for the result ("-" writes to stdout).
    #[arg(long, global = true, default_value = "-")]
    out: String,

    /// Master seed; replicate streams derive from it deterministically.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Worker thread cap (falls back to MIXRATE_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct FamilyArgs {
    /// Component family (only "gaussian" ships).
    #[arg(long, default_value = "gaussian")]
    family: String,

    /// Scale of the Gaussian location family.
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
}

impl FamilyArgs {
    fn build(&self) -> Result<GaussianLocationFamily, MixError> {
        if self.family != "gaussian" {
            return Err(MixError::InvalidArgument(format!(
                "unknown family '{}'; available: gaussian",
                self.family
            )));
        }
        GaussianLocationFamily::new(self.sigma)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Reconstruct the unique d-point distribution from moments 1,m1,...,m_{2d-1}.
    SolveMoments {
        /// Comma-separated moment sequence starting at m_0 = 1.
        #[arg(long, value_delimiter = ',', required = true)]
        moments: Vec<f64>,
        #[arg(long)]
        d: usize,
    },

    /// Hankel determinants of a moment sequence, printed as CSV rows (k, det).
    Hankel {
        #[arg(long, value_delimiter = ',', required = true)]
        moments: Vec<f64>,
    },

    /// W1 distance between two mixing distributions stored as JSON files.
    Wasserstein {
        #[arg(long)]
        g1: PathBuf,
        #[arg(long)]
        g2: PathBuf,
    },

    /// Build the hard-instance member G_n(u) and print it as JSON.
    HardInstance {
        #[arg(long)]
        m: usize,
        #[arg(long)]
        m0: usize,
        #[arg(long)]
        u: f64,
        #[arg(long)]
        n: u64,
        /// Pinned block moments m_1..m_{2d-2}; defaults to 0,4 when d = 2.
        #[arg(long, value_delimiter = ',')]
        base_moments: Option<Vec<f64>>,
        /// Base measure file; defaults to a point mass at --theta0.
        #[arg(long)]
        g0: Option<PathBuf>,
        #[arg(long, default_value_t = 0.0)]
        theta0: f64,
    },

    /// Identifiability margin at a support, order k.
    Identifiability {
        #[command(flatten)]
        family: FamilyArgs,
        #[arg(long, value_delimiter = ',', required = true)]
        thetas: Vec<f64>,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 10_000)]
        budget: usize,
    },

    /// Sup-norm CDF gap, W1 and their ratio for two measures.
    Separation {
        #[command(flatten)]
        family: FamilyArgs,
        #[arg(long)]
        g1: PathBuf,
        #[arg(long)]
        g2: PathBuf,
        #[arg(long)]
        m: usize,
        #[arg(long)]
        m0: usize,
    },

    /// Fit a mixture to samples by minimum KS distance.
    Estimate {
        #[command(flatten)]
        family: FamilyArgs,
        /// Sample file: one real per line.
        #[arg(long)]
        samples: PathBuf,
        #[arg(long)]
        m: usize,
        #[arg(long, default_value_t = 16)]
        restarts: usize,
        #[arg(long, default_value_t = 300)]
        max_iter: usize,
    },

    /// Monte Carlo rate sweep driven by a JSON config file.
    RateSweep {
        #[arg(long)]
        config: PathBuf,
        /// Optional CSV with one row per replicate.
        #[arg(long)]
        csv: Option<PathBuf>,
    },

    /// Log-likelihood-ratio simulation on the hard-instance family.
    Lan {
        #[command(flatten)]
        family: FamilyArgs,
        #[arg(long)]
        u: f64,
        #[arg(long)]
        n: u64,
        #[arg(long)]
        reps: usize,
        #[arg(long, default_value_t = 2)]
        m: usize,
        #[arg(long, default_value_t = 1)]
        m0: usize,
        #[arg(long, value_delimiter = ',')]
        base_moments: Option<Vec<f64>>,
        #[arg(long, default_value_t = 0.0)]
        theta0: f64,
        #[arg(long)]
        csv: Option<PathBuf>,
    },

    /// Quantiles of sqrt(n) times the KS distance of the empirical CDF.
    Dkw {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        reps: usize,
        #[arg(long)]
        csv: Option<PathBuf>,
    },

    /// Validate the coarse-graining order formula on a shipped family.
    ScwCheck {
        /// "example" or "three-level".
        #[arg(long)]
        instance: String,
        /// Geometric grid start:end:count, e.g. 1e2:1e6:5.
        #[arg(long, default_value = "1e2:1e6:5")]
        n_grid: String,
        #[arg(long, default_value_t = 0.02)]
        snap_tol: f64,
        #[arg(long, default_value_t = 10.0)]
        bound: f64,
    },
}

enum CliError {
    Mix(MixError),
    Io(String),
}

impl From<MixError> for CliError {
    fn from(e: MixError) -> Self {
        CliError::Mix(e)
    }
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Mix(MixError::InvalidArgument(_)) => "validation",
            CliError::Mix(_) => "numerical",
            CliError::Io(_) => "io",
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Mix(MixError::InvalidArgument(_)) => 2,
            CliError::Mix(_) => 3,
            CliError::Io(_) => 4,
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Mix(e) => e.to_string(),
            CliError::Io(m) => m.clone(),
        }
    }
}

fn read_file(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn load_mixing_distribution(path: &Path) -> Result<MixingDistribution, CliError> {
    let text = read_file(path)?;
    Ok(MixingDistribution::from_json(&text)?)
}

fn load_samples(path: &Path) -> Result<Vec<f64>, CliError> {
    let text = read_file(path)?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let value: f64 = trimmed.parse().map_err(|_| {
            CliError::Mix(MixError::InvalidArgument(format!(
                "{}:{}: not a real number: '{trimmed}'",
                path.display(),
                lineno + 1
            )))
        })?;
        out.push(value);
    }
    Ok(out)
}

fn write_output(out: &str, content: &str) -> Result<(), CliError> {
    if out == "-" {
        let mut stdout = std::io::stdout().lock();
        stdout
            .write_all(content.as_bytes())
            .and_then(|_| stdout.write_all(b"\n"))
            .map_err(|e| CliError::Io(e.to_string()))
    } else {
        fs::write(out, format!("{content}\n")).map_err(|e| CliError::Io(format!("{out}: {e}")))
    }
}

fn write_csv(
    path: &Path,
    header: &str,
    rows: impl Iterator<Item = String>,
) -> Result<(), CliError> {
    let mut text = String::from(header);
    text.push('\n');
    for row in rows {
        text.push_str(&row);
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn parse_n_grid(text: &str) -> Result<Vec<u64>, CliError> {
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() != 3 {
        return Err(CliError::Mix(MixError::InvalidArgument(format!(
            "n grid must be start:end:count, got '{text}'"
        ))));
    }
    let start: f64 = parts[0].parse().map_err(|_| bad_grid(text))?;
    let end: f64 = parts[1].parse().map_err(|_| bad_grid(text))?;
    let count: usize = parts[2].parse().map_err(|_| bad_grid(text))?;
    if !(start >= 1.0 && end > start && count >= 2) {
        return Err(bad_grid(text));
    }
    let ratio = (end / start).powf(1.0 / (count - 1) as f64);
    let mut grid: Vec<u64> = (0..count)
        .map(|i| (start * ratio.powi(i as i32)).round() as u64)
        .collect();
    grid.dedup();
    Ok(grid)
}

fn bad_grid(text: &str) -> CliError {
    CliError::Mix(MixError::InvalidArgument(format!("bad n grid '{text}'")))
}

fn build_hard_spec(
    m: usize,
    m0: usize,
    base_moments: Option<Vec<f64>>,
    g0_path: Option<&Path>,
    theta0: f64,
) -> Result<HardInstanceSpec, CliError> {
    let g0 = match g0_path {
        Some(path) => {
            let g = load_mixing_distribution(path)?;
            if g.num_atoms() != m0 {
                return Err(CliError::Mix(MixError::InvalidArgument(format!(
                    "--m0 {m0} does not match the {} atoms in the base measure file",
                    g.num_atoms()
                ))));
            }
            g
        }
        None => {
            if m0 != 1 {
                return Err(CliError::Mix(MixError::InvalidArgument(
                    "--m0 > 1 requires a base measure file via --g0".into(),
                )));
            }
            MixingDistribution::dirac(theta0, DEFAULT_THETA_BOUNDS)?
        }
    };
    let d = m.checked_sub(m0).map(|k| k + 1).ok_or_else(|| {
        CliError::Mix(MixError::InvalidArgument(format!(
            "m = {m} must be at least m0 = {m0}"
        )))
    })?;
    let base = match base_moments {
        Some(b) => b,
        None if d == 2 => vec![0.0, 4.0],
        None => {
            return Err(CliError::Mix(MixError::InvalidArgument(format!(
                "no default base moments for d = {d}; pass --base-moments with 2d-2 values"
            ))));
        }
    };
    Ok(HardInstanceSpec::new(g0, m, base)?)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepFileConfig {
    family: FamilyFileSpec,
    g_true: MixingDistribution,
    m: usize,
    m0: usize,
    n_grid: Vec<u64>,
    reps: usize,
    seed: u64,
    #[serde(default)]
    estimator: EstimatorFileSpec,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FamilyFileSpec {
    name: String,
    #[serde(default = "default_sigma")]
    sigma: f64,
}

fn default_sigma() -> f64 {
    1.0
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EstimatorFileSpec {
    #[serde(default = "default_restarts")]
    restarts: usize,
    #[serde(default = "default_max_iter")]
    max_iter: usize,
}

impl Default for EstimatorFileSpec {
    fn default() -> Self {
        Self {
            restarts: default_restarts(),
            max_iter: default_max_iter(),
        }
    }
}

fn default_restarts() -> usize {
    16
}

fn default_max_iter() -> usize {
    300
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::SolveMoments { moments, d } => {
            let ms = MomentSequence::new(moments)?;
            let g = solve_moment_problem(&ms, d)?;
            write_output(&cli.out, &serde_json::to_string_pretty(&g).unwrap())
        }

        Command::Hankel { moments } => {
            let ms = MomentSequence::new(moments)?;
            let report = hankel_determinants(&ms)?;
            let mut csv = String::from("k,det");
            for (i, det) in report.dets.iter().enumerate() {
                csv.push_str(&format!("\n{},{det}", i + 1));
            }
            write_output(&cli.out, &csv)
        }

        Command::Wasserstein { g1, g2 } => {
            let a = load_mixing_distribution(&g1)?;
            let b = load_mixing_distribution(&g2)?;
            let w = wasserstein_w1(&a, &b);
            write_output(
                &cli.out,
                &serde_json::to_string_pretty(&json!({ "w1": w })).unwrap(),
            )
        }

        Command::HardInstance {
            m,
            m0,
            u,
            n,
            base_moments,
            g0,
            theta0,
        } => {
            let spec = build_hard_spec(m, m0, base_moments, g0.as_deref(), theta0)?
                .with_u(u)
                .at_n(n);
            let g = build_gn(&spec)?;
            write_output(&cli.out, &serde_json::to_string_pretty(&g).unwrap())
        }

        Command::Identifiability {
            family,
            thetas,
            k,
            budget,
        } => {
            let fam = family.build()?;
            let q = MarginQuery::new(&fam, thetas, k)?
                .with_budget(budget)
                .with_seed(cli.seed);
            let result = identifiability_margin(&q)?;
            write_output(&cli.out, &serde_json::to_string_pretty(&result).unwrap())
        }

        Command::Separation {
            family,
            g1,
            g2,
            m,
            m0,
        } => {
            let fam = family.build()?;
            let a = load_mixing_distribution(&g1)?;
            let b = load_mixing_distribution(&g2)?;
            let report = separation_ratio(&fam, &a, &b, m, m0)?;
            let out = json!({
                "ks": report.sup_cdf_gap,
                "w1": report.w1,
                "exponent": report.exponent,
                "ratio": report.ratio,
            });
            write_output(&cli.out, &serde_json::to_string_pretty(&out).unwrap())
        }

        Command::Estimate {
            family,
            samples,
            m,
            restarts,
            max_iter,
        } => {
            let fam = family.build()?;
            let xs = load_samples(&samples)?;
            let opts = FitOptions {
                restarts,
                max_iter,
                seed: cli.seed,
            };
            let fit = fit_min_distance(&xs, &fam, m, &opts)?;
            write_output(&cli.out, &serde_json::to_string_pretty(&fit).unwrap())
        }

        Command::RateSweep { config, csv } => {
            let text = read_file(&config)?;
            let parsed: SweepFileConfig = serde_json::from_str(&text).map_err(|e| {
                CliError::Mix(MixError::InvalidArgument(format!(
                    "{}: {e}",
                    config.display()
                )))
            })?;
            if parsed.family.name != "gaussian" {
                return Err(CliError::Mix(MixError::InvalidArgument(format!(
                    "unknown family '{}' in config",
                    parsed.family.name
                ))));
            }
            let fam = GaussianLocationFamily::new(parsed.family.sigma)?;
            let report = rate_sweep(&RateSweepConfig {
                family: &fam,
                g_true: parsed.g_true,
                m: parsed.m,
                m0: parsed.m0,
                n_grid: parsed.n_grid,
                reps: parsed.reps,
                seed: parsed.seed,
                fit: FitOptions {
                    restarts: parsed.estimator.restarts,
                    max_iter: parsed.estimator.max_iter,
                    seed: 0,
                },
            })?;
            if let Some(path) = csv {
                write_csv(
                    &path,
                    "grid_index,n,replicate,w1_error",
                    report.errors.iter().enumerate().flat_map(|(i, per_n)| {
                        let n = report.n_grid[i];
                        per_n
                            .iter()
                            .enumerate()
                            .map(move |(r, e)| format!("{i},{n},{r},{e}"))
                            .collect::<Vec<_>>()
                    }),
                )?;
            }
            write_output(&cli.out, &serde_json::to_string_pretty(&report).unwrap())
        }

        Command::Lan {
            family,
            u,
            n,
            reps,
            m,
            m0,
            base_moments,
            theta0,
            csv,
        } => {
            let fam = family.build()?;
            let spec = build_hard_spec(m, m0, base_moments, None, theta0)?;
            let report = lan_simulate(&fam, &spec, u, n, reps, cli.seed)?;
            if let Some(path) = csv {
                write_csv(
                    &path,
                    "replicate,loglr",
                    report
                        .loglr
                        .iter()
                        .enumerate()
                        .map(|(r, z)| format!("{r},{z}")),
                )?;
            }
            write_output(&cli.out, &serde_json::to_string_pretty(&report).unwrap())
        }

        Command::Dkw { n, reps, csv } => {
            let report = dkw_calibration(n, reps, cli.seed)?;
            if let Some(path) = csv {
                write_csv(
                    &path,
                    "replicate,sqrt_n_ks",
                    report
                        .values
                        .iter()
                        .enumerate()
                        .map(|(r, v)| format!("{r},{v}")),
                )?;
            }
            write_output(&cli.out, &serde_json::to_string_pretty(&report).unwrap())
        }

        Command::ScwCheck {
            instance,
            n_grid,
            snap_tol,
            bound,
        } => {
            let grid = parse_n_grid(&n_grid)?;
            let fam = match instance.as_str() {
                "example" => ScaledPairFamily::worked_example(grid)?,
                "three-level" => ScaledPairFamily::three_level(grid)?,
                other => {
                    return Err(CliError::Mix(MixError::InvalidArgument(format!(
                        "unknown instance '{other}'; available: example, three-level"
                    ))));
                }
            };
            let report = check_scw(
                &fam,
                &ScwOptions {
                    snap_tol,
                    bound_factor: bound,
                },
            )?;
            write_output(&cli.out, &serde_json::to_string_pretty(&report).unwrap())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();

    let threads = cli.threads.or_else(|| {
        std::env::var("MIXRATE_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(k) = threads {
        // A failed build means a pool already exists; harmless here.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global();
    }

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let line = json!({ "error": { "kind": err.kind(), "message": err.message() } });
            eprintln!("{line}");
            ExitCode::from(err.exit_code())
        }
    }
}
