use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use spikecov::cluster::{average_linkage, pairwise_dissimilarity, ClusterConfig, ClusterMode};
use spikecov::factorest::{canonical_from_panel, estimate_factor_model};
use spikecov::io::{log_diff_preprocess, read_panel_csv, results_json_string, write_panel_csv, write_panel_csv_to, Orientation, ToResultJson, ZeroPolicy};
use spikecov::mc::{clt_diagnostic, empirical_power, empirical_size, McConfig, McResult, Scenario};
use spikecov::simulate::{gen_factor_panel, FactorModelSpec, Innovation, LinearProcessSpec};
use spikecov::spectra::{symmetrized_spectrum, AutocovMode};
use spikecov::{two_sample_test, Error};

mod config;

#[derive(Parser, Debug)]
#[command(name = "spikecov", version, about = "Spiked autocovariance eigenvalues, two-sample tests and clustering")]
#[command(args_override_self = true)]
struct Cli {
    /// JSON file supplying default flag values.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a panel from the canonical factor model.
    Simulate(SimulateArgs),
    /// Top eigenpairs of the symmetrized lag-tau autocovariance.
    Spectrum(SpectrumArgs),
    /// Estimate the number of factors with the eigenvalue-ratio rule.
    Nfactors(NfactorsArgs),
    /// Two-sample test of factor autocovariance between two panels.
    Test(TestArgs),
    /// Cluster populations by pairwise test p-values.
    Cluster(ClusterArgs),
    /// Empirical size of the two-sample test.
    McSize(McArgs),
    /// Empirical power under a variance-ratio or autocorrelation alternative.
    McPower(McPowerArgs),
    /// Normality check of the spiked-eigenvalue CLT.
    McClt(McArgs),
    /// Log-difference a panel of positive values.
    Preprocess(PreprocessArgs),
}

#[derive(Args, Debug)]
struct InputArgs {
    #[arg(long = "in", value_name = "CSV")]
    input: PathBuf,
    #[arg(long, default_value = "rows_are_time")]
    orientation: Orientation,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    t: usize,
    #[arg(long)]
    n: usize,
    /// Factor strengths, one per factor.
    #[arg(long, value_delimiter = ',', num_args = 1.., default_value = "1")]
    sigma2: Vec<f64>,
    /// AR(1) coefficients, one per factor.
    #[arg(long, value_delimiter = ',', num_args = 1.., default_value = "0.5")]
    phi: Vec<f64>,
    /// gaussian, rademacher or t:<df>
    #[arg(long, default_value = "gaussian", value_parser = parse_innovation)]
    innovation: Innovation,
    #[arg(long, default_value_t = 1.0)]
    noise_sd: f64,
    #[arg(long, required = true)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SpectrumArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    tau: usize,
    #[arg(long, default_value_t = 5)]
    top: usize,
    #[arg(long, default_value = "centered")]
    mode: AutocovMode,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct NfactorsArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    tau: usize,
    #[arg(long)]
    r_max: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TestArgs {
    #[arg(long = "in-a", value_name = "CSV")]
    in_a: PathBuf,
    #[arg(long = "in-b", value_name = "CSV")]
    in_b: PathBuf,
    #[arg(long, default_value = "rows_are_time")]
    orientation: Orientation,
    #[arg(long)]
    tau: usize,
    #[arg(long, default_value_t = 500)]
    boot: usize,
    #[arg(long, required = true)]
    seed: Option<u64>,
    #[arg(long)]
    r_max: Option<usize>,
    /// Fix the factor count instead of estimating it.
    #[arg(long)]
    k: Option<usize>,
    /// Compare only the leading k factors when the estimates differ.
    #[arg(long)]
    k_common: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ClusterArgs {
    /// One CSV per population.
    #[arg(long = "in", value_name = "CSV", value_delimiter = ',', num_args = 1.., required = true)]
    inputs: Vec<PathBuf>,
    /// Population names (default: file stems).
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    labels: Option<Vec<String>>,
    #[arg(long, default_value = "rows_are_time")]
    orientation: Orientation,
    #[arg(long)]
    tau: usize,
    #[arg(long, default_value_t = 500)]
    boot: usize,
    #[arg(long, default_value = "matched_k")]
    mode: ClusterMode,
    #[arg(long, required = true)]
    seed: Option<u64>,
    #[arg(long)]
    r_max: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the dendrogram in Newick format.
    #[arg(long)]
    newick: Option<PathBuf>,
    /// Also write the dissimilarity matrix as JSON.
    #[arg(long)]
    dissimilarity: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct McArgs {
    #[arg(long, value_delimiter = ',', num_args = 1.., default_value = "400")]
    t: Vec<usize>,
    #[arg(long, value_delimiter = ',', num_args = 1.., default_value = "100")]
    n: Vec<usize>,
    #[arg(long, value_delimiter = ',', num_args = 1.., default_value = "0")]
    delta: Vec<f64>,
    #[arg(long, default_value_t = 0.5)]
    phi: f64,
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    #[arg(long, default_value_t = 200)]
    reps: usize,
    #[arg(long, default_value_t = 200)]
    boot: usize,
    #[arg(long, default_value_t = 1)]
    tau: usize,
    #[arg(long, required = true)]
    seed: Option<u64>,
    /// JSON result path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Tidy CSV path.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct McPowerArgs {
    #[command(flatten)]
    mc: McArgs,
    /// Variance ratios of the second population.
    #[arg(long, value_delimiter = ',', num_args = 1.., conflicts_with = "fractions")]
    ratios: Option<Vec<f64>>,
    /// Multipliers of the second population's AR coefficient.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    fractions: Option<Vec<f64>>,
}

#[derive(Args, Debug)]
struct PreprocessArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, default_value = "error")]
    zero_policy: ZeroPolicy,
    #[arg(long)]
    out: PathBuf,
}

fn parse_innovation(s: &str) -> Result<Innovation, String> {
    match s {
        "gaussian" | "normal" => Ok(Innovation::Gaussian),
        "rademacher" => Ok(Innovation::Rademacher),
        _ => match s.strip_prefix("t:") {
            Some(df) => df.parse().map(Innovation::StudentT).map_err(|e| format!("bad degrees of freedom: {e}")),
            None => Err(format!("unknown innovation '{s}' (gaussian, rademacher, t:<df>)")),
        },
    }
}

fn emit(value: &dyn ToResultJson, out: Option<&Path>) -> spikecov::Result<()> {
    let text = results_json_string(value)?;
    match out {
        Some(p) => std::fs::write(p, text + "\n")?,
        None => println!("{text}"),
    }
    Ok(())
}

struct Json(Value);

impl ToResultJson for Json {
    fn to_result_json(&self) -> Value {
        self.0.clone()
    }
}

fn seed_of(seed: Option<u64>) -> u64 {
    seed.expect("clap enforces --seed")
}

fn run(command: Command) -> spikecov::Result<()> {
    match command {
        Command::Simulate(a) => {
            if a.sigma2.len() != a.phi.len() {
                return Err(Error::Config(format!("{} strengths for {} AR coefficients", a.sigma2.len(), a.phi.len())));
            }
            let model = FactorModelSpec {
                k: a.sigma2.len(),
                sigma2: a.sigma2.clone(),
                processes: a.phi.iter().map(|&p| LinearProcessSpec::ar1(p).with_innovation(a.innovation)).collect(),
                n_dim: a.n,
                noise_sd: a.noise_sd,
            };
            let panel = gen_factor_panel(&model, a.t, seed_of(a.seed))?;
            match a.out {
                Some(p) => write_panel_csv(&panel, p)?,
                None => write_panel_csv_to(&panel, std::io::stdout().lock())?,
            }
        }
        Command::Spectrum(a) => {
            let panel = read_panel_csv(&a.input.input, a.input.orientation)?;
            let s = symmetrized_spectrum(&panel, a.tau, a.top, a.mode)?;
            emit(&s, a.out.as_deref())?;
        }
        Command::Nfactors(a) => {
            let panel = read_panel_csv(&a.input.input, a.input.orientation)?;
            let raw = estimate_factor_model(&panel, a.tau, a.r_max, None)?;
            let ratios: Vec<f64> = raw.ratio_eigenvalues.windows(2).take(raw.r_max).map(|w| w[1] / w[0]).collect();
            let v = json!({
                "kind": "nfactors",
                "tau": a.tau,
                "k_hat": raw.k_hat,
                "r_max": raw.r_max,
                "eigenvalues": raw.ratio_eigenvalues,
                "ratios": ratios,
                "warnings": serde_json::to_value(&raw.warnings)?,
            });
            emit(&Json(v), a.out.as_deref())?;
        }
        Command::Test(a) => {
            let pa = read_panel_csv(&a.in_a, a.orientation)?;
            let pb = read_panel_csv(&a.in_b, a.orientation)?;
            let ca = canonical_from_panel(&pa, a.tau, a.r_max, a.k)?;
            let cb = canonical_from_panel(&pb, a.tau, a.r_max, a.k)?;
            let out = two_sample_test(&ca, &cb, a.tau, a.boot, seed_of(a.seed), a.k_common)?;
            emit(&out, a.out.as_deref())?;
        }
        Command::Cluster(a) => {
            let panels = a
                .inputs
                .iter()
                .map(|p| read_panel_csv(p, a.orientation))
                .collect::<spikecov::Result<Vec<_>>>()?;
            let labels: Vec<String> = match a.labels {
                Some(l) => l,
                None => a
                    .inputs
                    .iter()
                    .map(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default())
                    .collect(),
            };
            let mut cfg = ClusterConfig::new(a.tau, a.boot, a.mode, seed_of(a.seed));
            cfg.r_max = a.r_max;
            cfg.k_override = a.k;
            let d = pairwise_dissimilarity(&panels, Some(&labels), &cfg)?;
            let tree = average_linkage(&d)?;
            if let Some(p) = &a.dissimilarity {
                emit(&d, Some(p))?;
            }
            if let Some(p) = &a.newick {
                std::fs::write(p, tree.to_newick() + "\n")?;
            }
            emit(&tree, a.out.as_deref())?;
        }
        Command::McSize(a) => {
            let cfg = mc_config(&a, Scenario::Size);
            finish_mc(&empirical_size(&cfg)?, &a)?;
        }
        Command::McPower(a) => {
            let scenario = match (a.ratios, a.fractions) {
                (Some(r), None) => Scenario::PowerVariance(r),
                (None, Some(f)) => Scenario::PowerAutocorr(f),
                _ => return Err(Error::Config("mc-power needs exactly one of --ratios or --fractions".into())),
            };
            let cfg = mc_config(&a.mc, scenario);
            finish_mc(&empirical_power(&cfg)?, &a.mc)?;
        }
        Command::McClt(a) => {
            let cfg = mc_config(&a, Scenario::Clt);
            finish_mc(&clt_diagnostic(&cfg)?, &a)?;
        }
        Command::Preprocess(a) => {
            let panel = read_panel_csv(&a.input.input, a.input.orientation)?;
            let out = log_diff_preprocess(&panel, a.zero_policy)?;
            write_panel_csv(&out, &a.out)?;
        }
    }
    Ok(())
}

fn mc_config(a: &McArgs, scenario: Scenario) -> McConfig {
    McConfig {
        t_len: a.t.clone(),
        n_dim: a.n.clone(),
        delta: a.delta.clone(),
        phi1: a.phi,
        alpha: a.alpha,
        m_reps: a.reps,
        b_boot: a.boot,
        base_seed: seed_of(a.seed),
        tau: a.tau,
        scenario,
    }
}

fn finish_mc(result: &McResult, a: &McArgs) -> spikecov::Result<()> {
    if let Some(p) = &a.csv {
        result.write_csv(p)?;
    }
    if a.out.is_some() || a.csv.is_none() {
        emit(result, a.out.as_deref())?;
    }
    Ok(())
}

fn fail(code: &str, message: &str, exit: u8) -> ExitCode {
    eprintln!("ERROR {code}: {}", message.replace('\n', " "));
    ExitCode::from(exit)
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let argv = match config::merge_config(argv) {
        Ok(a) => a,
        Err(e) => return fail(e.code(), &e.to_string(), 1),
    };
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = e.print();
                    ExitCode::SUCCESS
                }
                _ => {
                    let rendered = e.render().to_string();
                    eprint!("{rendered}");
                    let first = rendered.lines().next().unwrap_or("invalid arguments");
                    fail("USAGE", first.trim_start_matches("error: "), 1)
                }
            };
        }
    };
    if let Some(k) = cli.threads {
        if k == 0 {
            return fail("CONFIG", "--threads must be at least 1", 1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k).build_global() {
            return fail("CONFIG", &e.to_string(), 1);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is_numerical() => fail(e.code(), &e.to_string(), 2),
        Err(e) => fail(e.code(), &e.to_string(), 1),
    }
}
