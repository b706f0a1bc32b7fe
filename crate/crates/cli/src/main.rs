//! `heavytail` command-line tool.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use heavytail::oracle::{clt_verdict, levy_classification, rate_prediction, AlgorithmId, CltQuery};
use heavytail::runner::{
    run_drift_experiment, run_excursions_experiment, run_experiment, run_tails_experiment, ExperimentConfig, Overrides,
};
use heavytail::DriftKind;
use serde_json::json;

#[derive(Parser, Debug)]
#[command(name = "heavytail", version, about = "MCMC experiments on heavy-tailed targets")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "HEAVYTAIL_THREADS")]
    threads: Option<usize>,
    /// Override the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Multiply the config's chain count and chain length.
    #[arg(long, global = true)]
    scale: Option<f64>,
    /// Output directory (overrides `output_dir` in the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run an ensemble and write averages.csv, qq.csv, summary.json, manifest.json.
    Run { config: PathBuf },
    /// Print the CLT verdict and convergence rate for an algorithm as JSON.
    Oracle(OracleArgs),
    /// Estimate one-step drifts at the probes of the [drift_check] section.
    Drift { config: PathBuf },
    /// Stream |X_n| and write a Hill tail-index report.
    Tails { config: PathBuf },
    /// Record excursion durations above the [excursions] level.
    Excursions { config: PathBuf },
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Alg {
    FvRwm,
    IvRwm,
    Mala,
    Ula,
    Sps,
    Is,
    LevyEm,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Growth {
    Bounded,
    Power,
    Exp,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum LevyDrift {
    Linear,
    Superlinear,
}

#[derive(clap::Args, Debug)]
struct OracleArgs {
    #[arg(long, value_enum)]
    alg: Alg,
    /// Tail index of the target.
    #[arg(long)]
    v: f64,
    /// Dimension.
    #[arg(long, default_value_t = 1)]
    d: usize,
    /// Growth class of the test function.
    #[arg(long, value_enum, default_value = "bounded")]
    g: Growth,
    /// Growth exponent for `--g power` or `--g exp`.
    #[arg(long, default_value_t = 0.0)]
    s: f64,
    /// Proposal index for iv-rwm.
    #[arg(long)]
    eta: Option<f64>,
    /// Proposal tail parameter for the independence sampler.
    #[arg(long)]
    k: Option<f64>,
    /// Stability index for levy-em.
    #[arg(long)]
    alpha: Option<f64>,
    /// Drift of the levy-em chain.
    #[arg(long, value_enum, default_value = "linear")]
    drift: LevyDrift,
    /// Superlinear drift exponent.
    #[arg(long, default_value_t = 1.0)]
    delta: f64,
    /// Step size for levy-em.
    #[arg(long, default_value_t = 0.01)]
    h: f64,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

fn need(v: Option<f64>, flag: &str) -> Result<f64, Failure> {
    v.ok_or_else(|| Failure::Usage(format!("--{flag} is required for this algorithm")))
}

fn oracle(a: &OracleArgs) -> Result<serde_json::Value, Failure> {
    let usage = |e: heavytail::Error| Failure::Usage(e.to_string());
    let alg = match a.alg {
        Alg::FvRwm => AlgorithmId::FvRwm,
        Alg::IvRwm => AlgorithmId::IvRwm { eta: need(a.eta, "eta")? },
        Alg::Mala => AlgorithmId::Mala,
        Alg::Ula => AlgorithmId::Ula,
        Alg::Sps => AlgorithmId::Sps,
        Alg::Is => AlgorithmId::IndependenceSampler { k: need(a.k, "k")? },
        Alg::LevyEm => {
            let alpha = need(a.alpha, "alpha")?;
            let drift = match a.drift {
                LevyDrift::Linear => DriftKind::Linear,
                LevyDrift::Superlinear => DriftKind::Superlinear { delta: a.delta },
            };
            let verdict = levy_classification(alpha, drift, a.h).map_err(usage)?;
            return Ok(json!({ "algorithm": AlgorithmId::LevyEm { alpha }.label(), "levy": verdict }));
        }
    };
    let query = match a.g {
        Growth::Bounded => CltQuery::Bounded,
        Growth::Power => CltQuery::Power { s: a.s },
        Growth::Exp => CltQuery::ExponentialGrowth { s: a.s },
    };
    let verdict = clt_verdict(alg, a.v, a.d, query).map_err(usage)?;
    let rate = rate_prediction(alg, a.v, a.d).ok();
    Ok(json!({
        "algorithm": alg.label(),
        "v": a.v,
        "d": a.d,
        "query": query,
        "status": verdict.status,
        "citation": verdict.citation.anchor(),
        "source": verdict.source,
        "statement": verdict.statement,
        "rate": rate,
    }))
}

fn load(path: &Path, cli: &Cli) -> Result<ExperimentConfig, Failure> {
    let mut cfg = ExperimentConfig::load(path).map_err(|e| Failure::Usage(e.to_string()))?;
    let o = Overrides {
        threads: cli.threads,
        seed: cli.seed,
        scale: cli.scale,
        output_dir: cli.out.clone(),
    };
    cfg.apply(&o).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    if cfg.output_dir.is_none() {
        return Err(Failure::Usage(format!("{}: no output_dir; pass --out", path.display())));
    }
    Ok(cfg)
}

fn dispatch(cli: &Cli) -> Result<serde_json::Value, Failure> {
    let runtime = |e: heavytail::Error| Failure::Runtime(e.to_string());
    match &cli.command {
        Command::Oracle(a) => oracle(a),
        Command::Run { config } => {
            let cfg = load(config, cli)?;
            if cfg.g.is_none() {
                return Err(Failure::Usage(format!("{}: missing test function `g`", config.display())));
            }
            let rep = run_experiment(&cfg).map_err(runtime)?;
            Ok(json!({ "output_dir": rep.output_dir, "summary": rep.summary }))
        }
        Command::Drift { config } => {
            let cfg = load(config, cli)?;
            if cfg.drift_check.is_none() {
                return Err(Failure::Usage(format!("{}: missing [drift_check] section", config.display())));
            }
            let rep = run_drift_experiment(&cfg).map_err(runtime)?;
            Ok(json!({ "output_dir": cfg.output_dir, "fits": rep.fits }))
        }
        Command::Tails { config } => {
            let cfg = load(config, cli)?;
            let rep = run_tails_experiment(&cfg).map_err(runtime)?;
            Ok(json!({
                "output_dir": cfg.output_dir,
                "n": rep.n,
                "hill_estimate": rep.hill.estimate,
                "light_tail": rep.hill.light_tail,
            }))
        }
        Command::Excursions { config } => {
            let cfg = load(config, cli)?;
            if cfg.excursions.is_none() {
                return Err(Failure::Usage(format!("{}: missing [excursions] section", config.display())));
            }
            let rep = run_excursions_experiment(&cfg).map_err(runtime)?;
            Ok(json!({
                "output_dir": cfg.output_dir,
                "excursions": rep.excursions,
                "hill_estimate": rep.hill.map(|h| h.estimate),
            }))
        }
    }
}

/// Parses `argv` and runs the command. Returns the exit code and the text
/// destined for stdout and stderr.
fn run<I, T>(argv: I) -> (u8, String, String)
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code() as u8;
            let text = e.render().to_string();
            return if code == 0 { (0, text, String::new()) } else { (code, String::new(), text) };
        }
    };
    match dispatch(&cli) {
        Ok(v) => (0, serde_json::to_string_pretty(&v).expect("JSON values serialize") + "\n", String::new()),
        Err(Failure::Usage(m)) => (2, String::new(), format!("error: {m}\n")),
        Err(Failure::Runtime(m)) => (1, String::new(), format!("error: {m}\n")),
    }
}

fn main() -> ExitCode {
    let (code, out, err) = run(std::env::args_os());
    print!("{out}");
    eprint!("{err}");
    ExitCode::from(code)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn json(out: &str) -> serde_json::Value {
        serde_json::from_str(out).unwrap()
    }

    #[test]
    fn help_and_version_exit_zero() {
        let (code, out, _) = run(["heavytail", "--help"]);
        assert_eq!(code, 0);
        for flag in ["--threads", "--seed", "--scale", "--out"] {
            assert!(out.contains(flag), "{flag} missing from help");
        }
        for sub in ["run", "oracle", "drift", "tails", "excursions"] {
            assert!(out.contains(sub), "{sub} missing from help");
        }
        let (code, out, _) = run(["heavytail", "oracle", "--help"]);
        assert_eq!(code, 0);
        for flag in ["--alg", "--v", "--d", "--g", "--eta", "--k", "--alpha"] {
            assert!(out.contains(flag), "{flag} missing from oracle help");
        }
        assert_eq!(run(["heavytail", "--version"]).0, 0);
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(run(["heavytail", "frobnicate"]).0, 2);
        assert_eq!(run(["heavytail"]).0, 2);
        assert_eq!(run(["heavytail", "oracle", "--alg", "nuts", "--v", "1"]).0, 2);
        assert_eq!(run(["heavytail", "oracle", "--alg", "iv-rwm", "--v", "1"]).0, 2);
        assert_eq!(run(["heavytail", "oracle", "--alg", "fv-rwm", "--v", "-1"]).0, 2);
        let (code, _, err) = run(["heavytail", "run", "missing.toml"]);
        assert_eq!(code, 2);
        assert!(err.contains("missing.toml"));
    }

    #[test]
    fn oracle_sps_bounded_fails() {
        let (code, out, _) = run(["heavytail", "oracle", "--alg", "sps", "--v", "1", "--d", "4", "--g", "bounded"]);
        assert_eq!(code, 0);
        let v = json(&out);
        assert_eq!(v["status"], "fails");
        assert_eq!(v["citation"], "sps/clt-bounded");
        assert_eq!(v["rate"]["beta"], 3.0);
        assert_eq!(v["rate"]["jump_type"], "single_jump");
    }

    #[test]
    fn oracle_other_algorithms() {
        let (_, out, _) = run(["heavytail", "oracle", "--alg", "iv-rwm", "--eta", "0.05", "--v", "1"]);
        assert_eq!(json(&out)["status"], "holds");
        let (_, out, _) = run(["heavytail", "oracle", "--alg", "ula", "--v", "3", "--g", "power", "--s", "1"]);
        let v = json(&out);
        assert_eq!(v["status"], "fails");
        assert_eq!(v["statement"], "asymptotic variance is infinite");
        let (_, out, _) = run(["heavytail", "oracle", "--alg", "is", "--k", "4", "--v", "1"]);
        assert_eq!(json(&out)["status"], "fails");
        let (_, out, _) = run([
            "heavytail", "oracle", "--alg", "levy-em", "--alpha", "1.5", "--v", "3", "--drift", "superlinear",
        ]);
        assert_eq!(json(&out)["levy"]["status"], "transient");
    }

    fn write_config(dir: &std::path::Path, body: &str) -> std::path::PathBuf {
        let p = dir.join("c.toml");
        std::fs::write(&p, body).unwrap();
        p
    }

    const SMOKE: &str = r#"
target = { kind = "student_t", v = 1.0, d = 1 }
algorithm = "rwm_gaussian"
g = { kind = "indicator_norm_ge", threshold = 2.0 }
chains = 4
steps = 1000
seed = 1
"#;

    #[test]
    fn unknown_algorithm_names_the_field() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_config(dir.path(), &SMOKE.replace("rwm_gaussian", "hamiltonian"));
        let (code, _, err) = run(["heavytail", "run", p.to_str().unwrap(), "--out", "x"]);
        assert_eq!(code, 2);
        assert!(err.contains("algorithm"), "{err}");
        assert!(err.contains("line 3"), "{err}");
    }

    #[test]
    fn run_writes_artifacts_and_respects_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_config(dir.path(), SMOKE);
        let out = dir.path().join("out");
        let (code, stdout, err) = run([
            "heavytail", "run", p.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", "9", "--scale", "2",
        ]);
        assert_eq!(code, 0, "{err}");
        let v = json(&stdout);
        assert_eq!(v["summary"]["seed"], 9);
        assert_eq!(v["summary"]["chains_total"], 8);
        assert_eq!(v["summary"]["steps"], 2000);
        for f in ["averages.csv", "qq.csv", "summary.json", "manifest.json"] {
            assert!(out.join(f).exists(), "{f}");
        }
        // no output directory anywhere
        assert_eq!(run(["heavytail", "run", p.to_str().unwrap()]).0, 2);
        assert_eq!(run(["heavytail", "run", p.to_str().unwrap(), "--out", "y", "--threads", "0"]).0, 2);
    }

    #[test]
    fn sections_are_required_by_their_subcommands() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_config(dir.path(), SMOKE);
        let p = p.to_str().unwrap();
        assert_eq!(run(["heavytail", "drift", p, "--out", "o"]).0, 2);
        assert_eq!(run(["heavytail", "excursions", p, "--out", "o"]).0, 2);
    }

    #[test]
    fn tails_excursions_and_drift_run() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!(
            "{}\n[tails]\nreservoir = 1000\n\n[excursions]\nell = 2.0\n\n[drift_check]\nprobes = [10.0, 20.0, 40.0]\nsamples = 2000\n",
            SMOKE.replace("steps = 1000", "steps = 20000")
        );
        let p = write_config(dir.path(), &body);
        let p = p.to_str().unwrap();
        for (sub, file) in [("tails", "tails.json"), ("excursions", "excursions.json"), ("drift", "drift.csv")] {
            let out = dir.path().join(sub);
            let (code, _, err) = run(["heavytail", sub, p, "--out", out.to_str().unwrap()]);
            assert_eq!(code, 0, "{sub}: {err}");
            assert!(out.join(file).exists(), "{sub}");
            assert!(out.join("manifest.json").exists(), "{sub}");
        }
    }
}
