use std::fmt::Write as _;
use std::io::Read;
use std::path::Path;

use selex::experiments::{
    export_results, format_sig10, p2_grid, p3_grid, run_bootstrap_ci, run_mse_grid,
    BootstrapConfig, Estimator, MseConfig,
};
use selex::{
    ccmle, mc_ordering_probability, ordering_probability, Error, MeanConfig, ObservedSample,
};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::args::{BootstrapArgs, EstimateArgs, Grid, MseArgs, ProbArgs};

pub const EXIT_IO: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_QUADRATURE: i32 = 3;
pub const EXIT_OPTIMIZER: i32 = 4;
pub const EXIT_REPLICATE: i32 = 5;

/// What a command produced: a JSON document, its text rendering, and the
/// exit status.
pub struct Report {
    pub json: Value,
    pub text: String,
    pub code: i32,
}

#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::InvalidArgument { .. } => EXIT_USAGE,
            Error::ConvergenceFailure { .. } => EXIT_QUADRATURE,
            Error::RootBracketFailure(_) => EXIT_OPTIMIZER,
            Error::Io { .. } | Error::Serialization(_) => EXIT_IO,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type Outcome = Result<Report, Failure>;

fn g(v: f64) -> String {
    format_sig10(v)
}

fn join(v: &[f64]) -> String {
    v.iter().map(|&x| g(x)).collect::<Vec<_>>().join(" ")
}

pub fn prob(a: &ProbArgs) -> Outcome {
    let cfg = MeanConfig::new(a.means.clone(), a.sigma)?;
    let r = match a.mc {
        Some(n) => mc_ordering_probability(&cfg, n, a.seed)?,
        None => ordering_probability(&cfg, &a.quadrature.spec())?,
    };
    let mut text = String::new();
    writeln!(text, "value      {}", g(r.value)).unwrap();
    writeln!(text, "log_value  {}", g(r.log_value)).unwrap();
    writeln!(text, "method     {}", r.method).unwrap();
    writeln!(text, "err_est    {}", g(r.err_est)).unwrap();
    if r.underflow {
        writeln!(text, "note       value underflows; use log_value").unwrap();
    }
    if r.degenerate {
        writeln!(text, "note       degenerate configuration").unwrap();
    }
    Ok(Report {
        json: json!({
            "value": r.value,
            "log_value": r.log_value,
            "method": r.method,
            "err_est": r.err_est,
            "underflow": r.underflow,
            "degenerate": r.degenerate,
        }),
        text,
        code: 0,
    })
}

fn parse_numbers(src: &str, origin: &str) -> Result<Vec<f64>, Failure> {
    let mut out = Vec::new();
    for line in src.lines() {
        let line = line.split('#').next().unwrap_or("");
        for tok in line.split(|c: char| c == ',' || c.is_whitespace()) {
            if tok.is_empty() {
                continue;
            }
            let v = crate::args::finite(tok)
                .map_err(|e| Failure::usage(format!("obs: {e} in {origin}")))?;
            out.push(v);
        }
    }
    Ok(out)
}

fn read_obs(path: &Path) -> Result<Vec<f64>, Failure> {
    let io = |e: std::io::Error| Failure {
        code: EXIT_IO,
        message: format!("cannot read {}: {e}", path.display()),
    };
    let mut src = String::new();
    if path == Path::new("-") {
        std::io::stdin().read_to_string(&mut src).map_err(io)?;
        parse_numbers(&src, "stdin")
    } else {
        src = std::fs::read_to_string(path).map_err(io)?;
        parse_numbers(&src, &path.display().to_string())
    }
}

/// Labels are reported 1-based.
fn labels(groups: &[Vec<usize>]) -> Vec<Vec<usize>> {
    groups
        .iter()
        .map(|g| g.iter().map(|l| l + 1).collect())
        .collect()
}

pub fn estimate(a: &EstimateArgs) -> Outcome {
    let x = match &a.obs_file {
        Some(p) => read_obs(p)?,
        None => a.obs.clone(),
    };
    let obs = ObservedSample::new(x, a.sigma)?;
    let r = ccmle(&obs, &a.quadrature.spec(), &a.optimizer.settings())?;
    let groups = labels(&r.groups);

    let mut text = String::new();
    writeln!(text, "mu_hat          {}", join(&r.mu_hat)).unwrap();
    let shown: Vec<String> = groups
        .iter()
        .map(|g| {
            let inner: Vec<String> = g.iter().map(ToString::to_string).collect();
            format!("{{{}}}", inner.join(","))
        })
        .collect();
    writeln!(text, "groups          {}", shown.join(" ")).unwrap();
    writeln!(text, "path            {}", r.path).unwrap();
    writeln!(text, "log_likelihood  {}", g(r.log_likelihood)).unwrap();
    if a.diagnostics {
        writeln!(text, "mu_hat_ranked   {}", join(&r.mu_hat_ranked)).unwrap();
        writeln!(text, "iterations      {}", r.iterations).unwrap();
        writeln!(text, "kkt_residual    {}", g(r.kkt_residual)).unwrap();
        writeln!(text, "converged       {}", r.converged).unwrap();
    }
    if !r.converged {
        writeln!(
            text,
            "warning         iteration limit reached; best iterate shown"
        )
        .unwrap();
    }

    let mut doc = json!({
        "mu_hat": r.mu_hat,
        "groups": groups,
        "path": r.path,
        "log_likelihood": r.log_likelihood,
        "converged": r.converged,
    });
    if a.diagnostics {
        let d = doc.as_object_mut().unwrap();
        d.insert("mu_hat_ranked".into(), json!(r.mu_hat_ranked));
        d.insert("iterations".into(), json!(r.iterations));
        d.insert("kkt_residual".into(), json!(r.kkt_residual));
        let perm: Vec<usize> = r.permutation.iter().map(|l| l + 1).collect();
        d.insert("rank_labels".into(), json!(perm));
    }
    Ok(Report {
        json: doc,
        text,
        code: if r.converged { 0 } else { EXIT_OPTIMIZER },
    })
}

fn read_config<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, Failure> {
    let src = std::fs::read_to_string(path).map_err(|e| Failure {
        code: EXIT_IO,
        message: format!("cannot read {}: {e}", path.display()),
    })?;
    serde_json::from_str(&src)
        .map_err(|e| Failure::usage(format!("config {}: {e}", path.display())))
}

#[derive(Deserialize)]
#[serde(untagged)]
enum MseConfigFile {
    One(MseConfig),
    Many(Vec<MseConfig>),
}

fn mse_configs(a: &MseArgs) -> Result<Vec<MseConfig>, Failure> {
    if let Some(path) = &a.config {
        // Untagged decoding hides the offending field, so retry the single
        // form for a precise message.
        return match read_config::<MseConfigFile>(path) {
            Ok(MseConfigFile::One(c)) => Ok(vec![c]),
            Ok(MseConfigFile::Many(v)) => Ok(v),
            Err(e) => match read_config::<MseConfig>(path) {
                Err(single) if e.code == EXIT_USAGE => Err(single),
                _ => Err(e),
            },
        };
    }
    let means = match a.grid {
        Some(Grid::P2) => p2_grid(a.step)?,
        Some(Grid::P3) => p3_grid(a.mu3, a.step)?,
        None if a.mu.is_empty() => {
            return Err(Failure::usage(
                "one of --mu, --grid or --config is required",
            ))
        }
        None => vec![a.mu.clone()],
    };
    Ok(means
        .into_iter()
        .map(|mu_true| {
            let ranks = if a.ranks.is_empty() {
                (1..=mu_true.len()).collect()
            } else {
                a.ranks.clone()
            };
            MseConfig {
                mu_true,
                sigma: a.sigma,
                n_reps: a.reps,
                seed: a.seed,
                ranks,
            }
        })
        .collect())
}

pub fn simulate_mse(a: &MseArgs) -> Outcome {
    let configs = mse_configs(a)?;
    for c in &configs {
        c.validate()?;
    }
    let spec = a.quadrature.spec();
    let opt = a.optimizer.settings();
    spec.validate()?;
    opt.validate()?;
    let summary = run_mse_grid(&configs, &spec, &opt)?;
    export_results(&summary.to_table(), a.output.format.into(), &a.output.out)?;

    let out = a.output.out.display().to_string();
    let text = format!(
        "wrote {} rows for {} configurations to {out} (failures {}, non-converged {})\n",
        summary.rows.len(),
        configs.len(),
        summary.failures,
        summary.non_converged
    );
    Ok(Report {
        json: json!({
            "out": out,
            "configurations": configs.len(),
            "rows": summary.rows.len(),
            "failures": summary.failures,
            "non_converged": summary.non_converged,
        }),
        text,
        code: if summary.failures > 0 {
            EXIT_REPLICATE
        } else {
            0
        },
    })
}

pub fn bootstrap_ci(a: &BootstrapArgs) -> Outcome {
    let cfg = match &a.config {
        Some(path) => read_config::<BootstrapConfig>(path)?,
        None => BootstrapConfig {
            mu_true: a.mu.clone(),
            n_per_group: a.n_per_group,
            obs_sd: a.obs_sd.unwrap_or_else(|| 50f64.sqrt()),
            n_boot: a.n_boot,
            level: a.level,
            seed: a.seed,
        },
    };
    cfg.validate()?;
    let spec = a.quadrature.spec();
    let opt = a.optimizer.settings();
    spec.validate()?;
    opt.validate()?;
    let set = run_bootstrap_ci(&cfg, &spec, &opt).map_err(|e| Failure {
        code: EXIT_REPLICATE,
        message: format!("bootstrap resample failed: {e}"),
    })?;
    export_results(&set.to_table(), a.output.format.into(), &a.output.out)?;

    let p = cfg.mu_true.len();
    let points: Vec<f64> = (1..=p)
        .map(|r| set.get(r, Estimator::Ccmle).expect("every rank").point)
        .collect();
    let pooled = points.windows(2).all(|w| w[0] == w[1]);

    let mut text = String::new();
    writeln!(text, "group means  {}", join(&set.group_means)).unwrap();
    writeln!(text, "rank  estimator  point         lower         upper").unwrap();
    for i in &set.intervals {
        writeln!(
            text,
            "{:<5} {:<10} {:<13} {:<13} {}",
            i.rank,
            i.estimator.to_string(),
            g(i.point),
            g(i.lower),
            g(i.upper)
        )
        .unwrap();
    }
    if pooled {
        writeln!(text, "ccmle point estimates are all equal (pooled)").unwrap();
    }
    writeln!(
        text,
        "wrote {} ({} resamples, level {}, failures {})",
        a.output.out.display(),
        set.n_boot,
        g(set.level),
        set.failures
    )
    .unwrap();
    Ok(Report {
        json: json!({
            "out": a.output.out.display().to_string(),
            "pooled": pooled,
            "result": set,
        }),
        text,
        code: 0,
    })
}
