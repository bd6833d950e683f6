//! `diffcomp`: run comparison scenarios, suites, probes and the acceptance
//! battery from the command line.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use diffcomp::acceptance::Battery;
use diffcomp::convex::{mollify, ScalarFunction};
use diffcomp::harness::{self, CounterexampleKind, Overrides, Verdict};
use diffcomp::pde;
use diffcomp::sde::{self, ErrorLadder, ProbeModel};
use diffcomp::par;
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Parser)]
#[command(name = "diffcomp", version, about = "Comparison of coupled diffusions: scenarios, suites and probes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Clone, Serialize)]
struct Common {
    /// Override the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the number of Monte Carlo paths.
    #[arg(long, global = true)]
    paths: Option<usize>,
    /// Worker threads (outputs do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, env = "DIFFCOMP_OUT", default_value = "out")]
    out: PathBuf,
    /// Force the finite-difference cross-check (1D and 2D scenarios).
    #[arg(long, global = true, conflicts_with = "no_pde")]
    pde: bool,
    /// Skip the finite-difference cross-check.
    #[arg(long = "no-pde", global = true)]
    no_pde: bool,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            paths: self.paths,
            pde: if self.pde { Some(true) } else if self.no_pde { Some(false) } else { None },
            threads: self.threads,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario (file path or bundled name).
    Run {
        scenario: String,
        /// Also write the raw coupled samples as little-endian binary.
        #[arg(long)]
        dump_samples: bool,
    },
    /// Run a suite of scenarios and counterexamples.
    Suite { suite: String },
    /// Euler strong and weak error ladders on closed-form models.
    ProbeSde {
        #[arg(long, value_enum, default_value = "gbm")]
        model: ProbeKind,
    },
    /// Kernel duality, derivative-transfer and Gaussian bound checks.
    CheckKernels,
    /// Tabulate a mollified payoff and its second derivative.
    MollifyDemo {
        #[arg(long, value_enum, default_value = "abs")]
        function: DemoFunction,
        #[arg(long, default_value_t = 0.1)]
        epsilon: f64,
        #[arg(long, default_value_t = 2.0)]
        radius: f64,
    },
    /// Counterexample demonstrations, by default the multivariate search.
    SearchCounterexample {
        #[arg(long, default_value = "multivariate-payoff")]
        kind: String,
        #[arg(long, default_value_t = harness::SEARCH_BUDGET)]
        budget: usize,
    },
    /// Run the ten acceptance criteria.
    Acceptance,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum ProbeKind {
    Gbm,
    Abm,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum DemoFunction {
    Abs,
    Relu,
    Quadratic,
    Softplus,
    Pwl,
}

impl DemoFunction {
    fn function(self) -> ScalarFunction {
        match self {
            DemoFunction::Abs => ScalarFunction::Abs,
            DemoFunction::Relu => ScalarFunction::Relu,
            DemoFunction::Quadratic => ScalarFunction::quadratic(),
            DemoFunction::Softplus => ScalarFunction::Softplus,
            DemoFunction::Pwl => diffcomp::acceptance::mollifier_functions().remove(2),
        }
    }
}

/// Failure modes mapped to exit codes.
enum Failure {
    /// Exit 1: a certified scenario was violated, or a check failed.
    Violation(String),
    /// Exit 2: bad input or configuration.
    Config(String),
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Config(format!("i/o: {e}"))
    }
}

impl From<harness::HarnessError> for Failure {
    fn from(e: harness::HarnessError) -> Self {
        Failure::Config(e.to_string())
    }
}

#[derive(Serialize)]
struct Versions {
    diffcomp: &'static str,
    cli: &'static str,
}

const VERSIONS: Versions = Versions { diffcomp: env!("CARGO_PKG_VERSION"), cli: env!("CARGO_PKG_VERSION") };

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    input: Option<&'a str>,
    resolved: serde_json::Value,
    seed: Option<u64>,
    versions: Versions,
    /// SHA-256 over command, input, resolved config, seed and versions.
    content_hash: String,
    threads: Option<usize>,
    created_unix: u64,
}

fn manifest<'a>(command: &'a str, input: Option<&'a str>, resolved: serde_json::Value, common: &Common) -> Manifest<'a> {
    let hashed = serde_json::json!({
        "command": command,
        "input": input,
        "resolved": resolved,
        "seed": common.seed,
        "versions": VERSIONS,
    });
    let digest = Sha256::digest(serde_json::to_vec(&hashed).expect("manifest serializes"));
    Manifest {
        command,
        input,
        resolved,
        seed: common.seed,
        versions: VERSIONS,
        content_hash: format!("{digest:x}"),
        threads: common.threads,
        created_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
    }
}

/// Write through a temporary file and rename, so readers never see a
/// partial file.
fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("partial");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

fn write_json(path: &Path, value: &impl Serialize) -> io::Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn ladder_csv(l: &ErrorLadder) -> String {
    let mut out = String::from("steps,dt,error\n");
    for ((s, dt), e) in l.steps.iter().zip(&l.dt).zip(&l.errors) {
        out.push_str(&format!("{s},{dt},{e}\n"));
    }
    out
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let c = &cli.common;
    let o = c.overrides();
    match &cli.command {
        Command::Run { scenario, dump_samples } => {
            let mut s = harness::load_scenario(scenario)?;
            s.apply(&o);
            s.validate()?;
            let dir = c.out.join(&s.name);
            write_json(&dir.join("manifest.json"), &manifest("run", Some(scenario), serde_json::to_value(&s).expect("scenario"), c))?;
            let (report, solution) = harness::run_scenario_artifacts(&s, &Overrides { threads: c.threads, ..Default::default() })?;
            write_json(&dir.join("report.json"), &report)?;
            if let Some(sol) = solution {
                write_atomic(&dir.join("value_x.csv"), pde::field_csv(&sol.fine_x.grid, &sol.fine_x.values).as_bytes())?;
                write_atomic(&dir.join("value_y.csv"), pde::field_csv(&sol.fine_y.grid, &sol.fine_y.values).as_bytes())?;
                write_atomic(&dir.join("delta_field.csv"), pde::field_csv(&sol.delta_field.grid, &sol.delta_field.values).as_bytes())?;
            }
            if *dump_samples {
                let payoff = s.effective_payoff()?;
                let run = par::with_threads(c.threads, || sde::simulate_pair(&s.model_x, &s.model_y, &payoff, &payoff, &s.plan))
                    .map_err(|e| Failure::Config(e.to_string()))?;
                let mut bytes = Vec::new();
                sde::write_sample_dump(&run.samples, &mut bytes)?;
                write_atomic(&dir.join("samples.bin"), &bytes)?;
            }
            println!(
                "{}: delta {:.6} se {:.3e} z {} -> {} {}",
                report.name,
                report.delta,
                report.se_delta,
                report.z_score.map(|z| format!("{z:.1}")).unwrap_or_else(|| "n/a".into()),
                verdict_name(report.verdict),
                report.annotations.join(" ")
            );
            if report.certified && report.verdict == Verdict::Violated {
                return Err(Failure::Violation(format!("{} violated with hypotheses certified", report.name)));
            }
        }
        Command::Suite { suite } => {
            let (spec, base) = harness::load_suite(suite)?;
            let mut resolved = Vec::new();
            for r in &spec.scenarios {
                let mut s = harness::load_scenario_near(r, base.as_deref())?;
                s.apply(&o);
                resolved.push(s);
            }
            let dir = c.out.join(&spec.name);
            let config = serde_json::json!({ "suite": spec, "scenarios": resolved });
            write_json(&dir.join("manifest.json"), &manifest("suite", Some(suite), config, c))?;
            let run = harness::run_suite_spec(&spec, base.as_deref(), &o)?;
            for r in &run.reports {
                write_json(&dir.join("reports").join(format!("{}.json", r.name)), r)?;
            }
            for out in &run.outcomes {
                write_json(&dir.join("counterexamples").join(format!("{}.json", out.kind.name())), out)?;
            }
            write_atomic(&dir.join("summary.csv"), run.summary.to_csv().as_bytes())?;
            write_json(&dir.join("summary.json"), &run.summary)?;
            print!("{}", run.summary.to_csv());
            println!(
                "{}: {} holds, {} indeterminate, {} violated ({} certified)",
                spec.name, run.summary.holds, run.summary.indeterminate, run.summary.violated, run.summary.certified_violations
            );
            if run.summary.exit_code() != 0 {
                return Err(Failure::Violation(format!("{} certified scenarios violated", run.summary.certified_violations)));
            }
        }
        Command::ProbeSde { model } => {
            let m = match model {
                ProbeKind::Gbm => ProbeModel::Gbm { x0: 1.0, mu: 0.1, sigma: 0.2 },
                ProbeKind::Abm => ProbeModel::ArithBm { x0: 1.0, mu: 0.3, sigma: 0.7 },
            };
            let seed = c.seed.unwrap_or(21);
            let paths = c.paths.unwrap_or(4000);
            let dir = c.out.join("probe-sde");
            let config = serde_json::json!({ "model": m, "paths": paths, "seed": seed });
            write_json(&dir.join("manifest.json"), &manifest("probe-sde", None, config, c))?;
            let (strong, weak) = par::with_threads(c.threads, || {
                (
                    sde::strong_error_probe(m, &[16, 32, 64, 128, 256], 1.0, paths, seed),
                    sde::weak_error_probe(m, &[1, 2, 4, 8], 1.0, paths * 250, seed + 1),
                )
            });
            write_atomic(&dir.join("strong.csv"), ladder_csv(&strong).as_bytes())?;
            write_atomic(&dir.join("weak.csv"), ladder_csv(&weak).as_bytes())?;
            write_json(&dir.join("probe.json"), &serde_json::json!({ "strong": strong, "weak": weak }))?;
            let slope = |l: &ErrorLadder| l.slope.map(|s| format!("{s:.3}")).unwrap_or_else(|| "exact".into());
            println!("strong order {} (max error {:.2e}), weak order {}", slope(&strong), strong.max_error, slope(&weak));
        }
        Command::CheckKernels => {
            let dir = c.out.join("check-kernels");
            write_json(&dir.join("manifest.json"), &manifest("check-kernels", None, serde_json::Value::Null, c))?;
            let r = par::with_threads(c.threads, || Battery::new().run(7));
            write_json(&dir.join("kernels.json"), &r)?;
            println!("{}", r.line());
            if !r.passed {
                return Err(Failure::Violation("kernel checks failed".into()));
            }
        }
        Command::MollifyDemo { function, epsilon, radius } => {
            let f = function.function();
            let m = mollify(&f, *epsilon, *radius).map_err(|e| Failure::Config(e.to_string()))?;
            let dir = c.out.join("mollify-demo");
            let config = serde_json::json!({ "function": function, "epsilon": epsilon, "radius": radius });
            write_json(&dir.join("manifest.json"), &manifest("mollify-demo", None, config, c))?;
            let reach = m.support_radius() + 1.0;
            let mut csv = String::from("z,f,mollified,second_derivative\n");
            let mut worst = 0.0_f64;
            for i in 0..=2000 {
                let z = -reach + 2.0 * reach * i as f64 / 2000.0;
                let (v, _, d2) = m.eval_with_derivatives(z);
                if z.abs() <= *radius {
                    worst = worst.max((v - f.eval(z)).abs());
                }
                csv.push_str(&format!("{z},{},{v},{d2}\n", f.eval(z)));
            }
            write_atomic(&dir.join("curve.csv"), csv.as_bytes())?;
            write_json(
                &dir.join("mollifier.json"),
                &serde_json::json!({
                    "epsilon": m.epsilon,
                    "radius": m.radius,
                    "smoothing_width": m.smoothing_width,
                    "bump_weight": m.bump_weight,
                    "core_error": m.core_error,
                    "support_radius": m.support_radius(),
                    "sampled_error": worst,
                }),
            )?;
            println!("width {:.4}, bump {:.3e}, sup error on the core {:.3e} (eps {})", m.smoothing_width, m.bump_weight, worst, epsilon);
        }
        Command::SearchCounterexample { kind, budget } => {
            let k = CounterexampleKind::parse(kind)
                .ok_or_else(|| Failure::Config(format!("unknown counterexample kind {kind:?}")))?;
            let dir = c.out.join("search-counterexample");
            let config = serde_json::json!({ "kind": k, "budget": budget });
            write_json(&dir.join("manifest.json"), &manifest("search-counterexample", None, config, c))?;
            let out = harness::run_counterexample_with(k, &o, *budget)?;
            write_json(&dir.join(format!("{}.json", k.name())), &out)?;
            println!(
                "{}: {} after {} candidates, delta {:.5} z {}",
                k.name(),
                if out.found { "found" } else { "not found" },
                out.candidates_tried,
                out.report.delta,
                out.report.z_score.map(|z| format!("{z:.1}")).unwrap_or_else(|| "n/a".into())
            );
        }
        Command::Acceptance => {
            let dir = c.out.join("acceptance");
            write_json(&dir.join("manifest.json"), &manifest("acceptance", None, serde_json::Value::Null, c))?;
            let results = par::with_threads(c.threads, || {
                let mut b = Battery::new();
                (1..=10)
                    .map(|id| {
                        let r = b.run(id);
                        println!("{}", r.line());
                        r
                    })
                    .collect::<Vec<_>>()
            });
            write_json(&dir.join("results.json"), &results)?;
            let failed = results.iter().filter(|r| !r.passed).count();
            if failed > 0 {
                return Err(Failure::Violation(format!("{failed} acceptance criteria failed")));
            }
        }
    }
    Ok(())
}

fn verdict_name(v: Verdict) -> &'static str {
    match v {
        Verdict::Holds => "holds",
        Verdict::Indeterminate => "indeterminate",
        Verdict::Violated => "violated",
    }
}

fn main() -> ExitCode {
    // Clap exits with status 2 on usage errors.
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Violation(msg)) => {
            eprintln!("diffcomp: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Config(msg)) => {
            eprintln!("diffcomp: {msg}");
            ExitCode::from(2)
        }
    }
}
