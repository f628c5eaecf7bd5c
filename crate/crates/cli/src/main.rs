//! `frdsyn`: synthesis, certification, grid construction and evaluation of
//! fixed-structure H∞ controllers.
//!
//! Exit codes:
//! - 0: success (for `synth` and `certify`, the certificate passed)
//! - 1: certification failed
//! - 2: controller not stabilizing (ill-posed loop, barrier or Nyquist violation)
//! - 3: grid node budget or refinement rounds exhausted
//! - 4: invalid input (usage, config, data files, controller files, I/O)
//! - 5: numerical failure inside the solver or objective

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use frdsyn::bundle::write_trace_csv;
use frdsyn::controller::{export_controller, fmt17, import_controller};
use frdsyn::grid::parse_certificate_nodes;
use frdsyn::pipeline::{magnitudes_csv, Certification, PipelineError, Problem};

#[derive(Parser)]
#[command(name = "frdsyn", version, about = "Fixed-structure H∞ synthesis from frequency-response data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (`key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads for per-frequency work (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Overrides the grid tolerance ϑ.
    #[arg(long, global = true)]
    theta: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize from `controller.x0`, refine until certified.
    Synth,
    /// Certify a controller file.
    Certify {
        #[arg(long)]
        controller: PathBuf,
        /// Certificate CSV whose nodes define the grid; built at the controller otherwise.
        #[arg(long)]
        grid: Option<PathBuf>,
    },
    /// Build the optimization grid at `controller.x0`.
    Grid,
    /// Evaluate a controller (default `controller.x0`) and write closed-loop magnitudes.
    Eval {
        #[arg(long)]
        controller: Option<PathBuf>,
        #[arg(long)]
        grid: Option<PathBuf>,
    },
}

enum Failure {
    Certification,
    NonStabilizing(String),
    Budget(String),
    Input(String),
    Numerical(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Self::Certification => 1,
            Self::NonStabilizing(_) => 2,
            Self::Budget(_) => 3,
            Self::Input(_) => 4,
            Self::Numerical(_) => 5,
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        let msg = e.to_string();
        match e {
            PipelineError::NonStabilizing(_) => Self::NonStabilizing(msg),
            PipelineError::Budget(_) => Self::Budget(msg),
            PipelineError::Objective(_) | PipelineError::Bundle(_) => Self::Numerical(msg),
            PipelineError::Config(_) | PipelineError::Plant(_) | PipelineError::Controller(_) | PipelineError::Grid(_) => Self::Input(msg),
        }
    }
}

fn input<E: std::fmt::Display>(context: &Path) -> impl Fn(E) -> Failure + '_ {
    move |e| Failure::Input(format!("{}: {e}", context.display()))
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<(), Failure> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(input(&path))
}

fn load_controller(problem: &Problem, path: &Path) -> Result<Vec<f64>, Failure> {
    let text = fs::read_to_string(path).map_err(input(path))?;
    let (structure, x) = import_controller(&text).map_err(input(path))?;
    if structure != problem.structure() {
        return Err(Failure::Input(format!(
            "{}: {} controller does not match the configured {} structure",
            path.display(),
            structure.name(),
            problem.structure().name()
        )));
    }
    Ok(x)
}

fn load_grid(path: &Path) -> Result<Vec<f64>, Failure> {
    let text = fs::read_to_string(path).map_err(input(path))?;
    parse_certificate_nodes(&text).map_err(input(path))
}

fn print_certification(c: &Certification) {
    let r = &c.report;
    println!("gamma_star = {}", fmt17(c.gamma_star));
    println!("scan_max = {} at omega = {}", fmt17(r.scan_max), fmt17(r.scan_argmax));
    println!("theta = {}", fmt17(r.theta));
    println!("nodes = {}", c.certificate.grid.len());
    if r.pass {
        println!("certificate: PASS");
    } else {
        let v: Vec<String> = r.violations.iter().map(|w| fmt17(*w)).collect();
        println!("certificate: FAIL at omega = {}", v.join(" "));
    }
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let config = cli.config.as_ref().ok_or_else(|| Failure::Input("--config is required".into()))?;
    let mut overrides = Vec::new();
    if let Some(t) = cli.theta {
        overrides.push(("theta", t.to_string()));
    }
    let problem = Problem::load(config, &overrides)?;
    fs::create_dir_all(&cli.out).map_err(input(&cli.out))?;
    let out = cli.out.as_path();
    let structure = problem.structure();
    match &cli.command {
        Command::Synth => {
            let s = problem.synthesize()?;
            let controller = export_controller(&structure, &s.x).map_err(|e| Failure::Numerical(e.to_string()))?;
            write(out, "controller.txt", &controller)?;
            let mut trace = Vec::new();
            write_trace_csv(&mut trace, &s.trace).map_err(|e| Failure::Input(e.to_string()))?;
            write(out, "trace.csv", &String::from_utf8_lossy(&trace))?;
            write(out, "grid.csv", &s.certification.certificate.to_csv())?;
            write(out, "magnitude.csv", &magnitudes_csv(&problem.magnitudes(&s.x)?))?;
            let x: Vec<String> = s.x.iter().map(|v| fmt17(*v)).collect();
            println!("x = {}", x.join(" "));
            println!("f = {}", fmt17(s.f));
            println!("termination = {:?}", s.termination);
            println!("evaluations = {}", s.evaluations);
            println!("refinement_rounds = {}", s.rounds);
            print_certification(&s.certification);
            if !s.certified() {
                return Err(Failure::Budget(format!("certificate still failing after {} refinement rounds", s.rounds)));
            }
        }
        Command::Certify { controller, grid } => {
            let x = load_controller(&problem, controller)?;
            problem.check_stabilizing(&x)?;
            let nodes = match grid {
                Some(g) => load_grid(g)?,
                None => problem.make_grid(&x)?.grid,
            };
            let c = problem.certify(&x, &nodes)?;
            write(out, "certificate.csv", &c.certificate.to_csv())?;
            print_certification(&c);
            if !c.report.pass {
                return Err(Failure::Certification);
            }
        }
        Command::Grid => {
            let x0 = &problem.config.x0;
            problem.check_stabilizing(x0)?;
            let cert = problem.make_grid(x0)?;
            write(out, "grid.csv", &cert.to_csv())?;
            println!("nodes = {}", cert.grid.len());
            println!("gamma_star = {}", fmt17(cert.gamma_star));
            println!("heuristic_intervals = {}", cert.checks.iter().filter(|c| c.heuristic).count());
        }
        Command::Eval { controller, grid } => {
            let x = match controller {
                Some(p) => load_controller(&problem, p)?,
                None => problem.config.x0.clone(),
            };
            problem.check_stabilizing(&x)?;
            let nodes = match grid {
                Some(g) => load_grid(g)?,
                None => problem.make_grid(&x)?.grid,
            };
            let c = problem.certify(&x, &nodes)?;
            write(out, "magnitude.csv", &magnitudes_csv(&problem.magnitudes(&x)?))?;
            println!("f = {}", fmt17(c.gamma_star));
            println!("nodes = {}", nodes.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 4 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: --threads: {e}");
            return ExitCode::from(4);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Certification => {}
                Failure::NonStabilizing(m) | Failure::Budget(m) | Failure::Input(m) | Failure::Numerical(m) => eprintln!("error: {m}"),
            }
            ExitCode::from(f.code())
        }
    }
}
