//! `qhydro` command line: run scenario configs, run the built-in checks,
//! list the registry.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Parser, Subcommand};
use qhydro::scenario::{
    default_config_text, parse_config, parse_config_file, run_scenario, write_artifacts, ScenarioKind, ScenarioRun,
};

/// Exit code for configuration errors.
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "qhydro", version, about = "Complex quantum hydrodynamics scenario runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one or more scenario config files.
    Run {
        #[arg(required = true)]
        configs: Vec<PathBuf>,
        /// Output directory; with several configs, one subdirectory per config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Number of scenarios run concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Run the built-in checks of one scenario (default parameters) or `all`.
    Check {
        scenario: String,
        /// Keep the artifacts here instead of a temporary directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List the registered scenarios and their checks.
    List,
}

/// Parses `args` (program name first) and runs the command, writing the
/// report to `stdout` and diagnostics to `stderr`. Returns the exit code.
pub fn run_cli<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { write!(stderr, "{text}") } else { write!(stdout, "{text}") };
            return code;
        }
    };
    match cli.command {
        Command::Run { configs, out, jobs } => run_configs(&configs, out.as_deref(), jobs, stdout, stderr),
        Command::Check { scenario, out } => check(&scenario, out.as_deref(), stdout, stderr),
        Command::List => {
            for kind in ScenarioKind::ALL {
                let _ = writeln!(stdout, "{:<24} {}", kind.name(), kind.description());
                let _ = writeln!(stdout, "{:<24}   checks: {}", "", qhydro::scenario::check_names(kind).join(", "));
            }
            0
        }
    }
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into())
}

struct Job {
    config: PathBuf,
    dir: Option<PathBuf>,
}

fn run_configs(configs: &[PathBuf], out: Option<&Path>, jobs: usize, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32 {
    let single = configs.len() == 1;
    let work: Vec<Job> = configs
        .iter()
        .map(|c| Job { config: c.clone(), dir: out.map(|o| if single { o.to_path_buf() } else { o.join(stem(c)) }) })
        .collect();
    let reports: Vec<Mutex<Option<(i32, String, String)>>> = work.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = jobs.clamp(1, work.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= work.len() {
                    break;
                }
                let report = run_one(&work[i]);
                *reports[i].lock().unwrap() = Some(report);
            });
        }
    });
    let mut code = 0;
    for r in reports {
        let (c, out_text, err_text) = r.into_inner().unwrap().expect("every job reports");
        let _ = write!(stdout, "{out_text}");
        let _ = write!(stderr, "{err_text}");
        code = code.max(c);
    }
    code
}

/// Runs one config; returns the exit code and the stdout and stderr text.
fn run_one(job: &Job) -> (i32, String, String) {
    let label = job.config.display().to_string();
    let cfg = match parse_config_file(&job.config) {
        Ok(c) => c,
        Err(errors) => {
            let mut err = String::new();
            for e in &errors.0 {
                err.push_str(&format!("{label}: {e}\n"));
            }
            return (EXIT_CONFIG, String::new(), err);
        }
    };
    let dir = job
        .dir
        .clone()
        .or_else(|| cfg.run.out.as_ref().map(|o| job.config.parent().unwrap_or(Path::new(".")).join(o)))
        .unwrap_or_else(|| Path::new("out").join(stem(&job.config)));
    let run = run_scenario(&cfg);
    report(&label, &dir, run)
}

fn report(label: &str, dir: &Path, mut run: ScenarioRun) -> (i32, String, String) {
    let mut out = String::new();
    let mut err = String::new();
    out.push_str(&format!("{} ({label}) -> {}\n", run.summary.scenario, dir.display()));
    if let Err(e) = write_artifacts(dir, &mut run.summary, &run.tables) {
        err.push_str(&format!("{label}: cannot write artifacts to {}: {e}\n", dir.display()));
        return (run.summary.exit_code().max(1), out, err);
    }
    for c in &run.summary.checks {
        out.push_str(&format!("  {}\n", c.line()));
    }
    if let Some(e) = &run.summary.error {
        err.push_str(&format!("{label}: solver failed: {e}\n"));
    }
    out.push_str(&format!("  status: {:?} ({:.2} s)\n", run.summary.status, run.summary.wall_time_s));
    (run.summary.exit_code(), out, err)
}

fn check(scenario: &str, out: Option<&Path>, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32 {
    let kinds: Vec<ScenarioKind> = if scenario == "all" {
        ScenarioKind::ALL.to_vec()
    } else {
        match ScenarioKind::from_name(scenario) {
            Some(k) => vec![k],
            None => {
                let _ = writeln!(stderr, "unknown scenario '{scenario}'; see `qhydro list`");
                return EXIT_CONFIG;
            }
        }
    };
    let temp;
    let root = match out {
        Some(o) => o.to_path_buf(),
        None => match tempfile::tempdir() {
            Ok(t) => {
                temp = t;
                temp.path().to_path_buf()
            }
            Err(e) => {
                let _ = writeln!(stderr, "cannot create a temporary directory: {e}");
                return 1;
            }
        },
    };
    let mut code = 0;
    for kind in kinds {
        let cfg = match parse_config(&default_config_text(kind)) {
            Ok(c) => c,
            Err(e) => {
                let _ = writeln!(stderr, "{kind}: built-in config rejected: {e}");
                code = code.max(EXIT_CONFIG);
                continue;
            }
        };
        let (c, o, e) = report(kind.name(), &root.join(kind.name()), run_scenario(&cfg));
        let _ = write!(stdout, "{o}");
        let _ = write!(stderr, "{e}");
        code = code.max(c);
    }
    code
}
