//! Batch front end: `splitvar --config experiment.json`.
//!
//! Exit codes: 0 success, 2 invalid input, 3 solver failure, 4 contract
//! violation. Failures print one JSON object on stderr.

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use serde_json::{json, Value};

use config::ExperimentConfig;

#[derive(Parser, Debug)]
#[command(name = "splitvar", version, about = "Run a splitting-type variational experiment from a JSON config")]
struct Args {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Worker threads; results are bitwise identical with 1.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Treat warnings as contract violations.
    #[arg(long)]
    strict: bool,
}

#[derive(Debug)]
pub struct Failure {
    code: u8,
    kind: &'static str,
    message: String,
    delta: Option<f64>,
    payload: Option<Value>,
}

impl Failure {
    fn new(code: u8, kind: &'static str, message: impl Into<String>) -> Self {
        Self { code, kind, message: message.into(), delta: None, payload: None }
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Self::new(2, "validation", message)
    }

    pub fn solver(message: impl Into<String>) -> Self {
        Self::new(3, "solver", message)
    }

    pub fn contract(message: impl Into<String>) -> Self {
        Self::new(4, "contract", message)
    }

    pub fn with_delta(mut self, delta: Option<f64>) -> Self {
        self.delta = delta;
        self
    }

    pub fn with_payload(mut self, payload: Value) -> Self {
        self.payload = Some(payload);
        self
    }

    fn emit(&self) -> ExitCode {
        let mut obj = json!({ "error": self.kind, "exit_code": self.code, "message": self.message });
        if let Some(d) = self.delta {
            obj["delta"] = json!(d);
        }
        eprintln!("{obj}");
        ExitCode::from(self.code)
    }
}

fn write_report(out: &Path, command: &str, payload: Value, warnings: &[String], status: &str) -> Result<(), Failure> {
    let mut report = json!({ "command": command, "status": status, "warnings": warnings });
    if let (Value::Object(dst), Value::Object(src)) = (&mut report, payload) {
        for (k, v) in src {
            dst.insert(k, v);
        }
    }
    let text = serde_json::to_string_pretty(&report).map_err(|e| Failure::validation(e.to_string()))?;
    std::fs::write(out.join("report.json"), text + "\n").map_err(|e| Failure::validation(format!("report.json: {e}")))
}

fn execute(args: &Args) -> Result<Value, Failure> {
    if args.threads == 0 {
        return Err(Failure::validation("--threads must be at least 1"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(args.threads)
        .build_global()
        .map_err(|e| Failure::validation(e.to_string()))?;

    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| Failure::validation(format!("{}: {e}", args.config.display())))?;
    let cfg = ExperimentConfig::parse(&text)?;
    let base_dir = args.config.parent().map(Path::to_path_buf).unwrap_or_default();
    let out = &cfg.output_dir;
    std::fs::create_dir_all(out).map_err(|e| Failure::validation(format!("output_dir {}: {e}", out.display())))?;

    let mut ctx = commands::Context { cfg: &cfg, base_dir: &base_dir, out, strict: args.strict, warnings: Vec::new() };
    let name = cfg.command.name();
    match commands::run(&mut ctx) {
        Ok(payload) => {
            let escalate = args.strict && !ctx.warnings.is_empty();
            let status = if escalate { "failed" } else { "ok" };
            write_report(out, name, payload.clone(), &ctx.warnings, status)?;
            if escalate {
                return Err(Failure::contract(format!("strict mode: {}", ctx.warnings.join("; "))));
            }
            Ok(payload)
        }
        Err(mut f) => {
            if let Some(p) = f.payload.take() {
                write_report(out, name, p, &ctx.warnings, "failed")?;
            }
            Err(f)
        }
    }
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => return Failure::validation(e.to_string().trim().to_string()).emit(),
    };
    match execute(&args) {
        Ok(payload) => {
            println!("{payload}");
            ExitCode::SUCCESS
        }
        Err(f) => f.emit(),
    }
}
