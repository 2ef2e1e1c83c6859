//! `oscmap` command line: spectrograms, PSDs, alias reconciliation, mode
//! multiplicity and shapes, mode-energy maps, power causality, synthetic
//! scenarios and an end-to-end pipeline. Every run leaves a manifest that
//! `replay` re-executes and checks hash for hash.

pub mod commands;
pub mod output;
pub mod plot;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use oscmap_core::{Error, Result};
use serde::Serialize;
use serde_json::{json, Value};

use commands::*;
use output::{diff_artifacts, hash_file, FileHash, Manifest, Outputs, MANIFEST_NAME};

pub const DEFAULT_OUT: &str = "oscmap-out";

#[derive(Debug, Clone, Parser, Serialize)]
#[command(name = "oscmap", version, about = "Oscillation analysis for synchrophasor and point-on-wave records")]
pub struct Cli {
    /// Output directory [default: oscmap-out; for replay: <manifest dir>/replay].
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Local time offset from UTC in hours, for clock labels and day/night bands.
    #[arg(long, global = true, default_value_t = 0.0, allow_negative_numbers = true)]
    pub tz_offset: f64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Time-frequency power per channel (SVG + matrix CSV).
    Spectrogram {
        /// Channel CSV file.
        input: PathBuf,
        #[command(flatten)]
        opts: SpectrogramOpts,
    },
    /// Power spectral density per channel (Welch, Yule-Walker or periodogram).
    Psd {
        input: PathBuf,
        #[command(flatten)]
        opts: PsdOpts,
    },
    /// True-frequency candidates consistent with peaks seen at several rates.
    Alias {
        #[command(flatten)]
        opts: AliasOpts,
    },
    /// Singular-value curves, mode count and mode shape.
    Modes {
        input: PathBuf,
        #[command(flatten)]
        opts: ModesOpts,
    },
    /// Per-channel mode-energy percentage and its spatial map.
    Energy {
        input: PathBuf,
        #[command(flatten)]
        opts: EnergyOpts,
    },
    /// Band energy against active/reactive power and power factor.
    Causality {
        input: PathBuf,
        #[command(flatten)]
        opts: CausalityOpts,
    },
    /// Synthetic scenario: channel CSVs per rate plus ground truth.
    Synth {
        #[command(flatten)]
        opts: SynthOpts,
    },
    /// Synthesis, every analysis and a summary report.
    Pipeline {
        #[command(flatten)]
        opts: PipelineOpts,
    },
    /// Re-run a recorded manifest and compare every artifact hash.
    Replay {
        /// manifest.json of an earlier run.
        manifest: PathBuf,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Spectrogram { .. } => "spectrogram",
            Command::Psd { .. } => "psd",
            Command::Alias { .. } => "alias",
            Command::Modes { .. } => "modes",
            Command::Energy { .. } => "energy",
            Command::Causality { .. } => "causality",
            Command::Synth { .. } => "synth",
            Command::Pipeline { .. } => "pipeline",
            Command::Replay { .. } => "replay",
        }
    }

    fn inputs_mut(&mut self) -> Vec<&mut PathBuf> {
        match self {
            Command::Spectrogram { input, .. }
            | Command::Psd { input, .. }
            | Command::Modes { input, .. }
            | Command::Energy { input, .. }
            | Command::Causality { input, .. } => vec![input],
            Command::Synth { opts } => opts.scenario.iter_mut().collect(),
            Command::Pipeline { opts } => opts.synth.scenario.iter_mut().collect(),
            Command::Replay { manifest } => vec![manifest],
            Command::Alias { .. } => Vec::new(),
        }
    }

    pub fn inputs(&self) -> Vec<PathBuf> {
        self.clone().inputs_mut().into_iter().map(|p| p.clone()).collect()
    }
}

/// Exit status for an error: 1 bad arguments, 2 bad or missing data, 3 numerical failure.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Parameter { .. } => 1,
        Error::Numerical(_) => 3,
        _ => 2,
    }
}

/// Parses `argv` (program name first), runs the command and returns the exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    0
                }
                _ => {
                    let text = e.to_string();
                    let line = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("usage error");
                    eprintln!("oscmap: {}", line.trim_start_matches("error: "));
                    1
                }
            };
        }
    };
    let recorded: Vec<String> = argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match execute(cli, recorded) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("oscmap: {}", e.to_string().replace('\n', " "));
            exit_code(&e)
        }
    }
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Parameter { name: "workers", msg: e.to_string() })
}

/// Runs a parsed command; `argv` is what gets recorded in the manifest.
pub fn execute(cli: Cli, argv: Vec<String>) -> Result<()> {
    if let Command::Replay { manifest } = &cli.command {
        return replay(manifest, cli.out.as_deref(), cli.workers);
    }
    let workers = cli.workers.unwrap_or(0);
    let out_dir = cli.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    pool(workers)?.install(|| {
        let n_threads = rayon::current_num_threads();
        let mut out = Outputs::create(&out_dir)?;
        let inputs = cli
            .command
            .inputs()
            .iter()
            .map(|p| Ok(FileHash { path: p.to_string_lossy().into_owned(), sha256: hash_file(p)? }))
            .collect::<Result<Vec<_>>>()?;
        let (resolved, seed) = dispatch(&cli, &mut out)?;
        let manifest = Manifest {
            tool: "oscmap".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            subcommand: cli.command.name().into(),
            argv,
            cwd: std::env::current_dir()?,
            workers: n_threads,
            tz_offset_hours: cli.tz_offset,
            seed,
            params: serde_json::to_value(&cli.command)?,
            resolved,
            inputs,
            artifacts: out.artifacts().to_vec(),
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        std::fs::write(out_dir.join(MANIFEST_NAME), text)?;
        Ok(())
    })
}

fn dispatch(cli: &Cli, out: &mut Outputs) -> Result<(Value, Option<u64>)> {
    let tz = cli.tz_offset;
    Ok(match &cli.command {
        Command::Spectrogram { input, opts } => (run_spectrogram(&load(input)?, opts, tz, out)?, None),
        Command::Psd { input, opts } => {
            let (summaries, resolved) = run_psd(&load(input)?, opts, out)?;
            println!("channel,method,segments,resolution_hz,peak_hz");
            for s in summaries {
                println!("{},{},{},{},{}", s.channel, s.method, s.segments, s.resolution_hz, s.peak_hz.map_or(String::new(), |f| f.to_string()));
            }
            (resolved, None)
        }
        Command::Alias { opts } => {
            let (csv, resolved) = run_alias(opts, out)?;
            print!("{csv}");
            (resolved, None)
        }
        Command::Modes { input, opts } => {
            let resolved = run_modes(&load(input)?, opts, out)?;
            println!("modes: {}", resolved["count"]);
            if let Some(modes) = resolved["modes"].as_array() {
                for m in modes {
                    println!("  {} Hz (curve {}, sigma {})", m["freq_hz"], m["curve"], m["sigma"]);
                }
            }
            (resolved, None)
        }
        Command::Energy { input, opts } => {
            let (report, resolved) = run_energy(&load(input)?, opts, out)?;
            print!("{}", report.to_csv());
            (resolved, None)
        }
        Command::Causality { input, opts } => {
            let resolved = run_causality(&load(input)?, opts, out)?;
            if let Some(rs) = resolved["r"].as_array() {
                for r in rs {
                    println!("r(energy, {}) = {}", r["driver"].as_str().unwrap_or("?"), r["r"]);
                }
            }
            println!("gate on/off energy ratio = {}", resolved["gate_ratio"]);
            (resolved, None)
        }
        Command::Synth { opts } => {
            let sc = opts.scenario()?;
            let (set, _, resolved) = run_synth(&sc, out)?;
            println!("{} channels written to {}", set.len(), out.dir().display());
            (resolved, Some(sc.seed))
        }
        Command::Pipeline { opts } => {
            let seed = opts.synth.scenario()?.seed;
            let summary = run_pipeline(opts, tz, out)?;
            println!("f0 estimate: {} Hz; report at {}", summary["f0_estimate_hz"], out.dir().join("report.json").display());
            (json!({ "summary": summary }), Some(seed))
        }
        Command::Replay { .. } => unreachable!("handled before dispatch"),
    })
}

fn rebase(p: &mut PathBuf, base: &Path) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

/// Re-executes a manifest into `out` (default `<manifest dir>/replay`) and
/// checks every artifact hash against the recorded ones.
pub fn replay(manifest_path: &Path, out: Option<&Path>, workers: Option<usize>) -> Result<()> {
    let m = Manifest::load(manifest_path)?;
    for input in &m.inputs {
        let mut p = PathBuf::from(&input.path);
        rebase(&mut p, &m.cwd);
        if hash_file(&p)? != input.sha256 {
            return Err(Error::Data(format!("input `{}` changed since the recorded run", p.display())));
        }
    }
    let mut full = vec!["oscmap".to_string()];
    full.extend(m.argv.iter().cloned());
    let mut cli = Cli::try_parse_from(&full).map_err(|e| Error::Format {
        field: "argv".into(),
        msg: e.to_string().lines().next().unwrap_or_default().to_string(),
    })?;
    if matches!(cli.command, Command::Replay { .. }) {
        return Err(Error::Format { field: "subcommand".into(), msg: "a replay manifest cannot be replayed".into() });
    }
    for p in cli.command.inputs_mut() {
        rebase(p, &m.cwd);
    }
    let target = match out {
        Some(o) => o.to_path_buf(),
        None => manifest_path.parent().unwrap_or(Path::new(".")).join("replay"),
    };
    cli.out = Some(target.clone());
    cli.workers = Some(workers.unwrap_or(m.workers));
    execute(cli, m.argv.clone())?;
    let fresh = Manifest::load(&target.join(MANIFEST_NAME))?;
    let diff = diff_artifacts(&m.artifacts, &fresh.artifacts);
    if diff.is_empty() {
        println!("replay: {} artifacts identical", m.artifacts.len());
        Ok(())
    } else {
        Err(Error::Data(format!("replay differs in {} artifacts: {}", diff.len(), diff.join(", "))))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn exit_codes_by_class() {
        assert_eq!(exit_code(&Error::Parameter { name: "x", msg: String::new() }), 1);
        assert_eq!(exit_code(&Error::Data(String::new())), 2);
        assert_eq!(exit_code(&Error::Range(String::new())), 2);
        assert_eq!(exit_code(&Error::Numerical(String::new())), 3);
    }

    #[test]
    fn params_echo_defaults() {
        let cli = Cli::try_parse_from(["oscmap", "psd", "in.csv", "--preset", "paper-survey"]).unwrap();
        let v = serde_json::to_value(&cli.command).unwrap();
        assert_eq!(v["psd"]["opts"]["order"], 30);
        assert_eq!(v["psd"]["opts"]["welch"]["preset"], "paper-survey");
    }
}
