use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Parser, Subcommand, ValueEnum};

use angioforge_cli::{format_report, inspect, run, validate, BatchConfig, CliError, EXIT_INPUT, EXIT_OTHER};
use angioforge_core::backend::BackendConfig;
use angioforge_core::flowviz::SplitRule;
use angioforge_core::phantom::{fontan_phantom, PhantomOptions};
use angioforge_core::pipeline::ops::FlowSettings;
use angioforge_core::pipeline::MeshFault;
use angioforge_core::raster::Raster;

#[derive(Debug, Parser)]
#[command(name = "angioforge", version, about = "Angiogram refinement pipeline tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Backend {
    Local,
    Mock,
    Remote,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Split {
    Area,
    Murray,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Fault {
    DropTriangle,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run all 16 steps on one angiogram and write the final artifacts.
    Run {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, value_enum, default_value_t = Backend::Local)]
        backend: Backend,
        /// Image-edit endpoint for the remote backend.
        #[arg(long)]
        endpoint: Option<String>,
        /// Name of the environment variable holding the API key.
        #[arg(long, default_value = "ANGIOFORGE_API_KEY")]
        credential_env: String,
        /// Millimeters per pixel.
        #[arg(long, default_value_t = 0.25)]
        pixel_pitch: f64,
        #[arg(long, default_value_t = 16)]
        n_sides: usize,
        /// Inlet position as X,Y pixels; repeatable.
        #[arg(long, value_parser = parse_point)]
        inlet: Vec<[f64; 2]>,
        /// Outlet position as X,Y pixels; repeatable.
        #[arg(long, value_parser = parse_point)]
        outlet: Vec<[f64; 2]>,
        #[arg(long, value_enum, default_value_t = Split::Area)]
        split_rule: Split,
        #[arg(long, action = ArgAction::Set, default_value_t = true)]
        auto_accept: bool,
        #[arg(long, value_enum, hide = true)]
        inject_fault: Option<Fault>,
    },
    /// Print the step history of a session manifest.
    Inspect { manifest: PathBuf },
    /// Check an STL file: exit 0 if watertight, manifold and oriented, 1 if
    /// not, 2 if unreadable.
    Validate {
        stl: PathBuf,
        /// Print the report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Write a synthetic Fontan phantom angiogram.
    Phantom {
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 512)]
        size: u32,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 10.0)]
        noise: f64,
        /// Leave out the distractor blobs.
        #[arg(long)]
        no_blobs: bool,
    },
}

fn parse_point(s: &str) -> Result<[f64; 2], String> {
    let (x, y) = s.split_once(',').ok_or("expected X,Y")?;
    let p = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}"));
    Ok([p(x)?, p(y)?])
}

fn fail(e: CliError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.code)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_INPUT } else { 0 });
        }
    };
    match cli.command {
        Command::Run {
            input,
            output,
            backend,
            endpoint,
            credential_env,
            pixel_pitch,
            n_sides,
            inlet,
            outlet,
            split_rule,
            auto_accept,
            inject_fault,
        } => {
            let backend = match backend {
                Backend::Local => BackendConfig::local(),
                Backend::Mock => BackendConfig::mock(),
                Backend::Remote => BackendConfig {
                    credential_source: Some(credential_env),
                    ..BackendConfig::remote(endpoint.unwrap_or_default())
                },
            };
            let cfg = BatchConfig {
                backend,
                auto_accept,
                pixel_pitch,
                n_sides,
                flow: FlowSettings {
                    inlets: inlet,
                    outlets: outlet,
                    split_rule: match split_rule {
                        Split::Area => SplitRule::Area,
                        Split::Murray => SplitRule::Murray,
                    },
                },
                mesh_fault: inject_fault.map(|Fault::DropTriangle| MeshFault::DropTriangle),
                ..BatchConfig::new(input, output)
            };
            match run(&cfg) {
                Ok(summary) => {
                    log::info!(
                        "session {} {:?} in {:.1} s",
                        summary.session_id,
                        summary.status,
                        summary.elapsed.as_secs_f64()
                    );
                    for p in &summary.written {
                        log::info!("wrote {}", p.display());
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            }
        }
        Command::Inspect { manifest } => match inspect(&manifest) {
            Ok(table) => {
                print!("{table}");
                ExitCode::SUCCESS
            }
            Err(e) => fail(e),
        },
        Command::Validate { stl, json } => match validate(&stl) {
            Ok((report, code)) => {
                if json {
                    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
                } else {
                    print!("{}", format_report(&report));
                }
                ExitCode::from(code)
            }
            Err(e) => fail(e),
        },
        Command::Phantom {
            output,
            size,
            seed,
            noise,
            no_blobs,
        } => {
            if size < 64 {
                return fail(CliError {
                    code: EXIT_INPUT,
                    message: "phantom size must be at least 64".into(),
                });
            }
            let ph = fontan_phantom(&PhantomOptions {
                size,
                seed,
                noise_amplitude: noise,
                blobs: !no_blobs,
                ..PhantomOptions::default()
            });
            let written = Raster::Gray(ph.image)
                .encode_png()
                .map_err(|e| e.to_string())
                .and_then(|png| std::fs::write(&output, png).map_err(|e| e.to_string()));
            match written {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => fail(CliError {
                    code: EXIT_OTHER,
                    message: format!("{}: {e}", output.display()),
                }),
            }
        }
    }
}
