use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use splatspace_cli::offline::{self, OfflineError};
use splatspace_cli::exit;
use splatspace_cli::script::{self, ScriptOptions, Vars};
use splatspace_wire::{Server, ServerConfig};

/// Shared splat space server and tools.
#[derive(Parser)]
#[command(name = "splatspace", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the session server until SIGINT or SIGTERM.
    Serve {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `listen` from the config.
        #[arg(long)]
        listen: Option<String>,
    },
    /// Render a .ply asset from one camera to PNG.
    Render {
        #[arg(long)]
        ply: PathBuf,
        /// "px,py,pz;lx,ly,lz;fov;WxH", fov in radians.
        #[arg(long)]
        cam: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "000000")]
        bg: String,
        /// Also write the camera as JSON.
        #[arg(long)]
        sidecar: Option<PathBuf>,
    },
    /// Write the four orthogonal views and an orbit sequence as PNGs.
    Views {
        #[arg(long)]
        ply: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 36)]
        frames: u32,
        #[arg(long, default_value_t = 256)]
        resolution: u32,
    },
    /// Run a client script against a server and print the transcript.
    Script {
        #[arg(long)]
        file: PathBuf,
        #[arg(long)]
        connect: String,
        #[arg(long = "as")]
        user: String,
        #[arg(long)]
        session: String,
        /// Pre-binds a script variable; the value is parsed as JSON when
        /// possible, else taken as a string.
        #[arg(long = "var", value_name = "NAME=VALUE")]
        vars: Vec<String>,
        #[arg(long, default_value_t = 10_000)]
        timeout_ms: u64,
    },
}

/// Prints `error: <message>` on one line and returns `code`.
fn fail(code: i32, message: impl std::fmt::Display) -> ExitCode {
    let text = message.to_string();
    let one_line: Vec<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    eprintln!("error: {}", one_line.join(" "));
    ExitCode::from(code as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Serve { config, listen } => serve(&config, listen),
        Command::Render { ply, cam, out, bg, sidecar } => {
            let result = offline::parse_camera(&cam)
                .and_then(|camera| Ok((camera, offline::parse_color(&bg)?)))
                .and_then(|(camera, bg)| offline::render_cmd(&ply, &camera, bg, &out, sidecar.as_deref()));
            offline_result(result.map(|()| vec![out]))
        }
        Command::Views { ply, out, frames, resolution } => offline_result(offline::views_cmd(&ply, &out, frames, resolution)),
        Command::Script { file, connect, user, session, vars, timeout_ms } => {
            run_script(&file, connect, user, session, &vars, timeout_ms)
        }
    }
}

fn offline_result(result: Result<Vec<PathBuf>, OfflineError>) -> ExitCode {
    match result {
        Ok(paths) => {
            for p in paths {
                println!("wrote {}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => fail(e.exit_code(), e),
    }
}

fn serve(config_path: &Path, listen: Option<String>) -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut config = match ServerConfig::load(config_path) {
        Ok(c) => c,
        Err(e) => return fail(exit::USAGE, e),
    };
    if let Some(addr) = listen {
        config.listen = addr;
    }
    if let (Some(dir), Some(base)) = (&config.snapshot_dir, config_path.parent()) {
        if dir.is_relative() {
            config.snapshot_dir = Some(base.join(dir));
        }
    }
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(r) => r,
        Err(e) => return fail(exit::FAILURE, e),
    };
    let result = runtime.block_on(async {
        let server = Server::bind(config).await?;
        println!("listening on {}", server.local_addr()?);
        std::io::stdout().flush()?;
        server.run(shutdown_signal()).await
    });
    match result {
        Ok(()) => {
            log::info!("shut down");
            ExitCode::SUCCESS
        }
        Err(e) => fail(exit::FAILURE, e),
    }
}

async fn shutdown_signal() {
    #[cfg(unix)]
    {
        use tokio::signal::unix::{signal, SignalKind};
        match signal(SignalKind::terminate()) {
            Ok(mut term) => {
                tokio::select! {
                    _ = tokio::signal::ctrl_c() => {}
                    _ = term.recv() => {}
                }
            }
            Err(e) => {
                log::warn!("no SIGTERM handler: {e}");
                let _ = tokio::signal::ctrl_c().await;
            }
        }
    }
    #[cfg(not(unix))]
    {
        let _ = tokio::signal::ctrl_c().await;
    }
}

fn run_script(file: &Path, connect: String, user: String, session: String, vars: &[String], timeout_ms: u64) -> ExitCode {
    let text = match std::fs::read_to_string(file) {
        Ok(t) => t,
        Err(e) => return fail(exit::USAGE, format!("cannot read {}: {e}", file.display())),
    };
    let steps = match script::parse_script(&text) {
        Ok(s) => s,
        Err(e) => return fail(e.exit_code(), e),
    };
    let mut bound = Vars::new();
    for v in vars {
        let Some((name, value)) = v.split_once('=') else {
            return fail(exit::USAGE, format!("--var expects NAME=VALUE, got {v:?}"));
        };
        let value = serde_json::from_str(value).unwrap_or_else(|_| serde_json::Value::String(value.to_owned()));
        bound.insert(name.to_owned(), value);
    }
    let mut options = ScriptOptions::new(connect, user, session);
    options.base_dir = file.parent().map(Path::to_path_buf).unwrap_or_default();
    if options.base_dir.as_os_str().is_empty() {
        options.base_dir = PathBuf::from(".");
    }
    options.timeout = std::time::Duration::from_millis(timeout_ms);
    options.vars = bound;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match script::run_script(&steps, &options, &mut out) {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = out.flush();
            fail(e.exit_code(), e)
        }
    }
}
