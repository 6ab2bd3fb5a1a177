use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use homi_cli::*;
use homi_core::bench::TestId;
use homi_core::config::{Profile, RunConfig, TaskKind};
use homi_core::optimizers::Condition;
use homi_core::users::{Corpus, SphereUser, TypistPopulation};
use homi_service::{AppState, Persistence};

#[derive(Parser)]
#[command(name = "homi", version, about = "Meta-learned Bayesian optimization for adaptive designs")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; profile defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    profile: Option<ProfileArg>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides the config file and HOMI_OUT).
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Print machine-readable JSON on stdout.
    #[arg(long, global = true)]
    json: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileArg {
    Full,
    Ci,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Sphere,
    Typing,
}

impl From<TaskArg> for TaskKind {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Sphere => TaskKind::Sphere,
            TaskArg::Typing => TaskKind::Typing,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train both actor variants and the novelty detector.
    Train {
        #[arg(long, value_enum)]
        task: Option<TaskArg>,
        #[arg(long)]
        total_steps: Option<usize>,
        /// Novelty detector epochs.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Run a benchmark test and write regret tables.
    Bench {
        /// 1.1, 1.2, 2.1, 2.2 or custom.
        #[arg(long)]
        test: Option<String>,
        /// Comma-separated condition names.
        #[arg(long, value_delimiter = ',')]
        conditions: Option<Vec<String>>,
        #[arg(long)]
        users: Option<usize>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Host the session service.
    Serve {
        #[arg(long)]
        host: Option<String>,
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        static_dir: Option<PathBuf>,
    },
    /// Evaluate one synthetic user at one design.
    Simulate {
        #[arg(long, value_enum, default_value = "typing")]
        task: TaskArg,
        /// Design point, comma separated (key width,height in mm for typing).
        #[arg(long, value_delimiter = ',', required = true)]
        x: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0.5,0.5")]
        weights: Vec<f64>,
        /// Typist population: study, appendix-train or appendix-novel.
        #[arg(long, default_value = "study")]
        population: String,
        /// Draw a random member instead of the population mean.
        #[arg(long)]
        sample: bool,
        #[arg(long, default_value_t = 100)]
        sentences: usize,
        /// Sphere user shift, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "0,0")]
        shift: Vec<f64>,
        /// Sphere user scale.
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
    },
}

fn load_config(c: &Common) -> CliResult<RunConfig> {
    let profile = c.profile.map(|p| match p {
        ProfileArg::Full => Profile::Full,
        ProfileArg::Ci => Profile::Ci,
    });
    if let Some(p) = &c.config {
        if !p.exists() {
            return Err(CliError::config(format!("config file {} not found", p.display())));
        }
    }
    let mut cfg = RunConfig::load(c.config.as_deref(), profile)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(o) = &c.output {
        cfg.output_dir = o.clone();
    }
    Ok(cfg)
}

fn log(quiet: bool) -> impl FnMut(&str) {
    move |m: &str| {
        if !quiet {
            eprintln!("{m}");
        } else {
            tracing::info!("{m}");
        }
    }
}

fn print_json(v: &impl serde::Serialize) -> CliResult<()> {
    println!("{}", serde_json::to_string_pretty(v).map_err(|e| CliError::environment(e.to_string()))?);
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    let mut cfg = load_config(&cli.common)?;
    let json = cli.common.json;
    match cli.command {
        Command::Train { task, total_steps, epochs } => {
            if let Some(t) = task {
                cfg.task.kind = t.into();
            }
            if let Some(n) = total_steps {
                cfg.ppo.total_steps = n;
            }
            if let Some(e) = epochs {
                cfg.novelty.epochs = e;
            }
            cfg.validate()?;
            let report = train_assets(&cfg, cfg.task.kind, log(json))?;
            if json {
                print_json(&report)?;
            } else {
                for (v, first, last) in &report.returns {
                    println!("{v}: mean return {first:.3} (first quarter) -> {last:.3} (last quarter)");
                }
                println!("assets written to {}", report.dir.display());
            }
        }
        Command::Bench {
            test,
            conditions,
            users,
            workers,
        } => {
            if let Some(t) = test {
                cfg.experiment.test = TestId::parse(&t)?;
            }
            if let Some(cs) = conditions {
                cfg.experiment.conditions = Some(cs.iter().map(|c| Condition::parse(c)).collect::<Result<_, _>>()?);
            }
            if let Some(n) = users {
                cfg.experiment.n_users = n;
            }
            if let Some(w) = workers {
                cfg.experiment.workers = w;
            }
            cfg.validate()?;
            let (result, dir) = run_bench(&cfg, log(json))?;
            if json {
                print_json(&result.summary)?;
            } else {
                println!("median log10 regret, test {}", cfg.experiment.test.as_str());
                let iters = [1, 5, 10, 15, 20].into_iter().filter(|&i| i <= cfg.optimizer.budget);
                let iters: Vec<usize> = iters.collect();
                print!("{:<14}", "condition");
                for i in &iters {
                    print!("{:>8}", format!("t={i}"));
                }
                println!();
                for &c in &result.conditions {
                    print!("{:<14}", c.as_str());
                    for &i in &iters {
                        print!("{:>8.2}", result.median_at(c, i).unwrap_or(f64::NAN));
                    }
                    println!();
                }
                println!("tables written to {}", dir.display());
            }
        }
        Command::Serve { host, port, static_dir } => {
            if let Some(h) = host {
                cfg.service.host = h;
            }
            if let Some(p) = port {
                cfg.service.port = p;
            }
            if static_dir.is_some() {
                cfg.service.static_dir = static_dir;
            }
            cfg.validate()?;
            serve(cfg)?;
        }
        Command::Simulate {
            task,
            x,
            weights,
            population,
            sample,
            sentences,
            shift,
            scale,
        } => {
            let user = match task {
                TaskArg::Sphere => {
                    if shift.len() != 2 {
                        return Err(CliError::config("--shift needs two values"));
                    }
                    SimUser::Sphere(SphereUser {
                        shift: [shift[0], shift[1]],
                        scale,
                        centers: cfg.task.sphere_train.centers,
                        gamma: cfg.task.sphere_train.gamma,
                    })
                }
                TaskArg::Typing => SimUser::Typist {
                    population: TypistPopulation::named(&population)?,
                    sample,
                },
            };
            let corpus = match &cfg.task.corpus {
                Some(p) => Corpus::load(p)?,
                None => Corpus::bundled(),
            };
            let out = simulate(&user, &x, &weights, sentences, &corpus, cfg.seed)?;
            let dir = cfg.output_dir.join("simulate");
            let echo = cfg.write_echo(&dir)?;
            write_manifest(&dir, "simulate", &cfg, &[echo])?;
            if json {
                print_json(&out)?;
            } else {
                match out {
                    SimOutput::Sphere { objectives, y, .. } => println!("objectives {objectives:?}  y {y:.6}"),
                    SimOutput::Typing {
                        wpm,
                        error_rate,
                        speed,
                        accuracy,
                        y,
                        sentences,
                        ..
                    } => println!(
                        "{sentences} sentences: wpm {wpm:.2}  error rate {error_rate:.4}  speed {speed:.3}  accuracy {accuracy:.3}  y {y:.4}"
                    ),
                }
            }
        }
    }
    Ok(())
}

fn serve(cfg: RunConfig) -> CliResult<()> {
    let store = homi_service::load_assets(&cfg);
    let primary = match cfg.task.kind {
        TaskKind::Sphere => &store.sphere,
        TaskKind::Typing => &store.typing,
    };
    if primary.assets.actor_with_weights.is_none() || primary.assets.novelty.is_none() {
        return Err(CliError::asset(format!(
            "no trained {} actor and novelty model under {} (run `homi train` first)",
            cfg.task.kind.as_str(),
            cfg.assets_dir(cfg.task.kind).display()
        )));
    }
    let dir = cfg.output_dir.join("serve");
    let echo = cfg.write_echo(&dir)?;
    write_manifest(&dir, "serve", &cfg, &[echo])?;
    let sessions = cfg.service.sessions_dir.clone().unwrap_or_else(|| cfg.output_dir.join("sessions"));
    let persistence = Persistence::new(&sessions, cfg.service.snapshot_every)?;
    let app = Arc::new(AppState::new(store, Some(persistence)));
    for (id, e) in app.restore() {
        eprintln!("session {id} not restored: {}", e.message);
    }
    let addr: SocketAddr = format!("{}:{}", cfg.service.host, cfg.service.port)
        .parse()
        .map_err(|e| CliError::config(format!("bad listen address: {e}")))?;
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::environment(e.to_string()))?;
    eprintln!("serving on http://{addr} ({} sessions restored)", app.session_ids().len());
    rt.block_on(homi_service::serve(app, cfg.service.static_dir.clone(), addr))
        .map_err(|e| CliError::environment(format!("{addr}: {e}")))
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_CONFIG as u8) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
