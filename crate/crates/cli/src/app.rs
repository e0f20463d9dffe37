//! Subcommand implementations behind the `mdp` binary.

use std::io::{BufReader, Write};
use std::net::TcpListener;
use std::path::PathBuf;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mdp_core::scenario::streams;
use mdp_core::{
    inversion_report, run_sweep_with, score_edit, ConditionInput, Denoiser, Guidance, HookRegistry,
    Latent, ManipulationKind, PathRecord, Sampler, ScheduleKind, SeedStream, SweepAxes, SweepRow,
};

use crate::config::{ManipulationSection, RunConfig, Runtime, DEFAULT_OUTPUT_DIR, OUTPUT_DIR_ENV};
use crate::error::CliError;
use crate::report;
use crate::svg::{self, Series, PALETTE};
use crate::wire::{self, Endpoint, RemoteDenoiser};

#[derive(Debug, Parser)]
#[command(
    name = "mdp",
    version,
    about = "Diffusion sampling-path manipulation on an analytic mixture model"
)]
pub struct Cli {
    /// JSON run configuration; the bundled demo is used when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Manipulation preset replacing the config's manipulation section.
    #[arg(long, global = true)]
    pub preset: Option<String>,
    /// Dotted-path override, e.g. `manipulation.schedule.amplitude=0.7`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Output directory (beats the config and the environment).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Remote noise predictor: `tcp:HOST:PORT` or `cmd:PROGRAM ARGS...`.
    #[arg(long, global = true)]
    pub remote: Option<String>,
    #[arg(long, global = true, default_value_t = wire::DEFAULT_TIMEOUT.as_millis() as u64)]
    pub remote_timeout_ms: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample one trajectory from the seeded initial noise.
    Generate {
        /// Named condition; defaults to the config's source.
        #[arg(long)]
        condition: Option<String>,
    },
    /// DDIM-invert a clean point, plus null-text inversion when guidance is set.
    Invert {
        #[arg(long)]
        condition: Option<String>,
        /// Comma-separated clean latent; drawn from the source mixture when omitted.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x0: Option<Vec<f64>>,
    },
    /// Apply the configured manipulation and score it.
    Edit,
    /// Score a grid of manipulation settings.
    Sweep(SweepArgs),
    /// Bundled experiments.
    Demo {
        #[arg(long, value_enum)]
        scenario: DemoScenario,
    },
    /// Answer wire-protocol requests with the configured model.
    Serve {
        /// Listen on this address instead of standard streams.
        #[arg(long)]
        tcp: Option<String>,
        /// Hang up after this many predictions.
        #[arg(long, hide = true)]
        max_requests: Option<usize>,
    },
    /// Print the effective configuration in canonical form.
    Config,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DemoScenario {
    /// Endpoints of switching from source to target after k steps, k = T..0.
    PromptSwitch,
    /// The 5×5 (t_max, window length) layout grid for the configured kind.
    LayoutGrid,
    /// Round-trip error of DDIM inversion at 50, 100 and 200 steps.
    Inversion,
}

#[derive(Debug, Default, Args)]
pub struct SweepArgs {
    #[arg(long, value_delimiter = ',')]
    pub kinds: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    pub schedules: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    pub t_max: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub spans: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub weights: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub betas: Option<Vec<f64>>,
}

/// A failed run: the exit status and a one-line description.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub kind: &'static str,
    pub error: CliError,
}

impl Failure {
    fn validation(error: CliError) -> Self {
        Self {
            code: 1,
            kind: "validation",
            error,
        }
    }

    fn runtime(error: CliError) -> Self {
        Self {
            code: 2,
            kind: "runtime",
            error,
        }
    }

    /// `{"error":"validation","message":"..."}` on one line.
    pub fn line(&self) -> String {
        serde_json::json!({ "error": self.kind, "message": self.error.to_string() }).to_string()
    }
}

/// Files written by one run; removed again if the run fails.
struct Outputs {
    dir: PathBuf,
    created_dir: bool,
    written: Vec<PathBuf>,
}

impl Outputs {
    fn open(dir: PathBuf) -> Result<Self, CliError> {
        let created_dir = !dir.exists();
        std::fs::create_dir_all(&dir).map_err(CliError::io(&dir))?;
        Ok(Self {
            dir,
            created_dir,
            written: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        let path = self.dir.join(name);
        self.written.push(path.clone());
        std::fs::write(&path, contents).map_err(CliError::io(&path))
    }

    fn discard(self) {
        for p in &self.written {
            let _ = std::fs::remove_file(p);
        }
        if self.created_dir {
            let _ = std::fs::remove_dir(&self.dir);
        }
    }
}

struct Plan {
    config: RunConfig,
    runtime: Runtime,
    out_dir: PathBuf,
    endpoint: Option<Endpoint>,
    timeout: Duration,
    axes: Option<SweepAxes>,
}

fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut value = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                CliError::Validation(format!("cannot read {}: {e}", path.display()))
            })?;
            serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("config: {e}")))?
        }
        None => serde_json::to_value(RunConfig::demo()).expect("config serializes"),
    };
    if let Some(name) = &cli.preset {
        let steps = value
            .pointer("/sampler/sample_steps")
            .and_then(serde_json::Value::as_u64)
            .unwrap_or(mdp_core::schedule::DEFAULT_SAMPLE_STEPS as u64)
            as usize;
        let preset = mdp_core::manipulation_preset(name, steps)?;
        value["manipulation"] =
            serde_json::to_value(ManipulationSection::from_config(&preset)).expect("serializes");
    }
    RunConfig::from_value(value, &cli.overrides)
}

fn sweep_axes(args: &SweepArgs, rt: &Runtime) -> Result<SweepAxes, CliError> {
    let default_kind = rt
        .manipulation
        .as_ref()
        .map_or(ManipulationKind::Pni, |m| m.kind);
    let mut axes = SweepAxes::layout_grid(default_kind);
    if let Some(m) = &rt.manipulation {
        axes.schedules = vec![m.schedule.kind()];
        axes.weights = vec![m.schedule.amplitude()];
        if let Some(b) = m.beta {
            axes.betas = vec![b];
        }
    }
    if let Some(k) = &args.kinds {
        axes.kinds = k.iter().map(|s| s.parse()).collect::<Result<_, _>>()?;
    }
    if let Some(s) = &args.schedules {
        axes.schedules = s
            .iter()
            .map(|s| s.parse::<ScheduleKind>())
            .collect::<Result<_, _>>()?;
    }
    if let Some(v) = &args.t_max {
        axes.t_max = v.clone();
    }
    if let Some(v) = &args.spans {
        axes.spans = v.clone();
    }
    if let Some(v) = &args.weights {
        axes.weights = v.clone();
    }
    if let Some(v) = &args.betas {
        axes.betas = v.clone();
    }
    Ok(axes)
}

fn plan(cli: &Cli) -> Result<Plan, CliError> {
    let config = resolve_config(cli)?;
    let runtime = config.build()?;
    let out_dir = cli
        .out
        .clone()
        .or_else(|| runtime.output_dir.clone())
        .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR));
    let endpoint = cli
        .remote
        .as_deref()
        .map(str::parse::<Endpoint>)
        .transpose()
        .map_err(CliError::Validation)?;
    let axes = match &cli.command {
        Command::Edit => {
            runtime.manipulation()?;
            None
        }
        Command::Sweep(args) => Some(sweep_axes(args, &runtime)?),
        Command::Demo {
            scenario: DemoScenario::LayoutGrid,
        } => Some(sweep_axes(&SweepArgs::default(), &runtime)?),
        Command::Generate { condition } | Command::Invert { condition, .. } => {
            if let Some(name) = condition {
                runtime
                    .scenario
                    .conditions
                    .embed(ConditionInput::Preset(name))?;
            }
            None
        }
        _ => None,
    };
    if let Command::Invert { x0: Some(x0), .. } = &cli.command {
        if x0.len() != runtime.scenario.dim() {
            return Err(CliError::Validation(format!(
                "--x0 has {} entries, the model has d = {}",
                x0.len(),
                runtime.scenario.dim()
            )));
        }
    }
    Ok(Plan {
        config,
        runtime,
        out_dir,
        endpoint,
        timeout: Duration::from_millis(cli.remote_timeout_ms),
        axes,
    })
}

/// Like [`run`], starting from raw arguments (`args[0]` is the program name).
pub fn run_from<I, T>(args: I, stdout: &mut dyn Write) -> Result<(), Failure>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| {
        Failure::validation(CliError::Validation(
            e.to_string().lines().next().unwrap_or("").into(),
        ))
    })?;
    run(&cli, stdout)
}

/// Parses, validates and executes one invocation, writing a summary to `stdout`.
pub fn run(cli: &Cli, stdout: &mut dyn Write) -> Result<(), Failure> {
    let plan = plan(cli).map_err(Failure::validation)?;
    match &cli.command {
        Command::Config => {
            return stdout
                .write_all(plan.config.canonical().as_bytes())
                .map_err(|e| Failure::runtime(CliError::io("<stdout>")(e)));
        }
        Command::Serve { tcp, max_requests } => {
            return serve(&plan.runtime, tcp.as_deref(), *max_requests).map_err(Failure::runtime);
        }
        _ => {}
    }
    let say = |stdout: &mut dyn Write, line: String| {
        let _ = writeln!(stdout, "{line}");
    };
    say(
        stdout,
        format!(
            "seed={} config_sha256={}",
            plan.config.seed,
            plan.config.digest()
        ),
    );

    let mut outputs = Outputs::open(plan.out_dir.clone()).map_err(Failure::runtime)?;
    match execute(cli, &plan, &mut outputs, stdout) {
        Ok(()) => {
            for p in &outputs.written {
                say(stdout, format!("wrote {}", p.display()));
            }
            Ok(())
        }
        Err(e) => {
            outputs.discard();
            Err(Failure::runtime(e))
        }
    }
}

fn serve(rt: &Runtime, tcp: Option<&str>, max_requests: Option<usize>) -> Result<(), CliError> {
    let model = &rt.scenario.model;
    match tcp {
        Some(addr) => {
            let listener = TcpListener::bind(addr).map_err(CliError::io(addr))?;
            let local = listener.local_addr().map_err(CliError::io(addr))?;
            // Announce the bound address; useful with port 0.
            eprintln!("listening on {local}");
            wire::serve_tcp(model, listener, max_requests).map_err(CliError::io(addr))
        }
        None => {
            let stdin = std::io::stdin();
            wire::serve(
                model,
                BufReader::new(stdin.lock()),
                std::io::stdout().lock(),
                max_requests,
            )
            .map_err(CliError::io("<stdio>"))
        }
    }
}

fn connect(plan: &Plan) -> Result<Box<dyn Denoiser>, CliError> {
    let sc = &plan.runtime.scenario;
    match &plan.endpoint {
        Some(endpoint) => {
            let remote = RemoteDenoiser::connect(endpoint, plan.timeout)?;
            remote.expect_dims(sc.model.latent_dim(), sc.model.condition_dim())?;
            Ok(Box::new(remote))
        }
        None => Ok(Box::new(sc.model.clone())),
    }
}

fn path_series(label: &str, color: &'static str, path: &PathRecord) -> Series {
    Series::path(label, color, &path.latents)
}

fn execute(
    cli: &Cli,
    plan: &Plan,
    out: &mut Outputs,
    stdout: &mut dyn Write,
) -> Result<(), CliError> {
    let rt = &plan.runtime;
    let sc = &rt.scenario;
    let denoiser = connect(plan)?;
    let sampler = Sampler::new(denoiser.as_ref(), &sc.grid, &sc.schedule)?;
    let plot = rt.wants("svg") && sc.dim() == 2;
    let csv = rt.wants("csv");
    let seed = rt.seed;
    out.write("config.json", &plan.config.canonical())?;

    match &cli.command {
        Command::Generate { condition } => {
            let c = match condition {
                Some(name) => sc.conditions.embed(ConditionInput::Preset(name))?,
                None => sc.source.clone(),
            };
            let guidance = rt
                .guidance_scale
                .map(|beta| Guidance::shared(beta, sc.conditions.null_embedding()));
            let path = sampler.generate(&sc.initial_noise(seed), &c, guidance.as_ref())?;
            if csv {
                out.write("generate.csv", &report::path_csv(&path, &sc.schedule))?;
            }
            if plot {
                out.write(
                    "generate.svg",
                    &svg::scatter(
                        "generation",
                        &[path_series("x_T to x_0", PALETTE[0], &path)],
                    ),
                )?;
            }
            let _ = writeln!(stdout, "endpoint={:?}", path.endpoint().0);
        }
        Command::Invert { condition, x0 } => {
            let c = match condition {
                Some(name) => sc.conditions.embed(ConditionInput::Preset(name))?,
                None => sc.source.clone(),
            };
            let x0 = match x0 {
                Some(v) => Latent(v.clone()),
                None => {
                    let stream = SeedStream::new(seed).split(streams::INVERSION_SAMPLES);
                    sc.sample_data(&c, 1, &stream).remove(0)
                }
            };
            let inv = sampler.invert(&x0, &c)?;
            let regen = sampler.generate(inv.endpoint(), &c, None)?;
            let err = mdp_core::vector::relative_error(regen.endpoint(), &x0);
            let _ = writeln!(
                stdout,
                "x_T={:?} round_trip_error={}",
                inv.endpoint().0,
                report::num(err)
            );
            if csv {
                out.write("invert.csv", &report::path_csv(&inv, &sc.schedule))?;
            }
            let mut series = vec![
                path_series("inversion", PALETTE[0], &inv),
                path_series("regeneration", PALETTE[2], &regen),
            ];
            if let Some(beta) = rt.guidance_scale {
                let null = sc.conditions.null_embedding();
                let nt = sampler.null_text_invert(&x0, &c, beta, &null, &rt.null_text)?;
                let baseline =
                    sampler.generate(inv.endpoint(), &c, Some(&Guidance::shared(beta, null)))?;
                let _ = writeln!(
                    stdout,
                    "guided beta={} baseline_error={} null_text_error={}",
                    report::num(beta),
                    report::num(mdp_core::vector::relative_error(baseline.endpoint(), &x0)),
                    report::num(mdp_core::vector::relative_error(
                        nt.reconstruction.endpoint(),
                        &x0
                    )),
                );
                if csv {
                    out.write("null_text.csv", &report::null_text_csv(&nt))?;
                }
                series.push(path_series("guided, fixed null", PALETTE[1], &baseline));
                series.push(path_series(
                    "guided, optimized null",
                    PALETTE[3],
                    &nt.reconstruction,
                ));
            }
            if plot {
                series.push(Series::markers(
                    "x_0",
                    PALETTE[5],
                    std::slice::from_ref(&x0.0),
                ));
                out.write("invert.svg", &svg::scatter("inversion", &series))?;
            }
        }
        Command::Edit => {
            let cfg = rt.manipulation()?;
            let x_t = sc.initial_noise(seed);
            let hooks = HookRegistry::default();
            let result = sampler.run_edit(&x_t, &sc.source, &sc.target, cfg, &hooks)?;
            for w in &result.warnings {
                log::warn!("{w}");
            }
            let path_b = sampler.generate(&x_t, &sc.target, None)?;
            let metrics = score_edit(&result, &path_b, &sc.model, &sc.target)?;
            let row = SweepRow {
                kind: cfg.kind,
                schedule: cfg.schedule.kind(),
                t_max: cfg.schedule.t_max(),
                t_min: cfg.schedule.t_min(),
                weight: cfg.schedule.amplitude(),
                beta: cfg.beta,
                seed,
                metrics,
                endpoint: result.path.endpoint().clone(),
            };
            if csv {
                out.write("edit.csv", &report::metrics_csv([&row]))?;
                out.write(
                    "edit_path.csv",
                    &report::path_csv(&result.path, &sc.schedule),
                )?;
            }
            if plot {
                let series = [
                    path_series("path A", PALETTE[0], &result.path_a),
                    path_series("path B", PALETTE[1], &path_b),
                    path_series(
                        &format!("{} edit", cfg.kind.name()),
                        PALETTE[2],
                        &result.path,
                    ),
                ];
                out.write("edit.svg", &svg::scatter("edit endpoints", &series))?;
            }
            let _ = writeln!(
                stdout,
                "layout_preservation={} semantic_alignment={} ab_gap={}",
                report::num(metrics.layout_preservation),
                report::num(metrics.semantic_alignment),
                report::num(metrics.ab_gap)
            );
        }
        Command::Sweep(_)
        | Command::Demo {
            scenario: DemoScenario::LayoutGrid,
        } => {
            let axes = plan.axes.as_ref().expect("axes are planned for sweeps");
            let table = run_sweep_with(denoiser.as_ref(), sc, axes, seed)?;
            if csv {
                out.write("sweep.csv", &report::metrics_csv(&table.rows))?;
                out.write("sweep_endpoints.csv", &report::endpoints_csv(&table.rows))?;
            }
            if plot {
                let edits: Vec<&[f64]> = table.rows.iter().map(|r| &r.endpoint[..]).collect();
                let series = [
                    Series::markers("A endpoint", PALETTE[0], &[&table.endpoint_a[..]]),
                    Series::markers("B endpoint", PALETTE[1], &[&table.endpoint_b[..]]),
                    Series::markers("edited endpoints", PALETTE[2], &edits),
                ];
                out.write("sweep.svg", &svg::scatter("sweep endpoints", &series))?;
            }
            let _ = writeln!(stdout, "rows={}", table.rows.len());
        }
        Command::Demo {
            scenario: DemoScenario::PromptSwitch,
        } => {
            let x_t = sc.initial_noise(seed);
            let n = sc.grid.len();
            let endpoints = (0..=n)
                .rev()
                .map(|k| {
                    let p = sampler.prompt_switch(&x_t, &sc.source, &sc.target, k)?;
                    Ok((k, p.endpoint().clone()))
                })
                .collect::<Result<Vec<_>, CliError>>()?;
            if csv {
                out.write("prompt_switch.csv", &report::switch_csv(&endpoints))?;
            }
            if plot {
                let pts: Vec<&[f64]> = endpoints.iter().map(|(_, x)| &x[..]).collect();
                let series = [
                    Series::path("switch after k steps, k = T..0", PALETTE[2], &pts),
                    Series::markers("pure A", PALETTE[0], &pts[..1]),
                    Series::markers("pure B", PALETTE[1], &pts[pts.len() - 1..]),
                ];
                out.write("prompt_switch.svg", &svg::scatter("prompt switch", &series))?;
            }
            let _ = writeln!(stdout, "records={}", endpoints.len());
        }
        Command::Demo {
            scenario: DemoScenario::Inversion,
        } => {
            let rows = inversion_report(denoiser.as_ref(), sc, 16, &[50, 100, 200], seed)?;
            if csv {
                out.write("inversion.csv", &report::inversion_csv(&rows))?;
            }
            for r in &rows {
                let _ = writeln!(
                    stdout,
                    "T={} mean_error={}",
                    r.sample_steps,
                    report::num(r.mean_error)
                );
            }
        }
        Command::Serve { .. } | Command::Config => unreachable!("handled before execution"),
    }
    Ok(())
}
