use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use quditqpt::tomography::RecoveryOptions;
use quditqpt_cli::commands::{self, Output};
use quditqpt_cli::config::{
    resolve_output_dir, ChannelSpec, ExperimentConfig, MeasurementSpec, ModeSpec, RecoverySpec,
    ShiftSpec, TurbulenceSpec, WeightPreset,
};
use quditqpt_cli::error::{exit, CliError, Result};

#[derive(Debug, Parser)]
#[command(
    name = "quditqpt",
    version,
    about = "Qudit process tomography experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a channel and write its Kraus and chi files.
    GenChannel {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate tomography of a channel and reconstruct its chi matrix.
    RunQpt {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// Kraus file to characterise instead of a built-in channel.
        #[arg(long)]
        channel: Option<PathBuf>,
        /// Shots per preparation and basis; omit for exact probabilities.
        #[arg(long)]
        shots: Option<u64>,
        /// Measurement sampling seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Invert a reconstructed channel on an observed output state.
    Recover {
        #[arg(long)]
        chi: PathBuf,
        #[arg(long)]
        rho: PathBuf,
        #[arg(long, default_value_t = quditqpt::tomography::DEFAULT_RECOVERY_RCOND)]
        rcond: f64,
        /// Fail instead of regularising a singular transfer matrix.
        #[arg(long)]
        strict: bool,
        /// Density file to compare the recovered state against.
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long, default_value = "recovered.json")]
        out: PathBuf,
    },
    /// Generate turbulence phase screens and their structure function.
    TurbScreens {
        #[arg(long, conflicts_with_all = ["altitude", "r0", "path_length"])]
        config: Option<PathBuf>,
        #[arg(long)]
        altitude: Option<f64>,
        #[arg(long)]
        r0: Option<f64>,
        #[arg(long)]
        path_length: Option<f64>,
        #[arg(long, default_value_t = 4)]
        count: usize,
        /// Screen seed; overrides the config.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Apply a channel file to a state.
    ApplyChannel {
        #[arg(long)]
        channel: PathBuf,
        /// `uniform`, `basis:K`, `phases:a,b,...` or a density file.
        #[arg(long, default_value = "uniform")]
        state: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Kind {
    Identity,
    As,
    Ps,
    Aps,
    Depolarizing,
    Turbulence,
}

/// Either `--config FILE` or an inline channel description.
#[derive(Debug, Args)]
struct ExperimentArgs {
    #[arg(long, conflicts_with_all = ["d", "kind"])]
    config: Option<PathBuf>,
    #[arg(short = 'd', long)]
    d: Option<usize>,
    #[arg(long, value_enum)]
    kind: Option<Kind>,
    /// Weight preset for the shift channels.
    #[arg(long, value_enum, default_value = "uniform")]
    weights: WeightPreset,
    /// Error probability (depolarizing, or the `error` weight preset).
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    altitude: Option<f64>,
    #[arg(long)]
    masks: Option<usize>,
    #[arg(long, value_enum)]
    mode: Option<ModeSpec>,
    /// Seed for the turbulence masks.
    #[arg(long)]
    mask_seed: Option<u64>,
}

impl ExperimentArgs {
    fn resolve(&self) -> Result<(ExperimentConfig, Option<PathBuf>)> {
        if let Some(path) = &self.config {
            let mut cfg = ExperimentConfig::load(path)?;
            if let ChannelSpec::Turbulence(t) = &mut cfg.channel {
                if let Some(m) = self.masks {
                    t.masks = m;
                }
                if let Some(m) = self.mode {
                    t.mode = m;
                }
                if let Some(s) = self.mask_seed {
                    t.seed = s;
                }
            }
            let out = cfg.output_dir.clone();
            return Ok((cfg, out));
        }
        let d = self
            .d
            .ok_or_else(|| CliError::Config("either --config or -d/--kind is required".into()))?;
        let kind = self.kind.unwrap_or(Kind::Identity);
        let shift = || ShiftSpec {
            weights: self.weights,
            p: self.p,
            identity_weight: None,
            pairs: None,
        };
        let channel = match kind {
            Kind::Identity => ChannelSpec::Identity,
            Kind::As => ChannelSpec::As(shift()),
            Kind::Ps => ChannelSpec::Ps(shift()),
            Kind::Aps => ChannelSpec::Aps(shift()),
            Kind::Depolarizing => ChannelSpec::Depolarizing {
                p: self
                    .p
                    .ok_or_else(|| CliError::Config("--p is required for depolarizing".into()))?,
            },
            Kind::Turbulence => {
                let h = self.altitude.ok_or_else(|| {
                    CliError::Config("--altitude is required for turbulence".into())
                })?;
                let mut t = TurbulenceSpec::new(h);
                if let Some(m) = self.masks {
                    t.masks = m;
                }
                if let Some(m) = self.mode {
                    t.mode = m;
                }
                t.seed = self.mask_seed.unwrap_or(0);
                ChannelSpec::Turbulence(t)
            }
        };
        let cfg = ExperimentConfig {
            d,
            channel,
            measurement: MeasurementSpec::default(),
            recovery: RecoverySpec::default(),
            output_dir: None,
        };
        cfg.validate()?;
        Ok((cfg, None))
    }
}

fn run(cli: Cli) -> Result<Output> {
    match cli.command {
        Command::GenChannel { exp, out } => {
            let (cfg, cfg_out) = exp.resolve()?;
            let dir = resolve_output_dir(out.as_deref(), cfg_out.as_deref());
            commands::gen_channel(&cfg, &dir)
        }
        Command::RunQpt {
            exp,
            channel,
            shots,
            seed,
            out,
        } => {
            let (mut cfg, cfg_out) = match (&channel, exp.config.is_none() && exp.kind.is_none()) {
                // A channel file alone needs only its dimension.
                (Some(path), true) => {
                    let d = quditqpt_cli::io::read_kraus(path)?.dim();
                    let cfg = ExperimentConfig {
                        d,
                        channel: ChannelSpec::Identity,
                        measurement: MeasurementSpec::default(),
                        recovery: RecoverySpec::default(),
                        output_dir: None,
                    };
                    (cfg, None)
                }
                _ => exp.resolve()?,
            };
            if shots.is_some() {
                cfg.measurement.shots = shots;
            }
            if let Some(s) = seed {
                cfg.measurement.seed = s;
            }
            cfg.validate()?;
            let dir = resolve_output_dir(out.as_deref(), cfg_out.as_deref());
            commands::run_qpt_cmd(&cfg, channel.as_deref(), &dir)
        }
        Command::Recover {
            chi,
            rho,
            rcond,
            strict,
            reference,
            out,
        } => commands::recover_cmd(
            &chi,
            &rho,
            RecoveryOptions { rcond, strict },
            reference.as_deref(),
            &out,
        ),
        Command::TurbScreens {
            config,
            altitude,
            r0,
            path_length,
            count,
            seed,
            out,
        } => {
            let (d, mut t, cfg_out) = match config {
                Some(path) => {
                    let cfg = ExperimentConfig::load(&path)?;
                    match cfg.channel {
                        ChannelSpec::Turbulence(t) => (cfg.d, t, cfg.output_dir),
                        _ => {
                            return Err(CliError::Config(format!(
                                "{}: channel kind is not turbulence",
                                path.display()
                            )))
                        }
                    }
                }
                None => {
                    let h = altitude.ok_or_else(|| {
                        CliError::Config("either --config or --altitude is required".into())
                    })?;
                    let mut t = TurbulenceSpec::new(h);
                    t.r0 = r0;
                    if let Some(l) = path_length {
                        t.path_length = l;
                    }
                    (4, t, None)
                }
            };
            if let Some(s) = seed {
                t.seed = s;
            }
            let dir = resolve_output_dir(out.as_deref(), cfg_out.as_deref());
            commands::turb_screens(&t, d, count, &dir)
        }
        Command::ApplyChannel {
            channel,
            state,
            out,
        } => {
            let dir = resolve_output_dir(out.as_deref(), None);
            commands::apply_cmd(&channel, &state, &dir)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() {
                exit::CONFIG
            } else {
                exit::OK
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(o) => {
            for w in &o.warnings {
                eprintln!("{w}");
            }
            print!("{}", o.stdout);
            ExitCode::from(exit::OK)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
