mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "yolokit", version, about = "Batch tools for a YOLOv4-style detection pipeline")]
struct Cli {
    /// Flat `key = value` run configuration.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Class registry, one name per line. Overrides the config file.
    #[arg(long, global = true, value_name = "FILE")]
    classes: Option<PathBuf>,
    /// Nine anchors as `w,h` pairs, finest scale first. Overrides the config file.
    #[arg(long, global = true, value_name = "PAIRS")]
    anchors: Option<String>,
    /// Print the effective configuration and exit.
    #[arg(long)]
    dump_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse a darknet cfg, resolve layer shapes and print a census.
    Netinfo {
        cfg: PathBuf,
        /// Override the network input size.
        #[arg(long)]
        input: Option<usize>,
        /// Emit JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Expand a dataset by clockwise rotations and flips.
    Augment {
        dataset: PathBuf,
        /// Comma-separated angles in degrees.
        #[arg(long)]
        rotations: Option<String>,
        /// Comma-separated axes: h, v.
        #[arg(long)]
        flips: Option<String>,
        /// Minimum images per class.
        #[arg(long)]
        floor: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Label format conversion and CSV aggregation.
    Labels {
        #[command(subcommand)]
        action: LabelsCommand,
    },
    /// Write the head tensors a perfect network would emit for each image's labels.
    Encode {
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode head tensors into detection lines.
    Detect(DetectArgs),
    /// Score detections against ground-truth labels.
    Eval {
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// single-class, multi-class-group or all-classes (or 1, 2, 3).
        #[arg(long)]
        scenario: Option<String>,
        /// Print an aligned table instead of JSON.
        #[arg(long)]
        table: bool,
        /// Write the report here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic scenario dataset.
    Synth {
        #[arg(long)]
        seed: Option<u64>,
        /// 1, 2, 3 or single-class, multi-class-group, all-classes.
        #[arg(long)]
        scenario: String,
        #[arg(long, default_value_t = 50)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Time post-processing of random head tensors.
    Bench {
        #[arg(long, default_value_t = 100)]
        frames: usize,
        /// Network input size; defaults to the configured one.
        #[arg(long)]
        input: Option<usize>,
    },
}

#[derive(Debug, Subcommand)]
enum LabelsCommand {
    /// Convert a directory of label files.
    Convert {
        input: PathBuf,
        #[arg(long, value_parser = ["labelimg", "yolo"])]
        from: String,
        #[arg(long, value_parser = ["labelimg", "yolo"])]
        to: String,
        /// Image size used when no matching `.ppm` is found, as WxH.
        #[arg(long)]
        size: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate a dataset's YOLO labels into one CSV.
    Csv {
        dataset: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct DetectArgs {
    /// Three head files, finest grid first.
    #[arg(long, num_args = 3, conflicts_with = "heads_dir", required_unless_present = "heads_dir")]
    heads: Option<Vec<PathBuf>>,
    /// Directory of `<stem>.s0.yf`, `<stem>.s1.yf`, `<stem>.s2.yf` triples.
    #[arg(long)]
    heads_dir: Option<PathBuf>,
    /// Output file (with --heads) or directory (with --heads-dir); standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            let io = err.chain().any(|c| c.is::<std::io::Error>());
            ExitCode::from(if io { 3 } else { 2 })
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::parse(&commands::read_text(path)?)?,
        None => RunConfig::default(),
    };
    if let Some(c) = cli.classes {
        config.classes = Some(c);
    }
    if let Some(a) = &cli.anchors {
        config.anchors = config::parse_anchors(a)?;
    }
    if cli.dump_config {
        print!("{}", config.dump());
        return Ok(ExitCode::SUCCESS);
    }
    let Some(command) = cli.command else {
        anyhow::bail!("no command given; see --help");
    };
    match command {
        Command::Netinfo { cfg, input, json } => commands::netinfo(&cfg, input, json),
        Command::Augment {
            dataset,
            rotations,
            flips,
            floor,
            out,
        } => {
            if let Some(r) = rotations {
                config.rotations = config::parse_rotations(&r)?;
            }
            if let Some(f) = flips {
                config.flips = config::parse_flips(&f)?;
            }
            if let Some(f) = floor {
                config.class_floor = f;
            }
            commands::augment(&config, &dataset, &out)
        }
        Command::Labels { action } => match action {
            LabelsCommand::Convert {
                input,
                from,
                to,
                size,
                out,
            } => commands::labels_convert(&config, &input, &from, &to, size.as_deref(), &out),
            LabelsCommand::Csv { dataset, out } => commands::labels_csv(&config, &dataset, out.as_deref()),
        },
        Command::Encode { dataset, out } => commands::encode(&config, &dataset, &out),
        Command::Detect(args) => match (args.heads, args.heads_dir) {
            (Some(files), _) => commands::detect_files(&config, &files, args.out.as_deref()),
            (None, Some(dir)) => commands::detect_dir(&config, &dir, args.out.as_deref()),
            (None, None) => unreachable!("clap requires one of --heads or --heads-dir"),
        },
        Command::Eval {
            detections,
            truth,
            scenario,
            table,
            out,
        } => commands::eval(&config, &detections, &truth, scenario.as_deref(), table, out.as_deref()),
        Command::Synth {
            seed,
            scenario,
            count,
            out,
        } => commands::synth(&config, seed.unwrap_or(config.seed), &scenario, count, &out),
        Command::Bench { frames, input } => commands::bench(&config, frames, input.unwrap_or(config.input_n)),
    }
}
