use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use reuse_scope::oracle::DEFAULT_UNROLL_CAP;
use reuse_scope_cli::{
    cmd_cfg, cmd_compare, cmd_counts, cmd_memtrace, cmd_oracle, cmd_reuse, cmd_template, cmd_trace, emit, CliError,
    Format, InputKind, OracleOptions, OracleSource, RunConfig,
};

#[derive(Parser)]
#[command(name = "reuse-scope", version, about = "Static instruction-mix and reuse-distance analysis of LLVM IR kernels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Dump the static trace parsed from IR.
    Trace(Common),
    /// Emit the control-flow graph as DOT, or the probability template with `--format text`.
    Cfg {
        #[command(flatten)]
        common: Common,
        /// Also write the probability template here.
        #[arg(long)]
        template: Option<PathBuf>,
    },
    /// Write the branch-probability template.
    Template(Common),
    /// Solve expected block counts and scale operation tallies.
    Counts(Common),
    /// Print the loop-annotated static memory trace.
    Memtrace(Common),
    /// Predict the reuse-distance histogram from the static trace.
    Reuse(Common),
    /// Exact histogram from an unrolled or interpreted execution.
    Oracle {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = SourceArg::Trace)]
        source: SourceArg,
        /// Split the address stream into this many chunks processed in parallel.
        #[arg(long)]
        parallel: Option<usize>,
        /// Also write the dynamic address trace here.
        #[arg(long)]
        dump_trace: Option<PathBuf>,
    },
    /// Compare two reuse profiles (CSV or JSON).
    Compare {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, value_enum)]
        format: Option<FormatArg>,
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Exit with status 1 unless the histograms are identical.
        #[arg(long)]
        require_equal: bool,
    },
}

#[derive(Args)]
struct Common {
    /// IR (`.ll`), annotated trace, or dynamic trace file; `-` reads standard input.
    input: PathBuf,
    /// Function to analyze; optional when the module defines one.
    #[arg(long = "func")]
    function: Option<String>,
    /// Branch-probability config.
    #[arg(long)]
    probs: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    /// Loop overrides: `0=100,0.1=20` by nesting path, or `T_4_5=100` for `--source cfg`.
    #[arg(long)]
    bounds: Option<String>,
    /// Largest unrolled trace the oracle will generate.
    #[arg(long, default_value_t = DEFAULT_UNROLL_CAP)]
    unroll_cap: u64,
    #[arg(long, value_enum, default_value_t = KindArg::Auto)]
    input_kind: KindArg,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Text,
    Csv,
    Json,
    Dot,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Auto,
    Ir,
    Trace,
    Dynamic,
}

#[derive(Clone, Copy, ValueEnum)]
enum SourceArg {
    Trace,
    Cfg,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Text => Format::Text,
            FormatArg::Csv => Format::Csv,
            FormatArg::Json => Format::Json,
            FormatArg::Dot => Format::Dot,
        }
    }
}

impl From<Common> for RunConfig {
    fn from(c: Common) -> Self {
        RunConfig {
            input: c.input,
            function: c.function,
            probs: c.probs,
            format: c.format.map(Format::from),
            bounds: c.bounds,
            unroll_cap: c.unroll_cap,
            output: c.output,
            input_kind: match c.input_kind {
                KindArg::Auto => InputKind::Auto,
                KindArg::Ir => InputKind::Ir,
                KindArg::Trace => InputKind::Trace,
                KindArg::Dynamic => InputKind::Dynamic,
            },
        }
    }
}

fn run(command: Command) -> Result<ExitCode, CliError> {
    let (rc, text) = match command {
        Command::Trace(c) => {
            let rc = RunConfig::from(c);
            let text = cmd_trace(&rc)?;
            (rc, text)
        }
        Command::Cfg { common, template } => {
            let rc = RunConfig::from(common);
            let text = cmd_cfg(&rc, template.as_deref())?;
            (rc, text)
        }
        Command::Template(c) => {
            let rc = RunConfig::from(c);
            let text = cmd_template(&rc)?;
            (rc, text)
        }
        Command::Counts(c) => {
            let rc = RunConfig::from(c);
            let text = cmd_counts(&rc)?;
            (rc, text)
        }
        Command::Memtrace(c) => {
            let rc = RunConfig::from(c);
            let text = cmd_memtrace(&rc)?;
            (rc, text)
        }
        Command::Reuse(c) => {
            let rc = RunConfig::from(c);
            let text = cmd_reuse(&rc)?;
            (rc, text)
        }
        Command::Oracle {
            common,
            source,
            parallel,
            dump_trace,
        } => {
            let rc = RunConfig::from(common);
            let opts = OracleOptions {
                source: match source {
                    SourceArg::Trace => OracleSource::Trace,
                    SourceArg::Cfg => OracleSource::Cfg,
                },
                parallel,
                dump: dump_trace,
            };
            let text = cmd_oracle(&rc, &opts)?;
            (rc, text)
        }
        Command::Compare {
            a,
            b,
            format,
            output,
            require_equal,
        } => {
            let (text, cmp) = cmd_compare(&a, &b, format.map(Format::from))?;
            let mut rc = RunConfig::new(a);
            rc.output = output;
            emit(&rc, &text)?;
            return Ok(if require_equal && !cmp.counts_equal {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            });
        }
    };
    emit(&rc, &text)?;
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("REUSE_SCOPE_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("reuse-scope: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
