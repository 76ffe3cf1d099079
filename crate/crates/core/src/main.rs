use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use seqlearn::harness::{self, Design, FomMode, HarnessError};
use seqlearn::simkernel::{parse_signed_ps, TimePs};

#[derive(Parser)]
#[command(
    name = "seqlearn",
    version,
    about = "Behavioral simulator for two-input sequence learner circuits"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum DesignArg {
    A,
    B,
}

impl From<DesignArg> for Design {
    fn from(d: DesignArg) -> Self {
        match d {
            DesignArg::A => Design::A,
            DesignArg::B => Design::B,
        }
    }
}

fn time_arg(s: &str) -> Result<TimePs, String> {
    s.parse()
}

#[derive(Subcommand)]
enum Command {
    /// Run a JSON scenario file.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        vcd: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Print the outcome list as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Sweep the B-after-A offset over fresh Design B devices.
    Sweep {
        #[arg(long, value_enum, default_value = "b")]
        design: DesignArg,
        #[arg(long, value_parser = time_arg, default_value = "10ns")]
        start: TimePs,
        #[arg(long, value_parser = time_arg, default_value = "50ns")]
        end: TimePs,
        #[arg(long, value_parser = time_arg, default_value = "1ns")]
        step: TimePs,
        #[arg(long, value_parser = time_arg, default_value = "10ns")]
        width: TimePs,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Decode an A/B symbol stream with a trained Design A device.
    Decode {
        /// Trained offset, B minus A; may be negative.
        #[arg(long, allow_hyphen_values = true, default_value = "10ns")]
        train_offset: String,
        #[arg(long)]
        stream: String,
        #[arg(long, value_parser = time_arg, default_value = "10ns")]
        width: TimePs,
        #[arg(long, value_parser = time_arg, default_value = "10ns")]
        inter: TimePs,
        #[arg(long, value_parser = time_arg, default_value = "15ns")]
        pattern: TimePs,
    },
    /// Estimate operations per second.
    Fom {
        #[arg(long, value_enum)]
        design: DesignArg,
        #[arg(long, value_enum, default_value = "sequential")]
        mode: FomMode,
    },
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Run {
            scenario,
            vcd,
            csv,
            json,
        } => {
            let sc = harness::Scenario::load(&scenario)?;
            let report = harness::run_scenario(&sc)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report.outcomes)?);
            } else {
                for o in &report.outcomes {
                    let mut line = format!("{:>3}  {}", o.index, o.outcome);
                    if let Some(t) = o.t_out {
                        line += &format!("  t_out={t}");
                    }
                    if let Some(t) = o.tap_delay {
                        line += &format!("  tap={t}");
                    }
                    if let Some(b) = o.bias_mv {
                        line += &format!("  bias={b}mV");
                    }
                    if o.timing_violation {
                        line += "  UNSPECIFIED_REGIME";
                    }
                    println!("{line}");
                }
            }
            if let Some(p) = vcd {
                harness::export_vcd(&report.traces, &p)?;
            }
            if let Some(p) = csv {
                harness::export_csv(&report.traces, &p)?;
            }
        }
        Command::Sweep {
            design,
            start,
            end,
            step,
            width,
            csv,
        } => {
            if matches!(design, DesignArg::A) {
                return Err(HarnessError::Schema("only design b can be swept".into()));
            }
            let rows = harness::sweep_design_b(start, end, step, width)?;
            print!("{}", harness::sweep_table(&rows));
            if let Some(p) = csv {
                std::fs::write(p, harness::sweep_csv(&rows))?;
            }
        }
        Command::Decode {
            train_offset,
            stream,
            width,
            inter,
            pattern,
        } => {
            let offset = parse_signed_ps(&train_offset).map_err(HarnessError::Schema)?;
            let r = harness::decode_stream(offset, &stream, width, inter, pattern)?;
            println!("{}", r.bits);
            println!(
                "frame {}  rate {:.3} Mbit/s",
                r.frame_period,
                r.bit_rate_bps / 1e6
            );
        }
        Command::Fom { design, mode } => {
            let r = harness::estimate_fom(design.into(), mode)?;
            println!(
                "design {:?} {:?}: period {}  {:.3e} ops/s  ({})",
                r.design, r.mode, r.op_period, r.ops_per_second, r.note
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
