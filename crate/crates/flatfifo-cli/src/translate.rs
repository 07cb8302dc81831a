//! The `translate` subcommand: compile a flat machine into its counting
//! abstraction, per-channel order machines and their synchronized
//! product, optionally with silent edges eliminated or the product
//! flattened.

use clap::Args;
use std::path::PathBuf;

use flatfifo::counters::{
    build_modified_sync, build_sync, export_counter_system, render_sync_reachable, sync_initial,
    trace_flatten, CounterError, CounterExport, DEFAULT_FLATTEN_BUDGET,
};

use crate::input::{input_error, load_machine, write_output, InputError};
use crate::report::{Format, EXIT_INCONCLUSIVE};

#[derive(Args, Debug)]
pub struct TranslateArgs {
    /// Machine file, text or JSON (`-` for stdin)
    pub machine: PathBuf,

    /// Eliminate silent edges (the modified product)
    #[arg(long)]
    pub modified: bool,

    /// Flatten the product and emit the flattening instead
    #[arg(long)]
    pub flatten: bool,

    /// State budget for the flattening walk
    #[arg(long, default_value_t = DEFAULT_FLATTEN_BUDGET)]
    pub budget_flatten: usize,

    /// Render the reachable region of the product with counters capped
    /// at CAP instead of the system itself (text output only)
    #[arg(long, value_name = "CAP")]
    pub region: Option<u64>,

    /// Output file (default stdout)
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

pub fn cmd_translate(args: &TranslateArgs, format: Format) -> Result<i32, InputError> {
    let m = load_machine(&args.machine)?;
    let sys = if args.modified { build_modified_sync(&m) } else { build_sync(&m) }
        .map_err(|e| InputError(e.to_string()))?;

    if let Some(cap) = args.region {
        if format == Format::Json {
            return input_error("--region has no JSON form; use --format text");
        }
        if args.flatten {
            return input_error("--region and --flatten are mutually exclusive");
        }
        write_output(args.out.as_ref(), &render_sync_reachable(&sys, cap))?;
        return Ok(0);
    }

    let style = match format {
        Format::Text => "fast",
        Format::Json => "json",
    };
    let rendered = if args.flatten {
        match trace_flatten(&sys, &sync_initial(&sys), args.budget_flatten) {
            Ok(map) => export_counter_system(CounterExport::Flattening(&sys, &map), style)
                .map_err(|e| InputError(e.to_string()))?,
            Err(CounterError::BudgetExceeded { size }) => {
                eprintln!("flattening budget exceeded after {size} states; raise --budget-flatten");
                return Ok(EXIT_INCONCLUSIVE);
            }
            Err(e) => return Err(InputError(e.to_string())),
        }
    } else {
        export_counter_system(CounterExport::Sync(&sys), style)
            .map_err(|e| InputError(e.to_string()))?
    };
    write_output(args.out.as_ref(), &rendered)?;
    Ok(0)
}
