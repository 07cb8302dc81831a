//! The `explore` subcommand: bounded breadth-first enumeration of the
//! reachable configurations, the same search the test oracles use.

use clap::Args;
use std::path::PathBuf;

use flatfifo::explorer::{explore, reach_graph_to_json, EdgeLabel, ExploreBounds};
use flatfifo::model::Config;

use crate::check::Sem;
use crate::input::{config_to_string, load_machine, parse_config, write_output, InputError};
use crate::report::Format;

#[derive(Args, Debug)]
pub struct ExploreArgs {
    /// Machine file, text or JSON (`-` for stdin)
    pub machine: PathBuf,

    /// Start configuration (defaults to the initial one)
    #[arg(long)]
    pub config: Option<String>,

    #[arg(long, value_enum, default_value_t = Sem::Perfect)]
    pub semantics: Sem,

    /// Depth bound on the search
    #[arg(long, default_value_t = 100_000)]
    pub depth: usize,

    /// Maximum number of stored configurations
    #[arg(long, default_value_t = 50_000)]
    pub budget_configs: usize,

    /// Maximum channel length followed
    #[arg(long, default_value_t = 20)]
    pub budget_channel_len: usize,

    /// Output file (default stdout)
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

pub fn cmd_explore(args: &ExploreArgs, format: Format) -> Result<i32, InputError> {
    let m = load_machine(&args.machine)?;
    let start = match &args.config {
        Some(text) => parse_config(&m, text)?,
        None => Config::initial(&m),
    };
    let bounds = ExploreBounds {
        max_configs: args.budget_configs,
        max_channel_len: args.budget_channel_len,
        max_depth: args.depth,
    };
    let g = explore(&m, &start, args.semantics.to_model(), &bounds);
    log::info!("explored {} configurations, {} edges", g.len(), g.edges().len());

    let rendered = match format {
        Format::Json => reach_graph_to_json(&m, &g),
        Format::Text => {
            let mut lines = Vec::new();
            lines.push(format!("configs {}", g.len()));
            lines.push(format!("edges {}", g.edges().len()));
            lines.push(format!("truncated {}", g.truncated));
            for (i, cfg) in g.configs().iter().enumerate() {
                lines.push(format!("config {i} {}", config_to_string(&m, cfg)));
            }
            for &(src, label, dst) in g.edges() {
                let what = match label {
                    EdgeLabel::Trans(t) => m.trans(t).name.clone(),
                    EdgeLabel::Lose(c, idx) => {
                        format!("lose {}[{idx}]", m.channel_name(c))
                    }
                };
                lines.push(format!("edge {src} -> {dst} {what}"));
            }
            lines.join("\n") + "\n"
        }
    };
    write_output(args.out.as_ref(), &rendered)?;
    Ok(0)
}
