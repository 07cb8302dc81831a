//! Input plumbing shared by every subcommand: reading machines from text
//! or JSON files, resolving configuration literals against a machine, and
//! writing results to a file or stdout.

use std::fmt;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flatfifo::model::{
    machine_from_json, parse_machine, ChannelId, ChannelValuation, Config, FifoMachine, Word,
};

/// An error that ends the run with exit code 3.
#[derive(Debug)]
pub struct InputError(pub String);

impl fmt::Display for InputError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for InputError {}

pub fn input_error<T>(msg: impl Into<String>) -> Result<T, InputError> {
    Err(InputError(msg.into()))
}

/// Reads a whole file, with `-` standing for stdin.
pub fn read_source(path: &Path) -> Result<String, InputError> {
    if path == Path::new("-") {
        let mut buf = String::new();
        match std::io::stdin().read_to_string(&mut buf) {
            Ok(_) => Ok(buf),
            Err(e) => input_error(format!("cannot read stdin: {e}")),
        }
    } else {
        fs::read_to_string(path)
            .map_err(|e| InputError(format!("cannot read {}: {e}", path.display())))
    }
}

/// Loads a machine from a text or JSON file; the format is sniffed from
/// the first non-whitespace byte.
pub fn load_machine(path: &Path) -> Result<FifoMachine, InputError> {
    let text = read_source(path)?;
    let looks_json = text.trim_start().starts_with('{');
    let parsed =
        if looks_json { machine_from_json(&text) } else { parse_machine(&text) };
    parsed.map_err(|e| InputError(format!("{}: {e}", path.display())))
}

/// Parses a configuration literal `(state, w1, w2, ...)` with one content
/// word per channel in declaration order; trailing channels default to
/// empty, and `-` denotes an explicitly empty word. Contents are written
/// by concatenating letter names, or dot-separated when names are longer
/// than one symbol.
pub fn parse_config(m: &FifoMachine, text: &str) -> Result<Config, InputError> {
    let t = text.trim();
    let t = match t.strip_prefix('(') {
        Some(rest) => match rest.strip_suffix(')') {
            Some(inner) => inner,
            None => return input_error(format!("unbalanced parentheses in `{text}`")),
        },
        None => t,
    };
    let mut parts = t.split(',').map(str::trim);
    let state_name = match parts.next() {
        Some(s) if !s.is_empty() => s,
        _ => return input_error(format!("missing state name in `{text}`")),
    };
    let Some(state) = m.state_by_name(state_name) else {
        return input_error(format!("unknown state `{state_name}`"));
    };
    let rest: Vec<&str> = parts.collect();
    if rest.len() > m.n_channels() {
        return input_error(format!(
            "`{text}` lists {} channel contents but the machine has {} channels",
            rest.len(),
            m.n_channels()
        ));
    }
    let mut channels = ChannelValuation::empty(m.n_channels());
    for (i, spec) in rest.iter().enumerate() {
        *channels.content_mut(ChannelId(i)) = parse_word(m, ChannelId(i), spec)?;
    }
    Ok(Config { state, channels })
}

/// Resolves one content word for channel `c`. Greedy longest-match over
/// all declared letter names; since letter names are globally unique the
/// match also pins down the channel, which must be `c`.
fn parse_word(m: &FifoMachine, c: ChannelId, spec: &str) -> Result<Word, InputError> {
    let spec = spec.trim();
    if spec.is_empty() || spec == "-" {
        return Ok(Vec::new());
    }
    let mut names: Vec<(&str, flatfifo::model::LetterId)> =
        m.letters().map(|a| (m.letter_name(a), a)).collect();
    names.sort_by_key(|(n, _)| std::cmp::Reverse(n.len()));
    let mut out = Vec::new();
    for token in if spec.contains('.') {
        spec.split('.').collect::<Vec<_>>()
    } else {
        vec![spec]
    } {
        let mut rest = token;
        while !rest.is_empty() {
            let Some(&(name, a)) = names.iter().find(|(n, _)| rest.starts_with(n)) else {
                return input_error(format!("cannot read `{rest}` as letters of `{}`", m.channel_name(c)));
            };
            if m.letter_channel(a) != c {
                return input_error(format!(
                    "letter `{name}` belongs to channel `{}`, not `{}`",
                    m.channel_name(m.letter_channel(a)),
                    m.channel_name(c)
                ));
            }
            out.push(a);
            rest = &rest[name.len()..];
        }
    }
    Ok(out)
}

/// One-line rendering of a configuration, inverse of [`parse_config`]
/// for machines whose letter names are single symbols.
pub fn config_to_string(m: &FifoMachine, cfg: &Config) -> String {
    let mut parts = vec![m.state_name(cfg.state).to_string()];
    for c in m.channels() {
        let w = cfg.channels.content(c);
        parts.push(if w.is_empty() { "-".to_string() } else { m.display_word(w) });
    }
    format!("({})", parts.join(","))
}

/// JSON value for a configuration: state name plus per-channel letter
/// arrays, the same shape the corpus annotations use.
pub fn config_to_json(m: &FifoMachine, cfg: &Config) -> serde_json::Value {
    let mut channels = serde_json::Map::new();
    for c in m.channels() {
        let word: Vec<serde_json::Value> = cfg
            .channels
            .content(c)
            .iter()
            .map(|&a| serde_json::Value::String(m.letter_name(a).to_string()))
            .collect();
        channels.insert(m.channel_name(c).to_string(), serde_json::Value::Array(word));
    }
    serde_json::json!({
        "state": m.state_name(cfg.state),
        "channels": channels,
    })
}

/// Writes `content` to `out`, or to stdout when no path was given.
pub fn write_output(out: Option<&PathBuf>, content: &str) -> Result<(), InputError> {
    match out {
        None => {
            print!("{content}");
            if !content.ends_with('\n') {
                println!();
            }
            Ok(())
        }
        Some(path) => fs::write(path, content)
            .map_err(|e| InputError(format!("cannot write {}: {e}", path.display()))),
    }
}
