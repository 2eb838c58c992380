//! Command-line front end for `vlkit-core`.

pub mod cli;
pub mod pipeline;
pub mod stages;

use anyhow::Result;
use serde_json::{json, Value};

use cli::{Cli, Command};
use pipeline::{Pipeline, StageSpec};

pub fn dispatch(cli: &Cli) -> Result<Value> {
    let spec = match &cli.command {
        Command::Pipeline(a) => {
            let p = Pipeline::load(&a.config)?;
            if a.dry_run {
                return Ok(json!({"order": p.order()}));
            }
            return p.run(cli.seed);
        }
        Command::Clean(a) => StageSpec::Clean(a.clone()),
        Command::LexiconCheck(a) => StageSpec::LexiconCheck(a.clone()),
        Command::Canonize(a) => StageSpec::Canonize(a.clone()),
        Command::Pairs(a) => StageSpec::Pairs(a.clone()),
        Command::Count(a) => StageSpec::Count(a.clone()),
        Command::Balance(a) => StageSpec::Balance(a.clone()),
        Command::Filter(a) => StageSpec::Filter(a.clone()),
        Command::SampleSim(a) => StageSpec::SampleSim(a.clone()),
        Command::Schedule(a) => StageSpec::Schedule(a.clone()),
        Command::Cost(a) => StageSpec::Cost(a.clone()),
        Command::Mask(a) => StageSpec::Mask(a.clone()),
        Command::Aspect(a) => StageSpec::Aspect(a.clone()),
        Command::TrainCodebook(a) => StageSpec::TrainCodebook(a.clone()),
        Command::TokenizeIds(a) => StageSpec::TokenizeIds(a.clone()),
        Command::Compress(a) => StageSpec::Compress(a.clone()),
    };
    spec.run(cli.seed)
}

/// `{"error": {...}}` body for a failed command.
pub fn error_json(e: &anyhow::Error) -> Value {
    // core errors already print their cause, so skip links the previous one repeats
    let mut parts: Vec<String> = Vec::new();
    for link in e.chain() {
        let text = link.to_string();
        if !parts.last().is_some_and(|p| p.contains(&text)) {
            parts.push(text);
        }
    }
    let mut body = json!({"message": parts.join(": ")});
    if let Some(s) = e.downcast_ref::<pipeline::StageError>() {
        body["stage"] = json!(s.stage);
    }
    if let Some(core) = e.chain().find_map(|c| c.downcast_ref::<vlkit_core::Error>()) {
        body["kind"] = json!(format!("{core:?}").split(['(', ' ', '{']).next().unwrap_or_default());
    }
    json!({ "error": body })
}
