//! TOML pipeline configs: a list of stages wired together by file paths.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use petgraph::graph::DiGraph;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::stages::*;

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(tag = "stage", rename_all = "kebab-case")]
pub enum StageSpec {
    Clean(CleanArgs),
    LexiconCheck(LexiconCheckArgs),
    Canonize(CanonizeArgs),
    Pairs(PairsArgs),
    Count(CountArgs),
    Balance(BalanceArgs),
    Filter(FilterArgs),
    SampleSim(SampleSimArgs),
    Schedule(ScheduleArgs),
    Cost(CostArgs),
    Mask(MaskArgs),
    Aspect(AspectArgs),
    TrainCodebook(TrainCodebookArgs),
    TokenizeIds(TokenizeIdsArgs),
    Compress(CompressArgs),
}

impl StageSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            StageSpec::Clean(_) => "clean",
            StageSpec::LexiconCheck(_) => "lexicon-check",
            StageSpec::Canonize(_) => "canonize",
            StageSpec::Pairs(_) => "pairs",
            StageSpec::Count(_) => "count",
            StageSpec::Balance(_) => "balance",
            StageSpec::Filter(_) => "filter",
            StageSpec::SampleSim(_) => "sample-sim",
            StageSpec::Schedule(_) => "schedule",
            StageSpec::Cost(_) => "cost",
            StageSpec::Mask(_) => "mask",
            StageSpec::Aspect(_) => "aspect",
            StageSpec::TrainCodebook(_) => "train-codebook",
            StageSpec::TokenizeIds(_) => "tokenize-ids",
            StageSpec::Compress(_) => "compress",
        }
    }

    /// Files the stage reads and writes.
    pub fn io(&self) -> (Vec<&Path>, Vec<&Path>) {
        fn opt(p: &Option<PathBuf>) -> Option<&Path> {
            p.as_deref()
        }
        let (ins, outs): (Vec<Option<&Path>>, Vec<Option<&Path>>) = match self {
            StageSpec::Clean(a) => (
                vec![Some(&a.input), opt(&a.lexicon), opt(&a.stopwords)],
                vec![Some(&a.output)],
            ),
            StageSpec::LexiconCheck(a) => (vec![opt(&a.table)], vec![]),
            StageSpec::Canonize(a) => (vec![opt(&a.map), opt(&a.input)], vec![opt(&a.output)]),
            StageSpec::Pairs(a) => (vec![Some(&a.input), opt(&a.map)], vec![Some(&a.output)]),
            StageSpec::Count(a) => (vec![Some(&a.input), opt(&a.stopwords)], vec![Some(&a.output)]),
            StageSpec::Balance(a) => (vec![Some(&a.input), opt(&a.freq)], vec![Some(&a.output)]),
            StageSpec::Filter(a) => (
                vec![Some(&a.input), opt(&a.media_emb), opt(&a.text_emb)],
                vec![Some(&a.output)],
            ),
            StageSpec::TrainCodebook(a) => (vec![Some(&a.input)], vec![Some(&a.output)]),
            StageSpec::TokenizeIds(a) => (vec![Some(&a.input), Some(&a.codebook)], vec![Some(&a.output)]),
            StageSpec::Compress(a) => (vec![Some(&a.input)], vec![Some(&a.output), opt(&a.model)]),
            StageSpec::SampleSim(_)
            | StageSpec::Schedule(_)
            | StageSpec::Cost(_)
            | StageSpec::Mask(_)
            | StageSpec::Aspect(_) => (vec![], vec![]),
        };
        fn keep(v: Vec<Option<&Path>>) -> Vec<&Path> {
            v.into_iter().flatten().filter(|p| !p.as_os_str().is_empty()).collect()
        }
        (keep(ins), keep(outs))
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if !p.as_os_str().is_empty() && p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let fix_opt = |p: &mut Option<PathBuf>| {
            if let Some(p) = p {
                fix(p)
            }
        };
        match self {
            StageSpec::Clean(a) => {
                fix(&mut a.input);
                fix(&mut a.output);
                fix_opt(&mut a.lexicon);
                fix_opt(&mut a.stopwords);
            }
            StageSpec::LexiconCheck(a) => fix_opt(&mut a.table),
            StageSpec::Canonize(a) => {
                fix_opt(&mut a.map);
                fix_opt(&mut a.input);
                fix_opt(&mut a.output);
            }
            StageSpec::Pairs(a) => {
                fix(&mut a.input);
                fix(&mut a.output);
                fix_opt(&mut a.map);
            }
            StageSpec::Count(a) => {
                fix(&mut a.input);
                fix(&mut a.output);
                fix_opt(&mut a.stopwords);
            }
            StageSpec::Balance(a) => {
                fix(&mut a.input);
                fix(&mut a.output);
                fix_opt(&mut a.freq);
            }
            StageSpec::Filter(a) => {
                fix(&mut a.input);
                fix(&mut a.output);
                fix_opt(&mut a.media_emb);
                fix_opt(&mut a.text_emb);
            }
            StageSpec::TrainCodebook(a) => {
                fix(&mut a.input);
                fix(&mut a.output);
            }
            StageSpec::TokenizeIds(a) => {
                fix(&mut a.input);
                fix(&mut a.codebook);
                fix(&mut a.output);
            }
            StageSpec::Compress(a) => {
                fix(&mut a.input);
                fix(&mut a.output);
                fix_opt(&mut a.model);
            }
            StageSpec::SampleSim(_)
            | StageSpec::Schedule(_)
            | StageSpec::Cost(_)
            | StageSpec::Mask(_)
            | StageSpec::Aspect(_) => {}
        }
    }

    /// Run with `seed` as the fallback for stages that take one.
    pub fn run(&self, seed: u64) -> Result<Value> {
        match self {
            StageSpec::Clean(a) => clean(a),
            StageSpec::LexiconCheck(a) => lexicon_check(a),
            StageSpec::Canonize(a) => canonize(a),
            StageSpec::Pairs(a) => pairs(a),
            StageSpec::Count(a) => count(a),
            StageSpec::Balance(a) => balance(a, seed),
            StageSpec::Filter(a) => filter(a),
            StageSpec::SampleSim(a) => sample_sim(a, seed),
            StageSpec::Schedule(a) => schedule(a),
            StageSpec::Cost(a) => cost(a),
            StageSpec::Mask(a) => mask(a, seed),
            StageSpec::Aspect(a) => aspect(a),
            StageSpec::TrainCodebook(a) => train_codebook(a, seed),
            StageSpec::TokenizeIds(a) => tokenize_ids(a),
            StageSpec::Compress(a) => compress(a),
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct StageEntry {
    pub name: Option<String>,
    #[serde(flatten)]
    pub spec: StageSpec,
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: Option<u64>,
    #[serde(default)]
    pub stages: Vec<StageEntry>,
}

/// A stage failure, tagged with the stage's name.
#[derive(Debug)]
pub struct StageError {
    pub stage: String,
    pub source: anyhow::Error,
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage '{}' failed: {:#}", self.stage, self.source)
    }
}

impl std::error::Error for StageError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(self.source.as_ref())
    }
}

fn stage_err(stage: &str, e: anyhow::Error) -> anyhow::Error {
    StageError {
        stage: stage.to_owned(),
        source: e,
    }
    .into()
}

#[derive(Debug)]
pub struct Pipeline {
    pub seed: Option<u64>,
    names: Vec<String>,
    stages: Vec<StageSpec>,
    order: Vec<usize>,
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

impl Pipeline {
    /// Load a config, resolve relative paths against its directory and
    /// validate the stage graph.
    pub fn load(path: &Path) -> Result<Self> {
        let cfg = PipelineConfig::load(path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::build(cfg, base)
    }

    pub fn build(cfg: PipelineConfig, base: &Path) -> Result<Self> {
        let mut names = Vec::with_capacity(cfg.stages.len());
        let mut stages = Vec::with_capacity(cfg.stages.len());
        for (i, e) in cfg.stages.into_iter().enumerate() {
            let name = e.name.unwrap_or_else(|| format!("{}#{}", e.spec.kind(), i));
            if names.contains(&name) {
                bail!("duplicate stage name '{name}'");
            }
            let mut spec = e.spec;
            spec.resolve(base);
            names.push(name);
            stages.push(spec);
        }
        let order = plan(&names, &stages)?;
        Ok(Pipeline {
            seed: cfg.seed,
            names,
            stages,
            order,
        })
    }

    /// Stage names in execution order.
    pub fn order(&self) -> Vec<&str> {
        self.order.iter().map(|&i| self.names[i].as_str()).collect()
    }

    pub fn run(&self, default_seed: u64) -> Result<Value> {
        let seed = self.seed.unwrap_or(default_seed);
        let mut done = Vec::with_capacity(self.order.len());
        for &i in &self.order {
            let name = &self.names[i];
            log::info!("running stage {name}");
            let summary = self.stages[i].run(seed).map_err(|e| stage_err(name, e))?;
            done.push(json!({"name": name, "stage": self.stages[i].kind(), "summary": summary}));
        }
        Ok(json!({"seed": seed, "stages": done}))
    }
}

/// Producer-before-consumer order; among ready stages the earliest in the
/// config goes first, so an already valid config keeps its order.
fn plan(names: &[String], stages: &[StageSpec]) -> Result<Vec<usize>> {
    let mut producer: HashMap<&Path, usize> = HashMap::new();
    for (i, s) in stages.iter().enumerate() {
        for out in s.io().1 {
            if let Some(&j) = producer.get(out) {
                bail!(
                    "output {} is written by both '{}' and '{}'",
                    out.display(),
                    names[j],
                    names[i]
                );
            }
            producer.insert(out, i);
        }
    }
    let mut g = DiGraph::<usize, ()>::new();
    let nodes: Vec<_> = (0..stages.len()).map(|i| g.add_node(i)).collect();
    let mut missing = BTreeMap::new();
    for (i, s) in stages.iter().enumerate() {
        for input in s.io().0 {
            match producer.get(input) {
                Some(&j) => {
                    g.update_edge(nodes[j], nodes[i], ());
                }
                None if !input.exists() => {
                    missing.entry(input.to_path_buf()).or_insert(i);
                }
                None => {}
            }
        }
    }
    if let Some((path, i)) = missing.into_iter().next() {
        bail!("stage '{}' needs {}, which does not exist and no stage writes it", names[i], path.display());
    }
    if let Err(cycle) = petgraph::algo::toposort(&g, None) {
        bail!("stage graph has a cycle through '{}'", names[g[cycle.node_id()]]);
    }

    let mut indeg: Vec<usize> = nodes
        .iter()
        .map(|&n| g.neighbors_directed(n, petgraph::Direction::Incoming).count())
        .collect();
    let mut ready: BinaryHeap<Reverse<usize>> = (0..stages.len()).filter(|&i| indeg[i] == 0).map(Reverse).collect();
    let mut order = Vec::with_capacity(stages.len());
    while let Some(Reverse(i)) = ready.pop() {
        order.push(i);
        for m in g.neighbors(nodes[i]) {
            let j = g[m];
            indeg[j] -= 1;
            if indeg[j] == 0 {
                ready.push(Reverse(j));
            }
        }
    }
    Ok(order)
}
