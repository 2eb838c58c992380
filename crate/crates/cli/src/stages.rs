//! One function per subcommand. Each takes its parameter struct (shared by
//! the command line and pipeline configs) and returns a JSON summary.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use vlkit_core::balance::{count_concepts, count_unigrams, BalanceParams, FrequencyTable, ResampleMode, Resampler};
use vlkit_core::caption::{clean_caption_with, passes_english_gate, Stopwords, DEFAULT_ENGLISH_THRESHOLD};
use vlkit_core::corpus::{
    create_jsonl, read_embeddings, read_pairs, read_records, write_embeddings, CuratedPair, EmbeddingMatrix, JsonRecord,
    JsonlReader, MediaRecord, Modality,
};
use vlkit_core::filter::{filter_one, FilterConfig, FilterSummary, PairEmbeddings};
use vlkit_core::lexicon::{canonicalize_hashtag, extract_concepts_from_tokens, pairs_for_record, CanonMap, ConceptLexicon};
use vlkit_core::sampler::{compute_probs, simulate_epoch, SamplerConfig, Strategy};
use vlkit_core::semantic_id::{
    encode_batch, pca_project, reconstruction_mse, rq_encode, train_codebooks, write_int8, Codebook, Int8Matrix,
    Scheme, TrainConfig,
};
use vlkit_core::token_ops::{
    aspect_fit, cost_summary, mae_mask, masked_count, patch_grid_tokens, prune_stages, KeepRatePlan,
    ResolutionSchedule, Stage, DEFAULT_RESOLUTIONS,
};

/// Records are processed in chunks of this many lines: parallel inside a
/// chunk, written in input order.
const CHUNK: usize = 2048;

fn chunked<R, T, F>(reader: JsonlReader<R, T>, mut f: F) -> Result<()>
where
    R: std::io::BufRead,
    T: JsonRecord,
    F: FnMut(Vec<T>) -> Result<()>,
{
    let mut buf = Vec::with_capacity(CHUNK);
    for r in reader {
        buf.push(r?);
        if buf.len() == CHUNK {
            f(std::mem::take(&mut buf))?;
        }
    }
    if !buf.is_empty() {
        f(buf)?;
    }
    Ok(())
}

fn need(path: &Path, what: &str) -> Result<()> {
    ensure!(!path.as_os_str().is_empty(), "missing {what} path");
    Ok(())
}

fn stopwords(path: &Option<PathBuf>) -> Result<Stopwords> {
    Ok(match path {
        Some(p) => Stopwords::load(p)?,
        None => Stopwords::english().clone(),
    })
}

fn write_json_file(path: &Path, v: &Value) -> Result<()> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, v)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------- clean

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CleanArgs {
    /// MediaRecord JSONL
    #[arg(long)]
    pub input: PathBuf,
    /// CuratedPair JSONL, one pair per caption sentence
    #[arg(long)]
    pub output: PathBuf,
    /// Concept lexicon TSV (bundled fixture if omitted)
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// Stopword list, one word per line (bundled English list if omitted)
    #[arg(long)]
    pub stopwords: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_ENGLISH_THRESHOLD)]
    pub english_threshold: f64,
}

impl Default for CleanArgs {
    fn default() -> Self {
        CleanArgs {
            input: PathBuf::new(),
            output: PathBuf::new(),
            lexicon: None,
            stopwords: None,
            english_threshold: DEFAULT_ENGLISH_THRESHOLD,
        }
    }
}

pub fn clean(a: &CleanArgs) -> Result<Value> {
    need(&a.input, "input")?;
    need(&a.output, "output")?;
    let stop = stopwords(&a.stopwords)?;
    let owned_lex;
    let lex = match &a.lexicon {
        Some(p) => {
            owned_lex = ConceptLexicon::load(p)?;
            &owned_lex
        }
        None => ConceptLexicon::bundled(),
    };
    let input = read_records(&a.input)?.check_unique_ids();
    let mut out = create_jsonl(&a.output)?;
    let (mut n_in, mut non_english, mut empty) = (0usize, 0usize, 0usize);
    chunked(input, |recs: Vec<MediaRecord>| {
        n_in += recs.len();
        let done: Vec<Option<Vec<CuratedPair>>> = recs
            .par_iter()
            .map(|r| {
                let c = clean_caption_with(&r.caption_raw, &stop);
                if c.is_empty() {
                    return None;
                }
                if !passes_english_gate(&c, a.english_threshold) {
                    return Some(Vec::new());
                }
                let pairs = c
                    .sentences
                    .iter()
                    .zip(&c.tokens)
                    .map(|(s, toks)| {
                        let concepts = extract_concepts_from_tokens(toks.iter().map(String::as_str), lex);
                        CuratedPair::new(&r.id, s.as_str()).with_concepts(concepts)
                    })
                    .collect();
                Some(pairs)
            })
            .collect();
        for d in done {
            match d {
                None => empty += 1,
                Some(v) if v.is_empty() => non_english += 1,
                Some(v) => {
                    for p in &v {
                        out.write(p)?;
                    }
                }
            }
        }
        Ok(())
    })?;
    let n_out = out.written();
    out.finish()?.flush()?;
    Ok(json!({
        "in": n_in,
        "out": n_out,
        "dropped_empty": empty,
        "dropped_non_english": non_english,
    }))
}

// ---------------------------------------------------------------- lexicon-check

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TableKind {
    Concepts,
    Hashtags,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LexiconCheckArgs {
    /// TSV to validate (bundled table if omitted)
    #[arg(long)]
    pub table: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = TableKind::Concepts)]
    pub kind: TableKind,
}

impl Default for LexiconCheckArgs {
    fn default() -> Self {
        LexiconCheckArgs {
            table: None,
            kind: TableKind::Concepts,
        }
    }
}

pub fn lexicon_check(a: &LexiconCheckArgs) -> Result<Value> {
    let source = a
        .table
        .as_ref()
        .map_or_else(|| "bundled".to_owned(), |p| p.display().to_string());
    Ok(match a.kind {
        TableKind::Concepts => {
            let owned;
            let lex = match &a.table {
                Some(p) => {
                    owned = ConceptLexicon::load(p)?;
                    &owned
                }
                None => ConceptLexicon::bundled(),
            };
            json!({"table": source, "kind": "concepts", "entries": lex.len(), "concepts": lex.concepts().len()})
        }
        TableKind::Hashtags => {
            let owned;
            let map = match &a.table {
                Some(p) => {
                    owned = CanonMap::load(p)?;
                    &owned
                }
                None => CanonMap::bundled(),
            };
            json!({"table": source, "kind": "hashtags", "entries": map.len(), "canonicals": map.canonical_count()})
        }
    })
}

fn canon_map(path: &Option<PathBuf>) -> Result<std::borrow::Cow<'static, CanonMap>> {
    Ok(match path {
        Some(p) => std::borrow::Cow::Owned(CanonMap::load(p)?),
        None => std::borrow::Cow::Borrowed(CanonMap::bundled()),
    })
}

// ---------------------------------------------------------------- canonize

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CanonizeArgs {
    /// Hashtags to look up
    pub tags: Vec<String>,
    /// Hashtag map TSV (bundled if omitted)
    #[arg(long)]
    pub map: Option<PathBuf>,
    /// Rewrite these records' hashtags to canonical form (unmapped tags dropped)
    #[arg(long, requires = "output")]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

pub fn canonize(a: &CanonizeArgs) -> Result<Value> {
    let map = canon_map(&a.map)?;
    let lookups: Vec<Value> = a
        .tags
        .iter()
        .map(|t| json!({"tag": t, "canonical": canonicalize_hashtag(t, &map)}))
        .collect();
    let mut summary = json!({});
    if !lookups.is_empty() {
        summary["tags"] = json!(lookups);
    }
    if let Some(input) = &a.input {
        let output = a.output.as_ref().context("--output is required with --input")?;
        let records = read_records(input)?;
        let mut out = create_jsonl(output)?;
        let (mut n_tags, mut mapped) = (0usize, 0usize);
        for r in records {
            let mut r = r?;
            n_tags += r.hashtags_raw.len();
            let mut canon: Vec<String> = Vec::new();
            for t in &r.hashtags_raw {
                if let Some(c) = canonicalize_hashtag(t, &map) {
                    mapped += 1;
                    if !canon.iter().any(|x| x == c) {
                        canon.push(c.to_owned());
                    }
                }
            }
            r.hashtags_raw = canon;
            out.write(&r)?;
        }
        let n = out.written();
        out.finish()?.flush()?;
        summary["in"] = json!(n);
        summary["out"] = json!(n);
        summary["hashtags"] = json!(n_tags);
        summary["mapped"] = json!(mapped);
    }
    Ok(summary)
}

// ---------------------------------------------------------------- pairs

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairsArgs {
    /// MediaRecord JSONL
    #[arg(long)]
    pub input: PathBuf,
    /// CuratedPair JSONL, one pair per distinct canonical hashtag
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub map: Option<PathBuf>,
}

pub fn pairs(a: &PairsArgs) -> Result<Value> {
    need(&a.input, "input")?;
    need(&a.output, "output")?;
    let map = canon_map(&a.map)?;
    let records = read_records(&a.input)?;
    let mut out = create_jsonl(&a.output)?;
    let (mut n_in, mut without) = (0usize, 0usize);
    for r in records {
        let r = r?;
        n_in += 1;
        let ps = pairs_for_record(&r, &map);
        if ps.is_empty() {
            without += 1;
        }
        for p in &ps {
            out.write(p)?;
        }
    }
    let n = out.written();
    out.finish()?.flush()?;
    Ok(json!({"in": n_in, "out": n, "records_without_pairs": without}))
}

// ---------------------------------------------------------------- count

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CountBy {
    Concepts,
    Unigrams,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CountArgs {
    /// CuratedPair JSONL
    #[arg(long)]
    pub input: PathBuf,
    /// Frequency table TSV (token, count)
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, value_enum, default_value_t = CountBy::Concepts)]
    pub by: CountBy,
    #[arg(long)]
    pub stopwords: Option<PathBuf>,
}

impl Default for CountArgs {
    fn default() -> Self {
        CountArgs {
            input: PathBuf::new(),
            output: PathBuf::new(),
            by: CountBy::Concepts,
            stopwords: None,
        }
    }
}

pub fn count(a: &CountArgs) -> Result<Value> {
    need(&a.input, "input")?;
    need(&a.output, "output")?;
    let stop = stopwords(&a.stopwords)?;
    let mut table = FrequencyTable::new();
    let mut n_in = 0usize;
    chunked(read_pairs(&a.input)?, |chunk: Vec<CuratedPair>| {
        n_in += chunk.len();
        let part = chunk
            .par_chunks(256)
            .map(|c| match a.by {
                CountBy::Concepts => count_concepts(c),
                CountBy::Unigrams => count_unigrams(c, &stop),
            })
            .reduce(FrequencyTable::new, |mut x, y| {
                x.merge(&y);
                x
            });
        table.merge(&part);
        Ok(())
    })?;
    table.save(&a.output)?;
    Ok(json!({
        "in": n_in,
        "distinct": table.len(),
        "total": table.total(),
        "median": table.median_count(),
    }))
}

// ---------------------------------------------------------------- balance

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeArg {
    ExpectedCount,
    Bernoulli,
}

impl From<ModeArg> for ResampleMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::ExpectedCount => ResampleMode::ExpectedCount,
            ModeArg::Bernoulli => ResampleMode::Bernoulli,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BalanceArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Concept frequency TSV; counted from the input if omitted
    #[arg(long)]
    pub freq: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.1)]
    pub w_min: f64,
    #[arg(long, default_value_t = 10.0)]
    pub w_max: f64,
    #[arg(long, value_enum, default_value_t = ModeArg::ExpectedCount)]
    pub mode: ModeArg,
    /// Shard index; selects an independent random stream
    #[arg(long, default_value_t = 0)]
    pub shard: u64,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl Default for BalanceArgs {
    fn default() -> Self {
        let p = BalanceParams::default();
        BalanceArgs {
            input: PathBuf::new(),
            output: PathBuf::new(),
            freq: None,
            alpha: p.alpha,
            w_min: p.w_min,
            w_max: p.w_max,
            mode: ModeArg::ExpectedCount,
            shard: 0,
            seed: None,
        }
    }
}

fn max_min_ratio(t: &FrequencyTable, keys: &FrequencyTable) -> Option<f64> {
    let counts: Vec<u64> = keys.counts().keys().map(|k| t.get(k).unwrap_or(0)).collect();
    let (min, max) = (counts.iter().min()?, counts.iter().max()?);
    (*min > 0).then(|| *max as f64 / *min as f64)
}

pub fn balance(a: &BalanceArgs, seed: u64) -> Result<Value> {
    need(&a.input, "input")?;
    need(&a.output, "output")?;
    let params = BalanceParams {
        alpha: a.alpha,
        w_min: a.w_min,
        w_max: a.w_max,
        seed: a.seed.unwrap_or(seed),
    };
    params.validate()?;
    let input_counts = {
        let mut t = FrequencyTable::new();
        chunked(read_pairs(&a.input)?, |c: Vec<CuratedPair>| {
            t.merge(&count_concepts(&c));
            Ok(())
        })?;
        t
    };
    let freq = match &a.freq {
        Some(p) => FrequencyTable::load(p)?,
        None => input_counts.clone(),
    };
    let mut resampler = Resampler::new(&freq, &params, a.mode.into(), a.shard)?;
    let input = read_pairs(&a.input)?;
    let mut out = create_jsonl(&a.output)?;
    let mut out_counts = FrequencyTable::new();
    let (mut n_in, mut weight_sum) = (0usize, 0.0f64);
    let mut buf = Vec::new();
    for p in input {
        let p = p?;
        n_in += 1;
        buf.clear();
        let k = resampler.push(&p, &mut buf);
        if k > 0 {
            weight_sum += buf[0].weight * k as f64;
            out_counts.merge(&count_concepts(&buf));
        }
        for q in &buf {
            out.write(q)?;
        }
    }
    let n_out = out.written();
    out.finish()?.flush()?;
    Ok(json!({
        "in": n_in,
        "out": n_out,
        "seed": params.seed,
        "concepts": input_counts.len(),
        "median_concept_count": freq.median_count(),
        "max_min_ratio_before": max_min_ratio(&input_counts, &input_counts),
        "max_min_ratio_after": max_min_ratio(&out_counts, &input_counts),
        "mean_weight_of_emitted": (n_out > 0).then(|| weight_sum / n_out as f64),
    }))
}

// ---------------------------------------------------------------- filter

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Keep pairs with similarity >= threshold
    #[arg(long, default_value_t = vlkit_core::filter::DEFAULT_THRESHOLD, allow_hyphen_values = true)]
    pub threshold: f64,
    /// Media embeddings (XFEM, ids = media ids); needed for pairs without a stored similarity
    #[arg(long, requires = "text_emb")]
    pub media_emb: Option<PathBuf>,
    /// Text embeddings (XFEM, ids = pair texts)
    #[arg(long, requires = "media_emb")]
    pub text_emb: Option<PathBuf>,
}

impl Default for FilterArgs {
    fn default() -> Self {
        FilterArgs {
            input: PathBuf::new(),
            output: PathBuf::new(),
            threshold: vlkit_core::filter::DEFAULT_THRESHOLD,
            media_emb: None,
            text_emb: None,
        }
    }
}

pub fn filter(a: &FilterArgs) -> Result<Value> {
    need(&a.input, "input")?;
    need(&a.output, "output")?;
    let cfg = FilterConfig::new(a.threshold)?;
    let mats = match (&a.media_emb, &a.text_emb) {
        (Some(m), Some(t)) => Some((read_embeddings(m)?, read_embeddings(t)?)),
        (None, None) => None,
        _ => bail!("media_emb and text_emb must be given together"),
    };
    let emb = match &mats {
        Some((m, t)) => Some(PairEmbeddings::new(m, t)?),
        None => None,
    };
    let input = read_pairs(&a.input)?;
    let mut out = create_jsonl(&a.output)?;
    let mut summary = FilterSummary::new(cfg.threshold);
    chunked(input, |chunk: Vec<CuratedPair>| {
        let decided: Vec<_> = chunk
            .into_par_iter()
            .map(|p| filter_one(p, emb.as_ref(), &cfg))
            .collect::<vlkit_core::Result<_>>()?;
        for d in decided {
            summary.record(d.is_some());
            if let Some(p) = d {
                out.write(&p)?;
            }
        }
        Ok(())
    })?;
    out.finish()?.flush()?;
    Ok(json!({
        "in": summary.kept + summary.dropped,
        "out": summary.kept,
        "kept": summary.kept,
        "dropped": summary.dropped,
        "threshold": summary.threshold,
    }))
}

// ---------------------------------------------------------------- sample-sim

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleSimArgs {
    /// Image sample count N_I
    #[arg(long)]
    pub ni: u64,
    /// Image batch size B_I
    #[arg(long)]
    pub bi: u64,
    /// Video sample count N_V
    #[arg(long)]
    pub nv: u64,
    /// Video batch size B_V
    #[arg(long)]
    pub bv: u64,
    #[arg(long, default_value = "probabilistic")]
    pub strategy: Strategy,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Simulate this many consecutive seeds and report the spread (0 = probabilities only)
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
}

impl Default for SampleSimArgs {
    fn default() -> Self {
        SampleSimArgs {
            ni: 0,
            bi: 0,
            nv: 0,
            bv: 0,
            strategy: Strategy::Probabilistic,
            seed: None,
            seeds: 1,
        }
    }
}

pub fn sample_sim(a: &SampleSimArgs, seed: u64) -> Result<Value> {
    let base = SamplerConfig {
        n_image: a.ni,
        n_video: a.nv,
        b_image: a.bi,
        b_video: a.bv,
        strategy: a.strategy,
        seed: a.seed.unwrap_or(seed),
    };
    let probs = compute_probs(&base)?;
    let mut v = json!({
        "p_image": probs.p_image,
        "p_video": probs.p_video,
        "ratio": [probs.ratio.0.to_string(), probs.ratio.1.to_string()],
    });
    if a.seeds == 0 {
        return Ok(v);
    }
    v["stats"] = serde_json::to_value(simulate_epoch(&base)?)?;
    if a.seeds > 1 {
        let stats: Vec<_> = (0..a.seeds)
            .into_par_iter()
            .map(|k| simulate_epoch(&SamplerConfig { seed: base.seed.wrapping_add(k), ..base }))
            .collect::<vlkit_core::Result<_>>()?;
        let gaps: Vec<f64> = stats.iter().map(|s| s.exhaustion_gap).collect();
        let n = gaps.len() as f64;
        v["seeds"] = json!({
            "count": a.seeds,
            "gap_mean": gaps.iter().sum::<f64>() / n,
            "gap_max": gaps.iter().cloned().fold(0.0, f64::max),
            "p_image_realized_mean": stats.iter().map(|s| s.p_image_realized).sum::<f64>() / n,
        });
    }
    Ok(v)
}

// ---------------------------------------------------------------- schedule

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleArgs {
    #[arg(long)]
    pub total_iters: u64,
    /// Stage resolutions, ascending
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_RESOLUTIONS)]
    pub resolutions: Vec<u32>,
    /// Stage fractions summing to 1 (equal split if omitted)
    #[arg(long, value_delimiter = ',')]
    pub fractions: Vec<f64>,
    /// Iterations to look up
    #[arg(long = "at", value_delimiter = ',')]
    pub at: Vec<u64>,
}

impl Default for ScheduleArgs {
    fn default() -> Self {
        ScheduleArgs {
            total_iters: 0,
            resolutions: DEFAULT_RESOLUTIONS.to_vec(),
            fractions: Vec::new(),
            at: Vec::new(),
        }
    }
}

pub fn schedule(a: &ScheduleArgs) -> Result<Value> {
    let s = if a.fractions.is_empty() {
        ResolutionSchedule::equal(&a.resolutions, a.total_iters)?
    } else {
        ensure!(
            a.fractions.len() == a.resolutions.len(),
            "{} fractions for {} resolutions",
            a.fractions.len(),
            a.resolutions.len()
        );
        let stages = a
            .resolutions
            .iter()
            .zip(&a.fractions)
            .map(|(&resolution, &fraction)| Stage { resolution, fraction })
            .collect();
        ResolutionSchedule::new(stages, a.total_iters)?
    };
    let intervals: Vec<Value> = s
        .intervals()
        .into_iter()
        .map(|(r, start, end)| json!({"resolution": r, "start": start, "end": end}))
        .collect();
    let lookups = a
        .at
        .iter()
        .map(|&i| Ok(json!({"iteration": i, "resolution": s.resolution_at(i)?})))
        .collect::<Result<Vec<_>>>()?;
    Ok(json!({"total_iters": a.total_iters, "stages": intervals, "lookups": lookups}))
}

// ---------------------------------------------------------------- cost

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostArgs {
    /// Proposed input resolution
    #[arg(long)]
    pub res_a: u64,
    /// Proposed token count
    #[arg(long)]
    pub tok_a: u64,
    /// Baseline input resolution
    #[arg(long)]
    pub res_b: u64,
    /// Baseline token count
    #[arg(long)]
    pub tok_b: u64,
    /// Also report an EViT prune plan with this keep rate
    #[arg(long)]
    pub keep_rate: Option<f64>,
    #[arg(long, default_value_t = 12)]
    pub depth: usize,
    /// Patch size for the plan's base token grid (from res_a)
    #[arg(long, default_value_t = 14)]
    pub patch: usize,
}

pub fn cost(a: &CostArgs) -> Result<Value> {
    let c = cost_summary(a.res_a, a.tok_a, a.res_b, a.tok_b)?;
    let mut v = serde_json::to_value(c)?;
    if let Some(keep) = a.keep_rate {
        ensure!(a.patch > 0, "patch must be positive");
        let base = patch_grid_tokens(a.res_a as usize, a.patch);
        let plan = KeepRatePlan::new(base, keep, a.depth)?;
        v["prune_plan"] = json!({
            "base_tokens": base,
            "keep_rate": keep,
            "depth": a.depth,
            "prune_layers": plan.prune_layers,
            "tokens_after_each_prune": prune_stages(&plan),
        });
    }
    Ok(v)
}

// ---------------------------------------------------------------- mask

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModalityArg {
    Image,
    Video,
}

impl From<ModalityArg> for Modality {
    fn from(m: ModalityArg) -> Self {
        match m {
            ModalityArg::Image => Modality::Image,
            ModalityArg::Video => Modality::Video,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskArgs {
    #[arg(long)]
    pub patches: usize,
    #[arg(long, value_enum, default_value_t = ModalityArg::Image)]
    pub modality: ModalityArg,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl Default for MaskArgs {
    fn default() -> Self {
        MaskArgs {
            patches: 0,
            modality: ModalityArg::Image,
            seed: None,
        }
    }
}

pub fn mask(a: &MaskArgs, seed: u64) -> Result<Value> {
    let m: Modality = a.modality.into();
    let mask = mae_mask(a.patches, m, a.seed.unwrap_or(seed))?;
    let hidden: Vec<usize> = mask.iter().enumerate().filter(|(_, &h)| h).map(|(i, _)| i).collect();
    Ok(json!({
        "patches": a.patches,
        "modality": m,
        "masked": masked_count(a.patches, m),
        "visible": a.patches - hidden.len(),
        "masked_indices": hidden,
    }))
}

// ---------------------------------------------------------------- aspect

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AspectArgs {
    #[arg(long)]
    pub width: u32,
    #[arg(long)]
    pub height: u32,
    #[arg(long, default_value_t = 448)]
    pub target: u32,
}

impl Default for AspectArgs {
    fn default() -> Self {
        AspectArgs {
            width: 0,
            height: 0,
            target: 448,
        }
    }
}

pub fn aspect(a: &AspectArgs) -> Result<Value> {
    Ok(serde_json::to_value(aspect_fit(a.width, a.height, a.target)?)?)
}

// ---------------------------------------------------------------- train-codebook

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeArg {
    Residual,
    Product,
}

impl From<SchemeArg> for Scheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::Residual => Scheme::Residual,
            SchemeArg::Product => Scheme::Product,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainCodebookArgs {
    /// Embeddings (XFEM)
    #[arg(long)]
    pub input: PathBuf,
    /// Codebook file
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, value_enum, default_value_t = SchemeArg::Residual)]
    pub scheme: SchemeArg,
    /// K: levels (residual) or chunks (product)
    #[arg(long, default_value_t = 3)]
    pub levels: usize,
    /// M: codewords per level
    #[arg(long, default_value_t = 256)]
    pub entries: usize,
    #[arg(long, default_value_t = 20)]
    pub iters: usize,
    #[arg(long, default_value_t = vlkit_core::semantic_id::DEFAULT_GAMMA)]
    pub gamma: f64,
    #[arg(long, default_value_t = vlkit_core::semantic_id::DEFAULT_DEAD_FRACTION)]
    pub dead_fraction: f64,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl Default for TrainCodebookArgs {
    fn default() -> Self {
        TrainCodebookArgs {
            input: PathBuf::new(),
            output: PathBuf::new(),
            scheme: SchemeArg::Residual,
            levels: 3,
            entries: 256,
            iters: 20,
            gamma: vlkit_core::semantic_id::DEFAULT_GAMMA,
            dead_fraction: vlkit_core::semantic_id::DEFAULT_DEAD_FRACTION,
            seed: None,
        }
    }
}

pub fn train_codebook(a: &TrainCodebookArgs, seed: u64) -> Result<Value> {
    need(&a.input, "input")?;
    need(&a.output, "output")?;
    let data = read_embeddings(&a.input)?;
    let cfg = TrainConfig {
        scheme: a.scheme.into(),
        levels: a.levels,
        entries: a.entries,
        iters: a.iters,
        gamma: a.gamma,
        dead_fraction: a.dead_fraction,
        seed: a.seed.unwrap_or(seed),
    };
    let report = train_codebooks(&data, &cfg)?;
    report.codebook.save(&a.output)?;
    let final_mse = reconstruction_mse(&data, &report.codebook)?;
    Ok(json!({
        "in": data.count(),
        "dim": data.dim(),
        "scheme": cfg.scheme,
        "levels": cfg.levels,
        "entries": cfg.entries,
        "iters": cfg.iters,
        "seed": cfg.seed,
        "mse_trace": report.mse_trace,
        "final_mse": final_mse,
        "reinitialized_codes": report.reinitialized,
    }))
}

// ---------------------------------------------------------------- tokenize-ids

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TokenizeIdsArgs {
    /// Embeddings (XFEM)
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub codebook: PathBuf,
    /// JSONL, one {"id", "codes"} object per row
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Serialize)]
struct IdLine<'a> {
    id: &'a str,
    codes: &'a [usize],
    #[serde(skip_serializing_if = "Option::is_none")]
    residual_norm: Option<f64>,
}

pub fn tokenize_ids(a: &TokenizeIdsArgs) -> Result<Value> {
    need(&a.input, "input")?;
    need(&a.codebook, "codebook")?;
    need(&a.output, "output")?;
    let data = read_embeddings(&a.input)?;
    let cb = Codebook::load(&a.codebook)?;
    let ids = encode_batch(&data, &cb)?;
    let norms: Option<Vec<f64>> = match cb.scheme() {
        Scheme::Residual => Some(
            data.values()
                .par_chunks_exact(data.dim())
                .map(|x| rq_encode(x, &cb).map(|e| *e.residual_norms.last().expect("levels > 0")))
                .collect::<vlkit_core::Result<_>>()?,
        ),
        Scheme::Product => None,
    };
    let mut out = create_jsonl(&a.output)?;
    let mut distinct = std::collections::HashSet::new();
    for (i, sid) in ids.iter().enumerate() {
        let row_id = data.ids().map_or_else(|| i.to_string(), |v| v[i].clone());
        out.write(&IdLine {
            id: &row_id,
            codes: &sid.codes,
            residual_norm: norms.as_ref().map(|n| n[i]),
        })?;
        distinct.insert(&sid.codes);
    }
    let n = out.written();
    out.finish()?.flush()?;
    Ok(json!({
        "in": data.count(),
        "out": n,
        "scheme": cb.scheme(),
        "distinct_ids": distinct.len(),
        "mse": reconstruction_mse(&data, &cb)?,
    }))
}

// ---------------------------------------------------------------- compress

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CompressMethod {
    /// PCA projection, f32 XFEM output
    Pca,
    /// Per-row int8, XFQ8 output
    Int8,
    /// PCA then int8
    PcaInt8,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompressArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, value_enum, default_value_t = CompressMethod::Pca)]
    pub method: CompressMethod,
    /// Projection width
    #[arg(long, default_value_t = 100)]
    pub dim: usize,
    /// Write the fitted PCA model (JSON) here
    #[arg(long)]
    pub model: Option<PathBuf>,
}

impl Default for CompressArgs {
    fn default() -> Self {
        CompressArgs {
            input: PathBuf::new(),
            output: PathBuf::new(),
            method: CompressMethod::Pca,
            dim: 100,
            model: None,
        }
    }
}

fn int8_summary(q: &Int8Matrix, original: &EmbeddingMatrix) -> Result<(f64, f64)> {
    let back = q.dequantize()?;
    let mut max_err = 0.0f64;
    let mut worst_ratio = 0.0f64;
    for ((x, y), r) in original.rows().zip(back.rows()).zip(&q.rows) {
        for (&a, &b) in x.iter().zip(y) {
            let e = (a as f64 - b as f64).abs();
            max_err = max_err.max(e);
            worst_ratio = worst_ratio.max(e / r.scale as f64);
        }
    }
    Ok((max_err, worst_ratio))
}

pub fn compress(a: &CompressArgs) -> Result<Value> {
    need(&a.input, "input")?;
    need(&a.output, "output")?;
    let data = read_embeddings(&a.input)?;
    let mut v = json!({"in": data.count(), "in_dim": data.dim(), "method": a.method});
    let projected = match a.method {
        CompressMethod::Int8 => None,
        CompressMethod::Pca | CompressMethod::PcaInt8 => {
            let (model, proj) = pca_project(&data, a.dim)?;
            let err = model.reconstruction_error(&data)?;
            v["out_dim"] = json!(a.dim);
            v["explained_variance"] = json!(model.explained_variance_ratio.iter().sum::<f64>());
            v["reconstruction_error"] = json!(err);
            v["discarded_variance_x_dof"] = json!(model.discarded_variance() * (data.count() - 1) as f64);
            if let Some(p) = &a.model {
                write_json_file(p, &serde_json::to_value(&model)?)?;
            }
            Some(proj)
        }
    };
    match a.method {
        CompressMethod::Pca => {
            write_embeddings(projected.as_ref().expect("pca ran"), &a.output)?;
        }
        CompressMethod::Int8 | CompressMethod::PcaInt8 => {
            let src = projected.as_ref().unwrap_or(&data);
            let q = Int8Matrix::quantize(src)?;
            let (max_err, ratio) = int8_summary(&q, src)?;
            write_int8(&q, &a.output)?;
            v["out_dim"] = json!(src.dim());
            v["int8_max_abs_error"] = json!(max_err);
            v["int8_max_error_over_scale"] = json!(ratio);
        }
    }
    v["out"] = json!(data.count());
    Ok(v)
}
