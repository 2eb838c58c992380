#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use vlkit_core::caption::clean_caption;
use vlkit_core::corpus::{write_embeddings, EmbeddingMatrix};

pub const EMB_DIM: usize = 16;

const NOUNS: &[&str] = &[
    "dog", "beach", "cat", "sunset", "mountain", "pizza", "car", "tree", "lake", "guitar", "horse", "flower",
    "coffee", "bridge", "snow", "bird", "train", "castle", "tiger", "wedding",
];
const TAGS: &[&str] = &["#doggo", "#beach", "#sunset", "#cats", "#foodporn", "#travel", "#nofilter", "#mountains"];

pub fn vlkit() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_vlkit"));
    c.env_remove("VLKIT_SEED").env_remove("VLKIT_THREADS").env_remove("RUST_LOG");
    c
}

pub fn run(args: &[&str]) -> Output {
    vlkit().args(args).output().expect("spawn vlkit")
}

/// Parse the single JSON line a command prints on stdout.
pub fn summary(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stdout);
    let line = text.lines().last().unwrap_or_else(|| panic!("no stdout; stderr: {}", String::from_utf8_lossy(&out.stderr)));
    serde_json::from_str(line).unwrap_or_else(|e| panic!("bad summary {line:?}: {e}"))
}

pub fn ok(args: &[&str]) -> Value {
    let out = run(args);
    assert!(out.status.success(), "vlkit {args:?} failed: {}", String::from_utf8_lossy(&out.stdout));
    summary(&out)
}

pub fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 temp path")
}

/// Skewed noun draw so concept counts are uneven.
fn noun(rng: &mut ChaCha8Rng) -> &'static str {
    let u: f64 = rng.random();
    NOUNS[((u * u * u) * NOUNS.len() as f64) as usize]
}

/// `n` MediaRecord lines with English captions, some noise and hashtags.
pub fn records(n: usize, seed: u64) -> Vec<Value> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let video = rng.random_bool(0.3);
            let mut caption = format!("the {} is near the {} and it was very nice", noun(&mut rng), noun(&mut rng));
            if rng.random_bool(0.4) {
                caption.push_str(&format!(". We saw a {} in the {} today", noun(&mut rng), noun(&mut rng)));
            }
            if rng.random_bool(0.3) {
                caption.push_str(" https://example.com/x @someone");
            }
            if rng.random_bool(0.2) {
                caption.push_str(" 🌅🌅");
            }
            let tags: Vec<&str> = (0..rng.random_range(0..3)).map(|_| TAGS[rng.random_range(0..TAGS.len())]).collect();
            json!({
                "id": format!("m{i:05}"),
                "modality": if video { "video" } else { "image" },
                "width": rng.random_range(64..2000),
                "height": rng.random_range(64..2000),
                "num_frames": if video { 16 } else { 1 },
                "caption_raw": caption,
                "hashtags_raw": tags,
                "source": {"crawl": i % 7},
            })
        })
        .collect()
}

pub fn write_jsonl(path: &Path, rows: &[Value]) {
    let mut s = String::new();
    for r in rows {
        s.push_str(&r.to_string());
        s.push('\n');
    }
    std::fs::write(path, s).unwrap();
}

fn unit(rng: &mut ChaCha8Rng) -> Vec<f32> {
    (0..EMB_DIM).map(|_| rng.random_range(-1.0f32..1.0)).collect()
}

/// Media embeddings keyed by record id and text embeddings keyed by every
/// cleaned caption sentence; text vectors are noisy copies of their media
/// vector so similarities spread around the default threshold.
pub fn write_pair_embeddings(records: &[Value], media: &Path, text: &Path, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m_rows = Vec::new();
    let mut m_ids = Vec::new();
    let mut t_rows = Vec::new();
    let mut t_ids = Vec::new();
    let mut seen = BTreeSet::new();
    for r in records {
        let m = unit(&mut rng);
        for s in clean_caption(r["caption_raw"].as_str().unwrap()).sentences {
            if !seen.insert(s.clone()) {
                continue;
            }
            let mix: f32 = rng.random_range(0.0..1.0);
            let noise = unit(&mut rng);
            t_rows.extend(m.iter().zip(&noise).map(|(a, b)| mix * a + (1.0 - mix) * b));
            t_ids.push(s);
        }
        m_rows.extend(m);
        m_ids.push(r["id"].as_str().unwrap().to_owned());
    }
    write_embeddings(&EmbeddingMatrix::new(EMB_DIM, m_rows, Some(m_ids)).unwrap(), media).unwrap();
    write_embeddings(&EmbeddingMatrix::new(EMB_DIM, t_rows, Some(t_ids)).unwrap(), text).unwrap();
}

/// Every file a pipeline config run writes, for hashing.
pub const FULL_OUTPUTS: &[&str] = &[
    "pairs.jsonl",
    "freq.tsv",
    "balanced.jsonl",
    "filtered.jsonl",
    "tag_pairs.jsonl",
    "canon.jsonl",
    "codebook.vlcb",
    "ids.jsonl",
    "pq.vlcb",
    "pca.xfem",
    "pca.json",
    "int8.xfq8",
];

/// A config exercising every file-producing stage, listed out of order.
pub const FULL_PIPELINE: &str = r#"
seed = 20240611

[[stages]]
name = "filter"
stage = "filter"
input = "balanced.jsonl"
output = "filtered.jsonl"
threshold = 0.25
media_emb = "media.xfem"
text_emb = "text.xfem"

[[stages]]
name = "clean"
stage = "clean"
input = "records.jsonl"
output = "pairs.jsonl"

[[stages]]
name = "count"
stage = "count"
input = "pairs.jsonl"
output = "freq.tsv"

[[stages]]
name = "balance"
stage = "balance"
input = "pairs.jsonl"
output = "balanced.jsonl"
freq = "freq.tsv"
alpha = 0.5
mode = "bernoulli"

[[stages]]
name = "tags"
stage = "pairs"
input = "records.jsonl"
output = "tag_pairs.jsonl"

[[stages]]
name = "canon"
stage = "canonize"
input = "records.jsonl"
output = "canon.jsonl"

[[stages]]
name = "rq"
stage = "train-codebook"
input = "media.xfem"
output = "codebook.vlcb"
scheme = "residual"
levels = 2
entries = 8
iters = 5

[[stages]]
name = "ids"
stage = "tokenize-ids"
input = "media.xfem"
codebook = "codebook.vlcb"
output = "ids.jsonl"

[[stages]]
name = "pq"
stage = "train-codebook"
input = "media.xfem"
output = "pq.vlcb"
scheme = "product"
levels = 4
entries = 8
iters = 5

[[stages]]
name = "pca"
stage = "compress"
input = "media.xfem"
output = "pca.xfem"
method = "pca"
dim = 4
model = "pca.json"

[[stages]]
name = "int8"
stage = "compress"
input = "pca.xfem"
output = "int8.xfq8"
method = "int8"

[[stages]]
name = "sim"
stage = "sample-sim"
ni = 6400
bi = 64
nv = 3200
bv = 32
"#;

/// Write the fixture corpus, embeddings and the full config into `dir`.
pub fn full_fixture(dir: &Path, n: usize) -> PathBuf {
    let recs = records(n, 7);
    write_jsonl(&dir.join("records.jsonl"), &recs);
    write_pair_embeddings(&recs, &dir.join("media.xfem"), &dir.join("text.xfem"), 8);
    let cfg = dir.join("pipeline.toml");
    std::fs::write(&cfg, FULL_PIPELINE).unwrap();
    cfg
}
