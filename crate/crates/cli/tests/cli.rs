mod common;

use serde_json::json;
use sha2::{Digest, Sha256};
use tempfile::tempdir;

use common::*;
use vlkit_core::corpus::read_embeddings;
use vlkit_core::semantic_id::read_int8;

const SUBCOMMANDS: &[&str] = &[
    "clean", "lexicon-check", "canonize", "pairs", "count", "balance", "filter", "sample-sim", "schedule", "cost",
    "mask", "aspect", "train-codebook", "tokenize-ids", "compress", "pipeline",
];

#[test]
fn clean_three_records() {
    let d = tempdir().unwrap();
    let input = d.path().join("r.jsonl");
    std::fs::write(
        &input,
        concat!(
            r#"{"id":"1","modality":"image","width":10,"height":10,"caption_raw":"a dog on the beach https://t.co/x"}"#, "\n",
            r#"{"id":"2","modality":"video","width":10,"height":10,"num_frames":8,"caption_raw":"the cat is in the garden @me"}"#, "\n",
            r#"{"id":"3","modality":"image","width":10,"height":10,"caption_raw":"Sunset vibes! https://x.co @bob #sunset 🌅"}"#, "\n",
        ),
    )
    .unwrap();
    let out = d.path().join("p.jsonl");
    let s = ok(&["clean", "--input", p(&input), "--output", p(&out)]);
    assert_eq!((s["in"].as_u64(), s["out"].as_u64()), (Some(3), Some(3)), "{s}");
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.contains(r#""text":"Sunset vibes! sunset""#), "{text}");
}

#[test]
fn filter_keeps_three_of_five() {
    let d = tempdir().unwrap();
    let input = d.path().join("p.jsonl");
    let sims = [0.9, 0.1, 0.25, 0.2499, 0.6];
    let rows: Vec<_> = sims
        .iter()
        .enumerate()
        .map(|(i, s)| json!({"media_id": format!("m{i}"), "text": "x", "similarity": s}))
        .collect();
    write_jsonl(&input, &rows);
    let out = d.path().join("f.jsonl");
    let s = ok(&["filter", "--threshold", "0.25", "--input", p(&input), "--output", p(&out)]);
    assert_eq!((s["kept"].as_u64(), s["dropped"].as_u64()), (Some(3), Some(2)), "{s}");
    let kept: Vec<String> = std::fs::read_to_string(&out)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["media_id"].as_str().unwrap().to_owned())
        .collect();
    assert_eq!(kept, ["m0", "m2", "m4"]);
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let out = run(&["frobnicate"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn every_subcommand_has_help() {
    for sub in SUBCOMMANDS {
        let out = run(&[sub, "--help"]);
        assert!(out.status.success(), "{sub} --help");
        assert!(String::from_utf8_lossy(&out.stdout).contains("Usage"), "{sub}");
    }
}

#[test]
fn stage_failure_prints_error_json() {
    let out = run(&["compress", "--input", "/definitely/not/here.xfem", "--output", "/tmp/x"]);
    assert_eq!(out.status.code(), Some(1));
    let s = summary(&out);
    assert!(s["error"]["message"].as_str().unwrap().contains("/definitely/not/here.xfem"), "{s}");
    assert_eq!(s["error"]["kind"], "File");
}

#[test]
fn arithmetic_subcommands() {
    let c = ok(&["cost", "--res-a", "336", "--tok-a", "288", "--res-b", "448", "--tok-b", "1024"]);
    assert_eq!(c["token_reduction_pct"], 71.875);
    assert_eq!(c["pixel_area_reduction_pct"], 43.75);
    let a = ok(&["aspect", "--width", "640", "--height", "480", "--target", "448"]);
    assert_eq!((a["resized_w"].as_u64(), a["resized_h"].as_u64(), a["pad_top"].as_u64()), (Some(448), Some(336), Some(56)));
    let m = ok(&["mask", "--patches", "196", "--modality", "image", "--seed", "3"]);
    assert_eq!(m["masked"], 147);
    assert_eq!(m["masked_indices"].as_array().unwrap().len(), 147);
    let s = ok(&["schedule", "--total-iters", "1000", "--at", "0,199,200,999"]);
    let res: Vec<u64> = s["lookups"].as_array().unwrap().iter().map(|l| l["resolution"].as_u64().unwrap()).collect();
    assert_eq!(res, [98, 98, 154, 448]);
    let p = ok(&["sample-sim", "--ni", "5000000000", "--bi", "64", "--nv", "2000000000", "--bv", "32", "--seeds", "0"]);
    assert_eq!(p["ratio"], json!(["5", "4"]));
}

#[test]
fn seed_comes_from_environment() {
    let args = ["mask", "--patches", "50", "--modality", "video"];
    let a = summary(&vlkit().args(args).env("VLKIT_SEED", "9").output().unwrap());
    let b = summary(&vlkit().args(args).arg("--seed").arg("9").output().unwrap());
    let c = summary(&vlkit().args(args).env("VLKIT_SEED", "10").output().unwrap());
    assert_eq!(a, b);
    assert_ne!(a["masked_indices"], c["masked_indices"]);
}

#[test]
fn lexicon_check_rejects_chained_map() {
    let d = tempdir().unwrap();
    let bad = d.path().join("h.tsv");
    std::fs::write(&bad, "doggo\tdog\ndog\tcanine\ncanine\tcanine\n").unwrap();
    let out = run(&["lexicon-check", "--kind", "hashtags", "--table", p(&bad)]);
    assert!(!out.status.success());
    assert!(summary(&out)["error"]["message"].as_str().unwrap().contains("dog"));
    let good = ok(&["lexicon-check", "--kind", "concepts"]);
    assert!(good["entries"].as_u64().unwrap() > 100);
}

#[test]
fn codebook_and_compression_round_trip() {
    let d = tempdir().unwrap();
    let recs = records(120, 1);
    let (m, t) = (d.path().join("m.xfem"), d.path().join("t.xfem"));
    write_pair_embeddings(&recs, &m, &t, 2);
    let cb = d.path().join("cb.vlcb");
    let tr = ok(&["train-codebook", "--input", p(&m), "--output", p(&cb), "--levels", "2", "--entries", "8", "--iters", "4", "--seed", "1"]);
    assert_eq!(tr["mse_trace"].as_array().unwrap().len(), 4);
    let ids = d.path().join("ids.jsonl");
    let tk = ok(&["tokenize-ids", "--input", p(&m), "--codebook", p(&cb), "--output", p(&ids)]);
    assert_eq!(tk["out"], 120);
    let first: serde_json::Value = serde_json::from_str(std::fs::read_to_string(&ids).unwrap().lines().next().unwrap()).unwrap();
    assert_eq!(first["id"], "m00000");
    assert_eq!(first["codes"].as_array().unwrap().len(), 2);

    let pca = d.path().join("pca.xfem");
    let c = ok(&["compress", "--input", p(&m), "--output", p(&pca), "--method", "pca", "--dim", "5"]);
    let (err, bound) = (c["reconstruction_error"].as_f64().unwrap(), c["discarded_variance_x_dof"].as_f64().unwrap());
    assert!((err - bound).abs() <= 1e-4 * bound.max(1e-12), "{c}");
    assert_eq!(read_embeddings(&pca).unwrap().dim(), 5);

    let q = d.path().join("q.xfq8");
    let c = ok(&["compress", "--input", p(&m), "--output", p(&q), "--method", "pca-int8", "--dim", "3"]);
    assert!(c["int8_max_error_over_scale"].as_f64().unwrap() <= 0.5 + 1e-9, "{c}");
    let qm = read_int8(&q).unwrap();
    assert_eq!((qm.dim, qm.rows.len()), (3, 120));
}

#[test]
fn pipeline_missing_file_is_named() {
    let d = tempdir().unwrap();
    let cfg = d.path().join("p.toml");
    std::fs::write(&cfg, "[[stages]]\nname = \"c\"\nstage = \"clean\"\ninput = \"absent.jsonl\"\noutput = \"o.jsonl\"\n").unwrap();
    let out = run(&["pipeline", p(&cfg)]);
    assert!(!out.status.success());
    let msg = summary(&out)["error"]["message"].as_str().unwrap().to_owned();
    assert!(msg.contains(p(&d.path().join("absent.jsonl"))), "{msg}");
}

#[test]
fn pipeline_cycle_is_rejected() {
    let d = tempdir().unwrap();
    let cfg = d.path().join("p.toml");
    std::fs::write(
        &cfg,
        "[[stages]]\nname = \"a\"\nstage = \"count\"\ninput = \"x\"\noutput = \"y\"\n\
         [[stages]]\nname = \"b\"\nstage = \"balance\"\ninput = \"y\"\noutput = \"x\"\n",
    )
    .unwrap();
    let out = run(&["pipeline", p(&cfg)]);
    assert!(!out.status.success());
    assert!(summary(&out)["error"]["message"].as_str().unwrap().contains("cycle"));
}

#[test]
fn pipeline_empty_succeeds() {
    let d = tempdir().unwrap();
    let cfg = d.path().join("p.toml");
    std::fs::write(&cfg, "stages = []\n").unwrap();
    assert_eq!(ok(&["pipeline", p(&cfg)]), json!({"seed": 0, "stages": []}));
}

#[test]
fn pipeline_failure_names_stage() {
    let d = tempdir().unwrap();
    let input = d.path().join("p.jsonl");
    write_jsonl(&input, &[json!({"media_id": "m", "text": "no similarity here"})]);
    let cfg = d.path().join("p.toml");
    std::fs::write(&cfg, "[[stages]]\nname = \"gate\"\nstage = \"filter\"\ninput = \"p.jsonl\"\noutput = \"f.jsonl\"\n").unwrap();
    let out = run(&["pipeline", p(&cfg)]);
    assert!(!out.status.success());
    assert_eq!(summary(&out)["error"]["stage"], "gate");
}

fn hash_outputs(dir: &std::path::Path, names: &[&str]) -> Vec<String> {
    names.iter().map(|n| hex::encode(Sha256::digest(std::fs::read(dir.join(n)).unwrap()))).collect()
}

#[test]
fn clean_balance_filter_is_deterministic() {
    let cfg = r#"
[[stages]]
name = "clean"
stage = "clean"
input = "records.jsonl"
output = "pairs.jsonl"
[[stages]]
name = "balance"
stage = "balance"
input = "pairs.jsonl"
output = "balanced.jsonl"
seed = 4
[[stages]]
name = "filter"
stage = "filter"
input = "balanced.jsonl"
output = "filtered.jsonl"
media_emb = "media.xfem"
text_emb = "text.xfem"
"#;
    let mut hashes = Vec::new();
    let mut summaries = Vec::new();
    for _ in 0..2 {
        let d = tempdir().unwrap();
        let recs = records(100, 3);
        write_jsonl(&d.path().join("records.jsonl"), &recs);
        write_pair_embeddings(&recs, &d.path().join("media.xfem"), &d.path().join("text.xfem"), 4);
        std::fs::write(d.path().join("p.toml"), cfg).unwrap();
        summaries.push(ok(&["pipeline", p(&d.path().join("p.toml"))]));
        hashes.push(hash_outputs(d.path(), &["pairs.jsonl", "balanced.jsonl", "filtered.jsonl"]));
    }
    assert_eq!(hashes[0], hashes[1]);
    assert_eq!(summaries[0], summaries[1]);
    let stages = summaries[0]["stages"].as_array().unwrap();
    assert_eq!(stages[0]["summary"]["in"], 100);
    let f = &stages[2]["summary"];
    assert!(f["kept"].as_u64().unwrap() > 0 && f["dropped"].as_u64().unwrap() > 0, "{f}");
}

#[test]
fn full_pipeline_runs() {
    let d = tempdir().unwrap();
    let cfg = full_fixture(d.path(), 150);
    let s = ok(&["pipeline", p(&cfg)]);
    let names: Vec<&str> = s["stages"].as_array().unwrap().iter().map(|x| x["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["clean", "count", "balance", "filter", "tags", "canon", "rq", "ids", "pq", "pca", "int8", "sim"]);
    for f in FULL_OUTPUTS {
        assert!(d.path().join(f).exists(), "{f}");
    }
}
