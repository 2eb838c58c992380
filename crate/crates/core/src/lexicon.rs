//! Concept lexicon, hashtag canonicalization and video–hashtag pairs.
//!
//! Both tables share one on-disk shape: UTF-8 TSV with two columns
//! (`surface<TAB>canonical`), `#` comment lines and blank lines ignored.
//! Keys and values are normalized (NFKC, lowercase, leading `#` stripped),
//! and every canonical value is inserted as a key mapping to itself so that
//! lookups are closed: looking up a lookup result returns it unchanged.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::LazyLock;

use unicode_normalization::UnicodeNormalization;

use crate::caption::CleanCaption;
use crate::corpus::{CuratedPair, MediaRecord};
use crate::error::{Error, Result};

static BUNDLED_LEXICON: LazyLock<ConceptLexicon> = LazyLock::new(|| {
    ConceptLexicon::from_reader(include_str!("../data/lexicon.tsv").as_bytes())
        .expect("bundled lexicon")
});

static BUNDLED_HASHTAGS: LazyLock<CanonMap> = LazyLock::new(|| {
    CanonMap::from_reader(include_str!("../data/hashtags.tsv").as_bytes())
        .expect("bundled hashtag map")
});

/// NFKC, strip leading `#`, lowercase.
pub fn normalize_term(s: &str) -> String {
    let nfkc: String = s.trim().nfkc().collect();
    let stripped = nfkc.trim_start_matches('#').trim();
    stripped.to_lowercase().nfkc().collect()
}

fn read_two_columns<R: BufRead>(r: R) -> Result<Vec<(usize, String, String)>> {
    let mut rows = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let line_no = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 2 {
            return Err(Error::TableFormat {
                line: line_no,
                reason: format!("expected 2 tab-separated columns, found {}", cols.len()),
            });
        }
        let (surface, canonical) = (normalize_term(cols[0]), normalize_term(cols[1]));
        if surface.is_empty() || canonical.is_empty() {
            return Err(Error::TableFormat {
                line: line_no,
                reason: "empty column".into(),
            });
        }
        rows.push((line_no, surface, canonical));
    }
    Ok(rows)
}

fn build_closed_map(rows: Vec<(usize, String, String)>) -> Result<BTreeMap<String, String>> {
    let mut map: BTreeMap<String, String> = BTreeMap::new();
    for (_, surface, canonical) in rows {
        match map.get(&surface) {
            Some(prev) if *prev != canonical => {
                return Err(Error::LexiconConflict {
                    surface,
                    first: prev.clone(),
                    second: canonical,
                })
            }
            Some(_) => {}
            None => {
                map.insert(surface, canonical);
            }
        }
    }
    let canonicals: BTreeSet<String> = map.values().cloned().collect();
    for c in canonicals {
        match map.get(&c) {
            Some(target) if *target != c => {
                return Err(Error::NonClosedMapping {
                    canonical: c,
                    target: target.clone(),
                })
            }
            Some(_) => {}
            None => {
                map.insert(c.clone(), c);
            }
        }
    }
    Ok(map)
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::file(path, e))
}

/// Surface form -> canonical concept.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConceptLexicon {
    entries: BTreeMap<String, String>,
    concepts: BTreeSet<String>,
}

impl ConceptLexicon {
    pub fn bundled() -> &'static ConceptLexicon {
        &BUNDLED_LEXICON
    }

    pub fn from_reader<R: BufRead>(r: R) -> Result<Self> {
        let entries = build_closed_map(read_two_columns(r)?)?;
        let concepts = entries.values().cloned().collect();
        Ok(ConceptLexicon { entries, concepts })
    }

    pub fn from_pairs<I, A, B>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (A, B)>,
        A: AsRef<str>,
        B: AsRef<str>,
    {
        let rows = pairs
            .into_iter()
            .enumerate()
            .map(|(i, (a, b))| (i + 1, normalize_term(a.as_ref()), normalize_term(b.as_ref())))
            .collect();
        let entries = build_closed_map(rows)?;
        let concepts = entries.values().cloned().collect();
        Ok(ConceptLexicon { entries, concepts })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_reader(open(path.as_ref())?)
    }

    pub fn lookup(&self, surface: &str) -> Option<&str> {
        self.entries.get(surface).map(String::as_str)
    }

    pub fn entries(&self) -> &BTreeMap<String, String> {
        &self.entries
    }

    pub fn concepts(&self) -> &BTreeSet<String> {
        &self.concepts
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// User hashtag -> canonical hashtag.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CanonMap {
    pairs: BTreeMap<String, String>,
}

impl CanonMap {
    pub fn bundled() -> &'static CanonMap {
        &BUNDLED_HASHTAGS
    }

    pub fn from_reader<R: BufRead>(r: R) -> Result<Self> {
        Ok(CanonMap {
            pairs: build_closed_map(read_two_columns(r)?)?,
        })
    }

    pub fn from_pairs<I, A, B>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (A, B)>,
        A: AsRef<str>,
        B: AsRef<str>,
    {
        let rows = pairs
            .into_iter()
            .enumerate()
            .map(|(i, (a, b))| (i + 1, normalize_term(a.as_ref()), normalize_term(b.as_ref())))
            .collect();
        Ok(CanonMap {
            pairs: build_closed_map(rows)?,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_reader(open(path.as_ref())?)
    }

    /// Number of (user, canonical) pairs, including canonical self-maps.
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn canonical_count(&self) -> usize {
        self.pairs.values().collect::<BTreeSet<_>>().len()
    }

    pub fn pairs(&self) -> &BTreeMap<String, String> {
        &self.pairs
    }
}

pub fn canonicalize_hashtag<'m>(tag: &str, map: &'m CanonMap) -> Option<&'m str> {
    map.pairs.get(&normalize_term(tag)).map(String::as_str)
}

pub fn extract_concepts_from_tokens<'a, I>(tokens: I, lex: &ConceptLexicon) -> BTreeSet<String>
where
    I: IntoIterator<Item = &'a str>,
{
    tokens
        .into_iter()
        .filter_map(|t| lex.lookup(&normalize_term(t)))
        .map(str::to_owned)
        .collect()
}

/// Canonical concepts named anywhere in the caption; synonyms collapse.
pub fn extract_concepts(caption: &CleanCaption, lex: &ConceptLexicon) -> BTreeSet<String> {
    extract_concepts_from_tokens(caption.all_tokens(), lex)
}

/// One pair per distinct canonical hashtag of the record, in first-seen order.
pub fn pairs_for_record(record: &MediaRecord, map: &CanonMap) -> Vec<CuratedPair> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for tag in &record.hashtags_raw {
        if let Some(c) = canonicalize_hashtag(tag, map) {
            if seen.insert(c) {
                out.push(CuratedPair::new(&record.id, c).with_concepts([c]));
            }
        }
    }
    out
}

pub fn build_pairs<'m, I>(records: I, map: &'m CanonMap) -> impl Iterator<Item = Result<CuratedPair>> + 'm
where
    I: IntoIterator<Item = Result<MediaRecord>>,
    I::IntoIter: 'm,
{
    records.into_iter().flat_map(move |r| match r {
        Ok(rec) => pairs_for_record(&rec, map).into_iter().map(Ok).collect::<Vec<_>>(),
        Err(e) => vec![Err(e)],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::caption::clean_caption;
    use crate::corpus::Modality;
    use proptest::prelude::*;
    use std::collections::HashMap;

    #[test]
    fn two_rows_one_concept() {
        let lex = ConceptLexicon::from_pairs([("pup", "dog"), ("dog", "dog")]).unwrap();
        assert_eq!(lex.len(), 2);
        assert_eq!(lex.concepts().len(), 1);
    }

    #[test]
    fn conflict_names_surface() {
        let err = ConceptLexicon::from_pairs([("pup", "dog"), ("pup", "cat")]).unwrap_err();
        match &err {
            Error::LexiconConflict { surface, first, second } => {
                assert_eq!((surface.as_str(), first.as_str(), second.as_str()), ("pup", "dog", "cat"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn chained_canonicals_rejected() {
        let err = ConceptLexicon::from_pairs([("pup", "dog"), ("dog", "canine")]).unwrap_err();
        assert!(matches!(err, Error::NonClosedMapping { .. }));
    }

    #[test]
    fn tsv_loader_matches_hand_built_map() {
        let tsv = "# comment\n\
                   Pup\tdog\n\
                   puppy\tDog\n\
                   hound\tdog\n\
                   kitten\tcat\n\
                   \n\
                   kitty\tcat\n\
                   ＣＡＲ\tcar\n\
                   automobile\tcar\n\
                   Bike\tbicycle\n\
                   cycle\tbicycle\n\
                   bicycle\tbicycle\n";
        let lex = ConceptLexicon::from_reader(tsv.as_bytes()).unwrap();
        let want: BTreeMap<String, String> = [
            ("pup", "dog"),
            ("puppy", "dog"),
            ("hound", "dog"),
            ("dog", "dog"),
            ("kitten", "cat"),
            ("kitty", "cat"),
            ("cat", "cat"),
            ("car", "car"),
            ("automobile", "car"),
            ("bike", "bicycle"),
            ("cycle", "bicycle"),
            ("bicycle", "bicycle"),
        ]
        .into_iter()
        .map(|(a, b)| (a.to_owned(), b.to_owned()))
        .collect();
        assert_eq!(lex.entries(), &want);
    }

    #[test]
    fn bad_column_count() {
        let err = ConceptLexicon::from_reader("a\tb\tc\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::TableFormat { line: 1, .. }));
    }

    #[test]
    fn bundled_tables_load() {
        assert!(ConceptLexicon::bundled().len() > 300);
        assert!(CanonMap::bundled().len() > 100);
        assert_eq!(ConceptLexicon::bundled().lookup("puppies"), Some("dog"));
    }

    #[test]
    fn canonicalize_examples() {
        let map = CanonMap::from_pairs([("doggo", "dog")]).unwrap();
        assert_eq!(canonicalize_hashtag("#Doggo", &map), Some("dog"));
        assert_eq!(canonicalize_hashtag("dog", &map), Some("dog"));
        assert_eq!(canonicalize_hashtag("#unknowntag", &map), None);
        assert_eq!(canonicalize_hashtag("＃ＤＯＧＧＯ", &map), Some("dog"));
    }

    #[test]
    fn synonyms_collapse() {
        let lex = ConceptLexicon::from_pairs([("pup", "dog"), ("dog", "dog")]).unwrap();
        let c = clean_caption("pup dog");
        assert_eq!(extract_concepts(&c, &lex), BTreeSet::from(["dog".to_owned()]));
        assert!(extract_concepts(&clean_caption("nothing here"), &lex).is_empty());
    }

    #[test]
    fn concepts_match_brute_force_scan() {
        let lex = ConceptLexicon::bundled();
        let tokens = [
            "a", "puppy", "and", "kitten", "on", "the", "beach", "at", "dusk", "with", "zebra",
            "autos", "car", "ocean", "sea", "xyz", "people", "bike", "tree", "qq",
        ];
        let mut want = BTreeSet::new();
        for t in tokens {
            for (surface, canonical) in lex.entries() {
                if t == surface {
                    want.insert(canonical.clone());
                }
            }
        }
        let got = extract_concepts_from_tokens(tokens, lex);
        assert_eq!(got, want);
        assert!(got.is_subset(lex.concepts()));
    }

    fn record(id: &str, tags: &[&str]) -> MediaRecord {
        MediaRecord {
            id: id.into(),
            modality: Modality::Video,
            width: 64,
            height: 64,
            num_frames: 16,
            caption_raw: String::new(),
            hashtags_raw: tags.iter().map(|s| s.to_string()).collect(),
            extra: Default::default(),
        }
    }

    #[test]
    fn duplicate_tags_collapse() {
        let map = CanonMap::from_pairs([("doggo", "dog"), ("dog", "dog")]).unwrap();
        let pairs = pairs_for_record(&record("v", &["#doggo", "#dog"]), &map);
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].text, "dog");
        assert!(pairs_for_record(&record("w", &[]), &map).is_empty());
    }

    #[test]
    fn pairs_match_nested_loop() {
        let map = CanonMap::bundled();
        let vocab = [
            "#dogs", "#Doggo", "cat", "#meow", "#unknown", "#surf", "#SURFER", "#travel", "#xyz",
            "#bike", "#gym", "#fitness", "#lol",
        ];
        let records: Vec<MediaRecord> = (0..50)
            .map(|i| {
                let tags: Vec<&str> = (0..(i % 6)).map(|j| vocab[(i * 7 + j * 3) % vocab.len()]).collect();
                record(&format!("v{i}"), &tags)
            })
            .collect();

        let mut want: HashMap<(String, String), usize> = HashMap::new();
        for r in &records {
            let mut emitted: Vec<String> = Vec::new();
            for t in &r.hashtags_raw {
                let key = t.trim_start_matches('#').to_lowercase();
                for (user, canon) in map.pairs() {
                    if *user == key && !emitted.contains(canon) {
                        emitted.push(canon.clone());
                    }
                }
            }
            for c in emitted {
                *want.entry((r.id.clone(), c)).or_default() += 1;
            }
        }

        let mut got: HashMap<(String, String), usize> = HashMap::new();
        for p in build_pairs(records.iter().cloned().map(Ok), map) {
            let p = p.unwrap();
            *got.entry((p.media_id, p.text)).or_default() += 1;
        }
        assert_eq!(got, want);
    }

    proptest! {
        #[test]
        fn canonicalization_idempotent(tag in "#?[A-Za-z]{1,10}") {
            let map = CanonMap::bundled();
            if let Some(c) = canonicalize_hashtag(&tag, map) {
                prop_assert_eq!(canonicalize_hashtag(c, map), Some(c));
            }
        }

        #[test]
        fn pair_count_bounded(tags in prop::collection::vec("#?(dog|dogs|doggo|cat|kitty|surf|ski|zzz)", 0..8)) {
            let map = CanonMap::bundled();
            let refs: Vec<&str> = tags.iter().map(String::as_str).collect();
            let rec = record("r", &refs);
            let distinct: BTreeSet<&str> = tags.iter().filter_map(|t| canonicalize_hashtag(t, map)).collect();
            prop_assert_eq!(pairs_for_record(&rec, map).len(), distinct.len());
        }
    }
}
