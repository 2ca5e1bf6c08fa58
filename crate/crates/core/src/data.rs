//! Corpus manifests, MOS label handling and the seeded train/validation split.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};
use crate::rng::Xoshiro256;

/// Feature key used for native MFCC features, both in manifests and in the
/// `layer_index` field of embedding files.
pub const MFCC_LAYER: u32 = u32::MAX;

/// Percentage of the shuffled full dataset assigned to training.
pub const TRAIN_PERCENT: usize = 85;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Corpus {
    Tencent,
    #[serde(rename = "PSTN")]
    Pstn,
    #[serde(rename = "NISQA")]
    Nisqa,
    #[serde(rename = "IUB")]
    Iub,
    Synthetic,
}

impl Corpus {
    pub const ALL: [Corpus; 5] = [
        Corpus::Tencent,
        Corpus::Pstn,
        Corpus::Nisqa,
        Corpus::Iub,
        Corpus::Synthetic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Corpus::Tencent => "Tencent",
            Corpus::Pstn => "PSTN",
            Corpus::Nisqa => "NISQA",
            Corpus::Iub => "IUB",
            Corpus::Synthetic => "Synthetic",
        }
    }

    pub fn in_challenge_subset(self) -> bool {
        matches!(self, Corpus::Tencent | Corpus::Pstn)
    }

    pub fn in_unseen(self) -> bool {
        matches!(self, Corpus::Nisqa | Corpus::Iub)
    }

    /// Vote quantization step on the 1–5 scale: integer ACR votes for the
    /// P.808 corpora, 4/100 for IUB after the 0–100 → 1–5 map.
    pub fn vote_quant_step(self) -> f64 {
        match self {
            Corpus::Iub => 0.04,
            _ => 1.0,
        }
    }
}

impl fmt::Display for Corpus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Corpus {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Corpus::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Validation(format!("unknown corpus '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Split {
    Train,
    Validation,
    #[default]
    Unassigned,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleRecord {
    pub id: String,
    pub corpus: Corpus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub audio_path: Option<PathBuf>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub feature_paths: BTreeMap<u32, PathBuf>,
    pub mos: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vote_count: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vote_std: Option<f64>,
    pub split: Split,
}

impl SampleRecord {
    pub fn new(id: impl Into<String>, corpus: Corpus, mos: f64) -> Self {
        Self {
            id: id.into(),
            corpus,
            audio_path: None,
            feature_paths: BTreeMap::new(),
            mos,
            vote_count: None,
            vote_std: None,
            split: Split::Unassigned,
        }
    }

    pub fn with_votes(mut self, count: u32, std: f64) -> Self {
        self.vote_count = Some(count);
        self.vote_std = Some(std);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(1.0..=5.0).contains(&self.mos) {
            return Err(Error::Validation(format!(
                "record '{}': mos {} outside [1, 5]",
                self.id, self.mos
            )));
        }
        if let Some(n) = self.vote_count {
            if n == 0 {
                return Err(Error::Validation(format!(
                    "record '{}': vote_count must be >= 1",
                    self.id
                )));
            }
        }
        if let Some(s) = self.vote_std {
            if !s.is_finite() || s < 0.0 {
                return Err(Error::Validation(format!(
                    "record '{}': vote_std must be finite and >= 0",
                    self.id
                )));
            }
            match self.vote_count {
                None => {
                    return Err(Error::Validation(format!(
                        "record '{}': vote_std given without vote_count",
                        self.id
                    )))
                }
                Some(n) if s > 0.0 && n < 2 => {
                    return Err(Error::Validation(format!(
                        "record '{}': non-zero vote_std needs at least 2 votes",
                        self.id
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Manifest line as written on disk. `raw_score` is the 0–100 IUB rating.
#[derive(Deserialize)]
struct ManifestLine {
    id: String,
    corpus: Corpus,
    #[serde(default)]
    audio_path: Option<PathBuf>,
    #[serde(default, deserialize_with = "distinct_layer_map")]
    feature_paths: BTreeMap<u32, PathBuf>,
    #[serde(default)]
    mos: Option<f64>,
    #[serde(default)]
    raw_score: Option<f64>,
    #[serde(default)]
    vote_count: Option<u32>,
    #[serde(default)]
    vote_std: Option<f64>,
    #[serde(default)]
    split: Option<Split>,
}

fn distinct_layer_map<'de, D>(de: D) -> std::result::Result<BTreeMap<u32, PathBuf>, D::Error>
where
    D: Deserializer<'de>,
{
    struct LayerMap;

    impl<'de> Visitor<'de> for LayerMap {
        type Value = BTreeMap<u32, PathBuf>;

        fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            f.write_str("a map from layer index to path")
        }

        fn visit_map<A: MapAccess<'de>>(self, mut access: A) -> std::result::Result<Self::Value, A::Error> {
            let mut out = BTreeMap::new();
            while let Some((key, path)) = access.next_entry::<String, PathBuf>()? {
                let layer: u32 = if key.eq_ignore_ascii_case("mfcc") {
                    MFCC_LAYER
                } else {
                    key.parse()
                        .map_err(|_| serde::de::Error::custom(format!("layer key '{key}' is not an integer")))?
                };
                if out.insert(layer, path).is_some() {
                    return Err(serde::de::Error::custom(format!("duplicate layer key {layer}")));
                }
            }
            Ok(out)
        }
    }

    de.deserialize_map(LayerMap)
}

fn parse_line(text: &str, line: usize) -> Result<SampleRecord> {
    let raw: ManifestLine = serde_json::from_str(text).map_err(|e| Error::Parse {
        line,
        message: e.to_string(),
    })?;
    let (mos, vote_std) = match (raw.mos, raw.raw_score) {
        (Some(m), None) => (m, raw.vote_std),
        (None, Some(score)) => {
            if raw.corpus != Corpus::Iub {
                return Err(Error::Parse {
                    line,
                    message: format!("raw_score is only legal for IUB records, got {}", raw.corpus),
                });
            }
            // Votes on the 0–100 scale carry their spread on the same scale.
            let mos = convert_iub(score).map_err(|e| Error::Validation(format!("line {line}: {e}")))?;
            (mos, raw.vote_std.map(|s| s * 4.0 / 100.0))
        }
        (Some(_), Some(_)) => {
            return Err(Error::Parse {
                line,
                message: "both mos and raw_score given".into(),
            })
        }
        (None, None) => {
            return Err(Error::Parse {
                line,
                message: "missing mos (or raw_score for IUB)".into(),
            })
        }
    };
    let record = SampleRecord {
        id: raw.id,
        corpus: raw.corpus,
        audio_path: raw.audio_path,
        feature_paths: raw.feature_paths,
        mos,
        vote_count: raw.vote_count,
        vote_std,
        split: raw.split.unwrap_or_default(),
    };
    record
        .validate()
        .map_err(|e| Error::Validation(format!("line {line}: {e}")))?;
    Ok(record)
}

/// Parse manifest text, one JSON object per non-blank line.
pub fn parse_manifest(text: &str) -> Result<Vec<SampleRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_line(l, i + 1))
        .collect()
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<SampleRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut records = parse_manifest(&text)?;
    // Relative paths in a manifest are relative to the manifest itself.
    if let Some(base) = path.parent() {
        for r in &mut records {
            if let Some(a) = r.audio_path.as_mut() {
                if a.is_relative() {
                    *a = base.join(&*a);
                }
            }
            for p in r.feature_paths.values_mut() {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
    }
    Ok(records)
}

pub fn write_manifest(path: impl AsRef<Path>, records: &[SampleRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).expect("records serialize");
        out.push(b'\n');
    }
    fs::File::create(path)
        .and_then(|mut f| f.write_all(&out))
        .map_err(|e| Error::io(path, e))
}

/// Map an IUB 0–100 rating onto the 1–5 MOS range.
pub fn convert_iub(raw: f64) -> Result<f64> {
    if !(0.0..=100.0).contains(&raw) {
        return Err(Error::Validation(format!("IUB score {raw} outside [0, 100]")));
    }
    Ok(1.0 + 4.0 * raw / 100.0)
}

pub fn normalize_mos(mos: f64) -> Result<f64> {
    if !(1.0..=5.0).contains(&mos) {
        return Err(Error::Validation(format!("mos {mos} outside [1, 5]")));
    }
    Ok((mos - 1.0) / 4.0)
}

pub fn denormalize_mos(x: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::Validation(format!("normalized mos {x} outside [0, 1]")));
    }
    Ok(1.0 + 4.0 * x)
}

/// Number of training records for a dataset of `n`: ⌈0.85·n⌉ in exact integer arithmetic.
pub fn train_count(n: usize) -> usize {
    (TRAIN_PERCENT * n).div_ceil(100)
}

/// Shuffle the full dataset with the seeded generator and label the first
/// ⌈0.85·n⌉ positions `Train`, the rest `Validation`. Records come back in
/// their input order.
pub fn assign_splits(mut records: Vec<SampleRecord>, seed: u64) -> Result<Vec<SampleRecord>> {
    if records.is_empty() {
        return Err(Error::Empty("cannot split an empty record list".into()));
    }
    if let Some(r) = records.iter().find(|r| r.split != Split::Unassigned) {
        return Err(Error::Validation(format!("record '{}' already has a split", r.id)));
    }
    let order = Xoshiro256::seed_from_u64(seed).permutation(records.len());
    let cut = train_count(records.len());
    for (pos, &idx) in order.iter().enumerate() {
        records[idx].split = if pos < cut { Split::Train } else { Split::Validation };
    }
    Ok(records)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ViewName {
    Full,
    ChallengeSubset,
    Unseen,
}

impl ViewName {
    pub fn admits(self, corpus: Corpus) -> bool {
        match self {
            ViewName::Full => true,
            ViewName::ChallengeSubset => corpus.in_challenge_subset(),
            ViewName::Unseen => corpus.in_unseen(),
        }
    }
}

impl FromStr for ViewName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Ok(ViewName::Full),
            "subset" | "challenge" | "challengesubset" | "challenge-subset" => Ok(ViewName::ChallengeSubset),
            "unseen" => Ok(ViewName::Unseen),
            other => Err(Error::Config(format!("unknown dataset view '{other}'"))),
        }
    }
}

/// A corpus-filtered view over a record list. Split labels are those of the
/// underlying records, so a record keeps its label in every view.
#[derive(Debug, Clone)]
pub struct DatasetView<'a> {
    pub name: ViewName,
    pub records: Vec<&'a SampleRecord>,
}

impl<'a> DatasetView<'a> {
    pub fn new(name: ViewName, records: &'a [SampleRecord]) -> Self {
        Self {
            name,
            records: records.iter().filter(|r| name.admits(r.corpus)).collect(),
        }
    }

    pub fn full(records: &'a [SampleRecord]) -> Self {
        Self::new(ViewName::Full, records)
    }

    pub fn challenge_subset(records: &'a [SampleRecord]) -> Self {
        Self::new(ViewName::ChallengeSubset, records)
    }

    pub fn unseen(records: &'a [SampleRecord]) -> Self {
        Self::new(ViewName::Unseen, records)
    }

    pub fn with_split(&self, split: Split) -> Vec<&'a SampleRecord> {
        self.records.iter().copied().filter(|r| r.split == split).collect()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_plain_record() {
        let recs = parse_manifest(r#"{"id":"a","corpus":"PSTN","mos":3.2}"#).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].mos, 3.2);
        assert_eq!(recs[0].corpus, Corpus::Pstn);
        assert_eq!(recs[0].split, Split::Unassigned);
    }

    #[test]
    fn converts_iub_raw_score() {
        let recs = parse_manifest(r#"{"id":"a","corpus":"IUB","raw_score":50}"#).unwrap();
        assert_eq!(recs[0].mos, 3.0);
    }

    #[test]
    fn keeps_file_order_and_ignores_unknown_fields() {
        let text = concat!(
            r#"{"id":"c","corpus":"NISQA","mos":2.0,"extra":1}"#,
            "\n",
            r#"{"id":"a","corpus":"Tencent","mos":4.0}"#,
            "\n\n",
            r#"{"id":"b","corpus":"PSTN","mos":1.5,"vote_count":4,"vote_std":0.5}"#,
            "\n"
        );
        let ids: Vec<_> = parse_manifest(text).unwrap().into_iter().map(|r| r.id).collect();
        assert_eq!(ids, ["c", "a", "b"]);
    }

    #[test]
    fn raw_score_rejected_outside_iub() {
        let err = parse_manifest(r#"{"id":"a","corpus":"PSTN","raw_score":50}"#).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = "{\"id\":\"a\",\"corpus\":\"PSTN\",\"mos\":3}\n{not json";
        match parse_manifest(text).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn out_of_range_mos_is_validation_error() {
        let err = parse_manifest(r#"{"id":"a","corpus":"PSTN","mos":5.5}"#).unwrap_err();
        assert_eq!(err.category(), "validation");
        let err = parse_manifest(r#"{"id":"a","corpus":"IUB","raw_score":120}"#).unwrap_err();
        assert_eq!(err.category(), "validation");
    }

    #[test]
    fn vote_std_requires_count() {
        let err = parse_manifest(r#"{"id":"a","corpus":"PSTN","mos":3,"vote_std":0.4}"#).unwrap_err();
        assert_eq!(err.category(), "validation");
        let err = parse_manifest(r#"{"id":"a","corpus":"PSTN","mos":3,"vote_count":1,"vote_std":0.4}"#).unwrap_err();
        assert_eq!(err.category(), "validation");
    }

    #[test]
    fn duplicate_layer_keys_rejected() {
        let text = r#"{"id":"a","corpus":"PSTN","mos":3,"feature_paths":{"5":"x","5":"y"}}"#;
        assert!(parse_manifest(text).is_err());
        let text = r#"{"id":"a","corpus":"PSTN","mos":3,"feature_paths":{"5":"x","21":"y"}}"#;
        let r = &parse_manifest(text).unwrap()[0];
        assert_eq!(r.feature_paths.len(), 2);
    }

    #[test]
    fn iub_conversion_points() {
        assert_eq!(convert_iub(0.0).unwrap(), 1.0);
        assert_eq!(convert_iub(100.0).unwrap(), 5.0);
        assert_eq!(convert_iub(25.0).unwrap(), 1.0 + 4.0 * 0.25);
        assert!(convert_iub(-1.0).is_err());
    }

    #[test]
    fn normalization_points() {
        assert_eq!(normalize_mos(1.0).unwrap(), 0.0);
        assert_eq!(normalize_mos(5.0).unwrap(), 1.0);
        assert_eq!(normalize_mos(3.0).unwrap(), 0.5);
        let back = denormalize_mos(normalize_mos(4.2).unwrap()).unwrap();
        assert!((back - 4.2).abs() < 1e-12);
        assert!(normalize_mos(0.5).is_err());
        assert!(denormalize_mos(1.5).is_err());
    }

    #[test]
    fn split_counts() {
        let recs: Vec<_> = (0..100)
            .map(|i| SampleRecord::new(format!("r{i}"), Corpus::Pstn, 3.0))
            .collect();
        let out = assign_splits(recs.clone(), 7).unwrap();
        let train = out.iter().filter(|r| r.split == Split::Train).count();
        assert_eq!(train, 85);
        assert_eq!(out, assign_splits(recs, 7).unwrap());
    }

    #[test]
    fn train_count_rounds_up() {
        assert_eq!(train_count(100), 85);
        assert_eq!(train_count(20), 17);
        assert_eq!(train_count(1), 1);
        assert_eq!(train_count(7), 6);
    }

    #[test]
    fn empty_split_errors() {
        assert!(matches!(assign_splits(Vec::new(), 1), Err(Error::Empty(_))));
    }

    #[test]
    fn views_filter_by_corpus() {
        let recs: Vec<_> = Corpus::ALL
            .iter()
            .map(|&c| SampleRecord::new(c.name(), c, 3.0))
            .collect();
        assert_eq!(DatasetView::challenge_subset(&recs).len(), 2);
        assert_eq!(DatasetView::unseen(&recs).len(), 2);
        assert_eq!(DatasetView::full(&recs).len(), 5);
    }
}
