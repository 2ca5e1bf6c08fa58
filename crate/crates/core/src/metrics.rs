//! Agreement between individual raters and the MOS, the quantization
//! correction, vote-count histograms and report export.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;
use serde_json::json;

use crate::data::{Corpus, SampleRecord};
use crate::error::{Error, Result};
use crate::training::EvalReport;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HumanAgreement {
    pub rmse_human: f64,
    /// Set when all included records share one quantization step.
    pub rmse_human_dequantized: Option<f64>,
    pub quant_step: Option<f64>,
    pub total_votes: u64,
    pub samples_used: usize,
    /// Records without vote statistics.
    pub samples_excluded: usize,
}

/// RMSE of single votes around their sample's MOS, pooled over records:
/// `sqrt(Σ s²(N−1) / Σ N)` with `s` the per-sample standard deviation
/// (N−1 normalization) and `N` the vote count. Records lacking vote
/// statistics are skipped and counted.
pub fn human_rmse(records: &[SampleRecord]) -> Result<HumanAgreement> {
    let mut sse = 0.0;
    let mut votes = 0u64;
    let mut used = 0usize;
    let mut steps: Vec<f64> = Vec::new();
    for r in records {
        let (Some(n), Some(s)) = (r.vote_count, r.vote_std) else {
            continue;
        };
        if n == 0 {
            continue;
        }
        sse += s * s * (n - 1) as f64;
        votes += n as u64;
        used += 1;
        let step = r.corpus.vote_quant_step();
        if !steps.contains(&step) {
            steps.push(step);
        }
    }
    if used == 0 {
        return Err(Error::Empty("no records carry vote statistics".into()));
    }
    let rmse = (sse / votes as f64).sqrt();
    let quant_step = (steps.len() == 1).then(|| steps[0]);
    Ok(HumanAgreement {
        rmse_human: rmse,
        rmse_human_dequantized: quant_step.map(|d| dequantize_human_rmse(rmse, d)).transpose()?,
        quant_step,
        total_votes: votes,
        samples_used: used,
        samples_excluded: records.len() - used,
    })
}

/// Remove uniform quantization noise of step `step` (variance Δ²/12),
/// clamped at zero.
pub fn dequantize_human_rmse(rmse: f64, step: f64) -> Result<f64> {
    if !(rmse >= 0.0 && rmse.is_finite()) || !(step > 0.0 && step.is_finite()) {
        return Err(Error::Validation(format!(
            "dequantize needs rmse >= 0 and step > 0 (got {rmse}, {step})"
        )));
    }
    let q = step / 12f64.sqrt();
    if rmse <= q {
        return Ok(0.0);
    }
    Ok(((rmse - q) * (rmse + q)).sqrt())
}

/// Human agreement for each corpus that has vote statistics.
pub fn per_corpus_agreement(records: &[SampleRecord]) -> BTreeMap<Corpus, Result<HumanAgreement>> {
    let mut groups: BTreeMap<Corpus, Vec<SampleRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(r.corpus).or_default().push(r.clone());
    }
    groups.into_iter().map(|(c, rs)| (c, human_rmse(&rs))).collect()
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct VoteHistogram {
    /// Vote count → number of samples.
    pub buckets: BTreeMap<u32, usize>,
    /// No record of the corpus carries a vote count.
    pub absent: bool,
}

/// Histogram of vote counts for every known corpus.
pub fn vote_histogram(records: &[SampleRecord]) -> BTreeMap<Corpus, VoteHistogram> {
    let mut out: BTreeMap<Corpus, VoteHistogram> = Corpus::ALL.iter().map(|&c| (c, VoteHistogram::default())).collect();
    for r in records {
        if let Some(n) = r.vote_count {
            *out.get_mut(&r.corpus).unwrap().buckets.entry(n).or_default() += 1;
        }
    }
    for h in out.values_mut() {
        h.absent = h.buckets.is_empty();
    }
    out
}

/// Human-agreement block of a report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HumanReport {
    pub overall: Option<HumanAgreement>,
    pub per_corpus: BTreeMap<Corpus, HumanAgreement>,
    /// Corpora without any vote statistics.
    pub missing: Vec<Corpus>,
}

pub fn human_report(records: &[SampleRecord]) -> HumanReport {
    let mut per_corpus = BTreeMap::new();
    let mut missing = Vec::new();
    for (c, r) in per_corpus_agreement(records) {
        match r {
            Ok(a) => {
                per_corpus.insert(c, a);
            }
            Err(_) => missing.push(c),
        }
    }
    HumanReport {
        overall: human_rmse(records).ok(),
        per_corpus,
        missing,
    }
}

/// One evaluation summary: model RMSE, human agreement and histograms.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub evaluation: Option<EvalReport>,
    pub human: HumanReport,
    pub histograms: BTreeMap<Corpus, VoteHistogram>,
}

impl Report {
    pub fn new(evaluation: Option<EvalReport>, records: &[SampleRecord]) -> Self {
        Self {
            evaluation,
            human: human_report(records),
            histograms: vote_histogram(records),
        }
    }

    /// `(section, group, key, value)` rows shared by both export forms.
    fn rows(&self) -> Vec<(&'static str, String, String, String)> {
        let mut rows = Vec::new();
        if let Some(e) = &self.evaluation {
            for (c, s) in &e.per_corpus {
                rows.push(("model_rmse", c.name().to_string(), "n".into(), s.n.to_string()));
                rows.push(("model_rmse", c.name().to_string(), "rmse".into(), s.rmse.to_string()));
            }
            for (v, s) in &e.aggregates {
                rows.push(("model_rmse", format!("{v:?}"), "n".into(), s.n.to_string()));
                rows.push(("model_rmse", format!("{v:?}"), "rmse".into(), s.rmse.to_string()));
            }
            for o in &e.omitted {
                rows.push(("model_rmse", o.clone(), "omitted".into(), "no samples".into()));
            }
        }
        let mut human = |group: String, a: &HumanAgreement| {
            rows.push(("human", group.clone(), "rmse_human".into(), a.rmse_human.to_string()));
            if let Some(d) = a.rmse_human_dequantized {
                rows.push(("human", group.clone(), "rmse_human_dequantized".into(), d.to_string()));
            }
            if let Some(q) = a.quant_step {
                rows.push(("human", group.clone(), "quant_step".into(), q.to_string()));
            }
            rows.push(("human", group.clone(), "total_votes".into(), a.total_votes.to_string()));
            rows.push((
                "human",
                group.clone(),
                "samples_used".into(),
                a.samples_used.to_string(),
            ));
            rows.push((
                "human",
                group,
                "samples_excluded".into(),
                a.samples_excluded.to_string(),
            ));
        };
        if let Some(a) = &self.human.overall {
            human("all".into(), a);
        }
        for (c, a) in &self.human.per_corpus {
            human(c.name().into(), a);
        }
        for c in &self.human.missing {
            rows.push(("human", c.name().into(), "missing".into(), "no vote statistics".into()));
        }
        for (c, h) in &self.histograms {
            if h.absent {
                rows.push(("vote_histogram", c.name().into(), "absent".into(), "no counts".into()));
            }
            for (n, k) in &h.buckets {
                rows.push(("vote_histogram", c.name().into(), n.to_string(), k.to_string()));
            }
        }
        rows
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("section\tgroup\tkey\tvalue\n");
        for (s, g, k, v) in self.rows() {
            let _ = writeln!(out, "{s}\t{g}\t{k}\t{v}");
        }
        out
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for (s, g, k, v) in self.rows() {
            let _ = writeln!(out, "{}", json!({"section": s, "group": g, "key": k, "value": v}));
        }
        out
    }

    /// Rounded plain-text summary of the human-agreement block.
    pub fn human_summary(&self) -> String {
        let mut out = String::new();
        let mut line = |group: &str, a: &HumanAgreement| {
            let deq = a.rmse_human_dequantized.map_or("-".to_string(), |d| format!("{d:.4}"));
            let _ = writeln!(
                out,
                "{group}\trmse_human={:.4}\tdequantized={deq}\tvotes={}\tsamples={}",
                a.rmse_human, a.total_votes, a.samples_used
            );
        };
        if let Some(a) = &self.human.overall {
            line("all", a);
        }
        for (c, a) in &self.human.per_corpus {
            line(c.name(), a);
        }
        out
    }
}
