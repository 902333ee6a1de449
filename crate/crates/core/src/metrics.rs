//! Micro precision / recall / F1 and relation-family bookkeeping.
//!
//! Excluded labels (non-trigger and padding for triggers, None for events, NA
//! for relations) never count as true or false positives, and gold instances
//! carrying them never count as misses.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task: String,
    /// Percentages in `[0, 100]`.
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    /// Gold instances with a non-excluded label.
    pub support: usize,
    pub instances: usize,
    pub excluded: Vec<String>,
    /// Set when any of P, R or F1 hit a zero denominator and were reported as 0.
    pub zero_division: bool,
}

/// `2pr / (p + r)`, or 0 when `p + r == 0`.
pub fn harmonic_f1(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

/// Raw pooled counts `(tp, fp, fn)`.
pub fn micro_counts(
    pred: &[usize],
    gold: &[usize],
    excluded: &[usize],
) -> Result<(usize, usize, usize)> {
    if pred.len() != gold.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} gold labels",
            pred.len(),
            gold.len()
        )));
    }
    let skip: BTreeSet<usize> = excluded.iter().copied().collect();
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (&p, &g) in pred.iter().zip(gold) {
        let p_counts = !skip.contains(&p);
        let g_counts = !skip.contains(&g);
        if p == g {
            if p_counts {
                tp += 1;
            }
            continue;
        }
        if p_counts {
            fp += 1;
        }
        if g_counts {
            fn_ += 1;
        }
    }
    Ok((tp, fp, fn_))
}

pub fn micro_prf(
    task: &str,
    pred: &[usize],
    gold: &[usize],
    excluded: &[usize],
    label_names: &[String],
) -> Result<MetricsReport> {
    let (tp, fp, fn_) = micro_counts(pred, gold, excluded)?;
    Ok(report_from_counts(
        task,
        tp,
        fp,
        fn_,
        pred.len(),
        excluded,
        label_names,
    ))
}

pub fn report_from_counts(
    task: &str,
    tp: usize,
    fp: usize,
    fn_: usize,
    instances: usize,
    excluded: &[usize],
    label_names: &[String],
) -> MetricsReport {
    let ratio = |num: usize, den: usize| {
        if den == 0 {
            None
        } else {
            Some(100.0 * num as f64 / den as f64)
        }
    };
    let p = ratio(tp, tp + fp);
    let r = ratio(tp, tp + fn_);
    let f1 = harmonic_f1(p.unwrap_or(0.0), r.unwrap_or(0.0));
    let zero_division = p.is_none() || r.is_none() || (p.unwrap_or(0.0) + r.unwrap_or(0.0)) == 0.0;
    let mut excluded_names: Vec<String> = excluded
        .iter()
        .map(|&e| label_names.get(e).cloned().unwrap_or_else(|| e.to_string()))
        .collect();
    excluded_names.sort();
    excluded_names.dedup();
    MetricsReport {
        task: task.to_string(),
        precision: p.unwrap_or(0.0),
        recall: r.unwrap_or(0.0),
        f1,
        true_positives: tp,
        false_positives: fp,
        false_negatives: fn_,
        support: tp + fn_,
        instances,
        excluded: excluded_names,
        zero_division,
    }
}

/// Score of predicting the most frequent non-excluded gold label everywhere.
/// Ties go to the smaller label index.
pub fn majority_baseline(
    task: &str,
    gold: &[usize],
    excluded: &[usize],
    label_names: &[String],
) -> Result<MetricsReport> {
    let mut counts = std::collections::BTreeMap::new();
    for g in gold.iter().filter(|g| !excluded.contains(g)) {
        *counts.entry(*g).or_insert(0usize) += 1;
    }
    let best = counts.iter().fold(
        None,
        |acc: Option<(usize, usize)>, (&label, &n)| match acc {
            Some((_, m)) if m >= n => acc,
            _ => Some((label, n)),
        },
    );
    match best {
        Some((label, _)) => micro_prf(task, &vec![label; gold.len()], gold, excluded, label_names),
        None => micro_prf(task, gold, gold, excluded, label_names),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RelationFamily {
    Temporal,
    Causal,
    Subevent,
    Other,
}

impl RelationFamily {
    pub const ALL: [RelationFamily; 4] = [
        RelationFamily::Temporal,
        RelationFamily::Causal,
        RelationFamily::Subevent,
        RelationFamily::Other,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RelationFamily::Temporal => "temporal",
            RelationFamily::Causal => "causal",
            RelationFamily::Subevent => "subevent",
            RelationFamily::Other => "other",
        }
    }
}

/// Family of a relation label, matched case-insensitively. Unknown labels
/// fall into [`RelationFamily::Other`].
pub fn relation_family(label: &str) -> RelationFamily {
    match label.to_ascii_uppercase().replace('_', "-").as_str() {
        "BEFORE" | "AFTER" | "OVERLAP" | "CONTAINS" | "SIMULTANEOUS" | "BEGINS-ON" | "ENDS-ON"
        | "EQUAL" => RelationFamily::Temporal,
        "CAUSE" | "CAUSEDBY" | "CAUSED-BY" | "PRECONDITION" => RelationFamily::Causal,
        "SUBEVENT" | "SUB-EVENT" => RelationFamily::Subevent,
        _ => RelationFamily::Other,
    }
}

/// Evaluation regime for relation extraction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EreRegime {
    /// One report per relation family, other families mapped to NA.
    #[serde(rename = "+joint")]
    PerFamily,
    /// All relation families pooled into one report.
    #[serde(rename = "all-joint")]
    AllJoint,
}

impl FromStr for EreRegime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "+joint" | "joint" | "per-family" => Ok(EreRegime::PerFamily),
            "all-joint" | "all" => Ok(EreRegime::AllJoint),
            other => Err(Error::Config(format!("unknown relation regime '{other}'"))),
        }
    }
}

/// Relation reports under `regime`. `relations` names every label index and
/// `na` is the no-relation index.
pub fn ere_regime_eval(
    pred: &[usize],
    gold: &[usize],
    relations: &[String],
    na: usize,
    regime: EreRegime,
) -> Result<Vec<MetricsReport>> {
    if let Some(&bad) = pred.iter().chain(gold).find(|&&l| l >= relations.len()) {
        return Err(Error::Shape(format!(
            "relation index {bad} outside the inventory"
        )));
    }
    match regime {
        EreRegime::AllJoint => Ok(vec![micro_prf(
            "ere/all-joint",
            pred,
            gold,
            &[na],
            relations,
        )?]),
        EreRegime::PerFamily => {
            let mut out = Vec::new();
            for family in RelationFamily::ALL {
                let members: BTreeSet<usize> = (0..relations.len())
                    .filter(|&r| r != na && relation_family(&relations[r]) == family)
                    .collect();
                if members.is_empty() {
                    continue;
                }
                let project = |l: &usize| if members.contains(l) { *l } else { na };
                let p: Vec<usize> = pred.iter().map(project).collect();
                let g: Vec<usize> = gold.iter().map(project).collect();
                out.push(micro_prf(
                    &format!("ere/{}", family.name()),
                    &p,
                    &g,
                    &[na],
                    relations,
                )?);
            }
            Ok(out)
        }
    }
}

/// Aligned plain-text table, one row per report.
pub fn format_table(reports: &[MetricsReport]) -> String {
    let width = reports
        .iter()
        .map(|r| r.task.len())
        .max()
        .unwrap_or(4)
        .max(4);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$}  {:>7}  {:>7}  {:>7}  {:>8}",
        "task", "P", "R", "F1", "support"
    );
    for r in reports {
        let flag = if r.zero_division {
            "  (zero division)"
        } else {
            ""
        };
        let _ = writeln!(
            out,
            "{:<width$}  {:>7.2}  {:>7.2}  {:>7.2}  {:>8}{flag}",
            r.task, r.precision, r.recall, r.f1, r.support
        );
    }
    out
}
