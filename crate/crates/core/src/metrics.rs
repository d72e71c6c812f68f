//! Handoff, satisfaction and sentiment evaluation.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dialogue, HandoffLabel, Role, SatisfactionLabel, SentimentLabel};
use crate::decoders::map_sentiment;
use crate::error::{Error, Result};
use crate::model::{ForwardTrace, Model};

/// Tolerances reported as GT-I, GT-II, GT-III.
pub const GT_TOLERANCES: [usize; 3] = [1, 2, 3];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationScores {
    pub per_class: Vec<ClassScore>,
    pub macro_f1: f64,
    pub accuracy: f64,
}

/// Per-class precision/recall/F1, macro F1 and accuracy. Undefined precision,
/// recall or F1 (zero denominator) count as 0.
pub fn classification_scores(preds: &[usize], golds: &[usize], classes: usize) -> Result<ClassificationScores> {
    if preds.len() != golds.len() {
        return Err(Error::contract(format!(
            "classification_scores: {} predictions for {} gold labels",
            preds.len(),
            golds.len()
        )));
    }
    if let Some(bad) = preds.iter().chain(golds).find(|&&c| c >= classes) {
        return Err(Error::contract(format!("label index {bad} outside {classes} classes")));
    }
    let mut tp = vec![0usize; classes];
    let mut pred_n = vec![0usize; classes];
    let mut gold_n = vec![0usize; classes];
    for (&p, &g) in preds.iter().zip(golds) {
        pred_n[p] += 1;
        gold_n[g] += 1;
        if p == g {
            tp[p] += 1;
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let per_class: Vec<ClassScore> = (0..classes)
        .map(|c| {
            let precision = ratio(tp[c], pred_n[c]);
            let recall = ratio(tp[c], gold_n[c]);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassScore {
                precision,
                recall,
                f1,
                support: gold_n[c],
            }
        })
        .collect();
    let macro_f1 = per_class.iter().map(|c| c.f1).sum::<f64>() / classes as f64;
    Ok(ClassificationScores {
        per_class,
        macro_f1,
        accuracy: ratio(tp.iter().sum(), preds.len()),
    })
}

/// Golden Transfer within Tolerance for one dialogue, with the penalty
/// weight `lambda` fixed at 0.
///
/// Both sets empty → 1; exactly one empty → 0; otherwise 1 when some
/// predicted position lies within `tolerance` of some gold position.
pub fn gtt(pred: &[usize], gold: &[usize], tolerance: usize, lambda: f64) -> Result<f64> {
    if lambda != 0.0 {
        return Err(Error::Unimplemented(format!(
            "GT-T with lambda = {lambda}; only lambda = 0 is supported"
        )));
    }
    Ok(match (pred.is_empty(), gold.is_empty()) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        (false, false) => {
            let mut p = pred.to_vec();
            let mut g = gold.to_vec();
            p.sort_unstable();
            g.sort_unstable();
            // closest pair of two sorted lists via a merge walk
            let (mut i, mut j) = (0, 0);
            let mut hit = false;
            while i < p.len() && j < g.len() {
                if p[i].abs_diff(g[j]) <= tolerance {
                    hit = true;
                    break;
                }
                if p[i] < g[j] {
                    i += 1;
                } else {
                    j += 1;
                }
            }
            if hit {
                1.0
            } else {
                0.0
            }
        }
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MhchMetrics {
    pub f1_transferable: f64,
    pub f1_normal: f64,
    pub macro_f1: f64,
    pub accuracy: f64,
    /// GT-T keyed by tolerance `T`.
    pub gt: BTreeMap<usize, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsaMetrics {
    pub f1_well_satisfied: f64,
    pub f1_met: f64,
    pub f1_unsatisfied: f64,
    pub macro_f1: f64,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SentimentMetrics {
    pub f1_positive: f64,
    pub f1_neutral: f64,
    pub f1_negative: f64,
    pub macro_f1: f64,
    pub accuracy: f64,
    pub utterances: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mhch: Option<MhchMetrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ssa: Option<SsaMetrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sentiment: Option<SentimentMetrics>,
}

/// Which report sections to compute.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Sections {
    pub mhch: bool,
    pub ssa: bool,
    pub sentiment: bool,
}

impl Sections {
    pub const ALL: Sections = Sections {
        mhch: true,
        ssa: true,
        sentiment: true,
    };
    pub const TRAINING: Sections = Sections {
        mhch: true,
        ssa: true,
        sentiment: false,
    };
}

/// Per-dialogue evaluation record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DialogueResult {
    pub id: String,
    pub gold_transfers: Vec<usize>,
    pub predicted_transfers: Vec<usize>,
    pub gt: BTreeMap<usize, f64>,
    pub satisfaction_gold: SatisfactionLabel,
    pub satisfaction_predicted: Option<SatisfactionLabel>,
}

/// Scores precomputed traces against their gold dialogues.
pub fn evaluate_traces(
    corpus: &[Dialogue],
    traces: &[ForwardTrace],
    sections: Sections,
) -> Result<(MetricsReport, Vec<DialogueResult>)> {
    if corpus.len() != traces.len() {
        return Err(Error::contract("one trace per dialogue required"));
    }
    let mut report = MetricsReport::default();
    let mut results = Vec::with_capacity(corpus.len());
    let (mut hp, mut hg) = (Vec::new(), Vec::new());
    let (mut sp, mut sg) = (Vec::new(), Vec::new());
    let (mut ep, mut eg) = (Vec::new(), Vec::new());
    let mut gt_sums: BTreeMap<usize, f64> = GT_TOLERANCES.iter().map(|&t| (t, 0.0)).collect();

    for (d, t) in corpus.iter().zip(traces) {
        if t.len() != d.len() {
            return Err(Error::contract(format!("trace length differs for dialogue `{}`", d.id)));
        }
        let preds = t.handoff_predictions();
        let predicted_transfers: Vec<usize> = preds
            .iter()
            .enumerate()
            .filter(|(_, p)| **p == HandoffLabel::Transferable)
            .map(|(i, _)| i + 1)
            .collect();
        let gold_transfers = d.transfer_positions();
        let mut gt = BTreeMap::new();
        for &tol in &GT_TOLERANCES {
            let s = gtt(&predicted_transfers, &gold_transfers, tol, 0.0)?;
            *gt_sums.get_mut(&tol).unwrap() += s;
            gt.insert(tol, s);
        }
        hp.extend(preds.iter().map(|p| p.index()));
        hg.extend(d.utterances.iter().map(|u| u.handoff.index()));

        let satisfaction_predicted = t.satisfaction_prediction();
        if sections.ssa {
            let p = satisfaction_predicted.ok_or_else(|| {
                Error::data(format!("dialogue `{}` has no satisfaction prediction", d.id))
            })?;
            sp.push(p.index());
            sg.push(d.satisfaction.index());
        }
        if sections.sentiment {
            if let Some(z) = t.z_tensor() {
                for (pos, label) in map_sentiment(&z, &t.roles) {
                    let u = &d.utterances[pos];
                    if let (Role::Customer, Some(gold)) = (u.role, u.sentiment) {
                        ep.push(label.index());
                        eg.push(gold.index());
                    }
                }
            }
        }
        results.push(DialogueResult {
            id: d.id.clone(),
            gold_transfers,
            predicted_transfers,
            gt,
            satisfaction_gold: d.satisfaction,
            satisfaction_predicted,
        });
    }

    if sections.mhch {
        let s = classification_scores(&hp, &hg, HandoffLabel::COUNT)?;
        let n = corpus.len().max(1) as f64;
        report.mhch = Some(MhchMetrics {
            f1_transferable: s.per_class[HandoffLabel::Transferable.index()].f1,
            f1_normal: s.per_class[HandoffLabel::Normal.index()].f1,
            macro_f1: s.macro_f1,
            accuracy: s.accuracy,
            gt: gt_sums.into_iter().map(|(t, v)| (t, v / n)).collect(),
        });
    }
    if sections.ssa {
        let s = classification_scores(&sp, &sg, SatisfactionLabel::COUNT)?;
        report.ssa = Some(SsaMetrics {
            f1_well_satisfied: s.per_class[0].f1,
            f1_met: s.per_class[1].f1,
            f1_unsatisfied: s.per_class[2].f1,
            macro_f1: s.macro_f1,
            accuracy: s.accuracy,
        });
    }
    if sections.sentiment {
        if eg.is_empty() {
            return Err(Error::data(
                "sentiment evaluation requested but the corpus has no customer sentiment labels",
            ));
        }
        let s = classification_scores(&ep, &eg, SentimentLabel::COUNT)?;
        report.sentiment = Some(SentimentMetrics {
            f1_positive: s.per_class[0].f1,
            f1_neutral: s.per_class[1].f1,
            f1_negative: s.per_class[2].f1,
            macro_f1: s.macro_f1,
            accuracy: s.accuracy,
            utterances: eg.len(),
        });
    }
    Ok((report, results))
}

/// Runs the model on every dialogue (in parallel, results kept in corpus order)
/// and scores the requested sections.
pub fn evaluate_model(
    model: &Model,
    corpus: &[Dialogue],
    sections: Sections,
) -> Result<(MetricsReport, Vec<DialogueResult>)> {
    let traces: Vec<ForwardTrace> = corpus
        .par_iter()
        .map(|d| model.predict(d))
        .collect::<Result<_>>()?;
    evaluate_traces(corpus, &traces, sections)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn brute_gtt(pred: &[usize], gold: &[usize], t: usize) -> f64 {
        if pred.is_empty() && gold.is_empty() {
            return 1.0;
        }
        for p in pred {
            for g in gold {
                if p.abs_diff(*g) <= t {
                    return 1.0;
                }
            }
        }
        0.0
    }

    fn brute_scores(preds: &[usize], golds: &[usize], classes: usize) -> Vec<(f64, f64, f64)> {
        let mut confusion = vec![vec![0usize; classes]; classes];
        for (&p, &g) in preds.iter().zip(golds) {
            confusion[g][p] += 1;
        }
        (0..classes)
            .map(|c| {
                let tp = confusion[c][c] as f64;
                let col: usize = (0..classes).map(|g| confusion[g][c]).sum();
                let row: usize = confusion[c].iter().sum();
                let p = if col == 0 { 0.0 } else { tp / col as f64 };
                let r = if row == 0 { 0.0 } else { tp / row as f64 };
                let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
                (p, r, f)
            })
            .collect()
    }

    #[test]
    fn identical_labels_score_one() {
        let s = classification_scores(&[0, 1, 2, 1], &[0, 1, 2, 1], 3).unwrap();
        assert!(s.per_class.iter().all(|c| c.f1 == 1.0));
        assert_eq!(s.accuracy, 1.0);
        assert_eq!(s.macro_f1, 1.0);
    }

    #[test]
    fn all_normal_predictor() {
        let s = classification_scores(&[0, 0, 0, 0], &[1, 0, 1, 0], 2).unwrap();
        assert_eq!(s.per_class[1].f1, 0.0);
        assert_eq!(s.accuracy, 0.5);
    }

    #[test]
    fn hand_counted_example() {
        // T = 1, N = 0: preds [T, N, T], golds [T, T, N]
        let s = classification_scores(&[1, 0, 1], &[1, 1, 0], 2).unwrap();
        let t = &s.per_class[1];
        assert_eq!((t.precision, t.recall, t.f1), (0.5, 0.5, 0.5));
        assert!(classification_scores(&[1], &[1, 0], 2).is_err());
    }

    #[test]
    fn gtt_examples() {
        assert_eq!(gtt(&[4], &[5], 1, 0.0).unwrap(), 1.0);
        assert_eq!(gtt(&[2], &[5], 2, 0.0).unwrap(), 0.0);
        assert_eq!(gtt(&[], &[], 1, 0.0).unwrap(), 1.0);
        assert_eq!(gtt(&[3], &[], 1, 0.0).unwrap(), 0.0);
        assert!(matches!(gtt(&[3], &[3], 1, 0.5), Err(Error::Unimplemented(_))));
    }

    #[test]
    fn gtt_matches_brute_force() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        for _ in 0..1000 {
            let l = rng.gen_range(1..30);
            let pick = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<usize> {
                (1..=l).filter(|_| rng.gen_bool(0.15)).collect()
            };
            let (p, g) = (pick(&mut rng), pick(&mut rng));
            let t = rng.gen_range(0..5);
            assert_eq!(gtt(&p, &g, t, 0.0).unwrap(), brute_gtt(&p, &g, t), "{p:?} {g:?} {t}");
        }
    }

    proptest! {
        #[test]
        fn scores_match_confusion_matrix(pairs in proptest::collection::vec((0usize..3, 0usize..3), 0..60)) {
            let (p, g): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
            let s = classification_scores(&p, &g, 3).unwrap();
            let b = brute_scores(&p, &g, 3);
            for (c, (bp, br, bf)) in b.into_iter().enumerate() {
                prop_assert_eq!(s.per_class[c].precision, bp);
                prop_assert_eq!(s.per_class[c].recall, br);
                prop_assert_eq!(s.per_class[c].f1, bf);
            }
            let mean = s.per_class.iter().map(|c| c.f1).sum::<f64>() / 3.0;
            prop_assert_eq!(s.macro_f1, mean);
        }

        #[test]
        fn gtt_monotone_in_tolerance(p in proptest::collection::btree_set(1usize..25, 0..5),
                                     g in proptest::collection::btree_set(1usize..25, 0..5),
                                     t in 0usize..6) {
            let p: Vec<_> = p.into_iter().collect();
            let g: Vec<_> = g.into_iter().collect();
            prop_assert!(gtt(&p, &g, t, 0.0).unwrap() <= gtt(&p, &g, t + 1, 0.0).unwrap());
        }
    }
}
