use serde::Serialize;

use super::types::{Dialogue, HandoffLabel, SatisfactionLabel};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CorpusStats {
    pub dialogues: usize,
    pub well_satisfied: usize,
    pub met: usize,
    pub unsatisfied: usize,
    pub transferable: usize,
    pub normal: usize,
    /// Mean utterances per dialogue, rounded to 2 decimals.
    pub avg_utterances: f64,
    /// Mean tokens per utterance, rounded to 2 decimals.
    pub avg_tokens: f64,
}

impl CorpusStats {
    pub fn satisfaction_count(&self, label: SatisfactionLabel) -> usize {
        match label {
            SatisfactionLabel::WellSatisfied => self.well_satisfied,
            SatisfactionLabel::Met => self.met,
            SatisfactionLabel::Unsatisfied => self.unsatisfied,
        }
    }
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

pub fn corpus_stats(corpus: &[Dialogue]) -> Result<CorpusStats> {
    if corpus.is_empty() {
        return Err(Error::data("corpus_stats on an empty corpus"));
    }
    let mut sat = [0usize; SatisfactionLabel::COUNT];
    let (mut transferable, mut normal, mut tokens) = (0, 0, 0);
    for d in corpus {
        sat[d.satisfaction.index()] += 1;
        for u in &d.utterances {
            match u.handoff {
                HandoffLabel::Transferable => transferable += 1,
                HandoffLabel::Normal => normal += 1,
            }
            tokens += u.tokens.len();
        }
    }
    let utterances = transferable + normal;
    Ok(CorpusStats {
        dialogues: corpus.len(),
        well_satisfied: sat[0],
        met: sat[1],
        unsatisfied: sat[2],
        transferable,
        normal,
        avg_utterances: round2(utterances as f64 / corpus.len() as f64),
        avg_tokens: round2(if utterances == 0 {
            0.0
        } else {
            tokens as f64 / utterances as f64
        }),
    })
}

/// Relative handoff position histograms, one per satisfaction rating.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HandoffHistogram {
    pub bins: usize,
    /// Normalized mass per bin, indexed by satisfaction label.
    pub histograms: [Vec<f64>; 3],
    /// Number of transferable utterances per rating.
    pub counts: [usize; 3],
    /// Mean relative position `t / L` per rating (0 when there are none).
    pub mean_position: [f64; 3],
}

impl HandoffHistogram {
    pub fn for_label(&self, label: SatisfactionLabel) -> &[f64] {
        &self.histograms[label.index()]
    }
}

/// Bins every transferable utterance by `t / L` over `[0, 1]`, separately per rating.
pub fn handoff_position_hist(corpus: &[Dialogue], bins: usize) -> Result<HandoffHistogram> {
    if bins == 0 {
        return Err(Error::contract("handoff_position_hist needs at least one bin"));
    }
    let mut histograms: [Vec<f64>; 3] = std::array::from_fn(|_| vec![0.0; bins]);
    let mut counts = [0usize; 3];
    let mut sums = [0.0f64; 3];
    for d in corpus {
        let l = d.len() as f64;
        let s = d.satisfaction.index();
        for t in d.transfer_positions() {
            let pos = t as f64 / l;
            let bin = ((pos * bins as f64).floor() as usize).min(bins - 1);
            histograms[s][bin] += 1.0;
            counts[s] += 1;
            sums[s] += pos;
        }
    }
    let mut mean_position = [0.0; 3];
    for s in 0..3 {
        if counts[s] > 0 {
            let n = counts[s] as f64;
            histograms[s].iter_mut().for_each(|v| *v /= n);
            mean_position[s] = sums[s] / n;
        }
    }
    Ok(HandoffHistogram {
        bins,
        histograms,
        counts,
        mean_position,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::types::{Role, Utterance};

    fn dialogue(labels: &[HandoffLabel], sat: SatisfactionLabel) -> Dialogue {
        Dialogue {
            id: "x".into(),
            satisfaction: sat,
            utterances: labels
                .iter()
                .enumerate()
                .map(|(i, &h)| Utterance {
                    role: if i % 2 == 0 { Role::Customer } else { Role::Agent },
                    tokens: vec!["a".into(); i + 1],
                    handoff: h,
                    sentiment: None,
                })
                .collect(),
        }
    }

    #[test]
    fn stats_counts() {
        use HandoffLabel::*;
        let c = vec![
            dialogue(&[Normal, Transferable], SatisfactionLabel::Met),
            dialogue(&[Normal], SatisfactionLabel::WellSatisfied),
        ];
        let s = corpus_stats(&c).unwrap();
        assert_eq!((s.transferable, s.normal), (1, 2));
        assert_eq!((s.well_satisfied, s.met, s.unsatisfied), (1, 1, 0));
        assert_eq!(s.avg_utterances, 1.5);
        assert_eq!(s.avg_tokens, 1.33);
        assert!(corpus_stats(&[]).is_err());
    }

    #[test]
    fn single_transfer_at_end_fills_last_bin() {
        use HandoffLabel::*;
        let c = vec![dialogue(&[Normal, Normal, Transferable], SatisfactionLabel::Unsatisfied)];
        let h = handoff_position_hist(&c, 5).unwrap();
        assert_eq!(h.for_label(SatisfactionLabel::Unsatisfied), &[0.0, 0.0, 0.0, 0.0, 1.0]);
        assert!(h.for_label(SatisfactionLabel::Met).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn no_transfers_gives_zero_histograms() {
        let c = vec![dialogue(&[HandoffLabel::Normal; 4], SatisfactionLabel::Met)];
        let h = handoff_position_hist(&c, 3).unwrap();
        assert!(h.histograms.iter().flatten().all(|v| *v == 0.0));
        assert!(handoff_position_hist(&c, 0).is_err());
    }
}
