//! Synthetic customer-service dialogues whose labels follow known rules.
//!
//! Dialogues alternate customer/agent turns starting with the customer.
//! Each customer turn independently becomes a complaint with probability
//! `complaint_rate`. The rules:
//!
//! 1. a customer utterance containing the negative token is transferable and negative;
//! 2. the agent utterance right before a complaint is transferable (it carries
//!    the failure token, so the label is visible without looking ahead);
//! 3. a dialogue whose last transferable utterance lies in the final third
//!    (`3t > 2L`) is unsatisfied, one with only earlier transfers is met, and
//!    one without transfers is well satisfied.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::types::{Dialogue, HandoffLabel, Role, SatisfactionLabel, SentimentLabel, Utterance};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub dialogues: usize,
    /// Number of neutral filler tokens.
    pub vocab_size: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub min_tokens: usize,
    pub max_tokens: usize,
    /// Per-customer-turn complaint probability.
    pub complaint_rate: f64,
    /// Probability that a non-complaint customer turn is a thank-you (positive).
    pub thanks_rate: f64,
    pub negative_token: String,
    pub failure_token: String,
    pub thanks_token: String,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            dialogues: 250,
            vocab_size: 40,
            min_len: 6,
            max_len: 12,
            min_tokens: 3,
            max_tokens: 7,
            complaint_rate: 0.2,
            thanks_rate: 0.3,
            negative_token: "terrible".into(),
            failure_token: "cannot_help".into(),
            thanks_token: "thanks".into(),
        }
    }
}

impl SynthSpec {
    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::config(format!("synthetic corpus spec: {m}")));
        if self.dialogues == 0 {
            return bad("dialogues must be positive");
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return bad("need 1 <= min_len <= max_len");
        }
        if self.min_tokens == 0 || self.min_tokens > self.max_tokens {
            return bad("need 1 <= min_tokens <= max_tokens");
        }
        if self.vocab_size == 0 {
            return bad("vocab_size must be positive");
        }
        if !(0.0..=1.0).contains(&self.complaint_rate) || !(0.0..=1.0).contains(&self.thanks_rate) {
            return bad("rates must lie in [0, 1]");
        }
        let special = [&self.negative_token, &self.failure_token, &self.thanks_token];
        if special.iter().any(|t| t.is_empty() || t.contains(char::is_whitespace)) {
            return bad("special tokens must be non-empty single tokens");
        }
        if special[0] == special[1] || special[0] == special[2] || special[1] == special[2] {
            return bad("special tokens must be distinct");
        }
        Ok(())
    }

    fn filler(&self, i: usize) -> String {
        format!("w{i}")
    }
}

/// Ground-truth tally kept while generating.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct SynthTally {
    pub dialogues: usize,
    pub complaints: usize,
    pub transferable: usize,
    pub normal: usize,
    pub satisfaction: [usize; 3],
}

/// Rule-3 label for a dialogue of length `len` with the given 1-based transfer positions.
pub fn planted_satisfaction(len: usize, transfers: &[usize]) -> SatisfactionLabel {
    match transfers.iter().max() {
        None => SatisfactionLabel::WellSatisfied,
        Some(&t) if 3 * t > 2 * len => SatisfactionLabel::Unsatisfied,
        Some(_) => SatisfactionLabel::Met,
    }
}

pub fn synthesize_corpus(spec: &SynthSpec, seed: u64) -> Result<(Vec<Dialogue>, SynthTally)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tally = SynthTally::default();
    let mut corpus = Vec::with_capacity(spec.dialogues);
    for n in 0..spec.dialogues {
        let len = rng.gen_range(spec.min_len..=spec.max_len);
        let complaint: Vec<bool> = (0..len)
            .map(|t| t % 2 == 0 && rng.gen_bool(spec.complaint_rate))
            .collect();
        let mut utterances = Vec::with_capacity(len);
        for t in 0..len {
            let role = if t % 2 == 0 { Role::Customer } else { Role::Agent };
            let mut tokens: Vec<String> = (0..rng.gen_range(spec.min_tokens..=spec.max_tokens))
                .map(|_| spec.filler(rng.gen_range(0..spec.vocab_size)))
                .collect();
            let (handoff, sentiment) = match role {
                Role::Customer if complaint[t] => {
                    tally.complaints += 1;
                    insert_random(&mut tokens, &spec.negative_token, &mut rng);
                    (HandoffLabel::Transferable, Some(SentimentLabel::Negative))
                }
                Role::Customer => {
                    if rng.gen_bool(spec.thanks_rate) {
                        insert_random(&mut tokens, &spec.thanks_token, &mut rng);
                        (HandoffLabel::Normal, Some(SentimentLabel::Positive))
                    } else {
                        (HandoffLabel::Normal, Some(SentimentLabel::Neutral))
                    }
                }
                Role::Agent if complaint.get(t + 1).copied().unwrap_or(false) => {
                    insert_random(&mut tokens, &spec.failure_token, &mut rng);
                    (HandoffLabel::Transferable, None)
                }
                Role::Agent => (HandoffLabel::Normal, None),
            };
            match handoff {
                HandoffLabel::Transferable => tally.transferable += 1,
                HandoffLabel::Normal => tally.normal += 1,
            }
            utterances.push(Utterance {
                role,
                tokens,
                handoff,
                sentiment,
            });
        }
        let transfers: Vec<usize> = utterances
            .iter()
            .enumerate()
            .filter(|(_, u)| u.handoff == HandoffLabel::Transferable)
            .map(|(i, _)| i + 1)
            .collect();
        let satisfaction = planted_satisfaction(len, &transfers);
        tally.satisfaction[satisfaction.index()] += 1;
        tally.dialogues += 1;
        corpus.push(Dialogue {
            id: format!("synth-{n:05}"),
            satisfaction,
            utterances,
        });
    }
    Ok((corpus, tally))
}

fn insert_random(tokens: &mut Vec<String>, token: &str, rng: &mut impl Rng) {
    let at = rng.gen_range(0..=tokens.len());
    tokens.insert(at, token.to_string());
    // keep length within range by dropping a filler when possible
    if tokens.len() > 1 {
        let fillers: Vec<usize> = (0..tokens.len()).filter(|&i| i != at).collect();
        if let Some(&drop) = fillers.choose(rng) {
            tokens.remove(drop);
        }
    }
}

/// A label that disagrees with the planted rules.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RuleMismatch {
    pub dialogue: String,
    /// 1-based utterance position, or `None` for the dialogue label.
    pub position: Option<usize>,
    pub detail: String,
}

/// Re-derives every label from the tokens and returns all disagreements.
pub fn check_planted_rules(corpus: &[Dialogue], spec: &SynthSpec) -> Vec<RuleMismatch> {
    let mut out = Vec::new();
    for d in corpus {
        let is_complaint = |u: &Utterance| {
            u.role == Role::Customer && u.tokens.iter().any(|t| *t == spec.negative_token)
        };
        let mut transfers = Vec::new();
        for (i, u) in d.utterances.iter().enumerate() {
            let expected = match u.role {
                Role::Customer => is_complaint(u),
                Role::Agent => d.utterances.get(i + 1).is_some_and(is_complaint),
            };
            let expected_label = if expected {
                transfers.push(i + 1);
                HandoffLabel::Transferable
            } else {
                HandoffLabel::Normal
            };
            if u.handoff != expected_label {
                out.push(RuleMismatch {
                    dialogue: d.id.clone(),
                    position: Some(i + 1),
                    detail: format!("handoff {:?}, rules give {:?}", u.handoff, expected_label),
                });
            }
            if u.role == Role::Customer && is_complaint(u) && u.sentiment != Some(SentimentLabel::Negative) {
                out.push(RuleMismatch {
                    dialogue: d.id.clone(),
                    position: Some(i + 1),
                    detail: format!("complaint with sentiment {:?}", u.sentiment),
                });
            }
        }
        let sat = planted_satisfaction(d.len(), &transfers);
        if sat != d.satisfaction {
            out.push(RuleMismatch {
                dialogue: d.id.clone(),
                position: None,
                detail: format!("satisfaction {}, rules give {sat}", d.satisfaction),
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::io::to_jsonl_line;
    use crate::corpus::stats::{corpus_stats, handoff_position_hist};

    #[test]
    fn zero_complaints_all_well_satisfied() {
        let spec = SynthSpec {
            complaint_rate: 0.0,
            dialogues: 50,
            ..SynthSpec::default()
        };
        let (c, tally) = synthesize_corpus(&spec, 3).unwrap();
        assert!(c.iter().all(|d| d.satisfaction == SatisfactionLabel::WellSatisfied));
        assert_eq!(tally.transferable, 0);
        assert!(c.iter().flat_map(|d| &d.utterances).all(|u| u.handoff == HandoffLabel::Normal));
    }

    #[test]
    fn deterministic_bytes() {
        let spec = SynthSpec::default();
        let render = |c: &[Dialogue]| c.iter().map(to_jsonl_line).collect::<Vec<_>>().join("\n");
        let a = synthesize_corpus(&spec, 42).unwrap().0;
        let b = synthesize_corpus(&spec, 42).unwrap().0;
        assert_eq!(render(&a), render(&b));
        let c = synthesize_corpus(&spec, 43).unwrap().0;
        assert_ne!(render(&a), render(&c));
    }

    #[test]
    fn tally_matches_stats_and_rules_hold() {
        let spec = SynthSpec {
            dialogues: 200,
            complaint_rate: 0.2,
            ..SynthSpec::default()
        };
        let (c, tally) = synthesize_corpus(&spec, 7).unwrap();
        let stats = corpus_stats(&c).unwrap();
        assert_eq!(stats.dialogues, tally.dialogues);
        assert_eq!(stats.transferable, tally.transferable);
        assert_eq!(stats.normal, tally.normal);
        assert_eq!(
            [stats.well_satisfied, stats.met, stats.unsatisfied],
            tally.satisfaction
        );
        assert!(check_planted_rules(&c, &spec).is_empty());
        assert!(tally.satisfaction.iter().all(|&n| n > 0));
    }

    #[test]
    fn late_handoffs_in_unsatisfied() {
        let (c, _) = synthesize_corpus(&SynthSpec::default(), 5).unwrap();
        let h = handoff_position_hist(&c, 10).unwrap();
        let us = h.mean_position[SatisfactionLabel::Unsatisfied.index()];
        let met = h.mean_position[SatisfactionLabel::Met.index()];
        assert!(us > met, "unsatisfied {us} vs met {met}");
        for s in 0..3 {
            if h.counts[s] > 0 {
                assert!((h.histograms[s].iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn checker_catches_tampering() {
        let spec = SynthSpec::default();
        let (mut c, _) = synthesize_corpus(&spec, 1).unwrap();
        let d = c
            .iter_mut()
            .find(|d| d.satisfaction == SatisfactionLabel::Met)
            .unwrap();
        d.satisfaction = SatisfactionLabel::WellSatisfied;
        assert_eq!(check_planted_rules(&c, &spec).len(), 1);
    }

    #[test]
    fn invalid_specs() {
        let zero = SynthSpec {
            min_len: 0,
            ..SynthSpec::default()
        };
        assert!(synthesize_corpus(&zero, 0).is_err());
        let swapped = SynthSpec {
            min_tokens: 5,
            max_tokens: 2,
            ..SynthSpec::default()
        };
        assert!(synthesize_corpus(&swapped, 0).is_err());
    }
}
