use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::types::Dialogue;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub train: Vec<Dialogue>,
    pub dev: Vec<Dialogue>,
    pub test: Vec<Dialogue>,
}

/// Standard train/dev/test proportions.
pub const DEFAULT_RATIOS: (f64, f64, f64) = (0.8, 0.1, 0.1);

/// Seeded shuffle then partition. Dev and test sizes are `floor(n · ratio)`;
/// the remainder goes to train.
pub fn split_corpus(corpus: &[Dialogue], ratios: (f64, f64, f64), seed: u64) -> Result<Split> {
    let (tr, dv, te) = ratios;
    if (tr + dv + te - 1.0).abs() > 1e-9 || tr < 0.0 || dv < 0.0 || te < 0.0 {
        return Err(Error::config(format!(
            "split ratios must be non-negative and sum to 1, got ({tr}, {dv}, {te})"
        )));
    }
    let n = corpus.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    // the small epsilon keeps products like 0.1 * 250 from flooring down
    let n_dev = ((n as f64 * dv) + 1e-9).floor() as usize;
    let n_test = ((n as f64 * te) + 1e-9).floor() as usize;
    let n_train = n - n_dev - n_test;
    let take = |idx: &[usize]| idx.iter().map(|&i| corpus[i].clone()).collect::<Vec<_>>();
    Ok(Split {
        train: take(&order[..n_train]),
        dev: take(&order[n_train..n_train + n_dev]),
        test: take(&order[n_train + n_dev..]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::types::{HandoffLabel, Role, SatisfactionLabel, Utterance};
    use proptest::prelude::*;

    fn corpus(n: usize) -> Vec<Dialogue> {
        (0..n)
            .map(|i| Dialogue {
                id: format!("d{i}"),
                satisfaction: SatisfactionLabel::Met,
                utterances: vec![Utterance {
                    role: Role::Customer,
                    tokens: vec!["x".into()],
                    handoff: HandoffLabel::Normal,
                    sentiment: None,
                }],
            })
            .collect()
    }

    #[test]
    fn ten_thousand_split_sizes() {
        let s = split_corpus(&corpus(10_000), DEFAULT_RATIOS, 1).unwrap();
        assert_eq!((s.train.len(), s.dev.len(), s.test.len()), (8000, 1000, 1000));
    }

    #[test]
    fn deterministic_under_seed() {
        let c = corpus(10);
        assert_eq!(split_corpus(&c, DEFAULT_RATIOS, 9).unwrap(), split_corpus(&c, DEFAULT_RATIOS, 9).unwrap());
    }

    #[test]
    fn bad_ratios() {
        assert!(split_corpus(&corpus(3), (0.5, 0.2, 0.2), 0).is_err());
    }

    proptest! {
        #[test]
        fn split_is_partition(n in 0usize..120, seed in any::<u64>()) {
            let c = corpus(n);
            let s = split_corpus(&c, DEFAULT_RATIOS, seed).unwrap();
            let mut ids: Vec<String> = s.train.iter().chain(&s.dev).chain(&s.test).map(|d| d.id.clone()).collect();
            prop_assert_eq!(ids.len(), n);
            ids.sort();
            ids.dedup();
            prop_assert_eq!(ids.len(), n);
        }
    }
}
