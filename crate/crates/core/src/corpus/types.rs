use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Customer,
    Agent,
}

impl Role {
    pub fn parse(s: &str) -> Option<Role> {
        match s {
            "customer" => Some(Role::Customer),
            "agent" => Some(Role::Agent),
            _ => None,
        }
    }
}

/// Handoff label of an utterance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HandoffLabel {
    Normal,
    Transferable,
}

impl HandoffLabel {
    pub const COUNT: usize = 2;
    pub const ALL: [HandoffLabel; 2] = [HandoffLabel::Normal, HandoffLabel::Transferable];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<HandoffLabel> {
        Self::ALL.get(i).copied()
    }

    pub fn parse(s: &str) -> Option<HandoffLabel> {
        match s {
            "normal" => Some(HandoffLabel::Normal),
            "transferable" => Some(HandoffLabel::Transferable),
            _ => None,
        }
    }
}

/// Dialogue-level satisfaction. Index order is fixed: well satisfied, met, unsatisfied.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SatisfactionLabel {
    WellSatisfied,
    Met,
    Unsatisfied,
}

impl SatisfactionLabel {
    pub const COUNT: usize = 3;
    pub const ALL: [SatisfactionLabel; 3] = [
        SatisfactionLabel::WellSatisfied,
        SatisfactionLabel::Met,
        SatisfactionLabel::Unsatisfied,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<SatisfactionLabel> {
        Self::ALL.get(i).copied()
    }

    pub fn parse(s: &str) -> Option<SatisfactionLabel> {
        match s {
            "well_satisfied" => Some(SatisfactionLabel::WellSatisfied),
            "met" => Some(SatisfactionLabel::Met),
            "unsatisfied" => Some(SatisfactionLabel::Unsatisfied),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SatisfactionLabel::WellSatisfied => "well_satisfied",
            SatisfactionLabel::Met => "met",
            SatisfactionLabel::Unsatisfied => "unsatisfied",
        }
    }

    /// Sentiment an utterance-level satisfaction distribution maps onto.
    pub fn sentiment(self) -> SentimentLabel {
        match self {
            SatisfactionLabel::WellSatisfied => SentimentLabel::Positive,
            SatisfactionLabel::Met => SentimentLabel::Neutral,
            SatisfactionLabel::Unsatisfied => SentimentLabel::Negative,
        }
    }
}

impl fmt::Display for SatisfactionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Utterance sentiment; evaluation only.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SentimentLabel {
    Positive,
    Neutral,
    Negative,
}

impl SentimentLabel {
    pub const COUNT: usize = 3;
    pub const ALL: [SentimentLabel; 3] = [
        SentimentLabel::Positive,
        SentimentLabel::Neutral,
        SentimentLabel::Negative,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn parse(s: &str) -> Option<SentimentLabel> {
        match s {
            "positive" => Some(SentimentLabel::Positive),
            "neutral" => Some(SentimentLabel::Neutral),
            "negative" => Some(SentimentLabel::Negative),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub role: Role,
    pub tokens: Vec<String>,
    pub handoff: HandoffLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sentiment: Option<SentimentLabel>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dialogue {
    pub id: String,
    pub satisfaction: SatisfactionLabel,
    pub utterances: Vec<Utterance>,
}

impl Dialogue {
    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn roles(&self) -> Vec<Role> {
        self.utterances.iter().map(|u| u.role).collect()
    }

    pub fn handoff_labels(&self) -> Vec<HandoffLabel> {
        self.utterances.iter().map(|u| u.handoff).collect()
    }

    pub fn has_customer(&self) -> bool {
        self.utterances.iter().any(|u| u.role == Role::Customer)
    }

    /// 1-based positions of transferable utterances.
    pub fn transfer_positions(&self) -> Vec<usize> {
        self.utterances
            .iter()
            .enumerate()
            .filter(|(_, u)| u.handoff == HandoffLabel::Transferable)
            .map(|(i, _)| i + 1)
            .collect()
    }

    /// Copy with every sentiment label removed; training paths only ever see these.
    pub fn without_sentiment(&self) -> Dialogue {
        let mut d = self.clone();
        for u in &mut d.utterances {
            u.sentiment = None;
        }
        d
    }

    /// First `len` utterances, keeping the dialogue-level label.
    pub fn prefix(&self, len: usize) -> Dialogue {
        Dialogue {
            id: self.id.clone(),
            satisfaction: self.satisfaction,
            utterances: self.utterances[..len.min(self.len())].to_vec(),
        }
    }
}
