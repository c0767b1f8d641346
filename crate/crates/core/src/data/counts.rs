use serde::{Deserialize, Serialize};

use super::{intent_counts, Dataset, LabelSpace, Split, Variant};

/// Expected counts for one split. `per_intent` lists the allowed number of
/// examples for every in-scope intent (one value for balanced variants).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitExpectation {
    pub total: usize,
    pub oos: usize,
    pub per_intent: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountExpectations {
    pub train: SplitExpectation,
    pub valid: SplitExpectation,
    pub test: SplitExpectation,
}

impl CountExpectations {
    /// Published counts of the four dataset variants.
    pub fn published(variant: Variant) -> Option<Self> {
        let s = |total, oos, per_intent: &[usize]| SplitExpectation {
            total,
            oos,
            per_intent: per_intent.to_vec(),
        };
        let valid = s(3100, 100, &[20]);
        let test = s(5500, 1000, &[30]);
        let train = match variant {
            Variant::Full => s(15100, 100, &[100]),
            Variant::Small => s(7600, 100, &[50]),
            Variant::Imbalanced => s(10625, 100, &[25, 50, 75, 100]),
            Variant::OosPlus => s(15250, 250, &[100]),
            Variant::Synthetic | Variant::Custom => return None,
        };
        Some(Self { train, valid, test })
    }

    pub fn split(&self, split: Split) -> &SplitExpectation {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountMismatch {
    pub split: Split,
    pub field: String,
    pub expected: String,
    pub actual: usize,
}

impl std::fmt::Display for CountMismatch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} {}: expected {}, found {}", self.split, self.field, self.expected, self.actual)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountReport {
    pub mismatches: Vec<CountMismatch>,
}

impl CountReport {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Compare split totals, oos counts and per-intent counts; every mismatch
/// is reported.
pub fn validate_counts(dataset: &Dataset, labels: &LabelSpace, expected: &CountExpectations) -> CountReport {
    let oos = labels.oos_intent();
    let mut mismatches = Vec::new();
    for split in Split::ALL {
        let exp = expected.split(split);
        let examples = dataset.split(split);
        let counts = intent_counts(examples, labels);
        let mut check = |field: String, expected: String, actual: usize, ok: bool| {
            if !ok {
                mismatches.push(CountMismatch {
                    split,
                    field,
                    expected,
                    actual,
                });
            }
        };
        check("total".into(), exp.total.to_string(), examples.len(), examples.len() == exp.total);
        check("oos".into(), exp.oos.to_string(), counts[oos], counts[oos] == exp.oos);
        for (i, &c) in counts.iter().enumerate() {
            if i != oos {
                let allowed = exp.per_intent.contains(&c);
                check(format!("intent {}", labels.intents()[i]), format!("one of {:?}", exp.per_intent), c, allowed);
            }
        }
    }
    CountReport { mismatches }
}
