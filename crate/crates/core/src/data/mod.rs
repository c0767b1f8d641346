//! Dataset loading and label spaces.
//!
//! The dataset file is a JSON object with keys `train`, `val`, `test`,
//! `oos_train`, `oos_val` and `oos_test`, each a list of
//! `[utterance, intent]` pairs. The out-of-scope lists are merged into the
//! matching split with intent and domain label [`OOS`].

mod counts;
mod synth;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use counts::{validate_counts, CountExpectations, CountMismatch, CountReport, SplitExpectation};
pub use synth::{synth_dataset, SynthConfig};

use crate::{Error, Result};

/// Label of the out-of-scope class in both heads.
pub const OOS: &str = "oos";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    Small,
    Imbalanced,
    OosPlus,
    Synthetic,
    Custom,
}

impl Variant {
    /// Infer the variant from the released file names (`data_full.json` etc.).
    pub fn from_path(path: &Path) -> Self {
        match path.file_stem().and_then(|s| s.to_str()) {
            Some("data_full") => Variant::Full,
            Some("data_small") => Variant::Small,
            Some("data_imbalanced") => Variant::Imbalanced,
            Some("data_oos_plus") => Variant::OosPlus,
            _ => Variant::Custom,
        }
    }

    /// Epoch budget used for this variant; the largest training set needs fewer.
    pub fn default_max_epochs(self) -> usize {
        match self {
            Variant::OosPlus => 5,
            _ => 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    fn keys(self) -> (&'static str, &'static str) {
        match self {
            Split::Train => ("train", "oos_train"),
            Split::Valid => ("val", "oos_val"),
            Split::Test => ("test", "oos_test"),
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" | "val" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?} (train | valid | test)"))),
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledExample {
    pub text: String,
    pub domain: usize,
    pub intent: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Vec<LabeledExample>,
    pub valid: Vec<LabeledExample>,
    pub test: Vec<LabeledExample>,
    pub variant: Variant,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[LabeledExample] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    pub fn all_texts(&self) -> impl Iterator<Item = &str> {
        self.train.iter().chain(&self.valid).chain(&self.test).map(|e| e.text.as_str())
    }
}

/// Domain name to the intents it groups.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DomainMap(pub BTreeMap<String, Vec<String>>);

impl DomainMap {
    pub fn from_json(text: &str) -> Result<Self> {
        let map: DomainMap = serde_json::from_str(text)
            .map_err(|e| Error::Data(format!("domain map must be an object of string lists: {e}")))?;
        map.validate()?;
        Ok(map)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    fn validate(&self) -> Result<()> {
        if self.0.is_empty() {
            return Err(Error::Data("domain map is empty".into()));
        }
        let mut seen = BTreeSet::new();
        for (domain, intents) in &self.0 {
            if domain == OOS {
                return Err(Error::Data(format!("domain map must not declare the {OOS:?} domain")));
            }
            if intents.is_empty() {
                return Err(Error::Data(format!("domain {domain:?} has no intents")));
            }
            for intent in intents {
                if intent == OOS {
                    return Err(Error::Data(format!("domain {domain:?} lists the reserved intent {OOS:?}")));
                }
                if !seen.insert(intent.as_str()) {
                    return Err(Error::Data(format!("intent {intent:?} appears in more than one domain")));
                }
            }
        }
        Ok(())
    }
}

/// Ordered domain and intent labels, each including [`OOS`], with the
/// intent to domain map. Label order is lexicographic.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpace {
    domains: Vec<String>,
    intents: Vec<String>,
    intent_domain: Vec<usize>,
}

impl LabelSpace {
    pub fn from_domain_map(map: &DomainMap) -> Result<Self> {
        map.validate()?;
        let mut domains: Vec<String> = map.0.keys().cloned().collect();
        domains.push(OOS.to_owned());
        domains.sort();
        let mut pairs: Vec<(String, String)> = map
            .0
            .iter()
            .flat_map(|(d, is)| is.iter().map(move |i| (i.clone(), d.clone())))
            .collect();
        pairs.push((OOS.to_owned(), OOS.to_owned()));
        pairs.sort();
        let intent_domain = pairs
            .iter()
            .map(|(_, d)| domains.binary_search(d).expect("domain listed"))
            .collect();
        let intents = pairs.into_iter().map(|(i, _)| i).collect();
        Ok(Self {
            domains,
            intents,
            intent_domain,
        })
    }

    /// Re-check invariants of a deserialized label space.
    pub fn validate(&self) -> Result<()> {
        let sorted_unique = |v: &[String]| v.windows(2).all(|w| w[0] < w[1]);
        if !sorted_unique(&self.domains) || !sorted_unique(&self.intents) {
            return Err(Error::Data("label lists must be sorted and unique".into()));
        }
        if self.domains.len() < 2 || self.intents.len() < 2 {
            return Err(Error::Data("label space needs at least two domains and two intents".into()));
        }
        if self.intent_domain.len() != self.intents.len()
            || self.intent_domain.iter().any(|&d| d >= self.domains.len())
        {
            return Err(Error::Data("intent to domain map is inconsistent".into()));
        }
        let oos_i = self.intent_index(OOS).ok_or_else(|| Error::Data("no oos intent".into()))?;
        let oos_d = self.domain_index(OOS).ok_or_else(|| Error::Data("no oos domain".into()))?;
        if self.intent_domain[oos_i] != oos_d {
            return Err(Error::Data("oos intent must map to the oos domain".into()));
        }
        Ok(())
    }

    pub fn domains(&self) -> &[String] {
        &self.domains
    }

    pub fn intents(&self) -> &[String] {
        &self.intents
    }

    pub fn num_domains(&self) -> usize {
        self.domains.len()
    }

    pub fn num_intents(&self) -> usize {
        self.intents.len()
    }

    pub fn domain_index(&self, name: &str) -> Option<usize> {
        self.domains.binary_search_by(|d| d.as_str().cmp(name)).ok()
    }

    pub fn intent_index(&self, name: &str) -> Option<usize> {
        self.intents.binary_search_by(|d| d.as_str().cmp(name)).ok()
    }

    pub fn domain_of(&self, intent: usize) -> usize {
        self.intent_domain[intent]
    }

    pub fn oos_intent(&self) -> usize {
        self.intent_index(OOS).expect("label space always contains oos")
    }

    pub fn oos_domain(&self) -> usize {
        self.domain_index(OOS).expect("label space always contains oos")
    }

    pub fn to_domain_map(&self) -> DomainMap {
        let mut map: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (i, name) in self.intents.iter().enumerate() {
            if name != OOS {
                map.entry(self.domains[self.intent_domain[i]].clone()).or_default().push(name.clone());
            }
        }
        DomainMap(map)
    }

    pub fn example(&self, text: impl Into<String>, intent: &str) -> Result<LabeledExample> {
        let intent = self
            .intent_index(intent)
            .ok_or_else(|| Error::Data(format!("intent {intent:?} is not in the domain map")))?;
        Ok(LabeledExample {
            text: text.into(),
            domain: self.domain_of(intent),
            intent,
        })
    }

    /// Check an example against this label space.
    pub fn check(&self, ex: &LabeledExample) -> Result<()> {
        if ex.intent >= self.num_intents() {
            return Err(Error::Label {
                index: ex.intent,
                classes: self.num_intents(),
            });
        }
        if ex.domain != self.domain_of(ex.intent) {
            return Err(Error::Data(format!(
                "example {:?}: domain {} does not match intent {}",
                ex.text, self.domains.get(ex.domain).map_or("?", String::as_str), self.intents[ex.intent]
            )));
        }
        Ok(())
    }
}

fn parse_pairs(root: &Value, key: &str, intent_override: Option<&str>, labels: &LabelSpace) -> Result<Vec<LabeledExample>> {
    let list = root
        .get(key)
        .ok_or_else(|| Error::Data(format!("dataset is missing key {key:?}")))?
        .as_array()
        .ok_or_else(|| Error::Data(format!("{key:?} must be a list")))?;
    list.iter()
        .enumerate()
        .map(|(i, pair)| {
            let malformed = || Error::Data(format!("{key}[{i}] must be an [utterance, intent] pair of strings"));
            let arr = pair.as_array().filter(|a| a.len() == 2).ok_or_else(malformed)?;
            let text = arr[0].as_str().ok_or_else(malformed)?;
            let intent = arr[1].as_str().ok_or_else(malformed)?;
            let intent = intent_override.unwrap_or(intent);
            labels.example(text, intent).map_err(|_| {
                Error::Data(format!("{key}[{i}]: intent {intent:?} is not in the domain map"))
            })
        })
        .collect()
}

/// Parse a dataset document against an existing label space.
pub fn parse_oos_dataset(json: &str, labels: &LabelSpace, variant: Variant) -> Result<Dataset> {
    let root: Value = serde_json::from_str(json).map_err(|e| Error::Data(format!("dataset is not valid JSON: {e}")))?;
    if !root.is_object() {
        return Err(Error::Data("dataset must be a JSON object".into()));
    }
    let mut splits = Split::ALL.iter().map(|s| {
        let (inscope, oos) = s.keys();
        let mut v = parse_pairs(&root, inscope, None, labels)?;
        v.extend(parse_pairs(&root, oos, Some(OOS), labels)?);
        Ok::<_, Error>(v)
    });
    let train = splits.next().expect("three splits")?;
    let valid = splits.next().expect("three splits")?;
    let test = splits.next().expect("three splits")?;
    Ok(Dataset {
        train,
        valid,
        test,
        variant,
    })
}

pub fn load_oos_dataset(data_path: impl AsRef<Path>, domain_map_path: impl AsRef<Path>) -> Result<(Dataset, LabelSpace)> {
    let data_path = data_path.as_ref();
    let labels = LabelSpace::from_domain_map(&DomainMap::load(domain_map_path)?)?;
    let json = std::fs::read_to_string(data_path).map_err(|e| Error::io(data_path, e))?;
    let dataset = parse_oos_dataset(&json, &labels, Variant::from_path(data_path))?;
    Ok((dataset, labels))
}

/// Serialize back to the released JSON layout.
pub fn dataset_to_json(dataset: &Dataset, labels: &LabelSpace) -> Value {
    let oos = labels.oos_intent();
    let mut root = serde_json::Map::new();
    for split in Split::ALL {
        let (inscope, oos_key) = split.keys();
        let pairs = |want_oos: bool| -> Value {
            dataset
                .split(split)
                .iter()
                .filter(|e| (e.intent == oos) == want_oos)
                .map(|e| Value::from(vec![e.text.clone(), labels.intents()[e.intent].clone()]))
                .collect()
        };
        root.insert(inscope.into(), pairs(false));
        root.insert(oos_key.into(), pairs(true));
    }
    Value::Object(root)
}

pub fn write_oos_dataset(dataset: &Dataset, labels: &LabelSpace, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string(&dataset_to_json(dataset, labels))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_domain_map(labels: &LabelSpace, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(&labels.to_domain_map())?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Per-intent example counts of one split.
pub fn intent_counts(examples: &[LabeledExample], labels: &LabelSpace) -> Vec<usize> {
    let mut counts = vec![0; labels.num_intents()];
    for e in examples {
        counts[e.intent] += 1;
    }
    counts
}
