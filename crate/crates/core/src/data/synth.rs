use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Dataset, DomainMap, LabelSpace, LabeledExample, Variant, OOS};
use crate::{Error, Result};

/// Generator for linearly separable synthetic intent data.
///
/// An in-scope utterance of intent `j` in domain `i` reads
/// `d<i> w<i*K+j> f<..> ...`: a domain keyword shared by the domain, an
/// intent keyword unique to the intent, and filler words drawn from a
/// shared pool. Out-of-scope utterances use keywords `z<..>` that never
/// occur in scope.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub domains: usize,
    pub intents_per_domain: usize,
    pub examples_per_intent: usize,
    pub eval_examples_per_intent: usize,
    pub oos_examples: usize,
    pub eval_oos_examples: usize,
    pub min_filler: usize,
    pub max_filler: usize,
    pub filler_vocab: usize,
    pub oos_vocab: usize,
}

impl SynthConfig {
    pub fn new(seed: u64, domains: usize, intents_per_domain: usize, examples_per_intent: usize, oos_examples: usize) -> Self {
        Self {
            seed,
            domains,
            intents_per_domain,
            examples_per_intent,
            eval_examples_per_intent: (examples_per_intent / 2).max(1),
            oos_examples,
            eval_oos_examples: oos_examples,
            min_filler: 2,
            max_filler: 4,
            filler_vocab: 40,
            oos_vocab: 30,
        }
    }

    pub fn domain_name(i: usize) -> String {
        format!("domain_{i:02}")
    }

    pub fn intent_name(k: usize) -> String {
        format!("intent_{k:03}")
    }

    pub fn domain_map(&self) -> DomainMap {
        let k = self.intents_per_domain;
        DomainMap(
            (0..self.domains)
                .map(|i| (Self::domain_name(i), (0..k).map(|j| Self::intent_name(i * k + j)).collect()))
                .collect(),
        )
    }

    pub fn generate(&self) -> Result<(Dataset, LabelSpace)> {
        if self.domains == 0 || self.intents_per_domain == 0 || self.examples_per_intent == 0 || self.oos_examples == 0 {
            return Err(Error::Config("synthetic dataset counts must all be at least 1".into()));
        }
        if self.filler_vocab == 0 || self.oos_vocab == 0 || self.min_filler > self.max_filler {
            return Err(Error::Config("synthetic filler settings are inconsistent".into()));
        }
        let labels = LabelSpace::from_domain_map(&self.domain_map())?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let train = self.split(&mut rng, &labels, self.examples_per_intent, self.oos_examples)?;
        let valid = self.split(&mut rng, &labels, self.eval_examples_per_intent, self.eval_oos_examples)?;
        let test = self.split(&mut rng, &labels, self.eval_examples_per_intent, self.eval_oos_examples)?;
        Ok((
            Dataset {
                train,
                valid,
                test,
                variant: Variant::Synthetic,
            },
            labels,
        ))
    }

    fn split(&self, rng: &mut ChaCha8Rng, labels: &LabelSpace, per_intent: usize, oos: usize) -> Result<Vec<LabeledExample>> {
        let k = self.intents_per_domain;
        let mut out = Vec::with_capacity(self.domains * k * per_intent + oos);
        for i in 0..self.domains {
            for j in 0..k {
                let intent = i * k + j;
                for _ in 0..per_intent {
                    let text = self.utterance(rng, vec![format!("d{i}"), format!("w{intent}")]);
                    out.push(labels.example(text, &Self::intent_name(intent))?);
                }
            }
        }
        for _ in 0..oos {
            let keyword = format!("z{}", rng.gen_range(0..self.oos_vocab));
            let text = self.utterance(rng, vec![keyword]);
            out.push(labels.example(text, OOS)?);
        }
        Ok(out)
    }

    fn utterance(&self, rng: &mut ChaCha8Rng, mut words: Vec<String>) -> String {
        let n = rng.gen_range(self.min_filler..=self.max_filler);
        words.extend((0..n).map(|_| format!("f{}", rng.gen_range(0..self.filler_vocab))));
        words.join(" ")
    }
}

/// Default synthetic fixture: `domains` in-scope domains with
/// `intents_per_domain` intents each, `examples_per_intent` training
/// examples per intent and `oos_examples` out-of-scope training examples.
pub fn synth_dataset(
    seed: u64,
    domains: usize,
    intents_per_domain: usize,
    examples_per_intent: usize,
    oos_examples: usize,
) -> Result<(Dataset, LabelSpace)> {
    SynthConfig::new(seed, domains, intents_per_domain, examples_per_intent, oos_examples).generate()
}
