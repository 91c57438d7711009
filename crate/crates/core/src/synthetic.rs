//! Seeded generator for multi-label corpora with planted label rates,
//! pairwise co-occurrence and per-label cue words. Used for fixtures and
//! controlled experiments.

use serde::{Deserialize, Serialize};

use crate::corpus::Record;
use crate::numcore::{splitmix64, Rng};

/// How one label is sampled and what text it leaves behind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticLabel {
    pub name: String,
    /// Marginal positive rate.
    pub rate: f64,
    /// `(index of an earlier label, P(that label | this label))`.
    #[serde(default)]
    pub parent: Option<(usize, f64)>,
    /// Number of distinct cue words.
    pub cues: usize,
    /// Probability that a positive example contains one of the cue words.
    pub signal: f64,
    /// Probability that a negative example contains one anyway.
    #[serde(default)]
    pub noise: f64,
}

impl SyntheticLabel {
    pub fn new(name: &str, rate: f64) -> Self {
        Self { name: name.to_string(), rate, parent: None, cues: 3, signal: 1.0, noise: 0.0 }
    }

    pub fn with_parent(mut self, parent: usize, conditional: f64) -> Self {
        self.parent = Some((parent, conditional));
        self
    }

    pub fn with_cues(mut self, cues: usize, signal: f64, noise: f64) -> Self {
        self.cues = cues;
        self.signal = signal;
        self.noise = noise;
        self
    }

    pub fn cue(&self, j: usize) -> String {
        format!("{}{}", self.name, suffix(j))
    }
}

/// Letters only, so cue words survive number normalization.
fn suffix(mut j: usize) -> String {
    let mut out = String::new();
    loop {
        out.insert(0, (b'a' + (j % 26) as u8) as char);
        j /= 26;
        if j == 0 {
            return out;
        }
        j -= 1;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub labels: Vec<SyntheticLabel>,
    /// Size of the shared filler vocabulary.
    pub filler_words: usize,
    /// Filler words per example, inclusive range.
    pub filler_len: (usize, usize),
}

impl SyntheticSpec {
    /// Per-example probability of label `i` given whether its parent is on.
    fn conditional(&self, i: usize, parent_on: bool) -> f64 {
        let label = &self.labels[i];
        match label.parent {
            None => label.rate,
            Some((p, c)) => {
                let pr = self.labels[p].rate;
                let joint = label.rate * c;
                let v = if parent_on { joint / pr } else { (label.rate - joint) / (1.0 - pr) };
                v.clamp(0.0, 1.0)
            }
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.labels.len() < 2 {
            return Err("need at least 2 labels".into());
        }
        if self.filler_words == 0 || self.filler_len.0 > self.filler_len.1 {
            return Err("invalid filler settings".into());
        }
        for (i, l) in self.labels.iter().enumerate() {
            let probs = [l.rate, l.signal, l.noise];
            if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(format!("label {:?}: probabilities must be in [0, 1]", l.name));
            }
            if l.cues == 0 {
                return Err(format!("label {:?} needs at least one cue word", l.name));
            }
            if let Some((p, c)) = l.parent {
                if p >= i {
                    return Err(format!("label {:?}: parent must come earlier", l.name));
                }
                let pr = self.labels[p].rate;
                let joint = l.rate * c;
                if !(0.0..=1.0).contains(&c) || joint > pr || l.rate - joint > 1.0 - pr {
                    return Err(format!("label {:?}: co-occurrence not attainable", l.name));
                }
            }
        }
        Ok(())
    }

    /// `n` records drawn with `seed`. Text is a shuffled mix of filler and
    /// cue words; an example with no words at all gets one filler word.
    pub fn generate(&self, n: usize, seed: u64) -> Vec<Record> {
        let mut rng = Rng::new(splitmix64(seed));
        (0..n).map(|_| self.sample(&mut rng)).collect()
    }

    fn sample(&self, rng: &mut Rng) -> Record {
        let mut on = vec![false; self.labels.len()];
        for i in 0..self.labels.len() {
            let parent_on = self.labels[i].parent.is_some_and(|(p, _)| on[p]);
            on[i] = rng.bernoulli(self.conditional(i, parent_on));
        }
        let (lo, hi) = self.filler_len;
        let len = lo + rng.below(hi - lo + 1);
        let mut words: Vec<String> = (0..len).map(|_| format!("f{}", suffix(rng.below(self.filler_words)))).collect();
        for (label, &positive) in self.labels.iter().zip(&on) {
            let p = if positive { label.signal } else { label.noise };
            if rng.bernoulli(p) {
                words.push(label.cue(rng.below(label.cues)));
            }
        }
        if words.is_empty() {
            words.push(format!("f{}", suffix(rng.below(self.filler_words))));
        }
        rng.shuffle(&mut words);
        let labels = self.labels.iter().zip(&on).filter(|(_, &y)| y).map(|(l, _)| l.name.clone()).collect();
        Record { text: words.join(" "), labels }
    }

    pub fn label_names(&self) -> Vec<String> {
        self.labels.iter().map(|l| l.name.clone()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus_spec() -> SyntheticSpec {
        SyntheticSpec {
            labels: vec![
                SyntheticLabel::new("joy", 0.4),
                SyntheticLabel::new("love", 0.1).with_parent(0, 0.8),
                SyntheticLabel::new("anger", 0.3),
            ],
            filler_words: 20,
            filler_len: (2, 5),
        }
    }

    #[test]
    fn suffixes_are_distinct_letters() {
        let all: Vec<String> = (0..800).map(suffix).collect();
        let mut dedup = all.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), all.len());
        assert!(all.iter().all(|s| s.chars().all(|c| c.is_ascii_lowercase())));
    }

    #[test]
    fn rates_and_cooccurrence_are_planted() {
        let s = corpus_spec();
        s.validate().unwrap();
        let records = s.generate(20_000, 3);
        let has = |r: &Record, l: &str| r.labels.iter().any(|x| x == l);
        let count = |l: &str| records.iter().filter(|r| has(r, l)).count() as f64;
        let n = records.len() as f64;
        assert!((count("joy") / n - 0.4).abs() < 0.02);
        assert!((count("love") / n - 0.1).abs() < 0.01);
        let both = records.iter().filter(|r| has(r, "love") && has(r, "joy")).count() as f64;
        assert!((both / count("love") - 0.8).abs() < 0.03);
    }

    #[test]
    fn deterministic_and_nonempty() {
        let s = corpus_spec();
        assert_eq!(s.generate(50, 9), s.generate(50, 9));
        assert_ne!(s.generate(50, 9), s.generate(50, 10));
        assert!(s.generate(200, 1).iter().all(|r| !r.text.is_empty()));
    }

    #[test]
    fn unattainable_cooccurrence_rejected() {
        let mut s = corpus_spec();
        s.labels[1] = SyntheticLabel::new("love", 0.5).with_parent(0, 0.9);
        assert!(s.validate().is_err());
        s.labels[1] = SyntheticLabel::new("love", 0.1).with_parent(2, 0.5);
        assert!(s.validate().is_err());
    }
}
