//! Bag-of-words tf-idf features.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::ModelError;

pub const DEFAULT_MIN_DF: usize = 2;

/// Lower-cased alphanumeric runs; everything else separates tokens.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "VocabularyFile", into = "VocabularyFile")]
pub struct Vocabulary {
    tokens: Vec<String>,
    idf: Vec<f64>,
    index: HashMap<String, u32>,
}

#[derive(Serialize, Deserialize)]
struct VocabularyFile {
    tokens: Vec<String>,
    idf: Vec<f64>,
}

impl TryFrom<VocabularyFile> for Vocabulary {
    type Error = String;

    fn try_from(file: VocabularyFile) -> Result<Self, Self::Error> {
        if file.tokens.len() != file.idf.len() {
            return Err(format!(
                "{} tokens but {} idf weights",
                file.tokens.len(),
                file.idf.len()
            ));
        }
        let index: HashMap<String, u32> = file
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        if index.len() != file.tokens.len() {
            return Err("duplicate vocabulary token".into());
        }
        Ok(Vocabulary {
            tokens: file.tokens,
            idf: file.idf,
            index,
        })
    }
}

impl From<Vocabulary> for VocabularyFile {
    fn from(v: Vocabulary) -> Self {
        VocabularyFile {
            tokens: v.tokens,
            idf: v.idf,
        }
    }
}

impl Vocabulary {
    /// Build from training texts, keeping tokens whose document frequency is
    /// at least `min_df`. Indices follow lexicographic token order.
    pub fn build<S: AsRef<str>>(texts: &[S], min_df: usize) -> Result<Self, ModelError> {
        if texts.is_empty() {
            return Err(ModelError::EmptyCorpus);
        }
        let mut df: BTreeMap<String, usize> = BTreeMap::new();
        for text in texts {
            let unique: HashSet<String> = tokenize(text.as_ref()).collect();
            for token in unique {
                *df.entry(token).or_default() += 1;
            }
        }
        let n_docs = texts.len() as f64;
        let (tokens, idf): (Vec<String>, Vec<f64>) = df
            .into_iter()
            .filter(|(_, d)| *d >= min_df)
            .map(|(t, d)| (t, ((1.0 + n_docs) / (1.0 + d as f64)).ln() + 1.0))
            .unzip();
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Ok(Vocabulary { tokens, idf, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn index_of(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    /// L2-normalized tf-idf vector; out-of-vocabulary tokens are ignored.
    pub fn featurize(&self, text: &str) -> FeatureVector {
        let mut tf: BTreeMap<u32, f64> = BTreeMap::new();
        for token in tokenize(text) {
            if let Some(i) = self.index_of(&token) {
                *tf.entry(i).or_default() += 1.0;
            }
        }
        let mut indices = Vec::with_capacity(tf.len());
        let mut values = Vec::with_capacity(tf.len());
        for (i, count) in tf {
            indices.push(i);
            values.push(count * self.idf[i as usize]);
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            values.iter_mut().for_each(|v| *v /= norm);
        }
        FeatureVector {
            dim: self.len(),
            indices,
            values,
        }
    }
}

/// Sparse vector with strictly increasing indices.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub dim: usize,
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn zeros(dim: usize) -> Self {
        FeatureVector {
            dim,
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn from_dense(dense: &[f64]) -> Self {
        let (indices, values) = dense
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, v)| (i as u32, *v))
            .unzip();
        FeatureVector {
            dim: dense.len(),
            indices,
            values,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices
            .iter()
            .zip(&self.values)
            .map(|(&i, &v)| (i as usize, v))
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn df_pruning() {
        let v = Vocabulary::build(&["a b", "b c"], 2).unwrap();
        assert_eq!(v.tokens(), &["b".to_string()]);
    }

    #[test]
    fn empty_corpus() {
        let empty: [&str; 0] = [];
        assert!(matches!(
            Vocabulary::build(&empty, 2),
            Err(ModelError::EmptyCorpus)
        ));
    }

    #[test]
    fn tokenization_lowercases_and_splits_punctuation() {
        let t: Vec<String> = tokenize("Pt. admitted w/ CHF-exacerbation; 2L O2").collect();
        assert_eq!(
            t,
            ["pt", "admitted", "w", "chf", "exacerbation", "2l", "o2"]
        );
    }

    #[test]
    fn brute_force_df_recount() {
        let corpus = [
            "Sepsis with shock, sepsis again",
            "shock and fever",
            "fever fever FEVER",
            "stable course; no shock",
            "sepsis. stable",
        ];
        let v = Vocabulary::build(&corpus, 2).unwrap();
        // independent recount: a token is kept if >= 2 documents contain it
        let mut expected: Vec<String> = Vec::new();
        let docs: Vec<Vec<String>> = corpus
            .iter()
            .map(|d| {
                d.to_lowercase()
                    .split(|c: char| !c.is_alphanumeric())
                    .filter(|t| !t.is_empty())
                    .map(str::to_string)
                    .collect()
            })
            .collect();
        let all: HashSet<&String> = docs.iter().flatten().collect();
        for t in all {
            if docs.iter().filter(|d| d.contains(t)).count() >= 2 {
                expected.push(t.clone());
            }
        }
        expected.sort();
        assert_eq!(v.tokens(), expected.as_slice());
        assert_eq!(v.len(), 4); // fever, sepsis, shock, stable
    }

    #[test]
    fn featurize_is_sorted_normalized_nonnegative() {
        let v = Vocabulary::build(&["b a c", "c b a", "a"], 1).unwrap();
        let x = v.featurize("c c a zzz");
        assert!(x.indices.windows(2).all(|w| w[0] < w[1]));
        assert!(x.values.iter().all(|&v| v.is_finite() && v >= 0.0));
        let norm: f64 = x.values.iter().map(|v| v * v).sum();
        assert!((norm - 1.0).abs() < 1e-12);
        assert_eq!(v.featurize("zzz").nnz(), 0);
    }

    #[test]
    fn serde_rebuilds_index() {
        let v = Vocabulary::build(&["b a c", "c b a"], 2).unwrap();
        let json = serde_json::to_string(&v).unwrap();
        let back: Vocabulary = serde_json::from_str(&json).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.index_of("c"), Some(2));
    }
}
