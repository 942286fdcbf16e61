use std::collections::{HashMap, HashSet};

pub const CIDER_N: usize = 4;
pub const CIDER_SIGMA: f64 = 6.0;
pub const CIDER_SCALE: f64 = 10.0;

type Gram = Vec<String>;

fn grams<S: AsRef<str>>(tokens: &[S]) -> [HashMap<Gram, f64>; CIDER_N] {
    std::array::from_fn(|k| {
        let n = k + 1;
        let mut out = HashMap::new();
        if tokens.len() >= n {
            for w in tokens.windows(n) {
                *out.entry(w.iter().map(|s| s.as_ref().to_string()).collect()).or_insert(0.0) += 1.0;
            }
        }
        out
    })
}

/// Document frequencies over reference sets, shared by every candidate of
/// one evaluation run.
#[derive(Clone, Debug, Default)]
pub struct CiderCorpus {
    df: HashMap<Gram, f64>,
    log_n: f64,
}

struct Vector {
    weights: [HashMap<Gram, f64>; CIDER_N],
    norms: [f64; CIDER_N],
    len: usize,
}

impl CiderCorpus {
    pub fn new<S: AsRef<str>>(refs: &[Vec<Vec<S>>]) -> Self {
        let mut df = HashMap::new();
        for set in refs {
            let mut seen: HashSet<Gram> = HashSet::new();
            for r in set {
                for m in grams(r) {
                    seen.extend(m.into_keys());
                }
            }
            for g in seen {
                *df.entry(g).or_insert(0.0) += 1.0;
            }
        }
        CiderCorpus {
            df,
            log_n: (refs.len().max(1) as f64).ln(),
        }
    }

    fn vector<S: AsRef<str>>(&self, tokens: &[S]) -> Vector {
        let mut norms = [0.0; CIDER_N];
        let weights = grams(tokens);
        let weights: [HashMap<Gram, f64>; CIDER_N] = std::array::from_fn(|k| {
            weights[k]
                .iter()
                .map(|(g, &tf)| {
                    let df = self.df.get(g).copied().unwrap_or(0.0).max(1.0);
                    let w = tf * (self.log_n - df.ln());
                    norms[k] += w * w;
                    (g.clone(), w)
                })
                .collect()
        });
        Vector {
            weights,
            norms: norms.map(f64::sqrt),
            len: tokens.len(),
        }
    }

    fn similarity(cand: &Vector, reference: &Vector) -> [f64; CIDER_N] {
        let delta = cand.len as f64 - reference.len as f64;
        let gauss = (-(delta * delta) / (2.0 * CIDER_SIGMA * CIDER_SIGMA)).exp();
        std::array::from_fn(|k| {
            let mut v: f64 = cand.weights[k]
                .iter()
                .map(|(g, &w)| {
                    let r = reference.weights[k].get(g).copied().unwrap_or(0.0);
                    w.min(r) * r
                })
                .sum();
            if cand.norms[k] != 0.0 && reference.norms[k] != 0.0 {
                v /= cand.norms[k] * reference.norms[k];
            }
            v * gauss
        })
    }

    /// CIDEr-D of one candidate against its reference set.
    pub fn score<S: AsRef<str>>(&self, candidate: &[S], refs: &[Vec<S>]) -> f64 {
        if refs.is_empty() {
            return 0.0;
        }
        let c = self.vector(candidate);
        let mut total = 0.0;
        for r in refs {
            let sims = Self::similarity(&c, &self.vector(r));
            total += sims.iter().sum::<f64>() / CIDER_N as f64;
        }
        total / refs.len() as f64 * CIDER_SCALE
    }
}

/// Per-object CIDEr-D with document frequencies taken from `refs`.
pub fn cider<S: AsRef<str>>(candidates: &[Vec<S>], refs: &[Vec<Vec<S>>]) -> Vec<f64> {
    let corpus = CiderCorpus::new(refs);
    candidates.iter().zip(refs).map(|(c, r)| corpus.score(c, r)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn single_object_corpus_scores_zero() {
        let s = cider(&[t("a chair by the wall")], &[vec![t("a chair by the wall")]]);
        assert_eq!(s, vec![0.0]);
    }

    #[test]
    fn disjoint_candidate_scores_zero() {
        let refs = vec![vec![t("a red chair")], vec![t("a blue table")]];
        let s = cider(&[t("x y z"), t("q r")], &refs);
        assert_eq!(s, vec![0.0, 0.0]);
    }

    #[test]
    fn own_caption_beats_swapped() {
        let refs = vec![vec![t("the chair is next to the desk")], vec![t("a lamp on the table")]];
        let own = cider(&[t("the chair is next to the desk"), t("a lamp on the table")], &refs);
        let swapped = cider(&[t("a lamp on the table"), t("the chair is next to the desk")], &refs);
        assert!(own[0] > swapped[0] && own[1] > swapped[1]);
        assert!(own.iter().all(|&s| (0.0..=CIDER_SCALE + 1e-9).contains(&s)));
    }
}
