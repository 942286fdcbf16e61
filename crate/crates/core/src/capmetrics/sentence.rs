use std::collections::HashMap;

fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut out = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *out.entry(w.iter().map(AsRef::as_ref).collect()).or_default() += 1;
        }
    }
    out
}

/// Sentence BLEU-4 with clipped counts, closest-reference brevity penalty
/// and no smoothing.
pub fn bleu4<S: AsRef<str>>(candidate: &[S], refs: &[Vec<S>]) -> f64 {
    if candidate.is_empty() || refs.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=4 {
        let cand = ngram_counts(candidate, n);
        let total: usize = cand.values().sum();
        if total == 0 {
            return 0.0;
        }
        let ref_counts: Vec<_> = refs.iter().map(|r| ngram_counts(r, n)).collect();
        let clipped: usize = cand
            .iter()
            .map(|(g, &c)| {
                let max_ref = ref_counts.iter().map(|r| r.get(g).copied().unwrap_or(0)).max().unwrap_or(0);
                c.min(max_ref)
            })
            .sum();
        if clipped == 0 {
            return 0.0;
        }
        log_sum += (clipped as f64 / total as f64).ln();
    }
    let c = candidate.len();
    let r = refs
        .iter()
        .map(Vec::len)
        .min_by_key(|&l| (l.abs_diff(c), l))
        .unwrap();
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    bp * (log_sum / 4.0).exp()
}

fn lcs<S: AsRef<str>>(a: &[S], b: &[S]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x.as_ref() == y.as_ref() {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub const ROUGE_BETA: f64 = 1.2;

/// LCS F-measure, best over references.
pub fn rouge_l<S: AsRef<str>>(candidate: &[S], refs: &[Vec<S>]) -> f64 {
    if candidate.is_empty() {
        return 0.0;
    }
    refs.iter()
        .filter(|r| !r.is_empty())
        .map(|r| {
            let l = lcs(candidate, r) as f64;
            if l == 0.0 {
                return 0.0;
            }
            let p = l / candidate.len() as f64;
            let rec = l / r.len() as f64;
            let b2 = ROUGE_BETA * ROUGE_BETA;
            (1.0 + b2) * p * rec / (rec + b2 * p)
        })
        .fold(0.0, f64::max)
}

/// Fewest chunks over all maximum one-to-one exact-match alignments, with
/// the match count.
fn min_chunks<S: AsRef<str>>(cand: &[S], reference: &[S]) -> (usize, usize) {
    let mut ids: HashMap<&str, usize> = HashMap::new();
    let mut c = Vec::with_capacity(cand.len());
    let mut r = Vec::with_capacity(reference.len());
    for (words, out) in [(cand, &mut c), (reference, &mut r)] {
        for w in words {
            let n = ids.len();
            out.push(*ids.entry(w.as_ref()).or_insert(n));
        }
    }
    let types = ids.len();
    let mut cand_count = vec![0usize; types];
    let mut ref_count = vec![0usize; types];
    c.iter().for_each(|&w| cand_count[w] += 1);
    r.iter().for_each(|&w| ref_count[w] += 1);
    let quota: Vec<usize> = (0..types).map(|w| cand_count[w].min(ref_count[w])).collect();
    let matches: usize = quota.iter().sum();
    if matches == 0 {
        return (0, 0);
    }
    // remaining[i][w]: occurrences of w in cand[i..].
    let mut remaining = vec![vec![0usize; types]; c.len() + 1];
    for i in (0..c.len()).rev() {
        remaining[i] = remaining[i + 1].clone();
        remaining[i][c[i]] += 1;
    }
    let mut search = Search {
        c: &c,
        r: &r,
        quota: &quota,
        remaining: &remaining,
        used: vec![false; r.len()],
        used_per_type: vec![0; types],
        memo: HashMap::new(),
    };
    (search.best(0, None), matches)
}

struct Search<'a> {
    c: &'a [usize],
    r: &'a [usize],
    quota: &'a [usize],
    remaining: &'a [Vec<usize>],
    used: Vec<bool>,
    used_per_type: Vec<usize>,
    memo: HashMap<(usize, Option<usize>, Vec<bool>), usize>,
}

impl Search<'_> {
    /// Minimum chunks for cand[i..] given the previous token matched `prev`.
    fn best(&mut self, i: usize, prev: Option<usize>) -> usize {
        if i == self.c.len() {
            return 0;
        }
        let key = (i, prev, self.used.clone());
        if let Some(&v) = self.memo.get(&key) {
            return v;
        }
        let w = self.c[i];
        let need = self.quota[w] - self.used_per_type[w];
        let mut best = usize::MAX;
        if need < self.remaining[i][w] {
            best = self.best(i + 1, None);
        }
        if need > 0 {
            for j in 0..self.r.len() {
                if self.r[j] != w || self.used[j] {
                    continue;
                }
                self.used[j] = true;
                self.used_per_type[w] += 1;
                let extends = prev.is_some_and(|p| p + 1 == j);
                let rest = self.best(i + 1, Some(j));
                self.used[j] = false;
                self.used_per_type[w] -= 1;
                if rest != usize::MAX {
                    best = best.min(rest + usize::from(!extends));
                }
            }
        }
        self.memo.insert(key, best);
        best
    }
}

/// Exact-match METEOR: harmonic mean weighted toward recall, times a
/// fragmentation penalty, best over references.
pub fn meteor<S: AsRef<str>>(candidate: &[S], refs: &[Vec<S>]) -> f64 {
    if candidate.is_empty() {
        return 0.0;
    }
    refs.iter()
        .map(|r| {
            let (chunks, m) = min_chunks(candidate, r);
            if m == 0 {
                return 0.0;
            }
            let m = m as f64;
            let p = m / candidate.len() as f64;
            let rec = m / r.len() as f64;
            let fmean = 10.0 * p * rec / (rec + 9.0 * p);
            let penalty = 0.5 * (chunks as f64 / m).powi(3);
            fmean * (1.0 - penalty)
        })
        .fold(0.0, f64::max)
}
