//! Straightforward reference implementations used as test oracles.

#![allow(dead_code)]

use std::collections::BTreeMap;

use densecap3d::geometry::Box3;
use rand::Rng;

pub type Sent = Vec<String>;

fn ngrams(s: &[String], n: usize) -> Vec<&[String]> {
    if s.len() < n {
        return Vec::new();
    }
    (0..=s.len() - n).map(|i| &s[i..i + n]).collect()
}

fn count(list: &[&[String]], g: &[String]) -> usize {
    list.iter().filter(|x| **x == g).count()
}

pub fn bleu4_ref(cand: &[String], refs: &[Sent]) -> f64 {
    if cand.is_empty() {
        return 0.0;
    }
    let mut product = 1.0;
    for n in 1..=4 {
        let cg = ngrams(cand, n);
        if cg.is_empty() {
            return 0.0;
        }
        let mut seen: Vec<&[String]> = Vec::new();
        let mut clipped = 0;
        for g in &cg {
            if seen.contains(g) {
                continue;
            }
            seen.push(g);
            let mut max_ref = 0;
            for r in refs {
                max_ref = max_ref.max(count(&ngrams(r, n), g));
            }
            clipped += count(&cg, g).min(max_ref);
        }
        product *= clipped as f64 / cg.len() as f64;
    }
    if product == 0.0 {
        return 0.0;
    }
    let c = cand.len() as i64;
    let mut r = refs[0].len() as i64;
    for x in refs {
        let l = x.len() as i64;
        if (l - c).abs() < (r - c).abs() || ((l - c).abs() == (r - c).abs() && l < r) {
            r = l;
        }
    }
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    bp * product.powf(0.25)
}

fn is_subsequence(sub: &[&String], s: &[String]) -> bool {
    let mut it = s.iter();
    sub.iter().all(|w| it.any(|x| x == *w))
}

/// LCS by enumerating every subsequence of the candidate.
pub fn lcs_ref(a: &[String], b: &[String]) -> usize {
    let mut best = 0;
    for mask in 0u32..(1 << a.len()) {
        let sub: Vec<&String> = (0..a.len()).filter(|i| ((mask >> i) & 1) == 1).map(|i| &a[i]).collect();
        if sub.len() > best && is_subsequence(&sub, b) {
            best = sub.len();
        }
    }
    best
}

pub fn rouge_l_ref(cand: &[String], refs: &[Sent]) -> f64 {
    let mut best: f64 = 0.0;
    if cand.is_empty() {
        return 0.0;
    }
    for r in refs {
        if r.is_empty() {
            continue;
        }
        let l = lcs_ref(cand, r) as f64;
        if l == 0.0 {
            continue;
        }
        let p = l / cand.len() as f64;
        let rec = l / r.len() as f64;
        let b2 = 1.2f64 * 1.2;
        best = best.max((1.0 + b2) * p * rec / (rec + b2 * p));
    }
    best
}

/// Every partial one-to-one exact-match alignment, as (cand, ref) pairs.
fn alignments(cand: &[String], r: &[String], i: usize, used: &mut Vec<bool>, cur: &mut Vec<(usize, usize)>, out: &mut Vec<Vec<(usize, usize)>>) {
    if i == cand.len() {
        out.push(cur.clone());
        return;
    }
    alignments(cand, r, i + 1, used, cur, out);
    for j in 0..r.len() {
        if !used[j] && r[j] == cand[i] {
            used[j] = true;
            cur.push((i, j));
            alignments(cand, r, i + 1, used, cur, out);
            cur.pop();
            used[j] = false;
        }
    }
}

fn chunks(al: &[(usize, usize)]) -> usize {
    let mut n = 0;
    for (k, &(i, j)) in al.iter().enumerate() {
        let continues = k > 0 && al[k - 1].0 + 1 == i && al[k - 1].1 + 1 == j;
        if !continues {
            n += 1;
        }
    }
    n
}

pub fn meteor_ref(cand: &[String], refs: &[Sent]) -> f64 {
    let mut best: f64 = 0.0;
    for r in refs {
        let mut all = Vec::new();
        alignments(cand, r, 0, &mut vec![false; r.len()], &mut Vec::new(), &mut all);
        let m = all.iter().map(Vec::len).max().unwrap_or(0);
        if m == 0 {
            continue;
        }
        let ch = all.iter().filter(|a| a.len() == m).map(|a| chunks(a)).min().unwrap();
        let m = m as f64;
        let p = m / cand.len() as f64;
        let rec = m / r.len() as f64;
        let f = 10.0 * p * rec / (rec + 9.0 * p);
        best = best.max(f * (1.0 - 0.5 * (ch as f64 / m).powi(3)));
    }
    best
}

fn key(g: &[String]) -> String {
    g.join("\u{1}")
}

pub fn cider_ref(cands: &[Sent], refs: &[Vec<Sent>]) -> Vec<f64> {
    let big_n = refs.len() as f64;
    let mut df: BTreeMap<(usize, String), f64> = BTreeMap::new();
    for set in refs {
        let mut keys: Vec<(usize, String)> = Vec::new();
        for r in set {
            for n in 1..=4 {
                for g in ngrams(r, n) {
                    let k = (n, key(g));
                    if !keys.contains(&k) {
                        keys.push(k);
                    }
                }
            }
        }
        for k in keys {
            *df.entry(k).or_insert(0.0) += 1.0;
        }
    }
    let vec_of = |s: &[String], n: usize| -> BTreeMap<String, f64> {
        let mut tf: BTreeMap<String, f64> = BTreeMap::new();
        for g in ngrams(s, n) {
            *tf.entry(key(g)).or_insert(0.0) += 1.0;
        }
        tf.into_iter()
            .map(|(k, t)| {
                let d = df.get(&(n, k.clone())).copied().unwrap_or(0.0).max(1.0);
                (k, t * (big_n.ln() - d.ln()))
            })
            .collect()
    };
    let norm = |v: &BTreeMap<String, f64>| v.values().map(|x| x * x).sum::<f64>().sqrt();
    cands
        .iter()
        .zip(refs)
        .map(|(c, set)| {
            let mut total = 0.0;
            for r in set {
                let delta = c.len() as f64 - r.len() as f64;
                let g = (-delta * delta / 72.0).exp();
                let mut sum_n = 0.0;
                for n in 1..=4 {
                    let vc = vec_of(c, n);
                    let vr = vec_of(r, n);
                    let mut dot = 0.0;
                    for (k, &a) in &vc {
                        if let Some(&b) = vr.get(k) {
                            dot += a.min(b) * b;
                        }
                    }
                    let (nc, nr) = (norm(&vc), norm(&vr));
                    if nc != 0.0 && nr != 0.0 {
                        dot /= nc * nr;
                    }
                    sum_n += dot * g;
                }
                total += sum_n / 4.0;
            }
            10.0 * total / set.len() as f64
        })
        .collect()
}

/// Words drawn from a tiny vocabulary so that n-grams repeat.
pub fn random_sentence<R: Rng>(rng: &mut R, max_len: usize, vocab: usize) -> Sent {
    let len = rng.gen_range(1..=max_len);
    (0..len).map(|_| format!("w{}", rng.gen_range(0..vocab))).collect()
}

/// IoU from the cell decomposition induced by both boxes' faces.
pub fn iou_ref(a: &Box3, b: &Box3) -> f64 {
    let mut inter = 0.0;
    let mut union = 0.0;
    let lo = |x: &Box3, d: usize| x.center[d] - x.lengths[d] / 2.0;
    let hi = |x: &Box3, d: usize| x.center[d] + x.lengths[d] / 2.0;
    let cuts: Vec<Vec<f64>> = (0..3)
        .map(|d| {
            let mut c = vec![lo(a, d), hi(a, d), lo(b, d), hi(b, d)];
            c.sort_by(f64::total_cmp);
            c
        })
        .collect();
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                let idx = [i, j, k];
                let size: f64 = (0..3).map(|d| cuts[d][idx[d] + 1] - cuts[d][idx[d]]).product();
                if size <= 0.0 {
                    continue;
                }
                let mid: Vec<f64> = (0..3).map(|d| 0.5 * (cuts[d][idx[d]] + cuts[d][idx[d] + 1])).collect();
                let inside = |x: &Box3| (0..3).all(|d| lo(x, d) < mid[d] && mid[d] < hi(x, d));
                let (ia, ib) = (inside(a), inside(b));
                if ia && ib {
                    inter += size;
                }
                if ia || ib {
                    union += size;
                }
            }
        }
    }
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// The unique kept set satisfying the greedy fixpoint, found by trying
/// every subset. Returned in visiting order.
pub fn nms_ref(boxes: &[Box3], scores: &[f64], thr: f64) -> Vec<usize> {
    let n = boxes.len();
    let before = |k: usize, i: usize| scores[k] > scores[i] || (scores[k] == scores[i] && k < i);
    let mut found = None;
    for mask in 0u32..(1 << n) {
        let inside = |i: usize| ((mask >> i) & 1) == 1;
        let ok = (0..n).all(|i| {
            let free = (0..n).filter(|&k| inside(k) && before(k, i)).all(|k| iou_ref(&boxes[i], &boxes[k]) < thr);
            free == inside(i)
        });
        if ok {
            assert!(found.is_none(), "fixpoint is not unique");
            found = Some(mask);
        }
    }
    let mask = found.expect("a fixpoint exists");
    let mut kept: Vec<usize> = (0..n).filter(|&i| ((mask >> i) & 1) == 1).collect();
    kept.sort_by(|&a, &b| if before(a, b) { std::cmp::Ordering::Less } else { std::cmp::Ordering::Greater });
    kept
}

/// Boxes on a coarse grid, so that touching faces, containment and equal
/// scores all occur.
pub fn random_boxes<R: Rng>(rng: &mut R, n: usize) -> (Vec<Box3>, Vec<f64>) {
    let boxes = (0..n)
        .map(|_| {
            let c = [0, 1, 2].map(|_| rng.gen_range(0..8) as f64 * 0.25);
            let l = [0, 1, 2].map(|_| rng.gen_range(1..6) as f64 * 0.25);
            Box3::new(c, l).unwrap()
        })
        .collect();
    let scores = (0..n).map(|_| rng.gen_range(0..5) as f64 / 4.0).collect();
    (boxes, scores)
}
