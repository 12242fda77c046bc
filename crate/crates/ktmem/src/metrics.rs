//! Evaluation and schedule primitives: rank-based AUC, adjusted mutual
//! information with the exact hypergeometric expected-MI correction,
//! learning-rate annealing, and best-epoch selection.

use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("empty input")]
    Empty,
    #[error("lists have different lengths: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("score at position {0} is not finite")]
    NonFiniteScore(usize),
    #[error("label at position {0} outside {{0, 1}}")]
    BadLabel(usize),
    #[error("AUC undefined: all {0} labels belong to one class")]
    SingleClass(usize),
}

/// Parallel (score, label) lists pooled over all valid prediction points.
#[derive(Debug, Clone, Default)]
pub struct ScoredLabels {
    scores: Vec<f64>,
    labels: Vec<u8>,
}

impl ScoredLabels {
    pub fn new(scores: Vec<f64>, labels: Vec<u8>) -> Result<Self, MetricsError> {
        if scores.len() != labels.len() {
            return Err(MetricsError::LengthMismatch {
                left: scores.len(),
                right: labels.len(),
            });
        }
        if scores.is_empty() {
            return Err(MetricsError::Empty);
        }
        if let Some(pos) = scores.iter().position(|s| !s.is_finite()) {
            return Err(MetricsError::NonFiniteScore(pos));
        }
        if let Some(pos) = labels.iter().position(|l| *l > 1) {
            return Err(MetricsError::BadLabel(pos));
        }
        Ok(ScoredLabels { scores, labels })
    }

    pub fn from_points(points: &[(f64, u8)]) -> Result<Self, MetricsError> {
        ScoredLabels::new(
            points.iter().map(|p| p.0).collect(),
            points.iter().map(|p| p.1).collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }
}

/// Probability that a random positive outscores a random negative, ties
/// counted half, via tie-averaged ranks in O(n log n).
pub fn auc(data: &ScoredLabels) -> Result<f64, MetricsError> {
    let n = data.len();
    let positives = data.labels.iter().filter(|l| **l == 1).count();
    let negatives = n - positives;
    if positives == 0 || negatives == 0 {
        return Err(MetricsError::SingleClass(n));
    }

    let mut order: Vec<usize> = (0..n).collect();
    // Scores validated finite at construction, so the comparison is total.
    order.sort_by(|&a, &b| data.scores[a].partial_cmp(&data.scores[b]).unwrap());

    let mut ranks = vec![0.0f64; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && data.scores[order[j + 1]] == data.scores[order[i]] {
            j += 1;
        }
        // Average of the 1-based ranks i+1 ..= j+1.
        let avg = (i + j + 2) as f64 / 2.0;
        for k in i..=j {
            ranks[order[k]] = avg;
        }
        i = j + 1;
    }

    let rank_sum_pos: f64 = ranks
        .iter()
        .zip(&data.labels)
        .filter(|(_, l)| **l == 1)
        .map(|(r, _)| r)
        .sum();
    let p = positives as f64;
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * negatives as f64))
}

/// True when the two labelings induce the same partition, i.e. there is a
/// bijection between their cluster labels.
fn partitions_equivalent(a: &[usize], b: &[usize]) -> bool {
    let mut fwd: HashMap<usize, usize> = HashMap::new();
    let mut bwd: HashMap<usize, usize> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        if *fwd.entry(x).or_insert(y) != y || *bwd.entry(y).or_insert(x) != x {
            return false;
        }
    }
    true
}

/// Sorted distinct labels and, per element, the position of its label in
/// that sorted list. Keeps all downstream iteration deterministic.
fn compress_labels(xs: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let mut distinct: Vec<usize> = xs.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    let pos: HashMap<usize, usize> = distinct.iter().enumerate().map(|(i, &l)| (l, i)).collect();
    let compressed = xs.iter().map(|l| pos[l]).collect();
    (distinct, compressed)
}

/// AMI = (MI - E[MI]) / (max(H(a), H(b)) - E[MI]) with the exact
/// hypergeometric expected mutual information.
///
/// Identical partitions (up to relabeling) return exactly 1.0, which also
/// covers the degenerate single-cluster-vs-single-cluster case.
pub fn adjusted_mutual_information(a: &[usize], b: &[usize]) -> Result<f64, MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.is_empty() {
        return Err(MetricsError::Empty);
    }
    if partitions_equivalent(a, b) {
        return Ok(1.0);
    }

    let n = a.len();
    let (la, ca) = compress_labels(a);
    let (lb, cb) = compress_labels(b);
    let (ka, kb) = (la.len(), lb.len());

    let mut counts = vec![vec![0usize; kb]; ka];
    for (&i, &j) in ca.iter().zip(&cb) {
        counts[i][j] += 1;
    }
    let row: Vec<usize> = counts.iter().map(|r| r.iter().sum()).collect();
    let col: Vec<usize> = (0..kb).map(|j| counts.iter().map(|r| r[j]).sum()).collect();

    let nf = n as f64;
    let ln_n = nf.ln();
    let entropy = |sizes: &[usize]| -> f64 {
        sizes
            .iter()
            .map(|&s| (s as f64 / nf) * (ln_n - (s as f64).ln()))
            .sum()
    };
    let h_a = entropy(&row);
    let h_b = entropy(&col);

    let mut mi = 0.0;
    for (i, r) in counts.iter().enumerate() {
        for (j, &nij) in r.iter().enumerate() {
            if nij == 0 {
                continue;
            }
            let nij_f = nij as f64;
            mi += (nij_f / nf)
                * ((nij_f.ln() - (row[i] as f64).ln()) + (ln_n - (col[j] as f64).ln()));
        }
    }

    // Exact E[MI] under the hypergeometric model of random contingency
    // tables with fixed margins.
    let mut lnfact = vec![0.0f64; n + 1];
    for k in 1..=n {
        lnfact[k] = lnfact[k - 1] + (k as f64).ln();
    }
    let mut emi = 0.0;
    for &ai in &row {
        for &bj in &col {
            let lo = 1.max((ai + bj).saturating_sub(n));
            let hi = ai.min(bj);
            for m in lo..=hi {
                let mf = m as f64;
                let ln_p = lnfact[ai] + lnfact[bj] + lnfact[n - ai] + lnfact[n - bj]
                    - lnfact[n]
                    - lnfact[m]
                    - lnfact[ai - m]
                    - lnfact[bj - m]
                    - lnfact[n + m - ai - bj];
                emi += (mf / nf) * ((mf * nf) / ((ai * bj) as f64)).ln() * ln_p.exp();
            }
        }
    }

    let denom = h_a.max(h_b) - emi;
    if denom.abs() < 1e-12 {
        // Non-equivalent partitions with no headroom over chance.
        return Ok(0.0);
    }
    Ok((mi - emi) / denom)
}

/// Step-decay schedule: initial / 1.5^(epoch / 20), frozen from epoch 100 on.
pub fn lr_schedule(initial: f64, epoch: usize) -> f64 {
    let stage = epoch.min(99) / 20;
    initial / 1.5f64.powi(stage as i32)
}

/// Argmax over validation history, ties broken toward the earliest epoch.
pub fn select_best_epoch(history: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in history.iter().enumerate() {
        match best {
            None => best = Some(i),
            Some(b) if v > history[b] => best = Some(i),
            _ => {}
        }
    }
    best
}

/// Mean and sample standard deviation (n-1 denominator; 0 for n < 2).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    /// O(n^2) AUC oracle: pairwise comparisons, ties counted half.
    fn auc_pairwise(scores: &[f64], labels: &[u8]) -> f64 {
        let mut wins = 0.0f64;
        let mut pairs = 0.0f64;
        for (i, (&sp, &lp)) in scores.iter().zip(labels).enumerate() {
            if lp != 1 {
                continue;
            }
            for (j, (&sn, &ln)) in scores.iter().zip(labels).enumerate() {
                if ln != 0 || i == j {
                    continue;
                }
                pairs += 1.0;
                if sp > sn {
                    wins += 1.0;
                } else if sp == sn {
                    wins += 0.5;
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn auc_spot_values() {
        let perfect = ScoredLabels::new(vec![0.9, 0.1], vec![1, 0]).unwrap();
        assert_eq!(auc(&perfect).unwrap(), 1.0);

        let tied = ScoredLabels::new(vec![0.8, 0.8, 0.3], vec![1, 0, 0]).unwrap();
        assert_eq!(auc(&tied).unwrap(), 0.75);

        let reversed = ScoredLabels::new(vec![0.1, 0.9], vec![1, 0]).unwrap();
        assert_eq!(auc(&reversed).unwrap(), 0.0);

        let all_tied = ScoredLabels::new(vec![0.5; 6], vec![1, 0, 1, 0, 0, 1]).unwrap();
        assert_eq!(auc(&all_tied).unwrap(), 0.5);
    }

    #[test]
    fn auc_rejects_single_class_and_bad_construction() {
        let ones = ScoredLabels::new(vec![0.4, 0.6], vec![1, 1]).unwrap();
        assert!(matches!(auc(&ones), Err(MetricsError::SingleClass(2))));
        let zeros = ScoredLabels::new(vec![0.4, 0.6], vec![0, 0]).unwrap();
        assert!(matches!(auc(&zeros), Err(MetricsError::SingleClass(2))));

        assert!(matches!(
            ScoredLabels::new(vec![], vec![]),
            Err(MetricsError::Empty)
        ));
        assert!(matches!(
            ScoredLabels::new(vec![0.5], vec![2]),
            Err(MetricsError::BadLabel(0))
        ));
        assert!(matches!(
            ScoredLabels::new(vec![f64::NAN], vec![1]),
            Err(MetricsError::NonFiniteScore(0))
        ));
        assert!(matches!(
            ScoredLabels::new(vec![0.5], vec![1, 0]),
            Err(MetricsError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn auc_matches_pairwise_oracle_on_tied_random_inputs() {
        let mut rng = ChaCha20Rng::seed_from_u64(99);
        for _ in 0..200 {
            let n = rng.gen_range(2..60);
            // Coarse grid forces heavy ties.
            let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..7) as f64 / 6.0).collect();
            let mut labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2) as u8).collect();
            labels[0] = 1;
            if n > 1 {
                labels[1] = 0;
            }
            let fast = auc(&ScoredLabels::new(scores.clone(), labels.clone()).unwrap()).unwrap();
            let slow = auc_pairwise(&scores, &labels);
            assert!((fast - slow).abs() < 1e-12, "fast {fast}, slow {slow}");
        }
    }

    #[test]
    fn auc_is_invariant_under_increasing_transforms() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        for _ in 0..50 {
            let n = rng.gen_range(4..40);
            let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..10) as f64).collect();
            let mut labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2) as u8).collect();
            labels[0] = 1;
            labels[1] = 0;
            let base = auc(&ScoredLabels::new(scores.clone(), labels.clone()).unwrap()).unwrap();
            // Affine and odd-power maps are strictly increasing and keep the
            // grid collision-free.
            let affine: Vec<f64> = scores.iter().map(|s| 3.0 * s + 11.0).collect();
            let cubic: Vec<f64> = scores.iter().map(|s| s * s * s).collect();
            for transformed in [affine, cubic] {
                let t = auc(&ScoredLabels::new(transformed, labels.clone()).unwrap()).unwrap();
                assert_eq!(base.to_bits(), t.to_bits());
            }
        }
    }

    /// Mutual information of two labelings, natural log.
    fn mi_of(a: &[usize], b: &[usize]) -> f64 {
        let n = a.len() as f64;
        let mut joint: HashMap<(usize, usize), f64> = HashMap::new();
        let mut ma: HashMap<usize, f64> = HashMap::new();
        let mut mb: HashMap<usize, f64> = HashMap::new();
        for (&x, &y) in a.iter().zip(b) {
            *joint.entry((x, y)).or_default() += 1.0;
            *ma.entry(x).or_default() += 1.0;
            *mb.entry(y).or_default() += 1.0;
        }
        joint
            .iter()
            .map(|(&(x, y), &c)| (c / n) * ((c * n) / (ma[&x] * mb[&y])).ln())
            .sum()
    }

    fn entropy_of(xs: &[usize]) -> f64 {
        let n = xs.len() as f64;
        let mut m: HashMap<usize, f64> = HashMap::new();
        for &x in xs {
            *m.entry(x).or_default() += 1.0;
        }
        m.values().map(|&c| -(c / n) * (c / n).ln()).sum()
    }

    /// AMI oracle at tiny n: expected MI estimated exactly by enumerating
    /// every permutation of one labeling (the permutation model underlying
    /// the hypergeometric formula).
    fn ami_permutation_oracle(a: &[usize], b: &[usize]) -> f64 {
        let n = b.len();
        let mut order: Vec<usize> = (0..n).collect();
        let mut permutations = Vec::new();
        permute(&mut order, 0, &mut permutations);
        let emi: f64 = permutations
            .iter()
            .map(|p| {
                let shuffled: Vec<usize> = p.iter().map(|&i| b[i]).collect();
                mi_of(a, &shuffled)
            })
            .sum::<f64>()
            / permutations.len() as f64;
        let mi = mi_of(a, b);
        let h_max = entropy_of(a).max(entropy_of(b));
        (mi - emi) / (h_max - emi)
    }

    fn permute(xs: &mut Vec<usize>, k: usize, out: &mut Vec<Vec<usize>>) {
        if k == xs.len() {
            out.push(xs.clone());
            return;
        }
        for i in k..xs.len() {
            xs.swap(k, i);
            permute(xs, k + 1, out);
            xs.swap(k, i);
        }
    }

    #[test]
    fn ami_is_exactly_one_for_equivalent_partitions() {
        assert_eq!(
            adjusted_mutual_information(&[1, 1, 2, 2], &[1, 1, 2, 2]).unwrap(),
            1.0
        );
        // Relabeled and permuted labels.
        assert_eq!(
            adjusted_mutual_information(&[1, 1, 2, 2, 3], &[7, 7, 5, 5, 9]).unwrap(),
            1.0
        );
        // Single cluster vs single cluster: the documented degenerate case.
        assert_eq!(
            adjusted_mutual_information(&[4, 4, 4], &[1, 1, 1]).unwrap(),
            1.0
        );
    }

    #[test]
    fn ami_matches_permutation_oracle_at_small_n() {
        let cases: Vec<(Vec<usize>, Vec<usize>)> = vec![
            (vec![1, 1, 2, 2], vec![1, 2, 1, 2]),
            (vec![1, 1, 2, 2], vec![1, 1, 1, 2]),
            (vec![1, 2, 3, 3], vec![1, 1, 2, 2]),
            (vec![1, 1, 1, 2], vec![2, 1, 1, 1]),
            (vec![1, 1, 2, 2, 3], vec![1, 2, 2, 3, 3]),
        ];
        for (a, b) in cases {
            let got = adjusted_mutual_information(&a, &b).unwrap();
            let want = ami_permutation_oracle(&a, &b);
            assert!(
                (got - want).abs() < 1e-10,
                "a={a:?} b={b:?}: got {got}, oracle {want}"
            );
        }
    }

    #[test]
    fn ami_is_symmetric_and_relabel_invariant() {
        let mut rng = ChaCha20Rng::seed_from_u64(21);
        for _ in 0..60 {
            let n = rng.gen_range(4..30);
            let a: Vec<usize> = (0..n).map(|_| rng.gen_range(0..4)).collect();
            let b: Vec<usize> = (0..n).map(|_| rng.gen_range(0..3)).collect();
            let ab = adjusted_mutual_information(&a, &b).unwrap();
            let ba = adjusted_mutual_information(&b, &a).unwrap();
            assert!((ab - ba).abs() < 1e-12, "symmetry: {ab} vs {ba}");
            assert!(ab <= 1.0 + 1e-12);

            // Relabel b through an affine map on labels.
            let b2: Vec<usize> = b.iter().map(|&x| 10 * x + 3).collect();
            let ab2 = adjusted_mutual_information(&a, &b2).unwrap();
            assert!((ab - ab2).abs() < 1e-12, "relabel: {ab} vs {ab2}");
        }
    }

    #[test]
    fn ami_rejects_mismatched_or_empty_inputs() {
        assert!(matches!(
            adjusted_mutual_information(&[1, 2], &[1]),
            Err(MetricsError::LengthMismatch { .. })
        ));
        assert!(matches!(
            adjusted_mutual_information(&[], &[]),
            Err(MetricsError::Empty)
        ));
    }

    #[test]
    fn lr_schedule_spot_values_and_freeze() {
        let gamma = 0.03;
        assert_eq!(lr_schedule(gamma, 0).to_bits(), gamma.to_bits());
        assert_eq!(lr_schedule(gamma, 19).to_bits(), gamma.to_bits());
        assert_eq!(lr_schedule(gamma, 20).to_bits(), (gamma / 1.5).to_bits());
        assert_eq!(lr_schedule(gamma, 25).to_bits(), (gamma / 1.5).to_bits());
        assert_eq!(
            lr_schedule(gamma, 45).to_bits(),
            (gamma / (1.5 * 1.5)).to_bits()
        );
        assert_eq!(lr_schedule(gamma, 99).to_bits(), lr_schedule(gamma, 119).to_bits());
        assert_eq!(lr_schedule(gamma, 100).to_bits(), lr_schedule(gamma, 5000).to_bits());
    }

    #[test]
    fn lr_schedule_is_non_increasing() {
        let mut prev = f64::INFINITY;
        for epoch in 0..200 {
            let lr = lr_schedule(0.05, epoch);
            assert!(lr <= prev, "epoch {epoch}");
            assert!(lr > 0.0);
            prev = lr;
        }
    }

    #[test]
    fn best_epoch_selection() {
        assert_eq!(select_best_epoch(&[0.6, 0.7, 0.65]), Some(1));
        assert_eq!(select_best_epoch(&[0.7, 0.7]), Some(0));
        assert_eq!(select_best_epoch(&[0.1, 0.2, 0.3, 0.4]), Some(3));
        assert_eq!(select_best_epoch(&[]), None);
    }

    #[test]
    fn mean_std_two_sample_example() {
        let (m, s) = mean_std(&[0.8, 0.82]);
        assert!((m - 0.81).abs() < 1e-15);
        assert!((s - 0.014142135623730963).abs() < 1e-12, "std {s}");
        let (m1, s1) = mean_std(&[0.5]);
        assert_eq!((m1, s1), (0.5, 0.0));
        // Identical values: std is zero up to accumulation noise in the mean.
        let (_, s0) = mean_std(&[0.7, 0.7, 0.7]);
        assert!(s0 < 1e-12);
    }
}
