use crate::error::{Error, Result};
use crate::sequence::{hamming_fraction, Sequence, N_TOKENS};

/// Mean pairwise Hamming fraction over all unordered pairs of samples.
pub fn diversity(samples: &[Sequence]) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::Undefined(format!("diversity needs at least 2 samples, got {}", samples.len())));
    }
    let mut total = 0.0;
    let mut n = 0usize;
    for i in 0..samples.len() {
        for j in i + 1..samples.len() {
            total += hamming_fraction(&samples[i], &samples[j])?;
            n += 1;
        }
    }
    Ok(total / n as f64)
}

/// Fraction of positions where `sample` matches `native`.
pub fn recovery(native: &Sequence, sample: &Sequence) -> Result<f64> {
    Ok(1.0 - hamming_fraction(native, sample)?)
}

pub fn best_of_n_recovery(native: &Sequence, samples: &[Sequence]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Undefined("best-of-N recovery needs at least one sample".into()));
    }
    samples
        .iter()
        .try_fold(f64::NEG_INFINITY, |best, s| Ok(best.max(recovery(native, s)?)))
}

/// Ranks starting at 1, tied values sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && values[idx[end]] == values[idx[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &k in &idx[start..end] {
            ranks[k] = rank;
        }
        start = end;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    (saa > 0.0 && sbb > 0.0).then(|| (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's ρ: Pearson correlation of average ranks.
pub fn rank_correlation(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!("{} vs {} values", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::Undefined("rank correlation needs at least 2 values".into()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("rank correlation of non-finite values".into()));
    }
    pearson(&average_ranks(a), &average_ranks(b))
        .ok_or_else(|| Error::Undefined("rank correlation with zero variance".into()))
}

/// Token frequencies over all positions of `samples`.
pub fn token_frequencies<'a>(samples: impl IntoIterator<Item = &'a Sequence>) -> [f64; N_TOKENS] {
    let mut counts = [0.0; N_TOKENS];
    let mut total = 0.0;
    for s in samples {
        for &t in s.tokens() {
            counts[t as usize] += 1.0;
            total += 1.0;
        }
    }
    if total > 0.0 {
        counts.iter_mut().for_each(|c| *c /= total);
    }
    counts
}

pub const FREQ_SMOOTHING: f64 = 1e-6;

fn smooth(p: &[f64]) -> Vec<f64> {
    let z: f64 = p.iter().map(|v| v + FREQ_SMOOTHING).sum();
    p.iter().map(|v| (v + FREQ_SMOOTHING) / z).collect()
}

/// `KL(p ‖ q)` after adding 1e-6 to every cell of both and renormalizing.
pub fn token_freq_kl(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != N_TOKENS || q.len() != N_TOKENS {
        return Err(Error::Dimension(format!("token distributions need {N_TOKENS} entries")));
    }
    for (name, d) in [("first", p), ("second", q)] {
        if d.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidInput(format!("{name} distribution has a negative or non-finite entry")));
        }
        let sum: f64 = d.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!("{name} distribution sums to {sum}")));
        }
    }
    let (p, q) = (smooth(p), smooth(q));
    Ok(p.iter().zip(&q).map(|(a, b)| a * (a / b).ln()).sum::<f64>().max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seqs(xs: &[&str]) -> Vec<Sequence> {
        xs.iter().map(|x| x.parse().unwrap()).collect()
    }

    #[test]
    fn diversity_examples() {
        assert_eq!(diversity(&seqs(&["ACDE"; 4])).unwrap(), 0.0);
        assert_eq!(diversity(&seqs(&["ACDE", "CDEF"])).unwrap(), 1.0);
        let d = diversity(&seqs(&["AAAA", "AAAC", "AACC"])).unwrap();
        assert!((d - 1.0 / 3.0).abs() < 1e-15);
        assert!(matches!(diversity(&seqs(&["AAAA"])), Err(Error::Undefined(_))));
    }

    #[test]
    fn recovery_examples() {
        let s = seqs(&["ACDE", "ACDA", "FGHI", "ACDE"]);
        assert_eq!(recovery(&s[0], &s[3]).unwrap(), 1.0);
        assert_eq!(recovery(&s[0], &s[2]).unwrap(), 0.0);
        assert_eq!(recovery(&s[0], &s[1]).unwrap(), 0.75);
        assert!(recovery(&s[0], &seqs(&["AC"])[0]).is_err());
    }

    #[test]
    fn best_of_n_examples() {
        let native: Sequence = "ACDEFG".parse().unwrap();
        let s = seqs(&["ACWWWW", "WWWWWW", "ACDEWW"]);
        assert_eq!(best_of_n_recovery(&native, &s[..1]).unwrap(), recovery(&native, &s[0]).unwrap());
        assert!((best_of_n_recovery(&native, &s).unwrap() - 4.0 / 6.0).abs() < 1e-15);
        let mut with_native = s.clone();
        with_native.push(native.clone());
        assert_eq!(best_of_n_recovery(&native, &with_native).unwrap(), 1.0);
    }

    #[test]
    fn spearman_examples() {
        assert_eq!(rank_correlation(&[1.0, 2.0, 3.0, 4.0], &[10.0, 20.0, 30.0, 40.0]).unwrap(), 1.0);
        assert_eq!(rank_correlation(&[1.0, 2.0, 3.0, 4.0], &[4.0, 3.0, 2.0, 1.0]).unwrap(), -1.0);
        let r = rank_correlation(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((r - 0.8).abs() < 1e-12);
        assert!(matches!(rank_correlation(&[1.0, 1.0], &[1.0, 2.0]), Err(Error::Undefined(_))));
        assert_eq!(average_ranks(&[5.0, 1.0, 5.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn token_kl_examples() {
        let u = [1.0 / 20.0; 20];
        assert_eq!(token_freq_kl(&u, &u).unwrap(), 0.0);
        let mut p = [0.0; 20];
        p[0] = 1.0;
        let z = 1.0 + 20.0 * FREQ_SMOOTHING;
        let (a, b) = ((1.0 + FREQ_SMOOTHING) / z, FREQ_SMOOTHING / z);
        let expected = a * (a / 0.05).ln() + 19.0 * b * (b / 0.05).ln();
        assert!((token_freq_kl(&p, &u).unwrap() - expected).abs() < 1e-12);
        let mut neg = u;
        neg[0] = -0.05;
        neg[1] += 0.1;
        assert!(token_freq_kl(&neg, &u).is_err());
    }

    #[test]
    fn frequencies_sum_to_one() {
        let f = token_frequencies(&seqs(&["AACD", "WWWW"]));
        assert!((f.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(f[0], 0.25);
    }
}
