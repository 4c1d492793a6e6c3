/// Length of the longest common subsequence, over Unicode scalar values.
pub fn lcs_len(a: &[char], b: &[char]) -> usize {
    let (a, b) = if a.len() < b.len() { (b, a) } else { (a, b) };
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for &ca in a {
        for (j, &cb) in b.iter().enumerate() {
            cur[j + 1] = if ca == cb {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub(crate) fn indel_similarity_chars(a: &[char], b: &[char]) -> f64 {
    let total = a.len() + b.len();
    if total == 0 {
        return 100.0;
    }
    100.0 * (2 * lcs_len(a, b)) as f64 / total as f64
}

/// `100 · 2·LCS(a, b) / (|a| + |b|)`, and 100 when both are empty.
pub fn normalized_indel_similarity(a: &str, b: &str) -> f64 {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    indel_similarity_chars(&a, &b)
}

/// Upper bound on the similarity of strings with these lengths.
pub(crate) fn similarity_bound(la: usize, lb: usize) -> f64 {
    if la + lb == 0 {
        100.0
    } else {
        200.0 * la.min(lb) as f64 / (la + lb) as f64
    }
}
