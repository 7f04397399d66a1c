/// Minimum within-cluster SSE over every assignment of `points` to `k`
/// non-empty labelled groups, with one optimal assignment. Exponential; for
/// small inputs only.
pub fn best_partition(points: &[f64], k: usize) -> (f64, Vec<usize>) {
    let n = points.len();
    let mut best = (f64::INFINITY, Vec::new());
    let mut labels = vec![0usize; n];
    let total = k.pow(n as u32);
    for code in 0..total {
        let mut c = code;
        for l in labels.iter_mut() {
            *l = c % k;
            c /= k;
        }
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for (x, &l) in points.iter().zip(&labels) {
            sums[l] += x;
            counts[l] += 1;
        }
        if counts.contains(&0) {
            continue;
        }
        let sse: f64 = points
            .iter()
            .zip(&labels)
            .map(|(x, &l)| {
                let m = sums[l] / counts[l] as f64;
                (x - m) * (x - m)
            })
            .sum();
        if sse < best.0 - 1e-12 {
            best = (sse, labels.clone());
        }
    }
    best
}

/// Whether two labellings describe the same partition.
pub fn same_partition(a: &[usize], b: &[usize]) -> bool {
    a.len() == b.len()
        && (0..a.len()).all(|i| (0..a.len()).all(|j| (a[i] == a[j]) == (b[i] == b[j])))
}
