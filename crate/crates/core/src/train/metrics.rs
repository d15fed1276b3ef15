//! Top-1 accuracy and mean average precision.

/// Index of the largest score; ties go to the lowest index.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

pub fn accuracy(scores: &[Vec<f64>], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = scores.iter().zip(labels).filter(|(s, &y)| argmax(s) == y).count();
    hits as f64 / labels.len() as f64
}

/// Non-interpolated AP: mean of precision@k over the ranks k holding a
/// positive. Ranking is by descending score, ties broken by index. `None`
/// when there are no positives.
pub fn average_precision(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let total = positive.iter().filter(|&&p| p).count();
    if total == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if positive[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Some(sum / total as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MapResult {
    pub map: f64,
    /// Classes with no positive example.
    pub skipped: Vec<usize>,
}

/// One-vs-rest AP averaged over the classes present in `labels`.
pub fn mean_average_precision(scores: &[Vec<f64>], labels: &[usize], classes: usize) -> MapResult {
    let mut aps = Vec::new();
    let mut skipped = Vec::new();
    for c in 0..classes {
        let col: Vec<f64> = scores.iter().map(|s| s[c]).collect();
        let pos: Vec<bool> = labels.iter().map(|&y| y == c).collect();
        match average_precision(&col, &pos) {
            Some(ap) => aps.push(ap),
            None => skipped.push(c),
        }
    }
    let map = if aps.is_empty() { 0.0 } else { aps.iter().sum::<f64>() / aps.len() as f64 };
    MapResult { map, skipped }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_ranked_case() {
        // Ranked: +, −, +  → precisions 1 and 2/3 at the positives.
        let ap = average_precision(&[0.9, 0.8, 0.3], &[true, false, true]).unwrap();
        assert!((ap - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_classifier() {
        let labels = [0, 1, 2, 3, 1];
        let scores: Vec<Vec<f64>> = labels
            .iter()
            .map(|&y| (0..4).map(|c| if c == y { 0.9 } else { 0.1 / 3.0 }).collect())
            .collect();
        assert_eq!(accuracy(&scores, &labels), 1.0);
        assert_eq!(mean_average_precision(&scores, &labels, 4).map, 1.0);
    }

    #[test]
    fn constant_scores_hit_chance() {
        let labels: Vec<usize> = (0..40).map(|i| i % 4).collect();
        let scores = vec![vec![0.25; 4]; 40];
        assert_eq!(accuracy(&scores, &labels), 0.25);
    }

    #[test]
    fn absent_class_is_skipped() {
        let r = mean_average_precision(&[vec![0.6, 0.4, 0.0], vec![0.3, 0.7, 0.0]], &[0, 1], 3);
        assert_eq!(r.skipped, vec![2]);
        assert_eq!(r.map, 1.0);
    }
}
