//! Top-k accuracy, per-class average precision and MAP by group.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};

/// Class indices ordered by descending score, ties to the lower index.
pub fn ranked_classes(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

pub fn top_k_correct(scores: &[f64], label: usize, k: usize) -> bool {
    ranked_classes(scores).iter().take(k).any(|&c| c == label)
}

/// Precision averaged over the ranks of the positives, with items sorted by
/// descending score and ties kept in input order. `None` when there are no
/// positives.
pub fn average_precision(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let (mut hits, mut sum) = (0usize, 0.0);
    for (rank, &i) in order.iter().enumerate() {
        if positive[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    (hits > 0).then(|| sum / hits as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassAp {
    pub class: String,
    pub group: String,
    pub ap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub samples: usize,
    pub top1: f64,
    pub top5: f64,
    /// Classes with at least one test sample, in vocabulary order.
    pub per_class: Vec<ClassAp>,
    /// `(group, MAP)` in order of first appearance.
    pub group_map: Vec<(String, f64)>,
    pub map: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub classes: Vec<String>,
}

/// Builds a report from per-sample class scores. `classes` and `groups`
/// are indexed by label.
pub fn evaluate_scores(scores: &[Vec<f64>], labels: &[usize], classes: &[String], groups: &[String]) -> Result<EvalReport> {
    let n = classes.len();
    if scores.is_empty() {
        return Err(Error::data("test split is empty"));
    }
    if scores.len() != labels.len() || groups.len() != n {
        return Err(Error::data("scores, labels and vocabularies disagree in length"));
    }
    if let Some(s) = scores.iter().find(|s| s.len() != n) {
        return Err(Error::data(format!("score vector has {} entries for {n} classes", s.len())));
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= n) {
        return Err(Error::data(format!("label {y} outside the {n}-class vocabulary")));
    }
    let m = scores.len() as f64;
    let mut confusion = vec![vec![0usize; n]; n];
    let (mut top1, mut top5) = (0usize, 0usize);
    for (s, &y) in scores.iter().zip(labels) {
        let ranked = ranked_classes(s);
        confusion[y][ranked[0]] += 1;
        top1 += usize::from(ranked[0] == y);
        top5 += usize::from(ranked.iter().take(5).any(|&c| c == y));
    }
    let mut per_class = Vec::new();
    for c in 0..n {
        let col: Vec<f64> = scores.iter().map(|s| s[c]).collect();
        let pos: Vec<bool> = labels.iter().map(|&y| y == c).collect();
        if let Some(ap) = average_precision(&col, &pos) {
            per_class.push(ClassAp { class: classes[c].clone(), group: groups[c].clone(), ap });
        }
    }
    let mut group_map: Vec<(String, f64)> = Vec::new();
    for g in groups {
        if group_map.iter().any(|(name, _)| name == g) {
            continue;
        }
        let aps: Vec<f64> = per_class.iter().filter(|c| &c.group == g).map(|c| c.ap).collect();
        if !aps.is_empty() {
            group_map.push((g.clone(), aps.iter().sum::<f64>() / aps.len() as f64));
        }
    }
    let map = per_class.iter().map(|c| c.ap).sum::<f64>() / per_class.len() as f64;
    Ok(EvalReport {
        samples: scores.len(),
        top1: top1 as f64 / m,
        top5: top5 as f64 / m,
        per_class,
        group_map,
        map,
        confusion,
        classes: classes.to_vec(),
    })
}

impl EvalReport {
    /// Human-readable table.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "samples       {}", self.samples);
        let _ = writeln!(s, "top-1         {:.4}", self.top1);
        let _ = writeln!(s, "top-5         {:.4}", self.top5);
        let _ = writeln!(s, "MAP           {:.4}", self.map);
        let _ = writeln!(s, "\n{:<16} {:<16} {:>8}", "class", "group", "AP");
        for c in &self.per_class {
            let _ = writeln!(s, "{:<16} {:<16} {:>8.4}", c.class, c.group, c.ap);
        }
        let _ = writeln!(s, "\n{:<16} {:>8}", "group", "MAP");
        for (g, v) in &self.group_map {
            let _ = writeln!(s, "{g:<16} {v:>8.4}");
        }
        let _ = writeln!(s, "\nconfusion (rows: true, cols: predicted)");
        for (c, row) in self.classes.iter().zip(&self.confusion) {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:>5}")).collect();
            let _ = writeln!(s, "{c:<16}{}", cells.join(""));
        }
        s
    }

    /// `class,ap` rows followed by a `metric,value` summary block.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("class,ap\n");
        for c in &self.per_class {
            let _ = writeln!(s, "{},{}", c.class, c.ap);
        }
        let _ = writeln!(s, "\nmetric,value");
        let _ = writeln!(s, "top1,{}", self.top1);
        let _ = writeln!(s, "top5,{}", self.top5);
        let _ = writeln!(s, "map,{}", self.map);
        for (g, v) in &self.group_map {
            let _ = writeln!(s, "map:{g},{v}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn ap_hand_example() {
        let ap = average_precision(&[0.9, 0.8, 0.7, 0.1], &[true, false, true, false]).unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn ties_go_to_lower_class() {
        assert_eq!(ranked_classes(&[0.2, 0.4, 0.4]), vec![1, 2, 0]);
        assert!(top_k_correct(&[0.5, 0.5], 0, 1));
        assert!(!top_k_correct(&[0.5, 0.5], 1, 1));
    }

    #[test]
    fn perfect_classifier() {
        let scores = vec![vec![0.9, 0.1, 0.0], vec![0.0, 0.8, 0.2], vec![0.1, 0.2, 0.7]];
        let r = evaluate_scores(&scores, &[0, 1, 2], &names(&["a", "b", "c"]), &names(&["g", "g", "h"])).unwrap();
        assert_eq!((r.top1, r.top5, r.map), (1.0, 1.0, 1.0));
        assert!(r.per_class.iter().all(|c| c.ap == 1.0));
        assert_eq!(r.group_map, vec![("g".to_string(), 1.0), ("h".to_string(), 1.0)]);
        assert_eq!(r.confusion, vec![vec![1, 0, 0], vec![0, 1, 0], vec![0, 0, 1]]);
        assert!(r.to_csv().starts_with("class,ap\na,1\n"));
    }

    #[test]
    fn label_outside_vocab() {
        let r = evaluate_scores(&[vec![1.0]], &[3], &names(&["a"]), &names(&["g"]));
        assert!(matches!(r, Err(Error::Data(_))));
    }
}
