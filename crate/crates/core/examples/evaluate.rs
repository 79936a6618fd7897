//! Top-k accuracy, per-class average precision and group MAP on a handful
//! of hand-written score vectors.

use pofsm::pipeline::{average_precision, evaluate_scores};

fn main() -> pofsm::Result<()> {
    let classes: Vec<String> = ["left", "right", "up", "down"].map(String::from).to_vec();
    let groups: Vec<String> = ["horizontal", "horizontal", "vertical", "vertical"].map(String::from).to_vec();
    let scores = vec![
        vec![0.7, 0.1, 0.1, 0.1],
        vec![0.2, 0.5, 0.2, 0.1],
        vec![0.4, 0.3, 0.2, 0.1],
        vec![0.1, 0.1, 0.2, 0.6],
        vec![0.1, 0.2, 0.6, 0.1],
        vec![0.3, 0.4, 0.1, 0.2],
    ];
    let labels = vec![0, 1, 2, 3, 2, 0];
    let report = evaluate_scores(&scores, &labels, &classes, &groups)?;
    print!("{}", report.to_table());

    // AP of a single ranking: positives at ranks 1 and 3
    let ap = average_precision(&[0.9, 0.8, 0.7, 0.1], &[true, false, true, false]);
    println!("\nAP of ranking [+, -, +, -] = {:.4} (expected (1 + 2/3) / 2)", ap.unwrap_or(f64::NAN));
    Ok(())
}
