//! Optimal query-to-event assignment on a rectangular cost matrix.

use densecap::matching::{hungarian_match, matching_cost, SegmentPrediction};

fn main() -> densecap::Result<()> {
    let cost = vec![vec![4.0, 1.0, 3.0], vec![2.0, 0.0, 5.0], vec![3.0, 2.0, 2.0], vec![1.0, 1.0, 1.0]];
    let m = hungarian_match(&cost)?;
    println!("pairs {:?}, total cost {}", m.pairs, m.cost(&cost));

    // the cost used in training: focal classification plus generalised IoU
    let preds = [
        SegmentPrediction { center: 0.2, width: 0.2, confidence: 0.9 },
        SegmentPrediction { center: 0.5, width: 0.4, confidence: 0.3 },
        SegmentPrediction { center: 0.8, width: 0.2, confidence: 0.7 },
    ];
    let targets = [(0.7, 0.9), (0.1, 0.3)];
    let c = matching_cost(&preds, &targets, 1.0, 2.0)?;
    let m = hungarian_match(&c)?;
    for (q, g) in m.pairs {
        println!("query {q} -> event {g} (cost {:.3})", c[q][g]);
    }
    Ok(())
}
