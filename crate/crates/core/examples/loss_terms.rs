//! The individual training-loss terms and their weighted combination.

use densecap::matching::{counter_loss, focal_loss, temporal_giou, LossWeights};

fn main() -> densecap::Result<()> {
    println!("gIoU([0,2], [1,3])        = {:.6}", temporal_giou((0.0, 2.0), (1.0, 3.0))?);
    println!("gIoU([0,1], [2,3])        = {:.6}", temporal_giou((0.0, 1.0), (2.0, 3.0))?);
    println!("focal(p=0.5, positive)    = {:.6}", focal_loss(0.5, true, 0.25, 2.0)?);
    println!("focal(p=0.9, negative)    = {:.6}", focal_loss(0.9, false, 0.25, 2.0)?);
    println!("counter CE, uniform of 11 = {:.6}", counter_loss(&[1.0 / 11.0; 11], 3));
    let w = LossWeights::default();
    println!("combined (1, 1, 1, 1)     = {}", w.combine(1.0, 1.0, 1.0, 1.0));
    Ok(())
}
