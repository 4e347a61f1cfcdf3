//! Finite-difference check of the full training loss on the micro model.

use std::time::Instant;

use densecap::model::{ModelConfig, Pdvc};
use densecap::trainer::{check_loss_gradients, GRAD_CHECK_EPS};

fn main() -> densecap::Result<()> {
    let cfg = ModelConfig::micro(8, 20);
    let t0 = Instant::now();
    let r = check_loss_gradients(&cfg, 0, GRAD_CHECK_EPS)?;
    let names = Pdvc::new(cfg, 0)?.params.names().to_vec();
    let (p, i) = r.worst.expect("at least one entry");
    println!(
        "{} entries, max relative error {:.3e} at {}[{i}], {:.1}s",
        r.entries,
        r.max_rel_error,
        names[p],
        t0.elapsed().as_secs_f64()
    );
    Ok(())
}
