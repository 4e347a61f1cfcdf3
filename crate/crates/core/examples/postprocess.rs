//! Cleans generated captions: drops unknown tokens and formats units.

use densecap::postproc::{normalize_units, postprocess, strip_unknown, PostprocRules, RewriteRule};

fn main() -> densecap::Result<()> {
    let rules = PostprocRules::default();
    for raw in ["the vehicle goes straight at 30 km / h.", "the <unk> pedestrian walks <unk> slowly", "speed 2 m / s"] {
        println!("{raw:?} -> {:?}", postprocess(raw, &rules));
    }
    println!("{:?}", strip_unknown("<unk>"));

    let custom = PostprocRules::new(vec![RewriteRule::new(&["traffic", "light"], "traffic-light")])?;
    println!("{}", custom.to_json_string());
    println!("{:?}", normalize_units("stops at the traffic light.", &custom));
    Ok(())
}
