//! Writes a feature file, reads it back, and shows the validator rejecting
//! a truncated and a corrupted copy.

use densecap::datapipe::{resample_features, FeatureSequence, FEATURE_HEADER_LEN};
use densecap::diffcore::Tensor;

fn main() -> densecap::Result<()> {
    let m = Tensor::matrix(4, 3, (0..12).map(|i| i as f64 * 0.5).collect())?;
    let fs = FeatureSequence::new("clip_0001", 2.0, m)?;
    let bytes = fs.to_bytes();
    println!("{} bytes: {FEATURE_HEADER_LEN}-byte header + 4 x 4 x 3", bytes.len());

    let back = FeatureSequence::from_bytes("clip_0001", &bytes)?;
    println!("round trip equal: {}", back == fs);

    match FeatureSequence::from_bytes("clip_0001", &bytes[..bytes.len() - 2]) {
        Err(e) => println!("truncated: {e}"),
        Ok(_) => println!("truncated file was accepted"),
    }
    let mut bad = bytes.clone();
    bad[0] = b'X';
    match FeatureSequence::from_bytes("clip_0001", &bad) {
        Err(e) => println!("bad magic: {e}"),
        Ok(_) => println!("corrupted file was accepted"),
    }

    let r = resample_features(&fs, 7)?;
    println!("resampled to {} frames, first column {:?}", r.frames(), (0..r.frames()).map(|i| r.matrix.row(i)[0]).collect::<Vec<_>>());
    Ok(())
}
