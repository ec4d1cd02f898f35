//! Write a rank-3 tensor to the binary tensor format and read it back.
//!
//! ```bash
//! cargo run -p wsseg --example tensor_roundtrip
//! ```

use wsseg::grid::Grid3D;
use wsseg::io;

fn main() -> wsseg::Result<()> {
    let dir = std::env::temp_dir().join("wsseg_example_tensor");
    std::fs::create_dir_all(&dir).expect("temp dir");
    let path = dir.join("attention.wsst");

    let features = Grid3D::new(
        2,
        2,
        3,
        vec![
            0.0, 0.5, 1.0, //
            1.5, 2.0, 2.5, // channel 0
            -1.0, -0.5, 0.0, //
            0.5, 1.0, 1.5, // channel 1
        ],
    )?;
    io::write_grid3(&path, &features)?;
    let size = std::fs::metadata(&path).expect("file exists").len();
    println!(
        "wrote {}x{}x{} tensor ({size} bytes: 8 header + 12 dims + 48 payload)",
        features.channels(),
        features.height(),
        features.width()
    );

    let back = io::read_grid3(&path)?;
    assert_eq!(back, features);
    println!("round-trip is bit-exact");

    // Decoding is strict: any trailing byte is an error with an offset.
    let mut bytes = std::fs::read(&path).expect("read");
    bytes.push(0);
    std::fs::write(&path, &bytes).expect("write");
    match io::read_grid3(&path) {
        Err(e) => println!("corrupted file rejected: {e}"),
        Ok(_) => unreachable!("trailing bytes must not decode"),
    }
    Ok(())
}
