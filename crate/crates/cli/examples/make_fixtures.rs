//! Regenerates the bundled fixture documents under `crates/cli/fixtures/`.

use std::fs;
use std::path::Path;

use graphbm::presets::{two_triangle_config, walsh_star_config};

fn main() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    fs::create_dir_all(&dir).unwrap();
    fs::write(dir.join("star.json"), walsh_star_config().to_json() + "\n").unwrap();
    fs::write(
        dir.join("two_triangle.json"),
        two_triangle_config().to_json() + "\n",
    )
    .unwrap();
    println!("fixtures written to {}", dir.display());
}
