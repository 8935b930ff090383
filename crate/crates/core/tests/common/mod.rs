#![allow(dead_code)]

use std::path::{Path, PathBuf};

/// A lightly coupled pair of second-order lags, in the LTI file format.
pub const COUPLED_PLANT: &str = r#"
inputs = 2
outputs = 2

[[entry]]
output = 0
input = 0
num = [355.3]
den = [1.0, 18.85, 355.3]

[[entry]]
output = 1
input = 1
num = [250.0]
den = [1.0, 15.0, 250.0]

[[entry]]
output = 0
input = 1
num = [0.5]
den = [1.0, 10.0]
"#;

pub fn write_plant(dir: &Path) -> PathBuf {
    let p = dir.join("plant.toml");
    std::fs::write(&p, COUPLED_PLANT).unwrap();
    p
}
