//! ASCII PLY point clouds with per-vertex color.

use std::path::Path;

use planesweep_core::depth::CloudPoint;

use crate::error::Result;
use crate::fmt::sig9;

pub fn encode(points: &[CloudPoint]) -> String {
    let mut s = String::new();
    s.push_str("ply\nformat ascii 1.0\n");
    s.push_str(&format!("element vertex {}\n", points.len()));
    for p in ["x", "y", "z"] {
        s.push_str(&format!("property float {p}\n"));
    }
    for c in ["red", "green", "blue"] {
        s.push_str(&format!("property uchar {c}\n"));
    }
    s.push_str("end_header\n");
    for p in points {
        let [x, y, z] = p.position;
        let [r, g, b] = p.color;
        s.push_str(&format!("{} {} {} {r} {g} {b}\n", sig9(x), sig9(y), sig9(z)));
    }
    s
}

pub fn write(path: &Path, points: &[CloudPoint]) -> Result<()> {
    super::write_bytes(path, encode(points).as_bytes())
}
