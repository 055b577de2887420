//! Plain-text sidecar files: intrinsics, poses, class tables and
//! `key = value` metadata.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use planesweep_core::geometry::{CameraIntrinsics, Pose};

use crate::error::{Error, Result};
use crate::fmt::sig9;

/// Rotations read from text are accepted when `RᵀR` is this close to `I`
/// and then re-orthonormalized; 9-digit output loses more than the
/// core's 1e-9 tolerance allows.
pub const POSE_READ_TOLERANCE: f64 = 1e-6;

pub fn read_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

// Non-empty, non-comment lines with their 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn numbers<T: FromStr>(path: &Path, line: usize, text: &str, expected: usize) -> Result<Vec<T>> {
    let field = format!("line {line}");
    let values = text
        .split_whitespace()
        .map(|t| {
            t.parse::<T>()
                .map_err(|_| Error::parse(path, &field, format!("`{t}` is not a number")))
        })
        .collect::<Result<Vec<T>>>()?;
    if values.len() != expected {
        return Err(Error::parse(
            path,
            field,
            format!("expected {expected} values, found {}", values.len()),
        ));
    }
    Ok(values)
}

pub fn encode_intrinsics(k: &CameraIntrinsics) -> String {
    format!(
        "# fx fy cx cy width height\n{} {} {} {} {} {}\n",
        sig9(k.fx),
        sig9(k.fy),
        sig9(k.cx),
        sig9(k.cy),
        k.width,
        k.height
    )
}

pub fn read_intrinsics(path: &Path) -> Result<CameraIntrinsics> {
    let text = read_string(path)?;
    let mut lines = content_lines(&text);
    let (n, line) = lines
        .next()
        .ok_or_else(|| Error::parse(path, "intrinsics", "file is empty"))?;
    let tokens: Vec<&str> = line.split_whitespace().collect();
    if tokens.len() != 6 {
        return Err(Error::parse(
            path,
            format!("line {n}"),
            "expected fx fy cx cy width height",
        ));
    }
    let f = numbers::<f64>(path, n, &tokens[..4].join(" "), 4)?;
    let dims = numbers::<usize>(path, n, &tokens[4..].join(" "), 2)?;
    if let Some((extra, _)) = lines.next() {
        return Err(Error::parse(path, format!("line {extra}"), "unexpected extra line"));
    }
    CameraIntrinsics::new(f[0], f[1], f[2], f[3], dims[0], dims[1]).map_err(|e| Error::parse(path, "intrinsics", e))
}

/// One pose per line: the 3×4 matrix `[R | t]` row-major (world-to-camera).
pub fn encode_poses(poses: &[Pose]) -> String {
    let mut s = String::from("# world-to-camera [R | t], row-major 3x4, one frame per line\n");
    for p in poses {
        let row: Vec<String> = p.to_rows().iter().map(|&v| sig9(v)).collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

// Gram-Schmidt on the rows, third row from the cross product.
fn orthonormalize(r: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let r0 = normalize(r[0]);
    let k = dot(r[1], r0);
    let r1 = normalize([r[1][0] - k * r0[0], r[1][1] - k * r0[1], r[1][2] - k * r0[2]]);
    let r2 = [
        r0[1] * r1[2] - r0[2] * r1[1],
        r0[2] * r1[0] - r0[0] * r1[2],
        r0[0] * r1[1] - r0[1] * r1[0],
    ];
    [r0, r1, r2]
}

pub fn read_poses(path: &Path) -> Result<Vec<Pose>> {
    let text = read_string(path)?;
    let mut poses = Vec::new();
    for (n, line) in content_lines(&text) {
        let v = numbers::<f64>(path, n, line, 12)?;
        let r = [[v[0], v[1], v[2]], [v[4], v[5], v[6]], [v[8], v[9], v[10]]];
        let mut worst: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let col = |k: usize| [r[0][k], r[1][k], r[2][k]];
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot(col(i), col(j)) - target).abs());
            }
        }
        if worst.is_nan() || worst > POSE_READ_TOLERANCE {
            return Err(Error::parse(
                path,
                format!("line {n}"),
                format!("rotation is not orthonormal (error {worst:e})"),
            ));
        }
        let pose = Pose::new(orthonormalize(r), [v[3], v[7], v[11]])
            .map_err(|e| Error::parse(path, format!("line {n}"), e))?;
        poses.push(pose);
    }
    Ok(poses)
}

/// `id class` per line.
pub fn encode_classes(classes: &BTreeMap<u32, String>) -> String {
    let mut s = String::from("# instance_id class\n");
    for (id, class) in classes {
        s.push_str(&format!("{id} {class}\n"));
    }
    s
}

pub fn read_classes(path: &Path) -> Result<BTreeMap<u32, String>> {
    let text = read_string(path)?;
    let mut out = BTreeMap::new();
    for (n, line) in content_lines(&text) {
        let field = format!("line {n}");
        let (id, class) = line
            .split_once(char::is_whitespace)
            .ok_or_else(|| Error::parse(path, &field, "expected `id class`"))?;
        let id: u32 = id
            .parse()
            .map_err(|_| Error::parse(path, &field, format!("`{id}` is not an instance id")))?;
        let class = class.trim();
        if id == 0 || class.is_empty() || class.contains(char::is_whitespace) {
            return Err(Error::parse(path, &field, "need a non-zero id and a single-word class"));
        }
        if out.insert(id, class.to_string()).is_some() {
            return Err(Error::parse(path, &field, format!("duplicate id {id}")));
        }
    }
    Ok(out)
}

/// Ordered `key = value` pairs with `#` comments.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    pub entries: Vec<(String, String)>,
}

impl KeyValues {
    /// Parses the text; errors carry a line number and a message.
    pub fn parse(text: &str) -> std::result::Result<Self, (usize, String)> {
        let mut entries: Vec<(String, String)> = Vec::new();
        for (n, line) in content_lines(text) {
            let (k, v) = line.split_once('=').ok_or((n, "expected `key = value`".to_string()))?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err((n, "empty key".into()));
            }
            if entries.iter().any(|(e, _)| e == k) {
                return Err((n, format!("duplicate key `{k}`")));
            }
            entries.push((k.to_string(), v.to_string()));
        }
        Ok(KeyValues { entries })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&read_string(path)?).map_err(|(n, m)| Error::parse(path, format!("line {n}"), m))
    }

    pub fn push(&mut self, key: &str, value: impl ToString) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// Typed lookup for files read from `path`; missing or malformed
    /// values name the file and key.
    pub fn require<T: FromStr>(&self, path: &Path, key: &str) -> Result<T> {
        let v = self.get_str(key).ok_or_else(|| Error::parse(path, key, "missing"))?;
        v.parse()
            .map_err(|_| Error::parse(path, key, format!("cannot parse `{v}`")))
    }

    pub fn encode(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(content: &str) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.txt");
        std::fs::write(&p, content).unwrap();
        (dir, p)
    }

    #[test]
    fn poses_round_trip() {
        let poses = vec![
            Pose::identity(),
            Pose::from_axis_angle([0.3, -0.2, 0.9], 0.7, [1.0 / 3.0, -2.0, 5.5]),
        ];
        let (_d, p) = tmp(&encode_poses(&poses));
        let back = read_poses(&p).unwrap();
        assert_eq!(back[0], Pose::identity());
        assert!(back[1].max_abs_diff(&poses[1]) < 1e-8);
    }

    #[test]
    fn bad_pose_rows_name_the_line() {
        let (_d, p) = tmp("# c\n1 0 0 0 0 1 0 0 0 0 1 0\n2 0 0 0 0 1 0 0 0 0 1 0\n");
        match read_poses(&p).unwrap_err() {
            Error::Parse { field, .. } => assert_eq!(field, "line 3"),
            e => panic!("{e}"),
        }
        let (_d, p) = tmp("1 0 0 0 0 1 0 0 0 0 1\n");
        assert!(read_poses(&p).is_err());
    }

    #[test]
    fn intrinsics_round_trip() {
        let k = CameraIntrinsics::new(64.0, 64.0, 63.5, 31.5, 128, 64).unwrap();
        let (_d, p) = tmp(&encode_intrinsics(&k));
        assert_eq!(read_intrinsics(&p).unwrap(), k);
    }

    #[test]
    fn classes_and_key_values() {
        let mut c = BTreeMap::new();
        c.insert(2, "car".to_string());
        c.insert(7, "cyclist".to_string());
        let (_d, p) = tmp(&encode_classes(&c));
        assert_eq!(read_classes(&p).unwrap(), c);
        let (_d, p) = tmp("0 car\n");
        assert!(read_classes(&p).is_err());

        assert!(KeyValues::parse("a = 1\na = 2").is_err());
        assert_eq!(KeyValues::parse("x\n").unwrap_err().0, 1);
        let kv = KeyValues::parse("# hi\n a = 1 \n\nb=two").unwrap();
        assert_eq!(kv.get_str("a"), Some("1"));
        assert_eq!(KeyValues::parse(&kv.encode()).unwrap(), kv);
    }
}
