//! Single-channel PFM (`Pf`) images, optionally several per file.
//!
//! Files are written little-endian (scale −1.0) with rows stored bottom to
//! top, as the format prescribes. A multi-layer file is plain concatenation
//! of complete PFM images of equal size.

use std::path::Path;

use planesweep_core::Grid;

use crate::error::{Error, Result};

pub fn encode(layer: &Grid<f64>, out: &mut Vec<u8>) {
    let (w, h) = layer.dims();
    out.extend_from_slice(format!("Pf\n{w} {h}\n-1.0\n").as_bytes());
    for y in (0..h).rev() {
        for x in 0..w {
            out.extend_from_slice(&(*layer.get(x, y) as f32).to_le_bytes());
        }
    }
}

pub fn write(path: &Path, layer: &Grid<f64>) -> Result<()> {
    write_layers(path, std::slice::from_ref(layer))
}

pub fn write_layers(path: &Path, layers: &[Grid<f64>]) -> Result<()> {
    let mut out = Vec::new();
    for l in layers {
        encode(l, &mut out);
    }
    super::write_bytes(path, &out)
}

pub fn read(path: &Path) -> Result<Grid<f64>> {
    let mut layers = read_layers(path)?;
    if layers.len() != 1 {
        return Err(Error::parse(
            path,
            "layers",
            format!("expected 1 layer, found {}", layers.len()),
        ));
    }
    Ok(layers.remove(0))
}

pub fn read_layers(path: &Path) -> Result<Vec<Grid<f64>>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_layers(&bytes).map_err(|(field, msg)| Error::parse(path, field, msg))
}

type DecodeError = (&'static str, String);

pub fn decode_layers(bytes: &[u8]) -> std::result::Result<Vec<Grid<f64>>, DecodeError> {
    let mut pos = 0;
    let mut layers: Vec<Grid<f64>> = Vec::new();
    while pos < bytes.len() {
        let (layer, next) = decode_one(bytes, pos)?;
        if let Some(first) = layers.first() {
            if first.dims() != layer.dims() {
                return Err(("size", format!("layer {} differs in size from layer 0", layers.len())));
            }
        }
        layers.push(layer);
        pos = next;
    }
    if layers.is_empty() {
        return Err(("header", "empty file".into()));
    }
    Ok(layers)
}

// Reads one whitespace-delimited header token starting at `pos`; returns it
// and the position just past the single delimiter that follows.
fn token(bytes: &[u8], mut pos: usize) -> std::result::Result<(&str, usize), DecodeError> {
    while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
        pos += 1;
    }
    let start = pos;
    while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
        pos += 1;
    }
    if start == pos || pos >= bytes.len() {
        return Err(("header", "truncated header".into()));
    }
    let s = std::str::from_utf8(&bytes[start..pos]).map_err(|_| ("header", "header is not ASCII".to_string()))?;
    Ok((s, pos + 1))
}

fn decode_one(bytes: &[u8], pos: usize) -> std::result::Result<(Grid<f64>, usize), DecodeError> {
    let (magic, pos) = token(bytes, pos)?;
    match magic {
        "Pf" => {}
        "PF" => return Err(("header", "three-channel PFM is not supported".into())),
        other => return Err(("header", format!("bad magic `{other}`"))),
    }
    let (w, pos) = token(bytes, pos)?;
    let (h, pos) = token(bytes, pos)?;
    let (scale, pos) = token(bytes, pos)?;
    let w: usize = w.parse().map_err(|_| ("width", format!("`{w}` is not a size")))?;
    let h: usize = h.parse().map_err(|_| ("height", format!("`{h}` is not a size")))?;
    let scale: f64 = scale
        .parse()
        .map_err(|_| ("scale", format!("`{scale}` is not a number")))?;
    if w == 0 || h == 0 {
        return Err(("size", "zero-sized image".into()));
    }
    if scale == 0.0 || !scale.is_finite() {
        return Err(("scale", "must be non-zero".into()));
    }
    let little = scale < 0.0;
    let n = w * h;
    let end = pos + 4 * n;
    if end > bytes.len() {
        return Err((
            "data",
            format!("expected {} bytes of samples, found {}", 4 * n, bytes.len() - pos),
        ));
    }
    let mut data = vec![0.0; n];
    for (i, chunk) in bytes[pos..end].chunks_exact(4).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little {
            f32::from_le_bytes(raw)
        } else {
            f32::from_be_bytes(raw)
        };
        let (x, row) = (i % w, i / w);
        data[(h - 1 - row) * w + x] = v as f64;
    }
    let grid = Grid::from_vec(w, h, data).map_err(|e| ("data", e.to_string()))?;
    Ok((grid, end))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_bytes() {
        let g = Grid::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut out = Vec::new();
        encode(&g, &mut out);
        let header = b"Pf\n2 2\n-1.0\n";
        assert_eq!(&out[..header.len()], header);
        // Bottom row first.
        let first = f32::from_le_bytes(out[header.len()..header.len() + 4].try_into().unwrap());
        assert_eq!(first, 3.0);
        assert_eq!(decode_layers(&out).unwrap(), vec![g]);
    }

    #[test]
    fn big_endian_and_layers() {
        let mut bytes = b"Pf\n1 2\n1.0\n".to_vec();
        bytes.extend_from_slice(&5.0f32.to_be_bytes());
        bytes.extend_from_slice(&6.0f32.to_be_bytes());
        let g = decode_layers(&bytes).unwrap();
        assert_eq!(g[0].as_slice(), &[6.0, 5.0]);

        let a = Grid::new(3, 1, 0.25);
        let b = Grid::new(3, 1, -0.5);
        let mut out = Vec::new();
        encode(&a, &mut out);
        encode(&b, &mut out);
        assert_eq!(decode_layers(&out).unwrap(), vec![a, b]);
    }

    #[test]
    fn malformed() {
        assert!(decode_layers(b"P6\n1 1\n-1\n").is_err());
        assert!(decode_layers(b"Pf\n2 2\n-1.0\n\0\0\0\0").is_err());
        assert!(decode_layers(b"Pf\n2").is_err());
        let mut out = Vec::new();
        encode(&Grid::new(1, 1, 1.0), &mut out);
        encode(&Grid::new(2, 1, 1.0), &mut out);
        assert_eq!(decode_layers(&out).unwrap_err().0, "size");
    }
}
