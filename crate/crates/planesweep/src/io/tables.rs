//! CSV tables: sparse depth samples, loss reports, metrics and gradient
//! checks. Floats use 9 significant digits.

use std::path::Path;

use planesweep_core::losses::{LossReport, SparseDepth};

use crate::error::{Error, Result};
use crate::fmt::sig9;

fn csv_bytes(header: &[&str], rows: &[Vec<String>]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(r).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    super::write_bytes(path, &csv_bytes(header, rows))
}

/// Header row and records, checking the header matches `expected`.
fn read_csv(path: &Path, expected: &[&str]) -> Result<Vec<csv::StringRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::parse(path, "csv", e))?;
    let header = r.headers().map_err(|e| Error::parse(path, "header", e))?.clone();
    if header.iter().collect::<Vec<_>>() != expected {
        return Err(Error::parse(
            path,
            "header",
            format!("expected `{}`", expected.join(",")),
        ));
    }
    r.records()
        .enumerate()
        .map(|(i, rec)| rec.map_err(|e| Error::parse(path, format!("row {}", i + 1), e)))
        .collect()
}

const SPARSE_HEADER: [&str; 3] = ["x", "y", "inv_depth"];

pub fn write_sparse(path: &Path, sparse: &SparseDepth) -> Result<()> {
    let rows: Vec<Vec<String>> = sparse
        .samples()
        .iter()
        .map(|&((x, y), v)| vec![x.to_string(), y.to_string(), sig9(v)])
        .collect();
    write_csv(path, &SPARSE_HEADER, &rows)
}

pub fn read_sparse(path: &Path, width: usize, height: usize) -> Result<SparseDepth> {
    let mut samples = Vec::new();
    for (i, rec) in read_csv(path, &SPARSE_HEADER)?.iter().enumerate() {
        let field = format!("row {}", i + 1);
        let bad = |what: &str| Error::parse(path, &field, format!("bad {what}"));
        let x: usize = rec[0].trim().parse().map_err(|_| bad("x"))?;
        let y: usize = rec[1].trim().parse().map_err(|_| bad("y"))?;
        let v: f64 = rec[2].trim().parse().map_err(|_| bad("inv_depth"))?;
        samples.push(((x, y), v));
    }
    SparseDepth::new(width, height, samples).map_err(|e| Error::parse(path, "samples", e))
}

pub const LOSS_HEADER: [&str; 4] = ["term", "scale", "weight", "value"];

/// One row per term, then a `total` row with an empty scale.
pub fn loss_rows(report: &LossReport) -> Vec<Vec<String>> {
    let mut rows: Vec<Vec<String>> = report
        .terms
        .iter()
        .map(|t| vec![t.name.to_string(), t.scale.to_string(), sig9(t.weight), sig9(t.value)])
        .collect();
    rows.push(vec!["total".into(), String::new(), "1".into(), sig9(report.total)]);
    rows
}

pub fn losses_csv(report: &LossReport) -> Vec<u8> {
    csv_bytes(&LOSS_HEADER, &loss_rows(report))
}

pub fn write_losses(path: &Path, report: &LossReport) -> Result<()> {
    super::write_bytes(path, &losses_csv(report))
}

/// `(term, scale, weight, value)` rows as written by [`write_losses`].
pub fn read_losses(path: &Path) -> Result<Vec<(String, String, f64, f64)>> {
    read_csv(path, &LOSS_HEADER)?
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| Error::parse(path, format!("row {}", i + 1), format!("`{s}` is not a number")))
            };
            Ok((r[0].to_string(), r[1].to_string(), num(&r[2])?, num(&r[3])?))
        })
        .collect()
}

pub const METRICS_HEADER: [&str; 4] = ["scene", "variant", "metric", "value"];

pub fn metrics_csv(scene: &str, variant: &str, metrics: &[(&str, f64)]) -> Vec<u8> {
    let rows: Vec<Vec<String>> = metrics
        .iter()
        .map(|(m, v)| vec![scene.to_string(), variant.to_string(), m.to_string(), sig9(*v)])
        .collect();
    csv_bytes(&METRICS_HEADER, &rows)
}

pub const GRADCHECK_HEADER: [&str; 4] = ["loss", "step", "max_rel_error", "checked"];

/// Rows of `(loss, step, max_rel_error, checked)`. A `None` step, written
/// `best`, is the summary row where each pixel uses its best-agreeing step.
pub fn gradcheck_csv(rows: &[(String, Option<f64>, f64, usize)]) -> Vec<u8> {
    let rows: Vec<Vec<String>> = rows
        .iter()
        .map(|(l, h, e, n)| {
            vec![
                l.clone(),
                h.map_or_else(|| "best".into(), sig9),
                sig9(*e),
                n.to_string(),
            ]
        })
        .collect();
    csv_bytes(&GRADCHECK_HEADER, &rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use planesweep_core::losses::LossTerm;

    #[test]
    fn sparse_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        let s = SparseDepth::new(4, 3, vec![((0, 0), 0.25), ((3, 2), 1.0 / 3.0)]).unwrap();
        write_sparse(&p, &s).unwrap();
        assert_eq!(
            std::fs::read_to_string(&p).unwrap(),
            "x,y,inv_depth\n0,0,0.25\n3,2,0.333333333\n"
        );
        let back = read_sparse(&p, 4, 3).unwrap();
        assert_eq!(back.samples()[1].0, (3, 2));
        assert!(read_sparse(&p, 3, 3).is_err());
    }

    #[test]
    fn loss_csv_layout() {
        let r = LossReport::from_terms(
            vec![
                LossTerm {
                    name: "self",
                    scale: 0,
                    weight: 1.0,
                    value: 0.5,
                },
                LossTerm {
                    name: "smooth",
                    scale: 1,
                    weight: 5e-4,
                    value: 2.0,
                },
            ],
            vec![],
        );
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("l.csv");
        write_losses(&p, &r).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(
            text,
            "term,scale,weight,value\nself,0,1,0.5\nsmooth,1,0.0005,2\ntotal,,1,0.501\n"
        );
        assert_eq!(read_losses(&p).unwrap()[2].3, 0.501);
    }
}
