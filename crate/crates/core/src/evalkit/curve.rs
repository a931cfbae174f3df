use std::fmt::Write as _;
use std::path::Path;

use crate::dataio::write_text;
use crate::error::{Error, Result};

/// Per-epoch series with one or more named value columns.
#[derive(Clone, Debug, PartialEq)]
pub struct Curve {
    pub columns: Vec<String>,
    pub rows: Vec<(usize, Vec<f64>)>,
}

impl Curve {
    pub fn new(columns: &[&str]) -> Self {
        Curve {
            columns: columns.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn single(name: &str, points: &[(usize, f64)]) -> Self {
        Curve {
            columns: vec![name.to_string()],
            rows: points.iter().map(|&(e, v)| (e, vec![v])).collect(),
        }
    }

    pub fn push(&mut self, epoch: usize, values: Vec<f64>) {
        debug_assert_eq!(values.len(), self.columns.len());
        self.rows.push((epoch, values));
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|(_, v)| v[i]).collect())
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("epoch,{}\n", self.columns.join(","));
        for (e, vals) in &self.rows {
            let vals: Vec<String> = vals.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(s, "{e},{}", vals.join(","));
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::format("curve csv", "empty"))?;
        let mut cols = header.split(',');
        if cols.next() != Some("epoch") {
            return Err(Error::format("curve csv", "first column must be 'epoch'"));
        }
        let columns: Vec<String> = cols.map(str::to_string).collect();
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
            let loc = || format!("curve csv line {}", i + 2);
            let mut parts = line.split(',');
            let epoch = parts
                .next()
                .and_then(|p| p.parse().ok())
                .ok_or_else(|| Error::format(loc(), "bad epoch"))?;
            let vals = parts
                .map(|p| p.parse::<f64>().map_err(|_| Error::format(loc(), format!("bad value '{p}'"))))
                .collect::<Result<Vec<_>>>()?;
            if vals.len() != columns.len() {
                return Err(Error::format(loc(), "wrong column count"));
            }
            rows.push((epoch, vals));
        }
        Ok(Curve { columns, rows })
    }

    /// Line chart of one column. Ordinates grow upward with the value.
    pub fn to_svg(&self, column: &str) -> Result<String> {
        let ys = self
            .column(column)
            .ok_or_else(|| Error::InvalidArgument(format!("no column '{column}'")))?;
        if ys.is_empty() {
            return Err(Error::InvalidArgument("empty curve".into()));
        }
        let xs: Vec<f64> = self.rows.iter().map(|(e, _)| *e as f64).collect();
        let (w, h, pad) = (480.0, 300.0, 40.0);
        let (xmin, xmax) = bounds(&xs);
        let (ymin, ymax) = bounds(&ys);
        let sx = |x: f64| pad + (x - xmin) / (xmax - xmin) * (w - 2.0 * pad);
        let sy = |y: f64| h - pad - (y - ymin) / (ymax - ymin) * (h - 2.0 * pad);
        let points: Vec<String> = xs
            .iter()
            .zip(&ys)
            .map(|(&x, &y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let mut s = String::new();
        let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}">"#);
        let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="steelblue" stroke-width="2" points="{}"/>"#,
            points.join(" ")
        );
        let _ = writeln!(
            s,
            r#"<text x="{pad}" y="20" font-size="12">{column}: {ymin:.4} .. {ymax:.4}</text>"#
        );
        s.push_str("</svg>\n");
        Ok(s)
    }
}

fn bounds(v: &[f64]) -> (f64, f64) {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}

/// Write a curve as CSV and, optionally, an SVG chart of `svg_column`.
pub fn emit_curve(curve: &Curve, csv_path: &Path, svg: Option<(&Path, &str)>) -> Result<()> {
    if curve.rows.is_empty() {
        return Err(Error::InvalidArgument("cannot emit an empty curve".into()));
    }
    write_text(csv_path, &curve.to_csv())?;
    if let Some((path, col)) = svg {
        write_text(path, &curve.to_svg(col)?)?;
    }
    Ok(())
}
