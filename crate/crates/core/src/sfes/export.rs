//! Merge-list text format and an SVG sketch of the dendrogram.
//!
//! ```text
//! leaves <n>
//! <leaf id>            (n lines, leaf order)
//! <left> <right> <height> <id>   (n-1 lines, merge order)
//! ```

use std::fmt::Write as _;
use std::path::Path;

use super::dendrogram::{Dendrogram, Merge};
use crate::dataio::write_text;
use crate::error::{Error, Result};

pub fn format_merge_list(d: &Dendrogram) -> String {
    let mut s = format!("leaves {}\n", d.n());
    for id in &d.leaf_ids {
        let _ = writeln!(s, "{id}");
    }
    for m in &d.merges {
        let _ = writeln!(s, "{} {} {} {}", m.left, m.right, m.height, m.id);
    }
    s
}

pub fn parse_merge_list(text: &str) -> Result<Dendrogram> {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    let n: usize = header
        .strip_prefix("leaves ")
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| Error::format("merge list", "expected 'leaves <n>' header"))?;
    let mut leaf_ids = Vec::with_capacity(n);
    for i in 0..n {
        let id = lines
            .next()
            .ok_or_else(|| Error::format("merge list", format!("missing leaf {i}")))?;
        leaf_ids.push(id.to_string());
    }
    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    for (k, line) in lines.filter(|l| !l.trim().is_empty()).enumerate() {
        let loc = || format!("merge list: merge {k}");
        let p: Vec<&str> = line.split_whitespace().collect();
        if p.len() != 4 {
            return Err(Error::format(loc(), "expected 4 fields"));
        }
        let int = |s: &str| s.parse::<usize>().map_err(|_| Error::format(loc(), format!("bad node '{s}'")));
        let height: f64 = p[2]
            .parse()
            .map_err(|_| Error::format(loc(), format!("bad height '{}'", p[2])))?;
        merges.push(Merge {
            left: int(p[0])?,
            right: int(p[1])?,
            height,
            id: int(p[3])?,
        });
    }
    let d = Dendrogram { leaf_ids, merges };
    d.validate()?;
    Ok(d)
}

/// Cosmetic dendrogram: one `<path class="join">` per merge.
pub fn dendrogram_svg(d: &Dendrogram) -> String {
    let n = d.n();
    let total = n + d.merges.len();
    let mut children: Vec<Option<(usize, usize)>> = vec![None; total];
    let mut height = vec![0.0; total];
    for m in &d.merges {
        children[m.id] = Some((m.left, m.right));
        height[m.id] = m.height;
    }
    // leaf order from a depth-first walk of the root
    let mut x = vec![0.0; total];
    let mut order = Vec::with_capacity(n);
    let roots: Vec<usize> = if d.merges.is_empty() {
        (0..n).collect()
    } else {
        vec![total - 1]
    };
    for root in roots {
        let mut stack = vec![root];
        while let Some(v) = stack.pop() {
            match children[v] {
                Some((l, r)) => {
                    stack.push(r);
                    stack.push(l);
                }
                None => order.push(v),
            }
        }
    }
    let (w, h, pad) = (800.0f64.max(4.0 * n as f64), 400.0, 20.0);
    let step = (w - 2.0 * pad) / (n.max(2) - 1) as f64;
    for (i, &leaf) in order.iter().enumerate() {
        x[leaf] = pad + i as f64 * step;
    }
    let hmax = height.iter().copied().fold(0.0, f64::max).max(1e-12);
    let y = |hv: f64| h - pad - hv / hmax * (h - 2.0 * pad);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}">"#);
    for m in &d.merges {
        x[m.id] = (x[m.left] + x[m.right]) / 2.0;
        let _ = writeln!(
            s,
            r#"<path class="join" fill="none" stroke="black" d="M{:.2},{:.2} V{:.2} H{:.2} V{:.2}"/>"#,
            x[m.left],
            y(height[m.left]),
            y(m.height),
            x[m.right],
            y(height[m.right]),
        );
    }
    s.push_str("</svg>\n");
    s
}

pub fn export_dendrogram(d: &Dendrogram, path: &Path, svg_path: Option<&Path>) -> Result<()> {
    write_text(path, &format_merge_list(d))?;
    if let Some(p) = svg_path {
        write_text(p, &dendrogram_svg(d))?;
    }
    Ok(())
}
