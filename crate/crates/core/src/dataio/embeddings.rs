//! Plain-text token embedding files.
//!
//! ```text
//! N d L_max
//! <id> <L>
//! <d reals>        (L rows)
//! ...
//! ```
//!
//! Values are written with Rust's shortest round-trip float formatting, so a
//! save/load cycle is bit-exact.

use std::fmt::Write as _;
use std::path::Path;

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::numkit::Matrix;

/// Token matrices keyed by exercise id, in file order.
#[derive(Clone, Debug, PartialEq)]
pub struct Embeddings {
    pub dim: usize,
    pub max_len: usize,
    pub tokens: IndexMap<String, Matrix>,
}

impl Embeddings {
    pub fn new(dim: usize) -> Self {
        Embeddings {
            dim,
            max_len: 0,
            tokens: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, id: String, m: Matrix) -> Result<()> {
        if m.cols() != self.dim {
            return Err(Error::format(
                format!("embedding '{id}'"),
                format!("dimension {} does not match {}", m.cols(), self.dim),
            ));
        }
        if m.rows() == 0 {
            return Err(Error::format(format!("embedding '{id}'"), "needs at least one token"));
        }
        self.max_len = self.max_len.max(m.rows());
        self.tokens.insert(id, m);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

pub fn parse_embeddings(text: &str, source: &str) -> Result<Embeddings> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::format(source, "missing header line 'N d L_max'"))?;
    let hv: Vec<&str> = header.split_whitespace().collect();
    let parse_usize = |s: &str, what: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::format(format!("{source}: header"), format!("bad {what} '{s}'")))
    };
    if hv.len() != 2 && hv.len() != 3 {
        return Err(Error::format(
            format!("{source}: header"),
            format!("expected 'N d L_max', got '{header}'"),
        ));
    }
    let n = parse_usize(hv[0], "N")?;
    let dim = parse_usize(hv[1], "d")?;
    let l_max = match hv.get(2) {
        Some(s) => Some(parse_usize(s, "L_max")?),
        None => None,
    };

    let mut out = Embeddings::new(dim);
    for record in 1..=n {
        let (lineno, head) = lines.next().ok_or_else(|| {
            Error::format(source, format!("record {record}: missing (header declared {n})"))
        })?;
        let hp: Vec<&str> = head.split_whitespace().collect();
        if hp.len() != 2 {
            return Err(Error::format(
                format!("{source}:{} record {record}", lineno + 1),
                "expected '<id> <L>'",
            ));
        }
        let id = hp[0].to_string();
        let len: usize = hp[1].parse().map_err(|_| {
            Error::format(format!("{source}:{} record {record}", lineno + 1), "bad token count")
        })?;
        if len == 0 {
            return Err(Error::format(format!("{source} record {record} ('{id}')"), "L must be >= 1"));
        }
        if let Some(l_max) = l_max {
            if len > l_max {
                return Err(Error::format(
                    format!("{source} record {record} ('{id}')"),
                    format!("L = {len} exceeds L_max = {l_max}"),
                ));
            }
        }
        let mut data = Vec::with_capacity(len * dim);
        for _ in 0..len {
            let (ln, row) = lines.next().ok_or_else(|| {
                Error::format(format!("{source} record {record} ('{id}')"), "truncated token rows")
            })?;
            let before = data.len();
            for tok in row.split_whitespace() {
                let v: f64 = tok.parse().map_err(|_| {
                    Error::format(
                        format!("{source}:{} record {record} ('{id}')", ln + 1),
                        format!("bad number '{tok}'"),
                    )
                })?;
                if !v.is_finite() {
                    return Err(Error::format(
                        format!("{source}:{} record {record} ('{id}')", ln + 1),
                        format!("non-finite value '{tok}'"),
                    ));
                }
                data.push(v);
            }
            let got = data.len() - before;
            if got != dim {
                return Err(Error::format(
                    format!("{source}:{} record {record} ('{id}')", ln + 1),
                    format!("row has dimension {got}, header says {dim}"),
                ));
            }
        }
        if out.tokens.contains_key(&id) {
            return Err(Error::format(format!("{source} record {record}"), format!("duplicate id '{id}'")));
        }
        out.insert(id, Matrix::new(len, dim, data)?)?;
    }
    if let Some((ln, _)) = lines.next() {
        return Err(Error::format(
            format!("{source}:{}", ln + 1),
            format!("trailing content after {n} records"),
        ));
    }
    Ok(out)
}

pub fn load_embeddings(path: &Path) -> Result<Embeddings> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_embeddings(&text, &path.display().to_string())
}

pub fn format_embeddings(emb: &Embeddings) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{} {} {}", emb.len(), emb.dim, emb.max_len);
    for (id, m) in &emb.tokens {
        let _ = writeln!(s, "{id} {}", m.rows());
        for r in 0..m.rows() {
            let row: Vec<String> = m.row(r).iter().map(|v| v.to_string()).collect();
            let _ = writeln!(s, "{}", row.join(" "));
        }
    }
    s
}

pub fn save_embeddings(path: &Path, emb: &Embeddings) -> Result<()> {
    std::fs::write(path, format_embeddings(emb)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::RngState;

    #[test]
    fn two_records() {
        let mut rng = RngState::new(1);
        let mut emb = Embeddings::new(8);
        emb.insert("Q1".into(), rng.normal_matrix(4, 8, 1.0)).unwrap();
        emb.insert("Q2".into(), rng.normal_matrix(4, 8, 1.0)).unwrap();
        let text = format_embeddings(&emb);
        let back = parse_embeddings(&text, "mem").unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back.tokens["Q1"].shape(), (4, 8));
        // bit-exact round trip
        assert_eq!(back, emb);
    }

    #[test]
    fn empty_body() {
        let e = parse_embeddings("0 8\n", "mem").unwrap();
        assert!(e.is_empty());
        assert_eq!(e.dim, 8);
    }

    #[test]
    fn wrong_dimension_names_record() {
        let row8 = vec!["0.5"; 8].join(" ");
        let row7 = vec!["0.5"; 7].join(" ");
        let text = format!("2 8 1\nA 1\n{row8}\nB 1\n{row7}\n");
        let err = parse_embeddings(&text, "mem").unwrap_err().to_string();
        assert!(err.contains("record 2"), "{err}");
    }

    #[test]
    fn nan_rejected() {
        let text = "1 2 1\nA 1\n0.1 NaN\n";
        let err = parse_embeddings(text, "mem").unwrap_err();
        assert!(err.to_string().contains("non-finite"), "{err}");
        let text = "1 2 1\nA 1\n0.1 inf\n";
        assert!(parse_embeddings(text, "mem").is_err());
    }

    proptest::proptest! {
        #[test]
        fn round_trip_is_bit_exact(vals in proptest::collection::vec(-1e6f64..1e6, 6)) {
            let mut emb = Embeddings::new(3);
            emb.insert("x".into(), Matrix::new(2, 3, vals).unwrap()).unwrap();
            let back = parse_embeddings(&format_embeddings(&emb), "mem").unwrap();
            proptest::prop_assert_eq!(back, emb);
        }
    }
}
