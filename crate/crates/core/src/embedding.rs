use std::io::{self, Write};

use ndarray::{Array2, ArrayView1, ArrayViewMut1};
use rand::Rng;

use crate::error::{Error, Result};

/// One row of `dim` reals per vocabulary item; row index is the dense id.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable(Array2<f64>);

impl EmbeddingTable {
    pub fn zeros(rows: usize, dim: usize) -> Self {
        EmbeddingTable(Array2::zeros((rows, dim)))
    }

    pub fn uniform<R: Rng + ?Sized>(rows: usize, dim: usize, half_width: f64, rng: &mut R) -> Self {
        let mut t = Array2::zeros((rows, dim));
        t.iter_mut()
            .for_each(|v| *v = rng.random_range(-half_width..=half_width));
        EmbeddingTable(t)
    }

    pub fn from_array(a: Array2<f64>) -> Self {
        EmbeddingTable(a)
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn dim(&self) -> usize {
        self.0.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.0.row(i)
    }

    pub fn row_mut(&mut self, i: usize) -> ArrayViewMut1<'_, f64> {
        self.0.row_mut(i)
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn as_array_mut(&mut self) -> &mut Array2<f64> {
        &mut self.0
    }

    pub fn into_array(self) -> Array2<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Text form: `<count> <dim>` then `<id> <v1> ... <vd>` per row. Values use
    /// the shortest representation that parses back to the same `f64`.
    pub fn write_text<S: AsRef<str>>(&self, w: &mut dyn Write, ids: &[S]) -> io::Result<()> {
        assert_eq!(ids.len(), self.rows(), "one id per row");
        writeln!(w, "{} {}", self.rows(), self.dim())?;
        for (id, row) in ids.iter().zip(self.0.rows()) {
            w.write_all(id.as_ref().as_bytes())?;
            for v in row {
                write!(w, " {v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn to_text<S: AsRef<str>>(&self, ids: &[S]) -> String {
        let mut buf = Vec::new();
        self.write_text(&mut buf, ids).expect("write to Vec");
        String::from_utf8(buf).expect("ids are utf-8")
    }

    /// Parses the text form, returning the row ids alongside the table.
    /// `source` names the input in error messages; `first_line` is the
    /// line number of the header within that source.
    pub fn parse_text(text: &str, source: &str, first_line: usize) -> Result<(Vec<String>, Self)> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + first_line, l));
        let (no, header) = lines
            .next()
            .ok_or_else(|| Error::parse(source, first_line, "missing table header"))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|s| s.parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::parse(source, no, format!("bad table header {header:?}")))?;
        let [count, dim] = dims[..] else {
            return Err(Error::parse(source, no, "table header must be `<count> <dim>`"));
        };
        let mut ids = Vec::with_capacity(count);
        let mut data = Array2::zeros((count, dim));
        for r in 0..count {
            let (no, line) = lines
                .next()
                .ok_or_else(|| Error::parse(source, no + r + 1, "table ended early"))?;
            let mut fields = line.split(' ');
            let id = fields.next().unwrap_or_default();
            ids.push(id.to_string());
            let mut c = 0;
            for f in fields {
                if c >= dim {
                    return Err(Error::parse(source, no, "too many values in row"));
                }
                data[[r, c]] = f
                    .parse()
                    .map_err(|_| Error::parse(source, no, format!("bad value {f:?}")))?;
                c += 1;
            }
            if c != dim {
                return Err(Error::parse(source, no, format!("expected {dim} values, found {c}")));
            }
        }
        if let Some((no, extra)) = lines.find(|(_, l)| !l.trim().is_empty()) {
            return Err(Error::parse(source, no, format!("trailing content {extra:?}")));
        }
        Ok((ids, EmbeddingTable(data)))
    }
}
