use crate::error::{Error, Result};
use crate::infotheory::fmt_f64;
use crate::tensor::Tensor;
use crate::training::cosine;

/// Text-by-image cosine similarities of one example.
#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    /// Text positions.
    pub rows: usize,
    /// Image positions.
    pub cols: usize,
    pub values: Vec<f64>,
}

impl Heatmap {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || values.len() != rows * cols {
            return Err(Error::Dimension(format!("{} values for a {rows}×{cols} heatmap", values.len())));
        }
        Ok(Self { rows, cols, values })
    }

    /// `sim[t][i] = cos(text[t], image[i])` for `text` `[m, d]`, `image` `[n, d]`.
    pub fn from_states(text: &Tensor, image: &Tensor) -> Result<Self> {
        if text.last_dim() != image.last_dim() {
            return Err(Error::Dimension("text and image widths differ".into()));
        }
        let (m, n) = (text.rows(), image.rows());
        let values = (0..m)
            .flat_map(|t| (0..n).map(move |i| (t, i)))
            .map(|(t, i)| cosine(text.row(t), image.row(i)).clamp(-1.0, 1.0))
            .collect();
        Self::new(m, n, values)
    }

    /// Mean over text positions, one value per image position.
    pub fn column_means(&self) -> Vec<f64> {
        (0..self.cols)
            .map(|i| (0..self.rows).map(|t| self.values[t * self.cols + i]).sum::<f64>() / self.rows as f64)
            .collect()
    }

    pub fn to_csv(&self, meta: &[String]) -> String {
        let mut out = String::new();
        for line in meta {
            out.push_str(&format!("# {line}\n"));
        }
        for row in self.values.chunks(self.cols) {
            let cells: Vec<String> = row.iter().map(|&v| fmt_f64(v)).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn means_csv(&self, meta: &[String]) -> String {
        let mut out = String::new();
        for line in meta {
            out.push_str(&format!("# {line}\n"));
        }
        let cells: Vec<String> = self.column_means().into_iter().map(fmt_f64).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
        out
    }

    /// Binary greymap, `cols` wide and `rows` tall.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.cols, self.rows).into_bytes();
        out.extend(self.values.iter().map(|&s| grey_level(s)));
        out
    }
}

/// `round(255·(s+1)/2)`, halves rounded up, clamped to `0..=255`.
pub fn grey_level(sim: f64) -> u8 {
    let v = (255.0 * (sim + 1.0) / 2.0 + 0.5).floor();
    v.clamp(0.0, 255.0) as u8
}
