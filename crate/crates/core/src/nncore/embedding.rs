use rand::Rng;

use super::uniform_init;

/// An id-keyed embedding table with one reserved out-of-vocabulary row.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    vocab: usize,
    dim: usize,
    /// `(vocab + 1) × dim`, row `vocab` is the OOV row.
    data: Vec<f64>,
    touched: Vec<bool>,
}

impl EmbeddingTable {
    pub fn init<R: Rng + ?Sized>(vocab: usize, dim: usize, rng: &mut R) -> Self {
        let mut data = vec![0.0; (vocab + 1) * dim];
        uniform_init(&mut data, rng);
        Self {
            vocab,
            dim,
            data,
            touched: vec![false; vocab + 1],
        }
    }

    pub fn zeros(vocab: usize, dim: usize) -> Self {
        Self {
            vocab,
            dim,
            data: vec![0.0; (vocab + 1) * dim],
            touched: vec![false; vocab + 1],
        }
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_rows(&self) -> usize {
        self.vocab + 1
    }

    /// Row index for a raw id; unseen ids map to the OOV row.
    #[inline]
    pub fn row_index(&self, id: u32) -> usize {
        let id = id as usize;
        if id < self.vocab {
            id
        } else {
            self.vocab
        }
    }

    #[inline]
    pub fn lookup(&self, id: u32) -> &[f64] {
        self.row(self.row_index(id))
    }

    #[inline]
    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.dim..(row + 1) * self.dim]
    }

    #[inline]
    pub fn row_mut(&mut self, row: usize) -> &mut [f64] {
        self.touched[row] = true;
        &mut self.data[row * self.dim..(row + 1) * self.dim]
    }

    /// Whether a gradient has ever been applied to this row.
    pub fn is_touched(&self, row: usize) -> bool {
        self.touched[row]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn touched(&self) -> &[bool] {
        &self.touched
    }

    pub fn set_touched(&mut self, touched: Vec<bool>) {
        assert_eq!(touched.len(), self.touched.len());
        self.touched = touched;
    }
}
