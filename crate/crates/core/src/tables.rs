//! Flat storage for a family of small probability or potential tables.

use alloc::vec::Vec;

/// A sequence of variable-length `f64` tables stored contiguously.
///
/// Node potentials, factor potentials, messages and beliefs all use this
/// layout; table `k` belongs to node, factor or edge `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tables {
    offsets: Vec<usize>,
    data: Vec<f64>,
}

impl Tables {
    pub fn filled<I: IntoIterator<Item = usize>>(sizes: I, value: f64) -> Self {
        let mut offsets = Vec::new();
        offsets.push(0);
        let mut total = 0;
        for s in sizes {
            total += s;
            offsets.push(total);
        }
        Tables { offsets, data: alloc::vec![value; total] }
    }

    pub fn zeros<I: IntoIterator<Item = usize>>(sizes: I) -> Self {
        Self::filled(sizes, 0.0)
    }

    /// Tables of the given sizes, each set to the uniform distribution.
    pub fn uniform<I: IntoIterator<Item = usize>>(sizes: I) -> Self {
        let mut t = Self::zeros(sizes);
        for k in 0..t.len() {
            let row = t.table_mut(k);
            let p = 1.0 / row.len() as f64;
            row.fill(p);
        }
        t
    }

    pub fn from_tables<I, T>(tables: I) -> Self
    where
        I: IntoIterator<Item = T>,
        T: AsRef<[f64]>,
    {
        let mut offsets = alloc::vec![0];
        let mut data = Vec::new();
        for t in tables {
            data.extend_from_slice(t.as_ref());
            offsets.push(data.len());
        }
        Tables { offsets, data }
    }

    /// Number of tables.
    #[inline]
    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn table(&self, k: usize) -> &[f64] {
        &self.data[self.offsets[k]..self.offsets[k + 1]]
    }

    #[inline]
    pub fn table_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.data[self.offsets[k]..self.offsets[k + 1]]
    }

    pub fn table_len(&self, k: usize) -> usize {
        self.offsets[k + 1] - self.offsets[k]
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        (0..self.len()).map(move |k| self.table(k))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn same_layout(&self, other: &Tables) -> bool {
        self.offsets == other.offsets
    }

    /// `self += a * other`; layouts must agree.
    pub fn add_scaled(&mut self, a: f64, other: &Tables) {
        debug_assert!(self.same_layout(other));
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x += a * y;
        }
    }

    pub fn max_abs_diff(&self, other: &Tables) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| f64::max(m, libm::fabs(a - b)))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Sum of elementwise products, over every table.
    pub fn dot(&self, other: &Tables) -> f64 {
        debug_assert!(self.same_layout(other));
        let mut acc = crate::math::Accumulator::default();
        for (a, b) in self.data.iter().zip(&other.data) {
            acc.add(a * b);
        }
        acc.value()
    }
}
