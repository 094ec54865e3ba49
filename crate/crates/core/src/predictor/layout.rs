//! Named 2-D blocks inside one flat parameter vector.

use ndarray::{ArrayView2, ArrayViewMut2};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorId(usize);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub tensors: Vec<TensorSpec>,
    pub total: usize,
}

impl Layout {
    pub fn add(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> TensorId {
        self.tensors.push(TensorSpec {
            name: name.into(),
            offset: self.total,
            rows,
            cols,
        });
        self.total += rows * cols;
        TensorId(self.tensors.len() - 1)
    }

    pub fn spec(&self, id: TensorId) -> &TensorSpec {
        &self.tensors[id.0]
    }

    pub fn find(&self, name: &str) -> Option<&TensorSpec> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn view<'a>(&self, flat: &'a [f64], id: TensorId) -> ArrayView2<'a, f64> {
        let t = self.spec(id);
        ArrayView2::from_shape((t.rows, t.cols), &flat[t.offset..t.offset + t.rows * t.cols]).expect("layout shape")
    }

    pub fn view_mut<'a>(&self, flat: &'a mut [f64], id: TensorId) -> ArrayViewMut2<'a, f64> {
        let t = self.spec(id);
        ArrayViewMut2::from_shape((t.rows, t.cols), &mut flat[t.offset..t.offset + t.rows * t.cols])
            .expect("layout shape")
    }

    /// A bias stored as a `1 x n` block, returned as a vector view.
    pub fn row<'a>(&self, flat: &'a [f64], id: TensorId) -> ndarray::ArrayView1<'a, f64> {
        let t = self.spec(id);
        ndarray::ArrayView1::from(&flat[t.offset..t.offset + t.rows * t.cols])
    }

    /// Disjoint mutable views of a weight block and the bias block after it.
    pub fn weight_bias_mut<'a>(
        &self,
        flat: &'a mut [f64],
        w: TensorId,
        b: TensorId,
    ) -> (ArrayViewMut2<'a, f64>, ndarray::ArrayViewMut1<'a, f64>) {
        let (ws, bs) = (self.spec(w), self.spec(b));
        assert!(ws.offset + ws.rows * ws.cols <= bs.offset, "weight must precede bias");
        let (lo, hi) = flat.split_at_mut(bs.offset);
        (
            ArrayViewMut2::from_shape((ws.rows, ws.cols), &mut lo[ws.offset..ws.offset + ws.rows * ws.cols])
                .expect("layout shape"),
            ndarray::ArrayViewMut1::from(&mut hi[..bs.rows * bs.cols]),
        )
    }

    pub fn row_mut<'a>(&self, flat: &'a mut [f64], id: TensorId) -> ndarray::ArrayViewMut1<'a, f64> {
        let t = self.spec(id);
        ndarray::ArrayViewMut1::from(&mut flat[t.offset..t.offset + t.rows * t.cols])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blocks_are_contiguous_and_disjoint() {
        let mut l = Layout::default();
        let a = l.add("a", 2, 3);
        let b = l.add("b", 1, 4);
        assert_eq!(l.total, 10);
        let mut flat: Vec<f64> = (0..10).map(f64::from).collect();
        assert_eq!(l.view(&flat, a)[[1, 2]], 5.0);
        assert_eq!(l.row(&flat, b)[0], 6.0);
        l.view_mut(&mut flat, b)[[0, 3]] = -1.0;
        assert_eq!(flat[9], -1.0);
        assert_eq!(l.find("b").unwrap().offset, 6);
    }
}
