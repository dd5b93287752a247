//! Nadaraya–Watson sums over two conditioning cells (Y=0, Y=1).

use rayon::prelude::*;

use crate::kernels::KernelSpec;
use crate::matrix::RowMatrix;

/// Conditional cells need this much kernel mass before we divide by it.
pub const MIN_CELL_WEIGHT: f64 = 1e-8;

/// Product kernel with per-coordinate bandwidths over a fixed data set.
/// Weights are K((x_j − q)/h) without the 1/h factors, which cancel in every ratio.
#[derive(Debug, Clone)]
pub struct Smoother {
    data: RowMatrix,
    inv_h: Vec<f64>,
    kernel: KernelSpec,
    gauss_norm: f64,
}

impl Smoother {
    pub fn new(data: RowMatrix, h: &[f64], kernel: KernelSpec) -> Self {
        assert_eq!(data.cols(), h.len());
        let k = h.len() as f64;
        Self {
            data,
            inv_h: h.iter().map(|v| 1.0 / v).collect(),
            kernel,
            gauss_norm: (2.0 * std::f64::consts::PI).powf(-k / 2.0),
        }
    }

    pub fn len(&self) -> usize {
        self.data.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.rows() == 0
    }

    pub fn data(&self) -> &RowMatrix {
        &self.data
    }

    pub fn bandwidth(&self) -> Vec<f64> {
        self.inv_h.iter().map(|v| 1.0 / v).collect()
    }

    #[inline]
    pub fn weight(&self, q: &[f64], j: usize) -> f64 {
        let x = self.data.row(j);
        if self.kernel.order() == 2 {
            let mut s = 0.0;
            for i in 0..q.len() {
                let u = (x[i] - q[i]) * self.inv_h[i];
                s += u * u;
            }
            self.gauss_norm * (-0.5 * s).exp()
        } else {
            let mut w = 1.0;
            for i in 0..q.len() {
                w *= self.kernel.k1((x[i] - q[i]) * self.inv_h[i]);
            }
            w
        }
    }
}

/// Per query point: kernel mass and weighted response sums in each cell.
#[derive(Debug, Clone)]
pub struct CellTable {
    pub mass: Vec<[f64; 2]>,
    pub sums: [RowMatrix; 2],
}

impl CellTable {
    pub fn supported(&self, i: usize) -> bool {
        self.mass[i][0] >= MIN_CELL_WEIGHT && self.mass[i][1] >= MIN_CELL_WEIGHT
    }

    /// NW mean in cell c at query i.
    pub fn mean(&self, i: usize, c: usize) -> Vec<f64> {
        let m = self.mass[i][c];
        self.sums[c].row(i).iter().map(|s| s / m).collect()
    }

    /// Cell-1 mean minus cell-0 mean, or None if either cell is too thin.
    pub fn difference(&self, i: usize) -> Option<Vec<f64>> {
        if !self.supported(i) {
            return None;
        }
        let (m0, m1) = (self.mass[i][0], self.mass[i][1]);
        Some(
            self.sums[1]
                .row(i)
                .iter()
                .zip(self.sums[0].row(i))
                .map(|(s1, s0)| s1 / m1 - s0 / m0)
                .collect(),
        )
    }
}

/// Accumulate cell sums at each query row. `cell[j]` assigns data row j to
/// cell 0 or 1, or leaves it out. `skip_self` drops data row i from query i
/// (queries and data must then be the same points).
pub fn cell_table(
    smoother: &Smoother,
    queries: &RowMatrix,
    cell: &[Option<u8>],
    response: &RowMatrix,
    skip_self: bool,
) -> CellTable {
    assert_eq!(cell.len(), smoother.len());
    assert_eq!(response.rows(), smoother.len());
    let m = response.cols();
    let members: Vec<(usize, usize)> = cell
        .iter()
        .enumerate()
        .filter_map(|(j, c)| c.map(|c| (j, c as usize)))
        .collect();
    let rows: Vec<([f64; 2], Vec<f64>, Vec<f64>)> = (0..queries.rows())
        .into_par_iter()
        .map(|i| {
            let q = queries.row(i);
            let mut mass = [0.0; 2];
            let mut s = [vec![0.0; m], vec![0.0; m]];
            for &(j, c) in &members {
                if skip_self && j == i {
                    continue;
                }
                let w = smoother.weight(q, j);
                mass[c] += w;
                for (acc, r) in s[c].iter_mut().zip(response.row(j)) {
                    *acc += w * r;
                }
            }
            let [s0, s1] = s;
            (mass, s0, s1)
        })
        .collect();
    let mut mass = Vec::with_capacity(rows.len());
    let mut s0 = Vec::with_capacity(rows.len() * m);
    let mut s1 = Vec::with_capacity(rows.len() * m);
    for (w, a, b) in rows {
        mass.push(w);
        s0.extend(a);
        s1.extend(b);
    }
    let n = mass.len();
    CellTable { mass, sums: [RowMatrix::from_vec(n, m, s0), RowMatrix::from_vec(n, m, s1)] }
}
