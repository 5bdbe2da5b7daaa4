use super::banded::BandedLu;
use super::{LinalgError, SparseMatrix};

/// Block boundaries of the differential (1,1) block: one block per long pipe
/// in DF order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockPartition {
    bounds: Vec<usize>,
}

impl BlockPartition {
    /// `bounds` starts at 0 and is strictly increasing; its last entry is the
    /// dimension of the (1,1) block.
    pub fn new(bounds: Vec<usize>) -> Result<Self, LinalgError> {
        if bounds.first() != Some(&0) || bounds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(LinalgError::BadPartition);
        }
        Ok(Self { bounds })
    }

    pub fn from_sizes(sizes: &[usize]) -> Result<Self, LinalgError> {
        let mut bounds = vec![0];
        for s in sizes {
            bounds.push(bounds.last().unwrap() + s);
        }
        Self::new(bounds)
    }

    pub fn blocks(&self) -> usize {
        self.bounds.len() - 1
    }

    pub fn dim(&self) -> usize {
        *self.bounds.last().unwrap()
    }

    pub fn range(&self, k: usize) -> std::ops::Range<usize> {
        self.bounds[k]..self.bounds[k + 1]
    }

    pub fn block_of(&self, i: usize) -> usize {
        self.bounds.partition_point(|&b| b <= i) - 1
    }

    pub fn bounds(&self) -> &[usize] {
        &self.bounds
    }
}

/// Returns the first entry of `a` lying above the block diagonal, if any.
pub fn first_entry_above_blocks(a: &SparseMatrix, part: &BlockPartition) -> Option<(usize, usize)> {
    (0..a.nrows()).find_map(|i| {
        let end = part.range(part.block_of(i)).end;
        a.row(i).find(|&(j, v)| j >= end && v != 0.0).map(|(j, _)| (i, j))
    })
}

/// Factored block lower-triangular matrix: LU factors of every diagonal block
/// and the strictly-lower coupling rows.
#[derive(Debug, Clone)]
pub struct BlockLowerTriangular {
    part: BlockPartition,
    diag: Vec<BandedLu>,
    /// Rows of block k restricted to columns `0..start(k)`.
    lower: Vec<SparseMatrix>,
}

impl BlockLowerTriangular {
    pub fn factor(a11: &SparseMatrix, part: &BlockPartition) -> Result<Self, LinalgError> {
        let n = part.dim();
        if a11.nrows() != n || a11.ncols() != n {
            return Err(LinalgError::DimensionMismatch {
                expected: n,
                found: a11.nrows(),
            });
        }
        if let Some((row, col)) = first_entry_above_blocks(a11, part) {
            return Err(LinalgError::NotBlockLowerTriangular { row, col });
        }
        let mut diag = Vec::with_capacity(part.blocks());
        let mut lower = Vec::with_capacity(part.blocks());
        for k in 0..part.blocks() {
            let r = part.range(k);
            let block = a11.submatrix(r.clone(), r.clone());
            let lu = BandedLu::factor(&block).map_err(|z| LinalgError::SingularBlock {
                block: k,
                column: z.column,
            })?;
            diag.push(lu);
            lower.push(a11.submatrix(r.clone(), 0..r.start));
        }
        Ok(Self {
            part: part.clone(),
            diag,
            lower,
        })
    }

    pub fn partition(&self) -> &BlockPartition {
        &self.part
    }

    pub fn dim(&self) -> usize {
        self.part.dim()
    }

    /// Forward substitution `A11 x = b`, in place, starting at block `first`
    /// (all blocks of `b` before it must be zero).
    fn solve_from(&self, first: usize, b: &mut [f64]) {
        for k in first..self.part.blocks() {
            let r = self.part.range(k);
            let (done, rest) = b.split_at_mut(r.start);
            let bk = &mut rest[..r.len()];
            if r.start > 0 && self.lower[k].nnz() > 0 {
                self.lower[k].mul_vec_acc(-1.0, done, bk);
            }
            self.diag[k].solve_in_place(bk);
        }
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        assert_eq!(b.len(), self.dim());
        self.solve_from(0, b);
    }

    /// Solves for several right-hand sides; each one starts at its first
    /// nonzero block.
    pub fn solve_many(&self, rhs: &mut [Vec<f64>]) {
        for b in rhs.iter_mut() {
            assert_eq!(b.len(), self.dim());
            let first = b
                .iter()
                .position(|&v| v != 0.0)
                .map_or(self.part.blocks(), |i| self.part.block_of(i));
            self.solve_from(first, b);
        }
    }
}

/// Solves `A11 X = B` for block lower-triangular `A11`, overwriting each
/// right-hand side in `rhs` with its solution.
pub fn block_forward_substitute(
    a11: &SparseMatrix,
    part: &BlockPartition,
    rhs: &mut [Vec<f64>],
) -> Result<(), LinalgError> {
    let f = BlockLowerTriangular::factor(a11, part)?;
    f.solve_many(rhs);
    Ok(())
}
