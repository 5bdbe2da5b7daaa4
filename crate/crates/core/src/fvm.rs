//! Staggered finite-volume discretization of a single long pipe.
//!
//! Pressure unknowns are `p_2..p_n`, flow unknowns `q_1..q_{n-1}`; `p_1` and
//! `q_n` enter through the boundary vectors `B_p` and `B_q`.

use thiserror::Error;

use crate::graph::LongPipe;
use crate::linalg::SparseMatrix;

/// Default `c`, the squared isothermal speed of sound (m²/s²).
pub const DEFAULT_SOUND_SPEED_SQ: f64 = 340.0 * 340.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FvmError {
    #[error("mesh size must be positive and finite, got {0}")]
    InvalidMesh(f64),
    #[error("pipe {pipe}: mesh size {target_h} m gives {cells} cell(s), at least 2 are needed")]
    TooFewCells { pipe: String, target_h: f64, cells: usize },
    #[error("nonpositive pressure {value} Pa at discretization point {point}")]
    NonPositivePressure { point: usize, value: f64 },
}

/// Cells of one long pipe; `h[i]`, `area[i]`, ... describe cell `i+1`.
#[derive(Debug, Clone, PartialEq)]
pub struct PipeGrid {
    pub n: usize,
    pub h: Vec<f64>,
    pub area: Vec<f64>,
    pub diameter: Vec<f64>,
    pub friction: Vec<f64>,
    /// 0-based point indices of segment boundaries, first and last included.
    pub segment_points: Vec<usize>,
}

impl PipeGrid {
    pub fn cells(&self) -> usize {
        self.h.len()
    }

    pub fn length(&self) -> f64 {
        self.h.iter().sum()
    }

    /// Grid over `(length, diameter, λ)` segments.
    pub fn from_segments(id: &str, segments: &[(f64, f64, f64)], target_h: f64) -> Result<Self, FvmError> {
        if !(target_h > 0.0 && target_h.is_finite()) {
            return Err(FvmError::InvalidMesh(target_h));
        }
        let mut grid = PipeGrid {
            n: 1,
            h: Vec::new(),
            area: Vec::new(),
            diameter: Vec::new(),
            friction: Vec::new(),
            segment_points: vec![0],
        };
        for &(len, d, lambda) in segments {
            // Guard against 100/50 = 2.0000000000000004.
            let cells = ((len / target_h) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
            let a = std::f64::consts::PI * d * d / 4.0;
            for _ in 0..cells {
                grid.h.push(len / cells as f64);
                grid.area.push(a);
                grid.diameter.push(d);
                grid.friction.push(lambda);
            }
            grid.n += cells;
            grid.segment_points.push(grid.n - 1);
        }
        if grid.cells() < 2 {
            return Err(FvmError::TooFewCells {
                pipe: id.to_string(),
                target_h,
                cells: grid.cells(),
            });
        }
        Ok(grid)
    }
}

pub fn build_grid(pipe: &LongPipe, target_h: f64) -> Result<PipeGrid, FvmError> {
    let segs: Vec<_> = pipe.segments.iter().map(|s| (s.length, s.diameter, s.friction)).collect();
    PipeGrid::from_segments(&pipe.id, &segs, target_h)
}

/// `M_p ṗ = K_pq q + B_q q_n`, `M_q q̇ = K_qp p + B_p p_1 + g`.
#[derive(Debug, Clone)]
pub struct PipeOperators {
    pub m_p: SparseMatrix,
    pub m_q: SparseMatrix,
    pub k_pq: SparseMatrix,
    pub k_qp: SparseMatrix,
    pub b_q: Vec<f64>,
    pub b_p: Vec<f64>,
    pub c: f64,
    pub friction: FrictionEvaluator,
}

impl PipeOperators {
    /// Number of pressure (equivalently flow) unknowns, `n − 1`.
    pub fn dim(&self) -> usize {
        self.b_p.len()
    }
}

pub fn assemble_operators(grid: &PipeGrid, c: f64) -> PipeOperators {
    let m = grid.cells();
    let (h, a) = (&grid.h, &grid.area);
    let mut mp = Vec::new();
    let mut mq = Vec::new();
    let mut kpq = Vec::new();
    let mut kqp = Vec::new();

    // Row r of the p-block is point p_{r+2}; row r of the q-block is q_{r+1}.
    // Cell k (0-based) lies between points k+1 and k+2.
    for r in 0..m {
        if r + 1 < m {
            mp.push((r, r, (h[r] + h[r + 1]) / 2.0));
            // -c/2 [-1/a_{i-1}, 1/a_{i-1} - 1/a_i, 1/a_i] at q_{i-1}, q_i, q_{i+1}
            kpq.push((r, r, c / (2.0 * a[r])));
            kpq.push((r, r + 1, -c / 2.0 * (1.0 / a[r] - 1.0 / a[r + 1])));
            if r + 2 < m {
                kpq.push((r, r + 2, -c / (2.0 * a[r + 1])));
            }
        } else {
            mp.push((r, r - 1, h[m - 1] / 8.0));
            mp.push((r, r, 3.0 * h[m - 1] / 8.0));
            kpq.push((r, r, c / (2.0 * a[m - 1])));
        }

        if r == 0 {
            mq.push((0, 0, 3.0 * h[0] / 8.0));
            mq.push((0, 1, h[0] / 8.0));
            kqp.push((0, 0, -a[0] / 2.0));
        } else {
            mq.push((r, r, (h[r - 1] + h[r]) / 2.0));
            // -1/2 [-a_{i-1}, a_{i-1} - a_i, a_i] at p_{i-1}, p_i, p_{i+1}
            if r >= 2 {
                kqp.push((r, r - 2, a[r - 1] / 2.0));
            }
            kqp.push((r, r - 1, -(a[r - 1] - a[r]) / 2.0));
            kqp.push((r, r, -a[r] / 2.0));
        }
    }

    let mut b_q = vec![0.0; m];
    b_q[m - 1] = -c / (2.0 * a[m - 1]);
    b_q[m - 2] = -c / (2.0 * a[m - 1]);
    let mut b_p = vec![0.0; m];
    b_p[0] = a[0] / 2.0;
    b_p[1] = a[0] / 2.0;

    PipeOperators {
        m_p: SparseMatrix::from_triplets(m, m, mp),
        m_q: SparseMatrix::from_triplets(m, m, mq),
        k_pq: SparseMatrix::from_triplets(m, m, kpq),
        k_qp: SparseMatrix::from_triplets(m, m, kqp),
        b_q,
        b_p,
        c,
        friction: FrictionEvaluator::new(grid, c),
    }
}

/// `g_i = −κ_i q_i|q_i| / p̃_i`, with `p̃_1 = p_in` and `p̃_i = p_i` otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct FrictionEvaluator {
    pub kappa: Vec<f64>,
}

/// Derivatives of `g`. `dp[i]` is `∂g_{i+1}/∂p_{i+1}` (zero for `i = 0`),
/// located at p-unknown `i − 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrictionJacobian {
    pub dq: Vec<f64>,
    pub dp: Vec<f64>,
    pub dp_in: f64,
}

impl FrictionEvaluator {
    pub fn new(grid: &PipeGrid, c: f64) -> Self {
        let w: Vec<f64> = (0..grid.cells())
            .map(|k| grid.h[k] * grid.friction[k] / (grid.area[k] * grid.diameter[k]))
            .collect();
        let kappa = (0..w.len())
            .map(|i| if i == 0 { c / 4.0 * w[0] } else { c / 4.0 * (w[i - 1] + w[i]) })
            .collect();
        Self { kappa }
    }

    fn reference_pressures(&self, p_in: f64, p: &[f64]) -> Result<Vec<f64>, FvmError> {
        assert_eq!(p.len(), self.kappa.len());
        if !(p_in > 0.0) {
            return Err(FvmError::NonPositivePressure { point: 1, value: p_in });
        }
        if let Some((j, &v)) = p.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
            return Err(FvmError::NonPositivePressure { point: j + 2, value: v });
        }
        Ok(std::iter::once(p_in).chain(p[..p.len() - 1].iter().copied()).collect())
    }

    pub fn eval(&self, p_in: f64, p: &[f64], q: &[f64]) -> Result<Vec<f64>, FvmError> {
        let pt = self.reference_pressures(p_in, p)?;
        Ok((0..q.len()).map(|i| -self.kappa[i] * q[i] * q[i].abs() / pt[i]).collect())
    }

    pub fn jacobian(&self, p_in: f64, p: &[f64], q: &[f64]) -> Result<FrictionJacobian, FvmError> {
        let pt = self.reference_pressures(p_in, p)?;
        let dq = (0..q.len()).map(|i| -2.0 * self.kappa[i] * q[i].abs() / pt[i]).collect();
        let mut dp: Vec<f64> = (0..q.len())
            .map(|i| self.kappa[i] * q[i] * q[i].abs() / (pt[i] * pt[i]))
            .collect();
        let dp_in = dp[0];
        dp[0] = 0.0;
        Ok(FrictionJacobian { dq, dp, dp_in })
    }

    /// Picard coefficients `−κ_i |q_i| / p̃_i`, so that `g ≈ diag(·) q`.
    pub fn lagged(&self, p_in: f64, p: &[f64], q: &[f64]) -> Result<Vec<f64>, FvmError> {
        let pt = self.reference_pressures(p_in, p)?;
        Ok((0..q.len()).map(|i| -self.kappa[i] * q[i].abs() / pt[i]).collect())
    }
}
