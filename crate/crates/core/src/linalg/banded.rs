//! LU factorization with partial pivoting of a sparse square block, stored in
//! band form after a reverse Cuthill-McKee reordering.

use std::collections::VecDeque;

use super::SparseMatrix;

/// Reverse Cuthill-McKee ordering of the symmetrized pattern of `a`.
/// Returns `perm` with `perm[new] = old`.
pub fn reverse_cuthill_mckee(a: &SparseMatrix) -> Vec<usize> {
    let n = a.nrows();
    let mut adj = vec![Vec::new(); n];
    for (i, j, _) in a.triplets() {
        if i != j {
            adj[i].push(j);
            adj[j].push(i);
        }
    }
    for list in &mut adj {
        list.sort_unstable();
        list.dedup();
    }
    let deg: Vec<usize> = adj.iter().map(Vec::len).collect();

    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    while order.len() < n {
        let start = (0..n)
            .filter(|&v| !visited[v])
            .min_by_key(|&v| (deg[v], v))
            .unwrap();
        visited[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut next: Vec<usize> = adj[v].iter().copied().filter(|&w| !visited[w]).collect();
            next.sort_by_key(|&w| (deg[w], w));
            for w in next {
                visited[w] = true;
                queue.push_back(w);
            }
        }
    }
    order.reverse();
    order
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZeroPivot {
    pub column: usize,
}

/// Band LU factors (LAPACK `gbtrf` layout, column-major, `2*kl + ku + 1` rows).
#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    ab: Vec<f64>,
    ipiv: Vec<usize>,
    /// `perm[new] = old`
    perm: Vec<usize>,
}

impl BandedLu {
    pub fn factor(a: &SparseMatrix) -> Result<Self, ZeroPivot> {
        let n = a.nrows();
        assert_eq!(n, a.ncols());
        let perm = reverse_cuthill_mckee(a);
        let mut inv = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let (mut kl, mut ku) = (0usize, 0usize);
        for (i, j, _) in a.triplets() {
            let (pi, pj) = (inv[i], inv[j]);
            if pi > pj {
                kl = kl.max(pi - pj);
            } else {
                ku = ku.max(pj - pi);
            }
        }
        let ldab = 2 * kl + ku + 1;
        let mut lu = Self {
            n,
            kl,
            ku,
            ab: vec![0.0; ldab * n],
            ipiv: vec![0; n],
            perm,
        };
        for (i, j, v) in a.triplets() {
            let idx = lu.idx(inv[i], inv[j]);
            lu.ab[idx] += v;
        }
        lu.factorize()?;
        Ok(lu)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidths(&self) -> (usize, usize) {
        (self.kl, self.ku)
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        let ldab = 2 * self.kl + self.ku + 1;
        (self.kl + self.ku + i - j) + j * ldab
    }

    fn factorize(&mut self) -> Result<(), ZeroPivot> {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        let mut ju = 0usize;
        for j in 0..n {
            let km = kl.min(n - 1 - j);
            let mut jp = 0;
            let mut best = 0.0f64;
            for t in 0..=km {
                let v = self.ab[self.idx(j + t, j)].abs();
                if v > best {
                    best = v;
                    jp = t;
                }
            }
            self.ipiv[j] = j + jp;
            if best == 0.0 || !best.is_finite() {
                return Err(ZeroPivot { column: j });
            }
            ju = ju.max((j + ku + jp).min(n - 1));
            if jp != 0 {
                for c in j..=ju {
                    let (x, y) = (self.idx(j + jp, c), self.idx(j, c));
                    self.ab.swap(x, y);
                }
            }
            if km > 0 {
                let piv = self.ab[self.idx(j, j)];
                for r in 1..=km {
                    let k = self.idx(j + r, j);
                    self.ab[k] /= piv;
                }
                for c in j + 1..=ju {
                    let ujc = self.ab[self.idx(j, c)];
                    if ujc == 0.0 {
                        continue;
                    }
                    for r in 1..=km {
                        let l = self.ab[self.idx(j + r, j)];
                        let k = self.idx(j + r, c);
                        self.ab[k] -= l * ujc;
                    }
                }
            }
        }
        Ok(())
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        assert_eq!(b.len(), n);
        let mut x: Vec<f64> = self.perm.iter().map(|&old| b[old]).collect();
        let kv = self.kl + self.ku;
        for j in 0..n {
            let lm = self.kl.min(n - 1 - j);
            let l = self.ipiv[j];
            if l != j {
                x.swap(l, j);
            }
            let xj = x[j];
            if xj != 0.0 {
                for r in 1..=lm {
                    x[j + r] -= self.ab[self.idx(j + r, j)] * xj;
                }
            }
        }
        for j in (0..n).rev() {
            x[j] /= self.ab[self.idx(j, j)];
            let xj = x[j];
            if xj != 0.0 {
                for i in j.saturating_sub(kv)..j {
                    x[i] -= self.ab[self.idx(i, j)] * xj;
                }
            }
        }
        for (new, &old) in self.perm.iter().enumerate() {
            b[old] = x[new];
        }
    }
}
