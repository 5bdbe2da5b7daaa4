use super::{check_dims, dot, norm2, KrylovConfig, KrylovResult, LinalgError, LinearOperator, Preconditioner};

/// Right-preconditioned GMRES started from `x = 0`.
///
/// Stops once the residual estimate satisfies `‖b − A x‖ ≤ tol ‖b‖`; with
/// right preconditioning that estimate is the true residual in exact
/// arithmetic. `cfg.restart = None` runs full GMRES.
pub fn gmres(
    a: &dyn LinearOperator,
    b: &[f64],
    precond: &dyn Preconditioner,
    cfg: &KrylovConfig,
) -> Result<KrylovResult, LinalgError> {
    let n = check_dims(a, b, cfg)?;
    let bnorm = norm2(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok(KrylovResult::trivial(x));
    }
    let target = cfg.tol * bnorm;
    let m = cfg.restart.unwrap_or(cfg.max_iter).clamp(1, cfg.max_iter.max(1));

    let mut history = vec![1.0];
    let mut iterations = 0;
    let mut converged = false;
    let mut r = b.to_vec();
    let mut w = vec![0.0; n];
    let mut z = vec![0.0; n];

    loop {
        if iterations > 0 {
            a.apply(&x, &mut w);
            for i in 0..n {
                r[i] = b[i] - w[i];
            }
        }
        let beta = norm2(&r);
        if beta <= target {
            converged = true;
            break;
        }
        let mut basis: Vec<Vec<f64>> = vec![r.iter().map(|v| v / beta).collect()];
        let mut h: Vec<Vec<f64>> = Vec::new(); // columns, length j+2
        let (mut cs, mut sn) = (Vec::<f64>::new(), Vec::<f64>::new());
        let mut g = vec![beta];

        for j in 0..m {
            precond.apply(&basis[j], &mut z);
            a.apply(&z, &mut w);
            let mut col = vec![0.0; j + 2];
            // Modified Gram-Schmidt, two passes.
            for _ in 0..2 {
                for (i, v) in basis.iter().enumerate() {
                    let hij = dot(&w, v);
                    col[i] += hij;
                    for (wk, vk) in w.iter_mut().zip(v) {
                        *wk -= hij * vk;
                    }
                }
            }
            let hnext = norm2(&w);
            col[j + 1] = hnext;
            for i in 0..j {
                let t = cs[i] * col[i] + sn[i] * col[i + 1];
                col[i + 1] = -sn[i] * col[i] + cs[i] * col[i + 1];
                col[i] = t;
            }
            let rho = col[j].hypot(col[j + 1]);
            let (c, s) = if rho == 0.0 { (1.0, 0.0) } else { (col[j] / rho, col[j + 1] / rho) };
            cs.push(c);
            sn.push(s);
            col[j] = rho;
            col[j + 1] = 0.0;
            g.push(-s * g[j]);
            g[j] *= c;
            h.push(col);

            iterations += 1;
            let res = g[j + 1].abs();
            history.push(res / bnorm);
            let breakdown = hnext == 0.0;
            if res <= target || breakdown || iterations >= cfg.max_iter {
                converged = res <= target || breakdown;
                break;
            }
            basis.push(w.iter().map(|v| v / hnext).collect());
        }

        // Back substitution for the least-squares coefficients.
        let k = h.len();
        let mut y = vec![0.0; k];
        for i in (0..k).rev() {
            let s: f64 = (i + 1..k).map(|l| h[l][i] * y[l]).sum();
            y[i] = if h[i][i] != 0.0 { (g[i] - s) / h[i][i] } else { 0.0 };
        }
        let mut update = vec![0.0; n];
        for (yi, v) in y.iter().zip(&basis) {
            for (u, vk) in update.iter_mut().zip(v) {
                *u += yi * vk;
            }
        }
        precond.apply(&update, &mut z);
        for (xi, zi) in x.iter_mut().zip(&z) {
            *xi += zi;
        }
        if converged || iterations >= cfg.max_iter {
            break;
        }
    }

    a.apply(&x, &mut w);
    let true_res = b.iter().zip(&w).map(|(bi, wi)| (bi - wi).powi(2)).sum::<f64>().sqrt() / bnorm;
    Ok(KrylovResult {
        x,
        iterations,
        residuals: history,
        converged,
        true_relative_residual: true_res,
    })
}
