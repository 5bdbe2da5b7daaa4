use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr_free::standard_normal;

use super::{check_dims, dot, norm2, KrylovConfig, KrylovResult, LinalgError, LinearOperator, Preconditioner};

/// Seed of the shadow space; fixed so that solves are reproducible.
const SHADOW_SEED: u64 = 0x1d2_5eed;

/// Stabilization threshold for the minimal-residual step length.
const KAPPA: f64 = 0.7;

/// Right-preconditioned IDR(s) with biorthogonalization, started from `x = 0`.
pub fn idr_s(
    a: &dyn LinearOperator,
    b: &[f64],
    precond: &dyn Preconditioner,
    s: usize,
    cfg: &KrylovConfig,
) -> Result<KrylovResult, LinalgError> {
    let n = check_dims(a, b, cfg)?;
    if s == 0 {
        return Err(LinalgError::InvalidShadowDimension);
    }
    let bnorm = norm2(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok(KrylovResult::trivial(x));
    }
    let target = cfg.tol * bnorm;
    let shadow = shadow_space(n, s);

    let mut r = b.to_vec();
    let mut normr = bnorm;
    let mut history = vec![1.0];
    let mut iterations = 0;
    let mut gs = vec![vec![0.0; n]; s];
    let mut us = vec![vec![0.0; n]; s];
    let mut m = vec![vec![0.0; s]; s];
    for (k, row) in m.iter_mut().enumerate() {
        row[k] = 1.0;
    }
    let mut om = 1.0;
    let mut v = vec![0.0; n];
    let mut t = vec![0.0; n];
    let mut breakdown = false;

    'outer: while normr > target && iterations < cfg.max_iter {
        let mut f: Vec<f64> = shadow.iter().map(|p| dot(p, &r)).collect();
        for k in 0..s {
            // Solve the lower-triangular system M[k..s, k..s] c = f[k..s].
            let mut c = vec![0.0; s - k];
            for i in 0..s - k {
                let sum: f64 = (0..i).map(|l| m[k + i][k + l] * c[l]).sum();
                c[i] = (f[k + i] - sum) / m[k + i][k + i];
            }
            for idx in 0..n {
                let mut acc = r[idx];
                for (l, cl) in c.iter().enumerate() {
                    acc -= gs[k + l][idx] * cl;
                }
                v[idx] = acc;
            }
            precond.apply(&v, &mut t);
            let mut uk = vec![0.0; n];
            for idx in 0..n {
                let mut acc = om * t[idx];
                for (l, cl) in c.iter().enumerate() {
                    acc += us[k + l][idx] * cl;
                }
                uk[idx] = acc;
            }
            let mut gk = vec![0.0; n];
            a.apply(&uk, &mut gk);
            for i in 0..k {
                let alpha = dot(&shadow[i], &gk) / m[i][i];
                for idx in 0..n {
                    gk[idx] -= alpha * gs[i][idx];
                    uk[idx] -= alpha * us[i][idx];
                }
            }
            for i in k..s {
                m[i][k] = dot(&shadow[i], &gk);
            }
            gs[k] = gk;
            us[k] = uk;
            if m[k][k] == 0.0 || !m[k][k].is_finite() {
                breakdown = true;
                break 'outer;
            }
            let beta = f[k] / m[k][k];
            for idx in 0..n {
                r[idx] -= beta * gs[k][idx];
                x[idx] += beta * us[k][idx];
            }
            normr = norm2(&r);
            iterations += 1;
            history.push(normr / bnorm);
            if normr <= target || iterations >= cfg.max_iter {
                break 'outer;
            }
            for i in k + 1..s {
                f[i] -= beta * m[i][k];
            }
        }

        precond.apply(&r, &mut v);
        a.apply(&v, &mut t);
        let nt = norm2(&t);
        let ts = dot(&t, &r);
        if nt == 0.0 {
            breakdown = true;
            break;
        }
        om = ts / (nt * nt);
        let rho = (ts / (nt * normr)).abs();
        if rho < KAPPA {
            om *= KAPPA / rho;
        }
        if om == 0.0 || !om.is_finite() {
            breakdown = true;
            break;
        }
        for idx in 0..n {
            r[idx] -= om * t[idx];
            x[idx] += om * v[idx];
        }
        normr = norm2(&r);
        iterations += 1;
        history.push(normr / bnorm);
    }

    a.apply(&x, &mut t);
    let true_res = b.iter().zip(&t).map(|(bi, ti)| (bi - ti).powi(2)).sum::<f64>().sqrt() / bnorm;
    if breakdown && normr > target {
        return Err(LinalgError::Breakdown { iterations });
    }
    Ok(KrylovResult {
        x,
        iterations,
        residuals: history,
        converged: normr <= target,
        true_relative_residual: true_res,
    })
}

/// Orthonormalized Gaussian shadow vectors.
fn shadow_space(n: usize, s: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(SHADOW_SEED);
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(s);
    for _ in 0..s {
        let mut p: Vec<f64> = (0..n).map(|_| standard_normal(&mut rng)).collect();
        for q in &out {
            let d = dot(&p, q);
            for (pi, qi) in p.iter_mut().zip(q) {
                *pi -= d * qi;
            }
        }
        let nrm = norm2(&p);
        if nrm > 0.0 {
            p.iter_mut().for_each(|v| *v /= nrm);
        }
        out.push(p);
    }
    out
}

mod rand_distr_free {
    use rand::Rng;

    /// Box-Muller sample from N(0, 1).
    pub fn standard_normal(rng: &mut impl Rng) -> f64 {
        let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
        let u2: f64 = rng.gen();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }
}
