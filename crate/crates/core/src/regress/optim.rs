//! Damped Newton ascent for small smooth log-likelihoods.

use nalgebra::{DMatrix, DVector};

/// Log-likelihood, gradient and Hessian at a point, or `None` when the
/// point is outside the parameter space.
pub type Evaluation = Option<(f64, DVector<f64>, DMatrix<f64>)>;

#[derive(Debug, Clone)]
pub(crate) struct NewtonOutcome {
    pub x: DVector<f64>,
    pub loglik: f64,
    pub gradient: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Log-likelihood after each accepted step, starting at `x0`.
    pub trace: Vec<f64>,
}

/// Solves `-H d = g`. When `-H` is not positive definite its eigenvalues
/// are replaced by their absolute values, floored at `1e-8` of the largest.
pub(crate) fn newton_direction(hessian: &DMatrix<f64>, gradient: &DVector<f64>) -> Option<DVector<f64>> {
    let neg = -hessian;
    if let Some(ch) = neg.clone().cholesky() {
        return Some(ch.solve(gradient));
    }
    let eig = neg.symmetric_eigen();
    let scale = eig.eigenvalues.amax().max(1.0);
    let floor = 1e-8 * scale;
    let vt_g = eig.eigenvectors.transpose() * gradient;
    let scaled = DVector::from_fn(vt_g.len(), |i, _| vt_g[i] / eig.eigenvalues[i].abs().max(floor));
    let d = &eig.eigenvectors * scaled;
    d.iter().all(|v| v.is_finite()).then_some(d)
}

pub(crate) fn maximize<F>(f: F, x0: DVector<f64>, max_iter: usize, tol: f64) -> Option<NewtonOutcome>
where
    F: Fn(&DVector<f64>) -> Evaluation,
{
    let (mut ll, mut g, mut h) = f(&x0)?;
    let mut x = x0;
    let mut trace = vec![ll];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iter {
        if g.amax() < tol {
            converged = true;
            break;
        }
        iterations += 1;
        let Some(d) = newton_direction(&h, &g) else { break };
        // predicted gain below the rounding level of the objective
        if 0.5 * g.dot(&d) <= 1e-13 * (1.0 + ll.abs()) {
            converged = true;
            break;
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..50 {
            let cand = &x + &d * step;
            if let Some((l2, g2, h2)) = f(&cand) {
                if l2.is_finite() && l2 >= ll {
                    accepted = Some((cand, l2, g2, h2));
                    break;
                }
            }
            step *= 0.5;
        }
        match accepted {
            Some((cand, l2, g2, h2)) => {
                let stalled = (&cand - &x).amax() == 0.0;
                x = cand;
                ll = l2;
                g = g2;
                h = h2;
                trace.push(ll);
                if stalled {
                    converged = g.amax() < tol;
                    break;
                }
            }
            None => break,
        }
    }
    if !converged && g.amax() < tol {
        converged = true;
    }
    Some(NewtonOutcome { x, loglik: ll, gradient: g, iterations, converged, trace })
}
