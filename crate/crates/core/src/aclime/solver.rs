//! Inexact (linearized) ADMM over column blocks.
//!
//! Both stages solve, for every column `j`, an LP of the form
//! `min ‖b‖₁` subject to linear inequalities in `Ĉ b`. The primal step is
//! `b ← soft(b - (ρ/η) Aᵀ(2y^t - y^{t-1}), 1/η)`; the constraint step is a
//! closed-form projection; the scaled dual absorbs the residual.
//!
//! Products with `Ĉ` go through its factor `Ĉ = L Lᵀ + I/n`, shared by all
//! columns of a block. The dual residual `ρ Ĉ Δs` (minus the rank-one stage-1
//! term) is measured in the coordinates `Lᵀ Δs`, which are tracked from
//! quantities the iteration computes anyway.
//!
//! A column stops as soon as its own residuals pass the stopping rule and is
//! frozen from then on, so its result does not depend on the block it was
//! scheduled in.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView1};
use rayon::prelude::*;

use super::ops::{zeros_f, LowRank};
use crate::admm::{clamp_box, soft, AdmmParams, ResidualTrace, StopRule};

/// Constraint family of one solve.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Stage<'a> {
    /// `|Ĉ b - e_j| <= τ b_j` elementwise, as `A_j b + r = c`, `r >= 0`.
    Diagonal { tau: f64 },
    /// `‖Ĉ b - e_j‖∞ <= λ_j`, split as `Ĉ b = z` with `z` in a box.
    Adaptive { lambdas: &'a [f64] },
}

impl Stage<'_> {
    fn dual_len(&self, p: usize) -> usize {
        match self {
            Stage::Diagonal { .. } => 2 * p,
            Stage::Adaptive { .. } => p,
        }
    }
}

/// Result of one column block.
#[derive(Debug, Clone)]
pub struct BlockSolution {
    pub start: usize,
    /// `p x k` primal block.
    pub x: Array2<f64>,
    /// Scaled dual block (`2p x k` in stage 1, `p x k` in stage 2).
    pub y: Array2<f64>,
    pub iterations: Vec<usize>,
    pub converged: Vec<bool>,
    pub trace: ResidualTrace,
}

/// Column-major state of one block.
struct BlockState {
    x: Array2<f64>,
    /// `Lᵀ X` and `Ĉ X`
    wx: Array2<f64>,
    cx: Array2<f64>,
    y: Array2<f64>,
    /// Dual part entering `Aᵀ Y` (`Y` or `Y₁ - Y₂`) and its `Lᵀ` image.
    dy: Array2<f64>,
    wy: Array2<f64>,
    wy_prev: Array2<f64>,
    /// `Aᵀ Y` at the current and previous iteration.
    u: Array2<f64>,
    u_prev: Array2<f64>,
    /// Slack (`R` or `Z`) and `Lᵀ` of its stage-relevant part.
    s: Array2<f64>,
    ws: Array2<f64>,
    /// `K Lᵀ X` and `K Lᵀ Δs`, `K = Lᵀ L`.
    kwx: Array2<f64>,
    wd: Array2<f64>,
    kwd: Array2<f64>,
}

pub(crate) fn solve_block(
    op: &LowRank,
    stage: Stage<'_>,
    params: &AdmmParams,
    eta: f64,
    start: usize,
    k: usize,
) -> BlockSolution {
    let p = op.p();
    let r = op.rank();
    let dual = stage.dual_len(p);
    let mut st = BlockState {
        x: zeros_f(p, k),
        wx: zeros_f(r, k),
        cx: zeros_f(p, k),
        y: zeros_f(dual, k),
        dy: zeros_f(p, k),
        wy: zeros_f(r, k),
        wy_prev: zeros_f(r, k),
        u: zeros_f(p, k),
        u_prev: zeros_f(p, k),
        s: zeros_f(dual, k),
        ws: zeros_f(r, k),
        kwx: zeros_f(r, k),
        wd: zeros_f(r, k),
        kwd: zeros_f(r, k),
    };
    if let Stage::Diagonal { .. } = stage {
        // R⁰ = max(E, 0) = [e_j; 0], so Lᵀ(R₁ - R₂) = Lᵀ e_j.
        for m in 0..k {
            st.s[[start + m, m]] = 1.0;
            st.ws.column_mut(m).assign(&op.l.row(start + m));
        }
    }
    let rule = StopRule { tol_abs: params.tol_abs, tol_rel: params.tol_rel, primal_dim: dual, dual_dim: p };
    let rho = params.rho;
    let (step, threshold) = (rho / eta, 1.0 / eta);
    let mut iterations = vec![0; k];
    let mut converged = vec![false; k];
    let mut primal = vec![0.0; k];
    let mut primal_scale = vec![0.0; k];
    let mut sigma = vec![0.0; k];
    let mut d_norm_sq = vec![0.0; k];
    let mut d_j = vec![0.0; k];
    let mut trace = ResidualTrace::default();

    for t in 0..params.max_iter {
        if converged.iter().all(|c| *c) {
            break;
        }
        // Primal step, linearized at the current iterate.
        for m in 0..k {
            if converged[m] {
                continue;
            }
            let xc = col_mut(&mut st.x, m);
            let (u, up) = (col(&st.u, m), col(&st.u_prev, m));
            for ((x, &u), &up) in xc.iter_mut().zip(u).zip(up) {
                *x = soft(*x - step * (2.0 * u - up), threshold);
            }
        }
        op.project(&st.x, &mut st.wx);
        op.expand(&st.wx, &st.x, &mut st.cx);
        general_mat_mul(1.0, &op.gram, &st.wx, 0.0, &mut st.kwx);

        // Constraint projection and dual update; the new dual is zero wherever
        // the constraint is slack.
        std::mem::swap(&mut st.wy, &mut st.wy_prev);
        for m in 0..k {
            if converged[m] {
                continue;
            }
            let j = start + m;
            let bj = st.x[[j, m]];
            let cx = col(&st.cx, m);
            let y = col_mut(&mut st.y, m);
            let s = col_mut(&mut st.s, m);
            let dy = col_mut(&mut st.dy, m);
            let (mut dy_sq, mut lhs_sq, mut slack_sq, mut dsq, mut sig) = (0.0, 0.0, 0.0, 0.0, 0.0);
            match stage {
                Stage::Diagonal { tau } => {
                    for i in 0..p {
                        let e = if i == j { 1.0 } else { 0.0 };
                        let ab_up = cx[i] - tau * bj;
                        let ab_lo = -cx[i] - tau * bj;
                        let h_up = e - y[i] - ab_up;
                        let h_lo = -e - y[p + i] - ab_lo;
                        let (r_up, r_lo) = (h_up.max(0.0), h_lo.max(0.0));
                        let (y_up, y_lo) = ((-h_up).max(0.0), (-h_lo).max(0.0));
                        dy_sq += (y_up - y[i]).powi(2) + (y_lo - y[p + i]).powi(2);
                        let (d_up, d_lo) = (r_up - s[i], r_lo - s[p + i]);
                        dsq += (d_up - d_lo).powi(2);
                        sig += d_up + d_lo;
                        if i == j {
                            d_j[m] = d_up - d_lo;
                        }
                        y[i] = y_up;
                        y[p + i] = y_lo;
                        s[i] = r_up;
                        s[p + i] = r_lo;
                        dy[i] = y_up - y_lo;
                        lhs_sq += ab_up * ab_up + ab_lo * ab_lo;
                        slack_sq += r_up * r_up + r_lo * r_lo;
                    }
                    primal_scale[m] = lhs_sq.sqrt().max(slack_sq.sqrt()).max(std::f64::consts::SQRT_2);
                }
                Stage::Adaptive { lambdas } => {
                    let lambda = lambdas[m];
                    for (i, (((&c, y), s), dy)) in cx.iter().zip(y.iter_mut()).zip(s.iter_mut()).zip(dy.iter_mut()).enumerate() {
                        let e = if i == j { 1.0 } else { 0.0 };
                        let a = c + *y;
                        let z = clamp_box(a, e, lambda);
                        let y_new = a - z;
                        dy_sq += (y_new - *y) * (y_new - *y);
                        dsq += (z - *s) * (z - *s);
                        *y = y_new;
                        *s = z;
                        *dy = y_new;
                        lhs_sq += c * c;
                        slack_sq += z * z;
                    }
                    primal_scale[m] = lhs_sq.sqrt().max(slack_sq.sqrt());
                }
            }
            primal[m] = dy_sq.sqrt();
            d_norm_sq[m] = dsq;
            sigma[m] = sig;
        }

        // Aᵀ Y for the next primal step.
        std::mem::swap(&mut st.u, &mut st.u_prev);
        op.project(&st.dy, &mut st.wy);
        op.expand(&st.wy, &st.dy, &mut st.u);
        if let Stage::Diagonal { tau } = stage {
            for m in 0..k {
                let total: f64 = st.y.column(m).sum();
                st.u[[start + m, m]] -= tau * total;
            }
        }
        // Frozen columns keep their last Aᵀ Y history.
        for m in 0..k {
            if converged[m] {
                st.u.column_mut(m).assign(&st.u_prev.column(m));
            }
        }

        // Lᵀ of the new slack, from Lᵀ X and Lᵀ Y alone:
        //   stage 1: Lᵀ(R₁ - R₂) = Lᵀ(Y₁ - Y₂)⁺ - Lᵀ(Y₁ - Y₂) + 2 Lᵀ e_j - 2 Lᵀ Ĉ X
        //   stage 2: Lᵀ Z = Lᵀ Ĉ X + Lᵀ Y - Lᵀ Y⁺
        for m in 0..k {
            if converged[m] {
                continue;
            }
            let kwx = st.kwx.column(m);
            let wx = st.wx.column(m);
            let (wy, wyp) = (st.wy.column(m), st.wy_prev.column(m));
            let lj = op.l.row(start + m);
            let mut ws = st.ws.column_mut(m);
            let mut wd = st.wd.column_mut(m);
            for q in 0..r {
                let lcx = kwx[q] + op.inv_n * wx[q];
                let new = match stage {
                    Stage::Diagonal { .. } => wy[q] - wyp[q] + 2.0 * lj[q] - 2.0 * lcx,
                    Stage::Adaptive { .. } => lcx + wyp[q] - wy[q],
                };
                wd[q] = new - ws[q];
                ws[q] = new;
            }
        }
        general_mat_mul(1.0, &op.gram, &st.wd, 0.0, &mut st.kwd);

        let (mut primal_sq, mut dual_sq) = (0.0, 0.0);
        for m in 0..k {
            if converged[m] {
                continue;
            }
            let wd = st.wd.column(m);
            let kwd = st.kwd.column(m);
            // ‖L w + d/n‖² = wᵀK w + (2/n)‖w‖² + ‖d‖²/n², using Lᵀ d = w.
            let mut norm_sq = dot(kwd, wd) + 2.0 * op.inv_n * dot(wd, wd) + d_norm_sq[m] * op.inv_n * op.inv_n;
            if let Stage::Diagonal { tau } = stage {
                let sj = dot(op.l.row(start + m), wd) + d_j[m] * op.inv_n;
                norm_sq += -2.0 * tau * sigma[m] * sj + (tau * sigma[m]).powi(2);
            }
            let dual = rho * norm_sq.max(0.0).sqrt();
            let dual_scale = rho * dot(st.u.column(m), st.u.column(m)).sqrt();
            primal_sq += primal[m] * primal[m];
            dual_sq += dual * dual;
            iterations[m] = t + 1;
            if primal[m] <= rule.primal_threshold(primal_scale[m]) && dual <= rule.dual_threshold(dual_scale) {
                converged[m] = true;
            }
        }
        trace.push(primal_sq.sqrt(), dual_sq.sqrt());
    }

    BlockSolution { start, x: st.x, y: st.y, iterations, converged, trace }
}

fn col(a: &Array2<f64>, m: usize) -> &[f64] {
    let p = a.nrows();
    &a.as_slice_memory_order().expect("column-major block")[m * p..(m + 1) * p]
}

fn col_mut(a: &mut Array2<f64>, m: usize) -> &mut [f64] {
    let p = a.nrows();
    &mut a.as_slice_memory_order_mut().expect("column-major block")[m * p..(m + 1) * p]
}

fn dot(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Column blocks `[start, start + k)` covering `0..p`.
pub(crate) fn block_ranges(p: usize, block: usize) -> Vec<(usize, usize)> {
    let block = block.max(1);
    (0..p).step_by(block).map(|s| (s, block.min(p - s))).collect()
}

/// Solves every column, blocks in parallel; results are assembled in column
/// order so the output does not depend on scheduling.
pub(crate) fn solve_all(
    op: &LowRank,
    stage: Stage<'_>,
    params: &AdmmParams,
    eta: f64,
    block: usize,
) -> Vec<BlockSolution> {
    block_ranges(op.p(), block)
        .into_par_iter()
        .map(|(start, k)| {
            let stage = match stage {
                Stage::Adaptive { lambdas } => Stage::Adaptive { lambdas: &lambdas[start..start + k] },
                s => s,
            };
            solve_block(op, stage, params, eta, start, k)
        })
        .collect()
}
