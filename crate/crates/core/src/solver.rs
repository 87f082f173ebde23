//! Active-set solver for the box-constrained ground-state problem
//!
//! ```text
//!     minimize    ⟨x|H|x⟩
//!     subject to  ‖x‖ = 1,   0 ≤ x_i ≤ b_i
//! ```
//!
//! with `H` symmetric tridiagonal with nonpositive off-diagonal entries.
//! The minimizer pins a set of components to their bounds (the coincidence
//! set) and solves an eigenvalue-like subproblem on the free complement: on
//! the free set `(Hx)_i = λ x_i`, which with pinned neighbors entering as
//! boundary sources becomes the shifted linear system
//! `(H_FF - λ) x_F = -H_FP b_P` with `‖x_F‖²` prescribed — a trust-region
//! style secular equation in `λ`, solved here by safeguarded Newton.
//!
//! The pinned set starts empty (unconstrained ground state) and grows by the
//! currently violated components; pinned components whose multiplier turns
//! negative are released one at a time.

use crate::error::{Error, Result};
use crate::tridiag::SymTridiag;

#[derive(Debug, Clone)]
pub struct ConstrainedSolution {
    /// The minimizer, unit norm, entrywise within bounds.
    pub x: Vec<f64>,
    /// ⟨x|H|x⟩ at the minimizer.
    pub energy: f64,
    /// Multiplier of the norm constraint: on the free set (Hx)_i = λ x_i.
    pub lambda: f64,
    /// Indices pinned at a strictly positive bound, sorted.
    pub pinned: Vec<usize>,
    pub iterations: usize,
}

const FEAS_TOL: f64 = 1e-12;
const RELEASE_TOL: f64 = 1e-10;

/// Unconstrained ground state restricted to `support` (indices with b > 0).
/// Zero-bound indices never carry amplitude; couplings across them vanish
/// with the index, so the problem splits into contiguous segments.
fn ground_on_segments(h: &SymTridiag, segments: &[(usize, usize)]) -> (f64, Vec<f64>) {
    let n = h.n();
    let mut best: Option<(f64, (usize, usize), Vec<f64>)> = None;
    for &(lo, hi) in segments {
        let sub = SymTridiag::new(h.diag[lo..=hi].to_vec(), h.off[lo..hi].to_vec());
        let (lambda, v) = sub.ground_state();
        if best.as_ref().map_or(true, |(l, _, _)| lambda < *l) {
            best = Some((lambda, (lo, hi), v));
        }
    }
    let (lambda, (lo, _), v) = best.expect("no free segment");
    let mut x = vec![0.0; n];
    x[lo..lo + v.len()].copy_from_slice(&v);
    (lambda, x)
}

fn contiguous_segments(mask: &[bool]) -> Vec<(usize, usize)> {
    let mut segs = Vec::new();
    let mut start = None;
    for (i, &free) in mask.iter().enumerate() {
        match (free, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                segs.push((s, i - 1));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        segs.push((s, mask.len() - 1));
    }
    segs
}

struct ReducedProblem<'a> {
    h: &'a SymTridiag,
    segments: Vec<(usize, usize)>,
    /// boundary source c = -H_FP b_P ≥ 0, stored on full indices
    source: Vec<f64>,
    lambda_min: f64,
}

impl<'a> ReducedProblem<'a> {
    fn new(h: &'a SymTridiag, free: &[bool], pinned_value: &[f64]) -> Self {
        let n = h.n();
        let segments = contiguous_segments(free);
        let mut source = vec![0.0; n];
        for i in 0..n {
            if !free[i] {
                continue;
            }
            if i > 0 && !free[i - 1] {
                source[i] -= h.off[i - 1] * pinned_value[i - 1];
            }
            if i + 1 < n && !free[i + 1] {
                source[i] -= h.off[i] * pinned_value[i + 1];
            }
        }
        let lambda_min = segments
            .iter()
            .map(|&(lo, hi)| {
                SymTridiag::new(h.diag[lo..=hi].to_vec(), h.off[lo..hi].to_vec()).min_eigenvalue()
            })
            .fold(f64::INFINITY, f64::min);
        ReducedProblem {
            h,
            segments,
            source,
            lambda_min,
        }
    }

    /// x(λ) over the free set and its squared norm.
    fn solve_at(&self, lambda: f64) -> (Vec<f64>, f64) {
        let n = self.h.n();
        let mut x = vec![0.0; n];
        let mut norm2 = 0.0;
        for &(lo, hi) in &self.segments {
            let sub = SymTridiag::new(
                self.h.diag[lo..=hi].to_vec(),
                self.h.off[lo..hi].to_vec(),
            );
            let rhs = self.source[lo..=hi].to_vec();
            let sol = sub.solve_shifted(lambda, &rhs);
            for (k, v) in sol.into_iter().enumerate() {
                x[lo + k] = v;
                norm2 += v * v;
            }
        }
        (x, norm2)
    }

    /// Find λ < λ_min with ‖x(λ)‖² = target; fall back to the degenerate case
    /// (source orthogonal to the ground mode) by adding ground-vector weight.
    fn secular_solve(&self, target: f64, scale: f64) -> (f64, Vec<f64>) {
        let delta0 = (1e-13 * scale).max(1e-300);
        let lambda_hi = self.lambda_min - delta0;
        let (x_hi, g_hi) = self.solve_at(lambda_hi);
        if g_hi < target {
            // degenerate: complete with the ground eigenvector of the flattest segment
            let (_, v) = ground_on_segments(self.h, &self.segments);
            let xv: f64 = x_hi.iter().zip(&v).map(|(a, b)| a * b).sum();
            let tau = -xv + (xv * xv + target - g_hi).sqrt();
            let x: Vec<f64> = x_hi
                .iter()
                .zip(&v)
                .map(|(a, b)| (a + tau * b).max(0.0))
                .collect();
            return (lambda_hi, x);
        }
        // bracket below: march down until g <= target
        let mut step = scale.max(1e-6);
        let mut lambda_lo = lambda_hi - step;
        let mut g_lo = self.solve_at(lambda_lo).1;
        let mut guard = 0;
        while g_lo > target {
            step *= 4.0;
            lambda_lo -= step;
            g_lo = self.solve_at(lambda_lo).1;
            guard += 1;
            if guard > 200 {
                break;
            }
        }
        // safeguarded Newton on h(λ) = 1/sqrt(g) - 1/sqrt(target)
        let mut lo = lambda_lo;
        let mut hi = lambda_hi;
        let mut lambda = 0.5 * (lo + hi);
        for _ in 0..200 {
            let (x, g) = self.solve_at(lambda);
            if g > target {
                hi = lambda;
            } else {
                lo = lambda;
            }
            let rel = (g.sqrt() - target.sqrt()).abs() / target.sqrt().max(1e-300);
            if rel < 1e-14 || hi - lo < 1e-16 * scale {
                break;
            }
            // Newton step: g'(λ) = 2 xᵀ(H-λ)⁻¹x, computed via one more solve
            let mut gp = 0.0;
            for &(seg_lo, seg_hi) in &self.segments {
                let sub = SymTridiag::new(
                    self.h.diag[seg_lo..=seg_hi].to_vec(),
                    self.h.off[seg_lo..seg_hi].to_vec(),
                );
                let xs = x[seg_lo..=seg_hi].to_vec();
                let ys = sub.solve_shifted(lambda, &xs);
                gp += 2.0 * xs.iter().zip(&ys).map(|(a, b)| a * b).sum::<f64>();
            }
            let hval = 1.0 / g.sqrt() - 1.0 / target.sqrt();
            let hprime = -gp / (2.0 * g * g.sqrt());
            let next = if hprime != 0.0 {
                lambda - hval / hprime
            } else {
                0.5 * (lo + hi)
            };
            lambda = if next > lo && next < hi {
                next
            } else {
                0.5 * (lo + hi)
            };
        }
        let (x_final, _) = self.solve_at(lambda);
        (lambda, x_final)
    }
}

/// Solve `min ⟨x|H|x⟩` over the unit sphere intersected with `0 ≤ x ≤ b`.
///
/// Bounds may be zero (the component is excluded) or infinite. Requires
/// `Σ b_i² ≥ 1` for feasibility and nonpositive off-diagonals in `H`.
pub fn constrained_ground(h: &SymTridiag, bounds: &[f64]) -> Result<ConstrainedSolution> {
    let n = h.n();
    assert_eq!(bounds.len(), n);
    debug_assert!(h.off.iter().all(|&e| e <= 0.0));
    let bound_norm2: f64 = bounds
        .iter()
        .filter(|b| b.is_finite())
        .map(|b| b * b)
        .sum::<f64>()
        + if bounds.iter().any(|b| b.is_infinite()) {
            f64::INFINITY
        } else {
            0.0
        };
    if bound_norm2 < 1.0 - 1e-9 {
        return Err(Error::Domain(format!(
            "infeasible bounds: Σ b² = {bound_norm2} < 1"
        )));
    }
    let scale = {
        let (lo, hi) = h.gershgorin();
        lo.abs().max(hi.abs()).max(1.0)
    };

    let support: Vec<bool> = bounds.iter().map(|&b| b > 0.0).collect();
    if !support.iter().any(|&s| s) {
        return Err(Error::Domain("all bounds are zero".into()));
    }

    // fully determined case: bounds form (numerically) a unit vector
    if bound_norm2.is_finite() && (bound_norm2 - 1.0).abs() <= 1e-9 {
        let x: Vec<f64> = bounds.iter().map(|&b| if b > 0.0 { b } else { 0.0 }).collect();
        let energy = h.quadratic_form(&x);
        let pinned: Vec<usize> = (0..n).filter(|&i| bounds[i] > 0.0).collect();
        return Ok(ConstrainedSolution {
            x,
            energy,
            lambda: energy,
            pinned,
            iterations: 0,
        });
    }

    let mut pinned = vec![false; n]; // pinned at a positive bound
    let max_iter = 10 * (n + 1);
    let mut iterations = 0;

    loop {
        iterations += 1;
        if iterations > max_iter {
            return Err(Error::Solver(format!(
                "active-set iteration limit {max_iter} exceeded (dim {n}, pinned {})",
                pinned.iter().filter(|&&p| p).count()
            )));
        }

        let free: Vec<bool> = (0..n).map(|i| support[i] && !pinned[i]).collect();
        if !free.iter().any(|&f| f) {
            return Err(Error::Solver("active set swallowed every index".into()));
        }
        let pinned_value: Vec<f64> = (0..n)
            .map(|i| if pinned[i] { bounds[i] } else { 0.0 })
            .collect();
        let pinned_norm2: f64 = pinned_value.iter().map(|v| v * v).sum();
        let target = 1.0 - pinned_norm2;

        let (lambda, x) = if target <= 1e-14 {
            // pinned set carries the whole norm; shrink it before solving
            let worst = (0..n)
                .filter(|&i| pinned[i])
                .max_by(|&a, &b| bounds[a].partial_cmp(&bounds[b]).unwrap())
                .expect("pinned set nonempty");
            pinned[worst] = false;
            continue;
        } else if pinned_norm2 == 0.0 {
            let segments = contiguous_segments(&free);
            ground_on_segments(h, &segments)
        } else {
            let reduced = ReducedProblem::new(h, &free, &pinned_value);
            reduced.secular_solve(target, scale)
        };

        // assemble candidate
        let mut cand = pinned_value.clone();
        for i in 0..n {
            if free[i] {
                cand[i] = x[i].max(0.0);
            }
        }

        // violations among free indices
        let mut violators: Vec<(usize, f64)> = (0..n)
            .filter(|&i| free[i] && bounds[i].is_finite())
            .filter_map(|i| {
                let excess = cand[i] - bounds[i];
                if excess > FEAS_TOL * bounds[i].max(1.0) {
                    Some((i, excess / bounds[i].max(1e-300)))
                } else {
                    None
                }
            })
            .collect();
        if !violators.is_empty() {
            // pin by decreasing relative violation, keeping the pinned mass < 1
            violators.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
            let mut mass = pinned_norm2;
            let mut added = false;
            for (i, _) in violators {
                if mass + bounds[i] * bounds[i] < 1.0 - 1e-12 {
                    pinned[i] = true;
                    mass += bounds[i] * bounds[i];
                    added = true;
                }
            }
            if added {
                continue;
            }
            // cannot pin more without exhausting the norm: pin just the worst
            let worst = (0..n)
                .filter(|&i| free[i] && bounds[i].is_finite() && cand[i] > bounds[i])
                .max_by(|&a, &b| {
                    (cand[a] - bounds[a])
                        .partial_cmp(&(cand[b] - bounds[b]))
                        .unwrap()
                });
            if let Some(w) = worst {
                pinned[w] = true;
                continue;
            }
        }

        // KKT release test: pinned multiplier μ_i = 2(λ x_i - (Hx)_i) ≥ 0
        let hx = h.matvec(&cand);
        let release = (0..n)
            .filter(|&i| pinned[i])
            .map(|i| (i, lambda * cand[i] - hx[i]))
            .filter(|(_, mu)| *mu < -RELEASE_TOL * scale)
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        if let Some((i, _)) = release {
            pinned[i] = false;
            continue;
        }

        let energy = h.quadratic_form(&cand);
        let pinned_idx: Vec<usize> = (0..n).filter(|&i| pinned[i]).collect();
        return Ok(ConstrainedSolution {
            x: cand,
            energy,
            lambda,
            pinned: pinned_idx,
            iterations,
        });
    }
}

/// Largest KKT residual of a solution: on free indices `|(Hx)_i - λ x_i|`,
/// on pinned indices violation of `μ ≥ 0`.
pub fn kkt_residual(h: &SymTridiag, sol: &ConstrainedSolution, bounds: &[f64]) -> f64 {
    let hx = h.matvec(&sol.x);
    let pinned: Vec<bool> = {
        let mut m = vec![false; h.n()];
        for &i in &sol.pinned {
            m[i] = true;
        }
        m
    };
    let mut res: f64 = 0.0;
    for i in 0..h.n() {
        if bounds[i] == 0.0 {
            continue;
        }
        if pinned[i] {
            let mu = sol.lambda * sol.x[i] - hx[i];
            res = res.max((-mu).max(0.0));
        } else {
            res = res.max((hx[i] - sol.lambda * sol.x[i]).abs());
        }
    }
    res
}
