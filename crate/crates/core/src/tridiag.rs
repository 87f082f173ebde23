//! Symmetric tridiagonal eigenvalue machinery: Sturm-sequence bisection for
//! the smallest eigenvalue, inverse iteration for its eigenvector, and a
//! pivoted solver for shifted systems `(T - λI) x = b`.

/// A symmetric tridiagonal matrix, `diag` of length n and `off` of length n-1.
#[derive(Debug, Clone)]
pub struct SymTridiag {
    pub diag: Vec<f64>,
    pub off: Vec<f64>,
}

const PIVOT_GUARD: f64 = 1e-300;

impl SymTridiag {
    pub fn new(diag: Vec<f64>, off: Vec<f64>) -> Self {
        assert_eq!(off.len() + 1, diag.len().max(1));
        SymTridiag { diag, off }
    }

    pub fn n(&self) -> usize {
        self.diag.len()
    }

    /// Number of eigenvalues strictly below `lambda` (Sturm sequence via LDLᵀ).
    pub fn sturm_count(&self, lambda: f64) -> usize {
        let n = self.n();
        if n == 0 {
            return 0;
        }
        let mut count = 0usize;
        let mut q = self.diag[0] - lambda;
        if q < 0.0 {
            count += 1;
        }
        for i in 1..n {
            let q_safe = if q.abs() < PIVOT_GUARD {
                if q >= 0.0 {
                    PIVOT_GUARD
                } else {
                    -PIVOT_GUARD
                }
            } else {
                q
            };
            q = (self.diag[i] - lambda) - self.off[i - 1] * self.off[i - 1] / q_safe;
            if q < 0.0 {
                count += 1;
            }
        }
        count
    }

    /// Gershgorin interval containing the whole spectrum.
    pub fn gershgorin(&self) -> (f64, f64) {
        let n = self.n();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..n {
            let left = if i > 0 { self.off[i - 1].abs() } else { 0.0 };
            let right = if i + 1 < n { self.off[i].abs() } else { 0.0 };
            lo = lo.min(self.diag[i] - left - right);
            hi = hi.max(self.diag[i] + left + right);
        }
        (lo, hi)
    }

    /// Smallest eigenvalue by bisection, resolved to near machine precision.
    pub fn min_eigenvalue(&self) -> f64 {
        let n = self.n();
        assert!(n > 0);
        if n == 1 {
            return self.diag[0];
        }
        let (mut lo, mut hi) = self.gershgorin();
        let scale = lo.abs().max(hi.abs()).max(1.0);
        lo -= 1e-12 * scale;
        hi += 1e-12 * scale;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if hi - lo < 4.0 * f64::EPSILON * mid.abs().max(1e-30) {
                break;
            }
            if self.sturm_count(mid) == 0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Solve `(T - shift·I) x = b` by LU with partial pivoting (row swaps of
    /// adjacent rows only; the factor gains a second superdiagonal).
    pub fn solve_shifted(&self, shift: f64, b: &[f64]) -> Vec<f64> {
        let n = self.n();
        assert_eq!(b.len(), n);
        if n == 1 {
            let p = self.diag[0] - shift;
            let p = if p.abs() < PIVOT_GUARD {
                PIVOT_GUARD.copysign(p)
            } else {
                p
            };
            return vec![b[0] / p];
        }
        // working bands: d (main), e (first super), f (second super)
        let mut d: Vec<f64> = self.diag.iter().map(|v| v - shift).collect();
        let mut e: Vec<f64> = self.off.clone();
        let mut f = vec![0.0f64; n];
        let mut rhs = b.to_vec();
        for i in 0..n - 1 {
            let sub = self.off[i]; // row i+1, col i
            if sub.abs() > d[i].abs() {
                // swap rows i and i+1
                let (di, ei, fi) = (d[i], e[i], f[i]);
                d[i] = sub;
                e[i] = d[i + 1];
                f[i] = if i + 1 < n - 1 { e[i + 1] } else { 0.0 };
                d[i + 1] = ei;
                if i + 1 < n - 1 {
                    e[i + 1] = fi;
                }
                rhs.swap(i, i + 1);
                let mult = di / d[i];
                d[i + 1] -= mult * e[i];
                if i + 1 < n - 1 {
                    e[i + 1] -= mult * f[i];
                }
                rhs[i + 1] -= mult * rhs[i];
            } else {
                let pivot = if d[i].abs() < PIVOT_GUARD {
                    PIVOT_GUARD.copysign(d[i])
                } else {
                    d[i]
                };
                d[i] = pivot;
                let mult = sub / pivot;
                d[i + 1] -= mult * e[i];
                rhs[i + 1] -= mult * rhs[i];
            }
        }
        // back substitution
        let mut x = vec![0.0f64; n];
        for i in (0..n).rev() {
            let mut acc = rhs[i];
            if i + 1 < n {
                acc -= e[i] * x[i + 1];
            }
            if i + 2 < n {
                acc -= f[i] * x[i + 2];
            }
            let pivot = if d[i].abs() < PIVOT_GUARD {
                PIVOT_GUARD.copysign(d[i])
            } else {
                d[i]
            };
            x[i] = acc / pivot;
        }
        x
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n();
        let mut y = vec![0.0; n];
        for i in 0..n {
            y[i] = self.diag[i] * x[i];
            if i > 0 {
                y[i] += self.off[i - 1] * x[i - 1];
            }
            if i + 1 < n {
                y[i] += self.off[i] * x[i + 1];
            }
        }
        y
    }

    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        let n = self.n();
        let mut acc = 0.0;
        for i in 0..n {
            acc += self.diag[i] * x[i] * x[i];
            if i + 1 < n {
                acc += 2.0 * self.off[i] * x[i] * x[i + 1];
            }
        }
        acc
    }

    /// Ground eigenpair `(λ_min, v)` with `v` unit norm and sign-fixed so the
    /// dominant component is nonnegative.
    pub fn ground_state(&self) -> (f64, Vec<f64>) {
        let n = self.n();
        assert!(n > 0);
        if n == 1 {
            return (self.diag[0], vec![1.0]);
        }
        let lambda = self.min_eigenvalue();
        let scale = {
            let (lo, hi) = self.gershgorin();
            lo.abs().max(hi.abs()).max(1.0)
        };
        // inverse iteration from a uniform start
        let mut v = vec![1.0 / (n as f64).sqrt(); n];
        let mut best = v.clone();
        let mut best_res = f64::INFINITY;
        for _ in 0..8 {
            let mut w = self.solve_shifted(lambda, &v);
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            if !norm.is_finite() || norm == 0.0 {
                break;
            }
            w.iter_mut().for_each(|x| *x /= norm);
            let res = self.residual(lambda, &w);
            if res < best_res {
                best_res = res;
                best = w.clone();
            }
            v = w;
            if best_res < 1e-13 * scale {
                break;
            }
        }
        let mut v = best;
        // fix overall sign by the largest-magnitude entry
        let idx = v
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        if v[idx] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        (lambda, v)
    }

    fn residual(&self, lambda: f64, v: &[f64]) -> f64 {
        self.matvec(v)
            .iter()
            .zip(v)
            .map(|(hv, vi)| (hv - lambda * vi).abs())
            .fold(0.0, f64::max)
    }
}
