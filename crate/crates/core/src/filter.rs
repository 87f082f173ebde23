//! Per-block optimization: the tridiagonal matrix `H^j`, deterministic
//! precision, unconstrained ground states, constrained solutions at fixed
//! per-block success probability, critical probabilities, and the
//! filter/complementary-filter profiles.

use crate::error::{Error, Result};
use crate::solver::{self, ConstrainedSolution};
use crate::spin::{log_dephasing_reduced, NoiseModel, SpinBlock};
use crate::tridiag::SymTridiag;

/// The per-block optimization data: couplings `a^j_m` of the tridiagonal
/// `H^j = 2·1 - offdiag(a)` and the envelope `(ρ^j_{m,m})^{1/2}`.
///
/// The couplings depend only on the noise strength, not on the probe
/// amplitudes; the probe enters through the envelope.
#[derive(Debug, Clone)]
pub struct BlockProblem {
    pub two_j: u32,
    /// a^j_m for m = -j .. j-1 (ascending), each in [0, 1].
    pub a: Vec<f64>,
    /// (ρ^j_{m,m})^{1/2} for m = -j .. j (ascending).
    pub envelope: Vec<f64>,
}

/// Solution of the per-block problem at some success probability.
#[derive(Debug, Clone)]
pub struct BlockSolution {
    /// Filtered vector ξ^j, unit norm, entrywise in [0, envelope/√s].
    pub xi: Vec<f64>,
    /// σ²_j = ⟨ξ|H^j|ξ⟩.
    pub sigma2: f64,
    /// The success probability the solve was constrained to (None for the
    /// unconstrained ground state).
    pub s: Option<f64>,
    /// Norm-constraint multiplier λ: on free indices (H ξ)_m = λ ξ_m. This is
    /// also the marginal d(s σ²_j(s))/ds, which drives the global allocation.
    pub lambda: f64,
    /// Indices where the bound is active (the coincidence set).
    pub coincidence: Vec<usize>,
    /// Boundary of the coincidence set in x = m/j units, when it forms an
    /// outer band.
    pub x_c: Option<f64>,
    pub iterations: usize,
}

/// A per-block filter profile, entries in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct FilterProfile {
    pub f: Vec<f64>,
}

impl FilterProfile {
    pub fn ones(dim: usize) -> Self {
        FilterProfile { f: vec![1.0; dim] }
    }

    pub fn zeros(dim: usize) -> Self {
        FilterProfile { f: vec![0.0; dim] }
    }

    /// The complementary profile, (f̄_m)² = 1 - (f_m)².
    pub fn complement(&self) -> FilterProfile {
        FilterProfile {
            f: self.f.iter().map(|f| (1.0 - f * f).max(0.0).sqrt()).collect(),
        }
    }
}

impl BlockProblem {
    /// Build `H^j` data from a spin block. The couplings come from the
    /// Clebsch–Gordan dephasing elements,
    /// `a^j_m = D^j_{m,m+1} / sqrt(D^j_{m,m} D^j_{m+1,m+1})`,
    /// which are probe-independent; at r = 1 they equal 1 identically.
    pub fn from_block(block: &SpinBlock, noise: &NoiseModel) -> Result<Self> {
        let r = noise.r();
        let two_j = block.two_j;
        let dim = block.dim();
        let mut a = Vec::with_capacity(dim - 1);
        for i in 0..dim.saturating_sub(1) {
            let two_m = -(two_j as i64) + 2 * i as i64;
            let ln_dd = log_dephasing_reduced(two_j, two_m, two_m, r);
            let ln_d1 = log_dephasing_reduced(two_j, two_m + 2, two_m + 2, r);
            let ln_o = log_dephasing_reduced(two_j, two_m + 2, two_m, r);
            if r > 0.0 && r < 1.0 && (ln_dd == f64::NEG_INFINITY || ln_d1 == f64::NEG_INFINITY) {
                return Err(Error::Inconsistent(format!(
                    "vanishing diagonal dephasing element in block j={}",
                    block.j()
                )));
            }
            let v = (ln_o - 0.5 * (ln_dd + ln_d1)).exp();
            a.push(v.clamp(0.0, 1.0));
        }
        Ok(BlockProblem {
            two_j,
            a,
            envelope: block.envelope(),
        })
    }

    pub fn dim(&self) -> usize {
        self.envelope.len()
    }

    pub fn j(&self) -> f64 {
        self.two_j as f64 / 2.0
    }

    /// `H^j` as a symmetric tridiagonal matrix.
    pub fn hamiltonian(&self) -> SymTridiag {
        SymTridiag::new(vec![2.0; self.dim()], self.a.iter().map(|v| -v).collect())
    }

    /// σ²_j at s_j = 1: the expectation ⟨ξ|H^j|ξ⟩ in the unfiltered state
    /// ξ_m = (ρ^j_{m,m})^{1/2}.
    pub fn deterministic_precision(&self) -> f64 {
        self.hamiltonian().quadratic_form(&self.envelope)
    }

    /// Unconstrained minimal eigenpair of `H^j` (restricted to the support of
    /// the envelope; components with zero probe amplitude carry no weight).
    pub fn ground_state(&self) -> BlockSolution {
        let h = self.hamiltonian();
        let loose: Vec<f64> = self
            .envelope
            .iter()
            .map(|&e| if e > 0.0 { f64::INFINITY } else { 0.0 })
            .collect();
        let sol = solver::constrained_ground(&h, &loose).expect("support is nonempty");
        BlockSolution {
            xi: sol.x,
            sigma2: sol.energy,
            s: None,
            lambda: sol.lambda,
            coincidence: Vec::new(),
            x_c: None,
            iterations: sol.iterations,
        }
    }

    /// Critical success probability s*_j = min_m ρ^j_{m,m} / (ξ_m)² over the
    /// unconstrained ground state: below it the bound never binds and
    /// σ²_j(s) plateaus at the ground energy.
    pub fn critical_probability(&self) -> f64 {
        let ground = self.ground_state();
        let mut s_star = f64::INFINITY;
        for (e, xi) in self.envelope.iter().zip(&ground.xi) {
            if *xi > 0.0 && *e > 0.0 {
                s_star = s_star.min((e / xi) * (e / xi));
            }
        }
        s_star.min(1.0)
    }

    /// Minimize ⟨ξ|H^j|ξ⟩ subject to ‖ξ‖ = 1 and 0 ≤ ξ_m ≤ (ρ^j_{m,m}/s)^{1/2}.
    pub fn constrained_minimize(&self, s: f64) -> Result<BlockSolution> {
        if !(s > 0.0 && s <= 1.0) {
            return Err(Error::Domain(format!(
                "per-block success probability s={s} outside (0, 1]"
            )));
        }
        let h = self.hamiltonian();
        if s >= 1.0 {
            let xi = self.envelope.clone();
            let energy = h.quadratic_form(&xi);
            let coincidence: Vec<usize> =
                (0..self.dim()).filter(|&i| self.envelope[i] > 0.0).collect();
            return Ok(BlockSolution {
                xi,
                sigma2: energy,
                s: Some(s),
                lambda: energy,
                x_c: self.outer_band_boundary(&coincidence),
                coincidence,
                iterations: 0,
            });
        }
        let rs = s.sqrt();
        let bounds: Vec<f64> = self.envelope.iter().map(|e| e / rs).collect();
        let sol: ConstrainedSolution = solver::constrained_ground(&h, &bounds)?;
        let res = solver::kkt_residual(&h, &sol, &bounds);
        if res > 1e-8 {
            return Err(Error::Solver(format!(
                "KKT residual {res:.3e} above tolerance in block j={} at s={s}",
                self.j()
            )));
        }
        Ok(BlockSolution {
            x_c: self.outer_band_boundary(&sol.pinned),
            xi: sol.x,
            sigma2: sol.energy,
            s: Some(s),
            lambda: sol.lambda,
            coincidence: sol.pinned,
            iterations: sol.iterations,
        })
    }

    /// x_c when the coincidence set is band-shaped: the smallest |m|/j among
    /// pinned indices, provided they form at most one contiguous run per
    /// side with the center free (fully pinned reports 0).
    fn outer_band_boundary(&self, pinned: &[usize]) -> Option<f64> {
        if self.two_j == 0 || pinned.is_empty() {
            return None;
        }
        if pinned.len() == self.dim() {
            return Some(0.0);
        }
        let mut runs: Vec<(usize, usize)> = Vec::new();
        for &i in pinned {
            match runs.last_mut() {
                Some((_, hi)) if *hi + 1 == i => *hi = i,
                _ => runs.push((i, i)),
            }
        }
        if runs.len() > 2 {
            return None;
        }
        let j = self.two_j as f64 / 2.0;
        let x_of = |i: usize| ((-(self.two_j as i64) + 2 * i as i64) as f64 / 2.0 / j).abs();
        let center = (0..self.dim())
            .min_by(|&a, &b| x_of(a).partial_cmp(&x_of(b)).unwrap())
            .unwrap();
        let mut x_c = f64::INFINITY;
        for (lo, hi) in runs {
            if (lo..=hi).contains(&center) {
                return None;
            }
            x_c = x_c.min(x_of(lo).min(x_of(hi)));
        }
        Some(x_c)
    }

    /// The filter achieving a solution: f_m = ξ_m √(s/ρ^j_{m,m}), clipped
    /// into [0, 1] (clips beyond 1e-6 are rejected as inconsistent).
    pub fn filter_from_solution(&self, sol: &BlockSolution) -> Result<FilterProfile> {
        let s = sol
            .s
            .ok_or_else(|| Error::Inconsistent("solution has no success probability".into()))?;
        let rs = s.sqrt();
        let mut f = Vec::with_capacity(self.dim());
        for (xi, e) in sol.xi.iter().zip(&self.envelope) {
            if *e == 0.0 {
                if *xi > 1e-12 {
                    return Err(Error::Inconsistent(
                        "filtered amplitude on a zero-probability component".into(),
                    ));
                }
                f.push(1.0);
                continue;
            }
            let raw = xi * rs / e;
            if raw > 1.0 + 1e-6 {
                return Err(Error::Inconsistent(format!(
                    "filter weight {raw} exceeds 1 beyond tolerance in block j={}",
                    self.j()
                )));
            }
            f.push(raw.clamp(0.0, 1.0));
        }
        Ok(FilterProfile { f })
    }

    /// Per-block success probability of a filter: s = Σ_m f_m² ρ^j_{m,m}.
    pub fn filter_success(&self, profile: &FilterProfile) -> f64 {
        profile
            .f
            .iter()
            .zip(&self.envelope)
            .map(|(f, e)| f * f * e * e)
            .sum()
    }

    /// σ²_j of a fixed filter under the canonical measurement (no
    /// re-optimization): ⟨ξ|H^j|ξ⟩ for ξ ∝ f ∘ envelope, normalized.
    /// Returns None when the filter passes no weight.
    pub fn filter_precision(&self, profile: &FilterProfile) -> Option<f64> {
        let s = self.filter_success(profile);
        if s <= 0.0 {
            return None;
        }
        let rs = s.sqrt();
        let xi: Vec<f64> = profile
            .f
            .iter()
            .zip(&self.envelope)
            .map(|(f, e)| f * e / rs)
            .collect();
        Some(self.hamiltonian().quadratic_form(&xi))
    }
}

/// Build the per-block problems for a whole decomposition (descending j).
pub fn block_problems(decomp: &crate::spin::BlockDecomposition) -> Result<Vec<BlockProblem>> {
    decomp
        .blocks
        .iter()
        .map(|b| BlockProblem::from_block(b, &decomp.noise))
        .collect()
}

/// Deterministic precision evaluated from the stored band of ρ^j:
/// σ²_j = 2(1 - Σ_m ρ^j_{m,m+1}). Agrees with
/// [`BlockProblem::deterministic_precision`] to machine precision.
pub fn deterministic_precision_band(block: &SpinBlock) -> f64 {
    2.0 * (1.0 - block.offdiag.iter().sum::<f64>())
}
