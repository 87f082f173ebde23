//! The global fidelity-vs-success trade-off: allocation of success
//! probability across spin blocks (including inter-block post-selection),
//! critical success probabilities, plateau detection, and scavenging of the
//! failure branch.
//!
//! The allocation problem
//!
//! ```text
//!     σ²(S) = min  (1/S) Σ_j p_j s_j σ²_j(s_j),   Σ_j p_j s_j = S
//! ```
//!
//! is separable and convex: `φ_j(s) = s σ²_j(s)` is linear on `[0, s*_j]`
//! (slope = the block ground energy) and convex increasing above, with
//! marginal `φ'_j(s)` equal to the KKT multiplier λ of the per-block solve.
//! A one-dimensional search over the shared marginal price therefore
//! recovers the exact optimum; blocks priced out of the market get s_j = 0
//! (block post-selection), and blocks whose ground energy ties with the
//! price absorb the residual budget anywhere on their plateau.

use crate::error::{Error, Result};
use crate::filter::{BlockProblem, BlockSolution, FilterProfile};
use crate::spin::BlockDecomposition;
use rayon::prelude::*;
use serde::Serialize;
use std::collections::BTreeMap;
use std::sync::Mutex;

/// One point of the trade-off curve.
#[derive(Debug, Clone, Serialize)]
pub struct TradeoffPoint {
    /// Success probability S.
    pub s: f64,
    /// Abstention probability 1 - S.
    pub s_bar: f64,
    /// Worst-case fidelity F(S).
    pub fidelity: f64,
    /// Scaled infidelity 4(1 - F).
    pub sigma2: f64,
    /// Per-block success probabilities (two_j, s_j), descending j, for
    /// blocks with nonzero probability.
    pub allocation: Vec<(u32, f64)>,
}

/// Which critical success probability to report.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CriticalMode {
    /// Σ_j p_j s*_j: every block unconstrained.
    PerBlock,
    /// p_J s*_J: post-selection of the maximal block (the true plateau onset).
    MaxBlock,
}

/// Scavenged-estimate precision for one trade-off point.
#[derive(Debug, Clone, Serialize)]
pub struct ScavengeReport {
    pub s: f64,
    pub s_bar: f64,
    /// σ²(S) of the favorable branch.
    pub sigma2_success: f64,
    /// σ̄²(S) of the unfavorable branch (None at S = 1, where it is empty).
    pub sigma2_fail: Option<f64>,
    /// σ²_all(S) when every outcome produces an estimate.
    pub sigma2_all: f64,
    /// The deterministic protocol for the same probe.
    pub sigma2_det: f64,
    pub fidelity_det: f64,
    pub fidelity_fail: Option<f64>,
    /// √2·S - (F_det - F̄): nonnegative when the gentle-measurement bound holds.
    pub gentle_margin: f64,
}

/// Outcome of [`gentle_bound_check`].
#[derive(Debug, Clone, Copy)]
pub struct GentleBound {
    pub holds: bool,
    pub margin: f64,
}

/// F_det - F_fail ≤ √2·S, from the gentle-measurement argument.
pub fn gentle_bound_check(fidelity_det: f64, fidelity_fail: f64, s: f64) -> GentleBound {
    let margin = std::f64::consts::SQRT_2 * s - (fidelity_det - fidelity_fail);
    GentleBound {
        holds: margin >= -1e-9,
        margin,
    }
}

/// Per-block curve data with exact solves cached by success probability.
struct BlockCurve {
    problem: BlockProblem,
    p: f64,
    s_star: f64,
    ground_energy: f64,
    /// λ just below s = 1 (the largest marginal this block can quote).
    lambda_top: f64,
    /// s -> (σ², λ), keyed by the bit pattern of s.
    memo: Mutex<BTreeMap<u64, (f64, f64)>>,
}

// top sampling point for the marginal λ_j(s): close enough to 1 that the
// remaining allocation error is second-order, far enough that the
// nearly-fully-pinned solve stays well conditioned
const S_TOP: f64 = 1.0 - 1e-6;

impl BlockCurve {
    fn new(problem: BlockProblem, p: f64) -> Result<Self> {
        let ground = problem.ground_state();
        let s_star = problem.critical_probability();
        let mut curve = BlockCurve {
            problem,
            p,
            s_star,
            ground_energy: ground.sigma2,
            lambda_top: ground.sigma2,
            memo: Mutex::new(BTreeMap::new()),
        };
        if curve.s_star < S_TOP {
            curve.lambda_top = curve.eval(S_TOP)?.1;
        }
        Ok(curve)
    }

    /// (σ²_j(s), λ_j(s)) with memoization.
    fn eval(&self, s: f64) -> Result<(f64, f64)> {
        let key = s.to_bits();
        if let Some(hit) = self.memo.lock().unwrap().get(&key) {
            return Ok(*hit);
        }
        let sol = self.problem.constrained_minimize(s)?;
        // on the plateau the relevant marginal is the ground energy itself
        let lambda = if sol.coincidence.is_empty() {
            self.ground_energy
        } else {
            sol.lambda
        };
        let entry = (sol.sigma2, lambda);
        self.memo.lock().unwrap().insert(key, entry);
        Ok(entry)
    }

    /// Invert the monotone marginal: find s with λ_j(s) = λ, by bisection on
    /// exact solves. Prices at or below the ground energy quote the lower end
    /// of the plateau, s = 0; the caller fills plateau ties from the residual
    /// budget. Every solve lands in the cache, and the bisection starts from
    /// the tightest cached bracket, so repeated inversions across a curve
    /// cost only a handful of new solves each.
    fn s_for_lambda(&self, lambda: f64, tie_tol: f64) -> Result<f64> {
        if lambda <= self.ground_energy + tie_tol {
            return Ok(0.0);
        }
        if lambda >= self.lambda_top {
            return Ok(1.0);
        }
        let mut lo = self.s_star.min(S_TOP);
        let mut hi = S_TOP;
        {
            // positive f64 bit patterns sort numerically, so the map is
            // ordered by s
            let memo = self.memo.lock().unwrap();
            for (bits, (_, lam)) in memo.iter() {
                let s = f64::from_bits(*bits);
                if s <= lo || s >= hi {
                    continue;
                }
                if *lam < lambda {
                    lo = s;
                } else {
                    hi = s;
                }
            }
        }
        for _ in 0..60 {
            if hi - lo < 1e-13 {
                break;
            }
            let mid = 0.5 * (lo + hi);
            let (_, lam) = self.eval(mid)?;
            if lam < lambda {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

/// Global trade-off solver for one decomposition.
pub struct TradeoffSolver {
    pub decomp: BlockDecomposition,
    curves: Vec<BlockCurve>,
}

impl TradeoffSolver {
    pub fn new(decomp: BlockDecomposition) -> Result<Self> {
        let noise = decomp.noise;
        let curves = decomp
            .blocks
            .par_iter()
            .filter(|b| b.p > 0.0)
            .map(|b| BlockCurve::new(BlockProblem::from_block(b, &noise)?, b.p))
            .collect::<Result<Vec<_>>>()?;
        Ok(TradeoffSolver { decomp, curves })
    }

    /// σ² of the deterministic protocol (S = 1) for this probe.
    pub fn deterministic_sigma2(&self) -> f64 {
        self.curves
            .iter()
            .map(|c| c.p * c.problem.deterministic_precision())
            .sum()
    }

    /// S* in the requested mode.
    pub fn critical_success(&self, mode: CriticalMode) -> f64 {
        match mode {
            CriticalMode::PerBlock => self.curves.iter().map(|c| c.p * c.s_star).sum(),
            CriticalMode::MaxBlock => {
                let max = self
                    .curves
                    .iter()
                    .max_by_key(|c| c.problem.two_j)
                    .expect("at least one block");
                max.p * max.s_star
            }
        }
    }

    /// The flat floor of σ²(S): the smallest block ground energy.
    pub fn sigma2_floor(&self) -> f64 {
        self.curves
            .iter()
            .map(|c| c.ground_energy)
            .fold(f64::INFINITY, f64::min)
    }

    /// Ground energy of the maximal-spin block (the ultimate precision).
    pub fn max_block_ground_energy(&self) -> f64 {
        self.curves
            .iter()
            .max_by_key(|c| c.problem.two_j)
            .expect("at least one block")
            .ground_energy
    }

    /// Total budget Σ p_j s_j quoted at marginal price λ (plateau ties
    /// resolved at their lower end, s_j = 0).
    fn budget_at(&self, lambda: f64, tie_tol: f64) -> Result<f64> {
        let mut total = 0.0;
        for c in &self.curves {
            total += c.p * c.s_for_lambda(lambda, tie_tol)?;
        }
        Ok(total)
    }

    /// Solve the allocation problem at success probability S.
    pub fn point(&self, s: f64) -> Result<TradeoffPoint> {
        if !(s > 0.0 && s <= 1.0) {
            return Err(Error::Domain(format!(
                "success probability S={s} outside (0, 1]"
            )));
        }
        if s >= 1.0 {
            let alloc: Vec<(u32, f64)> =
                self.curves.iter().map(|c| (c.problem.two_j, 1.0)).collect();
            return self.assemble(1.0, alloc);
        }

        // price bracket
        let mut lam_lo = self
            .curves
            .iter()
            .map(|c| c.ground_energy)
            .fold(f64::INFINITY, f64::min);
        let mut lam_hi = self
            .curves
            .iter()
            .map(|c| c.lambda_top)
            .fold(f64::NEG_INFINITY, f64::max);
        let scale = lam_hi.abs().max(1.0);
        let tie_tol = 1e-11 * scale;
        lam_lo -= 1e-9 * scale;
        lam_hi += 1e-9 * scale;
        // bisection on the monotone budget S(λ)
        for _ in 0..90 {
            let mid = 0.5 * (lam_lo + lam_hi);
            if self.budget_at(mid, tie_tol)? < s {
                lam_lo = mid;
            } else {
                lam_hi = mid;
            }
            if lam_hi - lam_lo < 1e-14 * scale {
                break;
            }
        }
        let width = lam_hi - lam_lo;
        let lambda = lam_hi;

        // allocations at the resolved price; plateau ties absorb the residual
        let mut alloc: Vec<(u32, f64, bool)> = Vec::with_capacity(self.curves.len());
        for c in &self.curves {
            let sj = c.s_for_lambda(lambda, tie_tol)?;
            let tie = (c.ground_energy - lambda).abs() <= 2.0 * width + 2.0 * tie_tol;
            alloc.push((c.problem.two_j, sj, tie));
        }
        let used: f64 = self
            .curves
            .iter()
            .zip(&alloc)
            .map(|(c, (_, sj, _))| c.p * sj)
            .sum();
        let mut residual = s - used;
        if residual > 0.0 {
            // hand the residual to tie blocks, most precise (lowest energy) first
            let mut ties: Vec<usize> = (0..alloc.len()).filter(|&i| alloc[i].2).collect();
            ties.sort_by(|&a, &b| {
                self.curves[a]
                    .ground_energy
                    .partial_cmp(&self.curves[b].ground_energy)
                    .unwrap()
            });
            for i in ties {
                let c = &self.curves[i];
                let cap = c.p * (c.s_star.min(1.0) - alloc[i].1);
                let take = residual.min(cap.max(0.0));
                alloc[i].1 += take / c.p;
                residual -= take;
                if residual <= 1e-15 {
                    break;
                }
            }
        }
        // whatever remains (price-resolution slack) is absorbed by the active
        // blocks, marginal (highest-energy) first when removing weight,
        // cheapest first when adding
        if residual.abs() > 1e-15 {
            let mut order: Vec<usize> = (0..alloc.len())
                .filter(|&i| {
                    if residual > 0.0 {
                        alloc[i].1 < 1.0 && (alloc[i].1 > 0.0 || alloc[i].2)
                    } else {
                        alloc[i].1 > 0.0
                    }
                })
                .collect();
            order.sort_by(|&a, &b| {
                self.curves[a]
                    .ground_energy
                    .partial_cmp(&self.curves[b].ground_energy)
                    .unwrap()
            });
            if residual < 0.0 {
                order.reverse();
            }
            for i in order {
                if residual.abs() <= 1e-15 {
                    break;
                }
                let c = &self.curves[i];
                let next = (alloc[i].1 + residual / c.p).clamp(0.0, 1.0);
                residual -= c.p * (next - alloc[i].1);
                alloc[i].1 = next;
            }
        }
        self.assemble(s, alloc.into_iter().map(|(j, sj, _)| (j, sj)).collect())
    }

    fn assemble(&self, s: f64, alloc: Vec<(u32, f64)>) -> Result<TradeoffPoint> {
        let mut weighted = 0.0;
        let mut total = 0.0;
        for (c, (two_j, sj)) in self.curves.iter().zip(&alloc) {
            debug_assert_eq!(c.problem.two_j, *two_j);
            if *sj > 0.0 {
                let (sigma2_j, _) = c.eval(*sj)?;
                weighted += c.p * sj * sigma2_j;
                total += c.p * sj;
            }
        }
        if (total - s).abs() > 1e-8 {
            return Err(Error::Solver(format!(
                "allocation missed the budget: Σ p_j s_j = {total} vs S = {s}"
            )));
        }
        let sigma2 = weighted / s;
        Ok(TradeoffPoint {
            s,
            s_bar: 1.0 - s,
            fidelity: 1.0 - sigma2 / 4.0,
            sigma2,
            allocation: alloc,
        })
    }

    /// Evaluate the whole curve (grid points in parallel).
    pub fn curve(&self, grid: &[f64]) -> Result<Vec<TradeoffPoint>> {
        grid.par_iter().map(|&s| self.point(s)).collect()
    }

    /// The optimal per-block filter profiles at a solved point. Blocks keep
    /// their descending-j order; a block with s_j = 0 gets the zero filter.
    pub fn filters_at(&self, point: &TradeoffPoint) -> Result<Vec<(u32, FilterProfile)>> {
        let mut out = Vec::with_capacity(self.curves.len());
        for (c, (two_j, sj)) in self.curves.iter().zip(&point.allocation) {
            let profile = if *sj <= 0.0 {
                FilterProfile::zeros(c.problem.dim())
            } else {
                let sol = c.problem.constrained_minimize(*sj)?;
                c.problem.filter_from_solution(&sol)?
            };
            out.push((*two_j, profile));
        }
        Ok(out)
    }

    /// Exact per-block solution at a solved point (for inspecting x_c and
    /// coincidence sets).
    pub fn block_solution_at(&self, point: &TradeoffPoint, two_j: u32) -> Result<BlockSolution> {
        let (c, (_, sj)) = self
            .curves
            .iter()
            .zip(&point.allocation)
            .find(|(c, _)| c.problem.two_j == two_j)
            .ok_or_else(|| Error::Domain(format!("no block with 2j = {two_j}")))?;
        c.problem.constrained_minimize(*sj)
    }

    /// The per-block problems (descending j, p_j > 0 blocks only).
    pub fn problems(&self) -> impl Iterator<Item = (&BlockProblem, f64)> {
        self.curves.iter().map(|c| (&c.problem, c.p))
    }

    /// Scavenging: evaluate the failure branch of the optimal protocol at S
    /// under the complementary filter and the same canonical measurement.
    pub fn scavenge(&self, s: f64) -> Result<ScavengeReport> {
        let point = self.point(s)?;
        let filters = self.filters_at(&point)?;
        self.scavenge_with_profiles(s, &filters)
    }

    /// As [`Self::scavenge`], but with caller-provided profiles; their total
    /// success probability must match S within 1e-6.
    pub fn scavenge_with_profiles(
        &self,
        s: f64,
        filters: &[(u32, FilterProfile)],
    ) -> Result<ScavengeReport> {
        if filters.len() != self.curves.len() {
            return Err(Error::Validation(format!(
                "expected {} filter profiles, got {}",
                self.curves.len(),
                filters.len()
            )));
        }
        let s_check: f64 = self
            .curves
            .iter()
            .zip(filters)
            .map(|(c, (_, prof))| c.p * c.problem.filter_success(prof))
            .sum();
        if (s_check - s).abs() > 1e-6 {
            return Err(Error::Validation(format!(
                "filter profiles realize S = {s_check}, expected {s}"
            )));
        }

        // branch fidelities: F = 1/2 (1 + Σ_j p_j T_j / S_branch) with
        // T_j = Σ_m f_m ρ_{m,m+1} f_{m+1}
        let band_sum = |prof: &FilterProfile, block: &crate::spin::SpinBlock| -> f64 {
            block
                .offdiag
                .iter()
                .enumerate()
                .map(|(i, rho)| prof.f[i] * rho * prof.f[i + 1])
                .sum()
        };
        let mut t_succ = 0.0;
        let mut t_fail = 0.0;
        let mut t_det = 0.0;
        for (c, (two_j, prof)) in self.curves.iter().zip(filters) {
            let block = self
                .decomp
                .block_by_two_j(*two_j)
                .expect("decomposition block");
            t_succ += c.p * band_sum(prof, block);
            t_fail += c.p * band_sum(&prof.complement(), block);
            t_det += c.p * block.offdiag.iter().sum::<f64>();
        }
        let fidelity_det = 0.5 * (1.0 + t_det);
        let sigma2_det = 4.0 * (1.0 - fidelity_det);
        let fidelity_succ = 0.5 * (1.0 + t_succ / s);
        let sigma2_success = 4.0 * (1.0 - fidelity_succ);
        let s_bar = 1.0 - s;

        let (fidelity_fail, sigma2_fail) = if s_bar > 1e-12 {
            let f = 0.5 * (1.0 + t_fail / s_bar);
            (Some(f), Some(4.0 * (1.0 - f)))
        } else {
            (None, None)
        };
        // F_all = S F_succ + S̄ F_fail (fidelity is linear in the outcome mix)
        let fidelity_all = s * fidelity_succ + fidelity_fail.map_or(0.0, |f| s_bar * f);
        let sigma2_all = 4.0 * (1.0 - fidelity_all);
        let gentle_margin = std::f64::consts::SQRT_2 * s
            - fidelity_fail.map_or(0.0, |f| (fidelity_det - f).max(0.0));

        Ok(ScavengeReport {
            s,
            s_bar,
            sigma2_success,
            sigma2_fail,
            sigma2_all,
            sigma2_det,
            fidelity_det,
            fidelity_fail,
            gentle_margin,
        })
    }
}

/// Find the empirical plateau onset of a sampled curve: the smallest S̄ whose
/// remaining improvement is at most 1% of the total drop from the
/// deterministic value to the floor.
pub fn plateau_onset(points: &[TradeoffPoint], sigma2_det: f64, sigma2_floor: f64) -> Option<f64> {
    let total_drop = sigma2_det - sigma2_floor;
    if total_drop <= 0.0 {
        return None;
    }
    let mut sorted: Vec<&TradeoffPoint> = points.iter().collect();
    sorted.sort_by(|a, b| a.s_bar.partial_cmp(&b.s_bar).unwrap());
    sorted
        .iter()
        .find(|p| p.sigma2 - sigma2_floor <= 0.01 * total_drop)
        .map(|p| p.s_bar)
}

/// The default S̄ grid: uniform on the moderate-abstention range plus
/// geometric refinement of S toward 0 (the plateau side).
pub fn default_s_grid(points: usize) -> Vec<f64> {
    let points = points.max(2);
    let n_uniform = points * 3 / 4;
    let mut s_values: Vec<f64> = Vec::with_capacity(points);
    for k in 0..n_uniform {
        // S̄ from 0 to 0.75
        let s_bar = 0.75 * k as f64 / (n_uniform - 1).max(1) as f64;
        s_values.push(1.0 - s_bar);
    }
    let n_geo = points - n_uniform;
    let mut s = 0.25;
    for _ in 0..n_geo {
        s *= 0.65;
        s_values.push(s);
    }
    s_values.sort_by(|a, b| b.partial_cmp(a).unwrap());
    s_values.dedup();
    s_values
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spin::{decompose, NoiseModel, ProbeSpec};
    use approx::assert_relative_eq;

    fn solver(n: u32, r: f64) -> TradeoffSolver {
        let probe = ProbeSpec::multicopy(n).unwrap();
        let noise = NoiseModel::new(r).unwrap();
        TradeoffSolver::new(decompose(&probe, &noise)).unwrap()
    }

    #[test]
    fn deterministic_point_has_unit_allocation() {
        let t = solver(6, 0.8);
        let p = t.point(1.0).unwrap();
        assert!(p.allocation.iter().all(|(_, sj)| *sj == 1.0));
        assert_relative_eq!(p.sigma2, t.deterministic_sigma2(), epsilon = 1e-12);
        // frozen from an independent convex-programming solve of this instance
        assert_relative_eq!(p.sigma2, 0.31630060, epsilon = 2e-8);
    }

    #[test]
    fn curve_matches_independent_sdp_values() {
        // frozen from a cvxpy/CLARABEL solve of the block SDP at n=6, r=0.8
        let t = solver(6, 0.8);
        for (s_bar, expect) in [
            (0.1, 0.27519956),
            (0.3, 0.24827670),
            (0.46, 0.22523853),
            (0.6, 0.22396538),
            (0.9, 0.22396538),
        ] {
            let p = t.point(1.0 - s_bar).unwrap();
            assert_relative_eq!(p.sigma2, expect, max_relative = 3e-7);
        }
    }

    #[test]
    fn single_qubit_curve_is_flat() {
        let t = solver(1, 0.8);
        for s in [0.05, 0.3, 0.7, 1.0] {
            let p = t.point(s).unwrap();
            assert_relative_eq!(p.sigma2, 1.2, epsilon = 1e-10);
        }
        assert_relative_eq!(t.critical_success(CriticalMode::PerBlock), 1.0, epsilon = 1e-10);
        assert_relative_eq!(t.critical_success(CriticalMode::MaxBlock), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn sigma2_monotone_and_budget_exact() {
        let t = solver(10, 0.6);
        let mut prev = f64::NEG_INFINITY;
        for k in 1..=40 {
            let s = k as f64 / 40.0;
            let p = t.point(s).unwrap();
            assert!(
                p.sigma2 >= prev - 1e-9,
                "σ²(S) should not decrease as S grows: {} at S={s}",
                p.sigma2
            );
            let total: f64 = p
                .allocation
                .iter()
                .map(|(two_j, sj)| t.decomp.block_by_two_j(*two_j).unwrap().p * sj)
                .sum();
            assert!((total - s).abs() < 1e-8);
            prev = p.sigma2;
        }
    }

    #[test]
    fn ultimate_limit_post_selects_maximal_block() {
        let t = solver(8, 0.8);
        let p = t.point(1e-4).unwrap();
        assert_relative_eq!(p.sigma2, t.sigma2_floor(), epsilon = 1e-9);
        for (two_j, sj) in &p.allocation {
            if *two_j != 8 {
                assert_eq!(*sj, 0.0, "block 2j={two_j} got s={sj}");
            } else {
                assert!(*sj > 0.0);
            }
        }
    }

    #[test]
    fn plateau_beyond_max_block_critical() {
        let t = solver(6, 0.8);
        let s_star = t.critical_success(CriticalMode::MaxBlock);
        let floor = t.sigma2_floor();
        for frac in [0.9, 0.5, 0.1] {
            let p = t.point(s_star * frac).unwrap();
            assert_relative_eq!(p.sigma2, floor, epsilon = 1e-8);
        }
        // strictly above the floor just before the critical point
        let before = t.point((s_star * 1.3).min(1.0)).unwrap();
        assert!(before.sigma2 > floor + 1e-6);
    }

    #[test]
    fn critical_modes_ordering() {
        let t = solver(12, 0.7);
        let per = t.critical_success(CriticalMode::PerBlock);
        let max = t.critical_success(CriticalMode::MaxBlock);
        assert!(max < per);
        assert!(per < 1.0);
    }

    #[test]
    fn equal_marginals_at_optimum() {
        // every block with 0 < s_j < 1 shares the marginal d(s F_j(s))/ds
        let t = solver(12, 0.8);
        let point = t.point(0.6).unwrap();
        let h = 1e-5;
        let mut marginals = Vec::new();
        for (c, (_, sj)) in t.curves.iter().zip(&point.allocation) {
            if *sj > h && *sj < 1.0 - h {
                let up = c.eval(sj + h).unwrap().0;
                let down = c.eval(sj - h).unwrap().0;
                let phi_up = (sj + h) * up;
                let phi_down = (sj - h) * down;
                // d(s F(s))/ds = 1 - d(s σ²(s)/4)/ds
                marginals.push(1.0 - (phi_up - phi_down) / (2.0 * h) / 4.0);
            }
        }
        assert!(marginals.len() >= 2, "need at least two interior blocks");
        let first = marginals[0];
        for m in &marginals {
            assert!((m - first).abs() < 1e-5, "marginals differ: {marginals:?}");
        }
    }

    #[test]
    fn fig3_style_plateau_onset() {
        let t = solver(6, 0.8);
        let grid = default_s_grid(64);
        let points = t.curve(&grid).unwrap();
        let onset = plateau_onset(&points, t.deterministic_sigma2(), t.sigma2_floor()).unwrap();
        assert!(
            (0.43..=0.49).contains(&onset),
            "plateau onset {onset} outside 0.46±0.03"
        );
    }

    #[test]
    fn filters_cover_allocation() {
        let t = solver(6, 0.5);
        let point = t.point(0.55).unwrap();
        let filters = t.filters_at(&point).unwrap();
        let s_total: f64 = t
            .curves
            .iter()
            .zip(&filters)
            .map(|(c, (_, prof))| c.p * c.problem.filter_success(prof))
            .sum();
        assert_relative_eq!(s_total, 0.55, max_relative = 1e-9);
    }

    #[test]
    fn scavenge_invariants() {
        let t = solver(20, 0.8);
        for s in [0.9, 0.5, 0.2, 0.02] {
            let rep = t.scavenge(s).unwrap();
            assert!(
                rep.sigma2_all >= rep.sigma2_det - 1e-8,
                "σ²_all {} below σ²_det {} at S={s}",
                rep.sigma2_all,
                rep.sigma2_det
            );
            let fail = rep.sigma2_fail.unwrap();
            assert!(rep.sigma2_success <= rep.sigma2_all + 1e-12);
            if s <= 0.5 {
                assert!(rep.sigma2_all <= fail + 1e-12);
            }
            assert!(rep.gentle_margin >= -1e-9);
        }
    }

    #[test]
    fn scavenge_failure_branch_approaches_deterministic() {
        let t = solver(50, 0.8);
        let rep = t.scavenge(1e-3).unwrap();
        let fail = rep.sigma2_fail.unwrap();
        assert!(
            (fail / rep.sigma2_det - 1.0).abs() < 0.02,
            "σ²_fail {} vs σ²_det {}",
            fail,
            rep.sigma2_det
        );
    }

    #[test]
    fn scavenge_at_deterministic_point() {
        let t = solver(8, 0.6);
        let rep = t.scavenge(1.0).unwrap();
        assert!(rep.sigma2_fail.is_none());
        assert_relative_eq!(rep.sigma2_all, rep.sigma2_success, epsilon = 1e-12);
        assert_relative_eq!(rep.sigma2_all, rep.sigma2_det, epsilon = 1e-12);
        assert!(rep.gentle_margin > 1.0); // √2·1 - 0
    }

    #[test]
    fn scavenge_rejects_mismatched_profiles() {
        let t = solver(4, 0.5);
        let point = t.point(0.5).unwrap();
        let mut filters = t.filters_at(&point).unwrap();
        // force full transmission on the last (j=0) block, which post-selection
        // had switched off entirely
        let last = filters.len() - 1;
        filters[last].1 = FilterProfile::ones(filters[last].1.f.len());
        assert!(t.scavenge_with_profiles(0.5, &filters).is_err());
    }

    #[test]
    fn gentle_bound_reporting() {
        let g = gentle_bound_check(0.9, 0.89, 1.0);
        assert!(g.holds);
        let g = gentle_bound_check(0.9, 0.2, 1e-6);
        assert!(!g.holds);
        assert!(g.margin < 0.0);
    }

    #[test]
    fn rejects_unreachable_success() {
        let t = solver(4, 0.5);
        assert!(t.point(0.0).is_err());
        assert!(t.point(1.2).is_err());
    }

    #[test]
    fn noiseless_curve_only_uses_maximal_block() {
        let t = solver(6, 1.0);
        assert_eq!(t.curves.len(), 1); // p_j = 0 blocks dropped
        let p = t.point(0.4).unwrap();
        assert_eq!(p.allocation.len(), 1);
        assert_relative_eq!(p.allocation[0].1, 0.4, epsilon = 1e-12);
    }

    #[test]
    fn default_grid_shape() {
        let g = default_s_grid(64);
        assert!(g.len() >= 60);
        assert!(g[0] == 1.0);
        assert!(g.iter().all(|s| *s > 0.0 && *s <= 1.0));
        for w in g.windows(2) {
            assert!(w[1] < w[0]);
        }
    }
}
