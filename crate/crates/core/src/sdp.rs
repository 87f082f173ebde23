//! Reference semidefinite-programming solver for the trade-off problem
//!
//! ```text
//!     σ²(S) = min ⟨H, Λ⟩   over  Λ = ⊕_j Λ^j ⪰ 0,
//!             tr Λ = 1,    Λ^j_mm ≤ p_j ρ^j_mm / S,
//! ```
//!
//! solved by a primal-dual interior-point method specialized to the
//! block-diagonal cone with one trace equality and per-entry diagonal caps
//! (the caps carry LP slacks). The dual iterate is kept exactly at
//! `Z = H - y₀·1 + Diag(u)`, so only primal feasibility and complementarity
//! are driven to zero. This is an independent route to the same optimum as
//! the active-set allocation in [`crate::tradeoff`]; the two are
//! cross-checked in the acceptance suite.

use crate::error::{Error, Result};
use crate::filter::BlockProblem;
use crate::spin::BlockDecomposition;
use nalgebra::DMatrix;

/// Solver report for one (decomposition, S) instance.
#[derive(Debug, Clone)]
pub struct SdpSolution {
    /// Block spins, descending, matching `lambda`.
    pub two_js: Vec<u32>,
    /// Primal blocks Λ^j.
    pub lambda: Vec<DMatrix<f64>>,
    /// tr(HΛ) at the returned iterate.
    pub objective: f64,
    /// tr(ΛZ) + tᵀu: the complementarity (duality) gap.
    pub duality_gap: f64,
    /// Largest primal equality violation.
    pub primal_residual: f64,
    pub iterations: usize,
    /// Blocks whose Λ^j has a second eigenvalue above 1e-6 of the first
    /// (the optimal filter is only extractable from rank-1 blocks).
    pub rank_flags: Vec<bool>,
}

impl SdpSolution {
    /// Extract per-block filter weights f^j_m = min(1, √(S Λ_mm/(p_j ρ_mm)))
    /// where the block is rank-1 within tolerance; None on flagged blocks.
    pub fn extract_filters(
        &self,
        decomp: &BlockDecomposition,
        s: f64,
    ) -> Vec<Option<Vec<f64>>> {
        self.two_js
            .iter()
            .zip(self.lambda.iter())
            .zip(self.rank_flags.iter())
            .map(|((two_j, lam), flagged)| {
                if *flagged {
                    return None;
                }
                let block = decomp.block_by_two_j(*two_j)?;
                let f = (0..lam.nrows())
                    .map(|m| {
                        let cap = block.p * block.diag[m];
                        if cap <= 0.0 {
                            1.0
                        } else {
                            (s * lam[(m, m)] / cap).sqrt().min(1.0)
                        }
                    })
                    .collect();
                Some(f)
            })
            .collect()
    }
}

/// Options for [`solve`].
#[derive(Debug, Clone, Copy)]
pub struct SdpOptions {
    /// Stop when gap and primal residual fall below this.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Cap on Σ_j (2j+1) over retained blocks.
    pub dimension_cap: usize,
    /// Blocks with p_j below this carry no usable weight and are dropped.
    pub probability_floor: f64,
}

impl Default for SdpOptions {
    fn default() -> Self {
        SdpOptions {
            tolerance: 1e-9,
            max_iterations: 300,
            dimension_cap: 2000,
            probability_floor: 1e-14,
        }
    }
}

struct Instance {
    two_js: Vec<u32>,
    h: Vec<DMatrix<f64>>,
    caps: Vec<Vec<f64>>,
    dims: Vec<usize>,
}

fn build_instance(
    decomp: &BlockDecomposition,
    s: f64,
    opts: &SdpOptions,
) -> Result<Instance> {
    let mut two_js = Vec::new();
    let mut h = Vec::new();
    let mut caps = Vec::new();
    let mut dims = Vec::new();
    for block in &decomp.blocks {
        if block.p < opts.probability_floor {
            continue;
        }
        let problem = BlockProblem::from_block(block, &decomp.noise)?;
        let dim = problem.dim();
        let mut hj = DMatrix::zeros(dim, dim);
        for i in 0..dim {
            hj[(i, i)] = 2.0;
            if i + 1 < dim {
                hj[(i, i + 1)] = -problem.a[i];
                hj[(i + 1, i)] = -problem.a[i];
            }
        }
        let cap: Vec<f64> = block.diag.iter().map(|rho| block.p * rho / s).collect();
        two_js.push(block.two_j);
        h.push(hj);
        caps.push(cap);
        dims.push(dim);
    }
    let total: usize = dims.iter().sum();
    if total > opts.dimension_cap {
        return Err(Error::SizeLimit(format!(
            "total block dimension {total} exceeds SDP cap {}",
            opts.dimension_cap
        )));
    }
    if total == 0 {
        return Err(Error::Domain("no blocks with usable probability".into()));
    }
    Ok(Instance {
        two_js,
        h,
        caps,
        dims,
    })
}

/// Largest α ∈ (0, 1] with M + α ΔM ≻ 0, by bisection on Cholesky success.
fn psd_step(m: &DMatrix<f64>, dm: &DMatrix<f64>) -> f64 {
    let ok = |alpha: f64| (m + dm.scale(alpha)).cholesky().is_some();
    if ok(1.0) {
        return 1.0;
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Solve the trade-off SDP at success probability `s`.
pub fn solve(decomp: &BlockDecomposition, s: f64, opts: &SdpOptions) -> Result<SdpSolution> {
    if !(s > 0.0 && s <= 1.0) {
        return Err(Error::Domain(format!(
            "success probability S={s} outside (0, 1]"
        )));
    }
    let inst = build_instance(decomp, s, opts)?;

    // S = 1 has no strictly feasible point (the caps sum to exactly 1, so the
    // diagonal is fully determined); the optimum is the deterministic state,
    // rank-1 per block with the envelope amplitudes.
    if s >= 1.0 {
        return Ok(deterministic_solution(&inst));
    }

    let nb = inst.dims.len();
    let total_dim: usize = inst.dims.iter().sum();
    // diag-cap index space: block-major flattening
    let d_total = total_dim;

    // primal: Λ blocks and slacks t; dual: y0 and u ≥ 0 with
    // Z = H - y0·1 + Diag(u) kept exact
    let mut lam: Vec<DMatrix<f64>> = Vec::with_capacity(nb);
    let mut t = vec![0.0f64; d_total];
    {
        let mut ofs = 0;
        for (b, dim) in inst.dims.iter().enumerate() {
            let mut l = DMatrix::zeros(*dim, *dim);
            for m in 0..*dim {
                let v = (1.0 / total_dim as f64).min(0.9 * inst.caps[b][m]).max(1e-300);
                l[(m, m)] = v;
                t[ofs + m] = (inst.caps[b][m] - v).max(1e-12);
            }
            lam.push(l);
            ofs += dim;
        }
    }
    let mut u = vec![1.0f64; d_total];
    let mut y0 = inst
        .h
        .iter()
        .map(|h| h.clone().symmetric_eigen().eigenvalues.min())
        .fold(f64::INFINITY, f64::min)
        - 1.0;

    let z_blocks = |y0: f64, u: &[f64]| -> Vec<DMatrix<f64>> {
        let mut out = Vec::with_capacity(nb);
        let mut ofs = 0;
        for (b, dim) in inst.dims.iter().enumerate() {
            let mut z = inst.h[b].clone();
            for m in 0..*dim {
                z[(m, m)] += u[ofs + m] - y0;
            }
            out.push(z);
            ofs += dim;
        }
        out
    };

    let mut iterations = 0;
    loop {
        iterations += 1;
        if iterations > opts.max_iterations {
            let gap = current_gap(&lam, &z_blocks(y0, &u), &t, &u);
            return Err(Error::Solver(format!(
                "interior point did not converge in {} iterations (gap {gap:.3e})",
                opts.max_iterations
            )));
        }
        let z = z_blocks(y0, &u);
        let zi: Vec<DMatrix<f64>> = z
            .iter()
            .map(|zb| {
                zb.clone()
                    .cholesky()
                    .ok_or_else(|| Error::Solver("dual iterate left the cone".into()))
                    .map(|c| c.inverse())
            })
            .collect::<Result<Vec<_>>>()?;
        let k: Vec<DMatrix<f64>> = lam.iter().zip(&zi).map(|(l, zi)| l * zi).collect();

        // residuals and barrier parameter
        let tr_lam: f64 = lam.iter().map(|l| l.trace()).sum();
        let r_p0 = 1.0 - tr_lam;
        let mut r_pm = vec![0.0f64; d_total];
        {
            let mut ofs = 0;
            for (b, dim) in inst.dims.iter().enumerate() {
                for m in 0..*dim {
                    r_pm[ofs + m] = inst.caps[b][m] - lam[b][(m, m)] - t[ofs + m];
                }
                ofs += dim;
            }
        }
        let gap_psd: f64 = lam.iter().zip(&z).map(|(l, zb)| (l * zb).trace()).sum();
        let gap_lp: f64 = t.iter().zip(&u).map(|(a, b)| a * b).sum();
        let mu = (gap_psd + gap_lp) / (total_dim + d_total) as f64;
        let primal_res = r_pm
            .iter()
            .fold(r_p0.abs(), |acc, v| acc.max(v.abs()));

        let objective: f64 = lam.iter().zip(&inst.h).map(|(l, h)| (l * h).trace()).sum();
        if (gap_psd + gap_lp) <= opts.tolerance * (1.0 + objective.abs())
            && primal_res <= opts.tolerance
        {
            return Ok(finish(inst, lam, gap_psd + gap_lp, primal_res, iterations));
        }

        // Schur system M [Δy0; -Δu] = rhs, shared by predictor and corrector
        let mut m_mat = DMatrix::zeros(1 + d_total, 1 + d_total);
        m_mat[(0, 0)] = k.iter().map(|kb| kb.trace()).sum::<f64>();
        {
            let mut ofs = 0;
            for (b, dim) in inst.dims.iter().enumerate() {
                for a in 0..*dim {
                    let idx = 1 + ofs + a;
                    m_mat[(0, idx)] = k[b][(a, a)];
                    m_mat[(idx, 0)] = k[b][(a, a)];
                    for be in 0..*dim {
                        m_mat[(idx, 1 + ofs + be)] = lam[b][(a, be)] * zi[b][(a, be)];
                    }
                    m_mat[(idx, idx)] += t[ofs + a] / u[ofs + a];
                }
                ofs += dim;
            }
        }
        let chol = m_mat
            .cholesky()
            .ok_or_else(|| Error::Solver("Schur complement lost positive definiteness".into()))?;

        // direction for a given centering target; corr = second-order terms
        let direction = |sigma_mu: f64,
                         corr_psd: Option<&Vec<DMatrix<f64>>>,
                         corr_lp: Option<&Vec<f64>>|
         -> (f64, Vec<f64>, Vec<DMatrix<f64>>, Vec<f64>) {
            // W_b = (σμ I - corr) Zi - Λ
            let w: Vec<DMatrix<f64>> = (0..nb)
                .map(|b| {
                    let mut base = zi[b].scale(sigma_mu);
                    if let Some(c) = corr_psd {
                        base -= &c[b] * &zi[b];
                    }
                    base - &lam[b]
                })
                .collect();
            let mut rhs = DMatrix::zeros(1 + d_total, 1);
            rhs[(0, 0)] = r_p0 - w.iter().map(|wb| wb.trace()).sum::<f64>();
            {
                let mut ofs = 0;
                for (b, dim) in inst.dims.iter().enumerate() {
                    for a in 0..*dim {
                        let i = ofs + a;
                        let dt_free = (sigma_mu
                            - t[i] * u[i]
                            - corr_lp.map_or(0.0, |c| c[i]))
                            / u[i];
                        rhs[(1 + i, 0)] = r_pm[i] - w[b][(a, a)] - dt_free;
                    }
                    ofs += dim;
                }
            }
            let sol = chol.solve(&rhs);
            let dy0 = sol[(0, 0)];
            let du: Vec<f64> = (0..d_total).map(|i| -sol[(1 + i, 0)]).collect();
            // ΔZ = -Δy0 I + Diag(Δu); ΔΛ = W - Λ ΔZ Zi, symmetrized
            let mut dlam = Vec::with_capacity(nb);
            let mut ofs = 0;
            for (b, dim) in inst.dims.iter().enumerate() {
                let mut dz = DMatrix::zeros(*dim, *dim);
                for m in 0..*dim {
                    dz[(m, m)] = du[ofs + m] - dy0;
                }
                let raw = &w[b] - &lam[b] * &dz * &zi[b];
                dlam.push((raw.clone() + raw.transpose()).scale(0.5));
                ofs += dim;
            }
            let dt: Vec<f64> = (0..d_total)
                .map(|i| {
                    (sigma_mu - t[i] * u[i] - corr_lp.map_or(0.0, |c| c[i]) - t[i] * du[i]) / u[i]
                })
                .collect();
            (dy0, du, dlam, dt)
        };

        let step_lengths = |dlam: &Vec<DMatrix<f64>>, dt: &Vec<f64>, du: &Vec<f64>, dy0: f64| {
            let mut ap = 1.0f64;
            for (l, dl) in lam.iter().zip(dlam) {
                ap = ap.min(psd_step(l, dl));
            }
            for (ti, dti) in t.iter().zip(dt) {
                if *dti < 0.0 {
                    ap = ap.min(-ti / dti);
                }
            }
            let mut ad = 1.0f64;
            let mut ofs = 0;
            for (b, dim) in inst.dims.iter().enumerate() {
                let mut dz = DMatrix::zeros(*dim, *dim);
                for m in 0..*dim {
                    dz[(m, m)] = du[ofs + m] - dy0;
                }
                ad = ad.min(psd_step(&z[b], &dz));
                ofs += dim;
            }
            for (ui, dui) in u.iter().zip(du) {
                if *dui < 0.0 {
                    ad = ad.min(-ui / dui);
                }
            }
            (ap, ad)
        };

        // predictor (affine direction)
        let (dy0_a, du_a, dlam_a, dt_a) = direction(0.0, None, None);
        let (ap_a, ad_a) = step_lengths(&dlam_a, &dt_a, &du_a, dy0_a);
        let mu_aff = {
            let mut g = 0.0;
            for b in 0..nb {
                let lam_n = &lam[b] + dlam_a[b].scale(0.98 * ap_a);
                let mut z_n = z[b].clone();
                let mut ofs2 = 0;
                for bb in 0..b {
                    ofs2 += inst.dims[bb];
                }
                for m in 0..inst.dims[b] {
                    z_n[(m, m)] += 0.98 * ad_a * (du_a[ofs2 + m] - dy0_a);
                }
                g += (lam_n * z_n).trace();
            }
            for i in 0..d_total {
                g += (t[i] + 0.98 * ap_a * dt_a[i]) * (u[i] + 0.98 * ad_a * du_a[i]);
            }
            g / (total_dim + d_total) as f64
        };
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);

        // corrector
        let corr_psd: Vec<DMatrix<f64>> = (0..nb)
            .map(|b| {
                let mut dz = DMatrix::zeros(inst.dims[b], inst.dims[b]);
                let mut ofs2 = 0;
                for bb in 0..b {
                    ofs2 += inst.dims[bb];
                }
                for m in 0..inst.dims[b] {
                    dz[(m, m)] = du_a[ofs2 + m] - dy0_a;
                }
                &dlam_a[b] * dz
            })
            .collect();
        let corr_lp: Vec<f64> = (0..d_total).map(|i| dt_a[i] * du_a[i]).collect();
        let (dy0, du, dlam, dt) = direction(sigma * mu, Some(&corr_psd), Some(&corr_lp));
        let (ap, ad) = step_lengths(&dlam, &dt, &du, dy0);
        let tau = 0.98;
        let ap = (tau * ap).min(1.0);
        let ad = (tau * ad).min(1.0);

        for b in 0..nb {
            lam[b] += dlam[b].scale(ap);
        }
        for i in 0..d_total {
            t[i] += ap * dt[i];
            u[i] += ad * du[i];
        }
        y0 += ad * dy0;
    }
}

fn current_gap(lam: &[DMatrix<f64>], z: &[DMatrix<f64>], t: &[f64], u: &[f64]) -> f64 {
    let psd: f64 = lam.iter().zip(z).map(|(l, zb)| (l * zb).trace()).sum();
    let lp: f64 = t.iter().zip(u).map(|(a, b)| a * b).sum();
    psd + lp
}

fn deterministic_solution(inst: &Instance) -> SdpSolution {
    let mut lam = Vec::with_capacity(inst.dims.len());
    let mut objective = 0.0;
    for (b, dim) in inst.dims.iter().enumerate() {
        // caps are p_j ρ_mm at S=1; the optimal block is the rank-1 outer
        // product of the envelope, scaled by p_j
        let amp: Vec<f64> = inst.caps[b].iter().map(|c| c.sqrt()).collect();
        let v = DMatrix::from_fn(*dim, *dim, |i, k| amp[i] * amp[k]);
        objective += (&v * &inst.h[b]).trace();
        lam.push(v);
    }
    let rank_flags = vec![false; inst.dims.len()];
    SdpSolution {
        two_js: inst.two_js.clone(),
        lambda: lam,
        objective,
        duality_gap: 0.0,
        primal_residual: 0.0,
        iterations: 0,
        rank_flags,
    }
}

fn finish(
    inst: Instance,
    lam: Vec<DMatrix<f64>>,
    gap: f64,
    primal_res: f64,
    iterations: usize,
) -> SdpSolution {
    let objective: f64 = lam.iter().zip(&inst.h).map(|(l, h)| (l * h).trace()).sum();
    let rank_flags: Vec<bool> = lam
        .iter()
        .map(|l| {
            let mut eigs: Vec<f64> = l
                .clone()
                .symmetric_eigen()
                .eigenvalues
                .iter()
                .cloned()
                .collect();
            eigs.sort_by(|a, b| b.partial_cmp(a).unwrap());
            eigs.len() > 1 && eigs[1] > 1e-6 * eigs[0].max(1e-300)
        })
        .collect();
    SdpSolution {
        two_js: inst.two_js,
        lambda: lam,
        objective,
        duality_gap: gap,
        primal_residual: primal_res,
        iterations,
        rank_flags,
    }
}
