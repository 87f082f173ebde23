//! The cross-check suite behind `qmetro verify`: every block-formula result
//! is recomputed through the dense computational-basis oracle and the
//! independent SDP route at small n, with per-check margins.

use crate::error::{Error, Result};
use crate::filter::{block_problems, FilterProfile};
use crate::oracle::{
    self, direct_fidelity, symmetric_optimality_check, DenseSeed, DenseState, MeasurementFamily,
    SpinBasis,
};
use crate::sdp::{self, SdpOptions};
use crate::spin::{decompose, multicopy_block_sums, NoiseModel, ProbeSpec};
use crate::tradeoff::TradeoffSolver;
use rand::SeedableRng;
use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    /// Worst observed deviation (smaller is better).
    pub margin: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub n: u32,
    pub r: f64,
    pub seed: u64,
    pub checks: Vec<Check>,
    pub all_passed: bool,
}

fn check(name: &str, margin: f64, tolerance: f64) -> Check {
    Check {
        name: name.to_string(),
        margin,
        tolerance,
        passed: margin <= tolerance,
    }
}

/// Run the full cross-check suite for one (n, r). Requires n ≤ 4 (the dense
/// structures grow as 4^n). `inject_fault` corrupts the named check, as a
/// negative control for the reporting pipeline.
pub fn run(n: u32, r: f64, seed: u64, inject_fault: Option<&str>) -> Result<VerifyReport> {
    if n == 0 || n > 4 {
        return Err(Error::Domain(format!(
            "verification suite runs at 1 ≤ n ≤ 4, got {n}"
        )));
    }
    let noise = NoiseModel::new(r)?;
    let probe = ProbeSpec::multicopy(n)?;
    let decomp = decompose(&probe, &noise);
    let basis = SpinBasis::build(n)?;
    let dense = DenseState::dephase_probe(&probe, r)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut checks: Vec<Check> = Vec::new();

    // dense state sanity
    {
        let trace_dev = (dense.matrix.trace() - 1.0).abs();
        let min_eig = dense.matrix.clone().symmetric_eigen().eigenvalues.min();
        checks.push(check("dense_state_trace", trace_dev, 1e-12));
        checks.push(check("dense_state_psd", (-min_eig).max(0.0), 1e-12));
    }

    // block projection of the dense state vs decompose
    {
        let mut worst = 0.0f64;
        for block in &decomp.blocks {
            let (diag, off) = dense.block_band(&basis, block.two_j);
            for i in 0..block.dim() {
                worst = worst.max((diag[i] - block.p * block.diag[i]).abs());
                if i + 1 < block.dim() {
                    worst = worst.max((off[i] - block.p * block.offdiag[i]).abs());
                }
            }
        }
        checks.push(check("block_projection", worst, 1e-12));
    }

    // probability normalization and closed multicopy sums
    {
        let p_sum: f64 = decomp.blocks.iter().map(|b| b.p).sum();
        checks.push(check("probability_sum", (p_sum - 1.0).abs(), 1e-9));
        let mut worst = 0.0f64;
        for block in &decomp.blocks {
            let (_, p) = multicopy_block_sums(n, block.two_j, r);
            let scale = block.p.max(1e-300);
            worst = worst.max((p - block.p).abs() / scale);
        }
        checks.push(check("multicopy_block_sums", worst, 1e-10));
    }

    // trade-off fidelity: block formula vs dense oracle, including the
    // extracted filters, and the success probability they realize
    let solver = TradeoffSolver::new(decomp.clone())?;
    {
        let mut worst_f = 0.0f64;
        let mut worst_s = 0.0f64;
        let mut worst_cov = 0.0f64;
        for s in [0.3, 0.7, 1.0] {
            let point = solver.point(s)?;
            let filters = solver.filters_at(&point)?;
            let seed_op = DenseSeed::from_filters(&basis, &filters);
            seed_op.validate_povm()?;
            let (f_dense, s_dense) = direct_fidelity(&dense, &seed_op)?;
            worst_f = worst_f.max((f_dense - point.fidelity).abs());
            worst_s = worst_s.max((s_dense - s).abs());
            let (f_worst, f_avg) =
                oracle::theta_scan(&dense, &MeasurementFamily::Covariant(&seed_op), 512, 512)?;
            worst_cov = worst_cov.max((f_worst - f_avg).abs());
        }
        checks.push(check("fidelity_block_vs_dense", worst_f, 1e-9));
        checks.push(check("success_block_vs_dense", worst_s, 1e-9));
        checks.push(check("worst_vs_average_fidelity", worst_cov, 1e-6));
    }

    // constrained solves vs multi-start brute force on small blocks
    {
        let problems = block_problems(&decomp)?;
        let mut worst = 0.0f64;
        for problem in problems.iter().filter(|p| p.dim() <= 5 && p.dim() > 1) {
            for s in [0.4, 0.8] {
                let solved = problem.constrained_minimize(s)?.sigma2;
                let brute = oracle::exhaustive_filter_search(problem, s, 200, &mut rng)?;
                worst = worst.max(solved - brute); // solver must not be worse
            }
        }
        checks.push(check("active_set_vs_exhaustive", worst.max(0.0), 1e-5));
    }

    // SDP vs allocation objective
    if r > 0.0 {
        let mut worst = 0.0f64;
        for s in [0.3, 0.7, 1.0] {
            let obj = sdp::solve(&decomp, s, &SdpOptions::default())?.objective;
            let point = solver.point(s)?.sigma2;
            worst = worst.max((obj / point - 1.0).abs());
        }
        checks.push(check("sdp_vs_allocation", worst, 1e-6));
    }

    // scavenging bounds
    if r > 0.0 {
        let mut worst_all = 0.0f64;
        let mut worst_gentle = 0.0f64;
        for s in [0.2, 0.6, 1.0] {
            let rep = solver.scavenge(s)?;
            worst_all = worst_all.max(rep.sigma2_det - rep.sigma2_all);
            worst_gentle = worst_gentle.max(-rep.gentle_margin);
        }
        checks.push(check("scavenge_all_vs_deterministic", worst_all.max(0.0), 1e-8));
        checks.push(check("gentle_bound", worst_gentle.max(0.0), 1e-9));
    }

    // probe/seed symmetrization (n ≤ 3)
    if n <= 3 {
        let report = symmetric_optimality_check(n, r, 50, &mut rng)?;
        checks.push(check(
            "symmetrization_invariance",
            report
                .max_delta_deviation
                .max(report.max_success_deviation),
            1e-10,
        ));
    }

    if let Some(name) = inject_fault {
        match checks.iter_mut().find(|c| c.name == name) {
            Some(c) => {
                c.margin = c.tolerance * 10.0 + 1.0;
                c.passed = false;
            }
            None => {
                return Err(Error::Validation(format!(
                    "no check named `{name}` to perturb"
                )))
            }
        }
    }

    let all_passed = checks.iter().all(|c| c.passed);
    Ok(VerifyReport {
        n,
        r,
        seed,
        checks,
        all_passed,
    })
}

/// Canonical filters for an explicitly supplied profile set, used by tests
/// that drive the dense oracle with handcrafted filters.
pub fn ones_profiles(decomp: &crate::spin::BlockDecomposition) -> Vec<(u32, FilterProfile)> {
    decomp
        .blocks
        .iter()
        .map(|b| (b.two_j, FilterProfile::ones(b.dim())))
        .collect()
}
