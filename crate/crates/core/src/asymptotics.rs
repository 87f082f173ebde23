//! The continuum particle-in-a-box model and the closed-form asymptotics:
//! potentials, harmonic approximations, deterministic/ultimate/finite-
//! abstention precisions, asymptotic probes, and exponential scaling laws.

use crate::error::{Error, Result};
use crate::filter::BlockProblem;
use crate::solver;
use crate::spin::ProbeSpec;
use crate::tridiag::SymTridiag;

/// The effective continuum potential of a spin-j block:
/// `V^j(x) = j (1-r²) / (2r √(1 - (1-r²) x²))` on x ∈ [-1, 1].
#[derive(Debug, Clone, Copy)]
pub struct PotentialModel {
    pub two_j: u32,
    pub r: f64,
    /// V(0) = j(1-r²)/(2r).
    pub v0: f64,
    /// Harmonic coefficient ω² = j(1-r²)²/(4r).
    pub omega2: f64,
}

impl PotentialModel {
    pub fn new(two_j: u32, r: f64) -> Result<Self> {
        if !(r > 0.0 && r <= 1.0) {
            return Err(Error::Domain(format!(
                "potential defined for 0 < r ≤ 1, got {r}"
            )));
        }
        let j = two_j as f64 / 2.0;
        Ok(PotentialModel {
            two_j,
            r,
            v0: j * (1.0 - r * r) / (2.0 * r),
            omega2: j * (1.0 - r * r) * (1.0 - r * r) / (4.0 * r),
        })
    }

    /// Evaluate V(x); +∞ where (1-r²)x² ≥ 1 (only reachable as r → 0).
    pub fn eval(&self, x: f64) -> f64 {
        let arg = 1.0 - (1.0 - self.r * self.r) * x * x;
        if arg <= 0.0 {
            return f64::INFINITY;
        }
        let j = self.two_j as f64 / 2.0;
        j * (1.0 - self.r * self.r) / (2.0 * self.r * arg.sqrt())
    }

    /// Ground energy of the harmonic approximation, V₀ + ω.
    pub fn harmonic_ground_energy(&self) -> f64 {
        self.v0 + self.omega2.sqrt()
    }
}

/// Standalone potential evaluation, V^j(x) with the r = 1 limit pinned to 0.
pub fn potential(two_j: u32, r: f64, x: f64) -> Result<f64> {
    if x.abs() > 1.0 {
        return Err(Error::Domain(format!("x={x} outside [-1, 1]")));
    }
    if r == 1.0 {
        return Ok(0.0);
    }
    Ok(PotentialModel::new(two_j, r)?.eval(x))
}

/// Comparison of the exact discrete couplings against the continuum
/// potential: 2j²(1 - a^j_m) vs V^j(m/j) on the interior 80% of the range.
#[derive(Debug, Clone, Copy)]
pub struct ContinuumDeviation {
    pub max_relative: f64,
    pub samples: usize,
}

pub fn discrete_to_continuum_check(problem: &BlockProblem, r: f64) -> Result<ContinuumDeviation> {
    if problem.two_j < 40 {
        return Err(Error::Domain(
            "continuum comparison is meaningful for j ≥ 20".into(),
        ));
    }
    if r == 1.0 {
        // both sides vanish identically
        return Ok(ContinuumDeviation {
            max_relative: 0.0,
            samples: problem.a.len(),
        });
    }
    let model = PotentialModel::new(problem.two_j, r)?;
    let j = problem.two_j as f64 / 2.0;
    let mut max_rel = 0.0f64;
    let mut samples = 0;
    for (i, a) in problem.a.iter().enumerate() {
        let two_m = -(problem.two_j as i64) + 2 * i as i64;
        let x = two_m as f64 / 2.0 / j;
        if x.abs() > 0.8 {
            continue;
        }
        let discrete = 2.0 * j * j * (1.0 - a);
        let continuum = model.eval(x);
        max_rel = max_rel.max((discrete / continuum - 1.0).abs());
        samples += 1;
    }
    Ok(ContinuumDeviation {
        max_relative: max_rel,
        samples,
    })
}

/// Finite-difference solution of the continuum ground-state problem on
/// [-1, 1] with Dirichlet walls, optionally under the envelope constraint
/// φ(x) ≤ φ̃(x)/√s.
#[derive(Debug, Clone)]
pub struct ContinuumProfile {
    pub x: Vec<f64>,
    /// φ(x) on the grid, ∫φ² dx = 1.
    pub phi: Vec<f64>,
    /// The envelope φ̃(x) when a constraint was supplied.
    pub phi_tilde: Option<Vec<f64>>,
    /// ⟨φ|𝓗|φ⟩.
    pub energy: f64,
    /// energy / j².
    pub sigma2: f64,
    /// Outer-band coincidence boundary in x units, when constrained.
    pub x_c: Option<f64>,
}

/// The multicopy envelope in the continuum limit,
/// φ̃(x) = (jr/π)^{1/4} exp(-jr x²/2).
pub fn multicopy_envelope(two_j: u32, r: f64) -> impl Fn(f64) -> f64 {
    let j = two_j as f64 / 2.0;
    move |x: f64| (j * r / std::f64::consts::PI).powf(0.25) * (-0.5 * j * r * x * x).exp()
}

pub fn continuum_ground(
    two_j: u32,
    r: f64,
    constraint: Option<(&dyn Fn(f64) -> f64, f64)>,
    grid_points: usize,
) -> Result<ContinuumProfile> {
    if grid_points < 200 {
        return Err(Error::Domain(
            "continuum grid needs at least 200 points".into(),
        ));
    }
    if !(r > 0.0 && r <= 1.0) {
        return Err(Error::Domain(format!("noise strength r={r} outside (0, 1]")));
    }
    let n = grid_points;
    let h = 2.0 / (n as f64 + 1.0);
    let x: Vec<f64> = (1..=n).map(|i| -1.0 + i as f64 * h).collect();
    let j = two_j as f64 / 2.0;
    let v: Vec<f64> = if r == 1.0 {
        vec![0.0; n]
    } else {
        let model = PotentialModel::new(two_j, r)?;
        x.iter().map(|&xi| model.eval(xi)).collect()
    };
    let diag: Vec<f64> = v.iter().map(|vi| 2.0 / (h * h) + vi).collect();
    let off = vec![-1.0 / (h * h); n - 1];
    let t = SymTridiag::new(diag, off);

    let (psi, energy, x_c, phi_tilde) = match constraint {
        None => {
            let (energy, psi) = t.ground_state();
            (psi, energy, None, None)
        }
        Some((envelope, s)) => {
            if !(s > 0.0 && s <= 1.0) {
                return Err(Error::Domain(format!(
                    "success probability s={s} outside (0, 1]"
                )));
            }
            let tilde: Vec<f64> = x.iter().map(|&xi| envelope(xi)).collect();
            let rs = s.sqrt();
            // ψ_i = φ_i √h carries the unit 2-norm
            let bounds: Vec<f64> = tilde.iter().map(|e| e * h.sqrt() / rs).collect();
            let sol = solver::constrained_ground(&t, &bounds)?;
            let x_c = band_boundary(&x, &sol.pinned);
            (sol.x, sol.energy, x_c, Some(tilde))
        }
    };
    let phi: Vec<f64> = psi.iter().map(|p| p / h.sqrt()).collect();
    Ok(ContinuumProfile {
        x,
        phi,
        phi_tilde,
        energy,
        sigma2: energy / (j * j),
        x_c,
    })
}

/// Inner boundary of a band-shaped coincidence set. Near a hard wall the
/// solution drops below the envelope again (φ vanishes at ±1 while the bound
/// does not), so the saturated region is generally an annulus: at most one
/// pinned run per side, none of them covering the center.
fn band_boundary(x: &[f64], pinned: &[usize]) -> Option<f64> {
    if pinned.is_empty() {
        return None;
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
    let center = x
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
        .map(|(i, _)| i)
        .unwrap();
    let mut xc = f64::INFINITY;
    for (lo, hi) in runs {
        if (lo..=hi).contains(&center) {
            return None;
        }
        xc = xc.min(x[lo].abs().min(x[hi].abs()));
    }
    Some(xc)
}

/// Leading-order deterministic precision, σ²_det = 1/(n r²).
pub fn sigma_det_asymptotic(n: u32, r: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::Domain("qubit count must be positive".into()));
    }
    if r <= 0.0 || r > 1.0 {
        return Err(Error::Domain(format!(
            "deterministic asymptotic diverges at r={r}"
        )));
    }
    Ok(1.0 / (n as f64 * r * r))
}

/// The ultimate precision floor, σ²_ult = (1-r²)/(nr) (1 + √(2r/n)).
/// Degenerates at r = 1, where the Heisenberg value π²/n² applies instead.
pub fn sigma_ult(n: u32, r: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::Domain("qubit count must be positive".into()));
    }
    if !(0.0..1.0).contains(&r) || r == 0.0 {
        return Err(Error::Domain(format!(
            "ultimate-bound formula needs 0 < r < 1, got {r} (noiseless case scales as π²/n²)"
        )));
    }
    let nf = n as f64;
    Ok((1.0 - r * r) / (nf * r) * (1.0 + (2.0 * r / nf).sqrt()))
}

/// Finite-abstention approximation σ²(S̄) ≈ (1 - (r²/2) S̄)/(n r²).
pub fn sigma_finite_s(n: u32, r: f64, s_bar: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&s_bar) {
        return Err(Error::Domain(format!(
            "abstention probability S̄={s_bar} outside [0, 1)"
        )));
    }
    if n == 0 || r <= 0.0 || r > 1.0 {
        return Err(Error::Domain("need n ≥ 1 and 0 < r ≤ 1".into()));
    }
    Ok((1.0 - 0.5 * r * r * s_bar) / (n as f64 * r * r))
}

/// The two forms of the finite-abstention approximation: the closed
/// expression and the pure-state decomposition
/// (1-r²)/(nr²) + r σ²_pure(S) at n_eff = round(nr).
#[derive(Debug, Clone, Copy)]
pub struct FiniteAbstention {
    pub approx: f64,
    pub with_pure_term: f64,
    pub n_eff: u32,
}

pub fn sigma_finite_s_detailed(n: u32, r: f64, s_bar: f64) -> Result<FiniteAbstention> {
    let approx = sigma_finite_s(n, r, s_bar)?;
    let n_eff = ((n as f64 * r).round() as u32).max(1);
    let sigma2_pure = noiseless_sigma2(n_eff, 1.0 - s_bar)?;
    Ok(FiniteAbstention {
        approx,
        with_pure_term: (1.0 - r * r) / (n as f64 * r * r) + r * sigma2_pure,
        n_eff,
    })
}

/// σ²(S) of the noiseless (r = 1) problem at qubit count n: the discrete
/// maximal-block solve with the binomial envelope.
pub fn noiseless_sigma2(n: u32, s: f64) -> Result<f64> {
    let probe = ProbeSpec::multicopy(n)?;
    let envelope: Vec<f64> = {
        let mut e: Vec<f64> = probe.amplitudes().to_vec();
        e.reverse();
        e
    };
    let problem = BlockProblem {
        two_j: n,
        a: vec![1.0; n as usize],
        envelope,
    };
    Ok(problem.constrained_minimize(s)?.sigma2)
}

/// Optimal deterministic precision over probes,
/// σ²_op(1) = (1-r²)/(nr²) + 2√(1-r²)/(n^{3/2} r).
pub fn sigma_opt_det(n: u32, r: f64) -> Result<f64> {
    if n == 0 || !(r > 0.0 && r < 1.0) {
        return Err(Error::Domain(format!(
            "optimal-probe formula needs n ≥ 1 and 0 < r < 1, got n={n}, r={r}"
        )));
    }
    let nf = n as f64;
    Ok((1.0 - r * r) / (nf * r * r) + 2.0 * (1.0 - r * r).sqrt() / (nf.powf(1.5) * r))
}

/// The asymptotically optimal deterministic probe: Gaussian amplitudes
/// ψ(y) ∝ exp(-√(n(1-r²)) y²/(4r)) sampled at y = m/J.
pub fn optimal_probe_asymptotic(n: u32, r: f64) -> Result<ProbeSpec> {
    if n == 0 || !(r > 0.0 && r < 1.0) {
        return Err(Error::Domain(format!(
            "asymptotic probe needs n ≥ 1 and 0 < r < 1, got n={n}, r={r}"
        )));
    }
    let nf = n as f64;
    let coeff = (nf * (1.0 - r * r)).sqrt() / (4.0 * r);
    let mut amps: Vec<f64> = (0..=n)
        .map(|beta| {
            let y = (nf - 2.0 * beta as f64) / nf; // m/J, descending
            (-coeff * y * y).exp()
        })
        .collect();
    let norm = amps.iter().map(|c| c * c).sum::<f64>().sqrt();
    amps.iter_mut().for_each(|c| *c /= norm);
    ProbeSpec::custom(n, amps)
}

/// The conjectured finite-n probe,
/// c_m ∝ cos(mπ/(n+2)) exp(-√((1-r²)/(r²n³)) m²); the pure cosine at r = 1.
pub fn conjectured_probe(n: u32, r: f64) -> Result<ProbeSpec> {
    if n == 0 || !(r > 0.0 && r <= 1.0) {
        return Err(Error::Domain(format!(
            "conjectured probe needs n ≥ 1 and 0 < r ≤ 1, got n={n}, r={r}"
        )));
    }
    let nf = n as f64;
    let coeff = ((1.0 - r * r) / (r * r * nf * nf * nf)).sqrt();
    let mut amps: Vec<f64> = (0..=n)
        .map(|beta| {
            let m = (nf - 2.0 * beta as f64) / 2.0;
            (m * std::f64::consts::PI / (nf + 2.0)).cos() * (-coeff * m * m).exp()
        })
        .collect();
    let norm = amps.iter().map(|c| c * c).sum::<f64>().sqrt();
    amps.iter_mut().for_each(|c| *c /= norm);
    ProbeSpec::custom(n, amps)
}

/// Exponential-order scaling estimates (natural logarithms).
#[derive(Debug, Clone, Copy)]
pub struct ScalingLaws {
    /// ln p_J ≈ -n [ln 2 - ln(1+r)].
    pub ln_p_max_spin: f64,
    /// ln s*_J ≈ -2J ln(1+r) = -n ln(1+r).
    pub ln_s_star_max_spin: f64,
    /// ln S* = ln(p_J s*_J) ≈ -n ln 2, independent of r.
    pub ln_s_star_global: f64,
}

pub fn scaling_laws(n: u32, r: f64) -> Result<ScalingLaws> {
    if n == 0 || !(0.0..=1.0).contains(&r) {
        return Err(Error::Domain(format!(
            "scaling laws need n ≥ 1 and r ∈ [0, 1], got n={n}, r={r}"
        )));
    }
    let nf = n as f64;
    Ok(ScalingLaws {
        ln_p_max_spin: -nf * (std::f64::consts::LN_2 - (1.0 + r).ln()),
        ln_s_star_max_spin: -nf * (1.0 + r).ln(),
        ln_s_star_global: -nf * std::f64::consts::LN_2,
    })
}
