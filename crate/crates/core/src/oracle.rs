//! Brute-force validation at small qubit counts: dense 2^n construction of
//! the dephased state, direct fidelity/success evaluation in the
//! computational basis, worst-case-vs-average fidelity scans, exhaustive
//! small-dimension filter search, and the probe/seed symmetrization
//! spot-check.
//!
//! Everything here works in the computational basis `{|b⟩}` with `|b|` the
//! Hamming weight of `b`, independently of the block machinery it validates.

use crate::error::{Error, Result};
use crate::filter::{BlockProblem, FilterProfile};
use crate::spin::{big_binomial, ProbeSpec};
use nalgebra::DMatrix;
use rand::Rng;

pub const DENSE_CAP: u32 = 12;

fn check_cap(n: u32) -> Result<()> {
    if n == 0 || n > DENSE_CAP {
        return Err(Error::SizeLimit(format!(
            "dense oracle supports 1 ≤ n ≤ {DENSE_CAP}, got {n}"
        )));
    }
    Ok(())
}

/// The simultaneous (J², J_z) eigenbasis of n qubits, built by coupling one
/// qubit at a time with explicit Clebsch–Gordan coefficients. Each family is
/// one irreducible spin-j multiplet; the number of families with a given j
/// equals the multiplicity ν_j.
pub struct SpinBasis {
    pub n: u32,
    pub families: Vec<SpinFamily>,
}

pub struct SpinFamily {
    pub two_j: u32,
    /// Index i holds |j, m⟩ with m = -j + i, as a dense real vector.
    pub vectors: Vec<Vec<f64>>,
}

impl SpinBasis {
    pub fn build(n: u32) -> Result<Self> {
        check_cap(n)?;
        // single qubit: |1/2, -1/2⟩ = |1⟩ (bit set), |1/2, +1/2⟩ = |0⟩
        let mut families = vec![SpinFamily {
            two_j: 1,
            vectors: vec![vec![0.0, 1.0], vec![1.0, 0.0]],
        }];
        for k in 2..=n {
            let dim = 1usize << k;
            let high_bit = 1usize << (k - 1);
            let mut next: Vec<SpinFamily> = Vec::new();
            for fam in &families {
                let two_jp = fam.two_j;
                let up = |v: &Vec<f64>| -> Vec<f64> {
                    let mut out = vec![0.0; dim];
                    out[..v.len()].copy_from_slice(v);
                    out
                };
                let down = |v: &Vec<f64>| -> Vec<f64> {
                    let mut out = vec![0.0; dim];
                    for (b, x) in v.iter().enumerate() {
                        out[b | high_bit] = *x;
                    }
                    out
                };
                // j = j' + 1/2 always exists
                {
                    let two_j = two_jp + 1;
                    let mut vectors = Vec::with_capacity(two_j as usize + 1);
                    for i in 0..=two_j {
                        let two_m = -(two_j as i64) + 2 * i as i64;
                        let denom = 2.0 * (two_jp as f64 + 1.0);
                        let c_up = (((two_jp as i64 + two_m + 1) as f64) / denom).max(0.0).sqrt();
                        let c_down = (((two_jp as i64 - two_m + 1) as f64) / denom).max(0.0).sqrt();
                        let mut v = vec![0.0; dim];
                        // |j', m - 1/2⟩ ⊗ |0⟩ component
                        if two_m - 1 >= -(two_jp as i64) && two_m - 1 <= two_jp as i64 {
                            let idx = ((two_m - 1 + two_jp as i64) / 2) as usize;
                            for (b, x) in up(&fam.vectors[idx]).iter().enumerate() {
                                v[b] += c_up * x;
                            }
                        }
                        // |j', m + 1/2⟩ ⊗ |1⟩ component
                        if two_m + 1 >= -(two_jp as i64) && two_m + 1 <= two_jp as i64 {
                            let idx = ((two_m + 1 + two_jp as i64) / 2) as usize;
                            for (b, x) in down(&fam.vectors[idx]).iter().enumerate() {
                                v[b] += c_down * x;
                            }
                        }
                        vectors.push(v);
                    }
                    next.push(SpinFamily { two_j, vectors });
                }
                // j = j' - 1/2 exists for j' > 0
                if two_jp >= 1 {
                    let two_j = two_jp - 1;
                    let mut vectors = Vec::with_capacity(two_j as usize + 1);
                    for i in 0..=two_j {
                        let two_m = -(two_j as i64) + 2 * i as i64;
                        let denom = 2.0 * (two_jp as f64 + 1.0);
                        let c_up = -(((two_jp as i64 - two_m + 1) as f64) / denom).max(0.0).sqrt();
                        let c_down = (((two_jp as i64 + two_m + 1) as f64) / denom).max(0.0).sqrt();
                        let mut v = vec![0.0; dim];
                        if two_m - 1 >= -(two_jp as i64) && two_m - 1 <= two_jp as i64 {
                            let idx = ((two_m - 1 + two_jp as i64) / 2) as usize;
                            for (b, x) in up(&fam.vectors[idx]).iter().enumerate() {
                                v[b] += c_up * x;
                            }
                        }
                        if two_m + 1 >= -(two_jp as i64) && two_m + 1 <= two_jp as i64 {
                            let idx = ((two_m + 1 + two_jp as i64) / 2) as usize;
                            for (b, x) in down(&fam.vectors[idx]).iter().enumerate() {
                                v[b] += c_down * x;
                            }
                        }
                        vectors.push(v);
                    }
                    next.push(SpinFamily { two_j, vectors });
                }
            }
            families = next;
        }
        Ok(SpinBasis { n, families })
    }

    pub fn multiplicity_of(&self, two_j: u32) -> usize {
        self.families.iter().filter(|f| f.two_j == two_j).count()
    }
}

/// A dense dephased state, 2^n × 2^n, real symmetric PSD with unit trace.
#[derive(Debug, Clone)]
pub struct DenseState {
    pub n: u32,
    pub matrix: DMatrix<f64>,
}

impl DenseState {
    /// Entrywise dephasing of a real pure state: ρ_{b,b'} = r^{|b⊕b'|} ψ_b ψ_{b'}.
    pub fn dephase_amplitudes(n: u32, psi: &[f64], r: f64) -> Result<Self> {
        check_cap(n)?;
        let dim = 1usize << n;
        if psi.len() != dim {
            return Err(Error::Validation(format!(
                "expected {dim} amplitudes, got {}",
                psi.len()
            )));
        }
        let norm2: f64 = psi.iter().map(|x| x * x).sum();
        if (norm2 - 1.0).abs() > 1e-9 {
            return Err(Error::Validation(format!(
                "probe amplitudes not normalized: {norm2}"
            )));
        }
        let matrix = DMatrix::from_fn(dim, dim, |b, bp| {
            r.powi((b ^ bp).count_ones() as i32) * psi[b] * psi[bp]
        });
        Ok(DenseState { n, matrix })
    }

    /// Dense amplitudes of a symmetric probe: ψ_b = c_{J-|b|} / √C(n,|b|).
    pub fn symmetric_amplitudes(probe: &ProbeSpec) -> Vec<f64> {
        let n = probe.n();
        let dim = 1usize << n;
        (0..dim)
            .map(|b| {
                let beta = (b as u64).count_ones();
                let binom: f64 = big_binomial(n as u64, beta as u64)
                    .to_string()
                    .parse()
                    .unwrap();
                probe.amp_by_weight(beta) / binom.sqrt()
            })
            .collect()
    }

    pub fn dephase_probe(probe: &ProbeSpec, r: f64) -> Result<Self> {
        Self::dephase_amplitudes(probe.n(), &Self::symmetric_amplitudes(probe), r)
    }

    /// Project onto the spin-j sector: returns (p_j·ρ^j diag, p_j·ρ^j offdiag)
    /// by summing ⟨j,m',α|ρ|j,m,α⟩ over the multiplicity label α.
    pub fn block_band(&self, basis: &SpinBasis, two_j: u32) -> (Vec<f64>, Vec<f64>) {
        let dim = two_j as usize + 1;
        let mut diag = vec![0.0; dim];
        let mut off = vec![0.0; dim.saturating_sub(1)];
        for fam in basis.families.iter().filter(|f| f.two_j == two_j) {
            for i in 0..dim {
                let vi = &fam.vectors[i];
                diag[i] += self.sandwich(vi, vi);
                if i + 1 < dim {
                    off[i] += self.sandwich(vi, &fam.vectors[i + 1]);
                }
            }
        }
        (diag, off)
    }

    fn sandwich(&self, left: &[f64], right: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (b, lv) in left.iter().enumerate() {
            if *lv == 0.0 {
                continue;
            }
            for (bp, rv) in right.iter().enumerate() {
                acc += lv * self.matrix[(b, bp)] * rv;
            }
        }
        acc
    }
}

/// A dense measurement seed Ω.
#[derive(Debug, Clone)]
pub struct DenseSeed {
    pub n: u32,
    pub matrix: DMatrix<f64>,
}

impl DenseSeed {
    pub fn identity(n: u32) -> Result<Self> {
        check_cap(n)?;
        Ok(DenseSeed {
            n,
            matrix: DMatrix::identity(1 << n, 1 << n),
        })
    }

    pub fn from_matrix(n: u32, matrix: DMatrix<f64>) -> Result<Self> {
        check_cap(n)?;
        let dim = 1usize << n;
        if matrix.nrows() != dim || matrix.ncols() != dim {
            return Err(Error::Validation("seed dimension mismatch".into()));
        }
        Ok(DenseSeed { n, matrix })
    }

    /// The composite seed of the filter-then-canonical-measurement protocol:
    /// within each spin family, Ω = Σ_{m,m'} f_m f_{m'} |j,m,α⟩⟨j,m',α|.
    /// Spins absent from `profiles` get f ≡ 0.
    pub fn from_filters(basis: &SpinBasis, profiles: &[(u32, FilterProfile)]) -> Self {
        let dim = 1usize << basis.n;
        let mut matrix = DMatrix::zeros(dim, dim);
        for fam in &basis.families {
            let Some((_, prof)) = profiles.iter().find(|(two_j, _)| *two_j == fam.two_j) else {
                continue;
            };
            // rank-1 within the family: v = Σ_m f_m |j,m,α⟩
            let mut v = vec![0.0; dim];
            for (i, f) in prof.f.iter().enumerate() {
                for (b, x) in fam.vectors[i].iter().enumerate() {
                    v[b] += f * x;
                }
            }
            for b in 0..dim {
                if v[b] == 0.0 {
                    continue;
                }
                for bp in 0..dim {
                    matrix[(b, bp)] += v[b] * v[bp];
                }
            }
        }
        DenseSeed {
            n: basis.n,
            matrix,
        }
    }

    /// POVM validity: Ω ⪰ 0 and the weight-diagonal part (what survives the
    /// phase average) at most the identity.
    pub fn validate_povm(&self) -> Result<()> {
        let min_eig = self.matrix.clone().symmetric_eigen().eigenvalues.min();
        if min_eig < -1e-9 {
            return Err(Error::Validation(format!(
                "seed is not positive semidefinite: min eigenvalue {min_eig}"
            )));
        }
        let dim = self.matrix.nrows();
        let mut avg = DMatrix::zeros(dim, dim);
        for b in 0..dim {
            for bp in 0..dim {
                if (b as u64).count_ones() == (bp as u64).count_ones() {
                    avg[(b, bp)] = self.matrix[(b, bp)];
                }
            }
        }
        let max_eig = avg.symmetric_eigen().eigenvalues.max();
        if max_eig > 1.0 + 1e-9 {
            return Err(Error::Validation(format!(
                "phase-averaged seed exceeds the identity: max eigenvalue {max_eig}"
            )));
        }
        Ok(())
    }

    /// Whether 0 ≤ Ω ≤ 1 (the stronger condition used by the symmetrization
    /// argument).
    pub fn is_contraction(&self) -> bool {
        let eig = self.matrix.clone().symmetric_eigen().eigenvalues;
        eig.min() > -1e-12 && eig.max() < 1.0 + 1e-12
    }
}

/// Direct fidelity and success probability in the computational basis:
/// F = (1 + Δ/S)/2 with Δ the |b'| = |b|+1 correlation, S the equal-weight one.
pub fn direct_fidelity(state: &DenseState, seed: &DenseSeed) -> Result<(f64, f64)> {
    if state.n != seed.n {
        return Err(Error::Validation("state/seed size mismatch".into()));
    }
    let dim = 1usize << state.n;
    let mut delta = 0.0;
    let mut s = 0.0;
    for b in 0..dim {
        let wb = (b as u64).count_ones();
        for bp in 0..dim {
            let wbp = (bp as u64).count_ones();
            if wbp == wb {
                s += seed.matrix[(b, bp)] * state.matrix[(bp, b)];
            } else if wbp == wb + 1 {
                delta += seed.matrix[(b, bp)] * state.matrix[(bp, b)];
            }
        }
    }
    if s < 1e-14 {
        return Err(Error::Domain(format!(
            "success probability {s} too small for a conditional fidelity"
        )));
    }
    Ok((0.5 * (1.0 + delta / s), s))
}

/// The measurement family scanned by [`theta_scan`].
pub enum MeasurementFamily<'a> {
    /// M(θ̂) = U(θ̂) Ω U†(θ̂) / 2π — covariant, so F(θ) is flat.
    Covariant(&'a DenseSeed),
    /// M(θ̂) = U(h(θ̂)) Ω U†(h(θ̂)) / 2π with h(θ̂) = θ̂ + ε sin θ̂: a distorted
    /// estimator that breaks covariance, making the worst case strictly
    /// worse than the average.
    Distorted { seed: &'a DenseSeed, epsilon: f64 },
}

/// Scan p(θ̂|θ, succ) on a grid and return (worst-case, average) fidelity.
pub fn theta_scan(
    state: &DenseState,
    family: &MeasurementFamily,
    n_theta: usize,
    n_estimate: usize,
) -> Result<(f64, f64)> {
    let (seed, epsilon) = match family {
        MeasurementFamily::Covariant(s) => (*s, 0.0),
        MeasurementFamily::Distorted { seed, epsilon } => (*seed, *epsilon),
    };
    if state.n != seed.n {
        return Err(Error::Validation("state/seed size mismatch".into()));
    }
    if n_theta < 256 || n_estimate < 256 {
        return Err(Error::Validation(
            "theta_scan grids need at least 256 points".into(),
        ));
    }
    // weight-difference correlations: C_l = Σ_{|b'|-|b| = l} Ω_{b,b'} ρ_{b',b}
    let dim = 1usize << state.n;
    let nmax = state.n as i64;
    let mut corr = vec![0.0f64; (2 * nmax + 1) as usize];
    for b in 0..dim {
        let wb = (b as u64).count_ones() as i64;
        for bp in 0..dim {
            let l = (bp as u64).count_ones() as i64 - wb;
            corr[(l + nmax) as usize] += seed.matrix[(b, bp)] * state.matrix[(bp, b)];
        }
    }
    // g(Δ) = Σ_l C_l cos(l Δ); p(θ̂|θ) ∝ g(h(θ̂) - θ)
    let g = |delta: f64| -> f64 {
        let mut acc = corr[nmax as usize];
        for l in 1..=nmax {
            acc += 2.0 * corr[(l + nmax) as usize] * (l as f64 * delta).cos();
        }
        acc
    };
    let h = |theta_hat: f64| theta_hat + epsilon * theta_hat.sin();

    let two_pi = 2.0 * std::f64::consts::PI;
    let mut f_worst = f64::INFINITY;
    let mut f_sum = 0.0;
    for it in 0..n_theta {
        let theta = -std::f64::consts::PI + two_pi * it as f64 / n_theta as f64;
        let mut norm = 0.0;
        let mut fid = 0.0;
        for ie in 0..n_estimate {
            let theta_hat = -std::f64::consts::PI + two_pi * ie as f64 / n_estimate as f64;
            let p = g(h(theta_hat) - theta).max(0.0);
            norm += p;
            fid += p * 0.5 * (1.0 + (theta - theta_hat).cos());
        }
        if norm <= 0.0 {
            return Err(Error::Domain("measurement family has no weight".into()));
        }
        let f_theta = fid / norm;
        f_worst = f_worst.min(f_theta);
        f_sum += f_theta;
    }
    Ok((f_worst, f_sum / n_theta as f64))
}

/// Multi-start projected-descent search for the per-block optimum at fixed s,
/// over the feasible set {‖ξ‖ = 1, 0 ≤ ξ ≤ envelope/√s}. Independent of the
/// active-set path; dimensions ≤ 5.
pub fn exhaustive_filter_search<R: Rng>(
    problem: &BlockProblem,
    s: f64,
    starts: usize,
    rng: &mut R,
) -> Result<f64> {
    let dim = problem.dim();
    if dim > 5 {
        return Err(Error::SizeLimit(format!(
            "exhaustive search limited to dimension 5, got {dim}"
        )));
    }
    let h = problem.hamiltonian();
    let rs = s.sqrt();
    let bounds: Vec<f64> = problem.envelope.iter().map(|e| e / rs).collect();

    let project = |v: &[f64]| -> Option<Vec<f64>> {
        let mut x = v.to_vec();
        for _ in 0..200 {
            for (xi, b) in x.iter_mut().zip(&bounds) {
                *xi = xi.clamp(0.0, *b);
            }
            let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < 1e-12 {
                return None;
            }
            x.iter_mut().for_each(|v| *v /= norm);
            let feasible = x.iter().zip(&bounds).all(|(xi, b)| *xi <= b + 1e-12);
            if feasible {
                return Some(x);
            }
        }
        None
    };

    let mut best = f64::INFINITY;
    let value_of_start = |start: Vec<f64>, best: &mut f64| {
        let Some(mut x) = project(&start) else {
            return;
        };
        let mut energy = h.quadratic_form(&x);
        let mut step = 0.5;
        for _ in 0..400 {
            let grad = h.matvec(&x);
            let trial: Vec<f64> = x.iter().zip(&grad).map(|(xi, g)| xi - step * g).collect();
            match project(&trial) {
                Some(candidate) => {
                    let cand_energy = h.quadratic_form(&candidate);
                    if cand_energy < energy - 1e-15 {
                        x = candidate;
                        energy = cand_energy;
                    } else {
                        step *= 0.5;
                        if step < 1e-10 {
                            break;
                        }
                    }
                }
                None => {
                    step *= 0.5;
                }
            }
        }
        *best = best.min(energy);
    };

    // active-set answer as one start, then random restarts
    if let Ok(sol) = problem.constrained_minimize(s) {
        value_of_start(sol.xi, &mut best);
    }
    for _ in 0..starts {
        let start: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.0..1.0)).collect();
        value_of_start(start, &mut best);
    }
    Ok(best)
}

/// Result of the probe/seed symmetrization spot-check.
#[derive(Debug, Clone, Copy)]
pub struct SymmetrizationReport {
    pub trials: usize,
    pub max_delta_deviation: f64,
    pub max_success_deviation: f64,
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 1 {
        return vec![vec![0]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..n {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

/// Apply the qubit permutation to a basis index: bit i of the result is bit
/// perm[i] of b.
fn permute_bits(b: usize, perm: &[usize]) -> usize {
    let mut out = 0usize;
    for (i, &src) in perm.iter().enumerate() {
        if (b >> src) & 1 == 1 {
            out |= 1 << i;
        }
    }
    out
}

/// Δ and S of a probe/seed pair: Δ = tr[(ψ∘Ω) D₁], S = tr[(ψ∘Ω) D₀], i.e. the
/// numerator of the fidelity and the success probability of the dephased state.
fn delta_success(n: u32, psi: &[f64], omega: &DMatrix<f64>, r: f64) -> (f64, f64) {
    let dim = 1usize << n;
    let mut delta = 0.0;
    let mut s = 0.0;
    for b in 0..dim {
        let wb = (b as u64).count_ones();
        for bp in 0..dim {
            let wbp = (bp as u64).count_ones();
            let v = psi[b] * psi[bp]
                * omega[(b, bp)]
                * r.powi((b ^ bp).count_ones() as i32);
            if wbp == wb {
                s += v;
            } else if wbp == wb + 1 {
                delta += v;
            }
        }
    }
    (delta, s)
}

/// For random (generally non-symmetric) probes and random seeds, build the
/// symmetrized pair (ψ_sym, Ω_sym) and verify that it attains identical
/// (Δ, S).
pub fn symmetric_optimality_check<R: Rng>(
    n: u32,
    r: f64,
    trials: usize,
    rng: &mut R,
) -> Result<SymmetrizationReport> {
    if n > 3 {
        return Err(Error::SizeLimit(
            "symmetrization check enumerates n! permutations; n ≤ 3 only".into(),
        ));
    }
    check_cap(n)?;
    let dim = 1usize << n;
    let perms = permutations(n as usize);
    let mut max_delta_dev = 0.0f64;
    let mut max_s_dev = 0.0f64;

    for _ in 0..trials {
        // random nonnegative probe
        let mut psi: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.01..1.0)).collect();
        let norm = psi.iter().map(|x| x * x).sum::<f64>().sqrt();
        psi.iter_mut().for_each(|x| *x /= norm);
        // random seed with eigenvalues clamped into [0, 1]
        let g = DMatrix::from_fn(dim, dim, |_, _| rng.gen_range(-1.0..1.0));
        let sym = (g.clone() + g.transpose()).scale(0.5);
        let eig = sym.symmetric_eigen();
        let clamped = DMatrix::from_diagonal(&eig.eigenvalues.map(|e: f64| e.clamp(0.0, 1.0)));
        let omega = &eig.eigenvectors * clamped * eig.eigenvectors.transpose();

        let (delta, s) = delta_success(n, &psi, &omega, r);

        // weight-class amplitudes and the auxiliary |φ⟩
        let mut psi_beta2 = vec![0.0f64; n as usize + 1];
        for (b, x) in psi.iter().enumerate() {
            psi_beta2[(b as u64).count_ones() as usize] += x * x;
        }
        let psi_beta: Vec<f64> = psi_beta2.iter().map(|v| v.sqrt()).collect();
        let mut phi = vec![0.0f64; dim];
        for (b, x) in psi.iter().enumerate() {
            let beta = (b as u64).count_ones() as usize;
            let binom: f64 = big_binomial(n as u64, beta as u64).to_string().parse().unwrap();
            phi[b] = if psi_beta[beta] > 0.0 {
                binom.sqrt() * x / psi_beta[beta]
            } else {
                1.0 // unreachable for the sampled probes
            };
        }
        // Ω_sym = (1/n!) Σ_π U_π (φ∘Ω) U_π†
        let mut omega_sym = DMatrix::zeros(dim, dim);
        for perm in &perms {
            for b in 0..dim {
                for bp in 0..dim {
                    omega_sym[(permute_bits(b, perm), permute_bits(bp, perm))] +=
                        phi[b] * phi[bp] * omega[(b, bp)];
                }
            }
        }
        omega_sym /= perms.len() as f64;
        // ψ_sym: the symmetric state with weight-class amplitudes ψ_β
        let psi_sym: Vec<f64> = (0..dim)
            .map(|b| {
                let beta = (b as u64).count_ones() as usize;
                let binom: f64 =
                    big_binomial(n as u64, beta as u64).to_string().parse().unwrap();
                psi_beta[beta] / binom.sqrt()
            })
            .collect();

        // the symmetrized seed must still be a valid contraction
        let seed = DenseSeed::from_matrix(n, omega_sym.clone())?;
        if !seed.is_contraction() {
            return Err(Error::Inconsistent(
                "symmetrized seed left the [0, 1] operator interval".into(),
            ));
        }

        let (delta_sym, s_sym) = delta_success(n, &psi_sym, &omega_sym, r);
        max_delta_dev = max_delta_dev.max((delta - delta_sym).abs());
        max_s_dev = max_s_dev.max((s - s_sym).abs());
    }
    Ok(SymmetrizationReport {
        trials,
        max_delta_deviation: max_delta_dev,
        max_success_deviation: max_s_dev,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::block_problems;
    use crate::spin::{decompose, NoiseModel};
    use approx::assert_relative_eq;
    use rand::SeedableRng;

    #[test]
    fn spin_basis_is_orthonormal_with_correct_multiplicities() {
        for n in 1..=6u32 {
            let basis = SpinBasis::build(n).unwrap();
            let mut all: Vec<(&Vec<f64>, u32, i64)> = Vec::new();
            for fam in &basis.families {
                for (i, v) in fam.vectors.iter().enumerate() {
                    all.push((v, fam.two_j, -(fam.two_j as i64) + 2 * i as i64));
                }
            }
            assert_eq!(all.len(), 1 << n);
            for (a, (va, _, _)) in all.iter().enumerate() {
                for (b, (vb, _, _)) in all.iter().enumerate() {
                    let dot: f64 = va.iter().zip(vb.iter()).map(|(x, y)| x * y).sum();
                    let expect = if a == b { 1.0 } else { 0.0 };
                    assert!(
                        (dot - expect).abs() < 1e-12,
                        "n={n}: ⟨{a}|{b}⟩ = {dot}"
                    );
                }
            }
            for two_j in (n % 2..=n).step_by(2) {
                let nu: f64 = crate::spin::multiplicity(n, two_j).to_string().parse().unwrap();
                assert_eq!(basis.multiplicity_of(two_j), nu as usize, "n={n} j={two_j}/2");
            }
        }
    }

    #[test]
    fn spin_basis_diagonalizes_jz_and_j2() {
        // J_z |j,m⟩ = m |j,m⟩ and the lowering ladder is consistent
        for n in 1..=4u32 {
            let basis = SpinBasis::build(n).unwrap();
            let dim = 1usize << n;
            for fam in &basis.families {
                for (i, v) in fam.vectors.iter().enumerate() {
                    let two_m = -(fam.two_j as i64) + 2 * i as i64;
                    for b in 0..dim {
                        let mz = n as i64 - 2 * (b as u64).count_ones() as i64; // 2·m_z of |b⟩
                        if mz != two_m {
                            assert!(
                                v[b].abs() < 1e-12,
                                "n={n}: J_z mixing at b={b}: {}",
                                v[b]
                            );
                        }
                    }
                }
                // J_- in the computational basis maps |b⟩ to Σ over cleared bits
                if fam.two_j >= 2 {
                    for i in 1..fam.vectors.len() {
                        let upper = &fam.vectors[i]; // m
                        let lower = &fam.vectors[i - 1]; // m-1
                        let two_m = -(fam.two_j as i64) + 2 * i as i64;
                        let j = fam.two_j as f64 / 2.0;
                        let m = two_m as f64 / 2.0;
                        let coeff = ((j + m) * (j - m + 1.0)).sqrt();
                        let mut applied = vec![0.0; dim];
                        for b in 0..dim {
                            if upper[b] == 0.0 {
                                continue;
                            }
                            for q in 0..n {
                                if (b >> q) & 1 == 0 {
                                    applied[b | (1 << q)] += upper[b];
                                }
                            }
                        }
                        for b in 0..dim {
                            assert!(
                                (applied[b] - coeff * lower[b]).abs() < 1e-10,
                                "ladder mismatch at n={n}, j={} m={m}",
                                j
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn dense_dephase_single_qubit() {
        for r in [0.0, 0.5, 1.0] {
            let s = DenseState::dephase_amplitudes(
                1,
                &[std::f64::consts::FRAC_1_SQRT_2; 2],
                r,
            )
            .unwrap();
            assert_relative_eq!(s.matrix[(0, 0)], 0.5, epsilon = 1e-15);
            assert_relative_eq!(s.matrix[(0, 1)], r / 2.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn dense_dephase_preserves_pure_state_at_r1() {
        let probe = ProbeSpec::multicopy(3).unwrap();
        let psi = DenseState::symmetric_amplitudes(&probe);
        let s = DenseState::dephase_amplitudes(3, &psi, 1.0).unwrap();
        for b in 0..8 {
            for bp in 0..8 {
                assert_relative_eq!(s.matrix[(b, bp)], psi[b] * psi[bp], epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn dense_state_psd_and_trace() {
        let probe = ProbeSpec::multicopy(4).unwrap();
        let s = DenseState::dephase_probe(&probe, 0.35).unwrap();
        assert_relative_eq!(s.matrix.trace(), 1.0, epsilon = 1e-12);
        let min_eig = s.matrix.clone().symmetric_eigen().eigenvalues.min();
        assert!(min_eig > -1e-12);
    }

    #[test]
    fn dephasing_commutes_with_phase_rotation() {
        // D(U ψ U†) = U D(ψ) U† entrywise, checked on real and imaginary parts
        let n = 3u32;
        let dim = 1usize << n;
        let probe = ProbeSpec::multicopy(n).unwrap();
        let psi = DenseState::symmetric_amplitudes(&probe);
        let r: f64 = 0.6;
        let theta = 0.7341;
        for b in 0..dim {
            for bp in 0..dim {
                let phase =
                    theta * ((b as u64).count_ones() as f64 - (bp as u64).count_ones() as f64);
                let damp = r.powi((b ^ bp).count_ones() as i32);
                // rotate-then-dephase
                let re1 = damp * psi[b] * psi[bp] * phase.cos();
                let im1 = damp * psi[b] * psi[bp] * phase.sin();
                // dephase-then-rotate
                let re2 = psi[b] * psi[bp] * damp * phase.cos();
                let im2 = psi[b] * psi[bp] * damp * phase.sin();
                assert!((re1 - re2).abs() < 1e-14);
                assert!((im1 - im2).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn block_projection_matches_decompose() {
        for n in 1..=4u32 {
            let basis = SpinBasis::build(n).unwrap();
            let probe = ProbeSpec::multicopy(n).unwrap();
            for r in [0.2, 0.5, 0.8, 1.0] {
                let noise = NoiseModel::new(r).unwrap();
                let dense = DenseState::dephase_probe(&probe, r).unwrap();
                let decomp = decompose(&probe, &noise);
                for block in &decomp.blocks {
                    let (diag, off) = dense.block_band(&basis, block.two_j);
                    for i in 0..block.dim() {
                        assert!(
                            (diag[i] - block.p * block.diag[i]).abs() < 1e-12,
                            "n={n} r={r} j={} diag[{i}]",
                            block.j()
                        );
                        if i + 1 < block.dim() {
                            assert!(
                                (off[i] - block.p * block.offdiag[i]).abs() < 1e-12,
                                "n={n} r={r} j={} off[{i}]",
                                block.j()
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn identity_seed_fidelity_floor() {
        // Ω = 1 keeps S = 1 and carries no phase information: F = 1/2
        let probe = ProbeSpec::multicopy(3).unwrap();
        let state = DenseState::dephase_probe(&probe, 0.8).unwrap();
        let seed = DenseSeed::identity(3).unwrap();
        let (f, s) = direct_fidelity(&state, &seed).unwrap();
        assert_relative_eq!(f, 0.5, epsilon = 1e-14);
        assert_relative_eq!(s, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn single_qubit_canonical_seed() {
        // all-ones filter at n=1: F = 1/2 + r/4, S = 1
        let basis = SpinBasis::build(1).unwrap();
        let probe = ProbeSpec::multicopy(1).unwrap();
        for r in [0.0, 0.4, 0.8] {
            let state = DenseState::dephase_probe(&probe, r).unwrap();
            let seed = DenseSeed::from_filters(&basis, &[(1, FilterProfile::ones(2))]);
            seed.validate_povm().unwrap();
            let (f, s) = direct_fidelity(&state, &seed).unwrap();
            assert_relative_eq!(f, 0.5 + r / 4.0, epsilon = 1e-13);
            assert_relative_eq!(s, 1.0, epsilon = 1e-13);
        }
    }

    #[test]
    fn filter_seed_reproduces_block_formula() {
        // deterministic filters on all blocks: F from the dense route equals
        // the band formula
        for n in 2..=4u32 {
            let basis = SpinBasis::build(n).unwrap();
            let probe = ProbeSpec::multicopy(n).unwrap();
            for r in [0.3, 0.7] {
                let noise = NoiseModel::new(r).unwrap();
                let decomp = decompose(&probe, &noise);
                let profiles: Vec<(u32, FilterProfile)> = decomp
                    .blocks
                    .iter()
                    .map(|b| (b.two_j, FilterProfile::ones(b.dim())))
                    .collect();
                let seed = DenseSeed::from_filters(&basis, &profiles);
                seed.validate_povm().unwrap();
                let state = DenseState::dephase_probe(&probe, r).unwrap();
                let (f, s) = direct_fidelity(&state, &seed).unwrap();
                let f_block = 0.5
                    * (1.0
                        + decomp
                            .blocks
                            .iter()
                            .map(|b| b.p * b.offdiag.iter().sum::<f64>())
                            .sum::<f64>());
                assert_relative_eq!(f, f_block, epsilon = 1e-12);
                assert_relative_eq!(s, 1.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn theta_scan_single_qubit() {
        let basis = SpinBasis::build(1).unwrap();
        let probe = ProbeSpec::multicopy(1).unwrap();
        let state = DenseState::dephase_probe(&probe, 0.8).unwrap();
        let seed = DenseSeed::from_filters(&basis, &[(1, FilterProfile::ones(2))]);
        let (worst, avg) =
            theta_scan(&state, &MeasurementFamily::Covariant(&seed), 512, 512).unwrap();
        assert_relative_eq!(worst, 0.7, epsilon = 1e-9);
        assert_relative_eq!(avg, 0.7, epsilon = 1e-9);
    }

    #[test]
    fn theta_scan_covariant_equality_and_distorted_gap() {
        let n = 2u32;
        let basis = SpinBasis::build(n).unwrap();
        let probe = ProbeSpec::multicopy(n).unwrap();
        let state = DenseState::dephase_probe(&probe, 0.5).unwrap();
        let profiles: Vec<(u32, FilterProfile)> = decompose(
            &probe,
            &NoiseModel::new(0.5).unwrap(),
        )
        .blocks
        .iter()
        .map(|b| (b.two_j, FilterProfile::ones(b.dim())))
        .collect();
        let seed = DenseSeed::from_filters(&basis, &profiles);
        let (worst, avg) =
            theta_scan(&state, &MeasurementFamily::Covariant(&seed), 512, 512).unwrap();
        assert!((worst - avg).abs() < 1e-6, "covariant: {worst} vs {avg}");
        let (worst_d, avg_d) = theta_scan(
            &state,
            &MeasurementFamily::Distorted {
                seed: &seed,
                epsilon: 0.35,
            },
            512,
            512,
        )
        .unwrap();
        assert!(
            worst_d < avg_d - 1e-6,
            "distorted family should break the equality: {worst_d} vs {avg_d}"
        );
    }

    #[test]
    fn exhaustive_search_validates_active_set() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        let probe = ProbeSpec::multicopy(4).unwrap();
        let noise = NoiseModel::new(0.6).unwrap();
        let decomp = decompose(&probe, &noise);
        let problems = block_problems(&decomp).unwrap();
        for problem in problems.iter().filter(|p| p.dim() <= 5) {
            for s in [0.4, 0.6, 0.95] {
                let brute = exhaustive_filter_search(problem, s, 200, &mut rng).unwrap();
                let solved = problem.constrained_minimize(s).unwrap().sigma2;
                assert!(
                    solved <= brute + 1e-5,
                    "dim {} s={s}: active set {} vs brute {}",
                    problem.dim(),
                    solved,
                    brute
                );
                // and the brute force should not beat the solver materially
                assert!(brute >= solved - 1e-7);
            }
        }
    }

    #[test]
    fn exhaustive_search_two_dim_cases() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(29);
        let probe = ProbeSpec::multicopy(1).unwrap();
        let noise = NoiseModel::new(0.8).unwrap();
        let decomp = decompose(&probe, &noise);
        let problem = BlockProblem::from_block(&decomp.blocks[0], &noise).unwrap();
        // s = 1: the envelope is the only feasible point
        let v = exhaustive_filter_search(&problem, 1.0, 50, &mut rng).unwrap();
        assert_relative_eq!(v, 2.0 - 0.8, epsilon = 1e-9);
        // any s: ground energy 2 - a (s* = 1 for this block)
        let v = exhaustive_filter_search(&problem, 0.5, 50, &mut rng).unwrap();
        assert_relative_eq!(v, 2.0 - 0.8, epsilon = 1e-6);
    }

    #[test]
    fn symmetrization_preserves_delta_and_success() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        for (n, r) in [(1u32, 0.5), (2, 0.5), (3, 0.9)] {
            let report = symmetric_optimality_check(n, r, 40, &mut rng).unwrap();
            assert!(
                report.max_delta_deviation < 1e-10,
                "n={n}: Δ deviation {}",
                report.max_delta_deviation
            );
            assert!(
                report.max_success_deviation < 1e-10,
                "n={n}: S deviation {}",
                report.max_success_deviation
            );
        }
    }

    #[test]
    fn symmetrization_fixes_symmetric_probes() {
        // a probe already symmetric: ψ_sym equals it exactly
        let n = 2u32;
        let probe = ProbeSpec::multicopy(n).unwrap();
        let psi = DenseState::symmetric_amplitudes(&probe);
        let mut psi_beta2 = vec![0.0f64; n as usize + 1];
        for (b, x) in psi.iter().enumerate() {
            psi_beta2[(b as u64).count_ones() as usize] += x * x;
        }
        for (b, x) in psi.iter().enumerate() {
            let beta = (b as u64).count_ones() as usize;
            let binom: f64 = big_binomial(n as u64, beta as u64).to_string().parse().unwrap();
            assert_relative_eq!(*x, psi_beta2[beta].sqrt() / binom.sqrt(), epsilon = 1e-12);
        }
    }

    #[test]
    fn oracle_rejects_oversized_inputs() {
        assert!(SpinBasis::build(13).is_err());
        assert!(DenseState::dephase_amplitudes(13, &[0.0; 1 << 13], 0.5).is_err());
        assert!(symmetric_optimality_check(4, 0.5, 1, &mut rand::thread_rng()).is_err());
    }
}
