//! Total-spin block decomposition of a dephased symmetric probe.
//!
//! An `n`-qubit permutation-invariant probe, after uncorrelated dephasing of
//! strength `r`, becomes block diagonal in the total-spin basis:
//! `ρ = Σ_j p_j ρ^j ⊗ 1_j/ν_j`. This module computes the per-block
//! probabilities `p_j`, multiplicities `ν_j` and the tridiagonal band of each
//! `ρ^j` with log-domain Clebsch–Gordan arithmetic, so that probe sizes well
//! beyond the overflow point of `C(n, n/2)` remain usable.
//!
//! Spins are handled as twice-spin integers (`two_j`, `two_m`) so that odd
//! qubit counts need no floating-point index arithmetic. Within a block,
//! vectors are stored in ascending `m` order: index `i` holds `m = -j + i`.

use crate::error::{Error, Result};
use num_bigint::BigUint;
use statrs::function::gamma::ln_gamma;

/// Local dephasing noise, parametrized by the coherence survival factor `r`.
///
/// `r = 1` is noiseless, `r = 0` fully dephased. The per-qubit phase-flip
/// probability is `p_f = (1 - r)/2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    r: f64,
}

impl NoiseModel {
    pub fn new(r: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&r) || !r.is_finite() {
            return Err(Error::Domain(format!("noise strength r={r} outside [0, 1]")));
        }
        Ok(NoiseModel { r })
    }

    pub fn from_flip_probability(p_f: f64) -> Result<Self> {
        if !(0.0..=0.5).contains(&p_f) {
            return Err(Error::Domain(format!(
                "phase-flip probability p_f={p_f} outside [0, 1/2]"
            )));
        }
        Self::new(1.0 - 2.0 * p_f)
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn flip_probability(&self) -> f64 {
        (1.0 - self.r) / 2.0
    }
}

/// How the probe amplitudes were produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeKind {
    /// `n` identical equatorial qubits, `c_m = sqrt(C(n, J-m)/2^n)`.
    Multicopy,
    /// Arbitrary nonnegative amplitudes supplied by the caller or a file.
    Custom,
}

/// A symmetric `n`-qubit probe `|ψ⟩ = Σ_m c_m |J, m⟩` with `J = n/2`.
///
/// Amplitudes are stored indexed by the Hamming weight `β = J - m`,
/// i.e. `amps[0] = c_J` down to `amps[n] = c_{-J}`, matching the probe file
/// layout. All amplitudes are nonnegative and the vector has unit norm.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSpec {
    n: u32,
    kind: ProbeKind,
    amps: Vec<f64>,
}

pub const NORM_TOLERANCE: f64 = 1e-9;

impl ProbeSpec {
    /// The n-fold product of equatorial qubits, expanded over the symmetric basis.
    pub fn multicopy(n: u32) -> Result<Self> {
        if n == 0 {
            return Err(Error::Domain("qubit count n must be positive".into()));
        }
        let ln2 = std::f64::consts::LN_2;
        let amps = (0..=n)
            .map(|beta| (0.5 * (log_binomial(n as u64, beta as u64).unwrap() - n as f64 * ln2)).exp())
            .collect();
        Ok(ProbeSpec {
            n,
            kind: ProbeKind::Multicopy,
            amps,
        })
    }

    /// Custom probe from amplitudes listed for m = J down to -J.
    pub fn custom(n: u32, amps: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::Domain("qubit count n must be positive".into()));
        }
        if amps.len() != n as usize + 1 {
            return Err(Error::Validation(format!(
                "expected {} amplitudes for n={n}, got {}",
                n + 1,
                amps.len()
            )));
        }
        if amps.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::Validation(
                "probe amplitudes must be finite and nonnegative".into(),
            ));
        }
        let norm2: f64 = amps.iter().map(|c| c * c).sum();
        if (norm2 - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::Validation(format!(
                "probe amplitudes not normalized: Σ c_m² = {norm2:.12}"
            )));
        }
        Ok(ProbeSpec {
            n,
            kind: ProbeKind::Custom,
            amps,
        })
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn kind(&self) -> ProbeKind {
        self.kind
    }

    /// Twice the maximal spin, `2J = n`.
    pub fn two_big_j(&self) -> u32 {
        self.n
    }

    /// Amplitude `c_m` addressed by Hamming weight `β = J - m`.
    pub fn amp_by_weight(&self, beta: u32) -> f64 {
        self.amps[beta as usize]
    }

    /// Amplitude `c_m` addressed by twice the magnetic number.
    pub fn amp(&self, two_m: i64) -> f64 {
        let beta = (self.n as i64 - two_m) / 2;
        self.amps[beta as usize]
    }

    /// Amplitudes for m = J down to -J (the file order).
    pub fn amplitudes(&self) -> &[f64] {
        &self.amps
    }

    /// Parse the plain-text probe format: `n=<int>` header, then one
    /// amplitude per line for m = J down to -J. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter_map(|l| {
            let l = l.split('#').next().unwrap_or("").trim();
            if l.is_empty() {
                None
            } else {
                Some(l)
            }
        });
        let header = lines
            .next()
            .ok_or_else(|| Error::Validation("empty probe file".into()))?;
        let n: u32 = header
            .strip_prefix("n=")
            .ok_or_else(|| Error::Validation(format!("expected `n=<int>` header, got `{header}`")))?
            .trim()
            .parse()
            .map_err(|e| Error::Validation(format!("bad qubit count in header: {e}")))?;
        let amps = lines
            .map(|l| {
                l.parse::<f64>()
                    .map_err(|e| Error::Validation(format!("bad amplitude `{l}`: {e}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        Self::custom(n, amps)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Serialize in the probe file format (12 significant digits).
    pub fn to_file_string(&self) -> String {
        let mut out = format!("n={}\n", self.n);
        for c in &self.amps {
            out.push_str(&crate::fmt::sig12(*c));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_file_string())?;
        Ok(())
    }
}

/// One total-spin-j sector of the dephased probe.
///
/// `diag[i] = ρ^j_{m,m}` and `offdiag[i] = ρ^j_{m,m+1}` with `m = -j + i`.
#[derive(Debug, Clone)]
pub struct SpinBlock {
    pub two_j: u32,
    /// Block probability p_j.
    pub p: f64,
    /// ln p_j, kept separately so scaling fits stay usable when p underflows.
    pub ln_p: f64,
    /// Multiplicity ν_j = C(n, J-j)(2j+1)/(J+j+1), exact.
    pub nu: BigUint,
    pub diag: Vec<f64>,
    pub offdiag: Vec<f64>,
}

impl SpinBlock {
    pub fn dim(&self) -> usize {
        self.two_j as usize + 1
    }

    pub fn j(&self) -> f64 {
        self.two_j as f64 / 2.0
    }

    /// The envelope (ρ^j_{m,m})^{1/2}, the deterministic filtered vector.
    pub fn envelope(&self) -> Vec<f64> {
        self.diag.iter().map(|d| d.sqrt()).collect()
    }
}

/// The full decomposition `ρ = Σ_j p_j ρ^j ⊗ 1_j/ν_j`, blocks ordered by
/// descending j so the maximal block is `blocks[0]`.
#[derive(Debug, Clone)]
pub struct BlockDecomposition {
    pub probe: ProbeSpec,
    pub noise: NoiseModel,
    pub blocks: Vec<SpinBlock>,
}

impl BlockDecomposition {
    pub fn n(&self) -> u32 {
        self.probe.n()
    }

    pub fn block_by_two_j(&self, two_j: u32) -> Option<&SpinBlock> {
        self.blocks.iter().find(|b| b.two_j == two_j)
    }

    /// The maximal-spin block (j = J).
    pub fn max_block(&self) -> &SpinBlock {
        &self.blocks[0]
    }

    /// Twice the typical spin j0 = rJ, rounded to the nearest half-integer of
    /// valid parity for this n.
    pub fn two_j_typical(&self) -> u32 {
        let n = self.probe.n();
        let target = self.noise.r() * n as f64; // = 2 j0
        // valid two_j share n's parity
        let parity = n % 2;
        let mut best = parity;
        let mut best_err = f64::INFINITY;
        let mut two_j = parity;
        loop {
            let err = (two_j as f64 - target).abs();
            if err < best_err {
                best_err = err;
                best = two_j;
            }
            if two_j + 2 > n {
                break;
            }
            two_j += 2;
        }
        best.max(parity)
    }
}

static LOG_FACTORIALS: std::sync::RwLock<Vec<f64>> = std::sync::RwLock::new(Vec::new());

pub fn log_factorial(k: u64) -> f64 {
    if k > 1 << 20 {
        return ln_gamma(k as f64 + 1.0);
    }
    let k = k as usize;
    {
        let table = LOG_FACTORIALS.read().unwrap();
        if k < table.len() {
            return table[k];
        }
    }
    let mut table = LOG_FACTORIALS.write().unwrap();
    if table.is_empty() {
        table.push(0.0);
    }
    while table.len() <= k {
        let i = table.len() as f64;
        // cumulative sums drift; anchor every chunk on ln_gamma directly
        let v = if table.len() % 256 == 0 {
            ln_gamma(i + 1.0)
        } else {
            table.last().unwrap() + i.ln()
        };
        table.push(v);
    }
    table[k]
}

/// ln C(n, k) via log-gamma.
pub fn log_binomial(n: u64, k: u64) -> Result<f64> {
    if k > n {
        return Err(Error::Domain(format!("binomial argument k={k} > n={n}")));
    }
    Ok(log_factorial(n) - log_factorial(k) - log_factorial(n - k))
}

/// Log-domain value of the Wigner coefficient `[Δ^{(j)}_k]^{m'}_m`, or `None`
/// when a factorial argument is negative and the term is absent.
///
/// Spins are given as twice-integers; `k` is an ordinary integer.
pub fn wigner_delta_log(two_j: u32, two_m: i64, two_mp: i64, k: i64) -> Option<f64> {
    debug_assert!(two_m.unsigned_abs() <= two_j as u64);
    debug_assert!(two_mp.unsigned_abs() <= two_j as u64);
    let j = two_j as i64;
    // all of these are integers because two_m, two_mp share j's parity
    let jm = (j - two_m) / 2; // j - m
    let jpm = (j + two_m) / 2; // j + m
    let jmp = (j - two_mp) / 2; // j - m'
    let jpmp = (j + two_mp) / 2; // j + m'
    let a1 = jm - k;
    let a2 = jpmp - k;
    let a3 = (two_m - two_mp) / 2 + k;
    if a1 < 0 || a2 < 0 || a3 < 0 || k < 0 {
        return None;
    }
    let num = 0.5
        * (log_factorial(jm as u64)
            + log_factorial(jpm as u64)
            + log_factorial(jmp as u64)
            + log_factorial(jpmp as u64));
    Some(
        num - log_factorial(a1 as u64)
            - log_factorial(a2 as u64)
            - log_factorial(a3 as u64)
            - log_factorial(k as u64),
    )
}

/// ln of the reduced dephasing matrix element
/// `r^{m-m'} Σ_k [Δ^{(j)}_k]^{m'}_m r^{2k}`,
/// i.e. `D^j_{m',m}` with the `(1-r²)^{J-j}` prefactor dropped.
///
/// The sum is accumulated with the largest term factored out; every term is
/// nonnegative so no cancellation occurs. Returns `-inf` when the element is
/// exactly zero (off-diagonal entries at r = 0).
pub fn log_dephasing_reduced(two_j: u32, two_m: i64, two_mp: i64, r: f64) -> f64 {
    // symmetric in (m, m'); arrange m >= m'
    let (two_m, two_mp) = if two_m >= two_mp {
        (two_m, two_mp)
    } else {
        (two_mp, two_m)
    };
    let m_minus_mp = ((two_m - two_mp) / 2) as f64;
    if r == 0.0 {
        // only the k = 0 term survives, and only on the diagonal
        if two_m != two_mp {
            return f64::NEG_INFINITY;
        }
        return wigner_delta_log(two_j, two_m, two_mp, 0).unwrap_or(f64::NEG_INFINITY);
    }
    let ln_r = r.ln();
    let j = two_j as i64;
    let k_max = ((j - two_m) / 2).min((j + two_mp) / 2);
    let mut terms: Vec<f64> = Vec::with_capacity((k_max.max(0) + 1) as usize);
    for k in 0..=k_max {
        if let Some(ld) = wigner_delta_log(two_j, two_m, two_mp, k) {
            terms.push(ld + 2.0 * k as f64 * ln_r);
        }
    }
    let lead = m_minus_mp * ln_r;
    lead + log_sum_exp(&terms)
}

/// ln Σ exp(t) with the maximum factored out; `-inf` for an empty slice.
pub fn log_sum_exp(terms: &[f64]) -> f64 {
    let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

/// The Clebsch–Gordan dephasing element `D^j_{m',m}` including the
/// `(1-r²)^{J-j}` prefactor. `two_big_j` is twice the maximal spin (= n).
pub fn dephasing_entry(two_big_j: u32, two_j: u32, two_m: i64, two_mp: i64, r: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::Domain(format!("noise strength r={r} outside [0, 1]")));
    }
    if two_j > two_big_j || two_m.unsigned_abs() > two_j as u64 || two_mp.unsigned_abs() > two_j as u64
    {
        return Err(Error::Domain(
            "spin indices outside block range".to_string(),
        ));
    }
    let excess = ((two_big_j - two_j) / 2) as f64;
    let reduced = log_dephasing_reduced(two_j, two_m, two_mp, r);
    if excess == 0.0 {
        return Ok(reduced.exp());
    }
    Ok((excess * (1.0 - r * r).ln() + reduced).exp())
}

/// Exact multiplicity ν_j = C(n, J-j)(2j+1)/(J+j+1).
pub fn multiplicity(n: u32, two_j: u32) -> BigUint {
    assert!(two_j <= n && (n - two_j) % 2 == 0, "invalid spin for n={n}");
    let k = ((n - two_j) / 2) as u64;
    let binom = big_binomial(n as u64, k);
    let num = binom * BigUint::from(two_j as u64 + 1);
    let den = BigUint::from(((n + two_j) / 2 + 1) as u64);
    debug_assert!((&num % &den) == BigUint::from(0u32));
    num / den
}

/// Exact big-integer binomial coefficient.
pub fn big_binomial(n: u64, k: u64) -> BigUint {
    let k = k.min(n - k);
    let mut acc = BigUint::from(1u32);
    for i in 0..k {
        acc = acc * BigUint::from(n - i) / BigUint::from(i + 1);
    }
    acc
}

fn ln_big(x: &BigUint) -> f64 {
    // BigUint -> f64 saturates above DBL_MAX; go through bit length for the rest
    let bits = x.bits();
    if bits <= 1000 {
        let v: f64 = x.to_string().parse().unwrap_or(f64::INFINITY);
        if v.is_finite() {
            return v.ln();
        }
    }
    // x = msb_chunk * 2^(bits-64) approximately
    let shifted = x >> (bits - 64);
    let lead: f64 = shifted.to_string().parse().unwrap();
    lead.ln() + (bits - 64) as f64 * std::f64::consts::LN_2
}

/// Options for [`decompose`].
#[derive(Debug, Clone, Copy)]
pub struct DecomposeOptions {
    /// Blocks larger than this are still decomposed (only the band is stored);
    /// the cap applies to [`full_block_matrix`].
    pub dense_cap: usize,
}

impl Default for DecomposeOptions {
    fn default() -> Self {
        DecomposeOptions { dense_cap: 512 }
    }
}

/// Decompose the dephased probe into spin blocks (descending j).
pub fn decompose(probe: &ProbeSpec, noise: &NoiseModel) -> BlockDecomposition {
    let n = probe.n();
    let r = noise.r();
    let two_js: Vec<u32> = (0..=n / 2).map(|i| n - 2 * i).collect(); // descending
    let blocks: Vec<SpinBlock> = two_js
        .iter()
        .map(|&two_j| build_block(probe, n, two_j, r))
        .collect();
    BlockDecomposition {
        probe: probe.clone(),
        noise: *noise,
        blocks,
    }
}

fn build_block(probe: &ProbeSpec, n: u32, two_j: u32, r: f64) -> SpinBlock {
    let dim = two_j as usize + 1;
    let nu = multiplicity(n, two_j);
    let ln_nu = ln_big(&nu);

    // log of the unnormalized band: c_{m'} c_m D̃^j_{m',m} / sqrt(C C')
    let ln_c = |two_m: i64| -> f64 { probe.amp(two_m).ln() };
    let ln_binom_m = |two_m: i64| -> f64 {
        log_binomial(n as u64, ((n as i64 - two_m) / 2) as u64).unwrap()
    };

    let mut ln_diag = vec![f64::NEG_INFINITY; dim];
    let mut ln_off = vec![f64::NEG_INFINITY; dim.saturating_sub(1)];
    for i in 0..dim {
        let two_m = -(two_j as i64) + 2 * i as i64;
        ln_diag[i] = 2.0 * ln_c(two_m) + log_dephasing_reduced(two_j, two_m, two_m, r)
            - ln_binom_m(two_m);
        if i + 1 < dim {
            let two_m1 = two_m + 2;
            ln_off[i] = ln_c(two_m) + ln_c(two_m1)
                + log_dephasing_reduced(two_j, two_m1, two_m, r)
                - 0.5 * (ln_binom_m(two_m) + ln_binom_m(two_m1));
        }
    }

    let ln_trace = log_sum_exp(&ln_diag);
    let (diag, offdiag) = if ln_trace == f64::NEG_INFINITY {
        // probe has no weight reaching this block; represent it as the
        // maximally mixed state with probability zero
        (vec![1.0 / dim as f64; dim], vec![0.0; dim - 1])
    } else {
        (
            ln_diag.iter().map(|l| (l - ln_trace).exp()).collect(),
            ln_off.iter().map(|l| (l - ln_trace).exp()).collect(),
        )
    };

    // p_j = ν_j (1-r²)^{J-j} Σ_m c_m² D̃_mm / C(n, J-m) = ν_j (1-r²)^{J-j} e^{ln_trace}
    let excess = ((n - two_j) / 2) as f64;
    let ln_p = if ln_trace == f64::NEG_INFINITY {
        f64::NEG_INFINITY
    } else if excess == 0.0 {
        ln_nu + ln_trace
    } else {
        ln_nu + excess * (1.0 - r * r).ln() + ln_trace
    };

    SpinBlock {
        two_j,
        p: ln_p.exp(),
        ln_p,
        nu,
        diag,
        offdiag,
    }
}

/// Closed-form multicopy block data: `Σ_m D^j_{m,m}` and `p_j`.
///
/// `sum_diag = (1-r²)^{J-j} [(1+r)^{2j+1} - (1-r)^{2j+1}]/(2r)` with the
/// r → 0 limit `2j+1` taken by series, and `p_j = ν_j 2^{-n} sum_diag`.
pub fn multicopy_block_sums(n: u32, two_j: u32, r: f64) -> (f64, f64) {
    let d = two_j as f64 + 1.0; // 2j+1
    let excess = ((n - two_j) / 2) as f64;
    // ln of [(1+r)^d - (1-r)^d]/(2r); the direct form cancels badly for
    // small r·d, where the odd-term series Σ_{i odd} C(d,i) r^{i-1} is exact
    let ln_bracket = if r * d < 0.1 {
        let dd = two_j as u64 + 1;
        let mut sum = 0.0f64;
        let mut pow = 1.0f64; // r^(i-1)
        let mut i = 1u64;
        while i <= dd {
            let term = log_binomial(dd, i).unwrap().exp() * pow;
            sum += term;
            if term < sum * 1e-18 {
                break;
            }
            pow *= r * r;
            i += 2;
        }
        sum.ln()
    } else {
        let q = (1.0 - r) / (1.0 + r);
        d * (1.0 + r).ln() + (1.0 - q.powf(d)).ln() - (2.0 * r).ln()
    };
    let ln_sum_diag = if excess == 0.0 {
        ln_bracket
    } else {
        excess * (1.0 - r * r).ln() + ln_bracket
    };
    let ln_nu = ln_big(&multiplicity(n, two_j));
    let ln_p = ln_nu - n as f64 * std::f64::consts::LN_2 + ln_sum_diag;
    (ln_sum_diag.exp(), ln_p.exp())
}

/// Materialize the dense (2j+1)×(2j+1) matrix of ρ^j.
pub fn full_block_matrix(
    probe: &ProbeSpec,
    noise: &NoiseModel,
    two_j: u32,
    opts: &DecomposeOptions,
) -> Result<nalgebra::DMatrix<f64>> {
    let dim = two_j as usize + 1;
    if dim > opts.dense_cap {
        return Err(Error::SizeLimit(format!(
            "block dimension {dim} exceeds dense cap {}",
            opts.dense_cap
        )));
    }
    let n = probe.n();
    let r = noise.r();
    let ln_c = |two_m: i64| -> f64 { probe.amp(two_m).ln() };
    let ln_binom_m = |two_m: i64| -> f64 {
        log_binomial(n as u64, ((n as i64 - two_m) / 2) as u64).unwrap()
    };
    let mut ln_entries = nalgebra::DMatrix::from_element(dim, dim, f64::NEG_INFINITY);
    for i in 0..dim {
        let two_m = -(two_j as i64) + 2 * i as i64;
        for ip in 0..=i {
            let two_mp = -(two_j as i64) + 2 * ip as i64;
            let v = ln_c(two_m) + ln_c(two_mp) + log_dephasing_reduced(two_j, two_m, two_mp, r)
                - 0.5 * (ln_binom_m(two_m) + ln_binom_m(two_mp));
            ln_entries[(i, ip)] = v;
            ln_entries[(ip, i)] = v;
        }
    }
    let ln_trace = log_sum_exp(&(0..dim).map(|i| ln_entries[(i, i)]).collect::<Vec<_>>());
    if ln_trace == f64::NEG_INFINITY {
        let mut m = nalgebra::DMatrix::zeros(dim, dim);
        m.fill_diagonal(1.0 / dim as f64);
        return Ok(m);
    }
    Ok(ln_entries.map(|l| (l - ln_trace).exp()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn log_binomial_small() {
        assert_relative_eq!(log_binomial(4, 2).unwrap(), 6.0f64.ln(), epsilon = 1e-12);
        assert_eq!(log_binomial(17, 0).unwrap(), 0.0);
        assert!(log_binomial(3, 4).is_err());
    }

    #[test]
    fn log_binomial_vs_big_integer_oracle() {
        // independent oracle: exact big-integer binomial
        for &(n, k) in &[(100u64, 50u64), (1000, 137), (10_000, 5000)] {
            let exact = ln_big(&big_binomial(n, k));
            let got = log_binomial(n, k).unwrap();
            assert_relative_eq!(got, exact, max_relative = 1e-12);
        }
    }

    #[test]
    fn wigner_delta_examples() {
        // j=1/2, m=m'=1/2, k=0 -> 1
        assert_relative_eq!(wigner_delta_log(1, 1, 1, 0).unwrap(), 0.0, epsilon = 1e-14);
        // j=1/2, m=m'=1/2, k=1 -> absent
        assert!(wigner_delta_log(1, 1, 1, 1).is_none());
        // j=1, m=1, m'=0, k=0 -> sqrt(2)
        assert_relative_eq!(
            wigner_delta_log(2, 2, 0, 0).unwrap().exp(),
            2.0f64.sqrt(),
            epsilon = 1e-14
        );
    }

    #[test]
    fn dephasing_entry_examples() {
        for r in [0.0, 0.3, 0.7, 1.0] {
            // J=j=1/2, m=m'=1/2 -> 1
            assert_relative_eq!(dephasing_entry(1, 1, 1, 1, r).unwrap(), 1.0, epsilon = 1e-14);
        }
        // D^j_{j,j} = (1-r²)^{J-j}
        for n in [2u32, 5, 8] {
            for two_j in (n % 2..=n).step_by(2) {
                for r in [0.2f64, 0.8] {
                    let expect = (1.0 - r * r).powi(((n - two_j) / 2) as i32);
                    let got = dephasing_entry(n, two_j, two_j as i64, two_j as i64, r).unwrap();
                    assert_relative_eq!(got, expect, max_relative = 1e-13);
                }
            }
        }
        // Σ_m D¹_{m,m} at r=0.5 for n=2: ((1.5)³-(0.5)³)/1 = 3.25
        let sum: f64 = (-1..=1)
            .map(|m| dephasing_entry(2, 2, 2 * m, 2 * m, 0.5).unwrap())
            .sum();
        assert_relative_eq!(sum, 3.25, epsilon = 1e-13);
    }

    #[test]
    fn dephasing_entry_rejects_bad_noise() {
        assert!(dephasing_entry(2, 2, 0, 0, -0.1).is_err());
        assert!(dephasing_entry(2, 2, 0, 0, 1.5).is_err());
    }

    #[test]
    fn noiseless_max_block_has_unsuppressed_coherences() {
        // at r=1, D^J_{m,m'} / sqrt(C(n,J-m) C(n,J-m')) = 1 for all m, m'
        for n in 1..=10u32 {
            let two_j = n;
            for i in 0..=n {
                for ip in 0..=i {
                    let two_m = -(n as i64) + 2 * i as i64;
                    let two_mp = -(n as i64) + 2 * ip as i64;
                    let d = dephasing_entry(n, two_j, two_m, two_mp, 1.0).unwrap();
                    let norm = 0.5
                        * (log_binomial(n as u64, ((n as i64 - two_m) / 2) as u64).unwrap()
                            + log_binomial(n as u64, ((n as i64 - two_mp) / 2) as u64).unwrap());
                    assert_relative_eq!(d / norm.exp(), 1.0, max_relative = 1e-12);
                }
            }
        }
    }

    #[test]
    fn multiplicity_is_exact_and_sums_to_full_dimension() {
        // Σ_j ν_j (2j+1) = 2^n, exactly
        for n in 1..=40u32 {
            let mut total = BigUint::from(0u32);
            for two_j in (n % 2..=n).step_by(2) {
                total += multiplicity(n, two_j) * BigUint::from(two_j as u64 + 1);
            }
            assert_eq!(total, BigUint::from(1u32) << n);
        }
        assert_eq!(multiplicity(2, 2), BigUint::from(1u32));
        assert_eq!(multiplicity(2, 0), BigUint::from(1u32));
        assert_eq!(multiplicity(3, 1), BigUint::from(2u32));
    }

    #[test]
    fn decompose_single_qubit() {
        let probe = ProbeSpec::multicopy(1).unwrap();
        for r in [0.0, 0.4, 0.9, 1.0] {
            let d = decompose(&probe, &NoiseModel::new(r).unwrap());
            assert_eq!(d.blocks.len(), 1);
            let b = &d.blocks[0];
            assert_relative_eq!(b.p, 1.0, epsilon = 1e-12);
            assert_relative_eq!(b.diag[0], 0.5, epsilon = 1e-12);
            assert_relative_eq!(b.diag[1], 0.5, epsilon = 1e-12);
            assert_relative_eq!(b.offdiag[0], r / 2.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn decompose_two_qubits_probabilities() {
        let probe = ProbeSpec::multicopy(2).unwrap();
        let d = decompose(&probe, &NoiseModel::new(0.5).unwrap());
        assert_eq!(d.blocks.len(), 2);
        assert_eq!(d.blocks[0].two_j, 2);
        assert_relative_eq!(d.blocks[0].p, 0.8125, epsilon = 1e-12);
        assert_relative_eq!(d.blocks[1].p, 0.1875, epsilon = 1e-12);
    }

    #[test]
    fn decompose_probability_peak_near_typical_spin() {
        // n=20, r=0.8: p_j peaks near j0 = rJ = 8 and matches the asymptotic
        // Gaussian within 10% at the peak
        let probe = ProbeSpec::multicopy(20).unwrap();
        let d = decompose(&probe, &NoiseModel::new(0.8).unwrap());
        let peak = d
            .blocks
            .iter()
            .max_by(|a, b| a.p.partial_cmp(&b.p).unwrap())
            .unwrap();
        assert!(
            (peak.two_j as i64 - 16).abs() <= 2,
            "peak at two_j={}, expected near 16",
            peak.two_j
        );
        let big_j = 10.0f64;
        let r = 0.8f64;
        let p_at_j0 = d.block_by_two_j(16).unwrap().p;
        let gauss = (-big_j * (8.0 / big_j - r).powi(2) / (1.0 - r * r)).exp()
            / (std::f64::consts::PI * big_j * (1.0 - r * r)).sqrt();
        assert!(
            (p_at_j0 - gauss).abs() / gauss < 0.10,
            "p at j0: {p_at_j0} vs gaussian {gauss}"
        );
    }

    #[test]
    fn multicopy_sums_match_decompose() {
        for n in [1u32, 2, 3, 7, 16, 30] {
            let probe = ProbeSpec::multicopy(n).unwrap();
            for r in [0.1, 0.5, 0.9] {
                let d = decompose(&probe, &NoiseModel::new(r).unwrap());
                for b in &d.blocks {
                    let (_, p) = multicopy_block_sums(n, b.two_j, r);
                    assert_relative_eq!(p, b.p, max_relative = 1e-10);
                }
            }
        }
    }

    #[test]
    fn multicopy_sums_examples() {
        let (s1, p1) = multicopy_block_sums(2, 2, 0.5);
        assert_relative_eq!(s1, 3.25, epsilon = 1e-12);
        assert_relative_eq!(p1, 0.8125, epsilon = 1e-12);
        let (s0, p0) = multicopy_block_sums(2, 0, 0.5);
        assert_relative_eq!(s0, 0.75, epsilon = 1e-12);
        assert_relative_eq!(p0, 0.1875, epsilon = 1e-12);
        // r -> 0 limit: sum_diag -> 2j+1
        let (s, _) = multicopy_block_sums(8, 6, 0.0);
        assert_relative_eq!(s, 7.0, epsilon = 1e-12);
        let (s, _) = multicopy_block_sums(8, 6, 1e-9);
        assert_relative_eq!(s, 7.0, max_relative = 1e-12);
        // r -> 1: p_J -> 1
        for n in [3u32, 10, 41] {
            let (_, p) = multicopy_block_sums(n, n, 1.0);
            assert_relative_eq!(p, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn block_invariants_across_sizes() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for n in 1..=30u32 {
            for r in [0.1, 0.5, 0.9] {
                for random_probe in [false, true] {
                    let probe = if random_probe {
                        let mut amps: Vec<f64> =
                            (0..=n).map(|_| rng.gen_range(0.0..1.0)).collect();
                        let norm = amps.iter().map(|c| c * c).sum::<f64>().sqrt();
                        amps.iter_mut().for_each(|c| *c /= norm);
                        ProbeSpec::custom(n, amps).unwrap()
                    } else {
                        ProbeSpec::multicopy(n).unwrap()
                    };
                    let noise = NoiseModel::new(r).unwrap();
                    let d = decompose(&probe, &noise);
                    let p_sum: f64 = d.blocks.iter().map(|b| b.p).sum();
                    assert!(
                        (p_sum - 1.0).abs() < 1e-9,
                        "Σp = {p_sum} for n={n}, r={r}, random={random_probe}"
                    );
                    for b in &d.blocks {
                        let tr: f64 = b.diag.iter().sum();
                        assert!((tr - 1.0).abs() < 1e-10, "trace {tr} for j={}", b.j());
                        if r > 0.0 && r < 1.0 && !random_probe {
                            assert!(b.diag.iter().all(|&x| x > 0.0));
                        }
                        let full =
                            full_block_matrix(&probe, &noise, b.two_j, &DecomposeOptions::default())
                                .unwrap();
                        let eig = full.clone().symmetric_eigen();
                        let min_eig = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
                        assert!(min_eig > -1e-10, "min eigenvalue {min_eig}");
                        // band agreement
                        for i in 0..b.dim() {
                            assert_relative_eq!(full[(i, i)], b.diag[i], epsilon = 1e-12);
                            if i + 1 < b.dim() {
                                assert_relative_eq!(full[(i, i + 1)], b.offdiag[i], epsilon = 1e-12);
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn full_matrix_examples() {
        // n=1, j=1/2, r=0.8
        let probe = ProbeSpec::multicopy(1).unwrap();
        let m = full_block_matrix(
            &probe,
            &NoiseModel::new(0.8).unwrap(),
            1,
            &DecomposeOptions::default(),
        )
        .unwrap();
        assert_relative_eq!(m[(0, 0)], 0.5, epsilon = 1e-14);
        assert_relative_eq!(m[(0, 1)], 0.4, epsilon = 1e-14);
        assert_relative_eq!(m[(1, 1)], 0.5, epsilon = 1e-14);

        // n=2, j=1, r=1: rank-1 projector onto multicopy amplitudes
        let probe2 = ProbeSpec::multicopy(2).unwrap();
        let m2 = full_block_matrix(
            &probe2,
            &NoiseModel::new(1.0).unwrap(),
            2,
            &DecomposeOptions::default(),
        )
        .unwrap();
        let c = [0.5, std::f64::consts::FRAC_1_SQRT_2, 0.5]; // ascending m
        for i in 0..3 {
            for k in 0..3 {
                assert_relative_eq!(m2[(i, k)], c[i] * c[k], epsilon = 1e-13);
            }
        }

        // n=3, j=3/2, r=0.5: PSD, trace 1
        let probe3 = ProbeSpec::multicopy(3).unwrap();
        let m3 = full_block_matrix(
            &probe3,
            &NoiseModel::new(0.5).unwrap(),
            3,
            &DecomposeOptions::default(),
        )
        .unwrap();
        assert_relative_eq!(m3.trace(), 1.0, epsilon = 1e-12);
        let eig = m3.symmetric_eigen();
        assert!(eig.eigenvalues.iter().all(|&e| e > -1e-12));

        // cap enforcement
        let err = full_block_matrix(
            &probe3,
            &NoiseModel::new(0.5).unwrap(),
            3,
            &DecomposeOptions { dense_cap: 2 },
        );
        assert!(err.is_err());
    }

    #[test]
    fn probe_file_round_trip() {
        let probe = ProbeSpec::multicopy(5).unwrap();
        let text = probe.to_file_string();
        let back = ProbeSpec::parse(&text).unwrap();
        assert_eq!(back.n(), 5);
        for (a, b) in probe.amplitudes().iter().zip(back.amplitudes()) {
            assert_relative_eq!(a, b, epsilon = 1e-11);
        }
        // comments and asymmetric amplitudes keep their order: first line is c_J
        let text = "# custom\nn=2\n1.0\n0.0\n0.0\n";
        let p = ProbeSpec::parse(text).unwrap();
        assert_eq!(p.amp(2), 1.0); // c_{m=+J}
        assert_eq!(p.amp(-2), 0.0);
    }

    #[test]
    fn probe_file_rejects_bad_input() {
        assert!(ProbeSpec::parse("").is_err());
        assert!(ProbeSpec::parse("n=2\n1.0\n1.0\n1.0\n").is_err()); // not normalized
        assert!(ProbeSpec::parse("n=2\n1.0\n0.0\n").is_err()); // wrong count
        assert!(ProbeSpec::parse("m=2\n1.0\n0.0\n0.0\n").is_err()); // bad header
        assert!(ProbeSpec::parse("n=2\n-0.5\n0.5\n0.7071067812\n").is_err()); // negative
    }

    #[test]
    fn concentrated_probe_leaves_lower_blocks_empty() {
        // |J, J⟩ probe is invariant under dephasing: p_J = 1
        let mut amps = vec![0.0; 4];
        amps[0] = 1.0;
        let probe = ProbeSpec::custom(3, amps).unwrap();
        let d = decompose(&probe, &NoiseModel::new(0.6).unwrap());
        assert_relative_eq!(d.blocks[0].p, 1.0, epsilon = 1e-12);
        assert_relative_eq!(d.blocks[1].p, 0.0, epsilon = 1e-12);
        assert_relative_eq!(d.blocks[0].diag[3], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn typical_spin_rounds_to_valid_parity() {
        let probe = ProbeSpec::multicopy(80).unwrap();
        let d = decompose(&probe, &NoiseModel::new(0.8).unwrap());
        assert_eq!(d.two_j_typical(), 64); // 2 j0 = rn = 64
        let probe = ProbeSpec::multicopy(5).unwrap();
        let d = decompose(&probe, &NoiseModel::new(0.5).unwrap());
        // 2 j0 = 2.5 -> nearest odd two_j is 3
        assert_eq!(d.two_j_typical(), 3);
    }
}
