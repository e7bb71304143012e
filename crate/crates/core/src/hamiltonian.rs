//! Spin-chain operators on the full `2^N` Hilbert space.
//!
//! Basis convention: each site is ordered `(|0>, |1>)` with `sigma_z |0> = +|0>`,
//! and multi-site states use big-endian Kronecker order, so site 1 is the most
//! significant bit of the basis index. An "excitation" is a site in `|1>`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type OperatorMatrix = DMatrix<Complex64>;

/// Largest chain accepted by validation; the density matrix costs `4^N`.
pub const MAX_SITES: usize = 12;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Chain geometry and drive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub n_sites: usize,
    /// Nearest-neighbour hopping `J`.
    pub coupling: f64,
    /// Slope of the gradient field `h(i) = h_m * i`.
    pub h_m: f64,
    /// Total evolution time `T`.
    pub total_time: f64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            n_sites: 5,
            coupling: -1.0,
            h_m: 0.5,
            total_time: PI,
        }
    }
}

impl ChainConfig {
    pub fn new(n_sites: usize, coupling: f64, h_m: f64, total_time: f64) -> Result<Self> {
        let cfg = Self {
            n_sites,
            coupling,
            h_m,
            total_time,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_sites < 2 || self.n_sites > MAX_SITES {
            return Err(Error::InvalidConfig(format!(
                "n_sites must lie in 2..={MAX_SITES}, got {}",
                self.n_sites
            )));
        }
        if !(self.total_time > 0.0 && self.total_time.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "total_time must be positive, got {}",
                self.total_time
            )));
        }
        if !(self.h_m > 0.0 && self.h_m.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "h_m must be positive so that h(i) increases along the chain, got {}",
                self.h_m
            )));
        }
        if !self.coupling.is_finite() {
            return Err(Error::InvalidConfig("coupling must be finite".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        1 << self.n_sites
    }

    /// On-site field `h(i)` for the 1-based site `i`.
    pub fn field(&self, site: usize) -> f64 {
        self.h_m * site as f64
    }

    pub(crate) fn check_time(&self, t: f64) -> Result<()> {
        let slack = 1e-12 * self.total_time;
        if t < -slack || t > self.total_time + slack || t.is_nan() {
            return Err(Error::TimeOutOfRange {
                t,
                total: self.total_time,
            });
        }
        Ok(())
    }
}

/// Collective system-bath coupling operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LindbladKind {
    /// `L = sum_i sigma_i^-`
    #[default]
    #[serde(alias = "lowering")]
    CollectiveLowering,
    /// `L = sum_i sigma_i^x`
    #[serde(alias = "x")]
    CollectiveX,
    /// `L = sum_i sigma_i^z`
    #[serde(alias = "z")]
    CollectiveZ,
}

impl LindbladKind {
    pub const ALL: [LindbladKind; 3] = [
        LindbladKind::CollectiveLowering,
        LindbladKind::CollectiveX,
        LindbladKind::CollectiveZ,
    ];

    pub fn short_name(self) -> &'static str {
        match self {
            LindbladKind::CollectiveLowering => "lowering",
            LindbladKind::CollectiveX => "x",
            LindbladKind::CollectiveZ => "z",
        }
    }
}

impl std::str::FromStr for LindbladKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lowering" | "minus" | "collective_lowering" => Ok(LindbladKind::CollectiveLowering),
            "x" | "collective_x" => Ok(LindbladKind::CollectiveX),
            "z" | "collective_z" => Ok(LindbladKind::CollectiveZ),
            other => Err(Error::InvalidConfig(format!("unknown lindblad kind `{other}`"))),
        }
    }
}

/// How the per-site lowering operator is normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoweringConvention {
    /// `sigma^x - i sigma^y = 2|1><0|`, taken literally.
    #[default]
    Literal,
    /// `|0><1|`: removes an excitation with unit amplitude.
    Normalized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PauliAxis {
    X,
    Y,
    Z,
    /// `sigma^x - i sigma^y`
    Minus,
}

/// Single-site 2x2 matrix in the `(|0>, |1>)` basis.
pub fn single_site(axis: PauliAxis) -> [[Complex64; 2]; 2] {
    let one = Complex64::new(1.0, 0.0);
    let i = Complex64::new(0.0, 1.0);
    match axis {
        PauliAxis::X => [[ZERO, one], [one, ZERO]],
        PauliAxis::Y => [[ZERO, -i], [i, ZERO]],
        PauliAxis::Z => [[one, ZERO], [ZERO, -one]],
        PauliAxis::Minus => [[ZERO, ZERO], [Complex64::new(2.0, 0.0), ZERO]],
    }
}

/// Bit position of 1-based `site` inside a basis index.
#[inline]
pub(crate) fn site_shift(site: usize, n_sites: usize) -> usize {
    n_sites - site
}

/// Occupation (0 or 1) of `site` in basis state `index`.
#[inline]
pub fn occupation(index: usize, site: usize, n_sites: usize) -> usize {
    (index >> site_shift(site, n_sites)) & 1
}

/// Embeds a 2x2 single-site operator at `site`, identity elsewhere.
pub fn embed_site(op: &[[Complex64; 2]; 2], site: usize, n_sites: usize) -> Result<OperatorMatrix> {
    if n_sites < 1 {
        return Err(Error::InvalidConfig("a chain needs at least one site".into()));
    }
    if site < 1 || site > n_sites {
        return Err(Error::SiteOutOfRange { site, n_sites });
    }
    let dim = 1usize << n_sites;
    let shift = site_shift(site, n_sites);
    let mut m = OperatorMatrix::zeros(dim, dim);
    for col in 0..dim {
        let b = (col >> shift) & 1;
        for (a, row_ops) in op.iter().enumerate() {
            let v = row_ops[b];
            if v != ZERO {
                let row = (col & !(1 << shift)) | (a << shift);
                m[(row, col)] += v;
            }
        }
    }
    Ok(m)
}

pub fn pauli_site(axis: PauliAxis, site: usize, n_sites: usize) -> Result<OperatorMatrix> {
    embed_site(&single_site(axis), site, n_sites)
}

/// Hopping term `J sum_i (X_i X_{i+1} + Y_i Y_{i+1})`.
///
/// Each bond swaps `|01>` and `|10>` with amplitude `2J` and annihilates
/// `|00>` and `|11>`, so the matrix is filled directly.
pub fn build_hxy(cfg: &ChainConfig) -> OperatorMatrix {
    let n = cfg.n_sites;
    let dim = 1usize << n;
    let mut m = OperatorMatrix::zeros(dim, dim);
    let amp = Complex64::new(2.0 * cfg.coupling, 0.0);
    for col in 0..dim {
        for site in 1..n {
            let a = site_shift(site, n);
            let b = site_shift(site + 1, n);
            if ((col >> a) & 1) != ((col >> b) & 1) {
                let row = col ^ (1 << a) ^ (1 << b);
                m[(row, col)] += amp;
            }
        }
    }
    m
}

/// Diagonal of `H_z = sum_i h(i) sigma_i^z`.
pub fn hz_diagonal(cfg: &ChainConfig) -> Vec<f64> {
    let n = cfg.n_sites;
    (0..1usize << n)
        .map(|idx| {
            (1..=n)
                .map(|site| {
                    let z = if occupation(idx, site, n) == 0 { 1.0 } else { -1.0 };
                    z * cfg.field(site)
                })
                .sum()
        })
        .collect()
}

pub fn build_hz(cfg: &ChainConfig) -> OperatorMatrix {
    let diag = hz_diagonal(cfg);
    OperatorMatrix::from_fn(diag.len(), diag.len(), |r, c| {
        if r == c {
            Complex64::new(diag[r], 0.0)
        } else {
            ZERO
        }
    })
}

/// `(A(t), B(t)) = (sin(pi s), cos(pi s))` with `s = t/T`, exact at `s` in {0, 1/2, 1}.
pub fn drive_coefficients(t: f64, total_time: f64) -> (f64, f64) {
    let s = t / total_time;
    if s == 0.0 {
        (0.0, 1.0)
    } else if s == 0.5 {
        (1.0, 0.0)
    } else if s == 1.0 {
        (0.0, -1.0)
    } else {
        (PI * s).sin_cos()
    }
}

/// `H_s(t) = A(t) H_xy + B(t) H_z`.
pub fn system_hamiltonian(t: f64, cfg: &ChainConfig) -> Result<OperatorMatrix> {
    cfg.check_time(t)?;
    Ok(combine_drive(t, cfg, &build_hxy(cfg), &build_hz(cfg)))
}

pub(crate) fn combine_drive(
    t: f64,
    cfg: &ChainConfig,
    hxy: &OperatorMatrix,
    hz: &OperatorMatrix,
) -> OperatorMatrix {
    let (a, b) = drive_coefficients(t, cfg.total_time);
    hxy * Complex64::new(a, 0.0) + hz * Complex64::new(b, 0.0)
}

/// Collective Lindblad operator with the literal lowering convention.
pub fn build_lindblad(kind: LindbladKind, n_sites: usize) -> Result<OperatorMatrix> {
    lindblad_operator(kind, n_sites, LoweringConvention::Literal)
}

pub fn lindblad_operator(
    kind: LindbladKind,
    n_sites: usize,
    convention: LoweringConvention,
) -> Result<OperatorMatrix> {
    let op = match (kind, convention) {
        (LindbladKind::CollectiveLowering, LoweringConvention::Literal) => {
            single_site(PauliAxis::Minus)
        }
        (LindbladKind::CollectiveLowering, LoweringConvention::Normalized) => {
            [[ZERO, Complex64::new(1.0, 0.0)], [ZERO, ZERO]]
        }
        (LindbladKind::CollectiveX, _) => single_site(PauliAxis::X),
        (LindbladKind::CollectiveZ, _) => single_site(PauliAxis::Z),
    };
    let dim = 1usize << n_sites;
    let mut total = OperatorMatrix::zeros(dim, dim);
    for site in 1..=n_sites {
        total += embed_site(&op, site, n_sites)?;
    }
    Ok(total)
}

/// Which part of the spectrum the gap is taken over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapSpectrum {
    #[default]
    Full,
    SingleExcitation,
}

/// `Delta E_01(t)` over the full spectrum of `H_s(t)`.
pub fn energy_gap(t: f64, cfg: &ChainConfig) -> Result<f64> {
    energy_gap_in(t, cfg, GapSpectrum::Full)
}

/// Gap between the two lowest eigenvalues of `H_s(t)`.
///
/// `H_s` conserves the number of excitations, so the spectrum is assembled
/// from the independent excitation-number blocks.
pub fn energy_gap_in(t: f64, cfg: &ChainConfig, spectrum: GapSpectrum) -> Result<f64> {
    cfg.check_time(t)?;
    let (a, b) = drive_coefficients(t, cfg.total_time);
    let sectors = excitation_sectors(cfg.n_sites);
    let wanted: Vec<&Vec<usize>> = match spectrum {
        GapSpectrum::Full => sectors.iter().collect(),
        GapSpectrum::SingleExcitation => vec![&sectors[1]],
    };
    let hz = hz_diagonal(cfg);
    let mut eigs = Vec::with_capacity(cfg.dim());
    for states in wanted {
        let block = sector_block(cfg, states, a, b, &hz);
        eigs.extend(hermitian_eigenvalues(block)?);
    }
    eigs.sort_by(|x, y| x.total_cmp(y));
    if eigs.len() < 2 {
        return Err(Error::InvalidConfig("gap needs at least two levels".into()));
    }
    Ok((eigs[1] - eigs[0]).max(0.0))
}

fn sector_block(cfg: &ChainConfig, states: &[usize], a: f64, b: f64, hz: &[f64]) -> OperatorMatrix {
    let n = cfg.n_sites;
    let pos: std::collections::HashMap<usize, usize> =
        states.iter().enumerate().map(|(k, &s)| (s, k)).collect();
    let mut m = OperatorMatrix::zeros(states.len(), states.len());
    for (c, &col) in states.iter().enumerate() {
        m[(c, c)] += Complex64::new(b * hz[col], 0.0);
        for site in 1..n {
            let sa = site_shift(site, n);
            let sb = site_shift(site + 1, n);
            if ((col >> sa) & 1) != ((col >> sb) & 1) {
                let row = col ^ (1 << sa) ^ (1 << sb);
                m[(pos[&row], c)] += Complex64::new(2.0 * cfg.coupling * a, 0.0);
            }
        }
    }
    m
}

/// Basis indices grouped by excitation count `0..=n_sites`, ascending within each group.
pub fn excitation_sectors(n_sites: usize) -> Vec<Vec<usize>> {
    let mut sectors = vec![Vec::new(); n_sites + 1];
    for idx in 0..1usize << n_sites {
        sectors[idx.count_ones() as usize].push(idx);
    }
    sectors
}

/// Sorted real eigenvalues of a Hermitian matrix.
pub fn hermitian_eigenvalues(m: OperatorMatrix) -> Result<Vec<f64>> {
    if m.nrows() == 1 {
        return Ok(vec![m[(0, 0)].re]);
    }
    let eig = SymmetricEigen::try_new(m, f64::EPSILON, 100_000).ok_or(Error::Eigensolver)?;
    let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    vals.sort_by(|x, y| x.total_cmp(y));
    Ok(vals)
}

/// Max-norm of `m - m^dagger`.
pub fn hermiticity_error(m: &OperatorMatrix) -> f64 {
    let mut worst: f64 = 0.0;
    for r in 0..m.nrows() {
        for c in r..m.ncols() {
            worst = worst.max((m[(r, c)] - m[(c, r)].conj()).norm());
        }
    }
    worst
}

pub fn max_abs(m: &OperatorMatrix) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

pub fn commutator(a: &OperatorMatrix, b: &OperatorMatrix) -> OperatorMatrix {
    a * b - b * a
}
