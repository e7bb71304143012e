//! Symmetry-graded dense matrices.
//!
//! The chain Hamiltonian conserves the excitation number, and each supported
//! Lindblad operator shifts it by a fixed amount (or at least flips its
//! parity). Every matrix the integrator touches therefore has a definite
//! "charge": it maps sector `s` into sector `s + q`. Reordering the basis so
//! that sectors are contiguous turns every product into a handful of small
//! block products.
//!
//! Storage stays dense `d x d` in the permuted basis; entries outside the
//! charge pattern are kept at exactly zero.

use num_complex::Complex64;

use crate::hamiltonian::OperatorMatrix;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Topology {
    /// Sector index `s + q` must stay inside `0..n` (excitation number).
    Linear,
    /// Sector index wraps modulo the sector count (parity, or no symmetry).
    Cyclic,
}

#[derive(Debug, Clone)]
pub(crate) struct Grading {
    dim: usize,
    topology: Topology,
    /// `offsets[s]..offsets[s + 1]` is sector `s` in the permuted basis.
    offsets: Vec<usize>,
    /// original basis index -> permuted index
    inv: Vec<usize>,
    /// original basis index -> sector
    sector_of: Vec<usize>,
    label: &'static str,
}

impl Grading {
    fn from_labels(labels: &[usize], n_sectors: usize, topology: Topology, label: &'static str) -> Self {
        let dim = labels.len();
        let mut perm: Vec<usize> = (0..dim).collect();
        perm.sort_by_key(|&i| (labels[i], i));
        let mut inv = vec![0; dim];
        for (p, &o) in perm.iter().enumerate() {
            inv[o] = p;
        }
        let mut offsets = vec![0; n_sectors + 1];
        for &l in labels {
            offsets[l + 1] += 1;
        }
        for s in 0..n_sectors {
            offsets[s + 1] += offsets[s];
        }
        Self {
            dim,
            topology,
            offsets,
            inv,
            sector_of: labels.to_vec(),
            label,
        }
    }

    pub fn excitation_number(n_sites: usize) -> Self {
        let labels: Vec<usize> = (0..1usize << n_sites).map(|i| i.count_ones() as usize).collect();
        Self::from_labels(&labels, n_sites + 1, Topology::Linear, "excitation-number")
    }

    pub fn parity(n_sites: usize) -> Self {
        let labels: Vec<usize> = (0..1usize << n_sites).map(|i| (i.count_ones() % 2) as usize).collect();
        Self::from_labels(&labels, 2, Topology::Cyclic, "parity")
    }

    pub fn trivial(dim: usize) -> Self {
        Self::from_labels(&vec![0; dim], 1, Topology::Cyclic, "dense")
    }

    /// Picks the finest grading under which every operator has a definite charge.
    pub fn for_operators(n_sites: usize, ops: &[&OperatorMatrix]) -> Self {
        let dim = 1usize << n_sites;
        for candidate in [Self::excitation_number(n_sites), Self::parity(n_sites)] {
            if ops.iter().all(|m| candidate.charge_of(m).is_some()) {
                return candidate;
            }
        }
        Self::trivial(dim)
    }

    pub fn label(&self) -> &'static str {
        self.label
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_sectors(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn permuted_index(&self, original: usize) -> usize {
        self.inv[original]
    }

    fn normalize(&self, q: i32) -> i32 {
        match self.topology {
            Topology::Linear => q,
            Topology::Cyclic => q.rem_euclid(self.n_sectors() as i32),
        }
    }

    pub fn add_charges(&self, a: i32, b: i32) -> i32 {
        self.normalize(a + b)
    }

    pub fn neg_charge(&self, a: i32) -> i32 {
        self.normalize(-a)
    }

    fn target(&self, s: usize, q: i32) -> Option<usize> {
        let n = self.n_sectors() as i32;
        let t = s as i32 + q;
        match self.topology {
            Topology::Linear => (0..n).contains(&t).then_some(t as usize),
            Topology::Cyclic => Some(t.rem_euclid(n) as usize),
        }
    }

    fn range(&self, s: usize) -> std::ops::Range<usize> {
        self.offsets[s]..self.offsets[s + 1]
    }

    /// Charge of `m` under this grading, or `None` if it mixes charges. The
    /// zero matrix is reported as charge 0.
    pub fn charge_of(&self, m: &OperatorMatrix) -> Option<i32> {
        let mut found: Option<i32> = None;
        for c in 0..m.ncols() {
            let sc = self.sector_of[c] as i32;
            for r in 0..m.nrows() {
                if m[(r, c)] == ZERO {
                    continue;
                }
                let sr = self.sector_of[r] as i32;
                let q = self.normalize(sr - sc);
                match found {
                    None => found = Some(q),
                    Some(prev) if prev != q => return None,
                    _ => {}
                }
            }
        }
        Some(found.unwrap_or(0))
    }

    /// Converts an operator into the permuted basis; fails if it mixes charges.
    pub fn pack(&self, m: &OperatorMatrix) -> Option<BlockMatrix> {
        let q = self.charge_of(m)?;
        let mut out = BlockMatrix::zeros(self, q);
        for r in 0..self.dim {
            for c in 0..self.dim {
                out.data[self.inv[r] * self.dim + self.inv[c]] = m[(r, c)];
            }
        }
        Some(out)
    }

    pub fn unpack(&self, m: &BlockMatrix) -> OperatorMatrix {
        OperatorMatrix::from_fn(self.dim, self.dim, |r, c| m.data[self.inv[r] * self.dim + self.inv[c]])
    }

    /// Contiguous `(start, len)` row segments covering every block of charge `q`.
    fn spans(&self, q: i32) -> Vec<(usize, usize)> {
        let mut spans = Vec::new();
        for s in 0..self.n_sectors() {
            if let Some(t) = self.target(s, q) {
                let cols = self.range(s);
                for row in self.range(t) {
                    if !cols.is_empty() {
                        spans.push((row * self.dim + cols.start, cols.len()));
                    }
                }
            }
        }
        spans
    }

    /// Diagonal blocks of a charge-0 matrix, as standalone dense matrices.
    pub fn diagonal_blocks(&self, m: &BlockMatrix) -> Vec<OperatorMatrix> {
        debug_assert_eq!(m.charge, 0);
        (0..self.n_sectors())
            .filter(|&s| !self.range(s).is_empty())
            .map(|s| {
                let r = self.range(s);
                OperatorMatrix::from_fn(r.len(), r.len(), |i, j| m.data[(r.start + i) * self.dim + r.start + j])
            })
            .collect()
    }

    /// `out += alpha * a * b`.
    ///
    /// Zero entries of `a` are skipped, which makes products with the sparse
    /// Hamiltonian and Lindblad operators cheap.
    pub fn mul_acc(&self, alpha: Complex64, a: &BlockMatrix, b: &BlockMatrix, out: &mut BlockMatrix) {
        debug_assert_eq!(out.charge, self.add_charges(a.charge, b.charge));
        let d = self.dim;
        for s in 0..self.n_sectors() {
            let Some(mid) = self.target(s, b.charge) else { continue };
            let Some(t) = self.target(mid, a.charge) else { continue };
            let cols = self.range(s);
            if cols.is_empty() {
                continue;
            }
            let mids = self.range(mid);
            for i in self.range(t) {
                let a_seg = &a.data[i * d + mids.start..i * d + mids.end];
                let c_row = &mut out.data[i * d + cols.start..i * d + cols.end];
                for (k, &aik) in (mids.start..).zip(a_seg) {
                    if aik == ZERO {
                        continue;
                    }
                    let aik = alpha * aik;
                    let b_row = &b.data[k * d + cols.start..k * d + cols.end];
                    for (c, bv) in c_row.iter_mut().zip(b_row) {
                        *c += aik * bv;
                    }
                }
            }
        }
    }

    /// `out += alpha * a * b` for a sparse right factor.
    pub fn mul_acc_sparse_right(&self, alpha: Complex64, a: &BlockMatrix, b: &SparseRows, out: &mut BlockMatrix) {
        debug_assert_eq!(out.charge, self.add_charges(a.charge, b.charge));
        let d = self.dim;
        for &(start, len) in a.spans.iter() {
            let row = start / d;
            let col0 = start % d;
            for (j, &aik) in a.data[start..start + len].iter().enumerate() {
                if aik == ZERO {
                    continue;
                }
                let aik = alpha * aik;
                for &(col, bv) in &b.rows[col0 + j] {
                    out.data[row * d + col] += aik * bv;
                }
            }
        }
    }

    /// `out = alpha * a * b`.
    pub fn mul(&self, alpha: Complex64, a: &BlockMatrix, b: &BlockMatrix, out: &mut BlockMatrix) {
        out.fill_zero();
        self.mul_acc(alpha, a, b, out);
    }

    /// `out = a^dagger`.
    pub fn adjoint(&self, a: &BlockMatrix, out: &mut BlockMatrix) {
        debug_assert_eq!(out.charge, self.neg_charge(a.charge));
        let d = self.dim;
        for &(start, len) in a.spans.iter() {
            let row = start / d;
            let col0 = start % d;
            for (j, v) in a.data[start..start + len].iter().enumerate() {
                out.data[(col0 + j) * d + row] = v.conj();
            }
        }
    }
}

/// Row-compressed copy of a sparse [`BlockMatrix`].
#[derive(Debug, Clone)]
pub(crate) struct SparseRows {
    pub charge: i32,
    rows: Vec<Vec<(usize, Complex64)>>,
}

impl SparseRows {
    pub fn new(m: &BlockMatrix) -> Self {
        let d = (m.data.len() as f64).sqrt() as usize;
        let rows = m
            .data
            .chunks(d)
            .map(|r| r.iter().enumerate().filter(|(_, v)| **v != ZERO).map(|(c, v)| (c, *v)).collect())
            .collect();
        Self { charge: m.charge, rows }
    }
}

/// Dense matrix in a [`Grading`]'s permuted basis with a definite charge.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct BlockMatrix {
    pub charge: i32,
    pub data: Vec<Complex64>,
    spans: std::sync::Arc<Vec<(usize, usize)>>,
}

impl BlockMatrix {
    pub fn zeros(grading: &Grading, charge: i32) -> Self {
        let charge = grading.normalize(charge);
        Self {
            charge,
            data: vec![ZERO; grading.dim * grading.dim],
            spans: std::sync::Arc::new(grading.spans(charge)),
        }
    }

    pub fn fill_zero(&mut self) {
        for &(s, l) in self.spans.iter() {
            self.data[s..s + l].fill(ZERO);
        }
    }

    /// `self = base + h * k`
    pub fn set_axpy(&mut self, base: &BlockMatrix, h: f64, k: &BlockMatrix) {
        debug_assert_eq!(self.charge, base.charge);
        for &(s, l) in self.spans.iter() {
            let out = &mut self.data[s..s + l];
            for ((o, b), kv) in out.iter_mut().zip(&base.data[s..s + l]).zip(&k.data[s..s + l]) {
                *o = b + kv * h;
            }
        }
    }

    pub fn spans(&self) -> &[(usize, usize)] {
        &self.spans
    }


    pub fn is_finite(&self) -> bool {
        self.spans
            .iter()
            .flat_map(|&(s, l)| self.data[s..s + l].iter())
            .all(|z| z.re.is_finite() && z.im.is_finite())
    }
}
