//! Cayley–Dickson multiplication tables and scalar hypercomplex arithmetic.
//!
//! A multiplication table is stored as a signed index matrix: entry `(r, c)`
//! says that output component `r` of `w * x` receives `sign * w[index] * x[c]`.
//! Signs are kept in a separate matrix so that a "negative zero" entry is
//! representable without relying on float semantics.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::OnceLock;

use crate::error::{arg_err, Error, Result};

/// Largest supported algebra dimension (sedenions).
pub const MAX_DIM: usize = 16;

/// The two textbook doubling formulas for `(a, b) * (c, d)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Doubling {
    /// `(ac - conj(d) b, d a + b conj(c))`
    ConjugateLeft,
    /// `(ac - d conj(b), conj(a) d + c b)`
    ConjugateRight,
}

/// Doubling rule that reproduces the published sedenion table with the
/// weight as the left factor.
pub const TABLE_DOUBLING: Doubling = Doubling::ConjugateLeft;

fn check_dim(dim: usize) -> Result<()> {
    if dim == 0 || !dim.is_power_of_two() || dim > MAX_DIM {
        return arg_err(format!(
            "algebra dimension must be one of 1, 2, 4, 8, 16 (got {dim})"
        ));
    }
    Ok(())
}

#[derive(Clone, PartialEq, Eq)]
pub struct SignedIndexTable {
    dim: usize,
    index: Vec<u8>,
    negative: Vec<bool>,
}

impl SignedIndexTable {
    /// Builds a table from `(negative, index)` pairs in row-major order and
    /// checks every structural invariant.
    pub fn from_entries(dim: usize, entries: &[(bool, usize)]) -> Result<Self> {
        check_dim(dim)?;
        if entries.len() != dim * dim {
            return arg_err(format!(
                "table of dim {dim} needs {} entries, got {}",
                dim * dim,
                entries.len()
            ));
        }
        let mut index = Vec::with_capacity(dim * dim);
        let mut negative = Vec::with_capacity(dim * dim);
        for &(neg, idx) in entries {
            if idx >= dim {
                return arg_err(format!("table index {idx} out of range for dim {dim}"));
            }
            index.push(idx as u8);
            negative.push(neg);
        }
        let table = Self { dim, index, negative };
        table.validate()?;
        Ok(table)
    }

    /// Builds a table from signed integers. Zero entries are taken as positive.
    pub fn from_signed(dim: usize, values: &[i32]) -> Result<Self> {
        let entries: Vec<(bool, usize)> = values
            .iter()
            .map(|&v| (v < 0, v.unsigned_abs() as usize))
            .collect();
        Self::from_entries(dim, &entries)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Weight component feeding output `r` from input component `c`.
    #[inline]
    pub fn index(&self, r: usize, c: usize) -> usize {
        self.index[r * self.dim + c] as usize
    }

    #[inline]
    pub fn is_negative(&self, r: usize, c: usize) -> bool {
        self.negative[r * self.dim + c]
    }

    /// `+1.0` or `-1.0`.
    #[inline]
    pub fn sign(&self, r: usize, c: usize) -> f64 {
        if self.is_negative(r, c) {
            -1.0
        } else {
            1.0
        }
    }

    /// Entry as a signed integer; a negative zero prints as `0`.
    pub fn signed(&self, r: usize, c: usize) -> i32 {
        let v = self.index(r, c) as i32;
        if self.is_negative(r, c) {
            -v
        } else {
            v
        }
    }

    pub fn rows(&self) -> Vec<Vec<i32>> {
        (0..self.dim)
            .map(|r| (0..self.dim).map(|c| self.signed(r, c)).collect())
            .collect()
    }

    /// Each row and each column holds every absolute index exactly once.
    pub fn is_latin_square(&self) -> bool {
        let d = self.dim;
        for r in 0..d {
            let mut row = vec![false; d];
            let mut col = vec![false; d];
            for c in 0..d {
                let a = self.index(r, c);
                let b = self.index(c, r);
                if row[a] || col[b] {
                    return false;
                }
                row[a] = true;
                col[b] = true;
            }
        }
        true
    }

    /// Checks the Latin-square property plus the fixed first row
    /// `[+0, -1, ..., -(dim-1)]` and first column `[+0, +1, ..., +(dim-1)]`.
    pub fn validate(&self) -> Result<()> {
        if !self.is_latin_square() {
            return Err(Error::InvalidArgument(
                "table is not a Latin square in absolute index".into(),
            ));
        }
        for k in 0..self.dim {
            if self.index(0, k) != k || self.is_negative(0, k) != (k > 0) {
                return arg_err(format!("row 0 entry {k} is {}", self.signed(0, k)));
            }
            if self.index(k, 0) != k || self.is_negative(k, 0) {
                return arg_err(format!("column 0 entry {k} is {}", self.signed(k, 0)));
            }
        }
        Ok(())
    }

    /// Entries that differ from `other`, as `(r, c, self, other)`.
    pub fn diff(&self, other: &Self) -> Vec<(usize, usize, i32, i32)> {
        if self.dim != other.dim {
            return vec![(0, 0, self.dim as i32, other.dim as i32)];
        }
        let mut out = Vec::new();
        for r in 0..self.dim {
            for c in 0..self.dim {
                if self.index(r, c) != other.index(r, c)
                    || self.is_negative(r, c) != other.is_negative(r, c)
                {
                    out.push((r, c, self.signed(r, c), other.signed(r, c)));
                }
            }
        }
        out
    }

    /// Plain-text dump: `dim` lines of space separated signed integers.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for row in self.rows() {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            s.push_str(&line.join(" "));
            s.push('\n');
        }
        s
    }
}

impl fmt::Debug for SignedIndexTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "SignedIndexTable(dim={})", self.dim)?;
        f.write_str(&self.to_text())
    }
}

/// Product of two hypercomplex values given as component slices, computed by
/// recursive Cayley–Dickson doubling.
pub fn cayley_dickson_mul(a: &[f64], b: &[f64], doubling: Doubling) -> Vec<f64> {
    assert_eq!(a.len(), b.len());
    let n = a.len();
    if n == 1 {
        return vec![a[0] * b[0]];
    }
    let h = n / 2;
    let (p, q) = a.split_at(h);
    let (r, s) = b.split_at(h);
    let conj = |x: &[f64]| -> Vec<f64> {
        let mut y = x.to_vec();
        y.iter_mut().skip(1).for_each(|v| *v = -*v);
        y
    };
    let (lo_a, lo_b, hi_a, hi_b) = match doubling {
        Doubling::ConjugateLeft => (
            cayley_dickson_mul(p, r, doubling),
            cayley_dickson_mul(&conj(s), q, doubling),
            cayley_dickson_mul(s, p, doubling),
            cayley_dickson_mul(q, &conj(r), doubling),
        ),
        Doubling::ConjugateRight => (
            cayley_dickson_mul(p, r, doubling),
            cayley_dickson_mul(s, &conj(q), doubling),
            cayley_dickson_mul(&conj(p), s, doubling),
            cayley_dickson_mul(r, q, doubling),
        ),
    };
    let mut out = Vec::with_capacity(n);
    out.extend(lo_a.iter().zip(&lo_b).map(|(x, y)| x - y));
    out.extend(hi_a.iter().zip(&hi_b).map(|(x, y)| x + y));
    out
}

/// Multiplication table of the Cayley–Dickson algebra of dimension `dim`.
pub fn cayley_dickson_table(dim: usize) -> Result<SignedIndexTable> {
    cayley_dickson_table_with(dim, TABLE_DOUBLING)
}

pub fn cayley_dickson_table_with(dim: usize, doubling: Doubling) -> Result<SignedIndexTable> {
    check_dim(dim)?;
    let mut entries = vec![(false, 0usize); dim * dim];
    for w in 0..dim {
        for x in 0..dim {
            let mut ew = vec![0.0; dim];
            let mut ex = vec![0.0; dim];
            ew[w] = 1.0;
            ex[x] = 1.0;
            let y = cayley_dickson_mul(&ew, &ex, doubling);
            // a product of basis units is a single signed basis unit
            let (r, v) = y
                .iter()
                .enumerate()
                .find(|(_, v)| **v != 0.0)
                .map(|(r, v)| (r, *v))
                .expect("product of basis units is nonzero");
            entries[r * dim + x] = (v < 0.0, w);
        }
    }
    SignedIndexTable::from_entries(dim, &entries)
}

#[rustfmt::skip]
const PUBLISHED_SEDENION_TABLE: [[i32; 16]; 16] = [
    [  0,  -1,  -2,  -3,  -4,  -5,  -6,  -7,  -8,  -9, -10, -11, -12, -13, -14, -15],
    [  1,   0,  -3,   2,  -5,   4,   7,  -6,  -9,   8,  11, -10,  13, -12, -15,  14],
    [  2,   3,   0,  -1,  -6,  -7,   4,   5, -10, -11,   8,   9,  14,  15, -12, -13],
    [  3,  -2,   1,   0,  -7,   6,  -5,   4, -11,  10,  -9,   8,  15, -14,  13, -12],
    [  4,   5,   6,   7,   0,  -1,  -2,  -3, -12, -13, -14, -15,   8,   9,  10,  11],
    [  5,  -4,   7,  -6,   1,   0,   3,  -2, -13,  12, -15,  14,  -9,   8, -11,  10],
    [  6,  -7,  -4,   5,   2,  -3,   0,   1, -14,  15,  12, -13, -10,  11,   8,  -9],
    [  7,   6,  -5,  -4,   3,   2,  -1,   0, -15, -14,  13,  12, -11, -10,   9,   8],
    [  8,   9,  10,  11,  12,  13,  14,  15,   0,  -1,  -2,  -3,  -4,  -5,  -6,  -7],
    [  9,  -8,  11, -10,  13, -12, -15,  14,   1,   0,   3,  -2,   5,  -4,  -7,   6],
    [ 10, -11,  -8,   9,  14,  15, -12, -13,   2,  -3,   0,   1,   6,   7,  -4,  -5],
    [ 11,  10,  -9,  -8,  15, -14,  13, -12,   3,   2,  -1,   0,   7,  -6,   5,  -4],
    [ 12, -13, -14, -15,  -8,   9,  10,  11,   4,  -5,  -6,  -7,   0,   1,   2,   3],
    [ 13,  12, -15,  14,  -9,  -8, -11,  10,   5,   4,  -7,   6,  -1,   0,  -3,   2],
    [ 14,  15,  12, -13, -10,  11,  -8,  -9,   6,   7,   4,  -5,  -2,   3,   0,  -1],
    [ 15, -14,  13,  12, -11, -10,   9,  -8,   7,  -6,   5,   4,  -3,  -2,   1,   0],
];

/// The published 16×16 sedenion table, transcribed entry by entry. Serves as
/// the reference the generated table is checked against.
pub fn published_table_16() -> SignedIndexTable {
    let flat: Vec<i32> = PUBLISHED_SEDENION_TABLE.iter().flatten().copied().collect();
    SignedIndexTable::from_signed(16, &flat).expect("published table is well formed")
}

/// Shared dimension-16 table used by the convolution layers.
pub fn sedenion_table() -> &'static SignedIndexTable {
    static TABLE: OnceLock<SignedIndexTable> = OnceLock::new();
    TABLE.get_or_init(|| cayley_dickson_table(16).expect("dim 16 is supported"))
}

/// A hypercomplex value with `dim` real components; component 0 is the real part.
#[derive(Clone, Debug, PartialEq)]
pub struct HyperNumber {
    components: Vec<f64>,
}

impl HyperNumber {
    pub fn new(components: Vec<f64>) -> Result<Self> {
        check_dim(components.len())?;
        if let Some(k) = components.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("component {k} of hypercomplex value")));
        }
        Ok(Self { components })
    }

    pub fn zero(dim: usize) -> Self {
        Self {
            components: vec![0.0; dim],
        }
    }

    pub fn real(dim: usize, value: f64) -> Self {
        let mut z = Self::zero(dim);
        z.components[0] = value;
        z
    }

    /// Basis unit `e_k` (`e_0` is the real unit).
    pub fn unit(dim: usize, k: usize) -> Self {
        let mut z = Self::zero(dim);
        z.components[k] = 1.0;
        z
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[f64] {
        &self.components
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            components: self.components.iter().map(|v| v * s).collect(),
        }
    }

    pub fn conjugate(&self) -> Self {
        let mut components = self.components.clone();
        components.iter_mut().skip(1).for_each(|v| *v = -*v);
        Self { components }
    }

    pub fn is_zero(&self) -> bool {
        self.components.iter().all(|v| *v == 0.0)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.components
            .iter()
            .zip(&other.components)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl Add for &HyperNumber {
    type Output = HyperNumber;
    fn add(self, rhs: Self) -> HyperNumber {
        HyperNumber {
            components: self.components.iter().zip(&rhs.components).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &HyperNumber {
    type Output = HyperNumber;
    fn sub(self, rhs: Self) -> HyperNumber {
        HyperNumber {
            components: self.components.iter().zip(&rhs.components).map(|(a, b)| a - b).collect(),
        }
    }
}

impl Neg for &HyperNumber {
    type Output = HyperNumber;
    fn neg(self) -> HyperNumber {
        self.scale(-1.0)
    }
}

/// `w * x` through the signed index table: `y_r = sum_c sign(r,c) w[index(r,c)] x[c]`.
pub fn hyper_mul(w: &HyperNumber, x: &HyperNumber, table: &SignedIndexTable) -> Result<HyperNumber> {
    let d = table.dim();
    if w.dim() != d || x.dim() != d {
        return Err(Error::Shape(format!(
            "hypercomplex product of dims {} and {} with a dim {d} table",
            w.dim(),
            x.dim()
        )));
    }
    let mut y = vec![0.0; d];
    for (r, yr) in y.iter_mut().enumerate() {
        for c in 0..d {
            *yr += table.sign(r, c) * w.components[table.index(r, c)] * x.components[c];
        }
    }
    Ok(HyperNumber { components: y })
}

impl Mul for &HyperNumber {
    type Output = HyperNumber;

    /// Uses the generated table of matching dimension. Panics on a dimension mismatch.
    fn mul(self, rhs: Self) -> HyperNumber {
        let table = if self.dim() == 16 {
            sedenion_table().clone()
        } else {
            cayley_dickson_table(self.dim()).expect("valid dimension")
        };
        hyper_mul(self, rhs, &table).expect("matching dimensions")
    }
}

/// `e_i + sign * e_j` for imaginary units `i < j`.
fn unit_pair(dim: usize, i: usize, j: usize, negative: bool) -> HyperNumber {
    let mut z = HyperNumber::zero(dim);
    z.components[i] = 1.0;
    z.components[j] = if negative { -1.0 } else { 1.0 };
    z
}

/// Exhaustive search over pairs `(e_i ± e_j, e_k ± e_l)` of imaginary units for
/// a product that is exactly zero. Returns the first hit in lexicographic order
/// of `(i, j, sign, k, l, sign)`.
pub fn find_zero_divisor(table: &SignedIndexTable) -> Option<(HyperNumber, HyperNumber)> {
    let d = table.dim();
    let pairs: Vec<(usize, usize)> = (1..d)
        .flat_map(|i| (i + 1..d).map(move |j| (i, j)))
        .collect();
    for &(i, j) in &pairs {
        for neg_u in [false, true] {
            let u = unit_pair(d, i, j, neg_u);
            for &(k, l) in &pairs {
                for neg_v in [false, true] {
                    let v = unit_pair(d, k, l, neg_v);
                    let p = hyper_mul(&u, &v, table).expect("dims match table");
                    if p.is_zero() {
                        return Some((u, v));
                    }
                }
            }
        }
    }
    None
}
