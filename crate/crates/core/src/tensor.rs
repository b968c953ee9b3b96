//! Dense vector/matrix arithmetic with FLOP accounting.
//!
//! Every kernel takes a [`FlopLedger`] and a [`Category`] and charges the
//! nominal operation count for the shapes it was given. Additions and
//! multiplications cost one FLOP, a division four and an exponential eight.
//! Counts depend only on operand dimensions, never on values.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FLOP_ADD: u64 = 1;
pub const FLOP_MUL: u64 = 1;
pub const FLOP_DIV: u64 = 4;
pub const FLOP_EXP: u64 = 8;

/// Ledger bucket a kernel charges its operations to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    EmbedStory,
    EmbedQuery,
    InnerProduct,
    Softmax,
    WeightedSum,
    KeySum,
    KeyGen,
    Fc,
    Icn,
    Other,
}

impl Category {
    pub const ALL: [Category; 10] = [
        Category::EmbedStory,
        Category::EmbedQuery,
        Category::InnerProduct,
        Category::Softmax,
        Category::WeightedSum,
        Category::KeySum,
        Category::KeyGen,
        Category::Fc,
        Category::Icn,
        Category::Other,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Category::EmbedStory => "embed_story",
            Category::EmbedQuery => "embed_query",
            Category::InnerProduct => "inner_product",
            Category::Softmax => "softmax",
            Category::WeightedSum => "weighted_sum",
            Category::KeySum => "key_sum",
            Category::KeyGen => "key_gen",
            Category::Fc => "fc",
            Category::Icn => "icn",
            Category::Other => "other",
        }
    }

    fn slot(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Per-category FLOP counters. Counters only grow until [`FlopLedger::reset`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FlopLedger {
    counts: [u64; 10],
}

impl FlopLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn charge(&mut self, category: Category, flops: u64) {
        self.counts[category.slot()] += flops;
    }

    pub fn get(&self, category: Category) -> u64 {
        self.counts[category.slot()]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn snapshot(&self) -> FlopLedger {
        self.clone()
    }

    pub fn reset(&mut self) {
        self.counts = [0; 10];
    }

    /// Adds every counter of `other` into `self`.
    pub fn merge(&mut self, other: &FlopLedger) {
        for (a, b) in self.counts.iter_mut().zip(other.counts.iter()) {
            *a += *b;
        }
    }

    /// Per-category `self - earlier`. `None` if any counter went backwards,
    /// which only happens when the two ledgers are unrelated or one was reset.
    pub fn since(&self, earlier: &FlopLedger) -> Option<FlopLedger> {
        let mut out = FlopLedger::new();
        for (i, (a, b)) in self.counts.iter().zip(earlier.counts.iter()).enumerate() {
            out.counts[i] = a.checked_sub(*b)?;
        }
        Some(out)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Category, u64)> + '_ {
        Category::ALL.iter().map(move |c| (*c, self.get(*c)))
    }

    pub fn to_map(&self) -> BTreeMap<String, u64> {
        self.iter().map(|(c, n)| (c.label().to_string(), n)).collect()
    }
}

impl Serialize for FlopLedger {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_map().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for FlopLedger {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let map = BTreeMap::<String, u64>::deserialize(deserializer)?;
        let mut ledger = FlopLedger::new();
        for (label, n) in map {
            let cat = Category::ALL
                .iter()
                .find(|c| c.label() == label)
                .ok_or_else(|| serde::de::Error::custom(format!("unknown ledger category {label}")))?;
            ledger.charge(*cat, n);
        }
        Ok(ledger)
    }
}

/// Non-empty vector of finite reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(data: Vec<f64>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::dim("Vector::new", 1, 0));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("Vector::new"));
        }
        Ok(Vector(data))
    }

    pub fn zeros(len: usize) -> Self {
        assert!(len >= 1, "vector length must be at least 1");
        Vector(vec![0.0; len])
    }

    // Callers guarantee non-emptiness and finiteness.
    pub(crate) fn from_raw(data: Vec<f64>) -> Self {
        debug_assert!(!data.is_empty());
        Vector(data)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for Vector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for Vector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Vector::new(v)
    }
}

impl From<Vector> for Vec<f64> {
    fn from(v: Vector) -> Vec<f64> {
        v.0
    }
}

/// Row-major dense matrix of finite reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim("Matrix::new", rows * cols, data.len()));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("Matrix::new"));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn identity(n: usize) -> Self {
        Matrix::from_fn(n, n, |r, c| if r == c { 1.0 } else { 0.0 })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub(crate) fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub(crate) fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    /// Copies the listed rows, in order, into a new matrix.
    pub fn select_rows(&self, rows: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(rows.len() * self.cols);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        Matrix {
            rows: rows.len(),
            cols: self.cols,
            data,
        }
    }
}

fn check_finite(values: &[f64], op: &'static str) -> Result<()> {
    if values.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(op))
    }
}

/// `M v` counted as `rows · 2 cols`: each output accumulates `cols`
/// multiply-adds starting from zero (or from a bias term).
pub fn matvec_acc(m: &Matrix, v: &[f64], ledger: &mut FlopLedger, category: Category) -> Result<Vector> {
    let mut scratch = FlopLedger::new();
    let out = matvec(m, v, &mut scratch, category)?;
    ledger.charge(category, (FLOP_MUL + FLOP_ADD) * (m.rows * m.cols) as u64);
    Ok(out)
}

/// `Σ u_i v_i`, charging `2n - 1`.
pub fn dot(u: &[f64], v: &[f64], ledger: &mut FlopLedger, category: Category) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::dim("dot", u.len(), v.len()));
    }
    if u.is_empty() {
        return Err(Error::dim("dot", 1, 0));
    }
    let s: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    ledger.charge(category, (FLOP_MUL + FLOP_ADD) * u.len() as u64 - FLOP_ADD);
    if !s.is_finite() {
        return Err(Error::NonFinite("dot"));
    }
    Ok(s)
}

/// `M v`, charging `rows (2 cols - 1)`.
pub fn matvec(m: &Matrix, v: &[f64], ledger: &mut FlopLedger, category: Category) -> Result<Vector> {
    if m.cols != v.len() {
        return Err(Error::dim("matvec", m.cols, v.len()));
    }
    if m.rows == 0 {
        return Err(Error::dim("matvec", 1, 0));
    }
    let out = (0..m.rows)
        .map(|r| dot(m.row(r), v, ledger, category))
        .collect::<Result<Vec<_>>>()?;
    Ok(Vector::from_raw(out))
}

/// Max-subtracted softmax. Charges the nominal `13n - 1`
/// (n exponentials, n - 1 additions for the sum, n divisions).
pub fn softmax(v: &[f64], ledger: &mut FlopLedger) -> Result<Vector> {
    softmax_as(v, ledger, Category::Softmax)
}

/// [`softmax`] charged to an arbitrary category.
pub fn softmax_as(v: &[f64], ledger: &mut FlopLedger, category: Category) -> Result<Vector> {
    if v.is_empty() {
        return Err(Error::dim("softmax", 1, 0));
    }
    let out = softmax_raw(v);
    let n = v.len() as u64;
    ledger.charge(category, FLOP_EXP * n + FLOP_ADD * (n - 1) + FLOP_DIV * n);
    check_finite(&out, "softmax")?;
    Ok(Vector::from_raw(out))
}

/// Unledgered softmax, shared with training code.
pub(crate) fn softmax_raw(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Element-wise `a + b`, charging `n`.
pub fn add(a: &[f64], b: &[f64], ledger: &mut FlopLedger, category: Category) -> Result<Vector> {
    if a.len() != b.len() {
        return Err(Error::dim("add", a.len(), b.len()));
    }
    let out: Vec<f64> = a.iter().zip(b).map(|(x, y)| x + y).collect();
    ledger.charge(category, FLOP_ADD * a.len() as u64);
    check_finite(&out, "add")?;
    Ok(Vector::from_raw(out))
}

/// `acc += x`, charging `n`.
pub fn add_assign(acc: &mut [f64], x: &[f64], ledger: &mut FlopLedger, category: Category) -> Result<()> {
    if acc.len() != x.len() {
        return Err(Error::dim("add_assign", acc.len(), x.len()));
    }
    for (a, b) in acc.iter_mut().zip(x) {
        *a += b;
    }
    ledger.charge(category, FLOP_ADD * acc.len() as u64);
    check_finite(acc, "add_assign")
}

/// Element-wise product `a ⊙ b`, charging `n`.
pub fn hadamard(a: &[f64], b: &[f64], ledger: &mut FlopLedger, category: Category) -> Result<Vector> {
    if a.len() != b.len() {
        return Err(Error::dim("hadamard", a.len(), b.len()));
    }
    let out: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    ledger.charge(category, FLOP_MUL * a.len() as u64);
    check_finite(&out, "hadamard")?;
    Ok(Vector::from_raw(out))
}

/// `acc += a ⊙ b`, charging `2n`.
pub fn hadamard_acc(
    acc: &mut [f64],
    a: &[f64],
    b: &[f64],
    ledger: &mut FlopLedger,
    category: Category,
) -> Result<()> {
    if acc.len() != a.len() || a.len() != b.len() {
        return Err(Error::dim("hadamard_acc", acc.len(), a.len().min(b.len())));
    }
    for ((s, x), y) in acc.iter_mut().zip(a).zip(b) {
        *s += x * y;
    }
    ledger.charge(category, (FLOP_MUL + FLOP_ADD) * acc.len() as u64);
    check_finite(acc, "hadamard_acc")
}

/// `alpha * x`, charging `n`.
pub fn scale(alpha: f64, x: &[f64], ledger: &mut FlopLedger, category: Category) -> Result<Vector> {
    let out: Vec<f64> = x.iter().map(|v| alpha * v).collect();
    ledger.charge(category, FLOP_MUL * x.len() as u64);
    check_finite(&out, "scale")?;
    Ok(Vector::from_raw(out))
}

/// `acc += alpha * x`, charging `2n`.
pub fn axpy(acc: &mut [f64], alpha: f64, x: &[f64], ledger: &mut FlopLedger, category: Category) -> Result<()> {
    if acc.len() != x.len() {
        return Err(Error::dim("axpy", acc.len(), x.len()));
    }
    for (a, v) in acc.iter_mut().zip(x) {
        *a += alpha * v;
    }
    ledger.charge(category, (FLOP_MUL + FLOP_ADD) * acc.len() as u64);
    check_finite(acc, "axpy")
}

/// Index of the largest entry; ties go to the lowest index. Comparisons are free.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate().skip(1) {
        if *x > v[best] {
            best = i;
        }
    }
    best
}
