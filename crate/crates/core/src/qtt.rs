//! Quantized tensor-train (QTT) vectors.
//!
//! A vector of length `q^d′` is viewed as a `d′`-way tensor through the
//! little-endian digit map `i − 1 = Σ_ν (j_ν − 1) q^(ν−1)`, so digit 1 is the
//! fastest index and core 1 carries it. Core `k` is an `r_{k−1} × q × r_k`
//! array stored row-major, i.e. entry `(a, j, b)` sits at
//! `(a·q + j)·r_k + b`.

use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::linalg::{thin_svd, truncation_rank, SvdScalar};

/// Scalars a QTT vector can hold.
pub trait QttScalar: SvdScalar + Send + Sync + 'static {
    /// Value of the JSON `dtype` field.
    const DTYPE: &'static str;
    fn to_json(self) -> Value;
    fn from_json(v: &Value) -> Option<Self>;
}

impl QttScalar for f64 {
    const DTYPE: &'static str = "real";
    fn to_json(self) -> Value {
        Value::from(self)
    }
    fn from_json(v: &Value) -> Option<Self> {
        v.as_f64()
    }
}

impl QttScalar for Complex64 {
    const DTYPE: &'static str = "complex";
    fn to_json(self) -> Value {
        Value::from(vec![self.re, self.im])
    }
    fn from_json(v: &Value) -> Option<Self> {
        match v.as_array()?.as_slice() {
            [re, im] => Some(Complex64::new(re.as_f64()?, im.as_f64()?)),
            _ => None,
        }
    }
}

/// One TT core of shape `r_left × q × r_right`.
#[derive(Debug, Clone, PartialEq)]
pub struct Core<T> {
    pub r_left: usize,
    pub q: usize,
    pub r_right: usize,
    pub data: Vec<T>,
}

impl<T: QttScalar> Core<T> {
    pub fn new(r_left: usize, q: usize, r_right: usize, data: Vec<T>) -> Result<Self> {
        if r_left == 0 || q == 0 || r_right == 0 || data.len() != r_left * q * r_right {
            return Err(Error::Dimension(format!(
                "core of shape {r_left}×{q}×{r_right} cannot hold {} entries",
                data.len()
            )));
        }
        Ok(Self { r_left, q, r_right, data })
    }

    #[inline]
    pub fn get(&self, a: usize, j: usize, b: usize) -> T {
        self.data[(a * self.q + j) * self.r_right + b]
    }

    /// Slice `G(:, j, :)` as an `r_left × r_right` matrix.
    pub(crate) fn slice(&self, j: usize) -> DMatrix<T> {
        DMatrix::from_fn(self.r_left, self.r_right, |a, b| self.get(a, j, b))
    }

    /// `(r_left·q) × r_right` unfolding with row index `a·q + j`.
    pub(crate) fn left_matrix(&self) -> DMatrix<T> {
        DMatrix::from_row_slice(self.r_left * self.q, self.r_right, &self.data)
    }

    /// `r_left × (q·r_right)` unfolding with column index `j·r_right + b`.
    pub(crate) fn right_matrix(&self) -> DMatrix<T> {
        DMatrix::from_row_slice(self.r_left, self.q * self.r_right, &self.data)
    }

    pub(crate) fn from_left_matrix(m: &DMatrix<T>, q: usize) -> Self {
        let r_right = m.ncols();
        let r_left = m.nrows() / q;
        let data = (0..m.nrows()).flat_map(|i| (0..r_right).map(move |b| m[(i, b)])).collect();
        Self { r_left, q, r_right, data }
    }

    pub(crate) fn from_right_matrix(m: &DMatrix<T>, q: usize) -> Self {
        let r_left = m.nrows();
        let r_right = m.ncols() / q;
        let data = (0..r_left).flat_map(|a| (0..m.ncols()).map(move |c| m[(a, c)])).collect();
        Self { r_left, q, r_right, data }
    }
}

/// A vector of length `q^d′` in QTT format.
#[derive(Debug, Clone, PartialEq)]
pub struct QttVector<T> {
    q: usize,
    cores: Vec<Core<T>>,
}

/// Number of digits `d′` with `q^d′ = len`, or a length error.
pub fn qtt_exponent(len: usize, q: usize) -> Result<usize> {
    if q < 2 {
        return Err(Error::InvalidParameter(format!("mode size q = {q} must be at least 2")));
    }
    let mut d = 0;
    let mut n = 1usize;
    while n < len {
        n = n.checked_mul(q).ok_or(Error::Length { len, q })?;
        d += 1;
    }
    if n != len || d == 0 {
        return Err(Error::Length { len, q });
    }
    Ok(d)
}

/// Digits `(j_1, …, j_d′)`, 1-based, of the 1-based index `i`.
pub fn fold_index(i: usize, q: usize, d_prime: usize) -> Vec<usize> {
    let mut rest = i - 1;
    (0..d_prime)
        .map(|_| {
            let j = rest % q;
            rest /= q;
            j + 1
        })
        .collect()
}

/// Inverse of [`fold_index`].
pub fn unfold_index(digits: &[usize], q: usize) -> usize {
    digits.iter().rev().fold(0, |acc, &j| acc * q + (j - 1)) + 1
}

/// A vector viewed as its `q`-adic tensor image.
#[derive(Debug, Clone, PartialEq)]
pub struct Folded<T> {
    pub q: usize,
    pub d_prime: usize,
    data: Vec<T>,
}

impl<T: Copy> Folded<T> {
    /// Entry at the 1-based digits `(j_1, …, j_d′)`.
    pub fn get(&self, digits: &[usize]) -> T {
        assert_eq!(digits.len(), self.d_prime, "wrong number of digits");
        self.data[unfold_index(digits, self.q) - 1]
    }

    pub fn unfold(self) -> Vec<T> {
        self.data
    }
}

/// Folds `x` into its `q`-adic tensor image; the length must be a power of `q`.
pub fn fold<T: Copy>(x: &[T], q: usize) -> Result<Folded<T>> {
    let d_prime = qtt_exponent(x.len(), q)?;
    Ok(Folded { q, d_prime, data: x.to_vec() })
}

fn norm2<T: QttScalar>(x: &[T]) -> f64 {
    x.iter().map(|v| v.modulus_squared()).sum::<f64>().sqrt()
}

/// Relative 2-norm distance `‖x − y‖₂ / ‖y‖₂` (absolute when `y = 0`).
pub fn relative_error<T: QttScalar>(x: &[T], y: &[T]) -> f64 {
    assert_eq!(x.len(), y.len(), "length mismatch");
    let diff = x.iter().zip(y).map(|(a, b)| (*a - *b).modulus_squared()).sum::<f64>().sqrt();
    let ny = norm2(y);
    if ny > 0.0 {
        diff / ny
    } else {
        diff
    }
}

/// TT-SVD compression of `x` so that `‖x − x̃‖₂ ≤ eps·‖x‖₂`.
pub fn compress<T: QttScalar>(x: &[T], q: usize, eps: f64) -> Result<QttVector<T>> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::InvalidParameter(format!("tolerance must be positive, got {eps}")));
    }
    let d = qtt_exponent(x.len(), q)?;
    let delta = bond_budget(eps, norm2(x), d);
    let mut cores = Vec::with_capacity(d);
    // Column-major reshapes keep the little-endian digit order.
    let mut w = DMatrix::from_column_slice(1, x.len(), x);
    for _ in 0..d - 1 {
        let r = w.nrows();
        let cols = w.ncols() / q;
        let m = DMatrix::from_column_slice(r * q, cols, w.as_slice());
        let (u, s, vt) = thin_svd(&m)?;
        let rank = truncation_rank(&s, delta);
        let u = u.columns(0, rank);
        // Rows of `m` are `a + r·j`; cores want `a·q + j`.
        let core = Core {
            r_left: r,
            q,
            r_right: rank,
            data: (0..r)
                .flat_map(|a| (0..q).flat_map(move |j| (0..rank).map(move |b| (a, j, b))))
                .map(|(a, j, b)| u[(a + r * j, b)])
                .collect(),
        };
        cores.push(core);
        let mut sv = vt.rows(0, rank).into_owned();
        for (b, &sb) in s.iter().take(rank).enumerate() {
            sv.row_mut(b).scale_mut(sb);
        }
        w = sv;
    }
    let r = w.nrows();
    cores.push(Core {
        r_left: r,
        q,
        r_right: 1,
        data: (0..r).flat_map(|a| (0..q).map(move |j| (a, j))).map(|(a, j)| w[(a, j)]).collect(),
    });
    Ok(QttVector { q, cores })
}

fn bond_budget(eps: f64, norm: f64, d: usize) -> f64 {
    if d > 1 {
        eps * norm / ((d - 1) as f64).sqrt()
    } else {
        eps * norm
    }
}

/// Rank-1 QTT of `(z^(n−1))_{n=1..2^d′}` with cores `[1, z^(2^(p−1))]`.
pub fn exp_qtt(z: Complex64, d_prime: usize) -> Result<QttVector<Complex64>> {
    if d_prime == 0 {
        return Err(Error::InvalidParameter("d′ must be at least 1".into()));
    }
    // z^(2^p) from the polar form: scaling the angle by 2^p is exact, while
    // repeated squaring doubles the rounding error at every step.
    let (modulus, angle) = z.to_polar();
    let mut cores = Vec::with_capacity(d_prime);
    for p in 0..d_prime {
        let scale = 2f64.powi(p as i32);
        let power = if z.im == 0.0 {
            Complex64::new(z.re.powf(scale), 0.0)
        } else {
            Complex64::from_polar(modulus.powf(scale), angle * scale)
        };
        cores.push(Core::new(1, 2, 1, vec![Complex64::new(1.0, 0.0), power])?);
    }
    Ok(QttVector { q: 2, cores })
}

/// Rank-2 QTT of `(sin(ω(n−1)))_{n=1..2^d′}` built from rotation cores.
pub fn sin_qtt(omega: f64, d_prime: usize) -> Result<QttVector<f64>> {
    if d_prime < 2 {
        return Err(Error::InvalidParameter("d′ must be at least 2".into()));
    }
    let rot = |p: usize, j: usize| {
        let theta = omega * (j as f64) * 2f64.powi(p as i32);
        (theta.cos(), theta.sin())
    };
    let mut cores = Vec::with_capacity(d_prime);
    // sin θ = e₂ᵀ R(θ) e₁ and the rotations R(θ_p) multiply to R(Σ θ_p).
    let (c0, s0) = rot(0, 0);
    let (c1, s1) = rot(0, 1);
    cores.push(Core::new(1, 2, 2, vec![s0, c0, s1, c1])?);
    for p in 1..d_prime - 1 {
        let (c0, s0) = rot(p, 0);
        let (c1, s1) = rot(p, 1);
        // Entry (a, j, b) = R(θ_j)[a, b] with R = [[c, −s], [s, c]].
        cores.push(Core::new(2, 2, 2, vec![c0, -s0, c1, -s1, s0, c0, s1, c1])?);
    }
    let (c0, s0) = rot(d_prime - 1, 0);
    let (c1, s1) = rot(d_prime - 1, 1);
    cores.push(Core::new(2, 2, 1, vec![c0, c1, s0, s1])?);
    Ok(QttVector { q: 2, cores })
}

impl<T: QttScalar> QttVector<T> {
    /// Builds a QTT vector from cores, checking the shape chain.
    pub fn from_cores(q: usize, cores: Vec<Core<T>>) -> Result<Self> {
        if cores.is_empty() {
            return Err(Error::Dimension("a QTT vector needs at least one core".into()));
        }
        if q < 2 {
            return Err(Error::InvalidParameter(format!("mode size q = {q} must be at least 2")));
        }
        let mut left = 1;
        for (k, c) in cores.iter().enumerate() {
            if c.q != q || c.r_left != left || c.data.len() != c.r_left * c.q * c.r_right {
                return Err(Error::Dimension(format!("core {} breaks the shape chain", k + 1)));
            }
            left = c.r_right;
        }
        if left != 1 {
            return Err(Error::Dimension("last core must have right rank 1".into()));
        }
        Ok(Self { q, cores })
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn d_prime(&self) -> usize {
        self.cores.len()
    }

    /// Represented length `q^d′`.
    pub fn len(&self) -> usize {
        self.q.pow(self.cores.len() as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn cores(&self) -> &[Core<T>] {
        &self.cores
    }

    /// Internal bond ranks `r_1, …, r_{d′−1}`.
    pub fn ranks(&self) -> Vec<usize> {
        self.cores[..self.cores.len() - 1].iter().map(|c| c.r_right).collect()
    }

    pub fn max_rank(&self) -> usize {
        self.ranks().into_iter().max().unwrap_or(1)
    }

    /// `sqrt((1/(d′−1)) Σ r_k²)`; 1 for a single core.
    pub fn average_rank(&self) -> f64 {
        average_rank(&self.ranks())
    }

    /// Number of stored scalars `Σ r_{k−1}·q·r_k`.
    pub fn param_count(&self) -> usize {
        self.cores.iter().map(|c| c.data.len()).sum()
    }

    /// Full vector.
    pub fn unfold(&self) -> Vec<T> {
        // `acc` is (prefix length) × r, column-major, prefix index fastest.
        let mut acc: Vec<T> = vec![T::one()];
        let mut prefix = 1;
        let mut r = 1;
        for c in &self.cores {
            let mut next = vec![T::zero(); prefix * self.q * c.r_right];
            let new_prefix = prefix * self.q;
            for j in 0..self.q {
                for b in 0..c.r_right {
                    let dst = &mut next[b * new_prefix + j * prefix..b * new_prefix + (j + 1) * prefix];
                    for a in 0..r {
                        let g = c.get(a, j, b);
                        let src = &acc[a * prefix..(a + 1) * prefix];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += *s * g;
                        }
                    }
                }
            }
            acc = next;
            prefix = new_prefix;
            r = c.r_right;
        }
        acc
    }

    /// Entry at the 1-based index `i` by chained core contraction.
    pub fn element(&self, i: usize) -> Result<T> {
        let len = self.len();
        if i == 0 || i > len {
            return Err(Error::Range { index: i, len });
        }
        let digits = fold_index(i, self.q, self.cores.len());
        Ok(self.element_digits(&digits))
    }

    fn element_digits(&self, digits: &[usize]) -> T {
        let mut v = vec![T::one()];
        for (c, &j) in self.cores.iter().zip(digits) {
            let mut next = vec![T::zero(); c.r_right];
            for (a, va) in v.iter().enumerate() {
                for (b, nb) in next.iter_mut().enumerate() {
                    *nb += *va * c.get(a, j - 1, b);
                }
            }
            v = next;
        }
        v[0]
    }

    /// Euclidean norm computed in TT format.
    pub fn norm(&self) -> f64 {
        // Gram matrix of the left partial contractions.
        let mut g = DMatrix::<T>::identity(1, 1);
        for c in &self.cores {
            let mut next = DMatrix::<T>::zeros(c.r_right, c.r_right);
            for j in 0..c.q {
                let s = c.slice(j);
                next += s.adjoint() * &g * &s;
            }
            g = next;
        }
        g[(0, 0)].real().max(0.0).sqrt()
    }

    /// TT rounding: re-truncates to relative accuracy `eps`.
    pub fn round(&self, eps: f64) -> Result<Self> {
        if !(eps > 0.0) || !eps.is_finite() {
            return Err(Error::InvalidParameter(format!("tolerance must be positive, got {eps}")));
        }
        let d = self.cores.len();
        let q = self.q;
        let mut cores = self.cores.clone();
        // Right-to-left orthogonalization: G_k = L·Q with orthonormal rows.
        for k in (1..d).rev() {
            let m = cores[k].right_matrix();
            let qr = m.adjoint().qr();
            let (qm, rm) = (qr.q(), qr.r());
            cores[k] = Core::from_right_matrix(&qm.adjoint(), q);
            let left = cores[k - 1].left_matrix() * rm.adjoint();
            cores[k - 1] = Core::from_left_matrix(&left, q);
        }
        let norm = cores[0].data.iter().map(|v| v.modulus_squared()).sum::<f64>().sqrt();
        let delta = bond_budget(eps, norm, d);
        // Left-to-right truncated SVD sweep.
        for k in 0..d - 1 {
            let (u, s, vt) = thin_svd(&cores[k].left_matrix())?;
            let rank = truncation_rank(&s, delta);
            cores[k] = Core::from_left_matrix(&u.columns(0, rank).into_owned(), q);
            let mut sv = vt.rows(0, rank).into_owned();
            for (b, &sb) in s.iter().take(rank).enumerate() {
                sv.row_mut(b).scale_mut(sb);
            }
            let right = sv * cores[k + 1].right_matrix();
            cores[k + 1] = Core::from_right_matrix(&right, q);
        }
        Ok(Self { q, cores })
    }

    /// Serializes to the QTT JSON v1 document.
    pub fn to_json(&self) -> Value {
        let doc = QttJson {
            q: self.q,
            d_prime: self.cores.len(),
            ranks: self.ranks(),
            cores: self
                .cores
                .iter()
                .map(|c| JsonCore {
                    shape: [c.r_left, c.q, c.r_right],
                    data: c.data.iter().map(|v| v.to_json()).collect(),
                })
                .collect(),
            dtype: T::DTYPE.to_string(),
        };
        serde_json::to_value(doc).expect("QTT document serializes")
    }

    /// Parses a QTT JSON v1 document of this scalar type.
    pub fn from_json(v: &Value) -> Result<Self> {
        let doc: QttJson = serde_json::from_value(v.clone())?;
        if doc.dtype != T::DTYPE {
            return Err(Error::Format(format!("expected dtype {}, found {}", T::DTYPE, doc.dtype)));
        }
        if doc.cores.len() != doc.d_prime {
            return Err(Error::Format(format!(
                "d_prime = {} but {} cores are stored",
                doc.d_prime,
                doc.cores.len()
            )));
        }
        let cores = doc
            .cores
            .iter()
            .map(|c| {
                let data = c
                    .data
                    .iter()
                    .map(|v| T::from_json(v).ok_or_else(|| Error::Format(format!("bad {} entry {v}", T::DTYPE))))
                    .collect::<Result<Vec<T>>>()?;
                let [a, q, b] = c.shape;
                Core::new(a, q, b, data).map_err(|e| Error::Format(e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        let out = Self::from_cores(doc.q, cores).map_err(|e| Error::Format(e.to_string()))?;
        if out.ranks() != doc.ranks {
            return Err(Error::Format("ranks field disagrees with the core shapes".into()));
        }
        Ok(out)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_json())?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&serde_json::from_str(&text)?)
    }
}

/// `sqrt((1/m) Σ r_k²)` over the `m` bond ranks; 1 when there are none.
pub fn average_rank(ranks: &[usize]) -> f64 {
    if ranks.is_empty() {
        return 1.0;
    }
    (ranks.iter().map(|&r| (r * r) as f64).sum::<f64>() / ranks.len() as f64).sqrt()
}

#[derive(Serialize, Deserialize)]
struct JsonCore {
    shape: [usize; 3],
    data: Vec<Value>,
}

#[derive(Serialize, Deserialize)]
struct QttJson {
    q: usize,
    d_prime: usize,
    ranks: Vec<usize>,
    cores: Vec<JsonCore>,
    dtype: String,
}
