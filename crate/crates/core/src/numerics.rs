//! Dense symmetric linear algebra and distribution tails.
//!
//! Everything here is small-dimensional (d ≤ 50 in practice) and written
//! against plain row-major `Vec<f64>` storage.

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};

/// Symmetric `dim × dim` matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl Serialize for SymMatrix {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_rows().serialize(serializer)
    }
}

impl SymMatrix {
    /// Builds a matrix from row-major entries, checking exact symmetry and finiteness.
    pub fn from_row_major(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("matrix dimension must be at least 1"));
        }
        if data.len() != dim * dim {
            return Err(Error::invalid(format!(
                "expected {} entries for a {dim}x{dim} matrix, got {}",
                dim * dim,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite entry at ({}, {})",
                pos / dim,
                pos % dim
            )));
        }
        for i in 0..dim {
            for j in (i + 1)..dim {
                if data[i * dim + j] != data[j * dim + i] {
                    return Err(Error::invalid(format!("matrix not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(SymMatrix { dim, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::invalid("rows must form a square matrix"));
        }
        Self::from_row_major(dim, rows.concat())
    }

    /// Symmetrizes an arbitrary square buffer as `(M + Mᵀ)/2`.
    pub(crate) fn symmetrized(dim: usize, mut data: Vec<f64>) -> Self {
        for i in 0..dim {
            for j in (i + 1)..dim {
                let avg = 0.5 * (data[i * dim + j] + data[j * dim + i]);
                data[i * dim + j] = avg;
                data[j * dim + i] = avg;
            }
        }
        SymMatrix { dim, data }
    }

    pub fn identity(dim: usize) -> Self {
        Self::diagonal(&vec![1.0; dim])
    }

    pub fn zeros(dim: usize) -> Self {
        SymMatrix {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let dim = diag.len();
        let mut data = vec![0.0; dim * dim];
        for (i, &v) in diag.iter().enumerate() {
            data[i * dim + i] = v;
        }
        SymMatrix { dim, data }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.dim).map(|r| r.to_vec()).collect()
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    pub fn is_diagonal(&self) -> bool {
        (0..self.dim).all(|i| (0..self.dim).all(|j| i == j || self.get(i, j) == 0.0))
    }

    pub fn scaled(&self, factor: f64) -> Self {
        SymMatrix {
            dim: self.dim,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    /// `self + factor * other`
    pub fn add_scaled(&self, other: &SymMatrix, factor: f64) -> Self {
        assert_eq!(self.dim, other.dim);
        SymMatrix {
            dim: self.dim,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + factor * b)
                .collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Frobenius inner product `tr(self · other)`.
    pub fn dot(&self, other: &SymMatrix) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    /// Quadratic form `vᵀ M v`.
    pub fn quad_form(&self, v: &[f64]) -> f64 {
        debug_assert_eq!(v.len(), self.dim);
        let d = self.dim;
        let mut total = 0.0;
        for i in 0..d {
            let row = &self.data[i * d..(i + 1) * d];
            let mut acc = 0.0;
            for j in 0..d {
                acc += row[j] * v[j];
            }
            total += v[i] * acc;
        }
        total
    }

    /// `M v`
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        let d = self.dim;
        (0..d)
            .map(|i| {
                self.data[i * d..(i + 1) * d]
                    .iter()
                    .zip(v)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }

    /// `Rᵀ M R` for a symmetric `R` of the same dimension.
    pub fn congruence(&self, r: &SymMatrix) -> SymMatrix {
        let d = self.dim;
        let mr = matmul(&self.data, &r.data, d);
        let rtmr = matmul(&transpose(&r.data, d), &mr, d);
        SymMatrix::symmetrized(d, rtmr)
    }
}

pub(crate) fn matmul(a: &[f64], b: &[f64], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        for k in 0..d {
            let aik = a[i * d + k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..d {
                out[i * d + j] += aik * b[k * d + j];
            }
        }
    }
    out
}

fn transpose(a: &[f64], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            out[j * d + i] = a[i * d + j];
        }
    }
    out
}

/// Eigen-decomposition of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct EigDecomp {
    /// Eigenvalues in descending order.
    pub eigenvalues: Vec<f64>,
    /// Row-major `d × d`; column `k` is the eigenvector for `eigenvalues[k]`.
    pub eigenvectors: Vec<f64>,
}

impl EigDecomp {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn vector(&self, k: usize) -> Vec<f64> {
        let d = self.dim();
        (0..d).map(|i| self.eigenvectors[i * d + k]).collect()
    }

    /// `V f(Λ) Vᵀ`, symmetrized.
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> SymMatrix {
        let d = self.dim();
        let mapped: Vec<f64> = self.eigenvalues.iter().map(|&l| f(l)).collect();
        let v = &self.eigenvectors;
        let mut out = vec![0.0; d * d];
        for i in 0..d {
            for j in i..d {
                let mut acc = 0.0;
                for k in 0..d {
                    acc += v[i * d + k] * mapped[k] * v[j * d + k];
                }
                out[i * d + j] = acc;
                out[j * d + i] = acc;
            }
        }
        SymMatrix { dim: d, data: out }
    }
}

const JACOBI_MAX_SWEEPS: usize = 100;
const JACOBI_REL_TOL: f64 = 1e-12;

/// Cyclic Jacobi eigen-decomposition.
pub fn sym_eig(m: &SymMatrix) -> Result<EigDecomp> {
    if m.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite matrix entry"));
    }
    let d = m.dim;
    let mut a = m.data.clone();
    let mut v = vec![0.0; d * d];
    for i in 0..d {
        v[i * d + i] = 1.0;
    }
    let threshold = JACOBI_REL_TOL * m.frobenius();

    for _ in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = (0..d)
            .flat_map(|i| (0..d).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * d + j] * a[i * d + j])
            .sum::<f64>()
            .sqrt();
        if off <= threshold {
            break;
        }
        for p in 0..d {
            for q in (p + 1)..d {
                let apq = a[p * d + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * d + p];
                let aqq = a[q * d + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for k in 0..d {
                    let akp = a[k * d + p];
                    let akq = a[k * d + q];
                    a[k * d + p] = c * akp - s * akq;
                    a[k * d + q] = s * akp + c * akq;
                }
                for k in 0..d {
                    let apk = a[p * d + k];
                    let aqk = a[q * d + k];
                    a[p * d + k] = c * apk - s * aqk;
                    a[q * d + k] = s * apk + c * aqk;
                }
                a[p * d + q] = 0.0;
                a[q * d + p] = 0.0;

                for k in 0..d {
                    let vkp = v[k * d + p];
                    let vkq = v[k * d + q];
                    v[k * d + p] = c * vkp - s * vkq;
                    v[k * d + q] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&x, &y| a[y * d + y].total_cmp(&a[x * d + x]));
    let eigenvalues = order.iter().map(|&k| a[k * d + k]).collect();
    let mut eigenvectors = vec![0.0; d * d];
    for (new_k, &old_k) in order.iter().enumerate() {
        for i in 0..d {
            eigenvectors[i * d + new_k] = v[i * d + old_k];
        }
    }
    Ok(EigDecomp {
        eigenvalues,
        eigenvectors,
    })
}

/// Frobenius-nearest PSD matrix: negative eigenvalues clamped to zero.
pub fn psd_project(m: &SymMatrix) -> Result<SymMatrix> {
    let eig = sym_eig(m)?;
    if eig.eigenvalues.iter().all(|&l| l >= 0.0) {
        return Ok(m.clone());
    }
    Ok(eig.reconstruct_with(|l| l.max(0.0)))
}

/// Smallest eigenvalue; convenience for PSD checks.
pub fn min_eigenvalue(m: &SymMatrix) -> Result<f64> {
    Ok(*sym_eig(m)?.eigenvalues.last().expect("dim >= 1"))
}

/// Symmetric inverse square root `M^{-1/2}` of a positive-definite matrix.
pub fn inv_sqrt(m: &SymMatrix) -> Result<SymMatrix> {
    let eig = sym_eig(m)?;
    let max = eig.eigenvalues[0];
    let min = *eig.eigenvalues.last().expect("dim >= 1");
    if !(max > 0.0) || min <= 1e-10 * max {
        return Err(Error::SingularMatrix { eigenvalue: min });
    }
    Ok(eig.reconstruct_with(|l| 1.0 / l.sqrt()))
}

/// Solves `M x = b` for symmetric positive-definite `M` by Cholesky factorization.
/// Returns `None` when a pivot is not strictly positive.
pub fn cholesky_solve(m: &[f64], dim: usize, b: &[f64]) -> Option<Vec<f64>> {
    let mut l = vec![0.0; dim * dim];
    for i in 0..dim {
        for j in 0..=i {
            let mut sum = m[i * dim + j];
            for k in 0..j {
                sum -= l[i * dim + k] * l[j * dim + k];
            }
            if i == j {
                if !(sum > 0.0) || !sum.is_finite() {
                    return None;
                }
                l[i * dim + i] = sum.sqrt();
            } else {
                l[i * dim + j] = sum / l[j * dim + j];
            }
        }
    }
    let mut y = vec![0.0; dim];
    for i in 0..dim {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[i * dim + k] * y[k];
        }
        y[i] = sum / l[i * dim + i];
    }
    let mut x = vec![0.0; dim];
    for i in (0..dim).rev() {
        let mut sum = y[i];
        for k in (i + 1)..dim {
            sum -= l[k * dim + i] * x[k];
        }
        x[i] = sum / l[i * dim + i];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

// ---------------------------------------------------------------------------
// Distribution functions
// ---------------------------------------------------------------------------

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// `ln Γ(x)` for `x > 0` (Lanczos approximation).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS_COEF[0];
    for (i, &c) in LANCZOS_COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// `ln n!`; exact table lookup below 256, Lanczos above.
pub fn ln_factorial(n: u64) -> f64 {
    static TABLE: std::sync::OnceLock<Vec<f64>> = std::sync::OnceLock::new();
    let table = TABLE.get_or_init(|| {
        let mut t = vec![0.0; 256];
        for k in 1..256 {
            t[k] = t[k - 1] + (k as f64).ln();
        }
        t
    });
    if n < 256 {
        table[n as usize]
    } else {
        ln_gamma(n as f64 + 1.0)
    }
}

fn ln_binom_pmf(n: u64, k: u64, ln_p: f64, ln_q: f64) -> f64 {
    ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k) + k as f64 * ln_p + (n - k) as f64 * ln_q
}

#[derive(Default)]
struct Kahan {
    sum: f64,
    comp: f64,
}

impl Kahan {
    fn add(&mut self, x: f64) {
        let y = x - self.comp;
        let t = self.sum + y;
        self.comp = (t - self.sum) - y;
        self.sum = t;
    }
}

/// Sum of the Binomial(n, p) pmf over `lo..=hi`.
fn binom_pmf_sum(n: u64, p: f64, lo: u64, hi: u64) -> f64 {
    let ln_p = p.ln();
    let ln_q = (-p).ln_1p();
    let mut acc = Kahan::default();
    for k in lo..=hi {
        acc.add(ln_binom_pmf(n, k, ln_p, ln_q).exp());
    }
    acc.sum
}

/// Exact upper tail `P(X ≥ t)` for `X ~ Binomial(n, p)`.
pub fn binom_sf(n: u64, p: f64, t: i64) -> f64 {
    assert!((0.0..=1.0).contains(&p), "probability out of range: {p}");
    if t <= 0 {
        return 1.0;
    }
    let t = t as u64;
    if t > n {
        return 0.0;
    }
    if p == 0.0 {
        return 0.0;
    }
    if p == 1.0 {
        return 1.0;
    }
    let mean = n as f64 * p;
    let value = if t as f64 > mean {
        binom_pmf_sum(n, p, t, n)
    } else {
        1.0 - binom_pmf_sum(n, p, 0, t - 1)
    };
    value.clamp(0.0, 1.0)
}

/// Exact lower tail `P(X ≤ t)` for `X ~ Binomial(n, p)`.
pub fn binom_cdf(n: u64, p: f64, t: i64) -> f64 {
    assert!((0.0..=1.0).contains(&p), "probability out of range: {p}");
    if t < 0 {
        return 0.0;
    }
    let t = t as u64;
    if t >= n {
        return 1.0;
    }
    if p == 0.0 {
        return 1.0;
    }
    if p == 1.0 {
        return 0.0;
    }
    let mean = n as f64 * p;
    let value = if (t as f64) < mean {
        binom_pmf_sum(n, p, 0, t)
    } else {
        1.0 - binom_pmf_sum(n, p, t + 1, n)
    };
    value.clamp(0.0, 1.0)
}

/// Smallest `x` with `P(X ≤ x) ≥ q` for `X ~ Binomial(n, p)`.
pub fn binom_quantile(n: u64, p: f64, q: f64) -> u64 {
    (0..=n)
        .find(|&x| binom_cdf(n, p, x as i64) >= q)
        .unwrap_or(n)
}

// Cody's rational Chebyshev approximations for the normal integral.
const CODY_A: [f64; 5] = [
    2.235_252_035_460_683_9,
    161.028_231_068_558_8,
    1_067.689_485_460_371,
    18_154.981_253_343_56,
    0.065_682_337_918_207_45,
];
const CODY_B: [f64; 4] = [
    47.202_581_904_688_24,
    976.098_551_737_776_7,
    10_260.932_208_618_978,
    45_507.789_335_026_73,
];
const CODY_C: [f64; 9] = [
    0.398_941_512_088_134_66,
    8.883_149_794_388_376,
    93.506_656_132_177_86,
    597.270_276_394_800_3,
    2_494.537_585_290_372_7,
    6_848.190_450_536_283,
    11_602.651_437_647_35,
    9_842.714_838_383_978,
    1.076_557_677_372_019_2e-8,
];
const CODY_D: [f64; 8] = [
    22.266_688_044_328_117,
    235.387_901_782_625,
    1_519.377_599_407_554_8,
    6_485.558_298_266_761,
    18_615.571_640_885_1,
    34_900.952_721_145_98,
    38_912.003_286_093_27,
    19_685.429_676_859_99,
];
const CODY_P: [f64; 6] = [
    0.215_898_534_057_957,
    0.127_401_161_160_247_36,
    0.022_235_277_870_649_807,
    0.001_421_619_193_227_893_5,
    2.911_287_495_116_879e-5,
    0.023_073_441_764_940_174,
];
const CODY_Q: [f64; 5] = [
    1.284_260_096_144_911_2,
    0.468_238_212_480_865_1,
    0.065_988_137_868_928_55,
    0.003_782_396_332_027_582_4,
    7.297_515_550_839_662e-5,
];

const SQRT_32: f64 = 5.656_854_249_492_381;
const M_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal distribution function Φ(z).
pub fn normal_cdf(z: f64) -> f64 {
    let (lower, _) = normal_both(z);
    lower
}

/// Upper tail `1 − Φ(z)` without cancellation.
pub fn normal_sf(z: f64) -> f64 {
    let (_, upper) = normal_both(z);
    upper
}

fn normal_both(x: f64) -> (f64, f64) {
    if x.is_nan() {
        return (f64::NAN, f64::NAN);
    }
    let y = x.abs();
    if y <= 0.67448975 {
        let (mut xnum, mut xden) = (0.0, 0.0);
        if y > f64::EPSILON * 0.5 {
            let xsq = x * x;
            xnum = CODY_A[4] * xsq;
            xden = xsq;
            for i in 0..3 {
                xnum = (xnum + CODY_A[i]) * xsq;
                xden = (xden + CODY_B[i]) * xsq;
            }
        }
        let temp = x * (xnum + CODY_A[3]) / (xden + CODY_B[3]);
        return (0.5 + temp, 0.5 - temp);
    }

    let tail = if y <= SQRT_32 {
        let mut xnum = CODY_C[8] * y;
        let mut xden = y;
        for i in 0..7 {
            xnum = (xnum + CODY_C[i]) * y;
            xden = (xden + CODY_D[i]) * y;
        }
        let r = (xnum + CODY_C[7]) / (xden + CODY_D[7]);
        let xsq = (y * 16.0).trunc() / 16.0;
        let del = (y - xsq) * (y + xsq);
        (-xsq * xsq * 0.5).exp() * (-del * 0.5).exp() * r
    } else {
        let xsq = 1.0 / (x * x);
        let mut xnum = CODY_P[5] * xsq;
        let mut xden = xsq;
        for i in 0..4 {
            xnum = (xnum + CODY_P[i]) * xsq;
            xden = (xden + CODY_Q[i]) * xsq;
        }
        let r = xsq * (xnum + CODY_P[4]) / (xden + CODY_Q[4]);
        let r = (M_1_SQRT_2PI - r) / y;
        let xsq = (x * 16.0).trunc() / 16.0;
        let del = (x - xsq) * (x + xsq);
        (-xsq * xsq * 0.5).exp() * (-del * 0.5).exp() * r
    };
    if x > 0.0 {
        (1.0 - tail, tail)
    } else {
        (tail, 1.0 - tail)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
    }

    #[test]
    fn eig_identity() {
        let e = sym_eig(&SymMatrix::identity(3)).unwrap();
        assert_eq!(e.eigenvalues, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn eig_two_by_two() {
        let m = SymMatrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let e = sym_eig(&m).unwrap();
        assert!((e.eigenvalues[0] - 3.0).abs() < 1e-12);
        assert!((e.eigenvalues[1] - 1.0).abs() < 1e-12);
        // M v = λ v by substitution
        for k in 0..2 {
            let v = e.vector(k);
            let mv = m.mul_vec(&v);
            let lv: Vec<f64> = v.iter().map(|x| x * e.eigenvalues[k]).collect();
            assert!(max_abs_diff(&mv, &lv) < 1e-12);
        }
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let v0 = e.vector(0);
        assert!((v0[0].abs() - s).abs() < 1e-12 && (v0[0] - v0[1]).abs() < 1e-12);
    }

    #[test]
    fn eig_diagonal_sorted_descending() {
        let e = sym_eig(&SymMatrix::diagonal(&[5.0, -2.0, 0.0])).unwrap();
        assert_eq!(e.eigenvalues, vec![5.0, 0.0, -2.0]);
    }

    #[test]
    fn eig_rejects_non_finite() {
        assert!(SymMatrix::from_row_major(1, vec![f64::NAN]).is_err());
        let bad = SymMatrix {
            dim: 1,
            data: vec![f64::INFINITY],
        };
        assert!(matches!(sym_eig(&bad), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn psd_projection_examples() {
        let p = psd_project(&SymMatrix::diagonal(&[1.0, -1.0])).unwrap();
        assert!(max_abs_diff(p.as_slice(), &[1.0, 0.0, 0.0, 0.0]) < 1e-12);

        let m = SymMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let p = psd_project(&m).unwrap();
        assert!(max_abs_diff(p.as_slice(), &[0.5, 0.5, 0.5, 0.5]) < 1e-12);

        let psd = SymMatrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let p = psd_project(&psd).unwrap();
        assert!(max_abs_diff(p.as_slice(), psd.as_slice()) < 1e-9);
    }

    #[test]
    fn inv_sqrt_examples() {
        let r = inv_sqrt(&SymMatrix::identity(2)).unwrap();
        assert!(max_abs_diff(r.as_slice(), SymMatrix::identity(2).as_slice()) < 1e-14);

        let r = inv_sqrt(&SymMatrix::diagonal(&[4.0, 9.0])).unwrap();
        assert!(max_abs_diff(r.as_slice(), &[0.5, 0.0, 0.0, 1.0 / 3.0]) < 1e-14);

        let m = SymMatrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let r = inv_sqrt(&m).unwrap();
        let check = m.congruence(&r);
        assert!(max_abs_diff(check.as_slice(), SymMatrix::identity(2).as_slice()) <= 1e-8);
        let e = sym_eig(&r).unwrap();
        assert!((e.eigenvalues[0] - 1.0).abs() < 1e-12);
        assert!((e.eigenvalues[1] - 3f64.powf(-0.5)).abs() < 1e-12);
    }

    #[test]
    fn inv_sqrt_singular() {
        let m = SymMatrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert!(matches!(inv_sqrt(&m), Err(Error::SingularMatrix { .. })));
    }

    #[test]
    fn cholesky_solves_spd() {
        let m = [4.0, 1.0, 1.0, 3.0];
        let x = cholesky_solve(&m, 2, &[1.0, 2.0]).unwrap();
        assert!((4.0 * x[0] + x[1] - 1.0).abs() < 1e-14);
        assert!((x[0] + 3.0 * x[1] - 2.0).abs() < 1e-14);
        assert!(cholesky_solve(&[1.0, 2.0, 2.0, 1.0], 2, &[1.0, 1.0]).is_none());
    }

    #[test]
    fn ln_gamma_matches_factorials() {
        for n in 1..30u64 {
            let exact: f64 = (1..=n).map(|k| (k as f64).ln()).sum();
            assert!((ln_gamma(n as f64 + 1.0) - exact).abs() < 1e-12 * (1.0 + exact));
        }
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-14);
    }

    #[test]
    fn binom_sf_examples() {
        assert!((binom_sf(10, 0.5, 9) - 11.0 / 1024.0).abs() < 1e-15);
        assert_eq!(binom_sf(10, 0.3, 0), 1.0);
        assert_eq!(binom_sf(10, 0.3, -4), 1.0);
        assert_eq!(binom_sf(10, 0.3, 11), 0.0);
        // scipy.stats.binom.sf(658, 1194, 0.5)
        let v = binom_sf(1194, 0.5, 659);
        assert!((v - 1.836_525_003_302_69e-4).abs() < 1e-14, "{v}");
    }

    #[test]
    fn binom_sf_against_normal_approximation() {
        // continuity-corrected normal approximation agrees to a few percent
        let z = (658.5 - 597.0) / (1194.0f64 * 0.25).sqrt();
        let approx = normal_sf(z);
        let exact = binom_sf(1194, 0.5, 659);
        assert!((exact / approx - 1.0).abs() < 0.05);
    }

    #[test]
    fn binom_cdf_complements_sf() {
        for t in -1..=12 {
            let s = binom_sf(11, 0.37, t + 1) + binom_cdf(11, 0.37, t);
            assert!((s - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn binom_quantile_basics() {
        assert_eq!(binom_quantile(10, 0.5, 0.5), 5);
        assert_eq!(binom_quantile(10, 0.5, 0.0), 0);
        assert_eq!(binom_quantile(10, 0.5, 1.0), 10);
    }

    // Frozen with mpmath at 50 digits.
    #[test]
    fn normal_cdf_reference_values() {
        assert_eq!(normal_cdf(0.0), 0.5);
        assert!((normal_cdf(1.959964) - 0.975_000_000_903_557_6).abs() < 1e-12);
        assert!((normal_cdf(3.0) - 0.998_650_101_968_369_9).abs() < 1e-12);
        let t = normal_cdf(-8.0);
        assert!(t > 0.0);
        assert!((t / 6.220_960_574_271_784e-16 - 1.0).abs() < 1e-10);
        assert!(normal_cdf(-37.5) > 0.0);
    }
}
