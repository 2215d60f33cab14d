//! Exact rational matrices.
//!
//! The generalized-distance oracle must not depend on floating-point
//! rounding, so random-walk matrices and their powers are also computed over
//! arbitrary-precision rationals. Entries stay in lowest terms by
//! construction.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::graph::Graph;

/// Dense square matrix of exact rationals.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RationalMatrix {
    n: usize,
    data: Vec<BigRational>,
}

impl RationalMatrix {
    pub fn zeros(n: usize) -> RationalMatrix {
        RationalMatrix {
            n,
            data: vec![BigRational::zero(); n * n],
        }
    }

    pub fn identity(n: usize) -> RationalMatrix {
        let mut m = RationalMatrix::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = BigRational::one();
        }
        m
    }

    /// Random-walk matrix `D^{-1} A`; rows of degree-0 nodes are all zeros.
    pub fn random_walk(g: &Graph) -> RationalMatrix {
        let n = g.n();
        let mut m = RationalMatrix::zeros(n);
        for v in 0..n {
            let deg = g.degree(v);
            if deg == 0 {
                continue;
            }
            let w = BigRational::new(BigInt::from(1), BigInt::from(deg as i64));
            for &u in g.neighbors(v) {
                m.data[v * n + u] = w.clone();
            }
        }
        m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> &BigRational {
        &self.data[i * self.n + j]
    }

    pub fn matmul(&self, other: &RationalMatrix) -> RationalMatrix {
        assert_eq!(self.n, other.n, "rational matmul dimension mismatch");
        let n = self.n;
        let mut out = RationalMatrix::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = &self.data[i * n + k];
                if a.is_zero() {
                    continue;
                }
                for j in 0..n {
                    let b = &other.data[k * n + j];
                    if b.is_zero() {
                        continue;
                    }
                    out.data[i * n + j] += a * b;
                }
            }
        }
        out
    }

    /// `[I, M, M^2, ..., M^{k-1}]`.
    pub fn powers(&self, k: usize) -> Vec<RationalMatrix> {
        let mut out = Vec::with_capacity(k);
        out.push(RationalMatrix::identity(self.n));
        for c in 1..k {
            let next = out[c - 1].matmul(self);
            out.push(next);
        }
        out
    }

    pub fn row(&self, i: usize) -> &[BigRational] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    /// Exact check that row `i` sums to one.
    pub fn row_sums_to_one(&self, i: usize) -> bool {
        let sum: BigRational = self.row(i).iter().sum();
        sum.is_one()
    }

    /// Nearest-f64 image of the matrix, row-major.
    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(rational_to_f64).collect()
    }
}

/// Nearest-f64 value of an exact rational.
pub fn rational_to_f64(r: &BigRational) -> f64 {
    if r.is_zero() {
        return 0.0;
    }
    match (r.numer().to_f64(), r.denom().to_f64()) {
        (Some(n), Some(d)) if n.is_finite() && d.is_finite() => n / d,
        _ => {
            // Out-of-range big integers: fall back to a scaled division.
            let digits = r.denom().abs().to_string().len() as i32 - 15;
            let scale = BigInt::from(10).pow(digits.max(0) as u32);
            let scaled = (r * BigRational::from_integer(scale.clone()))
                .round()
                .numer()
                .to_f64()
                .unwrap_or(f64::NAN);
            scaled / 10f64.powi(digits.max(0))
        }
    }
}
