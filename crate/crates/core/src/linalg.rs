// SPDX-License-Identifier: MIT OR Apache-2.0

//! Small dense vector helpers. Storage is `f32`; reductions accumulate in `f64`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum()
}

pub fn norm(a: &[f32]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity, or `None` when either vector has zero norm.
pub fn cosine(a: &[f32], b: &[f32]) -> Option<f64> {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// `y += scale * x`
pub fn axpy(y: &mut [f32], scale: f32, x: &[f32]) {
    debug_assert_eq!(y.len(), x.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += scale * xi;
    }
}

pub fn scaled(x: &[f32], scale: f32) -> Vec<f32> {
    x.iter().map(|&v| v * scale).collect()
}

pub fn sub(a: &[f32], b: &[f32]) -> Vec<f32> {
    a.iter().zip(b).map(|(&x, &y)| x - y).collect()
}

pub fn is_finite(a: &[f32]) -> bool {
    a.iter().all(|v| v.is_finite())
}

/// Unit-norm copy of `a`; `None` for the zero vector.
pub fn normalized(a: &[f32]) -> Option<Vec<f32>> {
    let n = norm(a);
    if n == 0.0 {
        return None;
    }
    Some(a.iter().map(|&v| (f64::from(v) / n) as f32).collect())
}

pub fn gaussian_vec<R: Rng + ?Sized>(rng: &mut R, len: usize, std: f64) -> Vec<f32> {
    (0..len)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            (z * std) as f32
        })
        .collect()
}

/// Orthonormal basis for the span of `vectors` (modified Gram-Schmidt, f64).
/// Vectors that are numerically dependent on earlier ones are dropped.
pub fn orthonormal_basis(vectors: &[Vec<f32>]) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for v in vectors {
        let mut w: Vec<f64> = v.iter().map(|&x| f64::from(x)).collect();
        for _ in 0..2 {
            for q in &basis {
                let p: f64 = w.iter().zip(q).map(|(a, b)| a * b).sum();
                w.iter_mut().zip(q).for_each(|(a, b)| *a -= p * b);
            }
        }
        let n = w.iter().map(|a| a * a).sum::<f64>().sqrt();
        if n > 1e-9 {
            w.iter_mut().for_each(|a| *a /= n);
            basis.push(w);
        }
    }
    basis
}

/// Remove the components of `v` lying in the span of an orthonormal `basis`.
pub fn project_out(v: &mut [f32], basis: &[Vec<f64>]) {
    let mut w: Vec<f64> = v.iter().map(|&x| f64::from(x)).collect();
    for q in basis {
        let p: f64 = w.iter().zip(q).map(|(a, b)| a * b).sum();
        w.iter_mut().zip(q).for_each(|(a, b)| *a -= p * b);
    }
    v.iter_mut().zip(&w).for_each(|(a, &b)| *a = b as f32);
}

/// Pairwise (cascade) summation of equal-length vectors in `f64`.
///
/// The reduction tree depends only on `items.len()`, so results are identical
/// however the items were produced.
pub fn pairwise_sum(items: &[Vec<f32>], len: usize) -> Vec<f64> {
    match items.len() {
        0 => vec![0.0; len],
        1 => items[0].iter().map(|&x| f64::from(x)).collect(),
        n => {
            let (lo, hi) = items.split_at(n / 2);
            let mut a = pairwise_sum(lo, len);
            let b = pairwise_sum(hi, len);
            a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
            a
        }
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn gaussian<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, std: f64) -> Self {
        Self {
            rows,
            cols,
            data: gaussian_vec(rng, rows * cols, std),
        }
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f32] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `self · x`
    pub fn matvec(&self, x: &[f32]) -> Vec<f32> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|r| dot(self.row(r), x) as f32).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gram_schmidt_drops_dependent_vectors() {
        let basis = orthonormal_basis(&[
            vec![1.0, 1.0, 0.0],
            vec![2.0, 2.0, 0.0],
            vec![0.0, 1.0, 0.0],
        ]);
        assert_eq!(basis.len(), 2);
        let d: f64 = basis[0].iter().zip(&basis[1]).map(|(a, b)| a * b).sum();
        assert!(d.abs() < 1e-12);
    }

    #[test]
    fn project_out_leaves_orthogonal_remainder() {
        let basis = orthonormal_basis(&[vec![1.0, 0.0, 0.0]]);
        let mut v = vec![3.0, 4.0, 5.0];
        project_out(&mut v, &basis);
        assert_eq!(v, vec![0.0, 4.0, 5.0]);
    }

    #[test]
    fn pairwise_sum_matches_sequential_for_small_ints() {
        let items: Vec<Vec<f32>> = (0..7).map(|i| vec![i as f32, 1.0]).collect();
        assert_eq!(pairwise_sum(&items, 2), vec![21.0, 7.0]);
        assert_eq!(pairwise_sum(&[], 2), vec![0.0, 0.0]);
    }

    #[test]
    fn cosine_of_zero_vector_is_absent() {
        assert!(cosine(&[0.0, 0.0], &[1.0, 0.0]).is_none());
        assert!((cosine(&[1.0, 0.0], &[2.0, 0.0]).unwrap() - 1.0).abs() < 1e-12);
    }
}
