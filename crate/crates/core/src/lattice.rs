//! Triangular lattices: every basis vector has length `d` and every pair of
//! distinct basis vectors has inner product `d^2 / 2`.
//!
//! The basis matrix is upper triangular: column `k` is
//! `[w_1, ..., w_{k-1}, r_k, 0, ..., 0]`, so it is fully described by the
//! diagonal `r` and the row values `w`.

use std::cmp::Ordering;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LatticeError {
    #[error("invalid lattice parameters: {0}")]
    InvalidParameters(String),
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
}

/// A vector expressed in basis coordinates, i.e. standing for `B * coords`.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisCoords(pub Vec<f64>);

/// A lattice point as integer basis coordinates.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LatticePoint(pub Vec<i64>);

impl LatticePoint {
    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&c| c == 0)
    }
}

#[derive(Debug, Clone)]
pub struct LatticeBasis {
    n: usize,
    d: f64,
    /// Diagonal entries `r_k`.
    diag: Vec<f64>,
    /// Off-diagonal row values `w_k`; row `k` holds `w_k` in every column right of the diagonal.
    offdiag: Vec<f64>,
    /// Row-major `n x n` inverse.
    inverse: Vec<f64>,
}

impl LatticeBasis {
    pub fn triangular(n: usize, d: f64) -> Result<Self, LatticeError> {
        if n == 0 {
            return Err(LatticeError::InvalidParameters(
                "dimension must be positive".into(),
            ));
        }
        if !(d.is_finite() && d > 0.0) {
            return Err(LatticeError::InvalidParameters(format!(
                "basis length must be a positive finite number, got {d}"
            )));
        }
        let d2 = d * d;
        let mut diag = Vec::with_capacity(n);
        let mut offdiag = Vec::with_capacity(n);
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let r = (d2 - sum_sq).sqrt();
            let w = (d2 / 2.0 - sum_sq) / r;
            diag.push(r);
            offdiag.push(w);
            sum_sq += w * w;
        }

        // Column j of the inverse solves B c = e_j by back-substitution. Row i of
        // B is (0.., r_i, w_i, w_i, ..) so each step only needs a running suffix sum.
        let mut inverse = vec![0.0; n * n];
        for j in 0..n {
            let mut suffix = 1.0 / diag[j];
            inverse[j * n + j] = suffix;
            for i in (0..j).rev() {
                let c = -offdiag[i] * suffix / diag[i];
                inverse[i * n + j] = c;
                suffix += c;
            }
        }

        Ok(Self {
            n,
            d,
            diag,
            offdiag,
            inverse,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn basis_length(&self) -> f64 {
        self.d
    }

    /// Entry `(row, col)` of the basis matrix.
    pub fn entry(&self, row: usize, col: usize) -> f64 {
        match row.cmp(&col) {
            Ordering::Less => self.offdiag[row],
            Ordering::Equal => self.diag[row],
            Ordering::Greater => 0.0,
        }
    }

    /// Entry `(row, col)` of the precomputed inverse.
    pub fn inverse_entry(&self, row: usize, col: usize) -> f64 {
        self.inverse[row * self.n + col]
    }

    /// The `k`-th basis vector in standard coordinates.
    pub fn column(&self, k: usize) -> Vec<f64> {
        (0..self.n).map(|row| self.entry(row, k)).collect()
    }

    fn check_len(&self, len: usize) -> Result<(), LatticeError> {
        if len != self.n {
            return Err(LatticeError::DimensionMismatch {
                expected: self.n,
                found: len,
            });
        }
        Ok(())
    }

    pub fn to_basis_coords(&self, x: &[f64]) -> Result<BasisCoords, LatticeError> {
        self.check_len(x.len())?;
        let coords = self
            .inverse
            .chunks_exact(self.n)
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect();
        Ok(BasisCoords(coords))
    }

    pub fn from_basis_coords(&self, v: &BasisCoords) -> Result<Vec<f64>, LatticeError> {
        self.check_len(v.0.len())?;
        let mut out = vec![0.0; self.n];
        let mut suffix = 0.0;
        for i in (0..self.n).rev() {
            out[i] = self.diag[i] * v.0[i] + self.offdiag[i] * suffix;
            suffix += v.0[i];
        }
        Ok(out)
    }

    /// Closest lattice point to `x` (given in basis coordinates).
    ///
    /// Reduces `x` into the unit cube, then scans the `n + 1` staircase
    /// candidates obtained by zeroing coordinates in ascending order of their
    /// fractional parts. Candidate distances use the Gram identity
    /// `|B v|^2 = d^2/2 * (sum v_i^2 + (sum v_i)^2)`, updated in O(1) per step.
    pub fn closest_vector(&self, x: &BasisCoords) -> Result<LatticePoint, LatticeError> {
        self.check_len(x.0.len())?;
        let n = self.n;
        let floor: Vec<i64> = x.0.iter().map(|v| v.floor() as i64).collect();
        let frac: Vec<f64> = x.0.iter().zip(&floor).map(|(v, f)| v - *f as f64).collect();

        let mut order: Vec<usize> = (0..n).collect();
        // sort_by is stable: equal fractions keep input order
        order.sort_by(|&a, &b| frac[a].total_cmp(&frac[b]));

        // candidate 1 is the all-ones vector: v = frac - 1
        let mut sum: f64 = frac.iter().map(|f| f - 1.0).sum();
        let mut sum_sq: f64 = frac.iter().map(|f| (f - 1.0) * (f - 1.0)).sum();
        let mut best_norm = sum_sq + sum * sum;
        let mut best_k = 0usize;
        for (k, &idx) in order.iter().enumerate() {
            // zero coordinate idx: v_idx goes from frac-1 to frac
            let before = frac[idx] - 1.0;
            sum += 1.0;
            sum_sq += 2.0 * before + 1.0;
            let norm = sum_sq + sum * sum;
            if norm < best_norm {
                best_norm = norm;
                best_k = k + 1;
            }
        }

        let mut y = floor;
        for &idx in &order[best_k..] {
            y[idx] += 1;
        }
        Ok(LatticePoint(y))
    }

    /// Whether `x1` lies in the acceptance region (translated Voronoi cell) of `x0`.
    pub fn in_acceptance_region(&self, x0: &[f64], x1: &[f64]) -> Result<bool, LatticeError> {
        self.check_len(x0.len())?;
        self.check_len(x1.len())?;
        let diff: Vec<f64> = x0.iter().zip(x1).map(|(a, b)| a - b).collect();
        let coords = self.to_basis_coords(&diff)?;
        Ok(self.closest_vector(&coords)?.is_zero())
    }

    /// Squared Euclidean length of `B v`.
    pub fn norm_sq(&self, v: &[f64]) -> f64 {
        let std = self
            .from_basis_coords(&BasisCoords(v.to_vec()))
            .expect("length checked by caller");
        std.iter().map(|c| c * c).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    fn assert_basis_invariants(basis: &LatticeBasis) {
        let n = basis.dim();
        let d = basis.basis_length();
        let cols: Vec<Vec<f64>> = (0..n).map(|k| basis.column(k)).collect();
        for i in 0..n {
            let norm = dot(&cols[i], &cols[i]).sqrt();
            assert!(((norm - d) / d).abs() < 1e-9, "norm of b_{i} = {norm}");
            for j in 0..i {
                let ip = dot(&cols[i], &cols[j]);
                assert!(((ip - d * d / 2.0) / (d * d / 2.0)).abs() < 1e-9);
            }
        }
        for i in 0..n {
            for j in 0..n {
                let prod: f64 = (0..n)
                    .map(|k| basis.entry(i, k) * basis.inverse_entry(k, j))
                    .sum();
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((prod - expected).abs() < 1e-9, "BB^-1[{i}][{j}] = {prod}");
            }
        }
    }

    #[test]
    fn three_dimensional_example() {
        let b = LatticeBasis::triangular(3, 2.0).unwrap();
        let expect = [
            [2.0, 0.0, 0.0],
            [1.0, 3f64.sqrt(), 0.0],
            [1.0, 2.0 / 12f64.sqrt(), (2.0f64 / 3.0).sqrt() * 2.0],
        ];
        for (k, col) in expect.iter().enumerate() {
            for (row, v) in col.iter().enumerate() {
                assert!((b.entry(row, k) - v).abs() < 1e-12);
            }
        }
        assert!((b.entry(1, 1) - 1.7320508).abs() < 1e-7);
        assert!((b.entry(1, 2) - 0.5773503).abs() < 1e-7);
        assert!((b.entry(2, 2) - 1.6329932).abs() < 1e-7);
    }

    #[test]
    fn one_dimensional_is_scaled_integers() {
        let b = LatticeBasis::triangular(1, 1.0).unwrap();
        assert_eq!(b.column(0), vec![1.0]);
        assert_eq!(
            b.closest_vector(&BasisCoords(vec![2.4])).unwrap(),
            LatticePoint(vec![2])
        );
        assert_eq!(
            b.closest_vector(&BasisCoords(vec![-2.6])).unwrap(),
            LatticePoint(vec![-3])
        );
    }

    #[test]
    fn invariants_hold_across_sizes() {
        for (n, d) in [(8, 0.254), (2, 1.0), (17, 3.5), (64, 0.25)] {
            assert_basis_invariants(&LatticeBasis::triangular(n, d).unwrap());
        }
    }

    #[test]
    fn large_dimension_norms() {
        let b = LatticeBasis::triangular(1024, 0.254).unwrap();
        let last = b.column(1023);
        let norm = dot(&last, &last).sqrt();
        assert!(((norm - 0.254) / 0.254).abs() < 1e-9);
        let prev = b.column(1022);
        assert!(
            ((dot(&last, &prev) - 0.254f64.powi(2) / 2.0) / (0.254f64.powi(2) / 2.0)).abs() < 1e-9
        );
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(matches!(
            LatticeBasis::triangular(0, 1.0),
            Err(LatticeError::InvalidParameters(_))
        ));
        assert!(LatticeBasis::triangular(3, 0.0).is_err());
        assert!(LatticeBasis::triangular(3, -1.0).is_err());
        assert!(LatticeBasis::triangular(3, f64::NAN).is_err());
    }

    #[test]
    fn coordinate_conversion_basics() {
        let b = LatticeBasis::triangular(3, 2.0).unwrap();
        assert_eq!(b.to_basis_coords(&[0.0; 3]).unwrap().0, vec![0.0; 3]);
        let c = b.to_basis_coords(&b.column(0)).unwrap();
        for (got, want) in c.0.iter().zip([1.0, 0.0, 0.0]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert_eq!(
            b.from_basis_coords(&BasisCoords(vec![0.0; 3])).unwrap(),
            vec![0.0; 3]
        );
        assert_eq!(
            b.from_basis_coords(&BasisCoords(vec![1.0, 0.0, 0.0]))
                .unwrap(),
            b.column(0)
        );
        assert_eq!(
            b.to_basis_coords(&[1.0, 2.0]),
            Err(LatticeError::DimensionMismatch {
                expected: 3,
                found: 2
            })
        );
        assert!(b.closest_vector(&BasisCoords(vec![0.0; 4])).is_err());
        assert!(b.in_acceptance_region(&[0.0; 3], &[0.0; 2]).is_err());
    }

    #[test]
    fn random_round_trip_three_dims() {
        let b = LatticeBasis::triangular(3, 2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let back = b
                .from_basis_coords(&b.to_basis_coords(&x).unwrap())
                .unwrap();
            for (a, c) in x.iter().zip(&back) {
                assert!((a - c).abs() < 1e-9);
            }
        }
    }

    /// Exhaustive minimum over the +-2 window around floor(x), measured with
    /// the dense basis matrix.
    fn brute_force_min_dist(b: &LatticeBasis, x: &[f64]) -> f64 {
        let n = x.len();
        let base: Vec<i64> = x.iter().map(|v| v.floor() as i64).collect();
        let mut best = f64::INFINITY;
        let total = 5usize.pow(n as u32);
        for idx in 0..total {
            let mut rem = idx;
            let diff: Vec<f64> = (0..n)
                .map(|i| {
                    let off = (rem % 5) as i64 - 2;
                    rem /= 5;
                    x[i] - (base[i] + off) as f64
                })
                .collect();
            let std: Vec<f64> = (0..n)
                .map(|row| (0..n).map(|col| b.entry(row, col) * diff[col]).sum())
                .collect();
            best = best.min(dot(&std, &std));
        }
        best
    }

    #[test]
    fn matches_brute_force_in_three_dims() {
        let b = LatticeBasis::triangular(3, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let y = b.closest_vector(&BasisCoords(x.clone())).unwrap();
            let diff: Vec<f64> = x.iter().zip(&y.0).map(|(a, c)| a - *c as f64).collect();
            let got = b.norm_sq(&diff);
            let best = brute_force_min_dist(&b, &x);
            assert!(got <= best + 1e-9, "x={x:?} got {got} best {best}");
        }
    }

    #[test]
    fn small_error_stays_in_region() {
        let b = LatticeBasis::triangular(3, 2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let x0: Vec<f64> = (0..3).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let dir: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let len = dot(&dir, &dir).sqrt();
            let x1: Vec<f64> = x0
                .iter()
                .zip(&dir)
                .map(|(a, u)| a + u / len * 0.02)
                .collect();
            assert!(b.in_acceptance_region(&x0, &x1).unwrap());
            // the oracle agrees: zero is the closest point of the difference
            let diff: Vec<f64> = x0.iter().zip(&x1).map(|(a, c)| a - c).collect();
            let coords = b.to_basis_coords(&diff).unwrap();
            assert!(b.norm_sq(&coords.0) <= brute_force_min_dist(&b, &coords.0) + 1e-12);

            let shifted: Vec<f64> = x0.iter().zip(b.column(0)).map(|(a, c)| a + c).collect();
            assert!(!b.in_acceptance_region(&x0, &shifted).unwrap());
            assert!(b.in_acceptance_region(&x0, &x0).unwrap());
        }
    }

    #[test]
    fn tie_break_prefers_all_ones_candidate() {
        // fractional parts all exactly 0.5: candidates tie in pairs; the
        // smallest-index candidate wins
        let b = LatticeBasis::triangular(1, 1.0).unwrap();
        assert_eq!(
            b.closest_vector(&BasisCoords(vec![0.5])).unwrap(),
            LatticePoint(vec![1])
        );
    }

    proptest! {
        #[test]
        fn shift_equivariance(
            u in prop::collection::vec(-50.0f64..50.0, 6),
            v in prop::collection::vec(-1000i64..1000, 6),
        ) {
            // dyadic inputs keep u + v exact, so equality is exact too
            let b = LatticeBasis::triangular(6, 0.7).unwrap();
            let u: Vec<f64> = u.into_iter().map(|c| (c * 1024.0).round() / 1024.0).collect();
            let shifted: Vec<f64> = u.iter().zip(&v).map(|(a, c)| a + *c as f64).collect();
            let lhs = b.closest_vector(&BasisCoords(shifted)).unwrap();
            let mut rhs = b.closest_vector(&BasisCoords(u)).unwrap();
            for (r, c) in rhs.0.iter_mut().zip(&v) {
                *r += c;
            }
            prop_assert_eq!(lhs, rhs);
        }

        #[test]
        fn integer_inputs_are_fixed_points(v in prop::collection::vec(-1_000_000i64..1_000_000, 1..12)) {
            let b = LatticeBasis::triangular(v.len(), 1.3).unwrap();
            let x = BasisCoords(v.iter().map(|&c| c as f64).collect());
            prop_assert_eq!(b.closest_vector(&x).unwrap(), LatticePoint(v));
        }

        #[test]
        fn acceptance_depends_on_difference_only(
            x0 in prop::collection::vec(-4.0f64..4.0, 4),
            e in prop::collection::vec(-0.6f64..0.6, 4),
            t in prop::collection::vec(-100i32..100, 4),
        ) {
            // translations by multiples of 1/4 keep every sum exact in f64
            let b = LatticeBasis::triangular(4, 1.0).unwrap();
            let quantize = |v: f64| (v * 1024.0).round() / 1024.0;
            let x0: Vec<f64> = x0.into_iter().map(quantize).collect();
            let x1: Vec<f64> = x0.iter().zip(&e).map(|(a, c)| a + quantize(*c)).collect();
            let tr: Vec<f64> = t.iter().map(|&c| c as f64 / 4.0).collect();
            let y0: Vec<f64> = x0.iter().zip(&tr).map(|(a, c)| a + c).collect();
            let y1: Vec<f64> = x1.iter().zip(&tr).map(|(a, c)| a + c).collect();
            prop_assert_eq!(
                b.in_acceptance_region(&x0, &x1).unwrap(),
                b.in_acceptance_region(&y0, &y1).unwrap()
            );
        }
    }
}
