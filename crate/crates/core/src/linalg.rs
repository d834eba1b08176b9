//! Complex SVD helpers: pseudo-inverse, rank and right null space.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

/// Singular values at or below `RCOND * sigma_max` are treated as zero.
pub const RCOND: f64 = 1e-12;

/// Full singular value decomposition `A = U diag(s) V^H` with singular
/// values sorted in descending order and a complete `cols x cols` `V`.
#[derive(Debug, Clone)]
pub struct FullSvd {
    pub u: DMatrix<Complex64>,
    pub singular_values: Vec<f64>,
    pub v: DMatrix<Complex64>,
}

impl FullSvd {
    pub fn new(a: &DMatrix<Complex64>) -> Self {
        let (rows, cols) = a.shape();
        // nalgebra computes the thin SVD, whose V is already complete when
        // rows >= cols. Wide matrices are padded with zero rows to square.
        let padded;
        let src = if rows < cols {
            let mut sq = DMatrix::<Complex64>::zeros(cols, cols);
            sq.view_mut((0, 0), (rows, cols)).copy_from(a);
            padded = sq;
            &padded
        } else {
            a
        };
        let svd = src.clone().svd(true, true);
        let u_full = svd.u.expect("u requested");
        let vt = svd.v_t.expect("v requested");
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));

        let k = rows.min(cols);
        let singular_values: Vec<f64> = order.iter().take(k).map(|&i| svd.singular_values[i]).collect();
        let mut u = DMatrix::zeros(rows, k);
        for (c, &i) in order.iter().take(k).enumerate() {
            for r in 0..rows {
                u[(r, c)] = u_full[(r, i)];
            }
        }
        let mut v = DMatrix::zeros(cols, cols);
        for (c, &i) in order.iter().enumerate() {
            for r in 0..cols {
                v[(r, c)] = vt[(i, r)].conj();
            }
        }
        FullSvd {
            u,
            singular_values,
            v,
        }
    }

    fn cutoff(&self) -> f64 {
        RCOND * self.singular_values.first().copied().unwrap_or(0.0)
    }

    pub fn rank(&self) -> usize {
        let cut = self.cutoff();
        self.singular_values.iter().filter(|&&s| s > cut && s > 0.0).count()
    }

    /// Orthonormal basis of the right null space as columns.
    pub fn null_space(&self) -> DMatrix<Complex64> {
        let r = self.rank();
        let cols = self.v.ncols();
        self.v.columns(r, cols - r).into_owned()
    }

    pub fn pinv(&self) -> DMatrix<Complex64> {
        let r = self.rank();
        let (rows, cols) = (self.u.nrows(), self.v.nrows());
        let mut out = DMatrix::zeros(cols, rows);
        for k in 0..r {
            let inv = 1.0 / self.singular_values[k];
            let vk = self.v.column(k);
            let uk = self.u.column(k);
            for i in 0..cols {
                let vi = vk[i] * inv;
                for j in 0..rows {
                    out[(i, j)] += vi * uk[j].conj();
                }
            }
        }
        out
    }
}

pub fn pinv(a: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    FullSvd::new(a).pinv()
}

pub fn null_space(a: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    FullSvd::new(a).null_space()
}

pub fn vec_norm(v: &DVector<Complex64>) -> f64 {
    v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<Complex64> {
        DMatrix::from_fn(rows, cols, |_, _| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
    }

    fn frob(a: &DMatrix<Complex64>) -> f64 {
        a.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    #[test]
    fn penrose_conditions() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (r, c) in [(3, 4), (6, 8), (8, 6), (5, 5), (1, 3)] {
            let a = random(r, c, &mut rng);
            let p = pinv(&a);
            let n = frob(&a);
            assert!(frob(&(&a * &p * &a - &a)) < 1e-12 * n);
            assert!(frob(&(&p * &a * &p - &p)) < 1e-12 * frob(&p));
            let ap = &a * &p;
            let pa = &p * &a;
            assert!(frob(&(ap.adjoint() - &ap)) < 1e-12 * frob(&ap));
            assert!(frob(&(pa.adjoint() - &pa)) < 1e-12 * frob(&pa));
        }
    }

    #[test]
    fn null_space_dimensions() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random(3, 4, &mut rng);
        let ns = null_space(&a);
        assert_eq!(ns.ncols(), 1);
        assert!(frob(&(&a * &ns)) < 1e-12 * frob(&a));

        let a = random(6, 8, &mut rng);
        let ns = null_space(&a);
        assert_eq!(ns.ncols(), 2);
        let gram = ns.adjoint() * &ns;
        assert!(frob(&(gram - DMatrix::identity(2, 2))) < 1e-12);

        let mut dup = random(6, 4, &mut rng);
        let col = dup.column(0).into_owned();
        dup.set_column(1, &col);
        assert_eq!(null_space(&dup).ncols(), 1);

        let mut low = random(3, 4, &mut rng);
        let (c0, c1) = (low.column(0).into_owned(), low.column(1).into_owned());
        low.set_column(2, &(&c0 + &c1));
        low.set_column(3, &(&c0 * Complex64::new(0.0, 2.0)));
        assert_eq!(null_space(&low).ncols(), 2);

        let tall = random(8, 3, &mut rng);
        assert_eq!(null_space(&tall).ncols(), 0);
        assert_eq!(null_space(&DMatrix::zeros(2, 3)).ncols(), 3);
    }
}
