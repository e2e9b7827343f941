use super::Matrix;
use crate::error::{Error, Result};

/// Principal components of a data matrix.
#[derive(Debug, Clone)]
pub struct Pca {
    /// D×l, one unit-norm component per column, by non-increasing variance.
    pub components: Matrix,
    pub mean: Vec<f64>,
    /// Explained variance (covariance eigenvalue) of each component.
    pub variances: Vec<f64>,
    /// Set when the covariance has rank < l; trailing components then come
    /// from the eigensolver's orthonormal basis of the null space.
    pub degenerate: bool,
}

impl Pca {
    /// Mean-centered projection `(x - mean) · components`.
    pub fn project(&self, x: &Matrix) -> Result<Matrix> {
        let mut centered = x.clone();
        let neg: Vec<f64> = self.mean.iter().map(|m| -m).collect();
        centered.add_row_vector(&neg);
        centered.matmul(&self.components)
    }
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues and the matrix whose columns are the matching
/// eigenvectors, unsorted.
pub fn symmetric_eigen(a: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::Shape(format!(
            "eigen of non-square {}x{}",
            n,
            a.cols()
        )));
    }
    let mut m = a.data().to_vec();
    let mut v = Matrix::identity(n);
    let vd = v.data_mut();

    let total: f64 = m.iter().map(|x| x * x).sum();
    let tol = (1e-15 * 1e-15) * total.max(f64::MIN_POSITIVE);

    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += m[p * n + q] * m[p * n + q];
            }
        }
        if off <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[q * n + q] - m[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m[k * n + p];
                    let akq = m[k * n + q];
                    m[k * n + p] = c * akp - s * akq;
                    m[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[p * n + k];
                    let aqk = m[q * n + k];
                    m[p * n + k] = c * apk - s * aqk;
                    m[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = vd[k * n + p];
                    let vkq = vd[k * n + q];
                    vd[k * n + p] = c * vkp - s * vkq;
                    vd[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let values = (0..n).map(|i| m[i * n + i]).collect();
    Ok((values, v))
}

/// Top-`l` principal components of the rows of `x` (N×D).
///
/// Each component's sign is fixed so that its largest-magnitude entry is
/// positive.
pub fn pca(x: &Matrix, l: usize) -> Result<Pca> {
    let (n, d) = x.shape();
    if n < 2 {
        return Err(Error::Param(format!("pca needs at least 2 rows, got {n}")));
    }
    if l == 0 || l > n.min(d) {
        return Err(Error::Param(format!(
            "pca with l={l} needs 1 <= l <= min(N={n}, D={d})"
        )));
    }
    let mean = x.column_means();
    let mut cov = vec![0.0; d * d];
    let mut centered = vec![0.0; d];
    for r in 0..n {
        for ((c, v), m) in centered.iter_mut().zip(x.row(r)).zip(&mean) {
            *c = v - m;
        }
        for i in 0..d {
            let ci = centered[i];
            if ci == 0.0 {
                continue;
            }
            let row = &mut cov[i * d..(i + 1) * d];
            for (slot, cj) in row[i..].iter_mut().zip(&centered[i..]) {
                *slot += ci * cj;
            }
        }
    }
    let scale = 1.0 / (n - 1) as f64;
    for i in 0..d {
        for j in i..d {
            let v = cov[i * d + j] * scale;
            cov[i * d + j] = v;
            cov[j * d + i] = v;
        }
    }
    let (values, vectors) = symmetric_eigen(&Matrix::from_vec(d, d, cov)?)?;

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));

    let top = values[order[0]].max(0.0);
    let floor = 1e-12 * top.max(f64::MIN_POSITIVE);
    let mut components = Matrix::zeros(d, l);
    let mut variances = Vec::with_capacity(l);
    let mut degenerate = false;
    for (out_col, &src) in order.iter().take(l).enumerate() {
        let mut col = vectors.column(src);
        let pivot = col.iter().copied().fold(
            0.0f64,
            |best, v| if v.abs() > best.abs() { v } else { best },
        );
        if pivot < 0.0 {
            col.iter_mut().for_each(|v| *v = -*v);
        }
        for (r, v) in col.into_iter().enumerate() {
            components.set(r, out_col, v);
        }
        let var = values[src];
        if var <= floor {
            degenerate = true;
        }
        variances.push(var.max(0.0));
    }
    Ok(Pca {
        components,
        mean,
        variances,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::{matmul, Rng};

    fn random(rng: &mut Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_vec(r, c, (0..r * c).map(|_| rng.gaussian()).collect()).unwrap()
    }

    fn assert_orthonormal(g: &Matrix) {
        let gtg = matmul(&g.transpose(), g).unwrap();
        assert!(gtg.max_abs_diff(&Matrix::identity(g.cols())) <= 1e-8);
    }

    #[test]
    fn line_y_equals_x() {
        let x = Matrix::from_rows(&[
            vec![-1.0, -1.0],
            vec![0.0, 0.0],
            vec![2.0, 2.0],
            vec![3.5, 3.5],
        ])
        .unwrap();
        let p = pca(&x, 1).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((p.components.get(0, 0) - s).abs() < 1e-12);
        assert!((p.components.get(1, 0) - s).abs() < 1e-12);
        assert!(!p.degenerate);
    }

    #[test]
    fn full_rank_reconstruction() {
        let mut rng = Rng::new(4);
        let mut x = random(&mut rng, 30, 5);
        let mean: Vec<f64> = x.column_means().iter().map(|m| -m).collect();
        x.add_row_vector(&mean);
        let p = pca(&x, 5).unwrap();
        let back = matmul(&p.project(&x).unwrap(), &p.components.transpose()).unwrap();
        assert!(back.max_abs_diff(&x) <= 1e-8);
    }

    #[test]
    fn components_orthonormal_and_sorted() {
        let mut rng = Rng::new(17);
        let x = random(&mut rng, 50, 8);
        let p = pca(&x, 4).unwrap();
        assert_orthonormal(&p.components);
        assert!(p.variances.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn degenerate_covariance_padded() {
        // Rank-1 data in 4-D.
        let x = Matrix::from_rows(&[
            vec![1.0, 2.0, 0.0, 0.0],
            vec![2.0, 4.0, 0.0, 0.0],
            vec![-1.0, -2.0, 0.0, 0.0],
        ])
        .unwrap();
        let p = pca(&x, 3).unwrap();
        assert!(p.degenerate);
        assert_orthonormal(&p.components);
    }

    #[test]
    fn bad_arguments() {
        assert!(pca(&Matrix::zeros(1, 3), 1).is_err());
        assert!(pca(&Matrix::zeros(5, 3), 4).is_err());
        assert!(pca(&Matrix::zeros(5, 3), 0).is_err());
    }

    #[test]
    fn jacobi_diagonalizes() {
        let a = Matrix::from_rows(&[
            vec![4.0, 1.0, 2.0],
            vec![1.0, 3.0, 0.5],
            vec![2.0, 0.5, 5.0],
        ])
        .unwrap();
        let (vals, vecs) = symmetric_eigen(&a).unwrap();
        let av = matmul(&a, &vecs).unwrap();
        for (c, val) in vals.iter().enumerate() {
            for r in 0..3 {
                assert!((av.get(r, c) - val * vecs.get(r, c)).abs() < 1e-12);
            }
        }
        let trace: f64 = vals.iter().sum();
        assert!((trace - 12.0).abs() < 1e-12);
    }
}
