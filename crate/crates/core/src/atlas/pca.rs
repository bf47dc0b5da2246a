use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::AtlasError;

/// Principal components of a point cloud, strongest first.
#[derive(Clone, Debug)]
pub struct Pca {
    pub mean: DVector<f64>,
    /// Unit eigenvectors of the covariance as columns.
    pub components: DMatrix<f64>,
    /// Component variances, non-increasing.
    pub variances: Vec<f64>,
}

impl Pca {
    pub fn fit<I: AsRef<[f64]>>(points: &[I]) -> Result<Self, AtlasError> {
        let n = points.len();
        if n < 2 {
            return Err(AtlasError::TooFew { needed: 2, got: n });
        }
        let d = points[0].as_ref().len();
        let mut x = DMatrix::zeros(n, d);
        for (i, p) in points.iter().enumerate() {
            let p = p.as_ref();
            if p.len() != d {
                return Err(AtlasError::Dimension(d, p.len()));
            }
            for (j, &v) in p.iter().enumerate() {
                x[(i, j)] = v;
            }
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(AtlasError::NonFinite("PCA input"));
        }
        let mean = x.row_mean().transpose();
        for mut row in x.row_iter_mut() {
            row -= mean.transpose();
        }
        let cov = x.transpose() * &x / (n - 1) as f64;
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let mut components = DMatrix::zeros(d, d);
        let mut variances = Vec::with_capacity(d);
        for (k, &i) in order.iter().enumerate() {
            components.set_column(k, &eig.eigenvectors.column(i));
            variances.push(eig.eigenvalues[i].max(0.0));
        }
        if variances.iter().sum::<f64>() <= 0.0 {
            return Err(AtlasError::Degenerate("all points coincide"));
        }
        Ok(Self {
            mean,
            components,
            variances,
        })
    }

    pub fn dim(&self) -> usize {
        self.variances.len()
    }

    /// Share of total variance carried by each component.
    pub fn explained(&self) -> Vec<f64> {
        let total: f64 = self.variances.iter().sum();
        self.variances.iter().map(|v| v / total).collect()
    }

    /// Cumulative contribution ratios, ending at exactly 1.
    pub fn cumulative(&self) -> Vec<f64> {
        let mut acc = 0.0;
        let mut out: Vec<f64> = self
            .explained()
            .into_iter()
            .map(|r| {
                acc += r;
                acc
            })
            .collect();
        if let Some(last) = out.last_mut() {
            *last = 1.0;
        }
        out
    }

    /// Coordinates of `p` on the first `k` components; zero past the
    /// dimension of the data.
    pub fn project(&self, p: &[f64], k: usize) -> Vec<f64> {
        let centered = DVector::from_column_slice(p) - &self.mean;
        (0..k)
            .map(|c| {
                if c < self.dim() {
                    self.components.column(c).dot(&centered)
                } else {
                    0.0
                }
            })
            .collect()
    }

    pub fn project2(&self, p: &[f64]) -> [f64; 2] {
        let v = self.project(p, 2);
        [v[0], v[1]]
    }

    /// The point with the given leading coordinates and the mean elsewhere.
    pub fn inverse(&self, coords: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (c, &a) in coords.iter().enumerate().take(self.dim()) {
            out += self.components.column(c) * a;
        }
        out.iter().copied().collect()
    }
}
