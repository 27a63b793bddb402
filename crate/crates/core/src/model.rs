//! Data model: training set with known noise covariance, stacked
//! test+training vector, the linear statistic direction, and the
//! one-dimensional line parameterization used for conditional inference.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Error, Debug)]
pub enum ModelError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("need at least 2 training instances, got {0}")]
    TooFewInstances(usize),
    #[error("covariance is not symmetric (max asymmetry {0:.3e})")]
    NotSymmetric(f64),
    #[error("covariance is not positive definite")]
    NotPositiveDefinite,
    #[error("neighbor index {index} out of range for n = {n}")]
    NeighborOutOfRange { index: usize, n: usize },
    #[error("degenerate statistic variance: {0}")]
    DegenerateVariance(f64),
}

/// Which linear statistic the direction vector encodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum StatisticKind {
    /// Signed L1 distance between the test instance and the neighbor mean.
    L1Norm,
    /// Difference of coordinate means (used for image patches).
    ImageMean,
}

/// Training features (n x d) plus the known noise covariance (d x d).
#[derive(Debug, Clone)]
pub struct Dataset {
    train: DMatrix<f64>,
    sigma: DMatrix<f64>,
}

impl Dataset {
    pub fn new(train: DMatrix<f64>, sigma: DMatrix<f64>) -> Result<Self, ModelError> {
        let (n, d) = (train.nrows(), train.ncols());
        if n < 2 {
            return Err(ModelError::TooFewInstances(n));
        }
        if sigma.nrows() != d || sigma.ncols() != d {
            return Err(ModelError::DimensionMismatch(format!(
                "covariance is {}x{}, features have d = {}",
                sigma.nrows(),
                sigma.ncols(),
                d
            )));
        }
        let mut asym = 0.0f64;
        for i in 0..d {
            for j in (i + 1)..d {
                asym = asym.max((sigma[(i, j)] - sigma[(j, i)]).abs());
            }
        }
        if asym > 1e-10 {
            return Err(ModelError::NotSymmetric(asym));
        }
        if sigma.clone().cholesky().is_none() {
            return Err(ModelError::NotPositiveDefinite);
        }
        Ok(Self { train, sigma })
    }

    /// Identity covariance convenience constructor.
    pub fn with_identity_sigma(train: DMatrix<f64>) -> Result<Self, ModelError> {
        let d = train.ncols();
        Self::new(train, DMatrix::identity(d, d))
    }

    pub fn n(&self) -> usize {
        self.train.nrows()
    }

    pub fn d(&self) -> usize {
        self.train.ncols()
    }

    pub fn train(&self) -> &DMatrix<f64> {
        &self.train
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn instance(&self, i: usize) -> DVector<f64> {
        self.train.row(i).transpose()
    }
}

/// Stacked vector vec(x_test, x_1, ..., x_n) with its block structure.
#[derive(Debug, Clone)]
pub struct ConcatVector {
    data: DVector<f64>,
    n: usize,
    d: usize,
}

impl ConcatVector {
    /// Stack the test instance and the training rows into one column vector.
    /// Block 0 is the test instance, block i in 1..=n is training row i-1.
    pub fn concat(test: &DVector<f64>, train: &DMatrix<f64>) -> Result<Self, ModelError> {
        let (n, d) = (train.nrows(), train.ncols());
        if test.len() != d {
            return Err(ModelError::DimensionMismatch(format!(
                "test has length {}, training columns d = {}",
                test.len(),
                d
            )));
        }
        let mut data = DVector::zeros((1 + n) * d);
        data.rows_mut(0, d).copy_from(test);
        for i in 0..n {
            data.rows_mut((1 + i) * d, d)
                .copy_from(&train.row(i).transpose());
        }
        Ok(Self { data, n, d })
    }

    pub fn data(&self) -> &DVector<f64> {
        &self.data
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Block 0 is the test instance; block i in 1..=n is training instance i-1.
    pub fn block(&self, i: usize) -> DVector<f64> {
        assert!(i <= self.n, "block index {} out of range", i);
        self.data.rows(i * self.d, self.d).into_owned()
    }

    /// Inverse of `concat`.
    pub fn split(&self) -> (DVector<f64>, DMatrix<f64>) {
        let test = self.block(0);
        let mut train = DMatrix::zeros(self.n, self.d);
        for i in 0..self.n {
            train.row_mut(i).copy_from(&self.block(1 + i).transpose());
        }
        (test, train)
    }
}

/// Everything the screening stage decided: the ordered neighbor set, the
/// identity of the k-th neighbor, the coordinate signs of the statistic,
/// the chosen k, and (in the adaptive mode) the candidate list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectionOutcome {
    /// Training indices of the k nearest neighbors, by increasing distance.
    pub neighbors: Vec<usize>,
    /// Training index of the k-th nearest (last of `neighbors`).
    pub kth_index: usize,
    /// Elementwise signs of x_test - mean(neighbors), one per feature.
    pub signs: Vec<i8>,
    /// Chosen neighbor count.
    pub k_star: usize,
    /// Candidate k values; empty when k was fixed.
    pub candidates: Vec<usize>,
}

/// Direction vector eta of the linear test statistic eta' Y.
#[derive(Debug, Clone)]
pub struct StatisticDirection {
    eta: DVector<f64>,
    kind: StatisticKind,
    n: usize,
    d: usize,
}

impl StatisticDirection {
    /// Build eta from a screening outcome.
    ///
    /// `L1Norm`: test block carries the signs, each neighbor block -signs/k,
    /// so eta' y is the signed L1 distance to the neighbor mean.
    /// `ImageMean`: test block 1/d, neighbor blocks -1/(k d).
    pub fn build_eta(
        outcome: &SelectionOutcome,
        n: usize,
        d: usize,
        kind: StatisticKind,
    ) -> Result<Self, ModelError> {
        let k = outcome.neighbors.len();
        assert!(k > 0, "empty neighbor set");
        let mut eta = DVector::zeros((1 + n) * d);
        match kind {
            StatisticKind::L1Norm => {
                assert_eq!(outcome.signs.len(), d, "sign vector length != d");
                for j in 0..d {
                    eta[j] = outcome.signs[j] as f64;
                }
                for &i in &outcome.neighbors {
                    if i >= n {
                        return Err(ModelError::NeighborOutOfRange { index: i, n });
                    }
                    for j in 0..d {
                        eta[(1 + i) * d + j] = -(outcome.signs[j] as f64) / k as f64;
                    }
                }
            }
            StatisticKind::ImageMean => {
                for j in 0..d {
                    eta[j] = 1.0 / d as f64;
                }
                for &i in &outcome.neighbors {
                    if i >= n {
                        return Err(ModelError::NeighborOutOfRange { index: i, n });
                    }
                    for j in 0..d {
                        eta[(1 + i) * d + j] = -1.0 / (k as f64 * d as f64);
                    }
                }
            }
        }
        Ok(Self { eta, kind, n, d })
    }

    pub fn eta(&self) -> &DVector<f64> {
        &self.eta
    }

    pub fn kind(&self) -> StatisticKind {
        self.kind
    }

    pub fn block(&self, i: usize) -> DVector<f64> {
        self.eta.rows(i * self.d, self.d).into_owned()
    }

    /// Flip the direction (used to make the sign-indefinite mean statistic
    /// one-sided).
    pub fn negated(&self) -> Self {
        Self {
            eta: -&self.eta,
            kind: self.kind,
            n: self.n,
            d: self.d,
        }
    }
}

/// Line parameterization Y = a + b z with z = eta' Y.
///
/// `a` is the nuisance component (orthogonal to eta in the Sigma-tilde
/// metric), `b = Sigma-tilde eta / (eta' Sigma-tilde eta)`, and
/// `var = eta' Sigma-tilde eta` is the variance of the statistic.
#[derive(Debug, Clone)]
pub struct LineParam {
    a: DVector<f64>,
    b: DVector<f64>,
    pub var: f64,
    pub z_obs: f64,
    n: usize,
    d: usize,
}

impl LineParam {
    /// Compute (a, b, var, z_obs) from the stacked observation.
    ///
    /// Sigma-tilde is block-diagonal with `sigma` in each of the 1+n blocks;
    /// it is applied per block and never materialized.
    pub fn line_params(
        y: &ConcatVector,
        eta: &StatisticDirection,
        sigma: &DMatrix<f64>,
    ) -> Result<Self, ModelError> {
        let (n, d) = (y.n(), y.d());
        assert_eq!(eta.eta().len(), (1 + n) * d, "eta length mismatch");
        let mut sig_eta = DVector::zeros((1 + n) * d);
        let mut var = 0.0;
        for i in 0..=n {
            let block = eta.block(i);
            let se = sigma * &block;
            var += block.dot(&se);
            sig_eta.rows_mut(i * d, d).copy_from(&se);
        }
        if !(var.is_finite() && var > 0.0) {
            return Err(ModelError::DegenerateVariance(var));
        }
        let b = sig_eta / var;
        let z_obs = eta.eta().dot(y.data());
        let a = y.data() - &b * z_obs;
        Ok(Self {
            a,
            b,
            var,
            z_obs,
            n,
            d,
        })
    }

    pub fn a(&self) -> &DVector<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn a_block(&self, i: usize) -> DVector<f64> {
        self.a.rows(i * self.d, self.d).into_owned()
    }

    pub fn b_block(&self, i: usize) -> DVector<f64> {
        self.b.rows(i * self.d, self.d).into_owned()
    }

    /// Point on the line at parameter z.
    pub fn at(&self, z: f64) -> DVector<f64> {
        &self.a + &self.b * z
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(v)
    }

    #[test]
    fn concat_stacks_blocks() {
        let y = ConcatVector::concat(&dv(&[1.0]), &DMatrix::from_row_slice(2, 1, &[2.0, 3.0]))
            .unwrap();
        assert_eq!(y.data().as_slice(), &[1.0, 2.0, 3.0]);
        let y = ConcatVector::concat(&dv(&[1.0, 2.0]), &DMatrix::from_row_slice(1, 2, &[3.0, 4.0]))
            .unwrap();
        assert_eq!(y.data().as_slice(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn concat_rejects_mismatch() {
        let err = ConcatVector::concat(&dv(&[1.0]), &DMatrix::from_row_slice(1, 2, &[3.0, 4.0]));
        assert!(matches!(err, Err(ModelError::DimensionMismatch(_))));
    }

    #[test]
    fn split_round_trip() {
        let mut rng = StdRng::seed_from_u64(7);
        let test = DVector::from_fn(3, |_, _| rng.gen::<f64>());
        let train = DMatrix::from_fn(5, 3, |_, _| rng.gen::<f64>());
        let y = ConcatVector::concat(&test, &train).unwrap();
        let (t2, x2) = y.split();
        assert_eq!(t2, test);
        assert_eq!(x2, train);
    }

    #[test]
    fn dataset_validation() {
        let train = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 2.0, 3.0]);
        assert!(Dataset::with_identity_sigma(train.clone()).is_ok());
        let bad_sym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.2, 1.0]);
        assert!(matches!(
            Dataset::new(train.clone(), bad_sym),
            Err(ModelError::NotSymmetric(_))
        ));
        let not_pd = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            Dataset::new(train.clone(), not_pd),
            Err(ModelError::NotPositiveDefinite)
        ));
        assert!(matches!(
            Dataset::with_identity_sigma(DMatrix::from_row_slice(1, 2, &[0.0, 1.0])),
            Err(ModelError::TooFewInstances(1))
        ));
    }

    fn outcome(neighbors: Vec<usize>, signs: Vec<i8>) -> SelectionOutcome {
        let kth = *neighbors.last().unwrap();
        let k = neighbors.len();
        SelectionOutcome {
            neighbors,
            kth_index: kth,
            signs,
            k_star: k,
            candidates: vec![],
        }
    }

    #[test]
    fn eta_single_coordinate() {
        let eta = StatisticDirection::build_eta(
            &outcome(vec![0], vec![1]),
            1,
            1,
            StatisticKind::L1Norm,
        )
        .unwrap();
        assert_eq!(eta.eta().as_slice(), &[1.0, -1.0]);
    }

    #[test]
    fn eta_sign_placement() {
        let eta = StatisticDirection::build_eta(
            &outcome(vec![1], vec![1, -1]),
            2,
            2,
            StatisticKind::L1Norm,
        )
        .unwrap();
        assert_eq!(eta.eta().as_slice(), &[1.0, -1.0, 0.0, 0.0, -1.0, 1.0]);
    }

    #[test]
    fn eta_variance_identity_sigma() {
        // With Sigma = I and the L1 statistic, eta' Sigma-tilde eta = d (1 + 1/k).
        let d = 2;
        let n = 3;
        let eta = StatisticDirection::build_eta(
            &outcome(vec![2], vec![1, -1]),
            n,
            d,
            StatisticKind::L1Norm,
        )
        .unwrap();
        let sigma = DMatrix::identity(d, d);
        // explicit dense product as the oracle
        let dim = (1 + n) * d;
        let mut sigma_tilde = DMatrix::zeros(dim, dim);
        for blk in 0..=n {
            sigma_tilde
                .view_mut((blk * d, blk * d), (d, d))
                .copy_from(&sigma);
        }
        let quad = (eta.eta().transpose() * &sigma_tilde * eta.eta())[(0, 0)];
        assert!((quad - 4.0).abs() < 1e-12);
        let y = ConcatVector::concat(
            &dv(&[0.0, 0.0]),
            &DMatrix::from_fn(n, d, |i, j| (i * d + j) as f64),
        )
        .unwrap();
        let line = LineParam::line_params(&y, &eta, &sigma).unwrap();
        assert!((line.var - quad).abs() < 1e-12);
    }

    #[test]
    fn eta_rejects_out_of_range_neighbor() {
        let res = StatisticDirection::build_eta(
            &outcome(vec![5], vec![1]),
            2,
            1,
            StatisticKind::L1Norm,
        );
        assert!(matches!(res, Err(ModelError::NeighborOutOfRange { .. })));
    }

    #[test]
    fn line_params_hand_case() {
        // y = [1, 0], eta = [1, -1], Sigma = [1] => var = 2, b = [.5, -.5],
        // z_obs = 1, a = [.5, .5].
        let y = ConcatVector::concat(&dv(&[1.0]), &DMatrix::from_row_slice(1, 1, &[0.0])).unwrap();
        let eta = StatisticDirection::build_eta(
            &outcome(vec![0], vec![1]),
            1,
            1,
            StatisticKind::L1Norm,
        )
        .unwrap();
        let line = LineParam::line_params(&y, &eta, &DMatrix::identity(1, 1)).unwrap();
        assert!((line.var - 2.0).abs() < 1e-12);
        assert!((line.z_obs - 1.0).abs() < 1e-12);
        assert!((line.b()[0] - 0.5).abs() < 1e-12 && (line.b()[1] + 0.5).abs() < 1e-12);
        assert!((line.a()[0] - 0.5).abs() < 1e-12 && (line.a()[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn line_params_reconstruction_and_orthogonality() {
        let mut rng = StdRng::seed_from_u64(42);
        for _ in 0..50 {
            let n = rng.gen_range(2..8);
            let d = rng.gen_range(1..5);
            let test = DVector::from_fn(d, |_, _| rng.gen_range(-2.0..2.0));
            let train = DMatrix::from_fn(n, d, |_, _| rng.gen_range(-2.0..2.0));
            let k = rng.gen_range(1..=n.min(3));
            let neighbors: Vec<usize> = (0..k).collect();
            let signs: Vec<i8> = (0..d).map(|_| if rng.gen() { 1 } else { -1 }).collect();
            let out = outcome(neighbors, signs);
            let eta =
                StatisticDirection::build_eta(&out, n, d, StatisticKind::L1Norm).unwrap();
            let y = ConcatVector::concat(&test, &train).unwrap();
            let line = LineParam::line_params(&y, &eta, &DMatrix::identity(d, d)).unwrap();
            let recon = line.at(line.z_obs);
            assert!((recon - y.data()).amax() < 1e-10);
            assert!(eta.eta().dot(line.a()).abs() < 1e-8 * (1.0 + line.z_obs.abs()));
            assert!((eta.eta().dot(line.b()) - 1.0).abs() < 1e-10);
            // eta'(a + b z) = z at arbitrary z
            for _ in 0..10 {
                let z = rng.gen_range(-5.0..5.0);
                assert!((eta.eta().dot(&line.at(z)) - z).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn var_invariant_to_nonneighbor_permutation() {
        // eta only touches the test and neighbor blocks; relabeling others is
        // irrelevant because every diagonal block of Sigma-tilde is identical.
        let out_a = outcome(vec![0], vec![1, 1]);
        let e1 = StatisticDirection::build_eta(&out_a, 4, 2, StatisticKind::L1Norm).unwrap();
        let y1 = ConcatVector::concat(
            &dv(&[1.0, 2.0]),
            &DMatrix::from_fn(4, 2, |i, j| (i + j) as f64),
        )
        .unwrap();
        let permuted = {
            let base = DMatrix::from_fn(4, 2, |i, j| (i + j) as f64);
            let order = [0usize, 3, 1, 2];
            DMatrix::from_fn(4, 2, |i, j| base[(order[i], j)])
        };
        let y2 = ConcatVector::concat(&dv(&[1.0, 2.0]), &permuted).unwrap();
        let sigma = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let l1 = LineParam::line_params(&y1, &e1, &sigma).unwrap();
        let l2 = LineParam::line_params(&y2, &e1, &sigma).unwrap();
        assert!((l1.var - l2.var).abs() < 1e-12);
    }
}
