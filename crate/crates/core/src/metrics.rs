//! Distributional and overlap metrics over local grids.
//!
//! Features are a fixed handcrafted embedding: occupied fractions over a
//! 1 + 8 + 64 cell pyramid followed by a seeded Gaussian projection of the
//! raw voxel values, 128 numbers in total.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::map::LocalGrid;
use crate::merge::PredictionGrid;

pub const FEATURE_DIM: usize = 128;
const POOL_DIM: usize = 1 + 8 + 64;
const PROJ_DIM: usize = FEATURE_DIM - POOL_DIM;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("feature dimension mismatch: {a} vs {b}")]
    Dimension { a: usize, b: usize },
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("grid geometry does not match")]
    Geometry,
    #[error("extractor requires a grid side divisible by 4, got {0}")]
    ExtractorDim(usize),
}

/// Seeded feature extractor for grids of one side length.
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    dim: usize,
    seed: u64,
    /// `PROJ_DIM x dim^3`, row-major.
    projection: Vec<f64>,
}

impl FeatureExtractor {
    pub fn new(dim: usize, seed: u64) -> Result<Self, MetricsError> {
        if dim == 0 || dim % 4 != 0 {
            return Err(MetricsError::ExtractorDim(dim));
        }
        let n = dim * dim * dim;
        let scale = 1.0 / (n as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let projection = (0..PROJ_DIM * n)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Ok(Self { dim, seed, projection })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn extract(&self, grid: &LocalGrid) -> Result<Vec<f64>, MetricsError> {
        if grid.dim() != self.dim {
            return Err(MetricsError::Geometry);
        }
        let d = self.dim;
        let mut counts = [0.0f64; POOL_DIM];
        for z in 0..d {
            for y in 0..d {
                for x in 0..d {
                    if grid.values[(z * d + y) * d + x] > 0.0 {
                        counts[0] += 1.0;
                        let h = d / 2;
                        counts[1 + (z / h) * 4 + (y / h) * 2 + x / h] += 1.0;
                        let q = d / 4;
                        counts[9 + (z / q) * 16 + (y / q) * 4 + x / q] += 1.0;
                    }
                }
            }
        }
        let n = (d * d * d) as f64;
        let mut out = Vec::with_capacity(FEATURE_DIM);
        out.push(counts[0] / n);
        out.extend(counts[1..9].iter().map(|c| c * 8.0 / n));
        out.extend(counts[9..].iter().map(|c| c * 64.0 / n));
        let m = grid.values.len();
        for row in self.projection.chunks_exact(m) {
            out.push(row.iter().zip(&grid.values).map(|(w, v)| w * v).sum());
        }
        Ok(out)
    }
}

pub fn extract_features(grid: &LocalGrid, seed: u64) -> Result<Vec<f64>, MetricsError> {
    FeatureExtractor::new(grid.dim(), seed)?.extract(grid)
}

/// Sample mean and unbiased covariance of a feature set.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributionStats {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub count: usize,
}

impl DistributionStats {
    pub fn from_features(features: &[Vec<f64>]) -> Result<Self, MetricsError> {
        let n = features.len();
        if n < 2 {
            return Err(MetricsError::TooFewSamples { need: 2, got: n });
        }
        let d = features[0].len();
        if let Some(f) = features.iter().find(|f| f.len() != d) {
            return Err(MetricsError::Dimension { a: d, b: f.len() });
        }
        let mut mean = DVector::zeros(d);
        for f in features {
            mean += DVector::from_column_slice(f);
        }
        mean /= n as f64;
        let mut centered = DMatrix::zeros(d, n);
        for (j, f) in features.iter().enumerate() {
            for i in 0..d {
                centered[(i, j)] = f[i] - mean[i];
            }
        }
        let mut cov = &centered * centered.transpose() / (n - 1) as f64;
        cov = (&cov + cov.transpose()) * 0.5;
        Ok(Self { mean, cov, count: n })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

fn sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// `tr((A B)^{1/2})` through the similar PSD matrix `A^{1/2} B A^{1/2}`.
fn trace_sqrt_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let s = sqrt_psd(a);
    let m = &s * b * &s;
    let m = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(m);
    eig.eigenvalues.iter().map(|l| l.max(0.0).sqrt()).sum()
}

pub fn fid(a: &DistributionStats, b: &DistributionStats) -> Result<f64, MetricsError> {
    if a.dim() != b.dim() {
        return Err(MetricsError::Dimension { a: a.dim(), b: b.dim() });
    }
    for s in [a, b] {
        if s.count < 2 {
            return Err(MetricsError::TooFewSamples { need: 2, got: s.count });
        }
    }
    let diff = &a.mean - &b.mean;
    let cross = 0.5 * (trace_sqrt_product(&a.cov, &b.cov) + trace_sqrt_product(&b.cov, &a.cov));
    let value = diff.norm_squared() + a.cov.trace() + b.cov.trace() - 2.0 * cross;
    Ok(value.max(0.0))
}

fn kernel(x: &[f64], y: &[f64]) -> f64 {
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    (dot / x.len() as f64 + 1.0).powi(3)
}

/// Unbiased squared MMD with the cubic polynomial kernel (not scaled).
pub fn mmd2_unbiased(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64, MetricsError> {
    let (m, n) = (a.len(), b.len());
    if m < 2 || n < 2 {
        return Err(MetricsError::TooFewSamples { need: 2, got: m.min(n) });
    }
    let d = a[0].len();
    if let Some(f) = a.iter().chain(b).find(|f| f.len() != d) {
        return Err(MetricsError::Dimension { a: d, b: f.len() });
    }
    let within = |s: &[Vec<f64>]| {
        let mut acc = 0.0;
        for i in 0..s.len() {
            for j in i + 1..s.len() {
                acc += kernel(&s[i], &s[j]);
            }
        }
        2.0 * acc / (s.len() * (s.len() - 1)) as f64
    };
    let mut cross = 0.0;
    for x in a {
        for y in b {
            cross += kernel(x, y);
        }
    }
    Ok(within(a) + within(b) - 2.0 * cross / (m * n) as f64)
}

/// KID reported as `1000 x` the unbiased MMD².
pub fn kid(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64, MetricsError> {
    Ok(1000.0 * mmd2_unbiased(a, b)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KidEstimate {
    /// Mean over subsets, ×1000.
    pub mean: f64,
    /// Standard error of that mean, ×1000.
    pub std_error: f64,
    pub subsets: usize,
}

/// KID averaged over random equal-size subsets, with its standard error.
pub fn kid_subsets(
    a: &[Vec<f64>],
    b: &[Vec<f64>],
    n_subsets: usize,
    subset_size: usize,
    seed: u64,
) -> Result<KidEstimate, MetricsError> {
    let size = subset_size.min(a.len()).min(b.len());
    if size < 2 || n_subsets < 2 {
        return Err(MetricsError::TooFewSamples { need: 2, got: size.min(n_subsets) });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(n_subsets);
    for _ in 0..n_subsets {
        let sa: Vec<Vec<f64>> = sample(&mut rng, a.len(), size).iter().map(|i| a[i].clone()).collect();
        let sb: Vec<Vec<f64>> = sample(&mut rng, b.len(), size).iter().map(|i| b[i].clone()).collect();
        values.push(kid(&sa, &sb)?);
    }
    let (mean, var) = mean_variance(&values);
    let sample_var = var * n_subsets as f64 / (n_subsets - 1) as f64;
    Ok(KidEstimate {
        mean,
        std_error: (sample_var / n_subsets as f64).sqrt(),
        subsets: n_subsets,
    })
}

/// Intersection over union of occupied voxels; 1 when both are empty.
pub fn iou(a: &PredictionGrid, b: &PredictionGrid) -> Result<f64, MetricsError> {
    if a.geometry != b.geometry {
        return Err(MetricsError::Geometry);
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (x, y) in a.occupied.iter().zip(&b.occupied) {
        inter += (*x && *y) as usize;
        union += (*x || *y) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// IoU of every unordered pair, in `(i, j)` lexicographic order.
pub fn pairwise_ious(preds: &[PredictionGrid]) -> Result<Vec<f64>, MetricsError> {
    if preds.len() < 2 {
        return Err(MetricsError::TooFewSamples { need: 2, got: preds.len() });
    }
    let mut out = Vec::with_capacity(preds.len() * (preds.len() - 1) / 2);
    for i in 0..preds.len() {
        for j in i + 1..preds.len() {
            out.push(iou(&preds[i], &preds[j])?);
        }
    }
    Ok(out)
}

fn mean_variance(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var)
}

/// Normalised histogram of IoU values over `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct IouPmf {
    pub pmf: Vec<f64>,
    pub mean: f64,
    pub variance: f64,
    pub pairs: usize,
}

impl IouPmf {
    pub const DEFAULT_BINS: usize = 20;

    pub fn from_values(values: &[f64], bins: usize) -> Result<Self, MetricsError> {
        if values.is_empty() {
            return Err(MetricsError::TooFewSamples { need: 1, got: 0 });
        }
        let mut pmf = vec![0.0; bins];
        for v in values {
            let b = ((v * bins as f64).floor() as usize).min(bins - 1);
            pmf[b] += 1.0;
        }
        pmf.iter_mut().for_each(|p| *p /= values.len() as f64);
        let (mean, variance) = mean_variance(values);
        Ok(Self { pmf, mean, variance, pairs: values.len() })
    }

    /// `bin_lo,bin_hi,probability` rows.
    pub fn to_csv(&self) -> String {
        let bins = self.pmf.len() as f64;
        let mut s = String::from("bin_lo,bin_hi,probability\n");
        for (i, p) in self.pmf.iter().enumerate() {
            let _ = writeln!(s, "{},{},{}", i as f64 / bins, (i + 1) as f64 / bins, p);
        }
        s
    }
}

pub fn iou_pmf(preds: &[PredictionGrid]) -> Result<IouPmf, MetricsError> {
    IouPmf::from_values(&pairwise_ious(preds)?, IouPmf::DEFAULT_BINS)
}

/// Percentage of voxels in the crop that are unknown.
pub fn unknown_ratio(crop: &LocalGrid) -> f64 {
    if crop.is_empty() {
        return 0.0;
    }
    100.0 * crop.unknown_count() as f64 / crop.len() as f64
}

/// One summary line of the metrics table.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub config_hash: String,
    pub method: String,
    pub fid: f64,
    pub kid_x1000: f64,
    pub mean_iou: Option<f64>,
    pub unknown_pct: f64,
    pub n: usize,
}

impl MetricRow {
    pub const HEADER: &'static str = "config_hash,method,fid,kid_x1000,mean_iou,unknown_pct,n";

    pub fn to_csv(&self) -> String {
        let iou = self.mean_iou.map_or(String::new(), |v| format!("{v:.6}"));
        format!(
            "{},{},{:.6},{:.6},{},{:.4},{}",
            self.config_hash, self.method, self.fid, self.kid_x1000, iou, self.unknown_pct, self.n
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::GridGeometry;
    use crate::Vec3;
    use proptest::prelude::*;
    use rand::Rng;

    fn grid(values: Vec<f64>) -> LocalGrid {
        let g = GridGeometry::around(&Vec3::zeros(), 2.0, 0.5);
        LocalGrid::from_complete(Vec3::zeros(), 2.0, g, values)
    }

    fn pred(occ: &[usize]) -> PredictionGrid {
        let g = GridGeometry::around(&Vec3::zeros(), 1.0, 0.5);
        let mut o = vec![false; g.len()];
        occ.iter().for_each(|i| o[*i] = true);
        PredictionGrid::new(g, o)
    }

    fn normal_set(n: usize, d: usize, shift: f64, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| (0..d).map(|_| shift + rng.sample::<f64, _>(StandardNormal)).collect()).collect()
    }

    #[test]
    fn pooling_extremes() {
        let free = extract_features(&grid(vec![-1.0; 512]), 3).unwrap();
        assert_eq!(free.len(), FEATURE_DIM);
        assert!(free[..POOL_DIM].iter().all(|v| *v == 0.0));
        let occ = extract_features(&grid(vec![1.0; 512]), 3).unwrap();
        assert!(occ[..POOL_DIM].iter().all(|v| *v == 1.0));
        assert_eq!(occ, extract_features(&grid(vec![1.0; 512]), 3).unwrap());
    }

    #[test]
    fn pooling_octant_layout() {
        // occupy only x < 4, y < 4, z < 4: first octant
        let v: Vec<f64> = (0..512)
            .map(|i| if i % 8 < 4 && (i / 8) % 8 < 4 && i / 64 < 4 { 1.0 } else { -1.0 })
            .collect();
        let f = extract_features(&grid(v), 0).unwrap();
        assert_eq!(f[0], 0.125);
        assert_eq!(f[1], 1.0);
        assert!(f[2..9].iter().all(|x| *x == 0.0));
    }

    #[test]
    fn extractor_rejects_wrong_dim() {
        let ex = FeatureExtractor::new(4, 0).unwrap();
        assert_eq!(ex.extract(&grid(vec![0.0; 512])), Err(MetricsError::Geometry));
        assert!(FeatureExtractor::new(6, 0).is_err());
    }

    #[test]
    fn fid_one_dimensional_shift() {
        // exact unit variance, means 0 and 3
        let a: Vec<Vec<f64>> = vec![vec![-1.0], vec![1.0], vec![-1.0], vec![1.0]];
        let b: Vec<Vec<f64>> = a.iter().map(|v| vec![v[0] + 3.0]).collect();
        let (sa, sb) = (DistributionStats::from_features(&a).unwrap(), DistributionStats::from_features(&b).unwrap());
        assert!((sa.cov[(0, 0)] - 4.0 / 3.0).abs() < 1e-15);
        assert!((fid(&sa, &sb).unwrap() - 9.0).abs() < 1e-9);
    }

    #[test]
    fn fid_identity_and_symmetry() {
        let a = normal_set(300, 16, 0.0, 1);
        let b = normal_set(300, 16, 0.4, 2);
        let sa = DistributionStats::from_features(&a).unwrap();
        let sb = DistributionStats::from_features(&b).unwrap();
        assert!(fid(&sa, &sa).unwrap() < 1e-6);
        assert_eq!(fid(&sa, &sb).unwrap(), fid(&sb, &sa).unwrap());
        assert!(fid(&sa, &sb).unwrap() > 1.0);
    }

    #[test]
    fn fid_quadratic_under_scaling_for_mean_shift() {
        let a = normal_set(50, 4, 0.0, 5);
        let b: Vec<Vec<f64>> = a.iter().map(|v| v.iter().map(|x| x + 1.5).collect()).collect();
        let f1 = fid(&DistributionStats::from_features(&a).unwrap(), &DistributionStats::from_features(&b).unwrap()).unwrap();
        let scale = |s: &[Vec<f64>]| s.iter().map(|v| v.iter().map(|x| 2.0 * x).collect()).collect::<Vec<Vec<f64>>>();
        let f2 = fid(
            &DistributionStats::from_features(&scale(&a)).unwrap(),
            &DistributionStats::from_features(&scale(&b)).unwrap(),
        )
        .unwrap();
        assert!((f1 - 9.0).abs() < 1e-6, "{f1}");
        assert!((f2 - 4.0 * f1).abs() < 1e-6 * f2);
    }

    #[test]
    fn fid_errors() {
        let a = DistributionStats::from_features(&normal_set(5, 3, 0.0, 1)).unwrap();
        let b = DistributionStats::from_features(&normal_set(5, 4, 0.0, 1)).unwrap();
        assert_eq!(fid(&a, &b), Err(MetricsError::Dimension { a: 3, b: 4 }));
        assert!(DistributionStats::from_features(&[vec![1.0]]).is_err());
    }

    #[test]
    fn kid_matches_hand_formula_on_fixed_set() {
        let a = vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]];
        let k = |x: &[f64], y: &[f64]| ((x[0] * y[0] + x[1] * y[1]) / 2.0 + 1.0).powi(3);
        let mut off = 0.0;
        let mut all = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                all += k(&a[i], &a[j]);
                if i != j {
                    off += k(&a[i], &a[j]);
                }
            }
        }
        let expected = 2.0 * off / 6.0 - 2.0 * all / 9.0;
        let got = mmd2_unbiased(&a, &a).unwrap();
        assert!((got - expected).abs() < 1e-12);
        assert!(got <= 0.0);
        assert!((kid(&a, &a).unwrap() - 1000.0 * expected).abs() < 1e-9);
    }

    #[test]
    fn kid_separates_point_masses() {
        let a = vec![vec![1.0, 1.0]; 4];
        let b = vec![vec![-1.0, 2.0]; 4];
        assert!(kid(&a, &b).unwrap() > 0.0);
        assert!(kid(&a[..1], &b).is_err());
    }

    #[test]
    fn kid_same_distribution_near_zero() {
        let a = normal_set(500, 8, 0.0, 11);
        let b = normal_set(500, 8, 0.0, 12);
        let est = kid_subsets(&a, &b, 20, 100, 0).unwrap();
        assert!(est.mean.abs() < 3.0 * est.std_error, "{est:?}");
        let c = normal_set(500, 8, 1.0, 13);
        assert!(kid_subsets(&a, &c, 20, 100, 0).unwrap().mean > 10.0);
    }

    #[test]
    fn iou_counting() {
        assert_eq!(iou(&pred(&[0, 1]), &pred(&[1, 2])).unwrap(), 1.0 / 3.0);
        assert_eq!(iou(&pred(&[0, 5]), &pred(&[0, 5])).unwrap(), 1.0);
        assert_eq!(iou(&pred(&[0]), &pred(&[3])).unwrap(), 0.0);
        assert_eq!(iou(&pred(&[]), &pred(&[])).unwrap(), 1.0);
        let other = PredictionGrid::new(GridGeometry::around(&Vec3::new(5.0, 0.0, 0.0), 1.0, 0.5), vec![false; 64]);
        assert_eq!(iou(&pred(&[]), &other), Err(MetricsError::Geometry));
    }

    #[test]
    fn pmf_masses() {
        let same = vec![pred(&[1, 2, 3]); 4];
        let p = iou_pmf(&same).unwrap();
        assert_eq!(p.pairs, 6);
        assert_eq!(p.pmf[19], 1.0);
        let disjoint = vec![pred(&[0]), pred(&[1]), pred(&[2])];
        let p = iou_pmf(&disjoint).unwrap();
        assert_eq!(p.pmf[0], 1.0);
        assert_eq!(p.variance, 0.0);
        assert!(iou_pmf(&same[..1]).is_err());
    }

    #[test]
    fn pmf_hand_counted() {
        // A={0,1} B={1,2} C={0,1,2,3} D={4}
        // AB 1/3, AC 1/2, AD 0, BC 1/2, BD 0, CD 0
        let p = iou_pmf(&[pred(&[0, 1]), pred(&[1, 2]), pred(&[0, 1, 2, 3]), pred(&[4])]).unwrap();
        let mut expected = vec![0.0; 20];
        expected[0] = 3.0 / 6.0;
        expected[6] = 1.0 / 6.0;
        expected[10] = 2.0 / 6.0;
        assert_eq!(p.pmf, expected);
        assert!((p.mean - (1.0 / 3.0 + 1.0) / 6.0).abs() < 1e-15);
        assert!((p.pmf.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unknown_ratio_counts() {
        let mut g = grid(vec![-1.0; 512]);
        assert_eq!(unknown_ratio(&g), 0.0);
        g.known_mask.iter_mut().for_each(|m| *m = false);
        assert_eq!(unknown_ratio(&g), 100.0);
        let geo = GridGeometry::around(&Vec3::zeros(), 1.0, 0.5);
        let mut small = LocalGrid::from_complete(Vec3::zeros(), 1.0, geo, vec![1.0; 64]);
        small.known_mask[..16].iter_mut().for_each(|m| *m = false);
        assert_eq!(unknown_ratio(&small), 25.0);
    }

    #[test]
    fn metric_row_csv() {
        let r = MetricRow {
            config_hash: "ab".into(),
            method: "SS-FC-PMM".into(),
            fid: 1.5,
            kid_x1000: 2.0,
            mean_iou: None,
            unknown_pct: 50.0,
            n: 3,
        };
        assert_eq!(r.to_csv(), "ab,SS-FC-PMM,1.500000,2.000000,,50.0000,3");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn iou_bounded_symmetric(a in proptest::collection::vec(any::<bool>(), 64), b in proptest::collection::vec(any::<bool>(), 64)) {
            let g = GridGeometry::around(&Vec3::zeros(), 1.0, 0.5);
            let (pa, pb) = (PredictionGrid::new(g, a.clone()), PredictionGrid::new(g, b.clone()));
            let v = iou(&pa, &pb).unwrap();
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert_eq!(v, iou(&pb, &pa).unwrap());
            prop_assert_eq!(v == 1.0, a == b);
        }

        #[test]
        fn fid_symmetric_nonnegative(seed in 0u64..1000, shift in 0.0f64..2.0) {
            let a = DistributionStats::from_features(&normal_set(12, 6, 0.0, seed)).unwrap();
            let b = DistributionStats::from_features(&normal_set(9, 6, shift, seed + 1)).unwrap();
            let ab = fid(&a, &b).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - fid(&b, &a).unwrap()).abs() <= 1e-9);
        }

        #[test]
        fn features_separate_distinct_grids(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a: Vec<f64> = (0..512).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect();
            let mut b = a.clone();
            for i in sample(&mut rng, 512, 52).iter() {
                b[i] = -b[i];
            }
            let ex = FeatureExtractor::new(8, 1).unwrap();
            prop_assert_ne!(ex.extract(&grid(a)).unwrap(), ex.extract(&grid(b)).unwrap());
        }
    }
}
