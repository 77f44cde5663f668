//! Linear probe: PCA fitted on the training folds, logistic regression, ROC-AUC.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::evalkit::stats::ranks;
use crate::model::{HybridModel, Token};
use crate::numerics::Prng;
use crate::scalar::Scalar;
use crate::tuning::AdaptationBundle;

/// ROC-AUC as the Mann–Whitney statistic; ties count one half.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return contract("scores and labels differ in length");
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return contract("AUC needs both classes");
    }
    let r = ranks(scores);
    let rank_sum: f64 = r
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l)
        .map(|(x, _)| x)
        .sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos * n_neg) as f64)
}

/// Principal components of a data matrix (rows are examples).
#[derive(Debug, Clone)]
pub struct Pca {
    pub mean: DVector<f64>,
    /// `features × k`, orthonormal columns in decreasing-variance order.
    pub components: DMatrix<f64>,
}

impl Pca {
    pub fn fit(x: &DMatrix<f64>, k: usize) -> Result<Self> {
        let (n, f) = x.shape();
        if n < 2 || k == 0 || k > f {
            return contract(format!(
                "PCA needs ≥ 2 rows and 1 ≤ k ≤ {f}, got n = {n}, k = {k}"
            ));
        }
        let mean = x.row_mean().transpose();
        let mut centered = x.clone();
        for mut row in centered.row_iter_mut() {
            row -= mean.transpose();
        }
        let cov = centered.transpose() * &centered / (n as f64 - 1.0);
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..f).collect();
        order.sort_by(|&a, &b| {
            eig.eigenvalues[b]
                .total_cmp(&eig.eigenvalues[a])
                .then(a.cmp(&b))
        });
        let mut components = DMatrix::zeros(f, k);
        for (j, &i) in order.iter().take(k).enumerate() {
            let mut col = eig.eigenvectors.column(i).into_owned();
            // fix the sign so the largest-magnitude entry is positive
            let imax = col.iamax();
            if col[imax] < 0.0 {
                col = -col;
            }
            components.set_column(j, &col);
        }
        Ok(Self { mean, components })
    }

    pub fn transform(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut c = x.clone();
        for mut row in c.row_iter_mut() {
            row -= self.mean.transpose();
        }
        c * &self.components
    }

    /// `max |WᵀW − I|`.
    pub fn orthonormality_error(&self) -> f64 {
        let g = self.components.transpose() * &self.components;
        let k = g.nrows();
        (g - DMatrix::identity(k, k)).amax()
    }
}

/// Logistic regression trained by full-batch gradient descent on
/// standardized inputs with a small L2 penalty.
#[derive(Debug, Clone)]
pub struct Logistic {
    pub weights: DVector<f64>,
    pub bias: f64,
    shift: DVector<f64>,
    scale: DVector<f64>,
}

pub const PROBE_STEPS: usize = 500;
pub const PROBE_LR: f64 = 0.5;
pub const PROBE_L2: f64 = 1e-3;

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Logistic {
    pub fn fit(x: &DMatrix<f64>, y: &[bool]) -> Self {
        let (n, f) = x.shape();
        let shift = x.row_mean().transpose();
        let scale = DVector::from_fn(f, |j, _| {
            let sd = x
                .column(j)
                .iter()
                .map(|v| (v - shift[j]).powi(2))
                .sum::<f64>()
                .sqrt()
                / (n as f64).sqrt();
            if sd > 1e-12 {
                sd
            } else {
                1.0
            }
        });
        let z = Self::standardize(x, &shift, &scale);
        let t = DVector::from_iterator(n, y.iter().map(|&l| f64::from(u8::from(l))));
        let mut w = DVector::zeros(f);
        let mut b = 0.0;
        for _ in 0..PROBE_STEPS {
            let p = (&z * &w).map(|s| sigmoid(s + b));
            let err = p - &t;
            let gw = z.transpose() * &err / n as f64 + &w * PROBE_L2;
            let gb = err.sum() / n as f64;
            w -= gw * PROBE_LR;
            b -= gb * PROBE_LR;
        }
        Self {
            weights: w,
            bias: b,
            shift,
            scale,
        }
    }

    fn standardize(x: &DMatrix<f64>, shift: &DVector<f64>, scale: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| {
            (x[(i, j)] - shift[j]) / scale[j]
        })
    }

    /// Decision scores (logits).
    pub fn score(&self, x: &DMatrix<f64>) -> Vec<f64> {
        let z = Self::standardize(x, &self.shift, &self.scale);
        (z * &self.weights).iter().map(|s| s + self.bias).collect()
    }
}

/// Stratified folds: each class is shuffled and dealt round-robin.
pub fn stratified_folds(labels: &[bool], k: usize, seed: u64) -> Result<Vec<usize>> {
    let mut pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();
    let mut neg: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i]).collect();
    if pos.len() < k || neg.len() < k {
        return contract(format!(
            "cannot stratify {} positives and {} negatives into {k} folds with both classes",
            pos.len(),
            neg.len()
        ));
    }
    let mut rng = Prng::new(seed);
    rng.shuffle(&mut pos);
    rng.shuffle(&mut neg);
    let mut fold = vec![0; labels.len()];
    for (j, &i) in pos.iter().chain(&neg).enumerate() {
        fold[i] = j % k;
    }
    Ok(fold)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub fold_auc: Vec<f64>,
    pub mean_auc: f64,
    pub n_components: usize,
    /// Worst `|WᵀW − I|` entry over the per-fold PCA fits.
    pub max_orthonormality_error: f64,
}

/// PCA components used when none is given: `min(16, features)`.
pub fn default_components(features: usize) -> usize {
    features.min(16)
}

/// k-fold cross-validated probe AUC. PCA and the classifier see only the
/// training folds.
pub fn linear_probe(
    features: &[Vec<f64>],
    labels: &[bool],
    n_components: usize,
    k_folds: usize,
    seed: u64,
) -> Result<ProbeResult> {
    let n = features.len();
    if k_folds < 2 || n < 2 * k_folds || n != labels.len() {
        return contract(format!(
            "probe needs ≥ {} labelled examples for {k_folds} folds, got {n}",
            2 * k_folds
        ));
    }
    let f = features[0].len();
    if f == 0 || features.iter().any(|r| r.len() != f) {
        return contract("probe features must be nonempty rows of equal width");
    }
    let folds = stratified_folds(labels, k_folds, seed)?;
    let x = DMatrix::from_fn(n, f, |i, j| features[i][j]);
    let mut fold_auc = Vec::with_capacity(k_folds);
    let mut max_err: f64 = 0.0;
    let mut used_k = 0;
    for fold in 0..k_folds {
        let train: Vec<usize> = (0..n).filter(|&i| folds[i] != fold).collect();
        let test: Vec<usize> = (0..n).filter(|&i| folds[i] == fold).collect();
        let xtr = x.select_rows(&train);
        let xte = x.select_rows(&test);
        let k = n_components.min(f).min(train.len() - 1).max(1);
        used_k = k;
        let pca = Pca::fit(&xtr, k)?;
        max_err = max_err.max(pca.orthonormality_error());
        let ytr: Vec<bool> = train.iter().map(|&i| labels[i]).collect();
        let yte: Vec<bool> = test.iter().map(|&i| labels[i]).collect();
        let clf = Logistic::fit(&pca.transform(&xtr), &ytr);
        fold_auc.push(roc_auc(&clf.score(&pca.transform(&xte)), &yte)?);
    }
    let mean_auc = fold_auc.iter().sum::<f64>() / k_folds as f64;
    Ok(ProbeResult {
        fold_auc,
        mean_auc,
        n_components: used_k,
        max_orthonormality_error: max_err,
    })
}

/// Final-prompt-token features: the flattened recurrent state of every
/// recurrent layer and the residual stream after every block.
#[derive(Debug, Clone, Default)]
pub struct ProbeFeatures {
    /// `(layer, rows)` per recurrent layer.
    pub recurrent: Vec<(usize, Vec<Vec<f64>>)>,
    /// `(layer, rows)` per block.
    pub residual: Vec<(usize, Vec<Vec<f64>>)>,
}

pub fn extract_features<T: Scalar>(
    model: &HybridModel<T>,
    prompts: &[Vec<Token>],
) -> Result<ProbeFeatures> {
    let c = model.config();
    let rec_layers = c.recurrent_layers();
    let mut out = ProbeFeatures {
        recurrent: rec_layers.iter().map(|&l| (l, Vec::new())).collect(),
        residual: (0..c.n_layers).map(|l| (l, Vec::new())).collect(),
    };
    let none = AdaptationBundle::none();
    for p in prompts {
        let fw = model.forward(p, &none)?;
        for (slot, &l) in out.recurrent.iter_mut().zip(&rec_layers) {
            let states = fw.states[l].as_ref().expect("recurrent layer has states");
            let last = states.last().expect("nonempty prompt");
            slot.1.push(
                last.tensor
                    .data()
                    .iter()
                    .map(|x| x.to_f64_lossless())
                    .collect(),
            );
        }
        for (slot, r) in out.residual.iter_mut().zip(&fw.residuals) {
            let d = r.shape()[1];
            let row = &r.data()[(r.shape()[0] - 1) * d..];
            slot.1
                .push(row.iter().map(|x| x.to_f64_lossless()).collect());
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerAuc {
    pub source: String,
    pub layer: usize,
    pub auc: f64,
}

/// Probe AUC for every layer of both sources, recurrent rows first.
pub fn probe_layers(
    features: &ProbeFeatures,
    labels: &[bool],
    n_components: Option<usize>,
    k_folds: usize,
    seed: u64,
) -> Result<Vec<LayerAuc>> {
    let mut out = Vec::new();
    for (source, sets) in [
        ("recurrent", &features.recurrent),
        ("residual", &features.residual),
    ] {
        for (layer, rows) in sets {
            let k = n_components.unwrap_or_else(|| default_components(rows[0].len()));
            let r = linear_probe(rows, labels, k, k_folds, seed)?;
            out.push(LayerAuc {
                source: source.to_string(),
                layer: *layer,
                auc: r.mean_auc,
            });
        }
    }
    Ok(out)
}

/// Highest AUC per source.
pub fn best_by_source(aucs: &[LayerAuc]) -> Vec<LayerAuc> {
    let mut best: Vec<LayerAuc> = Vec::new();
    for a in aucs {
        match best.iter_mut().find(|b| b.source == a.source) {
            Some(b) if a.auc > b.auc => *b = a.clone(),
            Some(_) => {}
            None => best.push(a.clone()),
        }
    }
    best
}
