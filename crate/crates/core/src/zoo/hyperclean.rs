//! Data hyper-cleaning: per-sample training weights `sigmoid(x_i)` are tuned
//! so that a softmax classifier trained on the weighted loss does well on a
//! clean validation split.
//!
//! ```text
//! f(x, y) = sum_{train} sigmoid(x_i) l(y; u_i, v_i)
//! F(x, y) = sum_{val} l(y; u_i, v_i) + lambda |y|^2
//! ```
//!
//! `y` is the `(d + 1) x C` weight matrix (last feature row is a bias),
//! flattened row-major: `y[j * C + c]`.

use nalgebra::DMatrix;

use super::data::{Dataset, Split};
use crate::linalg::symmetric_eigen_range;
use crate::problem::{BilevelProblem, BoxSet, ProblemConstants};
use crate::{BilevelError, Result, Scalar};

/// Box for the weight logits.
pub const HYPERCLEAN_BOX: f64 = 5.0;

pub struct HyperCleaning<T> {
    train_u: Vec<Vec<T>>,
    train_v: Vec<usize>,
    train_corrupted: Vec<bool>,
    val_u: Vec<Vec<T>>,
    val_v: Vec<usize>,
    classes: usize,
    lambda: T,
    bounds: BoxSet<T>,
    constants: ProblemConstants<T>,
}

fn augment<T: Scalar>(row: &[T]) -> Vec<T> {
    let mut u = row.to_vec();
    u.push(T::one());
    u
}

fn sigmoid<T: Scalar>(t: T) -> T {
    if t >= T::zero() {
        T::one() / (T::one() + (-t).exp())
    } else {
        let e = t.exp();
        e / (T::one() + e)
    }
}

/// Half the largest eigenvalue of `sum u u'`, bounding the Hessian of an
/// unweighted sum of softmax cross-entropies.
fn curvature_bound<T: Scalar>(rows: &[Vec<T>]) -> f64 {
    let p = rows.first().map_or(0, Vec::len);
    let mut g = DMatrix::<f64>::zeros(p, p);
    for u in rows {
        for a in 0..p {
            for b in 0..p {
                g[(a, b)] += u[a].to_f64_lossy() * u[b].to_f64_lossy();
            }
        }
    }
    0.5 * symmetric_eigen_range(&g).1
}

pub fn hyper_cleaning_problem<T: Scalar>(data: &Dataset<T>, lambda: T) -> Result<HyperCleaning<T>> {
    data.validate()?;
    if data.classes < 2 {
        return Err(BilevelError::Input(format!(
            "need at least 2 classes, got {}",
            data.classes
        )));
    }
    if !(lambda >= T::zero()) {
        return Err(BilevelError::Parameter(format!(
            "lambda = {lambda} must be >= 0"
        )));
    }
    let train = data.indices(Split::Train);
    let val = data.indices(Split::Val);
    if train.is_empty() || val.is_empty() {
        return Err(BilevelError::Input(
            "train and validation splits must be nonempty".into(),
        ));
    }
    let train_u: Vec<Vec<T>> = train.iter().map(|&i| augment(&data.features[i])).collect();
    let val_u: Vec<Vec<T>> = val.iter().map(|&i| augment(&data.features[i])).collect();
    let two_lambda = (lambda + lambda).to_f64_lossy();
    let l_ll = curvature_bound(&train_u);
    let l_ul = curvature_bound(&val_u) + two_lambda;
    let sigma = if two_lambda > 0.0 {
        Some(T::lit(two_lambda))
    } else {
        None
    };
    let constants = ProblemConstants::new(T::from_f64(l_ul), sigma, T::from_f64(l_ll), None)?;
    let h = T::lit(HYPERCLEAN_BOX);
    Ok(HyperCleaning {
        bounds: BoxSet::cube(train.len(), -h, h)?,
        train_v: train.iter().map(|&i| data.labels[i]).collect(),
        train_corrupted: train.iter().map(|&i| data.corrupted[i]).collect(),
        val_v: val.iter().map(|&i| data.labels[i]).collect(),
        train_u,
        val_u,
        classes: data.classes,
        lambda,
        constants,
    })
}

impl<T: Scalar> HyperCleaning<T> {
    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn feature_rows(&self) -> usize {
        self.train_u[0].len()
    }

    pub fn train_len(&self) -> usize {
        self.train_u.len()
    }

    /// Corruption flag of each training row, aligned with `x`.
    pub fn train_corrupted(&self) -> &[bool] {
        &self.train_corrupted
    }

    pub fn weights(&self, x: &[T]) -> Vec<T> {
        x.iter().map(|&t| sigmoid(t)).collect()
    }

    fn logits(&self, y: &[T], u: &[T]) -> Vec<T> {
        let c = self.classes;
        let mut z = vec![T::zero(); c];
        for (j, &uj) in u.iter().enumerate() {
            for (k, zk) in z.iter_mut().enumerate() {
                *zk = *zk + uj * y[j * c + k];
            }
        }
        z
    }

    /// `(loss, softmax probabilities)`
    fn loss_probs(&self, y: &[T], u: &[T], label: usize) -> (T, Vec<T>) {
        let z = self.logits(y, u);
        let zmax = z.iter().cloned().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = z.iter().map(|&v| (v - zmax).exp()).collect();
        let total: T = exps.iter().cloned().sum();
        let lse = zmax + total.ln();
        (lse - z[label], exps.iter().map(|&e| e / total).collect())
    }

    fn add_grad(&self, out: &mut [T], y: &[T], u: &[T], label: usize, w: T) {
        let c = self.classes;
        let (_, p) = self.loss_probs(y, u, label);
        for (j, &uj) in u.iter().enumerate() {
            for k in 0..c {
                let r = if k == label { p[k] - T::one() } else { p[k] };
                out[j * c + k] = out[j * c + k] + w * uj * r;
            }
        }
    }

    fn add_hvp(&self, out: &mut [T], y: &[T], u: &[T], label: usize, v: &[T], w: T) {
        let c = self.classes;
        let (_, p) = self.loss_probs(y, u, label);
        let dz = self.logits(v, u);
        let pdz: T = p.iter().zip(&dz).map(|(&a, &b)| a * b).sum();
        for (j, &uj) in u.iter().enumerate() {
            for k in 0..c {
                let dp = p[k] * (dz[k] - pdz);
                out[j * c + k] = out[j * c + k] + w * uj * dp;
            }
        }
    }

    /// `<grad_y l, v>`
    fn dir_deriv(&self, y: &[T], u: &[T], label: usize, v: &[T]) -> T {
        let (_, p) = self.loss_probs(y, u, label);
        let dz = self.logits(v, u);
        p.iter()
            .zip(&dz)
            .enumerate()
            .map(|(k, (&pk, &d))| {
                if k == label {
                    (pk - T::one()) * d
                } else {
                    pk * d
                }
            })
            .sum()
    }

    pub fn predict(&self, y: &[T], features: &[T]) -> usize {
        let z = self.logits(y, &augment(features));
        z.iter()
            .enumerate()
            .fold((0, T::neg_infinity()), |(bi, bv), (i, &v)| {
                if v > bv {
                    (i, v)
                } else {
                    (bi, bv)
                }
            })
            .0
    }

    /// Fraction of validation rows classified correctly by `y`.
    pub fn val_accuracy(&self, y: &[T]) -> f64 {
        accuracy(self, y, &self.val_u, &self.val_v)
    }

    /// Accuracy of `y` on the given split of `data`.
    pub fn split_accuracy(&self, y: &[T], data: &Dataset<T>, split: Split) -> f64 {
        let idx = data.indices(split);
        let rows: Vec<Vec<T>> = idx.iter().map(|&i| augment(&data.features[i])).collect();
        let labels: Vec<usize> = idx.iter().map(|&i| data.original_labels[i]).collect();
        accuracy(self, y, &rows, &labels)
    }
}

fn accuracy<T: Scalar>(p: &HyperCleaning<T>, y: &[T], rows: &[Vec<T>], labels: &[usize]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    let c = p.classes;
    let hits = rows
        .iter()
        .zip(labels)
        .filter(|(u, &v)| {
            let z = p.logits(y, u);
            let best = (0..c).fold(0, |b, k| if z[k] > z[b] { k } else { b });
            best == v
        })
        .count();
    hits as f64 / rows.len() as f64
}

impl<T: Scalar> BilevelProblem<T> for HyperCleaning<T> {
    fn name(&self) -> &str {
        "hyperclean"
    }
    fn ul_dim(&self) -> usize {
        self.train_u.len()
    }
    fn ll_dim(&self) -> usize {
        self.feature_rows() * self.classes
    }
    fn bounds(&self) -> &BoxSet<T> {
        &self.bounds
    }
    fn constants(&self) -> &ProblemConstants<T> {
        &self.constants
    }

    fn ul_value(&self, _x: &[T], y: &[T]) -> T {
        let data: T = self
            .val_u
            .iter()
            .zip(&self.val_v)
            .map(|(u, &v)| self.loss_probs(y, u, v).0)
            .sum();
        data + self.lambda * y.iter().map(|&w| w * w).sum::<T>()
    }

    fn ll_value(&self, x: &[T], y: &[T]) -> T {
        self.train_u
            .iter()
            .zip(&self.train_v)
            .zip(x)
            .map(|((u, &v), &xi)| sigmoid(xi) * self.loss_probs(y, u, v).0)
            .sum()
    }

    fn ul_grad_y(&self, _x: &[T], y: &[T]) -> Vec<T> {
        let two_lambda = self.lambda + self.lambda;
        let mut g: Vec<T> = y.iter().map(|&w| two_lambda * w).collect();
        for (u, &v) in self.val_u.iter().zip(&self.val_v) {
            self.add_grad(&mut g, y, u, v, T::one());
        }
        g
    }

    fn ul_grad_x(&self, x: &[T], _y: &[T]) -> Vec<T> {
        vec![T::zero(); x.len()]
    }

    fn ll_grad_y(&self, x: &[T], y: &[T]) -> Vec<T> {
        let mut g = vec![T::zero(); y.len()];
        for ((u, &v), &xi) in self.train_u.iter().zip(&self.train_v).zip(x) {
            self.add_grad(&mut g, y, u, v, sigmoid(xi));
        }
        g
    }

    fn ll_grad_x(&self, x: &[T], y: &[T]) -> Vec<T> {
        self.train_u
            .iter()
            .zip(&self.train_v)
            .zip(x)
            .map(|((u, &v), &xi)| {
                let s = sigmoid(xi);
                s * (T::one() - s) * self.loss_probs(y, u, v).0
            })
            .collect()
    }

    fn ul_hvp_yy(&self, _x: &[T], y: &[T], v: &[T]) -> Vec<T> {
        let two_lambda = self.lambda + self.lambda;
        let mut out: Vec<T> = v.iter().map(|&w| two_lambda * w).collect();
        for (u, &label) in self.val_u.iter().zip(&self.val_v) {
            self.add_hvp(&mut out, y, u, label, v, T::one());
        }
        out
    }

    fn ul_hvp_xy(&self, x: &[T], _y: &[T], _v: &[T]) -> Vec<T> {
        vec![T::zero(); x.len()]
    }

    fn ll_hvp_yy(&self, x: &[T], y: &[T], v: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); y.len()];
        for ((u, &label), &xi) in self.train_u.iter().zip(&self.train_v).zip(x) {
            self.add_hvp(&mut out, y, u, label, v, sigmoid(xi));
        }
        out
    }

    fn ll_hvp_xy(&self, x: &[T], y: &[T], v: &[T]) -> Vec<T> {
        self.train_u
            .iter()
            .zip(&self.train_v)
            .zip(x)
            .map(|((u, &label), &xi)| {
                let s = sigmoid(xi);
                s * (T::one() - s) * self.dir_deriv(y, u, label, v)
            })
            .collect()
    }
}
