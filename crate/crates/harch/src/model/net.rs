//! Forward and backward passes of the HArch heads, written directly over
//! `Vec<f64>` in double precision so analytic gradients can be checked
//! against finite differences.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use super::ModelError;
use crate::hierarchy::{Level, SenseDistribution};

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.3989422804014327;

/// Exact GELU: `x * Phi(x)` with the standard normal CDF.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + erf(x / SQRT_2))
}

pub fn gelu_prime(x: f64) -> f64 {
    let phi = 0.5 * (1.0 + erf(x / SQRT_2));
    phi + x * INV_SQRT_2PI * (-0.5 * x * x).exp()
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// dL/dz given dL/dp for p = softmax(z).
fn softmax_backward(p: &[f64], dp: &[f64]) -> Vec<f64> {
    let dot: f64 = p.iter().zip(dp).map(|(a, b)| a * b).sum();
    p.iter().zip(dp).map(|(pi, dpi)| pi * (dpi - dot)).collect()
}

/// A dense layer `y = W x + b`, weights stored row-major (`rows` outputs).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub rows: usize,
    pub cols: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Linear {
    pub fn zeros(rows: usize, cols: usize) -> Linear {
        Linear {
            rows,
            cols,
            w: vec![0.0; rows * cols],
            b: vec![0.0; rows],
        }
    }

    /// Uniform(-k, k) init with k = 1/sqrt(fan_in).
    pub fn init<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Linear {
        let k = 1.0 / (cols as f64).sqrt();
        Linear {
            rows,
            cols,
            w: (0..rows * cols).map(|_| rng.gen_range(-k..k)).collect(),
            b: (0..rows).map(|_| rng.gen_range(-k..k)).collect(),
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        let mut y = self.b.clone();
        for r in 0..self.rows {
            let row = &self.w[r * self.cols..(r + 1) * self.cols];
            y[r] += row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
        y
    }

    /// Accumulates weight/bias gradients into `grad` and returns dL/dx.
    pub fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Linear) -> Vec<f64> {
        let mut dx = vec![0.0; self.cols];
        for r in 0..self.rows {
            grad.b[r] += dy[r];
            let row = &self.w[r * self.cols..(r + 1) * self.cols];
            let grow = &mut grad.w[r * self.cols..(r + 1) * self.cols];
            for c in 0..self.cols {
                grow[c] += dy[r] * x[c];
                dx[c] += row[c] * dy[r];
            }
        }
        dx
    }
}

/// Two-stage projection of a head's output back into the embedding space:
/// `GELU(W2 GELU(W1 v + b1) + b2)` with hidden size `floor(dim/2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugBlock {
    pub fc1: Linear,
    pub fc2: Linear,
}

#[derive(Debug, Clone)]
pub struct AugCache {
    input: Vec<f64>,
    z1: Vec<f64>,
    a1: Vec<f64>,
    z2: Vec<f64>,
}

impl AugBlock {
    pub fn zeros(input: usize, dim: usize) -> AugBlock {
        let hidden = dim / 2;
        AugBlock {
            fc1: Linear::zeros(hidden, input),
            fc2: Linear::zeros(dim, hidden),
        }
    }

    pub fn init<R: Rng>(input: usize, dim: usize, rng: &mut R) -> AugBlock {
        let hidden = dim / 2;
        AugBlock {
            fc1: Linear::init(hidden, input, rng),
            fc2: Linear::init(dim, hidden, rng),
        }
    }

    pub fn forward(&self, v: &[f64]) -> (Vec<f64>, AugCache) {
        let z1 = self.fc1.forward(v);
        let a1: Vec<f64> = z1.iter().map(|&x| gelu(x)).collect();
        let z2 = self.fc2.forward(&a1);
        let out = z2.iter().map(|&x| gelu(x)).collect();
        (
            out,
            AugCache {
                input: v.to_vec(),
                z1,
                a1,
                z2,
            },
        )
    }

    /// Returns dL/dv for the block input.
    pub fn backward(&self, cache: &AugCache, dout: &[f64], grad: &mut AugBlock) -> Vec<f64> {
        let dz2: Vec<f64> = dout
            .iter()
            .zip(&cache.z2)
            .map(|(d, &z)| d * gelu_prime(z))
            .collect();
        let da1 = self.fc2.backward(&cache.a1, &dz2, &mut grad.fc2);
        let dz1: Vec<f64> = da1
            .iter()
            .zip(&cache.z1)
            .map(|(d, &z)| d * gelu_prime(z))
            .collect();
        self.fc1.backward(&cache.input, &dz1, &mut grad.fc1)
    }
}

/// Per-level probability outputs of one forward pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HArchOutput {
    pub p1: SenseDistribution,
    pub p2: SenseDistribution,
    pub p3: SenseDistribution,
}

impl HArchOutput {
    pub fn at(&self, level: Level) -> &SenseDistribution {
        match level {
            Level::One => &self.p1,
            Level::Two => &self.p2,
            Level::Three => &self.p3,
        }
    }
}

/// All trainable HArch parameters above the encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HArchParams {
    pub shared: Linear,
    pub head1: Linear,
    pub head2: Linear,
    pub head3: Linear,
    pub aug1: AugBlock,
    pub aug2: AugBlock,
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
}

pub type HArchGrads = HArchParams;

/// Intermediate activations retained for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pooled: Vec<f64>,
    mask: Option<Vec<f64>>,
    h: Vec<f64>,
    p1: Vec<f64>,
    aug1: AugCache,
    a1: Vec<f64>,
    w_alpha: Vec<f64>,
    p2: Vec<f64>,
    aug2: AugCache,
    a2: Vec<f64>,
    w_beta: Vec<f64>,
    p3: Vec<f64>,
}

fn check_finite(v: &[f64], layer: &'static str) -> Result<(), ModelError> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(ModelError::NonFinite(layer))
    }
}

impl HArchParams {
    pub fn zeros(dim: usize) -> HArchParams {
        HArchParams {
            shared: Linear::zeros(dim, dim),
            head1: Linear::zeros(4, dim),
            head2: Linear::zeros(17, dim),
            head3: Linear::zeros(28, dim),
            aug1: AugBlock::zeros(4, dim),
            aug2: AugBlock::zeros(17, dim),
            alpha: 0.0,
            beta1: 0.0,
            beta2: 0.0,
        }
    }

    pub fn init<R: Rng>(dim: usize, scalar_init: f64, rng: &mut R) -> HArchParams {
        HArchParams {
            shared: Linear::init(dim, dim, rng),
            head1: Linear::init(4, dim, rng),
            head2: Linear::init(17, dim, rng),
            head3: Linear::init(28, dim, rng),
            aug1: AugBlock::init(4, dim, rng),
            aug2: AugBlock::init(17, dim, rng),
            alpha: scalar_init,
            beta1: scalar_init,
            beta2: scalar_init,
        }
    }

    pub fn dim(&self) -> usize {
        self.shared.cols
    }

    /// Forward pass. `dropout_mask`, when given, is applied to the shared
    /// trunk output (entries are `0` or `1/(1-rate)`); inference passes
    /// `None`.
    pub fn forward(
        &self,
        pooled: &[f64],
        dropout_mask: Option<&[f64]>,
    ) -> Result<(HArchOutput, ForwardCache), ModelError> {
        let dim = self.dim();
        if pooled.len() != dim {
            return Err(ModelError::DimMismatch {
                expected: dim,
                found: pooled.len(),
            });
        }
        check_finite(pooled, "pooled input")?;
        let pre_dropout = self.shared.forward(pooled);
        check_finite(&pre_dropout, "shared linear")?;
        let h: Vec<f64> = match dropout_mask {
            Some(m) => pre_dropout.iter().zip(m).map(|(x, k)| x * k).collect(),
            None => pre_dropout.clone(),
        };

        let z1 = self.head1.forward(&h);
        let p1 = softmax(&z1);
        check_finite(&p1, "head1 softmax")?;

        let (a1, aug1_cache) = self.aug1.forward(&p1);
        check_finite(&a1, "augmentation block 1")?;
        let w_alpha: Vec<f64> = a1
            .iter()
            .zip(&h)
            .map(|(a, hh)| self.alpha * a + (1.0 - self.alpha) * hh)
            .collect();

        let z2 = self.head2.forward(&w_alpha);
        let p2 = softmax(&z2);
        check_finite(&p2, "head2 softmax")?;

        let (a2, aug2_cache) = self.aug2.forward(&p2);
        check_finite(&a2, "augmentation block 2")?;
        let w_beta: Vec<f64> = a1
            .iter()
            .zip(&a2)
            .zip(&h)
            .map(|((x1, x2), hh)| {
                self.beta1 * x1 + self.beta2 * x2 + (1.0 - self.beta1 - self.beta2) * hh
            })
            .collect();

        let z3 = self.head3.forward(&w_beta);
        let p3 = softmax(&z3);
        check_finite(&p3, "head3 softmax")?;

        let out = HArchOutput {
            p1: SenseDistribution {
                level: Level::One,
                values: p1.clone(),
            },
            p2: SenseDistribution {
                level: Level::Two,
                values: p2.clone(),
            },
            p3: SenseDistribution {
                level: Level::Three,
                values: p3.clone(),
            },
        };
        let cache = ForwardCache {
            pooled: pooled.to_vec(),
            mask: dropout_mask.map(<[f64]>::to_vec),
            h,
            p1,
            aug1: aug1_cache,
            a1,
            w_alpha,
            p2,
            aug2: aug2_cache,
            a2,
            w_beta,
            p3,
        };
        Ok((out, cache))
    }

    /// Backward pass given upstream gradients on the three probability
    /// outputs. Gradients accumulate into `grads`.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        dp1: &[f64],
        dp2: &[f64],
        dp3: &[f64],
        grads: &mut HArchGrads,
    ) {
        let dim = self.dim();
        // Level-3 head.
        let dz3 = softmax_backward(&cache.p3, dp3);
        let dw_beta = self.head3.backward(&cache.w_beta, &dz3, &mut grads.head3);
        for i in 0..dim {
            grads.beta1 += dw_beta[i] * (cache.a1[i] - cache.h[i]);
            grads.beta2 += dw_beta[i] * (cache.a2[i] - cache.h[i]);
        }
        let mut da1: Vec<f64> = dw_beta.iter().map(|d| self.beta1 * d).collect();
        let da2: Vec<f64> = dw_beta.iter().map(|d| self.beta2 * d).collect();
        let mut dh: Vec<f64> = dw_beta
            .iter()
            .map(|d| (1.0 - self.beta1 - self.beta2) * d)
            .collect();

        // Augmentation block 2 feeds level-3 from p2.
        let dp2_aug = self.aug2.backward(&cache.aug2, &da2, &mut grads.aug2);
        let dp2_total: Vec<f64> = dp2.iter().zip(&dp2_aug).map(|(a, b)| a + b).collect();

        // Level-2 head.
        let dz2 = softmax_backward(&cache.p2, &dp2_total);
        let dw_alpha = self.head2.backward(&cache.w_alpha, &dz2, &mut grads.head2);
        for i in 0..dim {
            grads.alpha += dw_alpha[i] * (cache.a1[i] - cache.h[i]);
            da1[i] += self.alpha * dw_alpha[i];
            dh[i] += (1.0 - self.alpha) * dw_alpha[i];
        }

        // Augmentation block 1 feeds both weighted sums from p1.
        let dp1_aug = self.aug1.backward(&cache.aug1, &da1, &mut grads.aug1);
        let dp1_total: Vec<f64> = dp1.iter().zip(&dp1_aug).map(|(a, b)| a + b).collect();

        // Level-1 head.
        let dz1 = softmax_backward(&cache.p1, &dp1_total);
        let dh1 = self.head1.backward(&cache.h, &dz1, &mut grads.head1);
        for i in 0..dim {
            dh[i] += dh1[i];
        }

        // Dropout and shared trunk.
        let ds: Vec<f64> = match &cache.mask {
            Some(m) => dh.iter().zip(m).map(|(d, k)| d * k).collect(),
            None => dh,
        };
        let _ = self.shared.backward(&cache.pooled, &ds, &mut grads.shared);
    }

    /// Flattens every parameter into one vector (stable order).
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for lin in [&self.shared, &self.head1, &self.head2, &self.head3] {
            out.extend_from_slice(&lin.w);
            out.extend_from_slice(&lin.b);
        }
        for aug in [&self.aug1, &self.aug2] {
            out.extend_from_slice(&aug.fc1.w);
            out.extend_from_slice(&aug.fc1.b);
            out.extend_from_slice(&aug.fc2.w);
            out.extend_from_slice(&aug.fc2.b);
        }
        out.push(self.alpha);
        out.push(self.beta1);
        out.push(self.beta2);
        out
    }

    /// Writes a flat vector (as produced by [`flatten`](Self::flatten))
    /// back into the parameter tensors.
    pub fn assign(&mut self, flat: &[f64]) {
        let mut i = 0;
        let mut take = |dst: &mut [f64]| {
            dst.copy_from_slice(&flat[i..i + dst.len()]);
            i += dst.len();
        };
        for lin in [&mut self.shared, &mut self.head1, &mut self.head2, &mut self.head3] {
            take(&mut lin.w);
            take(&mut lin.b);
        }
        for aug in [&mut self.aug1, &mut self.aug2] {
            take(&mut aug.fc1.w);
            take(&mut aug.fc1.b);
            take(&mut aug.fc2.w);
            take(&mut aug.fc2.b);
        }
        self.alpha = flat[i];
        self.beta1 = flat[i + 1];
        self.beta2 = flat[i + 2];
        debug_assert_eq!(i + 3, flat.len());
    }
}

/// Parameters of the single-head ablation model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndividualParams {
    pub shared: Linear,
    pub head: Linear,
    pub level: Level,
}

pub type IndividualGrads = IndividualParams;

#[derive(Debug, Clone)]
pub struct IndividualCache {
    pooled: Vec<f64>,
    mask: Option<Vec<f64>>,
    h: Vec<f64>,
    p: Vec<f64>,
}

impl IndividualParams {
    pub fn zeros(dim: usize, level: Level) -> IndividualParams {
        IndividualParams {
            shared: Linear::zeros(dim, dim),
            head: Linear::zeros(level.count(), dim),
            level,
        }
    }

    pub fn init<R: Rng>(dim: usize, level: Level, rng: &mut R) -> IndividualParams {
        IndividualParams {
            shared: Linear::init(dim, dim, rng),
            head: Linear::init(level.count(), dim, rng),
            level,
        }
    }

    pub fn forward(
        &self,
        pooled: &[f64],
        dropout_mask: Option<&[f64]>,
    ) -> Result<(SenseDistribution, IndividualCache), ModelError> {
        if pooled.len() != self.shared.cols {
            return Err(ModelError::DimMismatch {
                expected: self.shared.cols,
                found: pooled.len(),
            });
        }
        let s = self.shared.forward(pooled);
        check_finite(&s, "shared linear")?;
        let h: Vec<f64> = match dropout_mask {
            Some(m) => s.iter().zip(m).map(|(x, k)| x * k).collect(),
            None => s,
        };
        let p = softmax(&self.head.forward(&h));
        check_finite(&p, "head softmax")?;
        Ok((
            SenseDistribution {
                level: self.level,
                values: p.clone(),
            },
            IndividualCache {
                pooled: pooled.to_vec(),
                mask: dropout_mask.map(<[f64]>::to_vec),
                h,
                p,
            },
        ))
    }

    pub fn backward(&self, cache: &IndividualCache, dp: &[f64], grads: &mut IndividualGrads) {
        let dz = softmax_backward(&cache.p, dp);
        let dh = self.head.backward(&cache.h, &dz, &mut grads.head);
        let ds: Vec<f64> = match &cache.mask {
            Some(m) => dh.iter().zip(m).map(|(d, k)| d * k).collect(),
            None => dh,
        };
        let _ = self.shared.backward(&cache.pooled, &ds, &mut grads.shared);
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.shared.w);
        out.extend_from_slice(&self.shared.b);
        out.extend_from_slice(&self.head.w);
        out.extend_from_slice(&self.head.b);
        out
    }

    pub fn assign(&mut self, flat: &[f64]) {
        let mut i = 0;
        let mut take = |dst: &mut [f64]| {
            dst.copy_from_slice(&flat[i..i + dst.len()]);
            i += dst.len();
        };
        take(&mut self.shared.w);
        take(&mut self.shared.b);
        take(&mut self.head.w);
        take(&mut self.head.b);
        debug_assert_eq!(i, flat.len());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_pooled(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn gelu_at_zero_is_zero() {
        assert_eq!(gelu(0.0), 0.0);
        // Zero weights and biases give zero augmentation output.
        let block = AugBlock::zeros(4, 8);
        let (out, _) = block.forward(&[0.1, 0.2, 0.3, 0.4]);
        assert!(out.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn aug_block_matches_straight_line_oracle() {
        // Independent re-implementation of the block arithmetic.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let block = AugBlock::init(4, 8, &mut rng);
        let v: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (out, _) = block.forward(&v);

        let hidden = 4;
        let mut z1 = vec![0.0; hidden];
        for r in 0..hidden {
            z1[r] = block.fc1.b[r];
            for c in 0..4 {
                z1[r] += block.fc1.w[r * 4 + c] * v[c];
            }
        }
        let a1: Vec<f64> = z1
            .iter()
            .map(|&x| 0.5 * x * (1.0 + erf(x / SQRT_2)))
            .collect();
        let mut z2 = vec![0.0; 8];
        for r in 0..8 {
            z2[r] = block.fc2.b[r];
            for c in 0..hidden {
                z2[r] += block.fc2.w[r * hidden + c] * a1[c];
            }
        }
        for (r, &z) in z2.iter().enumerate() {
            let expect = 0.5 * z * (1.0 + erf(z / SQRT_2));
            assert!((out[r] - expect).abs() < 1e-10);
        }
    }

    #[test]
    fn mixing_identities() {
        // alpha = 0: head2 input equals h; alpha = 1: equals a1.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut params = HArchParams::init(8, 0.25, &mut rng);
        let pooled = random_pooled(8, &mut rng);

        params.alpha = 0.0;
        params.beta1 = 0.0;
        params.beta2 = 0.0;
        let (_, cache) = params.forward(&pooled, None).unwrap();
        for i in 0..8 {
            assert!((cache.w_alpha[i] - cache.h[i]).abs() < 1e-15);
            assert!((cache.w_beta[i] - cache.h[i]).abs() < 1e-15);
        }

        params.alpha = 1.0;
        let (_, cache) = params.forward(&pooled, None).unwrap();
        for i in 0..8 {
            assert!((cache.w_alpha[i] - cache.a1[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn outputs_are_normalized_and_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let params = HArchParams::init(8, 0.25, &mut rng);
        for _ in 0..100 {
            let pooled = random_pooled(8, &mut rng);
            let (out, _) = params.forward(&pooled, None).unwrap();
            for dist in [&out.p1, &out.p2, &out.p3] {
                assert!((dist.sum() - 1.0).abs() < 1e-5);
                assert!(dist.values.iter().all(|&v| v > 0.0));
            }
        }
    }

    #[test]
    fn non_finite_input_names_layer() {
        let params = HArchParams::zeros(4);
        let err = params.forward(&[f64::NAN, 0.0, 0.0, 0.0], None).unwrap_err();
        assert!(err.to_string().contains("pooled input"));
    }

    #[test]
    fn flatten_assign_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let params = HArchParams::init(6, 0.25, &mut rng);
        let flat = params.flatten();
        let mut other = HArchParams::zeros(6);
        other.assign(&flat);
        assert_eq!(other.flatten(), flat);
        assert_eq!(other, params);
    }

    #[test]
    fn individual_equals_harch_path_with_zeroed_mixing() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut harch = HArchParams::init(8, 0.25, &mut rng);
        harch.alpha = 0.0;
        harch.beta1 = 0.0;
        harch.beta2 = 0.0;
        let pooled = random_pooled(8, &mut rng);
        let (out, _) = harch.forward(&pooled, None).unwrap();

        for level in [Level::One, Level::Two, Level::Three] {
            let mut ind = IndividualParams::zeros(8, level);
            ind.shared = harch.shared.clone();
            ind.head = match level {
                Level::One => harch.head1.clone(),
                Level::Two => harch.head2.clone(),
                Level::Three => harch.head3.clone(),
            };
            let (p, _) = ind.forward(&pooled, None).unwrap();
            for (a, b) in p.values.iter().zip(&out.at(level).values) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn alpha_perturbation_is_bounded() {
        // Perturbing alpha by eps moves head2 pre-activations by at most
        // eps * max|a1 - h| through the mixing sum.
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut params = HArchParams::init(8, 0.25, &mut rng);
        let pooled = random_pooled(8, &mut rng);
        let (_, cache) = params.forward(&pooled, None).unwrap();
        let eps = 1e-3;
        params.alpha += eps;
        let (_, cache2) = params.forward(&pooled, None).unwrap();
        let bound = eps
            * cache
                .a1
                .iter()
                .zip(&cache.h)
                .map(|(a, h)| (a - h).abs())
                .fold(0.0, f64::max);
        for i in 0..8 {
            assert!((cache2.w_alpha[i] - cache.w_alpha[i]).abs() <= bound + 1e-12);
        }
    }

    fn random_simplex(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
        let sum: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / sum).collect()
    }

    /// Summed per-head mean-absolute-error loss, written independently of
    /// the training module.
    fn summed_mae(out: &HArchOutput, golds: &[Vec<f64>; 3]) -> f64 {
        let heads = [&out.p1.values, &out.p2.values, &out.p3.values];
        heads
            .iter()
            .zip(golds)
            .map(|(p, g)| {
                p.iter().zip(g).map(|(a, b)| (a - b).abs()).sum::<f64>() / p.len() as f64
            })
            .sum()
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        let dim = 6;
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut params = HArchParams::init(dim, 0.25, &mut rng);
        let pooled = random_pooled(dim, &mut rng);
        let golds = [
            random_simplex(4, &mut rng),
            random_simplex(17, &mut rng),
            random_simplex(28, &mut rng),
        ];

        let (out, cache) = params.forward(&pooled, None).unwrap();
        // dL/dp for MAE with mean reduction: sign(p - g) / n per head.
        let dp: Vec<Vec<f64>> = [&out.p1.values, &out.p2.values, &out.p3.values]
            .iter()
            .zip(&golds)
            .map(|(p, g)| {
                p.iter()
                    .zip(g.iter())
                    .map(|(a, b)| (a - b).signum() / p.len() as f64)
                    .collect()
            })
            .collect();
        let mut grads = HArchGrads::zeros(dim);
        params.backward(&cache, &dp[0], &dp[1], &dp[2], &mut grads);
        let analytic = grads.flatten();

        let base = params.flatten();
        assert_eq!(analytic.len(), base.len());
        let eps = 1e-6;
        for i in 0..base.len() {
            let mut plus = base.clone();
            plus[i] += eps;
            params.assign(&plus);
            let (out_p, _) = params.forward(&pooled, None).unwrap();
            let mut minus = base.clone();
            minus[i] -= eps;
            params.assign(&minus);
            let (out_m, _) = params.forward(&pooled, None).unwrap();
            let fd = (summed_mae(&out_p, &golds) - summed_mae(&out_m, &golds)) / (2.0 * eps);
            assert!(
                (fd - analytic[i]).abs() <= 1e-6 + 1e-4 * fd.abs(),
                "param {i}: finite difference {fd} vs analytic {}",
                analytic[i]
            );
        }
    }

    #[test]
    fn individual_gradients_match_finite_differences() {
        let dim = 6;
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut params = IndividualParams::init(dim, Level::Two, &mut rng);
        let pooled = random_pooled(dim, &mut rng);
        let gold = random_simplex(17, &mut rng);

        let mae = |p: &[f64]| -> f64 {
            p.iter().zip(&gold).map(|(a, b)| (a - b).abs()).sum::<f64>() / p.len() as f64
        };

        let (out, cache) = params.forward(&pooled, None).unwrap();
        let dp: Vec<f64> = out
            .values
            .iter()
            .zip(&gold)
            .map(|(a, b)| (a - b).signum() / out.values.len() as f64)
            .collect();
        let mut grads = IndividualGrads::zeros(dim, Level::Two);
        params.backward(&cache, &dp, &mut grads);
        let analytic = grads.flatten();

        let base = params.flatten();
        let eps = 1e-6;
        for i in 0..base.len() {
            let mut plus = base.clone();
            plus[i] += eps;
            params.assign(&plus);
            let (out_p, _) = params.forward(&pooled, None).unwrap();
            let mut minus = base.clone();
            minus[i] -= eps;
            params.assign(&minus);
            let (out_m, _) = params.forward(&pooled, None).unwrap();
            let fd = (mae(&out_p.values) - mae(&out_m.values)) / (2.0 * eps);
            assert!(
                (fd - analytic[i]).abs() <= 1e-6 + 1e-4 * fd.abs(),
                "param {i}: finite difference {fd} vs analytic {}",
                analytic[i]
            );
        }
    }
}
