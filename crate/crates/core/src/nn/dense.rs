use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::{cross_entropy, softmax, Activation, Batch};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Glorot/Xavier uniform initialization: entries drawn from
/// `U[-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out))]`.
///
/// The result has shape `(fan_in, fan_out)`.
pub fn glorot_init<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Matrix {
    assert!(fan_in >= 1 && fan_out >= 1, "glorot_init: zero fan");
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit).expect("finite positive limit");
    let data = (0..fan_in * fan_out).map(|_| dist.sample(rng)).collect();
    Matrix::from_vec(fan_in, fan_out, data).expect("shape by construction")
}

/// One-hidden-layer dense classifier.
///
/// `features = act(W1ᵀx + b1)`, `logits = W2ᵀfeatures + b2`, with `W1` of shape
/// `(input_dim, hidden_dim)` and `W2` of shape `(hidden_dim, output_dim)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    activation: Activation,
    w1: Matrix,
    b1: Vec<f64>,
    w2: Matrix,
    b2: Vec<f64>,
}

/// Intermediate values of one forward pass, kept for backprop.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub pre: Vec<f64>,
    pub features: Vec<f64>,
    pub logits: Vec<f64>,
}

/// Gradients with the same layout as [`DenseNet`]'s parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl DenseGrads {
    pub fn slices(&self) -> [&[f64]; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn slices_mut(&mut self) -> [&mut [f64]; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    pub fn scale(&mut self, factor: f64) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|g| *g *= factor);
        }
    }
}

impl DenseNet {
    /// Glorot-initialized weights, zero biases.
    pub fn new<R: Rng + ?Sized>(
        input_dim: usize,
        hidden_dim: usize,
        output_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        check_dims(input_dim, hidden_dim, output_dim)?;
        let w1 = glorot_init(input_dim, hidden_dim, rng);
        let w2 = glorot_init(hidden_dim, output_dim, rng);
        Ok(Self {
            activation,
            w1,
            b1: vec![0.0; hidden_dim],
            w2,
            b2: vec![0.0; output_dim],
        })
    }

    /// All parameters zero.
    pub fn zeros(input_dim: usize, hidden_dim: usize, output_dim: usize, activation: Activation) -> Result<Self> {
        check_dims(input_dim, hidden_dim, output_dim)?;
        Ok(Self {
            activation,
            w1: Matrix::zeros(input_dim, hidden_dim),
            b1: vec![0.0; hidden_dim],
            w2: Matrix::zeros(hidden_dim, output_dim),
            b2: vec![0.0; output_dim],
        })
    }

    pub fn input_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.w2.cols()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn param_count(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    /// Parameters in the order `W1, b1, W2, b2`.
    pub fn slices(&self) -> [&[f64]; 4] {
        [self.w1.as_slice(), &self.b1, self.w2.as_slice(), &self.b2]
    }

    pub fn slices_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.w1.as_mut_slice(),
            &mut self.b1,
            self.w2.as_mut_slice(),
            &mut self.b2,
        ]
    }

    pub fn set_zero(&mut self) {
        for s in self.slices_mut() {
            s.fill(0.0);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }

    pub fn zero_grads(&self) -> DenseGrads {
        DenseGrads {
            w1: vec![0.0; self.w1.as_slice().len()],
            b1: vec![0.0; self.b1.len()],
            w2: vec![0.0; self.w2.as_slice().len()],
            b2: vec![0.0; self.b2.len()],
        }
    }

    /// Returns `(logits, features)` where `features` is the hidden activation.
    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let t = self.trace(x)?;
        Ok((t.logits, t.features))
    }

    /// Hidden activation only.
    pub fn features(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let (_, h) = self.hidden(x);
        Ok(h)
    }

    pub fn trace(&self, x: &[f64]) -> Result<ForwardTrace> {
        self.check_input(x)?;
        let (pre, features) = self.hidden(x);
        let mut logits = self.b2.clone();
        for (j, &h) in features.iter().enumerate() {
            if h == 0.0 {
                continue;
            }
            for (l, &w) in logits.iter_mut().zip(self.w2.row(j)) {
                *l += h * w;
            }
        }
        Ok(ForwardTrace { pre, features, logits })
    }

    fn hidden(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut pre = self.b1.clone();
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (p, &w) in pre.iter_mut().zip(self.w1.row(i)) {
                *p += xi * w;
            }
        }
        let features = pre.iter().map(|&p| self.activation.apply(p)).collect();
        (pre, features)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::input(format!(
                "input has length {}, network expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Accumulates into `grads` the gradient of a scalar whose derivative with
    /// respect to the logits of this pass is `dlogits`.
    pub fn backward(&self, x: &[f64], trace: &ForwardTrace, dlogits: &[f64], grads: &mut DenseGrads) {
        let out = self.output_dim();
        debug_assert_eq!(dlogits.len(), out);
        for (j, &h) in trace.features.iter().enumerate() {
            let row = &mut grads.w2[j * out..(j + 1) * out];
            for (g, &d) in row.iter_mut().zip(dlogits) {
                *g += h * d;
            }
        }
        for (g, &d) in grads.b2.iter_mut().zip(dlogits) {
            *g += d;
        }
        let hidden = self.hidden_dim();
        let dpre: Vec<f64> = (0..hidden)
            .map(|j| {
                let dh: f64 = self.w2.row(j).iter().zip(dlogits).map(|(w, d)| w * d).sum();
                dh * self.activation.derivative(trace.pre[j], trace.features[j])
            })
            .collect();
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let row = &mut grads.w1[i * hidden..(i + 1) * hidden];
            for (g, &d) in row.iter_mut().zip(&dpre) {
                *g += xi * d;
            }
        }
        for (g, &d) in grads.b1.iter_mut().zip(&dpre) {
            *g += d;
        }
    }

    /// Mean softmax cross-entropy over the batch.
    pub fn loss(&self, batch: &Batch) -> Result<f64> {
        self.check_batch(batch)?;
        let mut total = 0.0;
        for (x, &y) in batch.features().row_iter().zip(batch.labels()) {
            let t = self.trace(x)?;
            total += cross_entropy(&t.logits, y);
        }
        Ok(total / batch.len() as f64)
    }

    /// Mean softmax cross-entropy over the batch and its exact gradient.
    pub fn loss_and_grad(&self, batch: &Batch) -> Result<(f64, DenseGrads)> {
        self.check_batch(batch)?;
        let n = batch.len() as f64;
        let mut grads = self.zero_grads();
        let mut total = 0.0;
        for (x, &y) in batch.features().row_iter().zip(batch.labels()) {
            let t = self.trace(x)?;
            total += cross_entropy(&t.logits, y);
            let mut d = softmax(&t.logits);
            d[y] -= 1.0;
            self.backward(x, &t, &d, &mut grads);
        }
        grads.scale(1.0 / n);
        Ok((total / n, grads))
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::input("empty batch"));
        }
        if batch.features().cols() != self.input_dim() {
            return Err(Error::input(format!(
                "batch has {} features, network expects {}",
                batch.features().cols(),
                self.input_dim()
            )));
        }
        if let Some(&bad) = batch.labels().iter().find(|&&y| y >= self.output_dim()) {
            return Err(Error::input(format!(
                "label {bad} out of range for {} classes",
                self.output_dim()
            )));
        }
        Ok(())
    }
}

fn check_dims(input: usize, hidden: usize, output: usize) -> Result<()> {
    if input == 0 || hidden == 0 || output == 0 {
        return Err(Error::config(format!(
            "network dimensions must be positive, got {input}x{hidden}x{output}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn glorot_bounds() {
        let mut r = rng::stream(1, &[]);
        let m = glorot_init(3, 3, &mut r);
        assert!(m.as_slice().iter().all(|v| (-1.0..=1.0).contains(v)));
        let m = glorot_init(1, 2, &mut r);
        let lim = 2f64.sqrt();
        assert!(m.as_slice().iter().all(|v| (-lim..=lim).contains(v)));
        assert_eq!((m.rows(), m.cols()), (1, 2));
    }

    #[test]
    fn glorot_is_deterministic() {
        let a = glorot_init(2, 2, &mut rng::stream(42, &[]));
        let b = glorot_init(2, 2, &mut rng::stream(42, &[]));
        assert_eq!(a, b);
    }

    #[test]
    fn zero_net_gives_zero_outputs() {
        let net = DenseNet::zeros(4, 5, 3, Activation::Relu).unwrap();
        let (logits, feats) = net.forward(&[1.0, -2.0, 3.0, 0.5]).unwrap();
        assert_eq!(logits, vec![0.0; 3]);
        assert_eq!(feats, vec![0.0; 5]);
    }

    #[test]
    fn identity_first_layer_copies_positive_parts() {
        let mut net = DenseNet::zeros(2, 2, 2, Activation::Relu).unwrap();
        net.slices_mut()[0].copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        let (_, f) = net.forward(&[1.0, 0.0]).unwrap();
        assert_eq!(f, vec![1.0, 0.0]);
        let (_, f) = net.forward(&[-3.0, 2.0]).unwrap();
        assert_eq!(f, vec![0.0, 2.0]);
    }

    #[test]
    fn dimension_mismatch_is_input_error() {
        let net = DenseNet::zeros(2, 2, 2, Activation::Relu).unwrap();
        assert!(matches!(net.forward(&[1.0]), Err(Error::Input(_))));
    }

    #[test]
    fn zero_logits_loss_is_ln3() {
        let net = DenseNet::zeros(2, 4, 3, Activation::Relu).unwrap();
        let b = Batch::new(Matrix::from_rows(&[[0.3, 0.1], [1.0, -1.0]]).unwrap(), vec![0, 2]).unwrap();
        let (loss, _) = net.loss_and_grad(&b).unwrap();
        assert!((loss - 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn out_of_range_label_rejected() {
        let net = DenseNet::zeros(2, 2, 2, Activation::Relu).unwrap();
        let b = Batch::new(Matrix::from_rows(&[[0.0, 0.0]]).unwrap(), vec![2]).unwrap();
        assert!(matches!(net.loss_and_grad(&b), Err(Error::Input(_))));
        let empty = Batch::new(Matrix::zeros(0, 2), vec![]).unwrap();
        assert!(net.loss_and_grad(&empty).is_err());
    }

    #[test]
    fn zero_dims_rejected() {
        assert!(matches!(
            DenseNet::zeros(0, 2, 2, Activation::Relu),
            Err(Error::Config(_))
        ));
    }
}
