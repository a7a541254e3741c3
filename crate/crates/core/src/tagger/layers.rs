//! Sequence layers for the tagger, each with an explicit backward pass.

use rand_chacha::ChaCha8Rng;

use crate::linalg::{sigmoid, Mat};

/// Gated recurrent unit:
///
/// ```text
/// z = σ(Wz x + Uz h + bz)
/// r = σ(Wr x + Ur h + br)
/// n = tanh(Wn x + Un (r ⊙ h) + bn)
/// h' = (1 - z) ⊙ n + z ⊙ h
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct Gru {
    pub w_z: Mat,
    pub u_z: Mat,
    pub b_z: Mat,
    pub w_r: Mat,
    pub u_r: Mat,
    pub b_r: Mat,
    pub w_n: Mat,
    pub u_n: Mat,
    pub b_n: Mat,
}

pub(crate) struct GruStep {
    prev: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    n: Vec<f64>,
    pub h: Vec<f64>,
}

impl Gru {
    pub fn init(input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        Gru {
            w_z: Mat::glorot(hidden, input, rng),
            u_z: Mat::glorot(hidden, hidden, rng),
            b_z: Mat::zeros(hidden, 1),
            w_r: Mat::glorot(hidden, input, rng),
            u_r: Mat::glorot(hidden, hidden, rng),
            b_r: Mat::zeros(hidden, 1),
            w_n: Mat::glorot(hidden, input, rng),
            u_n: Mat::glorot(hidden, hidden, rng),
            b_n: Mat::zeros(hidden, 1),
        }
    }

    pub fn hidden(&self) -> usize {
        self.u_z.rows
    }

    pub fn tensors(&self) -> [(&'static str, &Mat); 9] {
        [
            ("w_z", &self.w_z),
            ("u_z", &self.u_z),
            ("b_z", &self.b_z),
            ("w_r", &self.w_r),
            ("u_r", &self.u_r),
            ("b_r", &self.b_r),
            ("w_n", &self.w_n),
            ("u_n", &self.u_n),
            ("b_n", &self.b_n),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Mat; 9] {
        [
            &mut self.w_z,
            &mut self.u_z,
            &mut self.b_z,
            &mut self.w_r,
            &mut self.u_r,
            &mut self.b_r,
            &mut self.w_n,
            &mut self.u_n,
            &mut self.b_n,
        ]
    }

    /// Runs over `xs` in the given order (`reverse` reads right to left).
    /// Returned steps are indexed by input position.
    pub(crate) fn forward(&self, xs: &[Vec<f64>], reverse: bool) -> Vec<GruStep> {
        let h = self.hidden();
        let mut steps: Vec<Option<GruStep>> = (0..xs.len()).map(|_| None).collect();
        let mut prev = vec![0.0; h];
        for t in order(xs.len(), reverse) {
            let x = &xs[t];
            let mut z = self.b_z.data.clone();
            self.w_z.matvec_acc(x, &mut z);
            self.u_z.matvec_acc(&prev, &mut z);
            z.iter_mut().for_each(|v| *v = sigmoid(*v));

            let mut r = self.b_r.data.clone();
            self.w_r.matvec_acc(x, &mut r);
            self.u_r.matvec_acc(&prev, &mut r);
            r.iter_mut().for_each(|v| *v = sigmoid(*v));

            let rh: Vec<f64> = r.iter().zip(&prev).map(|(a, b)| a * b).collect();
            let mut n = self.b_n.data.clone();
            self.w_n.matvec_acc(x, &mut n);
            self.u_n.matvec_acc(&rh, &mut n);
            n.iter_mut().for_each(|v| *v = v.tanh());

            let hn: Vec<f64> = (0..h).map(|i| (1.0 - z[i]) * n[i] + z[i] * prev[i]).collect();
            steps[t] = Some(GruStep { prev: prev.clone(), z, r, n, h: hn.clone() });
            prev = hn;
        }
        steps.into_iter().map(|s| s.expect("every position visited")).collect()
    }

    /// Accumulates parameter gradients given `d_h[t]`, the loss gradient
    /// w.r.t. each output state (not including recurrent flow).
    pub(crate) fn backward(
        &self,
        xs: &[Vec<f64>],
        steps: &[GruStep],
        d_h: &[Vec<f64>],
        reverse: bool,
        g: &mut Gru,
    ) {
        let h = self.hidden();
        let mut carry = vec![0.0; h];
        let mut rev_order: Vec<usize> = order(xs.len(), reverse).collect();
        rev_order.reverse();
        for t in rev_order {
            let s = &steps[t];
            let dh: Vec<f64> = d_h[t].iter().zip(&carry).map(|(a, b)| a + b).collect();
            let mut d_prev: Vec<f64> = dh.iter().zip(&s.z).map(|(d, z)| d * z).collect();

            let da_n: Vec<f64> =
                (0..h).map(|i| dh[i] * (1.0 - s.z[i]) * (1.0 - s.n[i] * s.n[i])).collect();
            let da_z: Vec<f64> = (0..h)
                .map(|i| dh[i] * (s.prev[i] - s.n[i]) * s.z[i] * (1.0 - s.z[i]))
                .collect();

            let rh: Vec<f64> = s.r.iter().zip(&s.prev).map(|(a, b)| a * b).collect();
            g.w_n.add_outer(&da_n, &xs[t]);
            g.u_n.add_outer(&da_n, &rh);
            g.b_n.add_vec(&da_n);
            let mut d_rh = vec![0.0; h];
            self.u_n.matvec_t_acc(&da_n, &mut d_rh);
            let da_r: Vec<f64> =
                (0..h).map(|i| d_rh[i] * s.prev[i] * s.r[i] * (1.0 - s.r[i])).collect();
            for i in 0..h {
                d_prev[i] += d_rh[i] * s.r[i];
            }

            g.w_z.add_outer(&da_z, &xs[t]);
            g.u_z.add_outer(&da_z, &s.prev);
            g.b_z.add_vec(&da_z);
            self.u_z.matvec_t_acc(&da_z, &mut d_prev);

            g.w_r.add_outer(&da_r, &xs[t]);
            g.u_r.add_outer(&da_r, &s.prev);
            g.b_r.add_vec(&da_r);
            self.u_r.matvec_t_acc(&da_r, &mut d_prev);

            carry = d_prev;
        }
    }
}

fn order(n: usize, reverse: bool) -> Box<dyn Iterator<Item = usize>> {
    if reverse {
        Box::new((0..n).rev())
    } else {
        Box::new(0..n)
    }
}

/// Width-3 convolution over positions with zero padding, tanh activation:
/// `f_t = tanh(K [x_{t-1}; x_t; x_{t+1}] + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv3 {
    pub kernel: Mat,
    pub bias: Mat,
}

impl Conv3 {
    pub fn init(input: usize, channels: usize, rng: &mut ChaCha8Rng) -> Self {
        Conv3 { kernel: Mat::glorot(channels, 3 * input, rng), bias: Mat::zeros(channels, 1) }
    }

    pub fn tensors(&self) -> [(&'static str, &Mat); 2] {
        [("kernel", &self.kernel), ("bias", &self.bias)]
    }

    pub fn tensors_mut(&mut self) -> [&mut Mat; 2] {
        [&mut self.kernel, &mut self.bias]
    }

    fn window(xs: &[Vec<f64>], t: usize) -> Vec<f64> {
        let d = xs[0].len();
        let mut w = vec![0.0; 3 * d];
        if t > 0 {
            w[..d].copy_from_slice(&xs[t - 1]);
        }
        w[d..2 * d].copy_from_slice(&xs[t]);
        if t + 1 < xs.len() {
            w[2 * d..].copy_from_slice(&xs[t + 1]);
        }
        w
    }

    pub(crate) fn forward(&self, xs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        (0..xs.len())
            .map(|t| {
                let mut a = self.bias.data.clone();
                self.kernel.matvec_acc(&Self::window(xs, t), &mut a);
                a.iter_mut().for_each(|v| *v = v.tanh());
                a
            })
            .collect()
    }

    pub(crate) fn backward(&self, xs: &[Vec<f64>], out: &[Vec<f64>], d_out: &[Vec<f64>], g: &mut Conv3) {
        for t in 0..xs.len() {
            let da: Vec<f64> = d_out[t].iter().zip(&out[t]).map(|(d, o)| d * (1.0 - o * o)).collect();
            g.kernel.add_outer(&da, &Self::window(xs, t));
            g.bias.add_vec(&da);
        }
    }
}
