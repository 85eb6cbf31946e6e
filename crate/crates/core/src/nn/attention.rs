use ndarray::{s, Array2, ArrayView2, Axis};
use rand::Rng;

use super::{join, Linear, Module, Param};

/// Multi-head attention whose projections may shrink the channel count by
/// a downsample rate before splitting into heads.
#[derive(Debug, Clone)]
pub struct Attention {
    pub q_proj: Linear,
    pub k_proj: Linear,
    pub v_proj: Linear,
    pub out_proj: Linear,
    pub num_heads: usize,
}

pub struct AttentionCache {
    q_in: Array2<f32>,
    k_in: Array2<f32>,
    v_in: Array2<f32>,
    q: Array2<f32>,
    k: Array2<f32>,
    v: Array2<f32>,
    /// Softmax probabilities per head, `(nq, nk)` each.
    probs: Vec<Array2<f32>>,
    /// Concatenated head outputs (input to `out_proj`).
    mixed: Array2<f32>,
}

pub struct AttentionGrads {
    pub dq: Array2<f32>,
    pub dk: Array2<f32>,
    pub dv: Array2<f32>,
}

/// Row-wise softmax in place.
pub fn softmax_rows(x: &mut Array2<f32>) {
    for mut row in x.axis_iter_mut(Axis(0)) {
        let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0f32;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        let inv = 1.0 / sum;
        row.mapv_inplace(|v| v * inv);
    }
}

impl Attention {
    pub fn new(embedding_dim: usize, num_heads: usize, downsample_rate: usize, rng: &mut impl Rng) -> Self {
        let internal = embedding_dim / downsample_rate;
        assert!(internal.is_multiple_of(num_heads), "num_heads must divide the internal dimension");
        Self {
            q_proj: Linear::new(embedding_dim, internal, true, rng),
            k_proj: Linear::new(embedding_dim, internal, true, rng),
            v_proj: Linear::new(embedding_dim, internal, true, rng),
            out_proj: Linear::new(internal, embedding_dim, true, rng),
            num_heads,
        }
    }

    pub fn internal_dim(&self) -> usize {
        self.q_proj.out_features()
    }

    fn head_dim(&self) -> usize {
        self.internal_dim() / self.num_heads
    }

    pub fn forward(&self, q: &ArrayView2<f32>, k: &ArrayView2<f32>, v: &ArrayView2<f32>) -> Array2<f32> {
        let qp = self.q_proj.forward(q);
        let kp = self.k_proj.forward(k);
        let vp = self.v_proj.forward(v);
        let (mixed, _) = self.mix(&qp, &kp, &vp, false);
        self.out_proj.forward(&mixed.view())
    }

    fn mix(&self, q: &Array2<f32>, k: &Array2<f32>, v: &Array2<f32>, keep: bool) -> (Array2<f32>, Vec<Array2<f32>>) {
        let dh = self.head_dim();
        let scale = 1.0 / (dh as f32).sqrt();
        let mut mixed = Array2::<f32>::zeros((q.nrows(), self.internal_dim()));
        let mut probs = Vec::new();
        for h in 0..self.num_heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let mut scores = q.slice(cols).dot(&k.slice(cols).t());
            scores.mapv_inplace(|x| x * scale);
            softmax_rows(&mut scores);
            mixed.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
            if keep {
                probs.push(scores);
            }
        }
        (mixed, probs)
    }

    pub fn forward_cached(
        &self,
        q: &Array2<f32>,
        k: &Array2<f32>,
        v: &Array2<f32>,
    ) -> (Array2<f32>, AttentionCache) {
        let qp = self.q_proj.forward(&q.view());
        let kp = self.k_proj.forward(&k.view());
        let vp = self.v_proj.forward(&v.view());
        let (mixed, probs) = self.mix(&qp, &kp, &vp, true);
        let out = self.out_proj.forward(&mixed.view());
        (
            out,
            AttentionCache {
                q_in: q.clone(),
                k_in: k.clone(),
                v_in: v.clone(),
                q: qp,
                k: kp,
                v: vp,
                probs,
                mixed,
            },
        )
    }

    pub fn backward(&mut self, c: &AttentionCache, dy: &Array2<f32>) -> AttentionGrads {
        let [dq, dk, dv] = self.backward_partial(c, dy, [true; 3]);
        AttentionGrads {
            dq: dq.expect("requested"),
            dk: dk.expect("requested"),
            dv: dv.expect("requested"),
        }
    }

    /// Like [`Attention::backward`], computing input gradients only for the
    /// requested inputs `[q, k, v]`. Parameter gradients are always
    /// accumulated.
    pub fn backward_partial(
        &mut self,
        c: &AttentionCache,
        dy: &Array2<f32>,
        want: [bool; 3],
    ) -> [Option<Array2<f32>>; 3] {
        let dmixed = self.out_proj.backward(&c.mixed.view(), dy);
        let dh = self.head_dim();
        let scale = 1.0 / (dh as f32).sqrt();
        let mut dq = Array2::<f32>::zeros(c.q.raw_dim());
        let mut dk = Array2::<f32>::zeros(c.k.raw_dim());
        let mut dv = Array2::<f32>::zeros(c.v.raw_dim());
        for h in 0..self.num_heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let p = &c.probs[h];
            let dout = dmixed.slice(cols);
            dv.slice_mut(cols).assign(&p.t().dot(&dout));
            let dp = dout.dot(&c.v.slice(cols).t());
            // softmax backward: ds = p * (dp - sum(dp * p))
            let mut ds = dp;
            for (mut drow, prow) in ds.axis_iter_mut(Axis(0)).zip(p.axis_iter(Axis(0))) {
                let dot: f32 = drow.iter().zip(prow.iter()).map(|(a, b)| a * b).sum();
                for (d, &pp) in drow.iter_mut().zip(prow.iter()) {
                    *d = pp * (*d - dot) * scale;
                }
            }
            dq.slice_mut(cols).assign(&ds.dot(&c.k.slice(cols)));
            dk.slice_mut(cols).assign(&ds.t().dot(&c.q.slice(cols)));
        }
        let run = |lin: &mut Linear, x: &Array2<f32>, g: &Array2<f32>, want: bool| {
            if want {
                Some(lin.backward(&x.view(), g))
            } else {
                lin.accumulate(&x.view(), g);
                None
            }
        };
        [
            run(&mut self.q_proj, &c.q_in, &dq, want[0]),
            run(&mut self.k_proj, &c.k_in, &dk, want[1]),
            run(&mut self.v_proj, &c.v_in, &dv, want[2]),
        ]
    }
}

impl Module for Attention {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.q_proj.visit(&join(prefix, "q_proj"), f);
        self.k_proj.visit(&join(prefix, "k_proj"), f);
        self.v_proj.visit(&join(prefix, "v_proj"), f);
        self.out_proj.visit(&join(prefix, "out_proj"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.q_proj.visit_mut(&join(prefix, "q_proj"), f);
        self.k_proj.visit_mut(&join(prefix, "k_proj"), f);
        self.v_proj.visit_mut(&join(prefix, "v_proj"), f);
        self.out_proj.visit_mut(&join(prefix, "out_proj"), f);
    }
}
