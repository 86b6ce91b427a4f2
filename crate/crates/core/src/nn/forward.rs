//! Graph construction for the model's three pathways. A [`Forward`] binds
//! every parameter as a leaf once; pathway methods then compose onto the
//! same tape so one backward pass yields gradients for all of them.

use super::{Model, EncoderVariant, FILM_BLOCKS, HEADS, LN_EPS, POLICY_WIDTH, TRANSFORMER_LAYERS};
use crate::env::{Action, EnvKind, Image};
use crate::tensor::{Graph, TensorId};

/// Encoded token inputs for one demo: flattened stacked-frame floats plus
/// the true timestep of each token (indexes the positional table).
pub struct DemoTokens {
    pub inputs: Vec<f64>,
    pub positions: Vec<usize>,
}

pub struct Forward<'m> {
    pub g: Graph,
    model: &'m Model,
    pub ids: Vec<TensorId>,
}

impl Model {
    /// Bind all parameters as graph leaves. `trainable` controls whether
    /// gradients are tracked; evaluation passes skip them.
    pub fn forward(&self, trainable: bool) -> Forward<'_> {
        let mut g = Graph::new();
        let ids = self
            .params
            .entries()
            .iter()
            .map(|p| {
                g.leaf(p.data.clone(), p.shape.clone(), trainable)
                    .expect("parameter shapes are valid by construction")
            })
            .collect();
        Forward { g, model: self, ids }
    }
}

impl<'m> Forward<'m> {
    pub fn model(&self) -> &'m Model {
        self.model
    }

    pub fn p(&self, name: &str) -> TensorId {
        let i = self
            .model
            .params
            .position(name)
            .unwrap_or_else(|| panic!("no parameter named {name}"));
        self.ids[i]
    }

    /// Shared frame encoder: [n, C, H, W] pixels in [0,1] to [n, D]
    /// embeddings. `inputs` is the concatenation of n stacked observations.
    pub fn encode_stacks(&mut self, inputs: Vec<f64>, n: usize) -> TensorId {
        let cfg = &self.model.cfg;
        let (c, hw) = (cfg.in_channels(), cfg.image_size);
        assert_eq!(inputs.len(), n * c * hw * hw, "input byte count mismatch");
        let mut x = self
            .g
            .leaf(inputs, vec![n, c, hw, hw], false)
            .expect("input leaf");
        for (i, stride) in cfg.strides().into_iter().enumerate() {
            let w = self.p(&format!("conv{}.w", i + 1));
            let b = self.p(&format!("conv{}.b", i + 1));
            x = self.g.conv2d(x, w, b, stride, 1).expect("conv layer");
            x = self.g.relu(x);
        }
        let flat = self.g.reshape(x, vec![n, cfg.flat_width()]).expect("flatten");
        self.linear(flat, "proj.w", "proj.b")
    }

    /// Task embeddings for a batch of demos: [n_demos, D]. Frame encoding
    /// is batched across all demos' tokens; the transformer then runs per
    /// demo over its own token rows.
    pub fn encode_demos(&mut self, demos: &[DemoTokens]) -> TensorId {
        let total: usize = demos.iter().map(|d| d.positions.len()).sum();
        let mut inputs = Vec::with_capacity(demos.iter().map(|d| d.inputs.len()).sum());
        for d in demos {
            inputs.extend_from_slice(&d.inputs);
        }
        let emb = self.encode_stacks(inputs, total);
        match self.model.cfg.encoder {
            EncoderVariant::FinalFrame => {
                for d in demos {
                    assert_eq!(d.positions.len(), 1, "final-frame demos carry one token");
                }
                emb
            }
            EncoderVariant::Transformer => {
                let mut zs = Vec::with_capacity(demos.len());
                let mut row = 0;
                for d in demos {
                    let rows: Vec<usize> = (row..row + d.positions.len()).collect();
                    row += d.positions.len();
                    let tokens = self.g.gather_rows(emb, &rows).expect("demo token rows");
                    zs.push(self.transformer(tokens, &d.positions));
                }
                self.g.concat_rows(&zs).expect("stack task embeddings")
            }
        }
    }

    /// Two pre-LN encoder layers over the frame tokens with a threaded
    /// class token. The class token only ever queries: keys and values
    /// come from frame rows alone, so with positional embeddings zeroed
    /// and identical frames the readout is independent of demo length.
    fn transformer(&mut self, tokens: TensorId, positions: &[usize]) -> TensorId {
        let d = self.model.cfg.embed_dim;
        let dh = d / HEADS;
        let len = positions.len();

        let proj = self.linear(tokens, "task.token_proj.w", "task.token_proj.b");
        let pos_table = self.p("task.pos");
        let pos = self.g.gather_rows(pos_table, positions).expect("positions in table");
        let proj = self.g.add(proj, pos).expect("add positional embeddings");
        let cls = self.p("task.cls");
        let mut x = self.g.concat_rows(&[cls, proj]).expect("prepend class token");

        for l in 0..TRANSFORMER_LAYERS {
            let pre = format!("task.l{l}");
            let normed = self.layer_norm(x, &format!("{pre}.ln1"));
            let kv_rows: Vec<usize> = (1..=len).collect();
            let kv_in = self.g.gather_rows(normed, &kv_rows).expect("frame rows");
            let q = self.linear(normed, &format!("{pre}.wq"), &format!("{pre}.bq"));
            let k = self.linear(kv_in, &format!("{pre}.wk"), &format!("{pre}.bk"));
            let v = self.linear(kv_in, &format!("{pre}.wv"), &format!("{pre}.bv"));
            let mut heads = Vec::with_capacity(HEADS);
            for h in 0..HEADS {
                let qh = self.g.slice_cols(q, h * dh, (h + 1) * dh).expect("qh");
                let kh = self.g.slice_cols(k, h * dh, (h + 1) * dh).expect("kh");
                let vh = self.g.slice_cols(v, h * dh, (h + 1) * dh).expect("vh");
                let scores = self.g.matmul_nt(qh, kh).expect("attention scores");
                let scaled = self.g.affine(scores, 1.0 / (dh as f64).sqrt(), 0.0);
                let attn = self.g.softmax_rows(scaled);
                heads.push(self.g.matmul(attn, vh).expect("attention output"));
            }
            let merged = self.g.concat_cols(&heads).expect("merge heads");
            let out = self.linear(merged, &format!("{pre}.wo"), &format!("{pre}.bo"));
            x = self.g.add(x, out).expect("attention residual");

            let normed = self.layer_norm(x, &format!("{pre}.ln2"));
            let f = self.linear(normed, &format!("{pre}.ff1.w"), &format!("{pre}.ff1.b"));
            let f = self.g.gelu(f);
            let f = self.linear(f, &format!("{pre}.ff2.w"), &format!("{pre}.ff2.b"));
            x = self.g.add(x, f).expect("feedforward residual");
        }
        let cls_out = self.g.gather_rows(x, &[0]).expect("class token row");
        self.layer_norm(cls_out, "task.ln_out")
    }

    /// FiLM policy head: activations are modulated per block by scale and
    /// shift computed from z, then passed through GELU.
    pub fn policy(&mut self, state_emb: TensorId, z: TensorId) -> TensorId {
        let w = POLICY_WIDTH;
        let mut h = state_emb;
        for k in 0..FILM_BLOCKS {
            let pre = self.linear(h, &format!("policy.block{k}.w"), &format!("policy.block{k}.b"));
            let film = self.linear(z, &format!("policy.film{k}.w"), &format!("policy.film{k}.b"));
            let gamma = self.g.slice_cols(film, 0, w).expect("gamma");
            let beta = self.g.slice_cols(film, w, 2 * w).expect("beta");
            let scaled = self.g.mul(gamma, pre).expect("film scale");
            let shifted = self.g.add(scaled, beta).expect("film shift");
            h = self.g.gelu(shifted);
        }
        let out = self.linear(h, "policy.head.w", "policy.head.b");
        match self.model.cfg.kind {
            EnvKind::SemanticNav => self.g.tanh(out),
            EnvKind::PinPad => out,
        }
    }

    /// One-layer projection head for the augmentation contrastive loss.
    pub fn ssl_project(&mut self, emb: TensorId) -> TensorId {
        self.linear(emb, "ssl.w", "ssl.b")
    }

    fn linear(&mut self, x: TensorId, w: &str, b: &str) -> TensorId {
        let wid = self.p(w);
        let bid = self.p(b);
        let y = self.g.matmul_nt(x, wid).expect("linear weights");
        self.g.add_bias(y, bid).expect("linear bias")
    }

    fn layer_norm(&mut self, x: TensorId, prefix: &str) -> TensorId {
        let g = self.p(&format!("{prefix}.g"));
        let b = self.p(&format!("{prefix}.b"));
        self.g.layer_norm_rows(x, g, b, LN_EPS).expect("layer norm")
    }

    /// Run backward from a scalar loss and return one gradient vector per
    /// parameter entry, zeros for parameters the loss never touched.
    pub fn backward_grads(&mut self, loss: TensorId) -> Vec<Vec<f64>> {
        self.g.backward(loss);
        self.model
            .params
            .entries()
            .iter()
            .zip(&self.ids)
            .map(|(p, id)| match self.g.grad(*id) {
                Some(grad) => grad.to_vec(),
                None => vec![0.0; p.data.len()],
            })
            .collect()
    }
}

impl Model {
    /// Embed one demo without gradients; returns the z row.
    pub fn encode_task_host(&self, frames: &[&Image], stride: usize) -> Vec<f64> {
        let tokens = self.demo_tokens(frames, stride);
        let mut f = self.forward(false);
        let z = f.encode_demos(&[tokens]);
        f.g.data(z).to_vec()
    }

    /// Embed many demos without gradients, batching the frame encoder in
    /// chunks so peak memory stays bounded.
    pub fn encode_tasks_host(&self, demos: &[Vec<&Image>], stride: usize) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(demos.len());
        let budget = 512; // tokens per graph
        let mut batch: Vec<DemoTokens> = Vec::new();
        let mut queued = 0;
        let flush = |batch: &mut Vec<DemoTokens>, out: &mut Vec<Vec<f64>>, model: &Model| {
            if batch.is_empty() {
                return;
            }
            let mut f = model.forward(false);
            let z = f.encode_demos(batch);
            let d = model.cfg.embed_dim;
            let data = f.g.data(z);
            for i in 0..batch.len() {
                out.push(data[i * d..(i + 1) * d].to_vec());
            }
            batch.clear();
        };
        for frames in demos {
            let tokens = self.demo_tokens(frames, stride);
            queued += tokens.positions.len();
            batch.push(tokens);
            if queued >= budget {
                flush(&mut batch, &mut out, self);
                queued = 0;
            }
        }
        flush(&mut batch, &mut out, self);
        out
    }

    /// Greedy action for the current observation window (the last
    /// `frame_stack` frames, earliest first) under task embedding `z`:
    /// tanh mean for continuous control, argmax over logits for discrete.
    pub fn act_greedy(&self, recent: &[&Image], z: &[f64]) -> Action {
        assert_eq!(z.len(), self.cfg.embed_dim);
        let input = self.stack_input(recent, recent.len() - 1);
        let mut f = self.forward(false);
        let state = f.encode_stacks(input, 1);
        let zid = f.g.leaf(z.to_vec(), vec![1, self.cfg.embed_dim], false).expect("z leaf");
        let out = f.policy(state, zid);
        let a = f.g.data(out);
        match self.cfg.kind {
            EnvKind::SemanticNav => Action::Nav([a[0], a[1]]),
            EnvKind::PinPad => {
                let mut best = 0;
                for i in 1..a.len() {
                    if a[i] > a[best] {
                        best = i;
                    }
                }
                Action::Pad(best as u8)
            }
        }
    }
}
