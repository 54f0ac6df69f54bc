use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::geometry::knn_graph;
use crate::params::ParamBuilder;
use crate::tensor::Scalar;

use super::{Init, Linear};

/// Vector cross-attention from a query set `A` onto a reference set `B`:
///
/// `f'_a = Σ_b softmax_b(M(f_a - f_b + δ)) ⊙ (f_b + δ)`, `δ = W(p_a - p_b)`,
///
/// where `b` ranges over the `k` nearest references of `a`, `M` is
/// linear → ReLU → linear, `W` is a two-layer position encoder, and the
/// softmax runs over the neighbors independently for every channel.
#[derive(Clone, Debug)]
pub struct CrossTransformer {
    pos_in: Linear,
    pos_out: Linear,
    attn_in: Linear,
    attn_out: Linear,
    channels: usize,
    k: usize,
}

impl CrossTransformer {
    pub fn new<S: Scalar>(b: &mut ParamBuilder<S>, name: &str, channels: usize, k: usize) -> Self {
        b.scope(name, |b| CrossTransformer {
            pos_in: Linear::new(b, "pos_in", 3, channels, true, Init::FanIn),
            pos_out: Linear::new(b, "pos_out", channels, channels, true, Init::FanIn),
            attn_in: Linear::new(b, "attn_in", channels, channels, true, Init::FanIn),
            // A bias here would be constant across each softmax group.
            attn_out: Linear::new(b, "attn_out", channels, channels, false, Init::FanIn),
            channels,
            k,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn attention_layers(&self) -> [&Linear; 2] {
        [&self.attn_in, &self.attn_out]
    }

    fn check(&self, tape: &Tape<impl Scalar>, pa: Var, fa: Var, pb: Var, fb: Var) -> Result<()> {
        let (na, ca) = tape.shape(fa);
        let (nb, cb) = tape.shape(fb);
        if tape.shape(pa).0 != na || tape.shape(pb).0 != nb {
            return Err(Error::arg("cross transformer: features not aligned with points"));
        }
        if ca != self.channels || cb != self.channels {
            return Err(Error::arg(format!(
                "cross transformer: expected {} channels, got {ca} and {cb}",
                self.channels
            )));
        }
        if self.k > nb {
            return Err(Error::arg(format!("cross transformer: k={} exceeds {nb} references", self.k)));
        }
        Ok(())
    }

    fn position_encoding<S: Scalar>(&self, tape: &mut Tape<S>, rel: Var) -> Result<Var> {
        let h = self.pos_in.forward(tape, rel)?;
        let h = tape.relu(h);
        self.pos_out.forward(tape, h)
    }

    pub fn forward<S: Scalar>(&self, tape: &mut Tape<S>, pa: Var, fa: Var, pb: Var, fb: Var) -> Result<Var> {
        Ok(self.forward_with_attention(tape, pa, fa, pb, fb)?.0)
    }

    /// Also returns the `(|A|·k)×C` attention weights.
    pub fn forward_with_attention<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        pa: Var,
        fa: Var,
        pb: Var,
        fb: Var,
    ) -> Result<(Var, Var)> {
        self.check(tape, pa, fa, pb, fb)?;
        let graph = knn_graph(&tape.cloud(pa), &tape.cloud(pb), self.k)?;
        let a_idx = graph.query_of_edge();
        let b_idx = graph.flat().to_vec();

        let pa_e = tape.gather(pa, a_idx.clone());
        let pb_e = tape.gather(pb, b_idx.clone());
        let rel = tape.sub(pa_e, pb_e);
        let delta = self.position_encoding(tape, rel)?;

        // M's first layer is linear, so M1(f_a - f_b + δ) = M1 f_a - M1 f_b + M1 δ.
        let m1 = tape.param(self.attn_in.weight);
        let qa = tape.matmul(fa, m1);
        let qb = tape.matmul(fb, m1);
        let qa = tape.gather(qa, a_idx);
        let qb = tape.gather(qb, b_idx.clone());
        let qd = tape.matmul(delta, m1);
        let h = tape.sub(qa, qb);
        let h = tape.add(h, qd);
        let bias = tape.param(self.attn_in.bias.expect("attention input layer has a bias"));
        let h = tape.add_bias(h, bias);
        let h = tape.relu(h);
        let logits = self.attn_out.forward(tape, h)?;
        let attn = tape.group_softmax(logits, self.k);

        let fb_e = tape.gather(fb, b_idx);
        let values = tape.add(fb_e, delta);
        let weighted = tape.mul(attn, values);
        Ok((tape.group_sum(weighted, self.k), attn))
    }

    /// Self-attention over one point set, evaluated edge by edge without the
    /// factorization used by [`CrossTransformer::forward`]. With `B = A` the
    /// two must agree.
    pub fn point_transformer<S: Scalar>(&self, tape: &mut Tape<S>, p: Var, f: Var) -> Result<Var> {
        self.check(tape, p, f, p, f)?;
        let cloud = tape.cloud(p);
        let graph = knn_graph(&cloud, &cloud, self.k)?;
        let own = graph.query_of_edge();
        let nbr = graph.flat().to_vec();
        let pi = tape.gather(p, own.clone());
        let pj = tape.gather(p, nbr.clone());
        let rel = tape.sub(pi, pj);
        let delta = self.position_encoding(tape, rel)?;
        let fi = tape.gather(f, own);
        let fj = tape.gather(f, nbr);
        let x = tape.sub(fi, fj);
        let x = tape.add(x, delta);
        let h = self.attn_in.forward(tape, x)?;
        let h = tape.relu(h);
        let logits = self.attn_out.forward(tape, h)?;
        let attn = tape.group_softmax(logits, self.k);
        let values = tape.add(fj, delta);
        let weighted = tape.mul(attn, values);
        Ok(tape.group_sum(weighted, self.k))
    }
}
