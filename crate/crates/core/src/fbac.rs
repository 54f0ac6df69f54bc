//! Feedback-aware completion block: extract local features, fuse them with
//! the block's own previous-step output through cross attention, expand by
//! the upsampling ratio and emit per-point displacements on top of the
//! duplicated input.

use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::geometry::duplicate_indices;
use crate::hgnet::EDGE_SLOPE;
use crate::nn::{Activation, CrossTransformer, EdgeConv, Init, LayerSpec, Linear, NodeShuffle};
use crate::params::ParamBuilder;
use crate::tensor::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FbacConfig {
    pub ratio: usize,
    pub channels: usize,
    pub k: usize,
}

impl FbacConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ratio < 1 || self.channels < 2 || self.k == 0 {
            return Err(Error::Config(format!("invalid FBAC block configuration {self:?}")));
        }
        Ok(())
    }
}

/// A block's output at the previous time step: the emitted points and the
/// expanded features that produced them, row-aligned.
#[derive(Clone, Copy, Debug)]
pub struct FeedbackState {
    pub points: Var,
    pub features: Var,
}

#[derive(Clone, Debug)]
pub struct Fbac {
    cfg: FbacConfig,
    extract: EdgeConv,
    transformer: CrossTransformer,
    shuffle: NodeShuffle,
    disp_hidden: Linear,
    disp_out: Linear,
}

impl Fbac {
    pub fn new<S: Scalar>(b: &mut ParamBuilder<S>, name: &str, cfg: &FbacConfig) -> Self {
        let c = cfg.channels;
        let act = Activation::LeakyRelu(EDGE_SLOPE);
        b.scope(name, |b| Fbac {
            cfg: cfg.clone(),
            extract: EdgeConv::new(
                b,
                "extract",
                &LayerSpec::new(3, c).with_k(cfg.k).with_activation(act),
            ),
            transformer: CrossTransformer::new(b, "transformer", c, cfg.k),
            shuffle: NodeShuffle::new(b, "shuffle", c, cfg.ratio, cfg.k, act),
            disp_hidden: Linear::new(b, "disp_hidden", c, c / 2, true, Init::FanIn),
            // Zero displacements make an untrained block an exact upsampler.
            disp_out: Linear::new(b, "disp_out", c / 2, 3, true, Init::Zeros),
        })
    }

    pub fn config(&self) -> &FbacConfig {
        &self.cfg
    }

    pub fn displacement_head(&self) -> &Linear {
        &self.disp_out
    }

    pub fn transformer(&self) -> &CrossTransformer {
        &self.transformer
    }

    /// Runs the block on `p_in` (`N×3`), optionally reading its own state
    /// from the previous step. Returns `p_out` (`r·N×3`) and the new state.
    pub fn forward<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        p_in: Var,
        feedback: Option<&FeedbackState>,
    ) -> Result<(Var, FeedbackState)> {
        let n = tape.shape(p_in).0;
        if n < self.cfg.k {
            return Err(Error::arg(format!("fbac: {n} input points is fewer than k={}", self.cfg.k)));
        }
        let features = self.extract.forward(tape, p_in, p_in)?;
        let refined = match feedback {
            Some(fb) => {
                let (fr, fc) = tape.shape(fb.features);
                if fc != self.cfg.channels {
                    return Err(Error::arg(format!(
                        "fbac: feedback has {fc} channels, block uses {}",
                        self.cfg.channels
                    )));
                }
                if fr != tape.shape(fb.points).0 {
                    return Err(Error::arg("fbac: feedback features not aligned with its points"));
                }
                let pb = tape.concat_rows(&[p_in, fb.points]);
                let fb_all = tape.concat_rows(&[features, fb.features]);
                self.transformer.forward(tape, p_in, features, pb, fb_all)?
            }
            None => self.transformer.forward(tape, p_in, features, p_in, features)?,
        };
        let expanded = self.shuffle.forward(tape, p_in, refined)?;
        let h = self.disp_hidden.forward(tape, expanded)?;
        let h = tape.relu(h);
        let disp = self.disp_out.forward(tape, h)?;
        let base = tape.gather(p_in, duplicate_indices(n, self.cfg.ratio));
        let p_out = tape.add(base, disp);
        Ok((p_out, FeedbackState { points: p_out, features: expanded }))
    }

    /// The feedback-free path evaluated through the edge-by-edge
    /// self-attention reference instead of the cross-attention kernel.
    pub fn forward_self_reference<S: Scalar>(&self, tape: &mut Tape<S>, p_in: Var) -> Result<Var> {
        let n = tape.shape(p_in).0;
        let features = self.extract.forward(tape, p_in, p_in)?;
        let refined = self.transformer.point_transformer(tape, p_in, features)?;
        let expanded = self.shuffle.forward(tape, p_in, refined)?;
        let h = self.disp_hidden.forward(tape, expanded)?;
        let h = tape.relu(h);
        let disp = self.disp_out.forward(tape, h)?;
        let base = tape.gather(p_in, duplicate_indices(n, self.cfg.ratio));
        Ok(tape.add(base, disp))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{duplicate, PointCloud};
    use crate::params::ParamStore;
    use crate::tensor::Tensor;

    fn input(n: usize) -> Tensor<f64> {
        let v: Vec<[f64; 3]> = (0..n)
            .map(|i| {
                let t = i as f64 * 0.91;
                [t.sin(), t.cos() * 0.8, (0.37 * t).sin()]
            })
            .collect();
        Tensor::from_rows(&v)
    }

    fn block(ratio: usize) -> (ParamStore<f64>, Fbac) {
        let mut store = ParamStore::new();
        let cfg = FbacConfig { ratio, channels: 4, k: 3 };
        let blk = Fbac::new(&mut ParamBuilder::new(&mut store, 4), "blk", &cfg);
        (store, blk)
    }

    #[test]
    fn untrained_block_duplicates_its_input() {
        let (store, blk) = block(2);
        let mut t = Tape::new(&store);
        let p = t.constant(input(6));
        let (out, state) = blk.forward(&mut t, p, None).unwrap();
        let expect = duplicate(&PointCloud::from_tensor(&input(6)), 2).unwrap();
        assert_eq!(t.cloud(out), expect);
        assert_eq!(state.points, out);
        assert_eq!(t.shape(state.features), (12, 4));
    }

    #[test]
    fn feedback_changes_the_result_and_is_checked() {
        let (mut store, blk) = block(2);
        store.value_mut(blk.disp_out.weight).fill(0.3);
        let mut t = Tape::new(&store);
        let p = t.constant(input(6));
        let (out0, st) = blk.forward(&mut t, p, None).unwrap();
        let (out1, _) = blk.forward(&mut t, p, Some(&st)).unwrap();
        assert!(t.value(out0).max_abs_diff(t.value(out1)) > 0.0);
        let bad = FeedbackState { points: st.points, features: t.constant(Tensor::zeros(12, 3)) };
        assert!(blk.forward(&mut t, p, Some(&bad)).is_err());
    }
}
