//! The full completion network: a coarse HGNet pass followed by three
//! weight-shared refinement blocks unrolled over `T` time steps.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::fbac::{Fbac, FbacConfig, FeedbackState};
use crate::geometry::{aggregate_downsample, aggregate_downsample_indices, PointCloud};
use crate::hgnet::{seed_from, HgNet, HgNetConfig};
use crate::metrics::chamfer_l2;
use crate::nn::PoolingKind;
use crate::params::{ParamBuilder, ParamStore};
use crate::tensor::Scalar;

pub const NUM_BLOCKS: usize = 3;

/// How each block's input is assembled at every time step.
///
/// | | first block | other blocks |
/// |---|---|---|
/// | A | seed every step | previous block's output |
/// | B | seed every step | previous block's output + partial |
/// | C | own last output + partial | previous block's output |
/// | D | own last output + partial | previous block's output + own last output |
/// | E | own last output + partial | previous block's output + partial |
///
/// "+" means merge then FPS back to the size of the first operand. At
/// `t = 0` the first block always starts from the seed and no block has a
/// last output yet.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InitStrategy {
    A,
    B,
    C,
    D,
    #[default]
    E,
}

impl InitStrategy {
    pub const ALL: [InitStrategy; 5] =
        [InitStrategy::A, InitStrategy::B, InitStrategy::C, InitStrategy::D, InitStrategy::E];

    fn first_uses_feedback(self) -> bool {
        matches!(self, InitStrategy::C | InitStrategy::D | InitStrategy::E)
    }
}

impl FromStr for InitStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "A" => Ok(InitStrategy::A),
            "B" => Ok(InitStrategy::B),
            "C" => Ok(InitStrategy::C),
            "D" => Ok(InitStrategy::D),
            "E" => Ok(InitStrategy::E),
            _ => Err(Error::Config(format!("unknown init strategy '{s}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FbNetConfig {
    pub hgnet: HgNetConfig,
    /// Feature width inside the refinement blocks.
    pub channels: usize,
    pub k: usize,
    pub ratios: [usize; NUM_BLOCKS],
    pub time_steps: usize,
    pub feedback: bool,
    pub init_strategy: InitStrategy,
}

/// Named architecture presets. `full-*` are the full-width networks for each
/// output resolution; `toy` halves the widths and `tiny` is a smoke-test size.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    #[serde(rename = "full-2048")]
    Full2048,
    #[serde(rename = "full-4096")]
    Full4096,
    #[serde(rename = "full-8192")]
    Full8192,
    #[serde(rename = "full-16384")]
    Full16384,
    Toy,
    Tiny,
}

impl Profile {
    pub const ALL: [Profile; 6] = [
        Profile::Full2048,
        Profile::Full4096,
        Profile::Full8192,
        Profile::Full16384,
        Profile::Toy,
        Profile::Tiny,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Profile::Full2048 => "full-2048",
            Profile::Full4096 => "full-4096",
            Profile::Full8192 => "full-8192",
            Profile::Full16384 => "full-16384",
            Profile::Toy => "toy",
            Profile::Tiny => "tiny",
        }
    }

    pub fn config(self) -> FbNetConfig {
        let full = |time_steps, last| FbNetConfig {
            hgnet: HgNetConfig::full(),
            channels: 128,
            k: 16,
            ratios: [1, 2, last],
            time_steps,
            feedback: true,
            init_strategy: InitStrategy::E,
        };
        match self {
            Profile::Full2048 => full(3, 2),
            Profile::Full4096 => full(2, 4),
            Profile::Full8192 => full(2, 8),
            Profile::Full16384 => full(2, 16),
            Profile::Toy => FbNetConfig { hgnet: HgNetConfig::toy(), channels: 64, ..full(3, 2) },
            Profile::Tiny => FbNetConfig {
                hgnet: HgNetConfig {
                    edgeconv_dims: [8, 16, 32],
                    pool_rates: [4, 2],
                    k: 8,
                    fc_hidden: [64, 64],
                    coarse_size: 32,
                    seed_size: 64,
                    pooling: PoolingKind::Adaptive,
                },
                channels: 8,
                k: 8,
                ..full(3, 2)
            },
        }
    }
}

impl std::fmt::Display for Profile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Profile::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown profile '{s}'")))
    }
}

impl FbNetConfig {
    pub fn seed_size(&self) -> usize {
        self.hgnet.seed_size
    }

    /// Output cardinality of every block, in feedforward order.
    pub fn block_sizes(&self) -> [usize; NUM_BLOCKS] {
        let mut n = self.seed_size();
        self.ratios.map(|r| {
            n *= r;
            n
        })
    }

    pub fn resolution(&self) -> usize {
        self.block_sizes()[NUM_BLOCKS - 1]
    }

    pub fn validate(&self) -> Result<()> {
        self.hgnet.validate()?;
        if self.time_steps < 1 {
            return Err(Error::Config("time_steps must be at least 1".into()));
        }
        for r in self.ratios {
            FbacConfig { ratio: r, channels: self.channels, k: self.k }.validate()?;
        }
        if self.k > self.seed_size() {
            return Err(Error::Config(format!(
                "k={} exceeds the seed size {}",
                self.k,
                self.seed_size()
            )));
        }
        Ok(())
    }
}

/// Every output of one unrolled forward pass.
pub struct UnrollTrace {
    pub coarse: Var,
    pub seed: Var,
    /// `outputs[t][i]` is block `i`'s output at step `t`.
    pub outputs: Vec<Vec<Var>>,
    pub pooled_sizes: Vec<usize>,
}

impl UnrollTrace {
    /// Last block's output at the last step.
    pub fn final_output(&self) -> Var {
        *self.outputs.last().and_then(|s| s.last()).expect("trace has at least one step")
    }

    pub fn len(&self) -> usize {
        self.outputs.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn clouds<S: Scalar>(&self, tape: &Tape<S>) -> TraceClouds {
        TraceClouds {
            coarse: tape.cloud(self.coarse),
            seed: tape.cloud(self.seed),
            outputs: self.outputs.iter().map(|s| s.iter().map(|&v| tape.cloud(v)).collect()).collect(),
        }
    }
}

/// Coordinates read back from an [`UnrollTrace`].
#[derive(Clone, Debug, PartialEq)]
pub struct TraceClouds {
    pub coarse: PointCloud,
    pub seed: PointCloud,
    pub outputs: Vec<Vec<PointCloud>>,
}

impl TraceClouds {
    pub fn final_output(&self) -> &PointCloud {
        self.outputs.last().and_then(|s| s.last()).expect("trace has at least one step")
    }

    /// Last block's output at step `t`.
    pub fn step_output(&self, t: usize) -> &PointCloud {
        self.outputs[t].last().expect("every step runs all blocks")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Source {
    Partial,
    Seed,
    PrevFf,
    PrevFb,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum InitPlan {
    Direct(Source),
    Aggregate { keep: Source, refine: Source },
}

fn plan(strategy: InitStrategy, block: usize, t: usize) -> InitPlan {
    use InitPlan::*;
    use Source::*;
    if block == 0 {
        return if t > 0 && strategy.first_uses_feedback() {
            Aggregate { keep: Partial, refine: PrevFb }
        } else {
            Direct(Seed)
        };
    }
    match strategy {
        InitStrategy::A | InitStrategy::C => Direct(PrevFf),
        InitStrategy::B | InitStrategy::E => Aggregate { keep: Partial, refine: PrevFf },
        InitStrategy::D if t == 0 => Direct(PrevFf),
        InitStrategy::D => Aggregate { keep: PrevFf, refine: PrevFb },
    }
}

fn missing(src: Source, block: usize, t: usize) -> Error {
    Error::State(format!("block {block} at step {t} needs {src:?}, which was not supplied"))
}

/// Inputs available when a block's input is initialized.
pub struct InitInputs<'a, T> {
    pub partial: &'a T,
    pub seed: &'a T,
    /// Previous block's output at this step.
    pub prev_ff: Option<&'a T>,
    /// This block's own output at the previous step.
    pub prev_fb: Option<&'a T>,
}

impl<T> InitInputs<'_, T> {
    fn get(&self, s: Source, block: usize, t: usize) -> Result<&T> {
        match s {
            Source::Partial => Ok(self.partial),
            Source::Seed => Ok(self.seed),
            Source::PrevFf => self.prev_ff.ok_or_else(|| missing(s, block, t)),
            Source::PrevFb => self.prev_fb.ok_or_else(|| missing(s, block, t)),
        }
    }
}

/// Input of block `block` at step `t`, downsampled to `target_size` where
/// the strategy merges two clouds.
pub fn fbnet_init_input(
    strategy: InitStrategy,
    block: usize,
    t: usize,
    inputs: &InitInputs<'_, PointCloud>,
    target_size: usize,
) -> Result<PointCloud> {
    match plan(strategy, block, t) {
        InitPlan::Direct(s) => Ok(inputs.get(s, block, t)?.clone()),
        InitPlan::Aggregate { keep, refine } => aggregate_downsample(
            inputs.get(keep, block, t)?,
            inputs.get(refine, block, t)?,
            target_size,
            0,
        ),
    }
}

fn init_input_on_tape<S: Scalar>(
    tape: &mut Tape<S>,
    strategy: InitStrategy,
    block: usize,
    t: usize,
    inputs: &InitInputs<'_, Var>,
    target_size: usize,
) -> Result<Var> {
    match plan(strategy, block, t) {
        InitPlan::Direct(s) => Ok(*inputs.get(s, block, t)?),
        InitPlan::Aggregate { keep, refine } => {
            let keep = *inputs.get(keep, block, t)?;
            let refine = *inputs.get(refine, block, t)?;
            let idx = aggregate_downsample_indices(&tape.cloud(keep), &tape.cloud(refine), target_size, 0)?;
            let merged = tape.concat_rows(&[keep, refine]);
            Ok(tape.gather(merged, idx))
        }
    }
}

#[derive(Clone, Debug)]
pub struct FbNet {
    cfg: FbNetConfig,
    hgnet: HgNet,
    blocks: Vec<Fbac>,
}

impl FbNet {
    /// Registers every parameter in `store` (which should be empty) using
    /// initial values drawn from `seed`.
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, cfg: &FbNetConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut b = ParamBuilder::new(store, seed);
        let hgnet = HgNet::new(&mut b, &cfg.hgnet);
        let blocks = (0..NUM_BLOCKS)
            .map(|i| {
                let bc = FbacConfig { ratio: cfg.ratios[i], channels: cfg.channels, k: cfg.k };
                Fbac::new(&mut b, &format!("fbac{i}"), &bc)
            })
            .collect();
        Ok(FbNet { cfg: cfg.clone(), hgnet, blocks })
    }

    pub fn config(&self) -> &FbNetConfig {
        &self.cfg
    }

    pub fn hgnet(&self) -> &HgNet {
        &self.hgnet
    }

    pub fn blocks(&self) -> &[Fbac] {
        &self.blocks
    }

    /// Same parameters, different unrolling: time steps, feedback switch and
    /// init strategy do not change the parameter set.
    pub fn with_schedule(&self, time_steps: usize, feedback: bool, strategy: InitStrategy) -> FbNet {
        let mut m = self.clone();
        m.cfg.time_steps = time_steps;
        m.cfg.feedback = feedback;
        m.cfg.init_strategy = strategy;
        m
    }

    pub fn forward<S: Scalar>(&self, tape: &mut Tape<S>, partial: &PointCloud) -> Result<UnrollTrace> {
        let p = tape.constant(partial.to_tensor());
        self.forward_var(tape, p)
    }

    pub fn forward_var<S: Scalar>(&self, tape: &mut Tape<S>, partial: Var) -> Result<UnrollTrace> {
        if tape.shape(partial).0 < self.cfg.k {
            return Err(Error::arg(format!(
                "partial input has {} points, fewer than k={}",
                tape.shape(partial).0,
                self.cfg.k
            )));
        }
        let enc = self.hgnet.encode(tape, partial)?;
        let coarse = self.hgnet.decode(tape, enc.global)?;
        let seed = seed_from(tape, partial, coarse, self.cfg.seed_size())?;

        let mut states: Vec<Option<FeedbackState>> = vec![None; NUM_BLOCKS];
        let mut outputs: Vec<Vec<Var>> = Vec::with_capacity(self.cfg.time_steps);
        for t in 0..self.cfg.time_steps {
            let mut step = Vec::with_capacity(NUM_BLOCKS);
            for (i, block) in self.blocks.iter().enumerate() {
                let prev_ff = step.last().copied();
                let prev_fb = if t > 0 { Some(outputs[t - 1][i]) } else { None };
                let target = match prev_ff {
                    Some(ff) => tape.shape(ff).0,
                    None => self.cfg.seed_size(),
                };
                let inputs = InitInputs {
                    partial: &partial,
                    seed: &seed,
                    prev_ff: prev_ff.as_ref(),
                    prev_fb: prev_fb.as_ref(),
                };
                let p_in = init_input_on_tape(tape, self.cfg.init_strategy, i, t, &inputs, target)?;
                let fb = if self.cfg.feedback { states[i].as_ref() } else { None };
                let (out, state) = block.forward(tape, p_in, fb)?;
                states[i] = Some(state);
                step.push(out);
            }
            outputs.push(step);
        }
        Ok(UnrollTrace { coarse, seed, outputs, pooled_sizes: enc.pooled_sizes })
    }
}

/// `CD(coarse, gt) + Σ_t Σ_i CD(output[t][i], gt)` on the tape.
pub fn fbnet_loss<S: Scalar>(tape: &mut Tape<S>, trace: &UnrollTrace, gt: Var) -> Result<Var> {
    let mut total = tape.chamfer_l2(trace.coarse, gt)?;
    for &out in trace.outputs.iter().flatten() {
        let cd = tape.chamfer_l2(out, gt)?;
        total = tape.add(total, cd);
    }
    Ok(total)
}

/// The same total loss evaluated on plain point clouds.
pub fn fbnet_loss_value(coarse: &PointCloud, outputs: &[PointCloud], gt: &PointCloud) -> Result<f64> {
    let mut total = chamfer_l2(coarse, gt)?;
    for o in outputs {
        total += chamfer_l2(o, gt)?;
    }
    Ok(total)
}
