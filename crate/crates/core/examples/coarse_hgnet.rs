//! The coarse stage alone: encode a partial cloud, decode a coarse shape and
//! build the seed that starts refinement.
use fbnet::autograd::Tape;
use fbnet::data::{make_partial, sample_complete, ShapeSpec};
use fbnet::hgnet::{HgNet, HgNetConfig};
use fbnet::params::{ParamBuilder, ParamStore};

fn main() -> fbnet::Result<()> {
    let cfg = HgNetConfig::toy();
    let mut store = ParamStore::<f32>::new();
    let net = HgNet::new(&mut ParamBuilder::new(&mut store, 0), &cfg);
    println!("coarse network: {} parameters", store.num_scalars());

    let complete = sample_complete(&ShapeSpec::random("union", 5)?, 1024)?;
    let partial = make_partial(&complete, [0.3, -0.2, 1.0], 0.5)?;

    let mut tape = Tape::new(&store);
    let p = tape.constant(partial.to_tensor());
    let enc = net.encode(&mut tape, p)?;
    println!("pooled sizes {:?}, global feature {:?}", enc.pooled_sizes, tape.shape(enc.global));
    let coarse = net.decode(&mut tape, enc.global)?;
    let seed = net.coarse_seed(&mut tape, p, coarse)?;
    println!("coarse {:?}, seed {:?}", tape.shape(coarse), tape.shape(seed));
    Ok(())
}
