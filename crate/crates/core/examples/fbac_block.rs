//! One refinement block run twice, the second time reading its own output
//! from the first run through the feedback connection.
use fbnet::autograd::Tape;
use fbnet::data::{sample_complete, ShapeSpec};
use fbnet::fbac::{Fbac, FbacConfig};
use fbnet::params::{ParamBuilder, ParamStore};

fn main() -> fbnet::Result<()> {
    let cfg = FbacConfig { ratio: 2, channels: 32, k: 16 };
    let mut store = ParamStore::<f32>::new();
    let block = Fbac::new(&mut ParamBuilder::new(&mut store, 0), "block", &cfg);
    println!("block parameters: {}", store.num_scalars());

    let seed = sample_complete(&ShapeSpec::random("sphere", 1)?, 256)?;
    let mut tape = Tape::new(&store);
    let p_in = tape.constant(seed.to_tensor());
    let (first, state) = block.forward(&mut tape, p_in, None)?;
    let (second, _) = block.forward(&mut tape, p_in, Some(&state))?;
    println!("step 0 output {:?}, step 1 output {:?}", tape.shape(first), tape.shape(second));
    // The displacement head starts at zero, so an untrained block duplicates.
    let dup = fbnet::geometry::duplicate(&tape.cloud(p_in), 2)?;
    println!("untrained output equals duplicated input: {}", tape.cloud(second) == dup);
    Ok(())
}
