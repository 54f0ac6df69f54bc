//! Full network unrolled over time steps: cardinalities per step and block
//! for every input-initialization strategy.
use fbnet::autograd::Tape;
use fbnet::data::{make_partial, sample_complete, ShapeSpec};
use fbnet::model::{FbNet, InitStrategy, Profile};
use fbnet::params::ParamStore;

fn main() -> fbnet::Result<()> {
    let cfg = Profile::Toy.config();
    let mut store = ParamStore::<f32>::new();
    let net = FbNet::new(&mut store, &cfg, 0)?;
    println!("{} profile: {} parameters, resolution {}", Profile::Toy, store.num_scalars(), cfg.resolution());

    let complete = sample_complete(&ShapeSpec::random("cylinder", 2)?, cfg.resolution())?;
    let partial = make_partial(&complete, [0.0, 1.0, 0.0], 0.5)?;
    for strategy in InitStrategy::ALL {
        let net = net.with_schedule(cfg.time_steps, true, strategy);
        let mut tape = Tape::new(&store);
        let trace = net.forward(&mut tape, &partial)?;
        let sizes: Vec<Vec<usize>> =
            trace.outputs.iter().map(|step| step.iter().map(|&v| tape.shape(v).0).collect()).collect();
        let cd = fbnet::metrics::chamfer_l2(&tape.cloud(trace.final_output()), &complete)?;
        println!("strategy {strategy:?}: sizes {sizes:?}, untrained final CD {cd:.4}");
    }
    Ok(())
}
