//! Runs one orthogonal-attention layer of every variant on random context
//! and query rows and prints the traced intermediate shapes and the first
//! head's attention weights.

use orthoattn::nn::Ctx;
use orthoattn::ortho::{OAConfig, OAMultihead, Variant};
use orthoattn::tensor::{Graph, ParamStore, RngState, Tensor};

fn main() -> anyhow::Result<()> {
    let (m, n, d, heads) = (4, 2, 16, 4);
    let mut rng = RngState::new(7);
    let context = Tensor::randn(vec![m, d], 1.0, &mut rng)?;
    let query = Tensor::randn(vec![n, d], 1.0, &mut rng)?;
    for variant in Variant::ALL {
        let cfg = OAConfig::new(d, heads, variant)?;
        let mut store = ParamStore::new();
        let layer = OAMultihead::new(&mut store, "oa", &cfg, &mut rng)?;
        let mut g = Graph::with_params(&store);
        let (c, q) = (g.constant(context.clone()), g.constant(query.clone()));
        let (traces, out) = layer.forward_traced(&mut g, &mut Ctx::eval(), c, q, &cfg)?;
        let t = &traces[0];
        println!(
            "{variant}: keys {:?} values {:?} queries {:?} weights {:?} head {:?} output {:?}",
            g.shape(t.keys),
            g.shape(t.values),
            g.shape(t.queries),
            g.shape(t.weights),
            g.shape(t.output),
            g.shape(out)
        );
        for (i, row) in g.value(t.weights).data().chunks(n).enumerate() {
            println!("  context row {i}: weights over query rows {row:.3?}");
        }
    }
    Ok(())
}
