//! Parameter counts of one OA encoder block per variant at BERT-base width,
//! and of a complete scope model on the toy backbone.

use orthoattn::backbone::BackboneSpec;
use orthoattn::experiment::TrainConfig;
use orthoattn::model::{BlockCounts, ScopeModel};
use orthoattn::ortho::{OAConfig, OAEncoderBlock, Variant};
use orthoattn::tensor::{ParamStore, RngState};

fn main() -> anyhow::Result<()> {
    println!("{:<8} {:>12} {:>10} {:>10} {:>10} {:>8} {:>10}", "variant", "orthogonal", "W^D", "self-att", "ff", "ln", "total");
    for variant in Variant::ALL {
        let mut store = ParamStore::new();
        let block = OAEncoderBlock::new(&mut store, "block", OAConfig::new(768, 12, variant)?, &mut RngState::new(0))?;
        let c = BlockCounts::of(&block);
        println!(
            "{:<8} {:>12} {:>10} {:>10} {:>10} {:>8} {:>10}",
            variant.as_str(),
            c.orthogonal_attention,
            c.output_projection,
            c.self_attention,
            c.feed_forward,
            c.layer_norms,
            c.total
        );
    }
    let cfg = TrainConfig::default();
    let model = ScopeModel::new(cfg.model_spec(&BackboneSpec::toy(), 4)?, 0)?;
    let c = model.count_parameters();
    println!(
        "toy scope model ({}): backbone {}, OA blocks {}, classifier {}, total {}",
        cfg.variant,
        c.backbone,
        c.blocks.iter().map(|b| b.total).sum::<usize>(),
        c.classifier,
        c.total
    );
    Ok(())
}
