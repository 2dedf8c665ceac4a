//! The standing gradient suite: every graph operation, then every composed
//! layer of one attention variant up to the full scope model.

use std::fmt::Write as _;

use serde::Serialize;

use super::{check, random_projection, GradCheckConfig, GradCheckReport};
use crate::backbone::{BackboneSpec, TokenSequence, MAX_LEN};
use crate::model::{ModelSpec, ScopeModel};
use crate::nn::Ctx;
use crate::ortho::{Alpha, Beta, OAConfig, OAEncoderBlock, OAHead, OAMultihead, Variant};
use crate::tensor::{ConvPairing, Graph, ParamGroup, ParamId, ParamStore, RngState, Tensor, Var};
use crate::Result;

/// Context and query lengths of the layer checks.
const M: usize = 5;
const N: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteRow {
    pub layer: String,
    pub variant: Option<Variant>,
    pub probes: usize,
    pub kinks: usize,
    pub max_rel_err: f64,
    /// Parameter of the probe with the largest error.
    pub worst: String,
    pub passed: bool,
}

impl SuiteRow {
    fn new(layer: &str, variant: Option<Variant>, r: &GradCheckReport) -> Self {
        Self {
            layer: layer.to_string(),
            variant,
            probes: r.probes.len(),
            kinks: r.kinks,
            max_rel_err: r.max_rel_err(),
            worst: r.probes.iter().max_by(|a, b| a.rel_err().total_cmp(&b.rel_err())).map_or_else(String::new, |p| p.param.clone()),
            passed: r.passed() && !r.probes.is_empty(),
        }
    }
}

/// Checks each input of `build` coordinate-wise against a fixed random
/// projection of its output.
fn op_check(
    seed: u64,
    shapes: &[&[usize]],
    build: impl Fn(&mut Graph<'_>, &[Var], &mut RngState) -> Result<Var>,
) -> Result<GradCheckReport> {
    let mut rng = RngState::new(seed);
    let mut store = ParamStore::new();
    let ids = shapes
        .iter()
        .enumerate()
        .map(|(i, s)| Ok(store.add(format!("in{i}"), Tensor::randn(s.to_vec(), 1.0, &mut rng)?, ParamGroup::Head)?))
        .collect::<Result<Vec<ParamId>>>()?;
    let local = seed ^ 0x9e37_79b9;
    check(&mut store, GradCheckConfig::default(), &mut rng, |g| {
        let mut rng = RngState::new(local);
        let vars: Vec<Var> = ids.iter().map(|&id| g.param(id)).collect();
        let out = build(g, &vars, &mut rng)?;
        random_projection(g, out, &mut rng)
    })
}

/// One row per differentiable operation, including both broadcast directions
/// and both convolution pairings.
pub fn op_suite(seed: u64) -> Result<Vec<SuiteRow>> {
    type Build = fn(&mut Graph<'_>, &[Var], &mut RngState) -> Result<Var>;
    let cases: Vec<(&str, Vec<&[usize]>, Build)> = vec![
        ("matmul", vec![&[2, 3, 4], &[4, 5]], |g, v, _| Ok(g.matmul(v[0], v[1])?)),
        ("add", vec![&[3, 1, 4], &[5, 4]], |g, v, _| Ok(g.add(v[0], v[1])?)),
        ("mul", vec![&[3, 1, 4], &[1, 5, 4]], |g, v, _| Ok(g.mul(v[0], v[1])?)),
        ("scale", vec![&[3, 4]], |g, v, _| Ok(g.scale(v[0], -0.7))),
        ("relu", vec![&[6, 5]], |g, v, _| Ok(g.relu(v[0]))),
        ("softmax", vec![&[4, 3, 2]], |g, v, _| Ok(g.softmax(v[0], 1)?)),
        ("layer_norm", vec![&[4, 6], &[6], &[6]], |g, v, _| Ok(g.layer_norm(v[0], v[1], v[2], 1e-5)?)),
        ("dropout", vec![&[5, 6]], |g, v, rng| Ok(g.dropout(v[0], 0.3, rng, true)?)),
        ("concat", vec![&[3, 2, 4], &[3, 1, 4]], |g, v, _| Ok(g.concat(&[v[0], v[1]], 1)?)),
        ("reshape", vec![&[3, 4]], |g, v, _| Ok(g.reshape(v[0], &[2, 6])?)),
        ("transpose", vec![&[3, 4]], |g, v, _| Ok(g.transpose(v[0])?)),
        ("sum_axis", vec![&[3, 4, 2]], |g, v, _| Ok(g.sum_axis(v[0], 1, false)?)),
        ("sum_all", vec![&[3, 4]], |g, v, _| {
            let s = g.sum_all(v[0]);
            Ok(g.mul(s, s)?)
        }),
        ("gather_rows", vec![&[5, 3]], |g, v, _| Ok(g.gather_rows(v[0], &[4, 0, 4])?)),
        ("conv1d_all_groups", vec![&[3, 16], &[2, 4, 4], &[2, 1]], |g, v, _| {
            Ok(g.conv1d_dynamic(v[0], v[1], v[2], 4, ConvPairing::AllGroups)?)
        }),
        ("conv1d_row_wise", vec![&[3, 9], &[3, 3, 3], &[3, 3]], |g, v, _| {
            Ok(g.conv1d_dynamic(v[0], v[1], v[2], 3, ConvPairing::RowWise)?)
        }),
        ("cross_entropy", vec![&[4, 2]], |g, v, _| Ok(g.cross_entropy(v[0], &[0, 1, 1, 0], &[0.25, 0.25, 0.0, 0.5])?)),
    ];
    cases
        .into_iter()
        .enumerate()
        .map(|(i, (name, shapes, build))| Ok(SuiteRow::new(name, None, &op_check(seed + i as u64, &shapes, build)?)))
        .collect()
}

/// Adds random `[M, d]` context and `[N, d]` query inputs to `store` so that
/// gradients with respect to them are checked too.
fn inputs(store: &mut ParamStore, d: usize, rng: &mut RngState) -> Result<(ParamId, ParamId)> {
    let c = store.add("input.c", Tensor::randn(vec![M, d], 1.0, rng)?, ParamGroup::Backbone)?;
    let q = store.add("input.q", Tensor::randn(vec![N, d], 1.0, rng)?, ParamGroup::Backbone)?;
    Ok((c, q))
}

fn layer_check(
    store: &mut ParamStore,
    rng: &mut RngState,
    ids: (ParamId, ParamId),
    forward: impl Fn(&mut Graph<'_>, Var, Var) -> Result<Var>,
) -> Result<GradCheckReport> {
    let proj = rng.clone();
    check(store, GradCheckConfig::directional(), rng, |g| {
        let (c, q) = (g.param(ids.0), g.param(ids.1));
        let out = forward(g, c, q)?;
        random_projection(g, out, &mut proj.clone())
    })
}

/// Checks alpha, beta, one head, the multihead layer, the encoder block and
/// the full model with a toy backbone of width `d` and `n_heads` heads, all
/// in eval mode with directional probes.
pub fn layer_suite(variant: Variant, d: usize, n_heads: usize, seed: u64) -> Result<Vec<SuiteRow>> {
    let cfg = OAConfig::new(d, n_heads, variant)?;
    let mut rows = Vec::new();
    let mut rng = RngState::new(seed);
    let run = |name: &str, rows: &mut Vec<SuiteRow>, report: GradCheckReport| rows.push(SuiteRow::new(name, Some(variant), &report));

    // alpha and beta consume the raw width-d rows, like the head does
    let mut store = ParamStore::new();
    let alpha = Alpha::new(&mut store, "alpha", &cfg, &mut rng)?;
    let ids = inputs(&mut store, d, &mut rng)?;
    let r = layer_check(&mut store, &mut rng, ids, |g, c, q| alpha.forward(g, c, q, &cfg))?;
    run("alpha", &mut rows, r);

    let mut store = ParamStore::new();
    let beta = Beta::new(&mut store, "beta", &cfg, &mut rng)?;
    let ids = inputs(&mut store, d, &mut rng)?;
    let r = layer_check(&mut store, &mut rng, ids, |g, c, q| beta.forward(g, c, q, &cfg))?;
    run("beta", &mut rows, r);

    let mut store = ParamStore::new();
    let head = OAHead::new(&mut store, "head", &cfg, &mut rng)?;
    let ids = inputs(&mut store, d, &mut rng)?;
    let r = layer_check(&mut store, &mut rng, ids, |g, c, q| head.forward(g, &mut Ctx::eval(), c, q, &cfg))?;
    run("oa_head", &mut rows, r);

    let mut store = ParamStore::new();
    let mh = OAMultihead::new(&mut store, "multihead", &cfg, &mut rng)?;
    let ids = inputs(&mut store, d, &mut rng)?;
    let r = layer_check(&mut store, &mut rng, ids, |g, c, q| mh.forward(g, &mut Ctx::eval(), c, q, &cfg))?;
    run("oa_multihead", &mut rows, r);

    let mut store = ParamStore::new();
    let block = OAEncoderBlock::new(&mut store, "block", cfg, &mut rng)?;
    let ids = inputs(&mut store, d, &mut rng)?;
    let r = layer_check(&mut store, &mut rng, ids, |g, c, q| block.forward(g, &mut Ctx::eval(), c, q))?;
    run("oa_encoder_block", &mut rows, r);

    let r = model_check(cfg, seed, &mut rng)?;
    run("scope_model", &mut rows, r);
    Ok(rows)
}

/// Offset of every model parameter before the full-model check. At the
/// initial scale of the toy encoder (0.02) its attention is nearly uniform
/// and some directional derivatives fall to ~1e-8, where the rounding error
/// of a central difference with h = 1e-5 alone exceeds the tolerance.
const MODEL_JITTER: f64 = 0.1;

/// Token loss of a six-word sentence with two cue words, with respect to
/// every parameter of the model including the backbone, at a random point
/// near initialization.
fn model_check(cfg: OAConfig, seed: u64, rng: &mut RngState) -> Result<GradCheckReport> {
    let backbone = BackboneSpec::ToyEncoder { d: cfg.d, vocab_size: 512, n_layers: 2, n_heads: cfg.n_heads, max_len: MAX_LEN };
    let mut model = ScopeModel::new(ModelSpec { backbone, oa: cfg }, seed)?;
    let words: Vec<String> = "we did not see neither him".split(' ').map(str::to_string).collect();
    let vocab = *model.backbone.vocab().expect("toy backbone has a vocabulary");
    let seq = TokenSequence::from_words(0, &words, vec![2, 4], &vocab)?;
    let labels = [0, 0, 0, 1, 0, 1];
    let mut store = std::mem::take(&mut model.params);
    for id in store.ids().collect::<Vec<_>>() {
        let t = store.get_mut(id);
        let noise = Tensor::randn(t.shape().to_vec(), MODEL_JITTER, rng)?;
        t.data_mut().iter_mut().zip(noise.data()).for_each(|(x, n)| *x += n);
    }
    check(&mut store, GradCheckConfig::directional(), rng, |g| model.loss_graph(g, &seq, &labels, seq.len(), &mut Ctx::eval()))
}

/// Pass/fail table, one line per row.
pub fn suite_table(rows: &[SuiteRow]) -> String {
    let mut out = format!("{:<20} {:<8} {:>6} {:>12}  {:<6}  {}\n", "layer", "variant", "probes", "max rel err", "result", "worst probe");
    for r in rows {
        let variant = r.variant.map_or("-", Variant::as_str);
        let result = if r.passed { "PASS" } else { "FAIL" };
        writeln!(out, "{:<20} {:<8} {:>6} {:>12.3e}  {result:<6}  {}", r.layer, variant, r.probes, r.max_rel_err, r.worst).unwrap();
    }
    out
}
