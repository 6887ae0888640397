#![allow(dead_code)]

use std::fs;
use std::path::Path;

use mgmae::harness::ExperimentConfig;
use mgmae::layers::{BiLstm, Embedding, Linear, Lstm, ParamStore};
use mgmae::tape::{Tape, Var};
use mgmae::tensor::Tensor;
use mgmae::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const EPS: f64 = 1e-4;
pub const MAX_REL: f64 = 1e-4;

pub type OpFn = Box<dyn for<'a> Fn(&mut Tape<'a>, &[Var]) -> Result<Var>>;
pub type InputFn = Box<dyn Fn(&mut ChaCha8Rng) -> Vec<Tensor>>;
pub type ParamFn = Box<dyn for<'a> Fn(&'a ParamStore, &mut Tape<'a>) -> Result<Var>>;

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(lo..hi)).collect(),
    )
    .unwrap()
}

fn shapes(list: &'static [&'static [usize]], lo: f64, hi: f64) -> InputFn {
    Box::new(move |rng| list.iter().map(|s| uniform(rng, s, lo, hi)).collect())
}

/// Tape operations (plus dot attention) with input generators.
pub fn op_cases() -> Vec<(&'static str, InputFn, OpFn)> {
    vec![
        (
            "matmul",
            shapes(&[&[3, 4], &[4, 2]], -1.0, 1.0),
            Box::new(|t, v| t.matmul(v[0], v[1])),
        ),
        (
            "matvec",
            shapes(&[&[3, 4], &[4]], -1.0, 1.0),
            Box::new(|t, v| t.matvec(v[0], v[1])),
        ),
        (
            "transpose",
            shapes(&[&[3, 4]], -1.0, 1.0),
            Box::new(|t, v| t.transpose(v[0])),
        ),
        (
            "add",
            shapes(&[&[2, 3], &[2, 3]], -1.0, 1.0),
            Box::new(|t, v| t.add(v[0], v[1])),
        ),
        (
            "sub",
            shapes(&[&[5], &[5]], -1.0, 1.0),
            Box::new(|t, v| t.sub(v[0], v[1])),
        ),
        (
            "mul",
            shapes(&[&[5], &[5]], -1.0, 1.0),
            Box::new(|t, v| t.mul(v[0], v[1])),
        ),
        (
            "scale",
            shapes(&[&[4]], -1.0, 1.0),
            Box::new(|t, v| Ok(t.scale(v[0], -1.7))),
        ),
        (
            "tanh",
            shapes(&[&[6]], -2.0, 2.0),
            Box::new(|t, v| Ok(t.tanh(v[0]))),
        ),
        (
            "sigmoid",
            shapes(&[&[6]], -3.0, 3.0),
            Box::new(|t, v| Ok(t.sigmoid(v[0]))),
        ),
        (
            "exp",
            shapes(&[&[6]], -2.0, 2.0),
            Box::new(|t, v| Ok(t.exp(v[0]))),
        ),
        (
            "log",
            shapes(&[&[5]], 0.5, 3.0),
            Box::new(|t, v| t.log(v[0])),
        ),
        (
            "mask",
            shapes(&[&[5]], -1.0, 1.0),
            Box::new(|t, v| t.mask(v[0], vec![1.0, 0.0, 1.0, 1.0, 0.0])),
        ),
        (
            "dropout",
            shapes(&[&[6]], -1.0, 1.0),
            Box::new(|t, v| t.dropout(v[0], 0.3, Some(&mut ChaCha8Rng::seed_from_u64(5)))),
        ),
        (
            "log_softmax",
            shapes(&[&[6]], -2.0, 2.0),
            Box::new(|t, v| t.log_softmax(v[0])),
        ),
        (
            "softmax",
            shapes(&[&[6]], -2.0, 2.0),
            Box::new(|t, v| t.softmax(v[0])),
        ),
        (
            "sum",
            shapes(&[&[2, 3]], -1.0, 1.0),
            Box::new(|t, v| Ok(t.sum(v[0]))),
        ),
        (
            "concat",
            shapes(&[&[3], &[2]], -1.0, 1.0),
            Box::new(|t, v| t.concat(&[v[0], v[1]])),
        ),
        (
            "slice",
            shapes(&[&[6]], -1.0, 1.0),
            Box::new(|t, v| t.slice(v[0], 1, 3)),
        ),
        (
            "stack",
            shapes(&[&[3], &[3]], -1.0, 1.0),
            Box::new(|t, v| t.stack(&[v[0], v[1]])),
        ),
        (
            "row",
            shapes(&[&[3, 4]], -1.0, 1.0),
            Box::new(|t, v| t.row(v[0], 1)),
        ),
        (
            "gather_rows",
            shapes(&[&[5, 3]], -1.0, 1.0),
            Box::new(|t, v| t.gather_rows(v[0], &[4, 0, 4])),
        ),
        (
            "select",
            shapes(&[&[3, 4]], -1.0, 1.0),
            Box::new(|t, v| t.select(v[0], &[1, 3, 0])),
        ),
        (
            "dot",
            shapes(&[&[4], &[4]], -1.0, 1.0),
            Box::new(|t, v| t.dot(v[0], v[1])),
        ),
        (
            "dot_attention",
            shapes(&[&[4, 3], &[3]], -1.0, 1.0),
            Box::new(|t, v| {
                let (ctx, w) = mgmae::layers::dot_attention(t, v[0], v[1])?;
                t.concat(&[ctx, w])
            }),
        ),
    ]
}

/// Layers, differentiated with respect to their parameters.
pub fn layer_cases(seed: u64) -> Vec<(&'static str, ParamStore, ParamFn)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<(&'static str, ParamStore, ParamFn)> = Vec::new();

    let mut s = ParamStore::new();
    let emb = Embedding::new(&mut s, "e", 6, 3, 0.5, &mut rng);
    out.push((
        "embedding",
        s,
        Box::new(move |st, t| emb.forward(st, t, &[2, 5, 2])),
    ));

    let mut s = ParamStore::new();
    let lin = Linear::new(&mut s, "l", 4, 3, 0.5, &mut rng);
    let x = uniform(&mut rng, &[4], -1.0, 1.0);
    out.push((
        "linear",
        s,
        Box::new(move |st, t| {
            let xv = t.constant(x.clone());
            lin.forward(st, t, xv)
        }),
    ));

    let mut s = ParamStore::new();
    let lstm = Lstm::new(&mut s, "c", 3, 4, &mut rng);
    let (x, h, c) = (
        uniform(&mut rng, &[3], -1.0, 1.0),
        uniform(&mut rng, &[4], -0.5, 0.5),
        uniform(&mut rng, &[4], -0.5, 0.5),
    );
    out.push((
        "lstm_step",
        s,
        Box::new(move |st, t| {
            let (xv, hv, cv) = (
                t.constant(x.clone()),
                t.constant(h.clone()),
                t.constant(c.clone()),
            );
            let (h1, c1) = lstm.step(st, t, xv, hv, cv)?;
            // a second step exercises the recurrence
            let (h2, c2) = lstm.step(st, t, xv, h1, c1)?;
            t.concat(&[h2, c2])
        }),
    ));

    let mut s = ParamStore::new();
    let bi = BiLstm::new(&mut s, "b", 3, 2, &mut rng);
    let xs = uniform(&mut rng, &[4, 3], -1.0, 1.0);
    out.push((
        "bilstm",
        s,
        Box::new(move |st, t| {
            let xv = t.constant(xs.clone());
            let (outs, fin) = bi.encode(st, t, xv)?;
            let mut parts = vec![fin];
            for i in 0..4 {
                parts.push(t.row(outs, i)?);
            }
            t.concat(&parts)
        }),
    ));
    out
}

const GEO_TRAIN: &str = "\
what is the capital of texas ?\tanswer(A,(capital(A),loc(A,B),const(B,stateid(texas))))
how big is ohio ?\tanswer(A,(size(B,A),const(B,stateid(ohio))))
what rivers are in utah ?\tanswer(A,(river(A),loc(A,B),const(B,stateid(utah))))
which states border iowa ?\tanswer(A,(state(A),next_to(A,B),const(B,stateid(iowa))))
what is the capital of ohio ?\tanswer(A,(capital(A),loc(A,B),const(B,stateid(ohio))))
how big is texas ?\tanswer(A,(size(B,A),const(B,stateid(texas))))
what rivers are in iowa ?\tanswer(A,(river(A),loc(A,B),const(B,stateid(iowa))))
which states border utah ?\tanswer(A,(state(A),next_to(A,B),const(B,stateid(utah))))
how big is utah ?\tanswer(A,(size(B,A),const(B,stateid(utah))))
what rivers are in texas ?\tanswer(A,(river(A),loc(A,B),const(B,stateid(texas))))
";

const GEO_DEV: &str = "\
what is the capital of utah ?\tanswer(A,(capital(A),loc(A,B),const(B,stateid(utah))))
how big is iowa ?\tanswer(A,(size(B,A),const(B,stateid(iowa))))
which states border ohio ?\tanswer(A,(state(A),next_to(A,B),const(B,stateid(ohio))))
";

/// Writes a 10-pair geoquery-style corpus into `dir` and returns a small,
/// fast configuration that reads it.
pub fn tiny_geo_config(dir: &Path) -> ExperimentConfig {
    let train = dir.join("train.tsv");
    let dev = dir.join("dev.tsv");
    fs::write(&train, GEO_TRAIN).unwrap();
    fs::write(&dev, GEO_DEV).unwrap();
    ExperimentConfig {
        train_path: Some(train),
        dev_path: Some(dev),
        embed_dim: 8,
        hidden_dim: 10,
        lr: 0.01,
        epochs: Some(2),
        num_filters: 1,
        num_seeds: 1,
        ..ExperimentConfig::default()
    }
}
