//! Central-difference gradient verification. Every check rebuilds the graph
//! from persistent parameter storage, so perturbing a parameter element and
//! re-running the forward pass gives an independent numeric derivative to
//! compare against backprop.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::corpus::{generate_synthetic_corpus, NoiseChannel, SynthSpec};
use crate::embeddings::{embed_sentence, EmbeddingTable};
use crate::error::Result;
use crate::layers::{
    bilstm, dense, lstm_cell, lstm_sequence, Activation, DenseParams, Direction, LstmParams,
    ParamRegistry,
};
use crate::models::{
    dae_loss, gold_matrix, labels_to_feed, tag_loss, BaseConfig, BaseTagger, CondConfig,
    CondRefiner, CondVariant, DaeConfig, DaeRefiner, LabelFeed,
};
use crate::tensor::{param, Graph, NodeId, Param};

const EPSILON: f64 = 1e-5;
/// Default tolerance on the relative error.
pub const TOL_NONLINEAR: f64 = 1e-4;
/// Tighter tolerance for purely linear ops, where the central difference is
/// exact up to roundoff.
pub const TOL_LINEAR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub max_rel: f64,
    pub tol: f64,
    pub checked: usize,
    pub pass: bool,
}

impl std::fmt::Display for CheckResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {}: max rel {:.3e} (tol {:.0e}, {} elements)",
            if self.pass { "pass" } else { "FAIL" },
            self.name,
            self.max_rel,
            self.tol,
            self.checked
        )
    }
}

fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

/// Compare backprop gradients of `build`'s scalar loss against central
/// differences, for every element of every parameter.
pub fn check<F>(name: &str, params: &[Param], tol: f64, mut build: F) -> Result<CheckResult>
where
    F: FnMut(&mut Graph) -> Result<NodeId>,
{
    crate::adam::zero_grads(params);
    let mut g = Graph::new();
    let loss = build(&mut g)?;
    g.backward(loss)?;
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|p| p.borrow().grad.clone().unwrap_or_else(|| vec![0.0; p.borrow().data.len()]))
        .collect();
    crate::adam::zero_grads(params);

    let eval = |build: &mut F| -> Result<f64> {
        let mut g = Graph::new();
        let loss = build(&mut g)?;
        Ok(g.value(loss)[0])
    };

    let mut max_rel = 0.0f64;
    let mut checked = 0usize;
    for (pi, p) in params.iter().enumerate() {
        let n = p.borrow().data.len();
        for i in 0..n {
            let orig = p.borrow().data[i];
            p.borrow_mut().data[i] = orig + EPSILON;
            let plus = eval(&mut build)?;
            p.borrow_mut().data[i] = orig - EPSILON;
            let minus = eval(&mut build)?;
            p.borrow_mut().data[i] = orig;
            let numeric = (plus - minus) / (2.0 * EPSILON);
            max_rel = max_rel.max(rel_error(analytic[pi][i], numeric));
            checked += 1;
        }
    }
    Ok(CheckResult {
        name: name.into(),
        max_rel,
        tol,
        checked,
        pass: max_rel < tol,
    })
}

fn rand_param<R: Rng>(shape: Vec<usize>, rng: &mut R) -> Param {
    let n: usize = shape.iter().product();
    param(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

fn rand_vec<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn prob_rows<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Vec<f64> {
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows {
        let raw: Vec<f64> = (0..cols).map(|_| rng.gen_range(0.1..1.0)).collect();
        let s: f64 = raw.iter().sum();
        data.extend(raw.iter().map(|v| v / s));
    }
    data
}

fn onehot_rows<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Vec<f64> {
    let mut data = vec![0.0; rows * cols];
    for r in 0..rows {
        data[r * cols + rng.gen_range(0..cols)] = 1.0;
    }
    data
}

/// Elementary-op checks for one seed.
pub fn check_ops(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    // matmul: [3x4]·[4x2], loss = sum
    {
        let a = rand_param(vec![3, 4], &mut rng);
        let b = rand_param(vec![4, 2], &mut rng);
        out.push(check("matmul", &[a.clone(), b.clone()], TOL_LINEAR, |g| {
            let na = g.param(&a);
            let nb = g.param(&b);
            let m = g.matmul(na, nb)?;
            Ok(g.sum(m))
        })?);
    }
    // linear with bias broadcast
    {
        let x = rand_param(vec![3, 4], &mut rng);
        let w = rand_param(vec![5, 4], &mut rng);
        let b = rand_param(vec![5], &mut rng);
        out.push(check("linear", &[x.clone(), w.clone(), b.clone()], TOL_LINEAR, |g| {
            let nx = g.param(&x);
            let nw = g.param(&w);
            let nb = g.param(&b);
            let y = g.linear(nx, nw, Some(nb))?;
            Ok(g.sum(y))
        })?);
    }
    // add and mul, with suffix broadcasting; squared to make add nontrivial
    {
        let a = rand_param(vec![2, 3], &mut rng);
        let b = rand_param(vec![3], &mut rng);
        out.push(check("add+mul broadcast", &[a.clone(), b.clone()], TOL_NONLINEAR, |g| {
            let na = g.param(&a);
            let nb = g.param(&b);
            let s = g.add(na, nb)?;
            let sq = g.mul(s, s)?;
            Ok(g.sum(sq))
        })?);
    }
    // sigmoid and tanh
    {
        let x = rand_param(vec![2, 5], &mut rng);
        out.push(check("sigmoid", &[x.clone()], TOL_NONLINEAR, |g| {
            let nx = g.param(&x);
            let y = g.sigmoid(nx);
            Ok(g.sum(y))
        })?);
        let z = rand_param(vec![7], &mut rng);
        out.push(check("tanh", &[z.clone()], TOL_NONLINEAR, |g| {
            let nz = g.param(&z);
            let y = g.tanh(nz);
            Ok(g.sum(y))
        })?);
    }
    // concat + slice round trip through a nonlinearity
    {
        let a = rand_param(vec![2, 3], &mut rng);
        let b = rand_param(vec![2, 4], &mut rng);
        out.push(check("concat+slice", &[a.clone(), b.clone()], TOL_NONLINEAR, |g| {
            let na = g.param(&a);
            let nb = g.param(&b);
            let cat = g.concat(na, nb, 1)?;
            let sl = g.slice(cat, 1, 2, 3)?;
            let y = g.tanh(sl);
            Ok(g.sum(y))
        })?);
    }
    // softmax through a weighted sum (pure sum has zero gradient)
    {
        let x = rand_param(vec![3, 5], &mut rng);
        let w = param(vec![3, 5], rand_vec(15, &mut rng));
        w.borrow_mut().requires_grad = false;
        out.push(check("softmax", &[x.clone()], TOL_NONLINEAR, |g| {
            let nx = g.param(&x);
            let s = g.softmax(nx);
            let nw = g.param(&w);
            let prod = g.mul(s, nw)?;
            Ok(g.sum(prod))
        })?);
    }
    // cross-entropy over softmax rows, with a masked-out row
    {
        let x = rand_param(vec![4, 5], &mut rng);
        let target = onehot_rows(4, 5, &mut rng);
        out.push(check("softmax+cross_entropy", &[x.clone()], TOL_NONLINEAR, {
            let target = target.clone();
            move |g| {
                let nx = g.param(&x);
                let p = g.softmax(nx);
                let t = g.constant(vec![4, 5], target.clone());
                g.cross_entropy(p, t, &[1.0, 1.0, 1.0, 0.0])
            }
        })?);
    }
    // cross-entropy directly on probability rows
    {
        let raw = prob_rows(3, 4, &mut rng);
        let x = param(vec![3, 4], raw);
        let target = onehot_rows(3, 4, &mut rng);
        out.push(check("cross_entropy", &[x.clone()], TOL_NONLINEAR, {
            let target = target.clone();
            move |g| {
                let nx = g.param(&x);
                let t = g.constant(vec![3, 4], target.clone());
                g.cross_entropy(nx, t, &[1.0, 1.0, 1.0])
            }
        })?);
    }
    // mse with mask
    {
        let x = rand_param(vec![4, 3], &mut rng);
        let target = rand_vec(12, &mut rng);
        out.push(check("mse", &[x.clone()], TOL_NONLINEAR, {
            let target = target.clone();
            move |g| {
                let nx = g.param(&x);
                let t = g.constant(vec![4, 3], target.clone());
                g.mse(nx, t, &[1.0, 0.0, 1.0, 1.0])
            }
        })?);
    }
    // scale and sum are linear
    {
        let x = rand_param(vec![6], &mut rng);
        out.push(check("scale+sum", &[x.clone()], TOL_LINEAR, |g| {
            let nx = g.param(&x);
            let y = g.scale(nx, -2.5);
            Ok(g.sum(y))
        })?);
    }
    // dropout with a replayed mask: the same seed is drawn on every rebuild
    {
        let x = rand_param(vec![4, 4], &mut rng);
        let mask_seed = rng.gen::<u64>();
        out.push(check("dropout", &[x.clone()], TOL_NONLINEAR, move |g| {
            let nx = g.param(&x);
            let mut mask_rng = ChaCha20Rng::seed_from_u64(mask_seed);
            let y = g.dropout(nx, 0.5, true, &mut mask_rng)?;
            let t = g.tanh(y);
            Ok(g.sum(t))
        })?);
    }
    Ok(out)
}

/// Layer checks for one seed.
pub fn check_layers(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let (d, h, t) = (6usize, 4usize, 5usize);

    // single LSTM cell
    {
        let p = LstmParams::new(d, h, &mut rng)?;
        let reg = {
            let mut r = ParamRegistry::new();
            r.register("w", &p.w);
            r.register("u", &p.u);
            r.register("b", &p.b);
            r.params()
        };
        let x = rand_vec(d, &mut rng);
        let h0 = rand_vec(h, &mut rng);
        let c0 = rand_vec(h, &mut rng);
        out.push(check("lstm_cell", &reg, TOL_NONLINEAR, {
            let (x, h0, c0) = (x.clone(), h0.clone(), c0.clone());
            move |g| {
                let nodes = p.to_nodes(g);
                let nx = g.constant(vec![1, d], x.clone());
                let nh = g.constant(vec![1, h], h0.clone());
                let nc = g.constant(vec![1, h], c0.clone());
                let (hn, cn) = lstm_cell(g, nx, nh, nc, &nodes)?;
                let both = g.concat(hn, cn, 1)?;
                Ok(g.sum(both))
            }
        })?);
    }
    // sequence in both directions
    for direction in [Direction::Forward, Direction::Backward] {
        let p = LstmParams::new(d, h, &mut rng)?;
        let params = {
            let mut r = ParamRegistry::new();
            r.register("w", &p.w);
            r.register("u", &p.u);
            r.register("b", &p.b);
            r.params()
        };
        let xs = rand_vec(t * d, &mut rng);
        let name = match direction {
            Direction::Forward => "lstm_sequence fwd",
            Direction::Backward => "lstm_sequence bwd",
        };
        out.push(check(name, &params, TOL_NONLINEAR, {
            let xs = xs.clone();
            move |g| {
                let nodes = p.to_nodes(g);
                let nx = g.constant(vec![t, d], xs.clone());
                let hs = lstm_sequence(g, nx, &nodes, direction, None, None)?;
                let sq = g.mul(hs, hs)?;
                Ok(g.sum(sq))
            }
        })?);
    }
    // bilstm
    {
        let f = LstmParams::new(d, h, &mut rng)?;
        let b = LstmParams::new(d, h, &mut rng)?;
        let params = {
            let mut r = ParamRegistry::new();
            for (n, p) in [("f", &f), ("b", &b)] {
                r.register(format!("{n}.w"), &p.w);
                r.register(format!("{n}.u"), &p.u);
                r.register(format!("{n}.b"), &p.b);
            }
            r.params()
        };
        let xs = rand_vec(t * d, &mut rng);
        out.push(check("bilstm", &params, TOL_NONLINEAR, {
            let xs = xs.clone();
            move |g| {
                let fn_ = f.to_nodes(g);
                let bn = b.to_nodes(g);
                let nx = g.constant(vec![t, d], xs.clone());
                let hs = bilstm(g, nx, &fn_, &bn, None)?;
                let sq = g.mul(hs, hs)?;
                Ok(g.sum(sq))
            }
        })?);
    }
    // dense layers with each activation
    for (act, name) in [
        (Activation::None, "dense none"),
        (Activation::Tanh, "dense tanh"),
        (Activation::Softmax, "dense softmax"),
    ] {
        let p = DenseParams::new(d, 5, act, &mut rng)?;
        let params = vec![p.w.clone(), p.b.clone()];
        let xs = rand_vec(t * d, &mut rng);
        let target = onehot_rows(t, 5, &mut rng);
        let tol = if matches!(act, Activation::None) { TOL_LINEAR } else { TOL_NONLINEAR };
        out.push(check(name, &params, tol, {
            let (xs, target) = (xs.clone(), target.clone());
            move |g| {
                let nx = g.constant(vec![t, d], xs.clone());
                let y = dense(g, nx, &p)?;
                match act {
                    Activation::Softmax => {
                        let tgt = g.constant(vec![t, 5], target.clone());
                        g.cross_entropy(y, tgt, &[1.0; 5])
                    }
                    _ => Ok(g.sum(y)),
                }
            }
        })?);
    }
    Ok(out)
}

/// Full-model checks at reduced size: D=6, H=4, C=5, T=5.
pub fn check_models(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let (d, h, c, t) = (6usize, 4usize, 5usize, 5usize);
    let emb = rand_vec(t * d, &mut rng);
    let gold = onehot_rows(t, c, &mut rng);
    let noisy = onehot_rows(t, c, &mut rng);
    let mask = vec![1.0; t];

    // base tagger with dropout active and replayed
    {
        let cfg = BaseConfig { emb_dim: d, hidden: h, classes: c, dropout: 0.3 };
        let base = BaseTagger::new(cfg, &mut rng)?;
        let drop_seed = rng.gen::<u64>();
        let params = base.registry().params();
        out.push(check("model base", &params, TOL_NONLINEAR, {
            let (emb, gold, mask) = (emb.clone(), gold.clone(), mask.clone());
            move |g| {
                let ne = g.constant(vec![t, d], emb.clone());
                let mut drop_rng = ChaCha20Rng::seed_from_u64(drop_seed);
                let probs = base.forward(g, ne, Some(&mask), true, &mut drop_rng)?;
                let ngold = g.constant(vec![t, c], gold.clone());
                tag_loss(g, probs, ngold, &mask)
            }
        })?);
    }
    // base tagger again with trailing pad rows masked out
    {
        let cfg = BaseConfig { emb_dim: d, hidden: h, classes: c, dropout: 0.0 };
        let base = BaseTagger::new(cfg, &mut rng)?;
        let pad_mask = vec![1.0, 1.0, 1.0, 0.0, 0.0];
        let params = base.registry().params();
        out.push(check("model base padded", &params, TOL_NONLINEAR, {
            let (emb, gold, pad_mask) = (emb.clone(), gold.clone(), pad_mask.clone());
            move |g| {
                let ne = g.constant(vec![t, d], emb.clone());
                let mut drop_rng = ChaCha20Rng::seed_from_u64(0);
                let probs = base.forward(g, ne, Some(&pad_mask), false, &mut drop_rng)?;
                let ngold = g.constant(vec![t, c], gold.clone());
                tag_loss(g, probs, ngold, &pad_mask)
            }
        })?);
    }
    // DAE refiner, joint loss
    {
        let cfg = DaeConfig {
            emb_dim: d,
            classes: c,
            enc_hidden: h,
            bottleneck: 3,
            dec_hidden: h,
            lambda: 0.7,
            decoder_reversed: false,
        };
        let dae = DaeRefiner::new(cfg, &mut rng)?;
        let params = dae.registry().params();
        out.push(check("model dae", &params, TOL_NONLINEAR, {
            let (emb, gold, noisy, mask) = (emb.clone(), gold.clone(), noisy.clone(), mask.clone());
            move |g| {
                let ne = g.constant(vec![t, d], emb.clone());
                let nn = g.constant(vec![t, c], noisy.clone());
                let (recon, tags) = dae.forward(g, ne, nn, Some(&mask))?;
                let ngold = g.constant(vec![t, c], gold.clone());
                dae_loss(g, recon, tags, ne, ngold, &mask, 0.7)
            }
        })?);
    }
    // conditioning refiners
    for variant in [CondVariant::Bilstm, CondVariant::Dense] {
        let cfg = CondConfig {
            variant,
            emb_dim: d,
            classes: c,
            hidden: h,
            widths: vec![8, 6],
            dropout: 0.3,
        };
        let cond = CondRefiner::new(cfg, &mut rng)?;
        let drop_seed = rng.gen::<u64>();
        let params = cond.registry().params();
        let name = match variant {
            CondVariant::Bilstm => "model cond-bilstm",
            CondVariant::Dense => "model cond-dense",
        };
        out.push(check(name, &params, TOL_NONLINEAR, {
            let (emb, gold, noisy, mask) = (emb.clone(), gold.clone(), noisy.clone(), mask.clone());
            move |g| {
                let ne = g.constant(vec![t, d], emb.clone());
                let nn = g.constant(vec![t, c], noisy.clone());
                let mut drop_rng = ChaCha20Rng::seed_from_u64(drop_seed);
                let tags = cond.forward(g, ne, nn, Some(&mask), true, &mut drop_rng)?;
                let ngold = g.constant(vec![t, c], gold.clone());
                tag_loss(g, tags, ngold, &mask)
            }
        })?);
    }
    Ok(out)
}

/// The full suite: ops and layers across ten seeds, all four model families
/// once each.
pub fn run_suite(base_seed: u64) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for s in 0..10u64 {
        let seed = base_seed.wrapping_add(s);
        for mut r in check_ops(seed)? {
            r.name = format!("{} (seed {seed})", r.name);
            out.push(r);
        }
    }
    for s in 0..2u64 {
        let seed = base_seed.wrapping_add(s);
        for mut r in check_layers(seed)? {
            r.name = format!("{} (seed {seed})", r.name);
            out.push(r);
        }
        for mut r in check_models(seed)? {
            r.name = format!("{} (seed {seed})", r.name);
            out.push(r);
        }
    }
    Ok(out)
}

/// Sanity data path used by tests: a tiny synthetic batch fed end to end.
pub fn smoke_batch(seed: u64) -> Result<f64> {
    let spec = SynthSpec { seed, n_sentences: 4, ..SynthSpec::default() };
    let corpus = generate_synthetic_corpus(&spec);
    let words: Vec<String> = corpus
        .sentences
        .iter()
        .flat_map(|s| s.tokens.iter().cloned())
        .collect();
    let table = EmbeddingTable::random(words, 6, seed);
    let cfg = BaseConfig { emb_dim: 6, hidden: 4, classes: 13, dropout: 0.5 };
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let base = BaseTagger::new(cfg, &mut rng)?;
    let s = &corpus.sentences[0];
    let emb = embed_sentence(&table, &s.tokens)?;
    let mut g = Graph::new();
    let ne = g.constant(vec![30, 6], emb.matrix.clone());
    let probs = base.forward(&mut g, ne, Some(&emb.mask), false, &mut rng)?;
    let gold = g.constant(vec![30, 13], gold_matrix(&s.tags, 13));
    let loss = tag_loss(&mut g, probs, gold, &emb.mask)?;
    // keep the noisy-label helpers linked into the smoke path
    let noisy = NoiseChannel { flip_rate: 0.3, seed }.corrupt(&corpus);
    let _ = labels_to_feed(&noisy, 13, LabelFeed::HardOnehot);
    Ok(g.value(loss)[0])
}
