//! Central finite-difference checks for every differentiable piece.

use noisyd_ct::losses::{ctc_loss, rnnt_loss, CtcOutcome};
use noisyd_ct::noisyd::{l_con, l_r, Disentangler, NoisyD};
use noisyd_ct::numerics::layers::{glu, lstm_cell};
use noisyd_ct::numerics::{
    finite_diff_check, finite_diff_check_params, Graph, Session, Tensor, Var,
};
use noisyd_ct::training::{stage_objective, Model, Stage};
use noisyd_ct::transducer::BLANK;
use noisyd_ct::Result;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::*;

pub const EPS: f64 = 1e-5;

type Unary = Box<dyn Fn(&mut Graph, Var) -> Result<Var>>;

/// A primitive check: input shape plus a graph builder that receives the
/// checked input and fixed random companions drawn from `rng`.
struct Prim {
    name: &'static str,
    shape: Vec<usize>,
    build: Box<dyn Fn(&mut ChaCha8Rng) -> Unary>,
}

fn prim(
    name: &'static str,
    shape: &[usize],
    build: impl Fn(&mut ChaCha8Rng) -> Unary + 'static,
) -> Prim {
    Prim {
        name,
        shape: shape.to_vec(),
        build: Box::new(build),
    }
}

fn c(t: &Tensor) -> Tensor {
    t.clone()
}

fn primitives() -> Vec<Prim> {
    vec![
        prim("matmul.lhs", &[3, 4], |r| {
            let b = rand_tensor(r, &[4, 2], 1.0);
            Box::new(move |g, x| {
                let b = g.constant(c(&b));
                let y = g.matmul(x, b)?;
                reduce(g, y)
            })
        }),
        prim("matmul.rhs", &[4, 2], |r| {
            let a = rand_tensor(r, &[3, 4], 1.0);
            Box::new(move |g, x| {
                let a = g.constant(c(&a));
                let y = g.matmul(a, x)?;
                reduce(g, y)
            })
        }),
        prim("matmul_nt.lhs", &[3, 4], |r| {
            let b = rand_tensor(r, &[2, 4], 1.0);
            Box::new(move |g, x| {
                let b = g.constant(c(&b));
                let y = g.matmul_nt(x, b)?;
                reduce(g, y)
            })
        }),
        prim("matmul_nt.rhs", &[2, 4], |r| {
            let a = rand_tensor(r, &[3, 4], 1.0);
            Box::new(move |g, x| {
                let a = g.constant(c(&a));
                let y = g.matmul_nt(a, x)?;
                reduce(g, y)
            })
        }),
        prim("add_row_bias.bias", &[4], |r| {
            let a = rand_tensor(r, &[3, 4], 1.0);
            Box::new(move |g, x| {
                let a = g.constant(c(&a));
                let y = g.add_row_bias(a, x)?;
                reduce(g, y)
            })
        }),
        prim("linear.weight", &[4, 3], |r| {
            let a = rand_tensor(r, &[2, 4], 1.0);
            let b = rand_tensor(r, &[3], 1.0);
            Box::new(move |g, x| {
                let a = g.constant(c(&a));
                let b = g.constant(c(&b));
                let y = g.linear(a, x, Some(b))?;
                reduce(g, y)
            })
        }),
        prim("add", &[2, 3], |r| {
            let b = rand_tensor(r, &[2, 3], 1.0);
            Box::new(move |g, x| {
                let b = g.constant(c(&b));
                let y = g.add(x, b)?;
                reduce(g, y)
            })
        }),
        prim("sub", &[2, 3], |r| {
            let b = rand_tensor(r, &[2, 3], 1.0);
            Box::new(move |g, x| {
                let b = g.constant(c(&b));
                let y = g.sub(b, x)?;
                reduce(g, y)
            })
        }),
        prim("mul", &[2, 3], |r| {
            let b = rand_tensor(r, &[2, 3], 1.0);
            Box::new(move |g, x| {
                let b = g.constant(c(&b));
                let y = g.mul(x, b)?;
                let y = g.mul(y, x)?;
                reduce(g, y)
            })
        }),
        prim("scale", &[2, 3], |_| {
            Box::new(|g, x| {
                let y = g.scale(x, -1.7);
                reduce(g, y)
            })
        }),
        prim("relu", &[3, 3], |_| {
            Box::new(|g, x| {
                let y = g.relu(x);
                reduce(g, y)
            })
        }),
        prim("sigmoid", &[3, 3], |_| {
            Box::new(|g, x| {
                let y = g.sigmoid(x);
                reduce(g, y)
            })
        }),
        prim("silu", &[3, 3], |_| {
            Box::new(|g, x| {
                let y = g.silu(x);
                reduce(g, y)
            })
        }),
        prim("tanh", &[3, 3], |_| {
            Box::new(|g, x| {
                let y = g.tanh(x);
                reduce(g, y)
            })
        }),
        prim("softmax", &[3, 4], |_| {
            Box::new(|g, x| {
                let y = g.softmax(x);
                reduce(g, y)
            })
        }),
        prim("log_softmax", &[3, 4], |_| {
            Box::new(|g, x| {
                let y = g.log_softmax(x);
                reduce(g, y)
            })
        }),
        prim("layer_norm.x", &[3, 5], |r| {
            let gm = rand_tensor(r, &[5], 1.0);
            let bt = rand_tensor(r, &[5], 1.0);
            Box::new(move |g, x| {
                let gm = g.constant(c(&gm));
                let bt = g.constant(c(&bt));
                let y = g.layer_norm(x, gm, bt)?;
                reduce(g, y)
            })
        }),
        prim("layer_norm.gamma", &[5], |r| {
            let a = rand_tensor(r, &[3, 5], 1.0);
            let bt = rand_tensor(r, &[5], 1.0);
            Box::new(move |g, x| {
                let a = g.constant(c(&a));
                let bt = g.constant(c(&bt));
                let y = g.layer_norm(a, x, bt)?;
                reduce(g, y)
            })
        }),
        prim("layer_norm.beta", &[5], |r| {
            let a = rand_tensor(r, &[3, 5], 1.0);
            let gm = rand_tensor(r, &[5], 1.0);
            Box::new(move |g, x| {
                let a = g.constant(c(&a));
                let gm = g.constant(c(&gm));
                let y = g.layer_norm(a, gm, x)?;
                reduce(g, y)
            })
        }),
        prim("depthwise_conv1d.x", &[5, 3], |r| {
            let w = rand_tensor(r, &[3, 3], 1.0);
            let b = rand_tensor(r, &[3], 1.0);
            Box::new(move |g, x| {
                let w = g.constant(c(&w));
                let b = g.constant(c(&b));
                let y = g.depthwise_conv1d(x, w, b)?;
                reduce(g, y)
            })
        }),
        prim("depthwise_conv1d.w", &[3, 3], |r| {
            let a = rand_tensor(r, &[5, 3], 1.0);
            let b = rand_tensor(r, &[3], 1.0);
            Box::new(move |g, x| {
                let a = g.constant(c(&a));
                let b = g.constant(c(&b));
                let y = g.depthwise_conv1d(a, x, b)?;
                reduce(g, y)
            })
        }),
        prim("depthwise_conv1d.b", &[3], |r| {
            let a = rand_tensor(r, &[5, 3], 1.0);
            let w = rand_tensor(r, &[3, 3], 1.0);
            Box::new(move |g, x| {
                let a = g.constant(c(&a));
                let w = g.constant(c(&w));
                let y = g.depthwise_conv1d(a, w, x)?;
                reduce(g, y)
            })
        }),
        prim("conv2d.x", &[2, 5, 6], |r| {
            let w = rand_tensor(r, &[3, 2, 3, 3], 1.0);
            let b = rand_tensor(r, &[3], 1.0);
            Box::new(move |g, x| {
                let w = g.constant(c(&w));
                let b = g.constant(c(&b));
                let y = g.conv2d(x, w, b, 2, 1)?;
                reduce(g, y)
            })
        }),
        prim("conv2d.w", &[3, 2, 3, 3], |r| {
            let a = rand_tensor(r, &[2, 5, 6], 1.0);
            let b = rand_tensor(r, &[3], 1.0);
            Box::new(move |g, x| {
                let a = g.constant(c(&a));
                let b = g.constant(c(&b));
                let y = g.conv2d(a, x, b, 2, 1)?;
                reduce(g, y)
            })
        }),
        prim("conv2d.b", &[3], |r| {
            let a = rand_tensor(r, &[2, 5, 6], 1.0);
            let w = rand_tensor(r, &[3, 2, 3, 3], 1.0);
            Box::new(move |g, x| {
                let a = g.constant(c(&a));
                let w = g.constant(c(&w));
                let y = g.conv2d(a, w, x, 2, 1)?;
                reduce(g, y)
            })
        }),
        prim("chw_to_rows", &[2, 3, 4], |_| {
            Box::new(|g, x| {
                let y = g.chw_to_rows(x)?;
                reduce(g, y)
            })
        }),
        prim("concat_cols", &[3, 2], |r| {
            let b = rand_tensor(r, &[3, 4], 1.0);
            Box::new(move |g, x| {
                let b = g.constant(c(&b));
                let y = g.concat_cols(&[b, x, x])?;
                reduce(g, y)
            })
        }),
        prim("concat_rows", &[2, 3], |r| {
            let b = rand_tensor(r, &[1, 3], 1.0);
            Box::new(move |g, x| {
                let b = g.constant(c(&b));
                let y = g.concat_rows(&[x, b, x])?;
                reduce(g, y)
            })
        }),
        prim("slice_cols", &[3, 5], |_| {
            Box::new(|g, x| {
                let y = g.slice_cols(x, 1, 3)?;
                reduce(g, y)
            })
        }),
        prim("slice_rows", &[5, 3], |_| {
            Box::new(|g, x| {
                let y = g.slice_rows(x, 2, 2)?;
                reduce(g, y)
            })
        }),
        prim("transpose", &[3, 4], |_| {
            Box::new(|g, x| {
                let y = g.transpose(x)?;
                reduce(g, y)
            })
        }),
        prim("outer_add.lhs", &[3, 4], |r| {
            let b = rand_tensor(r, &[2, 4], 1.0);
            Box::new(move |g, x| {
                let b = g.constant(c(&b));
                let y = g.outer_add(x, b)?;
                let y = g.tanh(y);
                reduce(g, y)
            })
        }),
        prim("outer_add.rhs", &[2, 4], |r| {
            let a = rand_tensor(r, &[3, 4], 1.0);
            Box::new(move |g, x| {
                let a = g.constant(c(&a));
                let y = g.outer_add(a, x)?;
                let y = g.tanh(y);
                reduce(g, y)
            })
        }),
        prim("gather_rows", &[4, 3], |_| {
            Box::new(|g, x| {
                let y = g.gather_rows(x, &[None, Some(2), Some(0), Some(2)])?;
                reduce(g, y)
            })
        }),
        prim("mask_mul", &[2, 3], |_| {
            Box::new(|g, x| {
                let y = g.mask_mul(x, vec![0.0, 2.0, 1.0, -1.0, 0.5, 3.0])?;
                let y = g.mul(y, x)?;
                reduce(g, y)
            })
        }),
        prim("sum", &[2, 3], |_| {
            Box::new(|g, x| {
                let y = g.mul(x, x)?;
                Ok(g.sum(y))
            })
        }),
        prim("mean", &[2, 3], |_| {
            Box::new(|g, x| {
                let y = g.mul(x, x)?;
                Ok(g.mean(y))
            })
        }),
        prim("mse", &[3, 4], |r| {
            let b = rand_tensor(r, &[3, 4], 1.0);
            Box::new(move |g, x| {
                let b = g.constant(c(&b));
                g.mse(x, b)
            })
        }),
        prim("glu", &[3, 6], |_| {
            Box::new(|g, x| {
                let y = glu(g, x)?;
                reduce(g, y)
            })
        }),
        prim("lstm_cell.x", &[1, 3], |r| {
            let h = rand_tensor(r, &[1, 2], 1.0);
            let cc = rand_tensor(r, &[1, 2], 1.0);
            let wi = rand_tensor(r, &[3, 8], 1.0);
            let wh = rand_tensor(r, &[2, 8], 1.0);
            let b = rand_tensor(r, &[8], 1.0);
            Box::new(move |g, x| {
                let (h, cc) = (g.constant(c(&h)), g.constant(c(&cc)));
                let (wi, wh, b) = (g.constant(c(&wi)), g.constant(c(&wh)), g.constant(c(&b)));
                let (h2, c2) = lstm_cell(g, x, h, cc, wi, wh, b)?;
                let y = g.concat_cols(&[h2, c2])?;
                reduce(g, y)
            })
        }),
        prim("lstm_cell.state", &[1, 2], |r| {
            let x = rand_tensor(r, &[1, 3], 1.0);
            let wi = rand_tensor(r, &[3, 8], 1.0);
            let wh = rand_tensor(r, &[2, 8], 1.0);
            let b = rand_tensor(r, &[8], 1.0);
            Box::new(move |g, s| {
                let xv = g.constant(c(&x));
                let (wi, wh, b) = (g.constant(c(&wi)), g.constant(c(&wh)), g.constant(c(&b)));
                let (h2, c2) = lstm_cell(g, xv, s, s, wi, wh, b)?;
                let (h3, c3) = lstm_cell(g, xv, h2, c2, wi, wh, b)?;
                let y = g.concat_cols(&[h3, c3])?;
                reduce(g, y)
            })
        }),
        prim("lstm_cell.weights", &[3, 8], |r| {
            let x = rand_tensor(r, &[1, 3], 1.0);
            let h = rand_tensor(r, &[1, 2], 1.0);
            let cc = rand_tensor(r, &[1, 2], 1.0);
            let wh = rand_tensor(r, &[2, 8], 1.0);
            let b = rand_tensor(r, &[8], 1.0);
            Box::new(move |g, w| {
                let xv = g.constant(c(&x));
                let (h, cc) = (g.constant(c(&h)), g.constant(c(&cc)));
                let (wh, b) = (g.constant(c(&wh)), g.constant(c(&b)));
                let (h2, c2) = lstm_cell(g, xv, h, cc, w, wh, b)?;
                let y = g.concat_cols(&[h2, c2])?;
                reduce(g, y)
            })
        }),
    ]
}

/// Worst relative error per named check over `points` random draws.
pub fn run(points: usize, seed: u64) -> Vec<(String, f64)> {
    let mut out = Vec::new();
    for p in primitives() {
        let mut worst: f64 = 0.0;
        for k in 0..points {
            let mut r = rng(seed ^ (k as u64 * 7919) ^ hash(p.name));
            let x = rand_tensor(&mut r, &p.shape, 1.5);
            let f = (p.build)(&mut r);
            worst = worst.max(finite_diff_check(|g, x| f(g, x), &x, EPS).unwrap());
        }
        out.push((format!("primitive {}", p.name), worst));
    }
    out.extend(losses(points, seed));
    out.extend(modules(points, seed));
    out
}

fn hash(name: &str) -> u64 {
    name.bytes().fold(1469598103934665603u64, |h, b| {
        (h ^ b as u64).wrapping_mul(1099511628211)
    })
}

fn losses(points: usize, seed: u64) -> Vec<(String, f64)> {
    let (mut ctc, mut rnnt) = (0.0f64, 0.0f64);
    for k in 0..points {
        let mut r = rng(seed ^ 0xC7C ^ k as u64);
        let (t, v) = (r.gen_range(2..=5), 4);
        let u = r.gen_range(1..=t.min(3));
        let target: Vec<usize> = (0..u).map(|_| r.gen_range(1..v)).collect();
        let logits = rand_tensor(&mut r, &[t, v], 2.0);
        let e = finite_diff_check(
            |g, x| {
                let lp = g.log_softmax(x);
                match ctc_loss(g, lp, &target, BLANK)? {
                    CtcOutcome::Loss(l) => Ok(l),
                    CtcOutcome::NoPath => Ok(g.sum(lp)),
                }
            },
            &logits,
            EPS,
        )
        .unwrap();
        ctc = ctc.max(e);
        let lat = rand_tensor(&mut r, &[t * (u + 1), v], 2.0);
        let e = finite_diff_check(
            |g, x| {
                let lp = g.log_softmax(x);
                rnnt_loss(g, lp, t, &target, BLANK)
            },
            &lat,
            EPS,
        )
        .unwrap();
        rnnt = rnnt.max(e);
    }
    vec![("loss ctc".into(), ctc), ("loss rnnt".into(), rnnt)]
}

fn randomize(model: &mut Model, r: &mut ChaCha8Rng) {
    let names: Vec<String> = model.params.names().cloned().collect();
    for n in names {
        let p = model.params.get_mut(&n).unwrap();
        for v in p.value.data_mut() {
            *v = r.gen_range(-0.6..0.6);
        }
    }
}

fn check_params(model: &Model, prefixes: &[&str], f: impl Fn(&mut Session) -> Result<Var>) -> f64 {
    let names: Vec<String> = prefixes
        .iter()
        .flat_map(|p| names_with_prefix(model, p))
        .collect();
    assert!(!names.is_empty(), "no parameters under {:?}", prefixes);
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    finite_diff_check_params(&model.params, &refs, f, EPS).unwrap()
}

fn modules(points: usize, seed: u64) -> Vec<(String, f64)> {
    let mut worst = std::collections::BTreeMap::<&'static str, f64>::new();
    let mut bump = |name: &'static str, e: f64| {
        let w = worst.entry(name).or_insert(0.0);
        *w = w.max(e);
    };
    let mut config = tiny_config();
    config.encoder.dropout = 0.0;
    config.encoder.num_layers = 3;
    for k in 0..points {
        let mut r = rng(seed ^ 0xB10C ^ ((k as u64) << 8));
        let mut model = tiny_model(config.clone(), 3);
        randomize(&mut model, &mut r);
        let item = random_item(&mut r, "g", 13, true);
        let enc = model.encoder();

        let x = item.input.clone();
        bump(
            "module feature encoder",
            check_params(&model, &["encoder.subsample", "encoder.pos_emb"], |s| {
                let z = enc.feature_encoder(s, &x)?;
                reduce(&mut s.graph, z)
            }),
        );
        let z_in = rand_tensor(&mut r, &[4, 4], 1.0);
        bump(
            "module conformer block",
            check_params(&model, &["encoder.layers.0."], |s| {
                let z = s.input(z_in.clone());
                let y = enc.conformer_block(s, 0, z, false)?;
                reduce(&mut s.graph, y)
            }),
        );
        bump(
            "module encoder end-to-end",
            check_params(&model, &["encoder."], |s| {
                let h = enc.encode(s, &x, false)?;
                reduce(&mut s.graph, h)
            }),
        );
        let dec = model.decoder();
        let h = rand_tensor(&mut r, &[3, 4], 1.0);
        let tokens = item.tokens.clone();
        bump(
            "module prediction network",
            check_params(&model, &["decoder.embed", "decoder.lstm"], |s| {
                let p = dec.predict(s, &tokens)?;
                reduce(&mut s.graph, p)
            }),
        );
        bump(
            "module joint network",
            check_params(&model, &["decoder.joint"], |s| {
                let e = s.input(h.clone());
                let p = dec.predict(s, &tokens)?;
                let lat = dec.joint(s, e, p)?;
                reduce(&mut s.graph, lat)
            }),
        );
        bump(
            "module ctc head",
            check_params(&model, &["decoder.ctc"], |s| {
                let e = s.input(h.clone());
                let lp = dec.ctc_logprobs(s, e)?;
                match ctc_loss(&mut s.graph, lp, &tokens, BLANK)? {
                    CtcOutcome::Loss(l) => Ok(l),
                    CtcOutcome::NoPath => reduce(&mut s.graph, lp),
                }
            }),
        );
        let nd: NoisyD = model.noisyd().unwrap();
        let hn = rand_tensor(&mut r, &[3, 4], 1.0);
        let ht = rand_tensor(&mut r, &[3, 4], 1.0);
        bump(
            "module noisyd encoder_c + l_con",
            check_params(&model, &["noisyd.encoder_c."], |s| {
                let x = s.input(hn.clone());
                let t = s.input(ht.clone());
                let c = nd.clean(s, x)?;
                l_con(s, t, c)
            }),
        );
        bump(
            "module noisyd encoder_n",
            check_params(&model, &["noisyd.encoder_n."], |s| {
                let x = s.input(hn.clone());
                let n = nd.noise(s, x)?;
                reduce(&mut s.graph, n)
            }),
        );
        bump(
            "module noisyd decoder_cn + l_r",
            check_params(&model, &["noisyd."], |s| {
                let x = s.input(hn.clone());
                let c = nd.clean(s, x)?;
                let n = nd.noise(s, x)?;
                let rec = nd.reconstruct(s, c, n)?;
                l_r(s, rec, x)
            }),
        );
        for (stage, label, prefixes) in [
            (
                Stage::NoisyD,
                "composite stage-2 objective",
                &["noisyd."][..],
            ),
            (
                Stage::Finetune,
                "composite stage-3 objective",
                &["encoder.", "decoder."][..],
            ),
        ] {
            let it = item.clone();
            let m = &model;
            let nd = &nd;
            bump(
                label,
                check_params(m, prefixes, |s| {
                    Ok(stage_objective(s, m, stage, &it, &it.input, None, nd, false)?.total)
                }),
            );
        }
    }
    worst.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}
