//! Conv1d, BiLSTM and attention against independent plain-loop evaluations.
#![allow(clippy::needless_range_loop)]

use mafn_core::nn::{Activation, Attention, BiLstm, Bound, Conv1d, LstmCell};
use mafn_tensor::{Graph, ParamStore, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_rows(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| (0..cols).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect()
}

fn constants(g: &mut Graph, seq: &[Vec<Vec<f64>>]) -> Vec<Var> {
    seq.iter().map(|x| g.constant(Tensor::from_rows(x).unwrap())).collect()
}

/// Same-padded convolution by explicit loops, summing in the order the
/// layer does: channels within a tap, then taps, then bias.
fn naive_conv(xs: &[Vec<Vec<f64>>], w: &Tensor, b: &Tensor, kernel: usize, relu: bool) -> Vec<Vec<Vec<f64>>> {
    let t_len = xs.len();
    let batch = xs[0].len();
    let channels = xs[0][0].len();
    let filters = b.len();
    let pad = (kernel - 1) / 2;
    let mut out = vec![vec![vec![0.0; filters]; batch]; t_len];
    for t in 0..t_len {
        for n in 0..batch {
            for f in 0..filters {
                let mut acc: Option<f64> = None;
                for j in 0..kernel {
                    let src = t as isize + j as isize - pad as isize;
                    if src < 0 || src >= t_len as isize {
                        continue;
                    }
                    let mut s = 0.0;
                    for c in 0..channels {
                        s += xs[src as usize][n][c] * w.at(j * channels + c, f);
                    }
                    acc = Some(acc.map_or(s, |a| a + s));
                }
                let v = acc.map_or(0.0 + b.data()[f], |a| a + b.data()[f]);
                out[t][n][f] = if relu { v.max(0.0) } else { v };
            }
        }
    }
    out
}

pub fn conv1d_matches_naive_loops_exactly() {
    for seed in 0..30 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let kernel = [1, 2, 3, 5][seed as usize % 4];
        let t_len = rng.gen_range(3..8);
        let conv = Conv1d {
            name: "c".into(),
            channels: rng.gen_range(1..4),
            filters: rng.gen_range(1..4),
            kernel,
            activation: if seed % 2 == 0 {
                Activation::Relu
            } else {
                Activation::Identity
            },
        };
        let mut store = ParamStore::new();
        conv.init(&mut store, &mut rng);
        // nonzero bias so its placement is exercised
        store.insert("c.b", Tensor::from_rows(&rand_rows(&mut rng, 1, conv.filters)).unwrap());
        let xs: Vec<Vec<Vec<f64>>> = (0..t_len).map(|_| rand_rows(&mut rng, 2, conv.channels)).collect();
        let mut g = Graph::new();
        let vars = constants(&mut g, &xs);
        let out = conv.forward(&mut g, &mut Bound::new(&store), &vars).unwrap();
        let want = naive_conv(
            &xs,
            store.get("c.W").unwrap(),
            store.get("c.b").unwrap(),
            kernel,
            conv.activation == Activation::Relu,
        );
        for (t, &o) in out.iter().enumerate() {
            let got = g.value(o);
            for n in 0..2 {
                assert_eq!(got.row(n), want[t][n].as_slice(), "seed {seed} t {t}");
            }
        }
    }
}

fn run_bilstm(bi: &BiLstm, store: &ParamStore, xs: &[Vec<Vec<f64>>]) -> Vec<Vec<f64>> {
    let mut g = Graph::new();
    let vars = constants(&mut g, xs);
    let hs = bi.forward(&mut g, &mut Bound::new(store), &vars).unwrap();
    hs.iter().map(|&h| g.value(h).row(0).to_vec()).collect()
}

pub fn bilstm_halves_are_causal_and_anticausal() {
    let hidden = 3;
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bi = BiLstm::new("b", 2, hidden);
        let mut store = ParamStore::new();
        bi.init(&mut store, &mut rng);
        let t_len = 6;
        let xs: Vec<Vec<Vec<f64>>> = (0..t_len).map(|_| rand_rows(&mut rng, 1, 2)).collect();
        let base = run_bilstm(&bi, &store, &xs);
        let k = rng.gen_range(0..t_len);
        let mut bumped = xs.clone();
        bumped[k][0][1] += 0.5;
        let out = run_bilstm(&bi, &store, &bumped);
        for t in 0..t_len {
            let (f0, b0) = base[t].split_at(hidden);
            let (f1, b1) = out[t].split_at(hidden);
            if t < k {
                assert_eq!(f0, f1, "forward half at {t} saw step {k}");
            } else {
                assert_ne!(f0, f1, "forward half at {t} ignored step {k}");
            }
            if t > k {
                assert_eq!(b0, b1, "backward half at {t} saw step {k}");
            } else {
                assert_ne!(b0, b1, "backward half at {t} ignored step {k}");
            }
        }
    }
}

pub fn bilstm_is_two_unidirectional_runs() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let bi = BiLstm::new("b", 2, 2);
    let mut store = ParamStore::new();
    bi.init(&mut store, &mut rng);
    let xs: Vec<Vec<Vec<f64>>> = (0..5).map(|_| rand_rows(&mut rng, 2, 2)).collect();
    let mut g = Graph::new();
    let vars = constants(&mut g, &xs);
    let mut p = Bound::new(&store);
    let both = bi.forward(&mut g, &mut p, &vars).unwrap();
    let fwd = LstmCell::run(&bi.fwd, &mut g, &mut p, &vars).unwrap();
    let rev: Vec<Var> = vars.iter().rev().copied().collect();
    let bwd = bi.bwd.run(&mut g, &mut p, &rev).unwrap();
    for t in 0..5 {
        let v = g.value(both[t]);
        for n in 0..2 {
            let want: Vec<f64> = g
                .value(fwd[t])
                .row(n)
                .iter()
                .chain(g.value(bwd[4 - t]).row(n))
                .copied()
                .collect();
            assert_eq!(v.row(n), want.as_slice());
        }
    }
}

/// `e_t = v · tanh(h_t W_h + s W_s)`, softmax, weighted sum, all by hand.
fn naive_attention(store: &ParamStore, hs: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let wh = store.get("a.W_h").unwrap();
    let ws = store.get("a.W_s").unwrap();
    let s = store.get("a.s").unwrap();
    let v = store.get("a.v").unwrap();
    let (input, dim) = wh.dims2();
    let query: Vec<f64> = (0..dim)
        .map(|j| (0..dim).map(|i| s.data()[i] * ws.at(i, j)).sum())
        .collect();
    let scores: Vec<f64> = hs
        .iter()
        .map(|h| {
            (0..dim)
                .map(|j| {
                    let pre: f64 = (0..input).map(|i| h[i] * wh.at(i, j)).sum::<f64>() + query[j];
                    pre.tanh() * v.data()[j]
                })
                .sum()
        })
        .collect();
    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = scores.iter().map(|e| (e - m).exp()).sum();
    let alpha: Vec<f64> = scores.iter().map(|e| (e - m).exp() / z).collect();
    let ctx = (0..input)
        .map(|i| hs.iter().zip(&alpha).map(|(h, a)| a * h[i]).sum())
        .collect();
    (ctx, alpha)
}

fn attention_layer(rng: &mut ChaCha8Rng, input: usize) -> (Attention, ParamStore) {
    let att = Attention {
        name: "a".into(),
        input,
        dim: 3,
    };
    let mut store = ParamStore::new();
    att.init(&mut store, rng);
    (att, store)
}

pub fn attention_matches_direct_sum() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (att, store) = attention_layer(&mut rng, 4);
        let hs = rand_rows(&mut rng, 5, 4);
        let mut g = Graph::new();
        let vars: Vec<Var> = hs
            .iter()
            .map(|h| g.constant(Tensor::from_rows(std::slice::from_ref(h)).unwrap()))
            .collect();
        let (ctx, alpha) = att.forward(&mut g, &mut Bound::new(&store), &vars).unwrap();
        let (want_ctx, want_alpha) = naive_attention(&store, &hs);
        let a = g.value(alpha).data();
        assert!((a.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        for (x, y) in a.iter().zip(&want_alpha) {
            assert!((x - y).abs() < 1e-12);
        }
        for (x, y) in g.value(ctx).data().iter().zip(&want_ctx) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

pub fn attention_is_uniform_over_identical_states() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (att, store) = attention_layer(&mut rng, 3);
        let h = rand_rows(&mut rng, 2, 3);
        let t_len = rng.gen_range(1..9);
        let mut g = Graph::new();
        let vars: Vec<Var> = (0..t_len).map(|_| g.constant(Tensor::from_rows(&h).unwrap())).collect();
        let (ctx, alpha) = att.forward(&mut g, &mut Bound::new(&store), &vars).unwrap();
        for n in 0..2 {
            let row = g.value(alpha).row(n);
            assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            assert!(row.iter().all(|&a| (a - 1.0 / t_len as f64).abs() <= 1e-12));
            for (c, hv) in g.value(ctx).row(n).iter().zip(&h[n]) {
                assert!((c - hv).abs() <= 1e-12);
            }
        }
    }
}
