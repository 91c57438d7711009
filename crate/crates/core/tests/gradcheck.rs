//! Analytic gradients against central finite differences, for individual
//! tape operations and for whole toy models.

use emograph::corpus::{count_cooccurrence, CorpusOptions, Example, LabelSpace, Vocabulary, RESERVED};
use emograph::emograph::EmotionGraph;
use emograph::model::{Classifier, EncoderConfig, EncoderKind, HeadConfig, HeadKind, Mode, ModelConfig};
use emograph::numcore::{init, InitScheme, Rng, Tape, Tensor, Var};

const STEP: f64 = 1e-4;
/// Gradients smaller than this are compared absolutely.
const FLOOR: f64 = 1e-6;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(FLOOR)
}

/// Largest relative error over every entry of every input.
fn check_op(inputs: &[Tensor], f: impl Fn(&mut Tape, &[Var]) -> Var) -> f64 {
    let eval = |vals: &[Tensor]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.param(t.clone())).collect();
        let out = f(&mut tape, &vars);
        (tape, vars, out)
    };
    let (tape, vars, out) = eval(inputs);
    let grads = tape.backward(out).unwrap();
    let mut worst: f64 = 0.0;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[k]);
        for idx in 0..input.numel() {
            let mut shifted = inputs.to_vec();
            shifted[k].data_mut()[idx] += STEP;
            let (t, _, o) = eval(&shifted);
            let up = t.value(o).item().unwrap();
            shifted[k].data_mut()[idx] -= 2.0 * STEP;
            let (t, _, o) = eval(&shifted);
            let down = t.value(o).item().unwrap();
            worst = worst.max(rel_err(analytic.data()[idx], (up - down) / (2.0 * STEP)));
        }
    }
    worst
}

fn rand(shape: &[usize], seed: u64) -> Tensor {
    init(shape, InitScheme::Uniform(-1.0, 1.0), seed)
}

/// Random weights so that non-linear ops see a generic scalar objective.
fn weigh(tape: &mut Tape, x: Var, seed: u64) -> Var {
    let shape = tape.value(x).shape().to_vec();
    let w = tape.constant(rand(&shape, seed ^ 0xabc));
    let y = tape.mul(x, w).unwrap();
    tape.sum(y)
}

#[test]
fn elementary_ops() {
    for seed in 0..5 {
        let a = rand(&[3, 4], seed);
        let b = rand(&[4, 2], seed + 100);
        let c = rand(&[3, 4], seed + 200);
        let row = rand(&[1, 4], seed + 300);
        let cases: Vec<(&str, f64)> = vec![
            ("matmul", check_op(&[a.clone(), b.clone()], |t, v| {
                let y = t.matmul(v[0], v[1]).unwrap();
                weigh(t, y, seed)
            })),
            ("transpose", check_op(std::slice::from_ref(&a), |t, v| {
                let y = t.transpose(v[0]).unwrap();
                weigh(t, y, seed)
            })),
            ("add_mul_scale", check_op(&[a.clone(), c.clone()], |t, v| {
                let s = t.add(v[0], v[1]).unwrap();
                let m = t.mul(s, v[1]).unwrap();
                let y = t.scale(m, -1.7);
                weigh(t, y, seed)
            })),
            ("add_row", check_op(&[a.clone(), row.clone()], |t, v| {
                let y = t.add_row(v[0], v[1]).unwrap();
                weigh(t, y, seed)
            })),
            ("relu_leaky_sigmoid", check_op(std::slice::from_ref(&a), |t, v| {
                let r = t.relu(v[0]);
                let l = t.leaky_relu(v[0], 0.2);
                let s = t.sigmoid(v[0]);
                let y = t.add(r, l).unwrap();
                let y = t.mul(y, s).unwrap();
                weigh(t, y, seed)
            })),
            ("softmax_masked", check_op(std::slice::from_ref(&a), |t, v| {
                let mask: Vec<bool> = (0..12).map(|i| i % 3 != 1).collect();
                let y = t.softmax_rows(v[0], Some(&mask)).unwrap();
                weigh(t, y, seed)
            })),
            ("layer_norm", check_op(&[a.clone(), row.clone(), rand(&[1, 4], seed + 400)], |t, v| {
                let y = t.layer_norm(v[0], v[1], v[2], 1e-5).unwrap();
                weigh(t, y, seed)
            })),
            ("gather_mean", check_op(std::slice::from_ref(&a), |t, v| {
                let g = t.gather_rows(v[0], &[2, 0, 2]).unwrap();
                let y = t.mean_rows(g);
                weigh(t, y, seed)
            })),
            ("concat_slice", check_op(&[a.clone(), c.clone()], |t, v| {
                let cc = t.concat_cols(&[v[0], v[1]]).unwrap();
                let cr = t.concat_rows(&[v[1], v[0]]).unwrap();
                let s1 = t.slice_cols(cc, 2, 7).unwrap();
                let s2 = t.slice_cols(cr, 1, 4).unwrap();
                let a = weigh(t, s1, seed);
                let b = weigh(t, s2, seed + 1);
                t.add(a, b).unwrap()
            })),
            ("bce", check_op(std::slice::from_ref(&a), |t, v| {
                let y = Tensor::new(vec![3, 4], (0..12).map(|i| (i % 2) as f64).collect()).unwrap();
                t.bce_with_logits(v[0], &y).unwrap()
            })),
            ("softmax_xent", check_op(std::slice::from_ref(&a), |t, v| t.softmax_xent(v[0], &[true, false, true, true], &[0, 3, 2]).unwrap())),
        ];
        for (name, err) in cases {
            assert!(err < 1e-5, "{name} seed {seed}: rel err {err:e}");
        }
    }
}

fn toy_model(encoder: EncoderKind, head: HeadKind, mode: Mode, seed: u64) -> (Classifier, Vec<Example>) {
    let labels = LabelSpace::new(["a", "b", "c"]).unwrap();
    let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
    tokens.extend(["w0", "w1", "w2", "w3", "w4"].map(String::from));
    let vocab = Vocabulary::from_tokens(tokens).unwrap();
    let mut rng = Rng::new(seed + 1000);
    let examples: Vec<Example> = (0..4)
        .map(|i| {
            let len = 1 + rng.below(4);
            let tokens = (0..len).map(|_| rng.below(10)).collect();
            let labels = match &mode {
                Mode::Multilabel => vec![i % 2 == 0, i % 3 == 0, i != 1],
                Mode::Singlelabel { kept } => (0..3).map(|k| k == kept[i % kept.len()]).collect(),
            };
            Example { raw_text: String::new(), tokens, labels }
        })
        .collect();
    let sets = [vec![true, true, false], vec![true, false, true], vec![false, true, true], vec![true, false, false]];
    let m = count_cooccurrence(sets.iter().map(Vec::as_slice), 3);
    let graph = EmotionGraph::build(&m, &labels, 0.4, 0.35).unwrap();
    let config = ModelConfig {
        encoder: EncoderConfig { kind: encoder, embed_dim: 4, hidden_dim: 4, heads: 2, depth: 1, dropout_p: 0.3, max_len: 6 },
        head: HeadConfig { kind: head, label_embed_dim: 3, out_dim: 4, gat_heads: 2, leaky_slope: 0.2 },
        mode,
    };
    let corpus = CorpusOptions { max_len: 6, ..Default::default() };
    let mut model = Classifier::new(config, labels, vocab, graph, corpus, seed).unwrap();
    // Move biases and gains off their constant initial values.
    let mut perturb = Rng::new(seed ^ 0x5eed);
    for (_, t) in model.params.iter_mut() {
        for v in t.data_mut() {
            *v += perturb.uniform(-0.3, 0.3);
        }
    }
    (model, examples)
}

fn model_gradient_error(model: &Classifier, batch: &[Example]) -> (f64, String) {
    let (_, grads) = model.loss_and_grads(batch).unwrap();
    let mut probe = model.clone();
    let mut worst = (0.0, String::new());
    let names: Vec<String> = model.params.names().cloned().collect();
    for name in names {
        let n = model.params.get(&name).unwrap().numel();
        for idx in 0..n {
            let base = model.params.get(&name).unwrap().data()[idx];
            probe.params.get_mut(&name).unwrap().data_mut()[idx] = base + STEP;
            let up = probe.loss(batch).unwrap();
            probe.params.get_mut(&name).unwrap().data_mut()[idx] = base - STEP;
            let down = probe.loss(batch).unwrap();
            probe.params.get_mut(&name).unwrap().data_mut()[idx] = base;
            let err = rel_err(grads[&name].data()[idx], (up - down) / (2.0 * STEP));
            if err > worst.0 {
                worst = (err, format!("{name}[{idx}]"));
            }
        }
    }
    worst
}

#[test]
fn toy_models_match_finite_differences() {
    for encoder in [EncoderKind::Meanpool, EncoderKind::Selfattn] {
        for head in [HeadKind::Gcn, HeadKind::Gat, HeadKind::Flat] {
            for mode in [Mode::Multilabel, Mode::Singlelabel { kept: vec![0, 2] }] {
                for seed in 0..5 {
                    let (model, batch) = toy_model(encoder, head, mode.clone(), seed);
                    let (err, at) = model_gradient_error(&model, &batch);
                    assert!(err < 1e-5, "{encoder:?}/{head:?}/{mode:?} seed {seed}: {err:e} at {at}");
                }
            }
        }
    }
}

#[test]
fn singlelabel_gradient_reaches_shared_weight_but_not_isolated_nodes() {
    // Label "c" has no edges: its embedding only feeds its own classifier,
    // which is excluded from the kept softmax.
    let labels = LabelSpace::new(["a", "b", "c"]).unwrap();
    let sets = [vec![true, true, false], vec![true, false, false], vec![false, false, true]];
    let m = count_cooccurrence(sets.iter().map(Vec::as_slice), 3);
    let graph = EmotionGraph::build(&m, &labels, 0.4, 0.35).unwrap();
    assert!(!graph.has_edge("c", "a") && !graph.has_edge("a", "c") && !graph.has_edge("b", "c"));
    let (mut model, _) = toy_model(EncoderKind::Meanpool, HeadKind::Gcn, Mode::Singlelabel { kept: vec![0, 1] }, 3);
    model.graph = graph;
    let batch: Vec<Example> = (0..4)
        .map(|i| Example { raw_text: String::new(), tokens: vec![5 + i], labels: vec![i % 2 == 0, i % 2 == 1, false] })
        .collect();
    let (_, grads) = model.loss_and_grads(&batch).unwrap();
    let emb = &grads["head.labels"];
    assert!(emb.row_slice(2).iter().all(|&g| g == 0.0));
    assert!(emb.row_slice(0).iter().any(|&g| g != 0.0));
    assert!(grads["head.w1"].sq_norm() > 0.0);
}
