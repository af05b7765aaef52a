use super::*;
use proptest::prelude::*;

fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

fn table(dim: usize, words: &[&str], seed: u64) -> WordVectorTable {
    let mut r = rng::seeded(seed);
    WordVectorTable::from_entries(
        dim,
        words.iter().map(|w| (w.to_string(), (0..dim).map(|_| r.random_range(-1.0..1.0)).collect())),
    )
    .unwrap()
}

fn tiny_cfg() -> TaggerConfig {
    TaggerConfig {
        pad_len: 6,
        lstm1_units: 2,
        lstm2_units: 3,
        ..TaggerConfig::default()
    }
}

fn seq(tokens: &str, tags: &[u8]) -> TagSequence {
    TagSequence { tokens: toks(tokens), tags: tags.to_vec() }
}

#[test]
fn padding_and_truncation() {
    assert_eq!(pad_or_truncate(&[4, 5, 6], 50, 9).len(), 50);
    assert_eq!(pad_or_truncate(&[4, 5, 6], 50, 9)[3..], vec![9; 47][..]);
    let fifty: Vec<usize> = (0..50).collect();
    assert_eq!(pad_or_truncate(&fifty, 50, 99), fifty);
    let long: Vec<usize> = (0..58).collect();
    assert_eq!(pad_or_truncate(&long, 50, 99), fifty);
}

#[test]
fn zero_model_is_uniform_and_tags_zero() {
    let vectors = table(4, &["a", "b", "c"], 1);
    let model = TaggerModel::zeroed(&vectors, &TaggerConfig::default()).unwrap();
    let probs = model.forward(&model.encode(&["a", "zzz", "c"]), None);
    assert_eq!(probs.len(), 3);
    for p in probs {
        for v in p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }
    assert_eq!(model.tag(&["a", "b"]).unwrap().tags, vec![0, 0]);
    assert!(matches!(model.tag::<&str>(&[]), Err(Error::EmptySentence)));
}

#[test]
fn lookup_is_lowercase_without_edge_punctuation() {
    let vectors = table(2, &["rates", "and"], 1);
    let model = TaggerModel::zeroed(&vectors, &tiny_cfg()).unwrap();
    assert_eq!(model.token_index("Rates,"), model.token_index("rates"));
    assert_eq!(model.token_index("unknown"), model.oov_index());
}

/// Straightforward LSTM evaluation written against the tensor layout only.
fn reference_forward(model: &TaggerModel, tokens: &[&str]) -> Vec<[f64; 3]> {
    let get = |name: &str| -> (Vec<Vec<f64>>, usize) {
        let t = model.tensors().iter().find(|t| t.name == name).unwrap();
        let data = &model.params()[t.range()];
        ((0..t.rows).map(|r| data[r * t.cols..(r + 1) * t.cols].to_vec()).collect(), t.cols)
    };
    let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
    let run_dir = |prefix: &str, xs: &[Vec<f64>], reverse: bool| -> Vec<Vec<f64>> {
        let (w, _) = get(&format!("{prefix}_kernel"));
        let (u, h) = get(&format!("{prefix}_recurrent"));
        let (b, _) = get(&format!("{prefix}_bias"));
        let mut hs = vec![vec![0.0; h]; xs.len()];
        let mut hp = vec![0.0; h];
        let mut cp = vec![0.0; h];
        let steps: Vec<usize> = if reverse { (0..xs.len()).rev().collect() } else { (0..xs.len()).collect() };
        for t in steps {
            let pre = |row: usize| -> f64 {
                b[row][0]
                    + w[row].iter().zip(&xs[t]).map(|(a, x)| a * x).sum::<f64>()
                    + u[row].iter().zip(&hp).map(|(a, x)| a * x).sum::<f64>()
            };
            let mut hn = vec![0.0; h];
            let mut cn = vec![0.0; h];
            for k in 0..h {
                let i = sig(pre(k));
                let f = sig(pre(h + k));
                let g = pre(2 * h + k).tanh();
                let o = sig(pre(3 * h + k));
                cn[k] = f * cp[k] + i * g;
                hn[k] = o * cn[k].tanh();
            }
            hs[t] = hn.clone();
            hp = hn;
            cp = cn;
        }
        hs
    };
    let x0: Vec<Vec<f64>> = tokens
        .iter()
        .map(|t| match model.index.get(*t) {
            Some(&i) => model.embeddings[i * model.emb_dim..(i + 1) * model.emb_dim].to_vec(),
            None => vec![0.0; model.emb_dim],
        })
        .collect();
    let cat = |a: Vec<Vec<f64>>, b: Vec<Vec<f64>>| -> Vec<Vec<f64>> {
        a.into_iter().zip(b).map(|(mut x, y)| {
            x.extend(y);
            x
        }).collect()
    };
    let x1 = cat(run_dir("lstm1_fwd", &x0, false), run_dir("lstm1_bwd", &x0, true));
    let x2 = cat(run_dir("lstm2_fwd", &x1, false), run_dir("lstm2_bwd", &x1, true));
    let (dw, _) = get("dense_kernel");
    let (db, _) = get("dense_bias");
    x2.iter()
        .map(|y| {
            let z: Vec<f64> = (0..3).map(|c| db[c][0] + dw[c].iter().zip(y).map(|(a, b)| a * b).sum::<f64>()).collect();
            let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
            let s: f64 = e.iter().sum();
            [e[0] / s, e[1] / s, e[2] / s]
        })
        .collect()
}

#[test]
fn forward_matches_reference_implementation() {
    let vectors = table(4, &["a", "b"], 3);
    let model = TaggerModel::new(&vectors, &tiny_cfg()).unwrap();
    let ours = model.forward(&model.encode(&["a", "b"]), None);
    let reference = reference_forward(&model, &["a", "b"]);
    for (p, q) in ours.iter().zip(&reference) {
        for c in 0..3 {
            assert!((p[c] - q[c]).abs() < 1e-10);
        }
    }
}

#[test]
fn gradients_match_finite_differences() {
    let vectors = table(4, &["a", "b", "c", "d"], 5);
    let mut model = TaggerModel::new(&vectors, &tiny_cfg()).unwrap();
    // move biases away from their structured initial values
    let mut r = rng::seeded(17);
    for p in model.params_mut() {
        *p += r.random_range(-0.3..0.3);
    }
    let data = [seq("a b c", &[1, 0, 2]), seq("d a", &[2, 1])];
    let (_, grad) = model.loss_and_gradient(&data).unwrap();
    let eps = 1e-5;
    for t in model.tensors().to_vec() {
        let mut worst: f64 = 0.0;
        for i in t.range() {
            let orig = model.params()[i];
            model.params_mut()[i] = orig + eps;
            let up = model.loss_and_gradient(&data).unwrap().0;
            model.params_mut()[i] = orig - eps;
            let down = model.loss_and_gradient(&data).unwrap().0;
            model.params_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let denom = numeric.abs().max(grad[i].abs());
            if denom > 1e-7 {
                worst = worst.max((numeric - grad[i]).abs() / denom);
            }
        }
        assert!(worst < 1e-4, "{}: relative error {worst}", t.name);
    }
}

#[test]
fn pad_positions_do_not_matter() {
    let vectors = table(4, &["a", "b", "c"], 2);
    let model = TaggerModel::new(&vectors, &tiny_cfg()).unwrap();
    let base = vec![0, 1, 2, model.pad_index(), model.pad_index(), model.pad_index()];
    let tags = vec![1, 0, 2, 0, 0, 0];
    let a = model.padded_loss_and_gradient(&base, &tags, 3);
    let mut other = base.clone();
    other[4] = 0;
    let mut other_tags = tags.clone();
    other_tags[5] = 2;
    assert_eq!(a, model.padded_loss_and_gradient(&other, &other_tags, 3));
}

#[test]
fn invalid_training_data_is_rejected() {
    let vectors = table(2, &["a"], 1);
    let bad = [seq("a b", &[0, 3])];
    assert!(matches!(
        train_tagger(&bad, &vectors, &tiny_cfg()),
        Err(Error::InvalidTag { position: 1, tag: 3 })
    ));
    assert!(matches!(train_tagger(&[], &vectors, &tiny_cfg()), Err(Error::EmptyCorpus)));
    assert!(matches!(
        train_tagger(&[seq("a", &[0, 1])], &vectors, &tiny_cfg()),
        Err(Error::LengthMismatch { .. })
    ));
}

fn toy_corpus(n: usize, seed: u64) -> Vec<TagSequence> {
    let causes = ["size", "age", "slack", "tenure"];
    let outcomes = ["growth", "profit", "exit", "risk"];
    let links = ["increases", "reduces", "drives"];
    let mut r = rng::seeded(seed);
    (0..n)
        .map(|_| {
            let a = causes[r.random_range(0..4)];
            let b = outcomes[r.random_range(0..4)];
            let l = links[r.random_range(0..3)];
            seq(&format!("{a} {l} {b}"), &[1, 0, 2])
        })
        .collect()
}

fn toy_vectors() -> WordVectorTable {
    table(
        6,
        &["size", "age", "slack", "tenure", "growth", "profit", "exit", "risk", "increases", "reduces", "drives"],
        9,
    )
}

fn toy_cfg() -> TaggerConfig {
    TaggerConfig {
        pad_len: 10,
        lstm1_units: 4,
        lstm2_units: 6,
        optimizer_lr: 0.01,
        epochs: 30,
        batch_size: 8,
        ..TaggerConfig::default()
    }
}

#[test]
fn learns_templated_relations() {
    let (model, log) = train_tagger_logged(&toy_corpus(80, 1), &toy_vectors(), &toy_cfg()).unwrap();
    assert_eq!(log.len(), 30);
    assert!(log.iter().all(|e| e.val_acc.is_some()));
    assert_eq!(model.tag(&["size", "increases", "growth"]).unwrap().tags, vec![1, 0, 2]);
    let mut buf = Vec::new();
    write_epoch_log(&log, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("epoch,train_acc,val_acc\n1,"));
    assert_eq!(text.lines().count(), 31);
}

#[test]
fn training_is_deterministic_and_round_trips() {
    let cfg = TaggerConfig { epochs: 2, ..toy_cfg() };
    let a = train_tagger(&toy_corpus(20, 2), &toy_vectors(), &cfg).unwrap();
    let b = train_tagger(&toy_corpus(20, 2), &toy_vectors(), &cfg).unwrap();
    let bytes = a.to_bytes().unwrap();
    assert_eq!(bytes, b.to_bytes().unwrap());
    assert_eq!(&bytes[..10], MAGIC);
    let back = TaggerModel::from_bytes(&bytes).unwrap();
    assert_eq!(back.to_bytes().unwrap(), bytes);
    let p = a.forward(&a.encode(&["size", "drives", "exit"]), None);
    let q = back.forward(&back.encode(&["size", "drives", "exit"]), None);
    for (x, y) in p.iter().zip(&q) {
        for c in 0..3 {
            assert!((x[c] - y[c]).abs() < 1e-4);
        }
    }
}

#[test]
fn decode_examples() {
    let tokens = "performance-enhancing practices will be positively related to both quit rates and dismissal rates";
    let tags = [1, 1, 0, 0, 0, 0, 0, 0, 2, 2, 2, 2, 2];
    let spans = decode_spans(&seq(tokens, &tags));
    assert_eq!(spans.variable_1, "performance-enhancing practices");
    assert_eq!(spans.variable_2, "quit rates and dismissal rates");
    assert_eq!(
        decode_spans(&seq("x y", &[0, 0])),
        RelationSpans { variable_1: String::new(), variable_2: String::new() }
    );
    let s = decode_spans(&seq("b x a", &[2, 0, 1]));
    assert_eq!((s.variable_1.as_str(), s.variable_2.as_str()), ("a", "b"));
}

#[test]
fn perfect_predictions_score_one() {
    let golds = toy_corpus(5, 3);
    let m = per_class_metrics(&golds, &golds).unwrap();
    assert!(m.per_class.iter().all(|c| c.f1 == 1.0));
    assert_eq!((m.overall.f1, m.accuracy), (1.0, 1.0));
    assert!(per_class_metrics(&golds[..2], &golds).is_err());
}

#[test]
fn metrics_match_confusion_matrix() {
    let mut r = rng::seeded(77);
    let mut preds = Vec::new();
    let mut golds = Vec::new();
    let mut remaining = 200;
    while remaining > 0 {
        let len = r.random_range(1..=remaining.min(20));
        remaining -= len;
        let p: Vec<u8> = (0..len).map(|_| r.random_range(0..3)).collect();
        let g: Vec<u8> = (0..len).map(|_| r.random_range(0..3)).collect();
        let tokens = vec!["t".to_string(); len];
        preds.push(TagSequence { tokens: tokens.clone(), tags: p });
        golds.push(TagSequence { tokens, tags: g });
    }
    let mut cm = [[0usize; 3]; 3];
    for (p, g) in preds.iter().zip(&golds) {
        for (&a, &b) in p.tags.iter().zip(&g.tags) {
            cm[b as usize][a as usize] += 1;
        }
    }
    let m = per_class_metrics(&preds, &golds).unwrap();
    for c in 0..3 {
        let tp = cm[c][c];
        let pred_c: usize = (0..3).map(|g| cm[g][c]).sum();
        let gold_c: usize = cm[c].iter().sum();
        assert_eq!(m.per_class[c].precision, tp as f64 / pred_c as f64);
        assert_eq!(m.per_class[c].recall, tp as f64 / gold_c as f64);
        assert_eq!(m.per_class[c].support, gold_c);
    }
    let tp = cm[1][1] + cm[2][2];
    let pred_nodes: usize = (0..3).map(|g| cm[g][1] + cm[g][2]).sum();
    let gold_nodes: usize = cm[1].iter().sum::<usize>() + cm[2].iter().sum::<usize>();
    assert_eq!(m.overall.precision, tp as f64 / pred_nodes as f64);
    assert_eq!(m.overall.recall, tp as f64 / gold_nodes as f64);
    assert_eq!(m.tokens, 200);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn decode_preserves_order_and_multiset(tags in prop::collection::vec(0u8..3, 0..20)) {
        let tokens: Vec<String> = (0..tags.len()).map(|i| format!("w{i}")).collect();
        let spans = decode_spans(&TagSequence { tokens: tokens.clone(), tags: tags.clone() });
        for (class, text) in [(1u8, &spans.variable_1), (2u8, &spans.variable_2)] {
            let expected: Vec<&str> = tokens.iter().zip(&tags).filter(|(_, &t)| t == class).map(|(w, _)| w.as_str()).collect();
            let got: Vec<&str> = text.split_whitespace().collect();
            prop_assert_eq!(got, expected);
        }
    }

    #[test]
    fn probabilities_normalize(words in prop::collection::vec(0usize..5, 1..12), seed in 0u64..1000) {
        let vectors = table(4, &["a", "b", "c"], 4);
        let model = TaggerModel::new(&vectors, &TaggerConfig { seed, ..tiny_cfg() }).unwrap();
        let vocab = ["a", "b", "c", "oov", "B."];
        let tokens: Vec<&str> = words.iter().map(|&i| vocab[i]).collect();
        let probs = model.forward(&model.encode(&tokens), None);
        prop_assert_eq!(probs.len(), tokens.len().min(6));
        for p in probs {
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
        let tagged = model.tag(&tokens).unwrap();
        prop_assert_eq!(tagged.tags.len(), tokens.len());
    }
}
