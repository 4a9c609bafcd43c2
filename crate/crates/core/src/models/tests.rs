use proptest::prelude::*;
use rand::Rng;

use super::*;
use crate::features::FeatureLayout;
use crate::labeler::ManeuverLabel;

// ---------------------------------------------------------------------------
// Straight-line reference implementation on plain vectors, reading
// parameters by name only.

fn mv(w: &Matrix, x: &[f64]) -> Vec<f64> {
    assert_eq!(w.cols(), x.len());
    (0..w.rows())
        .map(|r| (0..w.cols()).map(|c| w.get(r, c) * x[c]).sum())
        .collect()
}

fn vadd(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn vcol(m: &Matrix) -> Vec<f64> {
    m.as_slice().to_vec()
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

struct Ref<'a> {
    p: &'a ParamStore,
}

impl Ref<'_> {
    fn w(&self, name: &str) -> &Matrix {
        self.p.by_name(name).unwrap_or_else(|| panic!("no {name}"))
    }

    fn affine(&self, w: &str, b: &str, x: &[f64]) -> Vec<f64> {
        vadd(&mv(self.w(w), x), &vcol(self.w(b)))
    }

    fn cell(&self, key: &str, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let xh: Vec<f64> = x.iter().chain(h).copied().collect();
        let gate = |g: &str| self.affine(&format!("{key}.lstm.w_{g}"), &format!("{key}.lstm.b_{g}"), &xh);
        let (i, f, o, gg) = (gate("i"), gate("f"), gate("o"), gate("g"));
        let c2: Vec<f64> = (0..h.len())
            .map(|k| sig(f[k]) * c[k] + sig(i[k]) * gg[k].tanh())
            .collect();
        let h2: Vec<f64> = (0..h.len()).map(|k| sig(o[k]) * c2[k].tanh()).collect();
        (h2, c2)
    }

    /// Fusion layer for every step.
    fn fusion(&self, branches: &[(&str, Range<usize>)], xs: &[Vec<f64>], d_h: usize) -> Vec<Vec<f64>> {
        let mut state: Vec<(Vec<f64>, Vec<f64>)> = vec![(vec![0.0; d_h], vec![0.0; d_h]); branches.len()];
        xs.iter()
            .map(|x| {
                let mut cat = Vec::new();
                for (b, (key, rows)) in branches.iter().enumerate() {
                    let (h, c) = self.cell(key, &x[rows.clone()], &state[b].0, &state[b].1);
                    cat.extend(self.affine(&format!("{key}.proj.w"), &format!("{key}.proj.b"), &h));
                    state[b] = (h, c);
                }
                self.affine("fusion.w", "fusion.b", &cat)
            })
            .collect()
    }

    fn output(&self, v: &[f64]) -> Vec<f64> {
        let o: Vec<f64> = self.affine("out.w_u", "out.b_u", v).iter().map(|x| x.tanh()).collect();
        softmax(&self.affine("out.w_o", "out.b_o", &o))
    }

    fn psi(&self, w: &str, v: &str, q: &[f64], k: &[f64]) -> f64 {
        let qk: Vec<f64> = q.iter().chain(k).copied().collect();
        let t = mv(self.w(w), &qk);
        vcol(self.w(v)).iter().zip(&t).map(|(a, b)| a * b.tanh()).sum()
    }
}

const CATS: [&str; 5] = ["target", "same", "left", "right", "street"];

fn normalized(model: &Model, x: &Matrix) -> Vec<Vec<f64>> {
    (0..x.cols())
        .map(|c| model.norm().normalize(&x.column_values(c)))
        .collect()
}

/// Per-step probabilities, betas and gammas from the reference.
#[allow(clippy::type_complexity)]
fn reference(model: &Model, x: &Matrix) -> (Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>, Vec<Vec<f64>>) {
    let r = Ref { p: model.params() };
    let layout = model.layout();
    let cfg = model.config();
    let xs = normalized(model, x);
    let branches: Vec<(&str, Range<usize>)> = match cfg.kind {
        ModelKind::Vanilla => vec![("all", 0..layout.dim())],
        _ => vec![
            ("z", layout.target_group()),
            ("e", layout.env_group()),
            ("m", layout.static_group()),
        ],
    };
    let us = r.fusion(&branches, &xs, cfg.hidden);
    if cfg.kind != ModelKind::LstmA {
        return (us.iter().map(|u| r.output(u)).collect(), vec![], vec![]);
    }
    let ranges: Vec<Range<usize>> = crate::features::Category::ALL.iter().map(|&c| layout.category(c)).collect();
    let embed = |i: usize| -> Vec<Vec<f64>> {
        CATS.iter()
            .zip(&ranges)
            .map(|(k, rg)| r.affine(&format!("att.{k}.embed.w"), &format!("att.{k}.embed.b"), &xs[i][rg.clone()]))
            .collect()
    };
    let (mut probs, mut betas, mut gammas) = (vec![], vec![], vec![]);
    for (t, u) in us.iter().enumerate() {
        let start = t.saturating_sub(cfg.window);
        let mut beta_t = Vec::new();
        let mut time_scores = Vec::new();
        for i in start..=t {
            let e = embed(i);
            let scores: Vec<f64> = CATS
                .iter()
                .zip(&e)
                .map(|(k, ek)| r.psi(&format!("att.{k}.score.w"), &format!("att.{k}.score.v"), u, ek))
                .collect();
            beta_t.push(softmax(&scores));
            let all: Vec<f64> = e.concat();
            time_scores.push(r.psi("att.time.w", "att.time.v", u, &all));
        }
        let gamma = softmax(&time_scores);
        let mut c = vec![0.0; 0];
        for (j, i) in (start..=t).enumerate() {
            let bj = &beta_t[j];
            let scaled: Vec<f64> = match cfg.context {
                ContextMode::RawFeatures => ranges
                    .iter()
                    .enumerate()
                    .flat_map(|(k, rg)| xs[i][rg.clone()].iter().map(move |v| v * bj[k]).collect::<Vec<_>>())
                    .collect(),
                ContextMode::ScaledEmbeddings => embed(i)
                    .iter()
                    .enumerate()
                    .flat_map(|(k, ek)| ek.iter().map(|v| v * bj[k]).collect::<Vec<_>>())
                    .collect(),
            };
            if c.is_empty() {
                c = vec![0.0; scaled.len()];
            }
            for (a, s) in c.iter_mut().zip(&scaled) {
                *a += gamma[j] * s;
            }
        }
        let drop = vadd(&vadd(&mv(r.w("drop.w_fusion"), u), &mv(r.w("drop.w_c"), &c)), &vcol(r.w("drop.b")));
        probs.push(r.output(&drop));
        betas.push(beta_t);
        gammas.push(gamma);
    }
    (probs, betas, gammas)
}

// ---------------------------------------------------------------------------

fn random_inputs(layout: FeatureLayout, n: usize, seed: u64) -> Matrix {
    let mut rng = crate::seed::rng(seed);
    Matrix::from_fn(layout.dim(), n, |r, _| {
        if r >= 13 {
            rng.random_range(0.0..1.0f64).round()
        } else {
            rng.random_range(-2.0..2.0) * (1.0 + r as f64)
        }
    })
}

fn tiny(kind: ModelKind, context: ContextMode, seed: u64) -> (Model, Matrix) {
    let layout = FeatureLayout::new(2);
    let x = random_inputs(layout, 12, seed);
    let cols: Vec<Vec<f64>> = (0..x.cols()).map(|c| x.column_values(c)).collect();
    let norm = NormStats::fit(cols.iter().map(Vec::as_slice));
    let config = ModelConfig {
        kind,
        hidden: 2,
        embed_dim: 2,
        attention_dim: 2,
        window: 2,
        context,
    };
    (Model::new(config, layout, norm, seed).unwrap(), x)
}

fn assert_probs(p: &Matrix) {
    for c in 0..p.cols() {
        let col = p.column_values(c);
        assert!(col.iter().all(|&v| v > 0.0));
        assert!((col.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

fn prefix(x: &Matrix, n: usize) -> Matrix {
    x.cols_range(0, n)
}

#[test]
fn zero_cell_outputs_zero() {
    let mut store = ParamStore::new();
    let mut rng = crate::seed::rng(1);
    let cell = LstmCellParams::build(
        &mut ParamBuilder::Init {
            store: &mut store,
            rng: &mut rng,
        },
        "c",
        3,
        2,
    )
    .unwrap();
    for id in store.ids().collect::<Vec<_>>() {
        store.get_mut(id).scale_assign(0.0);
    }
    let mut g = Graph::new();
    let p = store.bind(&mut g);
    let x = g.constant(Matrix::column(&[0.3, -4.0, 2.0]));
    let h0 = g.constant(Matrix::column(&[0.5, 0.5]));
    let c0 = g.constant(Matrix::zeros(2, 1));
    let (h, _) = lstm_step(&mut g, &p, &cell, x, h0, c0).unwrap();
    assert_eq!(g.value(h).as_slice(), &[0.0, 0.0]);
}

#[test]
fn bias_only_cell_by_hand() {
    let mut store = ParamStore::new();
    let mut rng = crate::seed::rng(1);
    let cell = LstmCellParams::build(
        &mut ParamBuilder::Init {
            store: &mut store,
            rng: &mut rng,
        },
        "c",
        1,
        1,
    )
    .unwrap();
    assert_eq!(store.get(cell.b_f).item(), 1.0);
    *store.get_mut(cell.b_i) = Matrix::scalar(0.5);
    *store.get_mut(cell.b_o) = Matrix::scalar(0.2);
    *store.get_mut(cell.b_g) = Matrix::scalar(-0.3);
    let mut g = Graph::new();
    let p = store.bind(&mut g);
    let zero = g.constant(Matrix::scalar(0.0));
    let (h, c) = lstm_step(&mut g, &p, &cell, zero, zero, zero).unwrap();
    // c = σ(0.5)·tanh(−0.3); h = σ(0.2)·tanh(c)
    let c_hand = 0.622_459_331_201_854_6 * -0.291_312_612_451_591;
    let h_hand = 0.549_833_997_312_478 * f64::tanh(c_hand);
    assert!((g.value(c).item() - c_hand).abs() < 1e-12);
    assert!((g.value(h).item() - h_hand).abs() < 1e-12);
}

fn numeric_check(store: &ParamStore, loss: impl Fn(&ParamStore, Option<&mut Vec<Matrix>>) -> f64, tol: f64) {
    let mut analytic = Vec::new();
    loss(store, Some(&mut analytic));
    // Fourth-order central stencil: truncation O(h⁴) and round-off ε/h both
    // stay far below the tolerance for gradients down to ~1e-8.
    let h = 1e-3;
    let mut worst = 0.0f64;
    for (id, name, m) in store.iter() {
        for i in 0..m.len() {
            let at = |delta: f64| {
                let mut s = store.clone();
                s.get_mut(id).as_mut_slice()[i] += delta;
                loss(&s, None)
            };
            let fd = (at(-2.0 * h) - 8.0 * at(-h) + 8.0 * at(h) - at(2.0 * h)) / (12.0 * h);
            let a = analytic[id.index()].as_slice()[i];
            let err = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8);
            worst = worst.max(err);
            assert!(err < tol, "{name}[{i}]: analytic {a:e}, numeric {fd:e}, rel {err:e}");
        }
    }
    assert!(worst < tol);
}

#[test]
fn chained_cell_steps_pass_gradient_check() {
    let mut store = ParamStore::new();
    let mut rng = crate::seed::rng(8);
    let cell = LstmCellParams::build(
        &mut ParamBuilder::Init {
            store: &mut store,
            rng: &mut rng,
        },
        "c",
        3,
        2,
    )
    .unwrap();
    let xs = random_inputs(FeatureLayout::new(0), 5, 4).rows_range(0, 3);
    numeric_check(
        &store,
        |s, grads| {
            let mut g = Graph::new();
            let p = s.bind(&mut g);
            let mut h = g.constant(Matrix::zeros(2, 1));
            let mut c = g.constant(Matrix::zeros(2, 1));
            let mut total = Vec::new();
            for t in 0..5 {
                let x = g.constant(xs.cols_range(t, 1));
                (h, c) = lstm_step(&mut g, &p, &cell, x, h, c).unwrap();
                total.push(g.sum(h));
            }
            let all = g.concat(&total).unwrap();
            let loss = g.sum(all);
            if let Some(out) = grads {
                g.backward(loss).unwrap();
                *out = p.gradients(&g, s);
            }
            g.value(loss).item()
        },
        1e-4,
    );
}

#[test]
fn sequence_runner_matches_stepwise_cell() {
    let mut store = ParamStore::new();
    let mut rng = crate::seed::rng(2);
    let cell = LstmCellParams::build(
        &mut ParamBuilder::Init {
            store: &mut store,
            rng: &mut rng,
        },
        "c",
        4,
        3,
    )
    .unwrap();
    let xs = random_inputs(FeatureLayout::new(0), 7, 5).rows_range(0, 4);
    let mut g = Graph::new();
    let p = store.bind(&mut g);
    let xv = g.constant(xs.clone());
    let hs = lstm_sequence(&mut g, &p, &cell, xv).unwrap();
    let mut h = g.constant(Matrix::zeros(3, 1));
    let mut c = g.constant(Matrix::zeros(3, 1));
    for t in 0..7 {
        let x = g.constant(xs.cols_range(t, 1));
        (h, c) = lstm_step(&mut g, &p, &cell, x, h, c).unwrap();
        for r in 0..3 {
            assert!((g.value(h).get(r, 0) - g.value(hs).get(r, t)).abs() < 1e-14);
        }
    }
}

#[test]
fn attention_score_cases() {
    let mut rng = crate::seed::rng(3);
    let mut r = |n: usize, m: usize| Matrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0));
    let (w0, v0, q0, k0) = (r(3, 8), r(3, 1), r(4, 1), r(4, 1));
    let mut g = Graph::new();
    let (w, v, q, k) = (g.constant(w0.clone()), g.constant(v0.clone()), g.constant(q0.clone()), g.constant(k0.clone()));
    let s = attention_score(&mut g, w, v, q, k).unwrap();
    let qk: Vec<f64> = q0.as_slice().iter().chain(k0.as_slice()).copied().collect();
    let hand: f64 = (0..3)
        .map(|i| v0.get(i, 0) * (0..8).map(|j| w0.get(i, j) * qk[j]).sum::<f64>().tanh())
        .sum();
    assert!((g.value(s).item() - hand).abs() < 1e-14);
    let zv = g.constant(Matrix::zeros(3, 1));
    let zw = g.constant(Matrix::zeros(3, 8));
    let s0 = attention_score(&mut g, w, zv, q, k).unwrap();
    let s1 = attention_score(&mut g, zw, v, q, k).unwrap();
    assert_eq!((g.value(s0).item(), g.value(s1).item()), (0.0, 0.0));
    let short = g.constant(Matrix::zeros(2, 1));
    assert!(attention_score(&mut g, w, v, q, short).is_err());
}

fn matches_reference(kind: ModelKind, context: ContextMode) {
    for seed in 0..4 {
        let (model, x) = tiny(kind, context, seed);
        let x = prefix(&x, 6);
        let (probs, record) = model.predict_with_attention(&x).unwrap();
        assert_probs(&probs);
        let (rp, rb, rg) = reference(&model, &x);
        for t in 0..x.cols() {
            for c in 0..3 {
                assert!((probs.get(c, t) - rp[t][c]).abs() < 1e-12, "{kind:?} t={t}");
            }
        }
        if let Some(rec) = record {
            for t in 0..x.cols() {
                assert_eq!(rec.windows[t], (t.saturating_sub(2), t.min(2) + 1));
                for (j, b) in rec.beta[t].iter().enumerate() {
                    for c in 0..5 {
                        assert!((b[c] - rb[t][j][c]).abs() < 1e-12);
                    }
                }
                for (a, b) in rec.gamma[t].iter().zip(&rg[t]) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn fusion_network_matches_reference() {
    matches_reference(ModelKind::LstmE, ContextMode::RawFeatures);
}

#[test]
fn single_cell_matches_reference() {
    matches_reference(ModelKind::Vanilla, ContextMode::RawFeatures);
}

#[test]
fn attention_network_matches_reference() {
    matches_reference(ModelKind::LstmA, ContextMode::RawFeatures);
    matches_reference(ModelKind::LstmA, ContextMode::ScaledEmbeddings);
}

#[test]
fn outputs_are_causal() {
    for kind in [ModelKind::LstmE, ModelKind::LstmA, ModelKind::Vanilla] {
        let (model, x) = tiny(kind, ContextMode::RawFeatures, 9);
        let full = model.predict_proba(&x).unwrap();
        let mut future = x.clone();
        for r in 0..future.rows() {
            for c in 7..future.cols() {
                future.set(r, c, future.get(r, c) * -3.0 + 1.0);
            }
        }
        let changed = model.predict_proba(&future).unwrap();
        let one = model.predict_proba(&prefix(&x, 1)).unwrap();
        for t in 0..7 {
            assert_eq!(full.column_values(t), changed.column_values(t), "{kind:?}");
        }
        assert_eq!(one.column_values(0), full.column_values(0));
    }
}

#[test]
fn shape_errors() {
    let (model, x) = tiny(ModelKind::LstmA, ContextMode::RawFeatures, 1);
    assert!(matches!(model.predict_proba(&x.rows_range(0, 5)), Err(ModelError::Shape(_))));
    assert!(Model::new(ModelConfig::default(), FeatureLayout::new(3), NormStats::identity(4), 0).is_err());
}

#[test]
fn attention_network_passes_full_gradient_check() {
    let (model, x) = tiny(ModelKind::LstmA, ContextMode::RawFeatures, 5);
    let x = prefix(&x, 3);
    let targets = [0, 1, 2];
    let weights = [0.7, 1.0, 1.9];
    numeric_check(
        model.params(),
        |s, grads| {
            let m = Model::from_parts(model.config().clone(), model.layout(), model.norm().clone(), s.clone()).unwrap();
            let mut g = Graph::new();
            let p = s.bind(&mut g);
            let out = m.forward(&mut g, &p, &x, &ForwardOptions::default()).unwrap();
            let loss = g.cross_entropy(out.logits, &targets, &weights).unwrap();
            if let Some(o) = grads {
                g.backward(loss).unwrap();
                *o = p.gradients(&g, s);
            }
            g.value(loss).item()
        },
        1e-4,
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn attention_weights_are_normalized(seed in 0u64..100_000, n in 1usize..30) {
        let layout = FeatureLayout::new(3);
        let x = random_inputs(layout, n, seed);
        let config = ModelConfig { hidden: 4, embed_dim: 3, attention_dim: 3, window: 5, ..ModelConfig::default() };
        let model = Model::new(config, layout, NormStats::identity(layout.dim()), seed).unwrap();
        let (probs, rec) = model.predict_with_attention(&x).unwrap();
        let rec = rec.unwrap();
        for t in 0..n {
            prop_assert!((probs.column_values(t).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert_eq!(rec.gamma[t].len(), t.min(5) + 1);
            prop_assert!((rec.gamma[t].iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for b in &rec.beta[t] {
                prop_assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Dropout

#[test]
fn dropout_p_zero_is_identity_and_full_drop_leaves_bias() {
    let (model, x) = tiny(ModelKind::LstmA, ContextMode::RawFeatures, 3);
    let mut rng = crate::seed::rng(0);
    let masks: Vec<DropMask> = (0..x.cols()).map(|_| DropMask::draw(0.0, &mut rng)).collect();
    assert!(masks.iter().all(|m| *m == DropMask::KEEP));
    let run = |opts: &ForwardOptions| {
        let mut g = Graph::new();
        let p = model.params().bind(&mut g);
        let out = model.forward(&mut g, &p, &x, opts).unwrap();
        g.value(out.logits).clone()
    };
    let train = run(&ForwardOptions {
        masks: Some(masks),
        ..Default::default()
    });
    assert_eq!(train, run(&ForwardOptions::default()));

    let mut g = Graph::new();
    let u = g.leaf(Matrix::column(&[1.0, 2.0]));
    let c = g.leaf(Matrix::column(&[3.0, -1.0, 0.5]));
    let wf = g.leaf(Matrix::filled(2, 2, 0.7));
    let wc = g.leaf(Matrix::filled(2, 3, -0.2));
    let b = g.leaf(Matrix::column(&[0.25, -0.5]));
    let both = DropMask {
        fusion: 0.0,
        context: 0.0,
    };
    let out = structured_dropout(&mut g, u, c, wf, wc, b, &[both]).unwrap();
    assert_eq!(g.value(out).as_slice(), &[0.25, -0.5]);
}

#[test]
fn dropout_frequencies_follow_the_binomial_law() {
    let mut rng = crate::seed::rng(33);
    let n = 10_000;
    let p = 0.33;
    let (mut f, mut c) = (0, 0);
    for _ in 0..n {
        let m = DropMask::draw(p, &mut rng);
        f += (m.fusion == 0.0) as usize;
        c += (m.context == 0.0) as usize;
        for v in [m.fusion, m.context] {
            assert!(v == 0.0 || (v - 1.0 / (1.0 - p)).abs() < 1e-15);
        }
    }
    let sigma = (n as f64 * p * (1.0 - p)).sqrt();
    for k in [f, c] {
        assert!((k as f64 - n as f64 * p).abs() < 3.0 * sigma, "{k}");
    }
}

// ---------------------------------------------------------------------------
// Gaussian baseline

fn gaussian_data(seed: u64, sep: f64) -> (Vec<[f64; 3]>, Vec<ManeuverLabel>) {
    let mut rng = crate::seed::rng(seed);
    let mut xs = Vec::new();
    let mut ls = Vec::new();
    for i in 0..300 {
        let l = ManeuverLabel::ALL[i % 3];
        let shift = sep * (l.index() as f64 - 1.0);
        xs.push([
            shift + rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ]);
        ls.push(l);
    }
    (xs, ls)
}

#[test]
fn identical_class_distributions_give_the_priors() {
    let xs: Vec<[f64; 3]> = (0..12).map(|i| [(i / 3) as f64, 0.5 * (i / 3) as f64, 1.0]).collect();
    let ls: Vec<ManeuverLabel> = (0..12).map(|i| ManeuverLabel::ALL[i % 3]).collect();
    let p = nb_fit(&xs, &ls).unwrap();
    let post = nb_predict(&p, &[0.3, 2.0, -4.0]);
    for c in 0..3 {
        assert!((post[c] - p.prior[c]).abs() < 1e-12);
    }
}

#[test]
fn separated_classes_are_near_certain() {
    let (xs, ls) = gaussian_data(1, 20.0);
    let p = nb_fit(&xs, &ls).unwrap();
    assert!(nb_predict(&p, &[-20.0, 0.0, 0.0])[0] > 0.999);
    assert!(nb_predict(&p, &[0.0, 0.0, 0.0])[1] > 0.999);
    assert!(nb_predict(&p, &[20.0, 0.0, 0.0])[2] > 0.999);
}

#[test]
fn posteriors_match_direct_bayes_rule() {
    let (xs, ls) = gaussian_data(2, 1.0);
    let p = nb_fit(&xs, &ls).unwrap();
    let mut rng = crate::seed::rng(5);
    for _ in 0..100 {
        let x = [rng.random_range(-3.0..3.0), rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)];
        let joint: Vec<f64> = (0..3)
            .map(|c| {
                let dens: f64 = (0..3)
                    .map(|j| {
                        let v = p.var[c][j];
                        (-(x[j] - p.mean[c][j]).powi(2) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt()
                    })
                    .product();
                p.prior[c] * dens
            })
            .collect();
        let z: f64 = joint.iter().sum();
        let post = nb_predict(&p, &x);
        for c in 0..3 {
            assert!((post[c] - joint[c] / z).abs() < 1e-9);
        }
    }
}

#[test]
fn fit_needs_two_samples_per_class() {
    let xs = vec![[0.0; 3]; 5];
    let ls = vec![ManeuverLabel::F, ManeuverLabel::F, ManeuverLabel::L, ManeuverLabel::L, ManeuverLabel::R];
    assert!(matches!(nb_fit(&xs, &ls), Err(ModelError::Fit(_))));
}

proptest! {
    #[test]
    fn common_likelihood_factor_keeps_the_argmax(seed in 0u64..1000, k in 1e-3f64..1e3) {
        let (xs, ls) = gaussian_data(seed, 1.5);
        let p = nb_fit(&xs, &ls).unwrap();
        let x = [0.4, -0.2, 0.1];
        let post = nb_predict(&p, &x);
        // Posterior ∝ prior·likelihood; scale every likelihood by k.
        let scaled: Vec<f64> = (0..3).map(|c| post[c] * k).collect();
        let argmax = |v: &[f64]| (0..3).fold(0, |b, i| if v[i] > v[b] { i } else { b });
        prop_assert_eq!(argmax(&post), argmax(&scaled));
    }
}

// ---------------------------------------------------------------------------

#[test]
fn checkpoints_round_trip() {
    for kind in [ModelKind::LstmE, ModelKind::LstmA, ModelKind::Vanilla] {
        let (model, x) = tiny(kind, ContextMode::RawFeatures, 6);
        let pred = Predictor::Net(model);
        let mut buf = Vec::new();
        pred.save(&mut buf).unwrap();
        let back = Predictor::load(buf.as_slice()).unwrap();
        assert_eq!(back, pred);
        let rv = vec![0.0; x.cols()];
        assert_eq!(back.predict(&x, &rv).unwrap(), pred.predict(&x, &rv).unwrap());
    }
    let (xs, ls) = gaussian_data(3, 2.0);
    let nb = Predictor::NaiveBayes {
        layout: FeatureLayout::new(2),
        params: nb_fit(&xs, &ls).unwrap(),
    };
    let mut buf = Vec::new();
    nb.save(&mut buf).unwrap();
    assert_eq!(Predictor::load(buf.as_slice()).unwrap(), nb);
}
