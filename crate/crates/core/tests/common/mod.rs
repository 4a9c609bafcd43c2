//! Reference implementations shared by the integration tests. Nothing here
//! calls into the code it is used to check.

#![allow(dead_code)]

use lanesight::autograd::{Matrix, ParamStore};
use lanesight::features::{Category, FeatureLayout};
use lanesight::labeler::ManeuverLabel as M;
use lanesight::models::Model;
use rand::Rng;

/// A run of one label: `[start, end)` as stream positions.
#[derive(Clone, Copy, Debug)]
pub struct Run {
    pub label: M,
    pub start: usize,
    pub end: usize,
}

pub fn runs(s: &[M]) -> Vec<Run> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=s.len() {
        if i == s.len() || s[i] != s[start] {
            out.push(Run { label: s[start], start, end: i });
            start = i;
        }
    }
    out
}

fn run_id_at(runs: &[Run], i: usize) -> usize {
    runs.iter().position(|r| r.start <= i && i < r.end).unwrap()
}

/// Every field of the report, recomputed frame by frame.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Brute {
    pub accuracy: [Option<f64>; 3],
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub ttm: Option<f64>,
    // (events, missed, miss rate, delay, overlap, frequency) for L and R
    pub class: [(usize, usize, Option<f64>, Option<f64>, Option<f64>, Option<f64>); 2],
    pub follow_events: usize,
    pub follow_frequency: Option<f64>,
}

/// Several targets at once; `onset_reference` selects the label onset
/// instead of the lane crossing as the end of the time to maneuver.
pub fn brute_evaluate(pairs: &[(Vec<M>, Vec<M>)], rate: f64, onset_reference: bool) -> Brute {
    let mut correct = [0usize; 3];
    let mut total = [0usize; 3];
    let mut predicted = 0usize;
    let mut true_predicted = 0usize;
    let mut ttm_frames = 0i64;
    let mut cls: [(usize, usize, i64, Vec<f64>, usize); 2] = Default::default();
    let mut follow = (0usize, 0usize);
    for (pred, truth) in pairs {
        assert_eq!(pred.len(), truth.len());
        for i in 0..truth.len() {
            let t = truth[i] as usize;
            total[t] += 1;
            if pred[i] == truth[i] {
                correct[t] += 1;
            }
        }
        let pr = runs(pred);
        let gr = runs(truth);
        for p in pr.iter().filter(|p| p.label != M::F) {
            predicted += 1;
            if (p.start..p.end).any(|i| truth[i] == p.label) {
                true_predicted += 1;
            }
        }
        for g in &gr {
            // distinct prediction runs touching this ground-truth run
            let mut touching: Vec<usize> = Vec::new();
            for i in g.start..g.end {
                let id = run_id_at(&pr, i);
                let ok = if g.label == M::F { pr[id].label != M::F } else { pr[id].label == g.label };
                if ok && !touching.contains(&id) {
                    touching.push(id);
                }
            }
            if g.label == M::F {
                follow.0 += 1;
                follow.1 += touching.len();
                continue;
            }
            let c = &mut cls[if g.label == M::L { 0 } else { 1 }];
            c.0 += 1;
            c.4 += touching.len();
            let Some(&first) = touching.iter().min_by_key(|&&id| pr[id].start) else {
                c.1 += 1;
                continue;
            };
            let p = pr[first];
            c.2 += (p.start as i64 - g.start as i64).max(0);
            let shared = (g.start..g.end).filter(|&i| (p.start..p.end).contains(&i)).count();
            c.3.push(shared as f64 / (g.end - g.start) as f64);
            let detected = p.start.max(g.start) as i64;
            let reference = if onset_reference { g.start as i64 } else { g.end as i64 };
            ttm_frames += reference - detected;
        }
    }
    let frac = |a: f64, b: usize| (b > 0).then(|| a / b as f64);
    let actual = cls[0].0 + cls[1].0;
    let detected = actual - cls[0].1 - cls[1].1;
    let precision = frac(true_predicted as f64, predicted).unwrap_or(0.0);
    let recall = frac(detected as f64, actual).unwrap_or(0.0);
    let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
    let class = [0, 1].map(|k| {
        let (events, missed, delay, ref overlaps, freq) = cls[k];
        let det = events - missed;
        (
            events,
            missed,
            frac(missed as f64, events),
            frac(delay as f64 / rate, det),
            frac(overlaps.iter().sum(), det),
            frac(freq as f64, events),
        )
    });
    Brute {
        accuracy: [0, 1, 2].map(|c| frac(correct[c] as f64, total[c])),
        precision,
        recall,
        f1,
        ttm: frac(ttm_frames as f64 / rate, detected),
        class,
        follow_events: follow.0,
        follow_frequency: frac(follow.1 as f64, follow.0),
    }
}

/// A label stream built from runs of random class and length.
pub fn random_stream<R: Rng>(rng: &mut R, len: usize, max_run: usize) -> Vec<M> {
    let mut s = Vec::with_capacity(len);
    while s.len() < len {
        let label = [M::L, M::F, M::F, M::R][rng.random_range(0..4)];
        let n = rng.random_range(1..=max_run).min(len - s.len());
        s.extend(std::iter::repeat_n(label, n));
    }
    s
}

/// A noisy copy of `truth`: shifted boundaries, flipped runs, flicker.
pub fn perturbed<R: Rng>(rng: &mut R, truth: &[M]) -> Vec<M> {
    let shift = rng.random_range(-6i64..=6);
    let n = truth.len() as i64;
    let mut p: Vec<M> = (0..n).map(|i| truth[(i + shift).clamp(0, n - 1) as usize]).collect();
    for _ in 0..rng.random_range(0..4) {
        let a = rng.random_range(0..truth.len());
        let b = (a + rng.random_range(1..8)).min(truth.len());
        let l = [M::L, M::F, M::R][rng.random_range(0..3)];
        p[a..b].iter_mut().for_each(|x| *x = l);
    }
    p
}

/// Fourth-order central difference of `f` around `x` with step `h`.
pub fn central_difference(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x - 2.0 * h) - 8.0 * f(x - h) + 8.0 * f(x + h) - f(x + 2.0 * h)) / (12.0 * h)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

fn param(store: &ParamStore, name: &str) -> Matrix {
    store.by_name(name).unwrap_or_else(|| panic!("missing parameter {name}")).clone()
}

fn mv(m: &Matrix, v: &[f64]) -> Vec<f64> {
    (0..m.rows()).map(|r| (0..m.cols()).map(|c| m.get(r, c) * v[c]).sum()).collect()
}

/// Logit `class` of an attention model at one step, given the fusion output
/// `u`, the raw window `x[.., start..start + len]` and the step's weights.
/// Written from the model's definition, independent of the graph code.
pub fn attention_tail(model: &Model, x: &Matrix, u: &[f64], start: usize, beta: &Matrix, gamma: &[f64], class: usize) -> f64 {
    let s = model.params();
    let layout: FeatureLayout = model.layout();
    let mut c = vec![0.0; layout.dim()];
    for (k, cat) in Category::ALL.iter().enumerate() {
        for r in layout.category(*cat) {
            for (j, g) in gamma.iter().enumerate() {
                c[r] += g * beta.get(k, j) * x.get(r, start + j);
            }
        }
    }
    let wf = mv(&param(s, "drop.w_fusion"), u);
    let wc = mv(&param(s, "drop.w_c"), &c);
    let b = param(s, "drop.b");
    let pre: Vec<f64> = (0..wf.len()).map(|i| wf[i] + wc[i] + b.get(i, 0)).collect();
    let bu = param(s, "out.b_u");
    let o: Vec<f64> = mv(&param(s, "out.w_u"), &pre)
        .iter()
        .enumerate()
        .map(|(i, v)| (v + bu.get(i, 0)).tanh())
        .collect();
    mv(&param(s, "out.w_o"), &o)[class] + param(s, "out.b_o").get(class, 0)
}
