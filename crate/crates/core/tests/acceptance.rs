//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use dyadgraph::experiments::{
    permutation_test, permutation_test_exact, run_repeated, split_edges, train, F1Average, Fractions, TrainConfig,
    TrainData, TrainReport,
};
use dyadgraph::features::{build_vocabulary, tfidf_vector, Bag, CorpusTag, VocabConfig};
use dyadgraph::graph::{aggregate, build_graph, dyads_from_conflict, Conflict, DyadGraph, EntityId, Label};
use dyadgraph::models::{batch_gradient, batch_loss, predict, ModelConfig, ModelInputs, ModelParams, Variant};
use dyadgraph::par::Execution;
use dyadgraph::synthetic::{
    content_benchmark, random_instance, structural_benchmark, write_fixture_corpus, ContentConfig, StructuralConfig,
    SyntheticGraph,
};
use dyadgraph::tensor::{gin_layer, Matrix, Mlp, Parameters, SignedAdjacency};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(budget: Duration, elapsed: Duration) -> Result<(), String> {
    ensure(elapsed <= budget, || {
        format!(
            "took {:.1}s, budget {:.0}s",
            elapsed.as_secs_f64(),
            budget.as_secs_f64()
        )
    })
}

// ---------------------------------------------------------------- gradients

fn flat(params: &ModelParams) -> Vec<f64> {
    params.named_tensors().into_iter().flat_map(|t| t.data).collect()
}

fn set_flat(params: &mut ModelParams, idx: usize, value: f64) {
    let mut i = idx;
    for t in params.tensors_mut() {
        if i < t.len() {
            t[i] = value;
            return;
        }
        i -= t.len();
    }
    panic!("index out of range");
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let mut worst_all = 0.0f64;
    let mut checked = 0usize;
    for variant in Variant::TRAINABLE {
        let inst = random_instance(7, 10, 15, 4, 3);
        let cfg = ModelConfig {
            variant,
            node_encoder_dims: vec![5, 3],
            edge_encoder_dims: vec![4, 3],
            classifier_dims: vec![4, 3],
            gin_steps: 2,
            seed: 11,
            learn_eps: true,
        };
        let mut params = ModelParams::init(&cfg, 4, 3).map_err(|e| e.to_string())?;
        // Zero biases on zero inputs sit on ReLU kinks; move to a generic point.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for t in params.tensors_mut() {
            for x in t.iter_mut() {
                *x += rng.gen_range(-0.1..0.1);
            }
        }
        let observed: Vec<bool> = (0..15).map(|e| e % 4 != 3).collect();
        let inputs = ModelInputs {
            graph: &inst.graph,
            node_x: &inst.node_x,
            edge_x: &inst.edge_x,
            observed: Some(&observed),
        };
        let batch: Vec<(usize, f64)> = (0..15).filter(|e| observed[*e]).map(|e| (e, (e % 2) as f64)).collect();
        let (_, grads) = batch_gradient(&params, &inputs, &batch, Execution::Sequential).map_err(|e| e.to_string())?;
        let analytic = flat(&grads);
        let base = flat(&params);
        let h = 1e-5;
        let mut worst = 0.0f64;
        for i in 0..base.len() {
            let mut p = params.clone();
            set_flat(&mut p, i, base[i] + h);
            let up = batch_loss(&p, &inputs, &batch, Execution::Sequential).map_err(|e| e.to_string())?;
            set_flat(&mut p, i, base[i] - h);
            let down = batch_loss(&p, &inputs, &batch, Execution::Sequential).map_err(|e| e.to_string())?;
            let fd = (up - down) / (2.0 * h);
            let diff = (fd - analytic[i]).abs();
            if diff > 1e-9 {
                worst = worst.max(diff / fd.abs().max(analytic[i].abs()));
            }
        }
        ensure(worst <= 1e-4, || format!("{variant}: relative error {worst:e}"))?;
        worst_all = worst_all.max(worst);
        checked += base.len();
    }
    within(Duration::from_secs(60), start.elapsed())?;
    Ok(format!(
        "{checked} parameters over {} variants, worst relative error {worst_all:.1e}",
        Variant::TRAINABLE.len()
    ))
}

// ---------------------------------------------------------------- GIN oracle

fn dense_mlp(mlp: &Mlp, x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut h: Vec<Vec<f64>> = x.to_vec();
    let last = mlp.layers.len() - 1;
    for (k, layer) in mlp.layers.iter().enumerate() {
        h = h
            .iter()
            .map(|row| {
                (0..layer.weight.cols())
                    .map(|j| {
                        let z = layer.bias[j] + (0..row.len()).map(|i| row[i] * layer.weight.get(i, j)).sum::<f64>();
                        if k < last {
                            z.max(0.0)
                        } else {
                            z
                        }
                    })
                    .collect()
            })
            .collect();
    }
    h
}

fn gin_oracle() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(1..=8);
        let d = rng.gen_range(1..=5);
        let mut edges = Vec::new();
        for a in 0..n {
            for b in a + 1..n {
                if rng.gen_bool(0.4) {
                    edges.push((a, b, if rng.gen_bool(0.5) { 1.0 } else { -1.0 }));
                }
            }
        }
        let eps = rng.gen_range(-0.5..0.5);
        let h: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        let mut mlp = Mlp::init(&[d, rng.gen_range(1..=6), rng.gen_range(1..=4)], &mut rng);
        for layer in &mut mlp.layers {
            layer.bias.iter_mut().for_each(|b| *b = rng.gen_range(-0.5..0.5));
        }
        let mut a = vec![vec![0.0; n]; n];
        for (v, row) in a.iter_mut().enumerate() {
            row[v] = 1.0 + eps;
        }
        for &(u, v, w) in &edges {
            a[u][v] += w;
            a[v][u] += w;
        }
        let ah: Vec<Vec<f64>> = (0..n)
            .map(|v| (0..d).map(|j| (0..n).map(|u| a[v][u] * h[u][j]).sum()).collect())
            .collect();
        let expected = dense_mlp(&mlp, &ah);
        let adj = SignedAdjacency::new(n, &edges).map_err(|e| e.to_string())?;
        let got = gin_layer(&adj, &Matrix::from_rows(&h).unwrap(), &mlp, eps).map_err(|e| e.to_string())?;
        for (v, row) in expected.iter().enumerate() {
            for (j, x) in row.iter().enumerate() {
                worst = worst.max((got.get(v, j) - x).abs());
            }
        }
    }
    ensure(worst <= 1e-9, || format!("max abs diff {worst:e}"))?;
    within(Duration::from_secs(5), start.elapsed())?;
    Ok(format!("100 graphs, max abs diff {worst:.1e}"))
}

// ---------------------------------------------------------------- tf-idf oracle

const DOCS: [&str; 10] = [
    "war army army river treaty border siege",
    "war navy fleet fleet harbor treaty siege",
    "war army cavalry border border fortress",
    "war rebellion peasant peasant tax monastery",
    "war navy harbor island island colony",
    "war siege fortress fortress cannon army",
    "war treaty alliance alliance border dynasty",
    "war colony island trade trade navy",
    "war dynasty succession succession crown alliance",
    "war rebellion tax crown monastery peasant",
];

fn bag(text: &str) -> Bag {
    let mut b = Bag::new();
    for w in text.split_whitespace() {
        *b.entry(w.to_string()).or_insert(0) += 1;
    }
    b
}

fn tfidf_oracle() -> Outcome {
    let start = Instant::now();
    let docs: Vec<Bag> = DOCS.iter().map(|d| bag(d)).collect();
    let cfg = VocabConfig::default();
    let vocab = build_vocabulary(&docs, CorpusTag::Conflict, &cfg, Execution::Sequential).map_err(|e| e.to_string())?;

    let n = docs.len() as f64;
    let mut df: BTreeMap<&str, u64> = BTreeMap::new();
    let mut total: BTreeMap<&str, u64> = BTreeMap::new();
    for d in &docs {
        for (t, c) in d {
            *df.entry(t).or_default() += 1;
            *total.entry(t).or_default() += c;
        }
    }
    let mut terms: Vec<&str> = df
        .iter()
        .filter(|(_, &k)| (0.01..=0.40).contains(&(k as f64 / n)))
        .map(|(t, _)| *t)
        .collect();
    terms.sort_by(|a, b| total[b].cmp(&total[a]).then(a.cmp(b)));
    terms.truncate(cfg.max_terms);
    ensure(vocab.terms == terms, || {
        format!("vocabulary {:?} != {:?}", vocab.terms, terms)
    })?;
    for t in &vocab.terms {
        let ratio = df[t.as_str()] as f64 / n;
        ensure((0.01..=0.40).contains(&ratio), || format!("{t} has DF {ratio}"))?;
    }

    let mut worst = 0.0f64;
    for d in &docs {
        let raw: Vec<f64> = terms
            .iter()
            .map(|t| {
                let tf = d.get(*t).copied().unwrap_or(0) as f64;
                tf * (((1.0 + n) / (1.0 + df[t] as f64)).ln() + 1.0)
            })
            .collect();
        let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        let expected: Vec<f64> = raw.iter().map(|x| if norm > 0.0 { x / norm } else { 0.0 }).collect();
        let got = tfidf_vector(d, &vocab);
        ensure(got.len() == expected.len(), || "length mismatch".into())?;
        for (g, e) in got.iter().zip(&expected) {
            worst = worst.max((g - e).abs());
        }
    }
    ensure(worst <= 1e-9, || format!("max abs diff {worst:e}"))?;
    within(Duration::from_secs(1), start.elapsed())?;
    Ok(format!("{} terms, max abs diff {worst:.1e}", vocab.len()))
}

// ---------------------------------------------------------------- dyads

fn random_conflict(rng: &mut ChaCha8Rng, id: usize) -> Conflict {
    let mut pool: Vec<usize> = (0..40).collect();
    pool.shuffle(rng);
    let sides = rng.gen_range(2..=4);
    let mut next = 0;
    let belligerents = (0..sides)
        .map(|_| {
            let k = rng.gen_range(1..=4);
            let set: BTreeSet<EntityId> = pool[next..next + k]
                .iter()
                .map(|e| EntityId(format!("e{e:02}")))
                .collect();
            next += k;
            set
        })
        .collect();
    Conflict {
        conflict_id: format!("c{id:03}"),
        belligerents,
    }
}

fn dyad_combinatorics() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let conflicts: Vec<Conflict> = (0..200).map(|i| random_conflict(&mut rng, i)).collect();
    let mut triples = Vec::new();
    let mut total = 0usize;
    for c in &conflicts {
        let members: Vec<(usize, &EntityId)> = c
            .belligerents
            .iter()
            .enumerate()
            .flat_map(|(s, set)| set.iter().map(move |e| (s, e)))
            .collect();
        let mut expected: BTreeMap<(String, String), Label> = BTreeMap::new();
        for (sa, a) in &members {
            for (sb, b) in &members {
                if a < b {
                    let label = if sa == sb { Label::Allies } else { Label::Enemies };
                    expected.insert((a.0.clone(), b.0.clone()), label);
                }
            }
        }
        let got = dyads_from_conflict(c).map_err(|e| e.to_string())?;
        let m = members.len();
        ensure(got.len() == m * (m - 1) / 2, || {
            format!("{}: {} dyads for {m} members", c.conflict_id, got.len())
        })?;
        let got_map: BTreeMap<(String, String), Label> =
            got.iter().map(|(p, l)| ((p.u.0.clone(), p.v.0.clone()), *l)).collect();
        ensure(got_map.len() == got.len(), || {
            format!("{}: repeated pair", c.conflict_id)
        })?;
        ensure(got_map == expected, || {
            format!("{}: dyads differ from enumeration", c.conflict_id)
        })?;
        total += got.len();
        triples.extend(got.into_iter().map(|(p, l)| (p, l, c.conflict_id.clone())));
    }

    let reference = aggregate(&triples);
    let reference_json = serde_json::to_string(&reference.to_file()).unwrap();
    for round in 0..5 {
        let mut shuffled = triples.clone();
        shuffled.shuffle(&mut rng);
        let g = aggregate(&shuffled);
        ensure(g == reference, || format!("aggregate differs after shuffle {round}"))?;
        ensure(serde_json::to_string(&g.to_file()).unwrap() == reference_json, || {
            "serialized graph differs".into()
        })?;

        let mut reordered = conflicts.clone();
        reordered.shuffle(&mut rng);
        for c in &mut reordered {
            c.belligerents.shuffle(&mut rng);
        }
        let built = build_graph(&reordered).map_err(|e| e.to_string())?;
        ensure(built == reference, || {
            format!("build_graph differs after reordering {round}")
        })?;
    }
    within(Duration::from_secs(5), start.elapsed())?;
    Ok(format!(
        "200 conflicts, {total} dyads, {} edges",
        reference.edge_count()
    ))
}

// ---------------------------------------------------------------- benchmarks

fn bench_model(variant: Variant, seed: u64) -> ModelConfig {
    ModelConfig {
        variant,
        node_encoder_dims: vec![16],
        edge_encoder_dims: vec![16],
        classifier_dims: vec![16],
        seed,
        ..Default::default()
    }
}

fn bench_train() -> TrainConfig {
    TrainConfig {
        batch_size: 32,
        ..Default::default()
    }
}

fn majority_closed_form(reports: &[TrainReport]) -> f64 {
    let f: Vec<f64> = reports
        .iter()
        .map(|r| 2.0 * r.test_ally_fraction / (1.0 + r.test_ally_fraction))
        .collect();
    f.iter().sum::<f64>() / f.len() as f64
}

fn mean_f1(g: &SyntheticGraph, variant: Variant, runs: usize) -> Result<(f64, Vec<TrainReport>), String> {
    let data = TrainData {
        graph: &g.graph,
        node_x: &g.node_x,
        edge_x: &g.edge_x,
    };
    let (agg, reports) = run_repeated(
        &bench_model(variant, 0),
        &bench_train(),
        &data,
        runs,
        0,
        Execution::Parallel,
    )
    .map_err(|e| e.to_string())?;
    Ok((agg.mean, reports))
}

fn structural_benchmark_criterion() -> Outcome {
    let start = Instant::now();
    let g = structural_benchmark(&StructuralConfig::default());
    let (s4, reports) = mean_f1(&g, Variant::S4, 10)?;
    let epochs = reports.iter().map(|r| r.stopped_epoch).max().unwrap_or(0);
    let (d, d_reports) = mean_f1(&g, Variant::D, 10)?;
    let maj = majority_closed_form(&d_reports);
    let detail = format!("S4 {s4:.4}, D {d:.4}, MAJ {maj:.4}, {} edges", g.graph.edge_count());
    ensure(epochs <= 30, || format!("{detail}: ran {epochs} epochs"))?;
    ensure(s4 >= 0.95, || format!("{detail}: S4 below 0.95"))?;
    ensure((d - maj).abs() <= 0.05, || {
        format!("{detail}: D not within 0.05 of MAJ")
    })?;
    within(Duration::from_secs(600), start.elapsed())?;
    Ok(detail)
}

fn content_benchmark_criterion() -> Outcome {
    let start = Instant::now();
    let g = content_benchmark(&ContentConfig::default());
    let (d, _) = mean_f1(&g, Variant::D, 10)?;
    let (s4, s4_reports) = mean_f1(&g, Variant::S4, 10)?;
    let maj = majority_closed_form(&s4_reports);
    let detail = format!("D {d:.4}, S4 {s4:.4}, MAJ {maj:.4}, {} edges", g.graph.edge_count());
    ensure(d >= 0.95, || format!("{detail}: D below 0.95"))?;
    ensure((s4 - maj).abs() <= 0.05, || {
        format!("{detail}: S4 not within 0.05 of MAJ")
    })?;
    within(Duration::from_secs(600), start.elapsed())?;
    Ok(detail)
}

// ---------------------------------------------------------------- leakage

fn flipped(graph: &DyadGraph, edges: &[usize]) -> DyadGraph {
    let mut g = graph.clone();
    for &e in edges {
        g.set_label(e, graph.edge(e).label.flipped());
    }
    g
}

fn bits(xs: &[f64]) -> Vec<u64> {
    xs.iter().map(|x| x.to_bits()).collect()
}

fn no_leakage() -> Outcome {
    let g = structural_benchmark(&StructuralConfig {
        nodes: 60,
        majority_faction: 40,
        edge_prob: 0.2,
        ..Default::default()
    });
    let cfg = TrainConfig {
        epochs: 6,
        patience: 2,
        batch_size: 32,
        ..Default::default()
    };
    let split = split_edges(g.graph.edge_count(), Fractions::default(), 3).map_err(|e| e.to_string())?;
    let hidden: Vec<usize> = split.validation.iter().chain(&split.test).copied().collect();
    let observed = split.observed_mask(g.graph.edge_count());
    let g_hidden = flipped(&g.graph, &hidden);
    let g_test = flipped(&g.graph, &split.test);
    let data = |graph| TrainData {
        graph,
        node_x: &g.node_x,
        edge_x: &g.edge_x,
    };
    let inputs = |graph| ModelInputs {
        graph,
        node_x: &g.node_x,
        edge_x: &g.edge_x,
        observed: Some(&observed),
    };
    let mut checks = 0usize;
    for variant in Variant::ALL {
        let model = ModelConfig {
            variant,
            node_encoder_dims: vec![8],
            edge_encoder_dims: vec![8],
            classifier_dims: vec![8],
            seed: 9,
            ..Default::default()
        };
        let (report, params) =
            train(&model, &cfg, &data(&g.graph), &split, Execution::Sequential).map_err(|e| e.to_string())?;
        let Some(params) = params else {
            let (other, _) =
                train(&model, &cfg, &data(&g_hidden), &split, Execution::Sequential).map_err(|e| e.to_string())?;
            ensure(other.test_predictions == report.test_predictions, || {
                "MAJ predictions changed".into()
            })?;
            checks += 1;
            continue;
        };

        // Fixed parameters: hidden labels cannot reach test predictions.
        let base =
            predict(&params, &inputs(&g.graph), &split.test, Execution::Sequential).map_err(|e| e.to_string())?;
        let after =
            predict(&params, &inputs(&g_hidden), &split.test, Execution::Sequential).map_err(|e| e.to_string())?;
        ensure(bits(&base) == bits(&after), || {
            format!("{variant}: validation/test flip changed test predictions")
        })?;
        checks += 1;

        // Target label flips, with every edge observable.
        let open = ModelInputs {
            observed: None,
            ..inputs(&g.graph)
        };
        let all: Vec<usize> = (0..g.graph.edge_count()).collect();
        let full = predict(&params, &open, &all, Execution::Sequential).map_err(|e| e.to_string())?;
        for &t in &split.test {
            let gt = flipped(&g.graph, &[t]);
            let p = predict(
                &params,
                &ModelInputs { graph: &gt, ..open },
                &[t],
                Execution::Sequential,
            )
            .map_err(|e| e.to_string())?;
            ensure(p[0].to_bits() == full[t].to_bits(), || {
                format!("{variant}: target flip changed edge {t}")
            })?;
            checks += 1;
        }

        // Retraining with test labels flipped: identical trajectory and predictions.
        let (r2, p2) = train(&model, &cfg, &data(&g_test), &split, Execution::Sequential).map_err(|e| e.to_string())?;
        ensure(bits(&r2.train_loss) == bits(&report.train_loss), || {
            format!("{variant}: training loss changed")
        })?;
        ensure(r2.validation_f1 == report.validation_f1, || {
            format!("{variant}: validation curve changed")
        })?;
        ensure(r2.test_predictions == report.test_predictions, || {
            format!("{variant}: test predictions changed")
        })?;
        ensure(p2.as_ref().map(flat) == Some(flat(&params)), || {
            format!("{variant}: parameters changed")
        })?;
        checks += 1;

        // Validation labels only select the epoch; the trajectory ignores them.
        let free = TrainConfig {
            patience: cfg.epochs,
            ..cfg.clone()
        };
        let (r3, _) =
            train(&model, &free, &data(&g.graph), &split, Execution::Sequential).map_err(|e| e.to_string())?;
        let (r4, _) =
            train(&model, &free, &data(&g_hidden), &split, Execution::Sequential).map_err(|e| e.to_string())?;
        ensure(bits(&r3.train_loss) == bits(&r4.train_loss), || {
            format!("{variant}: hidden labels changed training")
        })?;
        checks += 1;
    }
    Ok(format!("{} variants, {checks} bitwise checks", Variant::ALL.len()))
}

// ---------------------------------------------------------------- permutation test

fn f1_oracle(pred: &[Label], gold: &[Label]) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
    for (p, g) in pred.iter().zip(gold) {
        match (p.is_allies(), g.is_allies()) {
            (true, true) => tp += 1.0,
            (true, false) => fp += 1.0,
            (false, true) => fn_ += 1.0,
            _ => {}
        }
    }
    if tp == 0.0 {
        0.0
    } else {
        2.0 * tp / (2.0 * tp + fp + fn_)
    }
}

fn noisy(rng: &mut ChaCha8Rng, labels: &[Label], p: f64) -> Vec<Label> {
    labels
        .iter()
        .map(|&l| if rng.gen_bool(p) { l.flipped() } else { l })
        .collect()
}

fn ks_uniform(mut p: Vec<f64>) -> f64 {
    p.sort_by(f64::total_cmp);
    let n = p.len() as f64;
    p.iter()
        .enumerate()
        .map(|(i, &x)| ((i + 1) as f64 / n - x).max(x - i as f64 / n))
        .fold(0.0, f64::max)
}

fn permutation_calibration() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut p_values = Vec::new();
    for trial in 0..200u64 {
        let gold: Vec<Label> = (0..300)
            .map(|_| {
                if rng.gen_bool(0.5) {
                    Label::Allies
                } else {
                    Label::Enemies
                }
            })
            .collect();
        let base = noisy(&mut rng, &gold, 0.25);
        let a = noisy(&mut rng, &base, 0.1);
        let b = noisy(&mut rng, &base, 0.1);
        p_values.push(permutation_test(
            &a,
            &b,
            &gold,
            999,
            trial,
            F1Average::Binary,
            Execution::Parallel,
        ));
    }
    let ks = ks_uniform(p_values);
    ensure(ks < 0.1, || format!("KS statistic {ks:.4}"))?;

    use Label::{Allies as A, Enemies as E};
    let gold = [A, A, E, A];
    let a = [A, A, E, A];
    let b = [E, E, A, A];
    let observed = (f1_oracle(&a, &gold) - f1_oracle(&b, &gold)).abs();
    let mut count = 0;
    for pattern in 0..16u32 {
        let (mut x, mut y) = (a, b);
        for k in 0..4 {
            if pattern >> k & 1 == 1 {
                std::mem::swap(&mut x[k], &mut y[k]);
            }
        }
        if (f1_oracle(&x, &gold) - f1_oracle(&y, &gold)).abs() >= observed - 1e-12 {
            count += 1;
        }
    }
    let oracle = count as f64 / 16.0;
    let exact = permutation_test_exact(&a, &b, &gold, F1Average::Binary);
    ensure(exact == oracle, || format!("exact p {exact} != enumeration {oracle}"))?;
    let mc = permutation_test(&a, &b, &gold, 20_000, 1, F1Average::Binary, Execution::Parallel);
    ensure((mc - oracle).abs() < 0.015, || {
        format!("sampled p {mc} far from exact {oracle}")
    })?;
    Ok(format!("KS {ks:.4}; 4-edge exact p {exact} (sampled {mc:.4})"))
}

// ---------------------------------------------------------------- MAJ

fn majority_closed_form_criterion() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..50u64 {
        let edges = 20 + (seed as usize * 7) % 150;
        let inst = random_instance(seed, 40, edges, 2, 2);
        let split = split_edges(edges, Fractions::default(), seed + 100).map_err(|e| e.to_string())?;
        let data = TrainData {
            graph: &inst.graph,
            node_x: &inst.node_x,
            edge_x: &inst.edge_x,
        };
        let model = ModelConfig {
            variant: Variant::Maj,
            ..Default::default()
        };
        let (report, _) =
            train(&model, &TrainConfig::default(), &data, &split, Execution::Sequential).map_err(|e| e.to_string())?;
        let allies = split
            .test
            .iter()
            .filter(|&&e| inst.graph.edge(e).label.is_allies())
            .count();
        let p = allies as f64 / split.test.len() as f64;
        worst = worst.max((report.test_f1 - 2.0 * p / (1.0 + p)).abs());
    }
    ensure(worst <= 1e-12, || format!("max deviation {worst:e}"))?;
    Ok(format!("50 splits, max deviation {worst:.1e}"))
}

// ---------------------------------------------------------------- CLI determinism

fn cli(args: &[&str]) -> Result<(), String> {
    let o = Command::new(env!("CARGO_BIN_EXE_dyadgraph"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(o.status.success(), || {
        format!("{args:?}: {}", String::from_utf8_lossy(&o.stderr))
    })
}

fn json_close(a: &serde_json::Value, b: &serde_json::Value, path: &str) -> Result<(), String> {
    use serde_json::Value;
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => {
            let (x, y) = (x.as_f64().unwrap(), y.as_f64().unwrap());
            ensure((x - y).abs() <= 1e-9, || format!("{path}: {x} vs {y}"))
        }
        (Value::Array(x), Value::Array(y)) => {
            ensure(x.len() == y.len(), || format!("{path}: lengths differ"))?;
            x.iter()
                .zip(y)
                .enumerate()
                .try_for_each(|(i, (p, q))| json_close(p, q, &format!("{path}[{i}]")))
        }
        (Value::Object(x), Value::Object(y)) => {
            ensure(x.keys().eq(y.keys()), || format!("{path}: keys differ"))?;
            x.iter()
                .filter(|(k, _)| k.as_str() != "wall_time_s")
                .try_for_each(|(k, v)| json_close(v, &y[k], &format!("{path}.{k}")))
        }
        _ => ensure(a == b, || format!("{path}: {a} vs {b}")),
    }
}

fn read_json(path: &Path) -> Result<serde_json::Value, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| e.to_string())
}

fn cli_determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let corpus = tmp.path().join("corpus");
    write_fixture_corpus(&corpus, 30, 11).map_err(|e| e.to_string())?;
    let cfg = tmp.path().join("config.json");
    let config = serde_json::json!({
        "model": {"variants": ["MAJ", "D", "S", "C"], "node_encoder_dims": [8], "edge_encoder_dims": [8], "classifier_dims": [8]},
        "train": {"runs": 3, "epochs": 5, "batch_size": 16, "permutation_resamples": 500}
    });
    std::fs::write(&cfg, config.to_string()).map_err(|e| e.to_string())?;
    let mut outs = Vec::new();
    for name in ["first", "second"] {
        let out = tmp.path().join(name);
        let (c, o) = (cfg.to_str().unwrap(), out.to_str().unwrap());
        cli(&[
            "--config",
            c,
            "--out-dir",
            o,
            "--seed",
            "5",
            "ingest",
            corpus.to_str().unwrap(),
        ])?;
        for cmd in ["build-graph", "featurize", "run"] {
            cli(&["--config", c, "--out-dir", o, "--seed", "5", cmd])?;
        }
        outs.push(out);
    }
    for f in ["graph.json", "features.jsonl"] {
        let a = std::fs::read(outs[0].join(f)).map_err(|e| e.to_string())?;
        let b = std::fs::read(outs[1].join(f)).map_err(|e| e.to_string())?;
        ensure(a == b, || format!("{f} differs between runs"))?;
    }
    for f in ["report.json", "aggregate.json"] {
        json_close(&read_json(&outs[0].join(f))?, &read_json(&outs[1].join(f))?, f)?;
    }
    Ok("graph.json and features.jsonl byte-identical; metrics equal to 1e-9".into())
}

// ---------------------------------------------------------------- full corpus

const FULL_CORPUS_ENV: &str = "DYADGRAPH_FULL_CORPUS";

fn full_corpus() -> Option<Outcome> {
    let corpus = std::env::var(FULL_CORPUS_ENV).ok()?;
    Some((|| {
        let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
        let o = tmp.path().to_str().unwrap();
        cli(&["--out-dir", o, "ingest", &corpus])?;
        for cmd in ["build-graph", "featurize", "run", "analyze"] {
            cli(&["--out-dir", o, cmd])?;
        }
        let stats = read_json(&tmp.path().join("graph_stats.json"))?;
        let edges = stats["edge_count"].as_f64().unwrap_or(0.0);
        let allies = stats["ally_fraction"].as_f64().unwrap_or(0.0);
        ensure((edges - 26_536.0).abs() <= 0.02 * 26_536.0, || format!("{edges} edges"))?;
        ensure((allies - 0.55).abs() <= 0.02, || format!("ally fraction {allies:.4}"))?;
        let agg = read_json(&tmp.path().join("aggregate.json"))?;
        let mean = |v: &str| {
            agg["results"]
                .as_array()
                .and_then(|r| r.iter().find(|x| x["variant"] == v))
                .and_then(|x| x["mean"].as_f64())
                .unwrap_or(f64::NAN)
        };
        let (s, d, c) = (mean("S"), mean("D"), mean("C"));
        ensure(s > d && c >= s, || format!("S {s:.4}, D {d:.4}, C {c:.4}"))?;
        let an = read_json(&tmp.path().join("analysis.json"))?;
        let ally = an["ally_pair_mean_distance"].as_f64().unwrap_or(f64::NAN);
        let enemy = an["enemy_pair_mean_distance"].as_f64().unwrap_or(f64::NAN);
        let p = an["welch"]["p_value"].as_f64().unwrap_or(f64::NAN);
        ensure(ally < enemy && p < 0.05, || {
            format!("ally {ally:.4}, enemy {enemy:.4}, p {p:.3}")
        })?;
        Ok(format!(
            "{edges} edges, {allies:.3} allies; S {s:.3}, D {d:.3}, C {c:.3}; Welch p {p:.2e}"
        ))
    })())
}

// ---------------------------------------------------------------- driver

fn report(name: &str, outcome: Outcome, start: Instant) -> bool {
    let secs = start.elapsed().as_secs_f64();
    match outcome {
        Ok(detail) => {
            println!("PASS  {name}: {detail} ({secs:.1}s)");
            true
        }
        Err(detail) => {
            println!("FAIL  {name}: {detail} ({secs:.1}s)");
            false
        }
    }
}

fn guarded<T>(f: impl FnOnce() -> Result<T, String>) -> Result<T, String> {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        Err(format!("panicked: {msg}"))
    })
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("gradient correctness", gradient_correctness),
        ("GIN oracle equivalence", gin_oracle),
        ("tf-idf oracle equivalence", tfidf_oracle),
        ("dyad combinatorics", dyad_combinatorics),
        ("structural-balance benchmark", structural_benchmark_criterion),
        ("content benchmark", content_benchmark_criterion),
        ("no-leakage suite", no_leakage),
        ("permutation-test calibration", permutation_calibration),
        ("MAJ closed form", majority_closed_form_criterion),
        ("end-to-end determinism", cli_determinism),
    ];
    let filter = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let selected = |name: &str| filter.as_deref().is_none_or(|p| name.contains(p));
    let mut failed = 0;
    for (name, f) in criteria {
        if selected(name) {
            let start = Instant::now();
            if !report(name, guarded(f), start) {
                failed += 1;
            }
        }
    }
    let name = "full-corpus reproduction";
    if selected(name) {
        let start = Instant::now();
        match guarded(|| Ok(full_corpus())) {
            Ok(None) => println!("SKIP  {name}: set {FULL_CORPUS_ENV} to a compatible extraction"),
            Ok(Some(outcome)) => failed += usize::from(!report(name, outcome, start)),
            Err(e) => failed += usize::from(!report(name, Err(e), start)),
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
