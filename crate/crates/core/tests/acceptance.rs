//! End-to-end acceptance suite. Each test prints one pass line; a failure
//! panics with the offending values.

use std::collections::BTreeMap;

use habmod::attribution::sampled_shapley;
use habmod::dataset::{Modality, ProbabilityTable, Scaler};
use habmod::ensemble::{combine, EnsembleSpec};
use habmod::harness::{
    delta_percent, run_ablation, run_attribution, run_cv, AttributionConfig, DatasetSource,
    ExperimentConfig, MemberSpec,
};
use habmod::learners::{self, BoostConfig, ForestConfig, LearnerConfig, MlpConfig};
use habmod::losses::{class_weights, loss_and_grad, LossKind, LossSpec, WeightScheme};
use habmod::metrics::{class_prf, coverage_error, top_k_accuracy};
use habmod::schemes::{
    nested_view, predict_joint, train_strategy, StrategyKind,
};
use habmod::spatial::{assign_blocks, make_folds};
use habmod::stats::{friedman, nemenyi, ScoreMatrix};
use habmod::synth::{generate_synthetic, SyntheticSpec};
use habmod::taxonomy::{FormationRule, Taxonomy};
use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha20Rng;

fn pass(n: usize, what: &str) {
    println!("acceptance {n:02} ({what}): pass");
}

fn fpm(pairs: &[(Modality, usize)]) -> BTreeMap<Modality, usize> {
    pairs.iter().cloned().collect()
}

fn forest_member(n_trees: usize, weight_scheme: WeightScheme) -> MemberSpec {
    MemberSpec {
        name: "forest".into(),
        space: vec![LearnerConfig::Forest(ForestConfig {
            n_trees,
            max_depth: 10,
            weight_scheme,
            ..ForestConfig::default()
        })],
        budget: 1,
    }
}

/// Central finite differences, the independent gradient oracle.
fn fd_grad(logits: &[f64], y: usize, spec: &LossSpec, counts: &[usize], h: f64) -> Vec<f64> {
    (0..logits.len())
        .map(|j| {
            let mut up = logits.to_vec();
            let mut dn = logits.to_vec();
            up[j] += h;
            dn[j] -= h;
            let (lu, _) = loss_and_grad(&up, y, spec, counts).unwrap();
            let (ld, _) = loss_and_grad(&dn, y, spec, counts).unwrap();
            (lu - ld) / (2.0 * h)
        })
        .collect()
}

#[test]
fn a01_loss_gradient_suite() {
    let mut rng = ChaCha20Rng::seed_from_u64(11);
    let kinds = [
        LossKind::Ce,
        LossKind::Wce,
        LossKind::Fl,
        LossKind::Wfl,
        LossKind::Ldam,
        LossKind::Wldam,
    ];
    for case in 0..200 {
        let k = rng.gen_range(2..=6);
        let logits: Vec<f64> = (0..k).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let y = rng.gen_range(0..k);
        let counts: Vec<usize> = (0..k).map(|_| rng.gen_range(1..200)).collect();
        let mut spec = LossSpec::new(kinds[case % kinds.len()]);
        spec.gamma = [0.5, 1.0, 2.0, 3.0][case % 4];
        spec.weights =
            Some(class_weights(&counts, WeightScheme::InverseFrequency, 0.999).unwrap());
        let (_, g) = loss_and_grad(&logits, y, &spec, &counts).unwrap();
        let fd = fd_grad(&logits, y, &spec, &counts, 1e-5);
        for (a, b) in g.iter().zip(&fd) {
            let err = (a - b).abs() / a.abs().max(b.abs()).max(1e-8);
            assert!(err <= 1e-5, "case {case}: analytic {a} vs numeric {b}");
        }
    }

    // Reduction identities.
    let logits = [0.7, -1.1, 2.2, 0.0];
    let counts = [40, 9, 3, 1];
    let ce = LossSpec::new(LossKind::Ce);
    let mut fl0 = LossSpec::new(LossKind::Fl);
    fl0.gamma = 0.0;
    let (lc, gc) = loss_and_grad(&logits, 2, &ce, &counts).unwrap();
    let (lf, gf) = loss_and_grad(&logits, 2, &fl0, &counts).unwrap();
    assert!((lc - lf).abs() <= 1e-6);
    for (a, b) in gc.iter().zip(&gf) {
        assert!((a - b).abs() <= 1e-6);
    }
    let mut ldam0 = LossSpec::new(LossKind::Ldam);
    ldam0.max_margin = 1e-9;
    let (ll, gl) = loss_and_grad(&logits, 2, &ldam0, &counts).unwrap();
    assert!((lc - ll).abs() <= 1e-6);
    for (a, b) in gc.iter().zip(&gl) {
        assert!((a - b).abs() <= 1e-6);
    }
    pass(1, "loss gradients vs finite differences");
}

/// Rank oracle: explicit sort with ties broken by ascending class index.
fn oracle_rank(row: &[f64], y: usize) -> usize {
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap().then(a.cmp(&b)));
    order.iter().position(|&c| c == y).unwrap() + 1
}

#[test]
fn a02_metric_oracle_suite() {
    let mut rng = ChaCha20Rng::seed_from_u64(22);
    for _ in 0..1000 {
        let k = rng.gen_range(2..=6);
        let n = rng.gen_range(1..=20);
        let mut m = Array2::zeros((n, k));
        let mut truth = Vec::with_capacity(n);
        for i in 0..n {
            // Coarse grid so ties actually occur.
            let mut row: Vec<f64> = (0..k).map(|_| (rng.gen_range(0..5) as f64) / 4.0).collect();
            let s: f64 = row.iter().sum();
            if s > 0.0 {
                row.iter_mut().for_each(|v| *v /= s);
            }
            for (j, &v) in row.iter().enumerate() {
                m[[i, j]] = v;
            }
            truth.push(rng.gen_range(0..k));
        }
        let p = ProbabilityTable {
            classes: (0..k).collect(),
            probs: m,
        };
        let kk = rng.gen_range(1..=k);
        let hits = (0..n)
            .filter(|&i| oracle_rank(p.probs.row(i).as_slice().unwrap(), truth[i]) <= kk)
            .count();
        assert_eq!(top_k_accuracy(&p, &truth, kk).unwrap(), hits as f64 / n as f64);
        let cov: f64 = (0..n)
            .map(|i| oracle_rank(p.probs.row(i).as_slice().unwrap(), truth[i]) as f64)
            .sum::<f64>()
            / n as f64;
        assert_eq!(coverage_error(&p, &truth).unwrap(), cov);

        let codes: Vec<String> = (0..k).map(|i| format!("A{i:02}")).collect();
        let taxo = Taxonomy::build(&codes, &FormationRule::PrefixLength(1)).unwrap();
        let pred = p.argmax();
        let cm = class_prf(&pred, &truth, &taxo);
        for c in 0..k {
            let tp = (0..n).filter(|&i| pred[i] == c && truth[i] == c).count();
            let pn = (0..n).filter(|&i| pred[i] == c).count();
            let tn = (0..n).filter(|&i| truth[i] == c).count();
            assert_eq!(cm.per_class[c].precision, (pn > 0).then(|| tp as f64 / pn as f64));
            assert_eq!(cm.per_class[c].recall, (tn > 0).then(|| tp as f64 / tn as f64));
        }
    }
    pass(2, "ranking metrics vs brute-force oracles");
}

#[test]
fn a03_statistics_suite() {
    // Hand case: three blocks, identical strict ordering of three treatments.
    let m = ScoreMatrix::from_rows(
        vec![
            ("b0".into(), vec![Some(0.9), Some(0.5), Some(0.1)]),
            ("b1".into(), vec![Some(0.8), Some(0.6), Some(0.2)]),
            ("b2".into(), vec![Some(0.7), Some(0.4), Some(0.3)]),
        ],
        vec!["s0".into(), "s1".into(), "s2".into()],
    )
    .unwrap();
    let fr = friedman(&m).unwrap();
    assert!((fr.chi2 - 6.0).abs() < 1e-12, "chi2 {}", fr.chi2);
    assert_eq!(fr.df, 2);
    assert!((fr.p - 0.0498).abs() <= 1e-3, "p {}", fr.p);

    // Null simulation: iid continuous scores must reject near the nominal
    // rate under the chi-square approximation.
    let mut rng = ChaCha20Rng::seed_from_u64(33);
    let (n_blocks, k, reps) = (50, 4, 2000);
    let mut rejections = 0usize;
    for _ in 0..reps {
        let rows: Vec<(String, Vec<Option<f64>>)> = (0..n_blocks)
            .map(|b| {
                (
                    format!("b{b}"),
                    (0..k).map(|_| Some(rng.gen::<f64>())).collect(),
                )
            })
            .collect();
        let labels = (0..k).map(|j| format!("s{j}")).collect();
        let m = ScoreMatrix::from_rows(rows, labels).unwrap();
        if friedman(&m).unwrap().p <= 0.05 {
            rejections += 1;
        }
    }
    let rate = rejections as f64 / reps as f64;
    assert!((0.03..=0.07).contains(&rate), "null rejection rate {rate}");

    // Critical difference for k=3 treatments over n=10 blocks at alpha 0.05.
    let rows: Vec<(String, Vec<Option<f64>>)> = (0..10)
        .map(|b| {
            (
                format!("b{b}"),
                vec![Some(b as f64), Some(b as f64 + 0.1), Some(b as f64 + 0.2)],
            )
        })
        .collect();
    let m = ScoreMatrix::from_rows(rows, vec!["a".into(), "b".into(), "c".into()]).unwrap();
    let nem = nemenyi(&m, 0.05).unwrap();
    assert!((nem.cd - 1.0478).abs() <= 1e-3, "cd {}", nem.cd);
    pass(3, "Friedman/Nemenyi hand case, null calibration, CD");
}

fn benchmark_spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        formations: 3,
        leaves_per_formation: 4,
        base_samples_per_leaf: 40,
        decay: 0.85,
        features_per_modality: fpm(&[(Modality::Abio, 5), (Modality::Msi, 4)]),
        seed,
        ..SyntheticSpec::default()
    }
}

#[test]
fn a04_hierarchy_consistency() {
    let (table, taxo) = generate_synthetic(&benchmark_spec(44)).unwrap();
    let mask = [Modality::Bioreg, Modality::Abio, Modality::Msi];
    let cfg = LearnerConfig::Forest(ForestConfig {
        n_trees: 15,
        ..ForestConfig::default()
    });
    let hhdm = train_strategy(StrategyKind::Hhdm, &table, &taxo, &mask, &cfg, 4).unwrap();
    let joint = predict_joint(&hhdm, &table, &taxo).unwrap();

    // Joint marginals equal the router's formation probabilities.
    let (router, _) = hhdm.hhdm_parts().unwrap();
    let rows: Vec<usize> = (0..table.n_rows()).collect();
    let cols = table.columns_for(&mask);
    let x = hhdm.scaler.transform(&table.submatrix(&rows, &cols));
    let r = learners::predict_proba(router, &x).unwrap();
    for i in 0..table.n_rows() {
        for f in 0..taxo.n_formations() {
            let mass: f64 = taxo.leaves_of(f).iter().map(|&l| joint.probs[[i, l]]).sum();
            assert!(
                (mass - r.probs[[i, f]]).abs() <= 1e-12,
                "row {i} formation {f}: {mass} vs {}",
                r.probs[[i, f]]
            );
        }
    }

    // Restricting and renormalizing a flat joint yields unit rows.
    let mhdm = train_strategy(StrategyKind::Mhdm, &table, &taxo, &mask, &cfg, 4).unwrap();
    let flat = predict_joint(&mhdm, &table, &taxo).unwrap();
    for fname in taxo.formations() {
        let nv = nested_view(&flat, &taxo, fname).unwrap();
        for i in 0..table.n_rows() {
            let s: f64 = nv.table.probs.row(i).sum();
            assert!((s - 1.0).abs() <= 1e-9);
        }
    }

    // One formation: the hierarchy collapses to the flat model exactly.
    // Full-sample boosting is seed-invariant, so the two strategies train
    // identical learners despite different internal seed salts.
    let spec = SyntheticSpec {
        formations: 1,
        leaves_per_formation: 4,
        ..benchmark_spec(45)
    };
    let (table1, taxo1) = generate_synthetic(&spec).unwrap();
    let boost = LearnerConfig::Boosting(BoostConfig {
        n_rounds: 10,
        subsample: 1.0,
        ..BoostConfig::default()
    });
    let h1 = train_strategy(StrategyKind::Hhdm, &table1, &taxo1, &mask, &boost, 7).unwrap();
    let m1 = train_strategy(StrategyKind::Mhdm, &table1, &taxo1, &mask, &boost, 7).unwrap();
    let jh = predict_joint(&h1, &table1, &taxo1).unwrap();
    let jm = predict_joint(&m1, &table1, &taxo1).unwrap();
    for (a, b) in jh.probs.iter().zip(jm.probs.iter()) {
        assert_eq!(a, b, "single-formation joint differs from flat");
    }
    pass(4, "hierarchy marginals, nested renormalization, collapse");
}

/// Ten-class long-tailed task; head:tail ratio 50:1.
fn imbalanced_data() -> (Array2<f64>, Vec<usize>, Array2<f64>, Vec<usize>, Vec<usize>) {
    let spec = SyntheticSpec {
        formations: 2,
        leaves_per_formation: 5,
        base_samples_per_leaf: 400,
        decay: 0.6475,
        features_per_modality: fpm(&[(Modality::Abio, 10)]),
        noise: 1.1,
        formation_signal: 1.2,
        leaf_signal: 1.4,
        seed: 55,
        ..SyntheticSpec::default()
    };
    let (table, _) = generate_synthetic(&spec).unwrap();
    let cols = table.columns_for(&[Modality::Abio]);
    let n = table.n_rows();
    let train_rows: Vec<usize> = (0..n).filter(|r| r % 2 == 0).collect();
    let test_rows: Vec<usize> = (0..n).filter(|r| r % 2 == 1).collect();
    let xtr_raw = table.submatrix(&train_rows, &cols);
    let scaler = Scaler::fit(&xtr_raw, &vec![Modality::Abio; cols.len()]);
    let xtr = scaler.transform(&xtr_raw);
    let xte = scaler.transform(&table.submatrix(&test_rows, &cols));
    let ytr = table.labels(&train_rows).unwrap();
    let yte = table.labels(&test_rows).unwrap();
    let counts = table.class_counts(&train_rows, 10);
    (xtr, ytr, xte, yte, counts)
}

/// Mean recall over the three rarest classes.
fn tail_recall(pred: &[usize], truth: &[usize], counts: &[usize]) -> f64 {
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by_key(|&c| counts[c]);
    let tail = &order[..3];
    let codes: Vec<String> = (0..counts.len()).map(|i| format!("A{i:02}")).collect();
    let taxo = Taxonomy::build(&codes, &FormationRule::PrefixLength(1)).unwrap();
    let cm = class_prf(pred, truth, &taxo);
    let r: f64 = tail
        .iter()
        .map(|&c| cm.per_class[c].recall.unwrap_or(0.0))
        .sum();
    r / 3.0
}

#[test]
fn a05_imbalance_behavior() {
    let (xtr, ytr, xte, yte, counts) = imbalanced_data();
    let eval = |cfg: &LearnerConfig| -> f64 {
        let model = learners::fit(cfg, &xtr, &ytr, 10, 0).unwrap();
        let p = learners::predict_proba(&model, &xte).unwrap();
        tail_recall(&p.argmax(), &yte, &counts)
    };

    // Trees: inverse-frequency sample weights vs uniform. Shallow trees with
    // mixed leaves, where the weighting can actually tilt the distributions.
    let plain_forest = eval(&LearnerConfig::Forest(ForestConfig {
        n_trees: 40,
        max_depth: 6,
        min_leaf: 8,
        ..ForestConfig::default()
    }));
    let weighted_forest = eval(&LearnerConfig::Forest(ForestConfig {
        n_trees: 40,
        max_depth: 6,
        min_leaf: 8,
        weight_scheme: WeightScheme::InverseFrequency,
        ..ForestConfig::default()
    }));
    assert!(
        weighted_forest - plain_forest >= 0.05,
        "forest tail recall: weighted {weighted_forest} vs plain {plain_forest}"
    );

    // Network: each imbalance-aware objective vs plain cross-entropy.
    let mlp = |loss: LossKind, scheme: WeightScheme| {
        let mut spec = LossSpec::new(loss);
        // Margins must be sizable relative to free-scale logits to bite.
        spec.max_margin = 1.5;
        LearnerConfig::Mlp {
            config: MlpConfig {
                hidden: vec![32],
                max_epochs: 80,
                seed: 5,
                ..MlpConfig::default()
            },
            loss: spec,
            weight_scheme: scheme,
        }
    };
    let base = eval(&mlp(LossKind::Ce, WeightScheme::Uniform));
    for (name, cfg) in [
        ("WCE", mlp(LossKind::Wce, WeightScheme::InverseFrequency)),
        ("FL", mlp(LossKind::Fl, WeightScheme::Uniform)),
        ("LDAM", mlp(LossKind::Ldam, WeightScheme::Uniform)),
    ] {
        let r = eval(&cfg);
        assert!(
            r - base >= 0.05,
            "{name} tail recall {r} vs CE baseline {base}"
        );
    }
    pass(5, "imbalance-aware training lifts tail recall");
}

#[test]
fn a06_scheme_ordering() {
    // Three formations of eight confusable leaves: strong formation signal,
    // weak leaf signal.
    let spec = SyntheticSpec {
        formations: 3,
        leaves_per_formation: 8,
        base_samples_per_leaf: 110,
        decay: 1.0,
        features_per_modality: fpm(&[(Modality::Abio, 8)]),
        noise: 1.3,
        formation_signal: 1.4,
        leaf_signal: 0.55,
        seed: 66,
        ..SyntheticSpec::default()
    };
    let (table, taxo) = generate_synthetic(&spec).unwrap();
    let mask = [Modality::Bioreg, Modality::Abio];
    let n = table.n_rows();
    let train_rows: Vec<usize> = (0..n).filter(|r| r % 2 == 0).collect();
    let test_rows: Vec<usize> = (0..n).filter(|r| r % 2 == 1).collect();
    let train = table.subset(&train_rows);
    let test = table.subset(&test_rows);
    let truth: Vec<usize> = test_rows.iter().map(|&r| table.leaf[r].unwrap()).collect();
    let cfg = LearnerConfig::Forest(ForestConfig {
        n_trees: 40,
        max_depth: 12,
        ..ForestConfig::default()
    });

    let hhdm = train_strategy(StrategyKind::Hhdm, &train, &taxo, &mask, &cfg, 6).unwrap();
    let mhdm = train_strategy(StrategyKind::Mhdm, &train, &taxo, &mask, &cfg, 6).unwrap();
    let jh = predict_joint(&hhdm, &test, &taxo).unwrap();
    let jm = predict_joint(&mhdm, &test, &taxo).unwrap();

    // Flat evaluation: argmax over all leaves.
    let flat_f1 = class_prf(&jm.argmax(), &truth, &taxo).macro_f1;
    // Nested evaluation: restrict each row's joint to its true formation.
    let nested_f1 = |joint: &ProbabilityTable| -> f64 {
        let mut pred = vec![0usize; truth.len()];
        for fname in taxo.formations() {
            let nv = nested_view(joint, &taxo, fname).unwrap();
            let f = taxo.formation_index(fname).unwrap();
            for (i, &t) in truth.iter().enumerate() {
                if taxo.parent_of(t) == f {
                    let row = nv.table.probs.row(i);
                    let j = row
                        .iter()
                        .enumerate()
                        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(&a.0)))
                        .unwrap()
                        .0;
                    pred[i] = nv.table.classes[j];
                }
            }
        }
        class_prf(&pred, &truth, &taxo).macro_f1
    };
    let hhdm_wf = nested_f1(&jh);
    let mhdm_wf = nested_f1(&jm);

    assert!(
        hhdm_wf >= flat_f1,
        "hhdm within-formation {hhdm_wf} < mhdm flat {flat_f1}"
    );
    let gap = hhdm_wf - flat_f1;
    let recovered = mhdm_wf - flat_f1;
    assert!(
        gap <= 0.0 || recovered >= 0.8 * gap,
        "nested evaluation recovers {recovered} of gap {gap}"
    );
    pass(6, "scheme ordering and evaluation-context gap");
}

#[test]
fn a07_spatial_leakage() {
    // Strong per-cluster feature offsets: nearby samples share information a
    // random split leaks into training.
    let spec = SyntheticSpec {
        formations: 3,
        leaves_per_formation: 4,
        base_samples_per_leaf: 50,
        decay: 1.0,
        features_per_modality: fpm(&[(Modality::Abio, 6)]),
        noise: 1.1,
        formation_signal: 1.2,
        leaf_signal: 0.7,
        autocorr_noise: 1.5,
        cluster_radius: 120.0,
        domain_size: 8000.0,
        seed: 77,
        ..SyntheticSpec::default()
    };
    let (table, taxo) = generate_synthetic(&spec).unwrap();
    let cols = table.columns_for(&[Modality::Abio]);
    let k = taxo.n_leaves();
    let cfg = LearnerConfig::Forest(ForestConfig {
        n_trees: 30,
        max_depth: 12,
        ..ForestConfig::default()
    });
    let n_folds = 4;

    let pooled_top1 = |fold_of_row: &[usize]| -> f64 {
        let mut hits = 0usize;
        for fold in 0..n_folds {
            let tr: Vec<usize> = (0..table.n_rows()).filter(|&r| fold_of_row[r] != fold).collect();
            let te: Vec<usize> = (0..table.n_rows()).filter(|&r| fold_of_row[r] == fold).collect();
            let model = learners::fit(
                &cfg,
                &table.submatrix(&tr, &cols),
                &table.labels(&tr).unwrap(),
                k,
                0,
            )
            .unwrap();
            let p = learners::predict_proba(&model, &table.submatrix(&te, &cols)).unwrap();
            let truth = table.labels(&te).unwrap();
            hits += p
                .argmax()
                .iter()
                .zip(&truth)
                .filter(|(a, b)| a == b)
                .count();
        }
        hits as f64 / table.n_rows() as f64
    };

    // Spatial-block folds; the audit inside the harness asserts zero overlap,
    // checked here directly as well.
    let grid = assign_blocks(&table, 500.0).unwrap();
    let plan = make_folds(&grid, &table, &taxo, n_folds, 7).unwrap();
    for fold in 0..n_folds {
        let test_blocks: std::collections::BTreeSet<usize> = plan
            .test_rows(fold)
            .iter()
            .map(|&r| grid.block_of_row[r])
            .collect();
        for r in plan.train_rows(fold) {
            assert!(!test_blocks.contains(&grid.block_of_row[r]), "block leakage");
        }
    }
    let spatial = pooled_top1(&plan.fold_of_row);

    // Random split ignoring blocks.
    let mut rng = ChaCha20Rng::seed_from_u64(7);
    let mut order: Vec<usize> = (0..table.n_rows()).collect();
    order.shuffle(&mut rng);
    let mut random_fold = vec![0usize; table.n_rows()];
    for (i, &r) in order.iter().enumerate() {
        random_fold[r] = i % n_folds;
    }
    let random = pooled_top1(&random_fold);

    assert!(
        random > spatial,
        "random-split top1 {random} not above spatial-block top1 {spatial}"
    );
    pass(7, "leakage audit and random-vs-spatial CV gap");
}

#[test]
fn a08_ensemble() {
    let (table, taxo) = generate_synthetic(&benchmark_spec(88)).unwrap();
    let mask = [Modality::Bioreg, Modality::Abio, Modality::Msi];
    let n = table.n_rows();
    let mut rng = ChaCha20Rng::seed_from_u64(8);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let (test_part, rest) = order.split_at(n / 5);
    let (hold_part, train_part) = rest.split_at(n / 5);
    let sorted = |v: &[usize]| {
        let mut v = v.to_vec();
        v.sort_unstable();
        v
    };
    let train = table.subset(&sorted(train_part));
    let hold = table.subset(&sorted(hold_part));
    let test = table.subset(&sorted(test_part));
    let hold_truth: Vec<usize> = sorted(hold_part)
        .iter()
        .map(|&r| table.leaf[r].unwrap())
        .collect();
    let truth: Vec<usize> = sorted(test_part)
        .iter()
        .map(|&r| table.leaf[r].unwrap())
        .collect();

    let members = [
        LearnerConfig::Forest(ForestConfig {
            n_trees: 30,
            ..ForestConfig::default()
        }),
        LearnerConfig::Boosting(BoostConfig {
            n_rounds: 30,
            ..BoostConfig::default()
        }),
        LearnerConfig::Mlp {
            config: MlpConfig {
                hidden: vec![32],
                max_epochs: 60,
                ..MlpConfig::default()
            },
            loss: LossSpec::new(LossKind::Ce),
            weight_scheme: WeightScheme::Uniform,
        },
    ];
    let mut tables = Vec::new();
    let mut scores = Vec::new();
    for (i, cfg) in members.iter().enumerate() {
        let model =
            train_strategy(StrategyKind::Mhdm, &train, &taxo, &mask, cfg, 80 + i as u64).unwrap();
        let ph = predict_joint(&model, &hold, &taxo).unwrap();
        scores.push(class_prf(&ph.argmax(), &hold_truth, &taxo).macro_f1);
        tables.push(predict_joint(&model, &test, &taxo).unwrap());
    }
    let spec = EnsembleSpec::new(
        vec!["forest".into(), "boosting".into(), "mlp".into()],
        scores,
    )
    .unwrap();
    let weights = spec.weights();
    let combined = combine(&tables, &weights).unwrap();

    let best_member_ce = tables
        .iter()
        .map(|t| coverage_error(t, &truth).unwrap())
        .fold(f64::INFINITY, f64::min);
    let ens_ce = coverage_error(&combined, &truth).unwrap();
    assert!(
        ens_ce <= best_member_ce + 0.10,
        "ensemble coverage error {ens_ce} vs best member {best_member_ce}"
    );

    // Exact per-cell convexity.
    for i in 0..combined.n_rows() {
        for j in 0..combined.n_classes() {
            let manual: f64 = tables
                .iter()
                .zip(&weights)
                .map(|(t, &w)| w * t.probs[[i, j]])
                .sum();
            assert!((combined.probs[[i, j]] - manual).abs() <= 1e-12);
            let lo = tables.iter().map(|t| t.probs[[i, j]]).fold(f64::INFINITY, f64::min);
            let hi = tables
                .iter()
                .map(|t| t.probs[[i, j]])
                .fold(f64::NEG_INFINITY, f64::max);
            assert!(combined.probs[[i, j]] >= lo - 1e-12 && combined.probs[[i, j]] <= hi + 1e-12);
        }
    }
    pass(8, "weighted ensemble ranking and convexity");
}

fn attribution_config(seed: u64) -> ExperimentConfig {
    let spec = SyntheticSpec {
        formations: 2,
        leaves_per_formation: 3,
        base_samples_per_leaf: 60,
        decay: 1.0,
        features_per_modality: fpm(&[(Modality::Abio, 6), (Modality::Sar, 4)]),
        noise_modalities: vec![Modality::Sar],
        noise: 1.0,
        formation_signal: 2.0,
        leaf_signal: 1.2,
        seed,
        ..SyntheticSpec::default()
    };
    ExperimentConfig {
        dataset: DatasetSource::Synthetic(spec),
        schemes: vec![StrategyKind::Mhdm],
        mask: "bioreg,abio,sar".into(),
        members: vec![forest_member(25, WeightScheme::Uniform)],
        n_folds: 3,
        block_size: 1500.0,
        tuning_fraction: 0.1,
        ks: vec![3],
        seed,
        missing_policy: Default::default(),
    }
}

#[test]
fn a09_attribution() {
    // Closed form for a linear model: phi_j = w_j (x_j - mean background_j).
    let d = 6;
    let mut rng = ChaCha20Rng::seed_from_u64(99);
    let w: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let b = 0.7;
    let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let background =
        Array2::from_shape_fn((40, d), |_| rng.gen_range(-1.0..1.0));
    let f = {
        let w = w.clone();
        move |v: &[f64]| b + v.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>()
    };
    let res = sampled_shapley(&f, &x, &background, 2000, 9).unwrap();
    for j in 0..d {
        let bg_mean = background.column(j).mean().unwrap();
        let exact = w[j] * (x[j] - bg_mean);
        let rel = (res.phi[j] - exact).abs() / exact.abs().max(1e-8);
        assert!(rel <= 0.02, "feature {j}: {} vs {exact}", res.phi[j]);
    }
    assert!(res.efficiency_gap.abs() <= 1e-9);

    // Planted-signal vs planted-noise modality shares.
    let cfg = attribution_config(99);
    let attr = AttributionConfig {
        permutations: 150,
        background: 60,
        instances_per_formation: 10,
    };
    let summary = run_attribution(&cfg, &attr).unwrap();
    let abio = summary.overall.shares[&Modality::Abio];
    let sar = summary.overall.shares[&Modality::Sar];
    assert!(abio > 0.5, "signal modality share {abio}");
    assert!(sar < 0.1, "noise modality share {sar}");
    pass(9, "sampled Shapley closed form and planted shares");
}

#[test]
fn a10_ablation_arithmetic() {
    assert!((delta_percent(3.333, 3.0) - 11.1).abs() <= 0.01);

    let cfg = attribution_config(110);
    let report = run_ablation(&cfg).unwrap();
    let row = |m: Modality| report.rows.iter().find(|r| r.removed == m).unwrap();
    let signal = row(Modality::Abio).delta_pct;
    let noise = row(Modality::Sar).delta_pct;
    assert!(signal >= 5.0, "removing signal modality: {signal}%");
    assert!(noise.abs() <= 2.0, "removing noise modality: {noise}%");
    pass(10, "ablation deltas for planted signal and noise");
}

#[test]
fn a11_determinism() {
    let cfg = ExperimentConfig {
        dataset: DatasetSource::Synthetic(benchmark_spec(111)),
        schemes: vec![StrategyKind::Mhdm, StrategyKind::Biogeo],
        mask: "bioreg,abio,msi".into(),
        members: vec![forest_member(15, WeightScheme::Uniform)],
        n_folds: 3,
        block_size: 1500.0,
        tuning_fraction: 0.1,
        ks: vec![3],
        seed: 11,
        missing_policy: Default::default(),
    };
    let run_with = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_cv(&cfg).unwrap().canonical_json().unwrap())
    };
    let single_a = run_with(1);
    let single_b = run_with(1);
    assert_eq!(single_a, single_b, "single-thread reruns differ");
    let multi = run_with(4);
    // Per-item seeding makes the pipeline schedule-independent, so the
    // multi-thread report is byte-identical too.
    assert_eq!(single_a, multi, "thread count changed the report");
    pass(11, "byte-identical reruns across thread counts");
}
