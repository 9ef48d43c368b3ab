use std::cmp::Ordering;

use proptest::prelude::*;

use sponsored_ctr::auction::{rank_slate, squash_score, Candidate, SquashConfig};
use sponsored_ctr::data::{BucketLayout, Dataset, ImpressionRecord, ModuleKind};
use sponsored_ctr::evalkit::{auprc, auroc, ScoredLabels};
use sponsored_ctr::learner::{train, TrainConfig, TrainingInstance, WeightedObjective};
use sponsored_ctr::multitask::{apply_multitask, MultiTaskConfig, MultiTaskMode};

fn brute_auroc(s: &[f64], y: &[u8]) -> f64 {
    let mut credit = 0.0;
    let mut pairs = 0.0;
    for (si, yi) in s.iter().zip(y) {
        for (sj, yj) in s.iter().zip(y) {
            if *yi == 1 && *yj == 0 {
                pairs += 1.0;
                credit += match si.partial_cmp(sj).unwrap() {
                    Ordering::Greater => 1.0,
                    Ordering::Equal => 0.5,
                    Ordering::Less => 0.0,
                };
            }
        }
    }
    credit / pairs
}

fn brute_auprc(s: &[f64], y: &[u8]) -> f64 {
    let positives: Vec<f64> = s.iter().zip(y).filter(|(_, &l)| l == 1).map(|(v, _)| *v).collect();
    positives
        .iter()
        .map(|&t| {
            let retrieved: Vec<u8> = s.iter().zip(y).filter(|(v, _)| **v >= t).map(|(_, l)| *l).collect();
            retrieved.iter().map(|&l| l as f64).sum::<f64>() / retrieved.len() as f64
        })
        .sum::<f64>()
        / positives.len() as f64
}

/// Scores drawn from a few levels so ties are common; both classes present.
fn scored() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    (2usize..80).prop_flat_map(|n| {
        (
            prop::collection::vec((0u8..6).prop_map(|k| k as f64 / 5.0), n),
            prop::collection::vec(0u8..=1, n),
        )
            .prop_map(|(s, mut y)| {
                y[0] = 1;
                y[1] = 0;
                (s, y)
            })
    })
}

fn candidate() -> impl Strategy<Value = Candidate> {
    (0u16..500, 1u8..20, 1u8..8).prop_map(|(id, p, cpc)| Candidate {
        item_id: format!("item{id:03}"),
        seller_id: String::new(),
        pctr: p as f64 / 20.0,
        cpc: cpc as f64 / 2.0,
        expected_order_value: 40.0,
    })
}

fn instances(n: usize, d: usize) -> impl Strategy<Value = Vec<TrainingInstance>> {
    prop::collection::vec(
        (prop::collection::vec(-2.0f64..2.0, d), 0u8..=1, 0.2f64..4.0)
            .prop_map(|(features, label, weight)| TrainingInstance { features, label, weight }),
        n,
    )
    .prop_map(|mut v| {
        v[0].label = 1;
        v[1].label = 0;
        v
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn metrics_match_brute_force((s, y) in scored()) {
        let data = ScoredLabels::new(s.clone(), y.clone()).unwrap();
        prop_assert!((auroc(&data).unwrap() - brute_auroc(&s, &y)).abs() <= 1e-12);
        prop_assert!((auprc(&data).unwrap() - brute_auprc(&s, &y)).abs() <= 1e-12);
    }

    #[test]
    fn metrics_invariant_under_increasing_transform((s, y) in scored()) {
        let a = ScoredLabels::new(s.clone(), y.clone()).unwrap();
        let t: Vec<f64> = s.iter().map(|v| (3.0 * v).exp() - 7.0).collect();
        let b = ScoredLabels::new(t, y).unwrap();
        prop_assert_eq!(auroc(&a).unwrap(), auroc(&b).unwrap());
        prop_assert_eq!(auprc(&a).unwrap(), auprc(&b).unwrap());
    }

    #[test]
    fn auroc_label_flip_symmetry((s, y) in scored()) {
        let a = auroc(&ScoredLabels::new(s.clone(), y.clone()).unwrap()).unwrap();
        let flipped = ScoredLabels::new(s.iter().map(|v| -v).collect(), y.iter().map(|l| 1 - l).collect()).unwrap();
        prop_assert!((a - auroc(&flipped).unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn gradient_matches_central_differences(
        data in (1usize..6).prop_flat_map(|d| (Just(d), instances(12, d), prop::collection::vec(-1.0f64..1.0, d + 1))),
        l2 in 0.0f64..0.3,
    ) {
        let (_, inst, params) = data;
        let x: Vec<Vec<f64>> = inst.iter().map(|t| t.features.clone()).collect();
        let y: Vec<u8> = inst.iter().map(|t| t.label).collect();
        let w: Vec<f64> = inst.iter().map(|t| t.weight).collect();
        let obj = WeightedObjective::new(&x, &y, &w, l2).unwrap();
        let (_, grad) = obj.loss_and_gradient(&params);
        let h = 1e-6;
        let mut err = 0.0;
        let mut norm = 0.0;
        for j in 0..params.len() {
            let mut up = params.clone();
            let mut down = params.clone();
            up[j] += h;
            down[j] -= h;
            let fd = (obj.loss(&up) - obj.loss(&down)) / (2.0 * h);
            err += (fd - grad[j]).powi(2);
            norm += grad[j].powi(2);
        }
        prop_assert!(err.sqrt() <= 1e-6 * norm.sqrt().max(1e-3));
    }

    #[test]
    fn weight_scale_invariance(inst in instances(20, 3), k in 0.01f64..100.0) {
        let cfg = TrainConfig::default();
        let a = train(&inst, &cfg).unwrap();
        let scaled: Vec<_> = inst.iter().map(|t| TrainingInstance { weight: t.weight * k, ..t.clone() }).collect();
        let b = train(&scaled, &cfg).unwrap();
        for (x, y) in a.coefficients.iter().zip(&b.coefficients) {
            prop_assert!((x - y).abs() <= 1e-9);
        }
        prop_assert!((a.intercept - b.intercept).abs() <= 1e-9);
    }

    #[test]
    fn duplication_equals_double_weight(inst in instances(15, 2), which in 0usize..15) {
        let cfg = TrainConfig::default();
        let mut doubled = inst.clone();
        doubled[which].weight *= 2.0;
        let mut copied = inst.clone();
        copied.push(inst[which].clone());
        let a = train(&doubled, &cfg).unwrap();
        let b = train(&copied, &cfg).unwrap();
        for (x, y) in a.coefficients.iter().zip(&b.coefficients) {
            prop_assert!((x - y).abs() <= 1e-9);
        }
    }

    #[test]
    fn c_one_is_baseline_order(cands in prop::collection::vec(candidate(), 1..25)) {
        let slate = rank_slate(&cands, &SquashConfig { c: 1.0 }, cands.len()).unwrap();
        let mut base = cands.clone();
        base.sort_by(|a, b| {
            (b.pctr * b.cpc)
                .total_cmp(&(a.pctr * a.cpc))
                .then(b.pctr.total_cmp(&a.pctr))
                .then(a.item_id.cmp(&b.item_id))
        });
        prop_assert_eq!(slate, base);
    }

    #[test]
    fn slate_is_sorted_prefix(cands in prop::collection::vec(candidate(), 1..25), c in 0.0f64..6.0, cut in 0.0f64..1.0) {
        let size = 1 + ((cands.len() - 1) as f64 * cut) as usize;
        let cfg = SquashConfig { c };
        let slate = rank_slate(&cands, &cfg, size).unwrap();
        prop_assert_eq!(slate.len(), size);
        for w in slate.windows(2) {
            prop_assert!(squash_score(&w[0], &cfg) >= squash_score(&w[1], &cfg));
        }
        // Nothing left out scores strictly above the last slot.
        let last = squash_score(slate.last().unwrap(), &cfg);
        let kept = slate.len();
        let above = cands.iter().filter(|x| squash_score(x, &cfg) > last).count();
        prop_assert!(above < kept);
    }

    #[test]
    fn pair_order_flips_at_most_once(a in candidate(), b in candidate()) {
        prop_assume!(a.pctr != b.pctr && a.item_id != b.item_id);
        let mut flips = 0;
        let mut prev = None;
        for step in 0..=400 {
            let c = step as f64 * 0.05;
            let first = rank_slate(&[a.clone(), b.clone()], &SquashConfig { c }, 1).unwrap()[0].item_id.clone();
            if prev.as_ref().is_some_and(|p| *p != first) {
                flips += 1;
            }
            prev = Some(first);
        }
        prop_assert!(flips <= 1);
    }

    #[test]
    fn aggregated_labels_sit_between_ctcvr_and_ctr(
        funnel in prop::collection::vec((0u8..=1, 0u8..=1).prop_map(|(c, v)| (c, c & v)), 1..200),
        a in 0.0f64..=1.0,
        seed in any::<u64>(),
    ) {
        let records: Vec<ImpressionRecord> = funnel
            .iter()
            .enumerate()
            .map(|(i, &(click, conversion))| ImpressionRecord {
                query_id: "q".into(),
                item_id: format!("i{i}"),
                seller_id: "s".into(),
                day: 0,
                module_kind: ModuleKind::InGrid,
                position: 1,
                base_features: vec![0.0],
                cpc: 1.0,
                click,
                conversion,
            })
            .collect();
        let ds = Dataset::new(records, BucketLayout::default()).unwrap();
        let cfg = MultiTaskConfig { mode: MultiTaskMode::StochasticAggregation, a, seed };
        let (labels, weights) = apply_multitask(&ds, &cfg).unwrap();
        for ((l, w), r) in labels.iter().zip(&weights).zip(&ds.records) {
            prop_assert!(*l >= r.conversion && *l <= r.click);
            prop_assert_eq!(*w, 1.0);
        }
        prop_assert_eq!(&labels, &apply_multitask(&ds, &cfg).unwrap().0);
    }
}
