use sponsored_ctr::bucketfeat::{assign_bucket, build_history_table, HistoryKey};
use sponsored_ctr::data::{BucketLayout, Dataset, ImpressionRecord, ModuleKind};
use sponsored_ctr::learner::{train, TrainConfig, TrainingInstance};
use sponsored_ctr::multitask::{apply_multitask, MultiTaskConfig, MultiTaskMode};
use sponsored_ctr::pipeline::{prepare, run_ablation, Method, PipelineConfig};
use sponsored_ctr::simgen::{generate_logs, SimConfig};

#[test]
fn bucket_ctr_falls_with_position_under_random_placement() {
    let cfg = SimConfig {
        seed: 17,
        impressions: 200_000,
        num_queries: 60,
        num_items: 300,
        randomize_placement: true,
        propensity_decay: 0.7,
        ..SimConfig::default()
    };
    let (logs, _) = generate_logs(&cfg).unwrap();
    let table = build_history_table(&logs, cfg.num_days, cfg.num_days, 1.0, None).unwrap();
    let buckets = logs.layout.num_buckets();
    let mut items: Vec<(&str, ModuleKind)> = logs.records.iter().map(|r| (r.item_id.as_str(), r.module_kind)).collect();
    items.sort();
    items.dedup();
    let mean: Vec<f64> = (1..=buckets)
        .map(|b| {
            items
                .iter()
                .map(|(item, module)| table.lookup(&HistoryKey::bucket(item, *module, b)).smoothed_ctr)
                .sum::<f64>()
                / items.len() as f64
        })
        .collect();
    assert!(mean.windows(2).all(|w| w[1] <= w[0]), "bucket means {mean:?}");
    assert!(mean[0] > mean[buckets as usize - 1] * 1.5);
    assert_eq!(assign_bucket(cfg.layout.max_position, &logs.layout).unwrap(), buckets);
}

fn record(item: &str, feature: [f64; 2], click: u8, conversion: u8) -> ImpressionRecord {
    ImpressionRecord {
        query_id: "q".into(),
        item_id: item.into(),
        seller_id: "s".into(),
        day: 0,
        module_kind: ModuleKind::InGrid,
        position: 1,
        base_features: feature.to_vec(),
        cpc: 1.0,
        click,
        conversion,
    }
}

/// Item A's clicks never convert, item B's always do; shrinking `a` should only
/// push A's score down relative to B's.
#[test]
fn lower_a_never_favors_unconverted_clicks() {
    let mut records = Vec::new();
    for i in 0..40 {
        let click = u8::from(i < 10);
        records.push(record("a", [1.0, 0.0], click, 0));
        records.push(record("b", [0.0, 1.0], click, click));
    }
    let ds = Dataset::new(records, BucketLayout::default()).unwrap();
    let mut prev = f64::INFINITY;
    for a in [1.0, 0.8, 0.6, 0.4, 0.2, 0.05] {
        let mt = MultiTaskConfig { mode: MultiTaskMode::InstanceWeighting, a, seed: 0 };
        let (labels, weights) = apply_multitask(&ds, &mt).unwrap();
        let inst: Vec<TrainingInstance> = ds
            .records
            .iter()
            .zip(labels.iter().zip(&weights))
            .map(|(r, (&label, &weight))| TrainingInstance { features: r.base_features.clone(), label, weight })
            .collect();
        let model = train(&inst, &TrainConfig::default()).unwrap();
        let gap = model.predict(&[1.0, 0.0]).unwrap() - model.predict(&[0.0, 1.0]).unwrap();
        if a == 1.0 {
            assert!(gap.abs() < 1e-9);
        }
        assert!(gap <= prev + 1e-12, "a={a}: gap {gap} after {prev}");
        prev = gap;
    }
    assert!(prev < -0.01);
}

#[test]
fn small_ablation_is_complete_and_deterministic() {
    let config = PipelineConfig::from_json(
        r#"{"sim":{"impressions":36000,"num_queries":60,"num_items":300,"feature_dim":5},"train":{"max_iters":150}}"#,
    )
    .unwrap();
    let (logs, truth) = generate_logs(&config.sim).unwrap();
    let prepared = prepare(&config, &logs, &truth).unwrap();
    let (models, table) = run_ablation(&config, &prepared).unwrap();
    assert_eq!(models.len(), 4);
    for method in [Method::Raw, Method::AbDeb, Method::AbMul, Method::Prac] {
        let row = table.get(method).unwrap();
        let o = &row.offline;
        for v in [o.ctr_auroc, o.ctr_auprc, o.ctcvr_auroc, o.ctcvr_auprc, o.logloss] {
            assert!(v.is_finite() && v > 0.0);
        }
        assert!(row.online.ectr > 0.0 && row.online.ecpmv > 0.0 && row.online.roas.is_some());
    }
    assert_eq!(table.get(Method::Raw).unwrap().selection.c, 1.0);

    let (_, again) = run_ablation(&config, &prepare(&config, &logs, &truth).unwrap()).unwrap();
    assert_eq!(table.render(), again.render());
}
