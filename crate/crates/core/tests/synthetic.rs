use partfuse::protocol::{run_single_dataset_eer, ProtocolConfig, TrialMode};
use partfuse::synth::{generate, ScenarioSpec, SyntheticDataset};
use partfuse::RegionTag;

fn spec(n: usize, seed: u64, regions: &[(RegionTag, f64, f64)]) -> ScenarioSpec {
    ScenarioSpec {
        n_subjects: n,
        dim: 64,
        seed,
        dataset_id: "custom".into(),
        provider_id: "synthetic".into(),
        region_noise: regions.iter().map(|&(r, s, _)| (r, s)).collect(),
        makeup_shift: regions.iter().map(|&(r, _, d)| (r, d)).collect(),
    }
}

fn region_eer(d: &SyntheticDataset, r: RegionTag) -> f64 {
    let mut cfg = ProtocolConfig::new(vec![r], d.providers.clone());
    cfg.fusion = false;
    run_single_dataset_eer(&d.manifest, &d.store, TrialMode::BeforeVsAfter, &cfg)
        .unwrap()
        .result
        .headline()
        .eer
}

#[test]
fn noiseless_population_is_perfect() {
    let d = generate(&spec(20, 1, &[(RegionTag::Holistic, 0.0, 0.0)])).unwrap();
    for rec in d.store.records() {
        let twin = d
            .store
            .records()
            .find(|o| o.subject_id == rec.subject_id && o.image_id != rec.image_id)
            .unwrap();
        assert!((partfuse::embedding::cosine_similarity(rec.vector(), twin.vector()) - 1.0).abs() < 1e-12);
    }
    assert_eq!(region_eer(&d, RegionTag::Holistic), 0.0);
}

#[test]
fn clean_part_beats_perturbed_holistic() {
    let d = generate(&spec(
        60,
        4,
        &[(RegionTag::Holistic, 0.5, 20.0), (RegionTag::Nose, 0.5, 0.0)],
    ))
    .unwrap();
    assert!(region_eer(&d, RegionTag::Nose) < region_eer(&d, RegionTag::Holistic));
}

#[test]
fn same_seed_gives_identical_store() {
    let s = ScenarioSpec::scenario_s1(42);
    let (a, b) = (generate(&s).unwrap(), generate(&s).unwrap());
    assert_eq!(a.store.to_csv(), b.store.to_csv());
    assert_eq!(a.manifest, b.manifest);
    assert_ne!(a.store.to_csv(), generate(&ScenarioSpec::scenario_s1(43)).unwrap().store.to_csv());
}

#[test]
fn holistic_eer_grows_with_makeup_shift() {
    let grid = [0.0, 0.5, 1.0, 2.0, 4.0];
    let mut inversions = 0;
    for seed in 0..10 {
        let eers: Vec<f64> = grid
            .iter()
            .map(|&delta| {
                let d = generate(&spec(200, seed, &[(RegionTag::Holistic, 1.5, delta)])).unwrap();
                region_eer(&d, RegionTag::Holistic)
            })
            .collect();
        inversions += eers.windows(2).filter(|w| w[1] < w[0]).count();
    }
    assert!(inversions <= 1, "{inversions} inversions");
}

#[test]
fn scenario_presets_cover_all_regions() {
    for s in [ScenarioSpec::scenario_s1(0), ScenarioSpec::scenario_s2(0)] {
        assert_eq!(s.regions(), RegionTag::ALL.to_vec());
        assert_eq!((s.n_subjects, s.dim), (200, 64));
    }
    let d = generate(&ScenarioSpec::scenario_s1(0)).unwrap();
    let fused = {
        let mut cfg = ProtocolConfig::new(RegionTag::ALL.to_vec(), d.providers.clone());
        cfg.seed = 0;
        run_single_dataset_eer(&d.manifest, &d.store, TrialMode::BeforeVsAfter, &cfg).unwrap()
    };
    let holistic = fused.result.region(RegionTag::Holistic).unwrap().eer;
    assert!(fused.result.fused.as_ref().unwrap().eer < holistic);
}
