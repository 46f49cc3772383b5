use std::collections::BTreeSet;

use hsipu_core::annotate::{annotate, blob_sequence, connected_components, quota, AnnotationModel, AnnotationRequest};
use hsipu_core::cluster::{kmeans, ClusterAssignment, KMeansParams};
use hsipu_core::labels::LabelFile;
use hsipu_core::model::{nnre_pu_loss, pn_loss, LossSpec, Surrogate};
use hsipu_core::pipeline::{ExperimentConfig, Method, PriorSetting};
use hsipu_core::retrieval::{score_unlabelled, RetrievalModel, RetrievalParams};
use hsipu_core::{load_scene, save_scene, ClassGrid, Grid, HsiCube, LabelState, PixelCoord, Scene, Scope};
use proptest::prelude::*;

fn mask_strategy() -> impl Strategy<Value = Grid<bool>> {
    (1usize..8, 1usize..8).prop_flat_map(|(r, c)| {
        proptest::collection::vec(any::<bool>(), r * c).prop_map(move |v| Grid::from_vec(r, c, v).unwrap())
    })
}

fn class_strategy() -> impl Strategy<Value = ClassGrid> {
    (2usize..9, 2usize..9).prop_flat_map(|(r, c)| {
        proptest::collection::vec(0u16..3, r * c).prop_map(move |v| Grid::from_vec(r, c, v).unwrap())
    })
}

fn four_connected(pixels: &[PixelCoord]) -> bool {
    let set: BTreeSet<PixelCoord> = pixels.iter().copied().collect();
    let mut seen = BTreeSet::from([pixels[0]]);
    let mut stack = vec![pixels[0]];
    while let Some(p) = stack.pop() {
        let around = [
            (p.row.wrapping_sub(1), p.col),
            (p.row + 1, p.col),
            (p.row, p.col.wrapping_sub(1)),
            (p.row, p.col + 1),
        ];
        for (r, c) in around {
            let q = PixelCoord::new(r, c);
            if set.contains(&q) && seen.insert(q) {
                stack.push(q);
            }
        }
    }
    seen.len() == set.len()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn label_state_partitions_the_scope(scope in mask_strategy(), pick in proptest::collection::vec(any::<bool>(), 64)) {
        let positives: Vec<PixelCoord> = scope
            .iter()
            .enumerate()
            .filter(|(i, (_, &inside))| inside && pick[i % pick.len()])
            .map(|(_, (p, _))| p)
            .collect();
        let labels = LabelState::new(&scope, positives.clone(), None).unwrap();
        let all: BTreeSet<PixelCoord> = scope.iter().filter(|(_, &v)| v).map(|(p, _)| p).collect();
        let union: BTreeSet<PixelCoord> = labels.positives().union(labels.unlabelled()).copied().collect();
        prop_assert_eq!(union, all);
        prop_assert!(labels.positives().is_disjoint(labels.unlabelled()));

        let file: LabelFile = serde_json::from_str(&labels.to_json()).unwrap();
        prop_assert_eq!(LabelState::from_file(&file, &scope, None).unwrap(), labels);
    }

    #[test]
    fn components_partition_the_class(gt in class_strategy()) {
        prop_assume!(gt.count_class(1) > 0);
        let d = connected_components(&gt, 1).unwrap();
        let mut union = BTreeSet::new();
        for comp in &d.components {
            prop_assert!(four_connected(comp));
            for &p in comp {
                prop_assert!(union.insert(p), "components overlap");
            }
        }
        let class: BTreeSet<PixelCoord> = gt.iter().filter(|(_, &c)| c == 1).map(|(p, _)| p).collect();
        prop_assert_eq!(union, class);
    }

    #[test]
    fn annotations_respect_quota_and_class(
        gt in class_strategy(),
        fraction in 0.05f64..=1.0,
        blob in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let population = gt.count_class(1);
        prop_assume!(population > 0 && quota(fraction, population).is_ok());
        let request = AnnotationRequest {
            positive_class: 1,
            fraction,
            model: if blob { AnnotationModel::Blob } else { AnnotationModel::Uniform },
            seed,
            scope: Scope::Annotated,
        };
        let labels = annotate(&gt, &request).unwrap();
        prop_assert_eq!(labels.positives().len(), quota(fraction, population).unwrap());
        prop_assert!(labels.positives().iter().all(|&p| gt[p] == 1));
        prop_assert!(labels.unlabelled().iter().all(|&p| gt[p] != 0));
        prop_assert!(labels.positives().is_disjoint(labels.unlabelled()));
        prop_assert_eq!(annotate(&gt, &request).unwrap(), labels);
    }

    #[test]
    fn blob_prefixes_have_at_most_one_open_component(gt in class_strategy(), seed in any::<u64>()) {
        prop_assume!(gt.count_class(1) > 0);
        let request = AnnotationRequest {
            positive_class: 1,
            fraction: 1.0,
            model: AnnotationModel::Blob,
            seed,
            scope: Scope::Annotated,
        };
        let d = connected_components(&gt, 1).unwrap();
        let seq = blob_sequence(&gt, &request).unwrap();
        let mut taken = vec![0usize; d.len()];
        for p in seq {
            taken[d.membership[p].unwrap()] += 1;
            let open = taken.iter().zip(&d.components).filter(|(&t, c)| t > 0 && t < c.len()).count();
            prop_assert!(open <= 1);
        }
    }

    #[test]
    fn pu_loss_is_never_negative(
        sp in proptest::collection::vec(0.0f64..=1.0, 1..20),
        su in proptest::collection::vec(0.0f64..=1.0, 1..20),
        pi in 0.001f64..0.999,
        logistic in any::<bool>(),
    ) {
        let sur = if logistic { Surrogate::Logistic } else { Surrogate::Sigmoid };
        let r = nnre_pu_loss(&sp, &su, &LossSpec::nnre_pu(pi).with_surrogate(sur)).unwrap();
        prop_assert!(r.total >= 0.0);
        prop_assert!(r.total >= pi * r.r_p_plus);
    }

    #[test]
    fn pn_loss_ignores_example_order(pairs in proptest::collection::vec((0.0f64..=1.0, any::<bool>()), 1..20), rot in 0usize..20) {
        let (s, y): (Vec<f64>, Vec<bool>) = pairs.iter().copied().unzip();
        let k = rot % pairs.len();
        let (mut s2, mut y2) = (s.clone(), y.clone());
        s2.rotate_left(k);
        y2.rotate_left(k);
        s2.reverse();
        y2.reverse();
        let (a, b) = (pn_loss(&s, &y).unwrap(), pn_loss(&s2, &y2).unwrap());
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn retrieval_scores_cover_exactly_the_unlabelled_set(
        scope in mask_strategy(),
        k in 1usize..4,
        model in prop_oneof![Just(RetrievalModel::Spatial), Just(RetrievalModel::Spectral), Just(RetrievalModel::Hybrid)],
        seed in any::<u64>(),
    ) {
        let inside: Vec<PixelCoord> = scope.iter().filter(|(_, &v)| v).map(|(p, _)| p).collect();
        prop_assume!(!inside.is_empty());
        let positive = inside[(seed as usize) % inside.len()];
        let labels = LabelState::new(&scope, [positive], None).unwrap();
        let clusters = ClusterAssignment {
            k,
            labels: Grid::from_fn(scope.rows(), scope.cols(), |p| (p.row * 7 + p.col * 3 + seed as usize) % k),
            centroids: vec![vec![0.0]; k],
            inertia: 0.0,
            iterations: 0,
            inertia_history: vec![],
        };
        let params = RetrievalParams::new(2.0, 1.5, model).unwrap();
        let scores = score_unlabelled(&labels, Some(&clusters), &params).unwrap();
        let scored: BTreeSet<PixelCoord> = scores.iter().map(|(p, _)| p).collect();
        prop_assert_eq!(&scored, labels.unlabelled());
        prop_assert!(scores.iter().all(|(_, s)| (0.0..=1.0).contains(&s)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn kmeans_assigns_every_pixel_and_never_raises_inertia(
        data in proptest::collection::vec(0.0f64..1.0, 2 * 30),
        k in 2usize..5,
        seed in any::<u64>(),
    ) {
        let cube = HsiCube::new(5, 6, 2, data).unwrap();
        let a = kmeans(&cube, &KMeansParams::new(k, seed)).unwrap();
        prop_assert!(a.labels.as_slice().iter().all(|&l| l < k));
        prop_assert!(a.inertia_history.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }

    #[test]
    fn scenes_round_trip_through_disk(
        data in proptest::collection::vec(-1e3f32..1e3, 3 * 4 * 2),
        gt in proptest::collection::vec(0u16..5, 3 * 4),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let scene = Scene {
            cube: HsiCube::new(3, 4, 2, data.iter().map(|&v| f64::from(v)).collect()).unwrap(),
            ground_truth: Some(Grid::from_vec(3, 4, gt).unwrap()),
            band_names: Some(vec!["a".into(), "b".into()]),
        };
        let path = dir.path().join("scene.json");
        save_scene(&scene, &path).unwrap();
        let back = load_scene(&path).unwrap();
        prop_assert_eq!(back.cube, scene.cube);
        prop_assert_eq!(back.ground_truth, scene.ground_truth);
        prop_assert_eq!(back.band_names, scene.band_names);
    }

    #[test]
    fn config_json_round_trip_keeps_the_hash(
        seed in any::<u64>(),
        pn in any::<bool>(),
        prior in prop_oneof![Just(None), (0.01f64..0.99).prop_map(Some)],
        samples in 1usize..10_000,
    ) {
        let mut c = ExperimentConfig::default();
        c.seed = seed;
        c.method = if pn { Method::PnPu } else { Method::NnrePu };
        if let Some(p) = prior {
            c.pi_p = PriorSetting::Value(p);
        }
        c.unlabelled_samples = samples;
        let back = ExperimentConfig::from_json(&c.to_json_pretty()).unwrap();
        prop_assert_eq!(back.hash(), c.hash());
        prop_assert_eq!(back, c);
    }
}
