use std::sync::Arc;

use ndarray::Array2;
use proptest::prelude::*;
use viewforge_core::augment::{apply_pipeline, grayscale, Pipeline, Stage, View};
use viewforge_core::dataset::{pack_dataset, DatasetHandle, PackOptions};
use viewforge_core::loader::{build_epoch_plan, Loader, LoaderConfig, Traversal};
use viewforge_core::losses::{
    barlow_loss, build_pair_relation, simclr_loss, split_left_right, vicreg_loss, BarlowParams, RelationMatrix,
    SimClrParams, VicRegCoeffs,
};
use viewforge_core::rng::{RngKey, RngStream};
use viewforge_core::source::{MemoryDataset, SampleSource};
use viewforge_core::{Image, ImageRecord};

fn image_strategy(max_side: usize, channels: usize) -> impl Strategy<Value = Image> {
    (1..=max_side, 1..=max_side).prop_flat_map(move |(h, w)| {
        proptest::collection::vec(any::<u8>(), h * w * channels)
            .prop_map(move |data| Image::new(h, w, channels, data).unwrap())
    })
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Array2<f64>> {
    proptest::collection::vec(-3.0f64..3.0, rows * cols)
        .prop_map(move |v| Array2::from_shape_vec((rows, cols), v).unwrap())
}

fn stage_strategy() -> impl Strategy<Value = Stage> {
    prop_oneof![
        (0.05f64..1.0, 1usize..20).prop_map(|(lo, size)| Stage::RandomResizedCrop {
            scale: (lo, 1.0),
            ratio: (0.75, 4.0 / 3.0),
            size
        }),
        (0.0f64..=1.0).prop_map(|p| Stage::HorizontalFlip { p }),
        (0.0f64..=1.0).prop_map(|p| Stage::Grayscale { p }),
        (0.0f64..=1.0, 0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0, 0.0f64..0.5).prop_map(|(p, b, c, s, h)| {
            Stage::ColorJitter {
                p,
                brightness: b,
                contrast: c,
                saturation: s,
                hue: h,
            }
        }),
        (0.0f64..=1.0, any::<u8>()).prop_map(|(p, threshold)| Stage::Solarize { p, threshold }),
        (0.0f64..=1.0, 0.1f64..2.0).prop_map(|(p, s)| Stage::GaussianBlur { p, sigma: (s, s + 0.5) }),
        (0.0f64..0.5).prop_map(|std| Stage::GaussianNoise { std }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn raw_pack_read_round_trip(images in proptest::collection::vec(image_strategy(12, 3), 1..12)) {
        let recs: Vec<ImageRecord> = images
            .into_iter()
            .enumerate()
            .map(|(i, image)| ImageRecord { image, label: i as u32 * 3 })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.sslp");
        pack_dataset(&path, &recs, &PackOptions::default()).unwrap();
        let h = DatasetHandle::open(&path).unwrap();
        prop_assert_eq!(h.sample_count(), recs.len());
        prop_assert!(h.validate().is_clean());
        for (i, rec) in recs.iter().enumerate() {
            prop_assert_eq!(&h.read_sample(i).unwrap(), rec);
        }
    }

    #[test]
    fn pipelines_are_deterministic_and_shape_safe(
        img in image_strategy(24, 3),
        stages in proptest::collection::vec(stage_strategy(), 1..6),
        seed in any::<u64>(),
    ) {
        let p = Pipeline::new(stages).unwrap();
        let key = RngStream::new(RngKey::new(seed, 0, 1, 0));
        let a = apply_pipeline(&img, &p, &key).unwrap();
        prop_assert_eq!(&a, &apply_pipeline(&img, &p, &key).unwrap());
        let View::Bytes(out) = a else { panic!("no normalize stage") };
        let side = p.output_size();
        prop_assert_eq!(out.height(), side.unwrap_or(img.height()));
        prop_assert_eq!(out.width(), side.unwrap_or(img.width()));
        prop_assert_eq!(out.channels(), 3);
        prop_assert_eq!(out.data().len(), out.height() * out.width() * 3);
    }

    #[test]
    fn normalized_output_is_finite(img in image_strategy(10, 3), seed in any::<u64>()) {
        let p = Pipeline::new(vec![
            Stage::crop(6),
            Stage::jitter(),
            Stage::Normalize { mean: vec![0.485, 0.456, 0.406], std: vec![0.229, 0.224, 0.225] },
        ]).unwrap();
        let out = apply_pipeline(&img, &p, &RngStream::new(RngKey::new(seed, 0, 0, 0))).unwrap();
        let f = out.as_float().unwrap();
        prop_assert!(f.data().iter().all(|v| v.is_finite() && v.abs() < 3.0));
    }

    #[test]
    fn grayscale_is_idempotent(img in image_strategy(10, 3), seed in any::<u64>()) {
        let mut rng = RngStream::new(RngKey::new(seed, 0, 0, 0)).stage(0);
        let once = grayscale(&img, 1.0, &mut rng).unwrap();
        let twice = grayscale(&once, 1.0, &mut rng).unwrap();
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn barlow_is_symmetric(l in matrix(8, 4), r in matrix(8, 4), alpha in 0.0f64..1.0) {
        let p = BarlowParams { alpha };
        let ab = barlow_loss(l.view(), r.view(), &p);
        let ba = barlow_loss(r.view(), l.view(), &p);
        if let (Ok(ab), Ok(ba)) = (ab, ba) {
            prop_assert!((ab.value - ba.value).abs() <= 1e-12 * ab.value.abs().max(1.0));
        }
    }

    #[test]
    fn simclr_relation_ignores_row_scale(z in matrix(8, 4), scales in proptest::collection::vec(0.01f64..100.0, 8)) {
        prop_assume!(z.rows().into_iter().all(|r| r.dot(&r) > 1e-6));
        let mut scaled = z.clone();
        for (mut row, s) in scaled.rows_mut().into_iter().zip(&scales) {
            row *= *s;
        }
        let g = build_pair_relation(4);
        let p = SimClrParams::default();
        let a = simclr_loss(z.view(), &g, &p).unwrap();
        let b = simclr_loss(scaled.view(), &g, &p).unwrap();
        for (x, y) in a.estimated_relation.iter().zip(b.estimated_relation.iter()) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn simclr_decreases_as_positive_similarity_grows(
        theta in 0.1f64..2.9,
        step in 0.01f64..0.5,
        negatives in proptest::collection::vec(proptest::collection::vec(-2.0f64..2.0, 3), 1..5),
        tau in 0.05f64..1.0,
    ) {
        // The pair lives in dims {0, 1}, negatives in dims {2, 3, 4}, so
        // rotating one positive changes only the pair's similarity.
        let n = 2 + negatives.len();
        prop_assume!(negatives.iter().all(|v| v.iter().map(|x| x * x).sum::<f64>() > 1e-3));
        let build = |angle: f64| {
            let mut z = Array2::zeros((n, 5));
            z[[0, 0]] = 1.0;
            z[[1, 0]] = angle.cos();
            z[[1, 1]] = angle.sin();
            for (k, v) in negatives.iter().enumerate() {
                for d in 0..3 {
                    z[[2 + k, 2 + d]] = v[d];
                }
            }
            z
        };
        let g = RelationMatrix::from_entries(n, [(0, 1, 1.0), (1, 0, 1.0)]).unwrap();
        let p = SimClrParams { tau, ..SimClrParams::default() };
        let far = simclr_loss(build(theta).view(), &g, &p).unwrap().loss.value;
        let near = simclr_loss(build((theta - step).max(0.0)).view(), &g, &p).unwrap().loss.value;
        prop_assert!(near < far, "{} !< {}", near, far);
    }

    #[test]
    fn vicreg_value_is_sum_of_terms(z in matrix(8, 4)) {
        let out = vicreg_loss(z.view(), &build_pair_relation(4), &VicRegCoeffs::default()).unwrap();
        prop_assert_eq!(out.value, out.term("L_var").unwrap() + out.term("L_cov").unwrap() + out.term("L_inv").unwrap());
    }

    #[test]
    fn split_lengths_equal_nonzeros(n in 2usize..12, bits in proptest::collection::vec(any::<bool>(), 66)) {
        let mut entries = Vec::new();
        let mut b = bits.iter();
        for i in 0..n {
            for j in (i + 1)..n {
                if *b.next().unwrap_or(&false) {
                    entries.push((i, j, 1.0));
                    entries.push((j, i, 1.0));
                }
            }
        }
        let g = RelationMatrix::from_entries(n, entries.clone()).unwrap();
        let samples: Vec<usize> = (0..n).collect();
        match split_left_right(&samples, &g) {
            Ok((l, r)) => {
                prop_assert_eq!(l.len(), g.nnz());
                prop_assert_eq!(r.len(), g.nnz());
                for (a, b) in l.iter().zip(&r) {
                    prop_assert!(g.get(*a, *b) > 0.0);
                }
            }
            Err(e) => prop_assert!(entries.is_empty() && e.name() == "EmptyRelation"),
        }
    }

    #[test]
    fn epoch_plans_are_permutations(n in 1usize..300, seed in any::<u64>(), epoch in 0u64..5, group in 1usize..40) {
        for t in [Traversal::Sequential, Traversal::Random, Traversal::QuasiRandom { group: Some(group) }] {
            let mut p = build_epoch_plan(n, t, seed, epoch);
            p.sort_unstable();
            prop_assert_eq!(p, (0..n).collect::<Vec<_>>());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn loader_stream_ignores_worker_count(
        n in 1usize..40,
        batch in 1usize..9,
        workers in 1usize..6,
        prefetch in 1usize..4,
        seed in any::<u64>(),
        drop_last in any::<bool>(),
    ) {
        let recs: Vec<ImageRecord> = (0..n)
            .map(|i| ImageRecord { image: Image::filled(10, 10, 3, (i * 5) as u8), label: i as u32 })
            .collect();
        let src: Arc<dyn SampleSource> = Arc::new(MemoryDataset::new(recs));
        let cfg = |w: usize, pf: usize| LoaderConfig {
            num_workers: w,
            prefetch_depth: pf,
            seed,
            drop_last,
            ..LoaderConfig::new(batch, vec![Pipeline::ssl_default(6), Pipeline::new(vec![Stage::crop(6), Stage::noise(0.1)]).unwrap()])
        };
        let collect = |c: LoaderConfig| -> Vec<_> {
            Loader::new(Arc::clone(&src), c).unwrap().epoch(1).map(|b| b.unwrap()).collect()
        };
        let reference = collect(cfg(0, 1));
        let expected = if drop_last { n / batch } else { n.div_ceil(batch) };
        prop_assert_eq!(reference.len(), expected);
        prop_assert_eq!(collect(cfg(workers, prefetch)), reference);
    }
}
