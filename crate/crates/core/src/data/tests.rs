use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::geometry::primitives::Shape;
use crate::test_support::hard_silhouette;

fn small_spec() -> ToySpec {
    ToySpec {
        counts: vec![(Shape::Cube, 2), (Shape::Sphere, 2), (Shape::Pyramid, 1)],
        image_size: 32,
        test_fraction: 0.2,
        seed: 3,
        ..ToySpec::default()
    }
}

#[test]
fn toy_dataset_counts() {
    let ds = make_toy_dataset(&small_spec()).unwrap();
    assert_eq!(ds.objects.len(), 5);
    assert_eq!(ds.split(Split::Test).objects.len(), 1);
    assert_eq!(ds.split(Split::Train).objects.len(), 4);
    let classes: Vec<&str> = ds.objects.iter().map(|o| o.class.as_str()).collect();
    assert_eq!(classes, ["cube", "cube", "sphere", "sphere", "pyramid"]);
    let views = dataset_views(32);
    for obj in &ds.objects {
        assert_eq!(obj.views.len(), NUM_VIEWS);
        assert!(obj.mesh.is_some());
        for (rec, v) in obj.views.iter().zip(&views) {
            assert_eq!(rec.view, *v);
            assert_eq!(rec.image.size, 32);
            assert!(rec.image.data.iter().all(|x| (0.0..=1.0).contains(x)));
        }
    }
    let ids: std::collections::HashSet<_> = ds.objects.iter().map(|o| &o.object_id).collect();
    assert_eq!(ids.len(), 5);
}

#[test]
fn silhouettes_agree_with_hard_rasterizer() {
    let ds = make_toy_dataset(&small_spec()).unwrap();
    let (mut agree, mut total) = (0usize, 0usize);
    for obj in &ds.objects {
        let mesh = obj.mesh.as_ref().unwrap();
        for rec in obj.views.iter().step_by(5) {
            let hard = hard_silhouette(mesh, &rec.view);
            for (h, s) in hard.iter().zip(&rec.silhouette.data) {
                agree += usize::from(*h == (*s > 0.5));
                total += 1;
            }
        }
    }
    let frac = agree as f64 / total as f64;
    assert!(frac >= 0.99, "agreement {frac}");
}

#[test]
fn object_pixels_show_the_object_and_background_pixels_the_scene() {
    let ds = make_toy_dataset(&ToySpec {
        background: BackgroundMode::Uniform,
        ..small_spec()
    })
    .unwrap();
    let rec = &ds.objects[0].views[0];
    let n = 32 * 32;
    let bg: Vec<f32> = (0..3).map(|c| rec.image.data[c * n]).collect();
    assert_eq!(rec.silhouette.data[0], 0.0);
    for p in 0..n {
        if rec.silhouette.data[p] == 0.0 {
            for c in 0..3 {
                assert!((rec.image.data[c * n + p] - bg[c]).abs() < 1e-6);
            }
        }
    }
    assert!(rec.silhouette.data.iter().any(|&s| s > 0.99));
}

#[test]
fn toy_dataset_is_deterministic() {
    let a = make_toy_dataset(&small_spec()).unwrap();
    let b = make_toy_dataset(&small_spec()).unwrap();
    assert_eq!(a, b);
    let c = make_toy_dataset(&ToySpec { seed: 4, ..small_spec() }).unwrap();
    assert_ne!(a.objects[0].views[0].image, c.objects[0].views[0].image);
}

#[test]
fn invalid_toy_specs_are_rejected() {
    for spec in [
        ToySpec { counts: vec![], ..small_spec() },
        ToySpec { image_size: 8, ..small_spec() },
        ToySpec { size_range: (0.6, 0.4), ..small_spec() },
        ToySpec { test_fraction: 1.0, ..small_spec() },
        ToySpec { smoothing: 0.0, ..small_spec() },
    ] {
        assert!(matches!(make_toy_dataset(&spec), Err(Error::Config(_))));
    }
}

#[test]
fn dataset_round_trips_through_disk() {
    let ds = make_toy_dataset(&ToySpec {
        counts: vec![(Shape::Cube, 1), (Shape::Sphere, 1)],
        ..small_spec()
    })
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&ds, dir.path()).unwrap();
    let back = load_dataset(dir.path()).unwrap();
    assert_eq!(back.image_size, ds.image_size);
    assert_eq!(back.objects.len(), 2);
    for (a, b) in ds.objects.iter().zip(&back.objects) {
        assert_eq!((&a.object_id, &a.class, a.split), (&b.object_id, &b.class, b.split));
        assert_eq!(a.views.len(), b.views.len());
        for (va, vb) in a.views.iter().zip(&b.views) {
            assert_eq!(va.view, vb.view);
            // 8-bit quantization
            for (x, y) in va.image.data.iter().zip(&vb.image.data) {
                assert!((x - y).abs() <= 0.5 / 255.0 + 1e-6);
            }
            for (x, y) in va.silhouette.data.iter().zip(&vb.silhouette.data) {
                assert!((x - y).abs() <= 0.5 / 255.0 + 1e-6);
            }
        }
        let (ma, mb) = (a.mesh.as_ref().unwrap(), b.mesh.as_ref().unwrap());
        assert_eq!(ma.faces, mb.faces);
        for (p, q) in ma.vertices.iter().zip(&mb.vertices) {
            for k in 0..3 {
                assert!((p[k] - q[k]).abs() < 1e-6);
            }
        }
    }
    let manifest = std::fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
    let manifest: Manifest = serde_json::from_str(&manifest).unwrap();
    assert_eq!(manifest.objects.len(), 2);
}

#[test]
fn loading_a_missing_dataset_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_dataset(dir.path()), Err(Error::Io { .. })));
}

fn tiny_dataset(views_per_object: &[usize]) -> Dataset {
    let size = 16;
    let objects = views_per_object
        .iter()
        .enumerate()
        .map(|(i, &nv)| ObjectRecord {
            object_id: format!("obj{i}"),
            class: "x".into(),
            split: Split::Train,
            views: (0..nv)
                .map(|k| {
                    let mut sil = GrayMap::zeros(size);
                    sil.data[..size * size / 2].fill(1.0);
                    ViewRecord {
                        image: ImageRGB::filled(size, (i * 100 + k) as f32 / 1000.0),
                        silhouette: sil,
                        view: ViewSpec::new(k as f64 * VIEW_STEP, DEFAULT_ELEVATION, size),
                    }
                })
                .collect(),
            mesh: None,
        })
        .collect();
    Dataset { image_size: size, objects }
}

/// Critical values of the chi-square distribution at p = 0.001.
fn chi2_critical(df: usize) -> f64 {
    match df {
        3 => 16.266,
        11 => 31.264,
        _ => unreachable!(),
    }
}

fn chi2(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    let e = total as f64 / counts.len() as f64;
    counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum()
}

#[test]
fn pairs_are_distinct_and_uniform() {
    let set = TrainingSet::new(tiny_dataset(&[4, 4, 4, 4]), PerturbSpec::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut prng = ChaCha8Rng::seed_from_u64(2);
    let mut objects = [0usize; 4];
    let mut pairs = [0usize; 12];
    for _ in 0..12_000 {
        let (a, b) = set.sample_pair(&mut rng, &mut prng);
        assert_eq!(a.object, b.object);
        assert_ne!(a.view_index, b.view_index);
        objects[a.object] += 1;
        if a.object == 0 {
            // ordered pairs (a, b) with a != b, indexed densely
            let idx = a.view_index * 3 + (b.view_index + 4 - a.view_index - 1) % 4;
            pairs[idx] += 1;
        }
    }
    assert!(chi2(&objects) < chi2_critical(3), "objects {objects:?}");
    assert!(chi2(&pairs) < chi2_critical(11), "pairs {pairs:?}");
}

#[test]
fn objects_with_one_view_are_excluded() {
    let set = TrainingSet::new(tiny_dataset(&[1, 3, 1]), PerturbSpec::default()).unwrap();
    assert_eq!(set.len(), 1);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..50 {
        let mut prng = rng.clone();
        let (a, _) = set.sample_pair(&mut rng, &mut prng);
        assert_eq!(set.num_views(a.object), 3);
    }
    assert!(matches!(
        TrainingSet::new(tiny_dataset(&[1, 1]), PerturbSpec::default()),
        Err(Error::Dataset(_))
    ));
}

#[test]
fn training_samples_carry_no_silhouette() {
    // The only image-valued field is a fully opaque RGBA image whose colour
    // channels equal the stored composite, so no mask information leaks.
    let ds = tiny_dataset(&[3, 3]);
    let set = TrainingSet::new(ds.clone(), PerturbSpec::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut prng = ChaCha8Rng::seed_from_u64(6);
    for s in set.sample_batch(20, &mut rng, &mut prng) {
        assert!(s.image.alpha().iter().all(|&a| a == 1.0));
        assert_eq!(s.image.rgb(), ds.objects[s.object].views[s.view_index].image);
        assert_eq!(s.view, ds.objects[s.object].views[s.view_index].view);
    }
    assert!(!set.images_are_perturbed());
}

#[test]
fn perturbations_touch_only_sampled_copies() {
    let ds = tiny_dataset(&[3]);
    let spec = PerturbSpec {
        azimuth_sigma: 5.0,
        brightness_sigma: 0.2,
        seed: 0,
    };
    let set = TrainingSet::new(ds.clone(), spec).unwrap();
    assert!(set.images_are_perturbed());
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut prng = ChaCha8Rng::seed_from_u64(6);
    let (a, _) = set.sample_pair(&mut rng, &mut prng);
    let stored = &ds.objects[0].views[a.view_index];
    assert_ne!(a.image.rgb(), stored.image);
    assert_ne!(a.view.azimuth, stored.view.azimuth);
    assert_eq!(a.view.elevation, stored.view.elevation);
    let (img, view) = set.view(0, a.view_index);
    assert_eq!(img.rgb(), stored.image);
    assert_eq!(view, stored.view);
}
