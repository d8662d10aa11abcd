use dpfed::data::{
    label_histogram, load_idx, partition_by_similarity, preprocess, read_dataset, save_idx, synth_generate, Shard,
    total_variation, write_dataset, IdxImages, SynthConfig,
};
use dpfed::DatasetF64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn fake_images(count: usize) -> (IdxImages, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let labels: Vec<u8> = (0..count).map(|i| (i % 10) as u8).collect();
    // brightness depends on the label so the classes are separable
    let pixels = labels
        .iter()
        .flat_map(|&y| (0..16).map(move |j| (y as usize * 20 + j) as u8))
        .map(|p| p.saturating_add(rng.random_range(0..10)))
        .collect();
    (IdxImages { rows: 4, cols: 4, pixels }, labels)
}

#[test]
fn idx_files_to_federated_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let (img, lbl) = (dir.path().join("images"), dir.path().join("labels"));
    let (images, labels) = fake_images(1200);
    save_idx(&img, &lbl, &images, &labels).unwrap();

    let pool = load_idx::<f64>(&img, &lbl).unwrap();
    assert_eq!((pool.len(), pool.dim()), (1200, 16));
    assert!(pool.features().iter().all(|v| (0.0..=1.0).contains(v)));

    let iid = preprocess(partition_by_similarity(&pool, 6, 100.0, 10, 4).unwrap());
    let skewed = preprocess(partition_by_similarity(&pool, 6, 0.0, 10, 4).unwrap());
    let global = label_histogram(&pool, 10);
    let tv = |d: &DatasetF64| {
        d.users()
            .iter()
            .map(|u| {
                let all = Shard::concat(16, [&u.train, &u.test]);
                total_variation(&label_histogram(&all, 10), &global)
            })
            .fold(0.0, f64::max)
    };
    assert!(tv(&iid) < 0.05);
    assert!(tv(&skewed) > 0.5);
    for u in iid.users() {
        assert_eq!(u.train.len(), 160);
        assert_eq!(u.test.len(), 40);
    }
    // standardized, then each record scaled to unit norm
    for (x, _) in iid.pooled_train().iter().chain(iid.pooled_test().iter()) {
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-9);
    }
    let pooled = iid.pooled_train();
    let first_pixel_mean = pooled.iter().map(|(x, _)| x[0]).sum::<f64>() / pooled.len() as f64;
    assert!(first_pixel_mean.abs() < 0.1);
}

#[test]
fn generated_dataset_survives_binary_round_trip_in_f32() {
    let data: DatasetF64 = synth_generate(&SynthConfig::new(5, 30, 1.0, 1.0, 2)).unwrap();
    let mut buf = Vec::new();
    write_dataset(&mut buf, &data, 2).unwrap();
    let (narrow, header) = read_dataset::<f32, _>(buf.as_slice()).unwrap();
    assert_eq!(header.seed, 2);
    assert_eq!(narrow.num_users(), 5);
    let wide = data.pooled_train();
    let back = narrow.pooled_train();
    assert_eq!(wide.labels(), back.labels());
    for (a, b) in wide.features().iter().zip(back.features()) {
        assert!((a - f64::from(*b)).abs() <= 1e-6 * a.abs().max(1.0));
    }
}
