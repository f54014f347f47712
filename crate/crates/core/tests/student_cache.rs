use toga::embedbank::{gen_synthetic, sample_episode, EmbeddingBank, ImageRecord, Split, SyntheticSpec};
use toga::numcore::rng::{gaussian_tensor, stream, Stream};
use toga::numcore::{l2_normalize_rows, Tensor2D};
use toga::student::{
    accuracy, batch_test_logits, build_cache, cache_logits, test_logits, zero_shot_logits, CacheModel,
};
use toga::trainer::{evaluate, query_logits};

fn small_bank() -> EmbeddingBank {
    gen_synthetic(&SyntheticSpec { classes: 3, dim: 8, images_per_class: 8, seed: 3, ..Default::default() }).unwrap()
}

#[test]
fn cache_rows_follow_support_order() {
    let bank = small_bank();
    let ep = sample_episode(&bank, 2, 4).unwrap();
    let (keys, values) = build_cache(&bank, &ep).unwrap();
    assert_eq!(keys.shape(), (6, 8));
    for (j, &id) in ep.support_ids.iter().enumerate() {
        assert_eq!(keys.row(j), bank.global(id));
        let one_hot: Vec<f64> = (0..3).map(|c| if c == bank.label(id) { 1.0 } else { 0.0 }).collect();
        assert_eq!(values.row(j), one_hot.as_slice());
    }
}

#[test]
fn cache_logits_match_double_loop() {
    let mut rng = stream(31, Stream::Testing);
    let keys = l2_normalize_rows(&gaussian_tensor(&mut rng, 6, 5, 1.0)).unwrap();
    let values = Tensor2D::from_fn(6, 3, |j, c| if j % 3 == c { 1.0 } else { 0.0 });
    let az = [0.3, -1.2, 0.5, 2.0, 0.1];
    let n = az.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut want = [0.0; 3];
    for j in 0..6 {
        let cos: f64 = (0..5).map(|k| az[k] / n * keys.get(j, k)).sum();
        want[j % 3] += (-5.5 * (1.0 - cos)).exp();
    }
    let got = cache_logits(&az, &keys, &values, 5.5).unwrap();
    for c in 0..3 {
        assert!((got[c] - want[c]).abs() < 1e-14);
    }
}

#[test]
fn test_logits_recompose_from_branches() {
    let bank = small_bank();
    let ep = sample_episode(&bank, 2, 0).unwrap();
    let (keys, values) = build_cache(&bank, &ep).unwrap();
    let mut rng = stream(32, Stream::Testing);
    let adapter = Tensor2D::identity(8).add(&gaussian_tensor(&mut rng, 8, 8, 0.1));
    let model = CacheModel::new(keys.clone(), values.clone(), adapter.clone(), 2.5, 5.5, 100.0).unwrap();
    let z = bank.global(ep.query_ids[0]);
    let az: Vec<f64> = (0..8).map(|i| (0..8).map(|k| adapter.get(i, k) * z[k]).sum()).collect();
    let zs = zero_shot_logits(z, bank.prompts(), 100.0);
    let cache = cache_logits(&az, &keys, &values, 5.5).unwrap();
    let got = test_logits(z, &model, bank.prompts()).unwrap();
    for c in 0..3 {
        assert!((got[c] - (zs[c] + 2.5 * cache[c])).abs() < 1e-12);
    }
}

#[test]
fn batch_logits_equal_rowwise_logits() {
    let bank = small_bank();
    let ep = sample_episode(&bank, 1, 1).unwrap();
    let (keys, values) = build_cache(&bank, &ep).unwrap();
    let model = CacheModel::tip_adapter(keys, values, 1.0, 5.5, 100.0).unwrap();
    let feats = Tensor2D::from_fn(ep.query_ids.len(), 8, |r, k| bank.global(ep.query_ids[r])[k]);
    let batch = batch_test_logits(&model, bank.prompts(), &feats).unwrap();
    let via_ids = query_logits(&model, &bank, &ep.query_ids).unwrap();
    assert_eq!(batch, via_ids);
    for (r, &id) in ep.query_ids.iter().enumerate() {
        assert_eq!(batch.row(r), test_logits(bank.global(id), &model, bank.prompts()).unwrap().as_slice());
    }
}

/// A bank whose global features equal their class prompts, with orthonormal
/// prompts; zero-shot classification is then exact.
fn axis_bank(flip_query_labels: bool) -> EmbeddingBank {
    let (d, c) = (4, 3);
    let axis = |k: usize| -> Vec<f32> { (0..d).map(|i| if i == k { 1.0 } else { 0.0 }).collect() };
    let prompts: Vec<f32> = (0..c).flat_map(axis).collect();
    let mut images = Vec::new();
    for label in 0..c {
        for i in 0..4 {
            let split = if i < 2 { Split::SupportPool } else { Split::Query };
            let stored = if flip_query_labels && split == Split::Query { (label + 1) % c } else { label };
            let mut features = axis(label);
            features.extend(axis(3));
            images.push(ImageRecord { label: stored, split, foreground: None, features });
        }
    }
    EmbeddingBank::new(d, c, 2, prompts, images).unwrap()
}

#[test]
fn evaluate_on_constructed_banks() {
    let bank = axis_bank(false);
    let ep = sample_episode(&bank, 1, 0).unwrap();
    let (keys, values) = build_cache(&bank, &ep).unwrap();
    let zero_shot = CacheModel::tip_adapter(keys.clone(), values.clone(), 0.0, 5.5, 100.0).unwrap();
    assert_eq!(evaluate(&zero_shot, &bank, &ep).unwrap(), 1.0);

    let flipped = axis_bank(true);
    let ep = sample_episode(&flipped, 1, 0).unwrap();
    let (keys, values) = build_cache(&flipped, &ep).unwrap();
    let model = CacheModel::tip_adapter(keys, values, 0.0, 5.5, 100.0).unwrap();
    assert_eq!(evaluate(&model, &flipped, &ep).unwrap(), 0.0);
}

#[test]
fn accuracy_counts_argmax_hits() {
    let logits = Tensor2D::from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0], vec![3.0, 1.0]]).unwrap();
    assert_eq!(accuracy(&logits, &[0, 1, 1]), 2.0 / 3.0);
    assert_eq!(accuracy(&Tensor2D::zeros(0, 2), &[]), 0.0);
}
