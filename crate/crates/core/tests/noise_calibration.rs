use dpfed::data::Shard;
use dpfed::engine::{noisy_batch_gradient, Privatizer, SensitivityMode};
use dpfed::models::{LogReg, Model};
use dpfed::rng::{Phase, Purpose, Streams};

const DRAWS: u64 = 100_000;

fn shard() -> Shard<f64> {
    let features = vec![0.5, -1.0, 2.0, 0.3, -0.7, 1.1, 0.0, 0.9, 1.5, -2.0];
    Shard::new(2, features, vec![0, 1, 2, 0, 1]).unwrap()
}

/// Per-coordinate variance of the injected noise, estimated from `DRAWS`
/// privatized gradients around their noiseless value.
fn empirical_variances(p: &Privatizer) -> Vec<f64> {
    let model = LogReg::new(2, 3, 0.0);
    let params: Vec<f64> = (0..model.num_params()).map(|i| 0.1 * i as f64 - 0.3).collect();
    let data = shard();
    let batch = [0, 2, 3, 4];
    let streams = Streams::new(5);
    let mut norms = Vec::new();
    let exact = Privatizer { sigma_g: 0.0, ..*p };
    let mut rng = streams.get(Phase::Train, 0, 0, 0, Purpose::Noise);
    let clean = noisy_batch_gradient(&model, &params, &data, &batch, &exact, &mut rng, &mut norms).unwrap();
    let mut sum_sq = vec![0.0; clean.len()];
    for draw in 0..DRAWS {
        let mut rng = streams.get(Phase::Train, draw, 0, 0, Purpose::Noise);
        let h = noisy_batch_gradient(&model, &params, &data, &batch, p, &mut rng, &mut norms).unwrap();
        for ((s, a), b) in sum_sq.iter_mut().zip(&h).zip(&clean) {
            *s += (a - b) * (a - b);
        }
    }
    sum_sq.iter().map(|s| s / DRAWS as f64).collect()
}

#[test]
fn record_level_noise_variance() {
    let p = Privatizer {
        clip: 0.5,
        sigma_g: 3.0,
        sensitivity: SensitivityMode::Record,
        data_ratio: 0.8,
    };
    // batch of 4 = s R with R = 5
    let want = (2.0 * 0.5 / 4.0 * 3.0f64).powi(2);
    for v in empirical_variances(&p) {
        assert!((v / want - 1.0).abs() < 0.05, "{v} vs {want}");
    }
}

#[test]
fn user_level_noise_variance() {
    let p = Privatizer {
        clip: 0.5,
        sigma_g: 3.0,
        sensitivity: SensitivityMode::User,
        data_ratio: 0.8,
    };
    let want = (2.0 * 0.5 / 0.8 * 3.0f64).powi(2);
    for v in empirical_variances(&p) {
        assert!((v / want - 1.0).abs() < 0.05, "{v} vs {want}");
    }
}
