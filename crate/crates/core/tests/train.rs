use lipvae_core::numerics::SeededRng;
use lipvae_core::train::{synthetic_blobs, train, AdamConfig, TrainConfig, Trainer};
use lipvae_core::vae::{ModelKind, VaeConfig, VaeModel};
use lipvae_core::Error;

fn desk_model(kind: ModelKind, seed: u64) -> VaeModel {
    VaeModel::new(VaeConfig::desk(kind), &SeededRng::new(seed)).unwrap()
}

fn cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 64,
        seed: 5,
        ..TrainConfig::default()
    }
}

#[test]
fn zero_epochs_is_a_no_op() {
    let ds = synthetic_blobs(100, 64, 1).unwrap();
    let model = desk_model(ModelKind::lipschitz(5.0), 1);
    let (out, history) = train(model.clone(), &ds, &cfg(0)).unwrap();
    assert!(history.is_empty());
    assert_eq!(out.params_flat(), model.params_flat());
}

#[test]
fn desk_run_improves_elbo_and_keeps_certificate() {
    let ds = synthetic_blobs(256, 64, 2).unwrap();
    let model = desk_model(ModelKind::lipschitz(5.0), 2);
    let (_, history) = train(model, &ds, &cfg(20)).unwrap();
    assert_eq!(history.len(), 20);
    assert!(
        history[19].elbo > history[0].elbo,
        "{} vs {}",
        history[19].elbo,
        history[0].elbo
    );
    for h in &history {
        let lip = h.decoder_lipschitz.unwrap();
        assert!(lip <= 5.0 * (1.0 + 1e-3), "epoch {}: {lip}", h.epoch);
    }
}

#[test]
fn identical_seeds_give_identical_weights() {
    let ds = synthetic_blobs(128, 64, 3).unwrap();
    let run = || train(desk_model(ModelKind::Standard, 3), &ds, &cfg(2)).unwrap();
    let (a, ha) = run();
    let (b, hb) = run();
    assert_eq!(a.params_flat(), b.params_flat());
    assert_eq!(ha, hb);
}

#[test]
fn resumed_training_matches_uninterrupted() {
    let ds = synthetic_blobs(150, 64, 4).unwrap();
    let model = desk_model(ModelKind::lipschitz(2.0), 4);
    let mut full = Trainer::new(model.clone(), cfg(2)).unwrap();
    full.run(&ds).unwrap();

    let mut first = Trainer::new(model, cfg(2)).unwrap();
    first.run_steps(&ds, 4).unwrap();
    assert_eq!((first.state().epoch, first.state().step), (1, 1));
    let (m, state) = first.into_parts();
    let mut second = Trainer::resume(m, cfg(2), state).unwrap();
    second.run(&ds).unwrap();
    assert_eq!(second.model().params_flat(), full.model().params_flat());
    assert_eq!(second.history(), full.history());
}

#[test]
fn divergence_reports_the_batch() {
    let ds = synthetic_blobs(128, 64, 5).unwrap();
    let config = TrainConfig {
        adam: AdamConfig {
            learning_rate: 1e200,
            ..AdamConfig::default()
        },
        ..cfg(1)
    };
    let err = train(desk_model(ModelKind::Standard, 5), &ds, &config).unwrap_err();
    assert!(matches!(err, Error::Divergence { epoch: 0, batch: 1 }), "{err:?}");
}
