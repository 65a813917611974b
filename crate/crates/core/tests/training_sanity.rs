//! End-to-end training on the desk-scale synthetic population.

use claimscost::claims_data::{generate_synthetic, SyntheticSpec};
use claimscost::network::Architecture;
use claimscost::trainer::{fit_network, fit_ridge, EncodedSet, TrainConfig};
use claimscost::vocab_encoder::build_vocabulary;

#[test]
fn training_loss_falls_over_default_epochs() {
    let data = generate_synthetic(&SyntheticSpec::default()).unwrap();
    let vocab = build_vocabulary(&data.records, 5).unwrap();
    let q = data.truth.quarters;
    let set = EncodedSet::from_records(&data.records, &vocab, q).unwrap();
    let net = fit_network(&set, &TrainConfig::network(0), Architecture::new(vocab.dimension(q))).unwrap();
    let ridge = fit_ridge(&set, &TrainConfig::ridge(0)).unwrap();
    for (name, log) in [("network", &net.log), ("ridge", &ridge.log)] {
        assert_eq!(log.len(), 25);
        let (first, last) = (log[0].mean_train_loss, log[24].mean_train_loss);
        assert!(last < first, "{name}: epoch 25 loss {last} not below epoch 1 loss {first}");
    }
}
