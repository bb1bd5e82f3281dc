use kbregex::fixtures::{planted, PlantedConfig};
use kbregex::model::ModelKind;
use kbregex::regex::Variant;
use kbregex::train::{train, Stage, TrainConfig};

fn smoothed(losses: &[f64], window: usize) -> Vec<f64> {
    losses.windows(window).map(|w| w.iter().sum::<f64>() / window as f64).collect()
}

#[test]
fn smoothed_loss_settles_over_a_long_planted_run() {
    let fixture = planted(&PlantedConfig { queries_per_template: 10, ..PlantedConfig::default() }, 3).unwrap();
    let mut config = TrainConfig::fb15k(ModelKind::RotateBox, Variant::Baseline);
    config.model.dim = 8;
    config.model.gamma = 3.0;
    config.batch_size = 128;
    config.negatives = 16;
    config.single_hop.lr = 0.01;
    config.single_hop.epochs = 200;
    // evaluate rarely and never stop early: the whole curve is under test
    config.eval_every = 100;
    config.patience = 10;
    config.seed = 3;
    let mut losses = Vec::new();
    train(&fixture.kb, &[], &[], &config, &mut |log| {
        if log.stage == Stage::SingleHop {
            losses.push(log.mean_loss);
        }
    })
    .unwrap();
    assert_eq!(losses.len(), 200);
    let s = smoothed(&losses, 20);
    let last = *s.last().unwrap();
    assert!(last < 0.5 * s[0], "loss barely moved: {} -> {last}", s[0]);
    assert!(last <= s[s.len() - 21] + 1e-9, "smoothed loss rose over the last 20 epochs: {} -> {last}", s[s.len() - 21]);
}
