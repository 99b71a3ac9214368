// Temporary tuning harness; removed before release.

use std::time::Instant;

use scoresync::neural::{
    datagen, train_inflection_regressor, train_path_regressor, PathHeadKind, TrainConfig,
};

#[test]
#[ignore]
fn tune_path() {
    let dataset = datagen::path_dataset(300, 99).unwrap();
    for (lr, epochs) in [(0.05, 30)] {
        for head in [PathHeadKind::Sasa, PathHeadKind::Conv] {
            for div in [true, false] {
                let t0 = Instant::now();
                let mut config = TrainConfig::path_default(3);
                config.epochs = epochs;
                config.learning_rate = lr;
                let (_, report) = train_path_regressor(&dataset, head, div, &config).unwrap();
                println!(
                    "lr={lr} epochs={epochs} head={head:?} div={div}: initial={:.4} last={:.4} val={:.2} ({:.1}s)",
                    report.initial_loss,
                    report.epoch_losses.last().unwrap(),
                    report.val_metric_frames,
                    t0.elapsed().as_secs_f64(),
                );
            }
        }
    }
}

#[test]
#[ignore]
fn tune_inflection() {
    let dataset = datagen::inflection_dataset(500, 1234).unwrap();
    for (lr, epochs, ch, hidden) in [
        (0.02, 40, 4, 64),
        (0.01, 40, 4, 64),
    ] {
        let t0 = Instant::now();
        let mut config = TrainConfig::inflection_default(5);
        config.epochs = epochs;
        config.learning_rate = lr;
        config.channels = ch;
        config.hidden = hidden;
        let (_, report) = train_inflection_regressor(&dataset, (1, 2, 3), &config).unwrap();
        let mid = report.epoch_losses[report.epoch_losses.len() / 2];
        println!(
            "lr={lr} ch={ch} hidden={hidden}: initial={:.3} mid={:.3} last={:.4} val={:.2} ({:.1}s)",
            report.initial_loss,
            mid,
            report.epoch_losses.last().unwrap(),
            report.val_metric_frames,
            t0.elapsed().as_secs_f64(),
        );
    }
}
