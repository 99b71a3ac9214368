// Temporary diagnosis; removed before release.
use scoresync::neural::{datagen, train_inflection_regressor, TrainConfig};

#[test]
#[ignore]
fn overfit_small() {
    let dataset = datagen::inflection_dataset(40, 77).unwrap();
    for (lr, epochs) in [(0.05, 200), (0.02, 400)] {
        let mut config = TrainConfig::inflection_default(5);
        config.epochs = epochs;
        config.learning_rate = lr;
        config.channels = 8;
        config.hidden = 128;
        config.val_fraction = 0.2;
        let (_, report) = train_inflection_regressor(&dataset, (1, 2, 3), &config).unwrap();
        let l = &report.epoch_losses;
        println!(
            "lr={lr} epochs={epochs}: initial={:.3} e25%={:.4} e50%={:.4} e75%={:.4} last={:.5} val={:.2}",
            report.initial_loss, l[l.len()/4], l[l.len()/2], l[3*l.len()/4], l.last().unwrap(),
            report.val_metric_frames
        );
    }
}
