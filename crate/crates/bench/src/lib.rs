//! Shared fixtures for the benchmarks.

use fixbi::config::TrainConfig;
use fixbi::data::{paired_minibatches, Dataset, PairedBatch};
use fixbi::harness::load_datasets;
use fixbi::models::{Arch, ClassifierModel, DualState};

/// Default desk-scale config with the given seed.
pub fn desk_config(seed: u64) -> TrainConfig {
    TrainConfig {
        lr: 0.05,
        seed,
        ..TrainConfig::default()
    }
}

pub struct Fixture {
    pub config: TrainConfig,
    pub source: Dataset,
    pub target: Dataset,
    pub batch: PairedBatch,
    pub state: DualState,
}

pub fn fixture() -> Fixture {
    let config = desk_config(1);
    let (source, target) = load_datasets(&config).expect("generator config is valid");
    let batch = paired_minibatches(&source, &target, config.batch_size, 1, 7)
        .expect("batch size fits")
        .remove(0);
    let arch = Arch {
        input_dim: source.dim(),
        widths: config.widths.clone(),
        num_classes: source.num_classes(),
    };
    let model = ClassifierModel::init(arch, 1).expect("valid arch");
    let state = DualState::from_pretrained(&model);
    Fixture {
        config,
        source,
        target,
        batch,
        state,
    }
}
