#![allow(dead_code)]

use btrn::config::ExperimentConfig;

/// Two subjects with 6 trials per direction and a short training schedule.
pub fn small_config() -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.synth.n_subjects = 2;
    c.synth.trials_per_direction = 6;
    c.model.hyper.k_shot = 2;
    c.model.hyper.queries_per_class = 1;
    c.model.hyper.episodes_per_epoch = 4;
    c
}
