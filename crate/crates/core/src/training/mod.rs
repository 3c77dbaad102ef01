//! Losses, optimizers and training loops for both phases.

mod losses;
mod optim;
mod run;
mod step;

pub use losses::{baseline_loss, reinforce_loss, reward_trace, xent_loss, RewardTrace};
pub use optim::{LrSchedule, Optimizer, Rule};
pub use run::*;
pub use step::{accumulate_split, example_seed, joint_loss, joint_step, split_update, Masks, StepStats, TrainConfig, Trainer};

#[cfg(test)]
mod tests;
