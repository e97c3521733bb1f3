//! Measurement side: the inferential adversary, MINE, the density-ratio
//! KL estimator, the assembled complexity estimate and exact discrete
//! information quantities.

mod adversary;
mod density;
mod exact;
mod mine;

pub use adversary::{fit_adversary, train_adversary, AttackConfig, AttackReport, Codes};
pub use density::{
    bayes_discriminator, complexity_estimate, density_ratio_kl, density_ratio_kl_expected, fit_discriminator,
    kl_discrete, Complexity, DensityRatioKl, DiscriminatorConfig, D_CLAMP,
};
pub use exact::{conditional_mi, exact_mi, markov_identity_check, MarkovReport, MiValue, MAX_MARKOV_ALPHABET};
pub use mine::{mine_estimate, mine_estimate_labels, EstimatorTag, MiEstimate, MineConfig};
