//! Membership inference with shadow models, model inversion by confidence
//! ascent, and a dense GAN attacker for collaborative training.

mod gan;
mod inversion;
mod membership;

pub use gan::{gan_attack_round, gan_generator, GanConfig};
pub use inversion::{class_mean, model_inversion, pearson, write_pgm, InversionResult};
pub use membership::{membership_attack, privacy_loss, AttackMetadata, AttackReport, ConfidenceModel, Defense, MembershipConfig, ShadowAttack, TrainFn};
