//! Network presets, the parameter bundle trained by the data owner, the
//! adversary and MINE networks, and the `VLMB` checkpoint format.

mod arch;
mod bundle;
mod checkpoint;

pub use arch::{adversary_net, mine_ref, ArchConfig, Preset, LEAKY_SLOPE};
pub use bundle::{one_hot, AdversaryModel, MineNet, ModelBundle, Posterior};
pub use checkpoint::{decode_bundle, encode_bundle, load_bundle, save_bundle};
