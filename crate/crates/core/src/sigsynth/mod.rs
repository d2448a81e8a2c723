//! Synthetic modulated signals, the receiver channel, and labelled datasets.

mod channel;
mod dataset;
pub mod io;
mod modulation;
mod signal;

pub use channel::{apply_channel, random_channel, ChannelParams, Impairments};
pub use dataset::{generate_dataset, split_counts, GenerationConfig, LabeledDataset, Split};
pub use modulation::{
    fm_message, fm_tones, linear_symbol, modulate, pulse_gain, Scheme, FM_DEVIATION,
    FSK_MODULATION_INDEX, GFSK_BT,
};
pub use signal::{normalize_energy, Domain, Signal};
