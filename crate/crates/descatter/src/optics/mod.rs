//! Synthetic optical bench: object images, scattering channels, and the
//! wave-optics pieces behind them.

mod channels;
mod field;
mod glyphs;
mod image;
pub mod screen;

pub use channels::{
    diffuser_channel, free_channel, mmf_channel, random_unitary, Channel, ChannelConfig,
    ChannelKind, DiffuserParams, MmfParams,
};
pub use field::{
    propagate_angular_spectrum, ComplexField, DEFAULT_PITCH, DEFAULT_WAVELENGTH,
};
pub use glyphs::{ascii_art, render_glyph, supported_symbols, GlyphSpec};
pub use image::{normalize, resize_bilinear, Image};
