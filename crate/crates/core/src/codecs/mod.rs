//! Reference codecs: a prediction/quantization codec and a bitplane
//! transform codec, plus the bit-level helpers they share.

pub mod bitio;
pub mod bt;
pub mod huffman;
pub mod pq;
