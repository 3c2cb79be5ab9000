pub mod demo;
pub mod evaluate;
pub mod fuse;
pub mod reconstruct;
pub mod sample;
pub mod simulate;
pub mod synth;
pub mod train;
