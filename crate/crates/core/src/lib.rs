pub mod compositor;
pub mod consistency;
pub mod imaging;
pub mod matting;
pub mod numeric;
pub mod semantics;
pub mod synth;
pub mod transfer;
