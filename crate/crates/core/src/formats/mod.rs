//! On-disk formats: the binary tensor container, ASCII PLY point clouds,
//! and binary PPM images with the COT colormap.

mod ply;
mod ppm;
mod tensor;

pub use ply::{read_ply, write_ply};
pub use ppm::{cot_color, render_cot_ppm, write_ppm, Colormap};
pub use tensor::{TensorData, TensorFile};
