//! Synthetic volumes, file I/O, resampling, 2.5D stacking and splits.

pub mod io;
pub mod phantom;
pub mod resize;
pub mod splits;
pub mod triplet;

pub use io::{list_volumes, load_slice_dir, save_volume, write_gray_png, write_rgb_png};
pub use phantom::{generate_phantom, generate_phantom_with, MaskStyle, PhantomConfig, PhantomVolume};
pub use resize::{resize, resize_mask, ResizeKind};
pub use splits::{build_splits, SplitSpec, Splits};
pub use triplet::{make_triplets, triplet_indices, SliceTriplet};
