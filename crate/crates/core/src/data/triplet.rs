use rayon::prelude::*;

use super::phantom::PhantomVolume;
use super::resize::{resize, resize_mask, ResizeKind};
use crate::error::Result;
use crate::metrics::Region;
use crate::tensor::Tensor4;

/// Three consecutive slices stacked as channels, with the centre slice's
/// mask as target.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceTriplet {
    /// `(1, 3, H, W)`: slices `i − 1, i, i + 1`.
    pub input: Tensor4<f32>,
    /// `(1, 1, H, W)`.
    pub target: Tensor4<f32>,
    pub slice_id: String,
    pub region: Region,
}

/// Neighbour indices for slice `i`, replicating the first and last slice.
pub fn triplet_indices(i: usize, n: usize) -> [usize; 3] {
    [i.saturating_sub(1), i, (i + 1).min(n - 1)]
}

/// One triplet per slice, resized to `size`. Slice ids are
/// `<volume_id>/<index>`.
pub fn make_triplets(vol: &PhantomVolume, volume_id: &str, size: (usize, usize)) -> Result<Vec<SliceTriplet>> {
    vol.validate()?;
    let from = (vol.height, vol.width);
    let n = vol.n_slices();
    let planes: Vec<Vec<f32>> =
        vol.images.par_iter().map(|img| resize(img, from, size, ResizeKind::Image)).collect::<Result<_>>()?;
    (0..n)
        .into_par_iter()
        .map(|i| {
            let [a, b, c] = triplet_indices(i, n);
            let mut data = Vec::with_capacity(3 * size.0 * size.1);
            for k in [a, b, c] {
                data.extend_from_slice(&planes[k]);
            }
            let mask = resize_mask(&vol.masks[i], size)?;
            Ok(SliceTriplet {
                input: Tensor4::from_vec([1, 3, size.0, size.1], data)?,
                target: mask.to_tensor(),
                slice_id: format!("{volume_id}/{i:04}"),
                region: vol.regions[i],
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::phantom::generate_phantom;

    #[test]
    fn edge_replication() {
        assert_eq!(triplet_indices(0, 5), [0, 0, 1]);
        assert_eq!(triplet_indices(2, 5), [1, 2, 3]);
        assert_eq!(triplet_indices(4, 5), [3, 4, 4]);
    }

    #[test]
    fn one_triplet_per_slice_with_center_channel() {
        let v = generate_phantom(8, 9, (32, 32)).unwrap();
        let t = make_triplets(&v, "v", (32, 32)).unwrap();
        assert_eq!(t.len(), 9);
        for (i, tr) in t.iter().enumerate() {
            assert_eq!(tr.input.plane(0, 1), &v.images[i][..]);
            assert_eq!(tr.target.data().iter().filter(|&&p| p == 1.0).count(), v.masks[i].count());
            assert_eq!(tr.region, v.regions[i]);
        }
        assert_eq!(t[0].input.plane(0, 0), t[0].input.plane(0, 1));
        assert_eq!(t[0].slice_id, "v/0000");
    }
}
