use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// An `H × W × 3` image with channel values in `[0, 1]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct PixelArray {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl PixelArray {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(Error::Shape(format!(
                "{height}x{width}x3 image needs {} values, got {}",
                height * width * 3,
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    /// From 8-bit RGB bytes.
    pub fn from_rgb8(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(height, width, bytes.iter().map(|&b| f64::from(b) / 255.0).collect())
    }
}

/// An image cut into a row-major `hp × wp` grid of flattened `P × P × 3` patches.
#[derive(Clone, Debug)]
pub struct PatchGrid {
    pub hp: usize,
    pub wp: usize,
    pub patch_size: usize,
    pub patch_dim: usize,
    /// `[hp * wp, patch_dim]`; token `i` is block `(i / wp, i % wp)`.
    pub tokens: Tensor,
    pub source_res: (usize, usize),
}

impl PatchGrid {
    pub fn len(&self) -> usize {
        self.hp * self.wp
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Cuts the image into non-overlapping patches; values are copied unchanged.
/// Within a patch the layout is `(row, col, channel)`.
pub fn patchify(image: &PixelArray, patch_size: usize) -> Result<PatchGrid> {
    let (h, w, p) = (image.height, image.width, patch_size);
    if p == 0 || h == 0 || w == 0 || h % p != 0 || w % p != 0 {
        return Err(Error::Config(format!(
            "image {h}x{w} is not divisible into {p}x{p} patches"
        )));
    }
    let (hp, wp) = (h / p, w / p);
    let patch_dim = p * p * 3;
    let mut data = Vec::with_capacity(h * w * 3);
    for gh in 0..hp {
        for gw in 0..wp {
            for py in 0..p {
                let row = gh * p + py;
                let start = (row * w + gw * p) * 3;
                data.extend_from_slice(&image.data[start..start + p * 3]);
            }
        }
    }
    Ok(PatchGrid {
        hp,
        wp,
        patch_size: p,
        patch_dim,
        tokens: Tensor::new(&[hp * wp, patch_dim], data)?,
        source_res: (h, w),
    })
}

pub fn unpatchify(grid: &PatchGrid) -> PixelArray {
    let p = grid.patch_size;
    let (h, w) = grid.source_res;
    let mut data = vec![0.0; h * w * 3];
    let src = grid.tokens.data();
    for i in 0..grid.len() {
        let (gh, gw) = (i / grid.wp, i % grid.wp);
        for py in 0..p {
            let row = gh * p + py;
            let dst = (row * w + gw * p) * 3;
            let s = i * grid.patch_dim + py * p * 3;
            data[dst..dst + p * 3].copy_from_slice(&src[s..s + p * 3]);
        }
    }
    PixelArray {
        height: h,
        width: w,
        data,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_resolution_grid() {
        let img = PixelArray::new(256, 256, vec![0.5; 256 * 256 * 3]).unwrap();
        let g = patchify(&img, 32).unwrap();
        assert_eq!((g.hp, g.wp, g.patch_dim), (8, 8, 3072));
        assert_eq!(g.tokens.shape(), &[64, 3072]);
        // constant image -> identical tokens
        let first = &g.tokens.data()[..3072];
        assert!(g.tokens.data().chunks(3072).all(|c| c == first));
    }

    #[test]
    fn non_divisible_is_config_error() {
        let img = PixelArray::new(10, 12, vec![0.0; 360]).unwrap();
        assert!(matches!(patchify(&img, 4), Err(Error::Config(_))));
    }

    #[test]
    fn token_maps_to_pixel_block() {
        let (h, w, p) = (4, 6, 2);
        let data: Vec<f64> = (0..h * w * 3).map(|i| i as f64).collect();
        let img = PixelArray::new(h, w, data.clone()).unwrap();
        let g = patchify(&img, p).unwrap();
        // token 4 -> grid (1, 1): top-left pixel (2, 2), channel 0
        assert_eq!(g.tokens.data()[4 * 12], data[(2 * w + 2) * 3]);
    }

    proptest! {
        #[test]
        fn roundtrip_is_bitwise(hp in 1usize..4, wp in 1usize..4, p in 1usize..5, seed in any::<u64>()) {
            let (h, w) = (hp * p, wp * p);
            let mut s = seed;
            let data: Vec<f64> = (0..h * w * 3).map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1);
                (s >> 11) as f64 / (1u64 << 53) as f64
            }).collect();
            let img = PixelArray::new(h, w, data).unwrap();
            let back = unpatchify(&patchify(&img, p).unwrap());
            prop_assert_eq!(back, img);
        }
    }
}
