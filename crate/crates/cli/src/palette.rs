//! Label map colouring with the bit-interleaved VOC palette.

use anyhow::{Context, Result};
use image::codecs::png::PngEncoder;
use image::{ExtendedColorType, ImageEncoder};
use protoseg_core::LabelMap;

/// Colour of `label`: bits 0/1/2 of each 3-bit group go to R/G/B, most
/// significant first. Background is black and 255 is (224, 224, 192).
pub fn color(label: u16) -> [u8; 3] {
    let mut c = label as u32;
    let mut rgb = [0u8; 3];
    for j in 0..8 {
        for (ch, out) in rgb.iter_mut().enumerate() {
            *out |= (((c >> ch) & 1) as u8) << (7 - j);
        }
        c >>= 3;
    }
    rgb
}

pub fn colorize(map: &LabelMap) -> Vec<u8> {
    map.as_slice().iter().flat_map(|&l| color(l)).collect()
}

pub fn encode_png(map: &LabelMap) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let (h, w) = (map.height() as u32, map.width() as u32);
    PngEncoder::new(&mut out)
        .write_image(&colorize(map), w, h, ExtendedColorType::Rgb8)
        .context("encoding PNG")?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn voc_colours() {
        assert_eq!(color(0), [0, 0, 0]);
        assert_eq!(color(1), [128, 0, 0]);
        assert_eq!(color(2), [0, 128, 0]);
        assert_eq!(color(3), [128, 128, 0]);
        assert_eq!(color(15), [192, 128, 128]);
        assert_eq!(color(20), [0, 64, 128]);
        assert_eq!(color(255), [224, 224, 192]);
    }

    #[test]
    fn first_256_distinct() {
        let mut all: Vec<[u8; 3]> = (0..256).map(color).collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 256);
    }
}
