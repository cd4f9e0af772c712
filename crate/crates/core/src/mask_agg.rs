//! Consolidation of class-agnostic masks into one non-overlapping label map.
//!
//! Masks that cover almost the whole frame are dropped, the rest are visited
//! from largest to smallest, and each one claims whatever foreground pixels
//! are still free. A mask that claims nothing does not consume a label, so
//! region ids stay contiguous `1..=K`.

use crate::error::{Error, Result};
use crate::label::{LabelMap, RgbImage};

/// Default area fraction above which a mask is treated as "whole image".
pub const DEFAULT_TAU_AREA: f64 = 0.9;

/// One binary mask with its area metadata.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawMask {
    /// Row-major foreground flags.
    pub pixels: Vec<bool>,
    /// Number of foreground pixels as reported by the mask generator.
    pub area: u64,
}

impl RawMask {
    pub fn from_pixels(pixels: Vec<bool>) -> Self {
        let area = pixels.iter().filter(|&&p| p).count() as u64;
        RawMask { pixels, area }
    }

    pub fn count_foreground(&self) -> u64 {
        self.pixels.iter().filter(|&&p| p).count() as u64
    }
}

/// All masks produced for one image, in generator order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawMaskSet {
    pub image_id: String,
    pub height: usize,
    pub width: usize,
    pub masks: Vec<RawMask>,
}

impl RawMaskSet {
    pub fn new(image_id: impl Into<String>, height: usize, width: usize) -> Self {
        RawMaskSet {
            image_id: image_id.into(),
            height,
            width,
            masks: Vec::new(),
        }
    }

    pub fn with_masks(mut self, masks: Vec<RawMask>) -> Self {
        self.masks = masks;
        self
    }

    /// Checks every mask against the header and its own area field.
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::format(format!(
                "{}: empty frame {}x{}",
                self.image_id, self.height, self.width
            )));
        }
        let n = self.height * self.width;
        for (i, m) in self.masks.iter().enumerate() {
            if m.pixels.len() != n {
                return Err(Error::format(format!(
                    "{}: mask {i} has {} pixels, header says {}x{}",
                    self.image_id,
                    m.pixels.len(),
                    self.height,
                    self.width
                )));
            }
            let counted = m.count_foreground();
            if counted != m.area {
                return Err(Error::format(format!(
                    "{}: mask {i} declares area {} but has {counted} foreground pixels",
                    self.image_id, m.area
                )));
            }
        }
        Ok(())
    }

    fn area_limit(&self, tau_area: f64) -> f64 {
        tau_area * (self.height * self.width) as f64
    }
}

/// Per-image map of non-overlapping region ids (`0` = unassigned).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AggregatedMask {
    pub image_id: String,
    pub labels: LabelMap,
}

impl AggregatedMask {
    pub fn region_count(&self) -> usize {
        self.labels.max_label() as usize
    }
}

/// Inclusive pixel bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BBox {
    pub row_min: usize,
    pub col_min: usize,
    pub row_max: usize,
    pub col_max: usize,
}

impl BBox {
    pub fn height(&self) -> usize {
        self.row_max - self.row_min + 1
    }

    pub fn width(&self) -> usize {
        self.col_max - self.col_min + 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionProposal {
    pub region_id: u16,
    pub bbox: BBox,
    pub pixel_count: u64,
}

/// Bounding-box crop of one region with everything outside the region zeroed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoiPatch {
    pub region_id: u16,
    pub bbox: BBox,
    pub pixels: RgbImage,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregateOptions {
    /// Masks with `area >= tau_area * H * W` are discarded.
    pub tau_area: f64,
    /// Masks that would claim fewer new pixels than this are skipped.
    pub min_pixels: u64,
}

impl Default for AggregateOptions {
    fn default() -> Self {
        AggregateOptions {
            tau_area: DEFAULT_TAU_AREA,
            min_pixels: 1,
        }
    }
}

impl AggregateOptions {
    pub fn with_tau_area(tau_area: f64) -> Self {
        AggregateOptions {
            tau_area,
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<()> {
        check_tau_area(self.tau_area)?;
        if self.min_pixels == 0 {
            return Err(Error::InvalidParameter("min_pixels must be >= 1".into()));
        }
        Ok(())
    }
}

fn check_tau_area(tau_area: f64) -> Result<()> {
    if !(tau_area > 0.0 && tau_area <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "tau_area must lie in (0, 1], got {tau_area}"
        )));
    }
    Ok(())
}

/// Keeps the masks whose area is strictly below `tau_area * H * W`.
pub fn filter_by_area(masks: &RawMaskSet, tau_area: f64) -> Result<RawMaskSet> {
    check_tau_area(tau_area)?;
    masks.validate()?;
    let limit = masks.area_limit(tau_area);
    Ok(RawMaskSet {
        image_id: masks.image_id.clone(),
        height: masks.height,
        width: masks.width,
        masks: masks
            .masks
            .iter()
            .filter(|m| (m.area as f64) < limit)
            .cloned()
            .collect(),
    })
}

/// Orders masks by descending area; equal areas keep their input order.
pub fn sort_by_area(masks: &RawMaskSet) -> RawMaskSet {
    let mut out = masks.clone();
    out.masks.sort_by_key(|m| std::cmp::Reverse(m.area));
    out
}

/// Indices of the retained masks, in visiting order.
fn visiting_order(masks: &RawMaskSet, tau_area: f64) -> Vec<usize> {
    let limit = masks.area_limit(tau_area);
    let mut order: Vec<usize> = (0..masks.masks.len())
        .filter(|&i| (masks.masks[i].area as f64) < limit)
        .collect();
    order.sort_by(|&a, &b| masks.masks[b].area.cmp(&masks.masks[a].area));
    order
}

/// Aggregates with the default options and the given area fraction.
pub fn aggregate(masks: &RawMaskSet, tau_area: f64) -> Result<AggregatedMask> {
    aggregate_with(masks, &AggregateOptions::with_tau_area(tau_area))
}

pub fn aggregate_with(masks: &RawMaskSet, opts: &AggregateOptions) -> Result<AggregatedMask> {
    opts.validate()?;
    masks.validate()?;

    let mut labels = LabelMap::zeros(masks.height, masks.width);
    let mut next: u32 = 1;
    let mut claimed: Vec<usize> = Vec::new();
    for idx in visiting_order(masks, opts.tau_area) {
        let mask = &masks.masks[idx];
        claimed.clear();
        claimed.extend(
            labels
                .as_slice()
                .iter()
                .zip(&mask.pixels)
                .enumerate()
                .filter(|(_, (&l, &fg))| fg && l == 0)
                .map(|(i, _)| i),
        );
        if (claimed.len() as u64) < opts.min_pixels {
            continue;
        }
        let label = u16::try_from(next).map_err(|_| {
            Error::format(format!(
                "{}: more than {} regions",
                masks.image_id,
                u16::MAX
            ))
        })?;
        let data = labels.as_mut_slice();
        for &i in &claimed {
            data[i] = label;
        }
        next += 1;
    }

    Ok(AggregatedMask {
        image_id: masks.image_id.clone(),
        labels,
    })
}

/// One proposal per region id, ascending, with tight bounding boxes.
pub fn extract_regions(agg: &AggregatedMask) -> Vec<RegionProposal> {
    let k = agg.region_count();
    let mut boxes: Vec<Option<(BBox, u64)>> = vec![None; k + 1];
    let (h, w) = agg.labels.shape();
    for r in 0..h {
        for c in 0..w {
            let l = agg.labels.get(r, c) as usize;
            if l == 0 {
                continue;
            }
            match &mut boxes[l] {
                Some((b, n)) => {
                    b.row_min = b.row_min.min(r);
                    b.row_max = b.row_max.max(r);
                    b.col_min = b.col_min.min(c);
                    b.col_max = b.col_max.max(c);
                    *n += 1;
                }
                slot @ None => {
                    *slot = Some((
                        BBox {
                            row_min: r,
                            col_min: c,
                            row_max: r,
                            col_max: c,
                        },
                        1,
                    ))
                }
            }
        }
    }
    boxes
        .into_iter()
        .enumerate()
        .filter_map(|(id, b)| {
            b.map(|(bbox, pixel_count)| RegionProposal {
                region_id: id as u16,
                bbox,
                pixel_count,
            })
        })
        .collect()
}

/// Crops each region's bounding box out of `image`, zeroing pixels that
/// belong to other regions or to no region.
pub fn crop_rois(image: &RgbImage, agg: &AggregatedMask) -> Result<Vec<RoiPatch>> {
    agg.labels.check_shape(image.height(), image.width())?;
    Ok(extract_regions(agg)
        .into_iter()
        .map(|p| {
            let b = p.bbox;
            let mut crop = RgbImage::new(b.height(), b.width());
            for r in b.row_min..=b.row_max {
                for c in b.col_min..=b.col_max {
                    if agg.labels.get(r, c) == p.region_id {
                        crop.put_pixel(r - b.row_min, c - b.col_min, image.pixel(r, c));
                    }
                }
            }
            RoiPatch {
                region_id: p.region_id,
                bbox: b,
                pixels: crop,
            }
        })
        .collect())
}
