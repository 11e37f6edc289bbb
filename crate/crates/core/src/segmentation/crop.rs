use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Image, LabelMap, Result, SegmentationError};

/// Side length of every crop handed to the feature extractor.
pub const CROP_SIZE: usize = 224;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

#[derive(Debug, Clone)]
pub struct SegmentCrop {
    pub image_id: String,
    pub segment_index: usize,
    pub bounding_box: BoundingBox,
    /// `CROP_SIZE`×`CROP_SIZE` RGB.
    pub crop: Image,
    /// Row-major membership flags over the bounding box.
    pub mask: Vec<bool>,
}

impl SegmentCrop {
    pub fn file_stem(&self) -> String {
        format!("{}_seg{}", self.image_id, self.segment_index)
    }

    pub fn pixel_count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    /// Writes `<image_id>_seg<k>.png` and `<image_id>_seg<k>.mask.png` into
    /// `dir`, returning both paths.
    pub fn save(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        let crop_path = dir.join(format!("{}.png", self.file_stem()));
        self.crop.save_png(&crop_path)?;

        let mask_path = dir.join(format!("{}.mask.png", self.file_stem()));
        let raw = self.mask.iter().map(|&m| if m { 255u8 } else { 0 }).collect();
        let bb = self.bounding_box;
        image::GrayImage::from_raw(bb.w as u32, bb.h as u32, raw)
            .expect("mask matches bounding box")
            .save_with_format(&mask_path, image::ImageFormat::Png)
            .map_err(|source| SegmentationError::Image {
                path: mask_path.display().to_string(),
                source,
            })?;
        Ok((crop_path, mask_path))
    }
}

/// Bilinear resampling with half-pixel centers and edge clamping.
pub fn resize_bilinear(img: &Image, out_w: usize, out_h: usize) -> Image {
    let (w, h) = (img.width(), img.height());
    let sx = w as f64 / out_w as f64;
    let sy = h as f64 / out_h as f64;
    let src = img.as_slice();
    let sample = |x: usize, y: usize, c: usize| src[(y * w + x) * 3 + c] as f64;

    let mut data = Vec::with_capacity(out_w * out_h * 3);
    for oy in 0..out_h {
        let fy = ((oy as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let ty = fy - y0 as f64;
        for ox in 0..out_w {
            let fx = ((ox as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let tx = fx - x0 as f64;
            for c in 0..3 {
                let top = sample(x0, y0, c) * (1.0 - tx) + sample(x1, y0, c) * tx;
                let bottom = sample(x0, y1, c) * (1.0 - tx) + sample(x1, y1, c) * tx;
                data.push(((top * (1.0 - ty) + bottom * ty) as f32).clamp(0.0, 1.0));
            }
        }
    }
    Image::new(out_w, out_h, data).expect("resize preserves range")
}

/// Cuts one crop per region, ordered by region id.
///
/// Each crop is the region's bounding box with non-member pixels replaced by
/// the region's mean color, resized to [`CROP_SIZE`]².
pub fn extract_segment_crops(img: &Image, labels: &LabelMap, image_id: &str) -> Result<Vec<SegmentCrop>> {
    let (w, h) = (img.width(), img.height());
    if labels.width() != w || labels.height() != h {
        return Err(SegmentationError::DimensionMismatch {
            image_w: w,
            image_h: h,
            label_w: labels.width(),
            label_h: labels.height(),
        });
    }

    let n = labels.region_count();
    let mut bounds = vec![(usize::MAX, usize::MAX, 0usize, 0usize); n];
    let mut sums = vec![[0.0f64; 3]; n];
    let mut counts = vec![0usize; n];
    for y in 0..h {
        for x in 0..w {
            let r = labels.get(x, y) as usize;
            let b = &mut bounds[r];
            b.0 = b.0.min(x);
            b.1 = b.1.min(y);
            b.2 = b.2.max(x);
            b.3 = b.3.max(y);
            let p = img.pixel(x, y);
            for c in 0..3 {
                sums[r][c] += p[c] as f64;
            }
            counts[r] += 1;
        }
    }

    (0..n)
        .map(|r| {
            if counts[r] == 0 {
                return Err(SegmentationError::EmptyRegion(r));
            }
            let (x0, y0, x1, y1) = bounds[r];
            let bb = BoundingBox {
                x: x0,
                y: y0,
                w: x1 - x0 + 1,
                h: y1 - y0 + 1,
            };
            let mean = sums[r].map(|s| (s / counts[r] as f64) as f32);
            let mut cut = Image::filled(bb.w, bb.h, mean);
            let mut mask = vec![false; bb.w * bb.h];
            for yy in 0..bb.h {
                for xx in 0..bb.w {
                    if labels.get(x0 + xx, y0 + yy) as usize == r {
                        mask[yy * bb.w + xx] = true;
                        cut.set_pixel(xx, yy, img.pixel(x0 + xx, y0 + yy));
                    }
                }
            }
            Ok(SegmentCrop {
                image_id: image_id.to_string(),
                segment_index: r,
                bounding_box: bb,
                crop: resize_bilinear(&cut, CROP_SIZE, CROP_SIZE),
                mask,
            })
        })
        .collect()
}
