use candle_core::{DType, Device, Tensor};
use image::{imageops, Rgb, RgbImage};

use crate::datamodel::{BoundingBox, ImageSample, SegmentationMask};
use crate::error::{Error, Result};

/// Padding value of the letterbox border.
pub const PAD_GRAY: u8 = 114;

/// Mapping between an original image and its `size x size` letterboxed copy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Letterbox {
    pub src_width: usize,
    pub src_height: usize,
    pub size: usize,
    /// Resized content dimensions inside the square.
    pub content_width: usize,
    pub content_height: usize,
    pub pad_x: usize,
    pub pad_y: usize,
}

impl Letterbox {
    pub fn new(src_width: usize, src_height: usize, size: usize) -> Self {
        let scale = (size as f64 / src_width as f64).min(size as f64 / src_height as f64);
        let content_width = ((src_width as f64 * scale).round() as usize).clamp(1, size);
        let content_height = ((src_height as f64 * scale).round() as usize).clamp(1, size);
        Self {
            src_width,
            src_height,
            size,
            content_width,
            content_height,
            pad_x: (size - content_width) / 2,
            pad_y: (size - content_height) / 2,
        }
    }

    fn scale_x(&self) -> f64 {
        self.content_width as f64 / self.src_width as f64
    }

    fn scale_y(&self) -> f64 {
        self.content_height as f64 / self.src_height as f64
    }

    pub fn is_identity(&self) -> bool {
        self.src_width == self.size && self.src_height == self.size
    }

    /// Original pixel coordinates to letterboxed coordinates.
    pub fn forward_box(&self, b: &BoundingBox) -> BoundingBox {
        let (sx, sy) = (self.scale_x(), self.scale_y());
        let (px, py) = (self.pad_x as f64, self.pad_y as f64);
        BoundingBox::new(
            b.x_min * sx + px,
            b.y_min * sy + py,
            b.x_max * sx + px,
            b.y_max * sy + py,
            b.class_id,
        )
    }

    /// Letterboxed coordinates back to the original image, clamped to it.
    pub fn inverse_box(&self, b: &BoundingBox) -> BoundingBox {
        let (sx, sy) = (self.scale_x(), self.scale_y());
        let (px, py) = (self.pad_x as f64, self.pad_y as f64);
        BoundingBox::new(
            (b.x_min - px) / sx,
            (b.y_min - py) / sy,
            (b.x_max - px) / sx,
            (b.y_max - py) / sy,
            b.class_id,
        )
        .clamped(self.src_width as f64, self.src_height as f64)
    }

    pub fn forward_image(&self, img: &RgbImage) -> RgbImage {
        if self.is_identity() {
            return img.clone();
        }
        let resized = imageops::resize(
            img,
            self.content_width as u32,
            self.content_height as u32,
            imageops::FilterType::Triangle,
        );
        let mut out = RgbImage::from_pixel(self.size as u32, self.size as u32, Rgb([PAD_GRAY; 3]));
        imageops::replace(&mut out, &resized, self.pad_x as i64, self.pad_y as i64);
        out
    }

    /// Nearest-neighbour mask resize into the square; the border is background.
    pub fn forward_mask(&self, mask: &SegmentationMask) -> SegmentationMask {
        if self.is_identity() {
            return mask.clone();
        }
        let mut out = SegmentationMask::zeros(self.size, self.size);
        for y in 0..self.content_height {
            let sy = (((y as f64 + 0.5) / self.scale_y()) as usize).min(self.src_height - 1);
            for x in 0..self.content_width {
                let sx = (((x as f64 + 0.5) / self.scale_x()) as usize).min(self.src_width - 1);
                out.set(x + self.pad_x, y + self.pad_y, mask.get(sx, sy));
            }
        }
        out
    }

    /// Nearest-neighbour mask resize back to the original resolution.
    pub fn inverse_mask(&self, mask: &SegmentationMask) -> SegmentationMask {
        if self.is_identity() {
            return mask.clone();
        }
        let mut out = SegmentationMask::zeros(self.src_width, self.src_height);
        for y in 0..self.src_height {
            let ly = ((((y as f64 + 0.5) * self.scale_y()) as usize).min(self.content_height - 1))
                + self.pad_y;
            for x in 0..self.src_width {
                let lx = ((((x as f64 + 0.5) * self.scale_x()) as usize)
                    .min(self.content_width - 1))
                    + self.pad_x;
                out.set(x, y, mask.get(lx, ly));
            }
        }
        out
    }
}

/// Letterboxes image, mask and boxes of a sample to `size x size`.
pub fn letterbox_sample(sample: &ImageSample, size: usize) -> (ImageSample, Letterbox) {
    let lb = Letterbox::new(sample.width(), sample.height(), size);
    let boxed = ImageSample {
        id: sample.id.clone(),
        image: lb.forward_image(&sample.image),
        boxes: sample
            .boxes
            .iter()
            .map(|b| lb.forward_box(b).clamped(size as f64, size as f64))
            .filter(BoundingBox::is_valid)
            .collect(),
        mask: lb.forward_mask(&sample.mask),
    };
    (boxed, lb)
}

/// Stacks equally sized RGB images into an `N x 3 x H x W` tensor scaled to [0, 1].
pub fn images_to_tensor(images: &[&RgbImage], dtype: DType) -> Result<Tensor> {
    let Some(first) = images.first() else {
        return Err(Error::Shape("no images to stack".into()));
    };
    let (w, h) = (first.width() as usize, first.height() as usize);
    let mut data = Vec::with_capacity(images.len() * 3 * h * w);
    for img in images {
        if (img.width() as usize, img.height() as usize) != (w, h) {
            return Err(Error::Shape(format!(
                "image {}x{} in a batch of {w}x{h}",
                img.width(),
                img.height()
            )));
        }
        for c in 0..3 {
            data.extend(img.pixels().map(|p| p[c] as f32 / 255.0));
        }
    }
    Ok(Tensor::from_vec(data, (images.len(), 3, h, w), &Device::Cpu)?.to_dtype(dtype)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn wide_image_is_padded_vertically() {
        let lb = Letterbox::new(200, 100, 64);
        assert_eq!((lb.content_width, lb.content_height), (64, 32));
        assert_eq!((lb.pad_x, lb.pad_y), (0, 16));
        let img = RgbImage::from_pixel(200, 100, Rgb([255, 0, 0]));
        let out = lb.forward_image(&img);
        assert_eq!(out.dimensions(), (64, 64));
        assert_eq!(out.get_pixel(10, 5), &Rgb([PAD_GRAY; 3]));
        assert_eq!(out.get_pixel(10, 30), &Rgb([255, 0, 0]));
    }

    #[test]
    fn square_input_of_network_size_is_untouched() {
        let lb = Letterbox::new(64, 64, 64);
        assert!(lb.is_identity());
        let b = BoundingBox::new(3.0, 4.0, 20.0, 30.0, 0);
        assert_eq!(lb.forward_box(&b), b);
    }

    #[test]
    fn tensor_layout_is_nchw() {
        let mut img = RgbImage::new(2, 1);
        img.put_pixel(1, 0, Rgb([255, 51, 0]));
        let t = images_to_tensor(&[&img], DType::F32).unwrap();
        assert_eq!(t.dims(), &[1, 3, 1, 2]);
        let v = t.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(v, vec![0.0, 1.0, 0.0, 0.2, 0.0, 0.0]);
    }

    proptest! {
        #[test]
        fn box_round_trip_within_one_pixel(
            w in 20usize..800, h in 20usize..800, size in prop::sample::select(vec![64usize, 256, 640]),
            fx in 0.0f64..0.5, fy in 0.0f64..0.5, fw in 0.1f64..0.5, fh in 0.1f64..0.5,
        ) {
            let lb = Letterbox::new(w, h, size);
            let b = BoundingBox::new(fx * w as f64, fy * h as f64, (fx + fw) * w as f64, (fy + fh) * h as f64, 0);
            let back = lb.inverse_box(&lb.forward_box(&b));
            for (a, c) in [(b.x_min, back.x_min), (b.y_min, back.y_min), (b.x_max, back.x_max), (b.y_max, back.y_max)] {
                prop_assert!((a - c).abs() <= 1.0);
            }
        }

        #[test]
        fn mask_round_trip_preserves_shape(w in 8usize..120, h in 8usize..120) {
            let lb = Letterbox::new(w, h, 64);
            let m = SegmentationMask::zeros(w, h);
            let back = lb.inverse_mask(&lb.forward_mask(&m));
            prop_assert_eq!((back.width(), back.height()), (w, h));
        }
    }
}
