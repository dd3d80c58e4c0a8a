use serde::{Deserialize, Serialize};

use super::{Volume, VolumeError};

/// CT display window in Hounsfield units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub center: f32,
    pub width: f32,
}

impl Default for Window {
    /// Abdominal soft-tissue window.
    fn default() -> Self {
        Self {
            center: 40.0,
            width: 400.0,
        }
    }
}

impl Window {
    /// Maps a value linearly onto 0..=255, rounding half up.
    pub fn map(&self, value: f32) -> u8 {
        let lo = self.center - self.width / 2.0;
        let hi = self.center + self.width / 2.0;
        if value <= lo {
            0
        } else if value >= hi {
            255
        } else {
            let scaled = (value as f64 - lo as f64) / self.width as f64 * 255.0;
            (scaled + 0.5).floor().min(255.0) as u8
        }
    }
}

/// 8-bit grayscale image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image8 {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl Image8 {
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    /// Binary PGM (P5), maxval 255.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn to_png(&self) -> Vec<u8> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, self.width as u32, self.height as u32);
            enc.set_color(png::ColorType::Grayscale);
            enc.set_depth(png::BitDepth::Eight);
            let mut writer = enc.write_header().expect("in-memory png header");
            writer
                .write_image_data(&self.pixels)
                .expect("in-memory png body");
        }
        out
    }
}

/// Renders axial slice `z` of `v` through `window`; x runs along columns.
pub fn render_slice(v: &Volume, z: usize, window: Window) -> Result<Image8, VolumeError> {
    if !(window.width > 0.0) {
        return Err(VolumeError::BadWindow(window.width));
    }
    let [w, h, d] = v.dims();
    if z >= d {
        return Err(VolumeError::SliceOutOfBounds { z, depth: d });
    }
    let plane = &v.data()[z * w * h..(z + 1) * w * h];
    Ok(Image8 {
        width: w,
        height: h,
        pixels: plane.iter().map(|&value| window.map(value)).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Datatype;
    use proptest::prelude::*;

    fn uniform(value: f32) -> Volume {
        Volume::new([3, 2, 2], [1.0; 3], Datatype::Float32, vec![value; 12]).unwrap()
    }

    #[test]
    fn uniform_volume_renders_uniform_image() {
        let img = render_slice(&uniform(90.0), 1, Window::default()).unwrap();
        assert_eq!((img.width, img.height), (3, 2));
        assert!(img.pixels.iter().all(|&p| p == img.pixels[0]));
    }

    #[test]
    fn window_endpoints_and_center() {
        let w = Window::default();
        assert_eq!(w.map(-160.0), 0);
        assert_eq!(w.map(240.0), 255);
        assert_eq!(w.map(-1000.0), 0);
        assert_eq!(w.map(3000.0), 255);
        // (40 - (-160)) / 400 * 255 = 127.5, rounded half up
        assert_eq!(w.map(40.0), 128);
    }

    #[test]
    fn out_of_bounds_slice() {
        assert_eq!(
            render_slice(&uniform(0.0), 2, Window::default()),
            Err(VolumeError::SliceOutOfBounds { z: 2, depth: 2 })
        );
        let bad = Window { center: 0.0, width: 0.0 };
        assert!(render_slice(&uniform(0.0), 0, bad).is_err());
    }

    #[test]
    fn pgm_layout() {
        let img = Image8 { width: 2, height: 1, pixels: vec![0, 255] };
        assert_eq!(img.to_pgm(), b"P5\n2 1\n255\n\x00\xff".to_vec());
    }

    proptest! {
        #[test]
        fn mapping_is_monotone(a in -2000.0f32..2000.0, b in -2000.0f32..2000.0, c in -500.0f32..500.0, w in 1.0f32..2000.0) {
            let win = Window { center: c, width: w };
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(win.map(lo) <= win.map(hi));
        }
    }
}
