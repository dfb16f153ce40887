use super::DatasetError;

/// `H × W × C` image with every pixel in `[0, 1]`, stored row-major with
/// interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    channels: usize,
    pixels: Vec<f64>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, channels: usize, pixels: Vec<f64>) -> Result<Self, DatasetError> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(DatasetError::InvalidImage(format!(
                "degenerate dimensions {height}x{width}x{channels}"
            )));
        }
        if pixels.len() != height * width * channels {
            return Err(DatasetError::InvalidImage(format!(
                "{height}x{width}x{channels} image needs {} pixels, got {}",
                height * width * channels,
                pixels.len()
            )));
        }
        if let Some(index) = pixels.iter().position(|p| !(0.0..=1.0).contains(p)) {
            return Err(DatasetError::PixelOutOfRange {
                index,
                value: pixels[index],
            });
        }
        Ok(Self {
            height,
            width,
            channels,
            pixels,
        })
    }

    /// Builds an image by clamping every value into `[0, 1]`. NaN maps to 0.
    pub fn from_clamped(height: usize, width: usize, channels: usize, mut pixels: Vec<f64>) -> Result<Self, DatasetError> {
        for p in &mut pixels {
            *p = if p.is_nan() { 0.0 } else { p.clamp(0.0, 1.0) };
        }
        Self::new(height, width, channels, pixels)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self, DatasetError> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// `(height, width, channels)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    /// Planar `C × H × W` copy, the layout the extractors consume.
    pub fn to_chw(&self) -> Vec<f64> {
        if self.channels == 1 {
            return self.pixels.clone();
        }
        let plane = self.height * self.width;
        let mut out = vec![0.0; self.pixels.len()];
        for (i, px) in self.pixels.chunks_exact(self.channels).enumerate() {
            for (c, &v) in px.iter().enumerate() {
                out[c * plane + i] = v;
            }
        }
        out
    }

    /// Inverse of [`Self::to_chw`], clamping into `[0, 1]`.
    pub fn from_chw_clamped(height: usize, width: usize, channels: usize, planar: &[f64]) -> Result<Self, DatasetError> {
        let plane = height * width;
        if planar.len() != plane * channels {
            return Err(DatasetError::InvalidImage(format!(
                "planar buffer of {} values does not fit {height}x{width}x{channels}",
                planar.len()
            )));
        }
        let mut pixels = vec![0.0; planar.len()];
        for c in 0..channels {
            for i in 0..plane {
                pixels[i * channels + c] = planar[c * plane + i];
            }
        }
        Self::from_clamped(height, width, channels, pixels)
    }

    /// Euclidean distance between pixel vectors of equal-shape images.
    pub fn pixel_distance(&self, other: &ImageTensor) -> Option<f64> {
        (self.dims() == other.dims()).then(|| {
            self.pixels
                .iter()
                .zip(&other.pixels)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })
    }
}
