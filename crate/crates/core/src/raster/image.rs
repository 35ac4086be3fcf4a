use crate::error::{arg_err, Result};

use super::tensor::{Tensor, TensorData};

/// Minimum edge length of a patch.
pub const MIN_PATCH_EDGE: usize = 8;

/// A B×H×W raster, band-major. Holds raw reflectance (widened to f32) before
/// normalization and z-scored values after.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiBandPatch {
    pub patch_id: String,
    pub scene_id: Option<String>,
    bands: usize,
    height: usize,
    width: usize,
    values: Vec<f32>,
}

impl MultiBandPatch {
    pub fn new(
        patch_id: impl Into<String>,
        scene_id: Option<String>,
        bands: usize,
        height: usize,
        width: usize,
        values: Vec<f32>,
    ) -> Result<Self> {
        if bands == 0 {
            return Err(arg_err!("patch needs at least one band"));
        }
        if height < MIN_PATCH_EDGE || width < MIN_PATCH_EDGE {
            return Err(arg_err!(
                "patch {height}x{width} is smaller than {MIN_PATCH_EDGE}x{MIN_PATCH_EDGE}"
            ));
        }
        if values.len() != bands * height * width {
            return Err(arg_err!(
                "{} values for a {bands}x{height}x{width} patch",
                values.len()
            ));
        }
        Ok(Self {
            patch_id: patch_id.into(),
            scene_id,
            bands,
            height,
            width,
            values,
        })
    }

    /// Stacks equally shaped single-band planes.
    pub fn from_planes(
        patch_id: impl Into<String>,
        scene_id: Option<String>,
        height: usize,
        width: usize,
        planes: Vec<Vec<f32>>,
    ) -> Result<Self> {
        let bands = planes.len();
        if let Some(p) = planes.iter().find(|p| p.len() != height * width) {
            return Err(arg_err!("band plane of {} values, expected {}", p.len(), height * width));
        }
        Self::new(patch_id, scene_id, bands, height, width, planes.concat())
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn band(&self, b: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.values[b * n..(b + 1) * n]
    }

    pub fn band_mut(&mut self, b: usize) -> &mut [f32] {
        let n = self.height * self.width;
        &mut self.values[b * n..(b + 1) * n]
    }

    /// Copies the `h`×`w` window whose top-left corner is `(top, left)`.
    pub fn crop(&self, patch_id: String, top: usize, left: usize, h: usize, w: usize) -> Result<Self> {
        if top + h > self.height || left + w > self.width {
            return Err(arg_err!(
                "window {h}x{w} at ({top},{left}) exceeds {}x{}",
                self.height,
                self.width
            ));
        }
        let mut values = Vec::with_capacity(self.bands * h * w);
        for b in 0..self.bands {
            let plane = self.band(b);
            for y in top..top + h {
                values.extend_from_slice(&plane[y * self.width + left..y * self.width + left + w]);
            }
        }
        Self::new(patch_id, self.scene_id.clone(), self.bands, h, w, values)
    }

    /// Parts: (bands, height, width, values).
    pub fn into_parts(self) -> (usize, usize, usize, Vec<f32>) {
        (self.bands, self.height, self.width, self.values)
    }
}

/// Binary per-pixel cloud labels: 0 clear, 1 cloud.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CloudMask {
    height: usize,
    width: usize,
    values: Vec<u8>,
}

impl CloudMask {
    pub fn new(height: usize, width: usize, values: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(arg_err!("mask must be non-empty"));
        }
        if values.len() != height * width {
            return Err(arg_err!("{} values for a {height}x{width} mask", values.len()));
        }
        if let Some(v) = values.iter().find(|&&v| v > 1) {
            return Err(arg_err!("mask value {v} is not binary"));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn filled(height: usize, width: usize, value: bool) -> Self {
        Self {
            height,
            width,
            values: vec![value as u8; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut values = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                values.push(f(y, x) as u8);
            }
        }
        Self {
            height,
            width,
            values,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.values[y * self.width + x] != 0
    }

    pub fn cloud_count(&self) -> usize {
        self.values.iter().filter(|&&v| v != 0).count()
    }

    pub fn cloud_fraction(&self) -> f64 {
        self.cloud_count() as f64 / self.values.len() as f64
    }

    pub fn not(&self) -> Self {
        Self {
            height: self.height,
            width: self.width,
            values: self.values.iter().map(|&v| 1 - v).collect(),
        }
    }

    /// True when every cloud pixel of `self` is also cloud in `other`.
    pub fn is_subset_of(&self, other: &CloudMask) -> bool {
        self.shape() == other.shape()
            && self.values.iter().zip(&other.values).all(|(&a, &b)| a <= b)
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.height, self.width], TensorData::U8(self.values.clone()))
            .expect("mask dims are validated at construction")
    }

    /// Accepts a 2-D tensor of any dtype whose values are exactly 0 or 1.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let (h, w) = plane_dims(t)?;
        let values = match t.data() {
            TensorData::U8(v) => v.clone(),
            _ => t
                .to_f32()
                .into_iter()
                .map(|x| {
                    if x == 0.0 {
                        Ok(0)
                    } else if x == 1.0 {
                        Ok(1)
                    } else {
                        Err(arg_err!("mask value {x} is not binary"))
                    }
                })
                .collect::<Result<Vec<u8>>>()?,
        };
        Self::new(h, w, values)
    }
}

/// Per-pixel cloud probability in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap {
    height: usize,
    width: usize,
    values: Vec<f32>,
}

impl ProbabilityMap {
    pub fn new(height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(arg_err!("probability map must be non-empty"));
        }
        if values.len() != height * width {
            return Err(arg_err!("{} values for a {height}x{width} map", values.len()));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(arg_err!("probability {v} outside [0,1]"));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn constant(height: usize, width: usize, p: f32) -> Result<Self> {
        Self::new(height, width, vec![p; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.values[y * self.width + x]
    }

    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Result<Self> {
        if top + h > self.height || left + w > self.width {
            return Err(arg_err!("window exceeds map"));
        }
        let mut values = Vec::with_capacity(h * w);
        for y in top..top + h {
            values.extend_from_slice(&self.values[y * self.width + left..y * self.width + left + w]);
        }
        Ok(Self {
            height: h,
            width: w,
            values,
        })
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.height, self.width], TensorData::F32(self.values.clone()))
            .expect("map dims are validated at construction")
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let (h, w) = plane_dims(t)?;
        Self::new(h, w, t.to_f32())
    }
}

/// Interprets a tensor as one H×W plane: either 2-D, or 3-D with a unit
/// leading axis.
pub fn plane_dims(t: &Tensor) -> Result<(usize, usize)> {
    match t.dims() {
        [h, w] => Ok((*h, *w)),
        [1, h, w] => Ok((*h, *w)),
        d => Err(arg_err!("expected a single H×W plane, got dims {d:?}")),
    }
}
