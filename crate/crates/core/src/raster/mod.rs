//! Tensor I/O, rasters and masks, patch grids, manifests and overlays.

mod grid;
mod image;
mod manifest;
mod overlay;
mod tensor;

use std::io::Write;
use std::path::Path;

pub use grid::{
    blend_weights, gaussian_weights, split_map, split_scene, stitch_scene, Blend, PatchGrid,
    GAUSSIAN_FLOOR,
};
pub use image::{plane_dims, CloudMask, MultiBandPatch, ProbabilityMap, MIN_PATCH_EDGE};
pub use manifest::{load_mask, load_patch, Manifest, ManifestRecord};
pub use overlay::{overlay_image, paint_mask, render_overlay, stretch_composite, RgbImage};
pub use tensor::{load_tensor, save_tensor, DType, Tensor, TensorData};

use crate::error::{Error, Result};

/// Write to a temporary sibling, fsync, then rename over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::Argument(format!("{} has no file name", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = std::fs::remove_file(&tmp);
        return Err(Error::io(format!("writing {}", path.display()), e));
    }
    Ok(())
}

pub fn save_mask(mask: &CloudMask, path: &Path) -> Result<()> {
    save_tensor(&mask.to_tensor(), path)
}

pub fn load_mask_file(path: &Path) -> Result<CloudMask> {
    CloudMask::from_tensor(&load_tensor(path)?)
}

pub fn save_probability(map: &ProbabilityMap, path: &Path) -> Result<()> {
    save_tensor(&map.to_tensor(), path)
}

pub fn load_probability(path: &Path) -> Result<ProbabilityMap> {
    ProbabilityMap::from_tensor(&load_tensor(path)?)
}
