//! IDX file ingestion (the format canonical desk-scale image datasets ship
//! in): big-endian extents, unsigned-byte payloads.

use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};

const DTYPE_U8: u8 = 0x08;

struct IdxArray {
    dims: Vec<usize>,
    data: Vec<u8>,
}

fn read_idx(path: &Path) -> Result<IdxArray> {
    let bytes = std::fs::read(path)?;
    let display = path.display().to_string();
    if bytes.len() < 4 {
        return Err(Error::Truncated {
            msg: format!("{display}: shorter than the IDX magic"),
        });
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(Error::BadIdx {
            path: display,
            msg: format!("bad magic bytes {:02x}{:02x}", bytes[0], bytes[1]),
        });
    }
    if bytes[2] != DTYPE_U8 {
        return Err(Error::BadIdx {
            path: display,
            msg: format!(
                "unsupported dtype 0x{:02x} (only u8 is supported)",
                bytes[2]
            ),
        });
    }
    let ndim = bytes[3] as usize;
    let header = 4 + 4 * ndim;
    if bytes.len() < header {
        return Err(Error::Truncated {
            msg: format!(
                "{display}: header needs {header} bytes, file has {}",
                bytes.len()
            ),
        });
    }
    let mut dims = Vec::with_capacity(ndim);
    for d in 0..ndim {
        let off = 4 + 4 * d;
        dims.push(
            u32::from_be_bytes([bytes[off], bytes[off + 1], bytes[off + 2], bytes[off + 3]])
                as usize,
        );
    }
    let numel: usize = dims.iter().product();
    if bytes.len() < header + numel {
        return Err(Error::Truncated {
            msg: format!(
                "{display}: payload needs {numel} bytes, file has {}",
                bytes.len() - header
            ),
        });
    }
    Ok(IdxArray {
        dims,
        data: bytes[header..header + numel].to_vec(),
    })
}

/// Loads an IDX image/label pair into a dataset.
///
/// Pixels are scaled to `[0,1]` and then normalized per channel with the
/// given constants. 3-D image files are treated as single-channel.
pub fn load_idx(
    images_path: &Path,
    labels_path: &Path,
    classes: usize,
    mean: &[f32],
    std: &[f32],
) -> Result<Dataset> {
    let images = read_idx(images_path)?;
    let labels = read_idx(labels_path)?;

    let (n, c, h, w) = match images.dims.as_slice() {
        [n, h, w] => (*n, 1usize, *h, *w),
        [n, c, h, w] => (*n, *c, *h, *w),
        other => {
            return Err(Error::BadIdx {
                path: images_path.display().to_string(),
                msg: format!("expected 3 or 4 dimensions, got {other:?}"),
            })
        }
    };
    if labels.dims.len() != 1 {
        return Err(Error::BadIdx {
            path: labels_path.display().to_string(),
            msg: format!("labels must be 1-D, got {:?}", labels.dims),
        });
    }
    if labels.dims[0] != n {
        return Err(Error::BadIdx {
            path: labels_path.display().to_string(),
            msg: format!("{} labels for {} images", labels.dims[0], n),
        });
    }
    if mean.len() != c || std.len() != c {
        return Err(Error::BadConfig {
            msg: format!(
                "normalization constants cover {} channels, images have {c}",
                mean.len()
            ),
        });
    }

    let plane = h * w;
    let mut pixels = Vec::with_capacity(n * c * plane);
    for (i, &raw) in images.data.iter().enumerate() {
        let ch = (i / plane) % c;
        let scaled = raw as f32 / 255.0;
        pixels.push((scaled - mean[ch]) / std[ch]);
    }
    let label_values: Vec<usize> = labels.data.iter().map(|&v| v as usize).collect();
    let ds = Dataset {
        shape: [c, h, w],
        images: pixels,
        labels: label_values,
        classes,
    };
    ds.validate()?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_idx_images(dir: &Path, dims: &[u32], data: &[u8]) -> std::path::PathBuf {
        let mut bytes = vec![0u8, 0, DTYPE_U8, dims.len() as u8];
        for d in dims {
            bytes.extend_from_slice(&d.to_be_bytes());
        }
        bytes.extend_from_slice(data);
        let path = dir.join(format!("idx_{}d.bin", dims.len()));
        std::fs::write(&path, bytes).unwrap();
        path
    }

    #[test]
    fn handcrafted_four_sample_fixture_loads() {
        let dir = tempfile::tempdir().unwrap();
        let images = write_idx_images(
            dir.path(),
            &[4, 2, 2],
            &[
                0, 51, 102, 153, 204, 255, 0, 51, 102, 153, 204, 255, 0, 51, 102, 153,
            ],
        );
        let labels = write_idx_images(dir.path(), &[4], &[0, 1, 1, 0]);
        let ds = load_idx(&images, &labels, 2, &[0.0], &[1.0]).unwrap();
        assert_eq!(ds.shape, [1, 2, 2]);
        assert_eq!(ds.len(), 4);
        assert!((ds.images[1] - 0.2).abs() < 1e-6);
        assert_eq!(ds.labels, vec![0, 1, 1, 0]);
    }

    #[test]
    fn truncated_file_reports_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let images = write_idx_images(dir.path(), &[4, 2, 2], &[0; 10]); // needs 16
        let labels = write_idx_images(dir.path(), &[4], &[0, 1, 1, 0]);
        let err = load_idx(&images, &labels, 2, &[0.0], &[1.0]).unwrap_err();
        assert!(matches!(err, Error::Truncated { .. }), "{err}");
    }

    #[test]
    fn out_of_range_label_is_a_validation_error() {
        let dir = tempfile::tempdir().unwrap();
        let images = write_idx_images(dir.path(), &[2, 2, 2], &[0; 8]);
        let labels = write_idx_images(dir.path(), &[2], &[0, 7]);
        let err = load_idx(&images, &labels, 2, &[0.0], &[1.0]).unwrap_err();
        assert!(matches!(
            err,
            Error::LabelOutOfRange {
                label: 7,
                classes: 2
            }
        ));
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.idx");
        std::fs::write(&path, [1u8, 2, 3, 4, 5, 6, 7, 8]).unwrap();
        let labels = write_idx_images(dir.path(), &[1], &[0]);
        let err = load_idx(&path, &labels, 2, &[0.0], &[1.0]).unwrap_err();
        assert!(matches!(err, Error::BadIdx { .. }));
    }
}
