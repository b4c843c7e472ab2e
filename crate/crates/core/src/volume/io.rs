use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array3;
use serde::{Deserialize, Serialize};
use tiff::decoder::{Decoder, DecodingResult, Limits};
use tiff::encoder::{colortype, TiffEncoder};
use tiff::ColorType;

use super::{IntensityDomain, Volume, VoxelSize};
use crate::error::{Error, Result};

/// Metadata file written next to every saved volume.
///
/// For raw little-endian `f32` stacks it is the only source of the grid
/// dimensions; for TIFF stacks it carries the voxel size and domain tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    /// `(z, y, x)` voxel counts.
    pub dims: [usize; 3],
    /// `(z, y, x)` voxel size in µm.
    pub voxel_size: VoxelSize,
    pub dtype: String,
    pub byte_order: String,
    #[serde(default = "default_domain")]
    pub intensity_domain: IntensityDomain,
}

fn default_domain() -> IntensityDomain {
    IntensityDomain::Raw
}

/// `volume.tif` -> `volume.tif.toml`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".toml");
    PathBuf::from(s)
}

fn read_sidecar(path: &Path) -> Result<Option<Sidecar>> {
    let p = sidecar_path(path);
    if !p.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&p)?;
    Ok(Some(toml::from_str(&text)?))
}

fn is_tiff(path: &Path) -> bool {
    matches!(
        path.extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .as_deref(),
        Some("tif") | Some("tiff")
    )
}

/// Loads a multi-page grayscale TIFF or a raw `f32` stack with sidecar.
///
/// An explicit `voxel_size` overrides the sidecar; one of the two must be
/// present. Values are converted to `f32` without rescaling.
pub fn load_volume(path: &Path, voxel_size: Option<VoxelSize>) -> Result<Volume> {
    let sidecar = read_sidecar(path)?;
    let voxel = voxel_size
        .or(sidecar.as_ref().map(|s| s.voxel_size))
        .ok_or_else(|| {
            Error::invalid(format!(
                "no voxel size given and no sidecar found for {}",
                path.display()
            ))
        })?;
    let domain = sidecar
        .as_ref()
        .map(|s| s.intensity_domain)
        .unwrap_or(IntensityDomain::Raw);

    let data = if is_tiff(path) {
        let data = read_tiff(path)?;
        if let Some(sc) = &sidecar {
            let d = data.shape();
            if [d[0], d[1], d[2]] != sc.dims {
                return Err(Error::format(format!(
                    "TIFF dimensions {:?} disagree with sidecar {:?}",
                    d, sc.dims
                )));
            }
        }
        data
    } else {
        let sc = sidecar.ok_or_else(|| {
            Error::format(format!(
                "raw volume {} requires a sidecar file",
                path.display()
            ))
        })?;
        read_raw(path, &sc)?
    };
    Volume::new(data, voxel, domain)
}

fn read_tiff(path: &Path) -> Result<Array3<f32>> {
    let file = BufReader::new(File::open(path)?);
    let mut decoder = Decoder::new(file)?.with_limits(Limits::unlimited());
    let mut pages: Vec<f32> = Vec::new();
    let mut dims: Option<(u32, u32)> = None;
    let mut n_pages = 0usize;
    loop {
        match decoder.colortype()? {
            ColorType::Gray(8) | ColorType::Gray(16) | ColorType::Gray(32) => {}
            other => {
                return Err(Error::format(format!(
                    "unsupported TIFF color type {other:?}; only single-channel grayscale is accepted"
                )))
            }
        }
        let (w, h) = decoder.dimensions()?;
        match dims {
            None => dims = Some((w, h)),
            Some(d) if d != (w, h) => {
                return Err(Error::format(format!(
                    "page {n_pages} has size {w}x{h}, expected {}x{}",
                    d.0, d.1
                )))
            }
            _ => {}
        }
        match decoder.read_image()? {
            DecodingResult::U8(buf) => pages.extend(buf.into_iter().map(f32::from)),
            DecodingResult::U16(buf) => pages.extend(buf.into_iter().map(f32::from)),
            DecodingResult::F32(buf) => pages.extend(buf),
            _ => return Err(Error::format("unsupported TIFF sample format")),
        }
        n_pages += 1;
        if !decoder.more_images() {
            break;
        }
        decoder.next_image()?;
    }
    let (w, h) = dims.ok_or_else(|| Error::format("TIFF contains no pages"))?;
    Array3::from_shape_vec((n_pages, h as usize, w as usize), pages)
        .map_err(|e| Error::format(e.to_string()))
}

fn read_raw(path: &Path, sc: &Sidecar) -> Result<Array3<f32>> {
    if sc.dtype != "f32" || sc.byte_order != "little" {
        return Err(Error::format(format!(
            "raw volumes must be little-endian f32, sidecar says {} / {}",
            sc.dtype, sc.byte_order
        )));
    }
    let n: usize = sc.dims.iter().product();
    let mut bytes = Vec::with_capacity(n * 4);
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    if bytes.len() != n * 4 {
        return Err(Error::format(format!(
            "raw file holds {} bytes, sidecar dims {:?} need {}",
            bytes.len(),
            sc.dims,
            n * 4
        )));
    }
    let values = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Array3::from_shape_vec(sc.dims, values).map_err(|e| Error::format(e.to_string()))
}

/// Writes `v` as a 32-bit float multi-page TIFF (or a raw `f32` stack when
/// the extension is not `.tif`/`.tiff`) plus a TOML sidecar.
pub fn save_volume(v: &Volume, path: &Path) -> Result<()> {
    if path.as_os_str().is_empty() {
        return Err(Error::invalid("empty output path"));
    }
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let [nz, ny, nx] = v.dims();
    if is_tiff(path) {
        let file = BufWriter::new(File::create(path)?);
        // Classic TIFF offsets are 32-bit.
        let bytes = (v.len() as u64) * 4;
        if bytes > 3_900_000_000 {
            let mut enc = TiffEncoder::new_big(file)?;
            for page in v.data().outer_iter() {
                let page = page.as_standard_layout();
                enc.write_image::<colortype::Gray32Float>(
                    nx as u32,
                    ny as u32,
                    page.as_slice().expect("standard layout"),
                )?;
            }
        } else {
            let mut enc = TiffEncoder::new(file)?;
            for page in v.data().outer_iter() {
                let page = page.as_standard_layout();
                enc.write_image::<colortype::Gray32Float>(
                    nx as u32,
                    ny as u32,
                    page.as_slice().expect("standard layout"),
                )?;
            }
        }
    } else {
        let mut w = BufWriter::new(File::create(path)?);
        for &x in v.data().iter() {
            w.write_all(&x.to_le_bytes())?;
        }
        w.flush()?;
    }
    let sc = Sidecar {
        dims: [nz, ny, nx],
        voxel_size: v.voxel_size(),
        dtype: "f32".into(),
        byte_order: "little".into(),
        intensity_domain: v.domain(),
    };
    fs::write(sidecar_path(path), toml::to_string(&sc)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tiff::encoder::colortype::{Gray16, RGB8};

    #[test]
    fn loads_zero_tiff() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("z.tif");
        let mut enc = TiffEncoder::new(File::create(&p).unwrap()).unwrap();
        for _ in 0..3 {
            enc.write_image::<colortype::Gray8>(2, 2, &[0u8; 4]).unwrap();
        }
        drop(enc);
        let v = load_volume(&p, Some([1.0; 3])).unwrap();
        assert_eq!(v.dims(), [3, 2, 2]);
        assert!(v.data().iter().all(|&x| x == 0.0));
        assert_eq!(v.domain(), IntensityDomain::Raw);
    }

    #[test]
    fn sixteen_bit_values_are_not_rescaled() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("u16.tif");
        let mut enc = TiffEncoder::new(File::create(&p).unwrap()).unwrap();
        enc.write_image::<Gray16>(1, 1, &[65535u16]).unwrap();
        drop(enc);
        let v = load_volume(&p, Some([2.0, 1.0, 1.0])).unwrap();
        assert_eq!(v.data()[[0, 0, 0]], 65535.0);
    }

    #[test]
    fn rejects_multichannel() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rgb.tif");
        let mut enc = TiffEncoder::new(File::create(&p).unwrap()).unwrap();
        enc.write_image::<RGB8>(1, 1, &[1u8, 2, 3]).unwrap();
        drop(enc);
        assert!(matches!(
            load_volume(&p, Some([1.0; 3])),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn raw_dimension_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.raw");
        let v = Volume::raw(Array3::from_elem((2, 2, 2), 1.5), [1.0; 3]).unwrap();
        save_volume(&v, &p).unwrap();
        assert_eq!(load_volume(&p, None).unwrap(), v);
        let mut sc: Sidecar = toml::from_str(&fs::read_to_string(sidecar_path(&p)).unwrap()).unwrap();
        sc.dims = [3, 2, 2];
        fs::write(sidecar_path(&p), toml::to_string(&sc).unwrap()).unwrap();
        assert!(load_volume(&p, None).is_err());
    }

    #[test]
    fn unreadable_and_empty_paths() {
        assert!(load_volume(Path::new("/nonexistent/v.tif"), Some([1.0; 3])).is_err());
        let v = Volume::zeros([1, 1, 1], [1.0; 3]).unwrap();
        assert!(save_volume(&v, Path::new("")).is_err());
    }

    #[test]
    fn minimal_volume_single_page() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("one.tif");
        let v = Volume::raw(Array3::from_elem((1, 1, 1), 7.25), [0.5; 3]).unwrap();
        save_volume(&v, &p).unwrap();
        let mut dec = Decoder::new(File::open(&p).unwrap()).unwrap();
        assert_eq!(dec.dimensions().unwrap(), (1, 1));
        assert!(!dec.more_images());
        assert_eq!(load_volume(&p, None).unwrap(), v);
    }
}
