//! Dataset directories and normal-map files.
//!
//! A dataset directory holds
//!
//! ```text
//! filenames.txt          one image path per line, relative to the directory
//! light_directions.txt   one "x y z" per line
//! light_intensities.txt  one "L" or "R G B" per line
//! mask.png               nonzero where the object is
//! normal_gt.pfm          optional ground truth, see `write_normal_map`
//! ```
//!
//! Directions use x right, y up, z toward the camera; image row 0 is the top.

use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, Luma};

use crate::error::{Error, Result};
use crate::normals::NormalMap;
use crate::projection::{Field, LightSource, UnitVector3};
use crate::render::RenderedSample;

pub const FILENAMES: &str = "filenames.txt";
pub const LIGHT_DIRECTIONS: &str = "light_directions.txt";
pub const LIGHT_INTENSITIES: &str = "light_intensities.txt";
pub const MASK: &str = "mask.png";
pub const NORMAL_GT: &str = "normal_gt.pfm";

/// Directions further than this from unit length are reported when loaded.
const DIRECTION_TOLERANCE: f64 = 1e-3;

/// Per-object corrections applied while loading.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReadOptions {
    /// Images (with their lights) skipped at the start of the list.
    pub drop_first: usize,
    /// Mirror the ground truth upside down (rows reversed, `y` negated).
    pub flip_normals: bool,
}

impl ReadOptions {
    /// Corrections used for the named DiLiGenT object.
    pub fn for_object(name: &str) -> Self {
        let lower = name.to_ascii_lowercase();
        ReadOptions {
            drop_first: if lower.starts_with("bear") { 20 } else { 0 },
            flip_normals: lower.starts_with("harvest"),
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

fn parse_numbers(path: &Path, line_no: usize, line: &str) -> Result<Vec<f64>> {
    line.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::format(path, format!("line {line_no}: bad number {t:?}")))
        })
        .collect()
}

pub fn read_light_directions(path: &Path) -> Result<Vec<UnitVector3>> {
    let text = read_text(path)?;
    data_lines(&text)
        .map(|(n, line)| {
            let v = parse_numbers(path, n, line)?;
            if v.len() != 3 {
                return Err(Error::format(path, format!("line {n}: expected 3 values, got {}", v.len())));
            }
            let len = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            let d = UnitVector3::new_normalize(v[0], v[1], v[2])
                .ok_or_else(|| Error::format(path, format!("line {n}: zero-length direction")))?;
            if d.z() < 0.0 {
                return Err(Error::BehindCamera(d.to_array()));
            }
            if (len - 1.0).abs() > DIRECTION_TOLERANCE {
                log::warn!("{}: line {n}: direction length {len}, normalized", path.display());
            }
            Ok(d)
        })
        .collect()
}

/// One scalar per line; three per-channel values are averaged.
pub fn read_light_intensities(path: &Path) -> Result<Vec<f64>> {
    let text = read_text(path)?;
    data_lines(&text)
        .map(|(n, line)| {
            let v = parse_numbers(path, n, line)?;
            let l = match v.len() {
                1 => v[0],
                3 => (v[0] + v[1] + v[2]) / 3.0,
                k => return Err(Error::format(path, format!("line {n}: expected 1 or 3 values, got {k}"))),
            };
            if !(l > 0.0) {
                return Err(Error::format(path, format!("line {n}: intensity must be positive, got {l}")));
            }
            Ok(l)
        })
        .collect()
}

fn open_image(path: &Path) -> Result<DynamicImage> {
    image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Image {
            path: path.to_path_buf(),
            source: other,
        },
    })
}

/// Linear intensities in `[0, 1]`; color is collapsed to Rec. 709 luminance.
pub fn read_intensity_image(path: &Path) -> Result<Field> {
    let img = open_image(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f64> = if img.color().has_color() {
        img.to_rgb32f()
            .pixels()
            .map(|p| 0.2126 * p[0] as f64 + 0.7152 * p[1] as f64 + 0.0722 * p[2] as f64)
            .collect()
    } else {
        img.to_luma32f().pixels().map(|p| p[0] as f64).collect()
    };
    Field::from_vec(h, w, 1, data)
}

pub fn read_mask(path: &Path) -> Result<(usize, usize, Vec<bool>)> {
    let img = open_image(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mask = img.to_luma16().pixels().map(|p| p[0] > 0).collect();
    Ok((h, w, mask))
}

fn count_check(what: &'static str, left: usize, right: usize) -> Result<()> {
    if left != right {
        return Err(Error::CountMismatch { what, left, right });
    }
    Ok(())
}

/// Loads a dataset directory. Without ground truth every masked pixel gets
/// the zenith as a placeholder normal; [`has_ground_truth`] tells the cases
/// apart.
pub fn read_dataset(root: &Path, options: &ReadOptions) -> Result<RenderedSample> {
    let names_path = root.join(FILENAMES);
    let names: Vec<String> = data_lines(&read_text(&names_path)?).map(|(_, l)| l.to_string()).collect();
    let directions = read_light_directions(&root.join(LIGHT_DIRECTIONS))?;
    let intensities = read_light_intensities(&root.join(LIGHT_INTENSITIES))?;
    count_check("images vs light directions", names.len(), directions.len())?;
    count_check("images vs light intensities", names.len(), intensities.len())?;
    if options.drop_first >= names.len() {
        return Err(Error::InvalidConfig(format!(
            "dropping {} of {} images leaves none",
            options.drop_first,
            names.len()
        )));
    }
    let (h, w, mask) = read_mask(&root.join(MASK))?;
    let mut images = Vec::with_capacity(names.len() - options.drop_first);
    let mut lights = Vec::with_capacity(images.capacity());
    for ((name, d), l) in names.iter().zip(&directions).zip(&intensities).skip(options.drop_first) {
        let path = root.join(name);
        let img = read_intensity_image(&path)?;
        if img.height() != h || img.width() != w {
            return Err(Error::ShapeMismatch(format!(
                "{}: {}x{} image vs {h}x{w} mask",
                path.display(),
                img.height(),
                img.width()
            )));
        }
        images.push(img);
        lights.push(LightSource::new(*d, *l)?);
    }
    let gt_path = root.join(NORMAL_GT);
    let mut normals = if gt_path.exists() {
        let gt = read_normal_map(&gt_path)?;
        if gt.height() != h || gt.width() != w {
            return Err(Error::ShapeMismatch(format!(
                "ground truth {}x{} vs mask {h}x{w}",
                gt.height(),
                gt.width()
            )));
        }
        if options.flip_normals {
            flip_vertically(&gt)
        } else {
            gt
        }
    } else {
        let v = mask.iter().map(|m| if *m { [0.0, 0.0, 1.0] } else { [0.0; 3] }).collect();
        NormalMap::from_vectors(h, w, v)?
    };
    normals.restrict_to(&mask);
    RenderedSample::new(images, lights, normals)
}

pub fn has_ground_truth(root: &Path) -> bool {
    root.join(NORMAL_GT).exists()
}

/// Upside-down mirror of a normal map, vectors included.
pub fn flip_vertically(map: &NormalMap) -> NormalMap {
    let (h, w) = (map.height(), map.width());
    let mut out = NormalMap::empty(h, w);
    for r in 0..h {
        for c in 0..w {
            if let Some(n) = map.get(h - 1 - r, c) {
                let v = n.to_array();
                out.set(r, c, UnitVector3::new_normalize(v[0], -v[1], v[2]).expect("unit"));
            }
        }
    }
    out
}

fn write_lines(path: &Path, lines: impl Iterator<Item = String>) -> Result<()> {
    let mut s = String::new();
    for l in lines {
        s.push_str(&l);
        s.push('\n');
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

fn save_png(path: &Path, img: DynamicImage) -> Result<()> {
    img.save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Writes `sample` as a dataset directory with 16-bit images. Intensities
/// are divided by one global scale so that the brightest value maps to full
/// range; the light intensities are divided by the same scale, which leaves
/// every ratio `I / L` unchanged.
pub fn write_dataset(root: &Path, sample: &RenderedSample) -> Result<()> {
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let (h, w) = (sample.height(), sample.width());
    let peak = sample
        .images
        .iter()
        .flat_map(|i| i.data().iter().copied())
        .fold(0.0, f64::max);
    let scale = if peak > 0.0 { peak } else { 1.0 };
    let digits = sample.images.len().to_string().len().max(3);
    let mut names = Vec::with_capacity(sample.images.len());
    for (j, img) in sample.images.iter().enumerate() {
        let name = format!("{:0digits$}.png", j + 1);
        let buf = ImageBuffer::<Luma<u16>, Vec<u16>>::from_fn(w as u32, h as u32, |x, y| {
            let v = img.get(y as usize, x as usize, 0) / scale;
            Luma([(v.clamp(0.0, 1.0) * 65535.0).round() as u16])
        });
        save_png(&root.join(&name), DynamicImage::ImageLuma16(buf))?;
        names.push(name);
    }
    write_lines(&root.join(FILENAMES), names.into_iter())?;
    write_lines(
        &root.join(LIGHT_DIRECTIONS),
        sample.lights.iter().map(|l| {
            let d = l.direction();
            format!("{:e} {:e} {:e}", d.x(), d.y(), d.z())
        }),
    )?;
    write_lines(
        &root.join(LIGHT_INTENSITIES),
        sample.lights.iter().map(|l| format!("{:e}", l.intensity() / scale)),
    )?;
    let mask = ImageBuffer::<Luma<u8>, Vec<u8>>::from_fn(w as u32, h as u32, |x, y| {
        Luma([if sample.mask()[y as usize * w + x as usize] { 255 } else { 0 }])
    });
    save_png(&root.join(MASK), DynamicImage::ImageLuma8(mask))?;
    write_normal_map(&root.join(NORMAL_GT), &sample.normals)
}

/// Float map: the header line `PF <width> <height> -1` (negative scale
/// meaning little-endian), then `x y z` as `f32` per pixel, rows top to
/// bottom. Masked-out pixels are zero vectors.
pub fn encode_normal_map(map: &NormalMap) -> Vec<u8> {
    let mut out = format!("PF {} {} -1\n", map.width(), map.height()).into_bytes();
    for v in map.vectors() {
        for c in v {
            out.extend_from_slice(&(*c as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_normal_map(bytes: &[u8]) -> std::result::Result<NormalMap, String> {
    let end = bytes.iter().position(|b| *b == b'\n').ok_or("missing header line")?;
    let header = std::str::from_utf8(&bytes[..end]).map_err(|_| "header is not text")?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 4 || fields[0] != "PF" {
        return Err(format!("bad header {header:?}"));
    }
    let dim = |s: &str| s.parse::<usize>().map_err(|_| format!("bad dimension {s:?}"));
    let (w, h) = (dim(fields[1])?, dim(fields[2])?);
    let scale: f64 = fields[3].parse().map_err(|_| format!("bad scale {:?}", fields[3]))?;
    if scale >= 0.0 {
        return Err("only little-endian maps (negative scale) are supported".into());
    }
    let payload = &bytes[end + 1..];
    let expected = w.checked_mul(h).and_then(|n| n.checked_mul(12)).ok_or("dimensions overflow")?;
    if payload.len() != expected {
        return Err(format!("payload has {} bytes, header implies {expected}", payload.len()));
    }
    let vectors = payload
        .chunks_exact(12)
        .map(|c| {
            let f = |i: usize| f32::from_le_bytes([c[i], c[i + 1], c[i + 2], c[i + 3]]) as f64;
            [f(0), f(4), f(8)]
        })
        .collect();
    NormalMap::from_stored(h, w, vectors).map_err(|e| e.to_string())
}

pub fn write_normal_map(path: &Path, map: &NormalMap) -> Result<()> {
    std::fs::write(path, encode_normal_map(map)).map_err(|e| Error::io(path, e))
}

pub fn read_normal_map(path: &Path) -> Result<NormalMap> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_normal_map(&bytes).map_err(|reason| Error::format(path, reason))
}

/// Subdirectories of `root` that contain a light direction file, sorted.
pub fn dataset_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let path = entry.map_err(|e| Error::io(root, e))?.path();
        if path.join(LIGHT_DIRECTIONS).is_file() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::{render_scene, sample_hemisphere_lights, SceneSpec};
    use proptest::prelude::*;

    fn f32_map(h: usize, w: usize, seed: u64) -> NormalMap {
        let v = (0..h * w)
            .map(|i| {
                if (i as u64 + seed) % 5 == 0 {
                    return [0.0; 3];
                }
                let n = UnitVector3::from_angles(((i as u64 * 7 + seed) % 80) as f64 * 0.01, i as f64);
                n.to_array()
            })
            .collect();
        decode_normal_map(&encode_normal_map(&NormalMap::from_vectors(h, w, v).unwrap())).unwrap()
    }

    proptest! {
        #[test]
        fn normal_map_round_trip_is_bit_exact(h in 1usize..8, w in 1usize..8, seed in 0u64..100) {
            let m = f32_map(h, w, seed);
            let back = decode_normal_map(&encode_normal_map(&m)).unwrap();
            prop_assert_eq!(&back, &m);
            prop_assert_eq!(encode_normal_map(&back), encode_normal_map(&m));
        }
    }

    #[test]
    fn zero_vectors_are_masked() {
        let m = f32_map(3, 3, 0);
        assert!(!m.is_valid(0, 0));
        assert_eq!(m.valid_count(), 7);
    }

    #[test]
    fn malformed_normal_maps_are_rejected() {
        let bytes = encode_normal_map(&f32_map(2, 3, 1));
        assert!(decode_normal_map(&bytes[..bytes.len() - 4]).is_err());
        let mut wrong = b"PF 4 3 -1\n".to_vec();
        wrong.extend_from_slice(&bytes[10..]);
        assert!(decode_normal_map(&wrong).is_err());
        assert!(decode_normal_map(b"P6 2 2 255\n").is_err());
        assert!(decode_normal_map(b"PF 1 1 -1").is_err());
        let mut not_unit = b"PF 1 1 -1\n".to_vec();
        for v in [0.5f32, 0.0, 0.0] {
            not_unit.extend_from_slice(&v.to_le_bytes());
        }
        assert!(decode_normal_map(&not_unit).is_err());
    }

    fn sample() -> RenderedSample {
        let lights = sample_hemisphere_lights(6, 60.0, 2).unwrap();
        render_scene(&SceneSpec::sphere(12, 10), &lights).unwrap()
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = sample();
        write_dataset(dir.path(), &s).unwrap();
        assert!(has_ground_truth(dir.path()));
        let back = read_dataset(dir.path(), &ReadOptions::default()).unwrap();
        assert_eq!(back.images.len(), 6);
        assert_eq!(back.mask(), s.mask());
        for (a, b) in back.lights.iter().zip(&s.lights) {
            assert!(a.direction().dot(&b.direction()) > 1.0 - 1e-12);
        }
        // Ratios I / L survive the global rescaling up to 16-bit quantization.
        let scale = s.lights[0].intensity() / back.lights[0].intensity();
        for (a, b) in back.images.iter().zip(&s.images) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x * scale - y).abs() <= scale / 65535.0);
            }
        }
        assert_eq!(read_dataset(dir.path(), &ReadOptions::default()).unwrap(), back);

        let dropped = read_dataset(
            dir.path(),
            &ReadOptions {
                drop_first: 2,
                ..ReadOptions::default()
            },
        )
        .unwrap();
        assert_eq!(dropped.images.len(), 4);
        assert_eq!(dropped.images[0], back.images[2]);
    }

    #[test]
    fn mismatched_counts_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &sample()).unwrap();
        let p = dir.path().join(LIGHT_INTENSITIES);
        let text = std::fs::read_to_string(&p).unwrap();
        std::fs::write(&p, text.lines().skip(1).collect::<Vec<_>>().join("\n")).unwrap();
        assert!(matches!(
            read_dataset(dir.path(), &ReadOptions::default()),
            Err(Error::CountMismatch { .. })
        ));
    }

    #[test]
    fn malformed_light_files_are_typed_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("l.txt");
        std::fs::write(&p, "0 0 1\n0 0\n").unwrap();
        assert!(matches!(read_light_directions(&p), Err(Error::Format { .. })));
        std::fs::write(&p, "0 0 0\n").unwrap();
        assert!(read_light_directions(&p).is_err());
        std::fs::write(&p, "0 0 2\n").unwrap();
        assert_eq!(read_light_directions(&p).unwrap()[0], UnitVector3::ZENITH);
        std::fs::write(&p, "1 2 3\n0.5\n").unwrap();
        assert_eq!(read_light_intensities(&p).unwrap(), vec![2.0, 0.5]);
        std::fs::write(&p, "1 2\n").unwrap();
        assert!(read_light_intensities(&p).is_err());
        assert!(matches!(read_light_intensities(&dir.path().join("missing")), Err(Error::Io { .. })));
    }

    #[test]
    fn object_fixes() {
        assert_eq!(ReadOptions::for_object("bearPNG").drop_first, 20);
        assert!(ReadOptions::for_object("harvestPNG").flip_normals);
        assert_eq!(ReadOptions::for_object("ballPNG"), ReadOptions::default());
        let m = NormalMap::from_vectors(2, 1, vec![[0.0, 0.6, 0.8], [0.6, 0.0, 0.8]]).unwrap();
        let f = flip_vertically(&m);
        assert_eq!(f.get(0, 0).unwrap().to_array(), [0.6, 0.0, 0.8]);
        assert!((f.get(1, 0).unwrap().y() + 0.6).abs() < 1e-15);
    }
}
