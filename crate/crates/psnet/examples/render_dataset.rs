//! Renders a bumpy scene, writes it in the on-disk dataset layout and reads
//! it back.

use psnet::io::{read_dataset, write_dataset, ReadOptions};
use psnet::render::{render_scene, sample_hemisphere_lights, Surface};
use psnet::SceneSpec;

pub fn main() {
    let lights = sample_hemisphere_lights(32, 60.0, 11).expect("valid cap");
    let spec = SceneSpec::new(Surface::random_bumps(48, 64, 6, 11), 48, 64)
        .with_specular(0.4, 20.0)
        .with_noise(0.005, 11);
    let sample = render_scene(&spec, &lights).expect("valid scene");

    let dir = tempfile::tempdir().expect("temp dir");
    write_dataset(dir.path(), &sample).expect("writable");
    let mut files: Vec<_> = std::fs::read_dir(dir.path())
        .expect("listing")
        .map(|e| e.expect("entry").file_name().to_string_lossy().into_owned())
        .collect();
    files.sort();
    println!("wrote {} files: {} ... {}", files.len(), files[0], files[files.len() - 1]);

    let back = read_dataset(dir.path(), &ReadOptions::default()).expect("readable");
    // The writer rescales images and intensities by the same factor, so
    // compare radiance per unit light intensity.
    let per_unit = |s: &psnet::RenderedSample| -> Vec<f64> {
        s.images
            .iter()
            .zip(&s.lights)
            .flat_map(|(img, l)| img.data().iter().map(move |v| v / l.intensity()))
            .collect()
    };
    let (a, b) = (per_unit(&sample), per_unit(&back));
    let worst = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0f64, f64::max);
    let peak = a.iter().fold(0.0f64, |m, v| m.max(*v));
    println!("{} lights, {}x{} pixels, 16-bit quantization error {:.2e} of peak", back.lights.len(), back.height(), back.width(), worst / peak);
}
