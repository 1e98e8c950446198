//! Renders a sphere under many lights and prints the observation map of its
//! center pixel as ASCII art.

use psnet::projection::build_observation_map;
use psnet::render::{render_scene, sample_hemisphere_lights};
use psnet::SceneSpec;

pub fn main() {
    let lights = sample_hemisphere_lights(400, 80.0, 3).expect("valid cap");
    let sample = render_scene(&SceneSpec::sphere(33, 33).with_specular(0.5, 20.0), &lights).expect("valid scene");
    let pixel = 12 * 33 + 20;
    let n = sample.normals.get(12, 20).expect("on the sphere");
    let w = 24;
    let map = build_observation_map(&sample.pixel_observations(pixel), &sample.lights, w).expect("matching counts");
    let peak = map.values().iter().fold(0.0f64, |m, v| m.max(*v));
    println!("normal ({:.3}, {:.3}, {:.3}), {} of {} cells lit", n.x(), n.y(), n.z(),
        map.hit_count().iter().filter(|h| **h > 0).count(), w * w);
    let shades = [' ', '.', ':', '-', '=', '+', '*', '#', '%', '@'];
    for iv in 0..w {
        let row: String = (0..w)
            .map(|iu| shades[((map.get(iu, iv) / peak) * 9.0).round() as usize])
            .collect();
        println!("|{row}|");
    }
}
