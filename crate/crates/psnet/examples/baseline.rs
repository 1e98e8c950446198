//! Least-squares Lambertian photometric stereo on a glossy sphere, with and
//! without discarding dark observations.

use psnet::baseline::solve_map;
use psnet::eval::score;
use psnet::render::{render_scene, sample_hemisphere_lights};
use psnet::SceneSpec;

pub fn main() {
    let lights = sample_hemisphere_lights(96, 70.0, 4).expect("valid cap");
    for strength in [0.0, 0.5] {
        let spec = SceneSpec::sphere(64, 64).with_specular(strength, 20.0);
        let sample = render_scene(&spec, &lights).expect("valid scene");
        for threshold in [0.0, 0.1] {
            let pred = solve_map(&sample, threshold).expect("well-posed");
            let s = score("sphere", &pred, &sample.normals).expect("shared mask");
            println!("specular {strength:.1} threshold {threshold:.1}: mean error {:.3} deg over {} pixels", s.mean, s.pixels);
        }
    }
}
