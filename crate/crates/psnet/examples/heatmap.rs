//! Projects a normal onto the observation-map grid, encodes it as a Gaussian
//! heat-map and decodes it back.

use psnet::projection::{decode_heatmap, encode_heatmap, map_index, project_direction, DEFAULT_MAP_SIZE, DEFAULT_SIGMA};
use psnet::UnitVector3;

pub fn main() {
    let w = DEFAULT_MAP_SIZE;
    for deg in [0.0f64, 20.0, 45.0, 70.0] {
        let n = UnitVector3::from_angles(deg.to_radians(), 0.6);
        let c = project_direction(&n, w).expect("front-facing");
        let map = encode_heatmap(&n, w, DEFAULT_SIGMA).expect("valid size");
        let back = decode_heatmap(&map).expect("positive peak");
        let err = n.dot(&back).clamp(-1.0, 1.0).acos().to_degrees();
        println!(
            "inclination {deg:4.1}: map ({:.2}, {:.2}) cell {:?} peak {:?} decode error {err:.4} deg",
            c.u,
            c.v,
            map_index(&c, w),
            map.argmax()
        );
    }
}
