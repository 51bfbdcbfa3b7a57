//! Z-buffered square point splats.

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use crate::camera::CameraView;

use super::Grid;

pub const NO_POINT: u32 = u32::MAX;

/// Splat size at the HD width of 2048 pixels.
pub const HD_POINT_SIZE: usize = 4;
pub const HD_WIDTH: usize = 2048;

/// Camera-depth interval, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthRange {
    pub near: f64,
    pub far: f64,
}

impl DepthRange {
    pub const fn new(near: f64, far: f64) -> Self {
        Self { near, far }
    }

    pub fn contains(&self, depth: f64) -> bool {
        depth >= self.near && depth <= self.far
    }

    pub fn is_valid(&self) -> bool {
        self.near > 0.0 && self.near < self.far
    }
}

/// Point size scaled linearly with image width: 4 px at 2048, at least 1.
pub fn point_size_for_width(width: usize) -> usize {
    ((HD_POINT_SIZE * width) as f64 / HD_WIDTH as f64).round().max(1.0) as usize
}

/// Offsets covered by a splat of `size` pixels around its centre pixel.
pub fn footprint(size: usize) -> std::ops::RangeInclusive<isize> {
    let lo = -((size / 2) as isize);
    lo..=lo + size as isize - 1
}

/// Per-pixel nearest point after splatting.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSplat {
    /// Camera depth of the winning point, `+inf` where empty.
    pub depth: Grid<f64>,
    /// Index of the winning point, [`NO_POINT`] where empty.
    pub winner: Grid<u32>,
}

impl PointSplat {
    /// Per-pixel attribute of the winning point.
    pub fn gather<T: Copy>(&self, values: &[T], empty: T) -> Grid<T> {
        self.winner.map(|w| if w == NO_POINT { empty } else { values[w as usize] })
    }
}

/// Stamps a `point_px` square around each visible point's pixel; the nearest
/// depth wins and equal depths keep the lower point index.
pub fn splat_points(points: &[Point3<f64>], view: &CameraView, point_px: usize, range: DepthRange) -> PointSplat {
    let (w, h) = (view.intrinsics.width as usize, view.intrinsics.height as usize);
    let mut depth = Grid::new(w, h, f64::INFINITY);
    let mut winner = Grid::new(w, h, NO_POINT);
    let size = point_px.max(1);
    for (i, p) in points.iter().enumerate() {
        let Some(proj) = view.project(p) else { continue };
        if !range.contains(proj.depth) {
            continue;
        }
        let (px, py) = proj.pixel();
        for dy in footprint(size) {
            let y = py as isize + dy;
            if y < 0 || y >= h as isize {
                continue;
            }
            for dx in footprint(size) {
                let x = px as isize + dx;
                if x < 0 || x >= w as isize {
                    continue;
                }
                let k = depth.index(x as usize, y as usize);
                if proj.depth < depth.data()[k] {
                    depth.data_mut()[k] = proj.depth;
                    winner.data_mut()[k] = i as u32;
                }
            }
        }
    }
    PointSplat { depth, winner }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{Intrinsics, PoseFamily};
    use crate::pose::Pose;

    fn view(w: u32, h: u32) -> CameraView {
        CameraView {
            view_id: 0,
            family: PoseFamily::Car,
            pose: Pose::identity(),
            intrinsics: Intrinsics::from_hfov(w, h, 90.0).unwrap(),
        }
    }

    const RANGE: DepthRange = DepthRange::new(0.1, 100.0);

    #[test]
    fn point_size_scaling() {
        assert_eq!(point_size_for_width(2048), 4);
        assert_eq!(point_size_for_width(1024), 2);
        assert_eq!(point_size_for_width(100), 1);
    }

    #[test]
    fn single_point_stamps_four_by_four() {
        let v = view(1024, 512);
        let s = splat_points(&[Point3::new(0.0, 0.0, 10.0)], &v, 4, RANGE);
        let covered: Vec<(usize, usize)> = (0..512)
            .flat_map(|y| (0..1024).map(move |x| (x, y)))
            .filter(|&(x, y)| s.winner.get(x, y) == 0)
            .collect();
        assert_eq!(covered.len(), 16);
        assert!(covered.iter().all(|&(x, y)| (510..=513).contains(&x) && (254..=257).contains(&y)));
        assert!(covered.iter().all(|&(x, y)| s.depth.get(x, y) == 10.0));
    }

    #[test]
    fn nearest_point_wins() {
        let v = view(64, 32);
        let pts = [Point3::new(0.0, 0.0, 10.0), Point3::new(0.0, 0.0, 5.0)];
        let s = splat_points(&pts, &v, 1, RANGE);
        assert_eq!(s.gather(&[1u8, 2u8], 255).get(32, 16), 2);
        assert_eq!(s.depth.get(32, 16), 5.0);
        assert_eq!(s.gather(&[1u8, 2u8], 255).get(0, 0), 255);
    }

    #[test]
    fn range_filters_points() {
        let v = view(64, 32);
        let s = splat_points(&[Point3::new(0.0, 0.0, 0.5)], &v, 1, DepthRange::new(1.0, 30.0));
        assert!(s.winner.data().iter().all(|&w| w == NO_POINT));
    }
}
