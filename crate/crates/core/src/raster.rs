//! Semantic grayscale rasters of a scene, written as binary PGM.
//!
//! Top-down views are orthographic over the ground square with +Y up the image.
//! Oblique views project every actor box onto a tilted plane and fill the convex
//! hull of its corners, far actors first.

use std::fs;
use std::io;
use std::path::Path;

use crate::geom::sin_cos_deg;
use crate::scene::{AssetCatalog, Category, SceneError, SceneGraph};
use crate::{Aabb, Vec3};

pub const DEFAULT_SIZE: usize = 512;
pub const BACKGROUND: u8 = 24;
/// Azimuths (deg) of the oblique views; together with the top-down view these make
/// the six-image tour.
pub const TOUR_AZIMUTHS: [f64; 5] = [45.0, 117.0, 189.0, 261.0, 333.0];
pub const TOUR_ELEVATION: f64 = 35.0;

pub fn gray_level(c: Category) -> u8 {
    match c {
        Category::Road => 64,
        Category::Prop => 96,
        Category::StreetFurniture => 128,
        Category::Vehicle => 160,
        Category::Tree => 192,
        Category::Container => 216,
        Category::Building => 250,
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl Raster {
    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        Self {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    pub fn get(&self, col: usize, row: usize) -> u8 {
        self.pixels[row * self.width + col]
    }

    pub fn count(&self, value: u8) -> usize {
        self.pixels.iter().filter(|p| **p == value).count()
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn write_pgm(&self, path: &Path) -> io::Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, self.to_pgm())
    }
}

fn actor_boxes(scene: &SceneGraph, catalog: &AssetCatalog) -> Result<Vec<(Category, Aabb, String)>, SceneError> {
    scene
        .actors()
        .map(|a| Ok((a.category, a.world_aabb(catalog)?, a.name.clone())))
        .collect()
}

/// Orthographic top-down view. A pixel takes an actor's gray level when its centre
/// lies in the half-open footprint `[min, max)`; taller tops are painted last.
pub fn render_top_down(scene: &SceneGraph, catalog: &AssetCatalog, size: usize) -> Result<Raster, SceneError> {
    let h = scene.ground_half_extent;
    let px = 2.0 * h / size as f64;
    let mut img = Raster::filled(size, size, BACKGROUND);
    let mut boxes = actor_boxes(scene, catalog)?;
    boxes.sort_by(|a, b| a.1.max.z.total_cmp(&b.1.max.z).then_with(|| a.2.cmp(&b.2)));
    for (cat, b, _) in &boxes {
        // pixel centre x_i = -h + (i + 0.5) px; first i with x_i >= min.x
        let col_lo = ((b.min.x + h) / px - 0.5).ceil().max(0.0) as usize;
        let col_hi = ((b.max.x + h) / px - 0.5).ceil().clamp(0.0, size as f64) as usize;
        // row r has centre y = h - (r + 0.5) px
        let row_lo = ((h - b.max.y) / px - 0.5).floor().max(-1.0);
        let row_hi = ((h - b.min.y) / px - 0.5).floor().min(size as f64 - 1.0);
        let (row_lo, row_hi) = ((row_lo + 1.0) as usize, row_hi);
        if row_hi < 0.0 {
            continue;
        }
        for row in row_lo..=row_hi as usize {
            for col in col_lo..col_hi {
                img.pixels[row * size + col] = gray_level(*cat);
            }
        }
    }
    Ok(img)
}

fn hull(mut pts: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0);
    let mut lower: Vec<(f64, f64)> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<(f64, f64)> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

fn inside_ccw(poly: &[(f64, f64)], p: (f64, f64)) -> bool {
    if poly.len() < 3 {
        return false;
    }
    (0..poly.len()).all(|i| {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0) >= 0.0
    })
}

/// Oblique orthographic view from `azimuth_deg` (camera bearing around the scene,
/// 0 = looking toward +X) at `elevation_deg` above the horizon.
pub fn render_oblique(
    scene: &SceneGraph,
    catalog: &AssetCatalog,
    size: usize,
    azimuth_deg: f64,
    elevation_deg: f64,
) -> Result<Raster, SceneError> {
    let (sa, ca) = sin_cos_deg(azimuth_deg);
    let (se, ce) = sin_cos_deg(elevation_deg);
    let right = Vec3::new(-sa, ca, 0.0);
    let fwd = Vec3::new(ca, sa, 0.0);
    let up = Vec3::new(-se * fwd.x, -se * fwd.y, ce);
    // toward the camera
    let back = Vec3::new(-ce * fwd.x, -ce * fwd.y, se);
    let dot = |a: Vec3, b: Vec3| a.x * b.x + a.y * b.y + a.z * b.z;
    let half_view = scene.ground_half_extent * std::f64::consts::SQRT_2;
    let px = 2.0 * half_view / size as f64;
    let mut img = Raster::filled(size, size, BACKGROUND);
    let mut boxes = actor_boxes(scene, catalog)?;
    boxes.sort_by(|a, b| {
        dot(a.1.center(), back)
            .total_cmp(&dot(b.1.center(), back))
            .then_with(|| a.2.cmp(&b.2))
    });
    for (cat, b, _) in &boxes {
        let mut pts = Vec::with_capacity(8);
        for &x in &[b.min.x, b.max.x] {
            for &y in &[b.min.y, b.max.y] {
                for &z in &[b.min.z, b.max.z] {
                    let p = Vec3::new(x, y, z);
                    pts.push((dot(p, right), dot(p, up)));
                }
            }
        }
        let poly = hull(pts);
        if poly.len() < 3 {
            continue;
        }
        let (mut u0, mut u1, mut v0, mut v1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for &(u, v) in &poly {
            u0 = u0.min(u);
            u1 = u1.max(u);
            v0 = v0.min(v);
            v1 = v1.max(v);
        }
        let col_lo = (((u0 + half_view) / px).floor().max(0.0)) as usize;
        let col_hi = (((u1 + half_view) / px).ceil().min(size as f64)) as usize;
        let row_lo = (((half_view - v1) / px).floor().max(0.0)) as usize;
        let row_hi = (((half_view - v0) / px).ceil().min(size as f64)) as usize;
        for row in row_lo..row_hi {
            let v = half_view - (row as f64 + 0.5) * px;
            for col in col_lo..col_hi {
                let u = -half_view + (col as f64 + 0.5) * px;
                if inside_ccw(&poly, (u, v)) {
                    img.pixels[row * size + col] = gray_level(*cat);
                }
            }
        }
    }
    Ok(img)
}

/// Top-down view followed by the oblique tour views.
pub fn render_tour(scene: &SceneGraph, catalog: &AssetCatalog, size: usize) -> Result<Vec<Raster>, SceneError> {
    let mut views = vec![render_top_down(scene, catalog, size)?];
    for az in TOUR_AZIMUTHS {
        views.push(render_oblique(scene, catalog, size, az, TOUR_ELEVATION)?);
    }
    Ok(views)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Transform;

    fn scene() -> SceneGraph {
        SceneGraph::with_ground(5120.0, "noon").unwrap()
    }

    #[test]
    fn empty_scene_is_uniform() {
        let cat = AssetCatalog::builtin();
        let img = render_top_down(&scene(), &cat, 64).unwrap();
        assert_eq!(img.count(BACKGROUND), 64 * 64);
        let pgm = img.to_pgm();
        assert!(pgm.starts_with(b"P5\n64 64\n255\n"));
        assert_eq!(pgm.len(), 13 + 64 * 64);
    }

    #[test]
    fn aligned_footprint_pixel_count() {
        let cat = AssetCatalog::builtin();
        let mut s = scene();
        let asset = cat.list(Some(Category::Building))[0];
        let e = asset.base_extent;
        s.spawn_actor(&cat, "b", &asset.asset_id, Transform::at(Vec3::new(0.0, 0.0, e.z))).unwrap();
        // 10 cm pixels
        let img = render_top_down(&s, &cat, 512).unwrap();
        let area_px = (2.0 * e.x / 10.0) * (2.0 * e.y / 10.0);
        let n = img.count(gray_level(Category::Building)) as f64;
        let perimeter_px = 2.0 * (2.0 * e.x + 2.0 * e.y) / 10.0;
        assert!((n - area_px).abs() <= perimeter_px / 2.0 + 1.0, "{n} vs {area_px}");
        assert_eq!(img.get(256, 256), gray_level(Category::Building));
        assert_eq!(img.get(0, 0), BACKGROUND);
    }

    #[test]
    fn tour_has_six_views_and_is_deterministic() {
        let cat = AssetCatalog::builtin();
        let mut s = scene();
        s.spawn_actor(&cat, "t", "tree_01", Transform::at(Vec3::new(300.0, -200.0, 400.0))).unwrap();
        let a = render_tour(&s, &cat, 96).unwrap();
        assert_eq!(a.len(), 6);
        assert_eq!(a, render_tour(&s, &cat, 96).unwrap());
        for v in &a[1..] {
            assert!(v.count(gray_level(Category::Tree)) > 0);
        }
    }
}
