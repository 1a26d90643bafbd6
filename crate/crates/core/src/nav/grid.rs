use serde::{Deserialize, Serialize};

use super::NavError;
use crate::scene::{AssetCatalog, SceneGraph};
use crate::Vec3;

/// Default cell edge, cm; one forward step.
pub const DEFAULT_CELL_SIZE: f64 = 25.0;

/// Column/row index of a grid cell.
pub type Cell = (usize, usize);

/// Walkability bitmap over an axis-aligned window of the ground plane.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OccupancyGrid {
    pub cell_size: f64,
    /// World position of the (0, 0) cell's minimum corner.
    pub origin: Vec3,
    pub width: usize,
    pub height: usize,
    occupied: Vec<bool>,
}

impl OccupancyGrid {
    pub fn free(origin: Vec3, cell_size: f64, width: usize, height: usize) -> Result<Self, NavError> {
        if !(cell_size.is_finite() && cell_size > 0.0) {
            return Err(NavError::InvalidCellSize(cell_size));
        }
        Ok(Self {
            cell_size,
            origin,
            width,
            height,
            occupied: vec![false; width * height],
        })
    }

    /// Builds a grid from `rows` of `'#'` (occupied) and anything else (free);
    /// the first row is the highest y. Handy for tests.
    pub fn from_ascii(rows: &[&str], cell_size: f64) -> Result<Self, NavError> {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.chars().count());
        let mut g = Self::free(Vec3::zero(), cell_size, width, height)?;
        for (r, row) in rows.iter().enumerate() {
            for (ix, ch) in row.chars().enumerate() {
                if ch == '#' {
                    g.set_occupied((ix, height - 1 - r), true);
                }
            }
        }
        Ok(g)
    }

    pub fn index(&self, c: Cell) -> usize {
        c.1 * self.width + c.0
    }

    pub fn cell_at(&self, index: usize) -> Cell {
        (index % self.width, index / self.width)
    }

    pub fn len(&self) -> usize {
        self.occupied.len()
    }

    pub fn is_empty(&self) -> bool {
        self.occupied.is_empty()
    }

    pub fn contains(&self, ix: i64, iy: i64) -> bool {
        ix >= 0 && iy >= 0 && (ix as usize) < self.width && (iy as usize) < self.height
    }

    pub fn is_free(&self, c: Cell) -> bool {
        c.0 < self.width && c.1 < self.height && !self.occupied[self.index(c)]
    }

    pub fn set_occupied(&mut self, c: Cell, v: bool) {
        let i = self.index(c);
        self.occupied[i] = v;
    }

    pub fn free_count(&self) -> usize {
        self.occupied.iter().filter(|o| !**o).count()
    }

    pub fn occupied_count(&self) -> usize {
        self.len() - self.free_count()
    }

    pub fn free_cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.len()).filter(|i| !self.occupied[*i]).map(|i| self.cell_at(i))
    }

    /// Cell containing world point (x, y), if inside the window.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<Cell> {
        let fx = ((x - self.origin.x) / self.cell_size).floor();
        let fy = ((y - self.origin.y) / self.cell_size).floor();
        if fx.is_finite() && fy.is_finite() && self.contains(fx as i64, fy as i64) {
            Some((fx as usize, fy as usize))
        } else {
            None
        }
    }

    pub fn center(&self, c: Cell) -> [f64; 2] {
        [
            self.origin.x + (c.0 as f64 + 0.5) * self.cell_size,
            self.origin.y + (c.1 as f64 + 0.5) * self.cell_size,
        ]
    }

    /// Index range of cells whose open interior meets the open interval (lo, hi) on one axis.
    fn span(&self, lo: f64, hi: f64, origin: f64, n: usize) -> Option<(usize, usize)> {
        let c = self.cell_size;
        let a = ((lo - origin) / c).floor().max(0.0);
        let b = ((hi - origin) / c).ceil() - 1.0;
        let b = b.min(n as f64 - 1.0);
        if b < a || hi <= lo {
            return None;
        }
        let (mut a, mut b) = (a as usize, b as usize);
        // Drop cells that only touch the interval at an edge.
        if origin + (a as f64 + 1.0) * c <= lo {
            a += 1;
        }
        if origin + b as f64 * c >= hi && b > 0 {
            b -= 1;
        }
        (a <= b).then_some((a, b))
    }

    /// Marks every cell whose interior overlaps the XY rectangle.
    pub fn fill_rect(&mut self, min: [f64; 2], max: [f64; 2]) -> usize {
        let (Some((x0, x1)), Some((y0, y1))) = (
            self.span(min[0], max[0], self.origin.x, self.width),
            self.span(min[1], max[1], self.origin.y, self.height),
        ) else {
            return 0;
        };
        let mut n = 0;
        for iy in y0..=y1 {
            for ix in x0..=x1 {
                let i = self.index((ix, iy));
                if !self.occupied[i] {
                    self.occupied[i] = true;
                    n += 1;
                }
            }
        }
        n
    }

    /// Cells covered by the XY rectangle, occupied or not.
    pub fn rect_cells(&self, min: [f64; 2], max: [f64; 2]) -> Vec<Cell> {
        let (Some((x0, x1)), Some((y0, y1))) = (
            self.span(min[0], max[0], self.origin.x, self.width),
            self.span(min[1], max[1], self.origin.y, self.height),
        ) else {
            return Vec::new();
        };
        (y0..=y1).flat_map(|iy| (x0..=x1).map(move |ix| (ix, iy))).collect()
    }

    /// Free cell closest to (x, y) by centre distance; ties go to the lower index.
    pub fn nearest_free(&self, x: f64, y: f64) -> Option<Cell> {
        self.free_cells().min_by(|a, b| {
            let (ca, cb) = (self.center(*a), self.center(*b));
            let da = (ca[0] - x).powi(2) + (ca[1] - y).powi(2);
            let db = (cb[0] - x).powi(2) + (cb[1] - y).powi(2);
            da.total_cmp(&db)
        })
    }

    /// Labels 8-connected free components (diagonals need both side cells free).
    /// Returns per-cell labels (`usize::MAX` for occupied) and component sizes.
    pub fn components(&self) -> (Vec<usize>, Vec<usize>) {
        let mut label = vec![usize::MAX; self.len()];
        let mut sizes = Vec::new();
        let mut stack = Vec::new();
        for start in 0..self.len() {
            if self.occupied[start] || label[start] != usize::MAX {
                continue;
            }
            let id = sizes.len();
            let mut n = 0;
            label[start] = id;
            stack.push(start);
            while let Some(i) = stack.pop() {
                n += 1;
                for (nb, _) in super::path::neighbours(self, self.cell_at(i)) {
                    let j = self.index(nb);
                    if label[j] == usize::MAX {
                        label[j] = id;
                        stack.push(j);
                    }
                }
            }
            sizes.push(n);
        }
        (label, sizes)
    }
}

/// Rasterizes every non-environment actor footprint over the whole ground square.
pub fn build_grid(scene: &SceneGraph, catalog: &AssetCatalog, cell_size: f64) -> Result<OccupancyGrid, NavError> {
    let h = scene.ground_half_extent;
    build_grid_region(scene, catalog, cell_size, [-h, -h], [h, h])
}

/// Same as [`build_grid`] restricted to the window `[min, max]`; cells whose
/// centre lies off the ground are occupied.
pub fn build_grid_region(
    scene: &SceneGraph,
    catalog: &AssetCatalog,
    cell_size: f64,
    min: [f64; 2],
    max: [f64; 2],
) -> Result<OccupancyGrid, NavError> {
    if !(cell_size.is_finite() && cell_size > 0.0) {
        return Err(NavError::InvalidCellSize(cell_size));
    }
    if !scene.is_initialized() {
        return Err(NavError::NoGround);
    }
    let w = ((max[0] - min[0]) / cell_size).ceil().max(0.0) as usize;
    let hgt = ((max[1] - min[1]) / cell_size).ceil().max(0.0) as usize;
    let mut g = OccupancyGrid::free(Vec3::new(min[0], min[1], scene.ground_z), cell_size, w, hgt)?;
    let half = scene.ground_half_extent;
    for i in 0..g.len() {
        let [x, y] = g.center(g.cell_at(i));
        if x.abs() > half || y.abs() > half {
            g.occupied[i] = true;
        }
    }
    for a in scene.actors() {
        if a.category.is_environment() {
            continue;
        }
        let b = a.world_aabb(catalog).map_err(|e| NavError::Scene(e.to_string()))?;
        g.fill_rect([b.min.x, b.min.y], [b.max.x, b.max.y]);
    }
    Ok(g)
}
