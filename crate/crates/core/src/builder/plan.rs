//! Procedural layout planner: road skeleton, flush building rows, street dressing,
//! zone fill and difficulty obstacles.

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Archetype, BuildError, GenerationSpec, ZoneRect};
use crate::scene::{AssetCatalog, AssetDescriptor, Category};
use crate::{seed, Rotation, Transform, Vec3};

pub const ROAD_HALF_WIDTH: f64 = 400.0;
/// Distance from a road axis to the building facade line.
pub const FACADE_OFFSET: f64 = 800.0;
/// Distance from a road axis to the kerb line where trees and furniture stand.
pub const KERB_OFFSET: f64 = 530.0;
/// Distance from a road axis to the parking lane centre.
pub const LANE_OFFSET: f64 = 230.0;
pub const KERB_STEP: f64 = 600.0;
pub const EDGE_MARGIN: f64 = 500.0;
pub const DEFAULT_YAW_JITTER: f64 = 5.0;
const STREET_TREE_MAX_HALF: f64 = 160.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub name: String,
    pub asset_id: String,
    pub transform: Transform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlacementBatch {
    pub label: String,
    pub placements: Vec<Placement>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildPlan {
    pub batches: Vec<PlacementBatch>,
    pub zones: Vec<ZoneRect>,
}

impl BuildPlan {
    pub fn placements(&self) -> impl Iterator<Item = &Placement> {
        self.batches.iter().flat_map(|b| b.placements.iter())
    }

    pub fn len(&self) -> usize {
        self.placements().count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// An axis-aligned road centre line.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Axis {
    along_x: bool,
    /// Fixed coordinate (y for an X road, x for a Y road).
    c: f64,
    lo: f64,
    hi: f64,
}

impl Axis {
    fn point(&self, t: f64, n: f64) -> (f64, f64) {
        if self.along_x {
            (t, self.c + n)
        } else {
            (self.c + n, t)
        }
    }

    /// Yaw that points an actor's local +X along the road.
    fn yaw(&self) -> f64 {
        if self.along_x {
            0.0
        } else {
            90.0
        }
    }

    /// Positions along this axis where a perpendicular road crosses it.
    fn crossings(&self, all: &[Axis]) -> Vec<f64> {
        all.iter()
            .filter(|o| o.along_x != self.along_x)
            .filter(|o| o.lo <= self.c && self.c <= o.hi && self.lo <= o.c && o.c <= self.hi)
            .map(|o| o.c)
            .collect()
    }
}

/// `[lo, hi]` minus windows of half-width `w` around each point.
fn split_span(lo: f64, hi: f64, cuts: &[f64], w: f64) -> Vec<(f64, f64)> {
    let mut cuts = cuts.to_vec();
    cuts.sort_by(f64::total_cmp);
    let mut out = Vec::new();
    let mut start = lo;
    for c in cuts {
        if c - w > start {
            out.push((start, c - w));
        }
        start = start.max(c + w);
    }
    if hi > start {
        out.push((start, hi));
    }
    out
}

#[derive(Clone, Copy, Debug)]
struct Rect {
    min: (f64, f64),
    max: (f64, f64),
}

impl Rect {
    fn around(x: f64, y: f64, hx: f64, hy: f64) -> Self {
        Rect {
            min: (x - hx, y - hy),
            max: (x + hx, y + hy),
        }
    }

    fn intersects(&self, o: &Rect) -> bool {
        self.min.0 < o.max.0 && o.min.0 < self.max.0 && self.min.1 < o.max.1 && o.min.1 < self.max.1
    }

    fn inside(&self, lim: f64) -> bool {
        self.min.0 >= -lim && self.max.0 <= lim && self.min.1 >= -lim && self.max.1 <= lim
    }
}

impl From<&ZoneRect> for Rect {
    fn from(z: &ZoneRect) -> Self {
        Rect {
            min: (z.min[0], z.min[1]),
            max: (z.max[0], z.max[1]),
        }
    }
}

#[derive(Clone, Debug)]
struct Slot {
    asset: String,
    x: f64,
    y: f64,
    z: f64,
    yaw: f64,
    scale: Vec3,
    /// Sort key: preferred slots first.
    rank: f64,
}

impl Slot {
    fn at(asset: &AssetDescriptor, x: f64, y: f64, yaw: f64, rank: f64) -> Self {
        Slot {
            asset: asset.asset_id.clone(),
            x,
            y,
            z: asset.base_extent.z,
            yaw,
            scale: Vec3::splat(1.0),
            rank,
        }
    }
}

fn pool<'a>(catalog: &'a AssetCatalog, cat: Category, ids: &[&str]) -> Vec<&'a AssetDescriptor> {
    let all = catalog.list(Some(cat));
    if ids.is_empty() {
        return all;
    }
    let picked: Vec<_> = all.iter().copied().filter(|a| ids.contains(&a.asset_id.as_str())).collect();
    if picked.is_empty() {
        all
    } else {
        picked
    }
}

fn building_pool(arch: Archetype) -> &'static [&'static str] {
    match arch {
        Archetype::DowntownIntersection => &["building_05", "building_06", "building_07", "building_08", "building_09", "building_10"],
        Archetype::Residential => &["building_01", "building_11", "building_13", "building_15"],
        Archetype::Industrial => &["building_13", "building_14"],
        Archetype::CommercialAvenue => &["building_02", "building_03", "building_04", "building_05", "building_12"],
        Archetype::MixedUse => &[],
    }
}

fn skeleton(spec: &GenerationSpec, lim: f64) -> Result<Vec<Axis>, BuildError> {
    if let Some(h) = spec.layout_hints.as_ref().filter(|h| !h.road_axes.is_empty()) {
        return h
            .road_axes
            .iter()
            .map(|r| {
                let [x0, y0] = r.from;
                let [x1, y1] = r.to;
                if y0 == y1 {
                    Ok(Axis { along_x: true, c: y0, lo: x0.min(x1), hi: x0.max(x1) })
                } else if x0 == x1 {
                    Ok(Axis { along_x: false, c: x0, lo: y0.min(y1), hi: y0.max(y1) })
                } else {
                    Err(BuildError::InvalidSpec(format!("road axis {:?}->{:?} is not axis-aligned", r.from, r.to)))
                }
            })
            .collect();
    }
    let x_road = Axis { along_x: true, c: 0.0, lo: -lim, hi: lim };
    let y_road = Axis { along_x: false, c: 0.0, lo: -lim, hi: lim };
    Ok(match spec.archetype {
        Archetype::DowntownIntersection | Archetype::MixedUse => vec![x_road, y_road],
        _ => vec![x_road],
    })
}

fn default_zones(arch: Archetype, lim: f64, row_depth: f64) -> Vec<ZoneRect> {
    let back = FACADE_OFFSET + row_depth + 300.0;
    let z = |kind: &str, min: [f64; 2], max: [f64; 2]| ZoneRect { kind: kind.into(), min, max };
    match arch {
        Archetype::Residential => vec![z("park", [-lim, back], [lim, lim]), z("park", [-lim, -lim], [lim, -back])],
        Archetype::Industrial => vec![z("yard", [-lim, -lim], [lim, -FACADE_OFFSET])],
        Archetype::MixedUse => vec![z("park", [FACADE_OFFSET, FACADE_OFFSET], [lim, lim])],
        Archetype::DowntownIntersection => vec![z("plaza", [-lim, back], [-FACADE_OFFSET - 2000.0, lim])],
        Archetype::CommercialAvenue => vec![],
    }
}

struct Planner<'a> {
    catalog: &'a AssetCatalog,
    spacing: &'a BTreeMap<Category, f64>,
    rng: ChaCha8Rng,
    lim: f64,
    axes: Vec<Axis>,
    zones: Vec<ZoneRect>,
    jitter: f64,
}

impl Planner<'_> {
    fn gap(&self, c: Category) -> f64 {
        self.spacing.get(&c).copied().unwrap_or(100.0)
    }

    fn blocked(&self, r: &Rect, kinds: &[&str]) -> bool {
        self.zones
            .iter()
            .filter(|z| kinds.contains(&z.kind.as_str()))
            .any(|z| Rect::from(z).intersects(r))
    }

    fn in_corridor(&self, r: &Rect) -> bool {
        self.axes.iter().any(|a| {
            let c = if a.along_x {
                Rect { min: (a.lo, a.c - FACADE_OFFSET), max: (a.hi, a.c + FACADE_OFFSET) }
            } else {
                Rect { min: (a.c - FACADE_OFFSET, a.lo), max: (a.c + FACADE_OFFSET, a.hi) }
            };
            c.intersects(r)
        })
    }

    fn roads(&self) -> Vec<Slot> {
        let straight = self.catalog.get("road_straight");
        let cross = self.catalog.get("road_intersection");
        let walk = self.catalog.get("sidewalk");
        let mut out = Vec::new();
        let mut crossings_done: Vec<(f64, f64)> = Vec::new();
        for a in &self.axes {
            let cuts = a.crossings(&self.axes);
            if let Some(x) = cross {
                for t in &cuts {
                    let (px, py) = a.point(*t, 0.0);
                    if !crossings_done.contains(&(px, py)) {
                        crossings_done.push((px, py));
                        out.push(Slot { z: x.base_extent.z, ..Slot::at(x, px, py, 0.0, 0.0) });
                    }
                }
            }
            let tiles = |desc: &AssetDescriptor, n: f64, w: f64, out: &mut Vec<Slot>| {
                let len = 2.0 * desc.base_extent.x;
                for (s, e) in split_span(a.lo, a.hi, &cuts, w) {
                    let mut t = s;
                    while e - t > 1.0 {
                        let l = len.min(e - t);
                        let (x, y) = a.point(t + l / 2.0, n);
                        let mut slot = Slot::at(desc, x, y, a.yaw(), 0.0);
                        slot.scale = Vec3::new(l / len, 1.0, 1.0);
                        out.push(slot);
                        t += l;
                    }
                }
            };
            if let Some(d) = straight {
                tiles(d, 0.0, ROAD_HALF_WIDTH, &mut out);
            }
            if let Some(d) = walk {
                let n = ROAD_HALF_WIDTH + d.base_extent.y;
                tiles(d, n, ROAD_HALF_WIDTH + 2.0 * d.base_extent.y, &mut out);
                tiles(d, -n, ROAD_HALF_WIDTH + 2.0 * d.base_extent.y, &mut out);
            }
        }
        out
    }

    fn max_depth(&self, pool: &[&AssetDescriptor]) -> f64 {
        pool.iter().map(|a| 2.0 * a.base_extent.y).fold(0.0, f64::max)
    }

    /// Street-facing rows of buildings flush to the facade line on both sides of
    /// every road, shoulder to shoulder with the building clearance between them.
    fn building_rows(&mut self, pool: &[&AssetDescriptor]) -> Vec<Slot> {
        let sp = self.gap(Category::Building);
        let depth = self.max_depth(pool);
        let mut out = Vec::new();
        let axes = self.axes.clone();
        for (ai, a) in axes.iter().enumerate() {
            let cuts = a.crossings(&axes);
            // Rows on the first axis hug the crossing; later axes leave room for
            // the rows already there.
            let w = if ai == 0 { FACADE_OFFSET + sp } else { FACADE_OFFSET + depth + sp };
            for side in [1.0, -1.0] {
                for (s, e) in split_span(a.lo, a.hi, &cuts, w) {
                    let mut t = s;
                    loop {
                        let d = *pool.choose(&mut self.rng).expect("nonempty pool");
                        let (ex, ey) = (d.base_extent.x, d.base_extent.y);
                        if t + 2.0 * ex > e {
                            break;
                        }
                        let (x, y) = a.point(t + ex, side * (FACADE_OFFSET + ey));
                        let yaw = a.yaw() + if side > 0.0 { 180.0 } else { 0.0 };
                        let (hx, hy) = if a.along_x { (ex, ey) } else { (ey, ex) };
                        let r = Rect::around(x, y, hx, hy);
                        t += 2.0 * ex + sp;
                        if !r.inside(self.lim) || self.blocked(&r, &["park", "yard", "plaza", "no_build"]) {
                            continue;
                        }
                        let jit = self.rng.random_range(-self.jitter..=self.jitter);
                        let rank = (x * x + y * y).sqrt();
                        out.push(Slot::at(d, x, y, yaw + jit, rank));
                    }
                }
            }
        }
        out
    }

    fn kerb_positions(&self, offset: f64, phase: f64) -> Vec<(f64, f64, f64, f64)> {
        let mut out = Vec::new();
        for a in &self.axes {
            let cuts = a.crossings(&self.axes);
            for side in [1.0, -1.0] {
                for (s, e) in split_span(a.lo, a.hi, &cuts, FACADE_OFFSET + 300.0) {
                    let mut t = s + KERB_STEP / 2.0 + phase;
                    while t + KERB_STEP / 2.0 <= e {
                        let (x, y) = a.point(t, side * offset);
                        out.push((x, y, a.yaw(), (x * x + y * y).sqrt()));
                        t += KERB_STEP;
                    }
                }
            }
        }
        out
    }

    fn lane_slots(&mut self, pool: &[&AssetDescriptor]) -> Vec<Slot> {
        let sp = self.gap(Category::Vehicle);
        let mut out = Vec::new();
        let axes = self.axes.clone();
        for a in &axes {
            let cuts = a.crossings(&axes);
            for side in [1.0, -1.0] {
                for (s, e) in split_span(a.lo, a.hi, &cuts, FACADE_OFFSET) {
                    let mut t = s + sp;
                    loop {
                        let d = *pool.choose(&mut self.rng).expect("nonempty pool");
                        if t + 2.0 * d.base_extent.x > e {
                            break;
                        }
                        let (x, y) = a.point(t + d.base_extent.x, side * LANE_OFFSET);
                        let yaw = a.yaw() + if side > 0.0 { 180.0 } else { 0.0 };
                        out.push(Slot::at(d, x, y, yaw, (x * x + y * y).sqrt()));
                        t += 2.0 * d.base_extent.x + sp;
                    }
                }
            }
        }
        out
    }

    /// Jittered grid inside every zone of `kind`.
    fn zone_grid(&mut self, kind: &str, pool: &[&AssetDescriptor], cat: Category) -> Vec<Slot> {
        let sp = self.gap(cat);
        let hx = pool.iter().map(|a| a.base_extent.x).fold(0.0, f64::max);
        let hy = pool.iter().map(|a| a.base_extent.y).fold(0.0, f64::max);
        let (step_x, step_y) = (2.0 * hx + sp, 2.0 * hy + sp);
        let jit = (sp / 4.0).min(50.0);
        let zones: Vec<Rect> = self.zones.iter().filter(|z| z.kind == kind).map(Rect::from).collect();
        let mut out = Vec::new();
        for z in zones {
            let mut y = z.min.1 + hy + sp / 2.0;
            while y + hy <= z.max.1 {
                let mut x = z.min.0 + hx + sp / 2.0;
                while x + hx <= z.max.0 {
                    let d = *pool.choose(&mut self.rng).expect("nonempty pool");
                    let jx = self.rng.random_range(-jit..=jit);
                    let jy = self.rng.random_range(-jit..=jit);
                    let r = Rect::around(x + jx, y + jy, hx, hy);
                    if r.inside(self.lim) && !self.in_corridor(&r) {
                        out.push(Slot::at(d, x + jx, y + jy, 0.0, (x * x + y * y).sqrt()));
                    }
                    x += step_x;
                }
                y += step_y;
            }
        }
        out
    }

    /// Picks `n` slots, preferring low rank; ties broken by a seeded shuffle.
    fn take(&mut self, mut slots: Vec<Slot>, n: usize, what: &str) -> Result<Vec<Slot>, BuildError> {
        if slots.len() < n {
            return Err(BuildError::Infeasible {
                constraint: what.to_string(),
                requested: n,
                capacity: slots.len(),
            });
        }
        slots.shuffle(&mut self.rng);
        slots.sort_by(|a, b| (a.rank / 500.0).floor().total_cmp(&(b.rank / 500.0).floor()));
        slots.truncate(n);
        Ok(slots)
    }
}

fn to_batch(label: &str, prefix: &str, slots: Vec<Slot>) -> PlacementBatch {
    PlacementBatch {
        label: label.to_string(),
        placements: slots
            .into_iter()
            .enumerate()
            .map(|(i, s)| Placement {
                name: format!("{prefix}_{i:03}"),
                asset_id: s.asset,
                transform: Transform {
                    location: Vec3::new(s.x, s.y, s.z),
                    rotation: Rotation::from_yaw(s.yaw),
                    scale: s.scale,
                },
            })
            .collect(),
    }
}

/// Deterministic plan for `spec` under the given per-category clearances.
pub fn plan_layout(
    spec: &GenerationSpec,
    catalog: &AssetCatalog,
    spacing: &BTreeMap<Category, f64>,
) -> Result<BuildPlan, BuildError> {
    spec.validate()?;
    let lim = spec.ground_size / 2.0 - EDGE_MARGIN;
    let counts = spec.effective_counts();
    let want = |c: Category| counts.get(&c).copied().unwrap_or(0) as usize;
    let axes = skeleton(spec, lim)?;
    let bpool = pool(catalog, Category::Building, building_pool(spec.archetype));
    let row_depth = bpool.iter().map(|a| 2.0 * a.base_extent.y).fold(0.0, f64::max);
    let mut zones = default_zones(spec.archetype, lim, row_depth);
    if let Some(h) = &spec.layout_hints {
        zones.extend(h.zones.iter().cloned());
    }
    let mut p = Planner {
        catalog,
        spacing,
        rng: seed::stream(spec.seed, &format!("plan/{}", spec.archetype.as_str())),
        lim,
        axes,
        zones,
        jitter: spec.difficulty.yaw_jitter_deg.unwrap_or(DEFAULT_YAW_JITTER).abs(),
    };
    let mut batches = vec![to_batch("roads", "Road", p.roads())];

    if want(Category::Building) > 0 && !bpool.is_empty() {
        let rows = p.building_rows(&bpool);
        let picked = p.take(rows, want(Category::Building), "building rows along roads")?;
        batches.push(to_batch("buildings", "Bldg", picked));
    }

    // Street dressing shares one kerb sequence between trees and furniture.
    let tree_pool: Vec<&AssetDescriptor> = pool(catalog, Category::Tree, &[])
        .into_iter()
        .filter(|a| a.base_extent.x.max(a.base_extent.y) <= STREET_TREE_MAX_HALF)
        .collect();
    let park_pool = pool(catalog, Category::Tree, &[]);
    let mut kerb = p.kerb_positions(KERB_OFFSET, 0.0);
    kerb.shuffle(&mut p.rng);
    kerb.sort_by(|a, b| (a.3 / 500.0).floor().total_cmp(&(b.3 / 500.0).floor()));
    let mut dressing = Vec::new();
    let n_trees = want(Category::Tree);
    if n_trees > 0 && !park_pool.is_empty() {
        let mut park = p.zone_grid("park", &park_pool, Category::Tree);
        park.shuffle(&mut p.rng);
        let from_park = park.len().min(n_trees);
        let mut trees: Vec<Slot> = park.into_iter().take(from_park).collect();
        let need = n_trees - from_park;
        if need > kerb.len() || (need > 0 && tree_pool.is_empty()) {
            return Err(BuildError::Infeasible {
                constraint: "kerb and park positions for trees".into(),
                requested: n_trees,
                capacity: from_park + kerb.len(),
            });
        }
        for (x, y, yaw, rank) in kerb.drain(..need) {
            let d = *tree_pool.choose(&mut p.rng).expect("nonempty");
            trees.push(Slot::at(d, x, y, yaw, rank));
        }
        dressing.push(to_batch("trees", "Tree", trees));
    }
    let n_furn = want(Category::StreetFurniture);
    if n_furn > 0 {
        let fpool = pool(catalog, Category::StreetFurniture, &[]);
        let mut plaza = p.zone_grid("plaza", &fpool, Category::StreetFurniture);
        plaza.truncate(n_furn / 3);
        let need = n_furn - plaza.len();
        if need > kerb.len() {
            return Err(BuildError::Infeasible {
                constraint: "kerb positions for street furniture".into(),
                requested: n_furn,
                capacity: plaza.len() + kerb.len(),
            });
        }
        let mut furn = plaza;
        for (x, y, yaw, rank) in kerb.drain(..need) {
            let d = *fpool.choose(&mut p.rng).expect("nonempty");
            furn.push(Slot::at(d, x, y, yaw, rank));
        }
        dressing.push(to_batch("street_furniture", "Furn", furn));
    }
    let n_veh = want(Category::Vehicle);
    if n_veh > 0 {
        let vpool = pool(catalog, Category::Vehicle, &[]);
        let lanes = p.lane_slots(&vpool);
        let picked = p.take(lanes, n_veh, "parking lanes")?;
        dressing.push(to_batch("vehicles", "Veh", picked));
    }
    batches.extend(dressing);

    let n_cont = want(Category::Container);
    if n_cont > 0 {
        let cpool = pool(catalog, Category::Container, &[]);
        let mut yard = p.zone_grid("yard", &cpool, Category::Container);
        if yard.len() < n_cont {
            // no yard zone: fall back to the kerb sequence with small units
            let small: Vec<&AssetDescriptor> = cpool.iter().copied().filter(|a| a.base_extent.y <= 130.0).collect();
            for (x, y, yaw, rank) in kerb.drain(..(n_cont - yard.len()).min(kerb.len())) {
                if let Some(d) = small.choose(&mut p.rng) {
                    yard.push(Slot::at(d, x, y, yaw, rank));
                }
            }
        }
        let picked = p.take(yard, n_cont, "container yard cells")?;
        batches.push(to_batch("containers", "Cont", picked));
    }

    let n_props = want(Category::Prop);
    let n_obst = (spec.difficulty.obstacle_density.clamp(0.0, 1.0) * 100.0).round() as usize;
    if n_props + n_obst > 0 {
        let ppool = pool(catalog, Category::Prop, &[]);
        let mut mids = p.kerb_positions(KERB_OFFSET, KERB_STEP / 2.0);
        mids.shuffle(&mut p.rng);
        if n_props > mids.len() {
            return Err(BuildError::Infeasible {
                constraint: "kerb gaps for props".into(),
                requested: n_props,
                capacity: mids.len(),
            });
        }
        let props: Vec<Slot> = mids
            .drain(..n_props)
            .map(|(x, y, yaw, rank)| Slot::at(ppool.choose(&mut p.rng).expect("nonempty"), x, y, yaw, rank))
            .collect();
        if !props.is_empty() {
            batches.push(to_batch("props", "Prop", props));
        }
        if n_obst > 0 {
            let opool = pool(catalog, Category::Prop, &["road_cone", "barrel", "road_blocker", "crate"]);
            let mut road = p.kerb_positions(0.0, 0.0);
            road.extend(p.kerb_positions(0.0, KERB_STEP / 2.0));
            road.shuffle(&mut p.rng);
            let obst: Vec<Slot> = road
                .into_iter()
                .take(n_obst)
                .map(|(x, y, yaw, rank)| Slot::at(opool.choose(&mut p.rng).expect("nonempty"), x, y, yaw, rank))
                .collect();
            batches.push(to_batch("obstacles", "Obst", obst));
        }
    }
    batches.retain(|b| !b.placements.is_empty());
    Ok(BuildPlan { batches, zones: p.zones })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_span_cuts_windows() {
        assert_eq!(split_span(-10.0, 10.0, &[0.0], 2.0), vec![(-10.0, -2.0), (2.0, 10.0)]);
        assert_eq!(split_span(0.0, 10.0, &[], 2.0), vec![(0.0, 10.0)]);
        assert_eq!(split_span(0.0, 10.0, &[0.0], 2.0), vec![(2.0, 10.0)]);
    }
}
