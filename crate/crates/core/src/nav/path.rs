use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::SQRT_2;

use serde::{Deserialize, Serialize};

use super::grid::{Cell, OccupancyGrid};
use super::NavError;

/// Path cost as counts of orthogonal and diagonal moves, so lengths are exact
/// functions of two integers rather than accumulated floats.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Moves {
    pub straight: u32,
    pub diagonal: u32,
}

impl Moves {
    /// Length in cells.
    pub fn units(self) -> f64 {
        self.straight as f64 + self.diagonal as f64 * SQRT_2
    }

    pub fn length(self, cell_size: f64) -> f64 {
        self.straight as f64 * cell_size + self.diagonal as f64 * cell_size * SQRT_2
    }

    fn step(self, diagonal: bool) -> Self {
        if diagonal {
            Self { diagonal: self.diagonal + 1, ..self }
        } else {
            Self { straight: self.straight + 1, ..self }
        }
    }
}

impl PartialOrd for Moves {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

impl Ord for Moves {
    /// Orders by length; a + b·√2 = c + d·√2 only when a = c and b = d.
    fn cmp(&self, o: &Self) -> Ordering {
        if self == o {
            return Ordering::Equal;
        }
        self.units().total_cmp(&o.units()).then(self.diagonal.cmp(&o.diagonal))
    }
}

const DIRS: [(i64, i64); 8] = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)];

/// Free 8-neighbours of `c`; a diagonal needs both orthogonal side cells free.
pub fn neighbours(g: &OccupancyGrid, c: Cell) -> impl Iterator<Item = (Cell, bool)> + '_ {
    let (x, y) = (c.0 as i64, c.1 as i64);
    let free = move |ix: i64, iy: i64| g.contains(ix, iy) && g.is_free((ix as usize, iy as usize));
    DIRS.iter().filter_map(move |&(dx, dy)| {
        let diag = dx != 0 && dy != 0;
        if !free(x + dx, y + dy) || (diag && !(free(x + dx, y) && free(x, y + dy))) {
            return None;
        }
        Some((((x + dx) as usize, (y + dy) as usize), diag))
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPath {
    pub cells: Vec<Cell>,
    /// Cell centres, cm.
    pub waypoints: Vec<[f64; 2]>,
    pub moves: Moves,
    /// cm
    pub length: f64,
}

fn octile(a: Cell, b: Cell) -> f64 {
    let dx = a.0.abs_diff(b.0) as f64;
    let dy = a.1.abs_diff(b.1) as f64;
    let (lo, hi) = if dx < dy { (dx, dy) } else { (dy, dx) };
    // Shrunk by a hair so rounding can never make it overestimate.
    (hi - lo + lo * SQRT_2) * (1.0 - 1e-12)
}

#[derive(PartialEq)]
struct Open {
    f: f64,
    g: Moves,
    idx: usize,
}

impl Eq for Open {}

impl PartialOrd for Open {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

impl Ord for Open {
    // Min-heap on f, then on index for a fixed expansion order.
    fn cmp(&self, o: &Self) -> Ordering {
        o.f.total_cmp(&self.f).then_with(|| o.idx.cmp(&self.idx))
    }
}

fn check_endpoint(g: &OccupancyGrid, c: Cell) -> Result<(), NavError> {
    if g.is_free(c) {
        Ok(())
    } else {
        Err(NavError::BlockedEndpoint(c))
    }
}

/// A* over the 8-connected grid with the octile heuristic.
pub fn shortest_path(g: &OccupancyGrid, a: Cell, b: Cell) -> Result<GridPath, NavError> {
    check_endpoint(g, a)?;
    check_endpoint(g, b)?;
    let n = g.len();
    let mut best: Vec<Option<Moves>> = vec![None; n];
    let mut parent = vec![usize::MAX; n];
    let mut heap = BinaryHeap::new();
    let (ia, ib) = (g.index(a), g.index(b));
    best[ia] = Some(Moves::default());
    heap.push(Open { f: octile(a, b), g: Moves::default(), idx: ia });
    while let Some(Open { g: cost, idx, .. }) = heap.pop() {
        if best[idx] != Some(cost) {
            continue;
        }
        if idx == ib {
            let mut cells = vec![b];
            let mut i = ib;
            while i != ia {
                i = parent[i];
                cells.push(g.cell_at(i));
            }
            cells.reverse();
            let waypoints = cells.iter().map(|c| g.center(*c)).collect();
            return Ok(GridPath {
                cells,
                waypoints,
                moves: cost,
                length: cost.length(g.cell_size),
            });
        }
        let c = g.cell_at(idx);
        for (nb, diag) in neighbours(g, c) {
            let j = g.index(nb);
            let ng = cost.step(diag);
            if best[j].is_none_or(|old| ng < old) {
                best[j] = Some(ng);
                parent[j] = idx;
                heap.push(Open { f: ng.units() + octile(nb, b), g: ng, idx: j });
            }
        }
    }
    Err(NavError::Unreachable { from: a, to: b })
}

/// Geodesic distances from one source cell to every cell (Dijkstra), optionally
/// stopping once costs exceed `max_len` cm.
#[derive(Clone, Debug)]
pub struct DistanceField {
    pub source: Cell,
    cell_size: f64,
    width: usize,
    dist: Vec<Option<Moves>>,
}

impl DistanceField {
    pub fn new(g: &OccupancyGrid, source: Cell, max_len: Option<f64>) -> Result<Self, NavError> {
        check_endpoint(g, source)?;
        let mut dist: Vec<Option<Moves>> = vec![None; g.len()];
        let mut heap = BinaryHeap::new();
        let is = g.index(source);
        dist[is] = Some(Moves::default());
        heap.push(Open { f: 0.0, g: Moves::default(), idx: is });
        let cap = max_len.map(|m| m / g.cell_size);
        while let Some(Open { g: cost, idx, .. }) = heap.pop() {
            if dist[idx] != Some(cost) {
                continue;
            }
            for (nb, diag) in neighbours(g, g.cell_at(idx)) {
                let j = g.index(nb);
                let ng = cost.step(diag);
                if cap.is_some_and(|c| ng.units() > c + 1e-9) {
                    continue;
                }
                if dist[j].is_none_or(|old| ng < old) {
                    dist[j] = Some(ng);
                    heap.push(Open { f: ng.units(), g: ng, idx: j });
                }
            }
        }
        Ok(Self {
            source,
            cell_size: g.cell_size,
            width: g.width,
            dist,
        })
    }

    pub fn moves(&self, c: Cell) -> Option<Moves> {
        self.dist.get(c.1 * self.width + c.0).copied().flatten()
    }

    /// cm, or `None` when unreachable (or beyond the cap).
    pub fn get(&self, c: Cell) -> Option<f64> {
        self.moves(c).map(|m| m.length(self.cell_size))
    }

    pub fn reachable(&self) -> impl Iterator<Item = (Cell, Moves)> + '_ {
        self.dist
            .iter()
            .enumerate()
            .filter_map(|(i, d)| d.map(|m| ((i % self.width, i / self.width), m)))
    }
}

/// Geodesic distance between world points, cm. `p` must be on a free cell; an
/// occupied `q` is replaced by its nearest free cell.
pub fn geodesic_distance(g: &OccupancyGrid, p: [f64; 2], q: [f64; 2]) -> Result<f64, NavError> {
    let a = g.cell_of(p[0], p[1]).ok_or(NavError::OffGrid(p))?;
    let b = match g.cell_of(q[0], q[1]) {
        Some(c) if g.is_free(c) => c,
        _ => g.nearest_free(q[0], q[1]).ok_or(NavError::OffGrid(q))?,
    };
    shortest_path(g, a, b).map(|p| p.length)
}

/// True when the segment between two world points crosses no occupied cell other
/// than those in `ignore` (the target's own footprint).
pub fn line_of_sight(g: &OccupancyGrid, from: [f64; 2], to: [f64; 2], ignore: &[Cell]) -> bool {
    let len = ((to[0] - from[0]).powi(2) + (to[1] - from[1]).powi(2)).sqrt();
    let steps = (len / (g.cell_size * 0.25)).ceil().max(1.0) as usize;
    for k in 0..=steps {
        let t = k as f64 / steps as f64;
        let x = from[0] + (to[0] - from[0]) * t;
        let y = from[1] + (to[1] - from[1]) * t;
        match g.cell_of(x, y) {
            Some(c) if g.is_free(c) || ignore.contains(&c) => {}
            _ => return false,
        }
    }
    true
}
