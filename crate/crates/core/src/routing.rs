//! Heat-aware pedestrian routing on the raster grid.
//!
//! Walkable cells are nodes, joined to their eight neighbours. Entering a cell
//! costs `alpha · len/len_max + (1 − alpha) · comfort · len/len_max`, where
//! `comfort` is the cell's UTCI min-max normalized over the frame and
//! `len_max` is the diagonal step. Routes report their length and the plain
//! mean UTCI of the cells they visit.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{Grid, Raster};
use crate::scene::{GridScene, LandCover};

pub const DEFAULT_ALPHAS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RoutingError {
    #[error("frame is {frame:?} but scene is {scene:?}")]
    Shape { frame: (usize, usize), scene: (usize, usize) },
    #[error("{what} ({row},{col}) is outside the grid")]
    OutOfBounds { what: &'static str, row: usize, col: usize },
    #[error("{what} not walkable at ({row},{col})")]
    NotWalkable { what: &'static str, row: usize, col: usize },
    #[error("alpha {0} outside [0, 1]")]
    Alpha(f64),
    #[error("no route from ({},{}) to ({},{})", from.0, from.1, to.0, to.1)]
    NoRoute { from: (usize, usize), to: (usize, usize) },
    #[error("path is not a chain of adjacent walkable cells at step {0}")]
    InvalidPath(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    #[default]
    Dijkstra,
    Astar,
}

/// Neighbour offsets in increasing row-major index order.
const NEIGHBOURS: [(isize, isize); 8] = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)];

#[derive(Debug, Clone)]
pub struct GridGraph {
    walkable: Grid<bool>,
    weights: Grid<f64>,
    cell_size: f64,
    w_min: f64,
    w_max: f64,
}

/// Buildings, water and cells without a finite UTCI are not walkable.
pub fn build_grid_graph(scene: &GridScene, frame: &Raster) -> Result<GridGraph, RoutingError> {
    if frame.shape() != scene.shape() {
        return Err(RoutingError::Shape {
            frame: frame.shape(),
            scene: scene.shape(),
        });
    }
    let walkable = Grid::from_fn(scene.nrows(), scene.ncols(), |r, c| {
        !matches!(scene.landcover_at(r, c), None | Some(LandCover::Building) | Some(LandCover::Water))
            && frame.at(r, c).is_finite()
    });
    Ok(GridGraph::new(walkable, frame.map(|&v| v as f64), scene.cell_size))
}

impl GridGraph {
    /// Normalization bounds are the extremes of the finite frame values.
    pub fn new(walkable: Grid<bool>, weights: Grid<f64>, cell_size: f64) -> Self {
        assert!(walkable.same_shape(&weights), "walkable and weight grids must match");
        let (mut w_min, mut w_max) = (f64::INFINITY, f64::NEG_INFINITY);
        for &w in weights.iter().filter(|w| w.is_finite()) {
            w_min = w_min.min(w);
            w_max = w_max.max(w);
        }
        Self {
            walkable,
            weights,
            cell_size,
            w_min,
            w_max,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.walkable.shape()
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn is_walkable(&self, row: usize, col: usize) -> bool {
        row < self.walkable.nrows() && col < self.walkable.ncols() && self.walkable.at(row, col)
    }

    pub fn weight(&self, row: usize, col: usize) -> f64 {
        self.weights.at(row, col)
    }

    pub fn node_count(&self) -> usize {
        self.walkable.iter().filter(|&&w| w).count()
    }

    /// Undirected adjacencies between walkable cells.
    pub fn edge_count(&self) -> usize {
        let (nr, nc) = self.shape();
        (0..nr * nc)
            .filter(|&i| self.walkable.as_slice()[i])
            .map(|i| self.neighbours(i).filter(|&(j, _)| j > i).count())
            .sum()
    }

    fn diagonal(&self) -> f64 {
        self.cell_size * std::f64::consts::SQRT_2
    }

    /// Walkable neighbours of cell `i` with the step length, in index order.
    fn neighbours(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (nr, nc) = self.shape();
        let (r, c) = ((i / nc) as isize, (i % nc) as isize);
        NEIGHBOURS.iter().filter_map(move |&(dr, dc)| {
            let (rr, cc) = (r + dr, c + dc);
            if rr < 0 || cc < 0 || rr >= nr as isize || cc >= nc as isize {
                return None;
            }
            let j = rr as usize * nc + cc as usize;
            self.walkable.as_slice()[j].then(|| {
                let len = if dr != 0 && dc != 0 { self.diagonal() } else { self.cell_size };
                (j, len)
            })
        })
    }

    /// UTCI scaled to [0, 1] over the frame; 0 everywhere on a flat frame.
    fn comfort(&self, j: usize) -> f64 {
        let span = self.w_max - self.w_min;
        if span > 0.0 {
            (self.weights.as_slice()[j] - self.w_min) / span
        } else {
            0.0
        }
    }

    fn edge_cost(&self, head: usize, len: f64, alpha: f64) -> f64 {
        let scaled = len / self.diagonal();
        alpha * scaled + (1.0 - alpha) * self.comfort(head) * scaled
    }

    /// Cost of walking `path` under `alpha`.
    pub fn path_cost(&self, path: &[(usize, usize)], alpha: f64) -> Result<f64, RoutingError> {
        self.check_path(path)?;
        let nc = self.shape().1;
        Ok(path
            .windows(2)
            .map(|w| {
                let j = w[1].0 * nc + w[1].1;
                let diag = w[0].0 != w[1].0 && w[0].1 != w[1].1;
                let len = if diag { self.diagonal() } else { self.cell_size };
                self.edge_cost(j, len, alpha)
            })
            .sum())
    }

    fn check_path(&self, path: &[(usize, usize)]) -> Result<(), RoutingError> {
        if path.is_empty() {
            return Err(RoutingError::InvalidPath(0));
        }
        for (k, &(r, c)) in path.iter().enumerate() {
            if !self.is_walkable(r, c) {
                return Err(RoutingError::InvalidPath(k));
            }
            if k > 0 {
                let (pr, pc) = path[k - 1];
                let (dr, dc) = (pr.abs_diff(r), pc.abs_diff(c));
                if dr > 1 || dc > 1 || (dr == 0 && dc == 0) {
                    return Err(RoutingError::InvalidPath(k));
                }
            }
        }
        Ok(())
    }

    fn endpoint(&self, what: &'static str, (row, col): (usize, usize)) -> Result<usize, RoutingError> {
        let (nr, nc) = self.shape();
        if row >= nr || col >= nc {
            return Err(RoutingError::OutOfBounds { what, row, col });
        }
        if !self.walkable.at(row, col) {
            return Err(RoutingError::NotWalkable { what, row, col });
        }
        Ok(row * nc + col)
    }
}

/// Mean UTCI of the visited cells, each counted once per visit.
pub fn path_avg_utci(graph: &GridGraph, path: &[(usize, usize)]) -> Result<f64, RoutingError> {
    graph.check_path(path)?;
    Ok(path.iter().map(|&(r, c)| graph.weight(r, c)).sum::<f64>() / path.len() as f64)
}

fn path_length(graph: &GridGraph, path: &[(usize, usize)]) -> f64 {
    path.windows(2)
        .map(|w| {
            if w[0].0 != w[1].0 && w[0].1 != w[1].1 {
                graph.diagonal()
            } else {
                graph.cell_size
            }
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteResult {
    /// `(row, col)` cells from origin to destination.
    pub path: Vec<(usize, usize)>,
    pub length_m: f64,
    pub avg_utci: f64,
    pub alpha: f64,
    /// Total weighted cost that the search minimized.
    pub cost: f64,
}

/// Cost with walked length as the tie-breaker, compared lexicographically.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Key {
    cost: f64,
    length: f64,
}

impl Key {
    fn less(self, other: Key) -> bool {
        self.cmp(other) == Ordering::Less
    }

    fn cmp(self, other: Key) -> Ordering {
        self.cost.total_cmp(&other.cost).then(self.length.total_cmp(&other.length))
    }
}

/// Min-heap entry ordered by key, then node index.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Entry {
    key: Key,
    node: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.key.cmp(self.key).then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Least-cost route. Equal costs prefer the shorter walk; remaining ties
/// settle the lower node index first and a predecessor is only replaced by a
/// strictly better one, so results are deterministic.
pub fn shortest_path(
    graph: &GridGraph,
    origin: (usize, usize),
    destination: (usize, usize),
    alpha: f64,
    algorithm: Algorithm,
) -> Result<RouteResult, RoutingError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(RoutingError::Alpha(alpha));
    }
    let src = graph.endpoint("origin", origin)?;
    let dst = graph.endpoint("destination", destination)?;
    let (nr, nc) = graph.shape();
    let heuristic = |i: usize| -> Key {
        match algorithm {
            Algorithm::Dijkstra => Key { cost: 0.0, length: 0.0 },
            Algorithm::Astar => {
                let dr = (i / nc) as f64 - destination.0 as f64;
                let dc = (i % nc) as f64 - destination.1 as f64;
                let length = graph.cell_size * (dr * dr + dc * dc).sqrt();
                Key {
                    cost: alpha * length / graph.diagonal(),
                    length,
                }
            }
        }
    };
    let n = nr * nc;
    let mut dist = vec![Key { cost: f64::INFINITY, length: f64::INFINITY }; n];
    let mut prev = vec![usize::MAX; n];
    let mut done = vec![false; n];
    let mut heap = BinaryHeap::new();
    dist[src] = Key { cost: 0.0, length: 0.0 };
    heap.push(Entry {
        key: heuristic(src),
        node: src,
    });
    while let Some(Entry { node, .. }) = heap.pop() {
        if done[node] {
            continue;
        }
        done[node] = true;
        if node == dst {
            break;
        }
        for (j, len) in graph.neighbours(node) {
            if done[j] {
                continue;
            }
            let d = Key {
                cost: dist[node].cost + graph.edge_cost(j, len, alpha),
                length: dist[node].length + len,
            };
            if d.less(dist[j]) {
                dist[j] = d;
                prev[j] = node;
                let h = heuristic(j);
                heap.push(Entry {
                    key: Key {
                        cost: d.cost + h.cost,
                        length: d.length + h.length,
                    },
                    node: j,
                });
            }
        }
    }
    if !done[dst] {
        return Err(RoutingError::NoRoute {
            from: origin,
            to: destination,
        });
    }
    let mut cells = vec![dst];
    while *cells.last().unwrap() != src {
        cells.push(prev[*cells.last().unwrap()]);
    }
    cells.reverse();
    let path: Vec<(usize, usize)> = cells.iter().map(|&i| (i / nc, i % nc)).collect();
    Ok(RouteResult {
        length_m: path_length(graph, &path),
        avg_utci: path_avg_utci(graph, &path)?,
        alpha,
        cost: dist[dst].cost,
        path,
    })
}

/// One route per alpha, sorted by alpha. A route is dropped when an earlier
/// one has the same path, or matches it on length and mean UTCI, or when any
/// other route beats it on both.
pub fn recommend_routes(
    graph: &GridGraph,
    origin: (usize, usize),
    destination: (usize, usize),
    alphas: &[f64],
) -> Result<Vec<RouteResult>, RoutingError> {
    const TOL: f64 = 1e-9;
    let mut sorted = alphas.to_vec();
    sorted.sort_by(f64::total_cmp);
    let same = |a: f64, b: f64| (a - b).abs() <= TOL * a.abs().max(b.abs()).max(1.0);
    let mut routes: Vec<RouteResult> = Vec::new();
    for alpha in sorted {
        let r = shortest_path(graph, origin, destination, alpha, Algorithm::Dijkstra)?;
        let duplicate = routes
            .iter()
            .any(|q| q.path == r.path || (same(q.length_m, r.length_m) && same(q.avg_utci, r.avg_utci)));
        if !duplicate {
            routes.push(r);
        }
    }
    let dominated = |r: &RouteResult| {
        routes.iter().any(|q| {
            q.length_m <= r.length_m
                && q.avg_utci <= r.avg_utci
                && (q.length_m < r.length_m || q.avg_utci < r.avg_utci)
        })
    };
    let keep: Vec<bool> = routes.iter().map(|r| !dominated(r)).collect();
    Ok(routes.into_iter().zip(keep).filter(|(_, k)| *k).map(|(r, _)| r).collect())
}
