//! Energy-optimal grid planning over the global COT map.
//!
//! A step between neighboring cells costs the mean of their COT values
//! times the step length, so a path's cost is proportional to the energy
//! spent driving it.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::bev::GlobalBevMap;
use crate::error::{Error, Result};
use crate::formats::{cot_color, Colormap};
use crate::geometry::Vec2;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum UnknownPolicy {
    #[default]
    Forbid,
    /// Unknown cells count as this COT.
    Penalty { cot: f64 },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Connectivity {
    Four,
    #[default]
    Eight,
}

/// How cells and steps are priced.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostRules {
    pub unknown_policy: UnknownPolicy,
    pub connectivity: Connectivity,
    /// Cells with COT at or above this are impassable.
    pub hard_forbid: Option<f64>,
}

impl CostRules {
    pub fn validate(&self) -> Result<()> {
        if let UnknownPolicy::Penalty { cot } = self.unknown_policy {
            if !(cot > 0.0) || !cot.is_finite() {
                return Err(Error::InvalidParameter(format!("unknown penalty {cot}")));
            }
        }
        Ok(())
    }

    /// Effective COT of a stored value, `None` when impassable.
    pub fn cell_cot(&self, stored: f64) -> Option<f64> {
        if !(stored > 0.0) {
            return match self.unknown_policy {
                UnknownPolicy::Forbid => None,
                UnknownPolicy::Penalty { cot } => Some(cot),
            };
        }
        match self.hard_forbid {
            Some(limit) if stored >= limit => None,
            _ => Some(stored),
        }
    }

    fn steps(&self) -> &'static [(i64, i64)] {
        const FOUR: [(i64, i64); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];
        const EIGHT: [(i64, i64); 8] = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)];
        match self.connectivity {
            Connectivity::Four => &FOUR,
            Connectivity::Eight => &EIGHT,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct PlanProblem<'a> {
    pub map: &'a GlobalBevMap,
    pub start: Vec2,
    pub goal: Vec2,
    pub rules: CostRules,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathResult {
    /// `(col, row)` cells from start to goal.
    pub cells: Vec<(usize, usize)>,
    pub total_cost: f64,
    /// Meters.
    pub total_distance: f64,
}

fn cot_at(map: &GlobalBevMap, rules: &CostRules, cell: (usize, usize)) -> Result<f64> {
    rules.cell_cot(map.cot[map.index(cell.0, cell.1)]).ok_or(Error::ForbiddenCell { col: cell.0, row: cell.1 })
}

/// Cost and length of a cell sequence.
pub fn path_cost(map: &GlobalBevMap, cells: &[(usize, usize)], rules: &CostRules) -> Result<(f64, f64)> {
    let Some(first) = cells.first() else { return Ok((0.0, 0.0)) };
    let (cols, rows) = (map.meta.cols, map.meta.rows);
    for &(c, r) in cells {
        if c >= cols || r >= rows {
            return Err(Error::OutOfBounds { x: c as f64, y: r as f64 });
        }
    }
    let mut prev_cot = cot_at(map, rules, *first)?;
    let (mut cost, mut dist) = (0.0, 0.0);
    for (i, w) in cells.windows(2).enumerate() {
        let (dc, dr) = (w[1].0 as i64 - w[0].0 as i64, w[1].1 as i64 - w[0].1 as i64);
        if !rules.steps().contains(&(dc, dr)) {
            return Err(Error::NotAdjacent(i, i + 1));
        }
        let len = step_length(dc, dr) * map.meta.cell_size;
        let cot = cot_at(map, rules, w[1])?;
        cost += 0.5 * (prev_cot + cot) * len;
        dist += len;
        prev_cot = cot;
    }
    Ok((cost, dist))
}

fn step_length(dc: i64, dr: i64) -> f64 {
    if dc != 0 && dr != 0 {
        std::f64::consts::SQRT_2
    } else {
        1.0
    }
}

/// Heap entry ordered by `(key, index)` ascending.
#[derive(Clone, Copy, PartialEq)]
struct Entry {
    key: f64,
    node: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.key.total_cmp(&self.key).then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Allowed-cell COTs under the rules, row-major.
fn effective_cots(map: &GlobalBevMap, rules: &CostRules) -> Vec<Option<f64>> {
    map.cot.iter().map(|v| rules.cell_cot(*v)).collect()
}

struct Search<'a> {
    map: &'a GlobalBevMap,
    rules: CostRules,
    cots: Vec<Option<f64>>,
}

impl<'a> Search<'a> {
    fn new(map: &'a GlobalBevMap, rules: CostRules) -> Result<Self> {
        rules.validate()?;
        Ok(Self { map, rules, cots: effective_cots(map, &rules) })
    }

    fn neighbors(&self, node: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let cols = self.map.meta.cols as i64;
        let rows = self.map.meta.rows as i64;
        let (c, r) = ((node as i64) % cols, (node as i64) / cols);
        let here = self.cots[node];
        self.rules.steps().iter().filter_map(move |&(dc, dr)| {
            let (nc, nr) = (c + dc, r + dr);
            if nc < 0 || nr < 0 || nc >= cols || nr >= rows {
                return None;
            }
            let next = (nr * cols + nc) as usize;
            let cost = 0.5 * (here? + self.cots[next]?) * step_length(dc, dr) * self.map.meta.cell_size;
            Some((next, cost))
        })
    }

    /// Best-first search from `start`; `h` is added to the priority.
    /// Returns (cost-to-come, parents) once `goal` settles, or for the
    /// whole graph when `goal` is `None`.
    fn run(&self, start: usize, goal: Option<usize>, h: impl Fn(usize) -> f64) -> (Vec<f64>, Vec<usize>) {
        let n = self.cots.len();
        let mut g = vec![f64::INFINITY; n];
        let mut parent = vec![usize::MAX; n];
        let mut closed = vec![false; n];
        let mut heap = BinaryHeap::new();
        g[start] = 0.0;
        heap.push(Entry { key: h(start), node: start });
        while let Some(Entry { node, .. }) = heap.pop() {
            if closed[node] {
                continue;
            }
            closed[node] = true;
            if Some(node) == goal {
                break;
            }
            for (next, cost) in self.neighbors(node) {
                let cand = g[node] + cost;
                if !closed[next] && cand < g[next] {
                    g[next] = cand;
                    parent[next] = node;
                    heap.push(Entry { key: cand + h(next), node: next });
                }
            }
        }
        (g, parent)
    }

    fn endpoints(&self, problem: &PlanProblem) -> Result<(usize, usize)> {
        let mut ids = [0; 2];
        for (slot, p) in ids.iter_mut().zip([problem.start, problem.goal]) {
            let (c, r) = self.map.cell_of(&p)?;
            let i = self.map.index(c, r);
            if self.cots[i].is_none() {
                return Err(Error::ForbiddenCell { col: c, row: r });
            }
            *slot = i;
        }
        Ok((ids[0], ids[1]))
    }

    fn finish(&self, start: usize, goal: usize, g: &[f64], parent: &[usize]) -> Result<PathResult> {
        if !g[goal].is_finite() {
            return Err(Error::Unreachable);
        }
        let cols = self.map.meta.cols;
        let mut cells = vec![(goal % cols, goal / cols)];
        let mut node = goal;
        while node != start {
            node = parent[node];
            cells.push((node % cols, node / cols));
        }
        cells.reverse();
        let (total_cost, total_distance) = path_cost(self.map, &cells, &self.rules)?;
        Ok(PathResult { cells, total_cost, total_distance })
    }
}

/// Smallest COT any passable cell can have; scales the A* heuristic.
fn min_cot(search: &Search) -> f64 {
    search.cots.iter().flatten().copied().fold(f64::INFINITY, f64::min)
}

/// Admissible, consistent A* heuristic: min COT times straight-line
/// distance between cell centers.
pub fn heuristic(map: &GlobalBevMap, rules: &CostRules, cell: (usize, usize), goal: (usize, usize)) -> Result<f64> {
    let search = Search::new(map, *rules)?;
    Ok(min_cot(&search) * (map.cell_center(cell.0, cell.1) - map.cell_center(goal.0, goal.1)).norm())
}

/// Minimum-cost path by A*. Ties pop in `(priority, cell index)` order.
pub fn astar_plan(problem: &PlanProblem) -> Result<PathResult> {
    let search = Search::new(problem.map, problem.rules)?;
    let (start, goal) = search.endpoints(problem)?;
    let scale = min_cot(&search);
    let map = problem.map;
    let cols = map.meta.cols;
    let goal_xy = map.cell_center(goal % cols, goal / cols);
    let h = |n: usize| scale * (map.cell_center(n % cols, n / cols) - goal_xy).norm();
    let (g, parent) = search.run(start, Some(goal), h);
    search.finish(start, goal, &g, &parent)
}

/// Exhaustive Dijkstra; the optimality oracle for [`astar_plan`].
pub fn dijkstra_oracle(problem: &PlanProblem) -> Result<PathResult> {
    let search = Search::new(problem.map, problem.rules)?;
    let (start, goal) = search.endpoints(problem)?;
    let (g, parent) = search.run(start, None, |_| 0.0);
    search.finish(start, goal, &g, &parent)
}

/// Minimum cost from every cell to `source` (row-major, `+∞` where
/// unreachable). Step costs are symmetric, so this is also the cost to go.
pub fn cost_field(map: &GlobalBevMap, rules: &CostRules, source: (usize, usize)) -> Result<Vec<f64>> {
    let search = Search::new(map, *rules)?;
    let s = map.index(source.0, source.1);
    if search.cots[s].is_none() {
        return Err(Error::ForbiddenCell { col: source.0, row: source.1 });
    }
    Ok(search.run(s, None, |_| 0.0).0)
}

/// Shortest route over the same passable cells, priced with real COT.
pub fn shortest_distance_plan(problem: &PlanProblem) -> Result<PathResult> {
    let search = Search::new(problem.map, problem.rules)?;
    let (start, goal) = search.endpoints(problem)?;
    let unit = Search { map: search.map, rules: search.rules, cots: search.cots.iter().map(|c| c.map(|_| 1.0)).collect() };
    let cols = problem.map.meta.cols;
    let goal_xy = problem.map.cell_center(goal % cols, goal / cols);
    let h = |n: usize| (problem.map.cell_center(n % cols, n / cols) - goal_xy).norm();
    let (g, parent) = unit.run(start, Some(goal), h);
    search.finish(start, goal, &g, &parent)
}

/// `x,y` world coordinates of cell centers, one row per cell.
pub fn path_csv(map: &GlobalBevMap, path: &PathResult) -> String {
    let mut s = String::from("x,y\n");
    for &(c, r) in &path.cells {
        let p = map.cell_center(c, r);
        s.push_str(&format!("{},{}\n", p.x, p.y));
    }
    s
}

/// Colormapped map as interleaved RGB with +y up, with paths drawn over it.
pub fn render_map_rgb(map: &GlobalBevMap, colormap: &Colormap, paths: &[(&PathResult, [u8; 3])]) -> Vec<u8> {
    let (cols, rows) = (map.meta.cols, map.meta.rows);
    let mut rgb = vec![0u8; cols * rows * 3];
    let pixel = |c: usize, r: usize| ((rows - 1 - r) * cols + c) * 3;
    for r in 0..rows {
        for c in 0..cols {
            let p = pixel(c, r);
            rgb[p..p + 3].copy_from_slice(&cot_color(map.cot[map.index(c, r)], colormap));
        }
    }
    for (path, color) in paths {
        for &(c, r) in &path.cells {
            let p = pixel(c, r);
            rgb[p..p + 3].copy_from_slice(color);
        }
    }
    rgb
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bev::GridMeta;

    fn uniform(cols: usize, rows: usize, cot: f64) -> GlobalBevMap {
        let mut m = GlobalBevMap::new(GridMeta { origin: [0.0, 0.0], cell_size: 1.0, rows, cols }).unwrap();
        m.cot.iter_mut().for_each(|v| *v = cot);
        m
    }

    fn center(c: usize, r: usize) -> Vec2 {
        Vec2::new(c as f64 + 0.5, r as f64 + 0.5)
    }

    #[test]
    fn cost_examples() {
        let rules = CostRules::default();
        let m = uniform(4, 4, 1.0);
        assert_eq!(path_cost(&m, &[(0, 0), (1, 0), (2, 0)], &rules).unwrap(), (2.0, 2.0));
        let m2 = uniform(4, 4, 2.0);
        let (c, d) = path_cost(&m2, &[(0, 0), (1, 1)], &rules).unwrap();
        assert!((c - 2.0 * 2f64.sqrt()).abs() < 1e-15 && (d - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(path_cost(&m, &[(2, 2)], &rules).unwrap(), (0.0, 0.0));
        assert!(matches!(path_cost(&m, &[(0, 0), (2, 0)], &rules), Err(Error::NotAdjacent(0, 1))));
        let four = CostRules { connectivity: Connectivity::Four, ..rules };
        assert!(path_cost(&m, &[(0, 0), (1, 1)], &four).is_err());
    }

    #[test]
    fn unknown_and_hard_forbid() {
        let mut m = uniform(3, 1, 1.0);
        m.cot[1] = 0.0;
        let p = PlanProblem { map: &m, start: center(0, 0), goal: center(2, 0), rules: CostRules::default() };
        assert!(matches!(astar_plan(&p), Err(Error::Unreachable)));
        assert!(matches!(dijkstra_oracle(&p), Err(Error::Unreachable)));
        let pen = PlanProblem { rules: CostRules { unknown_policy: UnknownPolicy::Penalty { cot: 3.0 }, ..p.rules }, ..p };
        assert_eq!(astar_plan(&pen).unwrap().total_cost, 4.0);
        m.cot[1] = 10.0;
        let p = PlanProblem { map: &m, start: center(0, 0), goal: center(2, 0), rules: CostRules::default() };
        assert_eq!(astar_plan(&p).unwrap().total_cost, 11.0);
        let strict = PlanProblem { rules: CostRules { hard_forbid: Some(10.0), ..p.rules }, ..p };
        assert!(astar_plan(&strict).is_err());
    }

    #[test]
    fn uniform_map_matches_geometry() {
        let m = uniform(10, 7, 1.5);
        let p = PlanProblem { map: &m, start: center(1, 1), goal: center(8, 4), rules: CostRules::default() };
        let a = astar_plan(&p).unwrap();
        let d = dijkstra_oracle(&p).unwrap();
        // octile distance: 3 diagonal + 4 straight steps
        let expect = 1.5 * (3.0 * 2f64.sqrt() + 4.0);
        assert!((a.total_cost - expect).abs() < 1e-12);
        assert!((a.total_cost - d.total_cost).abs() < 1e-12);
        let single = PlanProblem { goal: p.start, ..p };
        let s = astar_plan(&single).unwrap();
        assert_eq!((s.cells.len(), s.total_cost, s.total_distance), (1, 0.0, 0.0));
    }

    #[test]
    fn heuristic_is_admissible() {
        let mut m = uniform(12, 9, 1.0);
        for (i, v) in m.cot.iter_mut().enumerate() {
            *v = 0.5 + ((i * 7919) % 13) as f64 / 8.0;
        }
        let rules = CostRules::default();
        let goal = (9, 6);
        let field = cost_field(&m, &rules, goal).unwrap();
        for r in 0..9 {
            for c in 0..12 {
                assert!(heuristic(&m, &rules, (c, r), goal).unwrap() <= field[m.index(c, r)] + 1e-12);
            }
        }
    }

    #[test]
    fn shortest_route_is_priced_with_cot() {
        let mut m = uniform(5, 3, 0.7);
        for c in 0..5 {
            let i = m.index(c, 1);
            m.cot[i] = 1.8;
        }
        let p = PlanProblem {
            map: &m,
            start: center(0, 1),
            goal: center(4, 1),
            rules: CostRules { connectivity: Connectivity::Four, ..CostRules::default() },
        };
        let short = shortest_distance_plan(&p).unwrap();
        assert_eq!(short.total_distance, 4.0);
        assert!((short.total_cost - 7.2).abs() < 1e-12);
        let best = astar_plan(&p).unwrap();
        assert!(best.total_cost < short.total_cost);
        assert!(best.total_distance > short.total_distance);
    }

    #[test]
    fn csv_and_image() {
        let m = uniform(2, 2, 1.0);
        let path = PathResult { cells: vec![(0, 0), (1, 1)], total_cost: 0.0, total_distance: 0.0 };
        assert_eq!(path_csv(&m, &path), "x,y\n0.5,0.5\n1.5,1.5\n");
        let rgb = render_map_rgb(&m, &Colormap::default(), &[(&path, [255, 0, 0])]);
        // bottom-left pixel is cell (0, 0)
        assert_eq!(&rgb[6..9], &[255, 0, 0]);
        assert_eq!(&rgb[3..6], &[255, 0, 0]);
    }
}
