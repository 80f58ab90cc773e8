
use crate::error::{Error, Result};

/// Capped radius neighborhoods, one row of `nmax` slots per anchor.
///
/// Slot 0 of every row is the anchor itself. Valid slots follow in order of
/// increasing distance (ties by index); unused slots are padding with index
/// 0 and zero relative position.
#[derive(Clone, Debug, PartialEq)]
pub struct Neighborhood {
    pub n: usize,
    pub nmax: usize,
    pub indices: Vec<usize>,
    pub valid: Vec<bool>,
    /// `p_anchor − p_neighbor`, meters.
    pub rel_pos: Vec<[f64; 2]>,
}

impl Neighborhood {
    pub fn slot(&self, i: usize, k: usize) -> (usize, bool, [f64; 2]) {
        let at = i * self.nmax + k;
        (self.indices[at], self.valid[at], self.rel_pos[at])
    }

    pub fn valid_count(&self, i: usize) -> usize {
        self.valid[i * self.nmax..(i + 1) * self.nmax].iter().filter(|&&v| v).count()
    }

    /// Valid neighbor indices of an anchor, in slot order.
    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        (0..self.nmax)
            .filter(|&k| self.valid[i * self.nmax + k])
            .map(|k| self.indices[i * self.nmax + k])
            .collect()
    }

    /// Largest number of valid slots in any row.
    pub fn max_population(&self) -> usize {
        (0..self.n).map(|i| self.valid_count(i)).max().unwrap_or(0)
    }
}

fn check(points: &[[f64; 2]], radius: f64, nmax: usize) -> Result<()> {
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(Error::InvalidArgument(format!("radius must be positive, got {radius}")));
    }
    if nmax == 0 {
        return Err(Error::InvalidArgument("nmax must be at least 1".into()));
    }
    if points.is_empty() {
        return Err(Error::InvalidArgument("ball query needs at least one point".into()));
    }
    if let Some(i) = points.iter().position(|p| !p[0].is_finite() || !p[1].is_finite()) {
        return Err(Error::InvalidArgument(format!("point {i} has non-finite coordinates")));
    }
    Ok(())
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

/// Fills the rows from per-anchor candidate lists `(d², index)` that exclude
/// the anchor itself.
fn assemble(points: &[[f64; 2]], nmax: usize, mut candidates: impl FnMut(usize, &mut Vec<(f64, usize)>)) -> Neighborhood {
    let n = points.len();
    let mut nb = Neighborhood {
        n,
        nmax,
        indices: vec![0; n * nmax],
        valid: vec![false; n * nmax],
        rel_pos: vec![[0.0; 2]; n * nmax],
    };
    let mut cand = Vec::new();
    for i in 0..n {
        cand.clear();
        candidates(i, &mut cand);
        // Squared distances are non-negative, so their bit patterns order
        // like the values; (distance, index) keys are unique, so unstable
        // ordering is exact.
        let key = |c: &(f64, usize)| (c.0.to_bits(), c.1);
        if cand.len() > nmax - 1 {
            cand.select_nth_unstable_by_key(nmax - 1, key);
            cand.truncate(nmax - 1);
        }
        cand.sort_unstable_by_key(key);
        let row = i * nmax;
        nb.indices[row] = i;
        nb.valid[row] = true;
        for (k, &(_, j)) in cand.iter().take(nmax - 1).enumerate() {
            nb.indices[row + k + 1] = j;
            nb.valid[row + k + 1] = true;
            nb.rel_pos[row + k + 1] = [points[i][0] - points[j][0], points[i][1] - points[j][1]];
        }
    }
    nb
}

/// Points bucketed into square cells at least `radius` wide, stored CSR
/// style. Cells grow past `radius` only when the bounding box would need
/// far more cells than there are points.
struct Grid {
    origin: [f64; 2],
    cell: f64,
    nx: usize,
    ny: usize,
    start: Vec<usize>,
    items: Vec<usize>,
    /// Coordinates in `items` order.
    coords: Vec<[f64; 2]>,
}

impl Grid {
    fn new(points: &[[f64; 2]], radius: f64) -> Self {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in points {
            for a in 0..2 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let budget = 4 * points.len() + 64;
        let mut cell = radius;
        let dims = |cell: f64| {
            if !cell.is_finite() {
                return (1.0, 1.0);
            }
            let nx = ((hi[0] - lo[0]) / cell).floor() + 1.0;
            let ny = ((hi[1] - lo[1]) / cell).floor() + 1.0;
            (nx, ny)
        };
        while {
            let (nx, ny) = dims(cell);
            nx * ny > budget as f64
        } {
            cell *= 2.0;
        }
        let (nx, ny) = dims(cell);
        let mut g = Grid {
            origin: lo,
            cell,
            nx: nx as usize,
            ny: ny as usize,
            start: vec![0; nx as usize * ny as usize + 1],
            items: vec![0; points.len()],
            coords: Vec::new(),
        };
        let keys: Vec<usize> = points.iter().map(|&p| g.key(p)).collect();
        for &k in &keys {
            g.start[k + 1] += 1;
        }
        for k in 0..g.nx * g.ny {
            g.start[k + 1] += g.start[k];
        }
        let mut fill = g.start.clone();
        for (i, &k) in keys.iter().enumerate() {
            g.items[fill[k]] = i;
            fill[k] += 1;
        }
        g.coords = g.items.iter().map(|&i| points[i]).collect();
        g
    }

    fn cell_of(&self, p: [f64; 2]) -> (usize, usize) {
        let x = ((p[0] - self.origin[0]) / self.cell).floor() as usize;
        let y = ((p[1] - self.origin[1]) / self.cell).floor() as usize;
        (x.min(self.nx - 1), y.min(self.ny - 1))
    }

    fn key(&self, p: [f64; 2]) -> usize {
        let (x, y) = self.cell_of(p);
        y * self.nx + x
    }

    /// Slot range of cells `x0..=x1` in row `y`, contiguous in CSR order.
    fn row_span(&self, y: usize, x0: usize, x1: usize) -> std::ops::Range<usize> {
        self.start[y * self.nx + x0]..self.start[y * self.nx + x1 + 1]
    }
}

/// Ball query over a uniform grid with cells at least `radius` wide.
pub fn ball_query(points: &[[f64; 2]], radius: f64, nmax: usize) -> Result<Neighborhood> {
    check(points, radius, nmax)?;
    let r2 = radius * radius;
    let grid = Grid::new(points, radius);
    Ok(assemble(points, nmax, |i, cand| {
        let (cx, cy) = grid.cell_of(points[i]);
        let (x0, x1) = (cx.saturating_sub(1), (cx + 1).min(grid.nx - 1));
        for y in cy.saturating_sub(1)..=(cy + 1).min(grid.ny - 1) {
            let span = grid.row_span(y, x0, x1);
            for (&j, &q) in grid.items[span.clone()].iter().zip(&grid.coords[span]) {
                let d2 = dist2(points[i], q);
                if d2 <= r2 && j != i {
                    cand.push((d2, j));
                }
            }
        }
    }))
}

/// Exhaustive O(N²) ball query with the same selection rule.
pub fn ball_query_brute_force(points: &[[f64; 2]], radius: f64, nmax: usize) -> Result<Neighborhood> {
    check(points, radius, nmax)?;
    let r2 = radius * radius;
    Ok(assemble(points, nmax, |i, cand| {
        for (j, &p) in points.iter().enumerate() {
            if j != i {
                let d2 = dist2(points[i], p);
                if d2 <= r2 {
                    cand.push((d2, j));
                }
            }
        }
    }))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn three_points_on_a_line() {
        let pts = [[0.0, 0.0], [3.0, 0.0], [10.0, 0.0]];
        let nb = ball_query(&pts, 5.0, 24).unwrap();
        assert_eq!(nb.neighbors(0), vec![0, 1]);
        assert_eq!(nb.neighbors(1), vec![1, 0]);
        assert_eq!(nb.neighbors(2), vec![2]);
        assert_eq!(nb.slot(0, 1).2, [-3.0, 0.0]);
    }

    #[test]
    fn radius_is_inclusive() {
        let pts = [[0.0, 0.0], [5.0, 0.0]];
        let nb = ball_query(&pts, 5.0, 4).unwrap();
        assert_eq!(nb.neighbors(0), vec![0, 1]);
    }

    #[test]
    fn single_point_pads_the_rest() {
        let nb = ball_query(&[[1.0, 1.0]], 5.0, 24).unwrap();
        assert_eq!(nb.valid_count(0), 1);
        assert!(nb.indices[1..].iter().all(|&i| i == 0));
        assert!(nb.rel_pos.iter().all(|r| *r == [0.0, 0.0]));
    }

    #[test]
    fn keeps_the_nearest_when_capped() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<[f64; 2]> = (0..30)
            .map(|_| [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)])
            .collect();
        let nb = ball_query(&pts, 6.0, 24).unwrap();
        for i in 0..30 {
            let mut d: Vec<(f64, usize)> = (0..30).filter(|&j| j != i).map(|j| (dist2(pts[i], pts[j]), j)).collect();
            d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut expected = vec![i];
            expected.extend(d.iter().take(23).map(|x| x.1));
            assert_eq!(nb.neighbors(i), expected);
        }
    }

    #[test]
    fn wide_extent_matches_brute_force() {
        let pts = [[0.0, 0.0], [0.5, 0.0], [1e6, -3e5], [1e6 + 0.9, -3e5], [-1e300, 1e300], [1e300, 0.0]];
        assert_eq!(ball_query(&pts, 1.0, 3).unwrap(), ball_query_brute_force(&pts, 1.0, 3).unwrap());
    }

    #[test]
    fn invalid_arguments() {
        assert!(ball_query(&[[0.0, 0.0]], 0.0, 4).is_err());
        assert!(ball_query(&[[0.0, 0.0]], 1.0, 0).is_err());
        assert!(ball_query(&[], 1.0, 4).is_err());
        assert!(ball_query(&[[f64::NAN, 0.0]], 1.0, 4).is_err());
    }

    proptest! {
        #[test]
        fn grid_matches_brute_force(
            pts in prop::collection::vec((-20.0f64..20.0, -20.0f64..20.0), 1..60),
            radius in 0.5f64..8.0,
            nmax in 1usize..30,
        ) {
            let pts: Vec<[f64; 2]> = pts.into_iter().map(|(x, y)| [x, y]).collect();
            let a = ball_query(&pts, radius, nmax).unwrap();
            let b = ball_query_brute_force(&pts, radius, nmax).unwrap();
            prop_assert_eq!(&a, &b);
            for i in 0..pts.len() {
                let c = a.valid_count(i);
                prop_assert!(c >= 1 && c <= nmax);
                let nbrs = a.neighbors(i);
                let mut dedup = nbrs.clone();
                dedup.sort();
                dedup.dedup();
                prop_assert_eq!(dedup.len(), nbrs.len());
                for j in nbrs {
                    prop_assert!(dist2(pts[i], pts[j]) <= radius * radius);
                }
            }
        }
    }
}
