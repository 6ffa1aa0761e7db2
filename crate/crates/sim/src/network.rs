use firewatch_core::Location;

pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

/// Great-circle distance in metres (haversine).
pub fn distance_m(a: Location, b: Location) -> f64 {
    let (p1, p2) = (a.lat.to_radians(), b.lat.to_radians());
    let dp = p2 - p1;
    let dl = (b.lon - a.lon).to_radians();
    let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// Point `distance_m` metres from `from` along initial bearing `bearing_deg`.
pub fn destination(from: Location, bearing_deg: f64, distance_m: f64) -> Location {
    let d = distance_m / EARTH_RADIUS_M;
    let th = bearing_deg.to_radians();
    let p1 = from.lat.to_radians();
    let l1 = from.lon.to_radians();
    let p2 = (p1.sin() * d.cos() + p1.cos() * d.sin() * th.cos()).asin();
    let l2 = l1 + (th.sin() * d.sin() * p1.cos()).atan2(d.cos() - p1.sin() * p2.sin());
    Location {
        lat: p2.to_degrees(),
        lon: (l2.to_degrees() + 540.0) % 360.0 - 180.0,
    }
}

/// Undirected radio-range graph. Adjacency lists are sorted by node index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborGraph {
    adj: Vec<Vec<usize>>,
}

impl NeighborGraph {
    pub fn build(positions: &[Location], radius_m: f64) -> Self {
        let mut adj = vec![Vec::new(); positions.len()];
        for i in 0..positions.len() {
            for j in i + 1..positions.len() {
                if distance_m(positions[i], positions[j]) <= radius_m {
                    adj[i].push(j);
                    adj[j].push(i);
                }
            }
        }
        Self { adj }
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.adj[node]
    }

    pub fn len(&self) -> usize {
        self.adj.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adj.is_empty()
    }

    /// Hop distance from every node to the nearest node in `targets`.
    pub fn hops_to(&self, targets: &[usize]) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.adj.len()];
        let mut queue = std::collections::VecDeque::new();
        for &t in targets {
            dist[t] = Some(0);
            queue.push_back(t);
        }
        while let Some(u) = queue.pop_front() {
            let d = dist[u].unwrap();
            for &v in &self.adj[u] {
                if dist[v].is_none() {
                    dist[v] = Some(d + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }
}
