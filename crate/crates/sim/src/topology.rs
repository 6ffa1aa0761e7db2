//! Random connected topologies for batch testing.

use chrono::{TimeZone, Utc};
use firewatch_core::{DeviceId, Location};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::network::{destination, NeighborGraph};
use crate::scenario::{CoverageSchedule, EnvironmentSpec, NodeSpec, Scenario};

#[derive(Debug, Clone)]
pub struct TopologyParams {
    pub max_nodes: usize,
    pub ttl: u8,
    pub radius_m: f64,
    pub cycles: u64,
    pub period_seconds: u32,
    pub key_pool_size: usize,
    pub noise: f64,
}

impl Default for TopologyParams {
    fn default() -> Self {
        Self {
            max_nodes: 20,
            ttl: 8,
            radius_m: 200.0,
            cycles: 6,
            period_seconds: 300,
            key_pool_size: 8,
            noise: 0.02,
        }
    }
}

/// Builds a connected network of 2..=`max_nodes` nodes: each new node lands
/// 40-190 m from a random earlier one. Uplink coverage is static; extra
/// nodes get coverage until every node is within `ttl` hops of one. Each
/// node reports its own area so its timestamps never collide with another
/// node's.
pub fn random_scenario(seed: u64, p: &TopologyParams) -> Scenario {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=p.max_nodes.max(2));
    let mut positions = vec![Location {
        lat: 40.0 + rng.random::<f64>(),
        lon: -4.0 + rng.random::<f64>(),
    }];
    while positions.len() < n {
        let anchor = positions[rng.random_range(0..positions.len())];
        positions.push(destination(
            anchor,
            rng.random_range(0.0..360.0),
            rng.random_range(40.0..190.0),
        ));
    }
    let graph = NeighborGraph::build(&positions, p.radius_m);

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut covered = order[..rng.random_range(1..=(n / 4).max(1))].to_vec();
    loop {
        let hops = graph.hops_to(&covered);
        let worst = (0..n)
            .max_by_key(|&i| (hops[i].unwrap_or(usize::MAX), i))
            .unwrap();
        if hops[worst].is_some_and(|h| h <= usize::from(p.ttl)) {
            break;
        }
        covered.push(worst);
    }

    let mut ids = std::collections::BTreeSet::new();
    while ids.len() < n {
        ids.insert(format!(
            "35{:013}",
            rng.random_range(0..10_000_000_000_000u64)
        ));
    }
    let mut ids: Vec<String> = ids.into_iter().collect();
    ids.shuffle(&mut rng);

    let nodes = (0..n)
        .map(|i| NodeSpec {
            device_id: DeviceId::new(ids[i].clone()).expect("generated ids are 15 digits"),
            area: format!("cell-{i:02}"),
            lat: positions[i].lat,
            lon: positions[i].lon,
            battery: rng.random_range(20.0..100.0),
            period_seconds: None,
            phase_seconds: rng.random_range(0..p.period_seconds),
            coverage: if covered.contains(&i) {
                CoverageSchedule::always()
            } else {
                CoverageSchedule::never()
            },
        })
        .collect();

    Scenario {
        name: Some(format!("random-{seed}")),
        seed,
        start: Utc.with_ymd_and_hms(2026, 7, 15, 6, 0, 0).unwrap(),
        duration_seconds: p.cycles * u64::from(p.period_seconds),
        period_seconds: p.period_seconds,
        neighbor_radius_m: p.radius_m,
        ttl: p.ttl,
        hop_latency_ms: 50,
        key_pool_size: p.key_pool_size,
        nodes,
        environment: EnvironmentSpec {
            noise: p.noise,
            ..Default::default()
        },
        actions: Vec::new(),
        base_dir: Default::default(),
    }
}
