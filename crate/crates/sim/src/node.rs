use std::collections::{HashSet, VecDeque};
use std::sync::Arc;

use chrono::NaiveDate;
use firewatch_core::{DeviceId, Location};
use firewatch_crypto::PackageId;

/// An envelope in flight with its routing header. The envelope bytes are
/// the originator's and are never re-signed by relays.
#[derive(Debug, Clone)]
pub struct DataPackage {
    pub package_id: PackageId,
    pub origin: usize,
    pub ttl: u8,
    pub envelope: Arc<[u8]>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Decision {
    DeliverUplink,
    Forward(Vec<usize>),
    DropDuplicate,
    DropTtl,
    Buffer,
}

#[derive(Debug, Clone)]
pub struct NodeState {
    pub index: usize,
    pub device_id: DeviceId,
    pub area_id: String,
    pub location: Location,
    pub battery: f64,
    pub period_seconds: u32,
    pub seen: HashSet<PackageId>,
    pub buffer: VecDeque<DataPackage>,
    pub day: Option<NaiveDate>,
}

impl NodeState {
    pub fn new(
        index: usize,
        device_id: DeviceId,
        area_id: String,
        location: Location,
        battery: f64,
        period_seconds: u32,
    ) -> Self {
        Self {
            index,
            device_id,
            area_id,
            location,
            battery,
            period_seconds,
            seen: HashSet::new(),
            buffer: VecDeque::new(),
            day: None,
        }
    }

    /// Flooding decision for a package arriving from `from` (`None` when
    /// this node just originated it). Checks, in order: already seen,
    /// uplink now, no neighbour left to forward to, hop limit reached.
    pub fn handle_package(
        &mut self,
        pkg: &DataPackage,
        from: Option<usize>,
        covered: bool,
        neighbors: &[usize],
    ) -> Decision {
        if !self.seen.insert(pkg.package_id) && from.is_some() {
            return Decision::DropDuplicate;
        }
        if covered {
            return Decision::DeliverUplink;
        }
        let targets: Vec<usize> = neighbors
            .iter()
            .copied()
            .filter(|&n| Some(n) != from)
            .collect();
        if targets.is_empty() {
            Decision::Buffer
        } else if pkg.ttl == 0 {
            Decision::DropTtl
        } else {
            Decision::Forward(targets)
        }
    }

    /// Clears the seen-set when the simulated day changes.
    pub fn roll_day(&mut self, day: NaiveDate) -> bool {
        let rolled = self.day.is_some_and(|d| d != day);
        if rolled {
            self.seen.clear();
        }
        self.day = Some(day);
        rolled
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn node() -> NodeState {
        NodeState::new(
            0,
            "356938035643809".parse().unwrap(),
            "ridge".into(),
            Location { lat: 0.0, lon: 0.0 },
            90.0,
            300,
        )
    }

    fn pkg(id: u8, ttl: u8) -> DataPackage {
        DataPackage {
            package_id: PackageId([id; 16]),
            origin: 5,
            ttl,
            envelope: Arc::from(&[][..]),
        }
    }

    #[test]
    fn first_sight_with_uplink_delivers() {
        assert_eq!(
            node().handle_package(&pkg(1, 3), Some(1), true, &[1, 2]),
            Decision::DeliverUplink
        );
    }

    #[test]
    fn second_sight_is_dropped_even_with_uplink() {
        let mut n = node();
        n.handle_package(&pkg(1, 3), Some(1), false, &[1, 2]);
        assert_eq!(
            n.handle_package(&pkg(1, 3), Some(2), true, &[1, 2]),
            Decision::DropDuplicate
        );
    }

    #[test]
    fn forwards_to_all_but_sender() {
        assert_eq!(
            node().handle_package(&pkg(1, 3), Some(1), false, &[1, 2, 4]),
            Decision::Forward(vec![2, 4])
        );
        assert_eq!(
            node().handle_package(&pkg(1, 3), None, false, &[1, 2]),
            Decision::Forward(vec![1, 2])
        );
    }

    #[test]
    fn hop_limit_and_isolation() {
        assert_eq!(
            node().handle_package(&pkg(1, 0), Some(1), false, &[1, 2]),
            Decision::DropTtl
        );
        assert_eq!(
            node().handle_package(&pkg(1, 0), Some(1), false, &[1]),
            Decision::Buffer
        );
        assert_eq!(
            node().handle_package(&pkg(1, 5), None, false, &[]),
            Decision::Buffer
        );
    }

    #[test]
    fn day_rollover_clears_seen() {
        let mut n = node();
        let d1 = NaiveDate::from_ymd_opt(2026, 7, 1).unwrap();
        assert!(!n.roll_day(d1));
        n.seen.insert(PackageId([1; 16]));
        assert!(!n.roll_day(d1));
        assert_eq!(n.seen.len(), 1);
        assert!(n.roll_day(d1.succ_opt().unwrap()));
        assert!(n.seen.is_empty());
    }
}
