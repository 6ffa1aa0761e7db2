use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::sync::Arc;

use base64::Engine;
use chrono::{DateTime, Utc};
use firewatch_core::{DeviceId, Measurement};
use firewatch_crypto::envelope::PackagePayload;
use firewatch_crypto::{
    predistribute_keys, sha256, CryptoError, Envelope, NodeKeyState, PackageId, Predistribution,
    Registry,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::environment::EnvironmentModel;
use crate::link::{LinkResponse, ServiceLink};
use crate::network::NeighborGraph;
use crate::node::{DataPackage, Decision, NodeState};
use crate::scenario::{ActionSpec, Scenario, ScenarioError};
use crate::trace::{EventKind, SimTrace, TraceEvent, SERVICE_NODE};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("device {device}: {source}")]
    Crypto {
        device: DeviceId,
        source: CryptoError,
    },
    #[error("no credentials for device {0}")]
    MissingCredentials(DeviceId),
}

pub struct NodeCredentials {
    pub aes_key: [u8; 32],
    pub keys: NodeKeyState,
}

/// Deterministic key material for a scenario, derived from its seed.
pub fn generate_keys(scenario: &Scenario) -> Result<Predistribution, CryptoError> {
    let seed = sha256(&[&b"firewatch registry"[..], &scenario.seed.to_be_bytes()].concat());
    predistribute_keys(
        &scenario.device_ids(),
        scenario.key_pool_size,
        &mut ChaCha20Rng::from_seed(seed),
    )
}

impl NodeCredentials {
    pub fn from_predistribution(p: Predistribution) -> BTreeMap<DeviceId, NodeCredentials> {
        let Predistribution { registry, nodes } = p;
        nodes
            .into_iter()
            .map(|(id, keys)| {
                let aes_key = registry
                    .get(&id)
                    .expect("predistribution covers its nodes")
                    .aes_key;
                (id, NodeCredentials { aes_key, keys })
            })
            .collect()
    }

    /// Rebuilds node key pools from a registry that still holds key seeds.
    pub fn from_registry(
        registry: &Registry,
        devices: &[DeviceId],
    ) -> Result<BTreeMap<DeviceId, NodeCredentials>, SimError> {
        devices
            .iter()
            .map(|d| {
                let entry = registry
                    .get(d)
                    .ok_or_else(|| SimError::MissingCredentials(d.clone()))?;
                let keys = entry.node_keys().map_err(|source| SimError::Crypto {
                    device: d.clone(),
                    source,
                })?;
                Ok((
                    d.clone(),
                    NodeCredentials {
                        aes_key: entry.aes_key,
                        keys,
                    },
                ))
            })
            .collect()
    }
}

enum Action {
    Cycle(usize),
    Receive {
        node: usize,
        from: usize,
        pkg: DataPackage,
    },
    Operator(usize),
}

struct Pending {
    t_ms: u64,
    seq: u64,
    action: Action,
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        (self.t_ms, self.seq) == (other.t_ms, other.seq)
    }
}
impl Eq for Pending {}
impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Pending {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.t_ms, self.seq).cmp(&(other.t_ms, other.seq))
    }
}

struct Sim<'a, L: ?Sized> {
    scenario: &'a Scenario,
    env: EnvironmentModel,
    graph: NeighborGraph,
    nodes: Vec<NodeState>,
    creds: &'a mut BTreeMap<DeviceId, NodeCredentials>,
    link: &'a mut L,
    rng: ChaCha20Rng,
    queue: BinaryHeap<Reverse<Pending>>,
    next_seq: u64,
    end_ms: u64,
    trace: SimTrace,
}

/// Runs `scenario` to completion: cycles are scheduled until the scenario
/// duration elapses, then in-flight packages are drained.
pub fn run_scenario<L: ServiceLink + ?Sized>(
    scenario: &Scenario,
    creds: &mut BTreeMap<DeviceId, NodeCredentials>,
    link: &mut L,
) -> Result<SimTrace, SimError> {
    scenario.validate()?;
    for n in &scenario.nodes {
        if !creds.contains_key(&n.device_id) {
            return Err(SimError::MissingCredentials(n.device_id.clone()));
        }
    }
    let positions: Vec<_> = scenario.nodes.iter().map(|n| n.location()).collect();
    let nodes = scenario
        .nodes
        .iter()
        .enumerate()
        .map(|(i, n)| {
            NodeState::new(
                i,
                n.device_id.clone(),
                n.area.clone(),
                n.location(),
                n.battery,
                n.period_seconds.unwrap_or(scenario.period_seconds),
            )
        })
        .collect();
    let mut sim = Sim {
        scenario,
        env: scenario.environment_model()?,
        graph: NeighborGraph::build(&positions, scenario.neighbor_radius_m),
        nodes,
        creds,
        link,
        rng: ChaCha20Rng::seed_from_u64(scenario.seed),
        queue: BinaryHeap::new(),
        next_seq: 0,
        end_ms: scenario.duration_seconds * 1000,
        trace: SimTrace::default(),
    };
    let mut actions: Vec<usize> = (0..scenario.actions.len()).collect();
    actions.sort_by_key(|&i| scenario.actions[i].at_seconds());
    for i in actions {
        sim.schedule(scenario.actions[i].at_seconds() * 1000, Action::Operator(i));
    }
    for (i, n) in scenario.nodes.iter().enumerate() {
        sim.schedule(u64::from(n.phase_seconds) * 1000, Action::Cycle(i));
    }
    while let Some(Reverse(p)) = sim.queue.pop() {
        match p.action {
            Action::Cycle(i) => sim.cycle(i, p.t_ms)?,
            Action::Receive { node, from, pkg } => {
                let decision = sim.decide(node, &pkg, Some(from), p.t_ms);
                sim.apply(node, pkg, decision, p.t_ms);
            }
            Action::Operator(i) => sim.operator(i, p.t_ms),
        }
    }
    Ok(sim.trace)
}

impl<L: ServiceLink + ?Sized> Sim<'_, L> {
    fn schedule(&mut self, t_ms: u64, action: Action) {
        self.queue.push(Reverse(Pending {
            t_ms,
            seq: self.next_seq,
            action,
        }));
        self.next_seq += 1;
    }

    fn time(&self, t_ms: u64) -> DateTime<Utc> {
        self.scenario.start + chrono::Duration::milliseconds(t_ms as i64)
    }

    fn emit(&mut self, t_ms: u64, node: String, kind: EventKind) {
        let seq = self.trace.events.len() as u64;
        let time = self.time(t_ms);
        self.trace.events.push(TraceEvent {
            seq,
            t_ms,
            time,
            node,
            kind,
        });
    }

    fn node_name(&self, i: usize) -> String {
        self.nodes[i].device_id.to_string()
    }

    fn cycle(&mut self, i: usize, t_ms: u64) -> Result<(), SimError> {
        if t_ms >= self.end_ms {
            return Ok(());
        }
        let day = self.time(t_ms).date_naive();
        self.nodes[i].roll_day(day);

        if self.covered(i, t_ms) {
            let retry: Vec<DataPackage> = self.nodes[i].buffer.drain(..).collect();
            for pkg in retry {
                let origin = self.node_name(pkg.origin);
                self.emit(
                    t_ms,
                    self.node_name(i),
                    EventKind::Retried {
                        package: pkg.package_id,
                        origin,
                    },
                );
                self.uplink(i, &pkg, t_ms);
            }
        }

        let pkg = self.measure(i, t_ms)?;
        let decision = self.decide(i, &pkg, None, t_ms);
        if !matches!(decision, Decision::DeliverUplink | Decision::Buffer) {
            // Store-and-carry: the originator keeps a copy for its next contact.
            let origin = self.node_name(i);
            self.emit(
                t_ms,
                origin.clone(),
                EventKind::Buffered {
                    package: pkg.package_id,
                    origin,
                },
            );
            self.nodes[i].buffer.push_back(pkg.clone());
        }
        self.apply(i, pkg, decision, t_ms);

        let next = t_ms + u64::from(self.nodes[i].period_seconds) * 1000;
        self.schedule(next, Action::Cycle(i));
        Ok(())
    }

    fn covered(&self, i: usize, t_ms: u64) -> bool {
        self.scenario.nodes[i].coverage.covered_at(t_ms)
    }

    fn measure(&mut self, i: usize, t_ms: u64) -> Result<DataPackage, SimError> {
        let node = &self.nodes[i];
        let t_s = t_ms as f64 / 1000.0;
        let readings = self.env.sample(&node.area_id, t_s, &mut self.rng);
        let measurement = Measurement {
            device_id: node.device_id.clone(),
            area_id: node.area_id.clone(),
            timestamp: self.scenario.start + chrono::Duration::seconds((t_ms / 1000) as i64),
            location: node.location,
            battery: node.battery,
            readings,
        };
        let payload = PackagePayload {
            package_id: PackageId::random(&mut self.rng),
            measurement,
        };
        let iv: [u8; 16] = self.rng.random();
        let device = node.device_id.clone();
        let creds = self
            .creds
            .get_mut(&device)
            .ok_or_else(|| SimError::MissingCredentials(device.clone()))?;
        let env =
            Envelope::seal(&mut creds.keys, &creds.aes_key, iv, &payload).map_err(|source| {
                SimError::Crypto {
                    device: device.clone(),
                    source,
                }
            })?;
        let bytes: Arc<[u8]> = env.to_bytes().into();
        self.emit(
            t_ms,
            device.to_string(),
            EventKind::Measured {
                package: payload.package_id,
                area: node.area_id.clone(),
                ttl: self.scenario.ttl,
                key_index: env.key_index(),
                envelope: base64::engine::general_purpose::STANDARD.encode(&bytes),
            },
        );
        Ok(DataPackage {
            package_id: payload.package_id,
            origin: i,
            ttl: self.scenario.ttl,
            envelope: bytes,
        })
    }

    fn decide(&mut self, i: usize, pkg: &DataPackage, from: Option<usize>, t_ms: u64) -> Decision {
        let covered = self.covered(i, t_ms);
        let Self { nodes, graph, .. } = self;
        nodes[i].handle_package(pkg, from, covered, graph.neighbors(i))
    }

    fn apply(&mut self, i: usize, pkg: DataPackage, decision: Decision, t_ms: u64) {
        let node = self.node_name(i);
        let origin = self.node_name(pkg.origin);
        let package = pkg.package_id;
        match decision {
            Decision::DeliverUplink => self.uplink(i, &pkg, t_ms),
            Decision::Forward(targets) => {
                let ttl = pkg.ttl - 1;
                let to = targets.iter().map(|&t| self.node_name(t)).collect();
                self.emit(
                    t_ms,
                    node,
                    EventKind::Forwarded {
                        package,
                        origin,
                        ttl,
                        to,
                    },
                );
                let at = t_ms + u64::from(self.scenario.hop_latency_ms);
                for t in targets {
                    let relayed = DataPackage { ttl, ..pkg.clone() };
                    self.schedule(
                        at,
                        Action::Receive {
                            node: t,
                            from: i,
                            pkg: relayed,
                        },
                    );
                }
            }
            Decision::DropDuplicate => {
                self.emit(t_ms, node, EventKind::DroppedDuplicate { package, origin })
            }
            Decision::DropTtl => self.emit(t_ms, node, EventKind::DroppedTtl { package, origin }),
            Decision::Buffer => {
                self.emit(t_ms, node, EventKind::Buffered { package, origin });
                self.nodes[i].buffer.push_back(pkg);
            }
        }
    }

    fn uplink(&mut self, i: usize, pkg: &DataPackage, t_ms: u64) {
        let via = self.node_name(i);
        let origin = self.node_name(pkg.origin);
        let package = pkg.package_id;
        self.emit(
            t_ms,
            via.clone(),
            EventKind::SentUplink {
                package,
                origin: origin.clone(),
            },
        );
        let now = self.time(t_ms);
        let service = SERVICE_NODE.to_string();
        match self.link.deliver(now, &pkg.envelope) {
            LinkResponse::Accepted { assessment, alerts } => {
                self.emit(
                    t_ms,
                    service.clone(),
                    EventKind::Delivered {
                        package,
                        origin,
                        via,
                    },
                );
                if let Some(a) = assessment {
                    self.emit(
                        t_ms,
                        service.clone(),
                        EventKind::Assessed {
                            package,
                            area: a.area,
                            level: a.level,
                            percentage: a.percentage,
                            window: a.window,
                            samples_averaged: a.samples_averaged,
                            declaration_active: a.declaration_active,
                        },
                    );
                }
                for a in alerts {
                    self.emit(
                        t_ms,
                        service.clone(),
                        EventKind::Alert {
                            area: a.area,
                            alert_id: a.alert_id,
                            level: a.level,
                            change: a.change,
                        },
                    );
                }
            }
            LinkResponse::Duplicate => self.emit(
                t_ms,
                service,
                EventKind::DroppedDuplicate { package, origin },
            ),
            LinkResponse::Rejected { status, reason } => self.emit(
                t_ms,
                service,
                EventKind::Rejected {
                    package,
                    origin,
                    via,
                    status,
                    reason,
                },
            ),
        }
        let device = self.nodes[i].device_id.clone();
        if let Some(period) = self.link.poll_frequency(now, &device) {
            self.nodes[i].period_seconds = period;
            self.emit(
                t_ms,
                device.to_string(),
                EventKind::FrequencyApplied {
                    period_seconds: period,
                },
            );
        }
    }

    fn operator(&mut self, i: usize, t_ms: u64) {
        let action = self.scenario.actions[i].clone();
        let now = self.time(t_ms);
        let result = match &action {
            ActionSpec::Declare {
                area,
                level,
                ttl_seconds,
                ..
            } => self.link.declare(
                now,
                area,
                *level,
                std::time::Duration::from_secs(*ttl_seconds),
            ),
            ActionSpec::SetFrequency {
                device_id,
                period_seconds,
                ..
            } => self.link.set_frequency(now, device_id, *period_seconds),
        };
        let ok = result.is_ok();
        self.emit(
            t_ms,
            "operator".into(),
            EventKind::OperatorAction {
                action,
                ok,
                error: result.err(),
            },
        );
    }
}
