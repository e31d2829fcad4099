//! Scenario files.
//!
//! A scenario is a TOML document:
//!
//! ```toml
//! schema_version = 1
//! name = "example"
//!
//! [world]
//! gravity = [0.0, 0.0, 0.0]
//!
//! [graph]            # 1-based: vehicle -> vehicles it senses
//! "1" = [2]
//! "2" = [1]
//!
//! [consensus]        # either a and gamma (b = gamma * a on every edge) ...
//! a = 0.3
//! gamma = 30.0
//! # ... or a per-edge table
//! # edges = [{ from = 1, to = 2, a = 0.3, b = 9.0 }, ...]
//!
//! [control]
//! k1 = 2.0
//! k2 = 0.45
//!
//! [sim]
//! dt = 0.001
//! t_final = 60.0
//! seed = 0
//! record_every = 1
//! control_mode = "zero_order_hold"   # or "continuous"
//!
//! [sim.disturbance]  # optional; omitted keys take their defaults
//! force_max = 0.25
//!
//! [monitor]          # optional
//! varrho = 0.5
//!
//! [[vehicles]]
//! m = 3.0
//! J = [[0.13, 0.0, 0.0], [0.0, 0.13, 0.0], [0.0, 0.0, 0.04]]
//! x = [0.0, 0.0, 0.0]
//! v = [0.0, 0.0, 0.0]                                   # default 0
//! R = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]] # default I
//! w = [0.0, 0.0, 0.0]                                   # default 0
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::consensus::{ConsensusLaw, EdgeGain};
use crate::control::ControlGains;
use crate::dynamics::{VehicleParams, VehicleState, WorldConfig};
use crate::error::{Error, Result};
use crate::graph::SensorDigraph;
use crate::lie::{mat_from_rows, mat_rows, Rotation, Vec3};
use crate::monitor::MonitorConfig;
use crate::sim::{ControlMode, DisturbanceSpec, Fleet, SimConfig};

pub const SCHEMA_VERSION: u32 = 1;

/// Scenarios compiled into the binary, by name.
pub const BUNDLED: &[(&str, &str)] = &[
    ("paper_fig5", include_str!("../scenarios/paper_fig5.toml")),
    ("paper_fig6", include_str!("../scenarios/paper_fig6.toml")),
];

#[derive(Clone, Debug, PartialEq)]
pub struct VehicleSpec {
    pub params: VehicleParams,
    pub initial: VehicleState,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ConsensusSpec {
    RenAtkins {
        a: f64,
        gamma: f64,
    },
    /// 0-based `(from, to)` keys.
    PerEdge(BTreeMap<(usize, usize), EdgeGain>),
}

impl ConsensusSpec {
    pub fn build(&self, graph: SensorDigraph) -> Result<ConsensusLaw> {
        match self {
            Self::RenAtkins { a, gamma } => ConsensusLaw::ren_atkins(graph, *a, *gamma),
            Self::PerEdge(table) => ConsensusLaw::from_edge_gains(graph, table),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub vehicles: Vec<VehicleSpec>,
    pub graph: SensorDigraph,
    pub consensus: ConsensusSpec,
    pub control: ControlGains,
    pub world: WorldConfig,
    pub sim: SimConfig,
    pub monitor: Option<MonitorConfig>,
}

impl Scenario {
    pub fn law(&self) -> Result<ConsensusLaw> {
        self.consensus.build(self.graph.clone())
    }

    pub fn fleet(&self) -> Result<Fleet> {
        Ok(Fleet {
            params: self.vehicles.iter().map(|v| v.params.clone()).collect(),
            law: self.law()?,
            gains: self.control,
            world: self.world,
        })
    }

    pub fn initial_states(&self) -> Vec<VehicleState> {
        self.vehicles.iter().map(|v| v.initial).collect()
    }

    pub fn len(&self) -> usize {
        self.vehicles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vehicles.is_empty()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let raw: RawScenario = toml::from_str(text).map_err(|e| Error::Config(vec![e.to_string()]))?;
        raw.validate()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&RawScenario::from(self)).expect("scenario serializes to TOML")
    }
}

/// Loads a scenario from a file path, or by bundled name when no such file exists.
pub fn load_scenario(source: &str) -> Result<Scenario> {
    let path = Path::new(source);
    if path.exists() {
        return Scenario::from_toml(&std::fs::read_to_string(path)?);
    }
    match BUNDLED.iter().find(|(name, _)| *name == source) {
        Some((_, text)) => Scenario::from_toml(text),
        None => Err(Error::Config(vec![format!(
            "no scenario file or bundled scenario named '{source}' (bundled: {})",
            BUNDLED.iter().map(|(n, _)| *n).collect::<Vec<_>>().join(", ")
        )])),
    }
}

pub fn emit_scenario(scenario: &Scenario) -> String {
    scenario.to_toml()
}

type Rows = [[f64; 3]; 3];

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    schema_version: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    world: Option<RawWorld>,
    graph: Option<BTreeMap<String, Vec<usize>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    consensus: Option<RawConsensus>,
    #[serde(skip_serializing_if = "Option::is_none")]
    control: Option<RawControl>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sim: Option<RawSim>,
    #[serde(skip_serializing_if = "Option::is_none")]
    monitor: Option<RawMonitor>,
    vehicles: Option<Vec<RawVehicle>>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawWorld {
    gravity: Option<[f64; 3]>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawConsensus {
    #[serde(skip_serializing_if = "Option::is_none")]
    a: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    edges: Option<Vec<RawEdge>>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawEdge {
    from: usize,
    to: usize,
    a: f64,
    b: f64,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawControl {
    k1: Option<f64>,
    k2: Option<f64>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawSim {
    dt: Option<f64>,
    t_final: Option<f64>,
    seed: Option<u64>,
    record_every: Option<usize>,
    control_mode: Option<ControlMode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    disturbance: Option<RawDisturbance>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawDisturbance {
    force_max: Option<f64>,
    torque_max: Option<f64>,
    gyro_max: Option<f64>,
    f_angle_max: Option<f64>,
    f_scale_range: Option<[f64; 2]>,
    update_hz: Option<f64>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawMonitor {
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    delta: Option<f64>,
    epsilon: Option<f64>,
    varrho: Option<f64>,
    sample_count: Option<usize>,
    seed: Option<u64>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawVehicle {
    m: Option<f64>,
    #[serde(rename = "J")]
    j: Option<Rows>,
    x: Option<[f64; 3]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    v: Option<[f64; 3]>,
    #[serde(rename = "R", skip_serializing_if = "Option::is_none")]
    r: Option<Rows>,
    #[serde(skip_serializing_if = "Option::is_none")]
    w: Option<[f64; 3]>,
}

impl RawScenario {
    fn validate(self) -> Result<Scenario> {
        let mut errors = Vec::new();
        match self.schema_version {
            None => errors.push("missing field: schema_version".to_string()),
            Some(SCHEMA_VERSION) => {}
            Some(v) => errors.push(format!("unsupported schema_version {v} (expected {SCHEMA_VERSION})")),
        }

        let mut vehicles = Vec::new();
        let raw_vehicles = self.vehicles.unwrap_or_default();
        if raw_vehicles.is_empty() {
            errors.push("missing field: vehicles (at least one [[vehicles]] entry is required)".into());
        }
        for (k, rv) in raw_vehicles.iter().enumerate() {
            let label = k + 1;
            let (Some(m), Some(j), Some(x)) = (rv.m, rv.j, rv.x) else {
                for (field, present) in [("m", rv.m.is_some()), ("J", rv.j.is_some()), ("x", rv.x.is_some())] {
                    if !present {
                        errors.push(format!("vehicle {label}: missing field {field}"));
                    }
                }
                continue;
            };
            let params = VehicleParams::new(m, mat_from_rows(j)).map_err(|e| format!("vehicle {label}: {e}"));
            let attitude = match rv.r {
                Some(rows) => {
                    Rotation::from_rows(rows).map_err(|e| format!("vehicle {label}: initial attitude R: {e}"))
                }
                None => Ok(Rotation::identity()),
            };
            let state = |a: Option<[f64; 3]>| Vec3::from(a.unwrap_or_default());
            let vectors = [("x", Some(x)), ("v", rv.v), ("w", rv.w)];
            for (name, value) in vectors {
                if value.is_some_and(|a| !a.iter().all(|c| c.is_finite())) {
                    errors.push(format!("vehicle {label}: {name} has non-finite entries"));
                }
            }
            match (params, attitude) {
                (Ok(params), Ok(attitude)) => vehicles.push(VehicleSpec {
                    params,
                    initial: VehicleState {
                        position: Vec3::from(x),
                        velocity: state(rv.v),
                        attitude,
                        omega: state(rv.w),
                    },
                }),
                (p, a) => errors.extend(p.err().into_iter().chain(a.err())),
            }
        }
        let n = raw_vehicles.len();

        let mut edges = Vec::new();
        match &self.graph {
            None => errors.push("missing field: graph".into()),
            Some(table) => {
                for (key, targets) in table {
                    let from = match key.parse::<usize>() {
                        Ok(v) if (1..=n).contains(&v) => v,
                        _ => {
                            errors.push(format!("graph: key '{key}' is not a vehicle label in 1..={n}"));
                            continue;
                        }
                    };
                    for &to in targets {
                        if !(1..=n).contains(&to) {
                            errors.push(format!(
                                "graph: vehicle {from} senses {to}, which is not a vehicle label in 1..={n}"
                            ));
                        } else if to == from {
                            errors.push(format!("graph: vehicle {from} lists itself as a neighbour"));
                        } else {
                            edges.push((from - 1, to - 1));
                        }
                    }
                }
            }
        }
        let graph = if n > 0 { SensorDigraph::new(n, edges.iter().copied()).ok() } else { None };

        let consensus = match self.consensus {
            None => Some(ConsensusSpec::RenAtkins { a: 0.3, gamma: 30.0 }),
            Some(RawConsensus { edges: Some(list), a: None, gamma: None }) => {
                let mut table = BTreeMap::new();
                for e in list {
                    if !(1..=n).contains(&e.from) || !(1..=n).contains(&e.to) {
                        errors.push(format!("consensus: edge {} -> {} references a missing vehicle", e.from, e.to));
                        continue;
                    }
                    if table.insert((e.from - 1, e.to - 1), EdgeGain { a: e.a, b: e.b }).is_some() {
                        errors.push(format!("consensus: edge {} -> {} listed twice", e.from, e.to));
                    }
                }
                Some(ConsensusSpec::PerEdge(table))
            }
            Some(RawConsensus { edges: None, a, gamma }) => {
                Some(ConsensusSpec::RenAtkins { a: a.unwrap_or(0.3), gamma: gamma.unwrap_or(30.0) })
            }
            Some(_) => {
                errors.push("consensus: give either a/gamma or an edges table, not both".into());
                None
            }
        };
        if let (Some(graph), Some(spec)) = (&graph, &consensus) {
            if let Err(e) = spec.build(graph.clone()) {
                errors.push(format!("consensus: {e}"));
            }
        }

        let control = self.control.map_or(Ok(ControlGains::default()), |c| {
            let d = ControlGains::default();
            ControlGains::new(c.k1.unwrap_or(d.k1), c.k2.unwrap_or(d.k2))
        });
        let control = control.map_err(|e| errors.push(format!("control: {e}"))).ok();

        let gravity = self.world.and_then(|w| w.gravity).unwrap_or_default();
        if !gravity.iter().all(|g| g.is_finite()) {
            errors.push("world: gravity has non-finite entries".into());
        }
        let world = WorldConfig { gravity: Vec3::from(gravity) };

        let sim = {
            let d = SimConfig::default();
            match self.sim {
                None => d,
                Some(s) => SimConfig {
                    dt: s.dt.unwrap_or(d.dt),
                    t_final: s.t_final.unwrap_or(d.t_final),
                    seed: s.seed.unwrap_or(d.seed),
                    record_every: s.record_every.unwrap_or(d.record_every),
                    control_mode: s.control_mode.unwrap_or(d.control_mode),
                    disturbance: s.disturbance.map(|r| {
                        let d = DisturbanceSpec::default();
                        DisturbanceSpec {
                            force_max: r.force_max.unwrap_or(d.force_max),
                            torque_max: r.torque_max.unwrap_or(d.torque_max),
                            gyro_max: r.gyro_max.unwrap_or(d.gyro_max),
                            f_angle_max: r.f_angle_max.unwrap_or(d.f_angle_max),
                            f_scale_range: r.f_scale_range.unwrap_or(d.f_scale_range),
                            update_hz: r.update_hz.unwrap_or(d.update_hz),
                        }
                    }),
                },
            }
        };
        errors.extend(sim.validate());

        let monitor = self.monitor.map(|m| {
            let d = MonitorConfig::default();
            MonitorConfig {
                alpha: m.alpha,
                delta: m.delta,
                epsilon: m.epsilon.unwrap_or(d.epsilon),
                varrho: m.varrho.unwrap_or(d.varrho),
                sample_count: m.sample_count.unwrap_or(d.sample_count),
                seed: m.seed.unwrap_or(d.seed),
            }
        });
        if let Some(m) = &monitor {
            errors.extend(m.validate());
        }

        match (errors.is_empty(), graph, consensus, control) {
            (true, Some(graph), Some(consensus), Some(control)) => Ok(Scenario {
                name: self.name.unwrap_or_else(|| "unnamed".into()),
                vehicles,
                graph,
                consensus,
                control,
                world,
                sim,
                monitor,
            }),
            _ => Err(Error::Config(errors)),
        }
    }
}

impl From<&Scenario> for RawScenario {
    fn from(s: &Scenario) -> Self {
        let graph = (0..s.graph.len())
            .map(|i| {
                let targets = s.graph.neighbors(i).expect("index in range").iter().map(|j| j + 1).collect();
                ((i + 1).to_string(), targets)
            })
            .collect();
        let consensus = match &s.consensus {
            ConsensusSpec::RenAtkins { a, gamma } => RawConsensus { a: Some(*a), gamma: Some(*gamma), edges: None },
            ConsensusSpec::PerEdge(table) => RawConsensus {
                a: None,
                gamma: None,
                edges: Some(
                    table
                        .iter()
                        .map(|(&(from, to), g)| RawEdge { from: from + 1, to: to + 1, a: g.a, b: g.b })
                        .collect(),
                ),
            },
        };
        RawScenario {
            schema_version: Some(SCHEMA_VERSION),
            name: Some(s.name.clone()),
            world: Some(RawWorld { gravity: Some(s.world.gravity.into()) }),
            graph: Some(graph),
            consensus: Some(consensus),
            control: Some(RawControl { k1: Some(s.control.k1), k2: Some(s.control.k2) }),
            sim: Some(RawSim {
                dt: Some(s.sim.dt),
                t_final: Some(s.sim.t_final),
                seed: Some(s.sim.seed),
                record_every: Some(s.sim.record_every),
                control_mode: Some(s.sim.control_mode),
                disturbance: s.sim.disturbance.map(|d| RawDisturbance {
                    force_max: Some(d.force_max),
                    torque_max: Some(d.torque_max),
                    gyro_max: Some(d.gyro_max),
                    f_angle_max: Some(d.f_angle_max),
                    f_scale_range: Some(d.f_scale_range),
                    update_hz: Some(d.update_hz),
                }),
            }),
            monitor: s.monitor.as_ref().map(|m| RawMonitor {
                alpha: m.alpha,
                delta: m.delta,
                epsilon: Some(m.epsilon),
                varrho: Some(m.varrho),
                sample_count: Some(m.sample_count),
                seed: Some(m.seed),
            }),
            vehicles: Some(
                s.vehicles
                    .iter()
                    .map(|v| RawVehicle {
                        m: Some(v.params.mass()),
                        j: Some(mat_rows(v.params.inertia())),
                        x: Some(v.initial.position.into()),
                        v: Some(v.initial.velocity.into()),
                        r: Some(v.initial.attitude.rows()),
                        w: Some(v.initial.omega.into()),
                    })
                    .collect(),
            ),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
schema_version = 1
[graph]
"1" = [2]
"2" = [1]
[[vehicles]]
m = 1.0
J = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
x = [0.0, 0.0, 0.0]
[[vehicles]]
m = 1.0
J = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
x = [1.0, 0.0, 0.0]
"#;

    fn config_errors(text: &str) -> Vec<String> {
        match Scenario::from_toml(text) {
            Err(Error::Config(list)) => list,
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn minimal_scenario_takes_defaults() {
        let s = Scenario::from_toml(MINIMAL).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.control, ControlGains::default());
        assert_eq!(s.consensus, ConsensusSpec::RenAtkins { a: 0.3, gamma: 30.0 });
        assert_eq!(s.sim, SimConfig::default());
        assert_eq!(s.world.gravity, Vec3::zeros());
        assert_eq!(s.initial_states()[1].attitude, Rotation::identity());
    }

    #[test]
    fn bundled_fig5_matches_reference_conditions() {
        let s = load_scenario("paper_fig5").unwrap();
        let masses: Vec<f64> = s.vehicles.iter().map(|v| v.params.mass()).collect();
        assert_eq!(masses, vec![3.0, 3.0, 3.4, 3.2, 3.2]);
        let positions: Vec<[f64; 3]> = s.vehicles.iter().map(|v| v.initial.position.into()).collect();
        assert_eq!(
            positions,
            vec![[0.0, -10.0, 10.0], [0.0, 10.0, 10.0], [0.0, 0.0, 0.0], [-10.0, 0.0, -10.0], [10.0, 0.0, -10.0]]
        );
        assert!(s.vehicles.iter().all(|v| v.initial.velocity == Vec3::zeros()));
        assert_eq!(s.graph, SensorDigraph::reference_five());
        assert!(s.sim.disturbance.is_none());
        assert_eq!(load_scenario("paper_fig6").unwrap().sim.disturbance, Some(DisturbanceSpec::default()));
    }

    #[test]
    fn rejects_reflection_and_echoes_matrix() {
        let text = MINIMAL.replacen(
            "x = [1.0, 0.0, 0.0]",
            "x = [1.0, 0.0, 0.0]\nR = [[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 1.0]]",
            1,
        );
        let errors = config_errors(&text);
        assert_eq!(errors.len(), 1);
        assert!(errors[0].contains("vehicle 2") && errors[0].contains("det"), "{errors:?}");
        assert!(errors[0].contains("-1"), "matrix not echoed: {errors:?}");
    }

    #[test]
    fn rejects_out_of_range_graph_reference() {
        let text = MINIMAL.replace("\"2\" = [1]", "\"2\" = [1, 6]");
        let errors = config_errors(&text);
        assert!(errors.iter().any(|e| e.contains('6')), "{errors:?}");
    }

    #[test]
    fn collects_every_failure() {
        let text = MINIMAL
            .replace("schema_version = 1", "schema_version = 1\n[sim]\ndt = 0.5\nrecord_every = 0")
            .replace("m = 1.0", "m = -1.0")
            .replace("\"1\" = [2]", "\"1\" = [2]\n\"7\" = [1]");
        let errors = config_errors(&text);
        assert!(errors.len() >= 5, "{errors:?}");
    }

    #[test]
    fn missing_fields_are_named() {
        let errors = config_errors("schema_version = 1\n[[vehicles]]\nm = 1.0\n");
        assert!(errors.iter().any(|e| e.contains("graph")));
        assert!(errors.iter().any(|e| e.contains("missing field J")));
        assert!(errors.iter().any(|e| e.contains("missing field x")));
    }

    #[test]
    fn round_trips_through_toml() {
        for (name, _) in BUNDLED {
            let s = load_scenario(name).unwrap();
            assert_eq!(Scenario::from_toml(&emit_scenario(&s)).unwrap(), s);
        }
        let mut table = BTreeMap::new();
        table.insert((0, 1), EdgeGain { a: 0.1, b: 2.0 });
        table.insert((1, 0), EdgeGain { a: 0.2, b: 1.0 / 3.0 });
        let mut s = Scenario::from_toml(MINIMAL).unwrap();
        s.consensus = ConsensusSpec::PerEdge(table);
        s.monitor = Some(MonitorConfig { alpha: Some(2.5), ..Default::default() });
        s.sim.disturbance = Some(DisturbanceSpec { f_scale_range: [0.9, 1.1], ..Default::default() });
        s.world.gravity = Vec3::new(0.0, 0.0, 9.81);
        assert_eq!(Scenario::from_toml(&emit_scenario(&s)).unwrap(), s);
    }

    #[test]
    fn per_edge_gains_must_cover_edges() {
        let text = MINIMAL.replace(
            "schema_version = 1",
            "schema_version = 1\n[consensus]\nedges = [{ from = 1, to = 2, a = 0.3, b = 9.0 }]",
        );
        assert!(config_errors(&text).iter().any(|e| e.starts_with("consensus")));
    }

    #[test]
    fn unknown_bundled_name_is_config_error() {
        assert!(matches!(load_scenario("no_such_scenario"), Err(Error::Config(_))));
    }
}
