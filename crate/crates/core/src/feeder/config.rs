//! Plain-text (TOML) topology files.
//!
//! ```toml
//! buses = [800, 834, 860]
//!
//! [source]
//! bus = 800
//! voltage = 1.0
//!
//! [[segment]]          # oriented away from the source
//! from = 800
//! to = 834
//! r = 0.002
//! x = 0.006
//!
//! [[load]]             # base constant-impedance load, per-unit
//! bus = 860
//! r = 10.78
//! x = 2.70
//!
//! [[relay]]            # host segment given by its end buses
//! id = 2
//! from = 834
//! to = 860
//! downstream = 1       # optional
//! ```

use std::collections::BTreeMap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{BusId, FeederTopology, Relay, RelayId, Segment, Source};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct TopologyFile {
    buses: Vec<u32>,
    source: SourceEntry,
    #[serde(rename = "segment")]
    segments: Vec<SegmentEntry>,
    #[serde(rename = "load", default)]
    loads: Vec<LoadEntry>,
    #[serde(rename = "relay", default)]
    relays: Vec<RelayEntry>,
}

#[derive(Serialize, Deserialize)]
struct SourceEntry {
    bus: u32,
    voltage: f64,
}

#[derive(Serialize, Deserialize)]
struct SegmentEntry {
    from: u32,
    to: u32,
    r: f64,
    x: f64,
}

#[derive(Serialize, Deserialize)]
struct LoadEntry {
    bus: u32,
    r: f64,
    x: f64,
}

#[derive(Serialize, Deserialize)]
struct RelayEntry {
    id: u32,
    from: u32,
    to: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    downstream: Option<u32>,
}

pub fn topology_from_toml(text: &str) -> Result<FeederTopology> {
    let file: TopologyFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    let segments: Vec<Segment> = file
        .segments
        .iter()
        .map(|s| Segment {
            from: BusId(s.from),
            to: BusId(s.to),
            impedance: Complex64::new(s.r, s.x),
        })
        .collect();
    let mut loads = BTreeMap::new();
    for l in &file.loads {
        if loads.insert(BusId(l.bus), Complex64::new(l.r, l.x)).is_some() {
            return Err(Error::Topology(format!("two loads on bus {}", l.bus)));
        }
    }
    let relays = file
        .relays
        .iter()
        .map(|r| {
            let segment = segments
                .iter()
                .position(|s| s.from == BusId(r.from) && s.to == BusId(r.to))
                .ok_or_else(|| Error::Topology(format!("relay {}: no segment {} -> {}", r.id, r.from, r.to)))?;
            Ok(Relay {
                id: RelayId(r.id),
                segment,
                downstream: r.downstream.map(RelayId),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    FeederTopology::new(
        file.buses.into_iter().map(BusId).collect(),
        segments,
        loads,
        Source {
            bus: BusId(file.source.bus),
            voltage: file.source.voltage,
        },
        relays,
    )
}

pub fn topology_to_toml(topology: &FeederTopology) -> String {
    let file = TopologyFile {
        buses: topology.buses().iter().map(|b| b.0).collect(),
        source: SourceEntry {
            bus: topology.source().bus.0,
            voltage: topology.source().voltage,
        },
        segments: topology
            .segments()
            .iter()
            .map(|s| SegmentEntry {
                from: s.from.0,
                to: s.to.0,
                r: s.impedance.re,
                x: s.impedance.im,
            })
            .collect(),
        loads: topology
            .loads()
            .iter()
            .map(|(b, z)| LoadEntry {
                bus: b.0,
                r: z.re,
                x: z.im,
            })
            .collect(),
        relays: topology
            .relays()
            .iter()
            .map(|r| {
                let s = topology.segments()[r.segment];
                RelayEntry {
                    id: r.id.0,
                    from: s.from.0,
                    to: s.to.0,
                    downstream: r.downstream.map(|d| d.0),
                }
            })
            .collect(),
    };
    toml::to_string(&file).expect("topology serializes")
}
