//! Quasi-static phasor model of a single-source radial feeder section.
//!
//! Everything is single-phase, per-unit and constant-impedance. A solve is an
//! exact reduction of the linear circuit, so repeated solves with the same
//! inputs are bit-identical.

mod config;
mod solver;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use config::{topology_from_toml, topology_to_toml};
pub use solver::{kcl_residual, relay_measurements, solve_circuit, CircuitSolution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BusId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RelayId(pub u32);

impl fmt::Display for BusId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for RelayId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A series impedance between two buses, oriented away from the source.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub from: BusId,
    pub to: BusId,
    pub impedance: Complex64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Source {
    pub bus: BusId,
    pub voltage: f64,
}

/// A relay and its breaker. The relay measures at the sending end of its host
/// segment and its breaker disconnects that segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Relay {
    pub id: RelayId,
    pub segment: usize,
    pub downstream: Option<RelayId>,
}

/// Closed interval `[start, end]` of fractional positions along one segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZoneInterval {
    pub segment: usize,
    pub start: f64,
    pub end: f64,
}

impl ZoneInterval {
    pub fn whole(segment: usize) -> Self {
        Self {
            segment,
            start: 0.0,
            end: 1.0,
        }
    }

    pub fn contains(&self, segment: usize, position: f64) -> bool {
        self.segment == segment && position >= self.start && position <= self.end
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProtectionZone {
    pub primary: Vec<ZoneInterval>,
    pub backup: Vec<ZoneInterval>,
}

impl ProtectionZone {
    pub fn in_primary(&self, segment: usize, position: f64) -> bool {
        self.primary.iter().any(|z| z.contains(segment, position))
    }

    pub fn in_backup(&self, segment: usize, position: f64) -> bool {
        self.backup.iter().any(|z| z.contains(segment, position))
    }
}

/// Validated radial feeder. Construct through [`FeederTopology::new`].
#[derive(Debug, Clone, PartialEq)]
pub struct FeederTopology {
    buses: Vec<BusId>,
    segments: Vec<Segment>,
    loads: BTreeMap<BusId, Complex64>,
    source: Source,
    relays: Vec<Relay>,
    zones: BTreeMap<RelayId, ProtectionZone>,
    // derived
    parent_segment: BTreeMap<BusId, usize>,
    children: BTreeMap<BusId, Vec<usize>>,
}

impl FeederTopology {
    /// Validates radiality, impedances and the relay neighbor relation, and
    /// derives protection zones: a relay's primary region is its whole host
    /// segment and its backup region is its downstream neighbor's primary.
    pub fn new(
        buses: Vec<BusId>,
        segments: Vec<Segment>,
        loads: BTreeMap<BusId, Complex64>,
        source: Source,
        relays: Vec<Relay>,
    ) -> Result<Self> {
        let bus_set: BTreeSet<BusId> = buses.iter().copied().collect();
        if bus_set.len() != buses.len() {
            return Err(Error::Topology("duplicate bus id".into()));
        }
        if !bus_set.contains(&source.bus) {
            return Err(Error::Topology(format!("source bus {} not declared", source.bus)));
        }
        if !(source.voltage.is_finite() && source.voltage > 0.0) {
            return Err(Error::Topology("source voltage must be positive".into()));
        }
        if segments.len() + 1 != buses.len() {
            return Err(Error::Topology(format!(
                "radial feeder needs |segments| = |buses| - 1, got {} segments for {} buses",
                segments.len(),
                buses.len()
            )));
        }

        let mut parent_segment = BTreeMap::new();
        let mut children: BTreeMap<BusId, Vec<usize>> = buses.iter().map(|&b| (b, Vec::new())).collect();
        for (k, seg) in segments.iter().enumerate() {
            if !bus_set.contains(&seg.from) || !bus_set.contains(&seg.to) {
                return Err(Error::Topology(format!("segment {k} references an unknown bus")));
            }
            if !(seg.impedance.re > 0.0) || !seg.impedance.im.is_finite() {
                return Err(Error::Topology(format!(
                    "segment {k} ({} -> {}) needs a positive resistive part",
                    seg.from, seg.to
                )));
            }
            if seg.to == source.bus {
                return Err(Error::Topology(format!("segment {k} feeds into the source bus")));
            }
            if parent_segment.insert(seg.to, k).is_some() {
                return Err(Error::Topology(format!("bus {} has two feeding segments", seg.to)));
            }
            children.get_mut(&seg.from).expect("checked").push(k);
        }

        // Every bus must be reachable from the source along oriented segments.
        let mut reached = BTreeSet::from([source.bus]);
        let mut stack = vec![source.bus];
        while let Some(b) = stack.pop() {
            for &k in &children[&b] {
                if reached.insert(segments[k].to) {
                    stack.push(segments[k].to);
                }
            }
        }
        if reached.len() != buses.len() {
            return Err(Error::Topology("feeder is not a tree rooted at the source".into()));
        }

        for (bus, z) in &loads {
            if !bus_set.contains(bus) {
                return Err(Error::Topology(format!("load on unknown bus {bus}")));
            }
            if !(z.re > 0.0) || !z.im.is_finite() {
                return Err(Error::Topology(format!(
                    "load at bus {bus} needs a positive resistive part"
                )));
            }
        }

        let mut topo = Self {
            buses,
            segments,
            loads,
            source,
            relays: Vec::new(),
            zones: BTreeMap::new(),
            parent_segment,
            children,
        };

        let mut ids = BTreeSet::new();
        let mut hosted = BTreeSet::new();
        for r in &relays {
            if !ids.insert(r.id) {
                return Err(Error::Topology(format!("duplicate relay id {}", r.id)));
            }
            if r.segment >= topo.segments.len() {
                return Err(Error::Topology(format!("relay {} on unknown segment", r.id)));
            }
            if !hosted.insert(r.segment) {
                return Err(Error::Topology(format!("segment {} hosts two relays", r.segment)));
            }
        }
        for r in &relays {
            if let Some(n) = r.downstream {
                let neighbor = relays
                    .iter()
                    .find(|x| x.id == n)
                    .ok_or_else(|| Error::Topology(format!("relay {} names unknown neighbor {n}", r.id)))?;
                if neighbor.id == r.id || !topo.is_downstream_segment(neighbor.segment, r.segment) {
                    return Err(Error::Topology(format!(
                        "relay {}'s neighbor {n} is not downstream of it",
                        r.id
                    )));
                }
            }
        }
        // Strictly-downstream neighbors already make the relation acyclic.

        for r in &relays {
            let primary = vec![ZoneInterval::whole(r.segment)];
            let backup = r
                .downstream
                .and_then(|n| relays.iter().find(|x| x.id == n))
                .map(|n| vec![ZoneInterval::whole(n.segment)])
                .unwrap_or_default();
            topo.zones.insert(r.id, ProtectionZone { primary, backup });
        }
        topo.relays = relays;
        Ok(topo)
    }

    pub fn buses(&self) -> &[BusId] {
        &self.buses
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn loads(&self) -> &BTreeMap<BusId, Complex64> {
        &self.loads
    }

    pub fn source(&self) -> Source {
        self.source
    }

    pub fn relays(&self) -> &[Relay] {
        &self.relays
    }

    pub fn relay_ids(&self) -> Vec<RelayId> {
        self.relays.iter().map(|r| r.id).collect()
    }

    pub fn relay(&self, id: RelayId) -> Option<&Relay> {
        self.relays.iter().find(|r| r.id == id)
    }

    /// Position of `id` in [`Self::relays`].
    pub fn relay_index(&self, id: RelayId) -> Option<usize> {
        self.relays.iter().position(|r| r.id == id)
    }

    pub fn zone(&self, id: RelayId) -> Option<&ProtectionZone> {
        self.zones.get(&id)
    }

    pub fn zones(&self) -> &BTreeMap<RelayId, ProtectionZone> {
        &self.zones
    }

    /// Relay hosted on `segment`, if any.
    pub fn relay_on_segment(&self, segment: usize) -> Option<&Relay> {
        self.relays.iter().find(|r| r.segment == segment)
    }

    /// Relays whose neighbor is `id`, i.e. those backing it up.
    pub fn upstream_of(&self, id: RelayId) -> Vec<RelayId> {
        self.relays
            .iter()
            .filter(|r| r.downstream == Some(id))
            .map(|r| r.id)
            .collect()
    }

    /// Segments carrying a relay; faults are only placed on these.
    pub fn protected_segments(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.relays.iter().map(|r| r.segment).collect();
        v.sort_unstable();
        v
    }

    pub(crate) fn children(&self, bus: BusId) -> &[usize] {
        &self.children[&bus]
    }

    /// Segments from the source down to and including `segment`.
    pub fn path_to(&self, segment: usize) -> Vec<usize> {
        let mut path = vec![segment];
        let mut bus = self.segments[segment].from;
        while let Some(&k) = self.parent_segment.get(&bus) {
            path.push(k);
            bus = self.segments[k].from;
        }
        path.reverse();
        path
    }

    /// True when `candidate` lies strictly below `ancestor` in the tree.
    pub fn is_downstream_segment(&self, candidate: usize, ancestor: usize) -> bool {
        candidate != ancestor && self.path_to(candidate).contains(&ancestor)
    }

    /// Buses left without a path to the source when the given segments are removed.
    pub fn isolated_buses(&self, removed: &BTreeSet<usize>) -> BTreeSet<BusId> {
        let mut out = BTreeSet::new();
        let mut stack: Vec<(BusId, bool)> = vec![(self.source.bus, false)];
        while let Some((b, dead)) = stack.pop() {
            if dead {
                out.insert(b);
            }
            for &k in self.children(b) {
                stack.push((self.segments[k].to, dead || removed.contains(&k)));
            }
        }
        out
    }
}

/// Per-load demand scaling for one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadProfile {
    pub trend_factor: f64,
    /// Already includes the trend factor: effective admittance is base × multiplier.
    pub local_multipliers: BTreeMap<BusId, f64>,
}

impl LoadProfile {
    pub fn uniform(topology: &FeederTopology, multiplier: f64) -> Self {
        Self {
            trend_factor: multiplier,
            local_multipliers: topology.loads.keys().map(|&b| (b, multiplier)).collect(),
        }
    }

    pub fn multiplier(&self, bus: BusId) -> f64 {
        self.local_multipliers.get(&bus).copied().unwrap_or(self.trend_factor)
    }
}

/// Closed interval used for sampling ranges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn validate_positive(&self, what: &str) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite()) || self.lo > self.hi {
            return Err(Error::Parameter(format!(
                "{what}: empty interval [{}, {}]",
                self.lo, self.hi
            )));
        }
        if self.lo <= 0.0 {
            return Err(Error::Parameter(format!("{what}: interval must be positive")));
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.random_range(self.lo..=self.hi)
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self::new(self.lo * factor, self.hi * factor)
    }
}

/// Draws the trend factor, then each load's multiplier as a fraction of it.
pub fn sample_load_profile<R: Rng + ?Sized>(
    topology: &FeederTopology,
    rng: &mut R,
    trend_range: Interval,
    local_range: Interval,
) -> Result<LoadProfile> {
    trend_range.validate_positive("trend range")?;
    local_range.validate_positive("local range")?;
    let trend_factor = trend_range.sample(rng);
    let local_multipliers = topology
        .loads
        .keys()
        .map(|&b| (b, local_range.sample(rng) * trend_factor))
        .collect();
    Ok(LoadProfile {
        trend_factor,
        local_multipliers,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaultSpec {
    pub segment: usize,
    /// Fraction along the segment measured from its sending end.
    pub position: f64,
    pub impedance: Complex64,
    pub onset_step: usize,
}

/// Base load with magnitude `admittance` (pu) at a lagging power factor.
pub fn load_impedance(admittance: f64, power_factor: f64) -> Complex64 {
    let angle = power_factor.acos();
    Complex64::from_polar(1.0 / admittance, angle)
}

/// Default protected-segment impedance.
pub const DEFAULT_SEGMENT_Z: Complex64 = Complex64::new(0.02, 0.06);
/// Impedance of the unprotected supply segment feeding the section.
pub const DEFAULT_SUPPLY_Z: Complex64 = Complex64::new(0.002, 0.006);
pub const DEFAULT_LOAD_POWER_FACTOR: f64 = 0.97;

/// The five-relay section: a chain 834-860-836-862-838 protected by relays
/// 2, 1, 4 and 5 (each backing up the next), and a lateral 834-842 protected
/// by relay 3. Bus 800 is the substation side of the supply segment.
pub fn build_feeder_section() -> FeederTopology {
    let b = BusId;
    let buses = vec![b(800), b(834), b(860), b(836), b(862), b(838), b(842)];
    let seg = |from, to, z| Segment {
        from: b(from),
        to: b(to),
        impedance: z,
    };
    let segments = vec![
        seg(800, 834, DEFAULT_SUPPLY_Z),
        seg(834, 860, DEFAULT_SEGMENT_Z),
        seg(860, 836, DEFAULT_SEGMENT_Z),
        seg(836, 862, DEFAULT_SEGMENT_Z),
        seg(862, 838, DEFAULT_SEGMENT_Z),
        seg(834, 842, DEFAULT_SEGMENT_Z),
    ];
    let pf = DEFAULT_LOAD_POWER_FACTOR;
    let loads = BTreeMap::from([
        (b(860), load_impedance(0.09, pf)),
        (b(836), load_impedance(0.09, pf)),
        (b(862), load_impedance(0.09, pf)),
        (b(838), load_impedance(0.84, pf)),
        (b(842), load_impedance(0.84, pf)),
    ]);
    let r = |id, segment, downstream: Option<u32>| Relay {
        id: RelayId(id),
        segment,
        downstream: downstream.map(RelayId),
    };
    let relays = vec![
        r(1, 2, Some(4)),
        r(2, 1, Some(1)),
        r(3, 5, None),
        r(4, 3, Some(5)),
        r(5, 4, None),
    ];
    FeederTopology::new(
        buses,
        segments,
        loads,
        Source {
            bus: b(800),
            voltage: 1.0,
        },
        relays,
    )
    .expect("builtin feeder section is valid")
}
