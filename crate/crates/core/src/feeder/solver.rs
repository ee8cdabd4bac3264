use std::collections::{BTreeMap, BTreeSet};

use num_complex::Complex64;

use super::{BusId, FaultSpec, FeederTopology, LoadProfile, RelayId};
use crate::error::{Error, Result};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Voltage and current at the fault point of a faulted, energized segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaultPoint {
    pub voltage: Complex64,
    pub current: Complex64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CircuitSolution {
    pub bus_voltages: BTreeMap<BusId, Complex64>,
    /// Current entering each segment at its sending end (zero when removed or dead).
    pub segment_currents: Vec<Complex64>,
    /// Current leaving each segment at its receiving end. Differs from the
    /// sending current only on the faulted segment.
    pub receiving_currents: Vec<Complex64>,
    pub energized: BTreeSet<BusId>,
    pub fault: Option<FaultPoint>,
    pub relay_measurements: BTreeMap<RelayId, (f64, f64)>,
}

fn parallel(a: Option<Complex64>, b: Option<Complex64>) -> Option<Complex64> {
    match (a, b) {
        (None, x) | (x, None) => x,
        (Some(a), Some(b)) => {
            if a == ZERO || b == ZERO {
                Some(ZERO)
            } else {
                Some(a * b / (a + b))
            }
        }
    }
}

struct Reduction<'a> {
    topo: &'a FeederTopology,
    profile: &'a LoadProfile,
    fault: Option<&'a FaultSpec>,
    removed: &'a BTreeSet<usize>,
    /// Impedance seen looking into each segment from its sending end; `None` is open.
    input_z: Vec<Option<Complex64>>,
    bus_z: BTreeMap<BusId, Option<Complex64>>,
}

impl Reduction<'_> {
    fn load_z(&self, bus: BusId) -> Option<Complex64> {
        let base = *self.topo.loads.get(&bus)?;
        let m = self.profile.multiplier(bus);
        (m > 0.0).then(|| base / m)
    }

    fn reduce_bus(&mut self, bus: BusId) -> Option<Complex64> {
        let mut z = self.load_z(bus);
        for &k in self.topo.children(bus) {
            if self.removed.contains(&k) {
                continue;
            }
            let seg = self.topo.segments[k];
            let downstream = self.reduce_bus(seg.to);
            let zin = match self.fault.filter(|f| f.segment == k) {
                Some(f) => {
                    let far = downstream.map(|d| seg.impedance * (1.0 - f.position) + d);
                    parallel(Some(f.impedance), far).map(|zf| seg.impedance * f.position + zf)
                }
                None => downstream.map(|d| seg.impedance + d),
            };
            self.input_z[k] = zin;
            z = parallel(z, zin);
        }
        self.bus_z.insert(bus, z);
        z
    }
}

/// Solves the constant-impedance phasor circuit exactly.
///
/// `breaker_open` lists relays whose breakers are open; their host segments are
/// removed and everything below them is de-energized. A fault is a shunt
/// impedance placed `position` of the way along its segment.
pub fn solve_circuit(
    topology: &FeederTopology,
    profile: &LoadProfile,
    fault: Option<&FaultSpec>,
    breaker_open: &BTreeSet<RelayId>,
) -> Result<CircuitSolution> {
    if let Some(f) = fault {
        if f.segment >= topology.segments.len() {
            return Err(Error::Parameter(format!("fault on unknown segment {}", f.segment)));
        }
        if !(0.0..=1.0).contains(&f.position) {
            return Err(Error::Parameter(format!(
                "fault position {} outside [0, 1]",
                f.position
            )));
        }
        if f.impedance.re < 0.0 {
            return Err(Error::Parameter("fault impedance has negative resistance".into()));
        }
    }
    let removed: BTreeSet<usize> = breaker_open
        .iter()
        .filter_map(|id| topology.relay(*id).map(|r| r.segment))
        .collect();

    let n = topology.segments.len();
    let mut red = Reduction {
        topo: topology,
        profile,
        fault,
        removed: &removed,
        input_z: vec![None; n],
        bus_z: BTreeMap::new(),
    };
    let source = topology.source;
    red.reduce_bus(source.bus);

    let mut sol = CircuitSolution {
        bus_voltages: topology.buses.iter().map(|&b| (b, ZERO)).collect(),
        segment_currents: vec![ZERO; n],
        receiving_currents: vec![ZERO; n],
        energized: BTreeSet::new(),
        fault: None,
        relay_measurements: BTreeMap::new(),
    };

    let mut stack = vec![(source.bus, Complex64::new(source.voltage, 0.0), None::<Complex64>)];
    while let Some((bus, v, arriving)) = stack.pop() {
        sol.bus_voltages.insert(bus, v);
        sol.energized.insert(bus);
        for &k in topology.children(bus) {
            if removed.contains(&k) {
                continue;
            }
            let seg = topology.segments[k];
            let i_send = match red.input_z[k] {
                None => ZERO,
                Some(z) if z == ZERO => match arriving {
                    // A zero-impedance branch below a dead-short bus takes all of
                    // the arriving current; at the ideal source it is singular.
                    Some(i) => i,
                    None => {
                        return Err(Error::Singular(format!(
                            "zero impedance from source through segment {k}"
                        )))
                    }
                },
                Some(z) => v / z,
            };
            let (i_recv, v_to) = match fault.filter(|f| f.segment == k) {
                Some(f) => {
                    let v_fp = v - seg.impedance * f.position * i_send;
                    let far = red.bus_z[&seg.to].map(|d| seg.impedance * (1.0 - f.position) + d);
                    let i_recv = match far {
                        None => ZERO,
                        Some(z) if z == ZERO => {
                            return Err(Error::Singular(format!("zero impedance beyond fault on segment {k}")))
                        }
                        Some(z) => v_fp / z,
                    };
                    let i_fault = if f.impedance == ZERO {
                        i_send - i_recv
                    } else {
                        v_fp / f.impedance
                    };
                    sol.fault = Some(FaultPoint {
                        voltage: v_fp,
                        current: i_fault,
                    });
                    (i_recv, v_fp - seg.impedance * (1.0 - f.position) * i_recv)
                }
                None => (i_send, v - seg.impedance * i_send),
            };
            sol.segment_currents[k] = i_send;
            sol.receiving_currents[k] = i_recv;
            stack.push((seg.to, v_to, Some(i_recv)));
        }
    }
    if sol
        .segment_currents
        .iter()
        .any(|c| !c.re.is_finite() || !c.im.is_finite())
    {
        return Err(Error::Singular("non-finite branch current".into()));
    }
    sol.relay_measurements = relay_measurements(&sol, topology, breaker_open);
    Ok(sol)
}

/// Voltage and current magnitudes seen on the line side of each relay's
/// breaker: host bus voltage and sending-end segment current, or zeros when
/// the breaker is open or the host bus is dead.
pub fn relay_measurements(
    solution: &CircuitSolution,
    topology: &FeederTopology,
    breaker_open: &BTreeSet<RelayId>,
) -> BTreeMap<RelayId, (f64, f64)> {
    topology
        .relays
        .iter()
        .map(|r| {
            let seg = topology.segments[r.segment];
            let meas = if solution.energized.contains(&seg.from) && !breaker_open.contains(&r.id) {
                (
                    solution.bus_voltages[&seg.from].norm(),
                    solution.segment_currents[r.segment].norm(),
                )
            } else {
                (0.0, 0.0)
            };
            (r.id, meas)
        })
        .collect()
}

/// Largest Kirchhoff current-law or branch-voltage mismatch in a solution,
/// recomputed from node voltages and element impedances.
pub fn kcl_residual(
    topology: &FeederTopology,
    profile: &LoadProfile,
    fault: Option<&FaultSpec>,
    solution: &CircuitSolution,
) -> f64 {
    let mut worst: f64 = 0.0;
    for &bus in &solution.energized {
        let v = solution.bus_voltages[&bus];
        let mut balance = if bus == topology.source.bus {
            continue;
        } else {
            let k = topology.parent_segment[&bus];
            solution.receiving_currents[k]
        };
        if let Some(&z) = topology.loads.get(&bus) {
            let m = profile.multiplier(bus);
            balance -= v * m / z;
        }
        for &k in topology.children(bus) {
            balance -= solution.segment_currents[k];
        }
        worst = worst.max(balance.norm());
    }
    for (k, seg) in topology.segments.iter().enumerate() {
        if !solution.energized.contains(&seg.to) {
            continue;
        }
        let v_from = solution.bus_voltages[&seg.from];
        let v_to = solution.bus_voltages[&seg.to];
        match (fault.filter(|f| f.segment == k), solution.fault) {
            (Some(f), Some(fp)) => {
                let near = v_from - fp.voltage - seg.impedance * f.position * solution.segment_currents[k];
                let far = fp.voltage - v_to - seg.impedance * (1.0 - f.position) * solution.receiving_currents[k];
                let split = solution.segment_currents[k] - solution.receiving_currents[k] - fp.current;
                let shunt = if f.impedance == ZERO {
                    fp.voltage.norm()
                } else {
                    (fp.current - fp.voltage / f.impedance).norm()
                };
                worst = worst.max(near.norm()).max(far.norm()).max(split.norm()).max(shunt);
            }
            _ => {
                let drop = v_from - v_to - seg.impedance * solution.segment_currents[k];
                worst = worst.max(drop.norm());
            }
        }
    }
    worst
}
