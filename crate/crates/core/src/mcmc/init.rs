//! Starting latent trajectories consistent with panel data.

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::io::{PanelData, UnitRecord};
use crate::statespace::TransitionGraph;
use crate::trajectory::{PopulationTrajectory, UnitPath};

/// Builds one latent path per unit: between appointments with different
/// states the shortest live path is inserted with evenly spaced jumps (a
/// single jump sits at the midpoint); failures happen exactly at the
/// recorded time. Inserted jumps that would coincide with another unit's
/// jump or failure are nudged slightly later.
pub fn init_latent(panel: &PanelData, graph: &TransitionGraph) -> Result<PopulationTrajectory> {
    panel.validate(graph)?;
    let mut taken: HashSet<u64> = panel
        .units
        .iter()
        .filter(|u| u.is_death())
        .map(|u| u.end_time.to_bits())
        .collect();
    let units = panel
        .units
        .iter()
        .map(|record| init_unit(record, graph, &mut taken))
        .collect::<Result<Vec<_>>>()?;
    Ok(PopulationTrajectory { units })
}

fn init_unit(record: &UnitRecord, graph: &TransitionGraph, taken: &mut HashSet<u64>) -> Result<UnitPath> {
    let impossible = |reason: String| Error::ImpossibleRecord { unit: record.id.clone(), reason };
    let mut path = UnitPath::constant(record.observations[0].1);
    for w in record.observations.windows(2) {
        let ((t0, s0), (t1, s1)) = (w[0], w[1]);
        if s0 == s1 {
            continue;
        }
        let route = graph.shortest_live_path(s0, s1).ok_or_else(|| {
            impossible(format!("no path from state {} to state {}", s0 + 1, s1 + 1))
        })?;
        insert_route(&mut path, &route, t0, t1, taken);
    }
    if record.is_death() {
        let (t0, last) = *record.observations.last().expect("validated");
        let route = record
            .death_states(graph)
            .into_iter()
            .filter_map(|d| graph.shortest_live_path(last, d))
            .min_by_key(|r| r.len())
            .ok_or_else(|| impossible(format!("no path from state {} to failure", last + 1)))?;
        let hops = route.len() - 1;
        let spacing = (record.end_time - t0) / hops as f64;
        for (k, &s) in route[1..hops].iter().enumerate() {
            let t = free_time(t0 + spacing * (k + 1) as f64, spacing, record.end_time, taken);
            path.jumps.push((t, s));
        }
        path.jumps.push((record.end_time, route[hops]));
    } else {
        path.censor = Some(record.end_time);
    }
    Ok(path)
}

fn insert_route(path: &mut UnitPath, route: &[usize], t0: f64, t1: f64, taken: &mut HashSet<u64>) {
    let spacing = (t1 - t0) / route.len() as f64;
    for (k, &s) in route[1..].iter().enumerate() {
        let t = free_time(t0 + spacing * (k + 1) as f64, spacing, t1, taken);
        path.jumps.push((t, s));
    }
}

/// First time at or after `t` not used by another jump, stepping by a tiny
/// fraction of `spacing` and staying below `limit`.
fn free_time(t: f64, spacing: f64, limit: f64, taken: &mut HashSet<u64>) -> f64 {
    let mut candidate = t;
    let mut k = 1.0;
    while taken.contains(&candidate.to_bits()) {
        candidate = t + spacing * 1e-7 * k;
        k += 1.0;
        if candidate >= limit {
            candidate = t - spacing * 1e-7 * k;
        }
    }
    taken.insert(candidate.to_bits());
    candidate
}
