use std::collections::{HashMap, HashSet};

use thiserror::Error;

use super::StalenessRecord;

/// A logged staleness value that disagrees with the replayed one.
#[derive(Clone, Debug, Error, PartialEq, Eq)]
#[error("rank {applier} applied gradient {origin_seq} of rank {origin} with staleness {recorded}, replay gives {replayed}")]
pub struct OracleMismatch {
    pub applier: u32,
    pub origin: u32,
    pub origin_seq: u64,
    pub recorded: u64,
    pub replayed: u64,
}

/// Recomputes every staleness value from application logs alone.
///
/// `logs[r]` lists rank `r`'s applications in order. For a record of rank `j`
/// applying gradient `(o, s)`, the applier's set is everything `j` applied
/// before it and the origin's set is everything `o` applied before applying
/// `(o, s)` to itself; the result is the size of their symmetric difference.
/// No clock arithmetic is involved. Returns values in the order of `logs`.
pub fn replay_staleness(logs: &[Vec<StalenessRecord>]) -> Result<Vec<Vec<u64>>, String> {
    let mut own_pos: HashMap<(u32, u64), usize> = HashMap::new();
    for (r, log) in logs.iter().enumerate() {
        for (i, rec) in log.iter().enumerate() {
            if rec.origin as usize == r {
                own_pos.insert((rec.origin, rec.origin_seq), i);
            }
        }
    }
    let mut out = Vec::with_capacity(logs.len());
    for log in logs {
        let mut applier_set: HashSet<(u32, u64)> = HashSet::new();
        let mut values = Vec::with_capacity(log.len());
        for rec in log {
            let id = (rec.origin, rec.origin_seq);
            let origin_log = logs
                .get(rec.origin as usize)
                .ok_or_else(|| format!("record names unknown rank {}", rec.origin))?;
            let pos = *own_pos
                .get(&id)
                .ok_or_else(|| format!("gradient {id:?} never applied by its origin"))?;
            let origin_set: HashSet<(u32, u64)> =
                origin_log[..pos].iter().map(|r| (r.origin, r.origin_seq)).collect();
            let union = applier_set.union(&origin_set).count();
            let inter = applier_set.intersection(&origin_set).count();
            values.push((union - inter) as u64);
            if !applier_set.insert(id) {
                return Err(format!("gradient {id:?} applied twice by rank {}", rec.applier));
            }
        }
        out.push(values);
    }
    Ok(out)
}

/// Checks every record against [`replay_staleness`]; returns the number checked.
pub fn verify_staleness(logs: &[Vec<StalenessRecord>]) -> Result<usize, OracleMismatch> {
    let replayed = replay_staleness(logs).map_err(|_| OracleMismatch {
        applier: u32::MAX,
        origin: u32::MAX,
        origin_seq: 0,
        recorded: 0,
        replayed: 0,
    })?;
    let mut checked = 0;
    for (log, values) in logs.iter().zip(&replayed) {
        for (rec, &v) in log.iter().zip(values) {
            if rec.staleness != v {
                return Err(OracleMismatch {
                    applier: rec.applier,
                    origin: rec.origin,
                    origin_seq: rec.origin_seq,
                    recorded: rec.staleness,
                    replayed: v,
                });
            }
            checked += 1;
        }
    }
    Ok(checked)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(applier: u32, origin: u32, origin_seq: u64, staleness: u64) -> StalenessRecord {
        StalenessRecord { applier, origin, origin_seq, staleness, wall_ts: 0 }
    }

    #[test]
    fn two_rank_cross_application() {
        // Rank 0 computes g(0,1) then g(0,2); rank 1 computes g(1,1), then applies both of rank 0's.
        let logs = vec![
            vec![rec(0, 0, 1, 0), rec(0, 0, 2, 0), rec(0, 1, 1, 2)],
            vec![rec(1, 1, 1, 0), rec(1, 0, 1, 1), rec(1, 0, 2, 1)],
        ];
        assert_eq!(replay_staleness(&logs).unwrap(), vec![vec![0, 0, 2], vec![0, 1, 1]]);
        assert_eq!(verify_staleness(&logs).unwrap(), 6);
        let mut bad = logs.clone();
        bad[1][2].staleness = 2;
        assert_eq!(verify_staleness(&bad).unwrap_err().replayed, 1);
    }

    #[test]
    fn double_application_is_reported() {
        let logs = vec![vec![rec(0, 0, 1, 0), rec(0, 0, 1, 0)]];
        assert!(replay_staleness(&logs).is_err());
    }
}
