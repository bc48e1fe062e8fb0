//! Hand-scheduled three-rank run: every application's staleness, checked
//! against a replay of the logs.

use std::sync::Arc;

use airflux::datasets::dyadic_pairs;
use airflux::learners::Linear;
use airflux::model::{three_rank_script, verify_staleness, ScriptStep, ScriptedCluster};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let pairs = dyadic_pairs(64, 4, 0);
    let mut cluster = ScriptedCluster::new(3, Arc::new(Linear::new(4)), 0.0625, 1);
    for step in three_rank_script() {
        let rec = cluster.step(step, &pairs)?;
        let what = match step {
            ScriptStep::Compute { rank, batch_id } => format!("rank {rank} computes batch {batch_id}"),
            ScriptStep::Deliver { from, to } => format!("rank {to} applies gradient from rank {from}"),
        };
        println!("{what:<40} origin {} seq {} staleness {}", rec.origin, rec.origin_seq, rec.staleness);
    }
    let checked = verify_staleness(cluster.logs())?;
    println!("{checked} records agree with the replay; {} gradients undelivered", cluster.undelivered());
    Ok(())
}
