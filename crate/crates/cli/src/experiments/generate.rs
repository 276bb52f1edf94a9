use anyhow::Result;

use volcount_core::phantom::{generate_scan, write_scan};

use crate::data::{par_map, DatasetIndex, IndexEntry, Pool, INDEX_FILE};
use crate::manifest::RunContext;
use crate::spec::ExperimentSpec;

/// Writes `splits.total()` phantoms under `scans/` plus a `dataset.json`
/// index that later runs accept as their `dataset`.
pub fn run_generate(ctx: &mut RunContext, spec: &ExperimentSpec, threads: usize) -> Result<DatasetIndex> {
    let pool = Pool::synthetic(&spec.phantom, spec.seed, "data", spec.splits.total());
    let dir = ctx.dir().join("scans");
    std::fs::create_dir_all(&dir)?;
    let idx: Vec<usize> = (0..pool.len()).collect();
    par_map(threads, &idx, |&i| {
        let scan = generate_scan(&spec.phantom, pool.seeds[i])?;
        write_scan(&dir, &pool.ids[i], &scan, &spec.phantom)?;
        Ok(())
    })?;
    for id in &pool.ids {
        for ext in ["svol", "roi.svol", "json"] {
            ctx.record_output(&format!("scans/{id}.{ext}"))?;
        }
    }
    let index = DatasetIndex {
        phantom: spec.phantom.clone(),
        entries: pool
            .ids
            .iter()
            .zip(&pool.seeds)
            .map(|(id, &seed)| IndexEntry { id: id.clone(), seed })
            .collect(),
    };
    ctx.write_json(INDEX_FILE, &index)?;
    ctx.record_split("all", pool.ids.clone())?;
    Ok(index)
}
