use anyhow::{Context, Result};

use volcount_core::interpret::{
    occlusion_curve, random_occlusion_scores, saliency, saliency_contrast, OcclusionConfig,
};
use volcount_core::regnet::Model;
use volcount_core::volgrid::write_volume;

use super::models_for;
use crate::data::{Batch, Pool};
use crate::manifest::RunContext;
use crate::spec::{derive_seed, ExperimentSpec};
use crate::table::Table;

/// `count` phantoms with at least one annotation inside the crop, drawn
/// from a dedicated seed stream that no training split uses.
pub fn annotated_phantoms(spec: &ExperimentSpec, count: usize, threads: usize) -> Result<Batch> {
    let mut out = Batch::default();
    let mut offset = 0usize;
    while out.len() < count {
        let chunk = (count - out.len()).max(8) * 2;
        let pool = Pool::synthetic(&spec.phantom, spec.seed, "annotated", offset + chunk);
        let idx: Vec<usize> = (offset..offset + chunk).collect();
        let b = pool.load(&idx, &spec.preprocess, true, threads)?;
        for (ex, m) in b.examples.into_iter().zip(b.meta) {
            if !m.annotations.is_empty() && out.len() < count {
                out.examples.push(ex);
                out.meta.push(m);
            }
        }
        offset += chunk;
        if offset > 100 * count.max(1) {
            anyhow::bail!("could not find {count} annotated phantoms");
        }
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct OcclusionSummary {
    /// Fraction of phantoms whose score never rises as more lesions are occluded.
    pub monotone_fraction: f64,
    pub mean_single_lesion_delta: f64,
    pub mean_random_block_delta: f64,
    /// Whether the k = 0 score equals the unoccluded score bit for bit everywhere.
    pub zero_k_exact: bool,
}

pub fn occlusion_study(
    ctx: &mut RunContext,
    model: &Model,
    phantoms: &Batch,
    cfg: &OcclusionConfig,
    seed: u64,
) -> Result<OcclusionSummary> {
    let mut curves = Table::new(&["id", "lesions", "k", "score", "delta"]);
    let mut per_scan = Table::new(&["id", "lesions", "monotone", "single_lesion_delta", "random_block_abs_delta"]);
    let (mut monotone, mut single, mut random) = (0usize, Vec::new(), Vec::new());
    let mut exact = true;
    for (i, (ex, m)) in phantoms.examples.iter().zip(&phantoms.meta).enumerate() {
        let masks = m.masks.as_ref().context("phantom loaded without masks")?;
        let curve = occlusion_curve(model, &ex.input, &masks.roi, &m.annotations, cfg)?;
        let base = model.score(&ex.input)?;
        exact &= curve[0].1.to_bits() == base.to_bits();
        for &(k, s) in &curve {
            curves.push(vec![(&m.id).into(), m.annotations.len().into(), k.into(), s.into(), (s - base).into()]);
        }
        let is_monotone = curve.windows(2).all(|w| w[1].1 <= w[0].1);
        monotone += is_monotone as usize;
        let d1 = curve.get(1).map_or(0.0, |c| c.1 - base);
        let rcfg = OcclusionConfig {
            seed: derive_seed(seed, "random_blocks", i as u64),
            ..cfg.clone()
        };
        let rs = random_occlusion_scores(model, &ex.input, &masks.roi, &rcfg)?;
        let rd = rs.iter().map(|s| (s - base).abs()).sum::<f64>() / rs.len() as f64;
        per_scan.push(vec![
            (&m.id).into(),
            m.annotations.len().into(),
            if is_monotone { "true" } else { "false" }.into(),
            d1.into(),
            rd.into(),
        ]);
        single.push(d1.abs());
        random.push(rd);
    }
    ctx.write_csv("occlusion_curves.csv", &curves)?;
    ctx.write_csv("occlusion_scans.csv", &per_scan)?;
    let n = phantoms.len() as f64;
    let s = OcclusionSummary {
        monotone_fraction: monotone as f64 / n,
        mean_single_lesion_delta: single.iter().sum::<f64>() / n,
        mean_random_block_delta: random.iter().sum::<f64>() / n,
        zero_k_exact: exact,
    };
    let mut t = Table::new(&["phantoms", "monotone_fraction", "mean_single_lesion_abs_delta", "mean_random_block_abs_delta", "zero_k_exact"]);
    t.push(vec![
        phantoms.len().into(),
        s.monotone_fraction.into(),
        s.mean_single_lesion_delta.into(),
        s.mean_random_block_delta.into(),
        if s.zero_k_exact { "true" } else { "false" }.into(),
    ]);
    ctx.write_csv("metrics.csv", &t)?;
    Ok(s)
}

#[derive(Clone, Debug)]
pub struct SaliencySummary {
    /// Fraction of phantoms whose median lesion saliency beats the background 90th percentile.
    pub pass_fraction: f64,
    pub rows: Vec<(String, f64, f64)>,
}

pub fn saliency_study(
    ctx: &mut RunContext,
    model: &Model,
    phantoms: &Batch,
    exclusion_radius: f64,
    write_maps: bool,
) -> Result<SaliencySummary> {
    let mut t = Table::new(&["id", "lesions", "median_at_lesions", "background_p90", "pass"]);
    let mut rows = Vec::new();
    let mut pass = 0usize;
    for (ex, m) in phantoms.examples.iter().zip(&phantoms.meta) {
        let masks = m.masks.as_ref().context("phantom loaded without masks")?;
        let map = saliency(model, &ex.input)?;
        let (med, p90) = saliency_contrast(&map, &masks.roi, &m.annotations, exclusion_radius)?;
        let ok = med > p90;
        pass += ok as usize;
        t.push(vec![
            (&m.id).into(),
            m.annotations.len().into(),
            med.into(),
            p90.into(),
            if ok { "true" } else { "false" }.into(),
        ]);
        if write_maps {
            let rel = format!("maps/{}.saliency.svol", m.id);
            write_volume(ctx.dir().join(&rel), &map.0)?;
            ctx.record_output(&rel)?;
        }
        rows.push((m.id.clone(), med, p90));
    }
    ctx.write_csv("metrics.csv", &t)?;
    Ok(SaliencySummary {
        pass_fraction: pass as f64 / phantoms.len() as f64,
        rows,
    })
}

pub fn run_occlude(ctx: &mut RunContext, spec: &ExperimentSpec, threads: usize) -> Result<OcclusionSummary> {
    let model = models_for(ctx, spec, 1, threads)?.remove(0);
    let phantoms = annotated_phantoms(spec, spec.interpret.phantoms, threads)?;
    ctx.record_split("annotated", phantoms.ids())?;
    occlusion_study(ctx, &model, &phantoms, &spec.interpret.occlusion, spec.seed)
}

pub fn run_saliency(ctx: &mut RunContext, spec: &ExperimentSpec, threads: usize) -> Result<SaliencySummary> {
    let model = models_for(ctx, spec, 1, threads)?.remove(0);
    let phantoms = annotated_phantoms(spec, spec.interpret.phantoms, threads)?;
    ctx.record_split("annotated", phantoms.ids())?;
    saliency_study(ctx, &model, &phantoms, spec.interpret.exclusion_radius, spec.interpret.write_maps)
}
