//! Glue shared by the CLI and the server: parallel rendering, default
//! TF/camera choices and the Morse-map settings.

use std::sync::OnceLock;

use eddyscope_core::features::{LabelOptions, MorseEnsemble, Scale, DEFAULT_AGREEMENT};
use eddyscope_core::grid::Ensemble;
use eddyscope_core::image::Image;
use eddyscope_core::labeling::{LabelAssignment, Strategy};
use eddyscope_core::noise::DistributionSummary;
use eddyscope_core::pmap::{ProbabilisticMap, QueryEntry};
use eddyscope_core::render::{Camera, RenderConfig, RenderMode, Renderer};
use eddyscope_core::tf::TransferFunction;
use rayon::prelude::*;
use serde::Serialize;

/// Worker pool capped by `EDDYSCOPE_THREADS` when set.
pub fn pool() -> &'static rayon::ThreadPool {
    static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();
    POOL.get_or_init(|| {
        let threads = std::env::var("EDDYSCOPE_THREADS").ok().and_then(|v| v.parse::<usize>().ok()).unwrap_or(0);
        rayon::ThreadPoolBuilder::new().num_threads(threads).build().expect("thread pool")
    })
}

/// Row-parallel render; output does not depend on the thread count.
pub fn render(
    summary: &DistributionSummary,
    tf: &TransferFunction,
    camera: &Camera,
    config: &RenderConfig,
    mode: RenderMode,
) -> eddyscope_core::Result<Image> {
    let r = Renderer::new(summary, tf, *camera, *config, mode)?;
    let (w, h) = (r.width(), r.height());
    let mut buf = vec![0u8; 4 * w * h];
    pool().install(|| {
        buf.par_chunks_mut(4 * w).enumerate().for_each(|(y, row)| r.render_rows(y..y + 1, row));
    });
    Image::new(w, h, buf)
}

pub fn default_tf(summary: &DistributionSummary) -> TransferFunction {
    let (lo, hi) = summary.value_range();
    TransferFunction::preset_eddy(lo, hi)
}

pub fn default_camera(summary: &DistributionSummary, width: usize, height: usize) -> Camera {
    Camera::orbit(summary, 35.0, 30.0, 1.6, width, height)
}

/// How 2D Morse maps are derived from an ensemble.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MorseSettings {
    /// Slice index for volumetric members.
    pub z: usize,
    /// Work on `-f` so that minima become the tracked features.
    pub negate: bool,
    /// Fixed simplification threshold; chosen by agreement when absent.
    pub threshold: Option<f64>,
    pub agreement: f64,
    pub labels: LabelOptions,
}

impl Default for MorseSettings {
    fn default() -> Self {
        Self { z: 0, negate: false, threshold: None, agreement: DEFAULT_AGREEMENT, labels: LabelOptions::default() }
    }
}

impl MorseSettings {
    pub fn planar(&self, ensemble: &Ensemble) -> eddyscope_core::Result<Ensemble> {
        let e = if ensemble.dims().nz == 1 && self.z == 0 { ensemble.clone() } else { ensemble.slice_z(self.z)? };
        Ok(if self.negate { e.negate() } else { e })
    }

    pub fn build(&self, ensemble: &Ensemble) -> eddyscope_core::Result<MorseEnsemble> {
        let scale = match self.threshold {
            Some(t) => Scale::Fixed(t),
            None => Scale::Select(self.agreement),
        };
        MorseEnsemble::build(&self.planar(ensemble)?, scale)
    }

    pub fn map(
        &self,
        me: &MorseEnsemble,
        strategy: Strategy,
    ) -> eddyscope_core::Result<(LabelAssignment, ProbabilisticMap)> {
        let a = me.label(strategy, &self.labels)?;
        let pm = me.probabilistic_map(&a)?;
        Ok((a, pm))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryJson {
    pub label: u32,
    pub prob: f64,
    pub color: [u8; 3],
}

pub fn query_json(entries: &[QueryEntry]) -> Vec<QueryJson> {
    entries.iter().map(|e| QueryJson { label: e.label, prob: e.probability, color: e.color }).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PersistenceJson {
    pub member_id: u32,
    /// `(threshold, count)` rows as in the CSV report.
    pub rows: Vec<(f64, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionJson {
    pub threshold: f64,
    pub count: usize,
    pub fraction: f64,
}

pub fn persistence_json(me: &MorseEnsemble) -> serde_json::Value {
    let graphs: Vec<PersistenceJson> = me
        .fields
        .iter()
        .zip(&me.graphs)
        .map(|(f, g)| PersistenceJson { member_id: f.member_id, rows: g.rows() })
        .collect();
    let selection =
        me.selection.map(|s| SelectionJson { threshold: s.threshold, count: s.count, fraction: s.fraction });
    serde_json::json!({ "threshold": me.threshold, "selection": selection, "members": graphs })
}
