//! Ensemble-level Morse pipeline: per-member complexes, a shared
//! simplification scale, cross-member labels and the probabilistic map.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::{Ensemble, ScalarGrid};
use crate::labeling::{
    label_kmeans, label_morse_mapping, label_nearest_mandatory, mandatory_maxima, maxima_positions,
    reference_member, LabelAssignment, MandatoryRegionSet, Strategy,
};
use crate::morse::{select_scale, MorseComplex, PersistenceGraph, ScaleSelection};
use crate::pmap::ProbabilisticMap;

/// Default share of members that must agree on the maxima count.
pub const DEFAULT_AGREEMENT: f64 = 0.5;

/// How the simplification threshold is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scale {
    /// Smallest scale reaching this agreement fraction.
    Select(f64),
    Fixed(f64),
}

impl Default for Scale {
    fn default() -> Self {
        Scale::Select(DEFAULT_AGREEMENT)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LabelOptions {
    /// Cluster count for k-means; the selected maxima count when absent.
    pub k: Option<usize>,
    pub seed: u64,
    /// Lowest lower-envelope level swept for mandatory regions.
    pub min_level: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct MorseEnsemble {
    pub fields: Vec<ScalarGrid>,
    pub graphs: Vec<PersistenceGraph>,
    pub selection: Option<ScaleSelection>,
    pub threshold: f64,
    pub simplified: Vec<MorseComplex>,
}

impl MorseEnsemble {
    /// `ensemble` must be planar; slice and negate beforehand as needed.
    pub fn build(ensemble: &Ensemble, scale: Scale) -> Result<Self> {
        if ensemble.dims().nz != 1 {
            return Err(Error::Dimension(alloc::format!(
                "Morse maps need 2D members, got nz = {}",
                ensemble.dims().nz
            )));
        }
        let raw: Vec<MorseComplex> = ensemble.members().iter().map(MorseComplex::compute).collect::<Result<_>>()?;
        let graphs: Vec<PersistenceGraph> = raw.iter().map(MorseComplex::graph).collect();
        let (selection, threshold) = match scale {
            Scale::Select(target) => {
                let s = select_scale(&graphs, target)?;
                (Some(s), s.threshold)
            }
            Scale::Fixed(t) => (None, t),
        };
        let simplified = raw.iter().map(|c| c.simplify(threshold)).collect::<Result<_>>()?;
        Ok(Self { fields: ensemble.members().to_vec(), graphs, selection, threshold, simplified })
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn maxima_counts(&self) -> Vec<usize> {
        self.simplified.iter().map(MorseComplex::maxima_count).collect()
    }

    pub fn positions(&self) -> Vec<Vec<[f64; 2]>> {
        self.simplified.iter().map(|c| maxima_positions(&c.destinations)).collect()
    }

    pub fn reference(&self) -> Result<usize> {
        let ids: Vec<u32> = self.fields.iter().map(|g| g.member_id).collect();
        reference_member(&ids, &self.maxima_counts())
    }

    pub fn mandatory(&self, min_level: Option<f64>) -> Result<MandatoryRegionSet> {
        let maxima: Vec<Vec<usize>> = self
            .simplified
            .iter()
            .map(|c| c.destinations.maxima.iter().map(|m| m.pixel).collect())
            .collect();
        mandatory_maxima(&self.fields, &maxima, min_level.unwrap_or(f64::NEG_INFINITY))
    }

    pub fn label(&self, strategy: Strategy, opts: &LabelOptions) -> Result<LabelAssignment> {
        match strategy {
            Strategy::KMeans => {
                let k = match (opts.k, self.selection) {
                    (Some(k), _) => k,
                    (None, Some(s)) => s.count,
                    (None, None) => self.modal_count(),
                };
                label_kmeans(&self.positions(), k, opts.seed)
            }
            Strategy::MorseMapping => {
                let maps: Vec<_> = self.simplified.iter().map(|c| c.destinations.clone()).collect();
                label_morse_mapping(&maps, self.reference()?)
            }
            Strategy::NearestMandatory => label_nearest_mandatory(&self.positions(), &self.mandatory(opts.min_level)?),
        }
    }

    pub fn probabilistic_map(&self, assignment: &LabelAssignment) -> Result<ProbabilisticMap> {
        let maps: Vec<_> = self.simplified.iter().map(|c| c.destinations.clone()).collect();
        ProbabilisticMap::from_destinations(&maps, assignment)
    }

    fn modal_count(&self) -> usize {
        self.maxima_counts()[self.reference().unwrap_or(0)]
    }
}
