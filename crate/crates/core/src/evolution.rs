//! Genetic search over distortion programs for a single image.
//!
//! Fitness rewards segmentation disruption scaled by normalized fidelity:
//!
//! ```text
//! fitness = 0                                          if psnr <  threshold
//!         = (1 - iou) * min(psnr / threshold, ceiling)  otherwise
//! ```
//!
//! The oracle is only consulted for programs that pass the PSNR gate. Each
//! generation keeps `elite_count` individuals unchanged and fills the rest
//! through tournament selection, two-point crossover on gene boundaries and
//! three-level mutation.

use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::genome::{self, Chromosome, GenomeConfig, GenomeError, SubTransform};
use crate::imaging::{self, Image, ImagingError, LabelMap, Shape};
use crate::kv::{KvDocument, KvError};
use crate::oracle::{OracleError, SegmentationOracle};
use crate::rng;
use crate::transforms::{
    self, bounded_values, Distortion, DistortionKind, DistortionParams, Fill, Interval, Orientation, Param,
    ParameterBounds, SequenceError,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvolutionError {
    #[error("invalid GA config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Genome(#[from] GenomeError),
    #[error(transparent)]
    Dimension(#[from] ImagingError),
    #[error("chromosome could not be applied: {0}")]
    Transform(#[from] SequenceError),
    #[error("oracle failure on {chromosome}: {source}")]
    Oracle {
        chromosome: String,
        #[source]
        source: OracleError,
    },
    #[error("empty population")]
    EmptyPopulation,
}

/// Relative weights of the three mutation levels; they must sum to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MutationSubrates {
    pub structural: f64,
    pub kind_change: f64,
    pub param_perturb: f64,
}

impl Default for MutationSubrates {
    fn default() -> Self {
        Self {
            structural: 0.3,
            kind_change: 0.3,
            param_perturb: 0.4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaConfig {
    pub population_size: usize,
    pub max_generations: usize,
    pub crossover_rate: f64,
    pub mutation_rate: f64,
    pub mutation_subrates: MutationSubrates,
    pub tournament_size: usize,
    pub elite_count: usize,
    pub stagnation_epsilon: f64,
    pub stagnation_window: usize,
    pub psnr_threshold: f64,
    /// Cap on `psnr / psnr_threshold`; keeps infinite-PSNR programs finite.
    pub psnr_factor_ceiling: f64,
    pub master_seed: u64,
    pub min_genes: usize,
    pub max_genes: usize,
    pub activation_probability: f64,
    /// Indexed like [`DistortionKind::ALL`].
    pub kind_weights: [f64; 7],
    /// Wall-clock cap per run; `None` keeps the run fully deterministic.
    pub time_budget_secs: Option<f64>,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            population_size: 50,
            max_generations: 100,
            crossover_rate: 0.8,
            mutation_rate: 0.2,
            mutation_subrates: MutationSubrates::default(),
            tournament_size: 3,
            elite_count: 2,
            stagnation_epsilon: 0.001,
            stagnation_window: 15,
            psnr_threshold: 20.0,
            psnr_factor_ceiling: 2.5,
            master_seed: 0,
            min_genes: 1,
            max_genes: 6,
            activation_probability: 0.5,
            kind_weights: [1.0; 7],
            time_budget_secs: None,
        }
    }
}

const GA_KEYS: &[&str] = &[
    "population_size",
    "max_generations",
    "crossover_rate",
    "mutation_rate",
    "mutation_subrates.structural",
    "mutation_subrates.kind_change",
    "mutation_subrates.param_perturb",
    "tournament_size",
    "elite_count",
    "stagnation_epsilon",
    "stagnation_window",
    "psnr_threshold",
    "psnr_factor_ceiling",
    "master_seed",
    "min_genes",
    "max_genes",
    "activation_probability",
    "kind_weights.RegionDropout",
    "kind_weights.LineColumnDropout",
    "kind_weights.LineStripping",
    "kind_weights.SaltPepper",
    "kind_weights.SpatialGaussian",
    "kind_weights.ChannelDropout",
    "kind_weights.ChannelGaussian",
    "time_budget_secs",
];

impl GaConfig {
    pub fn validate(&self) -> Result<(), EvolutionError> {
        let bad = |m: &str| Err(EvolutionError::InvalidConfig(m.to_string()));
        if self.population_size == 0 {
            return bad("population_size must be at least 1");
        }
        if self.max_generations == 0 {
            return bad("max_generations must be at least 1");
        }
        if self.elite_count >= self.population_size {
            return bad("elite_count must be smaller than population_size");
        }
        if self.tournament_size == 0 || self.tournament_size > self.population_size {
            return bad("tournament_size must lie in [1, population_size]");
        }
        let rate = |r: f64| (0.0..=1.0).contains(&r);
        if !rate(self.crossover_rate) || !rate(self.mutation_rate) {
            return bad("crossover_rate and mutation_rate must lie in [0,1]");
        }
        let s = self.mutation_subrates;
        if ![s.structural, s.kind_change, s.param_perturb].into_iter().all(rate)
            || (s.structural + s.kind_change + s.param_perturb - 1.0).abs() > 1e-9
        {
            return bad("mutation subrates must lie in [0,1] and sum to 1");
        }
        if !(self.stagnation_epsilon >= 0.0) || self.stagnation_window == 0 {
            return bad("stagnation_epsilon must be >= 0 and stagnation_window >= 1");
        }
        if !(self.psnr_threshold.is_finite() && self.psnr_threshold > 0.0) {
            return bad("psnr_threshold must be positive");
        }
        if !(self.psnr_factor_ceiling.is_finite() && self.psnr_factor_ceiling >= 1.0) {
            return bad("psnr_factor_ceiling must be finite and >= 1");
        }
        if let Some(t) = self.time_budget_secs {
            if !(t > 0.0) {
                return bad("time_budget_secs must be positive");
            }
        }
        Ok(())
    }

    pub fn genome_config(&self, bounds: &ParameterBounds, shape: Shape) -> GenomeConfig {
        GenomeConfig {
            min_genes: self.min_genes,
            max_genes: self.max_genes,
            bounds: bounds.clone(),
            kind_weights: self.kind_weights,
            activation_probability: self.activation_probability,
            shape,
        }
    }

    pub fn from_kv(doc: &KvDocument) -> Result<Self, KvError> {
        doc.reject_unknown(GA_KEYS)?;
        let mut c = Self::default();
        macro_rules! set {
            ($field:expr, $key:expr) => {
                if let Some(v) = doc.parse_value($key)? {
                    $field = v;
                }
            };
        }
        set!(c.population_size, "population_size");
        set!(c.max_generations, "max_generations");
        set!(c.crossover_rate, "crossover_rate");
        set!(c.mutation_rate, "mutation_rate");
        set!(c.mutation_subrates.structural, "mutation_subrates.structural");
        set!(c.mutation_subrates.kind_change, "mutation_subrates.kind_change");
        set!(c.mutation_subrates.param_perturb, "mutation_subrates.param_perturb");
        set!(c.tournament_size, "tournament_size");
        set!(c.elite_count, "elite_count");
        set!(c.stagnation_epsilon, "stagnation_epsilon");
        set!(c.stagnation_window, "stagnation_window");
        set!(c.psnr_threshold, "psnr_threshold");
        set!(c.psnr_factor_ceiling, "psnr_factor_ceiling");
        set!(c.master_seed, "master_seed");
        set!(c.min_genes, "min_genes");
        set!(c.max_genes, "max_genes");
        set!(c.activation_probability, "activation_probability");
        for k in DistortionKind::ALL {
            set!(c.kind_weights[k.index()], &format!("kind_weights.{}", k.name()));
        }
        match doc.get("time_budget_secs") {
            None | Some("") | Some("none") => {}
            Some(_) => c.time_budget_secs = doc.parse_value("time_budget_secs")?,
        }
        c.validate().map_err(|e| KvError::Invalid {
            key: "ga".into(),
            message: e.to_string(),
        })?;
        Ok(c)
    }

    pub fn parse(text: &str) -> Result<Self, KvError> {
        Self::from_kv(&KvDocument::parse(text)?)
    }

    pub fn to_kv(&self) -> KvDocument {
        let mut d = KvDocument::default();
        d.insert("population_size", self.population_size.to_string());
        d.insert("max_generations", self.max_generations.to_string());
        d.insert("crossover_rate", self.crossover_rate.to_string());
        d.insert("mutation_rate", self.mutation_rate.to_string());
        d.insert("mutation_subrates.structural", self.mutation_subrates.structural.to_string());
        d.insert("mutation_subrates.kind_change", self.mutation_subrates.kind_change.to_string());
        d.insert("mutation_subrates.param_perturb", self.mutation_subrates.param_perturb.to_string());
        d.insert("tournament_size", self.tournament_size.to_string());
        d.insert("elite_count", self.elite_count.to_string());
        d.insert("stagnation_epsilon", self.stagnation_epsilon.to_string());
        d.insert("stagnation_window", self.stagnation_window.to_string());
        d.insert("psnr_threshold", self.psnr_threshold.to_string());
        d.insert("psnr_factor_ceiling", self.psnr_factor_ceiling.to_string());
        d.insert("master_seed", self.master_seed.to_string());
        d.insert("min_genes", self.min_genes.to_string());
        d.insert("max_genes", self.max_genes.to_string());
        d.insert("activation_probability", self.activation_probability.to_string());
        for k in DistortionKind::ALL {
            d.insert(format!("kind_weights.{}", k.name()), self.kind_weights[k.index()].to_string());
        }
        d.insert(
            "time_budget_secs",
            self.time_budget_secs.map_or("none".to_string(), |t| t.to_string()),
        );
        d
    }
}

/// Score attached to one evaluated chromosome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitnessRecord {
    pub fitness: f64,
    /// Mean IoU of the oracle output; `None` when the PSNR gate rejected the
    /// program and the oracle was never asked.
    pub iou: Option<f64>,
    #[serde(with = "psnr_serde")]
    pub psnr: f64,
    pub generation: usize,
}

/// JSON has no infinity; identity programs serialize PSNR as `"inf"`.
pub mod psnr_serde {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            Repr::Text("inf".into()).serialize(s)
        } else {
            Repr::Num(*v).serialize(s)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("bad psnr `{t}`"))),
        }
    }
}

/// The fitness formula on its own.
pub fn fitness_score(iou: f64, psnr: f64, threshold: f64, ceiling: f64) -> f64 {
    if psnr < threshold {
        0.0
    } else {
        (1.0 - iou) * (psnr / threshold).min(ceiling)
    }
}

/// Applies `ch`, gates on PSNR and, if the gate passes, scores the oracle
/// output against `truth`.
pub fn fitness(
    original: &Image,
    truth: &LabelMap,
    ch: &Chromosome,
    oracle: &dyn SegmentationOracle,
    cfg: &GaConfig,
) -> Result<FitnessRecord, EvolutionError> {
    evaluate(original, truth, ch, oracle, cfg, 0).map(|(r, _)| r)
}

fn evaluate(
    original: &Image,
    truth: &LabelMap,
    ch: &Chromosome,
    oracle: &dyn SegmentationOracle,
    cfg: &GaConfig,
    generation: usize,
) -> Result<(FitnessRecord, bool), EvolutionError> {
    if original.height() != truth.height() || original.width() != truth.width() {
        return Err(ImagingError::DimensionMismatch {
            left: original.shape(),
            right: truth.shape(),
        }
        .into());
    }
    let distorted = transforms::apply_sequence(original, &ch.to_transform_sequence())?;
    let psnr = imaging::psnr(original, &distorted)?;
    if psnr < cfg.psnr_threshold {
        return Ok((
            FitnessRecord {
                fitness: 0.0,
                iou: None,
                psnr,
                generation,
            },
            false,
        ));
    }
    let prediction = oracle.segment(&distorted).map_err(|source| EvolutionError::Oracle {
        chromosome: format!("generation {generation}, chromosome {}", ch.to_hex()),
        source,
    })?;
    let iou = imaging::iou(&prediction, truth)?.mean_iou;
    Ok((
        FitnessRecord {
            fitness: fitness_score(iou, psnr, cfg.psnr_threshold, cfg.psnr_factor_ceiling),
            iou: Some(iou),
            psnr,
            generation,
        },
        true,
    ))
}

/// Index of the tournament winner among `k` distinct uniformly drawn
/// individuals. Ties go to the lowest population index.
pub fn tournament_select<R: Rng + ?Sized>(fitness: &[f64], k: usize, rng: &mut R) -> Result<usize, EvolutionError> {
    if fitness.is_empty() {
        return Err(EvolutionError::EmptyPopulation);
    }
    let k = k.clamp(1, fitness.len());
    let mut best: Option<usize> = None;
    for i in index::sample(rng, fitness.len(), k) {
        best = match best {
            None => Some(i),
            Some(b) if fitness[i] > fitness[b] || (fitness[i] == fitness[b] && i < b) => Some(i),
            keep => keep,
        };
    }
    Ok(best.expect("k >= 1"))
}

/// Exchanges `a[a_cut.0..a_cut.1]` with `b[b_cut.0..b_cut.1]`.
pub fn splice(a: &Chromosome, b: &Chromosome, a_cut: (usize, usize), b_cut: (usize, usize)) -> (Chromosome, Chromosome) {
    let join = |head: &[SubTransform], mid: &[SubTransform], tail: &[SubTransform]| {
        Chromosome::new(head.iter().chain(mid).chain(tail).cloned().collect())
    };
    let (ag, bg) = (&a.genes, &b.genes);
    (
        join(&ag[..a_cut.0], &bg[b_cut.0..b_cut.1], &ag[a_cut.1..]),
        join(&bg[..b_cut.0], &ag[a_cut.0..a_cut.1], &bg[b_cut.1..]),
    )
}

fn cut_pair<R: Rng + ?Sized>(len: usize, rng: &mut R) -> (usize, usize) {
    let x = rng.random_range(0..=len);
    let y = rng.random_range(0..=len);
    (x.min(y), x.max(y))
}

/// Length repair: truncate above `max_genes`; below `min_genes` the child is
/// replaced with a copy of the fitter parent.
pub fn repair(child: Chromosome, fitter_parent: &Chromosome, cfg: &GenomeConfig) -> Chromosome {
    let mut child = child;
    if child.len() > cfg.max_genes {
        child.genes.truncate(cfg.max_genes);
    }
    if child.len() < cfg.min_genes {
        return fitter_parent.clone();
    }
    child
}

/// Two-point crossover with cut points on gene boundaries of each parent.
pub fn crossover_two_point<R: Rng + ?Sized>(
    a: &Chromosome,
    b: &Chromosome,
    fitness_a: f64,
    fitness_b: f64,
    cfg: &GenomeConfig,
    rng: &mut R,
) -> (Chromosome, Chromosome) {
    let a_cut = cut_pair(a.len(), rng);
    let b_cut = cut_pair(b.len(), rng);
    let (x, y) = splice(a, b, a_cut, b_cut);
    let fitter = if fitness_b > fitness_a { b } else { a };
    (repair(x, fitter, cfg), repair(y, fitter, cfg))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MutationLevel {
    Structural,
    KindChange,
    ParamPerturb,
}

/// Applies one mutation with probability `mutation_rate`; reports which
/// level was drawn (`None` when no mutation happened).
pub fn mutate_with_report<R: Rng + ?Sized>(
    ch: &Chromosome,
    ga: &GaConfig,
    cfg: &GenomeConfig,
    rng: &mut R,
) -> (Chromosome, Option<MutationLevel>) {
    if ga.mutation_rate <= 0.0 || !rng.random_bool(ga.mutation_rate.min(1.0)) {
        return (ch.clone(), None);
    }
    let s = ga.mutation_subrates;
    let u: f64 = rng.random();
    let level = if u < s.structural {
        MutationLevel::Structural
    } else if u < s.structural + s.kind_change {
        MutationLevel::KindChange
    } else {
        MutationLevel::ParamPerturb
    };
    let mut out = ch.clone();
    match level {
        MutationLevel::Structural => mutate_structure(&mut out, cfg, rng),
        MutationLevel::KindChange => mutate_kind(&mut out, cfg, rng),
        MutationLevel::ParamPerturb => mutate_locus(&mut out, cfg, rng),
    }
    (out, Some(level))
}

pub fn mutate<R: Rng + ?Sized>(ch: &Chromosome, ga: &GaConfig, cfg: &GenomeConfig, rng: &mut R) -> Chromosome {
    mutate_with_report(ch, ga, cfg, rng).0
}

fn mutate_structure<R: Rng + ?Sized>(ch: &mut Chromosome, cfg: &GenomeConfig, rng: &mut R) {
    let can_insert = ch.len() < cfg.max_genes;
    let can_delete = ch.len() > cfg.min_genes;
    let insert = match (can_insert, can_delete) {
        (true, true) => rng.random_bool(0.5),
        (true, false) => true,
        (false, true) => false,
        (false, false) => return,
    };
    if insert {
        let pos = rng.random_range(0..=ch.len());
        let gene = genome::random_gene(cfg, rng);
        ch.genes.insert(pos, gene);
    } else {
        let pos = rng.random_range(0..ch.len());
        ch.genes.remove(pos);
    }
}

fn mutate_kind<R: Rng + ?Sized>(ch: &mut Chromosome, cfg: &GenomeConfig, rng: &mut R) {
    let pos = rng.random_range(0..ch.len());
    let gene = &mut ch.genes[pos];
    let current = gene.params.kind();
    if let Some(kind) = genome::random_kind(cfg, Some(current), rng) {
        gene.params.distortion = genome::random_distortion(kind, cfg, rng);
    }
}

#[derive(Debug, Clone, Copy)]
enum Locus {
    Activation,
    Affected,
    Bounded(Param),
    Orientation,
    Fill,
    Channel,
    LineIndex,
}

fn loci(d: &Distortion, cfg: &GenomeConfig) -> Vec<Locus> {
    let mut out = vec![Locus::Activation];
    if cfg.max_affected() > 0 {
        out.push(Locus::Affected);
    }
    out.extend(bounded_values(d).into_iter().map(|(p, _)| Locus::Bounded(p)));
    match d {
        Distortion::LineColumnDropout { .. } => out.extend([Locus::Orientation, Locus::LineIndex, Locus::Fill]),
        Distortion::LineStripping { .. } => out.extend([Locus::Orientation, Locus::Fill]),
        Distortion::ChannelDropout { .. } => out.extend([Locus::Channel, Locus::Fill]),
        Distortion::ChannelGaussian { .. } => out.push(Locus::Channel),
        _ => {}
    }
    out
}

/// Uniform step within +-10% of the interval width, clamped.
fn nudge<R: Rng + ?Sized>(value: f64, iv: Interval, rng: &mut R) -> f64 {
    let step = rng.random_range(-0.1..=0.1) * iv.width();
    iv.clamp(value + step)
}

fn nudge_int<R: Rng + ?Sized>(value: u32, lo: u32, hi: u32, rng: &mut R) -> u32 {
    let span = (0.1 * (hi - lo) as f64).round().max(1.0) as i64;
    let step = rng.random_range(-span..=span);
    (value as i64 + step).clamp(lo as i64, hi as i64) as u32
}

fn other_channel<R: Rng + ?Sized>(c: u8, rng: &mut R) -> u8 {
    (c + rng.random_range(1..3)) % 3
}

fn flip_fill(f: Fill) -> Fill {
    match f {
        Fill::Min => Fill::Max,
        Fill::Max => Fill::Min,
    }
}

/// A random axis-aligned block of at most `max_affected` pixels, as sorted
/// flat indices.
fn random_block<R: Rng + ?Sized>(cfg: &GenomeConfig, rng: &mut R) -> Vec<u32> {
    let (h, w) = (cfg.shape.height, cfg.shape.width);
    let limit = cfg.max_affected().max(1);
    let bh = rng.random_range(1..=h.min(limit));
    let bw = rng.random_range(1..=w.min(limit / bh).max(1));
    let top = rng.random_range(0..=h - bh);
    let left = rng.random_range(0..=w - bw);
    let mut out = Vec::with_capacity(bh * bw);
    for r in top..top + bh {
        for c in left..left + bw {
            out.push((r * w + c) as u32);
        }
    }
    out
}

fn perturb_bounded<R: Rng + ?Sized>(d: &mut Distortion, p: Param, bounds: &ParameterBounds, rng: &mut R) {
    let iv = bounds.get(p);
    let pair = |this: f64, other: f64, rng: &mut R| {
        let capped = Interval::new(iv.lo, iv.hi.min(1.0 - other).max(iv.lo));
        nudge(this, capped, rng)
    };
    match (d, p) {
        (Distortion::RegionDropout { p_min, p_max }, Param::RegionPMin) => *p_min = pair(*p_min, *p_max, rng),
        (Distortion::RegionDropout { p_min, p_max }, Param::RegionPMax) => *p_max = pair(*p_max, *p_min, rng),
        (Distortion::SaltPepper { p_salt, p_pepper }, Param::Salt) => *p_salt = pair(*p_salt, *p_pepper, rng),
        (Distortion::SaltPepper { p_salt, p_pepper }, Param::Pepper) => *p_pepper = pair(*p_pepper, *p_salt, rng),
        (Distortion::LineStripping { stride, .. }, Param::Stride) => {
            let lo = iv.lo.ceil().max(1.0) as u32;
            let hi = iv.hi.floor() as u32;
            *stride = nudge_int(*stride, lo, hi.max(lo), rng);
        }
        (Distortion::SpatialGaussian { mu, .. }, Param::SpatialMu)
        | (Distortion::ChannelGaussian { mu, .. }, Param::ChannelMu) => *mu = nudge(*mu, iv, rng),
        (Distortion::SpatialGaussian { sigma, .. }, Param::SpatialSigma)
        | (Distortion::ChannelGaussian { sigma, .. }, Param::ChannelSigma) => *sigma = nudge(*sigma, iv, rng),
        _ => {}
    }
}

fn mutate_locus<R: Rng + ?Sized>(ch: &mut Chromosome, cfg: &GenomeConfig, rng: &mut R) {
    let pos = rng.random_range(0..ch.len());
    let gene = &mut ch.genes[pos];
    let options = loci(&gene.params.distortion, cfg);
    let locus = options[rng.random_range(0..options.len())];
    let DistortionParams { distortion, affected } = &mut gene.params;
    match locus {
        Locus::Activation => gene.active = !gene.active,
        Locus::Affected => {
            *affected = match affected {
                Some(_) => None,
                None => Some(random_block(cfg, rng)),
            }
        }
        Locus::Bounded(p) => perturb_bounded(distortion, p, &cfg.bounds, rng),
        Locus::Orientation => match distortion {
            Distortion::LineColumnDropout { orientation, index, .. } => {
                *orientation = match orientation {
                    Orientation::Row => Orientation::Column,
                    Orientation::Column => Orientation::Row,
                };
                let limit = match orientation {
                    Orientation::Row => cfg.shape.height,
                    Orientation::Column => cfg.shape.width,
                };
                *index = (*index).min(limit as u32 - 1);
            }
            Distortion::LineStripping { orientation, .. } => {
                *orientation = match orientation {
                    Orientation::Row => Orientation::Column,
                    Orientation::Column => Orientation::Row,
                };
            }
            _ => {}
        },
        Locus::Fill => match distortion {
            Distortion::LineColumnDropout { fill, .. }
            | Distortion::LineStripping { fill, .. }
            | Distortion::ChannelDropout { fill, .. } => *fill = flip_fill(*fill),
            _ => {}
        },
        Locus::Channel => match distortion {
            Distortion::ChannelDropout { channel, .. } | Distortion::ChannelGaussian { channel, .. } => {
                *channel = other_channel(*channel, rng)
            }
            _ => {}
        },
        Locus::LineIndex => {
            if let Distortion::LineColumnDropout { orientation, index, .. } = distortion {
                let limit = match orientation {
                    Orientation::Row => cfg.shape.height,
                    Orientation::Column => cfg.shape.width,
                };
                *index = nudge_int(*index, 0, limit as u32 - 1, rng);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    MaxGenerations,
    Stagnation,
    TimeBudget,
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Termination::MaxGenerations => "max_generations",
            Termination::Stagnation => "stagnation",
            Termination::TimeBudget => "time_budget",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub generation: usize,
    /// All-time best fitness after this generation.
    pub best_fitness: f64,
    pub mean_fitness: f64,
    /// Individuals that cleared the PSNR gate.
    pub gated_in: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolutionTrace {
    pub generations: Vec<GenerationStats>,
    pub best: Option<Chromosome>,
    pub best_record: Option<FitnessRecord>,
    pub termination: Option<Termination>,
    pub oracle_calls: usize,
}

impl EvolutionTrace {
    pub fn best_fitness_sequence(&self) -> Vec<f64> {
        self.generations.iter().map(|g| g.best_fitness).collect()
    }
}

#[derive(Debug, Clone)]
pub struct EvolutionOutcome {
    pub best: Chromosome,
    pub best_record: FitnessRecord,
    pub trace: EvolutionTrace,
}

/// A failed run, with everything recorded up to the failure.
#[derive(Debug, Clone, Error)]
#[error("{error}")]
pub struct EvolveFailure {
    pub error: EvolutionError,
    pub trace: EvolutionTrace,
}

struct Evaluator<'a> {
    original: &'a Image,
    truth: &'a LabelMap,
    oracle: &'a dyn SegmentationOracle,
    cfg: &'a GaConfig,
    calls: AtomicUsize,
}

impl Evaluator<'_> {
    /// Evaluates in parallel; results and the first error follow population order.
    fn run(&self, pop: &[Chromosome], generation: usize) -> Result<Vec<FitnessRecord>, EvolutionError> {
        pop.par_iter()
            .map(|ch| {
                let r = evaluate(self.original, self.truth, ch, self.oracle, self.cfg, generation);
                if matches!(r, Ok((_, true)) | Err(EvolutionError::Oracle { .. })) {
                    self.calls.fetch_add(1, Ordering::Relaxed);
                }
                r.map(|(rec, _)| rec)
            })
            .collect::<Vec<_>>()
            .into_iter()
            .collect()
    }
}

/// Runs the genetic search for one image.
///
/// Deterministic for a fixed `master_seed` and deterministic oracle, whatever
/// the number of rayon worker threads (unless a time budget is set).
pub fn evolve(
    original: &Image,
    truth: &LabelMap,
    oracle: &dyn SegmentationOracle,
    ga: &GaConfig,
    bounds: &ParameterBounds,
) -> Result<EvolutionOutcome, EvolveFailure> {
    let mut trace = EvolutionTrace {
        generations: Vec::new(),
        best: None,
        best_record: None,
        termination: None,
        oracle_calls: 0,
    };
    let fail = |error: EvolutionError, trace: &EvolutionTrace| EvolveFailure {
        error,
        trace: trace.clone(),
    };
    ga.validate().map_err(|e| fail(e, &trace))?;
    let gcfg = ga.genome_config(bounds, original.shape());
    gcfg.check().map_err(|e| fail(e.into(), &trace))?;

    let started = Instant::now();
    let budget = ga.time_budget_secs.map(Duration::from_secs_f64);
    let eval = Evaluator {
        original,
        truth,
        oracle,
        cfg: ga,
        calls: AtomicUsize::new(0),
    };
    let mut stream = rng::seeded(ga.master_seed);

    let mut population: Vec<Chromosome> = (0..ga.population_size)
        .map(|_| genome::random_chromosome_with(&gcfg, &mut stream))
        .collect();
    let mut records = match eval.run(&population, 0) {
        Ok(r) => r,
        Err(e) => {
            trace.oracle_calls = eval.calls.load(Ordering::Relaxed);
            return Err(fail(e, &trace));
        }
    };

    let mut best_idx = argmax(&records);
    let mut best = (population[best_idx].clone(), records[best_idx].clone());
    push_stats(&mut trace, 0, &records, best.1.fitness);

    let mut stagnant = 0usize;
    let mut generation = 0usize;
    let termination = loop {
        if generation + 1 >= ga.max_generations {
            break Termination::MaxGenerations;
        }
        if budget.is_some_and(|b| started.elapsed() >= b) {
            break Termination::TimeBudget;
        }
        generation += 1;

        let fitness: Vec<f64> = records.iter().map(|r| r.fitness).collect();
        let mut order: Vec<usize> = (0..population.len()).collect();
        order.sort_by(|&i, &j| fitness[j].total_cmp(&fitness[i]).then(i.cmp(&j)));

        let mut next: Vec<Chromosome> = Vec::with_capacity(ga.population_size);
        let mut carried: Vec<FitnessRecord> = Vec::with_capacity(ga.elite_count);
        for &i in order.iter().take(ga.elite_count) {
            next.push(population[i].clone());
            carried.push(records[i].clone());
        }
        while next.len() < ga.population_size {
            let pa = tournament_select(&fitness, ga.tournament_size, &mut stream).map_err(|e| fail(e, &trace))?;
            let pb = tournament_select(&fitness, ga.tournament_size, &mut stream).map_err(|e| fail(e, &trace))?;
            let (ca, cb) = if stream.random_bool(ga.crossover_rate) {
                crossover_two_point(&population[pa], &population[pb], fitness[pa], fitness[pb], &gcfg, &mut stream)
            } else {
                (population[pa].clone(), population[pb].clone())
            };
            next.push(mutate(&ca, ga, &gcfg, &mut stream));
            if next.len() < ga.population_size {
                next.push(mutate(&cb, ga, &gcfg, &mut stream));
            }
        }

        let fresh = match eval.run(&next[carried.len()..], generation) {
            Ok(r) => r,
            Err(e) => {
                trace.oracle_calls = eval.calls.load(Ordering::Relaxed);
                trace.best = Some(best.0.clone());
                trace.best_record = Some(best.1.clone());
                return Err(fail(e, &trace));
            }
        };
        population = next;
        records = carried.into_iter().chain(fresh).collect();

        let previous = best.1.fitness;
        best_idx = argmax(&records);
        if records[best_idx].fitness > previous {
            best = (population[best_idx].clone(), records[best_idx].clone());
        }
        push_stats(&mut trace, generation, &records, best.1.fitness);

        let improvement = if previous > 0.0 {
            (best.1.fitness - previous) / previous
        } else if best.1.fitness > previous {
            f64::INFINITY
        } else {
            0.0
        };
        if improvement < ga.stagnation_epsilon {
            stagnant += 1;
        } else {
            stagnant = 0;
        }
        if stagnant >= ga.stagnation_window {
            break Termination::Stagnation;
        }
    };

    trace.termination = Some(termination);
    trace.oracle_calls = eval.calls.load(Ordering::Relaxed);
    trace.best = Some(best.0.clone());
    trace.best_record = Some(best.1.clone());
    Ok(EvolutionOutcome {
        best: best.0,
        best_record: best.1,
        trace,
    })
}

/// Highest fitness, lowest index on ties.
fn argmax(records: &[FitnessRecord]) -> usize {
    let mut best = 0;
    for (i, r) in records.iter().enumerate() {
        if r.fitness > records[best].fitness {
            best = i;
        }
    }
    best
}

fn push_stats(trace: &mut EvolutionTrace, generation: usize, records: &[FitnessRecord], best: f64) {
    let mean = records.iter().map(|r| r.fitness).sum::<f64>() / records.len() as f64;
    trace.generations.push(GenerationStats {
        generation,
        best_fitness: best,
        mean_fitness: mean,
        gated_in: records.iter().filter(|r| r.iou.is_some()).count(),
    });
}
