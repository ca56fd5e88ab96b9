//! Synthetic source/target video features with a controllable spatial and
//! temporal domain shift.
//!
//! A frame is `R_theta(mu_c + delta + a_j * v_c) + tau * u + noise`, where
//! `a_j` runs linearly from -1 to 1 over the video. Class structure lives in
//! a random low-dimensional signal subspace; the rotation plane and the
//! translation direction are drawn inside it. Classes are grouped in pairs
//! `(0, 1), (2, 3), ..`; in a temporal pair both classes share `mu` and have
//! opposite signatures, so the unordered set of frames is the same and only
//! frame order tells them apart.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backbone::FrameFeatureSequence;
use crate::data::features::write_features;
use crate::data::manifest::{write_manifest, DomainManifest, ManifestRecord};
use crate::error::{Error, Result};
use crate::exec::{self, ExecMode};
use crate::numerics::RngState;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShiftSpec {
    pub classes: usize,
    pub frames: usize,
    pub dim: usize,
    pub source_per_class: usize,
    pub target_per_class: usize,
    /// Rotation angle in radians.
    pub theta: f64,
    /// Translation magnitude.
    pub tau: f64,
    pub source_noise: f64,
    pub target_noise: f64,
    /// Fraction of classes that belong to an order-only pair.
    pub temporal_dependence: f64,
    pub partial_target_classes: Option<Vec<usize>>,
    /// Dimension of the class-signal subspace.
    pub signal_dim: usize,
    /// Norm of every class prototype.
    pub prototype_radius: f64,
    /// Norm of every temporal signature.
    pub signature_scale: f64,
    /// Per-video offset spread inside the signal subspace.
    pub video_spread: f64,
}

impl Default for ShiftSpec {
    fn default() -> Self {
        Self {
            classes: 6,
            frames: 8,
            dim: 32,
            source_per_class: 60,
            target_per_class: 60,
            theta: 0.5,
            tau: 1.0,
            source_noise: 0.5,
            target_noise: 0.6,
            temporal_dependence: 0.5,
            partial_target_classes: None,
            signal_dim: 4,
            prototype_radius: 2.0,
            signature_scale: 1.5,
            video_spread: 1.4,
        }
    }
}

impl ShiftSpec {
    /// Number of class pairs that share a prototype.
    pub fn temporal_pairs(&self) -> usize {
        (self.temporal_dependence * self.classes as f64 / 2.0 - 1e-9).ceil().max(0.0) as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.classes));
        }
        if self.frames < 3 {
            return bad(format!("need at least 3 frames, got {}", self.frames));
        }
        if self.signal_dim < 2 || self.signal_dim > self.dim {
            return bad(format!("signal_dim must lie in [2, {}], got {}", self.dim, self.signal_dim));
        }
        if !(0.0..=1.0).contains(&self.temporal_dependence) {
            return bad(format!("temporal_dependence {} outside [0, 1]", self.temporal_dependence));
        }
        if self.temporal_pairs() > self.classes / 2 {
            return bad(format!(
                "temporal_dependence {} needs {} class pairs but {} classes form only {}",
                self.temporal_dependence,
                self.temporal_pairs(),
                self.classes,
                self.classes / 2
            ));
        }
        for (name, x) in [
            ("theta", self.theta),
            ("tau", self.tau),
            ("source_noise", self.source_noise),
            ("target_noise", self.target_noise),
            ("prototype_radius", self.prototype_radius),
            ("signature_scale", self.signature_scale),
            ("video_spread", self.video_spread),
        ] {
            if !x.is_finite() || (name != "theta" && x < 0.0) {
                return bad(format!("{name} must be finite and non-negative, got {x}"));
            }
        }
        if self.source_per_class == 0 {
            return bad("source_per_class must be positive".into());
        }
        if let Some(p) = &self.partial_target_classes {
            if p.is_empty() {
                return bad("partial target class set is empty".into());
            }
            if let Some(c) = p.iter().find(|&&c| c >= self.classes) {
                return bad(format!("partial target class {c} outside [0, {})", self.classes));
            }
            let mut s = p.clone();
            s.sort_unstable();
            s.dedup();
            if s.len() != p.len() {
                return bad("partial target classes contain duplicates".into());
            }
        }
        Ok(())
    }

    /// Classes present in the target domain.
    pub fn target_classes(&self) -> Vec<usize> {
        match &self.partial_target_classes {
            Some(p) => {
                let mut p = p.clone();
                p.sort_unstable();
                p
            }
            None => (0..self.classes).collect(),
        }
    }
}

/// The fixed latent geometry behind one seed.
#[derive(Clone, Debug, PartialEq)]
pub struct World {
    /// Orthonormal basis of the signal subspace, `signal_dim` rows of width `dim`.
    pub basis: Vec<Vec<f64>>,
    pub prototypes: Vec<Vec<f64>>,
    pub signatures: Vec<Vec<f64>>,
    /// Orthonormal pair spanning the rotation plane.
    pub plane: (Vec<f64>, Vec<f64>),
    pub theta: f64,
    pub translation: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn scaled(a: &[f64], s: f64) -> Vec<f64> {
    a.iter().map(|x| x * s).collect()
}

/// Random unit vector inside the span of `basis`.
fn unit_in(basis: &[Vec<f64>], rng: &mut RngState) -> Vec<f64> {
    loop {
        let mut v = vec![0.0; basis[0].len()];
        for b in basis {
            let c = rng.normal();
            v.iter_mut().zip(b).for_each(|(x, y)| *x += c * y);
        }
        let n = norm(&v);
        if n > 1e-9 {
            return scaled(&v, 1.0 / n);
        }
    }
}

fn orthonormal(count: usize, dim: usize, rng: &mut RngState) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(count);
    while out.len() < count {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
        for b in &out {
            let p = dot(&v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
        let n = norm(&v);
        if n > 1e-6 {
            out.push(scaled(&v, 1.0 / n));
        }
    }
    out
}

const WORLD_STREAM: u64 = 0x5eed_0001;
const ORDER_STREAM: u64 = 0x5eed_0002;

impl World {
    pub fn new(spec: &ShiftSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = RngState::new(seed).substream(WORLD_STREAM);
        let basis = orthonormal(spec.signal_dim, spec.dim, &mut rng);
        let paired = spec.temporal_pairs();
        let mut prototypes: Vec<Vec<f64>> = Vec::with_capacity(spec.classes);
        let mut signatures: Vec<Vec<f64>> = Vec::with_capacity(spec.classes);
        for c in 0..spec.classes {
            if c % 2 == 1 && c / 2 < paired {
                prototypes.push(prototypes[c - 1].clone());
                signatures.push(scaled(&signatures[c - 1], -1.0));
            } else {
                prototypes.push(scaled(&unit_in(&basis, &mut rng), spec.prototype_radius));
                signatures.push(scaled(&unit_in(&basis, &mut rng), spec.signature_scale));
            }
        }
        let p = orthonormal(2, spec.signal_dim, &mut rng);
        let lift = |c: &[f64]| -> Vec<f64> {
            let mut v = vec![0.0; spec.dim];
            for (w, b) in c.iter().zip(&basis) {
                v.iter_mut().zip(b).for_each(|(x, y)| *x += w * y);
            }
            v
        };
        let plane = (lift(&p[0]), lift(&p[1]));
        let translation = scaled(&unit_in(&basis, &mut rng), spec.tau);
        Ok(Self {
            basis,
            prototypes,
            signatures,
            plane,
            theta: spec.theta,
            translation,
        })
    }

    /// Rotation by `theta` in the plane followed by the translation.
    pub fn shift(&self, x: &[f64]) -> Vec<f64> {
        let (u, w) = &self.plane;
        let (a, b) = (dot(x, u), dot(x, w));
        let (s, c) = self.theta.sin_cos();
        let (ra, rb) = (c * a - s * b, s * a + c * b);
        x.iter()
            .enumerate()
            .map(|(i, &xi)| xi + (ra - a) * u[i] + (rb - b) * w[i] + self.translation[i])
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DomainSide {
    Source,
    Target,
}

struct Job {
    id: String,
    class: usize,
}

fn video(spec: &ShiftSpec, world: &World, seed: u64, side: DomainSide, job: &Job) -> Result<FrameFeatureSequence> {
    let mut rng = RngState::new(seed).keyed(&job.id);
    let k = spec.frames;
    let mut offset = vec![0.0; spec.dim];
    for b in &world.basis {
        let c = rng.normal() * spec.video_spread / (spec.signal_dim as f64).sqrt();
        offset.iter_mut().zip(b).for_each(|(x, y)| *x += c * y);
    }
    let amp = 1.0 + 0.2 * rng.normal();
    let noise = match side {
        DomainSide::Source => spec.source_noise,
        DomainSide::Target => spec.target_noise,
    } / (spec.dim as f64).sqrt();
    let mu = &world.prototypes[job.class];
    let v = &world.signatures[job.class];
    let mut data = Vec::with_capacity(k * spec.dim);
    for j in 0..k {
        let a = amp * (2.0 * j as f64 / (k - 1) as f64 - 1.0);
        let x: Vec<f64> = (0..spec.dim).map(|i| mu[i] + offset[i] + a * v[i]).collect();
        let x = match side {
            DomainSide::Source => x,
            DomainSide::Target => world.shift(&x),
        };
        data.extend(x.iter().map(|&xi| (xi + noise * rng.normal()) as f32));
    }
    FrameFeatureSequence::new(job.id.clone(), k, spec.dim, data, Some(job.class))
}

fn jobs(prefix: char, classes: &[usize], per_class: usize, rng: &mut RngState) -> Vec<Job> {
    let mut labels: Vec<usize> = classes.iter().flat_map(|&c| std::iter::repeat_n(c, per_class)).collect();
    rng.shuffle(&mut labels);
    labels
        .into_iter()
        .enumerate()
        .map(|(i, class)| Job {
            id: format!("{prefix}{i:05}"),
            class,
        })
        .collect()
}

/// Labeled source and target videos; target labels are kept for evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct Domains {
    pub source: Vec<FrameFeatureSequence>,
    pub target: Vec<FrameFeatureSequence>,
}

pub fn generate(spec: &ShiftSpec, seed: u64, mode: ExecMode) -> Result<Domains> {
    let world = World::new(spec, seed)?;
    let mut order = RngState::new(seed).substream(ORDER_STREAM);
    let all: Vec<usize> = (0..spec.classes).collect();
    let src = jobs('s', &all, spec.source_per_class, &mut order);
    let tgt = jobs('t', &spec.target_classes(), spec.target_per_class, &mut order);
    let run = |side: DomainSide, js: &[Job]| -> Result<Vec<FrameFeatureSequence>> {
        exec::map(mode, js, |j| video(spec, &world, seed, side, j)).into_iter().collect()
    };
    Ok(Domains {
        source: run(DomainSide::Source, &src)?,
        target: run(DomainSide::Target, &tgt)?,
    })
}

/// Manifest paths written by [`write_domains`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DomainPaths {
    pub source: PathBuf,
    pub target: PathBuf,
}

/// Writes `<dir>/{source,target}/manifest.tsv` and one feature file per video.
pub fn write_domains(dir: &Path, domains: &Domains, mode: ExecMode) -> Result<DomainPaths> {
    let write = |name: &str, videos: &[FrameFeatureSequence]| -> Result<PathBuf> {
        let root = dir.join(name);
        let records: Vec<ManifestRecord> = videos
            .iter()
            .map(|v| ManifestRecord {
                id: v.video_id.clone(),
                path: PathBuf::from("features").join(format!("{}.bvff", v.video_id)),
                label: v.label,
                line: 0,
            })
            .collect();
        let manifest = DomainManifest::new(&root, records)?;
        let written: Vec<Result<()>> = exec::map(mode, videos, |v| {
            write_features(&root.join("features").join(format!("{}.bvff", v.video_id)), v)
        });
        written.into_iter().collect::<Result<()>>()?;
        let path = root.join("manifest.tsv");
        write_manifest(&path, &manifest)?;
        Ok(path)
    };
    Ok(DomainPaths {
        source: write("source", &domains.source)?,
        target: write("target", &domains.target)?,
    })
}
