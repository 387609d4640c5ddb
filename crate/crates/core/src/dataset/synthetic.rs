//! Two-domain synthetic feature world with a known affine sketch/photo
//! relation.
//!
//! Each category `c` gets a photo prototype `mu_c ~ N(0, cluster_std² I)`.
//! Photos are `mu_c + N(0, noise_std² I)` and sketches are
//! `A mu_c + b + N(0, noise_std² I)`. With coarse structure enabled the
//! prototype is a shared group centre plus a fine offset drawn with
//! `fine_std`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::{CoarseGrouping, Domain, FeatureRecord, Manifest};
use crate::error::{Error, Result};
use crate::numeric::{gaussian_draw, gaussian_matrix, DenseMatrix, RandomStream};

/// Sketch-domain image of the photo prototypes: `x -> A x + b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DomainMap {
    Identity,
    /// Banded Toeplitz `A` (odd number of taps centred on the diagonal)
    /// with a constant offset vector.
    Toeplitz {
        taps: Vec<f64>,
        offset: f64,
    },
    Explicit {
        a: Vec<Vec<f64>>,
        b: Vec<f64>,
    },
}

impl DomainMap {
    pub fn materialize(&self, d: usize) -> Result<(DenseMatrix, Vec<f64>)> {
        match self {
            DomainMap::Identity => Ok((DenseMatrix::identity(d), vec![0.0; d])),
            DomainMap::Toeplitz { taps, offset } => {
                if taps.is_empty() || taps.len() % 2 == 0 {
                    return Err(Error::Argument(
                        "toeplitz domain map needs an odd number of taps".into(),
                    ));
                }
                let half = (taps.len() / 2) as isize;
                let mut a = DenseMatrix::zeros(d, d);
                for i in 0..d as isize {
                    for (t, w) in taps.iter().enumerate() {
                        let j = i + t as isize - half;
                        if (0..d as isize).contains(&j) {
                            a[(i as usize, j as usize)] = *w;
                        }
                    }
                }
                Ok((a, vec![*offset; d]))
            }
            DomainMap::Explicit { a, b } => {
                let m = DenseMatrix::from_rows(a)?;
                if m.shape() != (d, d) || b.len() != d {
                    return Err(Error::Shape(format!(
                        "explicit domain map is {}x{} with offset {}, expected {d}x{d} and {d}",
                        m.rows(),
                        m.cols(),
                        b.len()
                    )));
                }
                Ok((m, b.clone()))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoarseStructure {
    pub groups: usize,
    pub fine_std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub d: usize,
    pub n_categories: usize,
    pub samples_per_category_per_domain: usize,
    pub domain_map: DomainMap,
    pub cluster_std: f64,
    pub noise_std: f64,
    pub seed: u64,
    /// Group structure over categories; `None` draws prototypes independently.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coarse: Option<CoarseStructure>,
    /// Width of a per-category embedding record; 0 emits none.
    #[serde(default)]
    pub embedding_dim: usize,
    /// Attach a quality score in `[0, 1)` to each sketch; sketch noise is
    /// scaled by `1.5 - quality`.
    #[serde(default)]
    pub sketch_quality: bool,
}

impl SyntheticConfig {
    pub fn new(d: usize, n_categories: usize, samples: usize, seed: u64) -> Self {
        SyntheticConfig {
            d,
            n_categories,
            samples_per_category_per_domain: samples,
            domain_map: DomainMap::Identity,
            cluster_std: 1.0,
            noise_std: 0.3,
            seed,
            coarse: None,
            embedding_dim: 0,
            sketch_quality: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.d < 2 {
            problems.push(format!("d must be at least 2, got {}", self.d));
        }
        if self.n_categories == 0 {
            problems.push("n_categories must be positive".to_string());
        }
        if self.samples_per_category_per_domain == 0 {
            problems.push("samples_per_category_per_domain must be positive".to_string());
        }
        if !(self.cluster_std > 0.0) {
            problems.push(format!("cluster_std must be > 0, got {}", self.cluster_std));
        }
        if !(self.noise_std > 0.0) {
            problems.push(format!("noise_std must be > 0, got {}", self.noise_std));
        }
        if let Some(c) = &self.coarse {
            if !(c.fine_std > 0.0) {
                problems.push(format!("coarse.fine_std must be > 0, got {}", c.fine_std));
            }
            if c.groups == 0 || c.groups * 2 > self.n_categories {
                problems.push(format!(
                    "coarse.groups = {} cannot give every group 2 of {} categories",
                    c.groups, self.n_categories
                ));
            }
        }
        if let Err(e) = self.domain_map.materialize(self.d.max(1)) {
            problems.push(e.to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}

pub fn category_id(i: usize) -> String {
    format!("c{i:03}")
}

pub fn group_id(g: usize) -> String {
    format!("g{g:02}")
}

/// Generated manifest plus the ground truth behind it.
#[derive(Clone, Debug)]
pub struct SyntheticWorld {
    pub manifest: Manifest,
    pub prototypes: Vec<Vec<f64>>,
    pub grouping: Option<CoarseGrouping>,
}

fn group_of(config: &SyntheticConfig, category: usize) -> Option<usize> {
    config
        .coarse
        .as_ref()
        .map(|c| category * c.groups / config.n_categories)
}

fn quantize(v: f64) -> f64 {
    v as f32 as f64
}

pub fn generate_synthetic(config: &SyntheticConfig) -> Result<Manifest> {
    Ok(generate_world(config)?.manifest)
}

pub fn generate_world(config: &SyntheticConfig) -> Result<SyntheticWorld> {
    config.validate()?;
    let d = config.d;
    let (a, b) = config.domain_map.materialize(d)?;
    let root = RandomStream::new(config.seed);
    let mut proto_stream = root.child(1);
    let mut photo_stream = root.child(2);
    let mut sketch_stream = root.child(3);
    let mut embed_stream = root.child(4);
    let mut quality_stream = root.child(5);

    let centres: Vec<Vec<f64>> = match &config.coarse {
        Some(c) => (0..c.groups)
            .map(|_| scaled(gaussian_draw(&mut proto_stream, d), config.cluster_std))
            .collect(),
        None => Vec::new(),
    };
    let prototypes: Vec<Vec<f64>> = (0..config.n_categories)
        .map(|c| match (&config.coarse, group_of(config, c)) {
            (Some(cs), Some(g)) => {
                let off = scaled(gaussian_draw(&mut proto_stream, d), cs.fine_std);
                centres[g].iter().zip(off).map(|(x, o)| x + o).collect()
            }
            _ => scaled(gaussian_draw(&mut proto_stream, d), config.cluster_std),
        })
        .collect();

    let projection = (config.embedding_dim > 0).then(|| {
        gaussian_matrix(config.embedding_dim, d, &mut embed_stream).scale(1.0 / (d as f64).sqrt())
    });

    let n = config.samples_per_category_per_domain;
    let mut records = Vec::with_capacity(config.n_categories * (2 * n + 1));
    for (c, mu) in prototypes.iter().enumerate() {
        let category = category_id(c);
        for s in 0..n {
            let noise = gaussian_draw(&mut photo_stream, d);
            records.push(FeatureRecord {
                category: category.clone(),
                sample_id: format!("{category}/photo/{s:04}"),
                domain: Domain::Photo,
                quality: None,
                vector: mu
                    .iter()
                    .zip(noise)
                    .map(|(m, e)| quantize(m + config.noise_std * e))
                    .collect(),
            });
        }
        let sketch_mean: Vec<f64> = (0..d)
            .map(|i| (0..d).map(|j| a[(i, j)] * mu[j]).sum::<f64>() + b[i])
            .collect();
        for s in 0..n {
            let quality = config
                .sketch_quality
                .then(|| quantize(quality_stream.uniform()));
            let noise_scale = config.noise_std * quality.map_or(1.0, |q| 1.5 - q);
            let noise = gaussian_draw(&mut sketch_stream, d);
            records.push(FeatureRecord {
                category: category.clone(),
                sample_id: format!("{category}/sketch/{s:04}"),
                domain: Domain::Sketch,
                quality,
                vector: sketch_mean
                    .iter()
                    .zip(noise)
                    .map(|(m, e)| quantize(m + noise_scale * e))
                    .collect(),
            });
        }
        if let Some(p) = &projection {
            let noise = gaussian_draw(&mut embed_stream, config.embedding_dim);
            records.push(FeatureRecord {
                category: category.clone(),
                sample_id: format!("{category}/embedding/0"),
                domain: Domain::Embedding,
                quality: None,
                vector: (0..config.embedding_dim)
                    .map(|i| {
                        let v: f64 = (0..d).map(|j| p[(i, j)] * mu[j]).sum();
                        quantize(v + config.noise_std * noise[i])
                    })
                    .collect(),
            });
        }
    }

    let mut dims = BTreeMap::from([(Domain::Photo, d), (Domain::Sketch, d)]);
    if config.embedding_dim > 0 {
        dims.insert(Domain::Embedding, config.embedding_dim);
    }
    let grouping = match &config.coarse {
        Some(cs) => {
            let mut groups: BTreeMap<String, Vec<String>> = BTreeMap::new();
            for c in 0..config.n_categories {
                let g = group_of(config, c).expect("coarse config present");
                groups.entry(group_id(g)).or_default().push(category_id(c));
            }
            debug_assert_eq!(groups.len(), cs.groups);
            Some(CoarseGrouping::new(groups)?)
        }
        None => None,
    };
    Ok(SyntheticWorld {
        manifest: Manifest::new(dims, records)?,
        prototypes,
        grouping,
    })
}

fn scaled(mut v: Vec<f64>, s: f64) -> Vec<f64> {
    v.iter_mut().for_each(|x| *x *= s);
    v
}
