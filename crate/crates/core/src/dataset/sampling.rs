use crate::dataset::{Domain, Manifest};
use crate::error::{Error, Result};
use crate::numeric::RandomStream;

/// Positive and negative feature vectors drawn for one few-shot classifier.
#[derive(Clone, Debug)]
pub struct FewShot<'a> {
    pub positives: Vec<&'a [f64]>,
    pub negatives: Vec<&'a [f64]>,
}

/// Draws `k` vectors of `category` and `j` vectors from the other categories
/// of `pool` (the target itself is skipped if present), all in `domain`.
///
/// Negatives are uniform without replacement over the union of the other
/// categories' records, with no per-category balancing.
pub fn sample_few_shot<'a>(
    manifest: &'a Manifest,
    category: &str,
    domain: Domain,
    k: usize,
    j: usize,
    pool: &[String],
    stream: &mut RandomStream,
) -> Result<FewShot<'a>> {
    let positives = sample_category(manifest, category, domain, k, stream)?;
    let candidates: Vec<usize> = pool
        .iter()
        .filter(|c| c.as_str() != category)
        .flat_map(|c| manifest.indices(c, domain).iter().copied())
        .collect();
    if candidates.len() < j {
        return Err(Error::Capacity(format!(
            "need {j} negative {domain} records outside `{category}`, {} available",
            candidates.len()
        )));
    }
    let negatives = stream
        .sample_indices(candidates.len(), j)
        .into_iter()
        .map(|i| manifest.record(candidates[i]).vector.as_slice())
        .collect();
    Ok(FewShot {
        positives,
        negatives,
    })
}

/// `k` distinct vectors of one category.
pub fn sample_category<'a>(
    manifest: &'a Manifest,
    category: &str,
    domain: Domain,
    k: usize,
    stream: &mut RandomStream,
) -> Result<Vec<&'a [f64]>> {
    sample_records(manifest, manifest.indices(category, domain), k, stream).map_err(|_| {
        Error::Capacity(format!(
            "category `{category}` has {} {domain} records, {k} requested",
            manifest.count(category, domain)
        ))
    })
}

/// `k` distinct vectors from an explicit list of record indices.
pub fn sample_records<'a>(
    manifest: &'a Manifest,
    candidates: &[usize],
    k: usize,
    stream: &mut RandomStream,
) -> Result<Vec<&'a [f64]>> {
    if candidates.len() < k {
        return Err(Error::Capacity(format!(
            "{k} records requested, {} available",
            candidates.len()
        )));
    }
    Ok(stream
        .sample_indices(candidates.len(), k)
        .into_iter()
        .map(|i| manifest.record(candidates[i]).vector.as_slice())
        .collect())
}

/// Element-wise mean of equally sized vectors.
pub fn average_features<V: AsRef<[f64]>>(vectors: &[V]) -> Result<Vec<f64>> {
    let first = vectors
        .first()
        .ok_or_else(|| Error::Argument("cannot average an empty list of features".into()))?
        .as_ref();
    let mut out = vec![0.0; first.len()];
    for (i, v) in vectors.iter().enumerate() {
        let v = v.as_ref();
        if v.len() != out.len() {
            return Err(Error::Shape(format!(
                "feature {i} has length {}, expected {}",
                v.len(),
                out.len()
            )));
        }
        for (o, x) in out.iter_mut().zip(v) {
            *o += x;
        }
    }
    let n = vectors.len() as f64;
    out.iter_mut().for_each(|o| *o /= n);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::dataset::FeatureRecord;

    fn manifest(categories: usize, per: usize) -> Manifest {
        let mut records = Vec::new();
        for c in 0..categories {
            for s in 0..per {
                records.push(FeatureRecord {
                    category: format!("c{c}"),
                    sample_id: format!("c{c}_{s}"),
                    domain: Domain::Sketch,
                    quality: None,
                    vector: vec![c as f64, s as f64],
                });
            }
        }
        Manifest::new(BTreeMap::from([(Domain::Sketch, 2)]), records).unwrap()
    }

    #[test]
    fn exhaustive_positive_draw() {
        let m = manifest(3, 4);
        let pool: Vec<String> = m.categories().to_vec();
        let a = sample_few_shot(
            &m,
            "c1",
            Domain::Sketch,
            4,
            2,
            &pool,
            &mut RandomStream::new(3),
        )
        .unwrap();
        let mut got: Vec<f64> = a.positives.iter().map(|v| v[1]).collect();
        got.sort_by(f64::total_cmp);
        assert_eq!(got, vec![0.0, 1.0, 2.0, 3.0]);
        assert!(a.positives.iter().all(|v| v[0] == 1.0));
        assert!(a.negatives.iter().all(|v| v[0] != 1.0));
        let b = sample_few_shot(
            &m,
            "c1",
            Domain::Sketch,
            4,
            2,
            &pool,
            &mut RandomStream::new(3),
        )
        .unwrap();
        assert_eq!(a.positives, b.positives);
        assert_eq!(a.negatives, b.negatives);
    }

    #[test]
    fn capacity_errors_state_counts() {
        let m = manifest(2, 3);
        let pool: Vec<String> = m.categories().to_vec();
        let err = sample_few_shot(
            &m,
            "c0",
            Domain::Sketch,
            5,
            1,
            &pool,
            &mut RandomStream::new(0),
        )
        .unwrap_err()
        .to_string();
        assert!(err.contains("has 3"), "{err}");
        let err = sample_few_shot(
            &m,
            "c0",
            Domain::Sketch,
            1,
            4,
            &pool,
            &mut RandomStream::new(0),
        )
        .unwrap_err()
        .to_string();
        assert!(err.contains("3 available"), "{err}");
    }

    #[test]
    fn negatives_span_several_categories() {
        // 115 categories, 1 positive, 600 negatives.
        let m = manifest(115, 10);
        let pool: Vec<String> = m.categories().to_vec();
        for seed in 0..100 {
            let s = sample_few_shot(
                &m,
                "c7",
                Domain::Sketch,
                1,
                600,
                &pool,
                &mut RandomStream::new(seed),
            )
            .unwrap();
            let mut cats: Vec<u64> = s.negatives.iter().map(|v| v[0] as u64).collect();
            cats.sort_unstable();
            cats.dedup();
            assert!(cats.len() >= 2);
        }
    }

    #[test]
    fn averaging() {
        assert_eq!(
            average_features(&[[1.0, 0.0], [0.0, 1.0]]).unwrap(),
            vec![0.5, 0.5]
        );
        assert_eq!(average_features(&[[3.0, -1.0]]).unwrap(), vec![3.0, -1.0]);
        assert!(average_features::<Vec<f64>>(&[]).is_err());
        assert!(average_features(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }
}
