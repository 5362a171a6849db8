//! Per-client sample assignment. All partitioners are deterministic per
//! seed, produce pairwise-disjoint index lists covering the dataset exactly,
//! and keep every client non-empty.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};

use super::{DataError, Dataset};
use crate::seed::{rng_for, tag};

/// Ordered per-client index lists into a dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionPlan {
    assignments: Vec<Vec<usize>>,
}

impl PartitionPlan {
    pub fn new(assignments: Vec<Vec<usize>>) -> Self {
        PartitionPlan { assignments }
    }

    pub fn client_count(&self) -> usize {
        self.assignments.len()
    }

    /// Shard sizes s_k.
    pub fn sizes(&self) -> Vec<usize> {
        self.assignments.iter().map(Vec::len).collect()
    }

    /// Total assigned samples s.
    pub fn total(&self) -> usize {
        self.assignments.iter().map(Vec::len).sum()
    }

    pub fn indices(&self, client: usize) -> &[usize] {
        &self.assignments[client]
    }

    /// Checks disjointness, index validity and non-emptiness against a
    /// dataset of `n` samples.
    pub fn validate(&self, n: usize) -> Result<(), DataError> {
        let mut seen = vec![false; n];
        for (client, shard) in self.assignments.iter().enumerate() {
            if shard.is_empty() {
                return Err(DataError::Invalid(format!("client {client} has no samples")));
            }
            for &i in shard {
                if i >= n {
                    return Err(DataError::Invalid(format!(
                        "client {client} references index {i} >= {n}"
                    )));
                }
                if seen[i] {
                    return Err(DataError::Invalid(format!(
                        "index {i} assigned to more than one client"
                    )));
                }
                seen[i] = true;
            }
        }
        Ok(())
    }

    /// Writes the plan as `client id -> index list` text.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DataError> {
        let path = path.as_ref();
        let mut out = String::new();
        out.push_str("# fedsplit partition plan\n");
        out.push_str(&format!("clients {}\n", self.assignments.len()));
        for (client, shard) in self.assignments.iter().enumerate() {
            out.push_str(&format!("{client}:"));
            for idx in shard {
                out.push(' ');
                out.push_str(&idx.to_string());
            }
            out.push('\n');
        }
        let mut file = fs::File::create(path).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })?;
        file.write_all(out.as_bytes()).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DataError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, DataError> {
        let mut declared: Option<usize> = None;
        let mut assignments: Vec<Vec<usize>> = Vec::new();
        for (line_idx, raw) in text.lines().enumerate() {
            let line = line_idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            if let Some(rest) = trimmed.strip_prefix("clients") {
                declared = Some(rest.trim().parse().map_err(|_| DataError::Plan {
                    line,
                    message: format!("bad client count {rest:?}"),
                })?);
                continue;
            }
            let (id_part, idx_part) = trimmed.split_once(':').ok_or(DataError::Plan {
                line,
                message: "expected `<client>: <indices>`".into(),
            })?;
            let id: usize = id_part.trim().parse().map_err(|_| DataError::Plan {
                line,
                message: format!("bad client id {id_part:?}"),
            })?;
            if id != assignments.len() {
                return Err(DataError::Plan {
                    line,
                    message: format!("client ids must be sequential, expected {}", assignments.len()),
                });
            }
            let mut shard = Vec::new();
            for tok in idx_part.split_whitespace() {
                shard.push(tok.parse().map_err(|_| DataError::Plan {
                    line,
                    message: format!("bad index {tok:?}"),
                })?);
            }
            assignments.push(shard);
        }
        if let Some(k) = declared {
            if k != assignments.len() {
                return Err(DataError::Plan {
                    line: 0,
                    message: format!("declared {k} clients, found {}", assignments.len()),
                });
            }
        }
        if assignments.is_empty() {
            return Err(DataError::Plan {
                line: 0,
                message: "no client assignments found".into(),
            });
        }
        Ok(PartitionPlan::new(assignments))
    }
}

fn check_clients(k: usize, n: usize) -> Result<(), DataError> {
    if k == 0 || k > n {
        return Err(DataError::TooManyClients {
            clients: k,
            samples: n,
        });
    }
    Ok(())
}

/// Balanced slice sizes: n split into k parts differing by at most one.
fn balanced_sizes(n: usize, k: usize) -> Vec<usize> {
    (0..k).map(|i| n / k + usize::from(i < n % k)).collect()
}

fn slices_by_sizes(mut indices: Vec<usize>, sizes: &[usize]) -> Vec<Vec<usize>> {
    let mut out = Vec::with_capacity(sizes.len());
    for &s in sizes.iter().rev() {
        let tail = indices.split_off(indices.len() - s);
        out.push(tail);
    }
    out.reverse();
    out
}

/// Random shuffle followed by contiguous equal slices (sizes differ by at
/// most one), so each client's label mix approximates the global one.
pub fn partition_iid(dataset: &Dataset, k: usize, seed: u64) -> Result<PartitionPlan, DataError> {
    let n = dataset.len();
    check_clients(k, n)?;
    let mut indices: Vec<usize> = (0..n).collect();
    indices.shuffle(&mut rng_for(seed, &[tag::PARTITION, 0]));
    Ok(PartitionPlan::new(slices_by_sizes(
        indices,
        &balanced_sizes(n, k),
    )))
}

/// Shard sizes drawn from Normal(n/k, sigma * n/k), clipped at one sample
/// and renormalized to sum exactly n by largest-remainder rounding.
pub fn partition_imbalanced(
    dataset: &Dataset,
    k: usize,
    sigma: f64,
    seed: u64,
) -> Result<PartitionPlan, DataError> {
    let n = dataset.len();
    check_clients(k, n)?;
    if sigma < 0.0 {
        return Err(DataError::Invalid("sigma must be >= 0".into()));
    }
    let mut rng = rng_for(seed, &[tag::PARTITION, 1]);

    let sizes = if sigma == 0.0 {
        balanced_sizes(n, k)
    } else {
        let mean = n as f64 / k as f64;
        let normal = Normal::new(mean, sigma * mean).expect("valid params");
        let draws: Vec<f64> = (0..k)
            .map(|_| normal.sample(&mut rng).max(1.0))
            .collect();
        largest_remainder(&draws, n)
    };

    let mut indices: Vec<usize> = (0..n).collect();
    indices.shuffle(&mut rng);
    Ok(PartitionPlan::new(slices_by_sizes(indices, &sizes)))
}

/// Scales positive draws to sum exactly `n` with every part at least one.
fn largest_remainder(draws: &[f64], n: usize) -> Vec<usize> {
    let k = draws.len();
    let total: f64 = draws.iter().sum();
    let scaled: Vec<f64> = draws.iter().map(|d| d * n as f64 / total).collect();
    let mut sizes: Vec<usize> = scaled.iter().map(|s| s.floor() as usize).collect();
    let assigned: usize = sizes.iter().sum();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        let fa = scaled[a] - scaled[a].floor();
        let fb = scaled[b] - scaled[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for i in 0..n.saturating_sub(assigned) {
        sizes[order[i % k]] += 1;
    }
    // floor can produce empty shards; top them up from the largest
    loop {
        let Some(zero) = sizes.iter().position(|&s| s == 0) else {
            break;
        };
        let biggest = (0..k).max_by_key(|&i| sizes[i]).unwrap();
        sizes[biggest] -= 1;
        sizes[zero] += 1;
    }
    debug_assert_eq!(sizes.iter().sum::<usize>(), n);
    sizes
}

/// Sorts indices by class, cuts them into `k * classes_per_client`
/// contiguous shards, and deals the shards round-robin so each client holds
/// `classes_per_client` shards of distinct labels where feasible.
pub fn partition_noniid(
    dataset: &Dataset,
    k: usize,
    classes_per_client: usize,
    seed: u64,
) -> Result<PartitionPlan, DataError> {
    let n = dataset.len();
    check_clients(k, n)?;
    let classes = dataset.class_count();
    if classes_per_client == 0 || classes_per_client > classes {
        return Err(DataError::Invalid(format!(
            "classes_per_client must be in 1..={classes}, got {classes_per_client}"
        )));
    }
    let shards = k * classes_per_client;
    if shards > n {
        return Err(DataError::Invalid(format!(
            "cannot cut {n} samples into {shards} non-empty shards"
        )));
    }

    // group by label, shuffle within each class, then concatenate in label order
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &l) in dataset.labels().iter().enumerate() {
        by_class[l].push(i);
    }
    let mut rng = rng_for(seed, &[tag::PARTITION, 2]);
    let mut sorted = Vec::with_capacity(n);
    for class in &mut by_class {
        class.shuffle(&mut rng);
        sorted.extend_from_slice(class);
    }

    let shard_lists = slices_by_sizes(sorted, &balanced_sizes(n, shards));
    let mut assignments: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (j, shard) in shard_lists.into_iter().enumerate() {
        assignments[j % k].extend(shard);
    }
    Ok(PartitionPlan::new(assignments))
}

/// Summary of a plan against its dataset: sizes, per-client label histograms
/// and a skew measure (total-variation distance to the global label mix).
#[derive(Debug, Clone)]
pub struct PartitionStats {
    pub sizes: Vec<usize>,
    pub histograms: Vec<Vec<usize>>,
    pub global_histogram: Vec<usize>,
    /// Per-client total-variation distance from the global distribution,
    /// in [0, 1].
    pub label_skew: Vec<f64>,
}

pub fn partition_stats(plan: &PartitionPlan, dataset: &Dataset) -> PartitionStats {
    let classes = dataset.class_count();
    let mut global = vec![0usize; classes];
    for &l in dataset.labels() {
        global[l] += 1;
    }
    let n = dataset.len() as f64;
    let mut histograms = Vec::with_capacity(plan.client_count());
    let mut label_skew = Vec::with_capacity(plan.client_count());
    for client in 0..plan.client_count() {
        let mut hist = vec![0usize; classes];
        for &i in plan.indices(client) {
            hist[dataset.labels()[i]] += 1;
        }
        let size = plan.indices(client).len() as f64;
        let tv: f64 = (0..classes)
            .map(|c| (hist[c] as f64 / size - global[c] as f64 / n).abs())
            .sum::<f64>()
            / 2.0;
        histograms.push(hist);
        label_skew.push(tv);
    }
    PartitionStats {
        sizes: plan.sizes(),
        histograms,
        global_histogram: global,
        label_skew,
    }
}
