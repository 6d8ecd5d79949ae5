use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::kmeans::kmeans;
use super::metric::{tau, Metric};
use crate::approximator::DistributionEstimate;
use crate::error::{Error, Result};
use crate::rng::{self, Rng, Stream};

/// An ordered group of clients trained sequentially as one unit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Superclient {
    pub id: usize,
    pub clients: Vec<usize>,
    pub num_samples: usize,
    /// Closed because the client pool ran out rather than by the size criterion.
    pub undersized: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GroupingMethod {
    Random,
    KMeans,
    Greedy,
}

impl std::str::FromStr for GroupingMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Self::Random),
            "kmeans" => Ok(Self::KMeans),
            "greedy" => Ok(Self::Greedy),
            _ => Err(Error::invalid(format!("unknown grouping method `{s}`"))),
        }
    }
}

impl GroupingMethod {
    pub fn name(self) -> &'static str {
        match self {
            Self::Random => "random",
            Self::KMeans => "kmeans",
            Self::Greedy => "greedy",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupingConfig {
    pub min_samples: usize,
    pub max_clients: usize,
    pub method: GroupingMethod,
    pub metric: Metric,
    pub seed: u64,
}

impl GroupingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_samples == 0 || self.max_clients == 0 {
            return Err(Error::invalid(
                "min_samples and max_clients must both be at least 1",
            ));
        }
        Ok(())
    }

    fn open(&self, num_samples: usize, members: usize) -> bool {
        num_samples < self.min_samples && members < self.max_clients
    }
}

/// Accumulates one superclient until the size criterion closes it.
struct Builder<'a> {
    config: &'a GroupingConfig,
    sizes: &'a [usize],
    done: Vec<Superclient>,
    current: Vec<usize>,
    samples: usize,
}

impl<'a> Builder<'a> {
    fn new(config: &'a GroupingConfig, sizes: &'a [usize]) -> Self {
        Self {
            config,
            sizes,
            done: Vec::new(),
            current: Vec::new(),
            samples: 0,
        }
    }

    fn push(&mut self, client: usize) {
        self.current.push(client);
        self.samples += self.sizes[client];
    }

    fn is_open(&self) -> bool {
        self.config.open(self.samples, self.current.len())
    }

    fn close(&mut self) {
        if self.current.is_empty() {
            return;
        }
        let undersized = self.is_open();
        self.done.push(Superclient {
            id: self.done.len(),
            clients: std::mem::take(&mut self.current),
            num_samples: std::mem::replace(&mut self.samples, 0),
            undersized,
        });
    }
}

/// Clients in shuffled order, cut into superclients by the size criterion.
pub fn phi_random(sizes: &[usize], config: &GroupingConfig) -> Result<Vec<Superclient>> {
    config.validate()?;
    let mut rng = rng::stream(config.seed, Stream::Grouping, &[0]);
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.shuffle(&mut rng);
    let mut b = Builder::new(config, sizes);
    for k in order {
        b.push(k);
        if !b.is_open() {
            b.close();
        }
    }
    b.close();
    Ok(b.done)
}

fn check_estimates(estimates: &DistributionEstimate, sizes: &[usize]) -> Result<()> {
    if estimates.len() != sizes.len() {
        return Err(Error::invalid(format!(
            "{} estimates for {} clients",
            estimates.len(),
            sizes.len()
        )));
    }
    Ok(())
}

/// Clusters the estimates into `num_clusters` homogeneous groups, then fills each
/// superclient by drawing one random client per cluster in round-robin order.
/// The round-robin cursor carries over between superclients; exhausted clusters are
/// skipped.
pub fn phi_kmeans(
    estimates: &DistributionEstimate,
    sizes: &[usize],
    num_clusters: usize,
    config: &GroupingConfig,
) -> Result<Vec<Superclient>> {
    config.validate()?;
    check_estimates(estimates, sizes)?;
    let n = num_clusters.min(sizes.len()).max(1);
    let km = kmeans(&estimates.rows, n, config.seed)?;
    let mut clusters: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (k, &c) in km.assignment.iter().enumerate() {
        clusters[c].push(k);
    }
    let mut rng = rng::stream(config.seed, Stream::Grouping, &[1]);
    let mut remaining = sizes.len();
    let mut j = 0;
    let mut b = Builder::new(config, sizes);
    while remaining > 0 {
        while b.is_open() && remaining > 0 {
            while clusters[j].is_empty() {
                j = (j + 1) % n;
            }
            let pick = rng.random_range(0..clusters[j].len());
            let k = clusters[j].swap_remove(pick);
            remaining -= 1;
            b.push(k);
            j = (j + 1) % n;
        }
        b.close();
    }
    Ok(b.done)
}

fn pick_remaining(rng: &mut Rng, remaining: &[usize]) -> usize {
    remaining[rng.random_range(0..remaining.len())]
}

/// Seeds each superclient with a random client, then repeatedly adds the client that
/// maximises `tau(candidate, running estimate)`, halving the running estimate towards
/// each new member. Ties go to the lowest client id.
pub fn phi_greedy(
    estimates: &DistributionEstimate,
    sizes: &[usize],
    config: &GroupingConfig,
) -> Result<Vec<Superclient>> {
    config.validate()?;
    check_estimates(estimates, sizes)?;
    if !config.metric.supports(estimates.kind) {
        return Err(Error::invalid(format!(
            "metric {} cannot compare {:?} estimates",
            config.metric.name(),
            estimates.kind
        )));
    }
    let mut rng = rng::stream(config.seed, Stream::Grouping, &[2]);
    // ascending ids so the first maximum found is the lowest id
    let mut remaining: Vec<usize> = (0..sizes.len()).collect();
    let mut b = Builder::new(config, sizes);
    while !remaining.is_empty() {
        let seed_client = pick_remaining(&mut rng, &remaining);
        remaining.retain(|&k| k != seed_client);
        b.push(seed_client);
        let mut running = estimates.rows[seed_client].clone();
        while b.is_open() && !remaining.is_empty() {
            let mut best: Option<(usize, f64)> = None;
            for (pos, &k) in remaining.iter().enumerate() {
                let score = tau(&estimates.rows[k], &running, config.metric, estimates.kind)?;
                let score = if score.is_nan() {
                    f64::NEG_INFINITY
                } else {
                    score
                };
                if best.is_none_or(|(_, s)| score > s) {
                    best = Some((pos, score));
                }
            }
            let (pos, _) = best.expect("remaining is non-empty");
            let k = remaining.remove(pos);
            running = mix_half(&running, &estimates.rows[k]);
            b.push(k);
        }
        b.close();
    }
    Ok(b.done)
}

/// Dispatches on `config.method`. `num_classes` sets the k-means cluster count.
pub fn group_clients(
    estimates: &DistributionEstimate,
    sizes: &[usize],
    num_classes: usize,
    config: &GroupingConfig,
) -> Result<Vec<Superclient>> {
    match config.method {
        GroupingMethod::Random => phi_random(sizes, config),
        GroupingMethod::KMeans => phi_kmeans(estimates, sizes, num_classes, config),
        GroupingMethod::Greedy => phi_greedy(estimates, sizes, config),
    }
}

/// Every client exactly once.
pub fn is_exact_partition(superclients: &[Superclient], num_clients: usize) -> bool {
    let mut seen = vec![false; num_clients];
    for s in superclients {
        for &k in &s.clients {
            if k >= num_clients || seen[k] {
                return false;
            }
            seen[k] = true;
        }
    }
    seen.into_iter().all(|s| s)
}

/// The greedy running-estimate update: `0.5 * running + 0.5 * next`.
pub fn mix_half(running: &[f64], next: &[f64]) -> Vec<f64> {
    running
        .iter()
        .zip(next)
        .map(|(r, v)| 0.5 * r + 0.5 * v)
        .collect()
}
