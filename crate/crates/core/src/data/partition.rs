use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Gamma};

use super::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::rng::{self, Rng, Stream};

/// Disjoint, non-empty per-client index lists into a dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientPartition {
    clients: Vec<Vec<usize>>,
}

impl ClientPartition {
    pub fn new(clients: Vec<Vec<usize>>, dataset_len: usize) -> Result<Self> {
        if clients.is_empty() {
            return Err(Error::Data("partition has no clients".into()));
        }
        let mut seen = vec![false; dataset_len];
        for (k, idx) in clients.iter().enumerate() {
            if idx.is_empty() {
                return Err(Error::Data(format!("client {k} is empty")));
            }
            for &i in idx {
                match seen.get_mut(i) {
                    None => {
                        return Err(Error::Data(format!(
                            "client {k} references row {i} beyond dataset size {dataset_len}"
                        )))
                    }
                    Some(true) => {
                        return Err(Error::Data(format!("row {i} assigned twice (client {k})")))
                    }
                    Some(s) => *s = true,
                }
            }
        }
        Ok(Self { clients })
    }

    pub fn num_clients(&self) -> usize {
        self.clients.len()
    }

    pub fn indices(&self, client: usize) -> &[usize] {
        &self.clients[client]
    }

    pub fn clients(&self) -> &[Vec<usize>] {
        &self.clients
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.clients.iter().map(Vec::len).collect()
    }

    pub fn total(&self) -> usize {
        self.clients.iter().map(Vec::len).sum()
    }

    /// Per-client label histograms.
    pub fn histograms(&self, dataset: &LabeledDataset) -> Vec<Vec<usize>> {
        self.clients
            .iter()
            .map(|idx| dataset.class_counts(idx.iter().copied()))
            .collect()
    }

    /// JSON object mapping client id to its index list.
    pub fn to_json(&self) -> serde_json::Value {
        let map: serde_json::Map<String, serde_json::Value> = self
            .clients
            .iter()
            .enumerate()
            .map(|(k, idx)| (k.to_string(), serde_json::json!(idx)))
            .collect();
        serde_json::Value::Object(map)
    }

    pub fn from_json(value: &serde_json::Value, dataset_len: usize) -> Result<Self> {
        let map: BTreeMap<String, Vec<usize>> = serde_json::from_value(value.clone())?;
        let mut clients = Vec::with_capacity(map.len());
        for k in 0..map.len() {
            let idx = map
                .get(&k.to_string())
                .ok_or_else(|| Error::Data(format!("partition JSON lacks client {k}")))?;
            clients.push(idx.clone());
        }
        Self::new(clients, dataset_len)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(&self.to_json())?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Shannon entropy (nats) of a label histogram.
pub fn label_entropy(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total as f64;
            -p * p.ln()
        })
        .sum()
}

/// Splits `dataset` among `num_clients` clients with label proportions drawn from a
/// symmetric Dirichlet(`alpha`). `alpha == 0` gives single-class clients.
pub fn dirichlet_partition(
    dataset: &LabeledDataset,
    num_clients: usize,
    alpha: f64,
    seed: u64,
) -> Result<ClientPartition> {
    let n = dataset.len();
    if num_clients == 0 || num_clients > n {
        return Err(Error::invalid(format!(
            "client count {num_clients} must be in [1, {n}]"
        )));
    }
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::invalid(format!(
            "alpha must be finite and >= 0, got {alpha}"
        )));
    }
    let mut by_class = dataset.indices_by_class();
    if let Some(c) = by_class.iter().position(Vec::is_empty) {
        return Err(Error::Data(format!("class {c} has no samples")));
    }
    let mut rng = rng::stream(seed, Stream::Partition, &[]);
    for pool in &mut by_class {
        pool.shuffle(&mut rng);
    }
    let clients = if alpha == 0.0 {
        single_class_split(by_class, num_clients, &mut rng)?
    } else {
        dirichlet_split(by_class, n, num_clients, alpha, &mut rng)?
    };
    ClientPartition::new(clients, n)
}

/// Round-robin class assignment over a shuffled class order; each class's samples are
/// split as evenly as possible among the clients holding it.
fn single_class_split(
    by_class: Vec<Vec<usize>>,
    num_clients: usize,
    rng: &mut Rng,
) -> Result<Vec<Vec<usize>>> {
    let nc = by_class.len();
    let mut order: Vec<usize> = (0..nc).collect();
    order.shuffle(rng);
    let mut owners: Vec<Vec<usize>> = vec![Vec::new(); nc];
    for k in 0..num_clients {
        owners[order[k % nc]].push(k);
    }
    let mut clients = vec![Vec::new(); num_clients];
    for (class, holders) in owners.iter().enumerate() {
        if holders.is_empty() {
            continue;
        }
        let pool = &by_class[class];
        if pool.len() < holders.len() {
            return Err(Error::Data(format!(
                "class {class} has {} samples for {} single-class clients",
                pool.len(),
                holders.len()
            )));
        }
        let base = pool.len() / holders.len();
        let extra = pool.len() % holders.len();
        let mut start = 0;
        for (j, &k) in holders.iter().enumerate() {
            let take = base + usize::from(j < extra);
            clients[k] = pool[start..start + take].to_vec();
            start += take;
        }
    }
    Ok(clients)
}

fn sample_dirichlet(alpha: f64, dim: usize, rng: &mut Rng) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha validated positive");
    let mut q: Vec<f64> = (0..dim).map(|_| gamma.sample(rng)).collect();
    let sum: f64 = q.iter().sum();
    if sum > 0.0 && sum.is_finite() {
        q.iter_mut().for_each(|v| *v /= sum);
    } else {
        // All draws underflowed: the limit is a vertex of the simplex.
        q.iter_mut().for_each(|v| *v = 0.0);
        q[rng.random_range(0..dim)] = 1.0;
    }
    q
}

/// Class counts for one client of `size` samples: largest-remainder rounding of
/// `size * q` over classes that still have samples, repeated on the shortfall when a
/// class runs out. If no class with mass is left, proportions are redrawn from the
/// Dirichlet over the classes that remain.
fn client_counts(
    mut q: Vec<f64>,
    size: usize,
    remaining: &[usize],
    alpha: f64,
    rng: &mut Rng,
) -> Result<Vec<usize>> {
    let nc = remaining.len();
    let mut counts = vec![0usize; nc];
    let mut need = size;
    while need > 0 {
        let avail: Vec<usize> = (0..nc).map(|c| remaining[c] - counts[c]).collect();
        let candidates: Vec<usize> = (0..nc).filter(|&c| avail[c] > 0 && q[c] > 0.0).collect();
        if candidates.is_empty() {
            let open: Vec<usize> = (0..nc).filter(|&c| avail[c] > 0).collect();
            if open.is_empty() {
                return Err(Error::Data(
                    "dataset exhausted before every client was served".into(),
                ));
            }
            let sub = sample_dirichlet(alpha, open.len(), rng);
            q = vec![0.0; nc];
            for (&c, v) in open.iter().zip(sub) {
                q[c] = v;
            }
            continue;
        }
        let mass: f64 = candidates.iter().map(|&c| q[c]).sum();
        let mut assigned = 0;
        let mut remainders = Vec::with_capacity(candidates.len());
        for &c in &candidates {
            let target = need as f64 * q[c] / mass;
            let whole = (target.floor() as usize).min(avail[c]).min(need - assigned);
            counts[c] += whole;
            assigned += whole;
            if whole < avail[c] {
                remainders.push((target - whole as f64, c));
            }
        }
        remainders.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let left = need - assigned;
        for &(_, c) in remainders.iter().take(left) {
            counts[c] += 1;
            assigned += 1;
        }
        need -= assigned;
    }
    Ok(counts)
}

/// Equal-size clients (sizes differ by at most one); client `k` takes
/// `round(n_k * q_k)` samples per class with `q_k ~ Dir(alpha)`, constrained by what
/// earlier clients left.
fn dirichlet_split(
    mut by_class: Vec<Vec<usize>>,
    n: usize,
    num_clients: usize,
    alpha: f64,
    rng: &mut Rng,
) -> Result<Vec<Vec<usize>>> {
    let nc = by_class.len();
    let base = n / num_clients;
    let extra = n % num_clients;
    let mut clients = Vec::with_capacity(num_clients);
    for k in 0..num_clients {
        let size = base + usize::from(k < extra);
        let q = sample_dirichlet(alpha, nc, rng);
        let remaining: Vec<usize> = by_class.iter().map(Vec::len).collect();
        let counts = client_counts(q, size, &remaining, alpha, rng)?;
        let mut mine = Vec::with_capacity(size);
        for (pool, take) in by_class.iter_mut().zip(counts) {
            mine.extend(pool.drain(pool.len() - take..).rev());
        }
        clients.push(mine);
    }
    Ok(clients)
}
