//! Splitting a dataset across clients: Dirichlet label skew, low covariate
//! shift (class-balanced dealing) and high covariate shift (disjoint class
//! groups).

use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use crate::error::{Error, Result};
use crate::seed::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scheme {
    /// Per-class client proportions drawn from `Dir(alpha)`. With `overlap`
    /// clients sample their share independently and may hold the same example.
    Dirichlet { alpha: f64, overlap: bool },
    LowCs,
    HighCs,
}

impl Scheme {
    pub fn label(&self) -> String {
        match self {
            Scheme::Dirichlet { alpha, overlap: false } => format!("dirichlet({alpha})"),
            Scheme::Dirichlet { alpha, overlap: true } => format!("dirichlet_overlap({alpha})"),
            Scheme::LowCs => "low_cs".into(),
            Scheme::HighCs => "high_cs".into(),
        }
    }
}

/// Client index lists into a parent dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub scheme: Scheme,
    pub seed: u64,
    pub assignments: Vec<Vec<usize>>,
}

impl Partition {
    pub fn num_clients(&self) -> usize {
        self.assignments.len()
    }

    /// `n_k` for every client.
    pub fn sizes(&self) -> Vec<usize> {
        self.assignments.iter().map(Vec::len).collect()
    }

    pub fn total(&self) -> usize {
        self.assignments.iter().map(Vec::len).sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("partition serialises")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_json().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            offset: 0,
            msg: e.to_string(),
        })
    }
}

pub fn partition(ds: &Dataset, clients: usize, scheme: Scheme, seed: u64) -> Result<Partition> {
    match scheme {
        Scheme::Dirichlet { alpha, overlap: false } => dirichlet_partition(ds, clients, alpha, seed),
        Scheme::Dirichlet { alpha, overlap: true } => dirichlet_overlap_partition(ds, clients, alpha, seed),
        Scheme::LowCs => low_cs_partition(ds, clients, seed),
        Scheme::HighCs => high_cs_partition(ds, clients, seed),
    }
}

fn check_clients(ds: &Dataset, clients: usize) -> Result<()> {
    if clients == 0 {
        return Err(Error::Config("partition.clients must be >= 1".into()));
    }
    if clients > ds.len() {
        return Err(Error::Config(format!(
            "{clients} clients for only {} examples",
            ds.len()
        )));
    }
    Ok(())
}

fn dirichlet_draw(rng: &mut Rng, gamma: &Gamma<f64>, k: usize) -> Vec<f64> {
    let draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
    let sum: f64 = draws.iter().sum();
    if sum > 0.0 && sum.is_finite() {
        draws.iter().map(|d| d / sum).collect()
    } else {
        // every component underflowed: put the mass on one client
        let mut q = vec![0.0; k];
        q[rand::Rng::random_range(rng, 0..k)] = 1.0;
        q
    }
}

/// Integer counts summing to `total`, proportional to `q`; leftover units go
/// to the largest fractional remainders (lower client id on ties).
pub fn largest_remainder(q: &[f64], total: usize) -> Vec<usize> {
    let exact: Vec<f64> = q.iter().map(|p| p * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..q.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &k in order.iter().cycle().take(total.saturating_sub(assigned)) {
        counts[k] += 1;
    }
    counts
}

fn gamma_for(alpha: f64) -> Result<Gamma<f64>> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Config(format!("partition.alpha must be > 0, got {alpha}")));
    }
    Gamma::new(alpha, 1.0).map_err(|e| Error::Config(format!("partition.alpha: {e}")))
}

/// Exclusive Dirichlet split: every example goes to exactly one client and
/// every client ends up with at least one example.
pub fn dirichlet_partition(ds: &Dataset, clients: usize, alpha: f64, seed: u64) -> Result<Partition> {
    check_clients(ds, clients)?;
    let gamma = gamma_for(alpha)?;
    let mut rng = seed::stream(seed, &[seed::TAG_PARTITION]);
    let mut assignments = vec![Vec::new(); clients];
    for mut members in ds.class_indices() {
        if members.is_empty() {
            continue;
        }
        members.shuffle(&mut rng);
        let q = dirichlet_draw(&mut rng, &gamma, clients);
        let mut rest = members.as_slice();
        for (k, count) in largest_remainder(&q, members.len()).into_iter().enumerate() {
            let (head, tail) = rest.split_at(count);
            assignments[k].extend_from_slice(head);
            rest = tail;
        }
    }
    // donate from the largest client to any empty one
    for k in 0..clients {
        if assignments[k].is_empty() {
            let donor = (0..clients)
                .max_by(|&a, &b| assignments[a].len().cmp(&assignments[b].len()).then(b.cmp(&a)))
                .expect("clients >= 1");
            let moved = assignments[donor].pop().expect("donor has > 1 example since clients <= N");
            assignments[k].push(moved);
        }
    }
    for a in assignments.iter_mut() {
        a.sort_unstable();
    }
    Ok(Partition {
        scheme: Scheme::Dirichlet { alpha, overlap: false },
        seed,
        assignments,
    })
}

/// Dirichlet split where each client independently samples its share of
/// every class, so clients may share examples.
pub fn dirichlet_overlap_partition(ds: &Dataset, clients: usize, alpha: f64, seed: u64) -> Result<Partition> {
    check_clients(ds, clients)?;
    let gamma = gamma_for(alpha)?;
    let mut rng = seed::stream(seed, &[seed::TAG_PARTITION]);
    let mut assignments = vec![Vec::new(); clients];
    for members in ds.class_indices() {
        if members.is_empty() {
            continue;
        }
        let q = dirichlet_draw(&mut rng, &gamma, clients);
        for (k, count) in largest_remainder(&q, members.len()).into_iter().enumerate() {
            assignments[k].extend(members.choose_multiple(&mut rng, count).copied());
        }
    }
    for a in assignments.iter_mut() {
        if a.is_empty() {
            a.push(rand::Rng::random_range(&mut rng, 0..ds.len()));
        }
    }
    for a in assignments.iter_mut() {
        a.sort_unstable();
    }
    Ok(Partition {
        scheme: Scheme::Dirichlet { alpha, overlap: true },
        seed,
        assignments,
    })
}

/// Every class is shuffled and dealt round-robin, so per-class counts of
/// any two clients differ by at most one.
pub fn low_cs_partition(ds: &Dataset, clients: usize, seed: u64) -> Result<Partition> {
    check_clients(ds, clients)?;
    let mut rng = seed::stream(seed, &[seed::TAG_PARTITION]);
    let mut assignments = vec![Vec::new(); clients];
    for (class, mut members) in ds.class_indices().into_iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        if members.len() < clients {
            return Err(Error::Config(format!(
                "class {class} has {} examples, fewer than {clients} clients",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        for (i, idx) in members.into_iter().enumerate() {
            assignments[i % clients].push(idx);
        }
    }
    for a in assignments.iter_mut() {
        a.sort_unstable();
    }
    Ok(Partition {
        scheme: Scheme::LowCs,
        seed,
        assignments,
    })
}

/// Contiguous groups of class ids, the first `C mod K` groups one larger.
pub fn class_groups(classes: usize, clients: usize) -> Vec<std::ops::Range<usize>> {
    let base = classes / clients;
    let extra = classes % clients;
    let mut start = 0;
    (0..clients)
        .map(|k| {
            let len = base + usize::from(k < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect()
}

/// Client `k` receives every example of the `k`-th contiguous class group.
pub fn high_cs_partition(ds: &Dataset, clients: usize, seed: u64) -> Result<Partition> {
    check_clients(ds, clients)?;
    let classes = ds.num_classes();
    if classes < clients {
        return Err(Error::Config(format!(
            "high_cs needs at least as many classes ({classes}) as clients ({clients})"
        )));
    }
    let by_class = ds.class_indices();
    let mut assignments = Vec::with_capacity(clients);
    for (k, group) in class_groups(classes, clients).into_iter().enumerate() {
        let mut idx: Vec<usize> = group.clone().flat_map(|c| by_class[c].iter().copied()).collect();
        if idx.is_empty() {
            return Err(Error::Config(format!(
                "client {k} owns classes {group:?}, which have no examples"
            )));
        }
        idx.sort_unstable();
        assignments.push(idx);
    }
    Ok(Partition {
        scheme: Scheme::HighCs,
        seed,
        assignments,
    })
}

/// Shannon entropy (nats) of the label histogram of `indices`.
pub fn label_entropy(ds: &Dataset, indices: &[usize]) -> f64 {
    let n = indices.len() as f64;
    ds.class_counts(indices)
        .into_iter()
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

pub fn mean_client_entropy(ds: &Dataset, p: &Partition) -> f64 {
    p.assignments.iter().map(|a| label_entropy(ds, a)).sum::<f64>() / p.num_clients() as f64
}
