use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    /// Explicit `[train, val, test]` sizes; overrides `ratios`.
    pub counts: Option<[usize; 3]>,
    pub ratios: [f64; 3],
    pub stratified: bool,
    /// Falls back to the training seed when absent.
    pub seed: Option<u64>,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            counts: None,
            ratios: [0.64, 0.16, 0.20],
            stratified: true,
            seed: None,
        }
    }
}

impl SplitSpec {
    pub fn with_counts(train: usize, val: usize, test: usize) -> Self {
        Self {
            counts: Some([train, val, test]),
            ..Self::default()
        }
    }

    /// Split sizes for a dataset of `n` samples.
    pub fn resolve(&self, n: usize) -> Result<[usize; 3]> {
        let sizes = match self.counts {
            Some(c) => {
                let sum: usize = c.iter().sum();
                if sum != n {
                    return Err(Error::Config(format!(
                        "split counts {}/{}/{} sum to {sum} but the dataset has {n} samples",
                        c[0], c[1], c[2]
                    )));
                }
                c
            }
            None => {
                let r = self.ratios;
                if r.iter().any(|v| !v.is_finite() || *v < 0.0) {
                    return Err(Error::Config(format!("invalid split ratios {r:?}")));
                }
                let total: f64 = r.iter().sum();
                if (total - 1.0).abs() > 1e-9 {
                    return Err(Error::Config(format!("split ratios sum to {total}, not 1")));
                }
                let train = (r[0] * n as f64).round() as usize;
                let val = ((r[1] * n as f64).round() as usize).min(n.saturating_sub(train));
                [train, val, n - train - val]
            }
        };
        if let Some(k) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::Config(format!(
                "{} split would be empty",
                ["train", "validation", "test"][k]
            )));
        }
        Ok(sizes)
    }
}

/// Row indices of each split, ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Splits {
    pub fn get(&self, which: SplitName) -> &[usize] {
        match which {
            SplitName::Train => &self.train,
            SplitName::Val => &self.val,
            SplitName::Test => &self.test,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl SplitName {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::Val => "val",
            Self::Test => "test",
        }
    }
}

impl std::str::FromStr for SplitName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Self::Train),
            "val" | "validation" => Ok(Self::Val),
            "test" => Ok(Self::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

pub fn make_splits(labels: &[usize], spec: &SplitSpec, default_seed: u64) -> Result<Splits> {
    let sizes = spec.resolve(labels.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.unwrap_or(default_seed));
    let mut parts: [Vec<usize>; 3] = Default::default();
    if spec.stratified {
        let classes = labels.iter().max().map_or(0, |m| m + 1);
        let members: Vec<Vec<usize>> = (0..classes)
            .map(|c| (0..labels.len()).filter(|&i| labels[i] == c).collect())
            .collect();
        let class_sizes: Vec<usize> = members.iter().map(Vec::len).collect();
        let table = allocate(&class_sizes, &sizes, labels.len())?;
        for (mut idx, quota) in members.into_iter().zip(table) {
            idx.shuffle(&mut rng);
            let mut it = idx.into_iter();
            for (part, q) in parts.iter_mut().zip(quota) {
                part.extend(it.by_ref().take(q));
            }
        }
    } else {
        let mut idx: Vec<usize> = (0..labels.len()).collect();
        idx.shuffle(&mut rng);
        let mut it = idx.into_iter();
        for (part, q) in parts.iter_mut().zip(sizes) {
            part.extend(it.by_ref().take(q));
        }
    }
    for p in &mut parts {
        p.sort_unstable();
    }
    let [train, val, test] = parts;
    Ok(Splits { train, val, test })
}

/// Integer table with the given row and column sums whose entries are the
/// floor or ceiling of the proportional quota `rows[c] * cols[s] / n`.
fn allocate(rows: &[usize], cols: &[usize; 3], n: usize) -> Result<Vec<[usize; 3]>> {
    let mut table = vec![[0usize; 3]; rows.len()];
    let mut fractional = vec![[false; 3]; rows.len()];
    for (c, &r) in rows.iter().enumerate() {
        for s in 0..3 {
            let prod = r * cols[s];
            table[c][s] = prod / n;
            fractional[c][s] = !prod.is_multiple_of(n);
        }
    }
    // residual demands, met by rounding fractional cells up via max-flow
    let nodes = rows.len() + 5;
    let (source, sink) = (0, nodes - 1);
    let class_node = |c: usize| 1 + c;
    let split_node = |s: usize| 1 + rows.len() + s;
    let mut cap = vec![vec![0usize; nodes]; nodes];
    let mut need = 0;
    for (c, &r) in rows.iter().enumerate() {
        let d = r - table[c].iter().sum::<usize>();
        cap[source][class_node(c)] = d;
        need += d;
        for s in 0..3 {
            if fractional[c][s] {
                cap[class_node(c)][split_node(s)] = 1;
            }
        }
    }
    for s in 0..3 {
        let assigned: usize = table.iter().map(|row| row[s]).sum();
        cap[split_node(s)][sink] = cols[s] - assigned;
    }
    let mut flow = 0;
    loop {
        let mut prev = vec![usize::MAX; nodes];
        prev[source] = source;
        let mut queue = VecDeque::from([source]);
        while let Some(u) = queue.pop_front() {
            for v in 0..nodes {
                if prev[v] == usize::MAX && cap[u][v] > 0 {
                    prev[v] = u;
                    queue.push_back(v);
                }
            }
        }
        if prev[sink] == usize::MAX {
            break;
        }
        let mut v = sink;
        while v != source {
            let u = prev[v];
            cap[u][v] -= 1;
            cap[v][u] += 1;
            v = u;
        }
        flow += 1;
    }
    if flow != need {
        return Err(Error::State("stratified split allocation failed".into()));
    }
    for c in 0..rows.len() {
        for s in 0..3 {
            if fractional[c][s] && cap[class_node(c)][split_node(s)] == 0 {
                table[c][s] += 1;
            }
        }
    }
    Ok(table)
}
