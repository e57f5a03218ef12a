//! Gaussian-mixture data quantized to a fixed number of levels.

use crate::numerics::{Matrix, Rng};

use super::config::{ExperimentConfig, Task};

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub components: usize,
    pub dims: usize,
    pub levels: usize,
    pub train_size: usize,
    pub test_size: usize,
    /// Per-coordinate standard deviation, in the `[0, 1]` value range.
    pub sigma: f64,
    /// Means are resampled until every pair is at least `min_separation·σ` apart.
    pub min_separation: f64,
}

impl SyntheticSpec {
    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        Self {
            components: cfg.effective_components(),
            dims: cfg.data_dims,
            levels: cfg.levels,
            train_size: cfg.train_size,
            test_size: cfg.test_size,
            ..Self::default()
        }
    }
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            components: 16,
            dims: 16,
            levels: 16,
            train_size: 4096,
            test_size: 1024,
            sigma: 0.08,
            min_separation: 6.0,
        }
    }
}

/// One split of the data.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// Levels rescaled to `[−1, 1]`, `n × dims`.
    pub inputs: Matrix,
    /// Level index per coordinate, row-major `n × dims`.
    pub levels: Vec<usize>,
    /// Mixture component of each row.
    pub labels: Vec<usize>,
    pub dims: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Targets for `task`: level indices or component labels.
    pub fn targets(&self, task: Task) -> &[usize] {
        match task {
            Task::Autoencode => &self.levels,
            Task::Classify => &self.labels,
        }
    }

    /// Rows `indices` as a new dataset.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut levels = Vec::with_capacity(indices.len() * self.dims);
        for &i in indices {
            levels.extend_from_slice(&self.levels[i * self.dims..(i + 1) * self.dims]);
        }
        Dataset {
            inputs: self.inputs.select_rows(indices).expect("indices in range"),
            levels,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            dims: self.dims,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticData {
    pub spec: SyntheticSpec,
    /// Component means in the `[0, 1]` value range, `components × dims`.
    pub means: Matrix,
    pub train: Dataset,
    pub test: Dataset,
}

/// Draws the mixture and both splits from `seed`. The same mixture serves
/// both tasks; classification uses the component index as its label.
pub fn make_synthetic(spec: &SyntheticSpec, seed: u64) -> SyntheticData {
    let mut rng = Rng::seed_from_u64(seed ^ 0x5EED_DA7A_0000_0001);
    let means = draw_means(spec, &mut rng);
    let train = draw_split(spec, &means, spec.train_size, &mut rng);
    let test = draw_split(spec, &means, spec.test_size, &mut rng);
    SyntheticData {
        spec: spec.clone(),
        means,
        train,
        test,
    }
}

fn draw_means(spec: &SyntheticSpec, rng: &mut Rng) -> Matrix {
    let min_dist = spec.min_separation * spec.sigma;
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(spec.components);
    while rows.len() < spec.components {
        let candidate: Vec<f64> = (0..spec.dims).map(|_| 0.2 + 0.6 * rng.uniform()).collect();
        let far_enough = rows
            .iter()
            .all(|r| crate::numerics::sq_dist(r, &candidate).sqrt() >= min_dist);
        if far_enough {
            rows.push(candidate);
        }
    }
    Matrix::from_rows(&rows)
}

fn draw_split(spec: &SyntheticSpec, means: &Matrix, n: usize, rng: &mut Rng) -> Dataset {
    let top = (spec.levels - 1) as f64;
    let mut levels = Vec::with_capacity(n * spec.dims);
    let mut labels = Vec::with_capacity(n);
    let mut inputs = Matrix::zeros(n, spec.dims);
    for r in 0..n {
        let c = rng.below(spec.components);
        labels.push(c);
        for j in 0..spec.dims {
            let v = (means.get(c, j) + spec.sigma * rng.normal()).clamp(0.0, 1.0);
            let level = (v * top).round() as usize;
            levels.push(level);
            inputs.set(r, j, 2.0 * level as f64 / top - 1.0);
        }
    }
    Dataset {
        inputs,
        levels,
        labels,
        dims: spec.dims,
    }
}
