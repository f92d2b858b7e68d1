use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

use super::kmeans::nearest;

/// Exponential decay from `initial` to `final_value` over a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub initial: f64,
    pub final_value: f64,
}

impl Schedule {
    /// Value at progress `t` in `[0, 1]`.
    pub fn at(&self, t: f64) -> f64 {
        self.initial * (self.final_value / self.initial).powf(t)
    }

    fn validate(&self, what: &str) -> Result<()> {
        if !(self.initial > self.final_value && self.final_value > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "{what} schedule must decrease strictly to a positive value"
            )));
        }
        Ok(())
    }
}

/// Rectangular self-organizing map; node `r * width + c` sits at `(c, r)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SomGrid<T> {
    pub width: usize,
    pub height: usize,
    pub nodes: Matrix<T>,
    pub learning_rate: Schedule,
    pub radius: Schedule,
}

impl<T: Scalar> SomGrid<T> {
    /// Grid with default schedules; weights are set by `som_fit`.
    pub fn new(width: usize, height: usize, dim: usize) -> Result<Self> {
        if width == 0 || height == 0 || dim == 0 {
            return Err(Error::InvalidArgument("SOM grid and dimension must be nonempty".into()));
        }
        let span = width.max(height) as f64;
        Ok(Self {
            width,
            height,
            nodes: Matrix::zeros(width * height, dim),
            learning_rate: Schedule {
                initial: 0.5,
                final_value: 0.01,
            },
            radius: Schedule {
                initial: (span / 2.0).max(1.0),
                final_value: 0.1,
            },
        })
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn grid_distance2(&self, a: usize, b: usize) -> f64 {
        let (ax, ay) = ((a % self.width) as f64, (a / self.width) as f64);
        let (bx, by) = ((b % self.width) as f64, (b / self.width) as f64);
        (ax - bx).powi(2) + (ay - by).powi(2)
    }
}

/// Online training: nodes start at randomly drawn data points, then every
/// sample pulls its best-matching node and that node's Gaussian neighbourhood.
pub fn som_fit<T: Scalar>(x: &Matrix<T>, grid: &SomGrid<T>, epochs: usize, seed: u64) -> Result<SomGrid<T>> {
    grid.learning_rate.validate("learning rate")?;
    grid.radius.validate("radius")?;
    if x.cols() != grid.nodes.cols() {
        return Err(Error::Shape(format!(
            "data has {} columns, grid nodes {}",
            x.cols(),
            grid.nodes.cols()
        )));
    }
    let n = x.rows();
    if n == 0 {
        return Err(Error::Size("cannot fit a SOM to no data".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = grid.clone();
    let draws: Vec<usize> = if n >= grid.len() {
        rand::seq::index::sample(&mut rng, n, grid.len()).into_vec()
    } else {
        (0..grid.len()).map(|i| i % n).collect()
    };
    for (node, &i) in draws.iter().enumerate() {
        out.nodes.row_mut(node).copy_from_slice(x.row(i));
    }
    let total = (epochs * n).max(1) as f64;
    let mut step = 0usize;
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let progress = step as f64 / total;
            let lr = out.learning_rate.at(progress);
            let r = out.radius.at(progress);
            let xi = x.row(i);
            let (bmu, _) = nearest(xi, &out.nodes);
            for node in 0..out.len() {
                let h = (-out.grid_distance2(bmu, node) / (2.0 * r * r)).exp();
                let a = T::of(lr * h);
                for (w, &v) in out.nodes.row_mut(node).iter_mut().zip(xi) {
                    *w += a * (v - *w);
                }
            }
            step += 1;
        }
    }
    if !out.nodes.is_finite() {
        return Err(Error::Divergence {
            epoch: epochs,
            loss: f64::NAN,
        });
    }
    Ok(out)
}

/// Best-matching node index per row, ties to the lowest index.
pub fn som_assign<T: Scalar>(grid: &SomGrid<T>, x: &Matrix<T>) -> Result<Vec<usize>> {
    if x.cols() != grid.nodes.cols() {
        return Err(Error::Shape("data and grid dimensions differ".into()));
    }
    Ok(x.iter_rows().map(|r| nearest(r, &grid.nodes).0).collect())
}
