//! Seeded synthetic tables with known structure.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::codec::{Cell, Column, ColumnKind, Row, TabularSchema};
use crate::metrics::SyntheticManifold;

/// Columns `x0 … x{d-1}` holding manifold samples.
pub fn manifold_table(
    manifold: &SyntheticManifold,
    n: usize,
    seed: u64,
) -> (TabularSchema, Vec<Row>) {
    let d = manifold.ambient_dim();
    let columns = (0..d)
        .map(|i| Column::continuous(format!("x{i}")))
        .collect();
    let schema = TabularSchema {
        columns,
        target_column: None,
    };
    let x = manifold.sample(n, seed);
    let rows = x
        .iter_rows()
        .map(|r| r.iter().map(|&v| Cell::Number(v)).collect())
        .collect();
    (schema, rows)
}

/// Standard bivariate normal with correlation `rho`, columns `a`, `b`.
pub fn correlated_gaussian(n: usize, rho: f64, seed: u64) -> (TabularSchema, Vec<Row>) {
    let schema = TabularSchema {
        columns: vec![Column::continuous("a"), Column::continuous("b")],
        target_column: None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = (1.0 - rho * rho).sqrt();
    let rows = (0..n)
        .map(|_| {
            let u: f64 = rng.sample(StandardNormal);
            let v: f64 = rng.sample(StandardNormal);
            vec![Cell::Number(u), Cell::Number(rho * u + s * v)]
        })
        .collect();
    (schema, rows)
}

/// Parameters of one mixture component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: [f64; 2],
    pub std: [f64; 2],
    /// Class probabilities of `color` (`red`, `green`, `blue`).
    pub color: [f64; 3],
    /// Probability that `size` is `large`.
    pub large: f64,
}

/// Gaussian mixture over two continuous (`income`, `score`) and two
/// categorical (`color`, `size`) columns; the component drives all four.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixtureTable {
    pub components: Vec<MixtureComponent>,
}

impl Default for GaussianMixtureTable {
    fn default() -> Self {
        Self {
            components: vec![
                MixtureComponent {
                    weight: 0.5,
                    mean: [0.0, 0.0],
                    std: [1.0, 0.5],
                    color: [0.7, 0.2, 0.1],
                    large: 0.2,
                },
                MixtureComponent {
                    weight: 0.3,
                    mean: [3.0, 1.5],
                    std: [0.8, 0.7],
                    color: [0.2, 0.6, 0.2],
                    large: 0.7,
                },
                MixtureComponent {
                    weight: 0.2,
                    mean: [-2.0, 3.0],
                    std: [0.6, 0.6],
                    color: [0.1, 0.2, 0.7],
                    large: 0.5,
                },
            ],
        }
    }
}

impl GaussianMixtureTable {
    pub const COLORS: [&'static str; 3] = ["red", "green", "blue"];

    pub fn schema(&self) -> TabularSchema {
        TabularSchema {
            columns: vec![
                Column::continuous("income"),
                Column::continuous("score"),
                Column {
                    name: "color".into(),
                    kind: ColumnKind::Categorical {
                        cardinality: None,
                        categories: Some(Self::COLORS.iter().map(|s| s.to_string()).collect()),
                    },
                },
                Column {
                    name: "size".into(),
                    kind: ColumnKind::Categorical {
                        cardinality: None,
                        categories: Some(vec!["large".into(), "small".into()]),
                    },
                },
            ],
            target_column: None,
        }
    }

    pub fn sample(&self, n: usize, seed: u64) -> (TabularSchema, Vec<Row>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let total: f64 = self.components.iter().map(|c| c.weight).sum();
        let pick = |rng: &mut ChaCha8Rng, probs: &[f64], total: f64| {
            let mut u = rng.random::<f64>() * total;
            for (i, p) in probs.iter().enumerate() {
                if u < *p {
                    return i;
                }
                u -= p;
            }
            probs.len() - 1
        };
        let weights: Vec<f64> = self.components.iter().map(|c| c.weight).collect();
        let rows = (0..n)
            .map(|_| {
                let c = &self.components[pick(&mut rng, &weights, total)];
                let x: f64 = c.mean[0] + c.std[0] * rng.sample::<f64, _>(StandardNormal);
                let y: f64 = c.mean[1] + c.std[1] * rng.sample::<f64, _>(StandardNormal);
                let color = Self::COLORS[pick(&mut rng, &c.color, c.color.iter().sum())];
                let size = if rng.random::<f64>() < c.large {
                    "large"
                } else {
                    "small"
                };
                vec![
                    Cell::Number(x),
                    Cell::Number(y),
                    Cell::Category(color.into()),
                    Cell::Category(size.into()),
                ]
            })
            .collect();
        (self.schema(), rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn circle_rows_lie_on_circle() {
        let (schema, rows) = manifold_table(&SyntheticManifold::circle(2), 50, 1);
        assert_eq!(schema.columns.len(), 2);
        for r in &rows {
            let (a, b) = (r[0].as_number().unwrap(), r[1].as_number().unwrap());
            assert!((a * a + b * b - 1.0).abs() < 1e-12);
        }
        assert_eq!(manifold_table(&SyntheticManifold::circle(2), 50, 1).1, rows);
    }

    #[test]
    fn gaussian_correlation() {
        let (_, rows) = correlated_gaussian(20000, 0.8, 2);
        let n = rows.len() as f64;
        let xy: f64 = rows
            .iter()
            .map(|r| r[0].as_number().unwrap() * r[1].as_number().unwrap())
            .sum::<f64>()
            / n;
        assert!((xy - 0.8).abs() < 0.03, "{xy}");
    }

    #[test]
    fn mixture_schema_and_classes() {
        let m = GaussianMixtureTable::default();
        let (schema, rows) = m.sample(1000, 3);
        schema.validate().unwrap();
        assert_eq!(schema.encoded_dim(), 7);
        let reds = rows
            .iter()
            .filter(|r| r[2] == Cell::Category("red".into()))
            .count();
        assert!(reds > 300 && reds < 600, "{reds}");
    }
}
