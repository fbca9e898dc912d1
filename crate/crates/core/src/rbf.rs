//! Gaussian RBF blend of per-center controlled inertia matrices:
//! `M̂_c(q) = Σᵢ (hᵢ(q) M̃_ci + M_cbi)`, `hᵢ(q) = exp(−(εᵢ‖q − qᵢ‖)²)`.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::inertia::ControlledInertia;
use crate::linalg::{self, fmt17};
use crate::matching::CenterSet;

const FORMAT_TAG: &str = "rbf-inertia-model 1";

#[derive(Clone, Debug, PartialEq)]
pub struct RbfInertiaModel {
    n: usize,
    /// Coordinates entering the distance `‖q − qᵢ‖`.
    active: Vec<usize>,
    centers: Vec<DVector<f64>>,
    widths: Vec<f64>,
    weights: Vec<DMatrix<f64>>,
    biases: Vec<DMatrix<f64>>,
    bias_sum: DMatrix<f64>,
}

impl RbfInertiaModel {
    pub fn new(
        centers: Vec<DVector<f64>>,
        widths: Vec<f64>,
        weights: Vec<DMatrix<f64>>,
        biases: Vec<DMatrix<f64>>,
        active: Vec<usize>,
    ) -> Result<Self> {
        let r = centers.len();
        if r == 0 {
            return Err(Error::Config(
                "an RBF model needs at least one center".into(),
            ));
        }
        let n = centers[0].len();
        if widths.len() != r || weights.len() != r || biases.len() != r {
            return Err(Error::Dimension {
                context: "RBF model parameters",
                expected: format!("{r} entries each"),
                actual: format!(
                    "{} widths, {} weights, {} biases",
                    widths.len(),
                    weights.len(),
                    biases.len()
                ),
            });
        }
        if active.is_empty() || active.iter().any(|&k| k >= n) {
            return Err(Error::Config(format!(
                "active coordinates {active:?} invalid for dimension {n}"
            )));
        }
        for i in 0..r {
            let bad = |reason: &str| Error::Center {
                index: i,
                reason: reason.into(),
            };
            if centers[i].len() != n || weights[i].shape() != (n, n) || biases[i].shape() != (n, n)
            {
                return Err(bad("dimension mismatch"));
            }
            if !(widths[i] > 0.0 && widths[i].is_finite()) {
                return Err(bad("width must be positive and finite"));
            }
            if !linalg::is_symmetric(&weights[i], 0.0) || !linalg::is_symmetric(&biases[i], 0.0) {
                return Err(bad("weight and bias matrices must be symmetric"));
            }
        }
        let bias_sum = biases.iter().fold(DMatrix::zeros(n, n), |acc, b| acc + b);
        Ok(Self {
            n,
            active,
            centers,
            widths,
            weights,
            biases,
            bias_sum,
        })
    }

    /// Model whose biases are `M_ci − M̃_ci`, so the pair sums to each center's `M_ci`.
    pub fn from_center_set(
        cs: &CenterSet,
        widths: Vec<f64>,
        weights: Vec<DMatrix<f64>>,
        active: Vec<usize>,
    ) -> Result<Self> {
        if weights.len() != cs.len() {
            return Err(Error::Dimension {
                context: "RBF weights",
                expected: cs.len().to_string(),
                actual: weights.len().to_string(),
            });
        }
        let biases = cs
            .controlled()
            .iter()
            .zip(&weights)
            .map(|(mc, w)| mc - w)
            .collect();
        Self::new(cs.centers().to_vec(), widths, weights, biases, active)
    }

    /// Same model with the widths replaced.
    pub fn with_widths(&self, widths: Vec<f64>) -> Result<Self> {
        Self::new(
            self.centers.clone(),
            widths,
            self.weights.clone(),
            self.biases.clone(),
            self.active.clone(),
        )
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn active(&self) -> &[usize] {
        &self.active
    }

    pub fn centers(&self) -> &[DVector<f64>] {
        &self.centers
    }

    pub fn widths(&self) -> &[f64] {
        &self.widths
    }

    pub fn weights(&self) -> &[DMatrix<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[DMatrix<f64>] {
        &self.biases
    }

    /// `Σᵢ M_cbi`.
    pub fn bias_sum(&self) -> &DMatrix<f64> {
        &self.bias_sum
    }

    /// Squared active-coordinate distance `‖q − qᵢ‖²`.
    pub fn distance_sq(&self, i: usize, q: &DVector<f64>) -> f64 {
        self.active
            .iter()
            .map(|&k| (q[k] - self.centers[i][k]).powi(2))
            .sum()
    }

    /// Basis values `hᵢ(q)`.
    pub fn basis(&self, q: &DVector<f64>) -> Vec<f64> {
        (0..self.len())
            .map(|i| (-(self.widths[i] * self.widths[i]) * self.distance_sq(i, q)).exp())
            .collect()
    }

    /// `M̃_c` sum and bias, evaluated from precomputed basis values.
    pub fn evaluate_with_basis(&self, h: &[f64]) -> DMatrix<f64> {
        self.weights
            .iter()
            .zip(h)
            .fold(self.bias_sum.clone(), |acc, (w, &hi)| acc + w * hi)
    }
}

impl ControlledInertia for RbfInertiaModel {
    fn dim(&self) -> usize {
        self.n
    }

    fn evaluate(&self, q: &DVector<f64>) -> DMatrix<f64> {
        self.evaluate_with_basis(&self.basis(q))
    }

    fn mass_flow(&self, q: &DVector<f64>, qd: &DVector<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.n, self.n);
        for (i, h) in self.basis(q).into_iter().enumerate() {
            let wq = &self.weights[i] * qd;
            let e2 = self.widths[i] * self.widths[i];
            for &k in &self.active {
                let dh = -2.0 * e2 * (q[k] - self.centers[i][k]) * h;
                out.column_mut(k).axpy(dh, &wq, 1.0);
            }
        }
        out
    }
}

// ---- persistence -----------------------------------------------------------

fn join(values: impl IntoIterator<Item = f64>) -> String {
    values.into_iter().map(fmt17).collect::<Vec<_>>().join(" ")
}

fn row_major(m: &DMatrix<f64>) -> impl Iterator<Item = f64> + '_ {
    (0..m.nrows()).flat_map(move |i| (0..m.ncols()).map(move |j| m[(i, j)]))
}

impl RbfInertiaModel {
    /// Plain-text document; every float is written with 17 significant digits
    /// so that a save/load cycle reproduces the model bit for bit.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{FORMAT_TAG}");
        let _ = writeln!(s, "n {}", self.n);
        let _ = writeln!(s, "r {}", self.len());
        let active: Vec<String> = self.active.iter().map(|k| k.to_string()).collect();
        let _ = writeln!(s, "active {}", active.join(" "));
        for i in 0..self.len() {
            let _ = writeln!(s, "center {}", join(self.centers[i].iter().copied()));
            let _ = writeln!(s, "width {}", fmt17(self.widths[i]));
            let _ = writeln!(s, "weight {}", join(row_major(&self.weights[i])));
            let _ = writeln!(s, "bias {}", join(row_major(&self.biases[i])));
        }
        s
    }

    pub fn save<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(self.to_text().as_bytes())?;
        Ok(())
    }

    pub fn load<R: BufRead>(r: R) -> Result<Self> {
        let lines = r.lines().collect::<std::io::Result<Vec<_>>>()?;
        Self::from_text(&lines.join("\n"))
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty());
        let mut next = |expected: &str| -> Result<(usize, Vec<&str>)> {
            let (no, line) = lines.next().ok_or(Error::Parse {
                line: 0,
                reason: format!("unexpected end of document, expected '{expected}'"),
            })?;
            let mut parts = line.split_whitespace();
            let key = parts.next().unwrap_or("");
            if key != expected {
                return Err(Error::Parse {
                    line: no,
                    reason: format!("expected '{expected}', found '{key}'"),
                });
            }
            Ok((no, parts.collect()))
        };
        fn ints(no: usize, v: &[&str]) -> Result<Vec<usize>> {
            v.iter()
                .map(|x| {
                    x.parse().map_err(|_| Error::Parse {
                        line: no,
                        reason: format!("invalid integer '{x}'"),
                    })
                })
                .collect()
        }
        fn floats(no: usize, v: &[&str], count: usize) -> Result<Vec<f64>> {
            if v.len() != count {
                return Err(Error::Parse {
                    line: no,
                    reason: format!("expected {count} values, found {}", v.len()),
                });
            }
            v.iter()
                .map(|x| {
                    x.parse::<f64>().map_err(|_| Error::Parse {
                        line: no,
                        reason: format!("invalid number '{x}'"),
                    })
                })
                .collect()
        }
        fn single(no: usize, v: &[&str]) -> Result<usize> {
            match ints(no, v)?.as_slice() {
                [x] => Ok(*x),
                _ => Err(Error::Parse {
                    line: no,
                    reason: "expected a single integer".into(),
                }),
            }
        }

        let (no, tag) = next("rbf-inertia-model")?;
        if tag != ["1"] {
            return Err(Error::Parse {
                line: no,
                reason: "unsupported format version".into(),
            });
        }
        let n = {
            let (no, v) = next("n")?;
            single(no, &v)?
        };
        let r = {
            let (no, v) = next("r")?;
            single(no, &v)?
        };
        if n == 0 || r == 0 {
            return Err(Error::Parse {
                line: no,
                reason: "dimension and center count must be positive".into(),
            });
        }
        let active = {
            let (no, v) = next("active")?;
            ints(no, &v)?
        };
        let (mut centers, mut widths, mut weights, mut biases) = (vec![], vec![], vec![], vec![]);
        for _ in 0..r {
            let (no, v) = next("center")?;
            centers.push(DVector::from_vec(floats(no, &v, n)?));
            let (no, v) = next("width")?;
            widths.push(floats(no, &v, 1)?[0]);
            let (no, v) = next("weight")?;
            weights.push(DMatrix::from_row_slice(n, n, &floats(no, &v, n * n)?));
            let (no, v) = next("bias")?;
            biases.push(DMatrix::from_row_slice(n, n, &floats(no, &v, n * n)?));
        }
        if let Some((no, line)) = lines.next() {
            return Err(Error::Parse {
                line: no,
                reason: format!("trailing content '{line}'"),
            });
        }
        Self::new(centers, widths, weights, biases, active).map_err(|e| Error::Parse {
            line: 0,
            reason: e.to_string(),
        })
    }
}
