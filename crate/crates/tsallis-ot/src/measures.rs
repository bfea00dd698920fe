//! Discrete measures, couplings, stochastic kernels, and cost matrices.
//!
//! This is the data model the solvers and the rate harness consume. All
//! containers validate their invariants at construction and cannot be
//! mutated afterwards, so downstream code never re-checks:
//!
//! * [`DiscreteMeasure`]: finitely many pairwise-distinct atoms in `R^d`
//!   with nonnegative weights of total mass one (within [`MASS_TOL`]).
//! * [`Coupling`]: a joint weight matrix whose marginals match two given
//!   measures within [`MARGINAL_TOL`] and whose mass is one within
//!   [`MASS_TOL`].
//! * [`StochasticKernel`]: a row-stochastic matrix (each row a probability
//!   vector within [`MASS_TOL`]).
//! * [`CostMatrix`]: pairwise costs tagged with the generating family and
//!   optional Lipschitz metadata for the rate envelopes.
//!
//! Validation is also exposed directly ([`check_measure`],
//! [`check_coupling`], [`check_kernel`]) and returns a [`Diagnostics`] value
//! listing every violated invariant with its magnitude, so callers such as
//! the CLI can report precisely what is wrong with an input file instead of
//! a bare boolean.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{OtError, Result};

/// Tolerance for total-mass checks (construction-grade exactness).
pub const MASS_TOL: f64 = 1e-12;

/// Tolerance for coupling marginals. Looser than [`MASS_TOL`] because
/// couplings are routinely produced by iterative solvers.
pub const MARGINAL_TOL: f64 = 1e-9;

// ====== diagnostics ======

/// One violated invariant with the size of the violation.
#[derive(Debug, Clone, Serialize)]
pub struct Violation {
    /// Which invariant failed, e.g. `"mass"` or `"row_marginal[3]"`.
    pub check: String,
    /// How far the value is from conformance.
    pub magnitude: f64,
}

/// Outcome of validating raw data against a container's invariants.
#[derive(Debug, Clone, Default, Serialize)]
pub struct Diagnostics {
    pub violations: Vec<Violation>,
}

impl Diagnostics {
    pub fn pass(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, check: impl Into<String>, magnitude: f64) {
        self.violations.push(Violation {
            check: check.into(),
            magnitude,
        });
    }

    /// Human-readable one-line-per-violation summary.
    pub fn summary(&self) -> String {
        if self.pass() {
            return "ok".to_string();
        }
        self.violations
            .iter()
            .map(|v| format!("{} off by {:e}", v.check, v.magnitude))
            .collect::<Vec<_>>()
            .join("; ")
    }

    fn into_result(self) -> Result<()> {
        if self.pass() {
            Ok(())
        } else {
            Err(OtError::usage(self.summary()))
        }
    }
}

/// Validates atom/weight arrays against the [`DiscreteMeasure`] invariants.
pub fn check_measure(atoms: &Array2<f64>, weights: &Array1<f64>) -> Diagnostics {
    let mut diag = Diagnostics::default();
    let n = atoms.nrows();
    if n == 0 {
        diag.push("support nonempty", 1.0);
        return diag;
    }
    if atoms.ncols() == 0 {
        diag.push("ambient dimension >= 1", 1.0);
    }
    if weights.len() != n {
        diag.push(
            format!("weight count {} matches atom count {n}", weights.len()),
            (weights.len() as f64 - n as f64).abs(),
        );
        return diag;
    }
    for (i, &w) in weights.iter().enumerate() {
        if !w.is_finite() {
            diag.push(format!("weight[{i}] finite"), f64::INFINITY);
        } else if w < 0.0 {
            diag.push(format!("weight[{i}] nonnegative"), -w);
        }
    }
    for (i, row) in atoms.rows().into_iter().enumerate() {
        if row.iter().any(|x| !x.is_finite()) {
            diag.push(format!("atom[{i}] finite"), f64::INFINITY);
        }
    }
    let mass: f64 = weights.iter().sum();
    if (mass - 1.0).abs() > MASS_TOL {
        diag.push("mass", (mass - 1.0).abs());
    }
    // Pairwise-distinct atoms, checked exactly: sort lexicographically by
    // bit pattern so duplicates become neighbors.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        for (xa, xb) in atoms.row(a).iter().zip(atoms.row(b).iter()) {
            match xa.total_cmp(xb) {
                std::cmp::Ordering::Equal => continue,
                other => return other,
            }
        }
        std::cmp::Ordering::Equal
    });
    for pair in order.windows(2) {
        if atoms.row(pair[0]) == atoms.row(pair[1]) {
            diag.push(
                format!("atoms {} and {} distinct", pair[0].min(pair[1]), pair[0].max(pair[1])),
                0.0,
            );
        }
    }
    diag
}

/// Validates a joint weight matrix against the [`Coupling`] invariants for
/// the given marginals.
pub fn check_coupling(
    weights: &Array2<f64>,
    left: &DiscreteMeasure,
    right: &DiscreteMeasure,
) -> Diagnostics {
    let mut diag = Diagnostics::default();
    if weights.nrows() != left.len() || weights.ncols() != right.len() {
        diag.push(
            format!(
                "shape {}x{} matches marginals {}x{}",
                weights.nrows(),
                weights.ncols(),
                left.len(),
                right.len()
            ),
            1.0,
        );
        return diag;
    }
    for ((i, j), &w) in weights.indexed_iter() {
        if !w.is_finite() {
            diag.push(format!("entry[{i}][{j}] finite"), f64::INFINITY);
        } else if w < 0.0 {
            diag.push(format!("entry[{i}][{j}] nonnegative"), -w);
        }
    }
    let rows = weights.sum_axis(Axis(1));
    for (i, (&r, &m)) in rows.iter().zip(left.weights().iter()).enumerate() {
        if (r - m).abs() > MARGINAL_TOL {
            diag.push(format!("row_marginal[{i}]"), (r - m).abs());
        }
    }
    let cols = weights.sum_axis(Axis(0));
    for (j, (&c, &m)) in cols.iter().zip(right.weights().iter()).enumerate() {
        if (c - m).abs() > MARGINAL_TOL {
            diag.push(format!("col_marginal[{j}]"), (c - m).abs());
        }
    }
    let mass = weights.sum();
    if (mass - 1.0).abs() > MASS_TOL {
        diag.push("mass", (mass - 1.0).abs());
    }
    diag
}

/// Validates a matrix against the [`StochasticKernel`] invariants.
pub fn check_kernel(rows: &Array2<f64>) -> Diagnostics {
    let mut diag = Diagnostics::default();
    if rows.nrows() == 0 || rows.ncols() == 0 {
        diag.push("kernel nonempty", 1.0);
        return diag;
    }
    for (i, row) in rows.rows().into_iter().enumerate() {
        let mut sum = 0.0;
        for (j, &v) in row.iter().enumerate() {
            if !v.is_finite() {
                diag.push(format!("row[{i}][{j}] finite"), f64::INFINITY);
            } else if v < 0.0 {
                diag.push(format!("row[{i}][{j}] nonnegative"), -v);
            }
            sum += v;
        }
        if (sum - 1.0).abs() > MASS_TOL {
            diag.push(format!("row[{i}] mass"), (sum - 1.0).abs());
        }
    }
    diag
}

// ====== discrete measure ======

/// A finitely supported probability measure on `R^d`: an `n x d` matrix of
/// pairwise-distinct atoms plus a weight vector of total mass one.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    atoms: Array2<f64>,
    weights: Array1<f64>,
}

/// On-disk JSON schema for a measure. Field names are part of the file
/// format contract: `{"dim": d, "atoms": [[..], ..], "weights": [..]}`.
#[derive(Serialize, Deserialize)]
struct MeasureFile {
    dim: usize,
    atoms: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    /// Validating constructor.
    pub fn new(atoms: Array2<f64>, weights: Array1<f64>) -> Result<Self> {
        check_measure(&atoms, &weights).into_result()?;
        Ok(DiscreteMeasure { atoms, weights })
    }

    /// Point mass at one atom.
    pub fn dirac(point: &[f64]) -> Result<Self> {
        let atoms = Array2::from_shape_vec((1, point.len()), point.to_vec())
            .expect("shape follows from the slice length");
        Self::new(atoms, Array1::from_vec(vec![1.0]))
    }

    /// The `n`-point midpoint discretization of the uniform measure on
    /// `[0, 1]`: atoms `(k + 1/2)/n` with weight `1/n` each. This is the
    /// canonical instance of the rate harness; its quantile quantizer has
    /// the exact power law `W_1(quantized_m, self) = 1/(4m)` whenever `m`
    /// divides `n`.
    pub fn unit_grid_1d(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(OtError::usage("grid needs at least one point"));
        }
        let atoms: Vec<f64> = (0..n).map(|k| (k as f64 + 0.5) / n as f64).collect();
        let atoms = Array2::from_shape_vec((n, 1), atoms).expect("n x 1 shape");
        let weights = Array1::from_elem(n, 1.0 / n as f64);
        Self::new(atoms, weights)
    }

    pub fn len(&self) -> usize {
        self.atoms.nrows()
    }

    pub fn is_empty(&self) -> bool {
        false // nonempty by construction
    }

    /// Ambient dimension `d`.
    pub fn dim(&self) -> usize {
        self.atoms.ncols()
    }

    pub fn atoms(&self) -> &Array2<f64> {
        &self.atoms
    }

    pub fn weights(&self) -> &Array1<f64> {
        &self.weights
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn atom(&self, i: usize) -> ArrayView1<'_, f64> {
        self.atoms.row(i)
    }

    /// Serializes to the JSON file schema.
    pub fn to_json(&self) -> String {
        let file = MeasureFile {
            dim: self.dim(),
            atoms: self
                .atoms
                .rows()
                .into_iter()
                .map(|r| r.to_vec())
                .collect(),
            weights: self.weights.to_vec(),
        };
        serde_json::to_string_pretty(&file).expect("measure schema serializes")
    }

    /// Parses the JSON file schema and validates all invariants.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: MeasureFile = serde_json::from_str(text)
            .map_err(|e| OtError::usage(format!("malformed measure JSON: {e}")))?;
        let n = file.atoms.len();
        for (i, row) in file.atoms.iter().enumerate() {
            if row.len() != file.dim {
                return Err(OtError::usage(format!(
                    "atom[{i}] has {} coordinates, dim field says {}",
                    row.len(),
                    file.dim
                )));
            }
        }
        let flat: Vec<f64> = file.atoms.into_iter().flatten().collect();
        let atoms = Array2::from_shape_vec((n, file.dim), flat)
            .map_err(|e| OtError::usage(format!("bad atom table: {e}")))?;
        Self::new(atoms, Array1::from_vec(file.weights))
    }
}

// ====== stochastic kernel ======

/// A row-stochastic matrix: `rows[i]` is the conditional distribution of the
/// second coordinate given atom `i` of the first. Geometry (the target
/// atoms) lives with the caller; the kernel itself is pure weights.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticKernel {
    rows: Array2<f64>,
}

impl StochasticKernel {
    pub fn new(rows: Array2<f64>) -> Result<Self> {
        check_kernel(&rows).into_result()?;
        Ok(StochasticKernel { rows })
    }

    pub fn rows(&self) -> &Array2<f64> {
        &self.rows
    }

    pub fn source_len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn target_len(&self) -> usize {
        self.rows.ncols()
    }
}

/// Pushforward of a weight vector through a kernel: `out[j] = sum_i w[i] *
/// k[i][j]`. Mass is preserved up to roundoff.
pub fn push_weights(weights: &[f64], kernel: &StochasticKernel) -> Result<Vec<f64>> {
    if weights.len() != kernel.source_len() {
        return Err(OtError::usage(format!(
            "pushforward needs {} source weights, got {}",
            kernel.source_len(),
            weights.len()
        )));
    }
    let mut out = vec![0.0; kernel.target_len()];
    for (i, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        for (j, o) in out.iter_mut().enumerate() {
            *o += w * kernel.rows[(i, j)];
        }
    }
    Ok(out)
}

/// Pushforward measure `mu K` placed on the supplied target atoms.
pub fn push_kernel(
    mu: &DiscreteMeasure,
    kernel: &StochasticKernel,
    target_atoms: Array2<f64>,
) -> Result<DiscreteMeasure> {
    if target_atoms.nrows() != kernel.target_len() {
        return Err(OtError::usage(format!(
            "kernel targets {} atoms, got {}",
            kernel.target_len(),
            target_atoms.nrows()
        )));
    }
    let weights = push_weights(
        mu.weights().as_slice().expect("contiguous"),
        kernel,
    )?;
    DiscreteMeasure::new(target_atoms, Array1::from_vec(weights))
}

// ====== coupling ======

/// A coupling of two discrete measures: a joint weight matrix with the
/// prescribed marginals. Owns copies of both marginals so exports and
/// diagnostics are self-contained.
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    weights: Array2<f64>,
    left: DiscreteMeasure,
    right: DiscreteMeasure,
}

impl Coupling {
    /// Validating constructor.
    pub fn new(
        weights: Array2<f64>,
        left: DiscreteMeasure,
        right: DiscreteMeasure,
    ) -> Result<Self> {
        check_coupling(&weights, &left, &right).into_result()?;
        Ok(Coupling {
            weights,
            left,
            right,
        })
    }

    /// Diagonal coupling of a measure with itself.
    pub fn identity(mu: &DiscreteMeasure) -> Self {
        let n = mu.len();
        let mut weights = Array2::zeros((n, n));
        for i in 0..n {
            weights[(i, i)] = mu.weight(i);
        }
        Coupling {
            weights,
            left: mu.clone(),
            right: mu.clone(),
        }
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn left(&self) -> &DiscreteMeasure {
        &self.left
    }

    pub fn right(&self) -> &DiscreteMeasure {
        &self.right
    }

    pub fn mass(&self) -> f64 {
        self.weights.sum()
    }

    /// Realized row marginal (row sums, not the stored left measure).
    pub fn row_sums(&self) -> Array1<f64> {
        self.weights.sum_axis(Axis(1))
    }

    /// Realized column marginal.
    pub fn col_sums(&self) -> Array1<f64> {
        self.weights.sum_axis(Axis(0))
    }

    /// The reversed coupling: weights transposed, marginals swapped.
    pub fn transpose(&self) -> Self {
        Coupling {
            weights: self.weights.t().to_owned(),
            left: self.right.clone(),
            right: self.left.clone(),
        }
    }

    /// Splits the coupling into its realized first marginal and the
    /// conditional kernel `K[i][j] = pi[i][j] / row_mass[i]`.
    ///
    /// Rows with zero mass carry no information; by convention they are
    /// filled with the realized second marginal, which keeps the kernel
    /// row-stochastic. `recompose` of the output reproduces the coupling to
    /// roundoff.
    pub fn disintegrate(&self) -> (DiscreteMeasure, StochasticKernel) {
        let rows = self.row_sums();
        let mass = self.mass();
        let cols = self.col_sums();
        let (m, n) = self.weights.dim();
        let mut kernel = Array2::zeros((m, n));
        for i in 0..m {
            if rows[i] > 0.0 {
                for j in 0..n {
                    kernel[(i, j)] = self.weights[(i, j)] / rows[i];
                }
            } else {
                for j in 0..n {
                    kernel[(i, j)] = cols[j] / mass;
                }
            }
        }
        let left = DiscreteMeasure::new(self.left.atoms().clone(), rows)
            .expect("row sums of a valid coupling form a measure");
        let kernel = StochasticKernel::new(kernel)
            .expect("normalized rows are stochastic");
        (left, kernel)
    }

    /// Rebuilds a coupling from a disintegration: `pi[i][j] = mu[i] * k[i][j]`.
    pub fn recompose(
        mu: &DiscreteMeasure,
        kernel: &StochasticKernel,
        right: &DiscreteMeasure,
    ) -> Result<Self> {
        if mu.len() != kernel.source_len() {
            return Err(OtError::usage(format!(
                "kernel has {} rows, left measure has {} atoms",
                kernel.source_len(),
                mu.len()
            )));
        }
        let mut weights = kernel.rows().clone();
        for (i, mut row) in weights.rows_mut().into_iter().enumerate() {
            let w = mu.weight(i);
            row.mapv_inplace(|v| v * w);
        }
        Self::new(weights, mu.clone(), right.clone())
    }

    /// Serializes the weight matrix as CSV. The header row carries the
    /// column atom indices, the first field of each data row the row atom
    /// index; entries use 17 significant digits so parsing is lossless:
    ///
    /// ```text
    /// row,0,1
    /// 0,2.5000000000000000e-1,2.5000000000000000e-1
    /// 1,2.5000000000000000e-1,2.5000000000000000e-1
    /// ```
    ///
    /// Atom coordinates are not repeated here; they live in the measure
    /// files the coupling was built from.
    pub fn to_csv(&self) -> String {
        let (m, n) = self.weights.dim();
        let mut out = String::from("row");
        for j in 0..n {
            out.push_str(&format!(",{j}"));
        }
        out.push('\n');
        for i in 0..m {
            out.push_str(&i.to_string());
            for j in 0..n {
                out.push_str(&format!(",{:.16e}", self.weights[(i, j)]));
            }
            out.push('\n');
        }
        out
    }

    /// Parses a weight matrix in the [`Coupling::to_csv`] layout.
    pub fn weights_from_csv(text: &str) -> Result<Array2<f64>> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| OtError::usage("empty coupling CSV"))?;
        let n = header.split(',').count().saturating_sub(1);
        if n == 0 {
            return Err(OtError::usage("coupling CSV header has no columns"));
        }
        let mut data: Vec<f64> = Vec::new();
        let mut m = 0;
        for (line_no, line) in lines.enumerate() {
            let mut fields = line.split(',');
            let _row_idx = fields
                .next()
                .ok_or_else(|| OtError::usage(format!("row {line_no}: missing index field")))?;
            let mut count = 0;
            for field in fields {
                let v: f64 = field.trim().parse().map_err(|e| {
                    OtError::usage(format!("row {line_no}: bad weight {field:?}: {e}"))
                })?;
                data.push(v);
                count += 1;
            }
            if count != n {
                return Err(OtError::usage(format!(
                    "row {line_no}: expected {n} weights, found {count}"
                )));
            }
            m += 1;
        }
        Array2::from_shape_vec((m, n), data)
            .map_err(|e| OtError::usage(format!("bad coupling table: {e}")))
    }

    /// Parses CSV weights and validates them against the given marginals.
    pub fn from_csv(
        text: &str,
        left: DiscreteMeasure,
        right: DiscreteMeasure,
    ) -> Result<Self> {
        let weights = Self::weights_from_csv(text)?;
        Self::new(weights, left, right)
    }
}

/// Independent coupling `mu (x) nu`: `pi[i][j] = mu[i] * nu[j]`.
pub fn product_measure(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Coupling {
    let m = mu.len();
    let n = nu.len();
    let mut weights = Array2::zeros((m, n));
    for i in 0..m {
        for j in 0..n {
            weights[(i, j)] = mu.weight(i) * nu.weight(j);
        }
    }
    Coupling {
        weights,
        left: mu.clone(),
        right: nu.clone(),
    }
}

// ====== cost matrices ======

/// Which formula generated a cost matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostFamily {
    /// `c(x, y) = sum_k |x_k - y_k|`.
    L1Sum,
    /// `c(x, y) = |x - y|_2^p` for the stored exponent `p >= 1`.
    LpPower(f64),
    /// Caller-supplied values with no generating formula.
    Custom,
}

/// Pairwise costs between the atoms of two measures, with provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    values: Array2<f64>,
    family: CostFamily,
    /// Declared Lipschitz constant of `c` in each argument, when certified.
    /// The rate envelopes require one.
    lipschitz: Option<f64>,
}

impl CostMatrix {
    /// Wraps caller-supplied values; shape and finiteness are checked, and
    /// no Lipschitz constant is certified.
    pub fn custom(values: Array2<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(OtError::usage("cost matrix must be nonempty"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(OtError::usage("cost matrix entries must be finite"));
        }
        Ok(CostMatrix {
            values,
            family: CostFamily::Custom,
            lipschitz: None,
        })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn family(&self) -> CostFamily {
        self.family
    }

    pub fn lipschitz(&self) -> Option<f64> {
        self.lipschitz
    }

    /// Overrides the Lipschitz metadata (for callers that certified a
    /// constant out of band).
    pub fn with_lipschitz(mut self, l: f64) -> Self {
        self.lipschitz = Some(l);
        self
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.dim()
    }
}

/// Evaluates a cost family on all atom pairs of two measures in the same
/// ambient dimension.
///
/// For one-dimensional supports both built-in families with exponent 1
/// reduce to `|x - y|`, which is 1-Lipschitz in each argument; the matrix
/// then carries `lipschitz = Some(1.0)`. Other combinations leave the
/// metadata empty, to be declared by the caller.
pub fn build_cost(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    family: CostFamily,
) -> Result<CostMatrix> {
    if mu.dim() != nu.dim() {
        return Err(OtError::usage(format!(
            "cost needs equal ambient dimensions, got {} and {}",
            mu.dim(),
            nu.dim()
        )));
    }
    if let CostFamily::LpPower(p) = family {
        if !(p >= 1.0) || !p.is_finite() {
            return Err(OtError::usage(format!(
                "cost exponent must be finite and >= 1, got {p}"
            )));
        }
    }
    if family == CostFamily::Custom {
        return Err(OtError::usage(
            "custom costs carry their own values; use CostMatrix::custom",
        ));
    }
    let (m, n) = (mu.len(), nu.len());
    let mut values = Array2::zeros((m, n));
    for i in 0..m {
        let x = mu.atom(i);
        for j in 0..n {
            let y = nu.atom(j);
            values[(i, j)] = match family {
                CostFamily::L1Sum => x
                    .iter()
                    .zip(y.iter())
                    .map(|(a, b)| (a - b).abs())
                    .sum(),
                CostFamily::LpPower(p) => {
                    let sq: f64 = x
                        .iter()
                        .zip(y.iter())
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    let dist = sq.sqrt();
                    if p == 1.0 {
                        dist
                    } else if p == 2.0 {
                        sq
                    } else {
                        dist.powf(p)
                    }
                }
                CostFamily::Custom => unreachable!(),
            };
        }
    }
    let lipschitz = match (family, mu.dim()) {
        (CostFamily::L1Sum, 1) => Some(1.0),
        (CostFamily::LpPower(p), 1) if p == 1.0 => Some(1.0),
        _ => None,
    };
    Ok(CostMatrix {
        values,
        family,
        lipschitz,
    })
}
