//! Count-matrix data model, size factors, and log-normalization.
//!
//! Matrices are dense and row-major (cells × genes); desk-scale inputs fit
//! comfortably and dense IRLS is simpler than a sparse pipeline. All types
//! are immutable after construction and safe to share across workers.

use crate::error::{Error, Result};

/// An n_cells × n_genes matrix of non-negative integer read counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountMatrix {
    n_cells: usize,
    n_genes: usize,
    counts: Vec<u64>,
    gene_names: Option<Vec<String>>,
    cell_names: Option<Vec<String>>,
}

impl CountMatrix {
    pub fn from_counts(n_cells: usize, n_genes: usize, counts: Vec<u64>) -> Result<Self> {
        if n_cells == 0 || n_genes == 0 {
            return Err(Error::DimensionMismatch(format!(
                "matrix dimensions must be positive, got {n_cells}x{n_genes}"
            )));
        }
        if counts.len() != n_cells * n_genes {
            return Err(Error::DimensionMismatch(format!(
                "{n_cells}x{n_genes} matrix needs {} entries, got {}",
                n_cells * n_genes,
                counts.len()
            )));
        }
        Ok(Self { n_cells, n_genes, counts, gene_names: None, cell_names: None })
    }

    pub fn with_gene_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.n_genes {
            return Err(Error::DimensionMismatch(format!(
                "{} gene names for {} genes",
                names.len(),
                self.n_genes
            )));
        }
        self.gene_names = Some(names);
        Ok(self)
    }

    pub fn with_cell_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.n_cells {
            return Err(Error::DimensionMismatch(format!(
                "{} cell names for {} cells",
                names.len(),
                self.n_cells
            )));
        }
        self.cell_names = Some(names);
        Ok(self)
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn n_genes(&self) -> usize {
        self.n_genes
    }

    pub fn get(&self, cell: usize, gene: usize) -> u64 {
        self.counts[cell * self.n_genes + gene]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn row(&self, cell: usize) -> &[u64] {
        &self.counts[cell * self.n_genes..(cell + 1) * self.n_genes]
    }

    pub fn column(&self, gene: usize) -> Vec<u64> {
        (0..self.n_cells).map(|i| self.get(i, gene)).collect()
    }

    /// Gene column as f64, the shape GLM responses take.
    pub fn column_f64(&self, gene: usize) -> Vec<f64> {
        (0..self.n_cells).map(|i| self.get(i, gene) as f64).collect()
    }

    pub fn gene_names(&self) -> Option<&[String]> {
        self.gene_names.as_deref()
    }

    pub fn cell_names(&self) -> Option<&[String]> {
        self.cell_names.as_deref()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        (0..self.n_cells).map(|i| self.row(i).iter().sum()).collect()
    }

    /// New matrix keeping `rows` in the given order; names follow.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        if rows.iter().any(|&r| r >= self.n_cells) {
            return Err(Error::DimensionMismatch("row index out of range".into()));
        }
        if rows.is_empty() {
            return Err(Error::DimensionMismatch("empty row selection".into()));
        }
        let mut counts = Vec::with_capacity(rows.len() * self.n_genes);
        for &r in rows {
            counts.extend_from_slice(self.row(r));
        }
        let mut out = Self::from_counts(rows.len(), self.n_genes, counts)?;
        out.gene_names = self.gene_names.clone();
        out.cell_names = self
            .cell_names
            .as_ref()
            .map(|names| rows.iter().map(|&r| names[r].clone()).collect());
        Ok(out)
    }

    /// New matrix keeping `cols` in the given order; names follow.
    pub fn select_columns(&self, cols: &[usize]) -> Result<Self> {
        if cols.iter().any(|&c| c >= self.n_genes) {
            return Err(Error::DimensionMismatch("column index out of range".into()));
        }
        if cols.is_empty() {
            return Err(Error::DimensionMismatch("empty column selection".into()));
        }
        let mut counts = Vec::with_capacity(self.n_cells * cols.len());
        for i in 0..self.n_cells {
            let row = self.row(i);
            counts.extend(cols.iter().map(|&c| row[c]));
        }
        let mut out = Self::from_counts(self.n_cells, cols.len(), counts)?;
        out.cell_names = self.cell_names.clone();
        out.gene_names = self
            .gene_names
            .as_ref()
            .map(|names| cols.iter().map(|&c| names[c].clone()).collect());
        Ok(out)
    }

    /// Copy with one gene column replaced by a reordering of itself.
    pub fn with_column_order(&self, gene: usize, order: &[usize]) -> Result<Self> {
        if order.len() != self.n_cells {
            return Err(Error::DimensionMismatch(format!(
                "column order has length {}, expected {}",
                order.len(),
                self.n_cells
            )));
        }
        let col = self.column(gene);
        let mut out = self.clone();
        for (i, &src) in order.iter().enumerate() {
            out.counts[i * self.n_genes + gene] = col[src];
        }
        Ok(out)
    }
}

/// Per-cell scale factors γ entering GLMs as offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct SizeFactors {
    gamma: Vec<f64>,
}

impl SizeFactors {
    pub fn from_values(gamma: Vec<f64>) -> Result<Self> {
        if gamma.is_empty() || gamma.iter().any(|g| !g.is_finite() || *g <= 0.0) {
            return Err(Error::InvalidConfig(
                "size factors must be finite and positive".into(),
            ));
        }
        Ok(Self { gamma })
    }

    pub fn unit(n: usize) -> Self {
        Self { gamma: vec![1.0; n] }
    }

    pub fn len(&self) -> usize {
        self.gamma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gamma.is_empty()
    }

    pub fn get(&self, cell: usize) -> f64 {
        self.gamma[cell]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.gamma
    }

    pub fn select(&self, rows: &[usize]) -> Result<Self> {
        if rows.iter().any(|&r| r >= self.gamma.len()) {
            return Err(Error::DimensionMismatch("row index out of range".into()));
        }
        Self::from_values(rows.iter().map(|&r| self.gamma[r]).collect())
    }
}

/// Row sums scaled to geometric mean 1.
pub fn estimate_size_factors(x: &CountMatrix) -> Result<SizeFactors> {
    let sums = x.row_sums();
    if let Some(index) = sums.iter().position(|&s| s == 0) {
        return Err(Error::DegenerateCell { index });
    }
    let log_mean =
        sums.iter().map(|&s| (s as f64).ln()).sum::<f64>() / sums.len() as f64;
    let geomean = log_mean.exp();
    SizeFactors::from_values(sums.iter().map(|&s| s as f64 / geomean).collect())
}

/// Dense real matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RealMatrix {
    n_rows: usize,
    n_cols: usize,
    values: Vec<f64>,
}

impl RealMatrix {
    pub fn from_values(n_rows: usize, n_cols: usize, values: Vec<f64>) -> Result<Self> {
        if n_rows == 0 || values.len() != n_rows * n_cols {
            return Err(Error::DimensionMismatch(format!(
                "{n_rows}x{n_cols} matrix with {} values",
                values.len()
            )));
        }
        Ok(Self { n_rows, n_cols, values })
    }

    /// Single-column matrix, the usual GLM design.
    pub fn column_vector(values: Vec<f64>) -> Self {
        let n = values.len();
        Self { n_rows: n, n_cols: 1, values }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.n_cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.n_cols..(r + 1) * self.n_cols]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.n_rows).map(|r| self.get(r, c)).collect()
    }

    pub fn column_means(&self) -> Vec<f64> {
        let mut means = vec![0.0; self.n_cols];
        for r in 0..self.n_rows {
            for (m, v) in means.iter_mut().zip(self.row(r)) {
                *m += v;
            }
        }
        for m in &mut means {
            *m /= self.n_rows as f64;
        }
        means
    }
}

/// Entry (i,j) = log(X_ij / γ_i + pseudocount), natural log.
pub fn log_normalize(
    x: &CountMatrix,
    gamma: &SizeFactors,
    pseudocount: f64,
) -> Result<RealMatrix> {
    if gamma.len() != x.n_cells() {
        return Err(Error::DimensionMismatch(format!(
            "{} size factors for {} cells",
            gamma.len(),
            x.n_cells()
        )));
    }
    if !(pseudocount > 0.0) || !pseudocount.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "pseudocount must be positive and finite, got {pseudocount}"
        )));
    }
    let mut values = Vec::with_capacity(x.n_cells() * x.n_genes());
    for i in 0..x.n_cells() {
        let g = gamma.get(i);
        values.extend(x.row(i).iter().map(|&c| (c as f64 / g + pseudocount).ln()));
    }
    RealMatrix::from_values(x.n_cells(), x.n_genes(), values)
}

pub const DEFAULT_PSEUDOCOUNT: f64 = 1.0;
