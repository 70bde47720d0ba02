//! Datasets, candidate-model specifications, cross-validation block
//! partitions and weight vectors.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Response vector plus covariate matrix (one column per covariate).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: Vec<f64>,
    x: DMatrix<f64>,
    response_name: String,
    names: Vec<String>,
}

impl Dataset {
    pub fn new(y: Vec<f64>, x: DMatrix<f64>) -> Result<Self> {
        let names = (0..x.ncols()).map(|j| format!("x{}", j + 1)).collect();
        Self::with_names(y, x, "y".to_string(), names)
    }

    pub fn with_names(
        y: Vec<f64>,
        x: DMatrix<f64>,
        response_name: String,
        names: Vec<String>,
    ) -> Result<Self> {
        if y.len() < 2 {
            return Err(Error::invalid(format!(
                "a dataset needs at least 2 observations, got {}",
                y.len()
            )));
        }
        if x.ncols() == 0 {
            return Err(Error::invalid("a dataset needs at least one covariate"));
        }
        if x.nrows() != y.len() {
            return Err(Error::invalid(format!(
                "response has {} entries but the covariate matrix has {} rows",
                y.len(),
                x.nrows()
            )));
        }
        if names.len() != x.ncols() {
            return Err(Error::invalid(format!(
                "{} covariate names for {} covariates",
                names.len(),
                x.ncols()
            )));
        }
        if y.iter().chain(x.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("dataset contains non-finite values"));
        }
        Ok(Dataset {
            y,
            x,
            response_name,
            names,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn column(&self, j: usize) -> &[f64] {
        let n = self.n();
        &self.x.as_slice()[j * n..(j + 1) * n]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn response_name(&self) -> &str {
        &self.response_name
    }

    /// Covariate columns of a candidate model, in the candidate's order.
    pub fn design(&self, spec: &CandidateSpec) -> DMatrix<f64> {
        self.x.select_columns(spec.indices())
    }

    /// Rows `rows` of the dataset, in the given order.
    pub fn subset_rows(&self, rows: &[usize]) -> Result<Dataset> {
        let y = rows.iter().map(|&i| self.y[i]).collect();
        let x = self.x.select_rows(rows);
        Dataset::with_names(y, x, self.response_name.clone(), self.names.clone())
    }

    /// Reads a CSV whose first column is the response and whose remaining
    /// columns are covariates. The first row holds the column names.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Dataset> {
        let table = CsvTable::from_reader(reader)?;
        table.into_dataset()
    }

    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Dataset> {
        let file = std::fs::File::open(path)?;
        Self::from_csv_reader(file)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec![self.response_name.clone()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header)?;
        for i in 0..self.n() {
            let mut row = vec![fmt_f64(self.y[i])];
            row.extend((0..self.p()).map(|j| fmt_f64(self.x[(i, j)])));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Shortest representation that parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Raw numeric CSV table: a header row plus rows of reals.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl CsvTable {
    pub fn from_reader<R: Read>(reader: R) -> Result<CsvTable> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        if headers.is_empty() || headers.iter().all(String::is_empty) {
            return Err(Error::Data {
                line: 1,
                column: 1,
                message: "missing header row".into(),
            });
        }
        let mut rows = Vec::new();
        for record in rdr.records() {
            let record = record?;
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            if record.len() != headers.len() {
                return Err(Error::Data {
                    line,
                    column: record.len().min(headers.len()) + 1,
                    message: format!("expected {} fields, found {}", headers.len(), record.len()),
                });
            }
            let mut row = Vec::with_capacity(record.len());
            for (col, field) in record.iter().enumerate() {
                let value: f64 = field.parse().map_err(|_| Error::Data {
                    line,
                    column: col + 1,
                    message: format!("cannot parse {field:?} as a real number"),
                })?;
                if !value.is_finite() {
                    return Err(Error::Data {
                        line,
                        column: col + 1,
                        message: format!("non-finite value {field:?}"),
                    });
                }
                row.push(value);
            }
            rows.push(row);
        }
        Ok(CsvTable { headers, rows })
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<CsvTable> {
        Self::from_reader(std::fs::File::open(path)?)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[j]).collect()
    }

    /// Interprets the first column as the response.
    pub fn into_dataset(self) -> Result<Dataset> {
        if self.headers.len() < 2 {
            return Err(Error::Data {
                line: 1,
                column: self.headers.len() + 1,
                message: "need a response column and at least one covariate column".into(),
            });
        }
        let n = self.rows.len();
        let p = self.headers.len() - 1;
        let y = self.column(0);
        let x = DMatrix::from_fn(n, p, |i, j| self.rows[i][j + 1]);
        let mut headers = self.headers;
        let response = headers.remove(0);
        Dataset::with_names(y, x, response, headers)
    }
}

/// Ordered list of distinct covariate indices. The first entry is the
/// anchor whose coefficient is normalized to one.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CandidateSpec {
    indices: Vec<usize>,
}

impl CandidateSpec {
    pub fn new(indices: Vec<usize>, p: usize) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::invalid("a candidate model needs at least one covariate"));
        }
        if indices.len() > p {
            return Err(Error::invalid(format!(
                "candidate has {} covariates but only {p} exist",
                indices.len()
            )));
        }
        let mut seen = HashSet::with_capacity(indices.len());
        for &i in &indices {
            if i >= p {
                return Err(Error::invalid(format!("covariate index {i} out of range 0..{p}")));
            }
            if !seen.insert(i) {
                return Err(Error::invalid(format!("covariate index {i} repeated")));
            }
        }
        Ok(CandidateSpec { indices })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn anchor(&self) -> usize {
        self.indices[0]
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, index: usize) -> bool {
        self.indices.contains(&index)
    }

    /// Space-separated index list, used in CSV exports.
    pub fn label(&self) -> String {
        self.indices
            .iter()
            .map(usize::to_string)
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Every candidate formed by `always_include` plus a nonempty subset of
/// `uncertain`. Subsets are enumerated by binary counting, bit `b` of the
/// counter selecting `uncertain[b]`.
pub fn enumerate_candidates(
    p: usize,
    always_include: &[usize],
    always_exclude: &[usize],
    uncertain: &[usize],
) -> Result<Vec<CandidateSpec>> {
    if uncertain.is_empty() {
        return Err(Error::invalid("the uncertain covariate set is empty"));
    }
    if uncertain.len() > 24 {
        return Err(Error::invalid(format!(
            "{} uncertain covariates would give too many candidates; screen first",
            uncertain.len()
        )));
    }
    let mut seen = HashSet::new();
    for &i in always_include.iter().chain(always_exclude).chain(uncertain) {
        if i >= p {
            return Err(Error::invalid(format!("covariate index {i} out of range 0..{p}")));
        }
        if !seen.insert(i) {
            return Err(Error::invalid(format!(
                "covariate index {i} appears in more than one set"
            )));
        }
    }
    let count = (1usize << uncertain.len()) - 1;
    let mut out = Vec::with_capacity(count);
    for mask in 1..=count {
        let mut indices = always_include.to_vec();
        indices.extend(
            uncertain
                .iter()
                .enumerate()
                .filter(|(b, _)| mask >> b & 1 == 1)
                .map(|(_, &i)| i),
        );
        out.push(CandidateSpec::new(indices, p)?);
    }
    Ok(out)
}

/// Consecutive blocks of `block_size` observations; the last block also
/// takes the `n mod block_size` leftover observations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockPartition {
    n: usize,
    block_size: usize,
    n_blocks: usize,
}

impl BlockPartition {
    pub fn new(n: usize, block_size: usize) -> Result<Self> {
        if block_size == 0 {
            return Err(Error::invalid("block size must be positive"));
        }
        if block_size > n {
            return Err(Error::invalid(format!(
                "block size {block_size} exceeds the sample size {n}"
            )));
        }
        Ok(BlockPartition {
            n,
            block_size,
            n_blocks: n / block_size,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn n_blocks(&self) -> usize {
        self.n_blocks
    }

    /// A single block leaves nothing to fit on when it is deleted.
    pub fn is_degenerate(&self) -> bool {
        self.n_blocks < 2
    }

    pub fn block_of(&self, i: usize) -> usize {
        (i / self.block_size).min(self.n_blocks - 1)
    }

    pub fn block(&self, j: usize) -> Range<usize> {
        let start = j * self.block_size;
        let end = if j + 1 == self.n_blocks {
            self.n
        } else {
            start + self.block_size
        };
        start..end
    }

    pub fn blocks(&self) -> impl Iterator<Item = Range<usize>> + '_ {
        (0..self.n_blocks).map(|j| self.block(j))
    }

    /// Observation indices outside block `j`.
    pub fn retained(&self, j: usize) -> Vec<usize> {
        let b = self.block(j);
        (0..b.start).chain(b.end..self.n).collect()
    }
}

/// Alias mirroring the partition constructor's role in the pipeline.
pub fn make_partition(n: usize, target_block_size: usize) -> Result<BlockPartition> {
    BlockPartition::new(n, target_block_size)
}

const WEIGHT_SUM_TOL: f64 = 1e-10;

/// Nonnegative weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::invalid("empty weight vector"));
        }
        if let Some(bad) = w.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("weight {bad} outside [0, 1]")));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::invalid(format!("weights sum to {sum}, not 1")));
        }
        Ok(WeightVector(w))
    }

    /// Clips tiny negatives from a numerical solver and rescales onto the
    /// simplex before validating.
    pub(crate) fn from_solver(mut w: Vec<f64>) -> Result<Self> {
        for v in &mut w {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        let sum: f64 = w.iter().sum();
        if sum <= 0.0 || !sum.is_finite() {
            return Err(Error::Conditioning("solver returned a zero weight vector".into()));
        }
        for v in &mut w {
            *v = (*v / sum).min(1.0);
        }
        Self::new(w)
    }

    pub fn unit(len: usize, index: usize) -> Result<Self> {
        if index >= len {
            return Err(Error::invalid(format!("unit weight index {index} out of range 0..{len}")));
        }
        let mut w = vec![0.0; len];
        w[index] = 1.0;
        Ok(WeightVector(w))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn situation_one_enumeration_has_31_specs() {
        let specs = enumerate_candidates(7, &[0], &[6], &[1, 2, 3, 4, 5]).unwrap();
        assert_eq!(specs.len(), 31);
        assert!(specs.iter().all(|s| s.anchor() == 0 && !s.contains(6)));
        assert_eq!(specs[0].indices(), &[0, 1]);
        assert_eq!(specs[2].indices(), &[0, 1, 2]);
        assert_eq!(specs[30].indices(), &[0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn single_uncertain_covariate() {
        let specs = enumerate_candidates(2, &[0], &[], &[1]).unwrap();
        assert_eq!(specs, vec![CandidateSpec::new(vec![0, 1], 2).unwrap()]);
    }

    #[test]
    fn enumeration_count_matches_exhaustive_subsets() {
        for k in 1..=12usize {
            let uncertain: Vec<usize> = (0..k).collect();
            let specs = enumerate_candidates(k, &[], &[], &uncertain).unwrap();
            // Independent count: distinct nonempty index sets.
            let distinct: HashSet<Vec<usize>> = specs
                .iter()
                .map(|s| {
                    let mut v = s.indices().to_vec();
                    v.sort();
                    v
                })
                .collect();
            assert_eq!(distinct.len(), (1 << k) - 1);
            assert_eq!(specs.len(), (1 << k) - 1);
        }
        assert_eq!(enumerate_candidates(4, &[], &[], &[0, 1, 2, 3]).unwrap().len(), 15);
    }

    #[test]
    fn overlapping_sets_rejected() {
        assert!(enumerate_candidates(4, &[0], &[1], &[1, 2]).is_err());
        assert!(enumerate_candidates(4, &[0], &[], &[]).is_err());
        assert!(enumerate_candidates(4, &[0], &[], &[7]).is_err());
    }

    #[test]
    fn candidate_spec_validation() {
        assert!(CandidateSpec::new(vec![], 3).is_err());
        assert!(CandidateSpec::new(vec![0, 0], 3).is_err());
        assert!(CandidateSpec::new(vec![3], 3).is_err());
        assert_eq!(CandidateSpec::new(vec![2, 0], 3).unwrap().anchor(), 2);
    }

    #[test]
    fn partitions() {
        let p = make_partition(100, 50).unwrap();
        assert_eq!(p.n_blocks(), 2);
        assert_eq!(p.block(0), 0..50);
        assert_eq!(p.block(1), 50..100);

        let single = make_partition(10, 10).unwrap();
        assert_eq!(single.n_blocks(), 1);
        assert!(single.is_degenerate());

        let uneven = make_partition(103, 50).unwrap();
        let sizes: Vec<usize> = uneven.blocks().map(|b| b.len()).collect();
        assert_eq!(sizes, vec![50, 53]);
        assert_eq!(sizes.iter().sum::<usize>(), 103);
        assert_eq!(uneven.block_of(102), 1);
        assert_eq!(uneven.block_of(49), 0);

        assert!(make_partition(10, 11).is_err());
        assert!(make_partition(10, 0).is_err());
    }

    #[test]
    fn weight_vector_validation() {
        assert!(WeightVector::new(vec![0.5, 0.5]).is_ok());
        assert!(WeightVector::new(vec![1.2, -0.2]).is_err());
        assert!(WeightVector::new(vec![0.5, 0.4]).is_err());
        assert!(WeightVector::new(vec![]).is_err());
        let w = WeightVector::from_solver(vec![0.6, 0.4 + 1e-13, -1e-15]).unwrap();
        assert!(w.as_slice().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn csv_round_trip_and_diagnostics() {
        let text = "y,a,b\n1.0,2.0,3.0\n4.0,5.0,6.5\n";
        let d = Dataset::from_csv_reader(text.as_bytes()).unwrap();
        assert_eq!(d.n(), 2);
        assert_eq!(d.p(), 2);
        assert_eq!(d.names(), &["a".to_string(), "b".to_string()]);
        assert_eq!(d.column(1), &[3.0, 6.5]);
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        assert_eq!(Dataset::from_csv_reader(buf.as_slice()).unwrap(), d);

        let bad = "y,a\n1.0,2.0\n3.0,oops\n";
        match Dataset::from_csv_reader(bad.as_bytes()) {
            Err(Error::Data { line, column, .. }) => {
                assert_eq!(line, 3);
                assert_eq!(column, 2);
            }
            other => panic!("expected data error, got {other:?}"),
        }
        assert!(Dataset::from_csv_reader("y,a\n1.0,2.0\n".as_bytes()).is_err());
    }

    proptest::proptest! {
        #[test]
        fn partition_covers_every_index_once(n in 1usize..400, m in 1usize..120) {
            proptest::prop_assume!(m <= n);
            let p = BlockPartition::new(n, m).unwrap();
            let mut hits = vec![0u32; n];
            for (j, b) in p.blocks().enumerate() {
                for i in b {
                    hits[i] += 1;
                    proptest::prop_assert_eq!(p.block_of(i), j);
                }
            }
            proptest::prop_assert!(hits.iter().all(|&h| h == 1));
            for j in 0..p.n_blocks().saturating_sub(1) {
                proptest::prop_assert_eq!(p.block(j).len(), m);
            }
        }
    }
}
