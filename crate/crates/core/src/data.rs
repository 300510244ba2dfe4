//! Pools of unlabeled items, CSV ingestion, splitting, and seeded randomness.
//!
//! A [`Pool`] is immutable once built. Every stochastic operation in the crate
//! takes an explicit [`RngSpec`] so that trials are reproducible and can run
//! concurrently without shared state.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const PROB_SUM_TOL: f64 = 1e-9;

/// One item of the pool.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    /// Covariates.
    pub x: Vec<f64>,
    /// Label, when known (in simulation it is hidden from the estimators).
    pub y: Option<f64>,
    /// Model prediction f(x).
    pub f: Option<f64>,
    /// Class probabilities reported by the model.
    pub probs: Option<Vec<f64>>,
    /// Predicted absolute error |f(x) - y|.
    pub err: Option<f64>,
}

impl Example {
    pub fn new(x: Vec<f64>) -> Self {
        Example {
            x,
            y: None,
            f: None,
            probs: None,
            err: None,
        }
    }

    pub fn with_label(mut self, y: f64) -> Self {
        self.y = Some(y);
        self
    }

    pub fn with_prediction(mut self, f: f64) -> Self {
        self.f = Some(f);
        self
    }

    pub fn with_probs(mut self, probs: Vec<f64>) -> Self {
        self.probs = Some(probs);
        self
    }

    pub fn with_err(mut self, err: f64) -> Self {
        self.err = Some(err);
        self
    }

    fn check(&self) -> std::result::Result<(), String> {
        if let Some(p) = &self.probs {
            if p.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err("probabilities must lie in [0, 1]".into());
            }
            let s: f64 = p.iter().sum();
            if (s - 1.0).abs() > PROB_SUM_TOL {
                return Err(format!("probabilities sum to {s}, expected 1"));
            }
        }
        if let Some(e) = self.err {
            if !(e >= 0.0) {
                return Err(format!("error estimate {e} must be nonnegative"));
            }
        }
        Ok(())
    }
}

/// An ordered collection of items sharing one covariate dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Pool {
    examples: Vec<Example>,
    dim: usize,
}

impl Pool {
    pub fn new(examples: Vec<Example>) -> Result<Self> {
        let first = examples
            .first()
            .ok_or_else(|| Error::Argument("a pool needs at least one item".into()))?;
        let dim = first.x.len();
        for (i, ex) in examples.iter().enumerate() {
            if ex.x.len() != dim {
                return Err(Error::Schema(format!(
                    "item {i} has {} covariates, expected {dim}",
                    ex.x.len()
                )));
            }
            ex.check()
                .map_err(|m| Error::Argument(format!("item {i}: {m}")))?;
        }
        Ok(Pool { examples, dim })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn get(&self, i: usize) -> Option<&Example> {
        self.examples.get(i)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Example> {
        self.examples.iter()
    }

    pub fn into_examples(self) -> Vec<Example> {
        self.examples
    }

    /// Labels revealed for the items selected by `xi`, hidden elsewhere.
    pub fn reveal(&self, xi: &[bool]) -> Vec<Option<f64>> {
        self.examples
            .iter()
            .zip(xi)
            .map(|(ex, &take)| if take { ex.y } else { None })
            .collect()
    }

    /// All labels; fails on the first missing one.
    pub fn labels(&self) -> Result<Vec<f64>> {
        self.examples
            .iter()
            .enumerate()
            .map(|(index, ex)| ex.y.ok_or(Error::MissingLabel { index }))
            .collect()
    }

    /// All predictions; fails on the first missing one.
    pub fn predictions(&self) -> Result<Vec<f64>> {
        self.examples
            .iter()
            .enumerate()
            .map(|(index, ex)| ex.f.ok_or(Error::MissingPrediction { index }))
            .collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Pool> {
        let examples = indices
            .iter()
            .map(|&i| {
                self.examples
                    .get(i)
                    .cloned()
                    .ok_or_else(|| Error::Argument(format!("index {i} out of range")))
            })
            .collect::<Result<Vec<_>>>()?;
        Pool::new(examples)
    }

    /// A uniformly random reordering of the pool.
    pub fn permuted(&self, rng: RngSpec) -> Pool {
        let mut examples = self.examples.clone();
        examples.shuffle(&mut rng.rng());
        Pool {
            examples,
            dim: self.dim,
        }
    }

    /// Writes the pool as CSV and returns the schema that reads it back.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<Schema> {
        let schema = Schema::covering(self);
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(schema.header())?;
        for ex in &self.examples {
            let mut row: Vec<String> = ex.x.iter().map(|v| v.to_string()).collect();
            if schema.label.is_some() {
                row.push(opt_cell(ex.y));
            }
            if schema.prediction.is_some() {
                row.push(opt_cell(ex.f));
            }
            for k in 0..schema.probs.len() {
                row.push(opt_cell(ex.probs.as_ref().map(|p| p[k])));
            }
            if schema.err.is_some() {
                row.push(opt_cell(ex.err));
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(schema)
    }
}

fn opt_cell(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

impl<'a> IntoIterator for &'a Pool {
    type Item = &'a Example;
    type IntoIter = std::slice::Iter<'a, Example>;

    fn into_iter(self) -> Self::IntoIter {
        self.examples.iter()
    }
}

/// Label budget: on average at most `n_b` of the `n` pool items get labeled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Budget {
    n_b: f64,
    n: usize,
}

impl Budget {
    pub fn new(n_b: f64, n: usize) -> Result<Self> {
        if n == 0 || !(n_b > 0.0) || n_b > n as f64 {
            return Err(Error::Argument(format!(
                "budget must satisfy 0 < n_b <= n, got n_b={n_b}, n={n}"
            )));
        }
        Ok(Budget { n_b, n })
    }

    pub fn n_b(&self) -> f64 {
        self.n_b
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// The uniform sampling probability n_b / n.
    pub fn rate(&self) -> f64 {
        self.n_b / self.n as f64
    }
}

/// A seed plus a stream id; identical specs produce identical draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngSpec {
    pub seed: u64,
    pub stream: u64,
}

impl RngSpec {
    pub fn new(seed: u64, stream: u64) -> Self {
        RngSpec { seed, stream }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }

    /// An independent sub-stream, e.g. one per trial.
    pub fn child(&self, index: u64) -> RngSpec {
        RngSpec {
            seed: splitmix64(self.seed ^ splitmix64(self.stream.wrapping_add(0x5851_f42d))),
            stream: index,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Column mapping for CSV ingestion. Columns are selected by header name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Schema {
    pub covariates: Vec<String>,
    pub label: Option<String>,
    pub prediction: Option<String>,
    pub probs: Vec<String>,
    pub err: Option<String>,
}

impl Schema {
    pub fn new<S: Into<String>>(covariates: impl IntoIterator<Item = S>) -> Self {
        Schema {
            covariates: covariates.into_iter().map(Into::into).collect(),
            ..Default::default()
        }
    }

    pub fn label(mut self, name: impl Into<String>) -> Self {
        self.label = Some(name.into());
        self
    }

    pub fn prediction(mut self, name: impl Into<String>) -> Self {
        self.prediction = Some(name.into());
        self
    }

    pub fn probs<S: Into<String>>(mut self, names: impl IntoIterator<Item = S>) -> Self {
        self.probs = names.into_iter().map(Into::into).collect();
        self
    }

    pub fn err(mut self, name: impl Into<String>) -> Self {
        self.err = Some(name.into());
        self
    }

    fn covering(pool: &Pool) -> Schema {
        let any = |f: &dyn Fn(&Example) -> bool| pool.examples.iter().any(f);
        let k = pool
            .examples
            .iter()
            .find_map(|e| e.probs.as_ref().map(Vec::len))
            .unwrap_or(0);
        Schema {
            covariates: (0..pool.dim).map(|j| format!("x{j}")).collect(),
            label: any(&|e| e.y.is_some()).then(|| "y".to_string()),
            prediction: any(&|e| e.f.is_some()).then(|| "f".to_string()),
            probs: (0..k).map(|c| format!("p{c}")).collect(),
            err: any(&|e| e.err.is_some()).then(|| "err".to_string()),
        }
    }

    fn header(&self) -> Vec<String> {
        let mut h = self.covariates.clone();
        h.extend(self.label.clone());
        h.extend(self.prediction.clone());
        h.extend(self.probs.iter().cloned());
        h.extend(self.err.clone());
        h
    }
}

struct ColumnIndex {
    covariates: Vec<usize>,
    label: Option<usize>,
    prediction: Option<usize>,
    probs: Vec<usize>,
    err: Option<usize>,
}

fn resolve(headers: &csv::StringRecord, schema: &Schema) -> Result<ColumnIndex> {
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Schema(format!("column '{name}' not found in header")))
    };
    let opt = |name: &Option<String>| name.as_deref().map(find).transpose();
    Ok(ColumnIndex {
        covariates: schema
            .covariates
            .iter()
            .map(|c| find(c))
            .collect::<Result<_>>()?,
        label: opt(&schema.label)?,
        prediction: opt(&schema.prediction)?,
        probs: schema.probs.iter().map(|c| find(c)).collect::<Result<_>>()?,
        err: opt(&schema.err)?,
    })
}

pub(crate) fn parse_cell(cell: &str, line: usize, column: &str) -> Result<Option<f64>> {
    let cell = cell.trim();
    if cell.is_empty() {
        return Ok(None);
    }
    match cell.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        _ => Err(Error::Parse {
            line,
            message: format!("column '{column}': '{cell}' is not a finite number"),
        }),
    }
}

fn record_line(record: &csv::StringRecord, fallback: usize) -> usize {
    record
        .position()
        .map(|p| p.line() as usize)
        .unwrap_or(fallback)
}

pub(crate) fn csv_reader<R: Read>(reader: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader)
}

pub(crate) fn map_csv_error(e: csv::Error) -> Error {
    match e.kind() {
        csv::ErrorKind::UnequalLengths { pos, .. } => Error::Schema(format!(
            "row on line {} has a different number of fields than the header",
            pos.as_ref().map(|p| p.line()).unwrap_or(0)
        )),
        _ => Error::Csv(e),
    }
}

/// Reads a pool from a CSV file with a header row.
pub fn load_pool(path: impl AsRef<Path>, schema: &Schema) -> Result<Pool> {
    load_pool_from_reader(File::open(path)?, schema)
}

pub fn load_pool_from_reader<R: Read>(reader: R, schema: &Schema) -> Result<Pool> {
    if schema.covariates.is_empty() && schema.label.is_none() && schema.prediction.is_none() {
        return Err(Error::Schema("schema names no columns".into()));
    }
    let mut rdr = csv_reader(reader);
    let headers = rdr.headers().map_err(map_csv_error)?.clone();
    let cols = resolve(&headers, schema)?;
    let mut examples = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record.map_err(map_csv_error)?;
        let line = record_line(&record, row + 2);
        let cell = |i: usize| record.get(i).unwrap_or("");
        let mut x = Vec::with_capacity(cols.covariates.len());
        for (&c, name) in cols.covariates.iter().zip(&schema.covariates) {
            let v = parse_cell(cell(c), line, name)?.ok_or_else(|| Error::Parse {
                line,
                message: format!("covariate '{name}' is empty"),
            })?;
            x.push(v);
        }
        let mut ex = Example::new(x);
        if let (Some(c), Some(name)) = (cols.label, &schema.label) {
            ex.y = parse_cell(cell(c), line, name)?;
        }
        if let (Some(c), Some(name)) = (cols.prediction, &schema.prediction) {
            ex.f = parse_cell(cell(c), line, name)?;
        }
        if !cols.probs.is_empty() {
            let vals = cols
                .probs
                .iter()
                .zip(&schema.probs)
                .map(|(&c, name)| parse_cell(cell(c), line, name))
                .collect::<Result<Vec<_>>>()?;
            if vals.iter().all(Option::is_some) {
                ex.probs = Some(vals.into_iter().flatten().collect());
            } else if vals.iter().any(Option::is_some) {
                return Err(Error::Parse {
                    line,
                    message: "probability columns are partially filled".into(),
                });
            }
        }
        if let (Some(c), Some(name)) = (cols.err, &schema.err) {
            ex.err = parse_cell(cell(c), line, name)?;
        }
        ex.check()
            .map_err(|message| Error::Parse { line, message })?;
        examples.push(ex);
    }
    if examples.is_empty() {
        return Err(Error::Parse {
            line: 1,
            message: "file has a header but no rows".into(),
        });
    }
    Pool::new(examples)
}

/// Model outputs to attach to a pool, one entry per item.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Predictions {
    pub f: Vec<f64>,
    pub probs: Option<Vec<Vec<f64>>>,
    pub err: Option<Vec<f64>>,
}

impl Predictions {
    pub fn from_values(f: Vec<f64>) -> Self {
        Predictions {
            f,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.f.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f.is_empty()
    }
}

/// Reads predictions from CSV; `schema.prediction` must be set, covariates are ignored.
pub fn load_predictions(path: impl AsRef<Path>, schema: &Schema) -> Result<Predictions> {
    let name = schema
        .prediction
        .clone()
        .ok_or_else(|| Error::Schema("prediction column not named".into()))?;
    let only = Schema {
        covariates: Vec::new(),
        label: None,
        ..schema.clone()
    };
    let pool = load_pool_from_reader(File::open(path)?, &only)?;
    let mut preds = Predictions::default();
    for (i, ex) in pool.iter().enumerate() {
        preds.f.push(ex.f.ok_or_else(|| Error::Parse {
            line: i + 2,
            message: format!("prediction column '{name}' is empty"),
        })?);
    }
    if !schema.probs.is_empty() {
        preds.probs = pool.iter().map(|e| e.probs.clone()).collect();
    }
    if schema.err.is_some() {
        preds.err = pool.iter().map(|e| e.err).collect();
    }
    Ok(preds)
}

/// Attaches model outputs to every item, overwriting previous values.
pub fn attach_predictions(pool: &Pool, preds: &Predictions) -> Result<Pool> {
    let n = pool.len();
    let check = |got: usize| {
        if got != n {
            Err(Error::LengthMismatch { expected: n, got })
        } else {
            Ok(())
        }
    };
    check(preds.f.len())?;
    if let Some(p) = &preds.probs {
        check(p.len())?;
    }
    if let Some(e) = &preds.err {
        check(e.len())?;
    }
    let examples = pool
        .iter()
        .enumerate()
        .map(|(i, ex)| {
            let mut ex = ex.clone();
            ex.f = Some(preds.f[i]);
            if let Some(p) = &preds.probs {
                ex.probs = Some(p[i].clone());
            }
            if let Some(e) = &preds.err {
                ex.err = Some(e[i]);
            }
            ex
        })
        .collect();
    Pool::new(examples)
}

/// Random partition into two pools; the first has `round(fraction * n)` items,
/// kept within `[1, n - 1]` so both parts are nonempty.
pub fn split_pool(pool: &Pool, fraction: f64, rng: RngSpec) -> Result<(Pool, Pool)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Argument(format!(
            "split fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let n = pool.len();
    if n < 2 {
        return Err(Error::InsufficientData(
            "splitting needs at least two items".into(),
        ));
    }
    let first = ((fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng.rng());
    let (a, b) = idx.split_at(first);
    Ok((pool.subset(a)?, pool.subset(b)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_pool(n: usize) -> Pool {
        Pool::new(
            (0..n)
                .map(|i| Example::new(vec![i as f64]).with_label(i as f64 * 2.0))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn loads_three_rows() {
        let csv = "x1,x2,y\n1,2,3\n4,5,6\n7,8,\n";
        let schema = Schema::new(["x1", "x2"]).label("y");
        let pool = load_pool_from_reader(csv.as_bytes(), &schema).unwrap();
        assert_eq!(pool.len(), 3);
        assert_eq!(pool.dim(), 2);
        assert_eq!(pool.get(1).unwrap().x, vec![4.0, 5.0]);
        assert_eq!(pool.get(0).unwrap().y, Some(3.0));
        assert_eq!(pool.get(2).unwrap().y, None);
        let again = load_pool_from_reader(csv.as_bytes(), &schema).unwrap();
        assert_eq!(pool, again);
    }

    #[test]
    fn non_numeric_cell_names_the_line() {
        let csv = "x1,y\n1,2\nabc,3\n";
        let err = load_pool_from_reader(csv.as_bytes(), &Schema::new(["x1"]).label("y"))
            .unwrap_err();
        match err {
            Error::Parse { line, message } => {
                assert_eq!(line, 3);
                assert!(message.contains("x1"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unequal_row_is_schema_error() {
        let csv = "x1,y\n1,2\n3\n";
        let err =
            load_pool_from_reader(csv.as_bytes(), &Schema::new(["x1"]).label("y")).unwrap_err();
        assert!(matches!(err, Error::Schema(_)), "{err:?}");
    }

    #[test]
    fn unknown_column_is_schema_error() {
        let err = load_pool_from_reader("a,b\n1,2\n".as_bytes(), &Schema::new(["c"])).unwrap_err();
        assert!(matches!(err, Error::Schema(_)));
    }

    #[test]
    fn bad_probabilities_rejected() {
        let csv = "x,p0,p1\n1,0.5,0.6\n";
        let err = load_pool_from_reader(csv.as_bytes(), &Schema::new(["x"]).probs(["p0", "p1"]))
            .unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err:?}");
    }

    #[test]
    fn attach_and_overwrite() {
        let pool = small_pool(2);
        let p1 = attach_predictions(&pool, &Predictions::from_values(vec![1.0, 3.0])).unwrap();
        assert_eq!(p1.predictions().unwrap(), vec![1.0, 3.0]);
        let p2 = attach_predictions(&p1, &Predictions::from_values(vec![5.0, 6.0])).unwrap();
        assert_eq!(p2.predictions().unwrap(), vec![5.0, 6.0]);
        assert_eq!(p2.labels().unwrap(), pool.labels().unwrap());
    }

    #[test]
    fn attach_length_mismatch_reports_counts() {
        let err = attach_predictions(&small_pool(2), &Predictions::from_values(vec![1.0; 3]))
            .unwrap_err();
        assert!(matches!(
            err,
            Error::LengthMismatch {
                expected: 2,
                got: 3
            }
        ));
    }

    #[test]
    fn split_sizes_and_determinism() {
        let pool = small_pool(10);
        let rng = RngSpec::new(7, 0);
        let (a, b) = split_pool(&pool, 0.5, rng).unwrap();
        assert_eq!((a.len(), b.len()), (5, 5));
        let (a2, b2) = split_pool(&pool, 0.5, rng).unwrap();
        assert_eq!((a, b), (a2, b2));
    }

    #[test]
    fn split_rejects_bad_fraction() {
        let pool = small_pool(4);
        for f in [0.0, 1.0, -0.2, 1.5] {
            assert!(matches!(
                split_pool(&pool, f, RngSpec::new(1, 0)),
                Err(Error::Argument(_))
            ));
        }
    }

    #[test]
    fn budget_bounds() {
        assert!(Budget::new(0.0, 10).is_err());
        assert!(Budget::new(11.0, 10).is_err());
        let b = Budget::new(2.5, 10).unwrap();
        assert_eq!(b.rate(), 0.25);
    }

    #[test]
    fn rng_streams_differ_and_repeat() {
        use rand::Rng;
        let a: u64 = RngSpec::new(1, 0).rng().random();
        let b: u64 = RngSpec::new(1, 1).rng().random();
        let c: u64 = RngSpec::new(1, 0).rng().random();
        assert_ne!(a, b);
        assert_eq!(a, c);
        assert_ne!(RngSpec::new(1, 0).child(3), RngSpec::new(1, 1).child(3));
    }
}
