//! Problem ingestion and generation: LIBSVM reader/writer, seeded synthetic
//! regression instances, polynomial feature expansion, the Gaussian-blur
//! operator and PSNR for image recovery runs, spectral-norm estimation, and
//! the plain-text matrix/image formats used by the CLI.

use crate::linalg::{CsrMatrix, Matrix};
use crate::rng::SplitMix64;
use nalgebra::{DMatrix, DVector};
use std::fmt::Write as _;
use std::io::{self, BufReader, Read};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Default)]
pub struct DatasetMeta {
    pub source: String,
    pub seed: Option<u64>,
    /// Planted ground truth for generated instances.
    pub truth: Option<DVector<f64>>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub a: Matrix,
    pub b: DVector<f64>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn nrows(&self) -> usize {
        self.a.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.a.ncols()
    }
}

/// Parses LIBSVM text: `label idx:val idx:val ...` with 1-based, strictly
/// increasing indices. `n_override` widens (never narrows) the column count.
pub fn parse_libsvm(text: &str, n_override: Option<usize>) -> Result<Dataset, DataError> {
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut labels: Vec<f64> = Vec::new();
    let mut max_index = 0usize;

    for (lineno, raw) in text.lines().enumerate() {
        let line_id = lineno + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let label_tok = parts.next().unwrap();
        let label: f64 = label_tok.parse().map_err(|_| DataError::Parse {
            line: line_id,
            message: format!("bad label `{label_tok}`"),
        })?;
        let mut row: Vec<(usize, f64)> = Vec::new();
        let mut last = 0usize;
        for tok in parts {
            let (idx_s, val_s) = tok.split_once(':').ok_or_else(|| DataError::Parse {
                line: line_id,
                message: format!("expected idx:val, got `{tok}`"),
            })?;
            let idx: usize = idx_s.parse().map_err(|_| DataError::Parse {
                line: line_id,
                message: format!("bad index `{idx_s}`"),
            })?;
            let val: f64 = val_s.parse().map_err(|_| DataError::Parse {
                line: line_id,
                message: format!("bad value `{val_s}`"),
            })?;
            if idx == 0 {
                return Err(DataError::Parse { line: line_id, message: "indices are 1-based".into() });
            }
            if idx == last {
                return Err(DataError::Parse {
                    line: line_id,
                    message: format!("duplicate index {idx}"),
                });
            }
            if idx < last {
                return Err(DataError::Parse {
                    line: line_id,
                    message: format!("indices must be strictly increasing ({last} then {idx})"),
                });
            }
            if !val.is_finite() {
                return Err(DataError::Parse {
                    line: line_id,
                    message: format!("non-finite value at index {idx}"),
                });
            }
            last = idx;
            max_index = max_index.max(idx);
            row.push((idx - 1, val));
        }
        labels.push(label);
        rows.push(row);
    }

    let ncols = match n_override {
        Some(n) if n < max_index => {
            return Err(DataError::Invalid(format!(
                "n override {n} below max feature index {max_index}"
            )))
        }
        Some(n) => n,
        None => max_index,
    };
    let a = CsrMatrix::from_rows(ncols, &rows)
        .map_err(|e| DataError::Invalid(e.to_string()))?;
    Ok(Dataset {
        a: Matrix::Sparse(a),
        b: DVector::from_vec(labels),
        meta: DatasetMeta::default(),
    })
}

pub fn read_libsvm(path: impl AsRef<Path>) -> Result<Dataset, DataError> {
    let path = path.as_ref();
    let mut text = String::new();
    BufReader::new(std::fs::File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?)
    .read_to_string(&mut text)
    .map_err(|source| DataError::Io { path: path.display().to_string(), source })?;
    let mut ds = parse_libsvm(&text, None)?;
    ds.meta.source = path.display().to_string();
    Ok(ds)
}

/// Writes LIBSVM text. Sparse inputs emit their stored entries verbatim;
/// dense inputs emit strictly nonzero entries.
pub fn write_libsvm(a: &Matrix, b: &DVector<f64>) -> String {
    let mut out = String::new();
    for r in 0..a.nrows() {
        let _ = write!(out, "{}", b[r]);
        match a {
            Matrix::Sparse(m) => {
                for (c, v) in m.row(r) {
                    let _ = write!(out, " {}:{}", c + 1, v);
                }
            }
            Matrix::Dense(m) => {
                for c in 0..m.ncols() {
                    if m[(r, c)] != 0.0 {
                        let _ = write!(out, " {}:{}", c + 1, m[(r, c)]);
                    }
                }
            }
        }
        out.push('\n');
    }
    out
}

/// Appends degree-2 monomial columns (pairwise products including squares)
/// in lexicographic order: for input columns (a, b) the output is
/// (a, b, a^2, ab, b^2).
pub fn poly_expand(a: &Matrix, degree: usize) -> Result<Matrix, DataError> {
    if degree != 2 {
        return Err(DataError::Invalid(format!("poly_expand supports degree 2, got {degree}")));
    }
    let dense = a.to_dense();
    let (m, n) = (dense.nrows(), dense.ncols());
    let extra = n * (n + 1) / 2;
    let mut out = DMatrix::zeros(m, n + extra);
    out.view_mut((0, 0), (m, n)).copy_from(&dense);
    let mut col = n;
    for i in 0..n {
        for j in i..n {
            for r in 0..m {
                out[(r, col)] = dense[(r, i)] * dense[(r, j)];
            }
            col += 1;
        }
    }
    Ok(Matrix::Dense(out))
}

/// Gaussian design with a planted k-sparse coefficient vector of magnitude
/// at least one; `b = A xbar + sigma * noise`.
pub fn gen_sparse_regression(m: usize, n: usize, k: usize, sigma: f64, seed: u64) -> Dataset {
    assert!(k <= n, "cannot plant {k} nonzeros in dimension {n}");
    let mut rng = SplitMix64::new(seed);
    let a = DMatrix::from_fn(m, n, |_, _| 0.0); // filled below in row order
    let mut a = a;
    for r in 0..m {
        for c in 0..n {
            a[(r, c)] = rng.normal();
        }
    }
    let mut truth = DVector::zeros(n);
    let mut placed = 0usize;
    while placed < k {
        let idx = rng.below(n);
        if truth[idx] == 0.0 {
            let sign = if rng.uniform() < 0.5 { -1.0 } else { 1.0 };
            truth[idx] = sign * (1.0 + rng.uniform());
            placed += 1;
        }
    }
    let mut b = &a * &truth;
    for i in 0..m {
        b[i] += sigma * rng.normal();
    }
    Dataset {
        a: Matrix::Dense(a),
        b,
        meta: DatasetMeta { source: format!("gen_sparse_regression(seed={seed})"), seed: Some(seed), truth: Some(truth) },
    }
}

/// Separable 2-D Gaussian blur with half-sample symmetric (reflective)
/// boundary. The reflective edge keeps the dense operator symmetric and
/// constant-preserving.
#[derive(Debug, Clone)]
pub struct GaussianBlur {
    side: usize,
    kernel: Vec<f64>,
}

pub fn gaussian_blur_operator(side: usize, sigma: f64, ksize: usize) -> GaussianBlur {
    assert!(ksize % 2 == 1, "filter size must be odd");
    assert!(side >= ksize.div_ceil(2), "image side too small for the filter");
    let radius = (ksize / 2) as i64;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|t| (-(t * t) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    for v in &mut kernel {
        *v /= total;
    }
    GaussianBlur { side, kernel }
}

impl GaussianBlur {
    pub fn side(&self) -> usize {
        self.side
    }

    pub fn dim(&self) -> usize {
        self.side * self.side
    }

    pub fn kernel(&self) -> &[f64] {
        &self.kernel
    }

    fn reflect(mut p: i64, n: i64) -> usize {
        loop {
            if p < 0 {
                p = -p - 1;
            } else if p >= n {
                p = 2 * n - 1 - p;
            } else {
                return p as usize;
            }
        }
    }

    fn convolve_line(&self, src: &[f64], dst: &mut [f64]) {
        let n = src.len() as i64;
        let radius = (self.kernel.len() / 2) as i64;
        for i in 0..n {
            let mut acc = 0.0;
            for (t, &kv) in self.kernel.iter().enumerate() {
                let off = t as i64 - radius;
                acc += kv * src[Self::reflect(i + off, n)];
            }
            dst[i as usize] = acc;
        }
    }

    /// Applies the blur to a row-major vectorized `side x side` image.
    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        let s = self.side;
        assert_eq!(x.len(), s * s);
        let mut tmp = vec![0.0; s * s];
        let mut line = vec![0.0; s];
        let mut out_line = vec![0.0; s];
        // rows
        for r in 0..s {
            line.copy_from_slice(&x.as_slice()[r * s..(r + 1) * s]);
            self.convolve_line(&line, &mut out_line);
            tmp[r * s..(r + 1) * s].copy_from_slice(&out_line);
        }
        // columns
        let mut out = DVector::zeros(s * s);
        for c in 0..s {
            for r in 0..s {
                line[r] = tmp[r * s + c];
            }
            self.convolve_line(&line, &mut out_line);
            for r in 0..s {
                out[r * s + c] = out_line[r];
            }
        }
        out
    }

    /// Dense materialization, intended for small sides (<= 64).
    pub fn to_dense(&self) -> DMatrix<f64> {
        assert!(self.side <= 64, "dense blur materialization is capped at side 64");
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        let mut e = DVector::zeros(n);
        for j in 0..n {
            e[j] = 1.0;
            let col = self.apply(&e);
            m.set_column(j, &col);
            e[j] = 0.0;
        }
        m
    }
}

/// A deblurring instance: truth, blur, noisy observation.
#[derive(Debug, Clone)]
pub struct ImageProblem {
    pub side: usize,
    pub truth: DVector<f64>,
    pub blur: GaussianBlur,
    pub observed: DVector<f64>,
    pub noise: f64,
}

/// Piecewise-constant test image: a few axis-aligned blocks on a zero
/// background, values in [0, 1].
pub fn synthetic_blocks_image(side: usize, seed: u64) -> DVector<f64> {
    let mut rng = SplitMix64::new(seed);
    let mut img = vec![0.0f64; side * side];
    let blocks = 4 + rng.below(3);
    for _ in 0..blocks {
        let h = 2 + rng.below(side / 2);
        let w = 2 + rng.below(side / 2);
        let r0 = rng.below(side - h + 1);
        let c0 = rng.below(side - w + 1);
        let level = 0.25 + 0.75 * rng.uniform();
        for r in r0..r0 + h {
            for c in c0..c0 + w {
                img[r * side + c] = level;
            }
        }
    }
    DVector::from_vec(img)
}

pub fn gen_deblur_problem(side: usize, sigma: f64, ksize: usize, noise: f64, seed: u64) -> ImageProblem {
    let truth = synthetic_blocks_image(side, seed);
    let blur = gaussian_blur_operator(side, sigma, ksize);
    let mut observed = blur.apply(&truth);
    let mut rng = SplitMix64::new(seed ^ 0xB1);
    for i in 0..observed.len() {
        observed[i] += noise * rng.normal();
    }
    ImageProblem { side, truth, blur, observed, noise }
}

/// Peak signal-to-noise ratio in the form 10*log10(n / ||xbar - xstar||),
/// with the unsquared norm in the denominator. Exact recovery is reported
/// as the 999 dB sentinel.
pub fn psnr(xbar: &DVector<f64>, xstar: &DVector<f64>) -> f64 {
    assert_eq!(xbar.len(), xstar.len());
    let dist = (xbar - xstar).norm();
    if dist == 0.0 {
        return 999.0;
    }
    10.0 * (xbar.len() as f64 / dist).log10()
}

/// Power-method estimate of the largest singular value, inflated by 1% so
/// downstream Lipschitz constants are certified upper bounds.
pub fn estimate_spectral_norm(a: &Matrix, iters: usize, seed: u64) -> f64 {
    let n = a.ncols();
    let mut rng = SplitMix64::new(seed);
    let mut v = DVector::from_fn(n, |_, _| rng.normal());
    let norm = v.norm();
    if norm == 0.0 || n == 0 {
        return 0.0;
    }
    v /= norm;
    let mut lambda = 0.0;
    for _ in 0..iters {
        let w = a.t_matvec(&a.matvec(&v));
        let wn = w.norm();
        if wn == 0.0 {
            return 0.0;
        }
        lambda = v.dot(&w);
        v = w / wn;
    }
    lambda.max(0.0).sqrt() * 1.01
}

/// Nonzero counts of `x` and of its first differences, using the strict
/// threshold |.| > 1e-8.
pub fn sparsity_metrics(x: &DVector<f64>) -> (usize, usize) {
    let nnz = x.iter().filter(|v| v.abs() > 1e-8).count();
    let bx_nnz = (1..x.len()).filter(|&i| (x[i - 1] - x[i]).abs() > 1e-8).count();
    (nnz, bx_nnz)
}

/// Writes a plain-text PGM (P2) image; entries are clamped to [0, 1] and
/// quantized to 0..255. For bit-exact exchange use the CSV matrix format.
pub fn write_pgm(side: usize, data: &DVector<f64>) -> String {
    assert_eq!(data.len(), side * side);
    let mut out = format!("P2\n{side} {side}\n255\n");
    for r in 0..side {
        let row: Vec<String> = (0..side)
            .map(|c| {
                let v = (data[r * side + c].clamp(0.0, 1.0) * 255.0).round() as u32;
                v.to_string()
            })
            .collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
    out
}

/// Row-major CSV with a `rows,cols` header line.
pub fn write_csv_matrix(m: &DMatrix<f64>) -> String {
    let mut out = format!("{},{}\n", m.nrows(), m.ncols());
    for r in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|c| format!("{}", m[(r, c)])).collect();
        let _ = writeln!(out, "{}", row.join(","));
    }
    out
}

pub fn read_csv_matrix(text: &str) -> Result<DMatrix<f64>, DataError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(DataError::Parse { line: 1, message: "empty file".into() })?;
    let (r_s, c_s) = header.trim().split_once(',').ok_or(DataError::Parse {
        line: 1,
        message: "expected rows,cols header".into(),
    })?;
    let rows: usize = r_s.trim().parse().map_err(|_| DataError::Parse { line: 1, message: "bad row count".into() })?;
    let cols: usize = c_s.trim().parse().map_err(|_| DataError::Parse { line: 1, message: "bad col count".into() })?;
    let mut m = DMatrix::zeros(rows, cols);
    let mut r = 0usize;
    for (lineno, raw) in lines {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if r >= rows {
            return Err(DataError::Parse { line: lineno + 1, message: "more rows than declared".into() });
        }
        let vals: Vec<&str> = line.split(',').collect();
        if vals.len() != cols {
            return Err(DataError::Parse {
                line: lineno + 1,
                message: format!("expected {cols} columns, got {}", vals.len()),
            });
        }
        for (c, tok) in vals.iter().enumerate() {
            m[(r, c)] = tok.trim().parse().map_err(|_| DataError::Parse {
                line: lineno + 1,
                message: format!("bad number `{tok}`"),
            })?;
        }
        r += 1;
    }
    if r != rows {
        return Err(DataError::Invalid(format!("expected {rows} rows, got {r}")));
    }
    Ok(m)
}

pub fn read_csv_vector(text: &str) -> Result<DVector<f64>, DataError> {
    let m = read_csv_matrix(text)?;
    if m.ncols() == 1 {
        Ok(DVector::from_column_slice(m.column(0).as_slice()))
    } else if m.nrows() == 1 {
        Ok(DVector::from_row_slice(m.row(0).transpose().as_slice()))
    } else {
        Err(DataError::Invalid(format!("expected a vector, got {}x{}", m.nrows(), m.ncols())))
    }
}
