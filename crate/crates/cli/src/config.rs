//! Flat key=value run configuration: parsing and problem assembly.

use nalgebra::DVector;
use pgssn::data_io::{
    gaussian_blur_operator, gen_sparse_regression, poly_expand, psnr, read_libsvm,
    synthetic_blocks_image, Dataset,
};
use pgssn::problem::{LeastSquaresObjective, LogisticObjective, ProblemInstance, SmoothObjective};
use pgssn::regularizers::{
    BoxConstraint, FusedLqRegularizer, FusedZeroNormRegularizer, LqExponent, LqRegularizer,
    Regularizer, ZeroBoxRegularizer,
};
use pgssn::rng::SplitMix64;
use pgssn::solver::SolverConfig;
use pgssn::Matrix;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn err<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

/// Parsed key=value map with typed accessors.
#[derive(Debug, Clone, Default)]
pub struct RunConfig {
    pub path: Option<PathBuf>,
    map: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut map = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return err(format!("config line {}: expected key = value", lineno + 1));
            };
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(RunConfig { path: None, map })
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        cfg.path = Some(path.to_path_buf());
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: String) {
        self.map.insert(key.to_string(), value);
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(|s| s.as_str())
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        match self.map.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| ConfigError(format!("bad number for `{key}`: {v}"))),
        }
    }

    pub fn f64_opt(&self, key: &str) -> Result<Option<f64>, ConfigError> {
        match self.map.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| ConfigError(format!("bad number for `{key}`: {v}"))),
        }
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize, ConfigError> {
        match self.map.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| ConfigError(format!("bad integer for `{key}`: {v}"))),
        }
    }

    pub fn u64_or(&self, key: &str, default: u64) -> Result<u64, ConfigError> {
        match self.map.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| ConfigError(format!("bad integer for `{key}`: {v}"))),
        }
    }

    pub fn name(&self) -> String {
        self.get("name")
            .map(str::to_string)
            .or_else(|| {
                self.path
                    .as_ref()
                    .and_then(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()))
            })
            .unwrap_or_else(|| "run".to_string())
    }
}

/// A fully assembled run: problem, solver settings, start point, and the
/// pieces needed for reporting.
pub struct AssembledRun {
    pub problem: ProblemInstance,
    pub solver: SolverConfig,
    pub y0: DVector<f64>,
    pub lambda: f64,
    pub lambda0: Option<f64>,
    pub lambda_c: Option<f64>,
    /// Deblur runs carry the truth and observation for PSNR reporting.
    pub image: Option<ImageContext>,
}

pub struct ImageContext {
    pub side: usize,
    pub truth: DVector<f64>,
    pub observed: DVector<f64>,
}

impl ImageContext {
    pub fn psnr_of(&self, x: &DVector<f64>) -> f64 {
        psnr(&self.truth, x)
    }

    pub fn psnr_observed(&self) -> f64 {
        psnr(&self.truth, &self.observed)
    }
}

fn load_dataset(cfg: &RunConfig) -> Result<Dataset, ConfigError> {
    let data = cfg.get("data").unwrap_or("gen");
    let mut ds = if let Some(path) = data.strip_prefix("libsvm:") {
        let base = cfg.path.as_ref().and_then(|p| p.parent().map(Path::to_path_buf));
        let full = match base {
            Some(dir) if !Path::new(path).is_absolute() => dir.join(path),
            _ => PathBuf::from(path),
        };
        read_libsvm(&full).map_err(|e| ConfigError(format!("{e}")))?
    } else if data == "gen" {
        let m = cfg.usize_or("m", 100)?;
        let n = cfg.usize_or("n", 200)?;
        let k = cfg.usize_or("k", 10)?;
        let noise = cfg.f64_or("noise", 0.1)?;
        let seed = cfg.u64_or("seed", 1)?;
        gen_sparse_regression(m, n, k, noise, seed)
    } else {
        return err(format!("unknown data source `{data}` (expected `gen` or `libsvm:<path>`)"));
    };
    let degree = cfg.usize_or("poly_expand", 0)?;
    if degree != 0 {
        ds.a = poly_expand(&ds.a, degree).map_err(|e| ConfigError(e.to_string()))?;
        ds.meta.truth = None;
    }
    Ok(ds)
}

fn resolve_penalty(
    cfg: &RunConfig,
    key_abs: &str,
    key_rel: &str,
    scale: f64,
    default_rel: Option<f64>,
) -> Result<(f64, Option<f64>), ConfigError> {
    if let Some(v) = cfg.f64_opt(key_abs)? {
        return Ok((v, None));
    }
    if let Some(c) = cfg.f64_opt(key_rel)? {
        return Ok((c * scale, Some(c)));
    }
    match default_rel {
        Some(c) => Ok((c * scale, Some(c))),
        None => err(format!("missing `{key_abs}` or `{key_rel}`")),
    }
}

struct PenaltySetup {
    reg: Arc<dyn Regularizer>,
    lambda: f64,
    lambda0: Option<f64>,
    lambda_c: Option<f64>,
}

fn build_regularizer(cfg: &RunConfig, n: usize, scale: f64) -> Result<PenaltySetup, ConfigError> {
    let kind = cfg.get("reg").unwrap_or("lq");
    let (lambda, lambda_c) = resolve_penalty(cfg, "lambda", "lambda_c", scale, Some(1e-2))?;
    let q = match cfg.f64_or("q", 0.5)? {
        v if LqExponent::from_value(v).is_some() => LqExponent::from_value(v).unwrap(),
        v => return err(format!("q must be 0.5 or 2/3, got {v}")),
    };
    let box_lo = cfg.f64_or("box_lo", -1.0)?;
    let box_hi = cfg.f64_or("box_hi", 1.0)?;
    match kind {
        "lq" => Ok(PenaltySetup { reg: Arc::new(LqRegularizer::new(lambda, q)), lambda, lambda0: None, lambda_c }),
        "zero_box" => {
            let bounds = BoxConstraint::uniform(n, box_lo, box_hi)
                .map_err(|e| ConfigError(e.to_string()))?;
            Ok(PenaltySetup { reg: Arc::new(ZeroBoxRegularizer::new(lambda, bounds)), lambda, lambda0: None, lambda_c })
        }
        "fused_zero" => {
            let (lambda0, _) = resolve_penalty(cfg, "lambda0", "lambda0_c", scale, Some(1e-2))?;
            let bounds = BoxConstraint::uniform(n, box_lo, box_hi)
                .map_err(|e| ConfigError(e.to_string()))?;
            Ok(PenaltySetup {
                reg: Arc::new(FusedZeroNormRegularizer::new(lambda0, lambda, bounds)),
                lambda,
                lambda0: Some(lambda0),
                lambda_c,
            })
        }
        "fused_lq" => {
            let (lambda0, _) = resolve_penalty(cfg, "lambda0", "lambda0_c", scale, Some(1e-2))?;
            Ok(PenaltySetup {
                reg: Arc::new(FusedLqRegularizer::new(lambda0, lambda, q)),
                lambda,
                lambda0: Some(lambda0),
                lambda_c,
            })
        }
        other => err(format!("unknown regularizer `{other}`")),
    }
}

fn apply_solver_overrides(cfg: &RunConfig, l: f64) -> Result<SolverConfig, ConfigError> {
    let mut sc = SolverConfig::for_lipschitz(l);
    sc.eps = cfg.f64_or("eps", sc.eps)?;
    sc.beta = cfg.f64_or("beta", sc.beta)?;
    if let Some(ar) = cfg.f64_opt("alpha_rel")? {
        sc.alpha = ar * l;
    }
    if let Some(a) = cfg.f64_opt("alpha")? {
        sc.alpha = a;
    }
    sc.gamma_bar = cfg.f64_or("gamma_bar", sc.gamma_bar)?;
    sc.tau = cfg.f64_or("tau", sc.tau)?;
    sc.radius_exponent = cfg.f64_or("rho", sc.radius_exponent)?;
    sc.radius_range.1 = cfg.f64_or("varsigma", sc.radius_range.1)?;
    sc.eta = cfg.f64_or("eta", sc.eta)?;
    sc.max_iter = cfg.usize_or("max_iter", sc.max_iter)?;
    sc.max_linesearch = cfg.usize_or("max_linesearch", sc.max_linesearch)?;
    sc.validate(l).map_err(|e| ConfigError(e.to_string()))?;
    Ok(sc)
}

/// Builds the problem the config describes.
pub fn assemble(cfg: &RunConfig) -> Result<AssembledRun, ConfigError> {
    let problem_kind = cfg.get("problem").unwrap_or("ls");
    match problem_kind {
        "ls" | "logistic" => {
            let ds = load_dataset(cfg)?;
            let scale = ds.a.t_matvec_inf_norm(&ds.b);
            let n = ds.ncols();
            let PenaltySetup { reg, lambda, lambda0, lambda_c } = build_regularizer(cfg, n, scale)?;
            let smooth: Arc<dyn SmoothObjective> = if problem_kind == "ls" {
                Arc::new(
                    LeastSquaresObjective::new(ds.a, ds.b)
                        .map_err(|e| ConfigError(e.to_string()))?,
                )
            } else {
                let labels = DVector::from_fn(ds.b.len(), |i, _| if ds.b[i] >= 0.0 { 1.0 } else { -1.0 });
                Arc::new(
                    LogisticObjective::new(ds.a, labels)
                        .map_err(|e| ConfigError(e.to_string()))?,
                )
            };
            let l = smooth.lipschitz();
            let problem = ProblemInstance::new(smooth, reg);
            let solver = apply_solver_overrides(cfg, l)?;
            Ok(AssembledRun {
                problem,
                solver,
                y0: DVector::zeros(n),
                lambda,
                lambda0,
                lambda_c,
                image: None,
            })
        }
        "deblur" => {
            let side = cfg.usize_or("side", 32)?;
            let n = side * side;
            let seed = cfg.u64_or("seed", 1)?;
            let noise = cfg.f64_or("noise", 0.02)?;
            let blur_sigma = cfg.f64_or("blur_sigma", 4.0)?;
            let blur_ksize = cfg.usize_or("blur_ksize", 9)?;
            let truth = synthetic_blocks_image(side, seed);
            let blur = gaussian_blur_operator(side, blur_sigma, blur_ksize);
            let mut observed = blur.apply(&truth);
            let mut rng = SplitMix64::new(seed ^ 0xB1);
            for i in 0..n {
                observed[i] += noise * rng.normal();
            }
            let a = Matrix::Dense(blur.to_dense());
            let scale = a.t_matvec_inf_norm(&observed);
            // deblur defaults to the fused zero-norm with the 0.005 scale
            let mut cfg2 = cfg.clone();
            if cfg2.get("reg").is_none() {
                cfg2.set("reg", "fused_zero".into());
            }
            if cfg2.get("lambda").is_none() && cfg2.get("lambda_c").is_none() {
                cfg2.set("lambda_c", "0.005".into());
            }
            if cfg2.get("lambda0").is_none() && cfg2.get("lambda0_c").is_none() {
                cfg2.set("lambda0_c", "0.005".into());
            }
            if cfg2.get("box_lo").is_none() {
                cfg2.set("box_lo", "-0.2".into());
            }
            if cfg2.get("box_hi").is_none() {
                cfg2.set("box_hi", "1.2".into());
            }
            let PenaltySetup { reg, lambda, lambda0, lambda_c } = build_regularizer(&cfg2, n, scale)?;
            let smooth = LeastSquaresObjective::new(a, observed.clone())
                .map_err(|e| ConfigError(e.to_string()))?;
            let l = smooth.lipschitz();
            let problem = ProblemInstance::new(Arc::new(smooth), reg);
            let mut solver = apply_solver_overrides(&cfg2, l)?;
            if cfg2.get("max_iter").is_none() {
                solver.max_iter = 300;
            }
            Ok(AssembledRun {
                problem,
                solver,
                y0: DVector::zeros(n),
                lambda,
                lambda0,
                lambda_c,
                image: Some(ImageContext { side, truth, observed }),
            })
        }
        other => err(format!("unknown problem kind `{other}`")),
    }
}
