//! Command-line front end: solve single runs, execute benchmark suites,
//! validate against the brute-force oracles, and evaluate proximal
//! operators one-shot.

mod check;
mod config;

use config::{assemble, AssembledRun, RunConfig};
use pgssn::data_io::{read_csv_vector, sparsity_metrics, write_csv_matrix, write_pgm};
use pgssn::envelope::EnvelopeContext;
use pgssn::regularizers::{
    BoxConstraint, Certificate, FusedLqRegularizer, FusedZeroNormRegularizer, LqExponent,
    LqRegularizer, Regularizer, ZeroBoxRegularizer,
};
use pgssn::solver::{iterations_to_csv, run_with_sink, SolveStatus};
use serde_json::json;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

const EXIT_OK: u8 = 0;
const EXIT_CHECK_FAILED: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_NOT_CONVERGED: u8 = 3;

fn usage() -> ExitCode {
    eprintln!(
        "usage:\n  pgssn solve --config <file> [--out <dir>] [--seed <n>]\n  pgssn bench --suite <file> [--out <dir>] [--threads <n>]\n  pgssn check [--seed <n>] [--inject-fault <name>]\n  pgssn prox --kind <lq|zero_box|fused_zero|fused_lq> --z <vector.csv> [--gamma g] [--lambda l] [--lambda0 l0] [--q q] [--box lo,hi]\n\nset PGSSN_LOG=1 to stream per-iteration progress to stderr"
    );
    ExitCode::from(EXIT_USAGE)
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let Some(verb) = args.first() else {
        return usage();
    };
    match verb.as_str() {
        "solve" => cmd_solve(&args[1..]),
        "bench" => cmd_bench(&args[1..]),
        "check" => cmd_check(&args[1..]),
        "prox" => cmd_prox(&args[1..]),
        _ => usage(),
    }
}

struct Flags {
    values: Vec<(String, String)>,
}

impl Flags {
    fn parse(args: &[String]) -> Result<Flags, String> {
        let mut values = Vec::new();
        let mut it = args.iter();
        while let Some(a) = it.next() {
            let Some(key) = a.strip_prefix("--") else {
                return Err(format!("unexpected argument `{a}`"));
            };
            let Some(v) = it.next() else {
                return Err(format!("flag --{key} needs a value"));
            };
            values.push((key.to_string(), v.clone()));
        }
        Ok(Flags { values })
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.values.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

fn verbose() -> bool {
    std::env::var("PGSSN_LOG").map(|v| !v.is_empty() && v != "0").unwrap_or(false)
}

struct RunOutput {
    status: SolveStatus,
    iters: usize,
    time_ms: f64,
    nnz: usize,
    bx_nnz: usize,
    obj: f64,
    final_resid: f64,
    psnr: Option<f64>,
    psnr_observed: Option<f64>,
}

fn execute(asm: &AssembledRun, out_dir: &Path) -> Result<RunOutput, String> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| format!("cannot create output dir {}: {e}", out_dir.display()))?;
    let echo = verbose();
    let t0 = Instant::now();
    let report = run_with_sink(&asm.problem, &asm.solver, &asm.y0, &mut |r| {
        if echo {
            eprintln!(
                "k={} F={:.6e} resid={:.3e} gamma={:.3e} gamma_tilde={:.3e} newton_bt={} unit={}",
                r.k, r.f_x, r.resid_norm, r.gamma, r.gamma_tilde, r.newton_backtracks, r.unit_step
            );
        }
    });
    let time_ms = t0.elapsed().as_secs_f64() * 1e3;
    if let Some(diag) = &report.diagnostic {
        eprintln!("solver diagnostic: {diag}");
    }

    std::fs::write(out_dir.join("iterations.csv"), iterations_to_csv(&report.iterations))
        .map_err(|e| format!("cannot write iterations.csv: {e}"))?;

    let (nnz, bx_nnz) = sparsity_metrics(&report.point);
    let mut obj = asm.problem.objective(&report.point);
    if !obj.is_finite() {
        // the Newton iterate can sit marginally outside the feasible box;
        // report the objective at its feasible prox image instead
        let ctx = EnvelopeContext::new(&asm.problem, report.final_gamma);
        obj = asm.problem.objective(&ctx.t_map(&report.point).point);
    }

    let (psnr, psnr_observed) = match &asm.image {
        Some(img) => {
            let side = img.side;
            let flat = nalgebra::DMatrix::from_fn(side * side, 1, |i, _| report.point[i]);
            std::fs::write(out_dir.join("recovered.csv"), write_csv_matrix(&flat))
                .map_err(|e| format!("cannot write recovered.csv: {e}"))?;
            std::fs::write(out_dir.join("recovered.pgm"), write_pgm(side, &report.point))
                .map_err(|e| format!("cannot write recovered.pgm: {e}"))?;
            std::fs::write(out_dir.join("observed.pgm"), write_pgm(side, &img.observed))
                .map_err(|e| format!("cannot write observed.pgm: {e}"))?;
            (Some(img.psnr_of(&report.point)), Some(img.psnr_observed()))
        }
        None => (None, None),
    };

    let out = RunOutput {
        status: report.status,
        iters: report.iters(),
        time_ms,
        nnz,
        bx_nnz,
        obj,
        final_resid: report.final_resid,
        psnr,
        psnr_observed,
    };

    let mut summary = json!({
        "schema": 1,
        "status": out.status.as_str(),
        "iters": out.iters,
        "time_ms": out.time_ms,
        "Nnz": out.nnz,
        "BxNnz": out.bx_nnz,
        "Obj": out.obj,
        "final_resid": out.final_resid,
        "lambda": asm.lambda,
    });
    if let Some(l0) = asm.lambda0 {
        summary["lambda0"] = json!(l0);
    }
    if let Some(lc) = asm.lambda_c {
        summary["lambda_c"] = json!(lc);
    }
    if let Some(p) = out.psnr {
        summary["PSNR"] = json!(p);
        summary["PSNR_observed"] = json!(out.psnr_observed.unwrap());
    }
    std::fs::write(
        out_dir.join("summary.json"),
        serde_json::to_string_pretty(&summary).expect("json"),
    )
    .map_err(|e| format!("cannot write summary.json: {e}"))?;
    Ok(out)
}

fn cmd_solve(args: &[String]) -> ExitCode {
    let flags = match Flags::parse(args) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("error: {e}");
            return usage();
        }
    };
    let Some(config_path) = flags.get("config") else {
        eprintln!("error: solve needs --config <file>");
        return usage();
    };
    let mut cfg = match RunConfig::from_file(Path::new(config_path)) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    if let Some(seed) = flags.get("seed") {
        cfg.set("seed", seed.to_string());
    }
    let out_dir = flags
        .get("out")
        .map(PathBuf::from)
        .or_else(|| cfg.get("out").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    let asm = match assemble(&cfg) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    match execute(&asm, &out_dir) {
        Ok(out) => {
            println!(
                "{}: status {} iters {} Obj {:.6e} Nnz {} final_resid {:.3e}",
                cfg.name(),
                out.status.as_str(),
                out.iters,
                out.obj,
                out.nnz,
                out.final_resid
            );
            if out.status == SolveStatus::Converged {
                ExitCode::from(EXIT_OK)
            } else {
                ExitCode::from(EXIT_NOT_CONVERGED)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}

struct BenchRow {
    name: String,
    lambda_c: String,
    result: Result<RunOutput, String>,
}

fn cmd_bench(args: &[String]) -> ExitCode {
    let flags = match Flags::parse(args) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("error: {e}");
            return usage();
        }
    };
    let Some(suite_path) = flags.get("suite") else {
        eprintln!("error: bench needs --suite <file>");
        return usage();
    };
    let suite_path = Path::new(suite_path);
    let text = match std::fs::read_to_string(suite_path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read suite {}: {e}", suite_path.display());
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let base = suite_path.parent().map(Path::to_path_buf).unwrap_or_default();
    let entries: Vec<PathBuf> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| if Path::new(l).is_absolute() { PathBuf::from(l) } else { base.join(l) })
        .collect();
    if entries.is_empty() {
        eprintln!("error: suite {} lists no configs", suite_path.display());
        return ExitCode::from(EXIT_USAGE);
    }
    let out_root = flags.get("out").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("bench-out"));
    let threads: usize = flags.get("threads").and_then(|t| t.parse().ok()).unwrap_or(1).max(1);

    let next = AtomicUsize::new(0);
    let rows: Mutex<Vec<Option<BenchRow>>> = Mutex::new((0..entries.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..threads.min(entries.len()) {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, Ordering::SeqCst);
                if idx >= entries.len() {
                    break;
                }
                let path = &entries[idx];
                let row = match RunConfig::from_file(path) {
                    Err(e) => BenchRow {
                        name: path.display().to_string(),
                        lambda_c: String::new(),
                        result: Err(e.to_string()),
                    },
                    Ok(cfg) => {
                        let name = cfg.name();
                        let lambda_c = cfg.get("lambda_c").unwrap_or("").to_string();
                        let result = assemble(&cfg)
                            .map_err(|e| e.to_string())
                            .and_then(|asm| execute(&asm, &out_root.join(&name)));
                        BenchRow { name, lambda_c, result }
                    }
                };
                rows.lock().unwrap()[idx] = Some(row);
            });
        }
    });

    let rows = rows.into_inner().unwrap();
    let mut csv = String::from("# schema: 1\nname,lambda_c,status,Nnz,BxNnz,Obj,Time,Iter,final_resid,PSNR\n");
    for row in rows.iter().flatten() {
        match &row.result {
            Ok(out) => {
                let psnr = out.psnr.map(|p| format!("{p}")).unwrap_or_default();
                csv.push_str(&format!(
                    "{},{},{},{},{},{},{:.1},{},{},{}\n",
                    row.name,
                    row.lambda_c,
                    out.status.as_str(),
                    out.nnz,
                    out.bx_nnz,
                    out.obj,
                    out.time_ms,
                    out.iters,
                    out.final_resid,
                    psnr
                ));
            }
            Err(e) => {
                csv.push_str(&format!(
                    "{},{},error: {},,,,,,,\n",
                    row.name,
                    row.lambda_c,
                    e.replace(',', ";")
                ));
            }
        }
    }
    if let Err(e) = std::fs::create_dir_all(&out_root) {
        eprintln!("error: cannot create {}: {e}", out_root.display());
        return ExitCode::from(EXIT_USAGE);
    }
    let results = out_root.join("results.csv");
    if let Err(e) = std::fs::write(&results, &csv) {
        eprintln!("error: cannot write {}: {e}", results.display());
        return ExitCode::from(EXIT_USAGE);
    }
    print!("{csv}");
    ExitCode::from(EXIT_OK)
}

fn cmd_check(args: &[String]) -> ExitCode {
    let flags = match Flags::parse(args) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("error: {e}");
            return usage();
        }
    };
    let seed: u64 = flags.get("seed").and_then(|s| s.parse().ok()).unwrap_or(1701);
    let fault = flags.get("inject-fault");
    let outcomes = check::run_checks(seed, fault);
    let mut failed = 0;
    for o in &outcomes {
        let tag = if o.passed { "PASS" } else { "FAIL" };
        println!("[{tag}] {:<28} {}", o.name, o.detail);
        if !o.passed {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} check(s) failed");
        ExitCode::from(EXIT_CHECK_FAILED)
    } else {
        println!("all {} checks passed", outcomes.len());
        ExitCode::from(EXIT_OK)
    }
}

fn cmd_prox(args: &[String]) -> ExitCode {
    let flags = match Flags::parse(args) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("error: {e}");
            return usage();
        }
    };
    let Some(kind) = flags.get("kind") else {
        eprintln!("error: prox needs --kind");
        return usage();
    };
    let Some(z_path) = flags.get("z") else {
        eprintln!("error: prox needs --z <vector.csv>");
        return usage();
    };
    let text = match std::fs::read_to_string(z_path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {z_path}: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let z = match read_csv_vector(&text) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let n = z.len();
    let gamma: f64 = flags.get("gamma").and_then(|v| v.parse().ok()).unwrap_or(1.0);
    let lambda: f64 = flags.get("lambda").and_then(|v| v.parse().ok()).unwrap_or(0.5);
    let lambda0: f64 = flags.get("lambda0").and_then(|v| v.parse().ok()).unwrap_or(0.5);
    let q = match LqExponent::from_value(flags.get("q").and_then(|v| v.parse().ok()).unwrap_or(0.5)) {
        Some(q) => q,
        None => {
            eprintln!("error: q must be 0.5 or 2/3");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let bounds = || -> Result<BoxConstraint, String> {
        let spec = flags.get("box").unwrap_or("-10,10");
        let (lo, hi) = spec
            .split_once(',')
            .ok_or_else(|| format!("bad --box `{spec}`, expected lo,hi"))?;
        let lo: f64 = lo.trim().parse().map_err(|_| format!("bad box bound `{lo}`"))?;
        let hi: f64 = hi.trim().parse().map_err(|_| format!("bad box bound `{hi}`"))?;
        BoxConstraint::uniform(n, lo, hi).map_err(|e| e.to_string())
    };
    let reg: Box<dyn Regularizer> = match kind {
        "lq" => Box::new(LqRegularizer::new(lambda, q)),
        "zero_box" => match bounds() {
            Ok(b) => Box::new(ZeroBoxRegularizer::new(lambda, b)),
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(EXIT_USAGE);
            }
        },
        "fused_zero" => match bounds() {
            Ok(b) => Box::new(FusedZeroNormRegularizer::new(lambda0, lambda, b)),
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(EXIT_USAGE);
            }
        },
        "fused_lq" => Box::new(FusedLqRegularizer::new(lambda0, lambda, q)),
        other => {
            eprintln!("error: unknown prox kind `{other}`");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let r = reg.prox(gamma, &z);
    let point: Vec<String> = r.point.iter().map(|v| format!("{v}")).collect();
    println!("point: {}", point.join(","));
    println!("value: {}", r.moreau);
    match r.certificate {
        Certificate::SingleValued => println!("certificate: SingleValued"),
        Certificate::PossiblyMultivalued { gap } => {
            println!("certificate: PossiblyMultivalued(gap={gap:.3e})")
        }
    }
    ExitCode::from(EXIT_OK)
}
