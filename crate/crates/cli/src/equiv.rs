use clap::Args;
use serde::Serialize;
use vnet_core::audit::{replay_case, run_audit, threshold, AlgebraPool, AuditConfig, AuditReport, LayerKind};
use vnet_core::{AlgebraTensor, Precision, Real};

use crate::error::{bad_input, CliError, CliResult};
use crate::{json_out, Globals};

#[derive(Debug, Args)]
pub struct EquivArgs {
    /// `mixed` (built-in and random algebras of dimension 1..=4), a built-in
    /// name, or an algebra JSON file.
    #[arg(long, default_value = "mixed")]
    pub algebra: String,

    /// Randomized cases per layer kind.
    #[arg(long, default_value_t = 100)]
    pub trials: usize,

    /// Largest spatial height and width of a case.
    #[arg(long, default_value_t = 8)]
    pub max_dims: usize,

    /// Re-run a single reported case, given as `kind:case_seed`.
    #[arg(long, value_name = "KIND:SEED")]
    pub replay: Option<String>,
}

#[derive(Serialize)]
struct Envelope<'a> {
    algebra: &'a str,
    seed: u64,
    trials: usize,
    max_dims: usize,
    #[serde(flatten)]
    report: &'a AuditReport,
}

#[derive(Serialize)]
struct Replay<'a> {
    kind: LayerKind,
    case_seed: u64,
    case: &'a str,
    rel_error: f64,
    threshold: f64,
    pass: bool,
}

fn pool(name: &str) -> CliResult<AlgebraPool> {
    if name == "mixed" {
        Ok(AlgebraPool::Mixed)
    } else {
        Ok(AlgebraPool::Fixed(AlgebraTensor::resolve(name)?))
    }
}

fn parse_replay(s: &str) -> CliResult<(LayerKind, u64)> {
    let (k, seed) = s
        .split_once(':')
        .ok_or_else(|| bad_input(format!("--replay expects KIND:SEED, got '{s}'")))?;
    let kind = LayerKind::from_name(k)
        .ok_or_else(|| bad_input(format!("unknown layer kind '{k}' (dense, conv, depthwise)")))?;
    let seed = seed
        .parse()
        .map_err(|_| bad_input(format!("invalid case seed '{seed}'")))?;
    Ok((kind, seed))
}

pub fn run(args: &EquivArgs, g: &Globals) -> CliResult {
    if args.trials == 0 {
        return Err(bad_input("--trials must be at least 1"));
    }
    if args.max_dims == 0 {
        return Err(bad_input("--max-dims must be at least 1"));
    }
    let pool = pool(&args.algebra)?;
    match g.precision_or(Precision::F64) {
        Precision::F32 => run_t::<f32>(args, g, &pool),
        Precision::F64 => run_t::<f64>(args, g, &pool),
    }
}

fn run_t<T: Real>(args: &EquivArgs, g: &Globals, pool: &AlgebraPool) -> CliResult {
    if let Some(spec) = &args.replay {
        let (kind, case_seed) = parse_replay(spec)?;
        let (err, case) = replay_case::<T>(kind, case_seed, pool, args.max_dims)?;
        let limit = threshold::<T>();
        let pass = err <= limit;
        if g.json {
            json_out(&Replay {
                kind,
                case_seed,
                case: &case,
                rel_error: err,
                threshold: limit,
                pass,
            })?;
        } else {
            println!("{} case {case_seed}: {case}", kind.name());
            println!("relative error {err:.3e} (threshold {limit:e}, {})", T::NAME);
            println!("{}", if pass { "PASS" } else { "FAIL" });
        }
        return if pass {
            Ok(())
        } else {
            Err(CliError::Failure(format!("{} case {case_seed} exceeds the threshold", kind.name())))
        };
    }

    let cfg = AuditConfig {
        pool: pool.clone(),
        trials: args.trials,
        seed: g.seed,
        max_dims: args.max_dims,
    };
    let report = run_audit::<T>(&cfg);
    if g.json {
        json_out(&Envelope {
            algebra: &args.algebra,
            seed: g.seed,
            trials: args.trials,
            max_dims: args.max_dims,
            report: &report,
        })?;
    } else {
        println!(
            "equivalence audit: algebra {}, precision {}, threshold {:e}, {} trials per kind, seed {}, max dims {}",
            args.algebra, report.precision, report.threshold, args.trials, g.seed, args.max_dims
        );
        for k in &report.kinds {
            println!(
                "{:<10} cases {:>5}  max rel error {:.3e}  (worst case seed {})",
                k.kind.name(),
                k.cases,
                k.max_rel_error,
                k.worst_case_seed
            );
        }
        for f in &report.failures {
            let what = match (&f.rel_error, &f.message) {
                (Some(e), _) => format!("rel error {e:.3e}"),
                (None, Some(m)) => format!("error: {m}"),
                (None, None) => "failed".into(),
            };
            println!("FAIL {} seed {} [{}] {what}", f.kind.name(), f.case_seed, f.case);
            println!(
                "  replay: vnet equiv --algebra {} --precision {} --max-dims {} --replay {}:{}",
                args.algebra,
                T::NAME,
                args.max_dims,
                f.kind.name(),
                f.case_seed
            );
        }
        println!("{}", if report.pass { "PASS" } else { "FAIL" });
    }
    if report.pass {
        Ok(())
    } else {
        Err(CliError::Failure(format!("{} equivalence case(s) failed", report.failures.len())))
    }
}
