//! The three subcommands.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use dpvp::datasets::{
    default_ecs_schedule, eval_row, evaluate_repeat, fit, gen_evolving_network, gen_gaussian_clusters,
    gen_multitask_t3, gen_se_surrogate, load_manifest, load_vdb_dir, mean_ari, write_dataset, write_labels_csv,
    Dataset, EvalRow, Fit, Method, SurrogateConfig, DEFAULT_P_IN, DEFAULT_P_OUT,
};
use dpvp::kernels::{KernelSpec, Tree};
use dpvp::mcmc::summarize;
use dpvp::partition::AssignmentField;
use dpvp::rng::{stream, Stream};

use crate::config::{CliError, CliResult, DataSource, KernelKind, Model, RawConfig, RunConfig};

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::runtime(format!("cannot write {}: {e}", path.display())))
}

fn prepare_out(dir: &Path, raw: &RawConfig) -> CliResult<()> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::runtime(format!("cannot create output directory {}: {e}", dir.display())))?;
    let mut echo = raw.clone();
    echo.0.remove("out");
    write_file(&dir.join("config.echo"), &echo.echo())
}

pub fn load_data(source: &DataSource, seed: u64) -> CliResult<Dataset> {
    let mut rng = stream(seed, Stream::Data);
    Ok(match source {
        DataSource::Manifest(path) => load_manifest(path)?,
        DataSource::Vdb(dir) => load_vdb_dir(dir)?,
        DataSource::Generator(g) => match g.as_str() {
            "gaussian-clusters" => gen_gaussian_clusters(&mut rng),
            "mcm-t3" => gen_multitask_t3(&mut rng),
            "ecs" => gen_evolving_network(&default_ecs_schedule(), DEFAULT_P_IN, DEFAULT_P_OUT, true, &mut rng)?,
            "se-surrogate" => gen_se_surrogate(&SurrogateConfig::default(), &mut rng)?,
            other => return Err(CliError::usage(format!("unknown generator '{other}'"))),
        },
    })
}

pub fn build_kernel(config: &RunConfig, dataset: &Dataset) -> CliResult<KernelSpec> {
    let s = dataset.data.n_sources();
    let kernel = match config.kernel {
        KernelKind::Se => KernelSpec::squared_exponential(dataset.locations.clone(), config.lengthscale),
        KernelKind::Similarity => KernelSpec::independent(s),
        KernelKind::Tree => {
            let path = config.tree.as_ref().expect("validated");
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::usage(format!("cannot read tree {}: {e}", path.display())))?;
            KernelSpec::Tree(Tree::parse(&text)?)
        }
    };
    if kernel.dim() != s {
        return Err(CliError::usage(format!(
            "kernel covers {} locations but the data has {s} sources",
            kernel.dim()
        )));
    }
    kernel.gram()?;
    Ok(kernel)
}

fn check_model(model: Model, dataset: &Dataset) -> CliResult<()> {
    match (model, dataset.data.is_network()) {
        (Model::Mcm, true) => Err(CliError::usage("the mcm model needs feature matrices, got networks")),
        (Model::Ecs, false) => Err(CliError::usage("the ecs model needs network snapshots")),
        _ => Ok(()),
    }
}

fn method_of(model: Model) -> Method {
    match model {
        Model::Mcm | Model::Ecs => Method::Dependent,
        Model::BaselineIndependent => Method::Independent,
        Model::BaselineShared => Method::Shared,
    }
}

pub fn simulate(raw: &RawConfig) -> CliResult<()> {
    let source = crate::config::data_source(raw)?;
    if !matches!(source, DataSource::Generator(_)) {
        return Err(CliError::usage("simulate needs --generator"));
    }
    let seed = match raw.get("seed") {
        Some(s) => s
            .parse()
            .map_err(|e| CliError::usage(format!("invalid value '{s}' for seed: {e}")))?,
        None => 0,
    };
    let out = Path::new(raw.get("out").unwrap_or("out"));
    let dataset = load_data(&source, seed)?;
    prepare_out(out, raw)?;
    let manifest = write_dataset(out, &dataset)?;
    println!("wrote {}", manifest.display());
    Ok(())
}

fn per_source_rows(field: &AssignmentField, fit: &Fit) -> Vec<Vec<usize>> {
    fit.layout.locations().iter().map(|&l| field.row(l).to_vec()).collect()
}

fn kernel_posterior_csv(fit: &Fit) -> String {
    let mut out = String::from("parameter,mean,lower,upper\n");
    let alpha: Vec<f64> = fit.trace.records.iter().map(|r| r.alpha).collect();
    let mut rows: Vec<(String, Vec<f64>)> = fit
        .trace
        .kernel_names()
        .into_iter()
        .map(|n| {
            let s = fit.trace.kernel_samples(&n);
            (n, s)
        })
        .collect();
    rows.push(("alpha".into(), alpha));
    for (name, samples) in rows {
        if let Some(s) = summarize(&samples) {
            let _ = writeln!(out, "{name},{},{},{}", s.mean, s.lower, s.upper);
        }
    }
    out
}

fn sigma_csv(sigma: &[f64]) -> Option<String> {
    let t = (sigma.len() as f64).sqrt().round() as usize;
    if t == 0 || t * t != sigma.len() {
        return None;
    }
    let mut out = String::new();
    for row in sigma.chunks(t) {
        let cells: Vec<String> = row.iter().map(f64::to_string).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    Some(out)
}

pub fn fit_command(raw: &RawConfig) -> CliResult<()> {
    let config = RunConfig::from_raw(raw)?;
    let dataset = load_data(&config.data, config.sampler.seed)?;
    check_model(config.model, &dataset)?;
    let kernel = build_kernel(&config, &dataset)?;
    prepare_out(&config.out, raw)?;
    let start = Instant::now();
    let fit = fit(method_of(config.model), &dataset.data, &kernel, &config.sampler)?;
    let elapsed = start.elapsed();
    let out = &config.out;
    fit.trace.save_jsonl(&out.join("trace.jsonl"))?;
    let last = fit.trace.records.last().ok_or(dpvp::Error::EmptyTrace)?;
    let best = fit.trace.best()?;
    for (file, record) in [("assignments.csv", last), ("map_assignments.csv", best)] {
        let field = record.assignments.as_ref().ok_or(dpvp::Error::EmptyTrace)?;
        write_labels_csv(&out.join(file), &per_source_rows(field, &fit), &[])?;
    }
    write_file(&out.join("kernel_posterior.csv"), &kernel_posterior_csv(&fit))?;
    if let Some(text) = sigma_csv(&fit.trace.sigma_mean) {
        write_file(&out.join("sigma_posterior_mean.csv"), &text)?;
    }
    let runtime = format!(
        "total_seconds={:.3}\nmean_iteration_seconds={:.6}\niterations={}\nretained={}\n",
        elapsed.as_secs_f64(),
        fit.trace.mean_iteration_time().as_secs_f64(),
        config.sampler.iterations,
        fit.trace.len()
    );
    write_file(&out.join("runtime.txt"), &runtime)?;
    print!("{runtime}");
    println!("best_loglik={}", best.loglik);
    if let Some(truth) = &dataset.truth {
        let field = AssignmentField::from_rows(per_source_rows(best.assignments.as_ref().unwrap(), &fit));
        println!("best_mean_ari={:.4}", mean_ari(&field, truth)?);
    }
    Ok(())
}

fn eval_table_csv(rows: &[(String, EvalRow)]) -> String {
    let mut out = String::from("method,mean,stderr,repeats\n");
    for (name, r) in rows {
        let _ = writeln!(out, "{name},{},{},{}", r.mean, r.stderr, r.repeats);
    }
    out
}

pub fn evaluate_command(raw: &RawConfig) -> CliResult<()> {
    let config = RunConfig::from_raw(raw)?;
    let dataset = load_data(&config.data, config.sampler.seed)?;
    check_model(config.model, &dataset)?;
    let kernel = build_kernel(&config, &dataset)?;
    prepare_out(&config.out, raw)?;
    let methods: Vec<Method> = config
        .methods
        .iter()
        .map(|m| m.parse())
        .collect::<Result<_, _>>()?;
    let repeats = config.holdout.repeats;
    let jobs: Vec<(usize, usize)> = (0..methods.len())
        .flat_map(|m| (0..repeats).map(move |r| (m, r)))
        .collect();
    let scores = jobs
        .par_iter()
        .map(|&(m, r)| evaluate_repeat(methods[m], &dataset.data, &kernel, &config.sampler, &config.holdout, r))
        .collect::<Result<Vec<f64>, _>>()?;
    let rows: Vec<(String, EvalRow)> = config
        .methods
        .iter()
        .zip(&methods)
        .zip(scores.chunks(repeats))
        .map(|((name, &m), s)| (name.clone(), eval_row(m, s.to_vec())))
        .collect();
    let table = eval_table_csv(&rows);
    write_file(&config.out.join("eval_table.csv"), &table)?;
    print!("{table}");
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigma_needs_square_length() {
        assert_eq!(sigma_csv(&[1.0, 0.5, 0.5, 1.0]).unwrap(), "1,0.5\n0.5,1\n");
        assert!(sigma_csv(&[1.0, 2.0]).is_none());
    }
}
