use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use difftensor::analysis::{self, KMeans};
use difftensor::data::{self, Dataset, Standardizer};
use difftensor::graph::MultiPartiteGraph;
use difftensor::model::Model;
use difftensor::rng;
use difftensor::synth::{self, SynthSpec};
use difftensor::train::{self, Control};
use difftensor::Matrix;

use crate::config::RunConfig;
use crate::{AnalyzeArgs, CliError, EvalArgs, ExportArgs, PredictArgs, SynthArgs};

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn require_dir(dir: &Path) -> Result<(), CliError> {
    if dir.is_dir() {
        Ok(())
    } else {
        Err(CliError::Runtime(format!("output directory {} does not exist", dir.display())))
    }
}

pub fn synth(a: &SynthArgs) -> Result<(), CliError> {
    let spec = SynthSpec {
        entities_per_mode: a.entities,
        num_train: a.num_train,
        num_test: a.num_test,
        time_max: a.time_max,
        seed: a.seed,
        ..SynthSpec::default()
    };
    spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    require_dir(&a.out)?;
    let (train, test, truth) = synth::generate(&spec)?;
    train.write_csv(&a.out.join("train.csv"))?;
    test.write_csv(&a.out.join("test.csv"))?;
    synth::write_ground_truth(&a.out.join("ground_truth.csv"), &truth)?;
    println!("train {} test {} entities {}x{} -> {}", train.len(), test.len(), a.entities, a.entities, a.out.display());
    Ok(())
}

fn widest(a: &[usize], b: &[usize]) -> Vec<usize> {
    a.iter().zip(b).map(|(x, y)| *x.max(y)).collect()
}

pub fn train(cfg: RunConfig) -> Result<(), CliError> {
    let order = match cfg.order {
        Some(k) => k,
        None => data::infer_order(&cfg.train)?,
    };
    let mut train_raw = data::load_dataset(&cfg.train, order)?;
    let mut test_raw = cfg.test.as_deref().map(|p| data::load_dataset(p, order)).transpose()?;
    if let Some(t) = test_raw.take() {
        let dims = widest(train_raw.dims(), t.dims());
        train_raw = train_raw.with_dims(dims.clone())?;
        test_raw = Some(t.with_dims(dims)?);
    }
    let standardizer = Standardizer::fit(&train_raw, cfg.rescale_time)?;
    let train_std = standardizer.apply(&train_raw);
    let test_std = test_raw.as_ref().map(|t| standardizer.apply(t));

    let graph = Arc::new(MultiPartiteGraph::build(&train_std));
    println!(
        "observations {} dims {:?} vertices {} edges {}",
        train_std.len(),
        graph.dims(),
        graph.num_vertices(),
        graph.num_edges()
    );
    for s in graph.pair_stats() {
        println!("  modes {}-{}: {} edges", s.mode_a, s.mode_b, s.edges);
    }

    fs::create_dir_all(&cfg.out).map_err(|e| CliError::Runtime(format!("{}: {e}", cfg.out.display())))?;
    cfg.write(&cfg.out.join("config.txt"))?;
    let model = Model::init(graph, cfg.model.clone(), standardizer, cfg.training.seed)?;
    let ckpt = cfg.out.join("model.ckpt");
    let (log_every, checkpoint_every) = (cfg.log_every, cfg.checkpoint_every);
    let outcome = train::train(model, &train_std, test_std.as_ref(), &cfg.training, |r, m| {
        if log_every > 0 && (r.epoch % log_every == 0 || r.epoch == 1) {
            let eval = r.eval_nrmse.map(|v| format!(" eval_nrmse {v:.5}")).unwrap_or_default();
            println!("epoch {:5} loss {:.4} lr {:.2e} {:.2}s{eval}", r.epoch, r.train_loss, r.lr, r.epoch_seconds);
        }
        if checkpoint_every > 0 && r.epoch % checkpoint_every == 0 {
            m.save(&ckpt)?;
        }
        Ok(Control::Continue)
    })?;
    outcome.model.save(&ckpt)?;
    train::write_history(&cfg.out.join("history.csv"), &outcome.history)?;
    if let Some(t) = &test_raw {
        let r = analysis::evaluate(&outcome.model, t)?;
        println!("test rmse {} nrmse {} count {}", r.rmse, r.nrmse, r.count);
    }
    println!("checkpoint {}", ckpt.display());
    Ok(())
}

fn load_for(model: &Model, path: &Path) -> Result<Dataset, CliError> {
    let k = data::infer_order(path)?;
    if k != model.order() {
        return Err(CliError::Runtime(format!(
            "{} has {k} index columns but the checkpoint has {} modes",
            path.display(),
            model.order()
        )));
    }
    Ok(data::load_dataset_with_dims(path, k, Some(model.dims()))?)
}

pub fn eval(a: &EvalArgs) -> Result<(), CliError> {
    let model = Model::load(&a.checkpoint)?;
    let data = load_for(&model, &a.data)?;
    let report = analysis::evaluate(&model, &data)?;
    println!("rmse {}\nnrmse {}\ncount {}", report.rmse, report.nrmse, report.count);
    if let Some(p) = &a.report {
        write(p, &report.to_csv())?;
    }
    if let Some(p) = &a.dump_residuals {
        let mut out = index_header(model.order());
        out.push_str("time,value,prediction,residual\n");
        for ((o, p), r) in data.observations().iter().zip(&report.predictions).zip(&report.residuals) {
            for c in o.index.coords() {
                let _ = write!(out, "{c},");
            }
            let _ = writeln!(out, "{},{},{},{}", o.time, o.value, p, r);
        }
        write(p, &out)?;
    }
    Ok(())
}

fn index_header(order: usize) -> String {
    (0..order).map(|k| format!("i{k},")).collect()
}

pub fn predict(a: &PredictArgs) -> Result<(), CliError> {
    let model = Model::load(&a.checkpoint)?;
    let queries = data::load_queries(&a.queries, model.order())?;
    let preds = model.predict(&queries)?;
    let mut out = index_header(model.order());
    out.push_str("time,mean,variance\n");
    for ((idx, t), p) in queries.iter().zip(&preds) {
        for c in idx.coords() {
            let _ = write!(out, "{c},");
        }
        let _ = writeln!(out, "{t},{},{}", p.mean, p.noise_variance);
    }
    match &a.out {
        Some(p) => write(p, &out),
        None => {
            print!("{out}");
            Ok(())
        }
    }
}

pub fn export_trajectories(a: &ExportArgs) -> Result<(), CliError> {
    let model = Model::load(&a.checkpoint)?;
    let end = a.end.unwrap_or(model.standardizer.time_max);
    let (times, features) =
        analysis::trajectory_grid(&model, a.start, end, a.points).map_err(|e| CliError::Usage(e.to_string()))?;
    let r = model.spec.rank;
    let mut out = String::from("mode,entity,dim,t,value\n");
    for (k, f) in features.iter().enumerate() {
        for j in 0..f.rows() {
            for d in 0..r {
                for (i, t) in times.iter().enumerate() {
                    let _ = writeln!(out, "{k},{j},{d},{t},{}", f.get(j, i * r + d));
                }
            }
        }
    }
    write(&a.out, &out)
}

/// `labels[mode][entity]` from a `entity,mode,...,cluster` CSV.
fn read_truth(path: &Path, dims: &[usize]) -> Result<Vec<Vec<i64>>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    let mut labels: Vec<Vec<Option<i64>>> = dims.iter().map(|&d| vec![None; d]).collect();
    let bad = |n: usize| CliError::Runtime(format!("{}: line {n}: expected entity,mode,...,cluster", path.display()));
    for (i, line) in text.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() < 3 {
            continue;
        }
        let (e, m, c) = (f[0].parse::<usize>(), f[1].parse::<usize>(), f[f.len() - 1].parse::<i64>());
        let (Ok(e), Ok(m), Ok(c)) = (e, m, c) else { return Err(bad(i + 1)) };
        *labels.get_mut(m).and_then(|v| v.get_mut(e)).ok_or_else(|| bad(i + 1))? = Some(c);
    }
    labels
        .into_iter()
        .enumerate()
        .map(|(m, v)| {
            v.into_iter()
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| CliError::Runtime(format!("{}: mode {m} is missing entities", path.display())))
        })
        .collect()
}

struct Clustering {
    k: usize,
    fit: KMeans,
}

fn cluster(points: &Matrix, a: &AnalyzeArgs, r: &mut rng::Rng) -> Result<Clustering, CliError> {
    let k = match a.k {
        Some(k) => k,
        None => analysis::elbow_select(points, a.k_max, r)?,
    };
    let fit = analysis::kmeans(points, k, r).map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(Clustering { k, fit })
}

pub fn analyze(a: &AnalyzeArgs) -> Result<(), CliError> {
    require_dir(&a.out)?;
    let model = Model::load(&a.checkpoint)?;
    let s = &model.standardizer;
    let mut times = if a.times.is_empty() {
        (0..5).map(|i| s.time_min + (s.time_max - s.time_min) * i as f64 / 4.0).collect()
    } else {
        a.times.clone()
    };
    if times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
        return Err(CliError::Usage("times must be finite and non-negative".into()));
    }
    times.sort_by(f64::total_cmp);
    times.dedup();
    let truth = a.truth.as_deref().map(|p| read_truth(p, model.dims())).transpose()?;
    let model_times: Vec<f64> = times.iter().map(|&t| s.time(t)).collect();
    let snaps = model.snapshot_embeddings(&model_times)?;

    let mut r = rng::stream(a.seed, rng::KMEANS);
    let mut rows = Vec::new();
    let mut summary = String::from("time,mode,k,wcss,purity\n");
    let mut record = |label: &str, k: usize, c: &Clustering| -> Result<(), CliError> {
        let purity = match &truth {
            Some(t) => analysis::cluster_purity(&c.fit.labels, &t[k])?.to_string(),
            None => String::new(),
        };
        let _ = writeln!(summary, "{label},{k},{},{},{purity}", c.k, c.fit.wcss);
        println!(
            "{label} mode {k}: k {} wcss {:.6}{}",
            c.k,
            c.fit.wcss,
            if purity.is_empty() { String::new() } else { format!(" purity {purity}") }
        );
        Ok(())
    };
    for (t, snap) in times.iter().zip(&snaps) {
        for k in 0..model.order() {
            let c = cluster(&snap.mode(k), a, &mut r)?;
            rows.extend(c.fit.labels.iter().enumerate().map(|(j, &l)| (k, j, *t, l)));
            record(&t.to_string(), k, &c)?;
        }
    }
    write(&a.out.join("clusters.csv"), &analysis::assignments_csv(&rows))?;

    if let Some(n) = a.grid_points {
        let (_, features) =
            analysis::trajectory_grid(&model, 0.0, s.time_max, n).map_err(|e| CliError::Usage(e.to_string()))?;
        let mut out = String::from("mode,entity,label\n");
        for (k, f) in features.iter().enumerate() {
            let c = cluster(f, a, &mut r)?;
            for (j, l) in c.fit.labels.iter().enumerate() {
                let _ = writeln!(out, "{k},{j},{l}");
            }
            record("trajectory", k, &c)?;
        }
        write(&a.out.join("trajectory_clusters.csv"), &out)?;
    }
    write(&a.out.join("summary.csv"), &summary)
}
