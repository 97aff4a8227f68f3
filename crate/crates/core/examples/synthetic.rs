//! Trains on the simulation task and reports test RMSE as training goes.
//!
//! cargo run --release --example synthetic -- [epochs] [seed]

use std::sync::Arc;

use difftensor::data::standardize_pair;
use difftensor::graph::MultiPartiteGraph;
use difftensor::model::{Model, ModelSpec};
use difftensor::synth::{generate, SynthSpec};
use difftensor::train::{standardized_rmse, train, Control, TrainConfig};

fn main() -> difftensor::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let epochs = args.get(1).map_or(2000, |s| s.parse().expect("epochs"));
    let seed = args.get(2).map_or(0, |s| s.parse().expect("seed"));
    let (train_raw, test_raw, _) = generate(&SynthSpec { seed, ..SynthSpec::default() })?;
    let (std, train_set, test_set) = standardize_pair(&train_raw, &test_raw, false)?;
    let graph = Arc::new(MultiPartiteGraph::build(&train_set));
    let model = Model::init(graph, ModelSpec::default(), std.clone(), seed)?;
    let config = TrainConfig { epochs, seed, ..TrainConfig::default() };
    let out = train(model, &train_set, None, &config, |r, m| {
        if r.epoch % 10 == 0 || r.epoch == 1 {
            let rmse = standardized_rmse(m, &test_set)? * std.value_std;
            println!(
                "epoch {:5} loss {:12.4} lr {:.2e} {:.3}s test_rmse {:.5}",
                r.epoch, r.train_loss, r.lr, r.epoch_seconds, rmse
            );
        }
        Ok(Control::Continue)
    })?;
    let rmse = standardized_rmse(&out.model, &test_set)? * std.value_std;
    println!("final test RMSE {rmse:.5}");
    Ok(())
}
